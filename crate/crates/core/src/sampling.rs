//! Seeded generators for symbols, group elements and operators.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::connection::regularity_iso;
use crate::jet::{monomials, MatJet};
use crate::operator::OperatorJet;
use crate::symbol::regularity_report;
use crate::tensor::{rcond, Mat, SymbolTensor};

/// Relative margin a generated symbol must clear on every regularity condition.
pub const REGULAR_MARGIN: f64 = 1e-3;

/// Margin of [`random_well_conditioned_symbol`].
pub const WELL_CONDITIONED: f64 = 0.1;

/// Smallest reciprocal condition of the pairing map for [`random_well_conditioned_symbol`].
pub const ISO_MARGIN: f64 = 0.02;

/// Largest condition number accepted for generated group elements.
pub const MAX_GROUP_COND: f64 = 50.0;

/// Largest condition number of a [`random_chart_gauge`] anywhere on its box.
pub const MAX_GAUGE_COND: f64 = 10.0;

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Symbol with independent standard normal entries.
pub fn random_symbol<R: Rng>(rng: &mut R, m: usize, n: usize) -> SymbolTensor {
    let upper: Vec<Mat> = (0..n * (n + 1) / 2)
        .map(|_| random_matrix(rng, m, m))
        .collect();
    SymbolTensor::from_upper(m, n, &upper)
}

/// Random symbol passing every regularity condition with [`REGULAR_MARGIN`] to spare.
pub fn random_regular_symbol<R: Rng>(rng: &mut R, m: usize, n: usize) -> SymbolTensor {
    random_symbol_with_margin(rng, m, n, REGULAR_MARGIN)
}

/// Random symbol whose regularity diagnostics all exceed `margin`.
pub fn random_symbol_with_margin<R: Rng>(
    rng: &mut R,
    m: usize,
    n: usize,
    margin: f64,
) -> SymbolTensor {
    loop {
        let s = random_symbol(rng, m, n);
        if regularity_report(&s, margin).overall {
            return s;
        }
    }
}

/// Random invertible matrix with condition number at most [`MAX_GROUP_COND`].
pub fn random_gl<R: Rng>(rng: &mut R, k: usize) -> DMatrix<f64> {
    loop {
        let a = random_matrix(rng, k, k);
        if rcond(&a) >= 1.0 / MAX_GROUP_COND {
            return a;
        }
    }
}

/// Polynomial matrix jet with normal coefficients damped by `2^{-|α|}`.
pub fn random_mat_jet<R: Rng>(
    rng: &mut R,
    n: usize,
    order: i32,
    rows: usize,
    cols: usize,
) -> MatJet {
    let basis = monomials(n, order.max(0) as usize);
    let coeffs = basis
        .exponents()
        .iter()
        .map(|e| {
            let deg: u32 = e.iter().sum();
            random_matrix(rng, rows, cols) * 0.5f64.powi(deg as i32)
        })
        .collect();
    MatJet::from_coeffs(n, order, coeffs)
}

/// Operator with random polynomial coefficients of the given order.
pub fn random_operator<R: Rng>(rng: &mut R, m: usize, n: usize, order: i32) -> OperatorJet {
    let mut op = OperatorJet::zeros(m, n, order);
    for i in 0..n {
        for j in i..n {
            let a = random_mat_jet(rng, n, order, m, m);
            op.a[i * n + j] = a.clone();
            op.a[j * n + i] = a;
        }
        op.b[i] = random_mat_jet(rng, n, order, m, m);
    }
    op.c = random_mat_jet(rng, n, order, m, m);
    op
}

/// Random operator whose symbol at the origin is a regular symbol.
/// Random regular symbol kept away from the null-norm and rank-drop loci:
/// conditions 1, 3 and 4 by [`WELL_CONDITIONED`], condition 2 by [`REGULAR_MARGIN`]
/// and the pairing map by [`ISO_MARGIN`].
pub fn random_well_conditioned_symbol<R: Rng>(rng: &mut R, m: usize, n: usize) -> SymbolTensor {
    loop {
        let s = random_regular_symbol(rng, m, n);
        let r = regularity_report(&s, REGULAR_MARGIN);
        if r.cond1
            .diagnostic
            .min(r.cond3.diagnostic)
            .min(r.cond4.diagnostic)
            >= WELL_CONDITIONED
            && regularity_iso(&s, 0.0).rcond >= ISO_MARGIN
        {
            return s;
        }
    }
}

/// Operator whose symbol at the origin comes from [`random_well_conditioned_symbol`].
pub fn random_regular_operator<R: Rng>(rng: &mut R, m: usize, n: usize, order: i32) -> OperatorJet {
    let sigma = random_well_conditioned_symbol(rng, m, n);
    let mut op = random_operator(rng, m, n, order);
    for i in 0..n {
        for j in 0..n {
            let mut coeffs = op.a[i * n + j].coeffs().to_vec();
            coeffs[0] = sigma.comp(i, j).clone();
            op.a[i * n + j] = MatJet::from_coeffs(n, order, coeffs);
        }
    }
    op
}

/// Gauge `A(x) = A₀ + (higher terms)` with `A₀` drawn by [`random_gl`].
pub fn random_gauge<R: Rng>(rng: &mut R, n: usize, order: i32, m: usize) -> MatJet {
    let a0 = random_gl(rng, m);
    let mut coeffs = random_mat_jet(rng, n, order, m, m).coeffs().to_vec();
    coeffs[0] = a0;
    MatJet::from_coeffs(n, order, coeffs)
}

/// [`random_gauge`] redrawn until `A(x)` has condition at most [`MAX_GAUGE_COND`]
/// on a 5-point-per-axis lattice of the box `[-radius, radius]ⁿ`.
pub fn random_chart_gauge<R: Rng>(
    rng: &mut R,
    n: usize,
    order: i32,
    m: usize,
    radius: f64,
) -> MatJet {
    let lattice: Vec<Vec<f64>> = (0..5usize.pow(n as u32))
        .map(|k| {
            (0..n)
                .map(|a| -radius + 0.5 * radius * ((k / 5usize.pow(a as u32)) % 5) as f64)
                .collect()
        })
        .collect();
    loop {
        let g = random_gauge(rng, n, order, m);
        if lattice
            .iter()
            .all(|p| g.eval(p).is_some_and(|a| rcond(&a) >= 1.0 / MAX_GAUGE_COND))
        {
            return g;
        }
    }
}
