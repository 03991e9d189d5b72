//! Second-order linear differential operators with jet coefficients.
//!
//! `Δs = Σ a^{ij} ∂_i∂_j s + Σ b^i ∂_i s + c s` on a chart around the origin, with
//! `m × m` matrix coefficients and `a^{ij} = a^{ji}`. Sections are `m × 1` matrix jets.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::jet::{MatJet, ScalarJet};
use crate::tensor::{Mat, SymbolTensor};

/// A field of symbols: `σ^{ij}(x)` as matrix jets, stored for all `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolJet {
    pub m: usize,
    pub n: usize,
    pub comp: Vec<MatJet>,
}

impl SymbolJet {
    pub fn comp(&self, i: usize, j: usize) -> &MatJet {
        &self.comp[i * self.n + j]
    }

    pub fn order(&self) -> i32 {
        self.comp.iter().map(|c| c.order()).min().unwrap_or(-1)
    }

    pub fn constant(sigma: &SymbolTensor, order: i32) -> Self {
        let (m, n) = (sigma.m(), sigma.n());
        let comp = (0..n * n)
            .map(|k| MatJet::constant(n, order, sigma.comp(k / n, k % n).clone()))
            .collect();
        SymbolJet { m, n, comp }
    }

    /// The symbol at the base point.
    pub fn value(&self) -> SymbolTensor {
        let comp = self
            .comp
            .iter()
            .map(|c| {
                c.value()
                    .cloned()
                    .unwrap_or_else(|| Mat::zeros(self.m, self.m))
            })
            .collect();
        SymbolTensor::from_components(self.m, self.n, comp).expect("symmetric by construction")
    }

    /// The trace quadric `g_σ` as an `n × n` jet.
    pub fn trace_quadric(&self) -> MatJet {
        let entries: Vec<ScalarJet> = self.comp.iter().map(|c| c.trace()).collect();
        MatJet::from_entries(self.n, self.n, &entries)
    }

    pub fn max_abs_diff(&self, other: &SymbolJet) -> f64 {
        self.comp
            .iter()
            .zip(&other.comp)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorJet {
    pub m: usize,
    pub n: usize,
    /// `a^{ij}` at index `i * n + j`.
    pub a: Vec<MatJet>,
    pub b: Vec<MatJet>,
    pub c: MatJet,
}

impl OperatorJet {
    pub fn zeros(m: usize, n: usize, order: i32) -> Self {
        let z = MatJet::zero_mat(n, order, m, m);
        OperatorJet {
            m,
            n,
            a: vec![z.clone(); n * n],
            b: vec![z.clone(); n],
            c: z,
        }
    }

    /// Checks shapes and the symmetry of `a`.
    pub fn new(m: usize, n: usize, a: Vec<MatJet>, b: Vec<MatJet>, c: MatJet) -> Result<Self> {
        if a.len() != n * n || b.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} second-order and {} first-order coefficients for n = {n}",
                a.len(),
                b.len()
            )));
        }
        for j in a.iter().chain(&b).chain(std::iter::once(&c)) {
            if j.vars() != n || j.shape() != (m, m) {
                return Err(Error::DimensionMismatch(format!(
                    "coefficient of shape {:?} over {} variables, expected ({m}, {m}) over {n}",
                    j.shape(),
                    j.vars()
                )));
            }
        }
        for i in 0..n {
            for k in (i + 1)..n {
                let d = a[i * n + k].max_abs_diff(&a[k * n + i]);
                if d > 1e-12 * (1.0 + a[i * n + k].max_abs()) {
                    return Err(Error::DimensionMismatch(format!(
                        "a^{{{i}{k}}} and a^{{{k}{i}}} differ by {d:e}"
                    )));
                }
            }
        }
        Ok(OperatorJet { m, n, a, b, c })
    }

    pub fn a(&self, i: usize, j: usize) -> &MatJet {
        &self.a[i * self.n + j]
    }

    /// Smallest coefficient order.
    pub fn order(&self) -> i32 {
        self.a
            .iter()
            .chain(&self.b)
            .chain(std::iter::once(&self.c))
            .map(|j| j.order())
            .min()
            .unwrap_or(-1)
    }

    pub fn truncate(&self, order: i32) -> Self {
        self.map(|j| j.truncate(order))
    }

    fn map(&self, f: impl Fn(&MatJet) -> MatJet) -> Self {
        OperatorJet {
            m: self.m,
            n: self.n,
            a: self.a.iter().map(&f).collect(),
            b: self.b.iter().map(&f).collect(),
            c: f(&self.c),
        }
    }

    fn zip(&self, other: &Self, f: impl Fn(&MatJet, &MatJet) -> MatJet) -> Self {
        OperatorJet {
            m: self.m,
            n: self.n,
            a: self.a.iter().zip(&other.a).map(|(x, y)| f(x, y)).collect(),
            b: self.b.iter().zip(&other.b).map(|(x, y)| f(x, y)).collect(),
            c: f(&self.c, &other.c),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |x, y| x.add(y))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |x, y| x.sub(y))
    }

    pub fn max_abs(&self) -> f64 {
        self.a
            .iter()
            .chain(&self.b)
            .chain(std::iter::once(&self.c))
            .map(|j| j.max_abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.sub(other).max_abs()
    }

    /// Re-expands polynomial coefficients about `p`.
    pub fn shift(&self, p: &[f64]) -> Self {
        self.map(|j| j.shift(p))
    }

    /// `M ∘ Δ`: every coefficient multiplied on the left.
    pub fn left_mul(&self, mj: &MatJet) -> Self {
        self.map(|j| mj.mul(j))
    }

    /// `Δ ∘ M` for a matrix-valued multiplication operator `M`.
    pub fn right_compose(&self, mj: &MatJet) -> Self {
        let n = self.n;
        let dm: Vec<MatJet> = (0..n).map(|i| mj.derivative(i)).collect();
        let mut a = Vec::with_capacity(n * n);
        for k in 0..n * n {
            a.push(self.a[k].mul(mj));
        }
        let mut b = Vec::with_capacity(n);
        for k in 0..n {
            let mut acc = self.b[k].mul(mj);
            for i in 0..n {
                acc = acc.add(&self.a(i, k).mul(&dm[i]).scale(2.0));
            }
            b.push(acc);
        }
        let mut c = self.c.mul(mj);
        for i in 0..n {
            c = c.add(&self.b[i].mul(&dm[i]));
            for j in 0..n {
                c = c.add(&self.a(i, j).mul(&dm[i].derivative(j)));
            }
        }
        OperatorJet {
            m: self.m,
            n,
            a,
            b,
            c,
        }
    }
}

/// `Δ s`, exact on jets; the result has order `min(order(Δ), order(s) − 2)`.
pub fn apply(op: &OperatorJet, s: &MatJet) -> Result<MatJet> {
    if s.order() < 2 {
        return Err(Error::OrderUnderflow {
            needed: 2,
            have: s.order().max(0) as usize,
        });
    }
    let n = op.n;
    let ds: Vec<MatJet> = (0..n).map(|i| s.derivative(i)).collect();
    let mut acc = op.c.mul(s);
    for i in 0..n {
        acc = acc.add(&op.b[i].mul(&ds[i]));
        for j in 0..n {
            acc = acc.add(&op.a(i, j).mul(&ds[i].derivative(j)));
        }
    }
    Ok(acc)
}

/// `δ_f(Δ) = Δ ∘ f − f ∘ Δ`.
pub fn delta_f(op: &OperatorJet, f: &ScalarJet) -> OperatorJet {
    let fm = f.map(|&x| DMatrix::identity(op.m, op.m) * x);
    op.right_compose(&fm).sub(&op.left_mul(&fm))
}

/// `σ^{ij} = a^{ij}`.
pub fn symbol_of(op: &OperatorJet) -> SymbolJet {
    SymbolJet {
        m: op.m,
        n: op.n,
        comp: op.a.clone(),
    }
}

/// `A ∘ Δ ∘ A⁻¹`.
///
/// Supply `A` at two orders above the operator (for instance an exact polynomial
/// padded with [`MatJet::extend_exact`]) to keep the result at full order.
pub fn gauge_transform(op: &OperatorJet, gauge: &MatJet, tol: f64) -> Result<OperatorJet> {
    let inv = gauge.inverse(tol).map_err(|_| Error::NonInvertibleGauge)?;
    Ok(op.right_compose(&inv).left_mul(gauge))
}
