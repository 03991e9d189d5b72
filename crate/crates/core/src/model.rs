//! Invariant fields of an operator on a box chart, natural coordinates and models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::connection::{decompose, regularity_iso};
use crate::error::{Error, Result};
use crate::jet::MatJet;
use crate::operator::{gauge_transform, OperatorJet};
use crate::orbit::Verdict;
use crate::par::{self, ExecMode};
use crate::symbol::{analyze, extended_codimension, necklace_words, regularity_report, trace_word};
use crate::tensor::{Mat, SymbolTensor};

pub const MODEL_SCHEMA: u32 = 1;

/// An operator defined on the whole chart, able to produce its Taylor jet at any point.
pub trait OperatorField: Sync {
    fn m(&self) -> usize;
    fn n(&self) -> usize;
    /// Jet of order `order` in coordinates centred at `p`.
    fn jet_at(&self, p: &[f64], order: i32) -> Result<OperatorJet>;
}

fn poly_at(j: &MatJet, p: &[f64], order: i32) -> MatJet {
    let (r, c) = j.shape();
    j.shift(p).extend_exact(order, &Mat::zeros(r, c))
}

/// Operator with polynomial coefficients, stored exactly at the chart origin.
#[derive(Debug, Clone)]
pub struct PolynomialOperator {
    pub op: OperatorJet,
}

impl OperatorField for PolynomialOperator {
    fn m(&self) -> usize {
        self.op.m
    }

    fn n(&self) -> usize {
        self.op.n
    }

    fn jet_at(&self, p: &[f64], order: i32) -> Result<OperatorJet> {
        let op = &self.op;
        Ok(OperatorJet {
            m: op.m,
            n: op.n,
            a: op.a.iter().map(|j| poly_at(j, p, order)).collect(),
            b: op.b.iter().map(|j| poly_at(j, p, order)).collect(),
            c: poly_at(&op.c, p, order),
        })
    }
}

/// `A(x)_* Δ` for a polynomial operator `Δ` and a polynomial gauge `A`.
#[derive(Debug, Clone)]
pub struct GaugedOperator {
    pub base: PolynomialOperator,
    pub gauge: MatJet,
    pub tol: f64,
}

impl OperatorField for GaugedOperator {
    fn m(&self) -> usize {
        self.base.m()
    }

    fn n(&self) -> usize {
        self.base.n()
    }

    fn jet_at(&self, p: &[f64], order: i32) -> Result<OperatorJet> {
        let base = self.base.jet_at(p, order)?;
        gauge_transform(&base, &poly_at(&self.gauge, p, order + 2), self.tol)
    }
}

/// A box `[lo, hi]` sampled at `res` points per axis, last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub res: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, res: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != res.len() || lo.is_empty() {
            return Err(Error::DimensionMismatch(
                "grid bounds and resolution differ in length".into(),
            ));
        }
        if res.iter().any(|&r| r < 2) || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::DimensionMismatch(
                "grid needs lo < hi and at least 2 points per axis".into(),
            ));
        }
        Ok(Grid { lo, hi, res })
    }

    /// Centred box of half-width `radius`.
    pub fn centered(n: usize, radius: f64, res: usize) -> Self {
        Grid {
            lo: vec![-radius; n],
            hi: vec![radius; n],
            res: vec![res; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.res.len()
    }

    pub fn len(&self) -> usize {
        self.res.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.res[axis] - 1) as f64
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.res[a];
            flat /= self.res[a];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.res)
            .fold(0, |acc, (&i, &r)| acc * r + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.lo[a] + i as f64 * self.step(a))
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }
}

/// Numerical settings for invariant evaluation and model building.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Jet order used for the decomposition at each point.
    pub order: i32,
    /// Maximal word length of the candidate invariants.
    pub word_len: usize,
    /// Regularity threshold at grid points.
    pub regularity_tol: f64,
    /// Smallest acceptable `jacobian_min`.
    pub jacobian_tol: f64,
    /// Relative residual a candidate gradient must keep to count as independent.
    pub independence_tol: f64,
    /// Coordinate tolerance of the function test.
    pub function_tol: f64,
    pub mode: ExecMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            order: 3,
            word_len: 3,
            regularity_tol: 1e-9,
            jacobian_tol: 1e-6,
            independence_tol: 1e-5,
            function_tol: 1e-9,
            mode: ExecMode::Parallel,
        }
    }
}

/// Symbol and subsymbol of an operator at a point.
#[derive(Debug, Clone)]
pub struct PointData {
    pub sigma: SymbolTensor,
    pub sigma0: Mat,
}

/// Decomposes the operator at `p`; fails when it is not regular there.
pub fn point_data(field: &dyn OperatorField, p: &[f64], cfg: &ModelConfig) -> Result<PointData> {
    let jet = field.jet_at(p, cfg.order)?;
    let total = decompose(&jet, cfg.regularity_tol)?;
    let sigma = total.sigma2.value();
    let sigma0 = total
        .sigma0
        .value()
        .cloned()
        .ok_or(Error::OrderUnderflow { needed: 2, have: 0 })?;
    Ok(PointData { sigma, sigma0 })
}

/// Trace words over `R_0, …, R_N, σ₀` at a point (σ₀ is the last letter).
pub fn point_invariants(
    sigma: &SymbolTensor,
    sigma0: &Mat,
    words: &[Vec<usize>],
    tol: f64,
) -> Result<Vec<f64>> {
    let report = regularity_report(sigma, tol);
    if let Some(name) = report.first_failure() {
        return Err(Error::NotRegular(name.to_string()));
    }
    if !regularity_iso(sigma, tol).regular {
        return Err(Error::NotRegular("pairing map is singular".into()));
    }
    let an = analyze(sigma, tol)?;
    let mut letters = an.family.r;
    letters.push(sigma0.clone());
    Ok(words.iter().map(|w| trace_word(&letters, w)).collect())
}

/// All candidate words of length `≤ len` over `R_0..R_N, σ₀`.
pub fn candidate_words(n: usize, len: usize) -> Vec<Vec<usize>> {
    necklace_words(n * (n + 1) / 2 + 1, len)
}

/// Samples of one trace word over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantField {
    pub word: Vec<usize>,
    pub values: Vec<f64>,
}

fn is_hole(e: &Error) -> bool {
    matches!(
        e,
        Error::NotRegular(_)
            | Error::Degenerate { .. }
            | Error::NearDefective { .. }
            | Error::NullNorm { .. }
            | Error::RealityViolation { .. }
    )
}

/// The regularity holes of the whole grid, for a chart whose centre is one.
fn all_holes(field: &dyn OperatorField, grid: &Grid, cfg: &ModelConfig) -> Error {
    match invariant_fields(field, &[], grid, cfg) {
        Err(e) => e,
        Ok(_) => Error::RegularityHole {
            points: vec![grid.center()],
        },
    }
}

/// Evaluates every word at every grid point.
pub fn invariant_fields(
    field: &dyn OperatorField,
    words: &[Vec<usize>],
    grid: &Grid,
    cfg: &ModelConfig,
) -> Result<Vec<InvariantField>> {
    if grid.dim() != field.n() {
        return Err(Error::DimensionMismatch(format!(
            "grid of dimension {} for an operator over {} variables",
            grid.dim(),
            field.n()
        )));
    }
    let points = grid.points();
    let results: Vec<Result<Vec<f64>>> = par::map(cfg.mode, &points, |p| {
        let d = point_data(field, p, cfg)?;
        point_invariants(&d.sigma, &d.sigma0, words, cfg.regularity_tol)
    });
    let mut holes = Vec::new();
    let mut rows = Vec::with_capacity(points.len());
    for (p, r) in points.iter().zip(results) {
        match r {
            Ok(v) => rows.push(v),
            Err(e) if is_hole(&e) => holes.push(p.clone()),
            Err(e) => return Err(e),
        }
    }
    if !holes.is_empty() {
        return Err(Error::RegularityHole { points: holes });
    }
    Ok(words
        .iter()
        .enumerate()
        .map(|(w, word)| InvariantField {
            word: word.clone(),
            values: rows.iter().map(|r| r[w]).collect(),
        })
        .collect())
}

fn spectral_radius(a: &Mat) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Chooses up to `ν₀` words whose differentials with respect to `(σ, σ₀)` are
/// independent at the given point, scanning `candidates` in order.
///
/// Differentials are sampled along the directions `δσ^{ij} = u σ^{ij} v` and
/// `δσ₀ = s u v`, with `u, v` running over the identity and the letters scaled
/// to unit spectral radius. These directions transform with the point under the
/// group, so the selection is the same for gauge-equivalent operators.
pub fn basic_words(
    sigma: &SymbolTensor,
    sigma0: &Mat,
    candidates: &[Vec<usize>],
    cfg: &ModelConfig,
) -> Result<Vec<Vec<usize>>> {
    let (m, n) = (sigma.m(), sigma.n());
    let budget = extended_codimension(m, n).max(0) as usize;
    let an = analyze(sigma, cfg.regularity_tol)?;
    let mut mults = vec![Mat::identity(m, m)];
    for l in an.family.r.iter().chain(std::iter::once(sigma0)) {
        let rho = spectral_radius(l);
        if rho > 0.0 {
            mults.push(l / rho);
        }
    }
    let rho0 = spectral_radius(sigma0);
    let s0 = if rho0 > 0.0 { rho0 } else { 1.0 };
    let upper = sigma.upper();
    let mut directions: Vec<(SymbolTensor, Mat)> = Vec::new();
    for u in &mults {
        for v in &mults {
            let du: Vec<Mat> = upper.iter().map(|c| u * c * v).collect();
            directions.push((SymbolTensor::from_upper(m, n, &du), Mat::zeros(m, m)));
            directions.push((SymbolTensor::zeros(m, n), u * v * s0));
        }
    }
    let h = 1e-5;
    let columns: Vec<Result<Vec<f64>>> = par::map(cfg.mode, &directions, |(ds, ds0)| {
        let fp = point_invariants(
            &sigma.add(&ds.scale(h)),
            &(sigma0 + ds0 * h),
            candidates,
            cfg.regularity_tol,
        )?;
        let fm = point_invariants(
            &sigma.add(&ds.scale(-h)),
            &(sigma0 - ds0 * h),
            candidates,
            cfg.regularity_tol,
        )?;
        Ok(fp
            .iter()
            .zip(&fm)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect())
    });
    let mut grad = DMatrix::zeros(candidates.len(), directions.len());
    for (d, col) in columns.into_iter().enumerate() {
        for (w, v) in col?.into_iter().enumerate() {
            grad[(w, d)] = v;
        }
    }
    let mut chosen: Vec<Vec<usize>> = Vec::new();
    let mut ortho: Vec<DVector<f64>> = Vec::new();
    for (w, word) in candidates.iter().enumerate() {
        if chosen.len() == budget {
            break;
        }
        let g = grad.row(w).transpose();
        let norm = g.norm();
        if norm == 0.0 {
            continue;
        }
        let mut r = &g / norm;
        for q in &ortho {
            let c = q.dot(&r);
            r -= q * c;
        }
        let rn = r.norm();
        if rn > cfg.independence_tol {
            ortho.push(r / rn);
            chosen.push(word.clone());
        }
    }
    Ok(chosen)
}

/// Gradient of each field at every grid point by central differences (one-sided at the edges).
fn field_gradients(field: &InvariantField, grid: &Grid) -> Vec<DVector<f64>> {
    let n = grid.dim();
    (0..grid.len())
        .map(|k| {
            let idx = grid.multi_index(k);
            DVector::from_fn(n, |a, _| {
                let mut lo = idx.clone();
                let mut hi = idx.clone();
                if idx[a] > 0 {
                    lo[a] -= 1;
                }
                if idx[a] + 1 < grid.res[a] {
                    hi[a] += 1;
                }
                let span = (hi[a] - lo[a]) as f64 * grid.step(a);
                (field.values[grid.flat_index(&hi)] - field.values[grid.flat_index(&lo)]) / span
            })
        })
        .collect()
}

fn min_singular_over_grid(grads: &[&Vec<DVector<f64>>], points: usize) -> f64 {
    let n_rows = grads.len();
    let mut worst = f64::INFINITY;
    for p in 0..points {
        let n = grads[0][p].len();
        let j = DMatrix::from_fn(n_rows, n, |r, c| grads[r][p][c]);
        let sv = j.singular_values();
        worst = worst.min(sv.min());
    }
    worst
}

/// Result of [`select_natural_coordinates`]: indices into the field list.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateChoice {
    pub indices: Vec<usize>,
    pub jacobian_min: f64,
}

/// Greedy choice of `n` fields maximising the smallest singular value of the
/// finite-difference Jacobian over the grid.
pub fn select_natural_coordinates(
    fields: &[InvariantField],
    grid: &Grid,
    tol: f64,
) -> Result<CoordinateChoice> {
    let n = grid.dim();
    if fields.len() < n {
        return Err(Error::NoIndependentInvariants {
            needed: n,
            best: 0.0,
        });
    }
    let grads: Vec<Vec<DVector<f64>>> = fields.iter().map(|f| field_gradients(f, grid)).collect();
    let mut chosen: Vec<usize> = Vec::new();
    let mut best_value = 0.0;
    for _ in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for cand in 0..fields.len() {
            if chosen.contains(&cand) {
                continue;
            }
            let rows: Vec<&Vec<DVector<f64>>> = chosen
                .iter()
                .chain(std::iter::once(&cand))
                .map(|&i| &grads[i])
                .collect();
            let v = min_singular_over_grid(&rows, grid.len());
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((cand, v));
            }
        }
        let (idx, v) = best.expect("enough candidates");
        chosen.push(idx);
        best_value = v;
    }
    if !(best_value >= tol) {
        return Err(Error::NoIndependentInvariants {
            needed: n,
            best: best_value,
        });
    }
    Ok(CoordinateChoice {
        indices: chosen,
        jacobian_min: best_value,
    })
}

/// One grid point of a model: chart point, natural coordinates and remaining invariants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub x: Vec<f64>,
    pub coords: Vec<f64>,
    pub values: Vec<f64>,
}

/// The model `(φ_U, D_U, F_U)` of an operator on a box chart, as a point cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub m: usize,
    pub n: usize,
    pub order: i32,
    pub grid: Grid,
    /// Independent invariants at the chart centre; coordinates come first.
    pub basic_words: Vec<Vec<usize>>,
    pub coord_words: Vec<Vec<usize>>,
    pub graph_words: Vec<Vec<usize>>,
    pub points: Vec<ModelPoint>,
    /// Largest nearest-neighbour distance in scaled coordinates, times 1.5.
    pub radius: f64,
    pub jacobian_min: f64,
    /// Value ranges used to scale coordinates and graph values.
    pub coord_scales: Vec<f64>,
    pub graph_scales: Vec<f64>,
}

fn ranges(rows: impl Iterator<Item = Vec<f64>>, k: usize) -> Vec<f64> {
    let mut lo = vec![f64::INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    let mut mag = vec![0.0f64; k];
    for r in rows {
        for i in 0..k {
            lo[i] = lo[i].min(r[i]);
            hi[i] = hi[i].max(r[i]);
            mag[i] = mag[i].max(r[i].abs());
        }
    }
    (0..k)
        .map(|i| {
            let span = hi[i] - lo[i];
            if span > 1e-12 * mag[i].max(1.0) {
                span
            } else {
                mag[i].max(1.0)
            }
        })
        .collect()
}

fn scaled_dist(a: &[f64], b: &[f64], scales: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(scales)
        .map(|((x, y), s)| ((x - y) / s).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Builds the model with the basic words chosen at the chart centre.
pub fn build_model(field: &dyn OperatorField, grid: &Grid, cfg: &ModelConfig) -> Result<ModelDoc> {
    let center = match point_data(field, &grid.center(), cfg) {
        Ok(d)
            if regularity_report(&d.sigma, cfg.regularity_tol)
                .first_failure()
                .is_none() =>
        {
            d
        }
        Ok(_) => return Err(all_holes(field, grid, cfg)),
        Err(e) if is_hole(&e) => return Err(all_holes(field, grid, cfg)),
        Err(e) => return Err(e),
    };
    let candidates = candidate_words(field.n(), cfg.word_len);
    let basic = basic_words(&center.sigma, &center.sigma0, &candidates, cfg)?;
    build_model_with_words(field, grid, &basic, None, cfg)
}

/// Builds a model on prescribed basic words; `coords` optionally fixes the
/// natural coordinates (by word) instead of selecting them.
pub fn build_model_with_words(
    field: &dyn OperatorField,
    grid: &Grid,
    basic: &[Vec<usize>],
    coords: Option<&[Vec<usize>]>,
    cfg: &ModelConfig,
) -> Result<ModelDoc> {
    let n = field.n();
    let fields = invariant_fields(field, basic, grid, cfg)?;
    let choice = match coords {
        None => select_natural_coordinates(&fields, grid, cfg.jacobian_tol)?,
        Some(words) => {
            let indices: Vec<usize> = words
                .iter()
                .map(|w| {
                    basic
                        .iter()
                        .position(|b| b == w)
                        .ok_or(Error::IncompatibleWords)
                })
                .collect::<Result<_>>()?;
            let grads: Vec<Vec<DVector<f64>>> = indices
                .iter()
                .map(|&i| field_gradients(&fields[i], grid))
                .collect();
            let rows: Vec<&Vec<DVector<f64>>> = grads.iter().collect();
            let jacobian_min = min_singular_over_grid(&rows, grid.len());
            if !(jacobian_min >= cfg.jacobian_tol) {
                return Err(Error::NoIndependentInvariants {
                    needed: n,
                    best: jacobian_min,
                });
            }
            CoordinateChoice {
                indices,
                jacobian_min,
            }
        }
    };
    let mut order: Vec<usize> = choice.indices.clone();
    order.extend((0..basic.len()).filter(|i| !choice.indices.contains(i)));
    let basic_words: Vec<Vec<usize>> = order.iter().map(|&i| basic[i].clone()).collect();
    let coord_words = basic_words[..n].to_vec();
    let graph_words = basic_words[n..].to_vec();
    let points: Vec<ModelPoint> = (0..grid.len())
        .map(|k| ModelPoint {
            x: grid.point(k),
            coords: order[..n].iter().map(|&i| fields[i].values[k]).collect(),
            values: order[n..].iter().map(|&i| fields[i].values[k]).collect(),
        })
        .collect();
    let coord_scales = ranges(points.iter().map(|p| p.coords.clone()), n);
    let graph_scales = ranges(points.iter().map(|p| p.values.clone()), graph_words.len());
    // function test: coincident coordinates must carry equal values
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            let coincide =
                p.coords.iter().zip(&q.coords).all(|(a, b)| {
                    (a - b).abs() <= cfg.function_tol * a.abs().max(b.abs()).max(1.0)
                });
            if coincide {
                for (j, (a, b)) in p.values.iter().zip(&q.values).enumerate() {
                    if (a - b).abs() > 1e-6 * a.abs().max(b.abs()).max(1.0) {
                        return Err(Error::NotAFunction {
                            word: format_word(&graph_words[j]),
                        });
                    }
                }
            }
        }
    }
    let mut radius: f64 = 0.0;
    for (i, p) in points.iter().enumerate() {
        let nearest = points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, q)| scaled_dist(&p.coords, &q.coords, &coord_scales))
            .fold(f64::INFINITY, f64::min);
        if nearest.is_finite() {
            radius = radius.max(nearest);
        }
    }
    Ok(ModelDoc {
        schema_version: MODEL_SCHEMA,
        label: None,
        m: field.m(),
        n,
        order: cfg.order,
        grid: grid.clone(),
        basic_words,
        coord_words,
        graph_words,
        points,
        radius: 1.5 * radius,
        jacobian_min: choice.jacobian_min,
        coord_scales,
        graph_scales,
    })
}

/// `"0.1.3"` for the word `(0, 1, 3)`.
pub fn format_word(w: &[usize]) -> String {
    w.iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(".")
}

/// Deviation of one invariant between two models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordDeviation {
    pub word: Vec<usize>,
    pub deviation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComparisonMethod {
    /// Same grid on the same chart: invariants compared point by point.
    Pointwise,
    /// Different grids: graphs compared by local affine interpolation on the overlap.
    Interpolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceVerdict {
    pub verdict: Verdict,
    pub worst_deviation: f64,
    pub tolerance: f64,
    pub method: ComparisonMethod,
    /// Number of points compared.
    pub overlap: usize,
    pub details: Vec<WordDeviation>,
}

fn same_grid(a: &Grid, b: &Grid) -> bool {
    a.res == b.res
        && a.lo
            .iter()
            .zip(&b.lo)
            .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
        && a.hi
            .iter()
            .zip(&b.hi)
            .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
}

/// Local quadratic fit of the graph of `model` at `query`, over the grid
/// stencil of the nearest sample, or `None` when the query lies outside the
/// sampled image.
fn interpolate(model: &ModelDoc, query: &[f64]) -> Option<Vec<f64>> {
    let n = model.n;
    let (nearest, dist) = model
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, scaled_dist(&p.coords, query, &model.coord_scales)))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    if dist > model.radius {
        return None;
    }
    let grid = &model.grid;
    let centre = grid.multi_index(nearest);
    let mut stencil = Vec::new();
    for k in 0..3usize.pow(n as u32) {
        let mut idx = centre.clone();
        let mut code = k;
        for (a, i) in idx.iter_mut().enumerate() {
            let off = (code % 3) as isize - 1;
            code /= 3;
            let lo = (*i as isize + off).max(0).min(grid.res[a] as isize - 1);
            *i = lo as usize;
        }
        let flat = grid.flat_index(&idx);
        if !stencil.contains(&flat) {
            stencil.push(flat);
        }
    }
    let features = |p: &[f64]| -> Vec<f64> {
        let y: Vec<f64> = (0..n)
            .map(|a| (p[a] - query[a]) / model.coord_scales[a])
            .collect();
        let mut f = vec![1.0];
        f.extend(&y);
        if stencil.len() > 1 + n + n * (n + 1) / 2 {
            for a in 0..n {
                for b in a..n {
                    f.push(y[a] * y[b]);
                }
            }
        }
        f
    };
    let rows: Vec<Vec<f64>> = stencil
        .iter()
        .map(|&i| features(&model.points[i].coords))
        .collect();
    let design = DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c]);
    let k = model.graph_words.len();
    let rhs = DMatrix::from_fn(stencil.len(), k + n, |r, c| {
        let p = &model.points[stencil[r]];
        if c < k {
            p.values[c]
        } else {
            p.x[c - k]
        }
    });
    let sol = design.svd(true, true).solve(&rhs, 1e-12).ok()?;
    // preimage of the query must lie in the chart box
    for a in 0..n {
        let x = sol[(0, k + a)];
        let slack = 1e-9 * (grid.hi[a] - grid.lo[a]);
        if x < grid.lo[a] - slack || x > grid.hi[a] + slack {
            return None;
        }
    }
    Some(sol.row(0).columns(0, k).iter().copied().collect())
}

/// Compares two models built on the same basic words.
///
/// On a shared grid the coordinates and remaining invariants are compared at
/// each chart point. Otherwise each model's graph is interpolated at the other
/// model's coordinates inside the overlap of the two images, and an empty
/// overlap is inconclusive.
pub fn compare_models(m1: &ModelDoc, m2: &ModelDoc, tol: f64) -> Result<EquivalenceVerdict> {
    if m1.m != m2.m
        || m1.n != m2.n
        || m1.coord_words != m2.coord_words
        || m1.graph_words != m2.graph_words
    {
        return Err(Error::IncompatibleWords);
    }
    let nc = m1.coord_words.len();
    let words: Vec<Vec<usize>> = m1
        .coord_words
        .iter()
        .chain(&m1.graph_words)
        .cloned()
        .collect();
    let scales: Vec<f64> = m1
        .coord_scales
        .iter()
        .chain(&m1.graph_scales)
        .zip(m2.coord_scales.iter().chain(&m2.graph_scales))
        .map(|(a, b)| a.max(*b))
        .collect();
    let mut dev = vec![0.0f64; words.len()];
    let mut overlap = 0;
    let method = if same_grid(&m1.grid, &m2.grid) {
        for (p, q) in m1.points.iter().zip(&m2.points) {
            overlap += 1;
            let a = p.coords.iter().chain(&p.values);
            let b = q.coords.iter().chain(&q.values);
            for (j, (x, y)) in a.zip(b).enumerate() {
                dev[j] = dev[j].max((x - y).abs() / scales[j]);
            }
        }
        ComparisonMethod::Pointwise
    } else {
        for (from, onto) in [(m2, m1), (m1, m2)] {
            for q in &from.points {
                if let Some(fit) = interpolate(onto, &q.coords) {
                    overlap += 1;
                    for (j, (x, y)) in fit.iter().zip(&q.values).enumerate() {
                        dev[nc + j] = dev[nc + j].max((x - y).abs() / scales[nc + j]);
                    }
                }
            }
        }
        ComparisonMethod::Interpolated
    };
    let worst = dev.iter().copied().fold(0.0, f64::max);
    let verdict = if overlap == 0 {
        Verdict::Inconclusive
    } else if worst <= tol {
        Verdict::Equivalent
    } else {
        Verdict::Inequivalent
    };
    Ok(EquivalenceVerdict {
        verdict,
        worst_deviation: if overlap == 0 { f64::INFINITY } else { worst },
        tolerance: tol,
        method,
        overlap,
        details: words
            .into_iter()
            .zip(dev)
            .map(|(word, deviation)| WordDeviation { word, deviation })
            .collect(),
    })
}

/// Models both operators on one grid, the second on the first one's words, and compares them.
///
/// When the first model's coordinates are not coordinates for the second
/// operator the two cannot share a model, so the verdict is inequivalent.
pub fn compare_operators(
    f1: &dyn OperatorField,
    f2: &dyn OperatorField,
    grid: &Grid,
    cfg: &ModelConfig,
    tol: f64,
) -> Result<(ModelDoc, Option<ModelDoc>, EquivalenceVerdict)> {
    let m1 = build_model(f1, grid, cfg)?;
    match build_model_with_words(f2, grid, &m1.basic_words, Some(&m1.coord_words), cfg) {
        Ok(m2) => {
            let v = compare_models(&m1, &m2, tol)?;
            Ok((m1, Some(m2), v))
        }
        Err(Error::NoIndependentInvariants { .. }) | Err(Error::NotAFunction { .. }) => {
            let v = EquivalenceVerdict {
                verdict: Verdict::Inequivalent,
                worst_deviation: f64::INFINITY,
                tolerance: tol,
                method: ComparisonMethod::Pointwise,
                overlap: 0,
                details: Vec::new(),
            };
            Ok((m1, None, v))
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{
        random_chart_gauge, random_mat_jet, random_matrix, random_regular_operator,
    };
    use crate::symbol::sym_dim;
    use crate::tensor::QuadFormUp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_grid() -> Grid {
        Grid::centered(2, 0.05, 5)
    }

    fn cfg() -> ModelConfig {
        ModelConfig {
            mode: ExecMode::Sequential,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn grid_indexing() {
        let g = Grid::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![3, 5]).unwrap();
        assert_eq!(g.len(), 15);
        for k in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(k)), k);
        }
        assert_eq!(g.point(0), vec![0.0, -1.0]);
        assert_eq!(g.point(14), vec![1.0, 1.0]);
        assert_eq!(g.point(1), vec![0.0, -0.5]);
        assert!(Grid::new(vec![0.0], vec![0.0], vec![3]).is_err());
    }

    #[test]
    fn constant_operator_has_constant_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let op = random_regular_operator(&mut rng, 2, 2, 0);
        let field = PolynomialOperator { op };
        let words = candidate_words(2, 2);
        let fields = invariant_fields(&field, &words, &small_grid(), &cfg()).unwrap();
        for f in &fields {
            let v0 = f.values[0];
            assert!(f
                .values
                .iter()
                .all(|v| (v - v0).abs() <= 1e-9 * v0.abs().max(1.0)));
        }
        assert!(matches!(
            build_model(&field, &small_grid(), &cfg()),
            Err(Error::NoIndependentInvariants { .. })
        ));
    }

    #[test]
    fn gauge_leaves_fields_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let op = random_regular_operator(&mut rng, 2, 2, 3);
        let gauge = random_chart_gauge(&mut rng, 2, 2, 2, 0.05);
        let base = PolynomialOperator { op };
        let moved = GaugedOperator {
            base: base.clone(),
            gauge,
            tol: 1e-12,
        };
        let words = candidate_words(2, 3);
        let f1 = invariant_fields(&base, &words, &small_grid(), &cfg()).unwrap();
        let f2 = invariant_fields(&moved, &words, &small_grid(), &cfg()).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0), "{:?}", a.word);
            }
        }
    }

    #[test]
    fn scalar_symbol_is_a_hole_everywhere() {
        let g = QuadFormUp(DMatrix::identity(2, 2));
        let s = SymbolTensor::scalar(2, &g);
        let mut op = OperatorJet::zeros(2, 2, 2);
        op.a = crate::operator::SymbolJet::constant(&s, 2).comp;
        let field = PolynomialOperator { op };
        let grid = Grid::centered(2, 0.1, 3);
        match invariant_fields(&field, &candidate_words(2, 2), &grid, &cfg()) {
            Err(Error::RegularityHole { points }) => assert_eq!(points.len(), 9),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            build_model(&field, &grid, &cfg()),
            Err(Error::RegularityHole { .. })
        ));
    }

    fn synthetic(values: impl Fn(&[f64]) -> f64, grid: &Grid, word: Vec<usize>) -> InvariantField {
        InvariantField {
            word,
            values: grid.points().iter().map(|p| values(p)).collect(),
        }
    }

    #[test]
    fn selection_examples() {
        let grid = Grid::centered(2, 1.0, 5);
        let fields = vec![
            synthetic(|_| 3.0, &grid, vec![0]),
            synthetic(|p| p[0], &grid, vec![1]),
            synthetic(|p| p[0], &grid, vec![2]),
            synthetic(|p| p[1], &grid, vec![3]),
        ];
        let c = select_natural_coordinates(&fields, &grid, 1e-6).unwrap();
        let mut idx = c.indices.clone();
        idx.sort();
        assert!(idx == vec![1, 3] || idx == vec![2, 3]);
        assert!((c.jacobian_min - 1.0).abs() < 1e-12);

        let constant = vec![
            synthetic(|_| 1.0, &grid, vec![0]),
            synthetic(|_| 2.0, &grid, vec![1]),
        ];
        assert!(matches!(
            select_natural_coordinates(&constant, &grid, 1e-6),
            Err(Error::NoIndependentInvariants { .. })
        ));
    }

    #[test]
    fn basic_words_respect_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let op = random_regular_operator(&mut rng, 2, 2, 3);
        let field = PolynomialOperator { op };
        let d = point_data(&field, &[0.0, 0.0], &cfg()).unwrap();
        let words = basic_words(&d.sigma, &d.sigma0, &candidate_words(2, 3), &cfg()).unwrap();
        assert_eq!(words.len(), 9);
        assert_eq!(extended_codimension(2, 2), 9);
        assert!(words
            .iter()
            .all(|w| w.len() <= 3 && w.iter().all(|&l| l <= sym_dim(2))));
    }

    #[test]
    fn model_records_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let op = random_regular_operator(&mut rng, 2, 2, 3);
        let field = PolynomialOperator { op };
        let grid = small_grid();
        let model = build_model(&field, &grid, &cfg()).unwrap();
        assert_eq!(model.coord_words.len(), 2);
        assert!(model.jacobian_min > 0.0);
        for k in [0, 7, 24] {
            let p = &model.points[k];
            let d = point_data(&field, &p.x, &cfg()).unwrap();
            let direct = point_invariants(&d.sigma, &d.sigma0, &model.graph_words, 1e-9).unwrap();
            for (a, b) in direct.iter().zip(&p.values) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
        let same = compare_models(&model, &model, 1e-6).unwrap();
        assert_eq!(same.verdict, Verdict::Equivalent);
        assert_eq!(same.worst_deviation, 0.0);
    }

    #[test]
    fn gauge_pair_models_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let op = random_regular_operator(&mut rng, 2, 2, 3);
        let base = PolynomialOperator { op };
        let moved = GaugedOperator {
            base: base.clone(),
            gauge: random_chart_gauge(&mut rng, 2, 2, 2, 0.05),
            tol: 1e-12,
        };
        let (_, m2, v) = compare_operators(&base, &moved, &small_grid(), &cfg(), 1e-6).unwrap();
        assert!(m2.is_some());
        assert_eq!(v.verdict, Verdict::Equivalent, "{}", v.worst_deviation);
        assert_eq!(v.method, ComparisonMethod::Pointwise);
    }

    #[test]
    fn perturbed_model_differs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let op = random_regular_operator(&mut rng, 2, 2, 3);
        let mut other = op.clone();
        other.c = other
            .c
            .add(&MatJet::constant(2, 3, random_matrix(&mut rng, 2, 2) * 0.3));
        let (_, _, v) = compare_operators(
            &PolynomialOperator { op },
            &PolynomialOperator { op: other },
            &small_grid(),
            &cfg(),
            1e-6,
        )
        .unwrap();
        assert_eq!(v.verdict, Verdict::Inequivalent);
    }

    #[test]
    fn interpolated_comparison_on_refined_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut op = random_regular_operator(&mut rng, 2, 2, 1);
        op.c = random_mat_jet(&mut rng, 2, 1, 2, 2);
        let field = PolynomialOperator { op };
        let coarse = Grid::centered(2, 0.05, 11);
        let fine = Grid::centered(2, 0.04, 13);
        let m1 = build_model(&field, &coarse, &cfg()).unwrap();
        let m2 = build_model_with_words(
            &field,
            &fine,
            &m1.basic_words,
            Some(&m1.coord_words),
            &cfg(),
        )
        .unwrap();
        let v = compare_models(&m1, &m2, 1e-2).unwrap();
        assert_eq!(v.method, ComparisonMethod::Interpolated);
        assert!(v.overlap > 0);
        assert_eq!(v.verdict, Verdict::Equivalent, "{}", v.worst_deviation);

        let mut shifted = m2.clone();
        shifted.coord_words.swap(0, 1);
        assert!(matches!(
            compare_models(&m1, &shifted, 1e-2),
            Err(Error::IncompatibleWords)
        ));
    }
}
