//! Pointwise equivalence of symbols and simultaneous conjugacy of matrix families.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symbol::{
    analyze, fingerprint, lambda_forms, regularity_report, DerivedQuadrics, EigenFrame,
    Fingerprint, RFamily, SymbolAnalysis,
};
use crate::tensor::{CMat, Mat, SymPairIndex, SymbolTensor, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Equivalent,
    Inequivalent,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Separation {
    Equal,
    Distinct,
}

/// Numerical knobs of the equivalence pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitConfig {
    pub word_len: usize,
    pub fingerprint_rtol: f64,
    /// Relative singular value below which a direction counts as a solution of `X R_l = R'_l X`.
    pub null_tol: f64,
    pub det_draws: usize,
    pub det_tol: f64,
    pub transform_rtol: f64,
    pub seed: u64,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        OrbitConfig {
            word_len: 4,
            fingerprint_rtol: 1e-7,
            null_tol: 1e-8,
            det_draws: 16,
            det_tol: 1e-8,
            transform_rtol: 1e-6,
            seed: 0x5eed_0b17,
        }
    }
}

/// Inverts the R-family: the unique `σ'` with `⟨σ', λ̃_l⟩ = R_l` for every `l`.
///
/// The rows of the linear system are normalised before the singular value test;
/// [`Error::SingularBasis`] reports the relative smallest singular value when it
/// falls below `tol`.
pub fn reconstruct_symbol(
    rs: &RFamily,
    dq: &DerivedQuadrics,
    frame: &EigenFrame,
    tol: f64,
) -> Result<SymbolTensor> {
    let n = frame.n();
    let m = rs.m();
    let idx = SymPairIndex::new(n);
    if rs.len() != idx.len() || dq.g.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} operators for n = {n}, expected {}",
            rs.len(),
            idx.len()
        )));
    }
    let forms = lambda_forms(dq, frame);
    let mut w = CMat::zeros(idx.len(), idx.len());
    let mut rhs = CMat::zeros(idx.len(), m * m);
    for (l, form) in forms.iter().enumerate() {
        for (p, &(a, b)) in idx.pairs().iter().enumerate() {
            w[(l, p)] = if a == b {
                form[(a, a)]
            } else {
                form[(a, b)] + form[(b, a)]
            };
        }
        let scale = w.row(l).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let scale = if scale > 0.0 { scale } else { 1.0 };
        for p in 0..idx.len() {
            w[(l, p)] /= scale;
        }
        for (k, x) in rs.r[l].iter().enumerate() {
            rhs[(l, k)] = C64::new(x / scale, 0.0);
        }
    }
    let svd = w.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let rel = if smax > 0.0 { smin / smax } else { 0.0 };
    if rel < tol {
        return Err(Error::SingularBasis { sigma_min: rel });
    }
    let sol = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::Document(e.to_string()))?;
    let upper: Vec<Mat> = (0..idx.len())
        .map(|p| Mat::from_iterator(m, m, sol.row(p).iter().map(|z| z.re)))
        .collect();
    Ok(SymbolTensor::from_upper(m, n, &upper))
}

/// Compares fingerprints word by word: `|a − b| ≤ rtol · max(|a|, |b|, scale)`.
pub fn trace_separation(f1: &Fingerprint, f2: &Fingerprint, rtol: f64) -> Result<Separation> {
    if f1.m != f2.m || f1.n != f2.n || f1.max_len != f2.max_len || f1.words != f2.words {
        return Err(Error::DimensionMismatch(format!(
            "fingerprints of shape (m={}, n={}, L={}) and (m={}, n={}, L={})",
            f1.m, f1.n, f1.max_len, f2.m, f2.n, f2.max_len
        )));
    }
    let equal = f1
        .values
        .iter()
        .zip(&f2.values)
        .zip(f1.scales.iter().zip(&f2.scales))
        .all(|((a, b), (s1, s2))| {
            let scale = a.abs().max(b.abs()).max(*s1).max(*s2);
            (a - b).abs() <= rtol * scale
        });
    Ok(if equal {
        Separation::Equal
    } else {
        Separation::Distinct
    })
}

/// An intertwiner `X` with `X R_l = R'_l X`, or the reason none was found.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugacyCertificate {
    pub x: Mat,
    /// `max_l ‖X R_l − R'_l X‖ / (‖X‖ ‖R_l‖)`.
    pub residual: f64,
    pub verdict: Verdict,
    /// Dimension of the numerical solution space.
    pub null_dim: usize,
}

fn intertwiner_residual(x: &Mat, rs: &[Mat], rs2: &[Mat]) -> f64 {
    let xn = x.norm();
    rs.iter()
        .zip(rs2)
        .map(|(r, r2)| {
            let denom = xn * r.norm().max(r2.norm());
            if denom > 0.0 {
                (x * r - r2 * x).norm() / denom
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Solves `X R_l = R'_l X` for all `l` and looks for an invertible solution.
pub fn simultaneous_conjugacy(rs: &[Mat], rs2: &[Mat], cfg: &OrbitConfig) -> ConjugacyCertificate {
    let m = rs.first().map_or(0, |r| r.nrows());
    let inequivalent = |residual| ConjugacyCertificate {
        x: Mat::zeros(m, m),
        residual,
        verdict: Verdict::Inequivalent,
        null_dim: 0,
    };
    if rs.len() != rs2.len() || rs.is_empty() || rs.iter().chain(rs2).any(|r| r.shape() != (m, m)) {
        return inequivalent(f64::INFINITY);
    }
    let id = Mat::identity(m, m);
    let mm = m * m;
    let mut stack = DMatrix::zeros(rs.len() * mm, mm);
    for (l, (r, r2)) in rs.iter().zip(rs2).enumerate() {
        let scale = r.norm().max(r2.norm());
        if scale == 0.0 {
            continue;
        }
        // vec(X R) = (Rᵀ ⊗ I) vec X, vec(R' X) = (I ⊗ R') vec X
        let block = (r.transpose().kronecker(&id) - id.kronecker(r2)) / scale;
        stack.view_mut((l * mm, 0), (mm, mm)).copy_from(&block);
    }
    let svd = stack.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let smax = svd.singular_values.max();
    let null: Vec<usize> = (0..mm)
        .filter(|&k| svd.singular_values[k] <= cfg.null_tol * smax.max(f64::MIN_POSITIVE))
        .collect();
    if null.is_empty() {
        let smin = svd.singular_values.min();
        return inequivalent(smin / smax.max(f64::MIN_POSITIVE));
    }
    let basis: Vec<Mat> = null
        .iter()
        .map(|&k| Mat::from_iterator(m, m, v_t.row(k).iter().copied()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(f64, Mat)> = None;
    for _ in 0..cfg.det_draws.max(1) {
        let mut x = Mat::zeros(m, m);
        for b in &basis {
            let c: f64 = StandardNormal.sample(&mut rng);
            x += b * c;
        }
        let xn = x.norm();
        if xn == 0.0 {
            continue;
        }
        x /= xn / (m as f64).sqrt();
        let det = x.determinant().abs();
        if best.as_ref().is_none_or(|(d, _)| det > *d) {
            best = Some((det, x));
        }
        if det >= cfg.det_tol {
            break;
        }
    }
    match best {
        Some((det, x)) if det >= cfg.det_tol => {
            let residual = intertwiner_residual(&x, rs, rs2);
            let verdict = if residual <= cfg.null_tol.max(1e-8) {
                Verdict::Equivalent
            } else {
                Verdict::Inconclusive
            };
            ConjugacyCertificate {
                x,
                residual,
                verdict,
                null_dim: basis.len(),
            }
        }
        Some((_, x)) => ConjugacyCertificate {
            residual: intertwiner_residual(&x, rs, rs2),
            x,
            verdict: Verdict::Inequivalent,
            null_dim: basis.len(),
        },
        None => inequivalent(f64::INFINITY),
    }
}

/// The outcome of [`symbols_equivalent`].
#[derive(Debug, Clone)]
pub struct SymbolEquivalence {
    pub verdict: Verdict,
    pub separation: Separation,
    pub conjugacy: ConjugacyCertificate,
    /// `(A, B)` with `(A, B)·σ₁ = σ₂` when one was found.
    pub transform: Option<(Mat, Mat)>,
    /// `max |(A, B)·σ₁ − σ₂| / max |σ₂|` for the returned transform.
    pub transform_residual: f64,
    pub fingerprints: (Fingerprint, Fingerprint),
}

fn check_regular(sigma: &SymbolTensor, which: &str, tol: f64) -> Result<()> {
    let report = regularity_report(sigma, tol);
    match report.first_failure() {
        None => Ok(()),
        Some(name) => Err(Error::NotRegular(format!("{which}: {name}"))),
    }
}

/// Permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

/// Searches eigenpair permutations and sign flips for the `GL(T)` part that,
/// together with `a`, carries `σ₁` to `σ₂`.
fn match_frames(
    s1: &SymbolTensor,
    s2: &SymbolTensor,
    f1: &EigenFrame,
    f2: &EigenFrame,
    a: &Mat,
) -> Option<(Mat, f64)> {
    let n = f1.n();
    let lam_scale = f1
        .lambda
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
        .max(1e-300);
    let target = s2.norm().max(f64::MIN_POSITIVE);
    let mut best: Option<(Mat, f64)> = None;
    for perm in permutations(n) {
        let spectra_match = perm
            .iter()
            .enumerate()
            .all(|(k, &p)| (f2.lambda[k] - f1.lambda[p]).norm() <= 1e-6 * lam_scale);
        if !spectra_match {
            continue;
        }
        for mask in 0..(1u32 << n) {
            let signs: Vec<f64> = (0..n)
                .map(|k| if mask >> k & 1 == 1 { -1.0 } else { 1.0 })
                .collect();
            let moved = f1.permuted(&perm, &signs);
            // e*₂ = B^{-T} e*₁ ⇒ B^{-T} = E*₂ E*₁'^{-1}
            let Some(moved_inv) = moved.estar.clone().try_inverse() else {
                continue;
            };
            let bit: CMat = &f2.estar * moved_inv;
            let imag = bit.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
            if imag > 1e-6 * bit.norm() {
                continue;
            }
            let Some(b) = bit.map(|z| z.re).transpose().try_inverse() else {
                continue;
            };
            let Ok(image) = s1.act(a, &b) else {
                continue;
            };
            let residual = image.max_abs_diff(s2) / target;
            if best.as_ref().is_none_or(|(_, r)| residual < *r) {
                best = Some((b, residual));
            }
        }
    }
    best
}

/// Decides whether two regular symbols lie in one `GL(E) × GL(T)` orbit.
///
/// The fingerprint filter and the conjugacy solver must agree; a disagreement
/// is reported as [`Verdict::Inconclusive`]. An equivalent verdict always comes
/// with a transform `(A, B)` that has been applied and checked.
pub fn symbols_equivalent(
    s1: &SymbolTensor,
    s2: &SymbolTensor,
    tol: f64,
    cfg: &OrbitConfig,
) -> Result<SymbolEquivalence> {
    if (s1.m(), s1.n()) != (s2.m(), s2.n()) {
        return Err(Error::DimensionMismatch(format!(
            "symbols of shape ({}, {}) and ({}, {})",
            s1.m(),
            s1.n(),
            s2.m(),
            s2.n()
        )));
    }
    check_regular(s1, "first symbol", tol)?;
    check_regular(s2, "second symbol", tol)?;
    let an1: SymbolAnalysis = analyze(s1, tol)?;
    let an2: SymbolAnalysis = analyze(s2, tol)?;
    let fp1 = fingerprint(&an1.family, None, cfg.word_len);
    let fp2 = fingerprint(&an2.family, None, cfg.word_len);
    let separation = trace_separation(&fp1, &fp2, cfg.fingerprint_rtol)?;
    let conjugacy = simultaneous_conjugacy(&an1.family.r, &an2.family.r, cfg);

    let mut transform = None;
    let mut transform_residual = f64::INFINITY;
    if conjugacy.verdict == Verdict::Equivalent {
        if let Some((b, res)) = match_frames(s1, s2, &an1.frame, &an2.frame, &conjugacy.x) {
            transform_residual = res;
            if res <= cfg.transform_rtol {
                transform = Some((conjugacy.x.clone(), b));
            }
        }
    }
    let verdict = match (separation, conjugacy.verdict, transform.is_some()) {
        (Separation::Equal, Verdict::Equivalent, true) => Verdict::Equivalent,
        (Separation::Distinct, Verdict::Inequivalent, _) => Verdict::Inequivalent,
        _ => Verdict::Inconclusive,
    };
    Ok(SymbolEquivalence {
        verdict,
        separation,
        conjugacy,
        transform,
        transform_residual,
        fingerprints: (fp1, fp2),
    })
}
