//! Invariants of a symbol `σ ∈ End(E) ⊗ S²T` under `GL(E) × GL(T)`.
//!
//! The pipeline is
//! `σ → g_σ → (h₂, h₃) → (g⁽¹⁾, g⁽²⁾) → ĝ⁽¹⁾ → eigenframe → R_0..R_N → trace words`.
//! Every stage is covariant, so the final trace words are invariants of the orbit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    commutator_norm, eigen_covectors, invert_quadric, rcond, trace_quadric, value_on,
    value_on_complex, CMat, Mat, QuadFormDown, QuadFormUp, SymPairIndex, SymbolTensor, C64,
};

/// Relative bound on the imaginary part discarded from each `R_l`.
pub const REALITY_TOL: f64 = 1e-8;

/// Number of random `θ` pairs drawn when testing the commutator condition.
pub const COMMUTATOR_SAMPLES: usize = 20;

const COMMUTATOR_SEED: u64 = 0x5eed_0004;

/// `dim S²T* = n(n+1)/2`.
pub fn sym_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// `A_{σ,I}(θ₁ ⊗ ⋯ ⊗ θ_k) = Tr(σ_{θ_{i1}} ⋯ σ_{θ_{ik}})`.
pub fn artin_procesi_tensor(
    sigma: &SymbolTensor,
    thetas: &[QuadFormDown],
    perm: &[usize],
) -> Result<f64> {
    if thetas.len() != perm.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} forms for a word of length {}",
            thetas.len(),
            perm.len()
        )));
    }
    let m = sigma.m();
    let mut prod = Mat::identity(m, m);
    for &i in perm {
        let th = thetas
            .get(i)
            .ok_or_else(|| Error::DimensionMismatch(format!("slot {i} out of range")))?;
        prod *= value_on(sigma, th)?;
    }
    Ok(prod.trace())
}

/// Components of `h₂ = A_{σ,(1,2)}` and `h₃ = A_{σ,(1,2,3)}` over full index
/// ranges: `h2[i,j,k,l] = Tr(σ^{ij} σ^{kl})`, `h3[i,j,p,q,k,l] = Tr(σ^{ij} σ^{pq} σ^{kl})`.
#[derive(Debug, Clone)]
pub struct TraceTensors {
    n: usize,
    h2: Vec<f64>,
    h3: Vec<f64>,
}

impl TraceTensors {
    pub fn h2(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let n = self.n;
        self.h2[((i * n + j) * n + k) * n + l]
    }

    pub fn h3(&self, idx: [usize; 6]) -> f64 {
        let n = self.n;
        let flat = idx.iter().fold(0, |acc, &x| acc * n + x);
        self.h3[flat]
    }

    /// `h₂(θ₁, θ₂)`.
    pub fn eval2(&self, t1: &QuadFormDown, t2: &QuadFormDown) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        acc += t1.0[(i, j)] * t2.0[(k, l)] * self.h2(i, j, k, l);
                    }
                }
            }
        }
        acc
    }

    /// `h₃(θ₁, θ₂, θ₃)`.
    pub fn eval3(&self, t1: &QuadFormDown, t2: &QuadFormDown, t3: &QuadFormDown) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for a in 0..n * n {
            let (i, j) = (a / n, a % n);
            for b in 0..n * n {
                let (p, q) = (b / n, b % n);
                let w = t1.0[(i, j)] * t2.0[(p, q)];
                if w == 0.0 {
                    continue;
                }
                for c in 0..n * n {
                    let (k, l) = (c / n, c % n);
                    acc += w * t3.0[(k, l)] * self.h3([i, j, p, q, k, l]);
                }
            }
        }
        acc
    }
}

pub fn h2_h3(sigma: &SymbolTensor) -> TraceTensors {
    let n = sigma.n();
    let nn = n * n;
    let comps: Vec<&Mat> = (0..nn).map(|a| sigma.comp(a / n, a % n)).collect();
    let mut h2 = vec![0.0; nn * nn];
    let mut h3 = vec![0.0; nn * nn * nn];
    for a in 0..nn {
        for b in 0..nn {
            let ab = comps[a] * comps[b];
            h2[a * nn + b] = ab.trace();
            for c in 0..nn {
                h3[(a * nn + b) * nn + c] = (&ab * comps[c]).trace();
            }
        }
    }
    TraceTensors { n, h2, h3 }
}

/// `g_σ`, its inverse, `g⁽¹⁾ = g_σ⁻¹ ⌟ h₂` and `g⁽²⁾ = g_σ⁻¹ ⌟ g_σ⁻¹ ⌟ h₃`.
///
/// `g⁽¹⁾^{kl} = Σ (g_σ⁻¹)_{ij} h₂^{(ij)(kl)} = Tr(σ_{g⁻¹} σ^{kl})`.
///
/// `g⁽²⁾` is the symmetrised chain contraction
/// `Σ (g_σ⁻¹)_{ij} (g_σ⁻¹)_{pq} Tr(σ^{ki} σ^{jp} σ^{ql})` plus the commutator quadric
/// `Tr([σ_{g⁻¹}, σ_{g⁻¹ g⁽¹⁾ g⁻¹}] σ^{kl})`. Every contraction of `h₃` that is
/// symmetric in the trace order is diagonal in the eigenframe of `ĝ⁽¹⁾` when
/// `m = 2` and `n = 2`, which would hide the off-diagonal frame components of
/// the symbol from the R-family. The commutator term carries the odd part.
#[derive(Debug, Clone)]
pub struct DerivedQuadrics {
    pub g: QuadFormUp,
    pub g_inv: QuadFormDown,
    pub g1: QuadFormUp,
    pub g2: QuadFormUp,
}

/// Fails with [`Error::Degenerate`] when `g_σ` is singular.
pub fn derived_quadrics(sigma: &SymbolTensor, tol: f64) -> Result<DerivedQuadrics> {
    let n = sigma.n();
    let g = trace_quadric(sigma);
    let g_inv = invert_quadric(&g, tol)?;
    let tt = h2_h3(sigma);
    let gi = &g_inv.0;
    let mut g1 = DMatrix::zeros(n, n);
    let mut g2 = DMatrix::zeros(n, n);
    for k in 0..n {
        for l in 0..n {
            let mut a1 = 0.0;
            let mut a2 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    a1 += gi[(i, j)] * tt.h2(i, j, k, l);
                    for p in 0..n {
                        for q in 0..n {
                            a2 += gi[(i, j)] * gi[(p, q)] * tt.h3([k, i, j, p, q, l]);
                        }
                    }
                }
            }
            g1[(k, l)] = a1;
            g2[(k, l)] = a2;
        }
    }
    let g1 = (&g1 + g1.transpose()) * 0.5;
    let x = value_on(sigma, &g_inv)?;
    let z = value_on(sigma, &QuadFormDown(gi * &g1 * gi))?;
    let comm = &x * &z - &z * &x;
    let g2 = (&g2 + g2.transpose()) * 0.5
        + DMatrix::from_fn(n, n, |k, l| (&comm * sigma.comp(k, l)).trace());
    Ok(DerivedQuadrics {
        g,
        g_inv,
        g1: QuadFormUp(g1),
        g2: QuadFormUp(g2),
    })
}

/// `ĝ⁽¹⁾` on `T*`, fixed by `g_σ(ĝ⁽¹⁾θ, η) = g⁽¹⁾(θ, η)`; as a matrix
/// `A_i^k = Σ_j (g_σ⁻¹)_{ij} (g⁽¹⁾)^{jk}`.
pub fn g1_operator(dq: &DerivedQuadrics) -> DMatrix<f64> {
    &dq.g_inv.0 * &dq.g1.0
}

/// Basis element of `S²T*` whose upper-triangle coordinate `(i, j)` is one.
fn sym_basis(n: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, n);
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

/// `S = S²(A)`, acting by `θ ↦ A θ Aᵀ` on `S²T*` in [`SymPairIndex`] coordinates.
pub fn sym_square_operator(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let idx = SymPairIndex::new(n);
    let mut s = DMatrix::zeros(idx.len(), idx.len());
    for (p, &(i, j)) in idx.pairs().iter().enumerate() {
        let image = a * sym_basis(n, i, j) * a.transpose();
        s.set_column(p, &idx.to_vec(&image));
    }
    s
}

/// Normalised eigencovector basis of `ĝ⁽¹⁾` with its dual basis.
#[derive(Debug, Clone)]
pub struct EigenFrame {
    pub lambda: Vec<C64>,
    /// `e*_i` as columns.
    pub estar: CMat,
    /// `e_i` as columns, `⟨e_i, e*_j⟩ = δ_ij`.
    pub edual: CMat,
    /// `g_σ(e*_i, e*_i)` after normalisation.
    pub norms: Vec<i8>,
}

impl EigenFrame {
    /// Normalises eigencovectors so that `g(e*_i, e*_i) = ±1` and fixes their sign.
    ///
    /// Real covectors are scaled by `|g(v,v)|^{-1/2}`. A complex covector is scaled
    /// by the principal root of `g(v,v)⁻¹` and its conjugate partner (the next
    /// column, when the eigenvalue is the conjugate) follows by conjugation.
    pub fn from_covectors(
        lambda: Vec<C64>,
        vectors: &CMat,
        g: &QuadFormUp,
        tol: f64,
    ) -> Result<Self> {
        let n = lambda.len();
        let gc = g.0.map(|x| C64::new(x, 0.0));
        let mut estar = CMat::zeros(n, n);
        let mut norms = vec![1i8; n];
        let mut k = 0;
        while k < n {
            let v = vectors.column(k).into_owned();
            let v = &v / C64::new(v.norm(), 0.0);
            let q = (v.transpose() * &gc * &v)[(0, 0)];
            if q.norm() < tol {
                return Err(Error::NullNorm {
                    index: k,
                    value: q.norm(),
                });
            }
            let paired = lambda[k].im > 0.0 && k + 1 < n && lambda[k + 1] == lambda[k].conj();
            let (scaled, sign) = if lambda[k].im == 0.0 {
                let v = v.map(|z| C64::new(z.re, 0.0));
                (
                    &v / C64::new(q.re.abs().sqrt(), 0.0),
                    if q.re < 0.0 { -1 } else { 1 },
                )
            } else {
                (&v / q.sqrt(), 1)
            };
            let scaled = fix_sign(scaled, tol);
            estar.set_column(k, &scaled);
            norms[k] = sign;
            if paired {
                estar.set_column(k + 1, &scaled.map(|z| z.conj()));
                norms[k + 1] = 1;
                k += 2;
            } else {
                k += 1;
            }
        }
        let edual = estar
            .clone()
            .try_inverse()
            .ok_or(Error::NearDefective {
                gap: 0.0,
                threshold: tol,
            })?
            .transpose();
        Ok(EigenFrame {
            lambda,
            estar,
            edual,
            norms,
        })
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    /// Reorders eigenpairs and flips covector signs; used to check frame independence.
    pub fn permuted(&self, perm: &[usize], signs: &[f64]) -> EigenFrame {
        let n = self.n();
        let mut estar = CMat::zeros(n, n);
        let mut edual = CMat::zeros(n, n);
        let mut lambda = Vec::with_capacity(n);
        let mut norms = Vec::with_capacity(n);
        for (k, &src) in perm.iter().enumerate() {
            let s = C64::new(signs[k], 0.0);
            estar.set_column(k, &(self.estar.column(src) * s));
            edual.set_column(k, &(self.edual.column(src) * s));
            lambda.push(self.lambda[src]);
            norms.push(self.norms[src]);
        }
        EigenFrame {
            lambda,
            estar,
            edual,
            norms,
        }
    }

    /// `max |⟨e_i, e*_j⟩ − δ_ij|`.
    pub fn duality_residual(&self) -> f64 {
        let n = self.n();
        let p = self.edual.transpose() * &self.estar;
        (p - CMat::identity(n, n))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

fn fix_sign(v: DVector<C64>, tol: f64) -> DVector<C64> {
    let scale = v.norm();
    let lead = v.iter().find(|z| z.norm() > tol * scale);
    match lead {
        Some(z) if z.re < 0.0 => -v,
        _ => v,
    }
}

pub fn eigenframe(dq: &DerivedQuadrics, tol: f64) -> Result<EigenFrame> {
    let a = g1_operator(dq);
    let raw = eigen_covectors(&a, tol)?;
    EigenFrame::from_covectors(raw.values, &raw.vectors, &dq.g, tol)
}

/// `R_0, …, R_N` with `N + 1 = n(n+1)/2`.
#[derive(Debug, Clone)]
pub struct RFamily {
    pub r: Vec<Mat>,
    /// Largest `‖Im R_l‖ / ‖R_l‖` discarded when taking real parts.
    pub imag_residual: f64,
}

impl RFamily {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn m(&self) -> usize {
        self.r.first().map_or(0, |r| r.nrows())
    }
}

/// Components `σ_ij = σ(e*_i, e*_j)` in the eigenframe.
pub fn frame_components(sigma: &SymbolTensor, frame: &EigenFrame) -> Vec<CMat> {
    let n = frame.n();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let theta = frame.estar.column(i) * frame.estar.column(j).transpose();
            out.push(value_on_complex(sigma, &theta));
        }
    }
    out
}

/// `g⁽²⁾(e*_i, e*_j)` as an `n × n` complex matrix.
fn g2_in_frame(dq: &DerivedQuadrics, frame: &EigenFrame) -> CMat {
    let g2 = dq.g2.0.map(|x| C64::new(x, 0.0));
    frame.estar.transpose() * g2 * &frame.estar
}

/// `R_l(σ) = Σ_{ij} λ_i^l λ_j^l g⁽²⁾(e*_i, e*_j) σ_ij`, `l = 0..N`.
pub fn r_family(sigma: &SymbolTensor, dq: &DerivedQuadrics, frame: &EigenFrame) -> Result<RFamily> {
    let n = sigma.n();
    let m = sigma.m();
    let comps = frame_components(sigma, frame);
    let g2 = g2_in_frame(dq, frame);
    let mut r = Vec::with_capacity(sym_dim(n));
    let mut imag_residual: f64 = 0.0;
    for l in 0..sym_dim(n) {
        let mut acc = CMat::zeros(m, m);
        for i in 0..n {
            for j in 0..n {
                let w = (frame.lambda[i] * frame.lambda[j]).powi(l as i32) * g2[(i, j)];
                acc += &comps[i * n + j] * w;
            }
        }
        let re = acc.map(|z| z.re);
        let im = acc.map(|z| z.im);
        let scale = re.norm().max(f64::MIN_POSITIVE);
        imag_residual = imag_residual.max(im.norm() / scale);
        r.push(re);
    }
    if imag_residual > REALITY_TOL {
        return Err(Error::RealityViolation {
            residual: imag_residual,
        });
    }
    Ok(RFamily { r, imag_residual })
}

/// The forms `λ̃_l = Σ λ_i^l λ_j^l g⁽²⁾(e*_i, e*_j) e*_i ⊗ e*_j`, so that
/// `R_l = ⟨σ, λ̃_l⟩`.
pub fn lambda_forms(dq: &DerivedQuadrics, frame: &EigenFrame) -> Vec<DMatrix<C64>> {
    let n = frame.n();
    let g2 = g2_in_frame(dq, frame);
    (0..sym_dim(n))
        .map(|l| {
            let mut coeff = CMat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    coeff[(i, j)] = (frame.lambda[i] * frame.lambda[j]).powi(l as i32) * g2[(i, j)];
                }
            }
            &frame.estar * coeff * frame.estar.transpose()
        })
        .collect()
}

/// Everything derived from a symbol on the way to its R-family.
#[derive(Debug, Clone)]
pub struct SymbolAnalysis {
    pub quadrics: DerivedQuadrics,
    pub frame: EigenFrame,
    pub family: RFamily,
}

pub fn analyze(sigma: &SymbolTensor, tol: f64) -> Result<SymbolAnalysis> {
    let quadrics = derived_quadrics(sigma, tol)?;
    let frame = eigenframe(&quadrics, tol)?;
    let family = r_family(sigma, &quadrics, &frame)?;
    Ok(SymbolAnalysis {
        quadrics,
        frame,
        family,
    })
}

/// Trace words of a matrix family, one per cyclic class.
///
/// Letters `0..=N` stand for `R_0..R_N`; when a subsymbol is supplied it is the
/// letter `N + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub m: usize,
    pub n: usize,
    pub max_len: usize,
    pub with_subsymbol: bool,
    pub words: Vec<Vec<usize>>,
    pub values: Vec<f64>,
    /// `Π ‖letter‖_F` for each word; the natural magnitude of its rounding error.
    pub scales: Vec<f64>,
}

/// Words of length `1..=max_len` over `alphabet` letters, keeping only the
/// lexicographically minimal rotation of each cyclic class.
pub fn necklace_words(alphabet: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for len in 1..=max_len {
        let mut word = vec![0usize; len];
        loop {
            if is_min_rotation(&word) {
                out.push(word.clone());
            }
            // odometer increment
            let mut pos = len;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                word[pos] += 1;
                if word[pos] < alphabet {
                    break;
                }
                word[pos] = 0;
                if pos == 0 {
                    pos = usize::MAX;
                    break;
                }
            }
            if pos == usize::MAX || alphabet == 0 {
                break;
            }
        }
    }
    out
}

pub fn is_min_rotation(word: &[usize]) -> bool {
    let len = word.len();
    (1..len).all(|s| {
        let rotated = word[s..].iter().chain(&word[..s]);
        word.iter().cmp(rotated) != std::cmp::Ordering::Greater
    })
}

/// Lexicographically minimal rotation.
pub fn canonical_rotation(word: &[usize]) -> Vec<usize> {
    let len = word.len();
    (0..len.max(1))
        .map(|s| {
            word[s.min(len)..]
                .iter()
                .chain(&word[..s.min(len)])
                .copied()
                .collect::<Vec<_>>()
        })
        .min()
        .unwrap_or_default()
}

/// Trace of the ordered product of `letters[w_1] ⋯ letters[w_k]`.
pub fn trace_word(letters: &[Mat], word: &[usize]) -> f64 {
    let m = letters[0].nrows();
    let mut prod = Mat::identity(m, m);
    for &w in word {
        prod *= &letters[w];
    }
    prod.trace()
}

pub fn fingerprint(rs: &RFamily, extra: Option<&Mat>, max_len: usize) -> Fingerprint {
    let mut letters: Vec<Mat> = rs.r.clone();
    if let Some(s0) = extra {
        letters.push(s0.clone());
    }
    let norms: Vec<f64> = letters.iter().map(|l| l.norm()).collect();
    let words = necklace_words(letters.len(), max_len.max(1));
    let values = words.iter().map(|w| trace_word(&letters, w)).collect();
    let scales = words
        .iter()
        .map(|w| w.iter().map(|&i| norms[i]).product())
        .collect();
    let m = rs.m();
    let n = (((8 * rs.len() + 1) as f64).sqrt() as usize - 1) / 2;
    Fingerprint {
        m,
        n,
        max_len: max_len.max(1),
        with_subsymbol: extra.is_some(),
        words,
        values,
        scales,
    }
}

/// Pass/fail with the scalar that decided it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub pass: bool,
    pub diagnostic: f64,
}

impl ConditionCheck {
    fn failed(diagnostic: f64) -> Self {
        ConditionCheck {
            pass: false,
            diagnostic,
        }
    }
}

/// The four genericity conditions.
///
/// * `cond1`: reciprocal condition number of `g_σ`.
/// * `cond2`: smallest of the relative spectral gaps of `ĝ⁽¹⁾` and `S`, their
///   smallest relative eigenvalue modulus, and the relative smallest singular
///   value of the Krylov matrix `g⁽²⁾, S*g⁽²⁾, …, (S*)^N g⁽²⁾`.
/// * `cond3`: `min_i |g_σ(v_i, v_i)|` over unit eigencovectors.
/// * `cond4`: smallest relative commutator `‖[σ_θ₁, σ_θ₂]‖ / (‖σ_θ₁‖‖σ_θ₂‖)` and
///   relative eigenvalue gap of `σ_θ` over the sampled forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub cond1: ConditionCheck,
    pub cond2: ConditionCheck,
    pub cond3: ConditionCheck,
    pub cond4: ConditionCheck,
    pub overall: bool,
}

impl RegularityReport {
    /// Name of the first failing condition.
    pub fn first_failure(&self) -> Option<&'static str> {
        [
            ("condition 1 (g_sigma nondegenerate)", self.cond1),
            ("condition 2 (simple spectrum, cyclic g2)", self.cond2),
            ("condition 3 (non-isotropic eigencovectors)", self.cond3),
            ("condition 4 (generic commutators)", self.cond4),
        ]
        .into_iter()
        .find(|(_, c)| !c.pass)
        .map(|(name, _)| name)
    }
}

fn relative_gap(values: &[C64]) -> f64 {
    let scale = values.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let mut gap = f64::INFINITY;
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            gap = gap.min((values[i] - values[j]).norm());
        }
    }
    gap / scale
}

fn check_cond2(dq: &DerivedQuadrics, tol: f64) -> ConditionCheck {
    let a = g1_operator(dq);
    let lambda: Vec<C64> = a.clone().complex_eigenvalues().iter().copied().collect();
    let n = lambda.len();
    let scale = lambda.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return ConditionCheck::failed(0.0);
    }
    let min_modulus = lambda
        .iter()
        .map(|z| z.norm())
        .fold(f64::INFINITY, f64::min)
        / scale;
    let products: Vec<C64> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .map(|(i, j)| lambda[i] * lambda[j])
        .collect();

    let idx = SymPairIndex::new(n);
    let mut krylov = DMatrix::zeros(idx.len(), idx.len());
    let mut form = dq.g2.0.clone();
    for row in 0..idx.len() {
        let v = idx.to_vec(&form);
        let nrm = v.norm();
        if nrm > 0.0 {
            krylov.set_row(row, &(v / nrm).transpose());
        }
        form = a.transpose() * &form * &a;
    }
    let diagnostic = relative_gap(&lambda)
        .min(relative_gap(&products))
        .min(min_modulus)
        .min(rcond(&krylov));
    ConditionCheck {
        pass: diagnostic >= tol,
        diagnostic,
    }
}

fn check_cond4(sigma: &SymbolTensor, tol: f64) -> ConditionCheck {
    let n = sigma.n();
    let mut rng = ChaCha8Rng::seed_from_u64(COMMUTATOR_SEED);
    let mut draw = || {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        QuadFormDown((&a + a.transpose()) * 0.5)
    };
    let mut worst = f64::INFINITY;
    for _ in 0..COMMUTATOR_SAMPLES {
        let s1 = value_on(sigma, &draw()).expect("dimensions agree");
        let s2 = value_on(sigma, &draw()).expect("dimensions agree");
        let denom = s1.norm() * s2.norm();
        let comm = if denom > 0.0 {
            commutator_norm(&s1, &s2) / denom
        } else {
            0.0
        };
        let ev: Vec<C64> = s1.complex_eigenvalues().iter().copied().collect();
        worst = worst.min(comm).min(relative_gap(&ev));
    }
    ConditionCheck {
        pass: worst >= tol,
        diagnostic: worst,
    }
}

pub fn regularity_report(sigma: &SymbolTensor, tol: f64) -> RegularityReport {
    let g = trace_quadric(sigma);
    let rc = rcond(&g.0);
    let cond1 = ConditionCheck {
        pass: rc >= tol,
        diagnostic: rc,
    };
    let cond4 = check_cond4(sigma, tol);
    let (cond2, cond3) = match derived_quadrics(sigma, tol) {
        Ok(dq) => {
            let c2 = check_cond2(&dq, tol);
            let c3 = match eigen_covectors(&g1_operator(&dq), tol) {
                Ok(raw) => {
                    let gc = dq.g.0.map(|x| C64::new(x, 0.0));
                    let worst = raw
                        .vectors
                        .column_iter()
                        .map(|v| (v.transpose() * &gc * v)[(0, 0)].norm())
                        .fold(f64::INFINITY, f64::min);
                    ConditionCheck {
                        pass: worst >= tol,
                        diagnostic: worst,
                    }
                }
                Err(_) => ConditionCheck::failed(0.0),
            };
            (c2, c3)
        }
        Err(_) => (ConditionCheck::failed(0.0), ConditionCheck::failed(0.0)),
    };
    let overall = cond1.pass && cond2.pass && cond3.pass && cond4.pass;
    RegularityReport {
        cond1,
        cond2,
        cond3,
        cond4,
        overall,
    }
}

/// Matrix of the infinitesimal `gl(E) × gl(T)` action at `σ`, one column per
/// generator (`m²` from `gl(E)` then `n²` from `gl(T)`), rows in
/// [`SymbolTensor::to_flat`] coordinates.
pub fn infinitesimal_action(sigma: &SymbolTensor) -> DMatrix<f64> {
    let (m, n) = (sigma.m(), sigma.n());
    let rows = m * m * sym_dim(n);
    let mut out = DMatrix::zeros(rows, m * m + n * n);
    let mut col = 0;
    for b in 0..m {
        for a in 0..m {
            let mut x = Mat::zeros(m, m);
            x[(a, b)] = 1.0;
            let upper: Vec<Mat> = sigma.upper().iter().map(|s| &x * s - s * &x).collect();
            out.set_column(col, &SymbolTensor::from_upper(m, n, &upper).to_flat());
            col += 1;
        }
    }
    let idx = SymPairIndex::new(n);
    for c in 0..n {
        for d in 0..n {
            // Y = E_cd: δσ^{ij} = δ_ic σ^{dj} + δ_jc σ^{id}
            let upper: Vec<Mat> = idx
                .pairs()
                .iter()
                .map(|&(i, j)| {
                    let mut acc = Mat::zeros(m, m);
                    if i == c {
                        acc += sigma.comp(d, j);
                    }
                    if j == c {
                        acc += sigma.comp(i, d);
                    }
                    acc
                })
                .collect();
            out.set_column(col, &SymbolTensor::from_upper(m, n, &upper).to_flat());
            col += 1;
        }
    }
    out
}

/// Numerical rank of [`infinitesimal_action`] (the dimension of the orbit).
pub fn orbit_dimension(sigma: &SymbolTensor, tol: f64) -> usize {
    let sv = infinitesimal_action(sigma).singular_values();
    let max = sv.max();
    sv.iter().filter(|&&s| s > tol * max).count()
}

/// `ν = m²(n+2)(n−1)/2 − n² + 1`, the codimension of a regular orbit.
pub fn orbit_codimension(m: usize, n: usize) -> i64 {
    let (m, n) = (m as i64, n as i64);
    m * m * (n + 2) * (n - 1) / 2 - n * n + 1
}

/// `ν₀ = ν + m²`, the codimension of a regular orbit in the extended symbol space.
pub fn extended_codimension(m: usize, n: usize) -> i64 {
    orbit_codimension(m, n) + (m * m) as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{random_gl, random_regular_symbol, random_symbol};
    use crate::tensor::DEFAULT_TOL;

    fn diag(v: &[f64]) -> Mat {
        Mat::from_diagonal(&DVector::from_vec(v.to_vec()))
    }

    fn random_form(rng: &mut ChaCha8Rng, n: usize) -> QuadFormDown {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        QuadFormDown((&a + a.transpose()) * 0.5)
    }

    #[test]
    fn artin_procesi_examples() {
        let mut comp = vec![Mat::zeros(2, 2); 4];
        comp[0] = diag(&[1.0, 2.0]);
        let s = SymbolTensor::from_components(2, 2, comp).unwrap();
        let th = QuadFormDown::unit(2, 0, 0);
        assert_eq!(
            artin_procesi_tensor(&s, std::slice::from_ref(&th), &[0]).unwrap(),
            3.0
        );

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_symbol(&mut rng, 3, 2);
        let t = [random_form(&mut rng, 2), random_form(&mut rng, 2)];
        let a = artin_procesi_tensor(&s, &t, &[0, 1]).unwrap();
        let b = artin_procesi_tensor(&s, &t, &[1, 0]).unwrap();
        assert!((a - b).abs() < 1e-13);

        let t3 = [
            random_form(&mut rng, 2),
            random_form(&mut rng, 2),
            random_form(&mut rng, 2),
        ];
        let got = artin_procesi_tensor(&s, &t3, &[2, 0, 1]).unwrap();
        let direct = (value_on(&s, &t3[2]).unwrap()
            * value_on(&s, &t3[0]).unwrap()
            * value_on(&s, &t3[1]).unwrap())
        .trace();
        assert!((got - direct).abs() < 1e-13);

        assert!(artin_procesi_tensor(&s, &t, &[0]).is_err());
    }

    #[test]
    fn h2_of_scalar_symbol() {
        let g = QuadFormUp(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, -1.0]));
        let s = SymbolTensor::scalar(3, &g);
        let tt = h2_h3(&s);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        assert!(
                            (tt.h2(i, j, k, l) - 3.0 * g.0[(i, j)] * g.0[(k, l)]).abs() < 1e-14
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn h2_single_entry() {
        let mut comp = vec![Mat::zeros(2, 2); 4];
        comp[0] = diag(&[1.0, 2.0]);
        let s = SymbolTensor::from_components(2, 2, comp).unwrap();
        let th = QuadFormDown::unit(2, 0, 0);
        assert_eq!(h2_h3(&s).eval2(&th, &th), 5.0);
    }

    #[test]
    fn h3_cyclic_and_matches_artin_procesi() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = random_symbol(&mut rng, 2, 2);
        let tt = h2_h3(&s);
        for _ in 0..10 {
            let t = [
                random_form(&mut rng, 2),
                random_form(&mut rng, 2),
                random_form(&mut rng, 2),
            ];
            let a = tt.eval3(&t[0], &t[1], &t[2]);
            let b = tt.eval3(&t[1], &t[2], &t[0]);
            let c = artin_procesi_tensor(&s, &t, &[0, 1, 2]).unwrap();
            assert!((a - b).abs() < 1e-12);
            assert!((a - c).abs() < 1e-12);
            let d = tt.eval2(&t[0], &t[1]);
            assert!((d - artin_procesi_tensor(&s, &t[..2], &[0, 1]).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn derived_quadrics_scalar_symbol() {
        // σ = id ⊗ g: g_σ = m g, g_σ⁻¹ = g⁻¹/m, so g⁽¹⁾ = (n/m) g_σ.
        let g = QuadFormUp(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, -1.0]));
        let s = SymbolTensor::scalar(3, &g);
        let dq = derived_quadrics(&s, DEFAULT_TOL).unwrap();
        let expected = &dq.g.0 * (2.0 / 3.0);
        assert!((&dq.g1.0 - expected).amax() < 1e-12);

        // loop oracle for the contraction
        let tt = h2_h3(&s);
        let gi = &dq.g_inv.0;
        for k in 0..2 {
            for l in 0..2 {
                let mut acc = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        acc += gi[(i, j)] * tt.h2(i, j, k, l);
                    }
                }
                assert!((acc - dq.g1.0[(k, l)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn derived_quadrics_diagonal_symbol() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 3;
        let mut comp = vec![Mat::zeros(2, 2); n * n];
        for i in 0..n {
            comp[i * n + i] =
                Mat::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0)) + Mat::identity(2, 2) * 2.0;
        }
        let s = SymbolTensor::from_components(2, n, comp).unwrap();
        let dq = derived_quadrics(&s, DEFAULT_TOL).unwrap();
        for k in 0..n {
            for l in 0..n {
                if k != l {
                    assert!(dq.g1.0[(k, l)].abs() < 1e-13);
                    assert!(dq.g2.0[(k, l)].abs() < 1e-13);
                }
            }
        }
        // diagonal g: chain term is g⁻¹_kk² Tr((σ^{kk})³), commutator term uses diagonal sums
        let gi = &dq.g_inv.0;
        let x: Mat = (0..n).map(|i| s.comp(i, i) * gi[(i, i)]).sum();
        let z: Mat = (0..n)
            .map(|i| s.comp(i, i) * (gi[(i, i)] * gi[(i, i)] * dq.g1.0[(i, i)]))
            .sum();
        for k in 0..n {
            let skk = s.comp(k, k);
            let acc = gi[(k, k)] * gi[(k, k)] * (skk * skk * skk).trace()
                + ((&x * &z - &z * &x) * skk).trace();
            assert!((acc - dq.g2.0[(k, k)]).abs() < 1e-10 * acc.abs().max(1.0));
        }
    }

    #[test]
    fn derived_quadrics_degenerate() {
        let g = QuadFormUp(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        let s = SymbolTensor::scalar(2, &g);
        assert!(matches!(
            derived_quadrics(&s, DEFAULT_TOL),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn g1_operator_examples() {
        let dq = DerivedQuadrics {
            g: QuadFormUp(DMatrix::identity(2, 2)),
            g_inv: QuadFormDown(DMatrix::identity(2, 2)),
            g1: QuadFormUp(diag(&[2.0, 5.0])),
            g2: QuadFormUp(DMatrix::identity(2, 2)),
        };
        assert_eq!(g1_operator(&dq), diag(&[2.0, 5.0]));

        let g = QuadFormUp(DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 0.1, 0.0, 0.1, 1.0, 0.3, 0.0, 0.3, -1.5],
        ));
        let s = SymbolTensor::scalar(2, &g);
        let a = g1_operator(&derived_quadrics(&s, DEFAULT_TOL).unwrap());
        assert!((a - DMatrix::identity(3, 3) * 1.5).amax() < 1e-12);
    }

    #[test]
    fn g1_operator_spectrum_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10 {
            let s = random_symbol(&mut rng, 2, 3);
            let a = random_gl(&mut rng, 2);
            let b = random_gl(&mut rng, 3);
            let e1 = eigen_covectors(
                &g1_operator(&derived_quadrics(&s, DEFAULT_TOL).unwrap()),
                DEFAULT_TOL,
            );
            let s2 = s.act(&a, &b).unwrap();
            let e2 = eigen_covectors(
                &g1_operator(&derived_quadrics(&s2, DEFAULT_TOL).unwrap()),
                DEFAULT_TOL,
            );
            if let (Ok(e1), Ok(e2)) = (e1, e2) {
                for (x, y) in e1.values.iter().zip(&e2.values) {
                    assert!((x - y).norm() < 1e-8 * x.norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn sym_square_examples() {
        let s = sym_square_operator(&diag(&[2.0, 3.0]));
        let mut ev: Vec<f64> = s
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .collect();
        ev.sort_by(f64::total_cmp);
        assert_eq!(ev, vec![4.0, 6.0, 9.0]);
        assert_eq!(
            sym_square_operator(&DMatrix::identity(3, 3)),
            DMatrix::identity(6, 6)
        );

        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let th = random_form(&mut rng, 3);
        let idx = SymPairIndex::new(3);
        let pushed = &a * &th.0 * a.transpose();
        let got = sym_square_operator(&a) * idx.to_vec(&th.0);
        assert!((got - idx.to_vec(&pushed)).amax() < 1e-13);
    }

    #[test]
    fn eigenframe_orthonormal_case() {
        // g_σ = diag(1, −1), ĝ⁽¹⁾ = diag(2, 5)
        let dq = DerivedQuadrics {
            g: QuadFormUp(diag(&[1.0, -1.0])),
            g_inv: QuadFormDown(diag(&[1.0, -1.0])),
            g1: QuadFormUp(diag(&[2.0, -5.0])),
            g2: QuadFormUp(DMatrix::identity(2, 2)),
        };
        let f = eigenframe(&dq, DEFAULT_TOL).unwrap();
        assert_eq!(f.lambda, vec![C64::new(2.0, 0.0), C64::new(5.0, 0.0)]);
        assert_eq!(f.norms, vec![1, -1]);
        assert!((f.estar.map(|z| z.re) - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn eigenframe_null_norm() {
        // With g nondegenerate and a simple spectrum the eigencovectors are
        // g-orthogonal, so none can be null; the check is exercised on a
        // hand-built basis whose first covector lies on the light cone of g.
        let g = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let vectors = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0])
            .map(|x| C64::new(x, 0.0));
        let lambda = vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0), C64::new(3.0, 0.0)];
        let err = EigenFrame::from_covectors(lambda, &vectors, &QuadFormUp(g), DEFAULT_TOL);
        assert!(matches!(err, Err(Error::NullNorm { index: 0, .. })));
    }

    #[test]
    fn eigenframe_duality_on_random_symbols() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for (m, n) in [(2, 2), (2, 3), (3, 2)] {
            for _ in 0..10 {
                let s = random_regular_symbol(&mut rng, m, n);
                let dq = derived_quadrics(&s, DEFAULT_TOL).unwrap();
                let f = eigenframe(&dq, DEFAULT_TOL).unwrap();
                assert!(f.duality_residual() < 1e-10);
                let gc = dq.g.0.map(|x| C64::new(x, 0.0));
                for (k, v) in f.estar.column_iter().enumerate() {
                    let q = (v.transpose() * &gc * v)[(0, 0)];
                    assert!((q - C64::new(f.norms[k] as f64, 0.0)).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn r0_matches_lambda_form_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = random_regular_symbol(&mut rng, 2, 3);
        let an = analyze(&s, DEFAULT_TOL).unwrap();
        let forms = lambda_forms(&an.quadrics, &an.frame);
        for (l, form) in forms.iter().enumerate() {
            let im = form.map(|z| z.im).amax();
            assert!(im < 1e-9 * form.map(|z| z.re).amax().max(1.0));
            let real = QuadFormDown(form.map(|z| z.re));
            let via_form = value_on(&s, &real).unwrap();
            let r = &an.family.r[l];
            assert!((r - via_form).amax() < 1e-9 * r.amax().max(1.0));
        }
    }

    #[test]
    fn r_family_frame_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for (m, n) in [(2, 2), (3, 3)] {
            let s = random_regular_symbol(&mut rng, m, n);
            let an = analyze(&s, DEFAULT_TOL).unwrap();
            let perm: Vec<usize> = (0..n).rev().collect();
            let signs: Vec<f64> = (0..n)
                .map(|i| if i % 2 == 0 { -1.0 } else { 1.0 })
                .collect();
            let frame2 = an.frame.permuted(&perm, &signs);
            let r2 = r_family(&s, &an.quadrics, &frame2).unwrap();
            for (a, b) in an.family.r.iter().zip(&r2.r) {
                assert!((a - b).amax() <= 1e-9 * a.amax().max(1e-300));
            }
            // swapping only two eigenpairs
            let mut swap: Vec<usize> = (0..n).collect();
            swap.swap(0, 1);
            let r3 = r_family(&s, &an.quadrics, &an.frame.permuted(&swap, &vec![1.0; n])).unwrap();
            for (a, b) in an.family.r.iter().zip(&r3.r) {
                assert!((a - b).amax() <= 1e-9 * a.amax());
            }
        }
    }

    #[test]
    fn r_family_is_real_and_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let s = random_regular_symbol(&mut rng, 2, 3);
            let an = analyze(&s, DEFAULT_TOL).unwrap();
            assert_eq!(an.family.len(), 6);
            assert!(an.family.imag_residual < REALITY_TOL);
        }
    }

    #[test]
    fn lambda_forms_follow_the_symmetric_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let s = random_regular_symbol(&mut rng, 2, 3);
        let an = analyze(&s, DEFAULT_TOL).unwrap();
        let a = g1_operator(&an.quadrics).map(|x| C64::new(x, 0.0));
        let forms = lambda_forms(&an.quadrics, &an.frame);
        for l in 0..forms.len() - 1 {
            let next = &a * &forms[l] * a.transpose();
            let scale = forms[l + 1].iter().map(|z| z.norm()).fold(0.0, f64::max);
            let diff = (&next - &forms[l + 1])
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-8 * scale, "l = {l}: {diff:e} vs {scale:e}");
        }
    }

    #[test]
    fn necklaces() {
        let w = necklace_words(3, 2);
        assert_eq!(&w[..3], &[vec![0], vec![1], vec![2]]);
        assert!(w.contains(&vec![0, 1]));
        assert!(!w.contains(&vec![1, 0]));
        assert_eq!(w.len(), 3 + 6);
        // counts of binary necklaces of length ≤ 4: 2 + 3 + 4 + 6
        assert_eq!(necklace_words(2, 4).len(), 15);
        assert_eq!(canonical_rotation(&[2, 0, 1]), vec![0, 1, 2]);
    }

    #[test]
    fn fingerprint_letters_and_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rs = RFamily {
            r: (0..3)
                .map(|_| Mat::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0)))
                .collect(),
            imag_residual: 0.0,
        };
        let fp = fingerprint(&rs, None, 3);
        for l in 0..3 {
            assert_eq!(fp.words[l], vec![l]);
            assert_eq!(fp.values[l], rs.r[l].trace());
        }
        assert_eq!(
            fp.words
                .iter()
                .filter(|w| w.len() == 2 && w.contains(&0) && w.contains(&1))
                .count(),
            1
        );

        let x = random_gl(&mut rng, 2);
        let xi = x.clone().try_inverse().unwrap();
        let conj = RFamily {
            r: rs.r.iter().map(|r| &x * r * &xi).collect(),
            imag_residual: 0.0,
        };
        let fp2 = fingerprint(&conj, None, 3);
        for k in 0..fp.values.len() {
            assert!((fp.values[k] - fp2.values[k]).abs() <= 1e-10 * fp.scales[k]);
        }
    }

    #[test]
    fn regularity_scalar_symbol() {
        let g = QuadFormUp(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, -1.0]));
        let r = regularity_report(&SymbolTensor::scalar(2, &g), DEFAULT_TOL);
        assert!(r.cond1.pass);
        assert!(!r.cond2.pass);
        assert!(!r.cond4.pass);
        assert!(!r.overall);
    }

    #[test]
    fn regularity_degenerate() {
        let g = QuadFormUp(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        let r = regularity_report(&SymbolTensor::scalar(2, &g), DEFAULT_TOL);
        assert!(!r.cond1.pass);
        assert!(!r.overall);
    }

    #[test]
    fn random_symbols_are_regular() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let passed = (0..100)
            .filter(|_| regularity_report(&random_symbol(&mut rng, 2, 2), DEFAULT_TOL).overall)
            .count();
        assert!(passed >= 95, "pass rate {passed}/100");
    }

    #[test]
    fn codimension_formula() {
        assert_eq!(orbit_codimension(2, 2), 5);
        assert_eq!(extended_codimension(2, 2), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for (m, n) in [(2, 2), (2, 3), (3, 2)] {
            let s = random_regular_symbol(&mut rng, m, n);
            assert_eq!(orbit_dimension(&s, 1e-9), m * m + n * n - 1);
        }
    }
}
