//! Dense tensors over `E` (rank `m`) and `T` (dimension `n`).
//!
//! A symbol at a point is an element of `End(E) ⊗ S²T`, stored as the full
//! symmetric `n × n` array of `m × m` blocks. Quadratic forms on `T*` live in
//! [`QuadFormUp`], forms on `T` (covector squares, inverse quadrics) in
//! [`QuadFormDown`].

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Real endomorphism of `E`.
pub type Mat = DMatrix<f64>;
/// Complex endomorphism of `E ⊗ ℂ`.
pub type CMat = DMatrix<Complex<f64>>;
pub type C64 = Complex<f64>;

/// Relative tolerance used when a caller does not supply one.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Element of `S²T`: a symmetric bilinear form on covectors.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadFormUp(pub DMatrix<f64>);

/// Element of `S²T*`: a symmetric bilinear form on vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadFormDown(pub DMatrix<f64>);

impl QuadFormUp {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// `⟨g, θ⟩ = Σ g^{ij} θ_{ij}`.
    pub fn pair(&self, theta: &QuadFormDown) -> f64 {
        self.0.component_mul(&theta.0).sum()
    }

    /// `g(θ, η)` for two covectors.
    pub fn eval<T>(&self, theta: &DVector<T>, eta: &DVector<T>) -> T
    where
        T: nalgebra::ComplexField<RealField = f64> + Copy,
    {
        let g = self.0.map(|x| T::from_real(x));
        (theta.transpose() * g * eta)[(0, 0)]
    }
}

impl QuadFormDown {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// `θ = u·v`, the symmetrised product of two covectors.
    pub fn sym_product(u: &DVector<f64>, v: &DVector<f64>) -> Self {
        let p = u * v.transpose();
        QuadFormDown((&p + p.transpose()) * 0.5)
    }

    /// Elementary form `e^i·e^j`.
    pub fn unit(n: usize, i: usize, j: usize) -> Self {
        let mut u = DVector::zeros(n);
        let mut v = DVector::zeros(n);
        u[i] = 1.0;
        v[j] = 1.0;
        Self::sym_product(&u, &v)
    }
}

/// `σ ∈ End(E) ⊗ S²T`, stored as `comp[i * n + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolTensor {
    m: usize,
    n: usize,
    comp: Vec<Mat>,
}

impl SymbolTensor {
    pub fn zeros(m: usize, n: usize) -> Self {
        SymbolTensor {
            m,
            n,
            comp: vec![Mat::zeros(m, m); n * n],
        }
    }

    /// Builds a symbol from its full `n × n` component array, checking symmetry
    /// in the two tensor slots.
    pub fn from_components(m: usize, n: usize, comp: Vec<Mat>) -> Result<Self> {
        if comp.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "expected {} components, got {}",
                n * n,
                comp.len()
            )));
        }
        let mut scale: f64 = 0.0;
        for c in &comp {
            if c.nrows() != m || c.ncols() != m {
                return Err(Error::DimensionMismatch(format!(
                    "component is {}x{}, expected {m}x{m}",
                    c.nrows(),
                    c.ncols()
                )));
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(Error::Document("non-finite symbol entry".into()));
            }
            scale = scale.max(c.amax());
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (&comp[i * n + j] - &comp[j * n + i]).amax();
                if d > 1e-12 * scale.max(1.0) {
                    return Err(Error::DimensionMismatch(format!(
                        "components ({i},{j}) and ({j},{i}) differ by {d:.3e}"
                    )));
                }
            }
        }
        Ok(SymbolTensor { m, n, comp })
    }

    /// Builds a symbol from the upper triangle `i ≤ j`, in [`SymPairIndex`] order.
    pub fn from_upper(m: usize, n: usize, upper: &[Mat]) -> Self {
        let idx = SymPairIndex::new(n);
        assert_eq!(upper.len(), idx.len());
        let mut comp = vec![Mat::zeros(m, m); n * n];
        for (p, &(i, j)) in idx.pairs().iter().enumerate() {
            comp[i * n + j] = upper[p].clone();
            comp[j * n + i] = upper[p].clone();
        }
        SymbolTensor { m, n, comp }
    }

    /// `id_E ⊗ g`.
    pub fn scalar(m: usize, g: &QuadFormUp) -> Self {
        let n = g.dim();
        let comp = g.0.iter().map(|&x| Mat::identity(m, m) * x).collect();
        // DMatrix iterates column-major; g is symmetric so the layout is the same.
        SymbolTensor { m, n, comp }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn comp(&self, i: usize, j: usize) -> &Mat {
        &self.comp[i * self.n + j]
    }

    pub fn upper(&self) -> Vec<Mat> {
        SymPairIndex::new(self.n)
            .pairs()
            .iter()
            .map(|&(i, j)| self.comp(i, j).clone())
            .collect()
    }

    /// Coordinates in `ℝ^{m²·n(n+1)/2}`: upper-triangle blocks, each column-major.
    pub fn to_flat(&self) -> DVector<f64> {
        let blocks = self.upper();
        let mm = self.m * self.m;
        let mut v = DVector::zeros(mm * blocks.len());
        for (p, b) in blocks.iter().enumerate() {
            v.rows_mut(p * mm, mm)
                .copy_from(&DVector::from_column_slice(b.as_slice()));
        }
        v
    }

    pub fn from_flat(m: usize, n: usize, v: &DVector<f64>) -> Self {
        let mm = m * m;
        let count = n * (n + 1) / 2;
        assert_eq!(v.len(), mm * count);
        let upper: Vec<Mat> = (0..count)
            .map(|p| Mat::from_column_slice(m, m, v.rows(p * mm, mm).as_slice()))
            .collect();
        Self::from_upper(m, n, &upper)
    }

    pub fn norm(&self) -> f64 {
        self.comp
            .iter()
            .map(|c| c.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &SymbolTensor) -> f64 {
        self.comp
            .iter()
            .zip(&other.comp)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    pub fn add(&self, other: &SymbolTensor) -> SymbolTensor {
        SymbolTensor {
            m: self.m,
            n: self.n,
            comp: self
                .comp
                .iter()
                .zip(&other.comp)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> SymbolTensor {
        SymbolTensor {
            m: self.m,
            n: self.n,
            comp: self.comp.iter().map(|a| a * s).collect(),
        }
    }

    /// Action of `(A, B) ∈ GL(E) × GL(T)`:
    /// `σ'^{ij} = Σ B_ik B_jl · A σ^{kl} A⁻¹`.
    pub fn act(&self, a: &Mat, b: &DMatrix<f64>) -> Result<SymbolTensor> {
        let n = self.n;
        if a.nrows() != self.m || b.nrows() != n {
            return Err(Error::DimensionMismatch(
                "group element has wrong size".into(),
            ));
        }
        let a_inv = a
            .clone()
            .try_inverse()
            .ok_or(Error::NotRegular("GL(E) element is singular".into()))?;
        let conj: Vec<Mat> = self.comp.iter().map(|c| a * c * &a_inv).collect();
        let mut comp = vec![Mat::zeros(self.m, self.m); n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = Mat::zeros(self.m, self.m);
                for k in 0..n {
                    for l in 0..n {
                        let w = b[(i, k)] * b[(j, l)];
                        if w != 0.0 {
                            acc += &conj[k * n + l] * w;
                        }
                    }
                }
                comp[i * n + j] = acc;
            }
        }
        Ok(SymbolTensor { m: self.m, n, comp })
    }
}

/// Covector-square transforming contragrediently to [`SymbolTensor::act`]:
/// `θ' = B⁻ᵀ θ B⁻¹`, so that `σ'_{θ'} = A σ_θ A⁻¹`.
pub fn act_on_form(theta: &QuadFormDown, b: &DMatrix<f64>) -> Result<QuadFormDown> {
    let b_inv = b
        .clone()
        .try_inverse()
        .ok_or(Error::NotRegular("GL(T) element is singular".into()))?;
    Ok(QuadFormDown(b_inv.transpose() * &theta.0 * b_inv))
}

/// Lexicographic bijection between pairs `i ≤ j` and `0..n(n+1)/2`.
#[derive(Debug, Clone)]
pub struct SymPairIndex {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl SymPairIndex {
    pub fn new(n: usize) -> Self {
        let pairs = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        SymPairIndex { n, pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // rows before i contribute n + (n-1) + ... + (n-i+1)
        i * self.n - i * i.saturating_sub(1) / 2 + (j - i)
    }

    /// Upper-triangle coordinates of a symmetric matrix.
    pub fn to_vec<T: nalgebra::Scalar + Copy>(&self, s: &DMatrix<T>) -> DVector<T> {
        DVector::from_iterator(self.len(), self.pairs.iter().map(|&(i, j)| s[(i, j)]))
    }
}

/// `σ_θ = Σ θ_ij σ^{ij}`.
pub fn value_on(sigma: &SymbolTensor, theta: &QuadFormDown) -> Result<Mat> {
    let n = sigma.n();
    if theta.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "form has dimension {}, symbol has n = {n}",
            theta.dim()
        )));
    }
    let mut acc = Mat::zeros(sigma.m(), sigma.m());
    for i in 0..n {
        for j in 0..n {
            let w = theta.0[(i, j)];
            if w != 0.0 {
                acc += sigma.comp(i, j) * w;
            }
        }
    }
    Ok(acc)
}

/// Complex version of [`value_on`] for forms built from complex covectors.
pub fn value_on_complex(sigma: &SymbolTensor, theta: &DMatrix<C64>) -> CMat {
    let n = sigma.n();
    let m = sigma.m();
    let mut acc = CMat::zeros(m, m);
    for i in 0..n {
        for j in 0..n {
            let w = theta[(i, j)];
            if w != C64::new(0.0, 0.0) {
                acc += sigma.comp(i, j).map(|x| C64::new(x, 0.0)) * w;
            }
        }
    }
    acc
}

/// `g_σ = (Tr ⊗ id) σ`.
pub fn trace_quadric(sigma: &SymbolTensor) -> QuadFormUp {
    let n = sigma.n();
    QuadFormUp(DMatrix::from_fn(n, n, |i, j| sigma.comp(i, j).trace()))
}

/// Reciprocal 2-norm condition number, `0` for a singular matrix.
pub fn rcond(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    if max == 0.0 {
        0.0
    } else {
        sv.min() / max
    }
}

pub fn invert_quadric(g: &QuadFormUp, tol: f64) -> Result<QuadFormDown> {
    let rc = rcond(&g.0);
    if !(rc >= tol) {
        return Err(Error::Degenerate { rcond: rc, tol });
    }
    let inv =
        g.0.clone()
            .try_inverse()
            .ok_or(Error::Degenerate { rcond: rc, tol })?;
    Ok(QuadFormDown((&inv + inv.transpose()) * 0.5))
}

/// Eigenvalues and unit eigenvectors of a real matrix, over ℂ.
#[derive(Debug, Clone)]
pub struct RawEigen {
    pub values: Vec<C64>,
    /// Eigenvectors as columns, unit Euclidean norm.
    pub vectors: CMat,
}

/// Eigen decomposition of a real diagonalisable matrix with simple spectrum.
///
/// Eigenvalues are ordered by real part, then by descending imaginary part, so a
/// conjugate pair sits together with its `Im > 0` member first. The vector of a
/// `Im < 0` member is the exact conjugate of its partner's vector.
pub fn eigen_covectors(a: &DMatrix<f64>, tol: f64) -> Result<RawEigen> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(
            "eigenproblem needs a square matrix".into(),
        ));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::DimensionMismatch("non-finite matrix".into()));
    }
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let raw: Vec<C64> = a.clone().complex_eigenvalues().iter().copied().collect();

    let threshold = tol * scale;
    let gap = min_pairwise_gap(&raw);
    if gap < threshold {
        return Err(Error::NearDefective { gap, threshold });
    }

    // pair conjugates exactly
    let mut values = raw.clone();
    let mut used = vec![false; n];
    for i in 0..n {
        if used[i] || values[i].im == 0.0 {
            continue;
        }
        if values[i].im.abs() <= threshold {
            values[i].im = 0.0;
            continue;
        }
        let target = values[i].conj();
        let partner = (0..n).filter(|&j| j != i && !used[j]).min_by(|&x, &y| {
            (values[x] - target)
                .norm()
                .total_cmp(&(values[y] - target).norm())
        });
        if let Some(j) = partner {
            let re = 0.5 * (values[i].re + values[j].re);
            let im = 0.5 * (values[i].im.abs() + values[j].im.abs());
            let (hi, lo) = if values[i].im > 0.0 { (i, j) } else { (j, i) };
            values[hi] = C64::new(re, im);
            values[lo] = C64::new(re, -im);
            used[i] = true;
            used[j] = true;
        }
    }
    values.sort_by(|x, y| x.re.total_cmp(&y.re).then(y.im.total_cmp(&x.im)));

    let ac = a.map(|x| C64::new(x, 0.0));
    let mut vectors = CMat::zeros(n, n);
    let mut k = 0;
    while k < n {
        let lambda = values[k];
        let v = null_vector(&ac, lambda);
        vectors.set_column(k, &v);
        if lambda.im > 0.0 && k + 1 < n && values[k + 1] == lambda.conj() {
            vectors.set_column(k + 1, &v.map(|z| z.conj()));
            k += 2;
        } else {
            k += 1;
        }
    }

    for (k, lambda) in values.iter().enumerate() {
        let v = vectors.column(k);
        let r = (&ac * v - v * *lambda).norm();
        if r > tol.max(1e-12) * scale * 1e3 {
            return Err(Error::NearDefective {
                gap: r,
                threshold: tol * scale,
            });
        }
    }
    Ok(RawEigen { values, vectors })
}

fn min_pairwise_gap(values: &[C64]) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            gap = gap.min((values[i] - values[j]).norm());
        }
    }
    gap
}

/// Unit vector spanning the (numerical) kernel of `A − λI`.
fn null_vector(a: &CMat, lambda: C64) -> DVector<C64> {
    let n = a.nrows();
    if lambda.im == 0.0 {
        let real = a.map(|z| z.re) - DMatrix::<f64>::identity(n, n) * lambda.re;
        let svd = real.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let (k, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .expect("non-empty");
        let v = v_t.row(k).transpose();
        let v = &v / v.norm();
        return v.map(|x| C64::new(x, 0.0));
    }
    let shifted = a - CMat::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested V^H");
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty");
    let v: DVector<C64> = v_t.row(k).transpose().map(|z| z.conj());
    let nrm = v.norm();
    v / C64::new(nrm, 0.0)
}

/// Frobenius norm of `AB − BA`.
pub fn commutator_norm(a: &Mat, b: &Mat) -> f64 {
    (a * b - b * a).norm()
}
