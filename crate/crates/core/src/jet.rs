//! Truncated multivariate Taylor expansions about the origin of a chart.
//!
//! A [`Jet`] of order `K` knows every coefficient of total degree `≤ K`. Orders
//! propagate by `min` through arithmetic and drop by one under differentiation;
//! an order below zero means no coefficient is known. Monomials are stored in
//! graded lexicographic order, so the basis of a lower order is a prefix of the
//! basis of a higher one.

use std::collections::HashMap;
use std::fmt::Debug;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::{rcond, Mat};

/// Monomial bookkeeping for `n` variables up to a total degree.
#[derive(Debug)]
pub struct Monomials {
    n: usize,
    exps: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
    /// `(a, b, a·b)` for every pair whose product stays within the degree bound.
    products: Vec<(usize, usize, usize)>,
    /// Per variable: `(source, target, factor)` with `∂_i x^src = factor · x^target`.
    derivatives: Vec<Vec<(usize, usize, f64)>>,
}

impl Monomials {
    fn build(n: usize, degree: usize) -> Self {
        let mut exps: Vec<Vec<u32>> = Vec::new();
        for d in 0..=degree {
            let mut current = Vec::new();
            compositions(n, d as u32, &mut vec![0; n], 0, &mut current);
            exps.extend(current);
        }
        let index: HashMap<Vec<u32>, usize> = exps
            .iter()
            .enumerate()
            .map(|(k, e)| (e.clone(), k))
            .collect();
        let mut products = Vec::new();
        for (a, ea) in exps.iter().enumerate() {
            for (b, eb) in exps.iter().enumerate() {
                let sum: Vec<u32> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
                if let Some(&c) = index.get(&sum) {
                    products.push((a, b, c));
                }
            }
        }
        let derivatives = (0..n)
            .map(|i| {
                exps.iter()
                    .enumerate()
                    .filter(|(_, e)| e[i] > 0)
                    .map(|(src, e)| {
                        let mut t = e.clone();
                        t[i] -= 1;
                        (src, index[&t], e[i] as f64)
                    })
                    .collect()
            })
            .collect();
        Monomials {
            n,
            exps,
            index,
            products,
            derivatives,
        }
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exps
    }

    pub fn index_of(&self, exps: &[u32]) -> Option<usize> {
        self.index.get(exps).copied()
    }

    pub fn vars(&self) -> usize {
        self.n
    }
}

/// Exponent vectors of total degree `d`, lexicographically descending in `x_1`.
fn compositions(n: usize, d: u32, cur: &mut Vec<u32>, pos: usize, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == n {
        cur[pos] = d;
        out.push(cur.clone());
        return;
    }
    if n == 0 {
        if d == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for k in (0..=d).rev() {
        cur[pos] = k;
        compositions(n, d - k, cur, pos + 1, out);
    }
    cur[pos] = 0;
}

/// Number of monomials in `n` variables of degree `≤ order` (`0` for negative orders).
pub fn basis_len(n: usize, order: i32) -> usize {
    if order < 0 {
        return 0;
    }
    let k = order as usize;
    // C(n + k, n)
    let mut num: usize = 1;
    for i in 1..=n {
        num = num * (k + i) / i;
    }
    num
}

/// Shared monomial tables, built once per `(n, degree)`.
pub fn monomials(n: usize, degree: usize) -> Arc<Monomials> {
    type Cache = Mutex<HashMap<(usize, usize), Arc<Monomials>>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("monomial cache poisoned");
    guard
        .entry((n, degree))
        .or_insert_with(|| Arc::new(Monomials::build(n, degree)))
        .clone()
}

/// Coefficient ring of a jet: scalars, matrices, or vectors stored as one-column matrices.
pub trait Coeff: Clone + Debug + Send + Sync {
    fn zero_like(&self) -> Self;
    fn add_assign(&mut self, other: &Self);
    fn sub_assign(&mut self, other: &Self);
    fn scaled(&self, s: f64) -> Self;
    fn max_abs(&self) -> f64;
}

impl Coeff for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
    fn sub_assign(&mut self, other: &Self) {
        *self -= other;
    }
    fn scaled(&self, s: f64) -> Self {
        self * s
    }
    fn max_abs(&self) -> f64 {
        self.abs()
    }
}

impl Coeff for DMatrix<f64> {
    fn zero_like(&self) -> Self {
        DMatrix::zeros(self.nrows(), self.ncols())
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
    fn sub_assign(&mut self, other: &Self) {
        *self -= other;
    }
    fn scaled(&self, s: f64) -> Self {
        self * s
    }
    fn max_abs(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.amax()
        }
    }
}

/// Truncated Taylor expansion with coefficients in `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet<C> {
    n: usize,
    order: i32,
    coeffs: Vec<C>,
}

pub type ScalarJet = Jet<f64>;
pub type MatJet = Jet<DMatrix<f64>>;

impl<C: Coeff> Jet<C> {
    /// Jet with every known coefficient equal to `zero` (which fixes the shape).
    pub fn zeros(n: usize, order: i32, zero: &C) -> Self {
        Jet {
            n,
            order,
            coeffs: vec![zero.zero_like(); basis_len(n, order)],
        }
    }

    pub fn constant(n: usize, order: i32, c: C) -> Self {
        let mut j = Self::zeros(n, order, &c);
        if let Some(first) = j.coeffs.first_mut() {
            *first = c;
        }
        j
    }

    /// Builds a jet from `(exponents, coefficient)` terms; terms above `order` are dropped.
    pub fn from_terms(n: usize, order: i32, zero: &C, terms: &[(Vec<u32>, C)]) -> Self {
        let mut j = Self::zeros(n, order, zero);
        if order < 0 {
            return j;
        }
        let basis = monomials(n, order as usize);
        for (e, c) in terms {
            assert_eq!(e.len(), n, "exponent vector has wrong length");
            if let Some(k) = basis.index_of(e) {
                j.coeffs[k].add_assign(c);
            }
        }
        j
    }

    pub fn from_coeffs(n: usize, order: i32, coeffs: Vec<C>) -> Self {
        assert_eq!(coeffs.len(), basis_len(n, order));
        Jet { n, order, coeffs }
    }

    pub fn vars(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> i32 {
        self.order
    }

    pub fn coeffs(&self) -> &[C] {
        &self.coeffs
    }

    pub fn basis(&self) -> Arc<Monomials> {
        monomials(self.n, self.order.max(0) as usize)
    }

    /// Value at the origin.
    pub fn value(&self) -> Option<&C> {
        self.coeffs.first()
    }

    /// Coefficient of `x^exps`, if known.
    pub fn coeff(&self, exps: &[u32]) -> Option<&C> {
        let deg: u32 = exps.iter().sum();
        if self.order < 0 || deg as i32 > self.order {
            return None;
        }
        self.basis().index_of(exps).map(|k| &self.coeffs[k])
    }

    /// `(exponents, coefficient)` pairs of all known coefficients.
    pub fn terms(&self) -> Vec<(Vec<u32>, C)> {
        let basis = self.basis();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| (basis.exponents()[k].clone(), c.clone()))
            .collect()
    }

    pub fn truncate(&self, order: i32) -> Self {
        let order = order.min(self.order);
        Jet {
            n: self.n,
            order,
            coeffs: self.coeffs[..basis_len(self.n, order)].to_vec(),
        }
    }

    /// Raises the order of an exact polynomial by padding with zeros.
    pub fn extend_exact(&self, order: i32, zero: &C) -> Self {
        if order <= self.order {
            return self.truncate(order);
        }
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(basis_len(self.n, order), zero.zero_like());
        Jet {
            n: self.n,
            order,
            coeffs,
        }
    }

    fn common(&self, other: &Self) -> (i32, usize) {
        assert_eq!(self.n, other.n, "jets over different charts");
        let order = self.order.min(other.order);
        (order, basis_len(self.n, order))
    }

    pub fn add(&self, other: &Self) -> Self {
        let (order, len) = self.common(other);
        let coeffs = (0..len)
            .map(|k| {
                let mut c = self.coeffs[k].clone();
                c.add_assign(&other.coeffs[k]);
                c
            })
            .collect();
        Jet {
            n: self.n,
            order,
            coeffs,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let (order, len) = self.common(other);
        let coeffs = (0..len)
            .map(|k| {
                let mut c = self.coeffs[k].clone();
                c.sub_assign(&other.coeffs[k]);
                c
            })
            .collect();
        Jet {
            n: self.n,
            order,
            coeffs,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Jet {
            n: self.n,
            order: self.order,
            coeffs: self.coeffs.iter().map(|c| c.scaled(s)).collect(),
        }
    }

    pub fn map<D: Coeff>(&self, f: impl Fn(&C) -> D) -> Jet<D> {
        Jet {
            n: self.n,
            order: self.order,
            coeffs: self.coeffs.iter().map(f).collect(),
        }
    }

    /// `∂/∂x_i`, one order lower.
    pub fn derivative(&self, i: usize) -> Self {
        let order = self.order - 1;
        let len = basis_len(self.n, order);
        if len == 0 {
            return Jet {
                n: self.n,
                order,
                coeffs: Vec::new(),
            };
        }
        let mut coeffs = vec![self.coeffs[0].zero_like(); len];
        let basis = self.basis();
        for &(src, dst, factor) in &basis.derivatives[i] {
            if dst < len {
                coeffs[dst].add_assign(&self.coeffs[src].scaled(factor));
            }
        }
        Jet {
            n: self.n,
            order,
            coeffs,
        }
    }

    /// Truncated product under a bilinear coefficient map.
    pub fn mul_with<D: Coeff, O: Coeff>(&self, other: &Jet<D>, f: impl Fn(&C, &D) -> O) -> Jet<O> {
        assert_eq!(self.n, other.n, "jets over different charts");
        let order = self.order.min(other.order);
        let len = basis_len(self.n, order);
        if len == 0 {
            return Jet {
                n: self.n,
                order,
                coeffs: Vec::new(),
            };
        }
        let zero = f(&self.coeffs[0], &other.coeffs[0]).zero_like();
        let mut coeffs = vec![zero; len];
        let basis = monomials(self.n, order as usize);
        for &(a, b, c) in &basis.products {
            coeffs[c].add_assign(&f(&self.coeffs[a], &other.coeffs[b]));
        }
        Jet {
            n: self.n,
            order,
            coeffs,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.max_abs()).fold(0.0, f64::max)
    }

    /// Largest coefficient difference over the orders both jets know.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.sub(other).max_abs()
    }

    /// Re-expansion of an exact polynomial about the point `p`, same order.
    pub fn shift(&self, p: &[f64]) -> Self {
        assert_eq!(p.len(), self.n);
        if self.order < 0 {
            return self.clone();
        }
        let basis = self.basis();
        let mut coeffs = vec![self.coeffs[0].zero_like(); self.coeffs.len()];
        for (k, alpha) in basis.exponents().iter().enumerate() {
            let c = &self.coeffs[k];
            if c.max_abs() == 0.0 {
                continue;
            }
            // Π_i (p_i + y_i)^{α_i} = Σ_{β ≤ α} Π_i C(α_i, β_i) p_i^{α_i − β_i} y^β
            let mut beta = vec![0u32; self.n];
            loop {
                let mut w = 1.0;
                for i in 0..self.n {
                    w *=
                        binomial(alpha[i], beta[i]) as f64 * p[i].powi((alpha[i] - beta[i]) as i32);
                }
                if w != 0.0 {
                    let t = basis.index_of(&beta).expect("sub-monomial is in basis");
                    coeffs[t].add_assign(&c.scaled(w));
                }
                // next β ≤ α
                let mut i = 0;
                while i < self.n {
                    if beta[i] < alpha[i] {
                        beta[i] += 1;
                        break;
                    }
                    beta[i] = 0;
                    i += 1;
                }
                if i == self.n {
                    break;
                }
            }
        }
        Jet {
            n: self.n,
            order: self.order,
            coeffs,
        }
    }

    /// Value of the truncated polynomial at `p`.
    pub fn eval(&self, p: &[f64]) -> Option<C> {
        let basis = self.basis();
        let mut acc = self.coeffs.first()?.zero_like();
        for (k, e) in basis.exponents().iter().enumerate().take(self.coeffs.len()) {
            let w: f64 = e.iter().zip(p).map(|(&a, &x)| x.powi(a as i32)).product();
            acc.add_assign(&self.coeffs[k].scaled(w));
        }
        Some(acc)
    }
}

fn binomial(n: u32, k: u32) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

impl ScalarJet {
    /// The coordinate function `x_i`.
    pub fn variable(n: usize, order: i32, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        Self::from_terms(n, order, &0.0, &[(e, 1.0)])
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.mul_with(other, |a, b| a * b)
    }

    /// Scalar times matrix-valued jet.
    pub fn times(&self, other: &MatJet) -> MatJet {
        self.mul_with(other, |a, b| b * *a)
    }
}

impl MatJet {
    /// Constant `rows × cols` zero jet.
    pub fn zero_mat(n: usize, order: i32, rows: usize, cols: usize) -> Self {
        Self::zeros(n, order, &DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize, order: i32, k: usize) -> Self {
        Self::constant(n, order, DMatrix::identity(k, k))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coeffs
            .first()
            .map_or((0, 0), |c| (c.nrows(), c.ncols()))
    }

    /// Matrix product, truncated.
    pub fn mul(&self, other: &Self) -> Self {
        self.mul_with(other, |a, b| a * b)
    }

    /// Left multiplication by a constant matrix.
    pub fn left_const(&self, a: &Mat) -> Self {
        self.map(|c| a * c)
    }

    pub fn right_const(&self, a: &Mat) -> Self {
        self.map(|c| c * a)
    }

    pub fn entry(&self, r: usize, c: usize) -> ScalarJet {
        self.map(|m| m[(r, c)])
    }

    pub fn trace(&self) -> ScalarJet {
        self.map(|m| m.trace())
    }

    pub fn transpose(&self) -> Self {
        self.map(|m| m.transpose())
    }

    /// Assembles a `rows × cols` matrix jet from scalar entry jets (row-major).
    pub fn from_entries(rows: usize, cols: usize, entries: &[ScalarJet]) -> Self {
        assert_eq!(entries.len(), rows * cols);
        let n = entries[0].n;
        let order = entries.iter().map(|e| e.order).min().expect("non-empty");
        let len = basis_len(n, order);
        let coeffs = (0..len)
            .map(|k| DMatrix::from_fn(rows, cols, |r, c| entries[r * cols + c].coeffs[k]))
            .collect();
        Jet { n, order, coeffs }
    }

    /// Jet of the inverse of a square matrix jet,
    /// `A⁻¹ = Σ_k (−A₀⁻¹ N)^k A₀⁻¹` with `N = A − A₀`.
    pub fn inverse(&self, tol: f64) -> Result<Self> {
        let a0 = self
            .value()
            .ok_or(Error::OrderUnderflow { needed: 0, have: 0 })?
            .clone();
        let rc = rcond(&a0);
        if !(rc >= tol) {
            return Err(Error::Degenerate { rcond: rc, tol });
        }
        let a0_inv = a0
            .clone()
            .try_inverse()
            .ok_or(Error::Degenerate { rcond: rc, tol })?;
        let mut nil = self.clone();
        nil.coeffs[0] = nil.coeffs[0].zero_like();
        let step = nil.left_const(&(-&a0_inv));
        let k = a0.nrows();
        let mut term = MatJet::identity(self.n, self.order, k);
        let mut acc = term.clone();
        for _ in 0..self.order.max(0) {
            term = step.mul(&term);
            acc = acc.add(&term);
        }
        Ok(acc.right_const(&a0_inv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basis_is_graded_prefix() {
        let b3 = monomials(2, 3);
        let b2 = monomials(2, 2);
        assert_eq!(b3.len(), 10);
        assert_eq!(basis_len(2, 3), 10);
        assert_eq!(basis_len(3, 3), 20);
        assert_eq!(basis_len(3, -1), 0);
        assert_eq!(&b3.exponents()[..b2.len()], b2.exponents());
        assert_eq!(b3.exponents()[1], vec![1, 0]);
        assert_eq!(b3.exponents()[2], vec![0, 1]);
    }

    #[test]
    fn derivative_of_monomial() {
        // x1^2 x2 → ∂1 = 2 x1 x2
        let j = ScalarJet::from_terms(2, 3, &0.0, &[(vec![2, 1], 1.0)]);
        let d = j.derivative(0);
        assert_eq!(d.order(), 2);
        assert_eq!(d.coeff(&[1, 1]), Some(&2.0));
        assert_eq!(d.derivative(1).coeff(&[1, 0]), Some(&2.0));
    }

    #[test]
    fn product_truncates() {
        let x = ScalarJet::variable(2, 2, 0);
        let y = ScalarJet::variable(2, 2, 1);
        let xy = x.mul(&y);
        assert_eq!(xy.coeff(&[1, 1]), Some(&1.0));
        let cubic = xy.mul(&x);
        assert_eq!(cubic.max_abs(), 0.0);
    }

    #[test]
    fn shift_matches_evaluation() {
        let j = ScalarJet::from_terms(
            2,
            3,
            &0.0,
            &[
                (vec![0, 0], 1.0),
                (vec![2, 1], -2.0),
                (vec![0, 3], 0.5),
                (vec![1, 0], 3.0),
            ],
        );
        let p = [0.3, -0.7];
        let shifted = j.shift(&p);
        for q in [[0.0, 0.0], [0.1, 0.2], [-0.4, 0.9]] {
            let direct = j.eval(&[p[0] + q[0], p[1] + q[1]]).unwrap();
            let via = shifted.eval(&q).unwrap();
            assert!((direct - via).abs() < 1e-13);
        }
    }

    #[test]
    fn matrix_inverse_jet() {
        let a = MatJet::from_terms(
            2,
            3,
            &DMatrix::zeros(2, 2),
            &[
                (
                    vec![0, 0],
                    DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]),
                ),
                (
                    vec![1, 0],
                    DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 0.5, 0.0]),
                ),
                (
                    vec![1, 1],
                    DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.2, 2.0]),
                ),
            ],
        );
        let inv = a.inverse(1e-12).unwrap();
        let id = a.mul(&inv);
        assert!(id.max_abs_diff(&MatJet::identity(2, 3, 2)) < 1e-14);
        let id2 = inv.mul(&a);
        assert!(id2.max_abs_diff(&MatJet::identity(2, 3, 2)) < 1e-14);
    }

    #[test]
    fn singular_inverse_rejected() {
        let a = MatJet::constant(2, 2, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
        assert!(a.inverse(1e-12).is_err());
    }

    fn arb_scalar_jet() -> impl Strategy<Value = ScalarJet> {
        proptest::collection::vec(-2.0f64..2.0, basis_len(2, 3))
            .prop_map(|c| ScalarJet::from_coeffs(2, 3, c))
    }

    proptest! {
        #[test]
        fn leibniz_rule(a in arb_scalar_jet(), b in arb_scalar_jet(), i in 0usize..2) {
            let lhs = a.mul(&b).derivative(i);
            let rhs = a.derivative(i).mul(&b).add(&a.mul(&b.derivative(i)));
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }

        #[test]
        fn shift_composes(a in arb_scalar_jet(), p in proptest::array::uniform2(-1.0f64..1.0),
                          q in proptest::array::uniform2(-1.0f64..1.0)) {
            let two_steps = a.shift(&p).shift(&q);
            let one_step = a.shift(&[p[0] + q[0], p[1] + q[1]]);
            prop_assert!(two_steps.max_abs_diff(&one_step) < 1e-11);
        }
    }
}
