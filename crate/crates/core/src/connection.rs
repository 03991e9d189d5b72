//! Connections, quantisation of symbols and the canonical decomposition of an operator.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::jet::{MatJet, ScalarJet};
use crate::operator::{symbol_of, OperatorJet, SymbolJet};
use crate::tensor::{rcond, Mat, SymbolTensor};

/// Connection forms `Γ_i` of a bundle connection, `∇_i s = ∂_i s + Γ_i s`.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleConnectionJet {
    pub gamma: Vec<MatJet>,
}

impl BundleConnectionJet {
    pub fn zero(m: usize, n: usize, order: i32) -> Self {
        BundleConnectionJet {
            gamma: vec![MatJet::zero_mat(n, order, m, m); n],
        }
    }

    pub fn shifted(&self, alpha: &EndoOneForm) -> Self {
        BundleConnectionJet {
            gamma: self
                .gamma
                .iter()
                .zip(&alpha.alpha)
                .map(|(g, a)| g.add(a))
                .collect(),
        }
    }

    /// `Γ'_i = A Γ_i A⁻¹ − (∂_i A) A⁻¹`, the connection `A ∘ ∇ ∘ A⁻¹`.
    pub fn gauge_transform(&self, gauge: &MatJet, tol: f64) -> Result<Self> {
        let inv = gauge.inverse(tol).map_err(|_| Error::NonInvertibleGauge)?;
        let gamma = self
            .gamma
            .iter()
            .enumerate()
            .map(|(i, g)| gauge.mul(g).mul(&inv).sub(&gauge.derivative(i).mul(&inv)))
            .collect();
        Ok(BundleConnectionJet { gamma })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.gamma
            .iter()
            .zip(&other.gamma)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn order(&self) -> i32 {
        self.gamma.iter().map(|g| g.order()).min().unwrap_or(-1)
    }
}

/// An `End(E)`-valued one-form `α = Σ α_i dx^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndoOneForm {
    pub alpha: Vec<MatJet>,
}

/// Christoffel symbols `Γ^k_{ij}` of a torsion-free connection on `T*`,
/// `∇_i θ_j = ∂_i θ_j − Γ^k_{ij} θ_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChristoffelJet {
    pub n: usize,
    /// `Γ^k_{ij}` at index `(k * n + i) * n + j`.
    pub gamma: Vec<ScalarJet>,
}

impl ChristoffelJet {
    pub fn zero(n: usize, order: i32) -> Self {
        ChristoffelJet {
            n,
            gamma: vec![ScalarJet::zeros(n, order, &0.0); n * n * n],
        }
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> &ScalarJet {
        &self.gamma[(k * self.n + i) * self.n + j]
    }

    pub fn order(&self) -> i32 {
        self.gamma.iter().map(|g| g.order()).min().unwrap_or(-1)
    }
}

/// Levi-Civita connection of the metric whose inverse is the cometric `g`:
/// `Γ^k_{ij} = ½ g^{kl} (∂_i h_{jl} + ∂_j h_{il} − ∂_l h_{ij})` with `h = g⁻¹`.
pub fn levi_civita(g: &MatJet, tol: f64) -> Result<ChristoffelJet> {
    let n = g.vars();
    let h = g.inverse(tol)?;
    let dh: Vec<MatJet> = (0..n).map(|i| h.derivative(i)).collect();
    let order = g.order() - 1;
    let mut gamma = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut acc = ScalarJet::zeros(n, order, &0.0);
                for l in 0..n {
                    let inner = dh[i]
                        .entry(j, l)
                        .add(&dh[j].entry(i, l))
                        .sub(&dh[l].entry(i, j));
                    acc = acc.add(&g.entry(k, l).mul(&inner));
                }
                gamma.push(acc.scale(0.5));
            }
        }
    }
    Ok(ChristoffelJet { n, gamma })
}

/// `∇_i g^{jk} = ∂_i g^{jk} + Γ^j_{il} g^{lk} + Γ^k_{il} g^{jl}` for a cometric `g`.
pub fn covariant_derivative_cometric(g: &MatJet, gc: &ChristoffelJet) -> Vec<MatJet> {
    let n = gc.n;
    (0..n)
        .map(|i| {
            let dg = g.derivative(i);
            let entries: Vec<ScalarJet> = (0..n * n)
                .map(|jk| {
                    let (j, k) = (jk / n, jk % n);
                    let mut acc = dg.entry(j, k);
                    for l in 0..n {
                        acc = acc
                            .add(&gc.get(j, i, l).mul(&g.entry(l, k)))
                            .add(&gc.get(k, i, l).mul(&g.entry(j, l)));
                    }
                    acc
                })
                .collect();
            MatJet::from_entries(n, n, &entries)
        })
        .collect()
}

/// Symmetrised second covariant differential `(d²_∇ s)_{ij}`, index `i * n + j`.
pub fn covariant_square(
    s: &MatJet,
    conn: &BundleConnectionJet,
    gc: &ChristoffelJet,
) -> Result<Vec<MatJet>> {
    if s.order() < 2 {
        return Err(Error::OrderUnderflow {
            needed: 2,
            have: s.order().max(0) as usize,
        });
    }
    let n = gc.n;
    let ds: Vec<MatJet> = (0..n).map(|i| s.derivative(i)).collect();
    // ∇_k s = ∂_k s + Γ_k s
    let first: Vec<MatJet> = (0..n).map(|k| ds[k].add(&conn.gamma[k].mul(s))).collect();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let mut t = ds[i]
                .derivative(j)
                .add(&conn.gamma[j].mul(&ds[i]))
                .add(&conn.gamma[i].mul(&ds[j]))
                .add(&conn.gamma[j].derivative(i).mul(s))
                .add(&conn.gamma[i].mul(&conn.gamma[j]).mul(s));
            for k in 0..n {
                t = t.sub(&gc.get(k, i, j).times(&first[k]));
            }
            out.push(t);
        }
    }
    // the ∂_iΓ_j term is not symmetric on its own
    let sym = (0..n * n)
        .map(|p| {
            let (i, j) = (p / n, p % n);
            out[i * n + j].add(&out[j * n + i]).scale(0.5)
        })
        .collect();
    Ok(sym)
}

/// `Q_∇(σ) s = Σ σ^{ij} (d²_∇ s)_{ij}`, normalised so that the symbol of the
/// result is `σ`.
pub fn quantize(sigma: &SymbolJet, conn: &BundleConnectionJet, gc: &ChristoffelJet) -> OperatorJet {
    let (m, n) = (sigma.m, sigma.n);
    let a = sigma.comp.clone();
    let mut b = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = MatJet::zero_mat(n, sigma.order(), m, m);
        for j in 0..n {
            acc = acc.add(&sigma.comp(k, j).mul(&conn.gamma[j]).scale(2.0));
        }
        for i in 0..n {
            for j in 0..n {
                acc = acc.sub(&gc.get(k, i, j).times(sigma.comp(i, j)));
            }
        }
        b.push(acc);
    }
    let mut c = MatJet::zero_mat(n, sigma.order(), m, m);
    for i in 0..n {
        for j in 0..n {
            let mut inner = conn.gamma[j]
                .derivative(i)
                .add(&conn.gamma[i].mul(&conn.gamma[j]));
            for k in 0..n {
                inner = inner.sub(&gc.get(k, i, j).times(&conn.gamma[k]));
            }
            c = c.add(&sigma.comp(i, j).mul(&inner));
        }
    }
    OperatorJet { m, n, a, b, c }
}

/// `⟨σ, α⟩^k = 2 Σ_j σ^{kj} α_j`, the first-order part that shifting the
/// connection by `α` adds to a quantisation.
pub fn pairing_sigma_alpha(sigma: &SymbolJet, alpha: &EndoOneForm) -> Vec<MatJet> {
    let n = sigma.n;
    (0..n)
        .map(|k| {
            let mut acc = sigma.comp(k, 0).mul(&alpha.alpha[0]);
            for j in 1..n {
                acc = acc.add(&sigma.comp(k, j).mul(&alpha.alpha[j]));
            }
            acc.scale(2.0)
        })
        .collect()
}

/// `σ₁(Δ, ∇)`: the first-order coefficients of `Δ − Q_∇(σ₂(Δ))`.
pub fn first_subsymbol(
    op: &OperatorJet,
    conn: &BundleConnectionJet,
    gc: &ChristoffelJet,
) -> Vec<MatJet> {
    let q = quantize(&symbol_of(op), conn, gc);
    op.b.iter().zip(&q.b).map(|(x, y)| x.sub(y)).collect()
}

/// `max ‖σ₁(Δ, ∇) − σ₁(Δ, ∇ + α) − ⟨σ₂, α⟩‖` over jet coefficients.
pub fn subsymbol_shift_check(
    op: &OperatorJet,
    conn: &BundleConnectionJet,
    alpha: &EndoOneForm,
    gc: &ChristoffelJet,
) -> f64 {
    let s1 = first_subsymbol(op, conn, gc);
    let s2 = first_subsymbol(op, &conn.shifted(alpha), gc);
    let pair = pairing_sigma_alpha(&symbol_of(op), alpha);
    s1.iter()
        .zip(&s2)
        .zip(&pair)
        .map(|((x, y), p)| x.sub(y).sub(p).max_abs())
        .fold(0.0, f64::max)
}

/// Matrix of `α ↦ ⟨σ, α⟩` at a point together with its reciprocal condition number.
///
/// Coordinates: `α_i` entry `(r, c)` sits at `i m² + c m + r`; the output uses the
/// same layout with the free index `k` in place of `i`.
#[derive(Debug, Clone)]
pub struct RegularityIso {
    pub matrix: DMatrix<f64>,
    pub rcond: f64,
    pub regular: bool,
}

pub fn pairing_matrix(sigma: &SymbolTensor) -> DMatrix<f64> {
    let (m, n) = (sigma.m(), sigma.n());
    let mm = m * m;
    let id = Mat::identity(m, m);
    let mut out = DMatrix::zeros(n * mm, n * mm);
    for k in 0..n {
        for j in 0..n {
            // vec(σ α) = (I ⊗ σ) vec α
            let block = id.kronecker(sigma.comp(k, j)) * 2.0;
            out.view_mut((k * mm, j * mm), (mm, mm)).copy_from(&block);
        }
    }
    out
}

pub fn regularity_iso(sigma: &SymbolTensor, tol: f64) -> RegularityIso {
    let matrix = pairing_matrix(sigma);
    let rc = rcond(&matrix);
    RegularityIso {
        matrix,
        rcond: rc,
        regular: rc >= tol,
    }
}

fn stack_columns(parts: &[MatJet]) -> MatJet {
    let order = parts.iter().map(|p| p.order()).min().unwrap_or(-1);
    let parts: Vec<MatJet> = parts.iter().map(|p| p.truncate(order)).collect();
    let n = parts[0].vars();
    let len = parts[0].coeffs().len();
    let coeffs = (0..len)
        .map(|t| {
            let col: Vec<f64> = parts
                .iter()
                .flat_map(|p| p.coeffs()[t].iter().copied())
                .collect();
            Mat::from_column_slice(col.len(), 1, &col)
        })
        .collect();
    MatJet::from_coeffs(n, order, coeffs)
}

fn unstack_columns(v: &MatJet, count: usize, m: usize) -> Vec<MatJet> {
    let mm = m * m;
    (0..count)
        .map(|k| v.map(|c| Mat::from_column_slice(m, m, &c.as_slice()[k * mm..(k + 1) * mm])))
        .collect()
}

/// The connection `∇^Δ` with `σ₁(Δ, ∇^Δ) = 0`, taken against the Levi-Civita
/// connection of `g_σ`.
pub fn associated_connection(
    op: &OperatorJet,
    tol: f64,
) -> Result<(BundleConnectionJet, ChristoffelJet)> {
    let (m, n) = (op.m, op.n);
    let sigma = symbol_of(op);
    let gc = levi_civita(&sigma.trace_quadric(), tol)?;
    let iso = regularity_iso(&sigma.value(), tol);
    if !iso.regular {
        return Err(Error::NotRegular(format!(
            "pairing map is singular (rcond {:.3e})",
            iso.rcond
        )));
    }
    let zero = BundleConnectionJet::zero(m, n, op.order());
    let rhs = first_subsymbol(op, &zero, &gc);
    // L(x) = pairing matrix of σ(x), as a jet
    let basis_len = sigma.comp[0].coeffs().len();
    let l_coeffs = (0..basis_len)
        .map(|t| {
            let comps = sigma.comp.iter().map(|c| c.coeffs()[t].clone()).collect();
            let s = SymbolTensor::from_components(m, n, comps).expect("symmetric by construction");
            pairing_matrix(&s)
        })
        .collect();
    let l = MatJet::from_coeffs(n, sigma.order(), l_coeffs);
    let alpha = l.inverse(tol)?.mul(&stack_columns(&rhs));
    let conn = BundleConnectionJet {
        gamma: unstack_columns(&alpha, n, m),
    };
    Ok((conn, gc))
}

/// `Δ = Q_{∇^Δ}(σ₂) + σ₁ + σ₀` with `σ₁ = 0` up to rounding.
#[derive(Debug, Clone)]
pub struct TotalSymbol {
    pub sigma2: SymbolJet,
    pub sigma1: Vec<MatJet>,
    pub sigma0: MatJet,
    pub connection: BundleConnectionJet,
    pub christoffel: ChristoffelJet,
}

impl TotalSymbol {
    /// `Q(σ₂) + σ₁ + σ₀` as an operator.
    pub fn recombine(&self) -> OperatorJet {
        let mut q = quantize(&self.sigma2, &self.connection, &self.christoffel);
        for (b, s1) in q.b.iter_mut().zip(&self.sigma1) {
            *b = b.add(s1);
        }
        q.c = q.c.add(&self.sigma0);
        q
    }

    /// Largest coefficient of `Δ − recombine()` over the orders both know.
    pub fn recombination_residual(&self, op: &OperatorJet) -> f64 {
        let r = self.recombine();
        let order = r.order().min(op.order());
        r.truncate(order).max_abs_diff(&op.truncate(order))
    }
}

pub fn decompose(op: &OperatorJet, tol: f64) -> Result<TotalSymbol> {
    let (connection, christoffel) = associated_connection(op, tol)?;
    let sigma2 = symbol_of(op);
    let q = quantize(&sigma2, &connection, &christoffel);
    let sigma1 = op.b.iter().zip(&q.b).map(|(x, y)| x.sub(y)).collect();
    let sigma0 = op.c.sub(&q.c);
    Ok(TotalSymbol {
        sigma2,
        sigma1,
        sigma0,
        connection,
        christoffel,
    })
}
