//! Normalized probabilists' Hermite chaos in `M` independent standard normal
//! variables.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::quadrature::newton_deflated;

/// Exponents of a tensorized Hermite polynomial, one per stochastic dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(alpha: Vec<u32>) -> Self {
        MultiIndex(alpha)
    }

    pub fn zeros(m: usize) -> Self {
        MultiIndex(vec![0; m])
    }

    /// Unit index `e_i` scaled by `k`.
    pub fn unit(m: usize, i: usize, k: u32) -> Self {
        let mut a = vec![0; m];
        a[i] = k;
        MultiIndex(a)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Total degree `|α|₁`.
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    /// `α! = Π α_m!`
    pub fn factorial(&self) -> f64 {
        self.0
            .iter()
            .map(|&a| (1..=a).map(f64::from).product::<f64>())
            .product()
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        MultiIndex(v)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// Total-degree index set `Λ_p` in graded order. Within a grade indices are
/// sorted in descending lexicographic order, so `(1,0)` precedes `(0,1)`.
#[derive(Debug, Clone)]
pub struct ChaosBasis {
    m: usize,
    p: u32,
    indices: Vec<MultiIndex>,
    id_of: HashMap<MultiIndex, usize>,
}

impl ChaosBasis {
    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn degree(&self) -> u32 {
        self.p
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn multi_index(&self, id: usize) -> &MultiIndex {
        &self.indices[id]
    }

    pub fn id_of(&self, alpha: &MultiIndex) -> Option<usize> {
        self.id_of.get(alpha).copied()
    }

    fn require(&self, alpha: &MultiIndex) -> Result<usize> {
        self.id_of(alpha)
            .ok_or_else(|| Error::IndexNotInBasis(alpha.0.clone()))
    }

    /// Evaluates every `Ψ_α(ξ)` of the basis, in basis order.
    pub fn eval_all(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: xi.len(),
            });
        }
        let p = self.p as usize;
        let tables: Vec<Vec<f64>> = xi.iter().map(|&y| hermite_all(p, y)).collect();
        Ok(self
            .indices
            .iter()
            .map(|a| {
                a.0.iter()
                    .zip(&tables)
                    .map(|(&k, t)| t[k as usize])
                    .product()
            })
            .collect())
    }
}

/// Number of multi-indices of total degree at most `p` in `m` dimensions.
pub fn basis_size(m: usize, p: u32) -> usize {
    binomial(m as u64 + p as u64, p as u64) as usize
}

pub(crate) fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

fn push_grade(m: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if prefix.len() == m - 1 {
        prefix.push(remaining);
        out.push(MultiIndex(prefix.clone()));
        prefix.pop();
        return;
    }
    for a in (0..=remaining).rev() {
        prefix.push(a);
        push_grade(m, remaining - a, prefix, out);
        prefix.pop();
    }
}

/// Builds `Λ_p` for `m` stochastic dimensions.
pub fn enumerate_basis(m: usize, p: u32) -> ChaosBasis {
    assert!(m >= 1, "stochastic dimension must be at least 1");
    let mut indices = Vec::with_capacity(basis_size(m, p));
    let mut prefix = Vec::with_capacity(m);
    for k in 0..=p {
        push_grade(m, k, &mut prefix, &mut indices);
    }
    let id_of = indices
        .iter()
        .enumerate()
        .map(|(i, a)| (a.clone(), i))
        .collect();
    ChaosBasis { m, p, indices, id_of }
}

/// Normalized Hermite values `ψ_0(y), …, ψ_n(y)`.
pub fn hermite_all(n: usize, y: f64) -> Vec<f64> {
    let mut he = Vec::with_capacity(n + 1);
    he.push(1.0);
    if n >= 1 {
        he.push(y);
    }
    for k in 1..n {
        let next = y * he[k] - k as f64 * he[k - 1];
        he.push(next);
    }
    let mut fact = 1.0;
    for (k, v) in he.iter_mut().enumerate().skip(1) {
        fact *= k as f64;
        *v /= fact.sqrt();
    }
    he
}

/// `ψ_n(y) = He_n(y)/√(n!)`.
pub fn hermite_eval(n: usize, y: f64) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..n {
        let next = y * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    let fact: f64 = (1..=n).map(|k| k as f64).product();
    cur / fact.sqrt()
}

/// `Ψ_α(ξ) = Π ψ_{α_m}(ξ_m)`.
pub fn multivariate_eval(basis: &ChaosBasis, alpha: &MultiIndex, xi: &[f64]) -> Result<f64> {
    basis.require(alpha)?;
    if xi.len() != basis.m {
        return Err(Error::DimensionMismatch {
            expected: basis.m,
            got: xi.len(),
        });
    }
    Ok(alpha
        .0
        .iter()
        .zip(xi)
        .map(|(&a, &y)| hermite_eval(a as usize, y))
        .product())
}

/// `E[Ψ_α]`, which is 1 for the zero index and 0 otherwise.
pub fn expectation(basis: &ChaosBasis, alpha: &MultiIndex) -> Result<f64> {
    basis.require(alpha)?;
    Ok(if alpha.is_zero() { 1.0 } else { 0.0 })
}

/// Gauss–Hermite rule for the standard normal probability measure.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermiteRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// `Q`-point rule with nodes at the roots of `He_Q`.
pub fn gauss_hermite(q: usize) -> Result<GaussHermiteRule> {
    if q == 0 {
        return Err(Error::InvalidInput("Gauss–Hermite order must be >= 1".into()));
    }
    let f = |x: f64| {
        let t = hermite_all(q, x);
        (t[q], (q as f64).sqrt() * t[q - 1])
    };
    // largest roots first; guesses follow the classical asymptotic scheme for
    // physicists' Hermite roots, rescaled by √2
    let half = q.div_ceil(2);
    let n = q as f64;
    let s2 = std::f64::consts::SQRT_2;
    let mut z: Vec<f64> = Vec::with_capacity(half);
    let mut found: Vec<f64> = Vec::with_capacity(half);
    for i in 0..half {
        let guess = match i {
            0 => (2.0 * n + 1.0).sqrt() - 1.85575 * (2.0 * n + 1.0).powf(-1.0 / 6.0),
            1 => z[0] - 1.14 * n.powf(0.426) / z[0],
            2 => 1.86 * z[1] - 0.86 * z[0],
            3 => 1.91 * z[2] - 0.91 * z[1],
            _ => 2.0 * z[i - 1] - z[i - 2],
        };
        let root = if q % 2 == 1 && i == half - 1 {
            0.0
        } else {
            newton_deflated(&f, guess * s2, &found, q)?
        };
        found.push(root);
        z.push(root / s2);
    }
    let mut nodes: Vec<f64> = found.iter().map(|x| -x).collect();
    let start = if q % 2 == 1 { half - 1 } else { half };
    nodes.extend(found[..start].iter().rev());
    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let v = hermite_eval(q - 1, x);
            1.0 / (n * v * v)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(GaussHermiteRule { nodes, weights })
}

/// Coefficients `E[g Ψ_β]` for every `β` in the basis, computed with the
/// tensorized rule `rule ⊗ … ⊗ rule`.
pub fn project<G>(g: G, basis: &ChaosBasis, rule: &GaussHermiteRule) -> Vec<f64>
where
    G: Fn(&[f64]) -> f64,
{
    let m = basis.m;
    let q = rule.order();
    let p = basis.p as usize;
    let psi: Vec<Vec<f64>> = rule.nodes.iter().map(|&x| hermite_all(p, x)).collect();
    let mut coeffs = vec![0.0; basis.len()];
    let mut idx = vec![0usize; m];
    let mut xi = vec![0.0; m];
    loop {
        let mut w = 1.0;
        for d in 0..m {
            xi[d] = rule.nodes[idx[d]];
            w *= rule.weights[idx[d]];
        }
        let gw = w * g(&xi);
        for (c, a) in coeffs.iter_mut().zip(&basis.indices) {
            let mut v = gw;
            for d in 0..m {
                v *= psi[idx[d]][a.0[d] as usize];
            }
            *c += v;
        }
        // odometer increment over the tensor grid
        let mut d = 0;
        loop {
            if d == m {
                return coeffs;
            }
            idx[d] += 1;
            if idx[d] < q {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Table of univariate `E[ψ_a ψ_b ψ_c]` for `a, b, c ≤ max_degree`.
#[derive(Debug, Clone)]
pub struct TripleTable {
    n: usize,
    values: Vec<f64>,
}

impl TripleTable {
    pub fn new(max_degree: usize) -> Result<Self> {
        let n = max_degree + 1;
        let mut rules: Vec<Option<GaussHermiteRule>> = vec![None; 3 * max_degree / 2 + 3];
        let mut values = vec![0.0; n * n * n];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if !triple_nonzero(a, b, c) {
                        continue;
                    }
                    let order = (a + b + c).div_ceil(2) + 1;
                    if rules[order].is_none() {
                        rules[order] = Some(gauss_hermite(order)?);
                    }
                    let rule = rules[order].as_ref().unwrap();
                    // evaluate once per multiset so permutations agree bitwise
                    let mut k = [a, b, c];
                    k.sort_unstable();
                    values[(a * n + b) * n + c] = rule.integrate(|y| {
                        hermite_eval(k[0], y) * hermite_eval(k[1], y) * hermite_eval(k[2], y)
                    });
                }
            }
        }
        Ok(TripleTable { n, values })
    }

    pub fn max_degree(&self) -> usize {
        self.n - 1
    }

    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.values[(a * self.n + b) * self.n + c]
    }
}

/// Triangle and parity condition for a nonzero univariate triple product.
pub fn triple_nonzero(a: usize, b: usize, c: usize) -> bool {
    (a + b + c).is_multiple_of(2) && a <= b + c && b <= a + c && c <= a + b
}

/// Sparse coupling matrix `[G_μ]_{αβ} = E[Ψ_μ Ψ_α Ψ_β]` on the basis.
#[derive(Debug, Clone)]
pub struct TripleProductTensor {
    pub mu: MultiIndex,
    /// `(α position, β position, value)`, sorted by rows then columns.
    pub entries: Vec<(usize, usize, f64)>,
}

impl TripleProductTensor {
    /// Diagonal entry `[G_μ]_{αα}` or 0.
    pub fn diag(&self, i: usize) -> f64 {
        self.entries
            .iter()
            .find(|&&(r, c, _)| r == i && c == i)
            .map_or(0.0, |e| e.2)
    }

    /// Entries grouped per row as a compressed structure.
    pub fn rows(&self, n: usize) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); n];
        for &(i, j, v) in &self.entries {
            out[i].push((j, v));
        }
        out
    }
}

/// Builds `G_μ` on `basis` using univariate triple products from `table`.
pub fn triple_products_with(
    basis: &ChaosBasis,
    mu: &MultiIndex,
    table: &TripleTable,
) -> Result<TripleProductTensor> {
    if mu.dim() != basis.m {
        return Err(Error::DimensionMismatch {
            expected: basis.m,
            got: mu.dim(),
        });
    }
    let need = basis.p.max(mu.0.iter().copied().max().unwrap_or(0)) as usize;
    if table.max_degree() < need {
        return Err(Error::InvalidInput(format!(
            "triple table covers degree {} but {} is needed",
            table.max_degree(),
            need
        )));
    }
    let m = basis.m;
    let mut entries = Vec::new();
    for (i, alpha) in basis.indices.iter().enumerate() {
        // candidate β_d ranges over |α_d − μ_d| ..= α_d + μ_d in steps of 2
        let lo: Vec<u32> = (0..m).map(|d| alpha.0[d].abs_diff(mu.0[d])).collect();
        let hi: Vec<u32> = (0..m).map(|d| alpha.0[d] + mu.0[d]).collect();
        let mut beta = lo.clone();
        let mut row = Vec::new();
        'outer: loop {
            let b = MultiIndex(beta.clone());
            if b.degree() <= basis.p {
                if let Some(j) = basis.id_of(&b) {
                    let v: f64 = (0..m)
                        .map(|d| {
                            table.get(mu.0[d] as usize, alpha.0[d] as usize, beta[d] as usize)
                        })
                        .product();
                    if v != 0.0 {
                        row.push((i, j, v));
                    }
                }
            }
            let mut d = 0;
            loop {
                if d == m {
                    break 'outer;
                }
                beta[d] += 2;
                if beta[d] <= hi[d] {
                    break;
                }
                beta[d] = lo[d];
                d += 1;
            }
        }
        row.sort_by_key(|e| e.1);
        entries.extend(row);
    }
    Ok(TripleProductTensor {
        mu: mu.clone(),
        entries,
    })
}

/// Builds `G_μ` on `basis`, computing the univariate factors on the fly.
pub fn triple_products(basis: &ChaosBasis, mu: &MultiIndex) -> Result<TripleProductTensor> {
    let need = basis.p.max(mu.0.iter().copied().max().unwrap_or(0)) as usize;
    let table = TripleTable::new(need)?;
    triple_products_with(basis, mu, &table)
}
