//! Right-preconditioned flexible GMRES and a stochastic block-Jacobi
//! preconditioner with exact banded factorizations of the diagonal blocks.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sg_system::SlabOperator;
use crate::sparse::CsrMatrix;

pub trait LinearOperator: Sync {
    fn len(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub trait Preconditioner: Sync {
    /// `z ≈ A⁻¹ r`
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

/// Leaves vectors unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

impl LinearOperator for CsrMatrix {
    fn len(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec_into(x, y);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FgmresConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iter: usize,
    /// Krylov basis size before a restart; 0 disables restarting.
    pub restart: usize,
}

impl Default for FgmresConfig {
    fn default() -> Self {
        FgmresConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_iter: 500,
            restart: 0,
        }
    }
}

impl FgmresConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidInput("solver tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FgmresResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// residual norm before the first and after every iteration
    pub residual_history: Vec<f64>,
    pub vmult_calls: usize,
    pub prec_calls: usize,
    pub apply_time: Duration,
    pub prec_time: Duration,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Counters {
    vmult: usize,
    prec: usize,
    apply_time: Duration,
    prec_time: Duration,
}

impl Counters {
    fn vmult<A: LinearOperator + ?Sized>(&mut self, a: &A, x: &[f64], y: &mut [f64]) {
        let t = Instant::now();
        a.apply(x, y);
        self.apply_time += t.elapsed();
        self.vmult += 1;
    }

    fn prec<P: Preconditioner + ?Sized>(&mut self, p: &P, r: &[f64], z: &mut [f64]) {
        let t = Instant::now();
        p.apply(r, z);
        self.prec_time += t.elapsed();
        self.prec += 1;
    }
}

/// Solves `A x = b` from `x₀ = 0` until `‖b − A x‖ ≤ max(rel_tol‖b‖, abs_tol)`.
///
/// Arnoldi uses modified Gram–Schmidt with one reorthogonalization pass. The
/// converged iterate is checked against its true residual, which costs one
/// extra operator application per solve.
pub fn fgmres<A, P>(a: &A, prec: &P, b: &[f64], config: &FgmresConfig) -> Result<FgmresResult>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    config.validate()?;
    let n = a.len();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let mut c = Counters {
        vmult: 0,
        prec: 0,
        apply_time: Duration::ZERO,
        prec_time: Duration::ZERO,
    };
    let tol = (config.rel_tol * norm(b)).max(config.abs_tol);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut beta = norm(&r);
    let mut history = vec![beta];
    let mut iterations = 0;
    let cycle_len = if config.restart == 0 {
        config.max_iter
    } else {
        config.restart
    };
    let mut tmp = vec![0.0; n];

    while beta > tol {
        if iterations >= config.max_iter {
            return Err(Error::NotConverged {
                iterations,
                final_residual: beta,
                residual_history: history,
            });
        }
        let m = cycle_len.min(config.max_iter - iterations);
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        v.push(r.iter().map(|ri| ri / beta).collect());
        // Hessenberg columns, Givens rotations and the rotated rhs
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs: Vec<(f64, f64)> = Vec::with_capacity(m);
        let mut g = vec![beta];
        let mut k = 0;
        while k < m {
            let mut zk = vec![0.0; n];
            c.prec(prec, &v[k], &mut zk);
            let mut w = vec![0.0; n];
            c.vmult(a, &zk, &mut w);
            z.push(zk);
            let mut col = vec![0.0; k + 2];
            for _pass in 0..2 {
                for (j, vj) in v.iter().enumerate() {
                    let hij = dot(&w, vj);
                    col[j] += hij;
                    for (wi, vi) in w.iter_mut().zip(vj) {
                        *wi -= hij * vi;
                    }
                }
            }
            let hnext = norm(&w);
            col[k + 1] = hnext;
            for (j, &(cj, sj)) in cs.iter().enumerate() {
                let (a0, a1) = (col[j], col[j + 1]);
                col[j] = cj * a0 + sj * a1;
                col[j + 1] = -sj * a0 + cj * a1;
            }
            let (p, q) = (col[k], col[k + 1]);
            let rho = p.hypot(q);
            let (ck, sk) = if rho == 0.0 { (1.0, 0.0) } else { (p / rho, q / rho) };
            col[k] = rho;
            col[k + 1] = 0.0;
            cs.push((ck, sk));
            let gk = g[k];
            g[k] = ck * gk;
            g.push(-sk * gk);
            h.push(col);
            k += 1;
            iterations += 1;
            let est = g[k].abs();
            history.push(est);
            if est <= tol || hnext == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| wi / hnext).collect());
        }
        // back substitution for the least-squares coefficients
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[j][i] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        for (yj, zj) in y.iter().zip(&z) {
            for (xi, zi) in x.iter_mut().zip(zj) {
                *xi += yj * zi;
            }
        }
        c.vmult(a, &x, &mut tmp);
        for ((ri, bi), ai) in r.iter_mut().zip(b).zip(&tmp) {
            *ri = bi - ai;
        }
        beta = norm(&r);
        *history.last_mut().unwrap() = beta;
    }
    Ok(FgmresResult {
        x,
        iterations,
        residual_history: history,
        vmult_calls: c.vmult,
        prec_calls: c.prec,
        apply_time: c.apply_time,
        prec_time: c.prec_time,
    })
}

/// LU factorization with partial pivoting of a banded matrix.
///
/// Row `i` stores columns `i−kl ..= i+kl+ku`; the extra `kl` upper diagonals
/// hold fill from row interchanges.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    ab: Vec<f64>,
    /// multipliers of column `i` at `lower[i·kl ..]`
    lower: Vec<f64>,
    /// stored length of each row of `U` past the diagonal
    row_len: Vec<usize>,
    piv: Vec<usize>,
}

impl BandedLu {
    /// Band storage for an `n × n` matrix with the given bandwidths, zeroed.
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandedLu {
            n,
            kl,
            ku,
            width,
            ab: vec![0.0; n * width],
            lower: Vec::new(),
            row_len: Vec::new(),
            piv: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn pos(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    /// Adds `v` to entry `(i, j)` before factorization.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j + self.kl >= i && j <= i + self.ku);
        let p = self.pos(i, j);
        self.ab[p] += v;
    }

    /// In-place factorization. Fails on an exactly zero pivot.
    pub fn factorize(&mut self) -> std::result::Result<(), usize> {
        let (n, kl) = (self.n, self.kl);
        let reach = kl + self.ku;
        self.piv = (0..n).collect();
        self.lower = vec![0.0; n * kl];
        for i in 0..n {
            let last_row = (i + kl).min(n - 1);
            let last_col = (i + reach).min(n - 1);
            let mut p = i;
            let mut best = self.ab[self.pos(i, i)].abs();
            for rr in i + 1..=last_row {
                let v = self.ab[self.pos(rr, i)].abs();
                if v > best {
                    best = v;
                    p = rr;
                }
            }
            if best == 0.0 {
                return Err(i);
            }
            self.piv[i] = p;
            if p != i {
                for col in i..=last_col {
                    let (a, b) = (self.pos(i, col), self.pos(p, col));
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.ab[self.pos(i, i)];
            let len = last_col - i;
            for rr in i + 1..=last_row {
                let pr = self.pos(rr, i);
                let l = self.ab[pr] / pivot;
                self.ab[pr] = 0.0;
                self.lower[i * kl + rr - i - 1] = l;
                if l == 0.0 {
                    continue;
                }
                let src = self.pos(i, i + 1);
                let dst = pr + 1;
                let (head, tail) = self.ab.split_at_mut(dst);
                let urow = &head[src..src + len];
                for (d, u) in tail[..len].iter_mut().zip(urow) {
                    *d -= l * u;
                }
            }
        }
        self.row_len = (0..n)
            .map(|i| {
                let len = reach.min(n - 1 - i);
                let start = self.pos(i, i) + 1;
                self.ab[start..start + len]
                    .iter()
                    .rposition(|&v| v != 0.0)
                    .map_or(0, |k| k + 1)
            })
            .collect();
        Ok(())
    }

    /// Solves in place with the factorization.
    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl) = (self.n, self.kl);
        for i in 0..n {
            let p = self.piv[i];
            if p != i {
                b.swap(i, p);
            }
            let bi = b[i];
            if bi != 0.0 {
                let len = kl.min(n - 1 - i);
                let col = &self.lower[i * kl..i * kl + len];
                for (x, l) in b[i + 1..i + 1 + len].iter_mut().zip(col) {
                    *x -= l * bi;
                }
            }
        }
        for i in (0..n).rev() {
            let len = self.row_len[i];
            let start = self.pos(i, i);
            let row = &self.ab[start + 1..start + 1 + len];
            let s: f64 = row.iter().zip(&b[i + 1..i + 1 + len]).map(|(a, x)| a * x).sum();
            b[i] = (b[i] - s) / self.ab[start];
        }
    }
}

/// Block-Jacobi preconditioner over stochastic modes. Each block is the
/// deterministic space-time operator `A_t ⊗ M_x + B_t ⊗ Σ_μ [G_μ]_{αα} K_μ`.
#[derive(Debug, Clone)]
pub struct BlockJacobi {
    n_time: usize,
    n_h: usize,
    /// factor index per mode
    block_of: Vec<usize>,
    factors: Vec<BandedLu>,
}

impl BlockJacobi {
    pub fn n_factorizations(&self) -> usize {
        self.factors.len()
    }

    /// Applies the inverse of one mode's block to a vector of that mode.
    pub fn solve_mode(&self, alpha: usize, r: &[f64], z: &mut [f64]) {
        let nt = self.n_time;
        let nh = self.n_h;
        // slab layout is time-major per mode; the factorization is time-minor
        let mut buf = vec![0.0; nt * nh];
        for i in 0..nt {
            for m in 0..nh {
                buf[m * nt + i] = r[i * nh + m];
            }
        }
        self.factors[self.block_of[alpha]].solve(&mut buf);
        for i in 0..nt {
            for m in 0..nh {
                z[i * nh + m] = buf[m * nt + i];
            }
        }
    }
}

impl Preconditioner for BlockJacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let s = self.n_time * self.n_h;
        z.par_chunks_mut(s)
            .zip(r.par_chunks(s))
            .enumerate()
            .for_each(|(alpha, (zb, rb))| self.solve_mode(alpha, rb, zb));
    }
}

fn weight_key(w: &[f64]) -> Vec<i64> {
    w.iter().map(|v| (v * 1e12).round() as i64).collect()
}

/// Factorizes the diagonal block of every stochastic mode. Modes whose
/// diagonal coupling weights coincide share one factorization.
pub fn build_block_jacobi(op: &SlabOperator) -> Result<BlockJacobi> {
    let l = op.layout;
    let nt = l.n_time;
    let nh = l.n_h;
    let mut keys: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut block_of = Vec::with_capacity(l.n_modes);
    let mut unique: Vec<(usize, Vec<f64>)> = Vec::new();
    for alpha in 0..l.n_modes {
        let w = op.diag_weights(alpha);
        let key = weight_key(&w);
        let next = unique.len();
        let id = *keys.entry(key).or_insert(next);
        if id == next {
            unique.push((alpha, w));
        }
        block_of.push(id);
    }
    let (mut kl, mut ku) = op.mass.bandwidth();
    for t in &op.terms {
        let (a, b) = t.stiffness.bandwidth();
        kl = kl.max(a);
        ku = ku.max(b);
    }
    let bkl = kl * nt + nt - 1;
    let bku = ku * nt + nt - 1;
    let factors = unique
        .par_iter()
        .map(|(alpha, w)| {
            let mut lu = BandedLu::zeros(nt * nh, bkl, bku);
            for m in 0..nh {
                for (col, mv) in op.mass.row(m) {
                    for i in 0..nt {
                        for j in 0..nt {
                            let a = op.time.a_t[i][j];
                            if a != 0.0 {
                                lu.add(m * nt + i, col * nt + j, a * mv);
                            }
                        }
                    }
                }
                for (t, &wt) in op.terms.iter().zip(w) {
                    if wt == 0.0 {
                        continue;
                    }
                    for (col, kv) in t.stiffness.row(m) {
                        for i in 0..nt {
                            for j in 0..nt {
                                let b = op.time.b_t[i][j];
                                if b != 0.0 {
                                    lu.add(m * nt + i, col * nt + j, wt * b * kv);
                                }
                            }
                        }
                    }
                }
            }
            lu.factorize()
                .map_err(|_| Error::SingularBlock { mode: *alpha })?;
            Ok(lu)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockJacobi {
        n_time: nt,
        n_h: nh,
        block_of,
        factors,
    })
}
