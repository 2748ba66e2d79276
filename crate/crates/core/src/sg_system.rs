//! Slab systems of the stochastic Galerkin discretization in Kronecker form
//! and the causal march over slabs.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::chaos::{MultiIndex, TripleProductTensor};
use crate::error::{Error, Result};
use crate::krylov::{fgmres, BlockJacobi, FgmresConfig, LinearOperator};
use crate::sparse::CsrMatrix;
use crate::spatial_fem::{Dofs, FeSpace, QuadGrid};
use crate::time_slab::SlabTimeBasis;

/// Sizes of a slab vector: stochastic modes × time nodes × spatial unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SgLayout {
    pub n_modes: usize,
    pub n_time: usize,
    pub n_h: usize,
}

impl SgLayout {
    pub fn len(&self) -> usize {
        self.n_modes * self.n_time * self.n_h
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Block address `b(α, i) = α·(r+1) + i`.
    pub fn block(&self, alpha: usize, i: usize) -> usize {
        alpha * self.n_time + i
    }

    pub fn block_range(&self, alpha: usize, i: usize) -> std::ops::Range<usize> {
        let b = self.block(alpha, i);
        b * self.n_h..(b + 1) * self.n_h
    }

    /// Values of all time nodes of one mode, contiguous.
    pub fn mode_range(&self, alpha: usize) -> std::ops::Range<usize> {
        let s = self.n_time * self.n_h;
        alpha * s..(alpha + 1) * s
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: len,
            });
        }
        Ok(())
    }
}

/// Slab unknowns with their block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SgBlockVector {
    pub layout: SgLayout,
    pub data: Vec<f64>,
}

impl SgBlockVector {
    pub fn zeros(layout: SgLayout) -> Self {
        SgBlockVector {
            layout,
            data: vec![0.0; layout.len()],
        }
    }

    pub fn block(&self, alpha: usize, i: usize) -> &[f64] {
        &self.data[self.layout.block_range(alpha, i)]
    }

    pub fn block_mut(&mut self, alpha: usize, i: usize) -> &mut [f64] {
        let r = self.layout.block_range(alpha, i);
        &mut self.data[r]
    }
}

/// One coupling term `G_μ ⊗ B_t ⊗ K_μ` of the slab operator.
#[derive(Debug, Clone)]
pub struct CouplingTerm {
    pub mu: MultiIndex,
    /// rows of `G_μ`: for each output mode `β`, the pairs `(α, [G_μ]_{βα})`
    pub rows: Vec<Vec<(usize, f64)>>,
    pub stiffness: CsrMatrix,
}

impl CouplingTerm {
    pub fn new(g: &TripleProductTensor, n_modes: usize, stiffness: CsrMatrix) -> Self {
        CouplingTerm {
            mu: g.mu.clone(),
            rows: g.rows(n_modes),
            stiffness,
        }
    }

    pub fn diag(&self, alpha: usize) -> f64 {
        self.rows[alpha]
            .iter()
            .find(|e| e.0 == alpha)
            .map_or(0.0, |e| e.1)
    }
}

/// `𝔸 = I ⊗ A_t ⊗ M_x + Σ_μ G_μ ⊗ B_t ⊗ K_μ` and `𝕁 = I ⊗ C_t ⊗ M_x`,
/// applied without forming the Kronecker products.
#[derive(Debug, Clone)]
pub struct SlabOperator {
    pub layout: SgLayout,
    pub time: SlabTimeBasis,
    pub mass: CsrMatrix,
    pub terms: Vec<CouplingTerm>,
}

impl SlabOperator {
    pub fn new(
        n_modes: usize,
        time: SlabTimeBasis,
        mass: CsrMatrix,
        terms: Vec<CouplingTerm>,
    ) -> Result<Self> {
        let n_h = mass.nrows();
        for t in &terms {
            if t.stiffness.nrows() != n_h || t.rows.len() != n_modes {
                return Err(Error::DimensionMismatch {
                    expected: n_h,
                    got: t.stiffness.nrows(),
                });
            }
        }
        let layout = SgLayout {
            n_modes,
            n_time: time.n_nodes(),
            n_h,
        };
        Ok(SlabOperator {
            layout,
            time,
            mass,
            terms,
        })
    }

    /// `Σ_μ [G_μ]_{αα}` per coupling term, for mode `alpha`.
    pub fn diag_weights(&self, alpha: usize) -> Vec<f64> {
        self.terms.iter().map(|t| t.diag(alpha)).collect()
    }

    /// `y = 𝔸 u`
    pub fn apply(&self, u: &[f64], y: &mut [f64]) -> Result<()> {
        self.layout.check(u.len())?;
        self.layout.check(y.len())?;
        let l = self.layout;
        let nt = l.n_time;
        let nh = l.n_h;
        let at = &self.time.a_t;
        let bt = &self.time.b_t;
        y.par_chunks_mut(nt * nh).enumerate().for_each(|(beta, yb)| {
            yb.iter_mut().for_each(|v| *v = 0.0);
            let mut mu_j = vec![0.0; nh];
            // temporal evolution with the spatial mass
            for j in 0..nt {
                self.mass.mul_vec_into(&u[l.block_range(beta, j)], &mut mu_j);
                for i in 0..nt {
                    let a = at[i][j];
                    if a != 0.0 {
                        axpy(a, &mu_j, &mut yb[i * nh..(i + 1) * nh]);
                    }
                }
            }
            let mut z = vec![0.0; nt * nh];
            let mut zt = vec![0.0; nh];
            for term in &self.terms {
                let row = &term.rows[beta];
                if row.is_empty() {
                    continue;
                }
                // z_j = Σ_α [G_μ]_{βα} u_{α,j}
                z.iter_mut().for_each(|v| *v = 0.0);
                for &(alpha, g) in row {
                    axpy(g, &u[l.mode_range(alpha)], &mut z);
                }
                for i in 0..nt {
                    zt.iter_mut().for_each(|v| *v = 0.0);
                    for j in 0..nt {
                        let b = bt[i][j];
                        if b != 0.0 {
                            axpy(b, &z[j * nh..(j + 1) * nh], &mut zt);
                        }
                    }
                    term.stiffness
                        .mul_vec_add(1.0, &zt, &mut yb[i * nh..(i + 1) * nh]);
                }
            }
        });
        Ok(())
    }

    /// `y = 𝕁 u_prev`; only the endpoint block of each mode contributes.
    pub fn apply_transfer(&self, u_prev: &[f64], y: &mut [f64]) -> Result<()> {
        self.layout.check(u_prev.len())?;
        self.layout.check(y.len())?;
        let l = self.layout;
        let nt = l.n_time;
        let nh = l.n_h;
        let r = nt - 1;
        y.par_chunks_mut(nt * nh).enumerate().for_each(|(alpha, yb)| {
            let mut m_end = vec![0.0; nh];
            self.mass.mul_vec_into(&u_prev[l.block_range(alpha, r)], &mut m_end);
            for i in 0..nt {
                let c = self.time.c_t[i][r];
                for (o, v) in yb[i * nh..(i + 1) * nh].iter_mut().zip(&m_end) {
                    *o = c * v;
                }
            }
        });
        Ok(())
    }
}

impl LinearOperator for SlabOperator {
    fn len(&self) -> usize {
        self.layout.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        SlabOperator::apply(self, x, y).expect("slab operator dimensions");
    }
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// A forcing whose stochastic modes separate into time and space factors,
/// `f_β(x, t) = Σ_k T_k(t) X_{β,k}(x)`.
pub trait SeparableForcing: Sync {
    fn n_modes(&self) -> usize;
    fn n_terms(&self) -> usize;
    /// `out[k] = T_k(t)`
    fn time_factors(&self, t: f64, out: &mut [f64]);
    /// `out[β·n_terms + k] = X_{β,k}(x)`
    fn spatial_factors(&self, x: [f64; 2], out: &mut [f64]);

    /// `out[β] = f_β(x, t)`
    fn eval_modes(&self, x: [f64; 2], t: f64, out: &mut [f64]) {
        let nk = self.n_terms();
        let mut tf = vec![0.0; nk];
        let mut sf = vec![0.0; self.n_modes() * nk];
        self.time_factors(t, &mut tf);
        self.spatial_factors(x, &mut sf);
        for (b, o) in out.iter_mut().enumerate().take(self.n_modes()) {
            *o = (0..nk).map(|k| tf[k] * sf[b * nk + k]).sum();
        }
    }
}

/// Precomputed spatial load vectors `∫ X_{β,k} φ_m` of a separable forcing.
#[derive(Debug, Clone)]
pub struct LoadAssembler {
    n_modes: usize,
    n_terms: usize,
    /// `spatial[β·n_terms + k]`
    spatial: Vec<Vec<f64>>,
}

impl LoadAssembler {
    pub fn new<F: SeparableForcing + ?Sized>(space: &FeSpace, grid: &QuadGrid, forcing: &F) -> Self {
        let nb = forcing.n_modes();
        let nk = forcing.n_terms();
        let np = grid.len();
        let mut vals = vec![0.0; np * nb * nk];
        vals.par_chunks_mut(nb * nk)
            .zip(grid.points.par_iter())
            .for_each(|(out, &x)| forcing.spatial_factors(x, out));
        let spatial = (0..nb * nk)
            .into_par_iter()
            .map(|c| {
                let f: Vec<f64> = (0..np).map(|q| vals[q * nb * nk + c]).collect();
                grid.load_vector(space, &f, Dofs::Interior)
            })
            .collect();
        LoadAssembler {
            n_modes: nb,
            n_terms: nk,
            spatial,
        }
    }

    /// `F_{(β,i,m)} = ∫_{I_n} ∫_D f_β v_i φ_m` on the slab starting at `t0`.
    pub fn slab_load<F: SeparableForcing + ?Sized>(
        &self,
        forcing: &F,
        time: &SlabTimeBasis,
        t0: f64,
        layout: SgLayout,
    ) -> Result<SgBlockVector> {
        if layout.n_modes != self.n_modes {
            return Err(Error::DimensionMismatch {
                expected: self.n_modes,
                got: layout.n_modes,
            });
        }
        let nk = self.n_terms;
        let nt = layout.n_time;
        // weights[i][k] = τ Σ_q w_q v_i(s_q) T_k(t0 + τ s_q)
        let mut weights = vec![vec![0.0; nk]; nt];
        let mut tf = vec![0.0; nk];
        for (q, (&s, &w)) in time.quad.nodes.iter().zip(&time.quad.weights).enumerate() {
            forcing.time_factors(t0 + time.tau * s, &mut tf);
            for (i, wi) in weights.iter_mut().enumerate() {
                for k in 0..nk {
                    wi[k] += time.tau * w * time.quad_values[q][i] * tf[k];
                }
            }
        }
        let mut out = SgBlockVector::zeros(layout);
        out.data
            .par_chunks_mut(layout.n_h)
            .enumerate()
            .for_each(|(b, blk)| {
                let (beta, i) = (b / nt, b % nt);
                for (k, &w) in weights[i].iter().enumerate().take(nk) {
                    if w != 0.0 {
                        axpy(w, &self.spatial[beta * nk + k], blk);
                    }
                }
            });
        Ok(out)
    }
}

/// `[B₀]_{(α,i)} = v_i(t₀⁺)·M_x u_{0,α}` from nodal initial modes.
pub fn initial_trace(op: &SlabOperator, u0_modes: &[Vec<f64>]) -> Result<SgBlockVector> {
    let l = op.layout;
    if u0_modes.len() != l.n_modes {
        return Err(Error::DimensionMismatch {
            expected: l.n_modes,
            got: u0_modes.len(),
        });
    }
    let mut out = SgBlockVector::zeros(l);
    for (alpha, u0) in u0_modes.iter().enumerate() {
        if u0.len() != l.n_h {
            return Err(Error::DimensionMismatch {
                expected: l.n_h,
                got: u0.len(),
            });
        }
        let mu0 = op.mass.mul_vec(u0);
        for i in 0..l.n_time {
            let v = op.time.left_values[i];
            for (o, m) in out.block_mut(alpha, i).iter_mut().zip(&mu0) {
                *o = v * m;
            }
        }
    }
    Ok(out)
}

/// Iteration counts, operator applications and timings of a march.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverStats {
    pub iterations: Vec<usize>,
    pub vmult_calls: usize,
    pub prec_calls: usize,
    pub n_sg_slab: usize,
    pub wall: Duration,
    pub solve: Duration,
    pub apply: Duration,
    pub prec: Duration,
}

impl SolverStats {
    pub fn avg_iterations(&self) -> f64 {
        if self.iterations.is_empty() {
            return 0.0;
        }
        self.iterations.iter().sum::<usize>() as f64 / self.iterations.len() as f64
    }

    /// Work proxy `W = N_SG,slab · prec_calls`.
    pub fn work(&self) -> u128 {
        self.n_sg_slab as u128 * self.prec_calls as u128
    }
}

/// Per-slab solution vectors of a march.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub layout: SgLayout,
    pub tau: f64,
    pub slabs: Vec<Vec<f64>>,
}

/// Solves `𝔸U⁽ⁿ⁾ = F⁽ⁿ⁾ + 𝕁U⁽ⁿ⁻¹⁾` for `n = 1..slabs`, with `B₀` in place of
/// the transfer term on the first slab.
pub fn march<F: SeparableForcing + ?Sized>(
    op: &SlabOperator,
    prec: &BlockJacobi,
    loads: &LoadAssembler,
    forcing: &F,
    initial: Option<&SgBlockVector>,
    slabs: usize,
    config: &FgmresConfig,
) -> Result<(Trajectory, SolverStats)> {
    let start = Instant::now();
    let l = op.layout;
    let tau = op.time.tau;
    let mut stats = SolverStats {
        n_sg_slab: l.len(),
        ..Default::default()
    };
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(slabs);
    let mut transfer = vec![0.0; l.len()];
    for n in 0..slabs {
        let mut rhs = loads.slab_load(forcing, &op.time, n as f64 * tau, l)?.data;
        if n == 0 {
            if let Some(b0) = initial {
                l.check(b0.data.len())?;
                axpy(1.0, &b0.data, &mut rhs);
            }
        } else {
            op.apply_transfer(&out[n - 1], &mut transfer)?;
            axpy(1.0, &transfer, &mut rhs);
        }
        let t = Instant::now();
        let res = fgmres(op, prec, &rhs, config).map_err(|e| Error::Slab {
            slab: n,
            source: Box::new(e),
        })?;
        stats.solve += t.elapsed();
        stats.iterations.push(res.iterations);
        stats.vmult_calls += res.vmult_calls;
        stats.prec_calls += res.prec_calls;
        stats.apply += res.apply_time;
        stats.prec += res.prec_time;
        out.push(res.x);
    }
    stats.wall = start.elapsed();
    Ok((
        Trajectory {
            layout: l,
            tau,
            slabs: out,
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::{enumerate_basis, triple_products};
    use crate::spatial_fem::{assemble_mass, assemble_weighted_stiffness, QuadMesh};
    use crate::time_slab::build_basis;

    fn small_operator(r: usize) -> SlabOperator {
        let space = FeSpace::new(QuadMesh::new(3).unwrap(), 1).unwrap();
        let basis = enumerate_basis(1, 1);
        let time = build_basis(r, 0.3).unwrap();
        let mass = assemble_mass(&space).unwrap();
        let terms = vec![
            CouplingTerm::new(
                &triple_products(&basis, &MultiIndex::zeros(1)).unwrap(),
                basis.len(),
                assemble_weighted_stiffness(&space, |_| 1.5).unwrap(),
            ),
            CouplingTerm::new(
                &triple_products(&basis, &MultiIndex::unit(1, 0, 1)).unwrap(),
                basis.len(),
                assemble_weighted_stiffness(&space, |x| 0.3 + x[0] * x[0]).unwrap(),
            ),
        ];
        SlabOperator::new(basis.len(), time, mass, terms).unwrap()
    }

    #[test]
    fn zero_in_zero_out() {
        let op = small_operator(1);
        let u = vec![0.0; op.layout.len()];
        let mut y = vec![1.0; op.layout.len()];
        op.apply(&u, &mut y).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        let mut y = vec![1.0; op.layout.len()];
        op.apply_transfer(&u, &mut y).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(op.apply(&u[1..], &mut y).is_err());
    }

    #[test]
    fn layout_addressing_is_bijective() {
        let l = SgLayout {
            n_modes: 3,
            n_time: 2,
            n_h: 5,
        };
        let mut seen = vec![false; l.len()];
        for a in 0..3 {
            for i in 0..2 {
                for k in l.block_range(a, i) {
                    assert!(!seen[k]);
                    seen[k] = true;
                }
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn r0_transfer_is_mass_times_previous() {
        let op = small_operator(0);
        let u: Vec<f64> = (0..op.layout.len()).map(|i| (i as f64).sin()).collect();
        let mut y = vec![0.0; u.len()];
        op.apply_transfer(&u, &mut y).unwrap();
        for a in 0..op.layout.n_modes {
            let expect = op.mass.mul_vec(&u[op.layout.block_range(a, 0)]);
            for (e, g) in expect.iter().zip(&y[op.layout.block_range(a, 0)]) {
                assert!((e - g).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn initial_trace_r0() {
        let op = small_operator(0);
        let u0: Vec<Vec<f64>> = (0..op.layout.n_modes)
            .map(|a| (0..op.layout.n_h).map(|m| (a + m) as f64).collect())
            .collect();
        let b0 = initial_trace(&op, &u0).unwrap();
        for (a, u) in u0.iter().enumerate() {
            assert_eq!(b0.block(a, 0), op.mass.mul_vec(u).as_slice());
        }
        let zero = initial_trace(&op, &vec![vec![0.0; op.layout.n_h]; op.layout.n_modes]).unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));
    }
}
