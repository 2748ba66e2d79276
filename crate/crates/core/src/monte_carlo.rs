//! Pathwise Monte-Carlo baseline on the same space-time kernel: seeded
//! sampling, per-sample slab solves, streaming moment estimators and the
//! total / discretization / sampling error split.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::benchmark::{sine, ManufacturedBenchmark};
use crate::chaos::{enumerate_basis, triple_products, MultiIndex, TripleProductTensor};
use crate::error::{Error, Result};
use crate::krylov::{build_block_jacobi, FgmresConfig};
use crate::sg_system::{march, CouplingTerm, LoadAssembler, SeparableForcing, SlabOperator, SolverStats, Trajectory};
use crate::sparse::CsrMatrix;
use crate::spatial_fem::{assemble_mass, assemble_weighted_stiffness, FeSpace, QuadGrid, QuadMesh};
use crate::time_slab::{build_basis, SlabTimeBasis};

/// Reproducible source of standard normal samples. Sample `m` depends only on
/// `(seed, m)`, so samples can be drawn in any order and on any worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleStream {
    pub seed: u64,
    pub dim: usize,
}

impl SampleStream {
    pub fn new(seed: u64, dim: usize) -> Self {
        SampleStream { seed, dim }
    }

    pub fn draw(&self, m: u64) -> Vec<f64> {
        draw_sample(self, m)
    }
}

pub fn draw_sample(stream: &SampleStream, m: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream.seed);
    rng.set_stream(m);
    (0..stream.dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Forcing of one realization, `f = G_q(ξ)(4t³ S − t⁴ D(x, ξ))`.
#[derive(Debug, Clone)]
pub struct PathwiseForcing<'a> {
    bench: &'a ManufacturedBenchmark,
    xi: Vec<f64>,
    g: f64,
}

impl<'a> PathwiseForcing<'a> {
    pub fn new(bench: &'a ManufacturedBenchmark, xi: &[f64]) -> Result<Self> {
        Ok(PathwiseForcing {
            bench,
            xi: xi.to_vec(),
            g: bench.stochastic_factor(xi)?,
        })
    }
}

impl SeparableForcing for PathwiseForcing<'_> {
    fn n_modes(&self) -> usize {
        1
    }

    fn n_terms(&self) -> usize {
        2
    }

    fn time_factors(&self, t: f64, out: &mut [f64]) {
        out[0] = 4.0 * t.powi(3);
        out[1] = -t.powi(4);
    }

    fn spatial_factors(&self, x: [f64; 2], out: &mut [f64]) {
        out[0] = self.g * sine(x);
        out[1] = self.g * self.bench.divergence_factor(x, &self.xi);
    }
}

/// Values and gradients of one field on the space-time quadrature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleField {
    pub val: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
}

impl SampleField {
    pub fn zeros(n: usize) -> Self {
        SampleField {
            val: vec![0.0; n],
            grad: vec![[0.0; 2]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.val.is_empty()
    }
}

/// Discretization of the pathwise problem shared by all samples.
#[derive(Debug, Clone)]
pub struct PathwiseSolver {
    bench: ManufacturedBenchmark,
    space: FeSpace,
    grid: QuadGrid,
    mass: CsrMatrix,
    time: SlabTimeBasis,
    identity: TripleProductTensor,
    slabs: usize,
    fgmres: FgmresConfig,
    /// space-time quadrature weights, point `(n·n_tq + q)·n_x + k`
    weights: Vec<f64>,
    phi: SampleField,
}

impl PathwiseSolver {
    pub fn new(
        bench: &ManufacturedBenchmark,
        level: u32,
        k: usize,
        r: usize,
        slabs: usize,
        fgmres: FgmresConfig,
    ) -> Result<Self> {
        if slabs == 0 {
            return Err(Error::InvalidInput("at least one slab is required".into()));
        }
        let space = FeSpace::new(QuadMesh::from_level(level)?, k)?;
        let grid = QuadGrid::for_space(&space)?;
        let mass = assemble_mass(&space)?;
        let tau = bench.t_final / slabs as f64;
        let time = build_basis(r, tau)?;
        let identity = triple_products(&enumerate_basis(1, 0), &MultiIndex::zeros(1))?;
        let nx = grid.len();
        let ntq = time.quad.len();
        let mut weights = Vec::with_capacity(slabs * ntq * nx);
        let mut phi = SampleField {
            val: Vec::with_capacity(slabs * ntq * nx),
            grad: Vec::with_capacity(slabs * ntq * nx),
        };
        for n in 0..slabs {
            for (&s, &w) in time.quad.nodes.iter().zip(&time.quad.weights) {
                let t = (n as f64 + s) * tau;
                for (&x, &wx) in grid.points.iter().zip(&grid.weights) {
                    weights.push(tau * w * wx);
                    phi.val.push(bench.phi(x, t));
                    phi.grad.push(bench.phi_grad(x, t));
                }
            }
        }
        Ok(PathwiseSolver {
            bench: bench.clone(),
            space,
            grid,
            mass,
            time,
            identity,
            slabs,
            fgmres,
            weights,
            phi,
        })
    }

    pub fn n_points(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `φ` and `∇φ` on the grid.
    pub fn phi(&self) -> &SampleField {
        &self.phi
    }

    /// Physical coordinates `(x, t)` of grid point `i`.
    pub fn point(&self, i: usize) -> ([f64; 2], f64) {
        let nx = self.grid.len();
        let ntq = self.time.quad.len();
        let slot = i / nx;
        let (n, q) = (slot / ntq, slot % ntq);
        let t = (n as f64 + self.time.quad.nodes[q]) * self.time.tau;
        (self.grid.points[i % nx], t)
    }

    /// Slab-wise space-time solve for the coefficient `a(·, ξ)`.
    pub fn solve(&self, xi: &[f64]) -> Result<(Trajectory, SolverStats)> {
        if xi.len() != self.bench.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.bench.dim(),
                got: xi.len(),
            });
        }
        let d = &self.bench.diffusion;
        let k = assemble_weighted_stiffness(&self.space, |x| d.eval(x, xi))?;
        let op = SlabOperator::new(
            1,
            self.time.clone(),
            self.mass.clone(),
            vec![CouplingTerm::new(&self.identity, 1, k)],
        )?;
        let prec = build_block_jacobi(&op)?;
        let forcing = PathwiseForcing::new(&self.bench, xi)?;
        let loads = LoadAssembler::new(&self.space, &self.grid, &forcing);
        march(&op, &prec, &loads, &forcing, None, self.slabs, &self.fgmres)
    }

    /// Discrete solution of one realization on the grid.
    pub fn discrete_field(&self, xi: &[f64]) -> Result<SampleField> {
        let (traj, _) = self.solve(xi)?;
        Ok(self.trajectory_field(&traj))
    }

    /// Evaluates a single-mode trajectory on the grid.
    pub fn trajectory_field(&self, traj: &Trajectory) -> SampleField {
        let l = traj.layout;
        let nx = self.grid.len();
        let ntq = self.time.quad.len();
        let mut out = SampleField::zeros(self.n_points());
        let mut nodal = vec![0.0; l.n_h];
        for (n, u) in traj.slabs.iter().enumerate() {
            for q in 0..ntq {
                nodal.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..l.n_time {
                    let li = self.time.quad_values[q][i];
                    for (o, b) in nodal.iter_mut().zip(&u[l.block_range(0, i)]) {
                        *o += li * b;
                    }
                }
                let r = (n * ntq + q) * nx..(n * ntq + q + 1) * nx;
                self.grid
                    .evaluate_into(&self.space, &nodal, &mut out.val[r.clone()], &mut out.grad[r]);
            }
        }
        out
    }

    /// Exact realization `φ G_q(ξ)` on the grid.
    pub fn exact_field(&self, xi: &[f64]) -> Result<SampleField> {
        let g = self.bench.stochastic_factor(xi)?;
        Ok(SampleField {
            val: self.phi.val.iter().map(|v| g * v).collect(),
            grad: self.phi.grad.iter().map(|d| [g * d[0], g * d[1]]).collect(),
        })
    }

    /// `L²` and `H¹`-semi space-time norms of `a − b`.
    pub fn difference_norms(&self, a: &SampleField, b: &SampleField) -> (f64, f64) {
        difference_norms(&self.weights, a, b)
    }
}

fn difference_norms(w: &[f64], a: &SampleField, b: &SampleField) -> (f64, f64) {
    let mut l2 = 0.0;
    let mut h1 = 0.0;
    for (i, wi) in w.iter().enumerate() {
        l2 += wi * (a.val[i] - b.val[i]).powi(2);
        h1 += wi * ((a.grad[i][0] - b.grad[i][0]).powi(2) + (a.grad[i][1] - b.grad[i][1]).powi(2));
    }
    (l2.sqrt(), h1.sqrt())
}

/// Discrete trajectory of one realization.
pub fn pathwise_solve(solver: &PathwiseSolver, xi: &[f64]) -> Result<Trajectory> {
    solver.solve(xi).map(|(t, _)| t)
}

/// Streaming pointwise moments of a field and its gradient: mean, central
/// sums of powers 2 to 4, and the value–gradient co-moment.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    count: u64,
    mean: Vec<f64>,
    grad_mean: Vec<[f64; 2]>,
    m2: Vec<f64>,
    m3: Vec<f64>,
    m4: Vec<f64>,
    co: Vec<[f64; 2]>,
}

impl MomentAccumulator {
    pub fn new(n: usize) -> Self {
        MomentAccumulator {
            count: 0,
            mean: vec![0.0; n],
            grad_mean: vec![[0.0; 2]; n],
            m2: vec![0.0; n],
            m3: vec![0.0; n],
            m4: vec![0.0; n],
            co: vec![[0.0; 2]; n],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn push(&mut self, f: &SampleField) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: f.len(),
            });
        }
        self.count += 1;
        let n = self.count as f64;
        for i in 0..self.len() {
            let d = f.val[i] - self.mean[i];
            let dn = d / n;
            let t1 = d * dn * (n - 1.0);
            self.mean[i] += dn;
            self.m4[i] += t1 * dn * dn * (n * n - 3.0 * n + 3.0) + 6.0 * dn * dn * self.m2[i]
                - 4.0 * dn * self.m3[i];
            self.m3[i] += t1 * dn * (n - 2.0) - 3.0 * dn * self.m2[i];
            self.m2[i] += t1;
            for c in 0..2 {
                self.grad_mean[i][c] += (f.grad[i][c] - self.grad_mean[i][c]) / n;
                self.co[i][c] += d * (f.grad[i][c] - self.grad_mean[i][c]);
            }
        }
        Ok(())
    }

    /// Combines two accumulators over disjoint sample sets.
    pub fn merge(&mut self, other: &MomentAccumulator) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.len() {
            let d = other.mean[i] - self.mean[i];
            let (m2a, m3a) = (self.m2[i], self.m3[i]);
            let (m2b, m3b) = (other.m2[i], other.m3[i]);
            self.m4[i] += other.m4[i]
                + d.powi(4) * na * nb * (na * na - na * nb + nb * nb) / n.powi(3)
                + 6.0 * d * d * (na * na * m2b + nb * nb * m2a) / (n * n)
                + 4.0 * d * (na * m3b - nb * m3a) / n;
            self.m3[i] += m3b + d.powi(3) * na * nb * (na - nb) / (n * n)
                + 3.0 * d * (na * m2b - nb * m2a) / n;
            self.m2[i] += m2b + d * d * na * nb / n;
            for c in 0..2 {
                let dg = other.grad_mean[i][c] - self.grad_mean[i][c];
                self.co[i][c] += other.co[i][c] + d * dg * na * nb / n;
                self.grad_mean[i][c] += dg * nb / n;
            }
            self.mean[i] += d * nb / n;
        }
        self.count += other.count;
        Ok(())
    }

    /// Sample mean field and its gradient.
    pub fn mean(&self) -> SampleField {
        SampleField {
            val: self.mean.clone(),
            grad: self.grad_mean.clone(),
        }
    }

    /// Unbiased sample variance field with gradient `2C/(N−1)`; `None` for
    /// fewer than two samples.
    pub fn variance(&self) -> Option<SampleField> {
        if self.count < 2 {
            return None;
        }
        let s = 1.0 / (self.count as f64 - 1.0);
        Some(SampleField {
            val: self.m2.iter().map(|v| v * s).collect(),
            grad: self.co.iter().map(|c| [2.0 * s * c[0], 2.0 * s * c[1]]).collect(),
        })
    }

    /// Standard error of the mean at point `i`.
    pub fn mean_std_error(&self, i: usize) -> Option<f64> {
        (self.count >= 2).then(|| {
            let n = self.count as f64;
            (self.m2[i] / (n - 1.0) / n).sqrt()
        })
    }

    /// Standard error of the sample variance at point `i`, from the fourth
    /// central moment.
    pub fn variance_std_error(&self, i: usize) -> Option<f64> {
        (self.count >= 4).then(|| {
            let n = self.count as f64;
            let s2 = self.m2[i] / (n - 1.0);
            let mu4 = self.m4[i] / n;
            ((mu4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
        })
    }
}

/// `L²` and `H¹`-semi errors of a mean and (for `N ≥ 2`) a variance field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentErrors {
    pub mean_l2: f64,
    pub mean_h1: f64,
    pub var_l2: Option<f64>,
    pub var_h1: Option<f64>,
}

/// Errors at one sample-count milestone. `total` and `disc` are absent in
/// exact-only runs.
#[derive(Debug, Clone, PartialEq)]
pub struct McErrorReport {
    pub n_mc: usize,
    pub total: Option<MomentErrors>,
    pub disc: Option<MomentErrors>,
    pub exact: MomentErrors,
    /// window rates of the `L²` errors relative to the first milestone
    pub r_tot_mean: Option<f64>,
    pub r_ex_mean: Option<f64>,
    pub r_tot_var: Option<f64>,
    pub r_ex_var: Option<f64>,
    /// accumulated pathwise solve time
    pub wall: Duration,
}

impl McErrorReport {
    /// Checks `total ≤ disc + sampling` for every reported quantity.
    pub fn triangle_holds(&self) -> bool {
        let (Some(t), Some(d)) = (self.total, self.disc) else {
            return true;
        };
        let e = self.exact;
        let ok = |a: f64, b: f64, c: f64| a <= (b + c) * (1.0 + 1e-12);
        let opt = |a: Option<f64>, b: Option<f64>, c: Option<f64>| match (a, b, c) {
            (Some(a), Some(b), Some(c)) => ok(a, b, c),
            _ => true,
        };
        ok(t.mean_l2, d.mean_l2, e.mean_l2)
            && ok(t.mean_h1, d.mean_h1, e.mean_h1)
            && opt(t.var_l2, d.var_l2, e.var_l2)
            && opt(t.var_h1, d.var_h1, e.var_h1)
    }
}

/// `r = log(E₀/E) / log(N/N₀)`
pub fn window_rate(e_ref: f64, e: f64, n_ref: usize, n: usize) -> Result<f64> {
    if !(e_ref > 0.0 && e > 0.0) {
        return Err(Error::InvalidInput(format!(
            "window rate needs positive errors, got {e_ref} and {e}"
        )));
    }
    if n <= n_ref || n_ref == 0 {
        return Err(Error::InvalidInput(format!(
            "window rate needs 0 < N0 < N, got {n_ref} and {n}"
        )));
    }
    Ok((e_ref / e).ln() / (n as f64 / n_ref as f64).ln())
}

/// Ensemble parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub level: u32,
    pub k: usize,
    pub r: usize,
    pub slabs: usize,
    pub fgmres: FgmresConfig,
    pub seed: u64,
    pub milestones: Vec<usize>,
    /// skip pathwise solves and accumulate only the exact sampled fields
    pub exact_only: bool,
}

/// Reports per milestone and the final accumulators.
#[derive(Debug, Clone)]
pub struct McRun {
    pub reports: Vec<McErrorReport>,
    pub discrete: Option<MomentAccumulator>,
    pub exact: MomentAccumulator,
}

fn moment_errors(
    w: &[f64],
    m: &SampleField,
    v: Option<&SampleField>,
    m_ref: &SampleField,
    v_ref: &SampleField,
) -> MomentErrors {
    let (mean_l2, mean_h1) = difference_norms(w, m, m_ref);
    let (var_l2, var_h1) = match v {
        Some(v) => {
            let (a, b) = difference_norms(w, v, v_ref);
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    MomentErrors {
        mean_l2,
        mean_h1,
        var_l2,
        var_h1,
    }
}

/// Runs one cumulative sample stream and reports at each milestone.
pub fn run_ensemble(bench: &ManufacturedBenchmark, config: &McConfig) -> Result<McRun> {
    let solver = PathwiseSolver::new(
        bench,
        config.level,
        config.k,
        config.r,
        config.slabs,
        config.fgmres.clone(),
    )?;
    run_ensemble_with(&solver, config)
}

pub fn run_ensemble_with(solver: &PathwiseSolver, config: &McConfig) -> Result<McRun> {
    run_ensemble_observed(solver, config, |_| Ok(()))
}

/// Like [`run_ensemble_with`], handing each report to `observe` as soon as its
/// milestone is reached. An error from `observe` aborts the run.
pub fn run_ensemble_observed(
    solver: &PathwiseSolver,
    config: &McConfig,
    mut observe: impl FnMut(&McErrorReport) -> Result<()>,
) -> Result<McRun> {
    let ms = &config.milestones;
    if ms.is_empty() || ms[0] == 0 || ms.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "milestones must be positive and strictly increasing".into(),
        ));
    }
    let bench = &solver.bench;
    let np = solver.n_points();
    let stream = SampleStream::new(config.seed, bench.dim());
    let sigma2 = bench.variance_factor();
    let mean_ref = solver.phi.clone();
    let var_ref = SampleField {
        val: solver.phi.val.iter().map(|p| sigma2 * p * p).collect(),
        grad: solver
            .phi
            .val
            .iter()
            .zip(&solver.phi.grad)
            .map(|(p, g)| [2.0 * sigma2 * p * g[0], 2.0 * sigma2 * p * g[1]])
            .collect(),
    };
    let mut exact = MomentAccumulator::new(np);
    let mut discrete = (!config.exact_only).then(|| MomentAccumulator::new(np));
    let mut wall = Duration::ZERO;
    let mut reports: Vec<McErrorReport> = Vec::with_capacity(ms.len());
    let batch = 2 * rayon::current_num_threads().max(1);
    let mut done = 0usize;
    for &target in ms {
        while done < target {
            let end = (done + batch).min(target);
            let fields = (done..end)
                .into_par_iter()
                .map(|j| {
                    let m = j as u64 + 1;
                    let xi = stream.draw(m);
                    let ex = solver.exact_field(&xi)?;
                    if config.exact_only {
                        return Ok((None, ex, Duration::ZERO));
                    }
                    let start = Instant::now();
                    let disc = solver.discrete_field(&xi).map_err(|e| Error::Sample {
                        sample: m,
                        source: Box::new(e),
                    })?;
                    Ok((Some(disc), ex, start.elapsed()))
                })
                .collect::<Result<Vec<_>>>()?;
            for (disc, ex, t) in fields {
                exact.push(&ex)?;
                if let (Some(acc), Some(d)) = (discrete.as_mut(), disc) {
                    acc.push(&d)?;
                }
                wall += t;
            }
            done = end;
        }
        let w = solver.weights();
        let ex_mean = exact.mean();
        let ex_var = exact.variance();
        let ex_err = moment_errors(w, &ex_mean, ex_var.as_ref(), &mean_ref, &var_ref);
        let (total, disc) = match &discrete {
            Some(acc) => {
                let dm = acc.mean();
                let dv = acc.variance();
                let tot = moment_errors(w, &dm, dv.as_ref(), &mean_ref, &var_ref);
                let dis = match (&dv, &ex_var) {
                    (Some(dv), Some(ev)) => moment_errors(w, &dm, Some(dv), &ex_mean, ev),
                    _ => moment_errors(w, &dm, None, &ex_mean, &var_ref),
                };
                (Some(tot), Some(dis))
            }
            None => (None, None),
        };
        let first = reports.first();
        let rate = |a: Option<f64>, b: Option<f64>| match (a, b, first) {
            (Some(a), Some(b), Some(f)) => window_rate(a, b, f.n_mc, target).ok(),
            _ => None,
        };
        let r_tot_mean = rate(
            first.and_then(|f| f.total.map(|t| t.mean_l2)),
            total.map(|t| t.mean_l2),
        );
        let r_tot_var = rate(
            first.and_then(|f| f.total.and_then(|t| t.var_l2)),
            total.and_then(|t| t.var_l2),
        );
        let r_ex_mean = rate(first.map(|f| f.exact.mean_l2), Some(ex_err.mean_l2));
        let r_ex_var = rate(first.and_then(|f| f.exact.var_l2), ex_err.var_l2);
        reports.push(McErrorReport {
            n_mc: target,
            total,
            disc,
            exact: ex_err,
            r_tot_mean,
            r_ex_mean,
            r_tot_var,
            r_ex_var,
            wall,
        });
        observe(reports.last().expect("just pushed"))?;
    }
    Ok(McRun {
        reports,
        discrete,
        exact,
    })
}
