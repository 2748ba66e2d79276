//! Manufactured finite-chaos benchmark: a squared-Gaussian diffusion field,
//! an exact solution with a finite Hermite expansion, its projected forcing,
//! and the error quantities of stochastic Galerkin runs.

use std::f64::consts::PI;
use std::time::Instant;

use crate::chaos::{
    basis_size, binomial, enumerate_basis, triple_products_with, ChaosBasis, MultiIndex,
    TripleTable,
};
use crate::error::{Error, Result};
use crate::krylov::{build_block_jacobi, FgmresConfig};
use crate::sg_system::{march, CouplingTerm, LoadAssembler, SeparableForcing, SlabOperator, SolverStats, Trajectory};
use crate::sparse::CsrMatrix;
use crate::spatial_fem::{assemble_mass, assemble_weighted_stiffness, FeSpace, QuadGrid, QuadMesh};
use crate::time_slab::{build_basis, SlabTimeBasis};

/// Polynomial in `(x₁, x₂)` stored as `(coefficient, power of x₁, power of x₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly2 {
    pub terms: Vec<(f64, u32, u32)>,
}

fn powu(x: f64, n: u32) -> f64 {
    x.powi(n as i32)
}

impl Poly2 {
    pub fn constant(c: f64) -> Self {
        Poly2 {
            terms: vec![(c, 0, 0)],
        }
    }

    pub fn monomial(c: f64, px: u32, py: u32) -> Self {
        Poly2 {
            terms: vec![(c, px, py)],
        }
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        self.terms
            .iter()
            .map(|&(c, a, b)| c * powu(x[0], a) * powu(x[1], b))
            .sum()
    }

    pub fn grad(&self, x: [f64; 2]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for &(c, a, b) in &self.terms {
            if a > 0 {
                g[0] += c * a as f64 * powu(x[0], a - 1) * powu(x[1], b);
            }
            if b > 0 {
                g[1] += c * b as f64 * powu(x[0], a) * powu(x[1], b - 1);
            }
        }
        g
    }

    pub fn mul(&self, other: &Poly2) -> Poly2 {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for &(c, a, b) in &self.terms {
            for &(d, e, f) in &other.terms {
                terms.push((c * d, a + e, b + f));
            }
        }
        Poly2 { terms }
    }

    pub fn scale(mut self, s: f64) -> Poly2 {
        self.terms.iter_mut().for_each(|t| t.0 *= s);
        self
    }

    pub fn plus(mut self, other: Poly2) -> Poly2 {
        self.terms.extend(other.terms);
        self
    }
}

/// `a(x, ξ) = d_min + (Σ_i ξ_i g_i(x))²` and its Hermite modes.
#[derive(Debug, Clone)]
pub struct DiffusionField {
    d_min: f64,
    g: Vec<Poly2>,
    modes: Vec<(MultiIndex, Poly2)>,
}

impl DiffusionField {
    /// Expansion for arbitrary `g_i`. With `ξ_i² = 1 + √2 ψ₂(ξ_i)` the modes are
    /// `a₀ = d_min + Σ g_i²`, `a_{2e_i} = √2 g_i²` and `a_{e_i+e_j} = 2 g_i g_j`.
    pub fn new(d_min: f64, g: Vec<Poly2>) -> Result<Self> {
        if d_min.is_nan() || d_min <= 0.0 {
            return Err(Error::InvalidInput(format!("d_min must be positive, got {d_min}")));
        }
        if g.is_empty() {
            return Err(Error::InvalidInput("diffusion needs at least one g-function".into()));
        }
        let m = g.len();
        let mut a0 = Poly2::constant(d_min);
        for gi in &g {
            a0 = a0.plus(gi.mul(gi));
        }
        let mut modes = vec![(MultiIndex::zeros(m), a0)];
        for (i, gi) in g.iter().enumerate() {
            modes.push((MultiIndex::unit(m, i, 2), gi.mul(gi).scale(2f64.sqrt())));
        }
        for i in 0..m {
            for j in i + 1..m {
                let mut mu = vec![0; m];
                mu[i] = 1;
                mu[j] = 1;
                modes.push((MultiIndex::new(mu), g[i].mul(&g[j]).scale(2.0)));
            }
        }
        Ok(DiffusionField { d_min, g, modes })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    /// Active coefficient modes `(μ, a_μ)`, zero mode first.
    pub fn modes(&self) -> &[(MultiIndex, Poly2)] {
        &self.modes
    }

    pub fn active_set(&self) -> Vec<MultiIndex> {
        self.modes.iter().map(|m| m.0.clone()).collect()
    }

    fn inner(&self, x: [f64; 2], xi: &[f64]) -> (f64, [f64; 2]) {
        let mut s = 0.0;
        let mut ds = [0.0; 2];
        for (gi, &z) in self.g.iter().zip(xi) {
            s += z * gi.value(x);
            let d = gi.grad(x);
            ds[0] += z * d[0];
            ds[1] += z * d[1];
        }
        (s, ds)
    }

    /// Direct pointwise evaluation `d_min + (Σ ξ_i g_i(x))²`.
    pub fn eval(&self, x: [f64; 2], xi: &[f64]) -> f64 {
        let (s, _) = self.inner(x, xi);
        self.d_min + s * s
    }

    pub fn grad(&self, x: [f64; 2], xi: &[f64]) -> [f64; 2] {
        let (s, ds) = self.inner(x, xi);
        [2.0 * s * ds[0], 2.0 * s * ds[1]]
    }
}

/// Modes of `d_min + (ξ₁x₁² + ξ₂x₁x₂ + ξ₃x₂² + ξ₄)²`.
pub fn expand_diffusion(d_min: f64) -> Result<DiffusionField> {
    DiffusionField::new(
        d_min,
        vec![
            Poly2::monomial(1.0, 2, 0),
            Poly2::monomial(1.0, 1, 1),
            Poly2::monomial(1.0, 0, 2),
            Poly2::constant(1.0),
        ],
    )
}

/// Two-dimensional variant `d_min + (ξ₁x₁x₂ + ξ₂)²`.
pub fn toy_diffusion(d_min: f64) -> Result<DiffusionField> {
    DiffusionField::new(d_min, vec![Poly2::monomial(1.0, 1, 1), Poly2::constant(1.0)])
}

/// `S(x) = sin(π/2 (x₁+1)) sin(π/2 (x₂+1))`
pub fn sine(x: [f64; 2]) -> f64 {
    (0.5 * PI * (x[0] + 1.0)).sin() * (0.5 * PI * (x[1] + 1.0)).sin()
}

pub fn sine_grad(x: [f64; 2]) -> [f64; 2] {
    let (a, b) = (0.5 * PI * (x[0] + 1.0), 0.5 * PI * (x[1] + 1.0));
    [0.5 * PI * a.cos() * b.sin(), 0.5 * PI * a.sin() * b.cos()]
}

/// `ΔS = −(π²/2) S`
pub fn sine_laplacian(x: [f64; 2]) -> f64 {
    -0.5 * PI * PI * sine(x)
}

/// Exact solution `u(x, t, ξ) = t⁴ S(x) Σ_{|α|≤q} c_α Ψ_α(ξ)` with
/// `c₀ = 1` and `c_α = η^{|α|}`.
#[derive(Debug, Clone)]
pub struct ManufacturedBenchmark {
    pub diffusion: DiffusionField,
    pub q: u32,
    pub eta: f64,
    pub t_final: f64,
}

impl ManufacturedBenchmark {
    pub fn new(diffusion: DiffusionField, q: u32, eta: f64, t_final: f64) -> Result<Self> {
        if t_final.is_nan() || t_final <= 0.0 {
            return Err(Error::InvalidInput(format!("T must be positive, got {t_final}")));
        }
        if !eta.is_finite() {
            return Err(Error::InvalidInput("eta must be finite".into()));
        }
        Ok(ManufacturedBenchmark {
            diffusion,
            q,
            eta,
            t_final,
        })
    }

    /// `M = 4`, `q = 6`, `η = 0.35`, `d_min = 0.2`, `T = 1`.
    pub fn standard() -> Self {
        Self::new(expand_diffusion(0.2).unwrap(), 6, 0.35, 1.0).unwrap()
    }

    /// `M = 2`, `q = 2`, `η = 0.35`, `d_min = 0.2`, `T = 1`.
    pub fn toy() -> Self {
        Self::new(toy_diffusion(0.2).unwrap(), 2, 0.35, 1.0).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.diffusion.dim()
    }

    /// `c_α`, zero for `|α| > q`.
    pub fn coefficient(&self, alpha: &MultiIndex) -> f64 {
        let d = alpha.degree();
        if d > self.q {
            0.0
        } else if d == 0 {
            1.0
        } else {
            self.eta.powi(d as i32)
        }
    }

    pub fn phi(&self, x: [f64; 2], t: f64) -> f64 {
        t.powi(4) * sine(x)
    }

    pub fn phi_grad(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let g = sine_grad(x);
        let t4 = t.powi(4);
        [t4 * g[0], t4 * g[1]]
    }

    /// `‖φ‖²` over `(0,T)×D`, i.e. `T⁹/9` since `∫_D S² = 1`.
    pub fn phi_norm_sq(&self) -> f64 {
        self.t_final.powi(9) / 9.0
    }

    /// `‖∇φ‖²` over `(0,T)×D`, i.e. `T⁹/9 · π²/2`.
    pub fn phi_grad_norm_sq(&self) -> f64 {
        self.phi_norm_sq() * 0.5 * PI * PI
    }

    /// `Σ_{p<|α|≤q} c_α²`, grouped by grade.
    pub fn tail_sum(&self, p: u32) -> f64 {
        let m = self.dim() as u64;
        ((p + 1)..=self.q)
            .map(|k| binomial(k as u64 + m - 1, m - 1) as f64 * self.eta.powi(2 * k as i32))
            .fold(0.0, |a, b| a + b)
    }

    /// `Σ_{α≠0} c_α²`, so `𝕍[u] = φ² · variance_factor`.
    pub fn variance_factor(&self) -> f64 {
        self.tail_sum(0)
    }

    /// Stochastic truncation error in `L²(0,T; L²(D))` when modes up to total
    /// degree `p` are retained.
    pub fn truncation_error(&self, p: u32) -> f64 {
        (self.phi_norm_sq() * self.tail_sum(p)).sqrt()
    }

    /// `G_q(ξ) = Σ_{|α|≤q} c_α Ψ_α(ξ)`
    pub fn stochastic_factor(&self, xi: &[f64]) -> Result<f64> {
        let basis = enumerate_basis(self.dim(), self.q);
        let vals = basis.eval_all(xi)?;
        Ok(basis
            .indices()
            .iter()
            .zip(vals)
            .map(|(a, v)| self.coefficient(a) * v)
            .sum())
    }

    pub fn exact(&self, x: [f64; 2], t: f64, xi: &[f64]) -> Result<f64> {
        Ok(self.phi(x, t) * self.stochastic_factor(xi)?)
    }

    /// `D(x, ξ) = ∇a·∇S + a ΔS`, so `∇·(a∇φ) = t⁴ D`.
    pub fn divergence_factor(&self, x: [f64; 2], xi: &[f64]) -> f64 {
        let ga = self.diffusion.grad(x, xi);
        let gs = sine_grad(x);
        ga[0] * gs[0] + ga[1] * gs[1] + self.diffusion.eval(x, xi) * sine_laplacian(x)
    }

    /// Pointwise forcing `f = ∂_t u − ∇·(a∇u)`.
    pub fn forcing(&self, x: [f64; 2], t: f64, xi: &[f64]) -> Result<f64> {
        let g = self.stochastic_factor(xi)?;
        Ok(g * (4.0 * t.powi(3) * sine(x) - t.powi(4) * self.divergence_factor(x, xi)))
    }

    /// Galerkin projection of the forcing onto the modes of `basis`.
    pub fn projected_forcing(&self, basis: &ChaosBasis) -> Result<ProjectedForcing> {
        if basis.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: basis.dim(),
            });
        }
        let big_p = basis.degree().max(self.q);
        let big = enumerate_basis(self.dim(), big_p);
        let table = TripleTable::new(big_p.max(2) as usize)?;
        let modes = self.diffusion.modes();
        let coeffs: Vec<f64> = big.indices().iter().map(|a| self.coefficient(a)).collect();
        let mut s = vec![vec![0.0; modes.len()]; basis.len()];
        for (k, (mu, _)) in modes.iter().enumerate() {
            let g = triple_products_with(&big, mu, &table)?;
            for &(row, col, v) in &g.entries {
                let beta = big.multi_index(row);
                if let Some(b) = basis.id_of(beta) {
                    s[b][k] += v * coeffs[col];
                }
            }
        }
        let c = basis.indices().iter().map(|a| self.coefficient(a)).collect();
        Ok(ProjectedForcing {
            c,
            s,
            modes: modes.iter().map(|m| m.1.clone()).collect(),
        })
    }
}

/// Modal forcing `f_β = 4t³ c_β S − t⁴ Σ_μ s_β^μ D_μ(x)` with
/// `s_β^μ = Σ_α [G_μ]_{βα} c_α` and `D_μ = ∇a_μ·∇S + a_μ ΔS`.
#[derive(Debug, Clone)]
pub struct ProjectedForcing {
    c: Vec<f64>,
    s: Vec<Vec<f64>>,
    modes: Vec<Poly2>,
}

impl ProjectedForcing {
    /// True when mode `beta` receives no forcing at all.
    pub fn is_zero_mode(&self, beta: usize) -> bool {
        self.c[beta] == 0.0 && self.s[beta].iter().all(|&v| v == 0.0)
    }
}

impl SeparableForcing for ProjectedForcing {
    fn n_modes(&self) -> usize {
        self.c.len()
    }

    fn n_terms(&self) -> usize {
        2
    }

    fn time_factors(&self, t: f64, out: &mut [f64]) {
        out[0] = 4.0 * t.powi(3);
        out[1] = -t.powi(4);
    }

    fn spatial_factors(&self, x: [f64; 2], out: &mut [f64]) {
        let sv = sine(x);
        let gs = sine_grad(x);
        let lap = sine_laplacian(x);
        let d: Vec<f64> = self
            .modes
            .iter()
            .map(|a| {
                let ga = a.grad(x);
                ga[0] * gs[0] + ga[1] * gs[1] + a.value(x) * lap
            })
            .collect();
        for (b, (cb, sb)) in self.c.iter().zip(&self.s).enumerate() {
            out[2 * b] = cb * sv;
            out[2 * b + 1] = sb.iter().zip(&d).map(|(s, dm)| s * dm).sum();
        }
    }
}

/// Error quantities of one stochastic Galerkin run.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub p: u32,
    pub n_xi: usize,
    pub full_l2: f64,
    pub full_h1: f64,
    pub mean_l2: f64,
    pub mean_h1: f64,
    pub var_l2: f64,
    pub var_h1: f64,
}

/// Compares the trajectory with the exact modes `c_α φ`, adding the exact tail
/// of the modes not retained in `basis`.
pub fn evaluate_errors(
    trajectory: &Trajectory,
    bench: &ManufacturedBenchmark,
    basis: &ChaosBasis,
    space: &FeSpace,
    time: &SlabTimeBasis,
) -> Result<ErrorReport> {
    let l = trajectory.layout;
    if l.n_modes != basis.len() || l.n_h != space.n_dofs() || l.n_time != time.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: basis.len() * time.n_nodes() * space.n_dofs(),
            got: l.len(),
        });
    }
    let grid = QuadGrid::for_space(space)?;
    let np = grid.len();
    let s: Vec<f64> = grid.points.iter().map(|&x| sine(x)).collect();
    let ds: Vec<[f64; 2]> = grid.points.iter().map(|&x| sine_grad(x)).collect();
    let coeffs: Vec<f64> = basis.indices().iter().map(|a| bench.coefficient(a)).collect();
    let sigma2 = bench.variance_factor();

    let mut nodal = vec![0.0; l.n_h];
    let mut val = vec![0.0; np];
    let mut grad = vec![[0.0; 2]; np];
    let mut var = vec![0.0; np];
    let mut var_grad = vec![[0.0; 2]; np];
    let (mut f0, mut f1, mut m0, mut m1, mut v0, mut v1) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);

    for (n, u) in trajectory.slabs.iter().enumerate() {
        let t0 = n as f64 * trajectory.tau;
        for (q, (&sq, &wq)) in time.quad.nodes.iter().zip(&time.quad.weights).enumerate() {
            let t = t0 + trajectory.tau * sq;
            let wt = trajectory.tau * wq;
            let t4 = t.powi(4);
            var.iter_mut().for_each(|v| *v = 0.0);
            var_grad.iter_mut().for_each(|v| *v = [0.0; 2]);
            for (alpha, &c) in coeffs.iter().enumerate() {
                nodal.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..l.n_time {
                    let li = time.quad_values[q][i];
                    let blk = &u[l.block_range(alpha, i)];
                    for (o, b) in nodal.iter_mut().zip(blk) {
                        *o += li * b;
                    }
                }
                grid.evaluate_into(space, &nodal, &mut val, &mut grad);
                let (mut e0, mut e1) = (0.0, 0.0);
                for k in 0..np {
                    let w = grid.weights[k];
                    let ex = c * t4 * s[k];
                    e0 += w * (val[k] - ex).powi(2);
                    e1 += w
                        * ((grad[k][0] - c * t4 * ds[k][0]).powi(2)
                            + (grad[k][1] - c * t4 * ds[k][1]).powi(2));
                }
                f0 += wt * e0;
                f1 += wt * e1;
                if alpha == 0 {
                    m0 += wt * e0;
                    m1 += wt * e1;
                } else {
                    for k in 0..np {
                        var[k] += val[k] * val[k];
                        var_grad[k][0] += 2.0 * val[k] * grad[k][0];
                        var_grad[k][1] += 2.0 * val[k] * grad[k][1];
                    }
                }
            }
            for k in 0..np {
                let w = grid.weights[k];
                let phi = t4 * s[k];
                let ex = sigma2 * phi * phi;
                let gx = 2.0 * sigma2 * phi * t4 * ds[k][0];
                let gy = 2.0 * sigma2 * phi * t4 * ds[k][1];
                v0 += wt * w * (var[k] - ex).powi(2);
                v1 += wt * w * ((var_grad[k][0] - gx).powi(2) + (var_grad[k][1] - gy).powi(2));
            }
        }
    }
    let tail = bench.tail_sum(basis.degree());
    f0 += tail * bench.phi_norm_sq();
    f1 += tail * bench.phi_grad_norm_sq();
    Ok(ErrorReport {
        p: basis.degree(),
        n_xi: basis.len(),
        full_l2: f0.sqrt(),
        full_h1: f1.sqrt(),
        mean_l2: m0.sqrt(),
        mean_h1: m1.sqrt(),
        var_l2: v0.sqrt(),
        var_h1: v1.sqrt(),
    })
}

/// Degree rate `r_p` and stochastic-dimension rate `r_ξ` between consecutive
/// entries. The first entry, and any pair with a non-positive error or equal
/// dimensions, has no rate.
pub fn rates(errors: &[f64], n_xi: &[usize]) -> Vec<Option<(f64, f64)>> {
    let mut out = vec![None];
    for i in 1..errors.len() {
        let (e0, e1) = (errors[i - 1], errors[i]);
        if !(e0 > 0.0 && e1 > 0.0) || n_xi[i] == n_xi[i - 1] {
            out.push(None);
            continue;
        }
        let rp = (e0 / e1).ln();
        let rx = rp / (n_xi[i] as f64 / n_xi[i - 1] as f64).ln();
        out.push(Some((rp, rx)));
    }
    out
}

/// Discretization parameters shared by the stochastic Galerkin studies.
#[derive(Debug, Clone, PartialEq)]
pub struct SgConfig {
    pub level: u32,
    pub k: usize,
    pub r: usize,
    pub slabs: usize,
    pub p: u32,
    pub fgmres: FgmresConfig,
}

/// Spatial operators that do not depend on the chaos degree.
#[derive(Debug, Clone)]
pub struct SgSpatial {
    pub space: FeSpace,
    pub grid: QuadGrid,
    pub mass: CsrMatrix,
    pub stiffness: Vec<(MultiIndex, CsrMatrix)>,
}

impl SgSpatial {
    pub fn new(bench: &ManufacturedBenchmark, level: u32, k: usize) -> Result<Self> {
        let space = FeSpace::new(QuadMesh::from_level(level)?, k)?;
        let grid = QuadGrid::for_space(&space)?;
        let mass = assemble_mass(&space)?;
        let stiffness = bench
            .diffusion
            .modes()
            .iter()
            .map(|(mu, a)| Ok((mu.clone(), assemble_weighted_stiffness(&space, |x| a.value(x))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SgSpatial {
            space,
            grid,
            mass,
            stiffness,
        })
    }
}

/// Outcome of one stochastic Galerkin solve.
#[derive(Debug, Clone)]
pub struct SgRun {
    pub report: ErrorReport,
    pub stats: SolverStats,
    pub trajectory: Trajectory,
}

/// Builds the slab operator for chaos degree `p` on precomputed spatial data.
pub fn build_slab_operator(
    spatial: &SgSpatial,
    basis: &ChaosBasis,
    time: SlabTimeBasis,
) -> Result<SlabOperator> {
    let max_mu = spatial
        .stiffness
        .iter()
        .flat_map(|(mu, _)| mu.as_slice().iter().copied())
        .max()
        .unwrap_or(0);
    let table = TripleTable::new(basis.degree().max(max_mu) as usize)?;
    let terms = spatial
        .stiffness
        .iter()
        .map(|(mu, k)| {
            let g = triple_products_with(basis, mu, &table)?;
            Ok(CouplingTerm::new(&g, basis.len(), k.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    SlabOperator::new(basis.len(), time, spatial.mass.clone(), terms)
}

/// Solves the benchmark with chaos degree `config.p` and evaluates all errors.
pub fn run_sg_with(
    bench: &ManufacturedBenchmark,
    spatial: &SgSpatial,
    config: &SgConfig,
) -> Result<SgRun> {
    if config.slabs == 0 {
        return Err(Error::InvalidInput("at least one slab is required".into()));
    }
    let start = Instant::now();
    let basis = enumerate_basis(bench.dim(), config.p);
    let tau = bench.t_final / config.slabs as f64;
    let time = build_basis(config.r, tau)?;
    let op = build_slab_operator(spatial, &basis, time.clone())?;
    let prec = build_block_jacobi(&op)?;
    let forcing = bench.projected_forcing(&basis)?;
    let loads = LoadAssembler::new(&spatial.space, &spatial.grid, &forcing);
    let (trajectory, mut stats) = march(
        &op,
        &prec,
        &loads,
        &forcing,
        None,
        config.slabs,
        &config.fgmres,
    )?;
    stats.wall = start.elapsed();
    // slab size counted over all spatial nodes, boundary included
    stats.n_sg_slab = sg_slab_size(bench.dim(), config.p, config.r, spatial.space.n_total_nodes()) as usize;
    let report = evaluate_errors(&trajectory, bench, &basis, &spatial.space, &time)?;
    Ok(SgRun {
        report,
        stats,
        trajectory,
    })
}

pub fn run_sg(bench: &ManufacturedBenchmark, config: &SgConfig) -> Result<SgRun> {
    let spatial = SgSpatial::new(bench, config.level, config.k)?;
    run_sg_with(bench, &spatial, config)
}

/// `N_SG,slab = N_ξ · (r+1) · N_x`
pub fn sg_slab_size(m: usize, p: u32, r: usize, n_x: usize) -> u64 {
    basis_size(m, p) as u64 * (r as u64 + 1) * n_x as u64
}
