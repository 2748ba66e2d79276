//! Continuous `Q_k` Lagrange elements on a uniform square mesh of `(−1,1)²`
//! with homogeneous Dirichlet conditions imposed by eliminating boundary
//! nodes.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, gauss_lobatto_points};
use crate::sparse::CsrMatrix;

/// Uniform mesh of `(−1,1)²` by `cells_per_side²` axis-aligned squares.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadMesh {
    cells_per_side: usize,
}

impl QuadMesh {
    pub fn new(cells_per_side: usize) -> Result<Self> {
        if cells_per_side == 0 {
            return Err(Error::InvalidInput("mesh needs at least one cell".into()));
        }
        Ok(QuadMesh { cells_per_side })
    }

    /// `2^level` cells per side.
    pub fn from_level(level: u32) -> Result<Self> {
        if level > 12 {
            return Err(Error::InvalidInput(format!("mesh level {level} too large")));
        }
        Self::new(1 << level)
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }

    pub fn n_cells(&self) -> usize {
        self.cells_per_side * self.cells_per_side
    }

    pub fn h(&self) -> f64 {
        2.0 / self.cells_per_side as f64
    }

    /// Lower-left corner of cell `c` (row-major, x fastest).
    pub fn cell_origin(&self, c: usize) -> [f64; 2] {
        let n = self.cells_per_side;
        let h = self.h();
        [-1.0 + (c % n) as f64 * h, -1.0 + (c / n) as f64 * h]
    }

    pub fn vertices(&self) -> Vec<[f64; 2]> {
        let n = self.cells_per_side + 1;
        let h = self.h();
        (0..n * n)
            .map(|v| [-1.0 + (v % n) as f64 * h, -1.0 + (v / n) as f64 * h])
            .collect()
    }

    /// Counter-clockwise vertex ids of cell `c`.
    pub fn cell_vertices(&self, c: usize) -> [usize; 4] {
        let n = self.cells_per_side;
        let (cx, cy) = (c % n, c / n);
        let v = |i: usize, j: usize| j * (n + 1) + i;
        [v(cx, cy), v(cx + 1, cy), v(cx + 1, cy + 1), v(cx, cy + 1)]
    }
}

/// One-dimensional Lagrange basis on Gauss–Lobatto points of `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Lagrange1d {
    nodes: Vec<f64>,
}

impl Lagrange1d {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("element degree must be >= 1".into()));
        }
        Ok(Lagrange1d {
            nodes: gauss_lobatto_points(k + 1)?,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Values and derivatives of all basis functions at `x`.
    pub fn eval(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.nodes.len();
        let mut val = vec![0.0; n];
        let mut der = vec![0.0; n];
        for j in 0..n {
            let xj = self.nodes[j];
            let mut v = 1.0;
            let mut d = 0.0;
            for m in 0..n {
                if m == j {
                    continue;
                }
                let denom = xj - self.nodes[m];
                d = d * (x - self.nodes[m]) / denom + v / denom;
                v *= (x - self.nodes[m]) / denom;
            }
            val[j] = v;
            der[j] = d;
        }
        (val, der)
    }
}

/// Which nodes of the space carry unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dofs {
    /// Interior nodes only; boundary values are zero.
    Interior,
    /// All nodes, boundary included.
    All,
}

/// `Q_k` space on a [`QuadMesh`].
#[derive(Debug, Clone)]
pub struct FeSpace {
    mesh: QuadMesh,
    k: usize,
    basis: Lagrange1d,
    n_side: usize,
}

impl FeSpace {
    pub fn new(mesh: QuadMesh, k: usize) -> Result<Self> {
        let basis = Lagrange1d::new(k)?;
        let n_side = k * mesh.cells_per_side() + 1;
        if n_side < 3 {
            return Err(Error::InvalidInput(
                "space has no interior degrees of freedom".into(),
            ));
        }
        Ok(FeSpace {
            mesh,
            k,
            basis,
            n_side,
        })
    }

    pub fn mesh(&self) -> &QuadMesh {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn basis_1d(&self) -> &Lagrange1d {
        &self.basis
    }

    /// Interior unknowns `N_h = (k·n − 1)²`.
    pub fn n_dofs(&self) -> usize {
        (self.n_side - 2) * (self.n_side - 2)
    }

    /// All nodes including the boundary, `(k·n + 1)²`.
    pub fn n_total_nodes(&self) -> usize {
        self.n_side * self.n_side
    }

    pub fn n_unknowns(&self, dofs: Dofs) -> usize {
        match dofs {
            Dofs::Interior => self.n_dofs(),
            Dofs::All => self.n_total_nodes(),
        }
    }

    fn node_coord_1d(&self, i: usize) -> f64 {
        let (c, l) = if i == self.n_side - 1 {
            (self.mesh.cells_per_side() - 1, self.k)
        } else {
            (i / self.k, i % self.k)
        };
        -1.0 + self.mesh.h() * (c as f64 + 0.5 * (self.basis.nodes[l] + 1.0))
    }

    fn node_id(&self, i: usize, j: usize, dofs: Dofs) -> Option<usize> {
        match dofs {
            Dofs::All => Some(j * self.n_side + i),
            Dofs::Interior => {
                let last = self.n_side - 1;
                if i == 0 || j == 0 || i == last || j == last {
                    None
                } else {
                    Some((j - 1) * (self.n_side - 2) + (i - 1))
                }
            }
        }
    }

    /// Coordinates of every unknown in the chosen numbering.
    pub fn dof_coordinates(&self, dofs: Dofs) -> Vec<[f64; 2]> {
        let mut out = vec![[0.0; 2]; self.n_unknowns(dofs)];
        for j in 0..self.n_side {
            for i in 0..self.n_side {
                if let Some(id) = self.node_id(i, j, dofs) {
                    out[id] = [self.node_coord_1d(i), self.node_coord_1d(j)];
                }
            }
        }
        out
    }

    /// Boundary flag per unknown of the boundary-inclusive numbering.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let last = self.n_side - 1;
        (0..self.n_total_nodes())
            .map(|id| {
                let (i, j) = (id % self.n_side, id / self.n_side);
                i == 0 || j == 0 || i == last || j == last
            })
            .collect()
    }

    /// Unknown ids of the `(k+1)²` local nodes of cell `c`, x fastest.
    pub fn cell_dofs(&self, c: usize, dofs: Dofs) -> Vec<Option<usize>> {
        let n = self.mesh.cells_per_side();
        let (cx, cy) = (c % n, c / n);
        let k = self.k;
        let mut out = Vec::with_capacity((k + 1) * (k + 1));
        for ly in 0..=k {
            for lx in 0..=k {
                out.push(self.node_id(cx * k + lx, cy * k + ly, dofs));
            }
        }
        out
    }

    /// Reference-cell tables for an `nq`-point Gauss rule per direction.
    pub fn ref_tables(&self, nq: usize) -> Result<RefTables> {
        RefTables::new(&self.basis, nq)
    }
}

/// Tensor Gauss points on `[-1,1]²` with basis values and reference gradients.
#[derive(Debug, Clone)]
pub struct RefTables {
    pub n_points: usize,
    pub n_local: usize,
    /// reference coordinates of each point
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// `phi[q * n_local + l]`
    pub phi: Vec<f64>,
    pub dphi: Vec<[f64; 2]>,
}

impl RefTables {
    fn new(basis: &Lagrange1d, nq: usize) -> Result<Self> {
        let rule = gauss_legendre(nq)?;
        let nl1 = basis.nodes.len();
        let n_local = nl1 * nl1;
        let tab: Vec<(Vec<f64>, Vec<f64>)> = rule.nodes.iter().map(|&x| basis.eval(x)).collect();
        let mut points = Vec::with_capacity(nq * nq);
        let mut weights = Vec::with_capacity(nq * nq);
        let mut phi = Vec::with_capacity(nq * nq * n_local);
        let mut dphi = Vec::with_capacity(nq * nq * n_local);
        for qy in 0..nq {
            for qx in 0..nq {
                points.push([rule.nodes[qx], rule.nodes[qy]]);
                weights.push(rule.weights[qx] * rule.weights[qy]);
                let (vx, dx) = &tab[qx];
                let (vy, dy) = &tab[qy];
                for ly in 0..nl1 {
                    for lx in 0..nl1 {
                        phi.push(vx[lx] * vy[ly]);
                        dphi.push([dx[lx] * vy[ly], vx[lx] * dy[ly]]);
                    }
                }
            }
        }
        Ok(RefTables {
            n_points: nq * nq,
            n_local,
            points,
            weights,
            phi,
            dphi,
        })
    }
}

fn assemble<F>(space: &FeSpace, dofs: Dofs, nq: usize, local: F) -> Result<CsrMatrix>
where
    F: Fn(&RefTables, [f64; 2], f64, &mut [f64]) + Sync,
{
    let tables = space.ref_tables(nq)?;
    let nl = tables.n_local;
    let h = space.mesh.h();
    let triplets: Vec<(usize, usize, f64)> = (0..space.mesh.n_cells())
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut ke = vec![0.0; nl * nl];
            local(&tables, space.mesh.cell_origin(c), h, &mut ke);
            let ids = space.cell_dofs(c, dofs);
            let mut out = Vec::with_capacity(nl * nl);
            for (a, ia) in ids.iter().enumerate() {
                let Some(ia) = ia else { continue };
                for (b, ib) in ids.iter().enumerate() {
                    let Some(ib) = ib else { continue };
                    out.push((*ia, *ib, ke[a * nl + b]));
                }
            }
            out
        })
        .collect();
    let n = space.n_unknowns(dofs);
    Ok(CsrMatrix::from_triplets(n, n, triplets))
}

fn physical_point(origin: [f64; 2], h: f64, r: [f64; 2]) -> [f64; 2] {
    [
        origin[0] + 0.5 * h * (r[0] + 1.0),
        origin[1] + 0.5 * h * (r[1] + 1.0),
    ]
}

/// Mass matrix `∫ φ_l φ_m` with a `(k+1)`-point rule per direction.
pub fn assemble_mass_with(space: &FeSpace, dofs: Dofs) -> Result<CsrMatrix> {
    assemble(space, dofs, space.k + 1, |t, _, h, ke| {
        let nl = t.n_local;
        let jac = 0.25 * h * h;
        for q in 0..t.n_points {
            let w = t.weights[q] * jac;
            let phi = &t.phi[q * nl..(q + 1) * nl];
            for a in 0..nl {
                let wa = w * phi[a];
                for b in 0..nl {
                    ke[a * nl + b] += wa * phi[b];
                }
            }
        }
    })
}

/// Stiffness matrix `∫ a ∇φ_l·∇φ_m` with a `(k+2)`-point rule per direction.
pub fn assemble_weighted_stiffness_with<A>(space: &FeSpace, a: A, dofs: Dofs) -> Result<CsrMatrix>
where
    A: Fn([f64; 2]) -> f64 + Sync,
{
    assemble(space, dofs, space.k + 2, |t, origin, h, ke| {
        let nl = t.n_local;
        let jac = 0.25 * h * h;
        let g = 2.0 / h;
        for q in 0..t.n_points {
            let x = physical_point(origin, h, t.points[q]);
            let w = t.weights[q] * jac * a(x) * g * g;
            if w == 0.0 {
                continue;
            }
            let d = &t.dphi[q * nl..(q + 1) * nl];
            for i in 0..nl {
                for j in 0..nl {
                    ke[i * nl + j] += w * (d[i][0] * d[j][0] + d[i][1] * d[j][1]);
                }
            }
        }
    })
}

pub fn assemble_mass(space: &FeSpace) -> Result<CsrMatrix> {
    assemble_mass_with(space, Dofs::Interior)
}

pub fn assemble_weighted_stiffness<A>(space: &FeSpace, a: A) -> Result<CsrMatrix>
where
    A: Fn([f64; 2]) -> f64 + Sync,
{
    assemble_weighted_stiffness_with(space, a, Dofs::Interior)
}

/// Nodal interpolant on the chosen unknowns. With [`Dofs::Interior`] the
/// boundary values are dropped, i.e. taken as zero.
pub fn interpolate_with<G>(space: &FeSpace, g: G, dofs: Dofs) -> Vec<f64>
where
    G: Fn([f64; 2]) -> f64,
{
    space.dof_coordinates(dofs).into_iter().map(g).collect()
}

pub fn interpolate<G>(space: &FeSpace, g: G) -> Vec<f64>
where
    G: Fn([f64; 2]) -> f64,
{
    interpolate_with(space, g, Dofs::Interior)
}

/// Physical quadrature points of every cell, used for field evaluation,
/// load integrals and error norms. Points are stored cell by cell.
#[derive(Debug, Clone)]
pub struct QuadGrid {
    pub tables: RefTables,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl QuadGrid {
    pub fn new(space: &FeSpace, nq: usize) -> Result<Self> {
        let tables = space.ref_tables(nq)?;
        let h = space.mesh.h();
        let jac = 0.25 * h * h;
        let mut points = Vec::with_capacity(space.mesh.n_cells() * tables.n_points);
        let mut weights = Vec::with_capacity(points.capacity());
        for c in 0..space.mesh.n_cells() {
            let origin = space.mesh.cell_origin(c);
            for q in 0..tables.n_points {
                points.push(physical_point(origin, h, tables.points[q]));
                weights.push(tables.weights[q] * jac);
            }
        }
        Ok(QuadGrid {
            tables,
            points,
            weights,
        })
    }

    /// Default rule with `k+2` points per direction.
    pub fn for_space(space: &FeSpace) -> Result<Self> {
        Self::new(space, space.degree() + 2)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Values and gradients of the interior-numbered field `v` at every point.
    pub fn evaluate_into(
        &self,
        space: &FeSpace,
        v: &[f64],
        val: &mut [f64],
        grad: &mut [[f64; 2]],
    ) {
        let t = &self.tables;
        let nl = t.n_local;
        let np = t.n_points;
        let g = 2.0 / space.mesh.h();
        val.par_chunks_mut(np)
            .zip(grad.par_chunks_mut(np))
            .enumerate()
            .for_each(|(c, (vc, gc))| {
                let coeffs: Vec<f64> = space
                    .cell_dofs(c, Dofs::Interior)
                    .into_iter()
                    .map(|id| id.map_or(0.0, |i| v[i]))
                    .collect();
                for q in 0..np {
                    let phi = &t.phi[q * nl..(q + 1) * nl];
                    let d = &t.dphi[q * nl..(q + 1) * nl];
                    let (mut s, mut gx, mut gy) = (0.0, 0.0, 0.0);
                    for l in 0..nl {
                        s += coeffs[l] * phi[l];
                        gx += coeffs[l] * d[l][0];
                        gy += coeffs[l] * d[l][1];
                    }
                    vc[q] = s;
                    gc[q] = [g * gx, g * gy];
                }
            });
    }

    /// Load vector `∫ f φ_m` (interior numbering) from values of `f` at every
    /// grid point.
    pub fn load_vector(&self, space: &FeSpace, f: &[f64], dofs: Dofs) -> Vec<f64> {
        let t = &self.tables;
        let nl = t.n_local;
        let np = t.n_points;
        let locals: Vec<Vec<f64>> = (0..space.mesh.n_cells())
            .into_par_iter()
            .map(|c| {
                let mut fe = vec![0.0; nl];
                for q in 0..np {
                    let wf = self.weights[c * np + q] * f[c * np + q];
                    let phi = &t.phi[q * nl..(q + 1) * nl];
                    for l in 0..nl {
                        fe[l] += wf * phi[l];
                    }
                }
                fe
            })
            .collect();
        let mut out = vec![0.0; space.n_unknowns(dofs)];
        for (c, fe) in locals.iter().enumerate() {
            for (l, id) in space.cell_dofs(c, dofs).into_iter().enumerate() {
                if let Some(i) = id {
                    out[i] += fe[l];
                }
            }
        }
        out
    }
}

/// `(‖v − g‖_{L²}, ‖∇v − ∇g‖_{L²})` with a `(k+2)`-point rule per direction.
pub fn l2_and_h1_errors<G, D>(space: &FeSpace, v: &[f64], g: G, grad_g: D) -> Result<(f64, f64)>
where
    G: Fn([f64; 2]) -> f64,
    D: Fn([f64; 2]) -> [f64; 2],
{
    if v.len() != space.n_dofs() {
        return Err(Error::DimensionMismatch {
            expected: space.n_dofs(),
            got: v.len(),
        });
    }
    let grid = QuadGrid::for_space(space)?;
    let mut val = vec![0.0; grid.len()];
    let mut grad = vec![[0.0; 2]; grid.len()];
    grid.evaluate_into(space, v, &mut val, &mut grad);
    let (mut e0, mut e1) = (0.0, 0.0);
    for q in 0..grid.len() {
        let x = grid.points[q];
        let w = grid.weights[q];
        let dg = grad_g(x);
        e0 += w * (val[q] - g(x)).powi(2);
        e1 += w * ((grad[q][0] - dg[0]).powi(2) + (grad[q][1] - dg[1]).powi(2));
    }
    Ok((e0.sqrt(), e1.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn space(level: u32, k: usize) -> FeSpace {
        FeSpace::new(QuadMesh::from_level(level).unwrap(), k).unwrap()
    }

    fn sine(x: [f64; 2]) -> f64 {
        (0.5 * PI * (x[0] + 1.0)).sin() * (0.5 * PI * (x[1] + 1.0)).sin()
    }

    fn sine_grad(x: [f64; 2]) -> [f64; 2] {
        let (a, b) = (0.5 * PI * (x[0] + 1.0), 0.5 * PI * (x[1] + 1.0));
        [0.5 * PI * a.cos() * b.sin(), 0.5 * PI * a.sin() * b.cos()]
    }

    #[test]
    fn mesh_geometry() {
        let m = QuadMesh::from_level(2).unwrap();
        assert_eq!(m.cells_per_side(), 4);
        assert_eq!(m.h(), 0.5);
        assert_eq!(m.vertices().len(), 25);
        assert_eq!(m.cell_vertices(5), [6, 7, 12, 11]);
        assert_eq!(m.cell_origin(5), [-0.5, -0.5]);
    }

    #[test]
    fn dof_counts() {
        for k in 1..=3 {
            for level in 1..=3 {
                let s = space(level, k);
                let n = k * (1 << level);
                assert_eq!(s.n_dofs(), (n - 1) * (n - 1));
                assert_eq!(s.n_total_nodes(), (n + 1) * (n + 1));
            }
        }
        assert!(FeSpace::new(QuadMesh::new(1).unwrap(), 1).is_err());
    }

    #[test]
    fn lagrange_property() {
        let b = Lagrange1d::new(3).unwrap();
        for (i, &x) in b.nodes().iter().enumerate() {
            let (v, _) = b.eval(x);
            for (j, vj) in v.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((vj - e).abs() < 1e-14);
            }
        }
        // derivatives sum to zero (partition of unity)
        let (v, d) = b.eval(0.3);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(d.iter().sum::<f64>().abs() < 1e-13);
    }

    #[test]
    fn mass_total_is_area() {
        for k in 1..=3 {
            let s = space(2, k);
            let m = assemble_mass_with(&s, Dofs::All).unwrap();
            let total: f64 = m.values().iter().sum();
            assert!((total - 4.0).abs() < 1e-12);
            assert!(m.symmetry_defect() < 1e-14);
        }
    }

    #[test]
    fn q1_interior_mass_diagonal() {
        // reference bilinear mass diagonal on [-1,1]² is 4/9; scaled by h²/4
        // and summed over the 4 cells sharing the centre node
        let s = space(1, 1);
        let m = assemble_mass(&s).unwrap();
        assert_eq!(m.nrows(), 1);
        let h: f64 = 1.0;
        assert!((m.get(0, 0) - 4.0 * (4.0 / 9.0) * h * h / 4.0).abs() < 1e-14);
    }

    #[test]
    fn stiffness_examples() {
        let s = space(2, 2);
        let z = assemble_weighted_stiffness(&s, |_| 0.0).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let k1 = assemble_weighted_stiffness_with(&s, |_| 1.0, Dofs::All).unwrap();
        let v = interpolate_with(&s, |x| x[0], Dofs::All);
        let kv = k1.mul_vec(&v);
        let energy: f64 = v.iter().zip(&kv).map(|(a, b)| a * b).sum();
        assert!((energy - 4.0).abs() < 1e-12);
        let a = |x: [f64; 2]| x[0].powi(4) + x[0] * x[0] * x[1] * x[1] + x[1].powi(4) + 1.2;
        let ka = assemble_weighted_stiffness(&s, a).unwrap();
        assert!(ka.symmetry_defect() <= 1e-12 * ka.max_abs());
    }

    #[test]
    fn interpolation_of_basis_function_is_unit_vector() {
        let s = space(2, 2);
        let coords = s.dof_coordinates(Dofs::Interior);
        let target = 7;
        let mut e = vec![0.0; s.n_dofs()];
        e[target] = 1.0;
        // nodal interpolation of a field that is 1 at the target node only
        let v = interpolate(&s, |x| if x == coords[target] { 1.0 } else { 0.0 });
        assert_eq!(v, e);
        assert!(interpolate(&s, |_| 0.0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn exact_representation_errors() {
        let s = space(2, 2);
        let g = |x: [f64; 2]| (1.0 - x[0] * x[0]) * (1.0 - x[1] * x[1]);
        let dg = |x: [f64; 2]| [-2.0 * x[0] * (1.0 - x[1] * x[1]), -2.0 * x[1] * (1.0 - x[0] * x[0])];
        let v = interpolate(&s, g);
        let (e0, e1) = l2_and_h1_errors(&s, &v, g, dg).unwrap();
        assert!(e0 < 1e-12 && e1 < 1e-10);
        let (e0, e1) = l2_and_h1_errors(&s, &vec![0.0; s.n_dofs()], |_| 1.0, |_| [0.0, 0.0]).unwrap();
        assert!((e0 - 2.0).abs() < 1e-12 && e1 == 0.0);
    }

    #[test]
    fn sine_interpolation_rates() {
        for k in 1..=3 {
            let errs: Vec<(f64, f64)> = (2..=4)
                .map(|l| {
                    let s = space(l, k);
                    l2_and_h1_errors(&s, &interpolate(&s, sine), sine, sine_grad).unwrap()
                })
                .collect();
            let r0 = (errs[1].0 / errs[2].0).log2();
            let r1 = (errs[1].1 / errs[2].1).log2();
            assert!((r0 - (k as f64 + 1.0)).abs() < 0.15, "k={k} L2 rate {r0}");
            assert!((r1 - k as f64).abs() < 0.15, "k={k} H1 rate {r1}");
        }
    }

    #[test]
    fn load_vector_of_constant() {
        let s = space(2, 2);
        let grid = QuadGrid::for_space(&s).unwrap();
        let f = vec![3.0; grid.len()];
        let b = grid.load_vector(&s, &f, Dofs::All);
        assert!((b.iter().sum::<f64>() - 12.0).abs() < 1e-12);
    }
}
