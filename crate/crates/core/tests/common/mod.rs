//! Shared oracles for the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use sgheat::benchmark::{build_slab_operator, toy_diffusion, DiffusionField, Poly2, SgSpatial};
use sgheat::chaos::{enumerate_basis, triple_products, GaussHermiteRule};
use sgheat::sparse::CsrMatrix;
use sgheat::spatial_fem::{assemble_mass, assemble_weighted_stiffness, FeSpace, QuadGrid, QuadMesh};
use sgheat::time_slab::build_basis;

fn dense(m: &CsrMatrix) -> DMatrix<f64> {
    let d = m.to_dense();
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| d[i][j])
}

fn small(n: usize, f: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, f)
}

fn diffusion(m: usize) -> DiffusionField {
    if m == 1 {
        DiffusionField::new(0.3, vec![Poly2::monomial(1.0, 1, 0).plus(Poly2::constant(0.5))]).unwrap()
    } else {
        toy_diffusion(0.2).unwrap()
    }
}

pub struct Case {
    pub m: usize,
    pub p: u32,
    pub r: usize,
    pub cells: usize,
    pub k: usize,
}

/// Largest relative difference of `apply` and `apply_transfer` from the
/// assembled Kronecker products.
pub fn kronecker_defect(case: &Case, x_seed: u64) -> f64 {
    let field = diffusion(case.m);
    let space = FeSpace::new(QuadMesh::new(case.cells).unwrap(), case.k).unwrap();
    let stiffness = field
        .modes()
        .iter()
        .map(|(mu, a)| (mu.clone(), assemble_weighted_stiffness(&space, |x| a.value(x)).unwrap()))
        .collect::<Vec<_>>();
    let spatial = SgSpatial {
        grid: QuadGrid::for_space(&space).unwrap(),
        mass: assemble_mass(&space).unwrap(),
        space,
        stiffness,
    };
    let basis = enumerate_basis(case.m, case.p);
    let time = build_basis(case.r, 0.37).unwrap();
    let op = build_slab_operator(&spatial, &basis, time.clone()).unwrap();
    let (nb, nt) = (basis.len(), case.r + 1);
    let nh = spatial.mass.nrows();
    let n = nb * nt * nh;
    assert_eq!(op.layout.len(), n);

    let mass = dense(&spatial.mass);
    let at = small(nt, |i, j| time.a_t[i][j]);
    let bt = small(nt, |i, j| time.b_t[i][j]);
    let ct = small(nt, |i, j| time.c_t[i][j]);
    let eye = DMatrix::<f64>::identity(nb, nb);
    let mut a = eye.kronecker(&at.kronecker(&mass));
    for (mu, k) in &spatial.stiffness {
        let g = triple_products(&basis, mu).unwrap();
        let mut gd = DMatrix::<f64>::zeros(nb, nb);
        for &(i, j, v) in &g.entries {
            gd[(i, j)] = v;
        }
        a += gd.kronecker(&bt.kronecker(&dense(k)));
    }
    let j = eye.kronecker(&ct.kronecker(&mass));

    let x: Vec<f64> = (0..n)
        .map(|i| (((i as u64 + 1) * 2654435761 + x_seed) % 1000) as f64 / 500.0 - 1.0)
        .collect();
    let xv = DVector::from_column_slice(&x);
    let mut worst = 0.0f64;
    for (reference, transfer) in [(&a * &xv, false), (&j * &xv, true)] {
        let mut y = vec![0.0; n];
        if transfer {
            op.apply_transfer(&x, &mut y).unwrap();
        } else {
            op.apply(&x, &mut y).unwrap();
        }
        let diff = (DVector::from_column_slice(&y) - &reference).norm();
        worst = worst.max(diff / reference.norm());
    }
    worst
}

/// Every configuration with `M ≤ 2`, `p ≤ 2`, `r ≤ 1` and at most 3×3 cells.
pub fn small_cases() -> Vec<Case> {
    let mut out = Vec::new();
    for m in 1..=2 {
        for p in 0..=2 {
            for r in 0..=1 {
                for cells in 1..=3 {
                    for k in 1..=2 {
                        // a single Q1 cell has no interior degrees of freedom
                        if cells > 1 || k > 1 {
                            out.push(Case { m, p, r, cells, k });
                        }
                    }
                }
            }
        }
    }
    out
}

/// `E[f]` over `R^M` with a tensor Gauss–Hermite rule.
pub fn tensor_expectation(m: usize, rule: &GaussHermiteRule, f: impl Fn(&[f64]) -> f64) -> f64 {
    let q = rule.order();
    let mut idx = vec![0usize; m];
    let mut xi = vec![0.0; m];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for d in 0..m {
            xi[d] = rule.nodes[idx[d]];
            w *= rule.weights[idx[d]];
        }
        total += w * f(&xi);
        let mut d = 0;
        loop {
            if d == m {
                return total;
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
