mod common;

use common::tensor_expectation;
use proptest::prelude::*;
use sgheat::chaos::*;

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Closed form of `E[ψ_a ψ_b ψ_c]` for a standard normal variable.
fn triple_closed_form(a: u32, b: u32, c: u32) -> f64 {
    let sum = a + b + c;
    if sum % 2 == 1 {
        return 0.0;
    }
    let s = sum / 2;
    if s < a || s < b || s < c {
        return 0.0;
    }
    factorial(a) * factorial(b) * factorial(c)
        / (factorial(s - a) * factorial(s - b) * factorial(s - c))
        / (factorial(a) * factorial(b) * factorial(c)).sqrt()
}

#[test]
fn basis_sizes_for_four_variables() {
    let sizes: Vec<usize> = (0..=6).map(|p| enumerate_basis(4, p).len()).collect();
    assert_eq!(sizes, vec![1, 5, 15, 35, 70, 126, 210]);
}

#[test]
fn orthonormality_by_tensor_quadrature() {
    for (m, p) in [(1, 6), (2, 4), (3, 3), (4, 2)] {
        let basis = enumerate_basis(m, p);
        let rule = gauss_hermite(p as usize + 1).unwrap();
        for a in basis.indices() {
            for b in basis.indices() {
                let e = tensor_expectation(m, &rule, |xi| {
                    multivariate_eval(&basis, a, xi).unwrap() * multivariate_eval(&basis, b, xi).unwrap()
                });
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((e - expect).abs() < 1e-10, "{a} {b}: {e}");
            }
        }
    }
}

#[test]
fn factorized_triple_products_match_tensor_quadrature() {
    let basis = enumerate_basis(2, 3);
    let rule = gauss_hermite(6).unwrap();
    let modes = enumerate_basis(2, 2);
    for mu in modes.indices() {
        let g = triple_products(&basis, mu).unwrap();
        let mut dense = vec![vec![0.0; basis.len()]; basis.len()];
        for &(i, j, v) in &g.entries {
            dense[i][j] = v;
        }
        for (i, a) in basis.indices().iter().enumerate() {
            for (j, b) in basis.indices().iter().enumerate() {
                let e = tensor_expectation(2, &rule, |xi| {
                    let pm: f64 = mu.as_slice().iter().zip(xi).map(|(&k, &y)| hermite_eval(k as usize, y)).product();
                    pm * multivariate_eval(&basis, a, xi).unwrap() * multivariate_eval(&basis, b, xi).unwrap()
                });
                assert!((dense[i][j] - e).abs() < 1e-10, "mu={mu} {a} {b}");
            }
        }
    }
}

#[test]
fn gauss_hermite_exact_through_degree_2q_minus_1() {
    for q in 1..=12usize {
        let rule = gauss_hermite(q).unwrap();
        for k in 0..2 * q as i32 {
            // (k−1)!! is E[y^k] for even k and, up to √(2/π), E|y|^k for odd k
            let dfact: f64 = ((k % 2 + 1)..k).step_by(2).map(f64::from).product();
            let moment = if k % 2 == 1 { 0.0 } else { dfact };
            let got = rule.integrate(|y| y.powi(k));
            assert!((got - moment).abs() <= 1e-12 * dfact.max(1.0), "q={q} k={k}: {got} vs {moment}");
        }
    }
}

#[test]
fn projection_recovers_polynomial_coefficients() {
    let basis = enumerate_basis(2, 3);
    let rule = gauss_hermite(4).unwrap();
    let coeffs: Vec<f64> = (0..basis.len()).map(|i| 0.5 - 0.1 * i as f64).collect();
    let g = |xi: &[f64]| {
        basis
            .indices()
            .iter()
            .zip(&coeffs)
            .map(|(a, c)| c * multivariate_eval(&basis, a, xi).unwrap())
            .sum::<f64>()
    };
    let got = project(g, &basis, &rule);
    for (a, b) in got.iter().zip(&coeffs) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn unknown_index_is_rejected() {
    let basis = enumerate_basis(2, 1);
    let alpha = MultiIndex::new(vec![2, 0]);
    assert!(matches!(
        multivariate_eval(&basis, &alpha, &[0.0, 0.0]),
        Err(sgheat::Error::IndexNotInBasis(_))
    ));
}

proptest! {
    #[test]
    fn hermite_matches_explicit_forms(y in -6.0f64..6.0) {
        let he = [1.0, y, y * y - 1.0, y.powi(3) - 3.0 * y, y.powi(4) - 6.0 * y * y + 3.0];
        for (n, h) in he.iter().enumerate() {
            let expect = h / factorial(n as u32).sqrt();
            prop_assert!((hermite_eval(n, y) - expect).abs() < 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn basis_is_graded_and_indexed(m in 1usize..5, p in 0u32..6) {
        let basis = enumerate_basis(m, p);
        prop_assert_eq!(basis.len(), basis_size(m, p));
        prop_assert!(basis.indices()[0].is_zero());
        for w in basis.indices().windows(2) {
            prop_assert!(w[0].degree() <= w[1].degree());
            if w[0].degree() == w[1].degree() {
                prop_assert!(w[0].as_slice() > w[1].as_slice());
            }
        }
        for (i, a) in basis.indices().iter().enumerate() {
            prop_assert_eq!(a.dim(), m);
            prop_assert!(a.degree() <= p);
            prop_assert_eq!(basis.id_of(a), Some(i));
        }
    }

    #[test]
    fn triple_products_symmetric_and_factorized(m in 1usize..4, p in 0u32..4, mu_seed in 0usize..1000) {
        let basis = enumerate_basis(m, p);
        let modes = enumerate_basis(m, 2);
        let mu = &modes.indices()[mu_seed % modes.len()];
        let g = triple_products(&basis, mu).unwrap();
        let mut dense = vec![vec![0.0; basis.len()]; basis.len()];
        for &(i, j, v) in &g.entries {
            dense[i][j] = v;
        }
        for (i, a) in basis.indices().iter().enumerate() {
            for (j, b) in basis.indices().iter().enumerate() {
                prop_assert_eq!(dense[i][j], dense[j][i]);
                let expect: f64 = (0..m)
                    .map(|d| triple_closed_form(mu.as_slice()[d], a.as_slice()[d], b.as_slice()[d]))
                    .product();
                prop_assert!((dense[i][j] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
            }
        }
        if mu.is_zero() {
            for (i, row) in dense.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((v - expect).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn gauss_hermite_rule_invariants(q in 1usize..30) {
        let rule = gauss_hermite(q).unwrap();
        let s: f64 = rule.weights.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-13);
        for i in 0..q {
            prop_assert!((rule.nodes[i] + rule.nodes[q - 1 - i]).abs() < 1e-12 * (1.0 + rule.nodes[i].abs()));
            prop_assert!(rule.weights[i] > 0.0);
        }
        for k in [1, 3, 5] {
            prop_assert!(rule.integrate(|y| y.powi(k)).abs() < 1e-12 * 10f64.powi(k));
        }
    }
}
