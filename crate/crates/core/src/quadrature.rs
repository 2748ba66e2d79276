//! One-dimensional Legendre-family rules on `[-1, 1]`: Gauss, Gauss–Lobatto
//! support points and right Gauss–Radau points.

use crate::error::{Error, Result};

const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 100;

/// A quadrature rule: nodes in increasing order with matching weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1d {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Affine map of a rule on `[-1, 1]` onto `[0, 1]`.
    pub fn to_unit_interval(&self) -> Rule1d {
        Rule1d {
            nodes: self.nodes.iter().map(|x| 0.5 * (x + 1.0)).collect(),
            weights: self.weights.iter().map(|w| 0.5 * w).collect(),
        }
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    let (mut d_prev, mut d) = (0.0, 1.0);
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        // P'_{k+1} = P'_{k-1} + (2k+1) P_k
        let d_next = d_prev + (2.0 * kf + 1.0) * p;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
    }
    (p, d)
}

/// Newton iteration from `guess` with deflation against already located
/// roots in `known`. `f` returns the function value and derivative.
pub(crate) fn newton_deflated<F>(f: &F, guess: f64, known: &[f64], degree: usize) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    let mut x = guess;
    for _ in 0..NEWTON_MAX_ITER {
        let (val, der) = f(x);
        let deflation: f64 = known.iter().map(|r| 1.0 / (x - r)).sum();
        let denom = der - val * deflation;
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = val / denom;
        x -= step;
        if !x.is_finite() {
            break;
        }
        if step.abs() <= NEWTON_TOL * x.abs().max(1.0) {
            return Ok(x);
        }
    }
    Err(Error::RootFinding { degree })
}

/// Runs [`newton_deflated`] for every guess in turn, deflating against
/// `known` and all roots found so far. Returns the new roots sorted.
pub(crate) fn deflated_newton<F>(
    f: F,
    guesses: &[f64],
    known: &[f64],
    degree: usize,
) -> Result<Vec<f64>>
where
    F: Fn(f64) -> (f64, f64),
{
    let mut roots: Vec<f64> = known.to_vec();
    let n_known = roots.len();
    for &guess in guesses {
        let x = newton_deflated(&f, guess, &roots, degree)?;
        roots.push(x);
    }
    let mut found = roots.split_off(n_known);
    found.sort_by(|a, b| a.total_cmp(b));
    Ok(found)
}

/// Gauss–Legendre rule with `n` points on `[-1, 1]`; exact to degree `2n-1`.
pub fn gauss_legendre(n: usize) -> Result<Rule1d> {
    if n == 0 {
        return Err(Error::InvalidInput("Gauss–Legendre rule needs n >= 1".into()));
    }
    let guesses: Vec<f64> = (0..n)
        .map(|i| (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos())
        .collect();
    let nodes = deflated_newton(|x| legendre(n, x), &guesses, &[], n)?;
    let weights = nodes
        .iter()
        .map(|&x| {
            let (_, d) = legendre(n, x);
            2.0 / ((1.0 - x * x) * d * d)
        })
        .collect();
    Ok(Rule1d { nodes, weights })
}

/// Gauss–Lobatto points (`n >= 2`) on `[-1, 1]`, endpoints included.
pub fn gauss_lobatto_points(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidInput("Gauss–Lobatto needs n >= 2".into()));
    }
    let k = n - 1;
    // interior points are the roots of P'_k
    let f = |x: f64| {
        let (p, d) = legendre(k, x);
        let kk = (k * (k + 1)) as f64;
        let dd = (2.0 * x * d - kk * p) / (1.0 - x * x);
        (d, dd)
    };
    let guesses: Vec<f64> = (1..k)
        .map(|i| -(std::f64::consts::PI * i as f64 / k as f64).cos() * 0.99)
        .collect();
    let mut pts = vec![-1.0];
    pts.extend(deflated_newton(f, &guesses, &[], n)?);
    pts.push(1.0);
    Ok(pts)
}

/// Right Gauss–Radau rule with `n` points on `[-1, 1]`; the last node is `+1`.
///
/// Nodes are the roots of `P_{n-1} - P_n`, exact to degree `2n-2`.
pub fn right_radau(n: usize) -> Result<Rule1d> {
    if n == 0 {
        return Err(Error::InvalidInput("Radau rule needs n >= 1".into()));
    }
    if n == 1 {
        return Ok(Rule1d {
            nodes: vec![1.0],
            weights: vec![2.0],
        });
    }
    let f = |x: f64| {
        let (a, da) = legendre(n - 1, x);
        let (b, db) = legendre(n, x);
        (a - b, da - db)
    };
    let guesses: Vec<f64> = (0..n - 1)
        .map(|i| -(std::f64::consts::PI * (i as f64 + 0.5) / n as f64).cos())
        .collect();
    let mut nodes = deflated_newton(f, &guesses, &[1.0], n)?;
    nodes.push(1.0);
    // weights: (1 + x) / (n^2 P_{n-1}(x)^2) at interior nodes, 2/n^2 at x = 1
    let n2 = (n * n) as f64;
    let weights = nodes
        .iter()
        .map(|&x| {
            if x == 1.0 {
                2.0 / n2
            } else {
                let (p, _) = legendre(n - 1, x);
                (1.0 + x) / (n2 * p * p)
            }
        })
        .collect();
    Ok(Rule1d { nodes, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate(rule: &Rule1d, f: impl Fn(f64) -> f64) -> f64 {
        rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * f(*x)).sum()
    }

    fn monomial_integral(k: i32) -> f64 {
        if k % 2 == 1 {
            0.0
        } else {
            2.0 / (k as f64 + 1.0)
        }
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in 1..=10 {
            let rule = gauss_legendre(n).unwrap();
            for k in 0..(2 * n as i32) {
                let q = integrate(&rule, |x| x.powi(k));
                assert!((q - monomial_integral(k)).abs() < 1e-13, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn radau_exactness_and_endpoint() {
        for n in 1..=8 {
            let rule = right_radau(n).unwrap();
            assert_eq!(*rule.nodes.last().unwrap(), 1.0);
            assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
            for k in 0..(2 * n as i32 - 1) {
                let q = integrate(&rule, |x| x.powi(k));
                assert!((q - monomial_integral(k)).abs() < 1e-13, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn lobatto_points() {
        let p = gauss_lobatto_points(4).unwrap();
        let s = 1.0 / 5f64.sqrt();
        let expect = [-1.0, -s, s, 1.0];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(gauss_lobatto_points(2).unwrap(), vec![-1.0, 1.0]);
        let p3 = gauss_lobatto_points(3).unwrap();
        assert!(p3[1].abs() < 1e-15);
    }
}
