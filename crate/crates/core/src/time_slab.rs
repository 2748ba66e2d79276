//! dG(r) in time on uniform slabs with a nodal basis on the right
//! Gauss–Radau points of each slab.

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, right_radau, Rule1d};

/// Right Radau points of the reference slab `(0, 1]`, last point 1.
pub fn radau_nodes(r: usize) -> Result<Vec<f64>> {
    let mut nodes = right_radau(r + 1)?.to_unit_interval().nodes;
    // the mapped endpoint is exactly 1
    *nodes.last_mut().unwrap() = 1.0;
    Ok(nodes)
}

/// Values and derivatives of the Lagrange polynomials on `nodes` at `s`.
fn lagrange(nodes: &[f64], s: f64) -> (Vec<f64>, Vec<f64>) {
    let n = nodes.len();
    let mut val = vec![0.0; n];
    let mut der = vec![0.0; n];
    for j in 0..n {
        let (mut v, mut d) = (1.0, 0.0);
        for (m, &xm) in nodes.iter().enumerate() {
            if m == j {
                continue;
            }
            let denom = nodes[j] - xm;
            d = d * (s - xm) / denom + v / denom;
            v *= (s - xm) / denom;
        }
        val[j] = v;
        der[j] = d;
    }
    (val, der)
}

/// Time basis and local matrices of one slab of length `tau`.
#[derive(Debug, Clone)]
pub struct SlabTimeBasis {
    pub r: usize,
    pub tau: f64,
    /// reference nodes in `(0, 1]`
    pub nodes: Vec<f64>,
    /// `A_t[i][j] = ∫ v_j' v_i + v_j(t⁺) v_i(t⁺)`, independent of `tau`
    pub a_t: Vec<Vec<f64>>,
    /// `B_t[i][j] = ∫ v_j v_i`, proportional to `tau`
    pub b_t: Vec<Vec<f64>>,
    /// `C_t[i][j] = v_j(t⁻ of previous slab) v_i(t⁺)`
    pub c_t: Vec<Vec<f64>>,
    /// values `v_i(0)` at the slab's left end
    pub left_values: Vec<f64>,
    /// Gauss–Legendre rule with `r+2` points on `[0, 1]`
    pub quad: Rule1d,
    /// `quad_values[q][i] = v_i(s_q)`
    pub quad_values: Vec<Vec<f64>>,
}

impl SlabTimeBasis {
    pub fn n_nodes(&self) -> usize {
        self.r + 1
    }

    /// Basis values at reference position `s ∈ [0, 1]`.
    pub fn eval(&self, s: f64) -> Vec<f64> {
        lagrange(&self.nodes, s).0
    }
}

pub fn build_basis(r: usize, tau: f64) -> Result<SlabTimeBasis> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("slab length must be positive, got {tau}")));
    }
    let nodes = radau_nodes(r)?;
    let n = r + 1;
    let quad = gauss_legendre(r + 2)?.to_unit_interval();
    let tabs: Vec<(Vec<f64>, Vec<f64>)> = quad.nodes.iter().map(|&s| lagrange(&nodes, s)).collect();
    let (left, _) = lagrange(&nodes, 0.0);
    let mut a_t = vec![vec![0.0; n]; n];
    let mut b_t = vec![vec![0.0; n]; n];
    let mut c_t = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut a = 0.0;
            let mut b = 0.0;
            for ((v, d), w) in tabs.iter().zip(&quad.weights) {
                a += w * d[j] * v[i];
                b += w * v[j] * v[i];
            }
            a_t[i][j] = a + left[j] * left[i];
            b_t[i][j] = tau * b;
        }
        // only the previous slab's endpoint node is nonzero at t⁻
        c_t[i][r] = left[i];
    }
    let quad_values = tabs.into_iter().map(|(v, _)| v).collect();
    Ok(SlabTimeBasis {
        r,
        tau,
        nodes,
        a_t,
        b_t,
        c_t,
        left_values: left,
        quad,
        quad_values,
    })
}
