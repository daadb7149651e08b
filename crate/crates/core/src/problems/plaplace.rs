//! One-dimensional 4-Laplace diffusion (Problem 4).

use std::sync::Arc;

use super::{ErrorKind, Nonlinear, OdeProblem, Rhs};
use crate::error::{Error, Result};
use crate::precision::Arith;

fn f4(x: f64) -> f64 {
    1.0 + 64.0 * (4.0 - 1.0 / (x * (1.0 - x))).exp()
}

/// g(w) = ((w_x)³)_x + f₄ in conservative form for the lifted variable
/// w = u − 1, which vanishes on the boundary.
#[derive(Debug)]
pub struct PLaplace {
    n_mesh: usize,
    forcing: Vec<f64>,
}

impl PLaplace {
    #[inline]
    fn node(y: &[f64], k: usize, boundary: f64) -> f64 {
        if k == 0 || k == y.len() + 1 {
            boundary
        } else {
            y[k - 1]
        }
    }
}

impl Nonlinear for PLaplace {
    fn eval(&self, y: &[f64], ar: Arith, out: &mut [f64]) {
        let inv_h = ar.r(self.n_mesh as f64);
        let flux = |k: usize| {
            let q = ar.mul(ar.sub(Self::node(y, k + 1, 0.0), Self::node(y, k, 0.0)), inv_h);
            ar.mul(ar.mul(q, q), q)
        };
        let mut left = flux(0);
        for (i, o) in out.iter_mut().enumerate() {
            let right = flux(i + 1);
            *o = ar.add(ar.mul(ar.sub(right, left), inv_h), ar.r(self.forcing[i]));
            left = right;
        }
    }

    fn has_jacobian(&self) -> bool {
        true
    }

    fn jacobian_action(&self, y: &[f64], v: &[f64], ar: Arith, out: &mut [f64]) {
        let inv_h = ar.r(self.n_mesh as f64);
        let dflux = |k: usize| {
            let q = ar.mul(ar.sub(Self::node(y, k + 1, 0.0), Self::node(y, k, 0.0)), inv_h);
            let dv = ar.mul(ar.sub(Self::node(v, k + 1, 0.0), Self::node(v, k, 0.0)), inv_h);
            ar.mul(ar.mul(3.0, ar.mul(q, q)), dv)
        };
        let mut left = dflux(0);
        for (i, o) in out.iter_mut().enumerate() {
            let right = dflux(i + 1);
            *o = ar.mul(ar.sub(right, left), inv_h);
            left = right;
        }
    }

    fn has_difference(&self) -> bool {
        true
    }

    fn difference(&self, y: &[f64], b: &[f64], ar: Arith, out: &mut [f64]) {
        let inv_h = ar.r(self.n_mesh as f64);
        // (q + e)³ − q³ = e(3q² + 3qe + e²)
        let dflux = |k: usize| {
            let q = ar.mul(ar.sub(Self::node(y, k + 1, 0.0), Self::node(y, k, 0.0)), inv_h);
            let e = ar.mul(ar.sub(Self::node(b, k + 1, 0.0), Self::node(b, k, 0.0)), inv_h);
            let inner = ar.add(ar.mul(3.0, ar.mul(q, ar.add(q, e))), ar.mul(e, e));
            ar.mul(e, inner)
        };
        let mut left = dflux(0);
        for (i, o) in out.iter_mut().enumerate() {
            let right = dflux(i + 1);
            *o = ar.mul(ar.sub(right, left), inv_h);
            left = right;
        }
    }
}

/// u_t = (u_x³)_x + f₄ on (0, 1), u = 1 on the boundary and initially, T = 1.
///
/// The state is w = u − 1: the operator only sees differences of u, and the
/// lifted values keep their low bits when rounded into a narrow format.
pub fn build_problem_4(n_mesh: usize) -> Result<OdeProblem> {
    if n_mesh < 2 {
        return Err(Error::InvalidMesh(format!("N = {n_mesh} < 2")));
    }
    let m = n_mesh - 1;
    let h = 1.0 / n_mesh as f64;
    let forcing: Vec<f64> = (1..=m).map(|i| f4(i as f64 * h)).collect();
    Ok(OdeProblem {
        name: "plap4".into(),
        mesh: n_mesh,
        rhs: Rhs::new(m, None, Some(Arc::new(PLaplace { n_mesh, forcing }))),
        y0: vec![0.0; m],
        t_end: 1.0,
        error_kind: ErrorKind::SteadyState,
        steady_state: None,
        params: vec![],
    })
}

/// Steady state w = u − 1 of the discrete 4-Laplace problem on `n_mesh` cells.
///
/// In 1D the face fluxes telescope, F_k = F_0 − h Σ_{j≤k} f₄(x_j), and the
/// boundary data fix F_0 through Σ_k cbrt(F_k) = 0, solved by bisection.
pub fn plaplace_steady_state(n_mesh: usize) -> Vec<f64> {
    let h = 1.0 / n_mesh as f64;
    let mut partial = vec![0.0; n_mesh];
    for k in 1..n_mesh {
        partial[k] = partial[k - 1] + h * f4(k as f64 * h);
    }
    let mismatch = |f0: f64| partial.iter().map(|p| (f0 - p).cbrt()).sum::<f64>();
    let (mut lo, mut hi) = (0.0, partial[n_mesh - 1]);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mismatch(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let f0 = 0.5 * (lo + hi);
    let mut u = Vec::with_capacity(n_mesh - 1);
    let mut cur = 0.0;
    for p in partial.iter().take(n_mesh - 1) {
        cur += h * (f0 - p).cbrt();
        u.push(cur);
    }
    u
}
