//! One-dimensional Brusselator reaction–diffusion system (Problem 3).

use std::sync::Arc;

use super::{laplacian, ErrorKind, Nonlinear, OdeProblem, Rhs};
use crate::error::{Error, Result};
use crate::precision::Arith;
use crate::sparse::CsrMatrix;

/// Reaction terms of the Brusselator on a stacked state [u; v], including the
/// Dirichlet lifting of the diffusion operator.
#[derive(Debug)]
pub struct Brusselator {
    pub m: usize,
    pub a: f64,
    pub b: f64,
    lift_u: Vec<f64>,
    lift_v: Vec<f64>,
}

impl Brusselator {
    /// The cubic term u²v.
    #[inline]
    fn uuv(ar: Arith, u: f64, v: f64) -> f64 {
        ar.mul(ar.mul(u, u), v)
    }
}

impl Nonlinear for Brusselator {
    fn eval(&self, y: &[f64], ar: Arith, out: &mut [f64]) {
        let m = self.m;
        let (u, v) = y.split_at(m);
        let (ou, ov) = out.split_at_mut(m);
        let bp1 = self.b + 1.0;
        for i in 0..m {
            let c = Self::uuv(ar, u[i], v[i]);
            let ku = ar.r(self.a + self.lift_u[i]);
            ou[i] = ar.add(ar.sub(c, ar.mul(bp1, u[i])), ku);
            ov[i] = ar.add(ar.sub(ar.mul(self.b, u[i]), c), ar.r(self.lift_v[i]));
        }
    }

    fn has_jacobian(&self) -> bool {
        true
    }

    fn jacobian_action(&self, y: &[f64], w: &[f64], ar: Arith, out: &mut [f64]) {
        let m = self.m;
        let (u, v) = y.split_at(m);
        let (p, q) = w.split_at(m);
        let (ou, ov) = out.split_at_mut(m);
        for i in 0..m {
            let uv2 = ar.mul(2.0 * u[i], v[i]);
            let uu = ar.mul(u[i], u[i]);
            let t = ar.mul(uu, q[i]);
            ou[i] = ar.add(ar.mul(ar.sub(uv2, self.b + 1.0), p[i]), t);
            ov[i] = ar.sub(ar.mul(ar.sub(self.b, uv2), p[i]), t);
        }
    }

    fn has_difference(&self) -> bool {
        true
    }

    fn difference(&self, y: &[f64], w: &[f64], ar: Arith, out: &mut [f64]) {
        let m = self.m;
        let (u, v) = y.split_at(m);
        let (p, q) = w.split_at(m);
        let (ou, ov) = out.split_at_mut(m);
        for i in 0..m {
            // (u+p)²(v+q) − u²v = (2u + p)p(v + q) + u²q
            let s = ar.mul(ar.mul(ar.add(2.0 * u[i], p[i]), p[i]), ar.add(v[i], q[i]));
            let c = ar.add(s, ar.mul(ar.mul(u[i], u[i]), q[i]));
            ou[i] = ar.sub(c, ar.mul(self.b + 1.0, p[i]));
            ov[i] = ar.sub(ar.mul(self.b, p[i]), c);
        }
    }
}

/// Brusselator with a = 1, b = 3, α = 1/50 on N cells, T = 10.
pub fn build_problem_3(n_mesh: usize) -> Result<OdeProblem> {
    build_brusselator(n_mesh, 1.0, 3.0, 1.0 / 50.0)
}

pub fn build_brusselator(n_mesh: usize, a: f64, b: f64, alpha: f64) -> Result<OdeProblem> {
    if n_mesh < 2 {
        return Err(Error::InvalidMesh(format!("N = {n_mesh} < 2")));
    }
    let m = n_mesh - 1;
    let (l, unit_lift) = laplacian(1, n_mesh, alpha, 1.0);
    let mut trip = Vec::with_capacity(2 * l.nnz());
    for i in 0..m {
        let (cols, vals) = l.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            trip.push((i, j, v));
            trip.push((i + m, j + m, v));
        }
    }
    let big = CsrMatrix::from_triplets(2 * m, 2 * m, &trip);
    let h = 1.0 / n_mesh as f64;
    let g = Brusselator {
        m,
        a,
        b,
        lift_u: unit_lift.iter().map(|l| a * l).collect(),
        lift_v: unit_lift.iter().map(|l| b * l).collect(),
    };
    let mut y0: Vec<f64> = (1..=m).map(|i| a + (2.0 * std::f64::consts::PI * i as f64 * h).sin()).collect();
    y0.extend(std::iter::repeat(b).take(m));
    Ok(OdeProblem {
        name: "brusselator".into(),
        mesh: n_mesh,
        rhs: Rhs::new(2 * m, Some(big), Some(Arc::new(g))),
        y0,
        t_end: 10.0,
        error_kind: ErrorKind::TwoField,
        steady_state: None,
        params: vec![("a", a), ("b", b), ("alpha", alpha)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_state_and_reaction_fixed_point() {
        let p = build_problem_3(8).unwrap();
        assert_eq!(p.dim(), 14);
        let h = 1.0 / 8.0;
        for i in 0..7 {
            let x = (i + 1) as f64 * h;
            assert!((p.y0[i] - (1.0 + (2.0 * std::f64::consts::PI * x).sin())).abs() < 1e-15);
            assert_eq!(p.y0[7 + i], 3.0);
        }
        let mut y = vec![1.0; 7];
        y.extend(vec![3.0; 7]);
        let f = p.rhs.eval_vec(&y);
        assert!(f.iter().all(|v| v.abs() < 1e-12), "{f:?}");
    }
}
