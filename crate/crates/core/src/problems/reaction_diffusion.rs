//! Reaction–diffusion and heat problems on the unit cube (Problem 1 family).

use std::sync::Arc;

use super::{ErrorKind, Nonlinear, OdeProblem, Rhs};
use crate::error::{Error, Result};
use crate::precision::Arith;
use crate::sparse::CsrMatrix;

/// Coordinates of the (N−1)^d interior nodes, first axis fastest.
pub fn grid_points(d: usize, n_mesh: usize) -> Vec<[f64; 3]> {
    let m = n_mesh - 1;
    let h = 1.0 / n_mesh as f64;
    let total = m.pow(d as u32);
    (0..total)
        .map(|idx| {
            let mut p = [0.5; 3];
            let mut r = idx;
            for coord in p.iter_mut().take(d) {
                *coord = ((r % m) + 1) as f64 * h;
                r /= m;
            }
            p
        })
        .collect()
}

/// `diffusion`·(standard (2d+1)-point Laplacian) on the interior nodes, and
/// the vector lifting a constant Dirichlet value into the right-hand side.
pub fn laplacian(d: usize, n_mesh: usize, diffusion: f64, boundary: f64) -> (CsrMatrix, Vec<f64>) {
    let m = n_mesh - 1;
    let h = 1.0 / n_mesh as f64;
    let c = diffusion / (h * h);
    let total = m.pow(d as u32);
    let mut trip = Vec::with_capacity(total * (2 * d + 1));
    let mut lift = vec![0.0; total];
    let stride = |k: usize| m.pow(k as u32);
    for idx in 0..total {
        trip.push((idx, idx, -2.0 * d as f64 * c));
        for k in 0..d {
            let ik = (idx / stride(k)) % m;
            if ik > 0 {
                trip.push((idx, idx - stride(k), c));
            } else {
                lift[idx] += c * boundary;
            }
            if ik + 1 < m {
                trip.push((idx, idx + stride(k), c));
            } else {
                lift[idx] += c * boundary;
            }
        }
    }
    (CsrMatrix::from_triplets(total, total, &trip), lift)
}

fn bubble(x: f64) -> f64 {
    x * (1.0 - x)
}

/// Second derivative of bubble(x)².
fn bubble_sq_dd(x: f64) -> f64 {
    2.0 * (1.0 - 2.0 * x).powi(2) - 4.0 * x * (1.0 - x)
}

/// Manufactured steady state 1 + 16^d Π_k (x_k(1 − x_k))² and its Laplacian.
pub fn manufactured_steady_state(d: usize, p: &[f64; 3]) -> (f64, f64) {
    let c = 16f64.powi(d as i32);
    let sq: Vec<f64> = (0..d).map(|k| bubble(p[k]).powi(2)).collect();
    let value = 1.0 + c * sq.iter().product::<f64>();
    let lap =
        (0..d).map(|k| bubble_sq_dd(p[k]) * (0..d).filter(|&l| l != k).map(|l| sq[l]).product::<f64>()).sum::<f64>()
            * c;
    (value, lap)
}

/// g(y) = c − y².
#[derive(Debug)]
pub struct QuadraticReaction {
    pub c: Vec<f64>,
}

impl Nonlinear for QuadraticReaction {
    fn eval(&self, y: &[f64], ar: Arith, out: &mut [f64]) {
        for ((o, &yi), &ci) in out.iter_mut().zip(y).zip(&self.c) {
            *o = ar.sub(ar.r(ci), ar.mul(yi, yi));
        }
    }

    fn has_jacobian(&self) -> bool {
        true
    }

    fn jacobian_action(&self, y: &[f64], v: &[f64], ar: Arith, out: &mut [f64]) {
        for ((o, &yi), &vi) in out.iter_mut().zip(y).zip(v) {
            *o = ar.mul(-2.0 * yi, vi);
        }
    }

    fn has_difference(&self) -> bool {
        true
    }

    fn difference(&self, y: &[f64], b: &[f64], ar: Arith, out: &mut [f64]) {
        for ((o, &yi), &bi) in out.iter_mut().zip(y).zip(b) {
            *o = -ar.mul(ar.add(2.0 * yi, bi), bi);
        }
    }
}

/// g(y) = c, independent of y.
#[derive(Debug)]
pub struct Forcing {
    pub c: Vec<f64>,
}

impl Nonlinear for Forcing {
    fn eval(&self, _y: &[f64], ar: Arith, out: &mut [f64]) {
        for (o, &ci) in out.iter_mut().zip(&self.c) {
            *o = ar.r(ci);
        }
    }

    fn is_constant(&self) -> bool {
        true
    }
}

fn check_mesh(d: usize, n_mesh: usize) -> Result<()> {
    if !(1..=3).contains(&d) {
        return Err(Error::InvalidMesh(format!("dimension {d} not in 1..=3")));
    }
    if n_mesh < 2 {
        return Err(Error::InvalidMesh(format!("N = {n_mesh} < 2")));
    }
    Ok(())
}

/// u_t = 𝒟Δu − u² + f₁ with Dirichlet value 1, y⁰ ≡ 1, T = 1; f₁ makes the
/// manufactured function the steady state.
pub fn build_problem_1(d: usize, n_mesh: usize, diffusion: f64) -> Result<OdeProblem> {
    check_mesh(d, n_mesh)?;
    let (a, lift) = laplacian(d, n_mesh, diffusion, 1.0);
    let pts = grid_points(d, n_mesh);
    let (steady, f1): (Vec<f64>, Vec<f64>) = pts
        .iter()
        .map(|p| {
            let (u, lap) = manufactured_steady_state(d, p);
            (u, u * u - diffusion * lap)
        })
        .unzip();
    let c: Vec<f64> = f1.iter().zip(&lift).map(|(f, l)| f + l).collect();
    let n = pts.len();
    Ok(OdeProblem {
        name: format!("heat{d}d"),
        mesh: n_mesh,
        rhs: Rhs::new(n, Some(a), Some(Arc::new(QuadraticReaction { c }))),
        y0: vec![1.0; n],
        t_end: 1.0,
        error_kind: ErrorKind::Nodal,
        steady_state: Some(steady),
        params: vec![("d", d as f64), ("diffusion", diffusion)],
    })
}

/// Linear heat equation u_t = 𝒟Δu + f with the same boundary data, initial
/// value and steady state as Problem 1.
pub fn build_heat(d: usize, n_mesh: usize, diffusion: f64) -> Result<OdeProblem> {
    check_mesh(d, n_mesh)?;
    let (a, lift) = laplacian(d, n_mesh, diffusion, 1.0);
    let pts = grid_points(d, n_mesh);
    let (steady, c): (Vec<f64>, Vec<f64>) = pts
        .iter()
        .zip(&lift)
        .map(|(p, l)| {
            let (u, lap) = manufactured_steady_state(d, p);
            (u, -diffusion * lap + l)
        })
        .unzip();
    let n = pts.len();
    Ok(OdeProblem {
        name: format!("heat{d}d-linear"),
        mesh: n_mesh,
        rhs: Rhs::new(n, Some(a), Some(Arc::new(Forcing { c }))),
        y0: vec![1.0; n],
        t_end: 1.0,
        error_kind: ErrorKind::Nodal,
        steady_state: Some(steady),
        params: vec![("d", d as f64), ("diffusion", diffusion)],
    })
}

/// Homogeneous 2D heat equation with y⁰ = (16xy(1−x)(1−y))², zero Dirichlet
/// data and T = 8.
pub fn build_stability_heat(n_mesh: usize, diffusion: f64) -> Result<OdeProblem> {
    check_mesh(2, n_mesh)?;
    let (a, _) = laplacian(2, n_mesh, diffusion, 0.0);
    let y0: Vec<f64> = grid_points(2, n_mesh).iter().map(|p| (16.0 * bubble(p[0]) * bubble(p[1])).powi(2)).collect();
    let n = y0.len();
    Ok(OdeProblem {
        name: "heat2d-homogeneous".into(),
        mesh: n_mesh,
        rhs: Rhs::new(n, Some(a), None),
        y0,
        t_end: 8.0,
        error_kind: ErrorKind::Nodal,
        steady_state: Some(vec![0.0; n]),
        params: vec![("d", 2.0), ("diffusion", diffusion)],
    })
}
