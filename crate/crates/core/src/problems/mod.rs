//! Semi-discretized test problems in split form f(y) = A·y + g(y).

use std::fmt::Debug;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::precision::{squeeze_matrix, Arith, FloatFormat, SqueezedMatrix};
use crate::sparse::CsrMatrix;
use crate::vecops::{norm2, norm_inf};

mod brusselator;
mod graded;
mod plaplace;
mod reaction_diffusion;

pub use brusselator::{build_brusselator, build_problem_3, Brusselator};
pub use graded::build_multirate_surrogate;
pub use plaplace::{build_problem_4, plaplace_steady_state, PLaplace};
pub use reaction_diffusion::{
    build_heat, build_problem_1, build_stability_heat, grid_points, laplacian, manufactured_steady_state, Forcing,
    QuadraticReaction,
};

/// Nonlinear part g of a right-hand side.
///
/// All arithmetic goes through the supplied [`Arith`], so one implementation
/// serves both the high- and low-precision evaluations. Inputs are taken as
/// given; rounding them is the caller's job.
pub trait Nonlinear: Send + Sync + Debug {
    fn eval(&self, y: &[f64], ar: Arith, out: &mut [f64]);

    fn has_jacobian(&self) -> bool {
        false
    }

    /// g′(y)·v.
    fn jacobian_action(&self, _y: &[f64], _v: &[f64], _ar: Arith, _out: &mut [f64]) {
        unimplemented!("no analytic Jacobian")
    }

    fn has_difference(&self) -> bool {
        false
    }

    /// g(y + b) − g(y) in a cancellation-free form.
    fn difference(&self, _y: &[f64], _b: &[f64], _ar: Arith, _out: &mut [f64]) {
        unimplemented!("no analytic difference")
    }

    /// True when g does not depend on y.
    fn is_constant(&self) -> bool {
        false
    }
}

/// A right-hand side A·y + g(y), either part optional.
#[derive(Clone, Debug)]
pub struct Rhs {
    n: usize,
    pub linear: Option<CsrMatrix>,
    pub nonlinear: Option<Arc<dyn Nonlinear>>,
}

impl Rhs {
    pub fn new(n: usize, linear: Option<CsrMatrix>, nonlinear: Option<Arc<dyn Nonlinear>>) -> Self {
        if let Some(a) = &linear {
            assert!(a.nrows() == n && a.ncols() == n, "linear part must be {n}x{n}");
        }
        Self { n, linear, nonlinear }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn has_linear(&self) -> bool {
        self.linear.is_some()
    }

    /// True when f is affine in y.
    pub fn is_affine(&self) -> bool {
        self.nonlinear.as_ref().map_or(true, |g| g.is_constant())
    }

    pub fn has_jacobian(&self) -> bool {
        self.nonlinear.as_ref().map_or(true, |g| g.is_constant() || g.has_jacobian())
    }

    pub fn has_difference(&self) -> bool {
        self.nonlinear.as_ref().map_or(true, |g| g.is_constant() || g.has_difference())
    }

    /// f(y) in full precision.
    pub fn eval(&self, y: &[f64], out: &mut [f64]) {
        self.eval_g(y, out);
        if let Some(a) = &self.linear {
            for (i, o) in out.iter_mut().enumerate() {
                let (cols, vals) = a.row(i);
                *o += cols.iter().zip(vals).map(|(&j, &v)| v * y[j]).sum::<f64>();
            }
        }
    }

    pub fn eval_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.eval(y, &mut out);
        out
    }

    pub fn eval_g(&self, y: &[f64], out: &mut [f64]) {
        match &self.nonlinear {
            Some(g) => g.eval(y, Arith::Exact, out),
            None => out.fill(0.0),
        }
    }

    pub fn apply_a(&self, x: &[f64], out: &mut [f64]) {
        match &self.linear {
            Some(a) => a.spmv_into(x, out),
            None => out.fill(0.0),
        }
    }

    /// g′(y)·v in full precision, by forward difference when no analytic form exists.
    pub fn g_jacobian_action(&self, y: &[f64], v: &[f64], out: &mut [f64]) {
        match &self.nonlinear {
            None => out.fill(0.0),
            Some(g) if g.is_constant() => out.fill(0.0),
            Some(g) if g.has_jacobian() => g.jacobian_action(y, v, Arith::Exact, out),
            Some(g) => {
                let nv = norm2(v);
                if nv == 0.0 {
                    out.fill(0.0);
                    return;
                }
                let h = f64::EPSILON.sqrt() * (1.0 + norm_inf(y)) / nv;
                let yp: Vec<f64> = y.iter().zip(v).map(|(a, b)| a + h * b).collect();
                let mut g0 = vec![0.0; self.n];
                g.eval(y, Arith::Exact, &mut g0);
                g.eval(&yp, Arith::Exact, out);
                for (o, b) in out.iter_mut().zip(&g0) {
                    *o = (*o - b) / h;
                }
            }
        }
    }

    /// f′(y)·v in full precision.
    pub fn jacobian_action(&self, y: &[f64], v: &[f64], out: &mut [f64]) {
        self.g_jacobian_action(y, v, out);
        if let Some(a) = &self.linear {
            for (i, o) in out.iter_mut().enumerate() {
                let (cols, vals) = a.row(i);
                *o += cols.iter().zip(vals).map(|(&j, &w)| w * v[j]).sum::<f64>();
            }
        }
    }

    /// Low-precision view of this right-hand side.
    pub fn lowered(&self, fmt: FloatFormat) -> Result<LoweredRhs> {
        let a_low = match &self.linear {
            Some(a) if a.max_abs() > 0.0 => Some(squeeze_matrix(a, &fmt)?),
            _ => None,
        };
        Ok(LoweredRhs { rhs: self.clone(), fmt, ar: Arith::new(fmt), a_low })
    }
}

/// A right-hand side evaluated in an emulated low format.
///
/// Inputs are rounded into the format on entry; the matrix is squeezed by its
/// max-norm and the scale is reapplied in full precision.
#[derive(Clone, Debug)]
pub struct LoweredRhs {
    rhs: Rhs,
    fmt: FloatFormat,
    ar: Arith,
    a_low: Option<SqueezedMatrix>,
}

impl LoweredRhs {
    pub fn format(&self) -> FloatFormat {
        self.fmt
    }

    pub fn arith(&self) -> Arith {
        self.ar
    }

    pub fn rhs(&self) -> &Rhs {
        &self.rhs
    }

    /// scale·(Â·round(x)).
    pub fn apply_a(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.a_low {
            Some(a) => a.apply_into(x, out),
            None => {
                out.fill(0.0);
                Ok(())
            }
        }
    }

    /// ĝ(round(y)).
    pub fn eval_g(&self, y: &[f64], out: &mut [f64]) {
        match &self.rhs.nonlinear {
            Some(g) => {
                let yr = self.fmt.rounded(y);
                g.eval(&yr, self.ar, out);
            }
            None => out.fill(0.0),
        }
    }

    /// ĝ′(round(y))·round(v).
    pub fn g_jacobian_action(&self, y: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.rhs.nonlinear {
            None => out.fill(0.0),
            Some(g) if g.is_constant() => out.fill(0.0),
            Some(g) if g.has_jacobian() => g.jacobian_action(&self.fmt.rounded(y), &self.fmt.rounded(v), self.ar, out),
            Some(_) => {
                return Err(Error::StrategyUnavailable {
                    strategy: "analytic",
                    reason: "problem has no analytic Jacobian",
                })
            }
        }
        Ok(())
    }

    /// Low-precision g(y + b) − g(y) through the problem's difference form.
    pub fn g_difference(&self, y: &[f64], b: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.rhs.nonlinear {
            None => out.fill(0.0),
            Some(g) if g.is_constant() => out.fill(0.0),
            Some(g) if g.has_difference() => g.difference(&self.fmt.rounded(y), &self.fmt.rounded(b), self.ar, out),
            Some(_) => {
                return Err(Error::StrategyUnavailable {
                    strategy: "exact-diff",
                    reason: "problem has no analytic difference",
                })
            }
        }
        Ok(())
    }

    /// f̂(y): every operation rounded, the final sum A·y + g(y) included.
    pub fn eval(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        self.apply_a(y, out)?;
        if self.rhs.nonlinear.is_some() {
            let mut g = vec![0.0; out.len()];
            self.eval_g(y, &mut g);
            for (o, gi) in out.iter_mut().zip(&g) {
                *o = self.ar.add(self.ar.r(*o), *gi);
            }
        } else {
            self.fmt.round_slice(out);
        }
        Ok(())
    }
}

/// How errors against a reference are measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Max over sampled times of the nodal max-norm.
    Nodal,
    /// As `Nodal`; the state stacks two species.
    TwoField,
    /// Only the final (steady) state is compared.
    SteadyState,
}

/// An initial value problem y′ = f(y), y(0) = y⁰ on [0, T].
#[derive(Clone, Debug)]
pub struct OdeProblem {
    pub name: String,
    pub mesh: usize,
    pub rhs: Rhs,
    pub y0: Vec<f64>,
    pub t_end: f64,
    pub error_kind: ErrorKind,
    /// Known steady state of the continuous problem at the grid nodes.
    pub steady_state: Option<Vec<f64>>,
    pub params: Vec<(&'static str, f64)>,
}

impl OdeProblem {
    pub fn dim(&self) -> usize {
        self.rhs.dim()
    }

    pub fn with_t_end(mut self, t_end: f64) -> Self {
        self.t_end = t_end;
        self
    }
}

/// A problem whose right-hand side splits as f = f_F + f_S.
#[derive(Clone, Debug)]
pub struct MultirateProblem {
    pub problem: OdeProblem,
    pub fast: Rhs,
    pub slow: Rhs,
}

impl MultirateProblem {
    pub fn with_t_end(mut self, t_end: f64) -> Self {
        self.problem.t_end = t_end;
        self
    }
}

/// Options of the power iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub safety: f64,
    pub seed: u64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-2, safety: 1.05, seed: 0 }
    }
}

/// Result of a spectral-radius estimate; `rho` already includes the safety factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralEstimate {
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration for the spectral radius of a linear operator.
///
/// The start vector alternates in sign with a random modulation, which puts
/// weight on the oscillatory modes that dominate diffusion operators.
pub fn power_iteration(n: usize, mut op: impl FnMut(&[f64], &mut [f64]), opts: &PowerOptions) -> SpectralEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Vec<f64> =
        (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + 0.1 * rng.gen::<f64>())).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut w = vec![0.0; n];
    let mut est = 0.0;
    for it in 1..=opts.max_iters {
        op(&v, &mut w);
        let nw = norm2(&w);
        if nw == 0.0 || !nw.is_finite() {
            return SpectralEstimate { rho: 0.0, iterations: it, converged: nw == 0.0 };
        }
        let converged = it > 1 && (nw - est).abs() <= opts.tol * nw;
        est = nw;
        if converged {
            return SpectralEstimate { rho: opts.safety * est, iterations: it, converged: true };
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nw;
        }
    }
    log::warn!("power iteration did not converge in {} iterations", opts.max_iters);
    SpectralEstimate { rho: opts.safety * est, iterations: opts.max_iters, converged: false }
}

/// Spectral radius of f′(y).
pub fn estimate_spectral_radius(rhs: &Rhs, y: &[f64], opts: &PowerOptions) -> SpectralEstimate {
    power_iteration(rhs.dim(), |v, out| rhs.jacobian_action(y, v, out), opts)
}
