//! Exact-arithmetic RKC, the naive mixed-precision baseline, classical RK4,
//! and the fixed-step driver shared by every scheme.

use std::sync::Arc;

use crate::chebyshev::{rkc_coefficients, select_stages, stability_boundary, RkcCoefficients};
use crate::error::{Error, Result};
use crate::precision::FloatFormat;
use crate::problems::{estimate_spectral_radius, LoweredRhs, PowerOptions, Rhs};
use crate::vecops::{all_finite, norm2};

/// Per-step integration parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepPlan {
    pub dt: f64,
    pub rho: f64,
    pub s: usize,
    pub eps: f64,
    pub p: u8,
}

impl StepPlan {
    /// Δt·ρ ≤ β^p(s, ε).
    pub fn is_stable(&self) -> bool {
        stability_boundary(self.p, self.s, self.eps).map_or(false, |b| self.dt * self.rho <= b * (1.0 + 1e-12))
    }
}

/// Evaluation counters accumulated over an integration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    /// Full-precision evaluations of f (or of f_F + f_S as a pair).
    pub high: u64,
    /// Low-precision evaluations (f̂ or Δ̂f).
    pub low: u64,
    /// Full-precision evaluations of the fast and slow splits.
    pub high_fast: u64,
    pub high_slow: u64,
    /// Full-precision cache vectors (A·f and g′·f) for second-order increments.
    pub caches: u64,
    /// Stages that took the second-order branch of the hybrid switch.
    pub second_order_stages: u64,
    pub first_order_stages: u64,
    /// Finite-difference increments clamped away from underflow.
    pub delta_clamps: u64,
    pub steps: u64,
}

/// What a single step reports back to the driver.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepInfo {
    pub s: usize,
    pub rho: f64,
    pub m: usize,
    pub eta: f64,
}

/// A one-step method.
pub trait Stepper {
    fn step(&mut self, y: &[f64], dt: f64, out: &mut [f64]) -> Result<StepInfo>;
    fn counters(&self) -> Counters;
}

/// One record per time level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub norm2: f64,
    pub s: usize,
    pub rho: f64,
    pub m: usize,
    pub eta: f64,
}

#[derive(Clone, Debug, Default)]
pub struct IntegrationTrace {
    pub records: Vec<StepRecord>,
    pub final_state: Vec<f64>,
    /// States at the sampling times, when requested.
    pub samples: Vec<(f64, Vec<f64>)>,
    pub counters: Counters,
}

impl IntegrationTrace {
    pub fn final_norm_ratio(&self) -> f64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) if a.norm2 > 0.0 => b.norm2 / a.norm2,
            _ => 1.0,
        }
    }
}

/// Sampling of the trajectory during integration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sampling {
    /// Spacing of sample times; must be an integer multiple of Δt.
    pub every: f64,
    /// Keep the sampled states in the trace.
    pub keep: bool,
}

/// Integrates with fixed Δt from 0 to `t_end`, shortening the last step so the
/// final time is hit exactly. `observer` sees (t, y) at t = 0, at every
/// sampling time and at `t_end`.
pub fn integrate_observed(
    stepper: &mut dyn Stepper,
    y0: &[f64],
    t_end: f64,
    dt: f64,
    sampling: Option<Sampling>,
    observer: &mut dyn FnMut(f64, &[f64]),
) -> Result<IntegrationTrace> {
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidArgument(format!("dt = {dt}, T = {t_end}")));
    }
    let stride = match sampling {
        Some(sm) => {
            let r = (sm.every / dt).round();
            if r < 1.0 || (r * dt - sm.every).abs() > 1e-9 * sm.every {
                return Err(Error::InvalidArgument(format!(
                    "sampling interval {} is not a multiple of dt = {dt}",
                    sm.every
                )));
            }
            Some(r as u64)
        }
        None => None,
    };
    let keep = sampling.map_or(false, |s| s.keep);
    let n_steps = if t_end == 0.0 { 0 } else { ((t_end / dt) - 1e-9).ceil().max(1.0) as u64 };
    let mut trace = IntegrationTrace::default();
    let mut y = y0.to_vec();
    let mut next = vec![0.0; y.len()];
    let mut record = |trace: &mut IntegrationTrace, t: f64, y: &[f64], info: StepInfo, sample: bool| {
        trace.records.push(StepRecord { t, norm2: norm2(y), s: info.s, rho: info.rho, m: info.m, eta: info.eta });
        if sample {
            observer(t, y);
            if keep {
                trace.samples.push((t, y.to_vec()));
            }
        }
    };
    record(&mut trace, 0.0, &y, StepInfo::default(), true);
    for n in 1..=n_steps {
        let t_prev = (n - 1) as f64 * dt;
        let t = if n == n_steps { t_end } else { n as f64 * dt };
        let info = stepper.step(&y, t - t_prev, &mut next)?;
        if !all_finite(&next) {
            return Err(Error::NonFiniteState { t });
        }
        std::mem::swap(&mut y, &mut next);
        let sample = n == n_steps || stride.map_or(false, |k| n % k == 0);
        record(&mut trace, t, &y, info, sample && stride.is_some() || n == n_steps);
    }
    trace.final_state = y;
    trace.counters = stepper.counters();
    Ok(trace)
}

pub fn integrate(
    stepper: &mut dyn Stepper,
    y0: &[f64],
    t_end: f64,
    dt: f64,
    sampling: Option<Sampling>,
) -> Result<IntegrationTrace> {
    integrate_observed(stepper, y0, t_end, dt, sampling, &mut |_, _| {})
}

/// How the number of stages is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StageRule {
    Fixed(usize),
    /// Smallest stable s from a power-method estimate of ρ, re-estimated each
    /// step for nonlinear problems and once otherwise (or when `freeze` is set).
    Auto {
        power: PowerOptions,
        freeze: bool,
    },
}

impl Default for StageRule {
    fn default() -> Self {
        StageRule::Auto { power: PowerOptions::default(), freeze: false }
    }
}

/// Stage selection state shared by the single-rate schemes.
#[derive(Clone, Debug)]
pub(crate) struct StageSelector {
    pub p: u8,
    pub eps: f64,
    pub rule: StageRule,
    rho: Option<f64>,
}

impl StageSelector {
    pub fn new(p: u8, eps: f64, rule: StageRule) -> Result<Self> {
        if let StageRule::Fixed(s) = rule {
            rkc_coefficients(p, s, eps)?;
        } else {
            rkc_coefficients(p, crate::chebyshev::min_stages(p), eps)?;
        }
        Ok(Self { p, eps, rule, rho: None })
    }

    pub fn plan(&mut self, rhs: &Rhs, y: &[f64], dt: f64) -> Result<(StepPlan, Arc<RkcCoefficients>)> {
        let (s, rho) = match self.rule {
            StageRule::Fixed(s) => (s, f64::NAN),
            StageRule::Auto { power, freeze } => {
                let rho = match self.rho {
                    Some(r) if freeze || rhs.is_affine() => r,
                    _ => {
                        let r = estimate_spectral_radius(rhs, y, &power).rho;
                        self.rho = Some(r);
                        r
                    }
                };
                (select_stages(self.p, dt, rho, self.eps)?, rho)
            }
        };
        let plan = StepPlan { dt, rho, s, eps: self.eps, p: self.p };
        Ok((plan, rkc_coefficients(self.p, s, self.eps)?))
    }
}

/// The RKC recursion in delta form.
///
/// `f0` is f(yⁿ); `feval(j, d_{j−1}, out)` must write the increment
/// Δt-free quantity used at stage j, i.e. f(yⁿ + d_{j−1}) for the exact scheme.
/// `d` ends holding d_s.
pub(crate) fn delta_recursion(
    c: &RkcCoefficients,
    dt: f64,
    f0: &[f64],
    d: &mut Vec<f64>,
    mut feval: impl FnMut(usize, &[f64], &mut [f64]) -> Result<()>,
) -> Result<()> {
    let n = f0.len();
    let mut d_prev2 = vec![0.0; n];
    let mut fj = vec![0.0; n];
    let mut d_next = vec![0.0; n];
    d.clear();
    d.extend(f0.iter().map(|v| c.mu[1] * dt * v));
    for j in 2..=c.s {
        feval(j, d, &mut fj)?;
        let (nu, ka, mu, ga) = (c.nu[j], c.kappa[j], c.mu[j] * dt, c.gamma[j] * dt);
        for i in 0..n {
            d_next[i] = nu * d[i] + ka * d_prev2[i] + mu * fj[i] + ga * f0[i];
        }
        std::mem::swap(&mut d_prev2, d);
        std::mem::swap(d, &mut d_next);
    }
    Ok(())
}

/// One exact RKC step of a nonautonomous right-hand side f(t, y); stage j is
/// evaluated at t + c_{j−1}Δt.
pub fn rkc_step_nonautonomous(
    f: &dyn Fn(f64, &[f64], &mut [f64]),
    t: f64,
    y: &[f64],
    dt: f64,
    coeffs: &RkcCoefficients,
    out: &mut [f64],
) -> Result<()> {
    let n = y.len();
    let mut f0 = vec![0.0; n];
    f(t, y, &mut f0);
    let mut d = Vec::with_capacity(n);
    let mut stage = vec![0.0; n];
    delta_recursion(coeffs, dt, &f0, &mut d, |j, dj, out| {
        for i in 0..n {
            stage[i] = y[i] + dj[i];
        }
        f(t + coeffs.c[j - 1] * dt, &stage, out);
        Ok(())
    })?;
    for i in 0..n {
        out[i] = y[i] + d[i];
    }
    if !all_finite(out) {
        return Err(Error::NonFiniteState { t: t + dt });
    }
    Ok(())
}

/// One exact RKC step yⁿ⁺¹ = yⁿ + d_s.
pub fn rkc_step(rhs: &Rhs, y: &[f64], dt: f64, coeffs: &RkcCoefficients, out: &mut [f64]) -> Result<()> {
    rkc_step_nonautonomous(&|_, y, out| rhs.eval(y, out), 0.0, y, dt, coeffs, out)
}

/// Arithmetic mode of [`RkcStepper`].
#[derive(Clone, Debug)]
pub enum RkcMode {
    Exact,
    /// Every evaluation of f in the low format, vector updates in full precision.
    NaiveMixed(LoweredRhs),
}

/// Exact or naive mixed-precision RKC.
#[derive(Clone, Debug)]
pub struct RkcStepper {
    rhs: Rhs,
    selector: StageSelector,
    mode: RkcMode,
    counters: Counters,
}

impl RkcStepper {
    pub fn exact(rhs: &Rhs, p: u8, eps: f64, rule: StageRule) -> Result<Self> {
        Ok(Self {
            rhs: rhs.clone(),
            selector: StageSelector::new(p, eps, rule)?,
            mode: RkcMode::Exact,
            counters: Counters::default(),
        })
    }

    pub fn naive_mixed(rhs: &Rhs, p: u8, eps: f64, rule: StageRule, fmt: FloatFormat) -> Result<Self> {
        Ok(Self {
            rhs: rhs.clone(),
            selector: StageSelector::new(p, eps, rule)?,
            mode: RkcMode::NaiveMixed(rhs.lowered(fmt)?),
            counters: Counters::default(),
        })
    }
}

impl Stepper for RkcStepper {
    fn step(&mut self, y: &[f64], dt: f64, out: &mut [f64]) -> Result<StepInfo> {
        let (plan, coeffs) = self.selector.plan(&self.rhs, y, dt)?;
        let n = y.len();
        let mut f0 = vec![0.0; n];
        let mut stage = vec![0.0; n];
        let mut d = Vec::with_capacity(n);
        match &self.mode {
            RkcMode::Exact => {
                self.rhs.eval(y, &mut f0);
                self.counters.high += plan.s as u64;
                delta_recursion(&coeffs, dt, &f0, &mut d, |_, dj, out| {
                    for i in 0..n {
                        stage[i] = y[i] + dj[i];
                    }
                    self.rhs.eval(&stage, out);
                    Ok(())
                })?;
            }
            RkcMode::NaiveMixed(low) => {
                low.eval(y, &mut f0)?;
                self.counters.low += plan.s as u64;
                delta_recursion(&coeffs, dt, &f0, &mut d, |_, dj, out| {
                    for i in 0..n {
                        stage[i] = y[i] + dj[i];
                    }
                    low.eval(&stage, out)
                })?;
            }
        }
        for i in 0..n {
            out[i] = y[i] + d[i];
        }
        self.counters.steps += 1;
        Ok(StepInfo { s: plan.s, rho: plan.rho, m: 0, eta: 0.0 })
    }

    fn counters(&self) -> Counters {
        self.counters
    }
}

/// Integrates with exact or naive mixed-precision RKC.
pub fn rkc_integrate(
    rhs: &Rhs,
    y0: &[f64],
    t_end: f64,
    dt: f64,
    p: u8,
    eps: f64,
    rule: StageRule,
    low: Option<FloatFormat>,
) -> Result<IntegrationTrace> {
    let mut st = match low {
        None => RkcStepper::exact(rhs, p, eps, rule)?,
        Some(fmt) => RkcStepper::naive_mixed(rhs, p, eps, rule, fmt)?,
    };
    integrate(&mut st, y0, t_end, dt, None)
}

/// One classical RK4 step.
pub fn rk4_step(rhs: &Rhs, y: &[f64], dt: f64, out: &mut [f64]) {
    let n = y.len();
    let mut k = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    out.copy_from_slice(y);
    let weights = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
    let shifts = [0.5, 0.5, 1.0];
    rhs.eval(y, &mut k);
    for stage in 0..4 {
        for i in 0..n {
            out[i] += weights[stage] * dt * k[i];
        }
        if stage < 3 {
            for i in 0..n {
                tmp[i] = y[i] + shifts[stage] * dt * k[i];
            }
            rhs.eval(&tmp, &mut k);
        }
    }
}

/// Classical RK4 as a [`Stepper`].
#[derive(Clone, Debug)]
pub struct Rk4Stepper {
    rhs: Rhs,
    counters: Counters,
}

impl Rk4Stepper {
    pub fn new(rhs: &Rhs) -> Self {
        Self { rhs: rhs.clone(), counters: Counters::default() }
    }
}

impl Stepper for Rk4Stepper {
    fn step(&mut self, y: &[f64], dt: f64, out: &mut [f64]) -> Result<StepInfo> {
        rk4_step(&self.rhs, y, dt, out);
        self.counters.high += 4;
        self.counters.steps += 1;
        Ok(StepInfo { s: 4, ..Default::default() })
    }

    fn counters(&self) -> Counters {
        self.counters
    }
}

/// Reference step size min(2/ρ, Δt/4).
pub fn reference_step(rho: f64, dt: f64) -> f64 {
    if rho > 0.0 {
        (2.0 / rho).min(dt / 4.0)
    } else {
        dt / 4.0
    }
}

/// RK4 reference trajectory with states at every multiple of `dt_target`
/// (and at `t_end`). Each sampling interval is split into equal RK4 substeps
/// no longer than [`reference_step`] for the finest compared step `dt_finest`.
pub fn rk4_reference(
    rhs: &Rhs,
    y0: &[f64],
    t_end: f64,
    dt_target: f64,
    dt_finest: f64,
    rho: f64,
) -> Result<Vec<(f64, Vec<f64>)>> {
    if !(dt_target > 0.0) || !(dt_finest > 0.0) {
        return Err(Error::InvalidArgument(format!("dt = {dt_target}, finest = {dt_finest}")));
    }
    let href = reference_step(rho, dt_finest);
    let sub = (dt_target / href - 1e-9).ceil().max(1.0) as usize;
    let n_int = if t_end == 0.0 { 0 } else { ((t_end / dt_target) - 1e-9).ceil().max(1.0) as usize };
    let mut out = vec![(0.0, y0.to_vec())];
    let mut y = y0.to_vec();
    let mut next = vec![0.0; y.len()];
    for k in 1..=n_int {
        let t0 = (k - 1) as f64 * dt_target;
        let t1 = if k == n_int { t_end } else { k as f64 * dt_target };
        let h = (t1 - t0) / sub as f64;
        for _ in 0..sub {
            rk4_step(rhs, &y, h, &mut next);
            std::mem::swap(&mut y, &mut next);
        }
        if !all_finite(&y) {
            return Err(Error::NonFiniteState { t: t1 });
        }
        out.push((t1, y.clone()));
    }
    Ok(out)
}
