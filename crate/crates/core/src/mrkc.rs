//! Multirate RKC on f = f_F + f_S: the averaged force f̄_η, the (s, m, η)
//! selection, the exact mRKC integrator and its mixed-precision variant.

use std::sync::atomic::{AtomicBool, Ordering};

use log::warn;

use crate::chebyshev::{make_inner_coefficients, rkc_coefficients, InnerCoefficients};
use crate::error::{Error, Result};
use crate::mp_rkc::{fd_delta, DeltaFStrategy, DeltaOrder, MixedStepState, StrategyFamily};
use crate::problems::{estimate_spectral_radius, LoweredRhs, MultirateProblem, PowerOptions, Rhs};
use crate::rkc::{delta_recursion, integrate, Counters, IntegrationTrace, Sampling, StepInfo, Stepper};
use crate::vecops::{all_finite, norm_inf};

/// φ(z) = (eᶻ − 1)/z with φ(0) = 1.
pub fn phi(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 + z / 2.0 * (1.0 + z / 3.0 * (1.0 + z / 4.0))
    } else {
        z.exp_m1() / z
    }
}

/// Stage numbers and inner step of one multirate step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiratePlan {
    pub dt: f64,
    pub rho_s: f64,
    pub rho_f: f64,
    pub s: usize,
    pub m: usize,
    pub eta: f64,
    pub eps: f64,
}

/// β = 2 − 4ε/3.
pub fn multirate_beta(eps: f64) -> f64 {
    2.0 - 4.0 * eps / 3.0
}

/// η = 6Δt m² / (βs²(m² − 1)).
pub fn multirate_eta(dt: f64, s: usize, m: usize, eps: f64) -> f64 {
    let (s2, m2) = ((s * s) as f64, (m * m) as f64);
    6.0 * dt / (multirate_beta(eps) * s2) * m2 / (m2 - 1.0)
}

/// Δtρ_S ≤ βs².
pub fn outer_admissible(dt: f64, rho_s: f64, s: usize, eps: f64) -> bool {
    dt * rho_s <= multirate_beta(eps) * (s * s) as f64
}

/// ηρ_F ≤ βm² with η from [`multirate_eta`]; never true for m = 1.
pub fn inner_admissible(dt: f64, rho_f: f64, s: usize, m: usize, eps: f64) -> bool {
    m >= 2 && multirate_eta(dt, s, m, eps) * rho_f <= multirate_beta(eps) * (m * m) as f64
}

/// Smallest s, then smallest m ≥ 2, then η.
pub fn select_multirate_plan(dt: f64, rho_s: f64, rho_f: f64, eps: f64) -> Result<MultiratePlan> {
    if !(dt > 0.0) || !(rho_s >= 0.0) || !(rho_f >= 0.0) || !rho_s.is_finite() || !rho_f.is_finite() {
        return Err(Error::InvalidArgument(format!("dt = {dt}, ρ_S = {rho_s}, ρ_F = {rho_f}")));
    }
    let beta = multirate_beta(eps);
    if !(beta > 0.0) || eps < 0.0 {
        return Err(Error::InvalidDamping(eps));
    }
    let mut s = ((dt * rho_s / beta).sqrt().ceil() as usize).max(1);
    while s > 1 && outer_admissible(dt, rho_s, s - 1, eps) {
        s -= 1;
    }
    while !outer_admissible(dt, rho_s, s, eps) {
        s += 1;
    }
    let guess = (1.0 + 6.0 * dt * rho_f / (beta * beta * (s * s) as f64)).sqrt().ceil() as usize;
    let mut m = guess.max(2);
    while m > 2 && inner_admissible(dt, rho_f, s, m - 1, eps) {
        m -= 1;
    }
    while !inner_admissible(dt, rho_f, s, m, eps) {
        m += 1;
    }
    Ok(MultiratePlan { dt, rho_s, rho_f, s, m, eta: multirate_eta(dt, s, m, eps), eps })
}

fn add_into(out: &mut [f64], a: &[f64], b: &[f64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = x + y;
    }
}

/// The inner recursion h_j = β_j h_{j−1} + γ_j h_{j−2} + α_j(F(j, h_{j−1}) + S),
/// h_1 = α_1(F₀ + S); `fast(h, out)` returns the fast force at y + ηh.
fn inner_sweep(
    inner: &InnerCoefficients,
    f_fast0: &[f64],
    f_slow: &[f64],
    mut fast: impl FnMut(&[f64], &mut [f64]) -> Result<()>,
    mut keep: impl FnMut(&[f64]),
) -> Result<Vec<f64>> {
    let n = f_slow.len();
    let mut h_prev = vec![0.0; n];
    let mut h: Vec<f64> = (0..n).map(|i| inner.alpha[1] * (f_fast0[i] + f_slow[i])).collect();
    let mut ff = vec![0.0; n];
    let mut next = vec![0.0; n];
    for j in 2..=inner.m {
        keep(&h);
        fast(&h, &mut ff)?;
        let (a, b, g) = (inner.alpha[j], inner.beta[j], inner.gamma[j]);
        for i in 0..n {
            next[i] = b * h[i] + g * h_prev[i] + a * (ff[i] + f_slow[i]);
        }
        std::mem::swap(&mut h_prev, &mut h);
        std::mem::swap(&mut h, &mut next);
    }
    Ok(h)
}

/// f̄_η(y): one m-stage RKC1 step of size η on u′ = f_F(u) + f_S(y), divided by η.
pub fn averaged_force(mr: &MultirateProblem, y: &[f64], eta: f64, inner: &InnerCoefficients) -> Result<Vec<f64>> {
    let n = y.len();
    let fs = mr.slow.eval_vec(y);
    let ff = mr.fast.eval_vec(y);
    let mut arg = vec![0.0; n];
    let out = inner_sweep(
        inner,
        &ff,
        &fs,
        |h, out| {
            for i in 0..n {
                arg[i] = y[i] + eta * h[i];
            }
            mr.fast.eval(&arg, out);
            Ok(())
        },
        |_| {},
    )?;
    if !all_finite(&out) {
        return Err(Error::NonFiniteState { t: f64::NAN });
    }
    Ok(out)
}

/// Low-precision views of both splits.
#[derive(Clone, Debug)]
pub struct LoweredSplit {
    pub fast: LoweredRhs,
    pub slow: LoweredRhs,
}

impl LoweredSplit {
    pub fn new(mr: &MultirateProblem, strategy: &DeltaFStrategy) -> Result<Self> {
        strategy.validate(&mr.fast)?;
        Ok(Self { fast: mr.fast.lowered(strategy.format)?, slow: mr.slow.lowered(strategy.format)? })
    }
}

/// f̃_η(y) together with the inner stages h̃_1..h̃_{m−1}.
#[derive(Clone, Debug)]
pub struct MixedAveragedForce {
    pub value: Vec<f64>,
    pub stages: Vec<Vec<f64>>,
}

/// f̃_η(y): f_F(y) and f_S(y) once in full precision, the inner increments
/// f_F(y + ηh̃_j) − f_F(y) by the low-precision strategy with Δt ↦ η.
pub fn mp_averaged_force(
    low: &LoweredSplit,
    family: StrategyFamily,
    y: &[f64],
    eta: f64,
    inner: &InnerCoefficients,
    counters: &mut Counters,
) -> Result<MixedAveragedForce> {
    let n = y.len();
    let fs = low.slow.rhs().eval_vec(y);
    let mut st = MixedStepState::new(&low.fast, family, y, eta);
    counters.high_fast += 1;
    counters.high_slow += 1;
    counters.high += 1;
    let ff0 = st.f0.clone();
    let mut stages = Vec::with_capacity(inner.m);
    let mut d = vec![0.0; n];
    let mut df = vec![0.0; n];
    let mut low_evals = 0;
    let value = inner_sweep(
        inner,
        &ff0,
        &fs,
        |h, out| {
            for i in 0..n {
                d[i] = eta * h[i];
            }
            st.delta_f(DeltaOrder::First, &d, 0.0, &mut df)?;
            low_evals += 1;
            add_into(out, &ff0, &df);
            Ok(())
        },
        |h| stages.push(h.to_vec()),
    )?;
    counters.low += low_evals;
    counters.delta_clamps += st.clamps;
    if !all_finite(&value) {
        return Err(Error::NonFiniteState { t: f64::NAN });
    }
    Ok(MixedAveragedForce { value, stages })
}

/// f̂_η(y): the inner sweep with every evaluation in low precision.
pub fn low_averaged_force(low: &LoweredSplit, y: &[f64], eta: f64, inner: &InnerCoefficients) -> Result<Vec<f64>> {
    let n = y.len();
    let mut fs = vec![0.0; n];
    low.slow.eval(y, &mut fs)?;
    let mut ff = vec![0.0; n];
    low.fast.eval(y, &mut ff)?;
    let mut arg = vec![0.0; n];
    inner_sweep(
        inner,
        &ff,
        &fs,
        |h, out| {
            for i in 0..n {
                arg[i] = y[i] + eta * h[i];
            }
            low.fast.eval(&arg, out)
        },
        |_| {},
    )
}

/// How the outer increments f̄_η(ŷ + d̂) − f̄_η(ŷ) are approximated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OuterStrategy {
    /// δ⁻¹(f̂_η(ŷ + δd̂) − f̃_η(ŷ)), δ = √u/Δt.
    FiniteDifference,
    /// The inner recursion differentiated along d̂, with the split Jacobians
    /// applied in low precision.
    LinearChain,
}

impl OuterStrategy {
    pub fn id(self) -> &'static str {
        match self {
            Self::FiniteDifference => "fd",
            Self::LinearChain => "chain",
        }
    }
}

/// J·x for one split at `at`, in low precision.
fn low_jacobian(low: &LoweredRhs, at: &[f64], x: &[f64], out: &mut [f64]) -> Result<()> {
    low.apply_a(x, out)?;
    if !low.rhs().is_affine() {
        let mut j = vec![0.0; x.len()];
        low.g_jacobian_action(at, x, &mut j)?;
        for (o, v) in out.iter_mut().zip(&j) {
            *o += v;
        }
    }
    Ok(())
}

/// f̄′_η(ŷ)·d through the differentiated inner recursion.
pub fn chained_increment(
    low: &LoweredSplit,
    y: &[f64],
    force: &MixedAveragedForce,
    d: &[f64],
    eta: f64,
    inner: &InnerCoefficients,
) -> Result<Vec<f64>> {
    let n = y.len();
    let mut js = vec![0.0; n];
    low_jacobian(&low.slow, y, d, &mut js)?;
    let mut jf = vec![0.0; n];
    low_jacobian(&low.fast, y, d, &mut jf)?;
    let mut prev = vec![0.0; n];
    let mut cur: Vec<f64> = (0..n).map(|i| inner.alpha[1] * (jf[i] + js[i])).collect();
    let mut at = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut next = vec![0.0; n];
    for j in 2..=inner.m {
        let h = &force.stages[j - 2];
        for i in 0..n {
            at[i] = y[i] + eta * h[i];
            dir[i] = d[i] + eta * cur[i];
        }
        low_jacobian(&low.fast, &at, &dir, &mut jf)?;
        let (a, b, g) = (inner.alpha[j], inner.beta[j], inner.gamma[j]);
        for i in 0..n {
            next[i] = b * cur[i] + g * prev[i] + a * (jf[i] + js[i]);
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(cur)
}

/// Spectral radii of both splits, estimated once for affine splits.
#[derive(Clone, Debug)]
struct SplitRadii {
    power: PowerOptions,
    cached: Option<(f64, f64)>,
}

impl SplitRadii {
    fn get(&mut self, mr: &MultirateProblem, y: &[f64]) -> (f64, f64) {
        if let Some(r) = self.cached {
            if mr.fast.is_affine() && mr.slow.is_affine() {
                return r;
            }
        }
        let rs = estimate_spectral_radius(&mr.slow, y, &self.power).rho;
        let rf = estimate_spectral_radius(&mr.fast, y, &self.power).rho;
        self.cached = Some((rs, rf));
        (rs, rf)
    }
}

/// Arithmetic of [`MrkcStepper`].
#[derive(Clone, Debug)]
pub enum MrkcMode {
    Exact,
    Mixed { low: LoweredSplit, inner: StrategyFamily, outer: OuterStrategy },
}

/// Exact or mixed-precision multirate RKC.
#[derive(Clone, Debug)]
pub struct MrkcStepper {
    mr: MultirateProblem,
    eps: f64,
    radii: SplitRadii,
    mode: MrkcMode,
    counters: Counters,
    last_plan: Option<MultiratePlan>,
}

static DT_WARNED: AtomicBool = AtomicBool::new(false);

impl MrkcStepper {
    pub fn exact(mr: &MultirateProblem, eps: f64, power: PowerOptions) -> Self {
        Self {
            mr: mr.clone(),
            eps,
            radii: SplitRadii { power, cached: None },
            mode: MrkcMode::Exact,
            counters: Counters::default(),
            last_plan: None,
        }
    }

    pub fn mixed(
        mr: &MultirateProblem,
        eps: f64,
        power: PowerOptions,
        strategy: DeltaFStrategy,
        outer: OuterStrategy,
    ) -> Result<Self> {
        let low = LoweredSplit::new(mr, &strategy)?;
        if outer == OuterStrategy::LinearChain && !(mr.fast.has_jacobian() && mr.slow.has_jacobian()) {
            return Err(Error::StrategyUnavailable { strategy: "chain", reason: "split lacks an analytic Jacobian" });
        }
        Ok(Self {
            mr: mr.clone(),
            eps,
            radii: SplitRadii { power, cached: None },
            mode: MrkcMode::Mixed { low, inner: strategy.family, outer },
            counters: Counters::default(),
            last_plan: None,
        })
    }

    pub fn last_plan(&self) -> Option<MultiratePlan> {
        self.last_plan
    }

    fn exact_step(&mut self, plan: &MultiratePlan, y: &[f64], out: &mut [f64]) -> Result<()> {
        let n = y.len();
        let coeffs = rkc_coefficients(1, plan.s, plan.eps)?;
        let inner = make_inner_coefficients(plan.m, plan.eps)?;
        let mr = &self.mr;
        let f0 = averaged_force(mr, y, plan.eta, &inner)?;
        let mut evals = 1u64;
        let mut d = Vec::with_capacity(n);
        let mut arg = vec![0.0; n];
        delta_recursion(&coeffs, plan.dt, &f0, &mut d, |_, dj, fj| {
            add_into(&mut arg, y, dj);
            fj.copy_from_slice(&averaged_force(mr, &arg, plan.eta, &inner)?);
            evals += 1;
            Ok(())
        })?;
        self.counters.high_fast += evals * plan.m as u64;
        self.counters.high_slow += evals;
        self.counters.high += evals;
        add_into(out, y, &d);
        Ok(())
    }

    fn mixed_step(&mut self, plan: &MultiratePlan, y: &[f64], out: &mut [f64]) -> Result<()> {
        let MrkcMode::Mixed { low, inner: family, outer } = &self.mode else { unreachable!() };
        let n = y.len();
        let coeffs = rkc_coefficients(1, plan.s, plan.eps)?;
        let inner = make_inner_coefficients(plan.m, plan.eps)?;
        let counters = &mut self.counters;
        let force = mp_averaged_force(low, *family, y, plan.eta, &inner, counters)?;
        let f0 = force.value.clone();
        let fmt = low.fast.format();
        if *outer == OuterStrategy::FiniteDifference
            && plan.dt > fmt.u().sqrt()
            && !DT_WARNED.swap(true, Ordering::Relaxed)
        {
            warn!("Δt = {} exceeds √u = {} of {}", plan.dt, fmt.u().sqrt(), fmt.name());
        }
        let mut d = Vec::with_capacity(n);
        let mut arg = vec![0.0; n];
        delta_recursion(&coeffs, plan.dt, &f0, &mut d, |_, dj, fj| {
            let inc = match outer {
                OuterStrategy::FiniteDifference => {
                    let d_inf = norm_inf(dj);
                    if d_inf == 0.0 {
                        vec![0.0; n]
                    } else {
                        let (delta, clamped) = fd_delta(&fmt, plan.dt, 1, d_inf, norm_inf(y));
                        counters.delta_clamps += clamped as u64;
                        for i in 0..n {
                            arg[i] = y[i] + delta * dj[i];
                        }
                        let fh = low_averaged_force(low, &arg, plan.eta, &inner)?;
                        counters.low += plan.m as u64 + 1;
                        (0..n).map(|i| (fh[i] - f0[i]) / delta).collect()
                    }
                }
                OuterStrategy::LinearChain => {
                    counters.low += plan.m as u64 + 1;
                    chained_increment(low, y, &force, dj, plan.eta, &inner)?
                }
            };
            add_into(fj, &f0, &inc);
            Ok(())
        })?;
        add_into(out, y, &d);
        Ok(())
    }
}

impl Stepper for MrkcStepper {
    fn step(&mut self, y: &[f64], dt: f64, out: &mut [f64]) -> Result<StepInfo> {
        let (rs, rf) = self.radii.get(&self.mr, y);
        let plan = select_multirate_plan(dt, rs, rf, self.eps)?;
        match self.mode {
            MrkcMode::Exact => self.exact_step(&plan, y, out)?,
            MrkcMode::Mixed { .. } => self.mixed_step(&plan, y, out)?,
        }
        if !all_finite(out) {
            return Err(Error::NonFiniteState { t: f64::NAN });
        }
        self.counters.steps += 1;
        self.last_plan = Some(plan);
        Ok(StepInfo { s: plan.s, rho: rs, m: plan.m, eta: plan.eta })
    }

    fn counters(&self) -> Counters {
        self.counters
    }
}

/// Integrates with exact mRKC.
pub fn mrkc_integrate(
    mr: &MultirateProblem,
    dt: f64,
    eps: f64,
    sampling: Option<Sampling>,
) -> Result<IntegrationTrace> {
    let mut st = MrkcStepper::exact(mr, eps, PowerOptions::default());
    integrate(&mut st, &mr.problem.y0, mr.problem.t_end, dt, sampling)
}

/// Integrates with mixed-precision mRKC.
pub fn mp_mrkc_integrate(
    mr: &MultirateProblem,
    dt: f64,
    eps: f64,
    strategy: DeltaFStrategy,
    outer: OuterStrategy,
    sampling: Option<Sampling>,
) -> Result<IntegrationTrace> {
    let mut st = MrkcStepper::mixed(mr, eps, PowerOptions::default(), strategy, outer)?;
    integrate(&mut st, &mr.problem.y0, mr.problem.t_end, dt, sampling)
}

/// Splits an arbitrary right-hand side into fast = f, slow = 0 or the reverse;
/// used to build degenerate multirate problems.
pub fn degenerate_split(problem: &crate::problems::OdeProblem, all_fast: bool) -> MultirateProblem {
    let n = problem.dim();
    let zero = Rhs::new(n, None, None);
    let (fast, slow) = if all_fast { (problem.rhs.clone(), zero) } else { (zero, problem.rhs.clone()) };
    MultirateProblem { problem: problem.clone(), fast, slow }
}
