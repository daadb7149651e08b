//! Order-preserving mixed-precision RKC and the q-order-preserving RK step
//! for linear problems.
//!
//! A step evaluates f(ŷⁿ) once in full precision and replaces the remaining
//! s − 1 evaluations by low-precision increments Δ̂f_j ≈ f(ŷⁿ + d̂_j) − f(ŷⁿ).

use std::sync::atomic::{AtomicBool, Ordering};

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::precision::FloatFormat;
use crate::problems::{LoweredRhs, Rhs};
use crate::rkc::{delta_recursion, integrate, Counters, IntegrationTrace, StageRule, StageSelector, StepInfo, Stepper};
use crate::vecops::{norm2, norm_inf};

/// How Δ̂f_j is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StrategyFamily {
    /// Â·d̂ in low precision, g differences in full precision.
    Scenario1,
    /// Â·d̂ plus a scaled low-precision forward difference of g.
    FiniteDifference,
    /// Â·d̂ plus the low-precision analytic Jacobian action of g.
    Analytic,
    /// Â·d̂ plus a low-precision analytic difference g(y + b) − g(y).
    ExactDifference,
}

impl StrategyFamily {
    pub fn id(self) -> &'static str {
        match self {
            Self::Scenario1 => "s1",
            Self::FiniteDifference => "s2-fd",
            Self::Analytic => "analytic",
            Self::ExactDifference => "exact-diff",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "s1" => Ok(Self::Scenario1),
            "s2-fd" | "fd" => Ok(Self::FiniteDifference),
            "analytic" => Ok(Self::Analytic),
            "exact-diff" => Ok(Self::ExactDifference),
            _ => Err(Error::InvalidArgument(format!("unknown strategy '{id}'"))),
        }
    }

    pub const ALL: [StrategyFamily; 4] =
        [Self::Scenario1, Self::FiniteDifference, Self::Analytic, Self::ExactDifference];
}

/// Accuracy order of an increment: O(εΔt) or O(εΔt²).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DeltaOrder {
    First,
    Second,
}

/// A Δ̂f strategy bound to a low format.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaFStrategy {
    pub family: StrategyFamily,
    pub format: FloatFormat,
}

impl DeltaFStrategy {
    pub fn new(family: StrategyFamily, format: FloatFormat) -> Self {
        Self { family, format }
    }

    /// Rejects strategies the problem cannot support.
    pub fn validate(&self, rhs: &Rhs) -> Result<()> {
        let fail = |reason| Err(Error::StrategyUnavailable { strategy: self.family.id(), reason });
        match self.family {
            StrategyFamily::Scenario1 if !rhs.has_linear() => fail("problem has no explicit linear part"),
            StrategyFamily::Analytic if !rhs.has_jacobian() => fail("problem has no analytic Jacobian"),
            StrategyFamily::ExactDifference if !rhs.has_difference() => fail("problem has no analytic difference"),
            _ => Ok(()),
        }
    }
}

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

/// δ = √u/Δt^k, capped so that δ‖d‖∞ ≤ √u·max(1, ‖y‖∞) and raised, if
/// needed, so that δ‖d‖∞ is a normal number of the low format.
/// Returns (δ, clamped).
pub fn fd_delta(fmt: &FloatFormat, dt: f64, power: i32, d_inf: f64, y_inf: f64) -> (f64, bool) {
    let su = fmt.u().sqrt();
    let mut base = su / dt.powi(power);
    if d_inf > 0.0 {
        base = base.min(su * y_inf.max(1.0) / d_inf);
    }
    if d_inf > 0.0 && base * d_inf < fmt.xmin() {
        if !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
            warn!("finite-difference increment clamped to the smallest normal of {}", fmt.name());
        }
        debug!("delta clamp: δ = {base:e}, ‖d‖∞ = {d_inf:e}");
        (fmt.xmin() / d_inf, true)
    } else {
        (base, false)
    }
}

/// Âd̂ + g(ŷ + d̂) − g(ŷ), `g0` = g(ŷ).
pub fn delta_f_scenario1_first(low: &LoweredRhs, y: &[f64], g0: &[f64], d: &[f64], out: &mut [f64]) -> Result<()> {
    let n = y.len();
    low.apply_a(d, out)?;
    let yd: Vec<f64> = y.iter().zip(d).map(|(a, b)| a + b).collect();
    let mut g = vec![0.0; n];
    low.rhs().eval_g(&yd, &mut g);
    for i in 0..n {
        out[i] += g[i] - g0[i];
    }
    Ok(())
}

/// Âv̂ + cΔt·A f(ŷ) + g(ŷ + d̂) − g(ŷ) with v̂ = d̂ − cΔt f(ŷ); `c_af0` holds cΔt·A f(ŷ).
pub fn delta_f_scenario1_second(
    low: &LoweredRhs,
    y: &[f64],
    g0: &[f64],
    d: &[f64],
    v: &[f64],
    c_af0: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let n = y.len();
    low.apply_a(v, out)?;
    let yd: Vec<f64> = y.iter().zip(d).map(|(a, b)| a + b).collect();
    let mut g = vec![0.0; n];
    low.rhs().eval_g(&yd, &mut g);
    for i in 0..n {
        out[i] += c_af0[i] + (g[i] - g0[i]);
    }
    Ok(())
}

/// Âd̂ + δ⁻¹(ĝ(ŷ + δd̂) − g(ŷ)), δ = √u/Δt. Returns whether δ was clamped.
pub fn delta_f_fd_first(low: &LoweredRhs, y: &[f64], g0: &[f64], d: &[f64], dt: f64, out: &mut [f64]) -> Result<bool> {
    let n = y.len();
    low.apply_a(d, out)?;
    let d_inf = norm_inf(d);
    if d_inf == 0.0 || low.rhs().is_affine() {
        return Ok(false);
    }
    let (delta, clamped) = fd_delta(&low.format(), dt, 1, d_inf, norm_inf(y));
    let arg: Vec<f64> = y.iter().zip(d).map(|(a, b)| a + delta * b).collect();
    let mut g = vec![0.0; n];
    low.eval_g(&arg, &mut g);
    for i in 0..n {
        out[i] += (g[i] - g0[i]) / delta;
    }
    Ok(clamped)
}

/// Full-precision per-step vectors for second-order increments.
#[derive(Clone, Debug)]
pub struct SecondOrderCaches {
    /// A f(ŷ).
    pub af0: Vec<f64>,
    /// g′(ŷ) f(ŷ).
    pub gpf0: Vec<f64>,
}

/// Âv̂ + cΔt A f(ŷ) + δ⁻¹(ĝ(w + δv̂) − ĝ(w)) + cΔt g′(ŷ)f(ŷ), w = ŷ + cΔt f(ŷ),
/// δ = √u/Δt². Returns whether δ was clamped.
#[allow(clippy::too_many_arguments)]
pub fn delta_f_fd_second(
    low: &LoweredRhs,
    caches: &SecondOrderCaches,
    y: &[f64],
    f0: &[f64],
    v: &[f64],
    cdt: f64,
    dt: f64,
    out: &mut [f64],
) -> Result<bool> {
    let n = y.len();
    low.apply_a(v, out)?;
    for i in 0..n {
        out[i] += cdt * caches.af0[i];
    }
    if low.rhs().is_affine() {
        return Ok(false);
    }
    for i in 0..n {
        out[i] += cdt * caches.gpf0[i];
    }
    let v_inf = norm_inf(v);
    if v_inf == 0.0 {
        return Ok(false);
    }
    let w: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + cdt * b).collect();
    let (delta, clamped) = fd_delta(&low.format(), dt, 2, v_inf, norm_inf(&w));
    let wv: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + delta * b).collect();
    let mut g1 = vec![0.0; n];
    let mut g2 = vec![0.0; n];
    low.eval_g(&wv, &mut g1);
    low.eval_g(&w, &mut g2);
    for i in 0..n {
        out[i] += (g1[i] - g2[i]) / delta;
    }
    Ok(clamped)
}

/// State of one mixed-precision step: the full-precision f(ŷ), g(ŷ) and,
/// for second-order increments, the cached A f(ŷ) and g′(ŷ) f(ŷ).
#[derive(Clone, Debug)]
pub struct MixedStepState<'a> {
    pub low: &'a LoweredRhs,
    pub strategy: StrategyFamily,
    pub y: &'a [f64],
    pub dt: f64,
    pub f0: Vec<f64>,
    pub g0: Vec<f64>,
    pub caches: Option<SecondOrderCaches>,
    /// Branch taken at each stage (true = second order).
    pub branch: Vec<bool>,
    pub clamps: u64,
}

impl<'a> MixedStepState<'a> {
    /// Evaluates f(ŷ) = Aŷ + g(ŷ) in full precision.
    pub fn new(low: &'a LoweredRhs, strategy: StrategyFamily, y: &'a [f64], dt: f64) -> Self {
        let n = y.len();
        let mut g0 = vec![0.0; n];
        low.rhs().eval_g(y, &mut g0);
        let mut f0 = vec![0.0; n];
        low.rhs().apply_a(y, &mut f0);
        for i in 0..n {
            f0[i] += g0[i];
        }
        Self::with_f0(low, strategy, y, dt, f0, g0)
    }

    /// Uses a caller-supplied f(ŷ) (which may carry an additive constant that
    /// cancels in every increment) and g(ŷ).
    pub fn with_f0(
        low: &'a LoweredRhs,
        strategy: StrategyFamily,
        y: &'a [f64],
        dt: f64,
        f0: Vec<f64>,
        g0: Vec<f64>,
    ) -> Self {
        Self { low, strategy, y, dt, f0, g0, caches: None, branch: Vec::new(), clamps: 0 }
    }

    /// Computes A f(ŷ) and g′(ŷ) f(ŷ) in full precision.
    pub fn compute_caches(&mut self) {
        let rhs = self.low.rhs();
        let n = self.y.len();
        let mut af0 = vec![0.0; n];
        rhs.apply_a(&self.f0, &mut af0);
        let mut gpf0 = vec![0.0; n];
        rhs.g_jacobian_action(self.y, &self.f0, &mut gpf0);
        self.caches = Some(SecondOrderCaches { af0, gpf0 });
    }

    /// v̂ = d̂ − cΔt f(ŷ).
    pub fn v_hat(&self, d: &[f64], cdt: f64) -> Vec<f64> {
        d.iter().zip(&self.f0).map(|(a, b)| a - cdt * b).collect()
    }

    /// ‖d̂ − cΔt f(ŷ)‖₂ ≤ ‖d̂‖₂.
    pub fn switch_test(&self, d: &[f64], cdt: f64) -> bool {
        norm2(&self.v_hat(d, cdt)) <= norm2(d)
    }

    /// Δ̂f for the stage delta `d` with abscissa `c`.
    pub fn delta_f(&mut self, order: DeltaOrder, d: &[f64], c: f64, out: &mut [f64]) -> Result<()> {
        let low = self.low;
        let n = d.len();
        if order == DeltaOrder::First {
            match self.strategy {
                StrategyFamily::Scenario1 => delta_f_scenario1_first(low, self.y, &self.g0, d, out)?,
                StrategyFamily::FiniteDifference => {
                    if delta_f_fd_first(low, self.y, &self.g0, d, self.dt, out)? {
                        self.clamps += 1;
                    }
                }
                StrategyFamily::Analytic => {
                    low.apply_a(d, out)?;
                    let mut j = vec![0.0; n];
                    low.g_jacobian_action(self.y, d, &mut j)?;
                    for i in 0..n {
                        out[i] += j[i];
                    }
                }
                StrategyFamily::ExactDifference => {
                    low.apply_a(d, out)?;
                    let mut j = vec![0.0; n];
                    low.g_difference(self.y, d, &mut j)?;
                    for i in 0..n {
                        out[i] += j[i];
                    }
                }
            }
            return Ok(());
        }
        if self.caches.is_none() {
            self.compute_caches();
        }
        let cdt = c * self.dt;
        let v = self.v_hat(d, cdt);
        let caches = self.caches.as_ref().unwrap();
        match self.strategy {
            StrategyFamily::Scenario1 => {
                let c_af0: Vec<f64> = caches.af0.iter().map(|x| cdt * x).collect();
                delta_f_scenario1_second(low, self.y, &self.g0, d, &v, &c_af0, out)?;
            }
            StrategyFamily::FiniteDifference => {
                if delta_f_fd_second(low, caches, self.y, &self.f0, &v, cdt, self.dt, out)? {
                    self.clamps += 1;
                }
            }
            StrategyFamily::Analytic | StrategyFamily::ExactDifference => {
                low.apply_a(&v, out)?;
                let w: Vec<f64> = self.y.iter().zip(&self.f0).map(|(a, b)| a + cdt * b).collect();
                let mut j = vec![0.0; n];
                if self.strategy == StrategyFamily::Analytic {
                    low.g_jacobian_action(&w, &v, &mut j)?;
                } else {
                    low.g_difference(&w, &v, &mut j)?;
                }
                for i in 0..n {
                    out[i] += cdt * (caches.af0[i] + caches.gpf0[i]) + j[i];
                }
            }
        }
        Ok(())
    }
}

/// Which increments a mixed-precision RKC step uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixedVariant {
    /// First-order increments throughout (1-order-preserving for p ∈ {1, 2}).
    FirstOrder,
    /// p = 2 with the per-stage switch to second-order increments.
    Hybrid,
}

/// One mixed-precision RKC step with a precomputed coefficient table.
pub fn mp_rkc_step(
    low: &LoweredRhs,
    strategy: StrategyFamily,
    variant: MixedVariant,
    coeffs: &crate::chebyshev::RkcCoefficients,
    y: &[f64],
    dt: f64,
    out: &mut [f64],
    counters: &mut Counters,
) -> Result<()> {
    if variant == MixedVariant::Hybrid && coeffs.p != 2 {
        return Err(Error::InvalidArgument("the hybrid scheme needs p = 2".into()));
    }
    let n = y.len();
    let mut st = MixedStepState::new(low, strategy, y, dt);
    counters.high += 1;
    if variant == MixedVariant::Hybrid && coeffs.s > 1 {
        st.compute_caches();
        counters.caches += 2;
    }
    let f0 = st.f0.clone();
    let mut d = Vec::with_capacity(n);
    let mut df = vec![0.0; n];
    delta_recursion(coeffs, dt, &f0, &mut d, |j, dj, fj| {
        let c = coeffs.c[j - 1];
        let order = if variant == MixedVariant::Hybrid && st.switch_test(dj, c * dt) {
            counters.second_order_stages += 1;
            DeltaOrder::Second
        } else {
            counters.first_order_stages += 1;
            DeltaOrder::First
        };
        st.branch.push(order == DeltaOrder::Second);
        st.delta_f(order, dj, c, &mut df)?;
        counters.low += 1;
        for i in 0..n {
            fj[i] = f0[i] + df[i];
        }
        Ok(())
    })?;
    counters.delta_clamps += st.clamps;
    for i in 0..n {
        out[i] = y[i] + d[i];
    }
    if !crate::vecops::all_finite(out) {
        return Err(Error::NonFiniteState { t: f64::NAN });
    }
    Ok(())
}

/// Mixed-precision RKC as a [`Stepper`].
#[derive(Clone, Debug)]
pub struct MpRkcStepper {
    rhs: Rhs,
    low: LoweredRhs,
    strategy: StrategyFamily,
    variant: MixedVariant,
    selector: StageSelector,
    counters: Counters,
}

impl MpRkcStepper {
    pub fn new(
        rhs: &Rhs,
        p: u8,
        eps: f64,
        rule: StageRule,
        strategy: DeltaFStrategy,
        variant: MixedVariant,
    ) -> Result<Self> {
        strategy.validate(rhs)?;
        if variant == MixedVariant::Hybrid && p != 2 {
            return Err(Error::InvalidArgument("the hybrid scheme needs p = 2".into()));
        }
        Ok(Self {
            rhs: rhs.clone(),
            low: rhs.lowered(strategy.format)?,
            strategy: strategy.family,
            variant,
            selector: StageSelector::new(p, eps, rule)?,
            counters: Counters::default(),
        })
    }
}

impl Stepper for MpRkcStepper {
    fn step(&mut self, y: &[f64], dt: f64, out: &mut [f64]) -> Result<StepInfo> {
        let (plan, coeffs) = self.selector.plan(&self.rhs, y, dt)?;
        mp_rkc_step(&self.low, self.strategy, self.variant, &coeffs, y, dt, out, &mut self.counters)?;
        self.counters.steps += 1;
        Ok(StepInfo { s: plan.s, rho: plan.rho, m: 0, eta: 0.0 })
    }

    fn counters(&self) -> Counters {
        self.counters
    }
}

/// Integrates with mixed-precision RKC.
#[allow(clippy::too_many_arguments)]
pub fn mp_rkc_integrate(
    rhs: &Rhs,
    y0: &[f64],
    t_end: f64,
    dt: f64,
    p: u8,
    eps: f64,
    rule: StageRule,
    strategy: DeltaFStrategy,
    variant: MixedVariant,
) -> Result<IntegrationTrace> {
    let mut st = MpRkcStepper::new(rhs, p, eps, rule, strategy, variant)?;
    integrate(&mut st, y0, t_end, dt, None)
}

/// Weights (1 + a_j)/j!, j = 0..=4, of classical RK4 on linear problems.
pub fn rk4_linear_weights() -> Vec<f64> {
    vec![1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0]
}

/// One q-order-preserving step of an s-stage RK method on f(y) = Ay + c.
///
/// With f⁰ = Aŷ + c the step is ŷ + Σ_{j=1}^{s} w_j Δt^j A^{j−1} f⁰. The first
/// q of the s matrix-vector products (f⁰ included) are done in full
/// precision; the rest are chained through the squeezed low-precision A.
/// `weights[j]` = (1 + a_j)/j!.
pub fn q_order_rk_linear_step(
    low: &LoweredRhs,
    y: &[f64],
    dt: f64,
    q: usize,
    weights: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let rhs = low.rhs();
    if !rhs.is_affine() {
        return Err(Error::NonLinearProblem);
    }
    let s = weights.len() - 1;
    if q > s {
        return Err(Error::InvalidArgument(format!("q = {q} > s = {s}")));
    }
    let n = y.len();
    let mut c = vec![0.0; n];
    rhs.eval_g(y, &mut c);
    let mut term = vec![0.0; n];
    if q >= 1 {
        rhs.apply_a(y, &mut term);
        for i in 0..n {
            term[i] += c[i];
        }
    } else {
        low.eval(y, &mut term)?;
    }
    out.copy_from_slice(y);
    let mut next = vec![0.0; n];
    let mut h = 1.0;
    for j in 1..=s {
        h *= dt;
        for i in 0..n {
            out[i] += weights[j] * h * term[i];
        }
        if j < s {
            if j < q {
                rhs.apply_a(&term, &mut next);
            } else {
                low.apply_a(&term, &mut next)?;
            }
            std::mem::swap(&mut term, &mut next);
        }
    }
    if !crate::vecops::all_finite(out) {
        return Err(Error::NonFiniteState { t: f64::NAN });
    }
    Ok(())
}

/// q-order-preserving RK as a [`Stepper`].
#[derive(Clone, Debug)]
pub struct QOrderRkStepper {
    low: LoweredRhs,
    q: usize,
    weights: Vec<f64>,
    counters: Counters,
}

impl QOrderRkStepper {
    pub fn new(rhs: &Rhs, fmt: FloatFormat, q: usize, weights: Vec<f64>) -> Result<Self> {
        if !rhs.is_affine() {
            return Err(Error::NonLinearProblem);
        }
        if q + 1 > weights.len() {
            return Err(Error::InvalidArgument(format!("q = {q} > s = {}", weights.len() - 1)));
        }
        Ok(Self { low: rhs.lowered(fmt)?, q, weights, counters: Counters::default() })
    }
}

impl Stepper for QOrderRkStepper {
    fn step(&mut self, y: &[f64], dt: f64, out: &mut [f64]) -> Result<StepInfo> {
        q_order_rk_linear_step(&self.low, y, dt, self.q, &self.weights, out)?;
        let s = self.weights.len() - 1;
        self.counters.high += self.q as u64;
        self.counters.low += (s - self.q) as u64;
        self.counters.steps += 1;
        Ok(StepInfo { s, ..Default::default() })
    }

    fn counters(&self) -> Counters {
        self.counters
    }
}

/// Cost-reduction factor of a mixed-precision scheme and its limits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostReport {
    pub s: usize,
    pub q: usize,
    pub r: f64,
    /// ϱ = (s − q)(r − 1)/(sr).
    pub rho: f64,
    /// Limit s → ∞: 1 − 1/r.
    pub limit_s: f64,
    /// Limit r → ∞: 1 − q/s.
    pub limit_r: f64,
}

pub fn cost_report(s: usize, q: usize, r: f64) -> Result<CostReport> {
    if s == 0 || q > s || !(r >= 1.0) {
        return Err(Error::InvalidArgument(format!("need s ≥ q ≥ 0, s ≥ 1, r ≥ 1 (s = {s}, q = {q}, r = {r})")));
    }
    let (sf, qf) = (s as f64, q as f64);
    Ok(CostReport { s, q, r, rho: (sf - qf) * (r - 1.0) / (sf * r), limit_s: 1.0 - 1.0 / r, limit_r: 1.0 - qf / sf })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chebyshev::{make_rkc_coefficients, stability_boundary};
    use crate::precision::Arith;
    use crate::problems::{build_heat, build_problem_1, build_problem_4, Nonlinear};
    use crate::rkc::{rk4_step, rkc_step};
    use std::sync::Arc;

    #[derive(Debug)]
    struct Square;
    impl Nonlinear for Square {
        fn eval(&self, y: &[f64], ar: Arith, out: &mut [f64]) {
            out[0] = ar.mul(y[0], y[0]);
        }
    }

    #[test]
    fn cost_examples() {
        assert!((cost_report(4, 2, 4.0).unwrap().rho - 0.375).abs() < 1e-15);
        let r = cost_report(64, 1, 4.0).unwrap();
        assert!((r.rho - 63.0 * 3.0 / 256.0).abs() < 1e-15);
        assert!((r.rho - 0.74).abs() < 0.005);
        assert_eq!(cost_report(8, 1, 1.0).unwrap().rho, 0.0);
        assert!(cost_report(2, 3, 4.0).is_err());
    }

    #[test]
    fn fd_quadratic_remainder() {
        // g(y) = y², y = 1, d = Δt: the FD error is δ·d² = √u·Δt exactly
        // up to the rounding of ĝ.
        let rhs = Rhs::new(1, None, Some(Arc::new(Square)));
        let fmt = FloatFormat::fp32();
        let low = rhs.lowered(fmt).unwrap();
        for dt in [1e-2, 1e-3] {
            let d = [dt];
            let mut out = [0.0];
            delta_f_fd_first(&low, &[1.0], &[1.0], &d, dt, &mut out).unwrap();
            let delta = fmt.u().sqrt() / dt;
            let exact_fd = 2.0 * d[0] + delta * d[0] * d[0];
            let arg = fmt.round(1.0 + delta * d[0]);
            let with_rounding = (fmt.round(arg * arg) - 1.0) / delta;
            assert_eq!(out[0], with_rounding);
            assert!((out[0] - exact_fd).abs() <= 4.0 * fmt.u() / delta);
            assert!((delta * d[0] * d[0] - fmt.u().sqrt() * dt).abs() <= 1e-15 * delta * d[0] * d[0]);
        }
    }

    #[test]
    fn zero_delta_gives_zero_increment() {
        let p = build_problem_1(1, 16, 1.0).unwrap();
        let low = p.rhs.lowered(FloatFormat::bfloat16()).unwrap();
        let y = vec![1.3; p.dim()];
        let z = vec![0.0; p.dim()];
        for fam in StrategyFamily::ALL {
            let mut st = MixedStepState::new(&low, fam, &y, 1e-3);
            let mut out = vec![1.0; p.dim()];
            st.delta_f(DeltaOrder::First, &z, 0.3, &mut out).unwrap();
            assert!(out.iter().all(|v| *v == 0.0), "{fam:?}");
        }
    }

    #[test]
    fn scenario1_second_pure_cache() {
        let p = build_heat(1, 16, 1.0).unwrap();
        let mut rhs = p.rhs.clone();
        rhs.nonlinear = None;
        let low = rhs.lowered(FloatFormat::bfloat16()).unwrap();
        let y: Vec<f64> = (0..15).map(|i| (i as f64).cos()).collect();
        let mut st = MixedStepState::new(&low, StrategyFamily::Scenario1, &y, 1e-3);
        let c = 0.4;
        let d: Vec<f64> = st.f0.iter().map(|f| c * 1e-3 * f).collect();
        st.compute_caches();
        let v = st.v_hat(&d, c * 1e-3);
        assert!(v.iter().all(|x| *x == 0.0));
        let mut out = vec![0.0; 15];
        st.delta_f(DeltaOrder::Second, &d, c, &mut out).unwrap();
        let af0 = &st.caches.as_ref().unwrap().af0;
        for i in 0..15 {
            assert_eq!(out[i], c * 1e-3 * af0[i]);
        }
        assert!(st.switch_test(&d, c * 1e-3));
    }

    #[test]
    fn scenario1_requires_linear_part() {
        let p = build_problem_4(16).unwrap();
        let s = DeltaFStrategy::new(StrategyFamily::Scenario1, FloatFormat::fp16());
        assert!(matches!(s.validate(&p.rhs), Err(Error::StrategyUnavailable { .. })));
        let fd = DeltaFStrategy::new(StrategyFamily::FiniteDifference, FloatFormat::fp16());
        assert!(fd.validate(&p.rhs).is_ok());
    }

    #[test]
    fn dahlquist_scenario1_fp64() {
        let a = crate::sparse::CsrMatrix::from_triplets(1, 1, &[(0, 0, 1.0)]);
        for p in [1u8, 2] {
            for s in [3usize, 10, 40] {
                let c = make_rkc_coefficients(p, s, crate::chebyshev::default_damping(p)).unwrap();
                let beta = stability_boundary(p, s, c.eps).unwrap();
                for frac in [0.05, 0.5, 0.99] {
                    let z = -frac * beta;
                    let rhs = Rhs::new(1, Some(a.scaled(z)), None);
                    let low = rhs.lowered(FloatFormat::fp64()).unwrap();
                    for variant in [MixedVariant::FirstOrder, MixedVariant::Hybrid] {
                        if variant == MixedVariant::Hybrid && p == 1 {
                            continue;
                        }
                        let mut out = [0.0];
                        let mut cnt = Counters::default();
                        mp_rkc_step(&low, StrategyFamily::Scenario1, variant, &c, &[1.0], 1.0, &mut out, &mut cnt)
                            .unwrap();
                        let r = c.stability_poly(z);
                        assert!((out[0] - r).abs() <= 1e-13 * (s * s) as f64 * r.abs().max(1e-3), "{p} {s} {z}");
                    }
                }
            }
        }
    }

    #[test]
    fn budget_per_step() {
        let p = build_problem_1(1, 32, 1.0).unwrap();
        for s in [4usize, 9] {
            let strat = DeltaFStrategy::new(StrategyFamily::FiniteDifference, FloatFormat::bfloat16());
            let tr = mp_rkc_integrate(
                &p.rhs,
                &p.y0,
                0.01,
                0.001,
                1,
                0.05,
                StageRule::Fixed(s),
                strat,
                MixedVariant::FirstOrder,
            )
            .unwrap();
            let c = tr.counters;
            assert_eq!(c.high, c.steps);
            assert_eq!(c.low, c.steps * (s as u64 - 1));
            assert_eq!(c.caches, 0);
            let tr = mp_rkc_integrate(
                &p.rhs,
                &p.y0,
                0.01,
                0.001,
                2,
                2.0 / 13.0,
                StageRule::Fixed(s),
                strat,
                MixedVariant::Hybrid,
            )
            .unwrap();
            let c = tr.counters;
            assert_eq!(c.high, c.steps);
            assert_eq!(c.caches, 2 * c.steps);
            assert_eq!(c.low, c.steps * (s as u64 - 1));
            assert_eq!(c.first_order_stages + c.second_order_stages, c.low);
        }
    }

    #[test]
    fn fp64_scenario1_matches_exact_rkc() {
        let p = build_problem_1(1, 32, 1.0).unwrap();
        let low = p.rhs.lowered(FloatFormat::fp64()).unwrap();
        let c = make_rkc_coefficients(2, 12, 2.0 / 13.0).unwrap();
        let y: Vec<f64> = p.y0.iter().enumerate().map(|(i, v)| v + 0.1 * (i as f64).sin()).collect();
        let mut exact = vec![0.0; y.len()];
        rkc_step(&p.rhs, &y, 2e-3, &c, &mut exact).unwrap();
        for variant in [MixedVariant::FirstOrder, MixedVariant::Hybrid] {
            let mut out = vec![0.0; y.len()];
            let mut cnt = Counters::default();
            mp_rkc_step(&low, StrategyFamily::Scenario1, variant, &c, &y, 2e-3, &mut out, &mut cnt).unwrap();
            let rel = crate::vecops::dist2(&out, &exact) / norm2(&exact);
            assert!(rel < 1e-13, "{variant:?} {rel}");
        }
    }

    #[test]
    fn q_order_limits() {
        let p = build_heat(2, 8, 1.0).unwrap();
        let y: Vec<f64> = (0..p.dim()).map(|i| 1.0 + 0.1 * (i as f64).sin()).collect();
        let dt = 1e-3;
        let mut rk4 = vec![0.0; y.len()];
        rk4_step(&p.rhs, &y, dt, &mut rk4);
        let w = rk4_linear_weights();
        // q = s: all products in full precision
        let low = p.rhs.lowered(FloatFormat::bfloat16()).unwrap();
        let mut out = vec![0.0; y.len()];
        q_order_rk_linear_step(&low, &y, dt, 4, &w, &mut out).unwrap();
        assert!(crate::vecops::dist_inf(&out, &rk4) < 1e-13);
        // q = 0 with Â = A
        let low64 = p.rhs.lowered(FloatFormat::fp64()).unwrap();
        q_order_rk_linear_step(&low64, &y, dt, 0, &w, &mut out).unwrap();
        assert!(crate::vecops::dist_inf(&out, &rk4) < 1e-13);
        let p1 = build_problem_1(1, 8, 1.0).unwrap();
        let l1 = p1.rhs.lowered(FloatFormat::fp16()).unwrap();
        assert_eq!(q_order_rk_linear_step(&l1, &p1.y0, dt, 1, &w, &mut vec![0.0; 7]), Err(Error::NonLinearProblem));
        assert!(q_order_rk_linear_step(&low, &y, dt, 5, &w, &mut out).is_err());
    }
}
