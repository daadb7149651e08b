//! Chebyshev polynomials and Runge–Kutta–Chebyshev coefficient tables.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// Default damping for the first-order scheme.
pub const EPS_RKC1: f64 = 0.05;
/// Default damping for the second-order scheme.
pub const EPS_RKC2: f64 = 2.0 / 13.0;

pub fn default_damping(p: u8) -> f64 {
    if p == 1 {
        EPS_RKC1
    } else {
        EPS_RKC2
    }
}

/// Chebyshev polynomial of the first kind, T_j(x).
pub fn cheb_t(j: usize, x: f64) -> f64 {
    let (mut t0, mut t1) = (1.0, x);
    if j == 0 {
        return t0;
    }
    for _ in 1..j {
        (t0, t1) = (t1, 2.0 * x * t1 - t0);
    }
    t1
}

/// Chebyshev polynomial of the second kind, U_j(x).
pub fn cheb_u(j: usize, x: f64) -> f64 {
    let (mut u0, mut u1) = (1.0, 2.0 * x);
    if j == 0 {
        return u0;
    }
    for _ in 1..j {
        (u0, u1) = (u1, 2.0 * x * u1 - u0);
    }
    u1
}

/// U_0(x), …, U_n(x).
pub fn cheb_u_all(n: usize, x: f64) -> Vec<f64> {
    let mut u = Vec::with_capacity(n + 1);
    u.push(1.0);
    if n >= 1 {
        u.push(2.0 * x);
    }
    for j in 2..=n {
        u.push(2.0 * x * u[j - 1] - u[j - 2]);
    }
    u
}

/// T_j, T_j′ and T_j″ at `x` for j = 0..=n via differentiated recurrences.
pub fn cheb_t_derivs(n: usize, x: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut t = vec![0.0; n + 1];
    let mut d1 = vec![0.0; n + 1];
    let mut d2 = vec![0.0; n + 1];
    t[0] = 1.0;
    if n >= 1 {
        t[1] = x;
        d1[1] = 1.0;
    }
    for j in 2..=n {
        t[j] = 2.0 * x * t[j - 1] - t[j - 2];
        d1[j] = 2.0 * t[j - 1] + 2.0 * x * d1[j - 1] - d1[j - 2];
        d2[j] = 4.0 * d1[j - 1] + 2.0 * x * d2[j - 1] - d2[j - 2];
    }
    (t, d1, d2)
}

pub fn min_stages(p: u8) -> usize {
    if p == 1 {
        1
    } else {
        2
    }
}

fn check(p: u8, s: usize, eps: f64) -> Result<()> {
    if p != 1 && p != 2 {
        return Err(Error::InvalidArgument(format!("order {p} not in {{1, 2}}")));
    }
    if s < min_stages(p) {
        return Err(Error::InvalidStages { p, s, min: min_stages(p) });
    }
    let limit = if p == 1 { 1.5 } else { 7.5 };
    if !(eps.is_finite() && eps >= 0.0 && eps < limit) {
        return Err(Error::InvalidDamping(eps));
    }
    Ok(())
}

/// Stability boundary β^p(s, ε).
pub fn stability_boundary(p: u8, s: usize, eps: f64) -> Result<f64> {
    check(p, s, eps)?;
    let s2 = (s * s) as f64;
    Ok(if p == 1 { (2.0 - 4.0 * eps / 3.0) * s2 } else { 2.0 / 3.0 * (1.0 - 2.0 * eps / 15.0) * (s2 - 1.0) })
}

/// Smallest s ≥ s_min with Δt·ρ ≤ β^p(s, ε).
pub fn select_stages(p: u8, dt: f64, rho: f64, eps: f64) -> Result<usize> {
    check(p, min_stages(p), eps)?;
    let z = dt * rho;
    if !z.is_finite() || z < 0.0 {
        return Err(Error::InvalidArgument(format!("dt*rho = {z}")));
    }
    let guess = if p == 1 {
        (z / (2.0 - 4.0 * eps / 3.0)).sqrt()
    } else {
        (z / (2.0 / 3.0 * (1.0 - 2.0 * eps / 15.0)) + 1.0).sqrt()
    };
    let mut s = (guess.ceil() as usize).max(min_stages(p));
    while s > min_stages(p) && stability_boundary(p, s - 1, eps)? >= z {
        s -= 1;
    }
    while stability_boundary(p, s, eps)? < z {
        s += 1;
    }
    Ok(s)
}

/// Full coefficient set of an s-stage RKC step of order p.
///
/// Vectors are indexed by stage 0..=s; entries without meaning (μ_0, ν_0,
/// ν_1, κ_0, κ_1, γ_0, γ_1) are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct RkcCoefficients {
    pub p: u8,
    pub s: usize,
    pub eps: f64,
    pub w0: f64,
    pub w1: f64,
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub kappa: Vec<f64>,
    pub gamma: Vec<f64>,
    pub c: Vec<f64>,
}

/// Computes the coefficient table from scratch.
pub fn make_rkc_coefficients(p: u8, s: usize, eps: f64) -> Result<RkcCoefficients> {
    check(p, s, eps)?;
    let w0 = 1.0 + eps / (s * s) as f64;
    let (t, d1, d2) = cheb_t_derivs(s, w0);
    let (w1, b) = if p == 1 {
        (t[s] / d1[s], t.iter().map(|&tj| 1.0 / tj).collect::<Vec<_>>())
    } else {
        let mut b = vec![0.0; s + 1];
        for j in 2..=s {
            b[j] = d2[j] / (d1[j] * d1[j]);
        }
        b[0] = b[2];
        b[1] = b[2];
        (d1[s] / d2[s], b)
    };
    let a: Vec<f64> = if p == 1 { vec![0.0; s + 1] } else { (0..=s).map(|j| 1.0 - b[j] * t[j]).collect() };
    let mut mu = vec![0.0; s + 1];
    let mut nu = vec![0.0; s + 1];
    let mut kappa = vec![0.0; s + 1];
    let mut gamma = vec![0.0; s + 1];
    let mut c = vec![0.0; s + 1];
    mu[1] = b[1] * w1;
    c[1] = mu[1];
    for j in 2..=s {
        mu[j] = 2.0 * w1 * b[j] / b[j - 1];
        nu[j] = 2.0 * w0 * b[j] / b[j - 1];
        kappa[j] = -b[j] / b[j - 2];
        gamma[j] = -mu[j] * a[j - 1];
        c[j] = nu[j] * c[j - 1] + kappa[j] * c[j - 2] + mu[j] + gamma[j];
    }
    Ok(RkcCoefficients { p, s, eps, w0, w1, b, a, mu, nu, kappa, gamma, c })
}

type CacheKey = (u8, usize, u64);

fn cache() -> &'static Mutex<HashMap<CacheKey, Arc<RkcCoefficients>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<RkcCoefficients>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Cached [`make_rkc_coefficients`].
pub fn rkc_coefficients(p: u8, s: usize, eps: f64) -> Result<Arc<RkcCoefficients>> {
    let key = (p, s, eps.to_bits());
    if let Some(c) = cache().lock().unwrap().get(&key) {
        return Ok(c.clone());
    }
    let c = Arc::new(make_rkc_coefficients(p, s, eps)?);
    cache().lock().unwrap().insert(key, c.clone());
    Ok(c)
}

impl RkcCoefficients {
    /// R_s(z).
    pub fn stability_poly(&self, z: f64) -> f64 {
        self.stage_poly(self.s, z)
    }

    /// Internal stability polynomial R_k(z) = a_k + b_k T_k(ω₀ + ω₁ z).
    pub fn stage_poly(&self, k: usize, z: f64) -> f64 {
        self.a[k] + self.b[k] * cheb_t(k, self.w0 + self.w1 * z)
    }

    /// R̄_k(z) = (R_k(z) − 1)/z through its sum over U-polynomials.
    pub fn r_bar(&self, k: usize, z: f64) -> f64 {
        let u = cheb_u_all(k, self.w0 + self.w1 * z);
        (1..=k).map(|j| self.b[k] / self.b[j] * u[k - j] * (self.mu[j] + self.gamma[j])).sum()
    }

    /// R̃_k(z) = (R_k(z) − 1 − c_k z)/z² through its sum over U-polynomials.
    pub fn r_tilde(&self, k: usize, z: f64) -> f64 {
        let u = cheb_u_all(k, self.w0 + self.w1 * z);
        (2..=k).map(|j| self.b[k] / self.b[j] * u[k - j] * self.mu[j] * self.c[j - 1]).sum()
    }

    /// C_k = Σ_j (b_k/b_j) U_{k−j}(ω₀) μ_j, the rounding-error amplification constant.
    pub fn perturbation_constant(&self, k: usize) -> f64 {
        let u = cheb_u_all(k, self.w0);
        (1..=k).map(|j| self.b[k] / self.b[j] * u[k - j] * self.mu[j]).sum()
    }

    /// Largest |R_k(z)| over z ∈ [−β, 0] sampled at `n` points, for all k ≤ s.
    pub fn max_internal_amplification(&self, n: usize) -> f64 {
        let beta = stability_boundary(self.p, self.s, self.eps).unwrap_or(0.0);
        let mut m: f64 = 0.0;
        for i in 0..=n {
            let z = -beta * i as f64 / n as f64;
            for k in 1..=self.s {
                m = m.max(self.stage_poly(k, z).abs());
            }
        }
        m
    }
}

/// Coefficients of the inner m-stage scheme that computes the averaged force.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerCoefficients {
    pub m: usize,
    pub eps: f64,
    pub v0: f64,
    pub v1: f64,
    pub a: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

pub fn make_inner_coefficients(m: usize, eps: f64) -> Result<InnerCoefficients> {
    check(1, m, eps)?;
    let v0 = 1.0 + eps / (m * m) as f64;
    let (t, d1, _) = cheb_t_derivs(m, v0);
    let v1 = t[m] / d1[m];
    let a: Vec<f64> = t.iter().map(|&tj| 1.0 / tj).collect();
    let mut alpha = vec![0.0; m + 1];
    let mut beta = vec![0.0; m + 1];
    let mut gamma = vec![0.0; m + 1];
    alpha[1] = v1 / v0;
    for j in 2..=m {
        alpha[j] = 2.0 * v1 * a[j] / a[j - 1];
        beta[j] = 2.0 * v0 * a[j] / a[j - 1];
        gamma[j] = -a[j] / a[j - 2];
    }
    Ok(InnerCoefficients { m, eps, v0, v1, a, alpha, beta, gamma })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_values() {
        assert_eq!(cheb_t(2, 0.5), -0.5);
        assert_eq!(cheb_t(5, 1.0), 1.0);
        assert!((cheb_u(1, 0.3) - 0.6).abs() < 1e-15);
        for j in 0..=64 {
            for k in 0..20 {
                let th = 0.05 + 0.15 * k as f64;
                assert!((cheb_t(j, th.cos()) - (j as f64 * th).cos()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn euler_is_one_stage_rkc1() {
        let c = make_rkc_coefficients(1, 1, 0.0).unwrap();
        assert_eq!(c.mu[1], 1.0);
        assert_eq!(c.c[1], 1.0);
        assert_eq!(c.stability_poly(-2.0), -1.0);
    }

    #[test]
    fn boundaries_and_stage_selection() {
        assert_eq!(stability_boundary(1, 1, 0.0).unwrap(), 2.0);
        assert_eq!(stability_boundary(1, 2, 0.0).unwrap(), 8.0);
        let b = stability_boundary(2, 8, 2.0 / 13.0).unwrap();
        assert!((b - 2.0 / 3.0 * (1.0 - 4.0 / 195.0) * 63.0).abs() < 1e-12);
        assert!((b - 41.14).abs() < 5e-3);
        assert_eq!(select_stages(1, 1.0, 2.0, 0.0).unwrap(), 1);
        assert_eq!(select_stages(1, 1.0, 100.0, 0.0).unwrap(), 8);
        assert_eq!(select_stages(2, 1.0, 0.0, EPS_RKC2).unwrap(), 2);
        assert!(matches!(make_rkc_coefficients(2, 1, 0.0), Err(Error::InvalidStages { .. })));
        assert!(matches!(make_rkc_coefficients(1, 0, 0.0), Err(Error::InvalidStages { .. })));
    }

    #[test]
    fn inner_one_stage_is_identity_weight() {
        for eps in [0.0, 0.05, 0.3] {
            assert!((make_inner_coefficients(1, eps).unwrap().alpha[1] - 1.0).abs() < 1e-15);
        }
        let c = make_inner_coefficients(4, 0.05).unwrap();
        assert_eq!(c.v0, 1.0 + 0.05 / 16.0);
    }

    #[test]
    fn cache_returns_same_table() {
        let a = rkc_coefficients(2, 10, EPS_RKC2).unwrap();
        let b = rkc_coefficients(2, 10, EPS_RKC2).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }
}
