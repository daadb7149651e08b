//! Empirical convergence orders from (Δt, error) series.

/// Orders log(e_k/e_{k+1}) / log(Δt_k/Δt_{k+1}) between neighbouring points.
pub fn successive_orders(dts: &[f64], errs: &[f64]) -> Vec<f64> {
    dts.windows(2).zip(errs.windows(2)).map(|(d, e)| (e[0] / e[1]).ln() / (d[0] / d[1]).ln()).collect()
}

/// Least-squares slope of log(error) against log(Δt). `None` for fewer than
/// two points or any non-positive or non-finite value.
pub fn least_squares_slope(dts: &[f64], errs: &[f64]) -> Option<f64> {
    if dts.len() != errs.len() || dts.len() < 2 || !usable(dts) || !usable(errs) {
        return None;
    }
    let x: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn usable(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite() && *x > 0.0)
}

/// A slope fitted over points `start..=end` of the Δt-sorted series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeFit {
    pub slope: f64,
    pub start: usize,
    pub end: usize,
}

/// Maximum spread of successive orders inside the asymptotic range.
pub const ORDER_SPREAD: f64 = 0.3;

/// Least-squares slope over the largest contiguous range of points whose
/// successive orders vary by less than [`ORDER_SPREAD`]; among ranges of equal
/// length the one at the small-Δt end wins. Points are sorted by decreasing
/// Δt first, and the returned indices refer to that order.
pub fn asymptotic_slope(dts: &[f64], errs: &[f64]) -> Option<RangeFit> {
    if dts.len() != errs.len() || dts.len() < 2 || !usable(dts) || !usable(errs) {
        return None;
    }
    let mut idx: Vec<usize> = (0..dts.len()).collect();
    idx.sort_by(|&a, &b| dts[b].total_cmp(&dts[a]));
    let d: Vec<f64> = idx.iter().map(|&i| dts[i]).collect();
    let e: Vec<f64> = idx.iter().map(|&i| errs[i]).collect();
    let orders = successive_orders(&d, &e);
    let n = d.len();
    let mut best = (0, 1);
    for start in 0..n - 1 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for end in start + 1..n {
            let o = orders[end - 1];
            lo = lo.min(o);
            hi = hi.max(o);
            if !(hi - lo < ORDER_SPREAD) {
                break;
            }
            if end - start >= best.1 - best.0 {
                best = (start, end);
            }
        }
    }
    let slope = least_squares_slope(&d[best.0..=best.1], &e[best.0..=best.1])?;
    Some(RangeFit { slope, start: best.0, end: best.1 })
}
