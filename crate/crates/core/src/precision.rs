//! Emulated reduced-precision arithmetic.
//!
//! Values live in `f64` storage but are constrained to the grid of a target
//! [`FloatFormat`]. Every emulated operation computes in `f64` and rounds the
//! result to nearest, ties to even. For the formats used here (t ≤ 24) the
//! intermediate `f64` result of a single `+ − × ÷` is rounded at 53 ≥ 2t + 2 bits,
//! so the double rounding is innocuous and the emulation is exact.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

static OVERFLOWS: AtomicU64 = AtomicU64::new(0);

/// Number of clamped overflows observed since process start.
pub fn overflow_count() -> u64 {
    OVERFLOWS.load(Ordering::Relaxed)
}

/// What happens when a rounded value exceeds the largest finite number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OverflowPolicy {
    /// Clamp to ±x_max and bump the global overflow counter.
    Clamp,
    /// Produce ±∞; checked kernels turn this into [`Error::OverflowToInfinity`].
    Strict,
}

/// A binary floating-point format with `t` significand bits (including the
/// implicit bit) and `e_bits` exponent bits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FloatFormat {
    name: &'static str,
    t: u32,
    e_bits: u32,
    subnormals: bool,
    overflow: OverflowPolicy,
    emin: i32,
    u: f64,
    xmin: f64,
    xmax: f64,
    fast_lo: u64,
    fast_hi: u64,
    drop: u32,
    half_m1: u64,
}

const SIGN_BIT: u64 = 1 << 63;

#[inline]
fn pow2(k: i32) -> f64 {
    debug_assert!((-1074..=1023).contains(&k));
    if k >= -1022 {
        f64::from_bits(((k + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (k + 1074))
    }
}

#[inline]
fn scale2(x: f64, k: i32) -> f64 {
    if (-1022..=1023).contains(&k) {
        x * pow2(k)
    } else if k > 0 {
        x * pow2(1023) * pow2(k - 1023)
    } else {
        x * pow2(-1022) * pow2(k + 1022)
    }
}

#[inline]
fn exponent(a: f64) -> i32 {
    let bits = a.to_bits();
    let raw = ((bits >> 52) & 0x7ff) as i32;
    if raw == 0 {
        let mant = bits & ((1u64 << 52) - 1);
        -1011 - mant.leading_zeros() as i32
    } else {
        raw - 1023
    }
}

impl FloatFormat {
    /// Builds a format from its significand and exponent widths.
    pub fn custom(t: u32, e_bits: u32) -> Result<Self> {
        if !(2..=53).contains(&t) || !(2..=11).contains(&e_bits) {
            return Err(Error::InvalidArgument(format!(
                "format (t={t}, e_bits={e_bits}) not representable in f64 storage"
            )));
        }
        Ok(Self::build("custom", t, e_bits, true))
    }

    fn build(name: &'static str, t: u32, e_bits: u32, subnormals: bool) -> Self {
        let emax = (1i32 << (e_bits - 1)) - 1;
        let emin = 1 - emax;
        let xmax = (2.0 - pow2(1 - t as i32)) * pow2(emax);
        let drop = 53 - t;
        let (fast_lo, fast_hi, half_m1) = if drop == 0 {
            (u64::MAX, 0, 0)
        } else {
            (((emin + 1023) as u64) << 52, xmax.to_bits(), (1u64 << (drop - 1)) - 1)
        };
        Self {
            name,
            t,
            e_bits,
            subnormals,
            overflow: OverflowPolicy::Clamp,
            emin,
            u: pow2(-(t as i32)),
            xmin: pow2(emin),
            xmax,
            fast_lo,
            fast_hi,
            drop,
            half_m1,
        }
    }

    pub fn bfloat16() -> Self {
        Self::build("bfloat16", 8, 8, false)
    }

    pub fn fp16() -> Self {
        Self::build("fp16", 11, 5, true)
    }

    pub fn fp32() -> Self {
        Self::build("fp32", 24, 8, true)
    }

    pub fn fp64() -> Self {
        Self::build("fp64", 53, 11, true)
    }

    /// Looks up one of the built-in formats by name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "bfloat16" | "bf16" => Ok(Self::bfloat16()),
            "fp16" | "half" => Ok(Self::fp16()),
            "fp32" | "single" => Ok(Self::fp32()),
            "fp64" | "double" => Ok(Self::fp64()),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }

    pub fn with_subnormals(mut self, enabled: bool) -> Self {
        self.subnormals = enabled;
        self
    }

    pub fn with_overflow(mut self, policy: OverflowPolicy) -> Self {
        self.overflow = policy;
        self
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn e_bits(&self) -> u32 {
        self.e_bits
    }

    /// Unit roundoff 2^(−t).
    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn subnormals(&self) -> bool {
        self.subnormals
    }

    pub fn overflow_policy(&self) -> OverflowPolicy {
        self.overflow
    }

    /// Smallest positive normal number.
    pub fn xmin(&self) -> f64 {
        self.xmin
    }

    /// Largest finite number.
    pub fn xmax(&self) -> f64 {
        self.xmax
    }

    /// True when the format coincides with the `f64` storage format.
    pub fn is_storage(&self) -> bool {
        self.t == 53 && self.e_bits == 11
    }

    /// Rounds `x` to the nearest value of the format, ties to even.
    ///
    /// Overflow follows the format's [`OverflowPolicy`]; in strict mode the
    /// result is ±∞.
    #[inline]
    pub fn round(&self, x: f64) -> f64 {
        let bits = x.to_bits();
        let abs = bits & !SIGN_BIT;
        if abs >= self.fast_lo && abs <= self.fast_hi {
            let r = (abs + self.half_m1 + ((abs >> self.drop) & 1)) & !((1u64 << self.drop) - 1);
            if r <= self.fast_hi {
                return f64::from_bits(r | (bits & SIGN_BIT));
            }
        }
        self.round_slow(x)
    }

    fn round_slow(&self, x: f64) -> f64 {
        if self.t == 53 && self.e_bits == 11 {
            return x;
        }
        let a = x.abs();
        if a == 0.0 || !a.is_finite() {
            return x;
        }
        let e = exponent(a);
        let e = if self.subnormals { e.max(self.emin) } else { e };
        let q = e - (self.t as i32 - 1);
        let mut r = scale2(scale2(a, -q).round_ties_even(), q);
        if r < self.xmin && !self.subnormals {
            r = 0.0;
        } else if r > self.xmax {
            r = self.on_overflow(r);
        }
        r.copysign(x)
    }

    #[cold]
    fn on_overflow(&self, r: f64) -> f64 {
        match self.overflow {
            OverflowPolicy::Clamp => {
                if OVERFLOWS.fetch_add(1, Ordering::Relaxed) == 0 {
                    log::warn!("{} overflow: {r:e} clamped to {:e}", self.name, self.xmax);
                }
                self.xmax
            }
            OverflowPolicy::Strict => f64::INFINITY,
        }
    }

    /// Rounds every entry of `xs` in place.
    pub fn round_slice(&self, xs: &mut [f64]) {
        if self.is_storage() {
            return;
        }
        for x in xs {
            *x = self.round(*x);
        }
    }

    /// Returns a rounded copy of `xs`.
    pub fn rounded(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.round(x)).collect()
    }

    pub fn is_representable(&self, x: f64) -> bool {
        self.round(x) == x
    }
}

/// A scalar known to lie on the grid of a particular format.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct LowPrecValue(f64);

impl LowPrecValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// The four elementary operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

/// Rounds `x` into `fmt`, failing on overflow under the strict policy.
pub fn round_to(x: f64, fmt: &FloatFormat) -> Result<LowPrecValue> {
    let r = fmt.round(x);
    if x.is_finite() && !r.is_finite() {
        return Err(Error::OverflowToInfinity(x, fmt.name()));
    }
    Ok(LowPrecValue(r))
}

/// `round_to(a op b)`.
pub fn rounded_op(a: LowPrecValue, b: LowPrecValue, op: Op, fmt: &FloatFormat) -> Result<LowPrecValue> {
    let (a, b) = (a.0, b.0);
    let exact = match op {
        Op::Add => a + b,
        Op::Sub => a - b,
        Op::Mul => a * b,
        Op::Div => {
            if b == 0.0 {
                return Err(Error::DivisionByZero);
            }
            a / b
        }
    };
    round_to(exact, fmt)
}

/// Arithmetic context: either plain `f64` or emulated rounding into a format.
///
/// Right-hand sides are written once against this type so the same code runs
/// in high and low precision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Arith {
    Exact,
    Low(FloatFormat),
}

impl Arith {
    pub fn new(fmt: FloatFormat) -> Self {
        if fmt.is_storage() {
            Arith::Exact
        } else {
            Arith::Low(fmt)
        }
    }

    #[inline]
    pub fn r(&self, x: f64) -> f64 {
        match self {
            Arith::Exact => x,
            Arith::Low(f) => f.round(x),
        }
    }

    #[inline]
    pub fn add(&self, a: f64, b: f64) -> f64 {
        self.r(a + b)
    }

    #[inline]
    pub fn sub(&self, a: f64, b: f64) -> f64 {
        self.r(a - b)
    }

    #[inline]
    pub fn mul(&self, a: f64, b: f64) -> f64 {
        self.r(a * b)
    }

    #[inline]
    pub fn div(&self, a: f64, b: f64) -> f64 {
        self.r(a / b)
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Arith::Exact)
    }
}

/// `y = A x` with `x` rounded on entry and every product and partial sum
/// rounded, accumulating each row left to right in column order.
pub fn rounded_spmv(a: &CsrMatrix, x: &[f64], fmt: &FloatFormat) -> Result<Vec<f64>> {
    let mut y = vec![0.0; a.nrows()];
    rounded_spmv_into(a, x, fmt, &mut y)?;
    Ok(y)
}

/// In-place form of [`rounded_spmv`].
pub fn rounded_spmv_into(a: &CsrMatrix, x: &[f64], fmt: &FloatFormat, y: &mut [f64]) -> Result<()> {
    if x.len() != a.ncols() {
        return Err(Error::DimensionMismatch { expected: a.ncols(), got: x.len() });
    }
    if y.len() != a.nrows() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: y.len() });
    }
    if fmt.is_storage() {
        a.spmv_into(x, y);
        return Ok(());
    }
    let xr = fmt.rounded(x);
    for (i, yi) in y.iter_mut().enumerate() {
        let (cols, vals) = a.row(i);
        let mut acc = 0.0;
        for (k, (&j, &v)) in cols.iter().zip(vals).enumerate() {
            let p = fmt.round(v * xr[j]);
            acc = if k == 0 { p } else { fmt.round(acc + p) };
        }
        *yi = acc;
    }
    if fmt.overflow_policy() == OverflowPolicy::Strict {
        if let Some(v) = y.iter().find(|v| v.is_infinite()) {
            return Err(Error::OverflowToInfinity(*v, fmt.name()));
        }
    }
    Ok(())
}

/// A matrix scaled by its max-norm and rounded into a low format.
#[derive(Clone, Debug)]
pub struct SqueezedMatrix {
    pub matrix: CsrMatrix,
    pub scale: f64,
    pub format: FloatFormat,
}

impl SqueezedMatrix {
    /// `scale · (Â x)` with the matvec rounded and the scaling in `f64`.
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        rounded_spmv_into(&self.matrix, x, &self.format, y)?;
        for v in y.iter_mut() {
            *v *= self.scale;
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.matrix.nrows()];
        self.apply_into(x, &mut y)?;
        Ok(y)
    }
}

/// Returns `(round(A / ‖A‖_max), ‖A‖_max)`.
pub fn squeeze_matrix(a: &CsrMatrix, fmt: &FloatFormat) -> Result<SqueezedMatrix> {
    let scale = a.max_abs();
    if scale == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let matrix = a.map_values(|v| fmt.round(v / scale));
    Ok(SqueezedMatrix { matrix, scale, format: *fmt })
}
