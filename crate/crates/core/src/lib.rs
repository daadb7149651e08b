//! Stabilized explicit Runge–Kutta–Chebyshev integrators with order-preserving
//! mixed-precision variants and an emulator for reduced-precision formats.
//!
//! The crate is organised bottom-up:
//!
//! * [`precision`] emulates low-precision formats inside `f64` storage.
//! * [`chebyshev`] builds RKC coefficient tables and stability polynomials.
//! * [`problems`] provides semi-discretized reaction–diffusion test problems.
//! * [`rkc`] holds the exact and naive mixed-precision RKC integrators plus RK4.
//! * [`mp_rkc`] holds the order-preserving mixed-precision schemes.
//! * [`mrkc`] holds the multirate scheme and its mixed-precision variant.

pub mod chebyshev;
pub mod error;
pub mod mp_rkc;
pub mod mrkc;
pub mod precision;
pub mod problems;
pub mod rkc;
pub mod sparse;
pub mod vecops;

pub use error::{Error, Result};
pub use precision::FloatFormat;
