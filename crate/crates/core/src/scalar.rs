use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::sync::atomic::{AtomicU64, Ordering};

const DEFAULT_TOL: f64 = 1e-9;

// 0 encodes "unset"; 1e-9 is returned then.
static GLOBAL_TOL_BITS: AtomicU64 = AtomicU64::new(0);

/// Global absolute tolerance for membership and PSD checks (default 1e-9).
pub fn global_tolerance() -> f64 {
    match GLOBAL_TOL_BITS.load(Ordering::Relaxed) {
        0 => DEFAULT_TOL,
        bits => f64::from_bits(bits),
    }
}

/// Overrides the global tolerance. Non-positive or non-finite values reset it.
pub fn set_global_tolerance(tol: f64) {
    let bits = if tol.is_finite() && tol > 0.0 { tol.to_bits() } else { 0 };
    GLOBAL_TOL_BITS.store(bits, Ordering::Relaxed);
}

/// Floating point scalar usable by the set calculus: `f32` or `f64`.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive + std::fmt::Display {
    /// Absolute tolerance for membership tests at this precision.
    fn default_tol() -> Self;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn is_finite_value(self) -> bool {
        self.to_f64_lossy().is_finite()
    }
}

impl Scalar for f64 {
    fn default_tol() -> Self {
        global_tolerance()
    }
}

impl Scalar for f32 {
    fn default_tol() -> Self {
        1e-5
    }
}
