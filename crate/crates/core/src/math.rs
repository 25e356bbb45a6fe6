//! Float math shims.
//!
//! Everything routes through `libm` so the crate computes identically with and
//! without the `std` feature (std's intrinsics may differ per platform libc).

#[inline]
pub fn expf(x: f32) -> f32 {
    libm::expf(x)
}

#[inline]
pub fn lnf(x: f32) -> f32 {
    libm::logf(x)
}

#[inline]
pub fn sqrtf(x: f32) -> f32 {
    libm::sqrtf(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn pow(base: f64, exp: f64) -> f64 {
    libm::pow(base, exp)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn absf(x: f32) -> f32 {
    f32::from_bits(x.to_bits() & 0x7fff_ffff)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    f64::from_bits(x.to_bits() & 0x7fff_ffff_ffff_ffff)
}

/// Round-half-up for non-negative values (used for overlap counts).
#[inline]
pub fn round_nonneg(x: f64) -> usize {
    libm::floor(x + 0.5) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abs_matches_sign_stripping() {
        assert_eq!(absf(-3.5), 3.5);
        assert_eq!(absf(3.5), 3.5);
        assert_eq!(abs(-0.0), 0.0);
        assert!(absf(f32::NEG_INFINITY).is_infinite());
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_nonneg(0.0), 0);
        assert_eq!(round_nonneg(0.5), 1);
        assert_eq!(round_nonneg(2.4), 2);
        assert_eq!(round_nonneg(2.5), 3);
    }
}
