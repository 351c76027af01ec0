//! Positive reparameterization x = softplus(θ)² + shift used by the optimizer.

use serde::{Deserialize, Serialize};

/// Lower bound added to spectral variances so their gradient stays defined near zero.
pub const BETA_SHIFT: f64 = 1e-12;
/// Floor on the likelihood noise variance; a noise-free series would otherwise drive it to an
/// underflowing zero.
pub const NOISE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    /// Unconstrained parameter, stored as is.
    Identity,
    /// x = ln(1 + e^θ)² + shift.
    Positive { shift: f64 },
}

impl Transform {
    pub const POSITIVE: Transform = Transform::Positive { shift: 0.0 };
    pub const SPECTRAL_VARIANCE: Transform = Transform::Positive { shift: BETA_SHIFT };
    pub const NOISE_VARIANCE: Transform = Transform::Positive { shift: NOISE_FLOOR };

    /// θ → x.
    pub fn forward(self, theta: f64) -> f64 {
        match self {
            Transform::Identity => theta,
            Transform::Positive { shift } => softplus(theta).powi(2) + shift,
        }
    }

    /// x → θ. Values at or below the shift map to a very negative θ.
    pub fn inverse(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Positive { shift } => {
                let r = (x - shift).max(f64::MIN_POSITIVE).sqrt();
                // ln(e^r − 1), stable at both ends
                if r > 30.0 {
                    r + (-(-r).exp()).ln_1p()
                } else {
                    r.exp_m1().ln()
                }
            }
        }
    }

    /// dx/dθ.
    pub fn derivative(self, theta: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Positive { .. } => 2.0 * softplus(theta) * sigmoid(theta),
        }
    }
}

fn softplus(t: f64) -> f64 {
    if t > 30.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_over_wide_range() {
        let t = Transform::POSITIVE;
        let mut x = 1e-8;
        while x < 1e8 {
            let back = t.forward(t.inverse(x));
            assert!((back - x).abs() <= 1e-12 * x, "{x} -> {back}");
            x *= 1.7;
        }
    }

    #[test]
    fn forward_is_positive_and_shifted() {
        for th in [-800.0, -40.0, 0.0, 3.0, 500.0] {
            assert!(Transform::POSITIVE.forward(th) >= 0.0);
            assert!(Transform::SPECTRAL_VARIANCE.forward(th) >= BETA_SHIFT);
            assert!(Transform::NOISE_VARIANCE.forward(th) >= NOISE_FLOOR);
        }
        assert!(Transform::SPECTRAL_VARIANCE.forward(-800.0) > 0.0);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for t in [
            Transform::POSITIVE,
            Transform::SPECTRAL_VARIANCE,
            Transform::NOISE_VARIANCE,
        ] {
            for th in [-5.0, -0.3, 0.0, 1.2, 8.0] {
                let h = 1e-6;
                let fd = (t.forward(th + h) - t.forward(th - h)) / (2.0 * h);
                assert!((fd - t.derivative(th)).abs() <= 1e-7 * (1.0 + fd.abs()));
            }
        }
    }
}
