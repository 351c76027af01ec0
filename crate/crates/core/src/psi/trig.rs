//! Gaussian expectation of a damped complex exponential, one input dimension at a time.
//!
//! For h ~ N(μ, λ):
//!
//! E[exp(−½Ah² + Bh − ½C₀) · e^{iWh}] = exp(R + iI)
//!
//! with D = 1 + Aλ,
//! R = [λ(B² − W²) + 2μB − Aμ²] / (2D) − C₀/2 − ½ ln D and I = W(μ + λB)/D.
//! The form has no division by λ or by a spectral variance, so λ = 0 and A = 0 are regular.
//! Every statistic is a product of these factors times cos(ΣI + φ).

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Coef {
    pub a: f64,
    pub b: f64,
    pub c0: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CoefAdjoint {
    pub mu: f64,
    pub lam: f64,
    pub a: f64,
    pub b: f64,
    pub c0: f64,
    pub w: f64,
}

#[inline]
pub fn moment(mu: f64, lam: f64, c: Coef) -> (f64, f64) {
    let d = 1.0 + c.a * lam;
    let num = lam * (c.b * c.b - c.w * c.w) + 2.0 * mu * c.b - c.a * mu * mu;
    let r = num / (2.0 * d) - 0.5 * c.c0 - 0.5 * d.ln();
    let i = c.w * (mu + lam * c.b) / d;
    (r, i)
}

/// Pull back adjoints (r̄, ī) of one dimension's (R, I) onto μ, λ and the coefficients.
#[inline]
pub fn moment_adjoint(mu: f64, lam: f64, c: Coef, rbar: f64, ibar: f64) -> CoefAdjoint {
    let d = 1.0 + c.a * lam;
    let inv = 1.0 / d;
    let num = lam * (c.b * c.b - c.w * c.w) + 2.0 * mu * c.b - c.a * mu * mu;
    let k = (mu + lam * c.b) * inv;

    let dr_mu = (c.b - c.a * mu) * inv;
    let dr_lam =
        0.5 * (c.b * c.b - c.w * c.w) * inv - 0.5 * num * c.a * inv * inv - 0.5 * c.a * inv;
    let dr_a = -0.5 * mu * mu * inv - 0.5 * num * lam * inv * inv - 0.5 * lam * inv;
    let dr_b = (lam * c.b + mu) * inv;
    let dr_w = -lam * c.w * inv;

    let di_w = k;
    let di_mu = c.w * inv;
    let di_lam = c.w * (c.b - k * c.a) * inv;
    let di_a = -c.w * k * lam * inv;
    let di_b = c.w * lam * inv;

    CoefAdjoint {
        mu: rbar * dr_mu + ibar * di_mu,
        lam: rbar * dr_lam + ibar * di_lam,
        a: rbar * dr_a + ibar * di_a,
        b: rbar * dr_b + ibar * di_b,
        c0: -0.5 * rbar,
        w: rbar * dr_w + ibar * di_w,
    }
}
