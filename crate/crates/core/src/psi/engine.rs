//! Per-point Ψ kernels and their reverse-mode pullbacks.
//!
//! Spectral points enter through their scaled mean ŵ = mean/l + ω and scaled variance
//! a = var/l². SS mode is the a = 0 case of the same code.

use nalgebra::DMatrix;

use super::trig::{moment, moment_adjoint, Coef};
use super::GaussianSpectral;
use crate::kernel::{KernelParams, SpectralBasis};

#[derive(Debug, Clone)]
pub(crate) struct Feat {
    pub m: usize,
    pub q: usize,
    pub sigma2: f64,
    /// Row-major M×Q.
    pub what: Vec<f64>,
    pub a: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
    pub inv_l2: Vec<f64>,
    pub omega: Vec<f64>,
    pub length_scales: Vec<f64>,
    pub spec_mean: Vec<f64>,
    pub spec_var: Vec<f64>,
    zero_omega: bool,
}

/// Adjoints with respect to the engine's internal coordinates.
#[derive(Debug, Clone)]
pub(crate) struct FeatGrad {
    pub what: Vec<f64>,
    pub a: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
    pub inv_l2: Vec<f64>,
    pub sigma2: f64,
}

impl FeatGrad {
    pub fn zeros(m: usize, q: usize) -> Self {
        Self {
            what: vec![0.0; m * q],
            a: vec![0.0; m * q],
            u: vec![0.0; m * q],
            b: vec![0.0; m],
            inv_l2: vec![0.0; q],
            sigma2: 0.0,
        }
    }

    pub fn add(&mut self, o: &FeatGrad) {
        for (x, y) in self.what.iter_mut().zip(&o.what) {
            *x += y;
        }
        for (x, y) in self.a.iter_mut().zip(&o.a) {
            *x += y;
        }
        for (x, y) in self.u.iter_mut().zip(&o.u) {
            *x += y;
        }
        for (x, y) in self.b.iter_mut().zip(&o.b) {
            *x += y;
        }
        for (x, y) in self.inv_l2.iter_mut().zip(&o.inv_l2) {
            *x += y;
        }
        self.sigma2 += o.sigma2;
    }
}

/// Gradient of a statistic-level objective with respect to the layer's model parameters.
#[derive(Debug, Clone)]
pub struct ParamGrad {
    /// Spectral points Z (SS) or spectral means α (VSS), M×Q.
    pub spec_mean: DMatrix<f64>,
    /// Spectral variances β, M×Q (zero in SS mode).
    pub spec_var: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub phases: Vec<f64>,
    pub length_scales: Vec<f64>,
    pub sigma2: f64,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter());
    }
    out
}

impl Feat {
    pub fn new(
        basis: &SpectralBasis,
        spectral: Option<&GaussianSpectral>,
        params: &KernelParams,
    ) -> Self {
        let m = basis.num_features();
        let q = params.dim();
        let omega = params.omegas();
        let (spec_mean, spec_var) = match spectral {
            Some(s) => (row_major(&s.mean), row_major(&s.var)),
            None => (row_major(&basis.z), vec![0.0; m * q]),
        };
        let mut what = vec![0.0; m * q];
        let mut a = vec![0.0; m * q];
        for j in 0..m {
            for d in 0..q {
                let l = params.length_scales[d];
                what[j * q + d] = spec_mean[j * q + d] / l + omega[d];
                a[j * q + d] = spec_var[j * q + d] / (l * l);
            }
        }
        Self {
            m,
            q,
            sigma2: params.signal_variance,
            what,
            a,
            u: row_major(&basis.u),
            b: basis.phases.iter().copied().collect(),
            inv_l2: params.length_scales.iter().map(|l| 1.0 / (l * l)).collect(),
            zero_omega: omega.iter().all(|&w| w == 0.0),
            omega,
            length_scales: params.length_scales.clone(),
            spec_mean,
            spec_var,
        }
    }

    fn pref1(&self) -> f64 {
        (2.0 * self.sigma2 / self.m as f64).sqrt()
    }

    #[inline]
    fn psi1_coef(&self, j: usize, d: usize) -> Coef {
        let k = j * self.q + d;
        let (a, u) = (self.a[k], self.u[k]);
        Coef {
            a,
            b: a * u,
            c0: a * u * u,
            w: self.what[k],
        }
    }

    fn psi1_phase(&self, j: usize) -> f64 {
        let r = j * self.q..(j + 1) * self.q;
        self.b[j]
            - self.what[r.clone()]
                .iter()
                .zip(&self.u[r])
                .map(|(w, u)| w * u)
                .sum::<f64>()
    }

    /// (ΣR, ΣI) over dimensions for the given coefficient generator.
    #[inline]
    fn accumulate(&self, mu: &[f64], lam: &[f64], coef: impl Fn(usize) -> Coef) -> (f64, f64) {
        let mut r = 0.0;
        let mut i = 0.0;
        for d in 0..self.q {
            let (rd, id) = moment(mu[d], lam[d], coef(d));
            r += rd;
            i += id;
        }
        (r, i)
    }

    pub fn psi1_row(&self, mu: &[f64], lam: &[f64], out: &mut [f64]) {
        let p = self.pref1();
        for (j, o) in out.iter_mut().enumerate().take(self.m) {
            let (r, i) = self.accumulate(mu, lam, |d| self.psi1_coef(j, d));
            *o = p * r.exp() * (i + self.psi1_phase(j)).cos();
        }
    }

    pub fn psi1_row_back(
        &self,
        mu: &[f64],
        lam: &[f64],
        gbar: &[f64],
        g: &mut FeatGrad,
        mu_bar: &mut [f64],
        lam_bar: &mut [f64],
    ) {
        let p = self.pref1();
        let q = self.q;
        for (j, &gj) in gbar.iter().enumerate().take(self.m) {
            if gj == 0.0 {
                continue;
            }
            let (r, i) = self.accumulate(mu, lam, |d| self.psi1_coef(j, d));
            let phi = self.psi1_phase(j);
            let e = p * r.exp();
            let v = e * (i + phi).cos();
            let rbar = gj * v;
            let ibar = -gj * e * (i + phi).sin();
            g.sigma2 += gj * v / (2.0 * self.sigma2);
            g.b[j] += ibar;
            for d in 0..q {
                let k = j * q + d;
                let c = self.psi1_coef(j, d);
                let ad = moment_adjoint(mu[d], lam[d], c, rbar, ibar);
                mu_bar[d] += ad.mu;
                lam_bar[d] += ad.lam;
                let u = self.u[k];
                g.a[k] += ad.a + ad.b * u + ad.c0 * u * u;
                g.u[k] += ad.b * c.a + 2.0 * ad.c0 * c.a * u - ibar * self.what[k];
                g.what[k] += ad.w - ibar * u;
            }
        }
    }

    #[inline]
    fn pair_coef(&self, j: usize, jp: usize, s: f64, d: usize) -> Coef {
        let (k, kp) = (j * self.q + d, jp * self.q + d);
        let (a1, a2, u1, u2) = (self.a[k], self.a[kp], self.u[k], self.u[kp]);
        Coef {
            a: a1 + a2,
            b: a1 * u1 + a2 * u2,
            c0: a1 * u1 * u1 + a2 * u2 * u2,
            w: self.what[k] + s * self.what[kp],
        }
    }

    fn pair_phase(&self, j: usize, jp: usize, s: f64) -> f64 {
        let mut phi = self.b[j] + s * self.b[jp];
        for d in 0..self.q {
            let (k, kp) = (j * self.q + d, jp * self.q + d);
            phi -= self.what[k] * self.u[k] + s * self.what[kp] * self.u[kp];
        }
        phi
    }

    #[inline]
    fn diag_coef(&self, j: usize, d: usize) -> Coef {
        let k = j * self.q + d;
        let (a, u) = (self.a[k], self.u[k]);
        Coef {
            a: 4.0 * a,
            b: 4.0 * a * u,
            c0: 4.0 * a * u * u,
            w: 2.0 * self.what[k],
        }
    }

    /// Adds this point's Ψ₂ contribution to `out` (row-major M×M, both triangles).
    pub fn psi2_add(&self, mu: &[f64], lam: &[f64], out: &mut [f64]) {
        let m = self.m;
        let k = self.sigma2 / m as f64;
        for j in 0..m {
            let (r, i) = self.accumulate(mu, lam, |d| self.diag_coef(j, d));
            let phi = 2.0 * self.psi1_phase(j);
            out[j * m + j] += k * (1.0 + r.exp() * (i + phi).cos());
            for jp in j + 1..m {
                let mut v = 0.0;
                for s in [-1.0, 1.0] {
                    let (r, i) = self.accumulate(mu, lam, |d| self.pair_coef(j, jp, s, d));
                    v += r.exp() * (i + self.pair_phase(j, jp, s)).cos();
                }
                out[j * m + jp] += k * v;
                out[jp * m + j] += k * v;
            }
        }
    }

    /// Pullback of Σ_{m,m'} Ḡ_{mm'} Ψ₂ⁿ_{mm'} for a symmetric Ḡ (row-major).
    pub fn psi2_back(
        &self,
        mu: &[f64],
        lam: &[f64],
        gbar: &[f64],
        g: &mut FeatGrad,
        mu_bar: &mut [f64],
        lam_bar: &mut [f64],
    ) {
        let m = self.m;
        let q = self.q;
        let kap = self.sigma2 / m as f64;
        for j in 0..m {
            let w = gbar[j * m + j];
            if w != 0.0 {
                let (r, i) = self.accumulate(mu, lam, |d| self.diag_coef(j, d));
                let phi = 2.0 * self.psi1_phase(j);
                let e = kap * r.exp();
                let t = e * (i + phi).cos();
                g.sigma2 += w * (kap + t) / self.sigma2;
                let rbar = w * t;
                let ibar = -w * e * (i + phi).sin();
                g.b[j] += 2.0 * ibar;
                for d in 0..q {
                    let k = j * q + d;
                    let c = self.diag_coef(j, d);
                    let ad = moment_adjoint(mu[d], lam[d], c, rbar, ibar);
                    mu_bar[d] += ad.mu;
                    lam_bar[d] += ad.lam;
                    let (a, u) = (self.a[k], self.u[k]);
                    g.a[k] += 4.0 * (ad.a + ad.b * u + ad.c0 * u * u);
                    g.u[k] += 4.0 * ad.b * a + 8.0 * ad.c0 * a * u - 2.0 * ibar * self.what[k];
                    g.what[k] += 2.0 * ad.w - 2.0 * ibar * u;
                }
            }
            for jp in j + 1..m {
                let w = gbar[j * m + jp] + gbar[jp * m + j];
                if w == 0.0 {
                    continue;
                }
                for s in [-1.0, 1.0] {
                    let (r, i) = self.accumulate(mu, lam, |d| self.pair_coef(j, jp, s, d));
                    let phi = self.pair_phase(j, jp, s);
                    let e = kap * r.exp();
                    let v = e * (i + phi).cos();
                    g.sigma2 += w * v / self.sigma2;
                    let rbar = w * v;
                    let ibar = -w * e * (i + phi).sin();
                    g.b[j] += ibar;
                    g.b[jp] += s * ibar;
                    for d in 0..q {
                        let (k, kp) = (j * q + d, jp * q + d);
                        let c = self.pair_coef(j, jp, s, d);
                        let ad = moment_adjoint(mu[d], lam[d], c, rbar, ibar);
                        mu_bar[d] += ad.mu;
                        lam_bar[d] += ad.lam;
                        let (a1, a2, u1, u2) = (self.a[k], self.a[kp], self.u[k], self.u[kp]);
                        g.a[k] += ad.a + ad.b * u1 + ad.c0 * u1 * u1;
                        g.a[kp] += ad.a + ad.b * u2 + ad.c0 * u2 * u2;
                        g.u[k] += ad.b * a1 + 2.0 * ad.c0 * a1 * u1 - ibar * self.what[k];
                        g.u[kp] += ad.b * a2 + 2.0 * ad.c0 * a2 * u2 - s * ibar * self.what[kp];
                        g.what[k] += ad.w - ibar * u1;
                        g.what[kp] += s * (ad.w - ibar * u2);
                    }
                }
            }
        }
    }

    /// Signs and prefactors of the cosine product-to-sum split used by Ψ_reg.
    fn reg_terms(&self) -> &'static [(f64, f64)] {
        if self.zero_omega {
            &[(1.0, 1.0)]
        } else {
            &[(-1.0, 0.5), (1.0, 0.5)]
        }
    }

    #[inline]
    fn reg_coef(&self, j: usize, jp: usize, s: f64, d: usize) -> Coef {
        let (u1, u2) = (self.u[j * self.q + d], self.u[jp * self.q + d]);
        let il = self.inv_l2[d];
        Coef {
            a: 2.0 * il,
            b: (u1 + u2) * il,
            c0: (u1 * u1 + u2 * u2) * il,
            w: self.omega[d] * (1.0 + s),
        }
    }

    fn reg_phase(&self, j: usize, jp: usize, s: f64) -> f64 {
        (0..self.q)
            .map(|d| -self.omega[d] * (self.u[j * self.q + d] + s * self.u[jp * self.q + d]))
            .sum()
    }

    /// Adds this point's E[k(h, u_m) k(h, u_m')] to `out`.
    pub fn reg_add(&self, mu: &[f64], lam: &[f64], out: &mut [f64]) {
        let m = self.m;
        let s4 = self.sigma2 * self.sigma2;
        for j in 0..m {
            for jp in j..m {
                let mut v = 0.0;
                for &(s, w) in self.reg_terms() {
                    let (r, i) = self.accumulate(mu, lam, |d| self.reg_coef(j, jp, s, d));
                    v += w * r.exp() * (i + self.reg_phase(j, jp, s)).cos();
                }
                out[j * m + jp] += s4 * v;
                if jp != j {
                    out[jp * m + j] += s4 * v;
                }
            }
        }
    }

    pub fn reg_back(
        &self,
        mu: &[f64],
        lam: &[f64],
        gbar: &[f64],
        g: &mut FeatGrad,
        mu_bar: &mut [f64],
        lam_bar: &mut [f64],
    ) {
        let m = self.m;
        let q = self.q;
        let s4 = self.sigma2 * self.sigma2;
        for j in 0..m {
            for jp in j..m {
                let wgt = if jp == j {
                    gbar[j * m + j]
                } else {
                    gbar[j * m + jp] + gbar[jp * m + j]
                };
                if wgt == 0.0 {
                    continue;
                }
                for &(s, pw) in self.reg_terms() {
                    let (r, i) = self.accumulate(mu, lam, |d| self.reg_coef(j, jp, s, d));
                    let phi = self.reg_phase(j, jp, s);
                    let e = s4 * pw * r.exp();
                    let v = e * (i + phi).cos();
                    g.sigma2 += wgt * 2.0 * v / self.sigma2;
                    let rbar = wgt * v;
                    let ibar = -wgt * e * (i + phi).sin();
                    for d in 0..q {
                        let (k, kp) = (j * q + d, jp * q + d);
                        let c = self.reg_coef(j, jp, s, d);
                        let ad = moment_adjoint(mu[d], lam[d], c, rbar, ibar);
                        mu_bar[d] += ad.mu;
                        lam_bar[d] += ad.lam;
                        let (u1, u2) = (self.u[k], self.u[kp]);
                        let il = self.inv_l2[d];
                        g.inv_l2[d] += 2.0 * ad.a + ad.b * (u1 + u2) + ad.c0 * (u1 * u1 + u2 * u2);
                        g.u[k] += ad.b * il + 2.0 * ad.c0 * u1 * il - ibar * self.omega[d];
                        g.u[kp] += ad.b * il + 2.0 * ad.c0 * u2 * il - s * ibar * self.omega[d];
                    }
                }
            }
        }
    }

    /// Chain internal adjoints to model parameters.
    pub fn pullback(&self, g: &FeatGrad) -> ParamGrad {
        let (m, q) = (self.m, self.q);
        let mut spec_mean = DMatrix::zeros(m, q);
        let mut spec_var = DMatrix::zeros(m, q);
        let mut u = DMatrix::zeros(m, q);
        let mut ls = vec![0.0; q];
        for d in 0..q {
            let l = self.length_scales[d];
            ls[d] += -2.0 * g.inv_l2[d] / (l * l * l);
            for j in 0..m {
                let k = j * q + d;
                spec_mean[(j, d)] = g.what[k] / l;
                spec_var[(j, d)] = g.a[k] / (l * l);
                u[(j, d)] = g.u[k];
                ls[d] += -g.what[k] * self.spec_mean[k] / (l * l)
                    - 2.0 * g.a[k] * self.spec_var[k] / (l * l * l);
            }
        }
        ParamGrad {
            spec_mean,
            spec_var,
            u,
            phases: g.b.clone(),
            length_scales: ls,
            sigma2: g.sigma2,
        }
    }
}
