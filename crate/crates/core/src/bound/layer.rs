//! Per-layer bound work: row-chunked statistics, the O(M³) finish step and its adjoints.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::Result;
use crate::kernel::KernelParams;
use crate::linalg::{cholesky_escalating, logdet, BASE_JITTER};
use crate::model::{IpKind, Layer};
use crate::psi::{Feat, FeatGrad, GaussianInputs};
use crate::serde_mat;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Sufficient statistics of one layer over a set of regressor rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPartial {
    #[serde(with = "serde_mat::matrix")]
    pub psi2: DMatrix<f64>,
    #[serde(with = "serde_mat::opt_matrix")]
    pub psi_reg: Option<DMatrix<f64>>,
    /// Ψ₁ᵀt.
    #[serde(with = "serde_mat::vector")]
    pub psi1_t: DVector<f64>,
    /// tᵀt.
    pub t_t: f64,
    /// Σ target variances.
    pub sum_var_t: f64,
    /// Σ ln(2πλ) over the hidden states generated at these rows (0 for the output layer).
    pub state_log_var: f64,
    pub count: usize,
    /// Rounding error of every sum above, carried so that merging partials in any order
    /// gives the same rounded totals.
    #[serde(default)]
    pub residue: Residue,
}

/// Low-order parts of the compensated sums in [`LayerPartial`]. Empty means zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Residue {
    #[serde(with = "serde_mat::matrix")]
    pub psi2: DMatrix<f64>,
    #[serde(with = "serde_mat::opt_matrix")]
    pub psi_reg: Option<DMatrix<f64>>,
    #[serde(with = "serde_mat::vector")]
    pub psi1_t: DVector<f64>,
    pub t_t: f64,
    pub sum_var_t: f64,
    pub state_log_var: f64,
}

/// s + e == a + b exactly.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Adds (x_hi, x_lo) to the compensated sum (hi, lo); hi stays the rounded value of hi + lo.
#[inline]
fn merge(hi: &mut f64, lo: &mut f64, x_hi: f64, x_lo: f64) {
    let (s, e) = two_sum(*hi, x_hi);
    let (h, l) = two_sum(s, *lo + x_lo + e);
    *hi = h;
    *lo = l;
}

fn merge_slices(hi: &mut [f64], lo: &mut [f64], x_hi: &[f64], x_lo: &[f64]) {
    for k in 0..hi.len() {
        merge(
            &mut hi[k],
            &mut lo[k],
            x_hi[k],
            x_lo.get(k).copied().unwrap_or(0.0),
        );
    }
}

impl LayerPartial {
    pub fn zeros(m: usize, with_reg: bool) -> Self {
        Self {
            psi2: DMatrix::zeros(m, m),
            psi_reg: with_reg.then(|| DMatrix::zeros(m, m)),
            psi1_t: DVector::zeros(m),
            t_t: 0.0,
            sum_var_t: 0.0,
            state_log_var: 0.0,
            count: 0,
            residue: Residue {
                psi2: DMatrix::zeros(m, m),
                psi_reg: with_reg.then(|| DMatrix::zeros(m, m)),
                psi1_t: DVector::zeros(m),
                ..Default::default()
            },
        }
    }

    pub fn add(&mut self, o: &LayerPartial) {
        let m = self.psi2.nrows();
        let r = &mut self.residue;
        if r.psi2.shape() != (m, m) {
            r.psi2 = DMatrix::zeros(m, m);
        }
        if r.psi1_t.len() != m {
            r.psi1_t = DVector::zeros(m);
        }
        merge_slices(
            self.psi2.as_mut_slice(),
            r.psi2.as_mut_slice(),
            o.psi2.as_slice(),
            o.residue.psi2.as_slice(),
        );
        if let (Some(a), Some(b)) = (self.psi_reg.as_mut(), o.psi_reg.as_ref()) {
            let ra = r.psi_reg.get_or_insert_with(|| DMatrix::zeros(m, m));
            let rb = o
                .residue
                .psi_reg
                .as_ref()
                .map(|v| v.as_slice())
                .unwrap_or(&[]);
            merge_slices(a.as_mut_slice(), ra.as_mut_slice(), b.as_slice(), rb);
        }
        merge_slices(
            self.psi1_t.as_mut_slice(),
            r.psi1_t.as_mut_slice(),
            o.psi1_t.as_slice(),
            o.residue.psi1_t.as_slice(),
        );
        merge(&mut self.t_t, &mut r.t_t, o.t_t, o.residue.t_t);
        merge(
            &mut self.sum_var_t,
            &mut r.sum_var_t,
            o.sum_var_t,
            o.residue.sum_var_t,
        );
        merge(
            &mut self.state_log_var,
            &mut r.state_log_var,
            o.state_log_var,
            o.residue.state_log_var,
        );
        self.count += o.count;
    }
}

/// A layer's inputs and targets flattened for row-wise kernels.
pub(crate) struct LayerCtx {
    pub feat: Feat,
    pub q: usize,
    pub mu: Vec<f64>,
    pub lam: Vec<f64>,
    pub t: Vec<f64>,
    pub t_var: Vec<f64>,
    pub hidden: bool,
    pub with_reg: bool,
}

impl LayerCtx {
    pub fn new(
        layer: &Layer,
        inputs: &GaussianInputs,
        t: &DVector<f64>,
        t_var: &DVector<f64>,
        hidden: bool,
        with_reg: bool,
    ) -> Self {
        let (mu, lam) = inputs.rows();
        Self {
            feat: Feat::new(&layer.basis, layer.spectral.as_ref(), &layer.kernel),
            q: inputs.dim(),
            mu,
            lam,
            t: t.iter().copied().collect(),
            t_var: t_var.iter().copied().collect(),
            hidden,
            with_reg,
        }
    }

    pub fn rows(&self) -> usize {
        self.t.len()
    }

    fn row(&self, r: usize) -> (&[f64], &[f64]) {
        let s = r * self.q..(r + 1) * self.q;
        (&self.mu[s.clone()], &self.lam[s])
    }

    /// Partial sums over rows `range`; also returns the Ψ₁ rows when asked.
    pub fn forward(
        &self,
        range: std::ops::Range<usize>,
        keep_psi1: bool,
    ) -> (LayerPartial, Vec<f64>) {
        let m = self.feat.m;
        let mm = if self.with_reg { m * m } else { 0 };
        let (mut p2, mut p2_lo, mut p2_row) =
            (vec![0.0; m * m], vec![0.0; m * m], vec![0.0; m * m]);
        let (mut pr, mut pr_lo, mut pr_row) = (vec![0.0; mm], vec![0.0; mm], vec![0.0; mm]);
        let (mut c, mut c_lo) = (vec![0.0; m], vec![0.0; m]);
        let mut row = vec![0.0; m];
        let mut kept = Vec::with_capacity(if keep_psi1 { range.len() * m } else { 0 });
        let [mut tt, mut tt_lo, mut sv, mut sv_lo, mut slv, mut slv_lo] = [0.0; 6];
        let count = range.len();
        for r in range {
            let (mu, lam) = self.row(r);
            self.feat.psi1_row(mu, lam, &mut row);
            let t = self.t[r];
            for j in 0..m {
                merge(&mut c[j], &mut c_lo[j], row[j] * t, 0.0);
            }
            if keep_psi1 {
                kept.extend_from_slice(&row);
            }
            p2_row.fill(0.0);
            self.feat.psi2_add(mu, lam, &mut p2_row);
            merge_slices(&mut p2, &mut p2_lo, &p2_row, &[]);
            if self.with_reg {
                pr_row.fill(0.0);
                self.feat.reg_add(mu, lam, &mut pr_row);
                merge_slices(&mut pr, &mut pr_lo, &pr_row, &[]);
            }
            merge(&mut tt, &mut tt_lo, t * t, 0.0);
            merge(&mut sv, &mut sv_lo, self.t_var[r], 0.0);
            if self.hidden {
                merge(&mut slv, &mut slv_lo, (2.0 * PI * self.t_var[r]).ln(), 0.0);
            }
        }
        let reg = |v: &[f64]| self.with_reg.then(|| DMatrix::from_row_slice(m, m, v));
        (
            LayerPartial {
                psi2: DMatrix::from_row_slice(m, m, &p2),
                psi_reg: reg(&pr),
                psi1_t: DVector::from_vec(c),
                t_t: tt,
                sum_var_t: sv,
                state_log_var: slv,
                count,
                residue: Residue {
                    psi2: DMatrix::from_row_slice(m, m, &p2_lo),
                    psi_reg: reg(&pr_lo),
                    psi1_t: DVector::from_vec(c_lo),
                    t_t: tt_lo,
                    sum_var_t: sv_lo,
                    state_log_var: slv_lo,
                },
            },
            kept,
        )
    }

    /// Pulls back the finish adjoints over rows `range`.
    /// Returns internal-parameter adjoints plus per-row input and target adjoints.
    pub fn backward(
        &self,
        range: std::ops::Range<usize>,
        adj: &FinishAdjoint,
        psi1: &[f64],
    ) -> RowGrads {
        let (m, q) = (self.feat.m, self.q);
        let mut g = FeatGrad::zeros(m, q);
        let n = range.len();
        let mut mu_bar = vec![0.0; n * q];
        let mut lam_bar = vec![0.0; n * q];
        let mut t_bar = vec![0.0; n];
        let g2: Vec<f64> = row_major(&adj.psi2);
        let gr: Vec<f64> = adj.psi_reg.as_ref().map(row_major).unwrap_or_default();
        let mut g1 = vec![0.0; m];
        let start = range.start;
        for r in range {
            let k = r - start;
            let (mu, lam) = self.row(r);
            let t = self.t[r];
            for (g, a) in g1.iter_mut().zip(adj.psi1_t.iter()) {
                *g = a * t;
            }
            let mb = &mut mu_bar[k * q..(k + 1) * q];
            let lb = &mut lam_bar[k * q..(k + 1) * q];
            self.feat.psi1_row_back(mu, lam, &g1, &mut g, mb, lb);
            self.feat.psi2_back(mu, lam, &g2, &mut g, mb, lb);
            if self.with_reg {
                self.feat.reg_back(mu, lam, &gr, &mut g, mb, lb);
            }
            let p1 = &psi1[r * m..(r + 1) * m];
            t_bar[k] = adj.t_t * 2.0 * t
                + p1.iter()
                    .zip(adj.psi1_t.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
        }
        RowGrads {
            feat: g,
            mu_bar,
            lam_bar,
            t_bar,
        }
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter());
    }
    out
}

pub(crate) struct RowGrads {
    pub feat: FeatGrad,
    pub mu_bar: Vec<f64>,
    pub lam_bar: Vec<f64>,
    pub t_bar: Vec<f64>,
}

/// Adjoints of the finished layer value with respect to its sufficient statistics.
#[derive(Debug, Clone)]
pub(crate) struct FinishAdjoint {
    /// ∂F/∂(Ψ₁ᵀt), M-vector.
    pub psi1_t: DVector<f64>,
    /// ∂F/∂Ψ₂ (symmetric, full-matrix convention).
    pub psi2: DMatrix<f64>,
    pub psi_reg: Option<DMatrix<f64>>,
    /// ∂F/∂(tᵀt).
    pub t_t: f64,
    /// ∂F/∂(Σ target variance).
    pub sum_var_t: f64,
    pub noise_variance: f64,
    pub signal_variance: f64,
    /// ∂F/∂K_MM (symmetric), IP variants only.
    pub kmm: Option<DMatrix<f64>>,
}

/// K_MM = σ²(R + εI) for the pseudo-inputs; ε keeps it well-conditioned.
pub(crate) fn kmm(layer: &Layer) -> DMatrix<f64> {
    let u = &layer.basis.u;
    let m = u.nrows();
    let k = &layer.kernel;
    let omega = k.omegas();
    DMatrix::from_fn(m, m, |i, j| {
        let mut sq = 0.0;
        let mut arg = 0.0;
        for d in 0..u.ncols() {
            let tau = u[(i, d)] - u[(j, d)];
            sq += tau * tau / (2.0 * k.length_scales[d].powi(2));
            arg += omega[d] * tau;
        }
        let jit = if i == j { BASE_JITTER } else { 0.0 };
        k.signal_variance * ((-sq).exp() * arg.cos() + jit)
    })
}

/// Gradient of Σ K̄ ∘ K_MM with respect to (U, length scales, σ²).
pub(crate) fn kmm_back(layer: &Layer, kbar: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, f64) {
    let u = &layer.basis.u;
    let (m, q) = (u.nrows(), u.ncols());
    let k = &layer.kernel;
    let omega = k.omegas();
    let s2 = k.signal_variance;
    let mut ub = DMatrix::zeros(m, q);
    let mut lb = vec![0.0; q];
    let mut sb = BASE_JITTER * kbar.trace();
    for i in 0..m {
        sb += kbar[(i, i)];
        for j in i + 1..m {
            let w = kbar[(i, j)] + kbar[(j, i)];
            let mut sq = 0.0;
            let mut arg = 0.0;
            for d in 0..q {
                let tau = u[(i, d)] - u[(j, d)];
                sq += tau * tau / (2.0 * k.length_scales[d].powi(2));
                arg += omega[d] * tau;
            }
            let e = (-sq).exp();
            let r = e * arg.cos();
            sb += w * r;
            for d in 0..q {
                let l = k.length_scales[d];
                let tau = u[(i, d)] - u[(j, d)];
                let dtau = r * (-tau / (l * l)) - e * arg.sin() * omega[d];
                ub[(i, d)] += w * s2 * dtau;
                ub[(j, d)] -= w * s2 * dtau;
                lb[d] += w * s2 * r * tau * tau / (l * l * l);
            }
        }
    }
    (ub, lb, sb)
}

pub(crate) struct Finished {
    pub value: f64,
    pub adjoint: Option<FinishAdjoint>,
}

/// Collapsed layer value from its sufficient statistics. O(M³), independent of N̂.
pub(crate) fn finish_layer(
    p: &LayerPartial,
    kernel: &KernelParams,
    ip: Option<IpKind>,
    kmm_mat: Option<&DMatrix<f64>>,
    want_adjoint: bool,
) -> Result<Finished> {
    let m = p.psi2.nrows();
    let s = kernel.noise_variance;
    let n_hat = p.count as f64;
    let mf = m as f64;

    let mut a = p.psi2.clone();
    match ip {
        Some(IpKind::Two) => a += kmm_mat.expect("K_MM required") * s,
        _ => {
            for i in 0..m {
                a[(i, i)] += s;
            }
        }
    }
    let (chol, _) = cholesky_escalating(&a, "A")?;
    let c = &p.psi1_t;
    let v = chol.solve(c);
    let ctv = c.dot(&v);
    let ld_a = logdet(&chol);

    let mut value =
        -(n_hat - mf) / 2.0 * s.ln() - n_hat / 2.0 * LN_2PI - (p.t_t + p.sum_var_t) / (2.0 * s)
            + ctv / (2.0 * s)
            - 0.5 * ld_a;

    let mut kinfo = None;
    if let Some(kind) = ip {
        let k = kmm_mat.expect("K_MM required");
        let (kc, _) = cholesky_escalating(k, "K_MM")?;
        let reg = p.psi_reg.as_ref().expect("Ψ_reg required");
        let kinv_reg = kc.solve(reg);
        let tr = kinv_reg.trace();
        let psi0 = n_hat * kernel.signal_variance;
        value += -psi0 / (2.0 * s) + tr / (2.0 * s);
        if kind == IpKind::Two {
            value += 0.5 * logdet(&kc);
        }
        kinfo = Some((kc, kinv_reg, tr, psi0));
    }

    let adjoint = if want_adjoint {
        let a_inv = chol.inverse();
        let abar = -(&v * v.transpose()) / (2.0 * s) - &a_inv * 0.5;
        let mut sbar =
            -(n_hat - mf) / (2.0 * s) + (p.t_t + p.sum_var_t) / (2.0 * s * s) - ctv / (2.0 * s * s);
        let mut sigbar = 0.0;
        let mut reg_bar = None;
        let mut kbar = None;
        match ip {
            Some(IpKind::Two) => {
                sbar += abar.component_mul(kmm_mat.unwrap()).sum();
            }
            _ => sbar += abar.trace(),
        }
        if let Some((kc, kinv_reg, tr, psi0)) = &kinfo {
            sbar += psi0 / (2.0 * s * s) - tr / (2.0 * s * s);
            sigbar += -n_hat / (2.0 * s);
            let k_inv = kc.inverse();
            reg_bar = Some(&k_inv / (2.0 * s));
            let mut kb = -(kinv_reg * &k_inv) / (2.0 * s);
            kb = (&kb + kb.transpose()) * 0.5;
            if ip == Some(IpKind::Two) {
                kb += &k_inv * 0.5 + &abar * s;
            }
            kbar = Some(kb);
        }
        Some(FinishAdjoint {
            psi1_t: &v / s,
            psi2: abar,
            psi_reg: reg_bar,
            t_t: -1.0 / (2.0 * s),
            sum_var_t: -1.0 / (2.0 * s),
            noise_variance: sbar,
            signal_variance: sigbar,
            kmm: kbar,
        })
    } else {
        None
    };
    Ok(Finished { value, adjoint })
}
