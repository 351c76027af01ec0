//! Statistical validation batteries: closed-form Ψ statistics and predictive moments against
//! seeded Monte Carlo, plus symmetry/PSD audits of the matrices a model builds.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bound::{kmm, layer_contexts, system_matrix};
use crate::dataset::{make_toy, ToyKind};
use crate::error::{Error, Result};
use crate::exec::{chunks, map_range};
use crate::kernel::{sm_covariance, KernelParams, Period, SpectralBasis};
use crate::linalg::{is_psd, is_symmetric, min_eigenvalue};
use crate::model::{init_model, InitOptions, RecurrentModel, Variant, WindowConfig};
use crate::psi::{self, mc_oracle, GaussianInputs, GaussianSpectral, Statistic};
use crate::simulate::Predictor;

/// Largest tolerated |closed − MC| / SE.
pub const Z_LIMIT: f64 = 3.0;
const SYM_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-8;

/// Source of the closed forms under test. Swapping the implementation lets a fixture check
/// that the battery catches a wrong formula.
pub trait ClosedForms: Sync {
    fn psi1(
        &self,
        i: &GaussianInputs,
        s: Option<&GaussianSpectral>,
        b: &SpectralBasis,
        p: &KernelParams,
    ) -> Result<DMatrix<f64>>;
    fn psi2(
        &self,
        i: &GaussianInputs,
        s: Option<&GaussianSpectral>,
        b: &SpectralBasis,
        p: &KernelParams,
    ) -> Result<DMatrix<f64>>;
    fn psi_reg(
        &self,
        i: &GaussianInputs,
        b: &SpectralBasis,
        p: &KernelParams,
    ) -> Result<DMatrix<f64>>;
}

/// The library's closed forms.
pub struct Exact;

impl ClosedForms for Exact {
    fn psi1(
        &self,
        i: &GaussianInputs,
        s: Option<&GaussianSpectral>,
        b: &SpectralBasis,
        p: &KernelParams,
    ) -> Result<DMatrix<f64>> {
        match s {
            Some(s) => psi::psi1_vss(i, s, b, p),
            None => psi::psi1_ss(i, b, p),
        }
    }

    fn psi2(
        &self,
        i: &GaussianInputs,
        s: Option<&GaussianSpectral>,
        b: &SpectralBasis,
        p: &KernelParams,
    ) -> Result<DMatrix<f64>> {
        match s {
            Some(s) => psi::psi2_vss(i, s, b, p),
            None => psi::psi2_ss(i, b, p),
        }
    }

    fn psi_reg(
        &self,
        i: &GaussianInputs,
        b: &SpectralBasis,
        p: &KernelParams,
    ) -> Result<DMatrix<f64>> {
        psi::psi_reg(i, b, p)
    }
}

/// Ψ₁ with the input-variance damping dropped, i.e. the feature map at the input means.
/// Everything else is exact.
pub struct UndampedPsi1;

impl ClosedForms for UndampedPsi1 {
    fn psi1(
        &self,
        i: &GaussianInputs,
        s: Option<&GaussianSpectral>,
        b: &SpectralBasis,
        p: &KernelParams,
    ) -> Result<DMatrix<f64>> {
        let point = GaussianInputs::deterministic(i.mean.clone());
        Exact.psi1(&point, s, b, p)
    }

    fn psi2(
        &self,
        i: &GaussianInputs,
        s: Option<&GaussianSpectral>,
        b: &SpectralBasis,
        p: &KernelParams,
    ) -> Result<DMatrix<f64>> {
        Exact.psi2(i, s, b, p)
    }

    fn psi_reg(
        &self,
        i: &GaussianInputs,
        b: &SpectralBasis,
        p: &KernelParams,
    ) -> Result<DMatrix<f64>> {
        Exact.psi_reg(i, b, p)
    }
}

/// One random small problem: Q ≤ 3, M ≤ 4, N ≤ 5.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsiInstance {
    pub inputs: GaussianInputs,
    pub spectral: GaussianSpectral,
    pub basis: SpectralBasis,
    pub params: KernelParams,
}

impl PsiInstance {
    pub fn random(rng: &mut impl Rng) -> Self {
        let q = rng.random_range(1..=3);
        let m = rng.random_range(1..=4);
        let n = rng.random_range(1..=5);
        let normal = |rng: &mut dyn RngCore| -> f64 { rng.sample(StandardNormal) };
        let mut mat = |r: usize, c: usize, f: &mut dyn FnMut(&mut dyn RngCore) -> f64| {
            let v: Vec<f64> = (0..r * c).map(|_| f(rng)).collect();
            DMatrix::from_row_slice(r, c, &v)
        };
        let mean = mat(n, q, &mut |r| normal(r));
        let var = mat(n, q, &mut |r| r.random_range(0.0..0.5));
        let z = mat(m, q, &mut |r| normal(r));
        let u = mat(m, q, &mut |r| normal(r));
        let alpha = mat(m, q, &mut |r| normal(r));
        let beta = mat(m, q, &mut |r| r.random_range(0.01..0.5));
        let phases = DVector::from_fn(m, |_, _| rng.random_range(0.0..2.0 * PI));
        let length_scales = (0..q).map(|_| rng.random_range(0.5..2.0)).collect();
        let periods = (0..q)
            .map(|_| {
                if rng.random_bool(0.5) {
                    Period::Infinite
                } else {
                    Period::Finite(rng.random_range(1.0..5.0))
                }
            })
            .collect();
        Self {
            inputs: GaussianInputs { mean, var },
            spectral: GaussianSpectral {
                mean: alpha,
                var: beta,
            },
            basis: SpectralBasis { z, u, phases },
            params: KernelParams {
                signal_variance: rng.random_range(0.5..2.0),
                length_scales,
                periods,
                noise_variance: 0.1,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub instance: usize,
    /// psi1_ss, psi2_ss, psi_reg, psi1_vss or psi2_vss.
    pub statistic: String,
    pub q: usize,
    pub m: usize,
    pub n: usize,
    pub max_abs_z: f64,
    pub max_abs_diff: f64,
    /// Symmetry and PSD of the closed form (always true for Ψ₁).
    pub psd_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiReport {
    pub seed: u64,
    pub samples: usize,
    pub instances: Vec<PsiInstance>,
    pub rows: Vec<StatRow>,
    pub max_abs_z: BTreeMap<String, f64>,
    pub psd_ok: bool,
    pub passed: bool,
}

impl PartialEq for PsiInstance {
    fn eq(&self, o: &Self) -> bool {
        self.inputs == o.inputs
            && self.spectral == o.spectral
            && self.basis == o.basis
            && self.params == o.params
    }
}

fn psd_ok(a: &DMatrix<f64>) -> bool {
    is_symmetric(a, SYM_TOL) && is_psd(a, PSD_TOL)
}

/// Compares every closed form of `closed` with the MC oracle on `instances` random problems.
pub fn psi_battery(
    closed: &dyn ClosedForms,
    seed: u64,
    instances: usize,
    samples: usize,
) -> Result<PsiReport> {
    if instances == 0 {
        return Err(Error::param("instances", "need at least one"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut insts = Vec::with_capacity(instances);
    let mut rows = Vec::new();
    for k in 0..instances {
        let inst = PsiInstance::random(&mut rng);
        let (i, b, p, s) = (&inst.inputs, &inst.basis, &inst.params, &inst.spectral);
        let cases: [(&str, Statistic, Option<&GaussianSpectral>); 5] = [
            ("psi1_ss", Statistic::Psi1, None),
            ("psi2_ss", Statistic::Psi2, None),
            ("psi_reg", Statistic::PsiReg, None),
            ("psi1_vss", Statistic::Psi1, Some(s)),
            ("psi2_vss", Statistic::Psi2, Some(s)),
        ];
        for (name, which, spec) in cases {
            let value = match which {
                Statistic::Psi1 => closed.psi1(i, spec, b, p)?,
                Statistic::Psi2 => closed.psi2(i, spec, b, p)?,
                Statistic::PsiReg => closed.psi_reg(i, b, p)?,
            };
            let est = mc_oracle(i, spec, b, p, which, samples, rng.next_u64())?;
            let z = est.z_scores(&value);
            rows.push(StatRow {
                instance: k,
                statistic: name.to_string(),
                q: p.dim(),
                m: b.num_features(),
                n: i.len(),
                max_abs_z: z.amax(),
                max_abs_diff: (&value - &est.estimate).amax(),
                psd_ok: which == Statistic::Psi1 || psd_ok(&value),
            });
        }
        insts.push(inst);
    }
    let mut max_abs_z = BTreeMap::new();
    for r in &rows {
        let e = max_abs_z.entry(r.statistic.clone()).or_insert(0.0f64);
        *e = e.max(r.max_abs_z);
    }
    let psd = rows.iter().all(|r| r.psd_ok);
    let passed = psd && rows.iter().all(|r| r.max_abs_z <= Z_LIMIT);
    Ok(PsiReport {
        seed,
        samples,
        instances: insts,
        rows,
        max_abs_z,
        psd_ok: psd,
        passed,
    })
}

/// Weight-space MC estimate of the predictive mean and variance of layer `layer` at the
/// Gaussian input N(mu, diag(lam)): h and the spectral points are drawn, then a ~ N(m, S), and for
/// the IP variants an independent Nyström residual with variance σ² − k(h)ᵀK⁻¹k(h).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
}

pub fn mc_predictive(
    pred: &Predictor,
    layer: usize,
    mu: &[f64],
    lam: &[f64],
    samples: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    if samples < 2 {
        return Err(Error::param("samples", "need at least 2"));
    }
    let model = &pred.model;
    let l = &model.layers[layer];
    let q = model.layer_input_dim(layer);
    if mu.len() != q || lam.len() != q {
        return Err(Error::dim("test input", q, mu.len()));
    }
    let m = l.num_features();
    let (wm, ws) = pred.weights(layer);
    // S = V D Vᵀ, so V·sqrt(D) is an exact square root without jitter.
    let eig = crate::linalg::symmetrize(ws).symmetric_eigen();
    let root =
        &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|d| d.max(0.0).sqrt()));
    let kinv = match model.variant.ip() {
        Some(_) => Some(crate::linalg::cholesky(&kmm(l), "K_MM")?.inverse()),
        None => None,
    };
    let omega = l.kernel.omegas();
    let pref = (2.0 * l.kernel.signal_variance / m as f64).sqrt();
    let parts = chunks(samples, 8192);
    let draws: Vec<Vec<f64>> = map_range(parts.len(), |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let mut h = vec![0.0; q];
        let mut out = Vec::with_capacity(parts[c].len());
        for _ in parts[c].clone() {
            for d in 0..q {
                let e: f64 = rng.sample(StandardNormal);
                h[d] = mu[d] + lam[d].sqrt() * e;
            }
            let mut f = 0.0;
            let eps: DVector<f64> = DVector::from_fn(m, |_, _| rng.sample(StandardNormal));
            let a = wm + &root * eps;
            for j in 0..m {
                let mut arg = l.basis.phases[j];
                for d in 0..q {
                    let z = match &l.spectral {
                        Some(s) => {
                            let e: f64 = rng.sample(StandardNormal);
                            s.mean[(j, d)] + s.var[(j, d)].sqrt() * e
                        }
                        None => l.basis.z[(j, d)],
                    };
                    arg += (z / l.kernel.length_scales[d] + omega[d]) * (h[d] - l.basis.u[(j, d)]);
                }
                f += pref * arg.cos() * a[j];
            }
            if let Some(kinv) = &kinv {
                let k = DVector::from_fn(m, |j, _| {
                    let u: Vec<f64> = l.basis.u.row(j).iter().copied().collect();
                    sm_covariance(&h, &u, &l.kernel).expect("dimensions checked")
                });
                let resid = (l.kernel.signal_variance - k.dot(&(kinv * &k))).max(0.0);
                let e: f64 = rng.sample(StandardNormal);
                f += resid.sqrt() * e;
            }
            out.push(f);
        }
        out
    });
    let f: Vec<f64> = draws.into_iter().flatten().collect();
    let n = f.len() as f64;
    let mean = f.iter().sum::<f64>() / n;
    let m2 = f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = f.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let variance = m2 * n / (n - 1.0);
    Ok(MomentEstimate {
        mean,
        mean_se: (variance / n).sqrt(),
        variance,
        variance_se: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub instance: usize,
    pub variant: Variant,
    pub layer: usize,
    pub mean_closed: f64,
    pub mean_mc: f64,
    pub mean_z: f64,
    pub var_closed: f64,
    pub var_mc: f64,
    pub var_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub seed: u64,
    pub samples: usize,
    pub rows: Vec<MomentRow>,
    pub max_abs_z: f64,
    pub passed: bool,
}

fn z(closed: f64, mc: f64, se: f64) -> f64 {
    if se > 0.0 {
        (closed - mc) / se
    } else if (closed - mc).abs() <= 1e-12 * closed.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    }
}

/// A small random model fitted to a linear-NARX toy series, cycling through the variants.
pub fn random_model(
    index: usize,
    rng: &mut impl Rng,
) -> Result<(RecurrentModel, DVector<f64>, DMatrix<f64>)> {
    let variant = Variant::ALL[index % Variant::ALL.len()];
    let n = rng.random_range(12..=20);
    let ds = make_toy(ToyKind::LinearNarx, n.max(20), rng.next_u64())?;
    let h = rng.random_range(1..=2);
    let hidden = rng.random_range(1..=2);
    let init = InitOptions {
        num_features: rng.random_range(2..=5),
        state_var: 0.05,
        beta: 0.05,
        ..Default::default()
    };
    let cfg = WindowConfig::new(h, h, hidden)?;
    let model = init_model(&ds.y, &ds.x, cfg, variant, &init, rng.next_u64())?;
    Ok((model, ds.y, ds.x))
}

/// Predictive moments of a random layer at a random Gaussian input, against [`mc_predictive`].
pub fn moment_battery(seed: u64, instances: usize, samples: usize) -> Result<MomentReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(instances);
    for k in 0..instances {
        let (model, y, x) = random_model(k, &mut rng)?;
        let pred = Predictor::fit(&model, &y, &x)?;
        let layer = rng.random_range(0..model.num_layers());
        let q = model.layer_input_dim(layer);
        let mu: Vec<f64> = (0..q).map(|_| rng.sample(StandardNormal)).collect();
        let lam: Vec<f64> = (0..q).map(|_| rng.random_range(0.0..0.3)).collect();
        let (closed, _) = pred.predict_layer(layer, &mu, &lam)?;
        let est = mc_predictive(&pred, layer, &mu, &lam, samples, rng.next_u64())?;
        rows.push(MomentRow {
            instance: k,
            variant: model.variant,
            layer,
            mean_closed: closed.mean,
            mean_mc: est.mean,
            mean_z: z(closed.mean, est.mean, est.mean_se),
            var_closed: closed.variance,
            var_mc: est.variance,
            var_z: z(closed.variance, est.variance, est.variance_se),
        });
    }
    let max_abs_z = rows
        .iter()
        .map(|r| r.mean_z.abs().max(r.var_z.abs()))
        .fold(0.0, f64::max);
    Ok(MomentReport {
        seed,
        samples,
        rows,
        max_abs_z,
        passed: max_abs_z <= Z_LIMIT,
    })
}

/// Symmetry/PSD status of one matrix a model builds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdCheck {
    pub layer: usize,
    pub matrix: String,
    pub symmetric: bool,
    pub min_eigenvalue: f64,
    pub trace: f64,
    pub passed: bool,
}

fn check(layer: usize, name: &str, a: &DMatrix<f64>) -> PsdCheck {
    let symmetric = is_symmetric(a, SYM_TOL);
    let psd = is_psd(a, PSD_TOL);
    PsdCheck {
        layer,
        matrix: name.to_string(),
        symmetric,
        min_eigenvalue: min_eigenvalue(a),
        trace: a.trace(),
        passed: symmetric && psd,
    }
}

/// Ψ₂, Ψ_reg, A and K_MM of every layer on the training series.
pub fn psd_audit(
    model: &RecurrentModel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<Vec<PsdCheck>> {
    crate::bound::check_inputs(model, y, x)?;
    let ip = model.variant.ip();
    let mut out = Vec::new();
    for (l, ctx) in layer_contexts(model, y, x)?.iter().enumerate() {
        let p = ctx.forward(0..ctx.rows(), false).0;
        let layer = &model.layers[l];
        out.push(check(l, "psi2", &p.psi2));
        if let Some(r) = &p.psi_reg {
            out.push(check(l, "psi_reg", r));
        }
        out.push(check(l, "A", &system_matrix(&p, layer, ip)));
        if ip.is_some() {
            out.push(check(l, "K_MM", &kmm(layer)));
        }
    }
    Ok(out)
}
