//! Collapsed recurrent variational lower bounds and their gradients.

pub(crate) mod layer;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub(crate) use layer::{finish_layer, kmm, kmm_back, LayerCtx};
pub use layer::{LayerPartial, Residue};

use crate::error::{Error, Result};
use crate::exec::{chunks, map_range, tree_reduce};
use crate::model::{
    assemble_regressors, layer_targets, regressor_columns, IpKind, RecurrentModel, Source,
    WeightCov,
};
use crate::psi::GaussianSpectral;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Rows per work item in the chunked passes. Fixed, so results do not depend on thread count.
pub const ROW_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub total: f64,
    /// Data-fit term of each GP layer (output layer last).
    pub per_layer: Vec<f64>,
    /// Σ KL(q(Z) ‖ p(Z)) over layers (0 in SS variants).
    pub kl_spectral: f64,
    /// Negated state entropy-plus-prior terms, summed over hidden layers.
    pub kl_states: f64,
}

impl BoundValue {
    fn from_parts(per_layer: Vec<f64>, kl_spectral: f64, kl_states: f64) -> Self {
        let total = per_layer.iter().sum::<f64>() - kl_spectral - kl_states;
        Self {
            total,
            per_layer,
            kl_spectral,
            kl_states,
        }
    }
}

/// ½ Σ (β + α² − 1 − ln β) over all spectral entries.
pub fn kl_spectral(spectral: &GaussianSpectral) -> Result<f64> {
    let mut kl = 0.0;
    for (a, b) in spectral.mean.iter().zip(spectral.var.iter()) {
        if !(*b > 0.0) {
            return Err(Error::param(
                "spectral variance",
                format!("must be > 0, got {b}"),
            ));
        }
        kl += 0.5 * (b + a * a - 1.0 - b.ln());
    }
    Ok(kl)
}

/// Entropy of every state of hidden layer `layer` plus the standard-normal log prior of its
/// first H_h states.
pub fn state_terms(model: &RecurrentModel, layer: usize) -> Result<f64> {
    if layer >= model.config.hidden_layers {
        return Err(Error::LayerOutOfRange {
            layer,
            layers: model.config.hidden_layers,
        });
    }
    let st = model.layers[layer]
        .states
        .as_ref()
        .ok_or_else(|| Error::Config(format!("states of layer {layer} are missing")))?;
    let mut v = st.mean.len() as f64 / 2.0;
    for &lam in st.var.iter() {
        v += 0.5 * (LN_2PI + lam.ln());
    }
    for k in 0..model.config.h_h.min(st.mean.len()) {
        v -= 0.5 * LN_2PI + 0.5 * (st.var[k] + st.mean[k] * st.mean[k]);
    }
    Ok(v)
}

/// State terms from the prior-window states plus a precomputed Σ ln(2πλ) of the rest.
fn state_terms_from_partial(model: &RecurrentModel, layer: usize, rest_log_var: f64) -> f64 {
    let st = model.layers[layer].states.as_ref().expect("validated");
    let hh = model.config.h_h;
    let mut v = st.mean.len() as f64 / 2.0 + 0.5 * rest_log_var;
    for k in 0..hh {
        v += 0.5 * (LN_2PI + st.var[k].ln());
        v -= 0.5 * LN_2PI + 0.5 * (st.var[k] + st.mean[k] * st.mean[k]);
    }
    v
}

pub(crate) fn check_inputs(
    model: &RecurrentModel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<()> {
    model.validate()?;
    if y.len() != model.n_train {
        return Err(Error::dim("output series length", model.n_train, y.len()));
    }
    if x.nrows() != y.len() {
        return Err(Error::dim("exogenous input rows", y.len(), x.nrows()));
    }
    Ok(())
}

pub(crate) fn layer_contexts(
    model: &RecurrentModel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<Vec<LayerCtx>> {
    let with_reg = model.variant.ip().is_some();
    (0..model.num_layers())
        .map(|l| {
            let inputs = assemble_regressors(model, x, l)?;
            let (t, tv) = layer_targets(model, y, l)?;
            Ok(LayerCtx::new(
                &model.layers[l],
                &inputs,
                &t,
                &tv,
                l < model.config.hidden_layers,
                with_reg,
            ))
        })
        .collect()
}

/// Bound value from fully reduced per-layer partial sums.
pub(crate) fn assemble(model: &RecurrentModel, partials: &[LayerPartial]) -> Result<BoundValue> {
    let ip = model.variant.ip();
    let mut per_layer = Vec::with_capacity(partials.len());
    let mut kl_z = 0.0;
    let mut kl_h = 0.0;
    for (l, p) in partials.iter().enumerate() {
        let layer = &model.layers[l];
        let k = ip.map(|_| kmm(layer));
        let f = finish_layer(p, &layer.kernel, ip, k.as_ref(), false)?;
        per_layer.push(f.value);
        if let Some(s) = &layer.spectral {
            kl_z += kl_spectral(s)?;
        }
        if l < model.config.hidden_layers {
            kl_h -= state_terms_from_partial(model, l, p.state_log_var);
        }
    }
    Ok(BoundValue::from_parts(per_layer, kl_z, kl_h))
}

fn serial_partials(
    model: &RecurrentModel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<Vec<LayerPartial>> {
    Ok(layer_contexts(model, y, x)?
        .iter()
        .map(|c| c.forward(0..c.rows(), false).0)
        .collect())
}

/// Collapsed bound for the SS and VSS variants.
pub fn bound_ss_vss_opt(
    model: &RecurrentModel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<BoundValue> {
    check_inputs(model, y, x)?;
    if model.variant.ip().is_some() {
        return Err(Error::Config(format!(
            "bound_ss_vss_opt needs an SS or VSS model, got {}",
            model.variant
        )));
    }
    assemble(model, &serial_partials(model, y, x)?)
}

/// Collapsed bound for the inducing-point variants.
pub fn bound_ip_opt(
    model: &RecurrentModel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<BoundValue> {
    check_inputs(model, y, x)?;
    if model.variant.ip().is_none() {
        return Err(Error::Config(format!(
            "bound_ip_opt needs an IP model, got {}",
            model.variant
        )));
    }
    assemble(model, &serial_partials(model, y, x)?)
}

/// The collapsed bound of whichever variant the model carries.
pub fn bound(model: &RecurrentModel, y: &DVector<f64>, x: &DMatrix<f64>) -> Result<BoundValue> {
    check_inputs(model, y, x)?;
    assemble(model, &serial_partials(model, y, x)?)
}

/// Bound with explicit weight posteriors q(a) = N(m, S) instead of the optimal ones.
pub fn bound_explicit_weights(
    model: &RecurrentModel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<BoundValue> {
    check_inputs(model, y, x)?;
    if model.variant.ip().is_some() {
        return Err(Error::Config(
            "explicit weights are only defined for SS/VSS".into(),
        ));
    }
    let partials = serial_partials(model, y, x)?;
    let mut per_layer = Vec::new();
    let mut kl_z = 0.0;
    let mut kl_h = 0.0;
    for (l, p) in partials.iter().enumerate() {
        let layer = &model.layers[l];
        let w = layer
            .weights
            .as_ref()
            .ok_or_else(|| Error::Config(format!("layer {l} has no weight posterior")))?;
        let mm = layer.num_features();
        if w.mean.len() != mm {
            return Err(Error::dim("weight mean", mm, w.mean.len()));
        }
        let s = w.cov.to_dense();
        if s.shape() != (mm, mm) {
            return Err(Error::dim("weight covariance", mm, s.nrows()));
        }
        if let WeightCov::Diagonal(d) = &w.cov {
            if let Some(v) = d.iter().find(|v| !(**v > 0.0)) {
                return Err(Error::param(
                    "weight variance",
                    format!("must be > 0, got {v}"),
                ));
            }
        }
        let sc = crate::linalg::cholesky(&s, "weight covariance")?;
        let sigma = layer.kernel.noise_variance;
        let n_hat = p.count as f64;
        let second = &s + &w.mean * w.mean.transpose();
        let quad =
            p.t_t + p.sum_var_t - 2.0 * p.psi1_t.dot(&w.mean) + p.psi2.component_mul(&second).sum();
        let kl_a = 0.5 * (s.trace() + w.mean.dot(&w.mean) - mm as f64 - crate::linalg::logdet(&sc));
        per_layer.push(-n_hat / 2.0 * (LN_2PI + sigma.ln()) - quad / (2.0 * sigma) - kl_a);
        if let Some(sp) = &layer.spectral {
            kl_z += kl_spectral(sp)?;
        }
        if l < model.config.hidden_layers {
            kl_h -= state_terms(model, l)?;
        }
    }
    Ok(BoundValue::from_parts(per_layer, kl_z, kl_h))
}

/// Optimal weight posterior N(A⁻¹Ψ₁ᵀt, σ²A⁻¹) of every layer (SS/VSS and IP variants).
pub fn optimal_weights(
    model: &RecurrentModel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
    check_inputs(model, y, x)?;
    let partials = serial_partials(model, y, x)?;
    let ip = model.variant.ip();
    partials
        .iter()
        .enumerate()
        .map(|(l, p)| {
            let layer = &model.layers[l];
            let a = system_matrix(p, layer, ip);
            let (c, _) = crate::linalg::cholesky_escalating(&a, "A")?;
            Ok((
                c.solve(&p.psi1_t),
                c.inverse() * layer.kernel.noise_variance,
            ))
        })
        .collect()
}

/// A = Ψ₂ + σ²I, or Ψ₂ + σ²K_MM for IP-2.
pub(crate) fn system_matrix(
    p: &LayerPartial,
    layer: &crate::model::Layer,
    ip: Option<IpKind>,
) -> DMatrix<f64> {
    let s = layer.kernel.noise_variance;
    match ip {
        Some(IpKind::Two) => &p.psi2 + kmm(layer) * s,
        _ => &p.psi2 + DMatrix::identity(p.psi2.nrows(), p.psi2.nrows()) * s,
    }
}

/// Gradient of the bound with respect to every model parameter, in natural coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub length_scales: Vec<f64>,
    /// Z in SS variants, the spectral means in VSS variants.
    pub spec_mean: DMatrix<f64>,
    /// Spectral variances (zero in SS variants).
    pub spec_var: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub phases: Vec<f64>,
    pub state_mean: Option<DVector<f64>>,
    pub state_var: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub layers: Vec<LayerGrad>,
}

/// Bound value and its gradient. Rows are processed in fixed chunks (in parallel when enabled)
/// and reduced pairwise, so the result does not depend on the number of threads.
pub fn bound_and_gradient(
    model: &RecurrentModel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<(BoundValue, ModelGrad)> {
    check_inputs(model, y, x)?;
    let ctxs = layer_contexts(model, y, x)?;
    let cfg = model.config;
    let ip = model.variant.ip();
    let nl = model.num_layers();
    let ns = cfg.num_states(y.len());
    let off = cfg.state_offset();

    let mut grads: Vec<LayerGrad> = model
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let (m, q) = (layer.num_features(), layer.kernel.dim());
            LayerGrad {
                signal_variance: 0.0,
                noise_variance: 0.0,
                length_scales: vec![0.0; q],
                spec_mean: DMatrix::zeros(m, q),
                spec_var: DMatrix::zeros(m, q),
                u: DMatrix::zeros(m, q),
                phases: vec![0.0; m],
                state_mean: (l < cfg.hidden_layers).then(|| DVector::zeros(ns)),
                state_var: (l < cfg.hidden_layers).then(|| DVector::zeros(ns)),
            }
        })
        .collect();

    let mut per_layer = Vec::with_capacity(nl);
    let mut kl_z = 0.0;
    let mut kl_h = 0.0;
    for (l, ctx) in ctxs.iter().enumerate() {
        let layer = &model.layers[l];
        let parts = chunks(ctx.rows(), ROW_CHUNK);
        let fwd = map_range(parts.len(), |c| ctx.forward(parts[c].clone(), true));
        let mut psi1 = Vec::with_capacity(ctx.rows() * ctx.feat.m);
        let mut partials = Vec::with_capacity(fwd.len());
        for (p, rows) in fwd {
            psi1.extend(rows);
            partials.push(p);
        }
        let total = tree_reduce(partials, |mut a, b| {
            a.add(&b);
            a
        })
        .unwrap_or_else(|| LayerPartial::zeros(ctx.feat.m, ip.is_some()));
        let k = ip.map(|_| kmm(layer));
        let fin = finish_layer(&total, &layer.kernel, ip, k.as_ref(), true)?;
        per_layer.push(fin.value);
        let adj = fin.adjoint.expect("requested");

        let back = map_range(parts.len(), |c| ctx.backward(parts[c].clone(), &adj, &psi1));
        let mut mu_bar = Vec::with_capacity(ctx.rows() * ctx.q);
        let mut lam_bar = Vec::with_capacity(ctx.rows() * ctx.q);
        let mut t_bar = Vec::with_capacity(ctx.rows());
        let mut feats = Vec::with_capacity(back.len());
        for b in back {
            mu_bar.extend(b.mu_bar);
            lam_bar.extend(b.lam_bar);
            t_bar.extend(b.t_bar);
            feats.push(b.feat);
        }
        let fg = tree_reduce(feats, |mut a, b| {
            a.add(&b);
            a
        });
        let g = &mut grads[l];
        if let Some(fg) = fg {
            let pg = ctx.feat.pullback(&fg);
            g.spec_mean += pg.spec_mean;
            g.spec_var += pg.spec_var;
            g.u += pg.u;
            for (a, b) in g.phases.iter_mut().zip(&pg.phases) {
                *a += b;
            }
            for (a, b) in g.length_scales.iter_mut().zip(&pg.length_scales) {
                *a += b;
            }
            g.signal_variance += pg.sigma2;
        }
        g.noise_variance += adj.noise_variance;
        g.signal_variance += adj.signal_variance;
        if let Some(kb) = &adj.kmm {
            let (ub, lb, sb) = kmm_back(layer, kb);
            g.u += ub;
            for (a, b) in g.length_scales.iter_mut().zip(&lb) {
                *a += b;
            }
            g.signal_variance += sb;
        }

        // Regressor adjoints flow back to the states they were read from.
        let cols = regressor_columns(&cfg, l, model.input_dim);
        let q = ctx.q;
        for r in 0..ctx.rows() {
            let t = r + cfg.h_x;
            for (c, src) in cols.iter().enumerate() {
                if let Source::State { layer: s, lag } = *src {
                    let idx = (t as isize - lag as isize + off) as usize;
                    grads[s].state_mean.as_mut().unwrap()[idx] += mu_bar[r * q + c];
                    grads[s].state_var.as_mut().unwrap()[idx] += lam_bar[r * q + c];
                }
            }
        }
        if l < cfg.hidden_layers {
            let hh = cfg.h_h;
            let g = &mut grads[l];
            let (sm, sv) = (
                g.state_mean.as_mut().unwrap(),
                g.state_var.as_mut().unwrap(),
            );
            for r in 0..ctx.rows() {
                sm[hh + r] += t_bar[r];
                sv[hh + r] += adj.sum_var_t;
            }
        }

        if let Some(sp) = &layer.spectral {
            kl_z += kl_spectral(sp)?;
            let g = &mut grads[l];
            for ((gm, gv), (a, b)) in g
                .spec_mean
                .iter_mut()
                .zip(g.spec_var.iter_mut())
                .zip(sp.mean.iter().zip(sp.var.iter()))
            {
                *gm -= a;
                *gv -= 0.5 * (1.0 - 1.0 / b);
            }
        }
        if l < cfg.hidden_layers {
            kl_h -= state_terms_from_partial(model, l, total.state_log_var);
            let st = layer.states.as_ref().unwrap();
            let g = &mut grads[l];
            let (sm, sv) = (
                g.state_mean.as_mut().unwrap(),
                g.state_var.as_mut().unwrap(),
            );
            for k in 0..ns {
                sv[k] += 0.5 / st.var[k];
            }
            for k in 0..cfg.h_h {
                sm[k] -= st.mean[k];
                sv[k] -= 0.5;
            }
        }
    }
    Ok((
        BoundValue::from_parts(per_layer, kl_z, kl_h),
        ModelGrad { layers: grads },
    ))
}
