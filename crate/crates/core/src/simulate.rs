//! Free simulation: layer-by-layer predictive moments fed forward through time.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::bound::{kmm, optimal_weights};
use crate::dataset::Affine;
use crate::error::{Error, Result};
use crate::linalg::cholesky_escalating;
use crate::model::{regressor_columns, RecurrentModel, Source};
use crate::psi::{compute_stats, GaussianInputs};

/// Negative variances below this are counted as clamps; smaller ones are round-off.
pub const CLAMP_TOLERANCE: f64 = 1e-10;
/// Largest tolerated fraction of clamped variances in a simulation.
pub const MAX_CLAMP_RATE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveMoments {
    pub mean: f64,
    pub variance: f64,
}

struct LayerFit {
    m: DVector<f64>,
    s: DMatrix<f64>,
    kmm: Option<Cholesky<f64, Dyn>>,
}

/// A trained model together with the optimal weight posterior of every layer.
pub struct Predictor {
    pub model: RecurrentModel,
    fits: Vec<LayerFit>,
}

impl Predictor {
    /// Computes the optimal q(a) of every layer from the training series.
    pub fn fit(model: &RecurrentModel, y: &DVector<f64>, x: &DMatrix<f64>) -> Result<Self> {
        let weights = optimal_weights(model, y, x)?;
        let fits = weights
            .into_iter()
            .enumerate()
            .map(|(l, (m, s))| {
                let kmm = match model.variant.ip() {
                    Some(_) => Some(cholesky_escalating(&kmm(&model.layers[l]), "K_MM")?.0),
                    None => None,
                };
                Ok(LayerFit { m, s, kmm })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model: model.clone(),
            fits,
        })
    }

    /// Weight posterior mean and covariance of `layer`.
    pub fn weights(&self, layer: usize) -> (&DVector<f64>, &DMatrix<f64>) {
        (&self.fits[layer].m, &self.fits[layer].s)
    }

    /// Predictive moments of f at one Gaussian input N(mu, diag(lam)). The second value is true
    /// when a negative variance beyond round-off was clamped to zero.
    pub fn predict_layer(
        &self,
        layer: usize,
        mu: &[f64],
        lam: &[f64],
    ) -> Result<(PredictiveMoments, bool)> {
        let nl = self.model.num_layers();
        if layer >= nl {
            return Err(Error::LayerOutOfRange { layer, layers: nl });
        }
        let q = self.model.layer_input_dim(layer);
        if mu.len() != q {
            return Err(Error::dim("test input mean", q, mu.len()));
        }
        if lam.len() != q {
            return Err(Error::dim("test input variance", q, lam.len()));
        }
        let l = &self.model.layers[layer];
        let fit = &self.fits[layer];
        let inputs = GaussianInputs {
            mean: DMatrix::from_row_slice(1, q, mu),
            var: DMatrix::from_row_slice(1, q, lam),
        };
        let st = compute_stats(
            &inputs,
            &l.basis,
            l.spectral.as_ref(),
            &l.kernel,
            fit.kmm.is_some(),
        )?;
        let p1 = st.psi1.row(0).transpose();
        let mean = p1.dot(&fit.m);
        let spread = &st.psi2 - &p1 * p1.transpose();
        let mut var = fit.m.dot(&(&spread * &fit.m)) + fit.s.component_mul(&st.psi2).sum();
        if let (Some(kc), Some(reg)) = (&fit.kmm, &st.psi_reg) {
            var += l.kernel.signal_variance - kc.solve(reg).trace();
        }
        if !mean.is_finite() || !var.is_finite() {
            return Err(Error::NonFinite {
                what: format!("predictive moments of layer {layer}"),
            });
        }
        let clamped = var < -CLAMP_TOLERANCE;
        if clamped {
            log::warn!("layer {layer}: clamped predictive variance {var:e} to 0");
        }
        Ok((
            PredictiveMoments {
                mean,
                variance: var.max(0.0),
            },
            clamped,
        ))
    }
}

/// Initial lag windows for a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    /// The H_x exogenous rows before the first simulated step, oldest first.
    #[serde(with = "crate::serde_mat::matrix")]
    pub x_history: DMatrix<f64>,
    /// Per hidden layer, the H_h state moments before the first step, oldest first.
    pub states: Vec<Vec<PredictiveMoments>>,
    /// True when the windows are zeros rather than data.
    pub standalone: bool,
}

impl WarmStart {
    /// Continue right after the training series, from its last inputs and fitted states.
    pub fn training_tail(model: &RecurrentModel, x_train: &DMatrix<f64>) -> Result<Self> {
        let n = x_train.nrows();
        Self::at(model, x_train, n)
    }

    /// Start at time H_x of the training series, from its first inputs and fitted states.
    pub fn training_head(model: &RecurrentModel, x_train: &DMatrix<f64>) -> Result<Self> {
        Self::at(model, x_train, model.config.h_x)
    }

    fn at(model: &RecurrentModel, x_train: &DMatrix<f64>, t0: usize) -> Result<Self> {
        let cfg = &model.config;
        if x_train.nrows() != model.n_train {
            return Err(Error::dim(
                "training inputs",
                model.n_train,
                x_train.nrows(),
            ));
        }
        if x_train.ncols() != model.input_dim {
            return Err(Error::dim(
                "exogenous input columns",
                model.input_dim,
                x_train.ncols(),
            ));
        }
        let states = model.layers[..cfg.hidden_layers]
            .iter()
            .map(|layer| {
                let st = layer.states.as_ref().expect("hidden layers carry states");
                let end = (t0 as isize + cfg.state_offset()) as usize;
                (end - cfg.h_h..end)
                    .map(|k| PredictiveMoments {
                        mean: st.mean[k],
                        variance: st.var[k],
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            x_history: x_train.rows(t0 - cfg.h_x, cfg.h_x).into_owned(),
            states,
            standalone: false,
        })
    }

    /// All-zero windows with deterministic states, for a series without a training prefix.
    pub fn zeros(model: &RecurrentModel) -> Self {
        let cfg = &model.config;
        let zero = PredictiveMoments {
            mean: 0.0,
            variance: 0.0,
        };
        Self {
            x_history: DMatrix::zeros(cfg.h_x, model.input_dim),
            states: vec![vec![zero; cfg.h_h]; cfg.hidden_layers],
            standalone: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStep {
    pub output: PredictiveMoments,
    /// Output variance plus the output layer's noise variance.
    pub output_var_with_noise: f64,
    pub hidden: Vec<PredictiveMoments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub steps: Vec<SimStep>,
    pub clamped: usize,
    pub variance_checks: usize,
    pub standalone: bool,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn clamp_rate(&self) -> f64 {
        if self.variance_checks == 0 {
            0.0
        } else {
            self.clamped as f64 / self.variance_checks as f64
        }
    }

    pub fn output_mean(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.steps.iter().map(|s| s.output.mean))
    }

    pub fn output_var(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.steps.iter().map(|s| s.output.variance))
    }

    /// CSV with t, y_true, y_mean, y_var, y_var_noise and per hidden layer h{l}_mean, h{l}_var.
    /// Output columns are mapped back through `denorm` when given.
    pub fn to_csv(
        &self,
        y_true: Option<&DVector<f64>>,
        denorm: Option<&Affine>,
    ) -> Result<Vec<u8>> {
        if let Some(y) = y_true {
            if y.len() != self.len() {
                return Err(Error::dim("y_true length", self.len(), y.len()));
            }
        }
        let id = Affine {
            mean: 0.0,
            scale: 1.0,
        };
        let a = denorm.unwrap_or(&id);
        let nh = self.steps.first().map_or(0, |s| s.hidden.len());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["t", "y_true", "y_mean", "y_var", "y_var_noise"]
            .map(String::from)
            .into();
        for l in 1..=nh {
            header.push(format!("h{l}_mean"));
            header.push(format!("h{l}_var"));
        }
        w.write_record(&header)?;
        for (t, s) in self.steps.iter().enumerate() {
            let mut rec = vec![
                t.to_string(),
                y_true.map_or(String::new(), |y| y[t].to_string()),
                a.invert(s.output.mean).to_string(),
                a.invert_variance(s.output.variance).to_string(),
                a.invert_variance(s.output_var_with_noise).to_string(),
            ];
            for h in &s.hidden {
                rec.push(h.mean.to_string());
                rec.push(h.variance.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Rolls the model forward over `x_future` using only its own predicted moments.
pub fn free_simulate(
    pred: &Predictor,
    warm: &WarmStart,
    x_future: &DMatrix<f64>,
) -> Result<SimulationTrace> {
    let model = &pred.model;
    let cfg = &model.config;
    let (hh, hx, nh) = (cfg.h_h, cfg.h_x, cfg.hidden_layers);
    if x_future.ncols() != model.input_dim {
        return Err(Error::dim(
            "exogenous input columns",
            model.input_dim,
            x_future.ncols(),
        ));
    }
    if warm.x_history.shape() != (hx, model.input_dim) {
        return Err(Error::dim(
            "warm-start input rows",
            hx,
            warm.x_history.nrows(),
        ));
    }
    if warm.states.len() != nh || warm.states.iter().any(|s| s.len() != hh) {
        return Err(Error::dim(
            "warm-start state windows",
            nh,
            warm.states.len(),
        ));
    }
    let steps = x_future.nrows();
    let mut hist: Vec<Vec<PredictiveMoments>> = warm.states.clone();
    let x_row = |pos: usize, dim: usize| -> f64 {
        if pos < hx {
            warm.x_history[(pos, dim)]
        } else {
            x_future[(pos - hx, dim)]
        }
    };
    let cols: Vec<Vec<Source>> = (0..model.num_layers())
        .map(|l| regressor_columns(cfg, l, model.input_dim))
        .collect();
    let mut trace = SimulationTrace {
        steps: Vec::with_capacity(steps),
        clamped: 0,
        variance_checks: 0,
        standalone: warm.standalone,
    };
    let mut mu = Vec::new();
    let mut lam = Vec::new();
    for j in 0..steps {
        let mut hidden = Vec::with_capacity(nh);
        let mut output = None;
        for l in 0..model.num_layers() {
            mu.clear();
            lam.clear();
            for c in &cols[l] {
                match *c {
                    Source::State { layer, lag } => {
                        // The current step of `layer` is already pushed when it sits below `l`.
                        let h = &hist[layer][hh + j - lag];
                        mu.push(h.mean);
                        lam.push(h.variance);
                    }
                    Source::Exog { dim, lag } => {
                        mu.push(x_row(hx + j - lag, dim));
                        lam.push(0.0);
                    }
                }
            }
            let (m, clamped) = pred
                .predict_layer(l, &mu, &lam)
                .map_err(|e| Error::NonFinite {
                    what: format!("simulation step {j}, layer {l}: {e}"),
                })?;
            trace.variance_checks += 1;
            trace.clamped += usize::from(clamped);
            if l < nh {
                hist[l].push(m);
                hidden.push(m);
            } else {
                output = Some(m);
            }
        }
        let output = output.expect("output layer runs last");
        let noise = model.layers[nh].kernel.noise_variance;
        trace.steps.push(SimStep {
            output,
            output_var_with_noise: output.variance + noise,
            hidden,
        });
    }
    if trace.clamp_rate() > MAX_CLAMP_RATE {
        return Err(Error::NonFinite {
            what: format!(
                "simulation variances: {} of {} clamped (limit {MAX_CLAMP_RATE})",
                trace.clamped, trace.variance_checks
            ),
        });
    }
    Ok(trace)
}

/// Root mean squared error, optionally after mapping both series back through `denorm`.
pub fn rmse(
    sim_mean: &DVector<f64>,
    y_true: &DVector<f64>,
    denorm: Option<&Affine>,
) -> Result<f64> {
    if sim_mean.len() != y_true.len() {
        return Err(Error::dim(
            "rmse series length",
            y_true.len(),
            sim_mean.len(),
        ));
    }
    if sim_mean.is_empty() {
        return Err(Error::param("rmse", "empty series"));
    }
    let f = |v: f64| denorm.map_or(v, |a| a.invert(v));
    let ss: f64 = sim_mean
        .iter()
        .zip(y_true.iter())
        .map(|(a, b)| (f(*a) - f(*b)).powi(2))
        .sum();
    Ok((ss / sim_mean.len() as f64).sqrt())
}
