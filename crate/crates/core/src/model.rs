//! The deep recurrent model: window configuration, per-layer parameters and regressor assembly.
//!
//! Time is 0-based here: t = 0..N−1 corresponds to i = t+1. Regressor rows cover
//! t = H_x..N−1 (N̂ = N − H_x rows). Hidden-layer states exist for t ≥ H_x − H_h, stored at
//! index t + H_h − H_x. The first H_h states have no generating GP term and carry a
//! standard-normal prior instead.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernel::{KernelParams, SpectralBasis};
use crate::psi::{GaussianInputs, GaussianSpectral};
use crate::serde_mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub h_x: usize,
    pub h_h: usize,
    /// Number of hidden layers L; the model has L + 1 GP layers.
    pub hidden_layers: usize,
}

impl WindowConfig {
    pub fn new(h_x: usize, h_h: usize, hidden_layers: usize) -> Result<Self> {
        let c = Self {
            h_x,
            h_h,
            hidden_layers,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn uniform(h: usize, hidden_layers: usize) -> Result<Self> {
        Self::new(h, h, hidden_layers)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("h_x", self.h_x),
            ("h_h", self.h_h),
            ("hidden_layers", self.hidden_layers),
        ] {
            if v < 1 {
                return Err(Error::param(name, "must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_layers + 1
    }

    pub fn n_hat(&self, n: usize) -> usize {
        n.saturating_sub(self.h_x)
    }

    pub fn num_states(&self, n: usize) -> usize {
        n + self.h_h - self.h_x
    }

    /// Input dimension of GP layer `layer` (0-based; `hidden_layers` is the output layer).
    pub fn layer_input_dim(&self, layer: usize, q_x: usize) -> usize {
        if layer == 0 {
            self.h_h + self.h_x * q_x
        } else if layer < self.hidden_layers {
            2 * self.h_h
        } else {
            self.h_h
        }
    }

    /// Signed offset so that state index = t + offset.
    pub fn state_offset(&self) -> isize {
        self.h_h as isize - self.h_x as isize
    }
}

/// Where a regressor column reads from, relative to the row's time t.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// State of hidden layer `layer` at time t − lag.
    State { layer: usize, lag: usize },
    /// Exogenous input dimension `dim` at time t − lag (deterministic).
    Exog { dim: usize, lag: usize },
}

/// Column layout of layer `layer`'s regressor.
pub fn regressor_columns(config: &WindowConfig, layer: usize, q_x: usize) -> Vec<Source> {
    let hh = config.h_h;
    let mut cols = Vec::new();
    if layer == 0 {
        cols.extend((1..=hh).map(|lag| Source::State { layer: 0, lag }));
        for lag in 1..=config.h_x {
            cols.extend((0..q_x).map(|dim| Source::Exog { dim, lag }));
        }
    } else if layer < config.hidden_layers {
        cols.extend((1..=hh).map(|lag| Source::State { layer, lag }));
        cols.extend((0..hh).map(|lag| Source::State {
            layer: layer - 1,
            lag,
        }));
    } else {
        cols.extend((0..hh).map(|lag| Source::State {
            layer: layer - 1,
            lag,
        }));
    }
    cols
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Ss,
    Vss,
    SsIp1,
    VssIp1,
    SsIp2,
    VssIp2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpKind {
    One,
    Two,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Ss,
        Variant::Vss,
        Variant::SsIp1,
        Variant::VssIp1,
        Variant::SsIp2,
        Variant::VssIp2,
    ];

    pub fn is_variational(self) -> bool {
        matches!(self, Variant::Vss | Variant::VssIp1 | Variant::VssIp2)
    }

    pub fn ip(self) -> Option<IpKind> {
        match self {
            Variant::SsIp1 | Variant::VssIp1 => Some(IpKind::One),
            Variant::SsIp2 | Variant::VssIp2 => Some(IpKind::Two),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ss => "ss",
            Variant::Vss => "vss",
            Variant::SsIp1 => "ss-ip1",
            Variant::VssIp1 => "vss-ip1",
            Variant::SsIp2 => "ss-ip2",
            Variant::VssIp2 => "vss-ip2",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentStates {
    #[serde(with = "serde_mat::vector")]
    pub mean: DVector<f64>,
    #[serde(with = "serde_mat::vector")]
    pub var: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightCov {
    Diagonal(#[serde(with = "serde_mat::vector")] DVector<f64>),
    Full(#[serde(with = "serde_mat::matrix")] DMatrix<f64>),
}

impl WeightCov {
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            WeightCov::Diagonal(d) => DMatrix::from_diagonal(d),
            WeightCov::Full(s) => s.clone(),
        }
    }
}

/// Explicit Gaussian posterior over basis weights, a ~ N(mean, cov).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPosterior {
    #[serde(with = "serde_mat::vector")]
    pub mean: DVector<f64>,
    pub cov: WeightCov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub kernel: KernelParams,
    pub basis: SpectralBasis,
    pub spectral: Option<GaussianSpectral>,
    /// Latent states produced by this layer (hidden layers only).
    pub states: Option<LatentStates>,
    pub weights: Option<WeightPosterior>,
}

impl Layer {
    pub fn num_features(&self) -> usize {
        self.basis.num_features()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentModel {
    pub config: WindowConfig,
    pub variant: Variant,
    pub input_dim: usize,
    /// Number of training instants N the states were built for.
    pub n_train: usize,
    pub layers: Vec<Layer>,
    pub seed: u64,
}

impl RecurrentModel {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn output_layer(&self) -> usize {
        self.config.hidden_layers
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        self.config.layer_input_dim(layer, self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let nl = self.config.num_layers();
        if self.layers.len() != nl {
            return Err(Error::dim("model layers", nl, self.layers.len()));
        }
        let ns = self.config.num_states(self.n_train);
        for (l, layer) in self.layers.iter().enumerate() {
            let q = self.layer_input_dim(l);
            layer.kernel.validate()?;
            if layer.kernel.dim() != q {
                return Err(Error::dim("layer kernel dimension", q, layer.kernel.dim()));
            }
            layer.basis.validate(q)?;
            match (&layer.spectral, self.variant.is_variational()) {
                (Some(s), true) => s.validate(layer.num_features(), q)?,
                (None, false) => {}
                (None, true) => {
                    return Err(Error::Config(format!(
                        "layer {l}: VSS variant needs spectral posteriors"
                    )))
                }
                (Some(_), false) => {
                    return Err(Error::Config(format!(
                        "layer {l}: SS variant has spectral posteriors"
                    )))
                }
            }
            let hidden = l < self.config.hidden_layers;
            match (&layer.states, hidden) {
                (Some(s), true) => {
                    if s.mean.len() != ns || s.var.len() != ns {
                        return Err(Error::dim("layer states", ns, s.mean.len()));
                    }
                    if let Some(v) = s.var.iter().find(|v| !(**v > 0.0)) {
                        return Err(Error::param(
                            "state variance",
                            format!("must be > 0, got {v}"),
                        ));
                    }
                }
                (None, false) => {}
                (None, true) => {
                    return Err(Error::Config(format!("hidden layer {l} is missing states")))
                }
                (Some(_), false) => {
                    return Err(Error::Config("output layer cannot carry states".into()))
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn state_index(config: &WindowConfig, t: usize, lag: usize) -> usize {
    (t as isize - lag as isize + config.state_offset()) as usize
}

/// Regressor means and variances for layer `layer`, one row per t = H_x..N−1.
pub fn assemble_regressors(
    model: &RecurrentModel,
    x: &DMatrix<f64>,
    layer: usize,
) -> Result<GaussianInputs> {
    let nl = model.num_layers();
    if layer >= nl {
        return Err(Error::LayerOutOfRange { layer, layers: nl });
    }
    if x.ncols() != model.input_dim {
        return Err(Error::dim(
            "exogenous input columns",
            model.input_dim,
            x.ncols(),
        ));
    }
    let n = x.nrows();
    let cfg = &model.config;
    if n <= cfg.h_x {
        return Err(Error::param(
            "N",
            format!("need N > H_x = {}, got {n}", cfg.h_x),
        ));
    }
    let cols = regressor_columns(cfg, layer, model.input_dim);
    let ns = cfg.num_states(n);
    for c in &cols {
        if let Source::State { layer: src, .. } = c {
            let st = model.layers[*src]
                .states
                .as_ref()
                .ok_or_else(|| Error::Config(format!("states of layer {src} are missing")))?;
            if st.mean.len() != ns {
                return Err(Error::dim("states for this series", ns, st.mean.len()));
            }
        }
    }
    let n_hat = cfg.n_hat(n);
    let mut mean = DMatrix::zeros(n_hat, cols.len());
    let mut var = DMatrix::zeros(n_hat, cols.len());
    for r in 0..n_hat {
        let t = r + cfg.h_x;
        for (c, src) in cols.iter().enumerate() {
            match *src {
                Source::State { layer: s, lag } => {
                    let st = model.layers[s].states.as_ref().expect("checked above");
                    let k = state_index(cfg, t, lag);
                    mean[(r, c)] = st.mean[k];
                    var[(r, c)] = st.var[k];
                }
                Source::Exog { dim, lag } => mean[(r, c)] = x[(t - lag, dim)],
            }
        }
    }
    Ok(GaussianInputs { mean, var })
}

/// Regression targets (means, variances) of layer `layer` over t = H_x..N−1.
pub fn layer_targets(
    model: &RecurrentModel,
    y: &DVector<f64>,
    layer: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let cfg = &model.config;
    let n = y.len();
    let n_hat = cfg.n_hat(n);
    if layer >= model.num_layers() {
        return Err(Error::LayerOutOfRange {
            layer,
            layers: model.num_layers(),
        });
    }
    if layer == model.output_layer() {
        return Ok((y.rows(cfg.h_x, n_hat).into_owned(), DVector::zeros(n_hat)));
    }
    let st = model.layers[layer]
        .states
        .as_ref()
        .ok_or_else(|| Error::Config(format!("states of layer {layer} are missing")))?;
    let start = cfg.h_h;
    if st.mean.len() != start + n_hat {
        return Err(Error::dim(
            "states for this series",
            start + n_hat,
            st.mean.len(),
        ));
    }
    Ok((
        st.mean.rows(start, n_hat).into_owned(),
        st.var.rows(start, n_hat).into_owned(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthScaleInit {
    SqrtRange,
    Range,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InducingInit {
    RandomRows,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitOptions {
    pub num_features: usize,
    pub length_scales: LengthScaleInit,
    pub inducing: InducingInit,
    pub state_noise_sd: f64,
    pub state_var: f64,
    pub beta: f64,
    pub noise_sd: f64,
    pub signal_sd: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            num_features: 20,
            length_scales: LengthScaleInit::SqrtRange,
            inducing: InducingInit::RandomRows,
            state_noise_sd: 0.01,
            state_var: 0.01,
            beta: 1e-3,
            noise_sd: 0.1,
            signal_sd: 1.0,
        }
    }
}

/// Initial model: states from y plus seeded noise, σ_noise = 0.1, σ_power = 1, data-driven
/// length scales, z ~ N(0, I), b ~ U[0, 2π), U from regressor rows (or zeros), p = ∞.
pub fn init_model(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    config: WindowConfig,
    variant: Variant,
    opts: &InitOptions,
    seed: u64,
) -> Result<RecurrentModel> {
    config.validate()?;
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::dim("exogenous input rows", n, x.nrows()));
    }
    if n <= config.h_x {
        return Err(Error::param(
            "N",
            format!("need N > H_x = {}, got {n}", config.h_x),
        ));
    }
    if opts.num_features == 0 {
        return Err(Error::param("num_features", "must be >= 1"));
    }
    if variant.ip().is_some() && opts.inducing == InducingInit::Zeros {
        return Err(Error::Config(
            "inducing-point variants need distinct pseudo-inputs; zero initialization makes K_MM singular".into(),
        ));
    }
    for (name, v) in [
        ("state_var", opts.state_var),
        ("beta", opts.beta),
        ("noise_sd", opts.noise_sd),
        ("signal_sd", opts.signal_sd),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::param(name, format!("must be > 0, got {v}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q_x = x.ncols();
    let ns = config.num_states(n);
    let off = config.state_offset();

    let mut layers = Vec::with_capacity(config.num_layers());
    for l in 0..config.num_layers() {
        let states = (l < config.hidden_layers).then(|| {
            let mean = DVector::from_fn(ns, |k, _| {
                let t = (k as isize - off).max(0) as usize;
                let e: f64 = rng.sample(StandardNormal);
                y[t] + opts.state_noise_sd * e
            });
            LatentStates {
                mean,
                var: DVector::from_element(ns, opts.state_var),
            }
        });
        let q = config.layer_input_dim(l, q_x);
        // Placeholder kernel so the partial model can assemble this layer's regressors.
        layers.push(Layer {
            kernel: KernelParams::se(1.0, vec![1.0; q], 0.01),
            basis: SpectralBasis {
                z: DMatrix::zeros(0, q),
                u: DMatrix::zeros(0, q),
                phases: DVector::zeros(0),
            },
            spectral: None,
            states,
            weights: None,
        });
    }
    let mut model = RecurrentModel {
        config,
        variant,
        input_dim: q_x,
        n_train: n,
        layers,
        seed,
    };

    let m = opts.num_features;
    for l in 0..config.num_layers() {
        let reg = assemble_regressors(&model, x, l)?;
        let q = reg.dim();
        let length_scales: Vec<f64> = (0..q)
            .map(|c| {
                let col = reg.mean.column(c);
                let range = col.max() - col.min();
                let ls = match opts.length_scales {
                    LengthScaleInit::SqrtRange => range.sqrt(),
                    LengthScaleInit::Range => range,
                };
                if ls > 1e-8 && ls.is_finite() {
                    ls
                } else {
                    1.0
                }
            })
            .collect();
        let kernel = KernelParams::se(
            opts.signal_sd * opts.signal_sd,
            length_scales,
            opts.noise_sd * opts.noise_sd,
        );
        let z = DMatrix::from_fn(m, q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let phases = DVector::from_fn(m, |_, _| rng.random_range(0.0..TAU));
        let u = match opts.inducing {
            InducingInit::Zeros => DMatrix::zeros(m, q),
            InducingInit::RandomRows => {
                let n_hat = reg.len();
                let rows: Vec<usize> = if n_hat >= m {
                    sample(&mut rng, n_hat, m).into_vec()
                } else {
                    (0..m).map(|_| rng.random_range(0..n_hat)).collect()
                };
                DMatrix::from_fn(m, q, |j, c| reg.mean[(rows[j], c)])
            }
        };
        let spectral = variant.is_variational().then(|| GaussianSpectral {
            mean: z.clone(),
            var: DMatrix::from_element(m, q, opts.beta),
        });
        let layer = &mut model.layers[l];
        layer.kernel = kernel;
        layer.basis = SpectralBasis { z, u, phases };
        layer.spectral = spectral;
    }
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(n: usize) -> (DVector<f64>, DMatrix<f64>) {
        let y = DVector::from_fn(n, |i, _| (i as f64 * 0.3).sin());
        let x = DMatrix::from_fn(n, 1, |i, _| (i as f64 * 0.7).cos());
        (y, x)
    }

    #[test]
    fn dimension_formulas() {
        for l in 1..=3 {
            for h in [1, 2, 10] {
                let c = WindowConfig::uniform(h, l).unwrap();
                assert_eq!(c.layer_input_dim(0, 2), h + 2 * h);
                for k in 1..l {
                    assert_eq!(c.layer_input_dim(k, 2), 2 * h);
                }
                assert_eq!(c.layer_input_dim(l, 2), h);
                for k in 0..=l {
                    assert_eq!(regressor_columns(&c, k, 2).len(), c.layer_input_dim(k, 2));
                }
            }
        }
    }

    #[test]
    fn small_window_rows() {
        let y = DVector::from_vec(vec![10.0, 20.0, 30.0]);
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let cfg = WindowConfig::uniform(1, 1).unwrap();
        let mut m = init_model(
            &y,
            &x,
            cfg,
            Variant::Ss,
            &InitOptions {
                num_features: 2,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        let st = m.layers[0].states.as_mut().unwrap();
        st.mean = DVector::from_vec(vec![100.0, 200.0, 300.0]);
        st.var = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let r0 = assemble_regressors(&m, &x, 0).unwrap();
        // i = 2 (t = 1): [h_1, x_1].
        assert_eq!(
            r0.mean.row(0).iter().copied().collect::<Vec<_>>(),
            vec![100.0, 1.0]
        );
        assert_eq!(
            r0.var.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.1, 0.0]
        );
        let r1 = assemble_regressors(&m, &x, 1).unwrap();
        assert_eq!(r1.mean[(0, 0)], 200.0);
        assert_eq!(r1.len(), 2);
        assert!(assemble_regressors(&m, &x, 2).is_err());
    }

    #[test]
    fn first_row_and_count_with_longer_input_window() {
        let (y, x) = series(10);
        let cfg = WindowConfig::new(2, 1, 1).unwrap();
        let m = init_model(
            &y,
            &x,
            cfg,
            Variant::Ss,
            &InitOptions {
                num_features: 3,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let r = assemble_regressors(&m, &x, 0).unwrap();
        assert_eq!(r.len(), 8);
        // t = 2: x lags 1 and 2 are x[1], x[0].
        assert_eq!(r.mean[(0, 1)], x[(1, 0)]);
        assert_eq!(r.mean[(0, 2)], x[(0, 0)]);
        assert!(r.var.columns(1, 2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_defaults_and_determinism() {
        let (y, x) = series(30);
        let cfg = WindowConfig::uniform(2, 2).unwrap();
        let opts = InitOptions {
            num_features: 5,
            ..Default::default()
        };
        let a = init_model(&y, &x, cfg, Variant::Vss, &opts, 4).unwrap();
        let b = init_model(&y, &x, cfg, Variant::Vss, &opts, 4).unwrap();
        assert_eq!(a, b);
        for l in &a.layers {
            assert!((l.kernel.noise_variance.sqrt() - 0.1).abs() < 1e-15);
            assert_eq!(l.kernel.signal_variance, 1.0);
            assert!(l.basis.phases.iter().all(|&p| (0.0..TAU).contains(&p)));
        }
        let st = a.layers[0].states.as_ref().unwrap();
        for k in 0..st.mean.len() {
            assert!((st.mean[k] - y[k]).abs() < 0.06);
        }
    }

    #[test]
    fn init_rejects_short_series_and_zero_inducing_ip() {
        let (y, x) = series(2);
        let cfg = WindowConfig::uniform(2, 1).unwrap();
        assert!(init_model(&y, &x, cfg, Variant::Ss, &InitOptions::default(), 0).is_err());
        let (y, x) = series(20);
        let opts = InitOptions {
            inducing: InducingInit::Zeros,
            ..Default::default()
        };
        assert!(init_model(&y, &x, cfg, Variant::SsIp1, &opts, 0).is_err());
        assert!(init_model(&y, &x, cfg, Variant::Ss, &opts, 0).is_ok());
    }

    #[test]
    fn json_round_trip() {
        let (y, x) = series(15);
        let cfg = WindowConfig::uniform(1, 1).unwrap();
        let m = init_model(
            &y,
            &x,
            cfg,
            Variant::VssIp2,
            &InitOptions {
                num_features: 3,
                ..Default::default()
            },
            2,
        )
        .unwrap();
        let back = RecurrentModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn shifted_series_shifts_regressors() {
        let (y, x) = series(25);
        let cfg = WindowConfig::uniform(2, 1).unwrap();
        let m = init_model(
            &y,
            &x,
            cfg,
            Variant::Ss,
            &InitOptions {
                num_features: 3,
                state_noise_sd: 0.0,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let full = assemble_regressors(&m, &x, 0).unwrap();
        let mut tail = m.clone();
        let s = 4;
        let st = tail.layers[0].states.as_mut().unwrap();
        st.mean = st.mean.rows(s, st.mean.len() - s).into_owned();
        st.var = st.var.rows(s, st.var.len() - s).into_owned();
        let xs = x.rows(s, x.nrows() - s).into_owned();
        let shifted = assemble_regressors(&tail, &xs, 0).unwrap();
        assert_eq!(shifted.mean, full.mean.rows(s, full.len() - s).into_owned());
    }
}
