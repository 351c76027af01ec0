//! Bound maximization: parameter packing under positive transforms, staged freezing and
//! seeded restarts.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{csv_bytes, write_atomic};
use crate::bound::{bound_and_gradient, BoundValue, ModelGrad};
use crate::error::{Error, Result};
use crate::exec::map_range;
use crate::model::{init_model, InitOptions, RecurrentModel, Variant, WindowConfig};
use crate::optim::{maximize, IterHook, IterRecord, Optimizer};
use crate::transform::Transform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    NoiseVariance,
    SignalVariance,
    LengthScales,
    /// Z in SS variants, the spectral means α in VSS variants.
    Spectral,
    /// Spectral variances β (VSS only).
    SpectralVariance,
    Inducing,
    Phases,
    StateMeans,
    StateVariances,
}

impl Group {
    const ORDER: [Group; 9] = [
        Group::NoiseVariance,
        Group::SignalVariance,
        Group::LengthScales,
        Group::Spectral,
        Group::SpectralVariance,
        Group::Inducing,
        Group::Phases,
        Group::StateMeans,
        Group::StateVariances,
    ];

    fn transform(self) -> Transform {
        match self {
            Group::SignalVariance | Group::LengthScales | Group::StateVariances => {
                Transform::POSITIVE
            }
            Group::NoiseVariance => Transform::NOISE_VARIANCE,
            Group::SpectralVariance => Transform::SPECTRAL_VARIANCE,
            _ => Transform::Identity,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        write!(f, "{}", s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

/// Groups held fixed during optimization. `phases: None` freezes them in VSS variants only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Freeze {
    pub noise_variance: bool,
    pub signal_variance: bool,
    pub length_scales: bool,
    pub spectral: bool,
    pub spectral_variance: bool,
    pub inducing: bool,
    pub phases: Option<bool>,
    pub states: bool,
}

impl Default for Freeze {
    fn default() -> Self {
        Self {
            noise_variance: false,
            signal_variance: false,
            length_scales: false,
            spectral: false,
            spectral_variance: true,
            inducing: false,
            phases: None,
            states: false,
        }
    }
}

impl Freeze {
    fn frozen(&self, g: Group, variant: Variant) -> bool {
        match g {
            Group::NoiseVariance => self.noise_variance,
            Group::SignalVariance => self.signal_variance,
            Group::LengthScales => self.length_scales,
            Group::Spectral => self.spectral,
            Group::SpectralVariance => self.spectral_variance || !variant.is_variational(),
            Group::Inducing => self.inducing,
            Group::Phases => self.phases.unwrap_or(variant.is_variational()),
            Group::StateMeans | Group::StateVariances => self.states,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub layer: usize,
    pub group: Group,
    /// Row-major index within the group's array.
    pub index: usize,
}

/// Where each packed coordinate lives in the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamIndex {
    pub entries: Vec<Entry>,
}

impl ParamIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, k: usize) -> String {
        let e = &self.entries[k];
        format!("layer{}.{}[{}]", e.layer, e.group, e.index)
    }
}

fn group_len(model: &RecurrentModel, l: usize, g: Group) -> usize {
    let layer = &model.layers[l];
    let (m, q) = (layer.num_features(), layer.kernel.dim());
    match g {
        Group::NoiseVariance | Group::SignalVariance => 1,
        Group::LengthScales => q,
        Group::Spectral | Group::Inducing => m * q,
        Group::SpectralVariance => layer.spectral.as_ref().map_or(0, |_| m * q),
        Group::Phases => m,
        Group::StateMeans | Group::StateVariances => {
            layer.states.as_ref().map_or(0, |s| s.mean.len())
        }
    }
}

fn mat_at(m: &mut DMatrix<f64>, k: usize) -> &mut f64 {
    let c = m.ncols();
    &mut m[(k / c, k % c)]
}

fn slot(model: &mut RecurrentModel, e: Entry) -> &mut f64 {
    let layer = &mut model.layers[e.layer];
    match e.group {
        Group::NoiseVariance => &mut layer.kernel.noise_variance,
        Group::SignalVariance => &mut layer.kernel.signal_variance,
        Group::LengthScales => &mut layer.kernel.length_scales[e.index],
        Group::Spectral => match layer.spectral.as_mut() {
            Some(s) => mat_at(&mut s.mean, e.index),
            None => mat_at(&mut layer.basis.z, e.index),
        },
        Group::SpectralVariance => mat_at(&mut layer.spectral.as_mut().expect("VSS").var, e.index),
        Group::Inducing => mat_at(&mut layer.basis.u, e.index),
        Group::Phases => &mut layer.basis.phases[e.index],
        Group::StateMeans => &mut layer.states.as_mut().expect("hidden").mean[e.index],
        Group::StateVariances => &mut layer.states.as_mut().expect("hidden").var[e.index],
    }
}

fn grad_at(g: &ModelGrad, e: Entry) -> f64 {
    let lg = &g.layers[e.layer];
    let m = |x: &DMatrix<f64>| x[(e.index / x.ncols(), e.index % x.ncols())];
    let v = |x: &Option<DVector<f64>>| x.as_ref().map_or(0.0, |x| x[e.index]);
    match e.group {
        Group::NoiseVariance => lg.noise_variance,
        Group::SignalVariance => lg.signal_variance,
        Group::LengthScales => lg.length_scales[e.index],
        Group::Spectral => m(&lg.spec_mean),
        Group::SpectralVariance => m(&lg.spec_var),
        Group::Inducing => m(&lg.u),
        Group::Phases => lg.phases[e.index],
        Group::StateMeans => v(&lg.state_mean),
        Group::StateVariances => v(&lg.state_var),
    }
}

/// Flattens the free parameters (layer-major, fixed group order, row-major within a group) into
/// unconstrained coordinates.
pub fn pack_parameters(model: &RecurrentModel, freeze: &Freeze) -> (Vec<f64>, ParamIndex) {
    let mut entries = Vec::new();
    for l in 0..model.layers.len() {
        for g in Group::ORDER {
            if freeze.frozen(g, model.variant) {
                continue;
            }
            entries.extend((0..group_len(model, l, g)).map(|index| Entry {
                layer: l,
                group: g,
                index,
            }));
        }
    }
    let mut m = model.clone();
    let theta = entries
        .iter()
        .map(|&e| e.group.transform().inverse(*slot(&mut m, e)))
        .collect();
    (theta, ParamIndex { entries })
}

/// Writes packed coordinates back into `model`.
pub fn unpack_parameters(
    model: &mut RecurrentModel,
    theta: &[f64],
    index: &ParamIndex,
) -> Result<()> {
    if theta.len() != index.len() {
        return Err(Error::dim(
            "packed parameter vector",
            index.len(),
            theta.len(),
        ));
    }
    for (&e, &t) in index.entries.iter().zip(theta) {
        *slot(model, e) = e.group.transform().forward(t);
    }
    // Keep the basis copy of Z in step with α so feature maps of VSS models stay meaningful.
    for layer in &mut model.layers {
        if let Some(s) = &layer.spectral {
            layer.basis.z.copy_from(&s.mean);
        }
    }
    Ok(())
}

/// Bound and its gradient with respect to the packed coordinates at `theta`.
pub fn packed_gradient(
    model: &RecurrentModel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    theta: &[f64],
    index: &ParamIndex,
) -> Result<(BoundValue, Vec<f64>)> {
    let mut m = model.clone();
    unpack_parameters(&mut m, theta, index)?;
    let (value, g) = bound_and_gradient(&m, y, x)?;
    if !value.total.is_finite() {
        return Err(Error::NonFinite {
            what: "bound".into(),
        });
    }
    let mut out = Vec::with_capacity(index.len());
    for (k, (&e, &t)) in index.entries.iter().zip(theta).enumerate() {
        let d = grad_at(&g, e) * e.group.transform().derivative(t);
        if !d.is_finite() {
            return Err(Error::NonFinite {
                what: format!("gradient of {}", index.name(k)),
            });
        }
        out.push(d);
    }
    Ok((value, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub window: WindowConfig,
    pub variant: Variant,
    pub init: InitOptions,
    pub max_iters: usize,
    pub restarts: usize,
    /// Iterations at the start with σ_noise and σ_power held fixed.
    pub stage1_iters: usize,
    pub stage1_freeze_spectral: bool,
    pub stage1_freeze_inducing: bool,
    pub freeze: Freeze,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window: WindowConfig {
                h_x: 1,
                h_h: 1,
                hidden_layers: 1,
            },
            variant: Variant::Ss,
            init: InitOptions::default(),
            max_iters: 100,
            restarts: 5,
            stage1_iters: 20,
            stage1_freeze_spectral: false,
            stage1_freeze_inducing: false,
            freeze: Freeze::default(),
            optimizer: Optimizer::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        if self.stage1_iters > self.max_iters {
            return Err(Error::Config(format!(
                "stage1_iters ({}) exceeds max_iters ({})",
                self.stage1_iters, self.max_iters
            )));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if self.init.num_features == 0 {
            return Err(Error::Config("num_features must be at least 1".into()));
        }
        Ok(())
    }

    /// Seeds of the restarts, all drawn from one generator seeded with `seed`.
    pub fn restart_seeds(&self) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.restarts).map(|_| rng.next_u64()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub restart: usize,
    pub stage: u8,
    pub iter: usize,
    pub bound: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub index: usize,
    pub seed: u64,
    pub initial_bound: Option<f64>,
    pub final_bound: Option<f64>,
    pub iterations: usize,
    /// "ok", "stopped: <reason>" or "aborted: <reason>".
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: RecurrentModel,
    pub best_restart: usize,
    pub restarts: Vec<RestartSummary>,
    pub trace: Vec<TraceRow>,
}

impl TrainResult {
    pub fn trace_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(&self.trace)
    }
}

#[derive(Serialize)]
struct CheckpointState<'a> {
    restart: usize,
    stage: u8,
    iter: usize,
    bound: f64,
    index: &'a ParamIndex,
    params: &'a [f64],
}

fn checkpoint_hook(
    dir: PathBuf,
    model: RecurrentModel,
    index: ParamIndex,
    restart: usize,
    stage: u8,
    offset: usize,
    every: usize,
) -> IterHook {
    Box::new(move |rec: &IterRecord| {
        let iter = offset + rec.iter;
        if !iter.is_multiple_of(every) {
            return Ok(());
        }
        let mut m = model.clone();
        let mut write = || -> Result<()> {
            unpack_parameters(&mut m, &rec.params, &index)?;
            write_atomic(
                &dir.join(format!("restart{restart}_model.json")),
                m.to_json()?.as_bytes(),
            )?;
            let st = CheckpointState {
                restart,
                stage,
                iter,
                bound: rec.value,
                index: &index,
                params: &rec.params,
            };
            write_atomic(
                &dir.join(format!("restart{restart}_state.json")),
                serde_json::to_string_pretty(&st)?.as_bytes(),
            )
        };
        write().map_err(|e| format!("checkpoint failed: {e}"))
    })
}

struct RestartRun {
    model: Option<RecurrentModel>,
    summary: RestartSummary,
    trace: Vec<TraceRow>,
}

fn run_restart(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    cfg: &TrainConfig,
    r: usize,
    seed: u64,
    checkpoints: Option<&Path>,
) -> RestartRun {
    let mut run = RestartRun {
        model: None,
        summary: RestartSummary {
            index: r,
            seed,
            initial_bound: None,
            final_bound: None,
            iterations: 0,
            status: "ok".into(),
        },
        trace: Vec::new(),
    };
    let abort = |mut run: RestartRun, stage: u8, e: Error| {
        log::warn!("restart {r} aborted in stage {stage}: {e}");
        run.summary.status = format!("aborted: {e}");
        run.summary.final_bound = None;
        run
    };
    let mut model = match init_model(y, x, cfg.window, cfg.variant, &cfg.init, seed) {
        Ok(m) => m,
        Err(e) => return abort(run, 0, e),
    };
    let v0 = match crate::bound::bound(&model, y, x) {
        Ok(v) if v.total.is_finite() => v.total,
        Ok(_) => {
            return abort(
                run,
                0,
                Error::NonFinite {
                    what: "initial bound".into(),
                },
            )
        }
        Err(e) => return abort(run, 0, e),
    };
    run.summary.initial_bound = Some(v0);
    run.summary.final_bound = Some(v0);
    run.trace.push(TraceRow {
        restart: r,
        stage: 0,
        iter: 0,
        bound: v0,
        grad_norm: f64::NAN,
        wall_ms: 0.0,
    });

    let s1 = cfg.stage1_iters.min(cfg.max_iters);
    let mut done = 0;
    let mut wall = 0.0;
    for (stage, iters) in [(1u8, s1), (2u8, cfg.max_iters - s1)] {
        if iters == 0 {
            continue;
        }
        let mut freeze = cfg.freeze.clone();
        if stage == 1 {
            freeze.noise_variance = true;
            freeze.signal_variance = true;
            freeze.spectral |= cfg.stage1_freeze_spectral;
            freeze.inducing |= cfg.stage1_freeze_inducing;
        }
        let (theta0, index) = pack_parameters(&model, &freeze);
        let f = |th: &[f64]| packed_gradient(&model, y, x, th, &index).map(|(v, g)| (v.total, g));
        let hook = match (checkpoints, cfg.checkpoint_every) {
            (Some(dir), k) if k > 0 => Some(checkpoint_hook(
                dir.to_path_buf(),
                model.clone(),
                index.clone(),
                r,
                stage,
                done,
                k,
            )),
            _ => None,
        };
        let out = match maximize(&f, theta0, iters, cfg.optimizer, hook) {
            Ok(o) => o,
            Err(e) => return abort(run, stage, e),
        };
        for rec in &out.records {
            run.trace.push(TraceRow {
                restart: r,
                stage,
                iter: done + rec.iter,
                bound: rec.value,
                grad_norm: rec.grad_norm,
                wall_ms: wall + rec.wall_ms,
            });
        }
        done += out.records.len();
        wall += out.records.last().map_or(0.0, |r| r.wall_ms);
        if let Some(why) = &out.stopped_early {
            log::info!(
                "restart {r} stage {stage} ended after {} iterations: {why}",
                out.records.len()
            );
            run.summary.status = format!("stopped: {why}");
        }
        if let Err(e) = unpack_parameters(&mut model, &out.params, &index) {
            return abort(run, stage, e);
        }
        run.summary.final_bound = Some(out.value);
    }
    run.summary.iterations = done;
    run.model = Some(model);
    run
}

/// Trains `cfg.restarts` seeded restarts (concurrently when parallel) and returns the one with
/// the highest final bound; ties go to the lowest restart index.
pub fn train(y: &DVector<f64>, x: &DMatrix<f64>, cfg: &TrainConfig) -> Result<TrainResult> {
    train_with_checkpoints(y, x, cfg, None)
}

pub fn train_with_checkpoints(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    cfg: &TrainConfig,
    checkpoints: Option<&Path>,
) -> Result<TrainResult> {
    cfg.validate()?;
    let seeds = cfg.restart_seeds();
    let runs = map_range(seeds.len(), |r| {
        run_restart(y, x, cfg, r, seeds[r], checkpoints)
    });
    let mut best: Option<usize> = None;
    for (r, run) in runs.iter().enumerate() {
        if let (Some(v), Some(_)) = (run.summary.final_bound, &run.model) {
            match best {
                Some(b) if runs[b].summary.final_bound.unwrap_or(f64::NEG_INFINITY) >= v => {}
                _ => best = Some(r),
            }
        }
    }
    let best = best.ok_or_else(|| {
        let why: Vec<_> = runs.iter().map(|r| r.summary.status.clone()).collect();
        Error::Config(format!("every restart failed: {}", why.join("; ")))
    })?;
    let restarts = runs.iter().map(|r| r.summary.clone()).collect();
    let trace = runs.iter().flat_map(|r| r.trace.iter().cloned()).collect();
    let model = runs
        .into_iter()
        .nth(best)
        .and_then(|r| r.model)
        .expect("best restart has a model");
    Ok(TrainResult {
        model,
        best_restart: best,
        restarts,
        trace,
    })
}
