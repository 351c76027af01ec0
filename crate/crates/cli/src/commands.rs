use std::path::Path;

use anyhow::{bail, Context, Result};
use drgp_core::artifact::{csv_bytes, write_atomic};
use drgp_core::dataset::{self, Dataset, ToyKind};
use drgp_core::model::{init_model, InitOptions, RecurrentModel, Variant, WindowConfig};
use drgp_core::parallel::time_phases;
use drgp_core::simulate::{free_simulate, rmse, Predictor, WarmStart};
use drgp_core::trainer::train_with_checkpoints;
use drgp_core::validate::{moment_battery, psi_battery, Exact, UndampedPsi1};
use serde::Serialize;

use crate::config::RunConfig;
use crate::logging::Capture;

fn json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    write_atomic(&dir.join("config.json"), &json(cfg)?)?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    best_restart: usize,
    best_bound: Option<f64>,
    restarts: &'a [drgp_core::trainer::RestartSummary],
    normalization: &'a Option<dataset::Normalization>,
}

pub fn train(cfg: &RunConfig, log: &Capture) -> Result<()> {
    let out = &cfg.out;
    let outcome = train_inner(cfg);
    if let Err(e) = &outcome {
        log::error!("training failed: {e:#}");
    }
    write_atomic(&out.join("train.log"), &log.contents())?;
    outcome
}

fn train_inner(cfg: &RunConfig) -> Result<()> {
    let out = &cfg.out;
    let ds = cfg.data.load(cfg.seed)?;
    let (y, x) = ds.train();
    log::info!(
        "training {} on '{}': {} rows, {} inputs, L={}, M={}, H_x={}, H_h={}, {} restarts",
        cfg.train.variant,
        ds.name,
        y.len(),
        ds.input_dim(),
        cfg.train.window.hidden_layers,
        cfg.train.init.num_features,
        cfg.train.window.h_x,
        cfg.train.window.h_h,
        cfg.train.restarts
    );
    write_config(out, cfg)?;
    let ckpt = (cfg.train.checkpoint_every > 0).then(|| out.join("checkpoints"));
    let res = train_with_checkpoints(&y, &x, &cfg.train, ckpt.as_deref())?;
    let best = &res.restarts[res.best_restart];
    log::info!(
        "best restart {} with bound {:?}",
        res.best_restart,
        best.final_bound
    );
    write_atomic(&out.join("model.json"), res.model.to_json()?.as_bytes())?;
    write_atomic(&out.join("trace.csv"), &res.trace_csv()?)?;
    let summary = TrainSummary {
        best_restart: res.best_restart,
        best_bound: best.final_bound,
        restarts: &res.restarts,
        normalization: &ds.normalization,
    };
    write_atomic(&out.join("summary.json"), &json(&summary)?)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SimMetrics {
    rmse_normalized: f64,
    rmse_original: f64,
    steps: usize,
    clamp_rate: f64,
    warm_start: &'static str,
    normalization: Option<dataset::NormMode>,
}

fn check_compatible(model: &RecurrentModel, ds: &Dataset) -> Result<()> {
    if model.input_dim != ds.input_dim() {
        bail!(
            "model expects {} exogenous input columns, data has {}",
            model.input_dim,
            ds.input_dim()
        );
    }
    if model.n_train != ds.n_train {
        bail!(
            "model was trained on {} rows (training split length), data split has {}",
            model.n_train,
            ds.n_train
        );
    }
    if ds.n_test == 0 {
        bail!("data has no test split to simulate (set n_train/n_test or a benchmark)");
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let path = cfg
        .model
        .as_ref()
        .context("simulate needs --model <model.json>")?;
    let model =
        RecurrentModel::load(path).with_context(|| format!("loading model {}", path.display()))?;
    let ds = cfg.data.load(cfg.seed)?;
    check_compatible(&model, &ds)?;
    let (y_tr, x_tr) = ds.train();
    let (y_te, x_te) = ds.test();
    let pred = Predictor::fit(&model, &y_tr, &x_tr)?;
    let warm = WarmStart::training_tail(&model, &x_tr)?;
    let trace = free_simulate(&pred, &warm, &x_te)?;
    let mean = trace.output_mean();
    let denorm = ds.normalization.as_ref().map(|n| n.output);
    let metrics = SimMetrics {
        rmse_normalized: rmse(&mean, &y_te, None)?,
        rmse_original: rmse(&mean, &y_te, denorm.as_ref())?,
        steps: trace.len(),
        clamp_rate: trace.clamp_rate(),
        warm_start: "training_tail",
        normalization: ds.normalization.as_ref().map(|n| n.mode),
    };
    log::info!(
        "simulated {} steps: rmse {:.6} (normalized), {:.6} (original)",
        metrics.steps,
        metrics.rmse_normalized,
        metrics.rmse_original
    );
    let y_orig = match &denorm {
        Some(a) => y_te.map(|v| a.invert(v)),
        None => y_te.clone(),
    };
    let out = &cfg.out;
    write_config(out, cfg)?;
    write_atomic(
        &out.join("simulation.csv"),
        &trace.to_csv(Some(&y_orig), denorm.as_ref())?,
    )?;
    write_atomic(&out.join("metrics.json"), &json(&metrics)?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Battery {
    Psi,
    Moments,
    All,
}

#[derive(Serialize)]
struct StatsRun<'a> {
    version: &'a str,
    seed: u64,
    instances: usize,
    samples: usize,
    perturbed_psi1: bool,
    psi: Option<drgp_core::validate::PsiReport>,
    moments: Option<drgp_core::validate::MomentReport>,
    passed: bool,
}

/// Returns whether every battery passed.
pub fn validate_stats(
    seed: u64,
    instances: usize,
    samples: usize,
    battery: Battery,
    perturb_psi1: bool,
    out: &Path,
) -> Result<bool> {
    if instances == 0 {
        bail!("--instances must be at least 1");
    }
    let psi = matches!(battery, Battery::Psi | Battery::All)
        .then(|| {
            if perturb_psi1 {
                psi_battery(&UndampedPsi1, seed, instances, samples)
            } else {
                psi_battery(&Exact, seed, instances, samples)
            }
        })
        .transpose()?;
    let moments = matches!(battery, Battery::Moments | Battery::All)
        .then(|| moment_battery(seed, instances, samples))
        .transpose()?;
    if let Some(r) = &psi {
        for (k, z) in &r.max_abs_z {
            log::info!("{k}: max |z| = {z:.3}");
        }
    }
    if let Some(r) = &moments {
        log::info!("predictive moments: max |z| = {:.3}", r.max_abs_z);
    }
    let passed = psi.as_ref().is_none_or(|r| r.passed) && moments.as_ref().is_none_or(|r| r.passed);
    let run = StatsRun {
        version: crate::VERSION,
        seed,
        instances,
        samples,
        perturbed_psi1: perturb_psi1,
        psi,
        moments,
        passed,
    };
    write_atomic(&out.join("report.json"), &json(&run)?)?;
    Ok(passed)
}

#[derive(Serialize)]
struct BenchConfig<'a> {
    version: &'a str,
    workers: &'a [usize],
    n_hat: &'a [usize],
    features: usize,
    horizon: usize,
    shards: usize,
    repeats: usize,
    seed: u64,
    /// Cholesky factorizations in one finish phase of the benchmarked SS model.
    finish_factorizations: usize,
    factorization_accounting: &'a str,
}

#[allow(clippy::too_many_arguments)]
pub fn bench(
    workers: &[usize],
    n_hats: &[usize],
    features: usize,
    horizon: usize,
    shards: usize,
    repeats: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let mut rows = Vec::new();
    for &n_hat in n_hats {
        let n = (n_hat + horizon).max(20);
        let ds = dataset::make_toy(ToyKind::SineDrive, n, seed)?;
        let init = InitOptions {
            num_features: features,
            ..Default::default()
        };
        let model = init_model(
            &ds.y,
            &ds.x,
            WindowConfig::new(horizon, horizon, 1)?,
            Variant::Ss,
            &init,
            seed,
        )?;
        for &w in workers {
            let t = time_phases(&model, &ds.y, &ds.x, w, shards.max(w), repeats)?;
            log::info!(
                "workers {w}, n_hat {}: shard {:.3} ms, finish {:.3} ms",
                t.n_hat,
                t.shard_ms,
                t.finish_ms
            );
            rows.push(t);
        }
    }
    let cfg = BenchConfig {
        version: crate::VERSION,
        workers,
        n_hat: n_hats,
        features,
        horizon,
        shards,
        repeats,
        seed,
        // Two layers (one hidden), one factorization each.
        finish_factorizations: 2,
        factorization_accounting:
            "one Cholesky of A = Ψ₂ + σ²I per layer serves both the solve and the \
                                   log-determinant; IP variants add one Cholesky of K_MM per layer",
    };
    write_atomic(&out.join("config.json"), &json(&cfg)?)?;
    write_atomic(&out.join("bench.csv"), &csv_bytes(&rows)?)?;
    Ok(())
}

pub fn make_toy(kind: &str, n: usize, seed: u64, noise_sd: Option<f64>, out: &Path) -> Result<()> {
    let kind: ToyKind = kind.parse()?;
    let ds =
        dataset::make_toy_with_noise(kind, n, seed, noise_sd.unwrap_or(kind.default_noise_sd()))?;
    let bytes = ds.to_csv()?;
    write_atomic(out, &bytes)?;
    let manifest = dataset::manifest(&ds, &bytes);
    write_atomic(&out.with_extension("manifest.json"), &json(&manifest)?)?;
    log::info!("wrote {} rows to {}", ds.len(), out.display());
    Ok(())
}
