//! Run configuration: TOML file, then command-line overrides, then validation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use drgp_core::dataset::{self, Dataset, NormMode, Schema, ToyKind};
use drgp_core::model::Variant;
use drgp_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    None,
    StdDev,
    Variance,
}

/// Where the series comes from and how it is split and scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    /// CSV file with a header row. Mutually exclusive with `toy`.
    pub path: Option<PathBuf>,
    pub inputs: Vec<String>,
    pub output: Option<String>,
    pub toy: Option<ToyKind>,
    /// Length of a toy series.
    pub n: usize,
    pub noise_sd: Option<f64>,
    /// Seed of a toy series; the run seed when absent.
    pub data_seed: Option<u64>,
    /// Keep every k-th row, starting with the first.
    pub downsample: usize,
    /// Named benchmark whose row counts and split are enforced.
    pub benchmark: Option<String>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub normalize: Norm,
    /// Centre constant columns instead of rejecting them.
    pub allow_constant: bool,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            path: None,
            inputs: Vec::new(),
            output: None,
            toy: None,
            n: 200,
            noise_sd: None,
            data_seed: None,
            downsample: 1,
            benchmark: None,
            n_train: None,
            n_test: None,
            normalize: Norm::StdDev,
            allow_constant: false,
        }
    }
}

impl DataSpec {
    /// Loads, downsamples, splits and normalizes the series.
    pub fn load(&self, run_seed: u64) -> Result<Dataset> {
        let raw = match (&self.path, self.toy) {
            (Some(_), Some(_)) => bail!("data: set either `path` or `toy`, not both"),
            (None, None) => bail!("data: set `path` (CSV file) or `toy`"),
            (None, Some(kind)) => {
                let seed = self.data_seed.unwrap_or(run_seed);
                let noise = self.noise_sd.unwrap_or(kind.default_noise_sd());
                dataset::make_toy_with_noise(kind, self.n, seed, noise)?
            }
            (Some(path), None) => {
                let output = self
                    .output
                    .clone()
                    .context("data: `output` column name is required")?;
                if self.inputs.is_empty() {
                    bail!("data: `inputs` must list at least one column");
                }
                let schema = Schema {
                    inputs: self.inputs.clone(),
                    output,
                };
                dataset::load_csv(path, &schema)
                    .with_context(|| format!("loading {}", path.display()))?
            }
        };
        let ds = if self.downsample != 1 {
            dataset::downsample(&raw, self.downsample)?
        } else {
            raw
        };
        let n = ds.len();
        let ds = match (&self.benchmark, self.n_train) {
            (Some(_), Some(_)) => bail!("data: `benchmark` fixes the split; drop `n_train`"),
            (Some(name), None) => {
                let b = dataset::benchmark(name)
                    .with_context(|| format!("unknown benchmark '{name}'"))?;
                ds.with_benchmark_split(&b)?
            }
            (None, Some(tr)) => {
                let te = self.n_test.unwrap_or(n.saturating_sub(tr));
                ds.with_split(tr, te)?
            }
            (None, None) => ds,
        };
        Ok(match self.normalize {
            Norm::None => ds,
            Norm::StdDev => dataset::normalize(&ds, NormMode::StdDev, self.allow_constant)?,
            Norm::Variance => dataset::normalize(&ds, NormMode::Variance, self.allow_constant)?,
        })
    }
}

/// Everything needed to reproduce a run. Written as `config.json` next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSpec,
    pub train: TrainConfig,
    /// Model JSON read by `simulate`.
    pub model: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            subcommand: String::new(),
            version: crate::VERSION.to_string(),
            seed: 0,
            out: PathBuf::from("runs/latest"),
            data: DataSpec::default(),
            train: TrainConfig::default(),
            model: None,
            workers: None,
        }
    }
}

/// Overrides shared by `train` and `simulate`.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct RunArgs {
    /// TOML run configuration (or a previous run's config.json); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV file with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Input column names (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub inputs: Option<Vec<String>>,
    #[arg(long)]
    pub output: Option<String>,
    /// Synthetic series instead of a file: linear_narx, sine_drive or identity.
    #[arg(long)]
    pub toy: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub benchmark: Option<String>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub downsample: Option<usize>,
    #[arg(long, value_enum)]
    pub normalize: Option<Norm>,
    #[arg(long)]
    pub allow_constant: bool,
    /// ss, vss, ss-ip1, vss-ip1, ss-ip2 or vss-ip2.
    #[arg(long)]
    pub variant: Option<String>,
    /// Number of hidden layers L.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Spectral points M per layer.
    #[arg(long)]
    pub features: Option<usize>,
    /// Sets both lag windows H_x and H_h.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub stage1_iters: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Model JSON (simulate only).
    #[arg(long)]
    pub model: Option<PathBuf>,
}

/// TOML, or the JSON `config.json` a previous run wrote.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl RunArgs {
    /// File values, then flags. The seed is copied into the training configuration.
    pub fn resolve(&self, subcommand: &str) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => read_config(p)?,
            None => RunConfig::default(),
        };
        c.subcommand = subcommand.to_string();
        c.version = crate::VERSION.to_string();
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(c.out, self.out);
        set!(c.seed, self.seed);
        let d = &mut c.data;
        if self.data.is_some() {
            d.path = self.data.clone();
            d.toy = None;
        }
        if let Some(t) = &self.toy {
            d.toy = Some(t.parse()?);
            d.path = None;
        }
        set!(d.inputs, self.inputs);
        if self.output.is_some() {
            d.output = self.output.clone();
        }
        set!(d.n, self.n);
        if self.noise_sd.is_some() {
            d.noise_sd = self.noise_sd;
        }
        if self.benchmark.is_some() {
            d.benchmark = self.benchmark.clone();
        }
        if self.n_train.is_some() {
            d.n_train = self.n_train;
        }
        if self.n_test.is_some() {
            d.n_test = self.n_test;
        }
        set!(d.downsample, self.downsample);
        set!(d.normalize, self.normalize);
        d.allow_constant |= self.allow_constant;
        let t = &mut c.train;
        if let Some(v) = &self.variant {
            t.variant = v.parse::<Variant>()?;
        }
        set!(t.window.hidden_layers, self.layers);
        set!(t.init.num_features, self.features);
        if let Some(h) = self.horizon {
            t.window.h_x = h;
            t.window.h_h = h;
        }
        set!(t.restarts, self.restarts);
        set!(t.max_iters, self.max_iters);
        set!(t.stage1_iters, self.stage1_iters);
        set!(t.checkpoint_every, self.checkpoint_every);
        if self.model.is_some() {
            c.model = self.model.clone();
        }
        if c.data.downsample == 0 {
            bail!("data.downsample must be at least 1");
        }
        c.train.seed = c.seed;
        c.train.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(
            &p,
            "seed = 3\n[data]\ntoy = \"sine_drive\"\nn = 80\n[train]\nmax_iters = 7\nstage1_iters = 2\n",
        )
        .unwrap();
        let args = RunArgs {
            config: Some(p),
            seed: Some(9),
            features: Some(6),
            ..Default::default()
        };
        let c = args.resolve("train").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.train.max_iters, 7);
        assert_eq!(c.train.init.num_features, 6);
        assert_eq!(c.data.toy, Some(ToyKind::SineDrive));
        assert_eq!(c.data.n, 80);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "sed = 3\n").unwrap();
        let args = RunArgs {
            config: Some(p),
            ..Default::default()
        };
        assert!(args.resolve("train").is_err());
    }

    #[test]
    fn large_drive_like_configuration_is_accepted() {
        let args = RunArgs {
            layers: Some(2),
            features: Some(100),
            horizon: Some(10),
            ..Default::default()
        };
        let c = args.resolve("train").unwrap();
        assert_eq!(
            (
                c.train.window.hidden_layers,
                c.train.init.num_features,
                c.train.window.h_x
            ),
            (2, 100, 10)
        );
    }

    #[test]
    fn toy_split_defaults_to_remaining_rows() {
        let spec = DataSpec {
            toy: Some(ToyKind::LinearNarx),
            n: 50,
            n_train: Some(30),
            ..Default::default()
        };
        let ds = spec.load(1).unwrap();
        assert_eq!((ds.n_train, ds.n_test), (30, 20));
        assert!(ds.normalization.is_some());
    }
}
