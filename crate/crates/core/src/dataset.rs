//! Time-series datasets: CSV loading, train-split normalization, downsampling and synthetic
//! toy systems.

use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Row counts of a named benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Benchmark {
    pub name: &'static str,
    pub n: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub inputs: usize,
}

pub const BENCHMARKS: [Benchmark; 7] = [
    Benchmark {
        name: "drive",
        n: 500,
        n_train: 250,
        n_test: 250,
        inputs: 1,
    },
    Benchmark {
        name: "dryer",
        n: 1000,
        n_train: 500,
        n_test: 500,
        inputs: 1,
    },
    Benchmark {
        name: "ballbeam",
        n: 1000,
        n_train: 500,
        n_test: 500,
        inputs: 1,
    },
    Benchmark {
        name: "actuator",
        n: 1024,
        n_train: 512,
        n_test: 512,
        inputs: 2,
    },
    Benchmark {
        name: "damper",
        n: 3499,
        n_train: 2000,
        n_test: 1499,
        inputs: 1,
    },
    Benchmark {
        name: "power_load",
        n: 9518,
        n_train: 7139,
        n_test: 2379,
        inputs: 11,
    },
    Benchmark {
        name: "emission",
        n: 12500,
        n_train: 10000,
        n_test: 2500,
        inputs: 6,
    },
];

pub fn benchmark(name: &str) -> Option<Benchmark> {
    let key = name.to_ascii_lowercase().replace([' ', '-'], "_");
    BENCHMARKS.iter().copied().find(|b| b.name == key)
}

/// Column roles: which header names are inputs and which one is the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub inputs: Vec<String>,
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// (x − μ)/σ.
    StdDev,
    /// (x − μ)/σ², the literal form some protocols use.
    Variance,
}

/// x_norm = (x − mean)/scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub mean: f64,
    pub scale: f64,
}

impl Affine {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.scale + self.mean
    }

    pub fn invert_variance(&self, v: f64) -> f64 {
        v * self.scale * self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mode: NormMode,
    pub inputs: Vec<Affine>,
    pub output: Affine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub input_names: Vec<String>,
    pub output_name: String,
    #[serde(with = "crate::serde_mat::matrix")]
    pub x: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::vector")]
    pub y: DVector<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::dim("dataset input rows", y.len(), x.nrows()));
        }
        let n = y.len();
        Ok(Self {
            name: name.into(),
            input_names: (0..x.ncols()).map(|j| format!("x{j}")).collect(),
            output_name: "y".into(),
            x,
            y,
            n_train: n,
            n_test: 0,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn with_split(mut self, n_train: usize, n_test: usize) -> Result<Self> {
        if n_train + n_test > self.len() {
            return Err(Error::Config(format!(
                "split {n_train}+{n_test} exceeds {} rows",
                self.len()
            )));
        }
        if n_train == 0 {
            return Err(Error::Config("training split is empty".into()));
        }
        self.n_train = n_train;
        self.n_test = n_test;
        Ok(self)
    }

    /// Applies the split of a named benchmark, checking the row and input counts.
    pub fn with_benchmark_split(self, b: &Benchmark) -> Result<Self> {
        if self.len() != b.n {
            return Err(Error::Config(format!(
                "{} expects {} rows, file has {}",
                b.name,
                b.n,
                self.len()
            )));
        }
        if self.input_dim() != b.inputs {
            return Err(Error::dim("benchmark inputs", b.inputs, self.input_dim()));
        }
        self.with_split(b.n_train, b.n_test)
    }

    pub fn train(&self) -> (DVector<f64>, DMatrix<f64>) {
        self.rows(0, self.n_train)
    }

    pub fn test(&self) -> (DVector<f64>, DMatrix<f64>) {
        self.rows(self.n_train, self.n_test)
    }

    fn rows(&self, start: usize, len: usize) -> (DVector<f64>, DMatrix<f64>) {
        (
            self.y.rows(start, len).into_owned(),
            self.x.rows(start, len).into_owned(),
        )
    }

    /// Writes the dataset as CSV: input columns, then the output column.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.input_names.clone();
        header.push(self.output_name.clone());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{:?}", self.y[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Reads a headed CSV. Rows keep their file order; cells must parse as finite numbers.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column '{name}' not in header {header:?}")))
    };
    let in_cols = schema
        .inputs
        .iter()
        .map(|n| col(n))
        .collect::<Result<Vec<_>>>()?;
    let out_col = col(&schema.output)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = |c: usize| -> Result<f64> {
            let s = rec.get(c).ok_or_else(|| Error::Data {
                row: r + 1,
                col: c + 1,
                reason: "missing cell".into(),
            })?;
            let v: f64 = s.parse().map_err(|_| Error::Data {
                row: r + 1,
                col: c + 1,
                reason: format!("not a number: '{s}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    row: r + 1,
                    col: c + 1,
                    reason: format!("non-finite value {v}"),
                });
            }
            Ok(v)
        };
        for &c in &in_cols {
            xs.push(cell(c)?);
        }
        ys.push(cell(out_col)?);
    }
    let n = ys.len();
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    let mut ds = Dataset::new(
        name,
        DMatrix::from_row_slice(n, in_cols.len(), &xs),
        DVector::from_vec(ys),
    )?;
    ds.input_names = schema.inputs.clone();
    ds.output_name = schema.output.clone();
    Ok(ds)
}

fn column_affine(
    v: impl Iterator<Item = f64> + Clone,
    mode: NormMode,
    allow_constant: bool,
    what: &str,
) -> Result<Affine> {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let sd = var.sqrt();
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        if allow_constant {
            return Ok(Affine { mean, scale: 1.0 });
        }
        return Err(Error::param(what, "zero variance on the training split"));
    }
    let scale = match mode {
        NormMode::StdDev => sd,
        NormMode::Variance => var,
    };
    Ok(Affine { mean, scale })
}

/// Normalizes every column with statistics of the training split only. Constant columns are
/// an error unless `allow_constant`, in which case they are only centred.
pub fn normalize(ds: &Dataset, mode: NormMode, allow_constant: bool) -> Result<Dataset> {
    if ds.normalization.is_some() {
        return Err(Error::Config("dataset is already normalized".into()));
    }
    let nt = ds.n_train;
    let inputs = (0..ds.input_dim())
        .map(|j| {
            column_affine(
                ds.x.column(j).rows(0, nt).iter().copied(),
                mode,
                allow_constant,
                &ds.input_names[j],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let output = column_affine(
        ds.y.rows(0, nt).iter().copied(),
        mode,
        allow_constant,
        &ds.output_name,
    )?;
    let mut out = ds.clone();
    for (j, a) in inputs.iter().enumerate() {
        out.x.column_mut(j).apply(|v| *v = a.apply(*v));
    }
    out.y.apply(|v| *v = output.apply(*v));
    out.normalization = Some(Normalization {
        mode,
        inputs,
        output,
    });
    Ok(out)
}

pub fn denormalize(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    if let Some(n) = out.normalization.take() {
        for (j, a) in n.inputs.iter().enumerate() {
            out.x.column_mut(j).apply(|v| *v = a.invert(*v));
        }
        out.y.apply(|v| *v = n.output.invert(*v));
    }
    out
}

/// Keeps rows 0, stride, 2·stride, …; the split is reset to all-training.
pub fn downsample(ds: &Dataset, stride: usize) -> Result<Dataset> {
    if stride < 1 {
        return Err(Error::param("stride", "must be at least 1"));
    }
    let keep: Vec<usize> = (0..ds.len()).step_by(stride).collect();
    let mut out = ds.clone();
    out.x = ds.x.select_rows(&keep);
    out.y = ds.y.select_rows(&keep);
    out.n_train = keep.len();
    out.n_test = 0;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    /// x ~ N(0, 1) i.i.d., y_i = 0.8 y_{i−1} + x_{i−1} + ε_i, y_0 = 0.
    LinearNarx,
    /// x_i = sin(2πi/20) + 0.5 sin(2πi/8), y_i = 0.5 y_{i−1} + tanh(x_{i−1}) + ε_i, y_0 = 0.
    SineDrive,
    /// x_i = 0, y_i = y_{i−1}, y_0 = 1 (noise-free).
    Identity,
}

impl ToyKind {
    pub fn default_noise_sd(self) -> f64 {
        match self {
            ToyKind::LinearNarx => 0.05,
            ToyKind::SineDrive => 0.02,
            ToyKind::Identity => 0.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ToyKind::LinearNarx => "linear_narx",
            ToyKind::SineDrive => "sine_drive",
            ToyKind::Identity => "identity",
        }
    }
}

impl FromStr for ToyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_narx" => Ok(ToyKind::LinearNarx),
            "sine_drive" => Ok(ToyKind::SineDrive),
            "identity" => Ok(ToyKind::Identity),
            other => Err(Error::Unsupported(format!("unknown toy system '{other}'"))),
        }
    }
}

/// Synthetic series with the kind's default noise level.
pub fn make_toy(kind: ToyKind, n: usize, seed: u64) -> Result<Dataset> {
    make_toy_with_noise(kind, n, seed, kind.default_noise_sd())
}

/// ε_i ~ N(0, noise_sd²); all draws come from one ChaCha8 stream seeded with `seed`.
pub fn make_toy_with_noise(kind: ToyKind, n: usize, seed: u64, noise_sd: f64) -> Result<Dataset> {
    if n < 20 {
        return Err(Error::param(
            "n",
            format!("toy series need at least 20 points, got {n}"),
        ));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::param("noise_sd", "must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let tau = std::f64::consts::TAU;
    let x: Vec<f64> = match kind {
        ToyKind::LinearNarx => (0..n).map(|_| std.sample(&mut rng)).collect(),
        ToyKind::SineDrive => (0..n)
            .map(|i| (tau * i as f64 / 20.0).sin() + 0.5 * (tau * i as f64 / 8.0).sin())
            .collect(),
        ToyKind::Identity => vec![0.0; n],
    };
    let mut y = vec![0.0; n];
    if kind == ToyKind::Identity {
        y[0] = 1.0;
    }
    for i in 1..n {
        let e = noise_sd * std.sample(&mut rng);
        y[i] = match kind {
            ToyKind::LinearNarx => 0.8 * y[i - 1] + x[i - 1] + e,
            ToyKind::SineDrive => 0.5 * y[i - 1] + x[i - 1].tanh() + e,
            ToyKind::Identity => y[i - 1] + e,
        };
    }
    let mut ds = Dataset::new(
        kind.name(),
        DMatrix::from_vec(n, 1, x),
        DVector::from_vec(y),
    )?;
    ds.input_names = vec!["u".into()];
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub rows: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub inputs: Vec<String>,
    pub output: String,
    pub sha256: String,
}

/// Manifest of `ds` with the SHA-256 of its file bytes.
pub fn manifest(ds: &Dataset, file_bytes: &[u8]) -> Manifest {
    let digest = Sha256::digest(file_bytes);
    Manifest {
        name: ds.name.clone(),
        rows: ds.len(),
        n_train: ds.n_train,
        n_test: ds.n_test,
        inputs: ds.input_names.clone(),
        output: ds.output_name.clone(),
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
    }
}
