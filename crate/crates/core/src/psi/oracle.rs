//! Monte Carlo estimates of Ψ₁, Ψ₂ and Ψ_reg for validating the closed forms.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::str::FromStr;

use super::{GaussianInputs, GaussianSpectral};
use crate::error::{Error, Result};
use crate::exec::{chunks, map_range};
use crate::kernel::{KernelParams, SpectralBasis};

const CHUNK: usize = 8192;
pub const MIN_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Psi1,
    Psi2,
    PsiReg,
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psi1" => Ok(Statistic::Psi1),
            "psi2" => Ok(Statistic::Psi2),
            "psi_reg" => Ok(Statistic::PsiReg),
            other => Err(Error::Unsupported(format!(
                "unsupported statistic '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct McEstimate {
    pub estimate: DMatrix<f64>,
    pub std_error: DMatrix<f64>,
    pub samples: usize,
}

impl McEstimate {
    /// Entrywise (closed − estimate)/SE. Entries with zero SE and exact agreement give 0.
    pub fn z_scores(&self, closed: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(closed.nrows(), closed.ncols(), |i, j| {
            let diff = closed[(i, j)] - self.estimate[(i, j)];
            let se = self.std_error[(i, j)];
            if se > 0.0 {
                diff / se
            } else if diff.abs() <= 1e-12 * closed[(i, j)].abs().max(1.0) {
                0.0
            } else {
                f64::INFINITY
            }
        })
    }
}

/// Unbiased MC estimate of one statistic with per-entry standard errors.
/// Draws h_n ~ N(mean_n, var_n) and, when `spectral` is given, z_m ~ N(α_m, β_m).
/// Sample chunks use independent ChaCha streams of `seed`, so the result is thread-count independent.
pub fn mc_oracle(
    inputs: &GaussianInputs,
    spectral: Option<&GaussianSpectral>,
    basis: &SpectralBasis,
    params: &KernelParams,
    which: Statistic,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if samples < MIN_SAMPLES {
        return Err(Error::param(
            "samples",
            format!("need at least {MIN_SAMPLES}, got {samples}"),
        ));
    }
    let q = params.dim();
    params.validate()?;
    basis.validate(q)?;
    inputs.validate(q)?;
    if let Some(s) = spectral {
        s.validate(basis.num_features(), q)?;
    }
    let (n, m) = (inputs.len(), basis.num_features());
    let shape = match which {
        Statistic::Psi1 => (n, m),
        Statistic::Psi2 | Statistic::PsiReg => (m, m),
    };
    let len = shape.0 * shape.1;
    let omega = params.omegas();
    let pref = (2.0 * params.signal_variance / m as f64).sqrt();

    let parts = chunks(samples, CHUNK);
    let sums = map_range(parts.len(), |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let mut mean = vec![0.0; len];
        let mut m2 = vec![0.0; len];
        let mut count = 0.0;
        let mut h = vec![0.0; n * q];
        let mut zh = vec![0.0; m * q];
        let mut val = vec![0.0; n * m];
        let mut sample = vec![0.0; len];
        for _ in parts[c].clone() {
            for i in 0..n {
                for d in 0..q {
                    let e: f64 = rng.sample(StandardNormal);
                    h[i * q + d] = inputs.mean[(i, d)] + inputs.var[(i, d)].sqrt() * e;
                }
            }
            if which != Statistic::PsiReg {
                for j in 0..m {
                    for d in 0..q {
                        let z = match spectral {
                            Some(s) => {
                                let e: f64 = rng.sample(StandardNormal);
                                s.mean[(j, d)] + s.var[(j, d)].sqrt() * e
                            }
                            None => basis.z[(j, d)],
                        };
                        zh[j * q + d] = z / params.length_scales[d] + omega[d];
                    }
                }
            }
            for i in 0..n {
                for j in 0..m {
                    val[i * m + j] = match which {
                        Statistic::PsiReg => {
                            let mut sq = 0.0;
                            let mut arg = 0.0;
                            for d in 0..q {
                                let tau = h[i * q + d] - basis.u[(j, d)];
                                sq += tau * tau / (2.0 * params.length_scales[d].powi(2));
                                arg += omega[d] * tau;
                            }
                            params.signal_variance * (-sq).exp() * arg.cos()
                        }
                        _ => {
                            let mut arg = basis.phases[j];
                            for d in 0..q {
                                arg += zh[j * q + d] * (h[i * q + d] - basis.u[(j, d)]);
                            }
                            pref * arg.cos()
                        }
                    };
                }
            }
            match which {
                Statistic::Psi1 => sample.copy_from_slice(&val),
                _ => {
                    sample.fill(0.0);
                    for i in 0..n {
                        let r = &val[i * m..(i + 1) * m];
                        for j in 0..m {
                            for jp in 0..m {
                                sample[j * m + jp] += r[j] * r[jp];
                            }
                        }
                    }
                }
            }
            count += 1.0;
            for k in 0..len {
                let delta = sample[k] - mean[k];
                mean[k] += delta / count;
                m2[k] += delta * (sample[k] - mean[k]);
            }
        }
        (count, mean, m2)
    });

    // Chan et al. pairwise merge of per-chunk Welford accumulators, in chunk order.
    let mut count = 0.0;
    let mut mean = vec![0.0; len];
    let mut m2 = vec![0.0; len];
    for (cb, mb, qb) in &sums {
        let total = count + cb;
        for k in 0..len {
            let delta = mb[k] - mean[k];
            mean[k] += delta * cb / total;
            m2[k] += qb[k] + delta * delta * count * cb / total;
        }
        count = total;
    }
    let se: Vec<f64> = m2
        .iter()
        .map(|q| (q / (count - 1.0) / count).max(0.0).sqrt())
        .collect();
    Ok(McEstimate {
        estimate: DMatrix::from_row_slice(shape.0, shape.1, &mean),
        std_error: DMatrix::from_row_slice(shape.0, shape.1, &se),
        samples,
    })
}
