//! Closed-form expectations of the feature map under Gaussian inputs and spectral points.
//!
//! Ψ₀ = N̂σ², Ψ₁ = E[Φ], Ψ₂ = E[ΦᵀΦ] and Ψ_reg = E[K_MN K_NM]. Every statistic is built from
//! the one-dimensional moment in [`trig`].

pub(crate) mod engine;
pub mod oracle;
pub mod trig;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use engine::ParamGrad;
pub(crate) use engine::{Feat, FeatGrad};
pub use oracle::{mc_oracle, McEstimate, Statistic};

use crate::error::{Error, Result};
use crate::kernel::{KernelParams, SpectralBasis};
use crate::serde_mat;

/// Input means and diagonal variances, one row per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianInputs {
    #[serde(with = "serde_mat::matrix")]
    pub mean: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub var: DMatrix<f64>,
}

impl GaussianInputs {
    pub fn deterministic(mean: DMatrix<f64>) -> Self {
        let var = DMatrix::zeros(mean.nrows(), mean.ncols());
        Self { mean, var }
    }

    pub fn len(&self) -> usize {
        self.mean.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.mean.ncols()
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        if self.mean.ncols() != q {
            return Err(Error::dim("input mean columns", q, self.mean.ncols()));
        }
        if self.var.shape() != self.mean.shape() {
            return Err(Error::dim(
                "input variance rows",
                self.mean.nrows(),
                self.var.nrows(),
            ));
        }
        if let Some(v) = self.var.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::param(
                "input variance",
                format!("must be >= 0, got {v}"),
            ));
        }
        Ok(())
    }

    pub(crate) fn rows(&self) -> (Vec<f64>, Vec<f64>) {
        let q = self.dim();
        let n = self.len();
        let mut mu = Vec::with_capacity(n * q);
        let mut lam = Vec::with_capacity(n * q);
        for i in 0..n {
            mu.extend(self.mean.row(i).iter());
            lam.extend(self.var.row(i).iter());
        }
        (mu, lam)
    }
}

/// Variational posterior over spectral points, z_m ~ N(mean_m, diag(var_m)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpectral {
    #[serde(with = "serde_mat::matrix")]
    pub mean: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub var: DMatrix<f64>,
}

impl GaussianSpectral {
    pub fn validate(&self, m: usize, q: usize) -> Result<()> {
        if self.mean.shape() != (m, q) {
            return Err(Error::dim("spectral mean rows", m, self.mean.nrows()));
        }
        if self.var.shape() != (m, q) {
            return Err(Error::dim("spectral variance rows", m, self.var.nrows()));
        }
        if let Some(v) = self.var.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::param(
                "spectral variance",
                format!("must be > 0, got {v}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiStats {
    pub psi0: f64,
    pub psi1: DMatrix<f64>,
    pub psi2: DMatrix<f64>,
    pub psi_reg: Option<DMatrix<f64>>,
}

pub fn psi0(n_points: usize, params: &KernelParams) -> f64 {
    n_points as f64 * params.signal_variance
}

fn check(
    inputs: &GaussianInputs,
    basis: &SpectralBasis,
    spectral: Option<&GaussianSpectral>,
    params: &KernelParams,
) -> Result<()> {
    let q = params.dim();
    params.validate()?;
    basis.validate(q)?;
    inputs.validate(q)?;
    if let Some(s) = spectral {
        s.validate(basis.num_features(), q)?;
    }
    Ok(())
}

fn psi1_impl(inputs: &GaussianInputs, feat: &Feat) -> DMatrix<f64> {
    let (mu, lam) = inputs.rows();
    let (n, q, m) = (inputs.len(), feat.q, feat.m);
    let mut row = vec![0.0; m];
    let mut out = DMatrix::zeros(n, m);
    for i in 0..n {
        feat.psi1_row(&mu[i * q..(i + 1) * q], &lam[i * q..(i + 1) * q], &mut row);
        for j in 0..m {
            out[(i, j)] = row[j];
        }
    }
    out
}

fn psi2_impl(inputs: &GaussianInputs, feat: &Feat) -> DMatrix<f64> {
    let (mu, lam) = inputs.rows();
    let (q, m) = (feat.q, feat.m);
    let mut acc = vec![0.0; m * m];
    for i in 0..inputs.len() {
        feat.psi2_add(&mu[i * q..(i + 1) * q], &lam[i * q..(i + 1) * q], &mut acc);
    }
    DMatrix::from_row_slice(m, m, &acc)
}

fn reg_impl(inputs: &GaussianInputs, feat: &Feat) -> DMatrix<f64> {
    let (mu, lam) = inputs.rows();
    let (q, m) = (feat.q, feat.m);
    let mut acc = vec![0.0; m * m];
    for i in 0..inputs.len() {
        feat.reg_add(&mu[i * q..(i + 1) * q], &lam[i * q..(i + 1) * q], &mut acc);
    }
    DMatrix::from_row_slice(m, m, &acc)
}

pub fn psi1_ss(
    inputs: &GaussianInputs,
    basis: &SpectralBasis,
    params: &KernelParams,
) -> Result<DMatrix<f64>> {
    check(inputs, basis, None, params)?;
    Ok(psi1_impl(inputs, &Feat::new(basis, None, params)))
}

pub fn psi2_ss(
    inputs: &GaussianInputs,
    basis: &SpectralBasis,
    params: &KernelParams,
) -> Result<DMatrix<f64>> {
    check(inputs, basis, None, params)?;
    Ok(psi2_impl(inputs, &Feat::new(basis, None, params)))
}

pub fn psi1_vss(
    inputs: &GaussianInputs,
    spectral: &GaussianSpectral,
    basis: &SpectralBasis,
    params: &KernelParams,
) -> Result<DMatrix<f64>> {
    check(inputs, basis, Some(spectral), params)?;
    Ok(psi1_impl(inputs, &Feat::new(basis, Some(spectral), params)))
}

pub fn psi2_vss(
    inputs: &GaussianInputs,
    spectral: &GaussianSpectral,
    basis: &SpectralBasis,
    params: &KernelParams,
) -> Result<DMatrix<f64>> {
    check(inputs, basis, Some(spectral), params)?;
    Ok(psi2_impl(inputs, &Feat::new(basis, Some(spectral), params)))
}

/// E[K_MN K_NM] for the kernel's SE/SM cross-covariance with pseudo-inputs U.
pub fn psi_reg(
    inputs: &GaussianInputs,
    basis: &SpectralBasis,
    params: &KernelParams,
) -> Result<DMatrix<f64>> {
    check(inputs, basis, None, params)?;
    Ok(reg_impl(inputs, &Feat::new(basis, None, params)))
}

/// All statistics in one call. `spectral = None` selects SS mode.
pub fn compute_stats(
    inputs: &GaussianInputs,
    basis: &SpectralBasis,
    spectral: Option<&GaussianSpectral>,
    params: &KernelParams,
    with_reg: bool,
) -> Result<PsiStats> {
    check(inputs, basis, spectral, params)?;
    let feat = Feat::new(basis, spectral, params);
    Ok(PsiStats {
        psi0: psi0(inputs.len(), params),
        psi1: psi1_impl(inputs, &feat),
        psi2: psi2_impl(inputs, &feat),
        psi_reg: with_reg.then(|| reg_impl(inputs, &feat)),
    })
}
