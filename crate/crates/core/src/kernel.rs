//! Spectral-mixture covariance and its random cosine feature approximation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::serde_mat;

/// Period scale of one input dimension. `Infinite` is the squared-exponential limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Infinite,
    Finite(f64),
}

impl Period {
    /// Angular frequency 2π/p, exactly zero for an infinite period.
    pub fn omega(self) -> f64 {
        match self {
            Period::Infinite => 0.0,
            Period::Finite(p) => 2.0 * PI / p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub length_scales: Vec<f64>,
    pub periods: Vec<Period>,
    pub noise_variance: f64,
}

impl KernelParams {
    /// SE kernel (all periods infinite) on `q` dimensions.
    pub fn se(signal_variance: f64, length_scales: Vec<f64>, noise_variance: f64) -> Self {
        let q = length_scales.len();
        Self {
            signal_variance,
            length_scales,
            periods: vec![Period::Infinite; q],
            noise_variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.periods.iter().map(|p| p.omega()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.periods.len() != self.length_scales.len() {
            return Err(Error::dim(
                "kernel periods",
                self.length_scales.len(),
                self.periods.len(),
            ));
        }
        positive("signal_variance", self.signal_variance)?;
        positive("noise_variance", self.noise_variance)?;
        for (q, &l) in self.length_scales.iter().enumerate() {
            positive(&format!("length_scales[{q}]"), l)?;
        }
        for (q, p) in self.periods.iter().enumerate() {
            if let Period::Finite(v) = p {
                positive(&format!("periods[{q}]"), *v)?;
            }
        }
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(
            name,
            format!("must be finite and > 0, got {v}"),
        ))
    }
}

/// Spectral points, pseudo-inputs and phases defining the feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBasis {
    #[serde(with = "serde_mat::matrix")]
    pub z: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub u: DMatrix<f64>,
    #[serde(with = "serde_mat::vector")]
    pub phases: DVector<f64>,
}

impl SpectralBasis {
    pub fn num_features(&self) -> usize {
        self.z.nrows()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        let m = self.z.nrows();
        if self.u.nrows() != m {
            return Err(Error::dim("basis U rows", m, self.u.nrows()));
        }
        if self.phases.len() != m {
            return Err(Error::dim("basis phases", m, self.phases.len()));
        }
        if self.z.ncols() != q {
            return Err(Error::dim("basis Z columns", q, self.z.ncols()));
        }
        if self.u.ncols() != q {
            return Err(Error::dim("basis U columns", q, self.u.ncols()));
        }
        Ok(())
    }
}

pub fn sm_covariance(x: &[f64], xp: &[f64], params: &KernelParams) -> Result<f64> {
    let q = params.dim();
    if x.len() != q {
        return Err(Error::dim("sm_covariance x", q, x.len()));
    }
    if xp.len() != q {
        return Err(Error::dim("sm_covariance x'", q, xp.len()));
    }
    Ok(sm_unchecked(x, xp, params))
}

fn sm_unchecked(x: &[f64], xp: &[f64], params: &KernelParams) -> f64 {
    let mut sq = 0.0;
    let mut arg = 0.0;
    for (q, (&a, &b)) in x.iter().zip(xp).enumerate() {
        // Symmetric in (a, b): the square is even and the cosine is even.
        let tau = a - b;
        let l = params.length_scales[q];
        sq += tau * tau / (2.0 * l * l);
        arg += params.periods[q].omega() * tau;
    }
    params.signal_variance * (-sq).exp() * arg.cos()
}

/// Φ (N×M) with Φ_nm = sqrt(2σ²/M)·cos(ẑ_mᵀ(x_n − u_m) + b_m), ẑ_m = z_m/l + 2π/p.
pub fn feature_map(
    x: &DMatrix<f64>,
    basis: &SpectralBasis,
    params: &KernelParams,
) -> Result<DMatrix<f64>> {
    let q = params.dim();
    if x.ncols() != q {
        return Err(Error::dim("feature_map inputs", q, x.ncols()));
    }
    basis.validate(q)?;
    let m = basis.num_features();
    let zhat = scaled_frequencies(&basis.z, params);
    let pref = (2.0 * params.signal_variance / m as f64).sqrt();
    Ok(DMatrix::from_fn(x.nrows(), m, |n, j| {
        let mut arg = basis.phases[j];
        for d in 0..q {
            arg += zhat[(j, d)] * (x[(n, d)] - basis.u[(j, d)]);
        }
        pref * arg.cos()
    }))
}

/// ẑ = z/l + ω, row-wise.
pub fn scaled_frequencies(z: &DMatrix<f64>, params: &KernelParams) -> DMatrix<f64> {
    let omegas = params.omegas();
    DMatrix::from_fn(z.nrows(), z.ncols(), |m, d| {
        z[(m, d)] / params.length_scales[d] + omegas[d]
    })
}

pub fn gram(x: &DMatrix<f64>, xp: &DMatrix<f64>, params: &KernelParams) -> Result<DMatrix<f64>> {
    let q = params.dim();
    if x.ncols() != q {
        return Err(Error::dim("gram X columns", q, x.ncols()));
    }
    if xp.ncols() != q {
        return Err(Error::dim("gram X' columns", q, xp.ncols()));
    }
    let rows: Vec<Vec<f64>> = (0..x.nrows())
        .map(|i| x.row(i).iter().copied().collect())
        .collect();
    let cols: Vec<Vec<f64>> = (0..xp.nrows())
        .map(|i| xp.row(i).iter().copied().collect())
        .collect();
    Ok(DMatrix::from_fn(x.nrows(), xp.nrows(), |i, j| {
        sm_unchecked(&rows[i], &cols[j], params)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{min_eigenvalue, symmetrize};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn se1() -> KernelParams {
        KernelParams::se(1.0, vec![1.0], 0.01)
    }

    #[test]
    fn unit_lag_value() {
        let k = sm_covariance(&[1.0], &[0.0], &se1()).unwrap();
        assert!((k - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn zero_lag_is_signal_variance() {
        let mut p = se1();
        p.signal_variance = 2.5;
        assert_eq!(sm_covariance(&[0.3], &[0.3], &p).unwrap(), 2.5);
    }

    #[test]
    fn finite_period_adds_cosine() {
        let p = KernelParams {
            signal_variance: 1.0,
            length_scales: vec![2.0],
            periods: vec![Period::Finite(4.0)],
            noise_variance: 0.1,
        };
        let k = sm_covariance(&[1.0], &[0.0], &p).unwrap();
        let want = (-1.0f64 / 8.0).exp() * (2.0 * PI / 4.0).cos();
        assert!((k - want).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_errors() {
        assert!(sm_covariance(&[0.0, 1.0], &[0.0], &se1()).is_err());
        let x = DMatrix::zeros(2, 2);
        assert!(gram(&x, &x, &se1()).is_err());
    }

    #[test]
    fn feature_map_hand_value() {
        let p = se1();
        let basis = SpectralBasis {
            z: DMatrix::from_element(1, 1, 0.5),
            u: DMatrix::zeros(1, 1),
            phases: DVector::zeros(1),
        };
        let phi = feature_map(&DMatrix::from_element(1, 1, 0.3), &basis, &p).unwrap();
        assert!((phi[(0, 0)] - 2f64.sqrt() * 0.15f64.cos()).abs() < 1e-14);
        assert!((phi[(0, 0)] - 1.3983).abs() < 1e-4);
    }

    #[test]
    fn zero_frequency_columns_are_constant() {
        let p = KernelParams::se(0.7, vec![1.0, 2.0], 0.1);
        let basis = SpectralBasis {
            z: DMatrix::zeros(3, 2),
            u: DMatrix::from_element(3, 2, 0.4),
            phases: DVector::zeros(3),
        };
        let x = DMatrix::from_fn(4, 2, |i, j| (i * 2 + j) as f64);
        let phi = feature_map(&x, &basis, &p).unwrap();
        let c = (2.0 * 0.7 / 3.0f64).sqrt();
        assert!(phi.iter().all(|v| (v - c).abs() < 1e-15));
    }

    #[test]
    fn gram_small_cases() {
        let p = KernelParams::se(1.3, vec![1.0], 0.1);
        let one = DMatrix::from_element(1, 1, 0.2);
        assert_eq!(gram(&one, &one, &p).unwrap()[(0, 0)], 1.3);
        let two = DMatrix::from_element(2, 1, 0.2);
        let g = gram(&two, &two, &p).unwrap();
        assert!(g.iter().all(|&v| v == 1.3));
    }

    #[test]
    fn gram_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = KernelParams::se(1.0, vec![0.8, 1.5], 0.1);
        let x = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-2.0..2.0));
        let g = symmetrize(&gram(&x, &x, &p).unwrap());
        assert!(min_eigenvalue(&g) >= -1e-10);
    }

    #[test]
    fn features_approach_kernel() {
        // Average of ΦΦᵀ over many independent bases; M = 1 per draw keeps draws independent.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = KernelParams::se(1.0, vec![1.0], 0.1);
        let x = DMatrix::from_column_slice(5, 1, &[-1.0, -0.4, 0.0, 0.5, 1.2]);
        let exact = gram(&x, &x, &p).unwrap();
        let draws = 100_000;
        let mut mean = DMatrix::<f64>::zeros(5, 5);
        let mut sq = DMatrix::<f64>::zeros(5, 5);
        let normal = rand_distr::StandardNormal;
        for _ in 0..draws {
            let basis = SpectralBasis {
                z: DMatrix::from_element(1, 1, rng.sample::<f64, _>(normal)),
                u: DMatrix::zeros(1, 1),
                phases: DVector::from_element(1, rng.random_range(0.0..2.0 * PI)),
            };
            let phi = feature_map(&x, &basis, &p).unwrap();
            let k = &phi * phi.transpose();
            mean += &k;
            sq += k.component_mul(&k);
        }
        mean /= draws as f64;
        sq /= draws as f64;
        for i in 0..5 {
            for j in 0..5 {
                let se = ((sq[(i, j)] - mean[(i, j)].powi(2)) / draws as f64).sqrt();
                let z = (mean[(i, j)] - exact[(i, j)]) / se.max(1e-12);
                assert!(z.abs() <= 3.0, "entry ({i},{j}) z = {z}");
                assert!((mean[(i, j)] - exact[(i, j)]).abs() < 0.05 * exact[(i, j)].abs().max(0.2));
            }
        }
    }
}
