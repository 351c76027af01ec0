//! Property tests for kernel, statistics, bound, simulation, sharding and data invariants.

use drgp_core::bound::{bound, bound_explicit_weights, optimal_weights};
use drgp_core::dataset::{denormalize, downsample, make_toy, normalize, NormMode, ToyKind};
use drgp_core::kernel::{feature_map, sm_covariance, KernelParams, Period, SpectralBasis};
use drgp_core::linalg::{is_symmetric, min_eigenvalue};
use drgp_core::model::{
    init_model, InitOptions, Variant, WeightCov, WeightPosterior, WindowConfig,
};
use drgp_core::parallel::{reduce_and_finish, shard_evaluate};
use drgp_core::psi::{psi2_ss, psi2_vss, psi_reg, GaussianInputs, GaussianSpectral};
use drgp_core::simulate::Predictor;
use drgp_core::trainer::{pack_parameters, unpack_parameters, Freeze};
use drgp_core::transform::Transform;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn kernel(q: usize) -> impl Strategy<Value = KernelParams> {
    (
        0.1f64..3.0,
        prop::collection::vec(0.2f64..3.0, q),
        prop::collection::vec(prop::option::of(0.5f64..6.0), q),
    )
        .prop_map(|(s, l, p)| KernelParams {
            signal_variance: s,
            length_scales: l,
            periods: p
                .into_iter()
                .map(|p| p.map_or(Period::Infinite, Period::Finite))
                .collect(),
            noise_variance: 0.1,
        })
}

fn matrix(r: usize, c: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, r * c).prop_map(move |v| DMatrix::from_row_slice(r, c, &v))
}

/// (inputs, basis, spectral, params) with Q ≤ 3, M ≤ 4, N ≤ 5.
fn psi_case() -> impl Strategy<
    Value = (
        GaussianInputs,
        SpectralBasis,
        GaussianSpectral,
        KernelParams,
    ),
> {
    (1usize..=3, 1usize..=4, 1usize..=5).prop_flat_map(|(q, m, n)| {
        (
            matrix(n, q, -2.0, 2.0),
            matrix(n, q, 0.0, 0.6),
            matrix(m, q, -2.0, 2.0),
            matrix(m, q, -2.0, 2.0),
            prop::collection::vec(0.0f64..std::f64::consts::TAU, m),
            matrix(m, q, 0.01, 0.6),
            kernel(q),
        )
            .prop_map(|(mean, var, z, u, b, beta, p)| {
                let spectral = GaussianSpectral {
                    mean: z.clone(),
                    var: beta,
                };
                (
                    GaussianInputs { mean, var },
                    SpectralBasis {
                        z,
                        u,
                        phases: DVector::from_vec(b),
                    },
                    spectral,
                    p,
                )
            })
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_is_symmetric(
        (x, xp, p) in (1usize..=4).prop_flat_map(|q| (
            prop::collection::vec(-5.0f64..5.0, q),
            prop::collection::vec(-5.0f64..5.0, q),
            kernel(q),
        ))
    ) {
        prop_assert_eq!(sm_covariance(&x, &xp, &p).unwrap(), sm_covariance(&xp, &x, &p).unwrap());
    }

    // Shifting both arguments perturbs τ by rounding only, so the error is measured against σ².
    #[test]
    fn covariance_is_stationary(
        (x, xp, c, p) in (1usize..=4).prop_flat_map(|q| (
            prop::collection::vec(-5.0f64..5.0, q),
            prop::collection::vec(-5.0f64..5.0, q),
            prop::collection::vec(-5.0f64..5.0, q),
            kernel(q),
        ))
    ) {
        let xs: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a + b).collect();
        let xps: Vec<f64> = xp.iter().zip(&c).map(|(a, b)| a + b).collect();
        let k0 = sm_covariance(&x, &xp, &p).unwrap();
        let k1 = sm_covariance(&xs, &xps, &p).unwrap();
        prop_assert!((k0 - k1).abs() <= 1e-12 * p.signal_variance.max(k0.abs()));
    }

    #[test]
    fn infinite_periods_give_squared_exponential(
        (x, xp, mut p) in (1usize..=4).prop_flat_map(|q| (
            prop::collection::vec(-3.0f64..3.0, q),
            prop::collection::vec(-3.0f64..3.0, q),
            kernel(q),
        ))
    ) {
        p.periods.fill(Period::Infinite);
        let sq: f64 = x.iter().zip(&xp).zip(&p.length_scales)
            .map(|((a, b), l)| (a - b).powi(2) / (2.0 * l * l)).sum();
        let direct = p.signal_variance * (-sq).exp();
        prop_assert!(rel(sm_covariance(&x, &xp, &p).unwrap(), direct) <= 1e-12);
    }

    #[test]
    fn psi2_and_psi_reg_are_symmetric_psd((i, b, s, p) in psi_case()) {
        for a in [psi2_ss(&i, &b, &p).unwrap(), psi2_vss(&i, &s, &b, &p).unwrap(), psi_reg(&i, &b, &p).unwrap()] {
            prop_assert!(is_symmetric(&a, 1e-12));
            prop_assert!(min_eigenvalue(&a) >= -1e-8 * a.trace().abs());
        }
    }

    #[test]
    fn psi2_diagonal_is_bounded((i, b, s, p) in psi_case()) {
        let m = b.num_features() as f64;
        let n = i.len() as f64;
        for a in [psi2_ss(&i, &b, &p).unwrap(), psi2_vss(&i, &s, &b, &p).unwrap()] {
            for d in a.diagonal().iter() {
                prop_assert!(*d >= -1e-12 && *d <= n * 2.0 * p.signal_variance / m * (1.0 + 1e-12));
            }
            prop_assert!(a.trace() <= 2.0 * n * p.signal_variance * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_variance_psi2_is_feature_gram((i, b, _s, p) in psi_case()) {
        let point = GaussianInputs::deterministic(i.mean.clone());
        let phi = feature_map(&i.mean, &b, &p).unwrap();
        let direct = phi.transpose() * &phi;
        let psi2 = psi2_ss(&point, &b, &p).unwrap();
        prop_assert!((&psi2 - &direct).amax() <= 1e-12 * direct.amax().max(1.0));
    }

    #[test]
    fn positive_transform_round_trips(x in 1e-8f64..1e8) {
        let t = Transform::POSITIVE;
        prop_assert!(rel(t.forward(t.inverse(x)), x) <= 1e-12);
    }

    #[test]
    fn positive_transform_stays_positive(theta in -700.0f64..700.0) {
        prop_assert!(Transform::POSITIVE.forward(theta) >= 0.0);
        prop_assert!(Transform::SPECTRAL_VARIANCE.forward(theta) > 0.0);
    }

    #[test]
    fn normalize_round_trips(seed in 0u64..1000, mode in prop_oneof![Just(NormMode::StdDev), Just(NormMode::Variance)]) {
        let ds = make_toy(ToyKind::LinearNarx, 40, seed).unwrap().with_split(30, 10).unwrap();
        let back = denormalize(&normalize(&ds, mode, false).unwrap());
        prop_assert!((&back.x - &ds.x).amax() <= 1e-12 * ds.x.amax().max(1.0));
        prop_assert!((&back.y - &ds.y).amax() <= 1e-12 * ds.y.amax().max(1.0));
    }

    #[test]
    fn downsample_keeps_order(n in 20usize..200, stride in 1usize..7) {
        let ds = make_toy(ToyKind::SineDrive, n, 1).unwrap();
        let d = downsample(&ds, stride).unwrap();
        prop_assert_eq!(d.len(), n.div_ceil(stride));
        for (k, v) in d.y.iter().enumerate() {
            prop_assert_eq!(*v, ds.y[k * stride]);
        }
    }
}

fn small_model(
    seed: u64,
    variant: Variant,
    hidden: usize,
) -> (drgp_core::model::RecurrentModel, DVector<f64>, DMatrix<f64>) {
    let ds = make_toy(ToyKind::LinearNarx, 30, seed).unwrap();
    let init = InitOptions {
        num_features: 4,
        state_var: 0.05,
        beta: 0.05,
        ..Default::default()
    };
    let cfg = WindowConfig::new(2, 2, hidden).unwrap();
    let m = init_model(&ds.y, &ds.x, cfg, variant, &init, seed).unwrap();
    (m, ds.y, ds.x)
}

fn variant() -> impl Strategy<Value = Variant> {
    prop::sample::select(Variant::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn explicit_weights_never_beat_collapsed(
        seed in 0u64..10_000,
        v in prop_oneof![Just(Variant::Ss), Just(Variant::Vss)],
        shift in prop::collection::vec(-1.0f64..1.0, 4),
        scale in prop::collection::vec(0.01f64..2.0, 4),
    ) {
        let (mut m, y, x) = small_model(seed, v, 1);
        let collapsed = bound(&m, &y, &x).unwrap().total;
        for l in 0..m.num_layers() {
            m.layers[l].weights = Some(WeightPosterior {
                mean: DVector::from_vec(shift.clone()),
                cov: WeightCov::Diagonal(DVector::from_vec(scale.clone())),
            });
        }
        let explicit = bound_explicit_weights(&m, &y, &x).unwrap().total;
        prop_assert!(explicit <= collapsed + 1e-8 * collapsed.abs().max(1.0));
    }

    #[test]
    fn sharding_is_exact(seed in 0u64..10_000, v in variant(), cuts in prop::collection::vec(2usize..30, 0..5)) {
        let (m, y, x) = small_model(seed, v, 1);
        let serial = bound(&m, &y, &x).unwrap().total;
        let mut edges = vec![2, 30];
        edges.extend(cuts);
        edges.sort_unstable();
        let parts: Vec<_> = edges.windows(2).map(|w| shard_evaluate(&m, &y, &x, w[0]..w[1]).unwrap()).collect();
        prop_assert!(rel(reduce_and_finish(&parts, &m).unwrap().total, serial) <= 1e-10);
    }

    #[test]
    fn predicted_variance_grows_with_input_variance(
        seed in 0u64..10_000,
        v in variant(),
        layer in 0usize..2,
        mu in prop::collection::vec(-1.5f64..1.5, 4),
        lam in prop::collection::vec(0.0f64..0.3, 4),
        extra in prop::collection::vec(0.0f64..0.3, 4),
    ) {
        let (m, y, x) = small_model(seed, v, 1);
        let pred = Predictor::fit(&m, &y, &x).unwrap();
        let q = m.layer_input_dim(layer);
        let lam2: Vec<f64> = lam.iter().zip(&extra).map(|(a, b)| a + b).collect();
        let (lo, _) = pred.predict_layer(layer, &mu[..q], &lam[..q]).unwrap();
        let (hi, _) = pred.predict_layer(layer, &mu[..q], &lam2[..q]).unwrap();
        prop_assert!(hi.variance >= lo.variance - 1e-12, "{} < {}", hi.variance, lo.variance);
    }

    #[test]
    fn deterministic_inputs_give_linear_model_moments(
        seed in 0u64..10_000,
        v in prop_oneof![Just(Variant::Ss), Just(Variant::SsIp1), Just(Variant::SsIp2)],
        mu in prop::collection::vec(-1.5f64..1.5, 4),
    ) {
        let (m, y, x) = small_model(seed, v, 1);
        let pred = Predictor::fit(&m, &y, &x).unwrap();
        let q = m.layer_input_dim(0);
        let (got, _) = pred.predict_layer(0, &mu[..q], &vec![0.0; q]).unwrap();
        let layer = &m.layers[0];
        let phi = feature_map(&DMatrix::from_row_slice(1, q, &mu[..q]), &layer.basis, &layer.kernel)
            .unwrap().row(0).transpose();
        let (w, s) = pred.weights(0);
        let mut var = phi.dot(&(s * &phi));
        if v.ip().is_some() {
            // Nyström residual σ² − kᵀK⁻¹k with the jittered K_MM.
            let mm = layer.basis.num_features();
            let k = DVector::from_fn(mm, |j, _| {
                let u: Vec<f64> = layer.basis.u.row(j).iter().copied().collect();
                sm_covariance(&mu[..q], &u, &layer.kernel).unwrap()
            });
            let mut kmm = DMatrix::from_fn(mm, mm, |a, b| {
                let ua: Vec<f64> = layer.basis.u.row(a).iter().copied().collect();
                let ub: Vec<f64> = layer.basis.u.row(b).iter().copied().collect();
                sm_covariance(&ua, &ub, &layer.kernel).unwrap()
            });
            for d in 0..mm {
                kmm[(d, d)] += 1e-6 * layer.kernel.signal_variance;
            }
            var += layer.kernel.signal_variance - k.dot(&(kmm.try_inverse().unwrap() * &k));
        }
        prop_assert!((got.mean - phi.dot(w)).abs() <= 1e-9 * got.mean.abs().max(1.0));
        prop_assert!((got.variance - var.max(0.0)).abs() <= 1e-9 * var.abs().max(1.0));
    }

    #[test]
    fn unpacked_parameters_stay_positive(seed in 0u64..10_000, v in variant(), noise in prop::collection::vec(-30.0f64..30.0, 1..400)) {
        let (mut m, _, _) = small_model(seed, v, 2);
        let (theta, index) = pack_parameters(&m, &Freeze::default());
        let theta: Vec<f64> = theta.iter().zip(noise.iter().cycle()).map(|(t, n)| t + n).collect();
        unpack_parameters(&mut m, &theta, &index).unwrap();
        for l in &m.layers {
            prop_assert!(l.kernel.signal_variance > 0.0);
            prop_assert!(l.kernel.noise_variance > 0.0);
            prop_assert!(l.kernel.length_scales.iter().all(|v| *v > 0.0));
            if let Some(s) = &l.spectral {
                prop_assert!(s.var.iter().all(|v| *v > 0.0));
            }
            if let Some(st) = &l.states {
                prop_assert!(st.var.iter().all(|v| *v > 0.0));
            }
        }
    }

    #[test]
    fn optimal_weights_are_finite(seed in 0u64..10_000, v in variant()) {
        let (m, y, x) = small_model(seed, v, 2);
        for (w, s) in optimal_weights(&m, &y, &x).unwrap() {
            prop_assert!(w.iter().all(|v| v.is_finite()));
            prop_assert!(is_symmetric(&s, 1e-10));
        }
    }
}
