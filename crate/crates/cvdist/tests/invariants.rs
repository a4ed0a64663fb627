//! Structural invariants, runnable standalone: `cargo test --test invariants`.
//!
//! These pin the simulation's algebra independent of any physics target:
//! symplectic-form preservation, uncertainty-relation preservation, vacuum
//! fixed points, exactness of the trigger rule, copy-exchange symmetry of
//! the distiller, determinism under parallelism, standard-error scaling,
//! and the phase-averaging closed form.

use cvdist::gaussian::{GaussianState, SymplecticMatrix, EXACT_TOL};
use cvdist::metrics::metrics_report;
use cvdist::noise::{phase_averaged_moments, NoiseSample};
use cvdist::protocol::{
    apply_channel_noise, apply_distillation_bs, build_initial_state, run_ensemble, run_shot,
    ProtocolConfig, SamplingMode,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const BLOCK_TOL: f64 = 1e-12;

fn small_cfg() -> ProtocolConfig {
    ProtocolConfig {
        n_shots: 50_000,
        ..ProtocolConfig::default()
    }
}

/// One random passive operation on an `n_modes` register.
#[derive(Debug, Clone)]
enum Op {
    Bs { i: usize, j: usize, t: f64 },
    Rot { i: usize, theta: f64 },
}

impl Op {
    fn build(&self, n_modes: usize) -> SymplecticMatrix {
        match *self {
            Op::Bs { i, j, t } => SymplecticMatrix::beam_splitter(n_modes, i, j, t).unwrap(),
            Op::Rot { i, theta } => SymplecticMatrix::phase_rotation(n_modes, i, theta).unwrap(),
        }
    }
}

fn op_strategy(n_modes: usize) -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..n_modes, 0..n_modes, 0.01f64..0.99).prop_filter_map(
            "beam splitter needs two distinct modes",
            |(i, j, t)| (i != j).then_some(Op::Bs { i, j, t }),
        ),
        (0..n_modes, -6.0f64..6.0).prop_map(|(i, theta)| Op::Rot { i, theta }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Any product of beam splitters and rotations stays symplectic.
    #[test]
    fn symplectic_form_is_preserved(ops in prop::collection::vec(op_strategy(4), 1..8)) {
        let total = ops
            .iter()
            .fold(SymplecticMatrix::identity(4), |acc, op| op.build(4).compose(&acc));
        prop_assert!(total.symplectic_defect() < 1e-9);
    }

    /// The full preparation chain (squeezing, mixing, loss, random phases,
    /// distillation splitters) never produces a state violating the
    /// uncertainty relation.
    #[test]
    fn uncertainty_relation_survives_the_pipeline(
        squeezing_db in 0.0f64..10.0,
        extra_db in 0.0f64..6.0,
        eta in 0.05f64..=1.0,
        theta in prop::array::uniform4(-3.0f64..3.0),
        t in 0.05f64..0.95,
        extra_eta in 0.05f64..=1.0,
        lossy_mode in 0usize..4,
    ) {
        let cfg = ProtocolConfig {
            squeezing_db,
            antisqueezing_db: squeezing_db + extra_db,
            eta,
            ..ProtocolConfig::default()
        };
        let state = build_initial_state(&cfg).unwrap();
        prop_assert!(state.check_physical().is_ok());
        let noisy = apply_channel_noise(&state, &NoiseSample { theta });
        prop_assert!(noisy.check_physical().is_ok());
        let mixed = apply_distillation_bs(&noisy, t).unwrap();
        prop_assert!(mixed.check_physical().is_ok());
        let degraded = mixed.loss_channel(lossy_mode, extra_eta).unwrap();
        prop_assert!(degraded.check_physical().is_ok());
    }

    /// Vacuum is a fixed point of every passive element and of loss.
    #[test]
    fn vacuum_is_a_fixed_point(t in 0.01f64..0.99, theta in -6.0f64..6.0, eta in 0.01f64..=1.0) {
        let vac2 = GaussianState::vacuum(2).unwrap();
        let bs = SymplecticMatrix::beam_splitter(2, 0, 1, t).unwrap();
        let mixed = vac2.apply(&bs);
        prop_assert!((mixed.cov() - vac2.cov()).amax() < EXACT_TOL);
        prop_assert!((mixed.mean() - vac2.mean()).amax() < EXACT_TOL);

        let vac1 = GaussianState::vacuum(1).unwrap();
        let rot = SymplecticMatrix::phase_rotation(1, 0, theta).unwrap();
        prop_assert!((vac1.apply(&rot).cov() - vac1.cov()).amax() < EXACT_TOL);

        let lossy = vac1.loss_channel(0, eta).unwrap();
        prop_assert!((lossy.cov() - vac1.cov()).amax() < EXACT_TOL);
    }

    /// The acceptance flag equals the trigger rule |X_TA + X_TB| < Q exactly,
    /// shot by shot.
    #[test]
    fn trigger_rule_is_exact(q in 0.01f64..3.0, seed in 0u64..1000) {
        let cfg = ProtocolConfig { q, ..small_cfg() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..40 {
            let rec = run_shot(&cfg, &mut rng).unwrap();
            prop_assert_eq!(rec.accepted, (rec.x_ta + rec.x_tb).abs() < q);
        }
    }

    /// Exchanging which copy feeds which splitter port leaves the trigger and
    /// verification blocks invariant and only flips the sign of their cross
    /// correlations.
    #[test]
    fn copy_exchange_symmetry(theta in prop::array::uniform4(-2.5f64..2.5)) {
        let cfg = ProtocolConfig::default();
        let noisy = apply_channel_noise(&build_initial_state(&cfg).unwrap(), &NoiseSample { theta });
        let out = apply_distillation_bs(&noisy, 0.5).unwrap();

        // swap the two copies: modes (0,1) <-> (2,3), i.e. quadrature rows 0..4 <-> 4..8
        let mut p = DMatrix::zeros(8, 8);
        for m in 0..8 {
            p[(m, (m + 4) % 8)] = 1.0;
        }
        let permuted = GaussianState::from_parts(&p * noisy.mean(), &p * noisy.cov() * p.transpose()).unwrap();
        let out_swapped = apply_distillation_bs(&permuted, 0.5).unwrap();

        let (g, h) = (out.cov(), out_swapped.cov());
        let trigger = (g.view((0, 0), (4, 4)) - h.view((0, 0), (4, 4))).amax();
        let verification = (g.view((4, 4), (4, 4)) - h.view((4, 4), (4, 4))).amax();
        let cross = (g.view((0, 4), (4, 4)) + h.view((0, 4), (4, 4))).amax();
        prop_assert!(trigger < BLOCK_TOL);
        prop_assert!(verification < BLOCK_TOL);
        prop_assert!(cross < BLOCK_TOL);
    }
}

/// Same seed, different rayon pools: bit-identical ensembles.
#[test]
fn ensembles_are_deterministic_under_parallelism() {
    let cfg = ProtocolConfig {
        q: 0.8,
        n_shots: 60_000,
        ..ProtocolConfig::default()
    };
    let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let pool3 = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let serial = pool1.install(|| run_ensemble(&cfg)).unwrap();
    let threaded = pool3.install(|| run_ensemble(&cfg)).unwrap();
    let threaded_again = pool3.install(|| run_ensemble(&cfg)).unwrap();
    assert_eq!(serial, threaded);
    assert_eq!(threaded, threaded_again);
}

#[test]
fn infinite_threshold_accepts_every_shot() {
    let cfg = ProtocolConfig {
        q: f64::INFINITY,
        n_shots: 2_000,
        ..ProtocolConfig::default()
    };
    let res = run_ensemble(&cfg).unwrap();
    assert_eq!(res.accepted, res.total);
}

/// Quadrupling the sample size four times over halves the standard error
/// twice over (a 1/sqrt(n) law), and the estimates stay compatible.
#[test]
fn standard_errors_scale_as_inverse_sqrt_n() {
    let run = |n_shots: u64| {
        let cfg = ProtocolConfig {
            n_shots,
            sampling_mode: SamplingMode::Joint,
            ..ProtocolConfig::default()
        };
        metrics_report(&run_ensemble(&cfg).unwrap()).unwrap()
    };
    let coarse = run(20_000);
    let fine = run(320_000);
    let ratio = coarse.var_xplus.se / fine.var_xplus.se;
    assert!(
        (2.8..5.6).contains(&ratio),
        "SE ratio for 16x the shots should be near 4, got {ratio}"
    );
    let gap = (coarse.var_xplus.value - fine.var_xplus.value).abs();
    assert!(gap < 4.0 * coarse.var_xplus.se, "estimates at different n disagree: {gap}");
}

/// Monte Carlo over the rotation angle reproduces the closed-form
/// phase-averaged second moments, including the coherence factors.
#[test]
fn phase_averaging_matches_direct_sampling() {
    let (a, b, cxp, sigma) = (0.09, 0.5, 0.03, 0.55);
    let closed = phase_averaged_moments(a, b, cxp, sigma);

    let n = 300_000;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut acc = |f: &dyn Fn(f64) -> f64| {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let theta: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
            let v = f(theta);
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
        (mean, se)
    };

    // Var(X'), Cov(X',P') of the rotated mode, and E[cos theta]
    let (vx, vx_se) = acc(&|th: f64| {
        let (s, c) = th.sin_cos();
        c * c * a + s * s * b + 2.0 * s * c * cxp
    });
    let (cv, cv_se) = acc(&|th: f64| {
        let (s, c) = th.sin_cos();
        s * c * (b - a) + (c * c - s * s) * cxp
    });
    let (c1, c1_se) = acc(&|th: f64| th.cos());

    assert!((vx - closed.var_x).abs() < 5.0 * vx_se, "var_x: {vx} vs {}", closed.var_x);
    assert!((cv - closed.cov_xp).abs() < 5.0 * cv_se, "cov_xp: {cv} vs {}", closed.cov_xp);
    assert!((c1 - closed.coh1).abs() < 5.0 * c1_se, "coh1: {c1} vs {}", closed.coh1);
}
