//! Gaussian phase-diffusion channel: per-shot phase sampling plus the
//! closed-form phase-averaged second moments used by the oracle and tests.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-channel phase-noise strengths (radians), one per beam A1, B1, A2, B2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseNoiseSpec {
    pub sigma: [f64; 4],
}

impl PhaseNoiseSpec {
    /// All four channels share one strength (the common case).
    pub fn uniform(sigma: f64) -> Result<Self> {
        Self::new([sigma; 4])
    }

    pub fn new(sigma: [f64; 4]) -> Result<Self> {
        for s in sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "phase-noise sigma must be finite and >= 0, got {s}"
                )));
            }
        }
        Ok(Self { sigma })
    }
}

/// One realization of the four independent channel phases (radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSample {
    pub theta: [f64; 4],
}

/// Draw the four channel phases independently, theta_i ~ N(0, sigma_i^2).
pub fn sample_phases<R: Rng + ?Sized>(spec: &PhaseNoiseSpec, rng: &mut R) -> NoiseSample {
    let mut theta = [0.0; 4];
    for (t, &s) in theta.iter_mut().zip(spec.sigma.iter()) {
        let z: f64 = rng.sample(StandardNormal);
        *t = s * z;
    }
    NoiseSample { theta }
}

/// Second moments of one mode after averaging over a Gaussian-distributed
/// phase rotation theta ~ N(0, sigma^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseAveraged {
    pub var_x: f64,
    pub var_p: f64,
    pub cov_xp: f64,
    /// E[cos theta] = exp(-sigma^2/2); scales correlations between this mode
    /// and any unrotated mode.
    pub coh1: f64,
    /// E[cos 2 theta] = exp(-2 sigma^2) = coh1^4; scales the rotating parts
    /// of this mode's own second moments.
    pub coh2: f64,
}

/// Exact mixture moments of a phase-diffused mode.
///
/// With E[cos 2θ] = coh2, E[sin 2θ] = 0 and E[cos θ] = coh1 for θ ~ N(0, σ²):
///
/// ```text
/// varX' = (varX+varP)/2 + (varX-varP)/2 * coh2
/// varP' = (varX+varP)/2 - (varX-varP)/2 * coh2
/// covXP' = covXP * coh2
/// ```
///
/// (The covXP contribution to the primed variances carries E[sin 2θ] = 0, so
/// it drops out for any zero-mean phase distribution.)
pub fn phase_averaged_moments(var_x: f64, var_p: f64, cov_xp: f64, sigma: f64) -> PhaseAveraged {
    if sigma == 0.0 {
        // exact identity, not just up to rounding in the half-sum algebra
        return PhaseAveraged {
            var_x,
            var_p,
            cov_xp,
            coh1: 1.0,
            coh2: 1.0,
        };
    }
    let coh1 = (-sigma * sigma / 2.0).exp();
    let coh2 = (-2.0 * sigma * sigma).exp();
    let half_sum = 0.5 * (var_x + var_p);
    let half_diff = 0.5 * (var_x - var_p);
    PhaseAveraged {
        var_x: half_sum + half_diff * coh2,
        var_p: half_sum - half_diff * coh2,
        cov_xp: cov_xp * coh2,
        coh1,
        coh2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_sigma_is_identity() {
        let m = phase_averaged_moments(0.3, 0.7, 0.1, 0.0);
        assert_eq!((m.var_x, m.var_p, m.cov_xp), (0.3, 0.7, 0.1));
        assert_eq!((m.coh1, m.coh2), (1.0, 1.0));
    }

    #[test]
    fn full_dephasing_limit() {
        let m = phase_averaged_moments(0.1, 0.9, 0.2, 50.0);
        assert_abs_diff_eq!(m.var_x, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m.var_p, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m.cov_xp, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn squeezed_input_at_half_radian_noise() {
        // 4.5 dB / 8 dB squeezed input, sigma = 0.497
        let m = phase_averaged_moments(0.0887033473, 1.5773933612, 0.0, 0.497);
        assert_abs_diff_eq!(m.coh2, 0.6101697999, epsilon = 1e-9);
        assert_abs_diff_eq!(m.var_x, 0.3788715, epsilon = 1e-6);
        assert_abs_diff_eq!(m.var_p, 1.2872252, epsilon = 1e-6);
    }

    #[test]
    fn coherence_identity() {
        for sigma in [0.0, 0.1, 0.497, 1.3, 4.0] {
            let m = phase_averaged_moments(0.2, 0.4, 0.05, sigma);
            assert!(m.coh1 > 0.0 && m.coh1 <= 1.0);
            assert!(m.coh2 > 0.0 && m.coh2 <= 1.0);
            assert_abs_diff_eq!(m.coh2, m.coh1.powi(4), epsilon = 1e-12);
        }
    }

    #[test]
    fn dephasing_never_purifies() {
        // for covXP = 0, varX' * varP' >= varX * varP
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let vx = 0.05 + 0.9 * rng.gen::<f64>();
            let vp = 0.05 + 0.9 * rng.gen::<f64>();
            let sigma = 2.0 * rng.gen::<f64>();
            let m = phase_averaged_moments(vx, vp, 0.0, sigma);
            assert!(m.var_x * m.var_p >= vx * vp - 1e-12);
        }
    }

    #[test]
    fn sample_phases_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let quiet = PhaseNoiseSpec::uniform(0.0).unwrap();
        assert_eq!(sample_phases(&quiet, &mut rng).theta, [0.0; 4]);

        let spec = PhaseNoiseSpec::new([0.1, 0.2, 0.3, 0.4]).unwrap();
        let n = 200_000;
        let mut sum2 = [0.0f64; 4];
        let mut cross = 0.0f64;
        for _ in 0..n {
            let s = sample_phases(&spec, &mut rng);
            for k in 0..4 {
                sum2[k] += s.theta[k] * s.theta[k];
            }
            cross += s.theta[0] * s.theta[3];
        }
        for k in 0..4 {
            let var = sum2[k] / n as f64;
            let want = spec.sigma[k] * spec.sigma[k];
            let se = want * (2.0 / n as f64).sqrt();
            assert!((var - want).abs() < 4.0 * se, "channel {k}: {var} vs {want}");
        }
        // channels uncorrelated
        let corr = cross / n as f64 / (0.1 * 0.4);
        assert!(corr.abs() < 4.0 / (n as f64).sqrt());

        assert!(PhaseNoiseSpec::uniform(-0.1).is_err());
        assert!(PhaseNoiseSpec::uniform(f64::NAN).is_err());
    }

    #[test]
    fn averaged_moments_match_sampled_rotations() {
        // MC average of rotated second moments vs the closed form
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let vx = 0.05 + rng.gen::<f64>();
            let vp = 0.05 + rng.gen::<f64>();
            let cxp = 0.2 * (rng.gen::<f64>() - 0.5);
            let sigma = 0.1 + rng.gen::<f64>();
            let want = phase_averaged_moments(vx, vp, cxp, sigma);
            let n = 200_000;
            let (mut ax, mut ap, mut axp) = (0.0f64, 0.0f64, 0.0f64);
            let (mut sx, mut sp, mut sxp) = (0.0f64, 0.0f64, 0.0f64);
            for _ in 0..n {
                let th: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
                let (c, s) = (th.cos(), th.sin());
                let x = vx * c * c + vp * s * s + 2.0 * cxp * c * s;
                let p = vx * s * s + vp * c * c - 2.0 * cxp * c * s;
                let xp = (vp - vx) * c * s + cxp * (c * c - s * s);
                ax += x;
                ap += p;
                axp += xp;
                sx += x * x;
                sp += p * p;
                sxp += xp * xp;
            }
            let fin = |a: f64, s2: f64, want: f64| {
                let mean = a / n as f64;
                let se = ((s2 / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
                assert!(
                    (mean - want).abs() < 4.0 * se + 1e-12,
                    "{mean} vs {want} +- {se}"
                );
            };
            fin(ax, sx, want.var_x);
            fin(ap, sp, want.var_p);
            fin(axp, sxp, want.cov_xp);
        }
    }
}
