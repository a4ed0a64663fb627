//! Turn accepted verification samples into quantitative results:
//! reconstructed covariance matrix, Duan total variance, determinant and
//! purity, logarithmic negativity, excess kurtosis.
//!
//! All reported matrices are normalized so the vacuum covariance is the
//! identity (natural quadrature variances divided by 1/4).

use nalgebra::{DMatrix, Matrix2, Matrix4};
use serde::{Deserialize, Serialize};

use crate::gaussian::{symplectic_form, VACUUM_VAR};
use crate::protocol::{EnsembleResult, SamplingMode};
use crate::{Error, Result};

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Reconstructed 4x4 covariance matrix of the verification modes in the
/// order `X_VA, P_VA, X_VB, P_VB`, vacuum = identity.
///
/// Intra-modal entries (X_VA-P_VA and X_VB-P_VB) are pinned to exactly zero;
/// the four inter-modal covariances each come from the one detector setting
/// that measures that pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub gamma_normalized: Matrix4<f64>,
    pub standard_errors: Matrix4<f64>,
    /// Accepted sample counts for the settings (X,X), (X,P), (P,X), (P,P).
    pub samples_per_setting: [usize; 4],
}

impl CovarianceEstimate {
    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[4 * r + c] = self.gamma_normalized[(r, c)];
            }
        }
        out
    }
}

/// Aligned verification outcome pairs of one detector setting.
#[derive(Debug, Clone, Copy)]
pub struct SettingPairs<'a> {
    pub a: &'a [f64],
    pub b: &'a [f64],
}

/// The four tomography ensembles, labeled by what each detector measures.
#[derive(Debug, Clone, Copy)]
pub struct TomographyInput<'a> {
    pub xx: SettingPairs<'a>,
    pub xp: SettingPairs<'a>,
    pub px: SettingPairs<'a>,
    pub pp: SettingPairs<'a>,
}

/// Map an ensemble's settings onto the four standard tomography ensembles by
/// matching the configured angles against (0, 0), (0, pi/2), (pi/2, 0),
/// (pi/2, pi/2).
pub fn tomography_input(res: &EnsembleResult) -> Result<TomographyInput<'_>> {
    use std::f64::consts::FRAC_PI_2;
    let want = [
        (0.0, 0.0),
        (0.0, FRAC_PI_2),
        (FRAC_PI_2, 0.0),
        (FRAC_PI_2, FRAC_PI_2),
    ];
    let mut found: [Option<usize>; 4] = [None; 4];
    for (idx, &(a, b)) in res.settings.iter().enumerate() {
        for (w, &(wa, wb)) in want.iter().enumerate() {
            if (a - wa).abs() < 1e-9 && (b - wb).abs() < 1e-9 {
                found[w] = Some(idx);
            }
        }
    }
    let names = ["(X,X)", "(X,P)", "(P,X)", "(P,P)"];
    let pick = |w: usize| -> Result<SettingPairs<'_>> {
        let idx = found[w].ok_or_else(|| {
            Error::InvalidConfig(format!(
                "tomography needs a {} detector setting, none configured",
                names[w]
            ))
        })?;
        let s = &res.per_setting[idx];
        Ok(SettingPairs {
            a: &s.q_va,
            b: &s.q_vb,
        })
    };
    Ok(TomographyInput {
        xx: pick(0)?,
        xp: pick(1)?,
        px: pick(2)?,
        pp: pick(3)?,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance plus its distribution-free standard error
/// se^2 = (m4 - m2^2)/n.
fn variance_with_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in xs {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    let var = m2 / (n - 1.0);
    m2 /= n;
    m4 /= n;
    (var, ((m4 - m2 * m2).max(0.0) / n).sqrt())
}

/// Sample covariance (n-1 normalization) plus standard error
/// se^2 = (m22 - c^2)/n.
fn covariance_with_se(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (mut c, mut m22) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let p = (x - ma) * (y - mb);
        c += p;
        m22 += p * p;
    }
    let cov = c / (n - 1.0);
    c /= n;
    m22 /= n;
    (cov, ((m22 - c * c).max(0.0) / n).sqrt())
}

/// Reconstruct the normalized verification covariance matrix from the four
/// tomography ensembles.
///
/// Every setting must carry at least 2 accepted samples.
pub fn estimate_covariance(input: &TomographyInput) -> Result<CovarianceEstimate> {
    let counts = [input.xx, input.xp, input.px, input.pp];
    let names = ["(X,X)", "(X,P)", "(P,X)", "(P,P)"];
    let mut samples_per_setting = [0usize; 4];
    for (k, s) in counts.iter().enumerate() {
        if s.a.len() != s.b.len() {
            return Err(Error::InvalidConfig(format!(
                "setting {} has misaligned sample arrays",
                names[k]
            )));
        }
        if s.a.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "setting {} has {} accepted samples; need at least 2",
                names[k],
                s.a.len()
            )));
        }
        samples_per_setting[k] = s.a.len();
    }

    let mut g = Matrix4::zeros();
    let mut se = Matrix4::zeros();
    let mut put = |r: usize, c: usize, est: (f64, f64)| {
        g[(r, c)] = est.0 / VACUUM_VAR;
        g[(c, r)] = g[(r, c)];
        se[(r, c)] = est.1 / VACUUM_VAR;
        se[(c, r)] = se[(r, c)];
    };
    // variances: X quadratures from the (X,X) setting, P from (P,P)
    put(0, 0, variance_with_se(input.xx.a));
    put(2, 2, variance_with_se(input.xx.b));
    put(1, 1, variance_with_se(input.pp.a));
    put(3, 3, variance_with_se(input.pp.b));
    // inter-modal covariances, one setting each
    put(0, 2, covariance_with_se(input.xx.a, input.xx.b));
    put(0, 3, covariance_with_se(input.xp.a, input.xp.b));
    put(1, 2, covariance_with_se(input.px.a, input.px.b));
    put(1, 3, covariance_with_se(input.pp.a, input.pp.b));
    // intra-modal entries pinned to zero by construction

    Ok(CovarianceEstimate {
        gamma_normalized: g,
        standard_errors: se,
        samples_per_setting,
    })
}

/// Duan total variance from a reconstructed covariance matrix:
/// `I = [Var(X_VA+X_VB) + Var(P_VA-P_VB)] / (4 v0)`; vacuum gives exactly 1.
pub fn total_variance(est: &CovarianceEstimate) -> f64 {
    let g = &est.gamma_normalized;
    // entries are already in vacuum units, so each nonlocal variance has
    // vacuum value 2 and the normalization is a plain /4
    (g[(0, 0)] + g[(2, 2)] + 2.0 * g[(0, 2)] + g[(1, 1)] + g[(3, 3)] - 2.0 * g[(1, 3)]) / 4.0
}

/// The state is entangled (sufficient condition) exactly when I < 1.
pub fn duan_entangled(i: f64) -> bool {
    i < 1.0
}

/// Determinant of the normalized covariance matrix and the purity 1/sqrt(D),
/// with first-order error propagation over the eight free matrix entries.
///
/// D >= 1 for physical states with equality only for pure Gaussian states;
/// a non-positive determinant estimate is an error.
pub fn determinant_purity(est: &CovarianceEstimate) -> Result<(Estimate, Estimate)> {
    let g = &est.gamma_normalized;
    let d = g.determinant();
    if !(d > 0.0) {
        return Err(Error::Numerical(format!(
            "non-positive covariance determinant estimate {d}"
        )));
    }
    let inv = g
        .try_inverse()
        .ok_or_else(|| Error::Numerical("covariance estimate is singular".into()))?;
    // dD/dg_ij = D * inv[j,i]; symmetric off-diagonals vary together
    let mut var_d = 0.0;
    for r in 0..4 {
        for c in r..4 {
            let grad = if r == c {
                d * inv[(r, r)]
            } else {
                2.0 * d * inv[(r, c)]
            };
            var_d += (grad * est.standard_errors[(r, c)]).powi(2);
        }
    }
    let d_se = var_d.sqrt();
    let purity = 1.0 / d.sqrt();
    let purity_se = 0.5 * d.powf(-1.5) * d_se;
    Ok((
        Estimate { value: d, se: d_se },
        Estimate {
            value: purity,
            se: purity_se,
        },
    ))
}

/// Smallest symplectic eigenvalue of a (normalized) two-mode covariance
/// matrix, optionally after partial transposition of mode B.
///
/// Closed form: with blocks A, B, C of gamma and
/// `delta = det A + det B + 2 s det C` (s = -1 under partial transpose),
/// `nu_min^2 = (delta - sqrt(delta^2 - 4 det gamma)) / 2`.
pub(crate) fn two_mode_nu_min(gamma: &Matrix4<f64>, partial_transpose: bool) -> Result<f64> {
    let a = Matrix2::new(gamma[(0, 0)], gamma[(0, 1)], gamma[(1, 0)], gamma[(1, 1)]);
    let b = Matrix2::new(gamma[(2, 2)], gamma[(2, 3)], gamma[(3, 2)], gamma[(3, 3)]);
    let c = Matrix2::new(gamma[(0, 2)], gamma[(0, 3)], gamma[(1, 2)], gamma[(1, 3)]);
    let s = if partial_transpose { -1.0 } else { 1.0 };
    let delta = a.determinant() + b.determinant() + 2.0 * s * c.determinant();
    let det = gamma.determinant();
    let disc = delta * delta - 4.0 * det;
    if disc < -1e-9 * delta.abs().max(1.0) {
        return Err(Error::Numerical(format!(
            "two-mode symplectic spectrum is complex (discriminant {disc:.3e}); \
             the covariance estimate is too noisy to be a valid state"
        )));
    }
    let nu2 = 0.5 * (delta - disc.max(0.0).sqrt());
    if !(nu2 > 0.0) {
        return Err(Error::Numerical(format!(
            "non-positive squared symplectic eigenvalue {nu2:.3e}"
        )));
    }
    Ok(nu2.sqrt())
}

/// Logarithmic negativity with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogNegativity {
    /// E_N = max(0, -log2 nu_tilde); base-2 logarithm.
    pub e_n: Estimate,
    /// Smallest symplectic eigenvalue after partial transposition.
    pub nu_tilde: f64,
    /// Set when the *untransposed* matrix itself violates the physicality
    /// bound nu_min >= 1 beyond tolerance (an over-noisy estimate).
    pub warning: Option<String>,
}

/// Relative slack allowed on the physicality bound before a reconstruction
/// is flagged; absorbs ordinary estimator noise near pure states.
const PHYSICALITY_SLACK: f64 = 0.02;

/// Gaussian logarithmic negativity of the reconstructed state: partial
/// transpose of mode B, smallest symplectic eigenvalue `nu_tilde`,
/// `E_N = max(0, -log2 nu_tilde)`.
///
/// The standard error propagates the entry standard errors through a central
/// finite-difference gradient; it is reported as 0 where E_N is clamped at 0.
pub fn log_negativity(est: &CovarianceEstimate) -> Result<LogNegativity> {
    let nu_tilde = two_mode_nu_min(&est.gamma_normalized, true)?;
    let e_n = (-nu_tilde.log2()).max(0.0);

    let mut var = 0.0;
    if e_n > 0.0 {
        for r in 0..4 {
            for c in r..4 {
                let se = est.standard_errors[(r, c)];
                if se == 0.0 {
                    continue;
                }
                let h = 1e-6 * est.gamma_normalized[(r, c)].abs().max(1.0);
                let bump = |delta: f64| -> Result<f64> {
                    let mut g = est.gamma_normalized;
                    g[(r, c)] += delta;
                    g[(c, r)] = g[(r, c)];
                    let nu = two_mode_nu_min(&g, true)?;
                    Ok((-nu.log2()).max(0.0))
                };
                let grad = (bump(h)? - bump(-h)?) / (2.0 * h);
                var += (grad * se).powi(2);
            }
        }
    }

    let nu_min = two_mode_nu_min(&est.gamma_normalized, false)?;
    let warning = (nu_min < 1.0 - PHYSICALITY_SLACK).then(|| {
        format!(
            "reconstructed state violates the uncertainty bound: \
             smallest symplectic eigenvalue {nu_min:.4} < 1"
        )
    });

    Ok(LogNegativity {
        e_n: Estimate {
            value: e_n,
            se: var.sqrt(),
        },
        nu_tilde,
        warning,
    })
}

/// Excess kurtosis `m4/m2^2 - 3` of a sample, with the Gaussian-null
/// standard error sqrt(24/n). Requires at least 1000 samples.
pub fn gaussianity(samples: &[f64]) -> Result<Estimate> {
    let n = samples.len();
    if n < 1000 {
        return Err(Error::InsufficientData(format!(
            "kurtosis needs >= 1000 samples, got {n}"
        )));
    }
    let m = mean(samples);
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in samples {
        let d2 = (x - m) * (x - m);
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= n as f64;
    m4 /= n as f64;
    Ok(Estimate {
        value: m4 / (m2 * m2) - 3.0,
        se: (24.0 / n as f64).sqrt(),
    })
}

/// Everything the sweep reports about one ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub success_rate: Estimate,
    /// Var(X_VA + X_VB), natural units.
    pub var_xplus: Estimate,
    /// Var(P_VA - P_VB), natural units.
    pub var_pminus: Estimate,
    /// Duan total variance (vacuum = 1).
    pub total_variance: Estimate,
    /// det of the normalized covariance matrix.
    pub determinant: Estimate,
    pub purity: Estimate,
    pub log_negativity: Estimate,
    pub kurtosis_xplus: Estimate,
    pub kurtosis_pminus: Estimate,
    pub n_accepted: u64,
    pub n_total: u64,
    /// Physicality warning from the log-negativity reconstruction, if any.
    pub warning: Option<String>,
}

/// Assemble the full metrics report for one ensemble.
pub fn metrics_report(res: &EnsembleResult) -> Result<MetricsReport> {
    let input = tomography_input(res)?;
    let est = estimate_covariance(&input)?;

    let xplus: Vec<f64> = input.xx.a.iter().zip(input.xx.b).map(|(a, b)| a + b).collect();
    let pminus: Vec<f64> = input.pp.a.iter().zip(input.pp.b).map(|(a, b)| a - b).collect();
    let (vx, vx_se) = variance_with_se(&xplus);
    let (vp, vp_se) = variance_with_se(&pminus);

    // I = (Var(X+) + Var(P-)) / (4 v0); the two variance estimates share
    // shots in joint mode, so the cross term enters the error there.
    let norm = 4.0 * VACUUM_VAR;
    let mut var_i = vx_se * vx_se + vp_se * vp_se;
    if res.mode == SamplingMode::Joint {
        // joint mode: both nonlocal variances come from the same shots
        let n = xplus.len() as f64;
        let (mx, mp) = (mean(&xplus), mean(&pminus));
        let mut m22 = 0.0;
        for (a, b) in xplus.iter().zip(&pminus) {
            m22 += (a - mx).powi(2) * (b - mp).powi(2);
        }
        m22 /= n;
        let cov_vars = (m22 - vx * vp) / n;
        var_i += 2.0 * cov_vars;
    }
    let total = Estimate {
        value: (vx + vp) / norm,
        se: var_i.max(0.0).sqrt() / norm,
    };

    // Scalars that can fail on noisy or scarce statistics degrade to NaN
    // with a warning instead of suppressing the whole report: sweep rows
    // must be emitted (flagged), never silently dropped.
    let nan = Estimate {
        value: f64::NAN,
        se: f64::NAN,
    };
    let mut warnings: Vec<String> = Vec::new();
    let (det, purity) = determinant_purity(&est).unwrap_or_else(|e| {
        warnings.push(e.to_string());
        (nan, nan)
    });
    let logneg_e_n = match log_negativity(&est) {
        Ok(l) => {
            if let Some(w) = l.warning {
                warnings.push(w);
            }
            l.e_n
        }
        Err(e) => {
            warnings.push(e.to_string());
            nan
        }
    };
    let k_x = gaussianity(&xplus).unwrap_or(nan);
    let k_p = gaussianity(&pminus).unwrap_or(nan);

    let p = res.success_rate();
    let p_se = (p * (1.0 - p) / res.total as f64).sqrt();

    Ok(MetricsReport {
        success_rate: Estimate { value: p, se: p_se },
        var_xplus: Estimate { value: vx, se: vx_se },
        var_pminus: Estimate { value: vp, se: vp_se },
        total_variance: total,
        determinant: det,
        purity,
        log_negativity: logneg_e_n,
        kurtosis_xplus: k_x,
        kurtosis_pminus: k_p,
        n_accepted: res.accepted,
        n_total: res.total,
        warning: if warnings.is_empty() {
            None
        } else {
            Some(warnings.join("; "))
        },
    })
}

/// Brute-force symplectic minimum, used by tests to cross-check the closed
/// form in [`log_negativity`]. For positive-definite `gamma = L L^T` the
/// matrix `M = L^T Omega L` is antisymmetric and similar to `Omega gamma`,
/// so `M M^T` is symmetric with eigenvalues `nu^2` (each doubled); this
/// stays on the well-behaved symmetric eigensolver instead of a real Schur
/// iteration, which can fail to converge on the purely imaginary spectrum
/// of `Omega gamma`.
pub fn nu_min_bruteforce(gamma: &Matrix4<f64>, partial_transpose: bool) -> f64 {
    let mut g = DMatrix::zeros(4, 4);
    for r in 0..4 {
        for c in 0..4 {
            g[(r, c)] = gamma[(r, c)];
        }
    }
    if partial_transpose {
        // flip the sign of P_B (row/col 3) off-diagonals
        for k in 0..4 {
            if k != 3 {
                g[(3, k)] = -g[(3, k)];
                g[(k, 3)] = -g[(k, 3)];
            }
        }
    }
    let l = g
        .cholesky()
        .expect("brute-force check needs a positive-definite matrix")
        .unpack();
    let m = l.transpose() * symplectic_form(2) * &l;
    let sym = &m * m.transpose();
    nalgebra::SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .fold(f64::INFINITY, f64::min)
}
