//! Semi-analytic oracle: deterministic success probabilities and conditional
//! second moments, computed by Gauss–Hermite quadrature over the four phase
//! angles instead of Monte Carlo.
//!
//! For fixed channel phases the whole experiment is Gaussian, so everything
//! is closed-form: the trigger sum `S = X_TA + X_TB` is normal with variance
//! `sigma_S^2(theta)`, the inner acceptance probability is
//! `erf(Q / (sigma_S sqrt(2)))`, and the accepted conditional covariance
//! follows from truncated-normal variance shrinkage along the regression of
//! each verification quadrature on S:
//!
//! ```text
//! Var(S | |S|<Q) = sigma_S^2 * t,  t = 1 - 2 q phi(q) / (2 Phi(q) - 1),
//! q = Q / sigma_S,
//! M(theta) = Sigma_V(theta) - (1 - t) c c^T / sigma_S^2,
//! ```
//!
//! with `c = Cov(v, S)`. The outer phase average is an acceptance-weighted
//! mixture evaluated on a tensor-product Gauss–Hermite grid. None of this
//! shares code with the sampling path: copy moments are assembled from
//! scalar trigonometric formulas, so a sign or convention error in either
//! implementation shows up as a Monte Carlo/oracle discrepancy.
//!
//! The only protocol assumption baked in is the *balanced* distillation
//! beam splitter; a corrupted `distill_bs_transmittance` in the Monte Carlo
//! therefore drifts away from the oracle, which is what the verification
//! gate is designed to detect.

use nalgebra::Matrix4;

use crate::gaussian::VACUUM_VAR;
use crate::metrics::two_mode_nu_min;
use crate::protocol::ProtocolConfig;
use crate::{Error, Result};

/// Default Gauss–Hermite order per phase angle; overkill for every
/// configuration in the test suite (doubling it moves results by < 1e-8).
pub const DEFAULT_GH_ORDER: usize = 40;

/// Gauss–Hermite nodes and weights for integrals against exp(-t^2)
/// (physicists' convention, sum of weights = sqrt(pi)).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    /// Build the order-point rule by the Golub–Welsch method: nodes are the
    /// eigenvalues of the Jacobi matrix (off-diagonal `sqrt(k/2)`), weights
    /// come from the squared first components of its eigenvectors.
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::InvalidConfig(format!(
                "quadrature order must be >= 2, got {order}"
            )));
        }
        let mut jacobi = nalgebra::DMatrix::zeros(order, order);
        for k in 1..order {
            let b = (k as f64 / 2.0).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = nalgebra::SymmetricEigen::new(jacobi);
        let mu0 = std::f64::consts::PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|k| {
                let node = eig.eigenvalues[k];
                let w = mu0 * eig.eigenvectors[(0, k)].powi(2);
                (node, w)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let grid = Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        };
        let sum: f64 = grid.weights.iter().sum();
        if (sum - mu0).abs() > 1e-12 || grid.weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::OracleConvergence(format!(
                "Gauss-Hermite weights failed the normalization check (sum {sum})"
            )));
        }
        Ok(grid)
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Angles and probability weights for theta ~ N(0, sigma^2):
    /// theta_k = sqrt(2) sigma t_k, weight w_k / sqrt(pi) (weights sum to 1).
    fn for_sigma(&self, sigma: f64) -> (Vec<f64>, Vec<f64>) {
        let s = std::f64::consts::SQRT_2 * sigma;
        let inv = 1.0 / std::f64::consts::PI.sqrt();
        (
            self.nodes.iter().map(|&t| s * t).collect(),
            self.weights.iter().map(|&w| w * inv).collect(),
        )
    }
}

/// Second moments of one copy's output pair (A, B) rotated by channel
/// phases (theta_a, theta_b).
#[derive(Debug, Clone, Copy, Default)]
struct CopyMoments {
    vxa: f64,
    vpa: f64,
    cxpa: f64,
    vxb: f64,
    vpb: f64,
    cxpb: f64,
    cxx: f64,
    cxp: f64,
    cpx: f64,
    cpp: f64,
}

/// Base (unrotated) copy moments after preparation and per-beam loss:
/// `alpha = Var(X_A) = Var(X_B)`, `beta` likewise for P, `cx`/`cp` the
/// inter-beam covariances.
fn base_copy_moments(cfg: &ProtocolConfig) -> (f64, f64, f64, f64) {
    let v = VACUUM_VAR;
    let a = v * 10f64.powf(-cfg.squeezing_db / 10.0);
    let b = v * 10f64.powf(cfg.antisqueezing_db / 10.0);
    let eta = cfg.eta;
    (
        eta * (a + v) / 2.0 + (1.0 - eta) * v,
        eta * (b + v) / 2.0 + (1.0 - eta) * v,
        eta * (a - v) / 2.0,
        eta * (b - v) / 2.0,
    )
}

/// Phase-averaged (unconditional) variance of the trigger sum
/// `S = X_TA + X_TB`; `Q / sqrt(Var S)` is the natural dimensionless
/// reading of the threshold.
pub fn unconditional_trigger_variance(cfg: &ProtocolConfig) -> Result<f64> {
    cfg.validate()?;
    let (alpha, beta, cx, _) = base_copy_moments(cfg);
    let s = cfg.noise.sigma;
    // half the sum of the four phase-averaged beam variances, plus each
    // copy's averaged X-X covariance cx * coh1(sig_a) * coh1(sig_b)
    let mut var = 0.0;
    for sigma in s {
        var += 0.5 * crate::noise::phase_averaged_moments(alpha, beta, 0.0, sigma).var_x;
    }
    let coh1 = |sigma: f64| (-0.5 * sigma * sigma).exp();
    var += cx * coh1(s[0]) * coh1(s[1]);
    var += cx * coh1(s[2]) * coh1(s[3]);
    Ok(var)
}

/// Table of rotated copy moments over the (theta_a, theta_b) node grid,
/// with the joint probability weight of each pair.
fn copy_table(
    alpha: f64,
    beta: f64,
    cx: f64,
    cp: f64,
    angles_a: &(Vec<f64>, Vec<f64>),
    angles_b: &(Vec<f64>, Vec<f64>),
) -> (Vec<CopyMoments>, Vec<f64>) {
    let mut table = Vec::with_capacity(angles_a.0.len() * angles_b.0.len());
    let mut weights = Vec::with_capacity(table.capacity());
    for (&ta, &wa) in angles_a.0.iter().zip(&angles_a.1) {
        let (ca, sa) = (ta.cos(), ta.sin());
        for (&tb, &wb) in angles_b.0.iter().zip(&angles_b.1) {
            let (cb, sb) = (tb.cos(), tb.sin());
            table.push(CopyMoments {
                vxa: alpha * ca * ca + beta * sa * sa,
                vpa: alpha * sa * sa + beta * ca * ca,
                cxpa: (beta - alpha) * sa * ca,
                vxb: alpha * cb * cb + beta * sb * sb,
                vpb: alpha * sb * sb + beta * cb * cb,
                cxpb: (beta - alpha) * sb * cb,
                cxx: cx * ca * cb + cp * sa * sb,
                cxp: -cx * ca * sb + cp * sa * cb,
                cpx: -cx * sa * cb + cp * ca * sb,
                cpp: cx * sa * sb + cp * ca * cb,
            });
            weights.push(wa * wb);
        }
    }
    (table, weights)
}

/// Neumaier compensated accumulator: node loops sum millions of terms and
/// the determinism contract asks for 1e-12 reproducibility.
#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    sum: f64,
    comp: f64,
}

impl Acc {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        self.comp += if self.sum.abs() >= x.abs() {
            (self.sum - t) + x
        } else {
            (x - t) + self.sum
        };
        self.sum = t;
    }

    #[inline]
    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Oracle output for one trigger threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMoments {
    pub q: f64,
    pub success_rate: f64,
    /// Conditional second moments of (X_VA, P_VA, X_VB, P_VB) given
    /// acceptance, natural quadrature units.
    pub moments: Matrix4<f64>,
    pub var_xplus: f64,
    pub var_pminus: f64,
    /// Duan total variance (vacuum = 1).
    pub total_variance: f64,
    /// Determinant of the normalized, intra-modal-pinned covariance matrix
    /// (same convention as the tomography estimator).
    pub determinant: f64,
    pub purity: f64,
    pub log_negativity: f64,
}

/// Acceptance probability at the configured threshold.
pub fn oracle_success_rate(cfg: &ProtocolConfig, grid: &QuadratureGrid) -> Result<f64> {
    Ok(oracle_curve(cfg, &[cfg.q], grid)?[0].success_rate)
}

/// Conditional verification moments at the configured threshold.
pub fn oracle_conditional_moments(
    cfg: &ProtocolConfig,
    grid: &QuadratureGrid,
) -> Result<OracleMoments> {
    Ok(oracle_curve(cfg, &[cfg.q], grid)?.remove(0))
}

/// Evaluate the oracle for several thresholds in one pass over the node
/// grid (the expensive part is Q-independent).
pub fn oracle_curve(
    cfg: &ProtocolConfig,
    qs: &[f64],
    grid: &QuadratureGrid,
) -> Result<Vec<OracleMoments>> {
    cfg.validate()?;
    if qs.is_empty() {
        return Err(Error::InvalidConfig("no thresholds requested".into()));
    }
    for &q in qs {
        if !(q > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "trigger threshold Q must be > 0, got {q}"
            )));
        }
    }

    let (alpha, beta, cx, cp) = base_copy_moments(cfg);
    let s = cfg.noise.sigma;
    let (t1, w1) = copy_table(
        alpha,
        beta,
        cx,
        cp,
        &grid.for_sigma(s[0]),
        &grid.for_sigma(s[1]),
    );
    let (t2, w2) = copy_table(
        alpha,
        beta,
        cx,
        cp,
        &grid.for_sigma(s[2]),
        &grid.for_sigma(s[3]),
    );

    // accumulators per threshold: acceptance mass and the 10 independent
    // conditional second moments, ordered
    // xa_xa, xa_pa, xa_xb, xa_pb, pa_pa, pa_xb, pa_pb, xb_xb, xb_pb, pb_pb
    let nq = qs.len();
    let mut p_acc = vec![Acc::default(); nq];
    let mut m_acc = vec![[Acc::default(); 10]; nq];
    // total node mass; success rates are normalized by it so that Q -> inf
    // gives exactly 1 instead of the weights' rounding residue
    let mut w_acc = Acc::default();
    let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();

    for (e, &we) in t1.iter().zip(&w1) {
        for (f, &wf) in t2.iter().zip(&w2) {
            let w = we * wf;
            w_acc.add(w);
            let var_s = 0.5 * (e.vxa + e.vxb + f.vxa + f.vxb) + e.cxx + f.cxx;
            let sd = var_s.sqrt();

            // Sigma_V entries (minus ports of both splitters)
            let sv = [
                0.5 * (e.vxa + f.vxa),   // xa_xa
                0.5 * (e.cxpa + f.cxpa), // xa_pa
                0.5 * (e.cxx + f.cxx),   // xa_xb
                0.5 * (e.cxp + f.cxp),   // xa_pb
                0.5 * (e.vpa + f.vpa),   // pa_pa
                0.5 * (e.cpx + f.cpx),   // pa_xb
                0.5 * (e.cpp + f.cpp),   // pa_pb
                0.5 * (e.vxb + f.vxb),   // xb_xb
                0.5 * (e.cxpb + f.cxpb), // xb_pb
                0.5 * (e.vpb + f.vpb),   // pb_pb
            ];
            // c = Cov(v, S): the copy-antisymmetric halves
            let c = [
                0.5 * ((e.vxa - f.vxa) + (e.cxx - f.cxx)),   // xa
                0.5 * ((e.cxpa - f.cxpa) + (e.cpx - f.cpx)), // pa
                0.5 * ((e.cxx - f.cxx) + (e.vxb - f.vxb)),   // xb
                0.5 * ((e.cxp - f.cxp) + (e.cxpb - f.cxpb)), // pb
            ];
            // products c_i c_j in the same 10-entry order as sv
            let cc = [
                c[0] * c[0],
                c[0] * c[1],
                c[0] * c[2],
                c[0] * c[3],
                c[1] * c[1],
                c[1] * c[2],
                c[1] * c[3],
                c[2] * c[2],
                c[2] * c[3],
                c[3] * c[3],
            ];

            for (k, &q_thr) in qs.iter().enumerate() {
                let (p, shrink) = if q_thr.is_infinite() {
                    (1.0, 0.0)
                } else {
                    let q = q_thr / sd;
                    let p = libm::erf(q / std::f64::consts::SQRT_2);
                    let phi = (-0.5 * q * q).exp() * inv_sqrt_2pi;
                    // Var(S | |S|<Q) = var_s * t
                    let t = 1.0 - 2.0 * q * phi / p;
                    (p, (1.0 - t) / var_s)
                };
                let wp = w * p;
                p_acc[k].add(wp);
                for (m, (&base, &prod)) in m_acc[k].iter_mut().zip(sv.iter().zip(&cc)) {
                    m.add(wp * (base - shrink * prod));
                }
            }
        }
    }

    let w_total = w_acc.total();
    qs.iter()
        .enumerate()
        .map(|(k, &q)| {
            let p = p_acc[k].total();
            if !(p > 0.0) {
                return Err(Error::Numerical(format!(
                    "acceptance probability vanishes at Q = {q}"
                )));
            }
            let m = &m_acc[k];
            let e = |idx: usize| m[idx].total() / p;
            let moments = Matrix4::new(
                e(0), e(1), e(2), e(3), //
                e(1), e(4), e(5), e(6), //
                e(2), e(5), e(7), e(8), //
                e(3), e(6), e(8), e(9),
            );
            Ok(finish_point(q, p / w_total, moments))
        })
        .collect()
}

fn finish_point(q: f64, success: f64, moments: Matrix4<f64>) -> OracleMoments {
    let var_xplus = moments[(0, 0)] + moments[(2, 2)] + 2.0 * moments[(0, 2)];
    let var_pminus = moments[(1, 1)] + moments[(3, 3)] - 2.0 * moments[(1, 3)];
    let total_variance = (var_xplus + var_pminus) / (4.0 * VACUUM_VAR);

    // scalar state metrics use the tomography convention: normalized by the
    // vacuum variance, intra-modal covariances pinned to zero
    let mut g = moments / VACUUM_VAR;
    g[(0, 1)] = 0.0;
    g[(1, 0)] = 0.0;
    g[(2, 3)] = 0.0;
    g[(3, 2)] = 0.0;
    let determinant = g.determinant();
    let purity = 1.0 / determinant.sqrt();
    let log_negativity = two_mode_nu_min(&g, true)
        .map(|nu| (-nu.log2()).max(0.0))
        .unwrap_or(f64::NAN);

    OracleMoments {
        q,
        success_rate: success,
        moments,
        var_xplus,
        var_pminus,
        total_variance,
        determinant,
        purity,
        log_negativity,
    }
}

/// Self-check: largest change in success rate and total variance when the
/// quadrature order doubles. Converged configurations give < 1e-8.
pub fn convergence_delta(cfg: &ProtocolConfig, grid: &QuadratureGrid) -> Result<f64> {
    let fine = QuadratureGrid::new(2 * grid.order())?;
    let a = oracle_conditional_moments(cfg, grid)?;
    let b = oracle_conditional_moments(cfg, &fine)?;
    Ok((a.success_rate - b.success_rate)
        .abs()
        .max((a.total_variance - b.total_variance).abs()))
}
