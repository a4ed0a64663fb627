//! Parameter sweeps, dataset emission, the Monte Carlo/oracle verification
//! gate, and efficiency calibration.
//!
//! A sweep runs one ensemble per (sigma_pn, Q) grid point and writes
//! plot-ready dataset files: CSV with a fixed, contract-stable header, a
//! JSON-lines variant, and (for the covariance dataset) the full 4x4
//! matrices per point. Dataset files are byte-identical for identical
//! (spec, seed) regardless of worker count; the manifest carries wall-clock
//! timings and is exempt from that guarantee.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::gaussian::VACUUM_VAR;
use crate::metrics::{estimate_covariance, metrics_report, tomography_input, MetricsReport};
use crate::oracle::{
    oracle_curve, unconditional_trigger_variance, OracleMoments, QuadratureGrid, DEFAULT_GH_ORDER,
};
use crate::protocol::{run_ensemble, ProtocolConfig};
use crate::{Error, Result};

/// Fixed CSV column order; golden-file tests pin this string.
pub const CSV_HEADER: &str = "sigma_pn,Q,success_rate,var_xplus,var_pminus,I,D,purity,logneg,\
                              kurtosis,success_rate_se,var_xplus_se,var_pminus_se,I_se,D_se,\
                              purity_se,logneg_se,kurtosis_se,q_norm,n_accepted,low_stats";

/// Rows from fewer accepted shots than this carry the low-stats flag.
pub const LOW_STATS_THRESHOLD: u64 = 100;

/// Verification gate: any Monte Carlo/oracle z-score beyond this fails.
pub const VERIFY_Z_GATE: f64 = 4.0;

/// Doubling the quadrature order must move oracle results by less than
/// this, or the oracle itself is declared unconverged.
pub const ORACLE_CONVERGENCE_TOL: f64 = 1e-6;

/// Which dataset files a sweep emits. All selections share the same row
/// schema; `Fig3` additionally carries the per-point covariance matrices
/// in its JSON-lines file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSelection {
    Fig2a,
    Fig2b,
    Fig3,
    Fig4,
    All,
}

impl DatasetSelection {
    fn expand(self) -> Vec<DatasetSelection> {
        match self {
            DatasetSelection::All => vec![
                DatasetSelection::Fig2a,
                DatasetSelection::Fig2b,
                DatasetSelection::Fig3,
                DatasetSelection::Fig4,
            ],
            one => vec![one],
        }
    }

    fn stem(self) -> &'static str {
        match self {
            DatasetSelection::Fig2a => "fig2a",
            DatasetSelection::Fig2b => "fig2b",
            DatasetSelection::Fig3 => "fig3",
            DatasetSelection::Fig4 => "fig4",
            DatasetSelection::All => "all",
        }
    }
}

impl fmt::Display for DatasetSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.stem())
    }
}

impl FromStr for DatasetSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig2a" => Ok(DatasetSelection::Fig2a),
            "fig2b" => Ok(DatasetSelection::Fig2b),
            "fig3" => Ok(DatasetSelection::Fig3),
            "fig4" => Ok(DatasetSelection::Fig4),
            "all" => Ok(DatasetSelection::All),
            other => Err(Error::InvalidConfig(format!(
                "unknown dataset '{other}' (expected fig2a|fig2b|fig3|fig4|all)"
            ))),
        }
    }
}

/// Full description of a sweep: the base experiment plus the grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: ProtocolConfig,
    /// Phase-noise strengths; each is applied uniformly to all four channels.
    pub sigma_list: Vec<f64>,
    /// Trigger thresholds, strictly increasing; `inf` is the undistilled
    /// reference point.
    pub q_grid: Vec<f64>,
    pub outputs: DatasetSelection,
    pub out_dir: PathBuf,
    /// Gauss–Hermite order used wherever the oracle is consulted.
    pub gh_order: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            base: ProtocolConfig::default(),
            sigma_list: vec![0.1, 0.2, 0.3, 0.4, 0.497],
            q_grid: vec![0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.5, f64::INFINITY],
            outputs: DatasetSelection::All,
            out_dir: PathBuf::from("out"),
            gh_order: DEFAULT_GH_ORDER,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.sigma_list.is_empty() {
            return Err(Error::InvalidConfig("sigma_list is empty".into()));
        }
        if self.sigma_list.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "sigma_list must be finite and nonnegative, got {:?}",
                self.sigma_list
            )));
        }
        if self.q_grid.is_empty() {
            return Err(Error::InvalidConfig("q_grid is empty".into()));
        }
        if self.q_grid.iter().any(|q| !(*q > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "q_grid entries must be > 0, got {:?}",
                self.q_grid
            )));
        }
        if self.q_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidConfig(format!(
                "q_grid must be strictly increasing, got {:?}",
                self.q_grid
            )));
        }
        if self.gh_order < 2 {
            return Err(Error::InvalidConfig(format!(
                "gh_order must be >= 2, got {}",
                self.gh_order
            )));
        }
        Ok(())
    }
}

/// One sweep grid point. `metrics` is absent when the point had too few
/// accepted shots to reconstruct anything (the row is still emitted).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sigma_pn: f64,
    pub q: f64,
    /// Q divided by the unconditional standard deviation of the trigger sum.
    pub q_norm: f64,
    pub n_accepted: u64,
    pub n_total: u64,
    pub low_stats: bool,
    pub metrics: Option<MetricsReport>,
    /// Normalized 4x4 covariance matrix, row-major (covariance dataset only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<[f64; 16]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_se: Option<[f64; 16]>,
}

/// Per-point bookkeeping for the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointStat {
    pub sigma_pn: f64,
    pub q: f64,
    pub runtime_ms: u64,
    pub n_accepted: u64,
    /// Largest finite standard error among the point's reported scalars.
    pub max_se: f64,
}

/// Run provenance: enough to trace every data row back to its inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub spec: SweepSpec,
    pub seed: u64,
    pub code_version: String,
    pub points: Vec<PointStat>,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub manifest: RunManifest,
    /// Files written, in emission order.
    pub files: Vec<PathBuf>,
}

/// Run the full grid and write the selected dataset files plus
/// `manifest.json` under `spec.out_dir`.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutput> {
    let (rows, manifest) = collect_rows(spec)?;
    let files = write_outputs(spec, &rows, &manifest)?;
    Ok(SweepOutput {
        rows,
        manifest,
        files,
    })
}

/// Grid execution without any file output.
pub fn collect_rows(spec: &SweepSpec) -> Result<(Vec<SweepRow>, RunManifest)> {
    spec.validate()?;
    let want_gamma = matches!(
        spec.outputs,
        DatasetSelection::Fig3 | DatasetSelection::All
    );
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &sigma in &spec.sigma_list {
        let base = spec.base.clone().with_sigma(sigma)?;
        let q_norm_denom = unconditional_trigger_variance(&base)?.sqrt();
        for &q in &spec.q_grid {
            let cfg = ProtocolConfig { q, ..base.clone() };
            let start = Instant::now();
            let row = run_point(&cfg, sigma, q / q_norm_denom, want_gamma)?;
            points.push(PointStat {
                sigma_pn: sigma,
                q,
                runtime_ms: start.elapsed().as_millis() as u64,
                n_accepted: row.n_accepted,
                max_se: max_finite_se(row.metrics.as_ref()),
            });
            rows.push(row);
        }
    }
    let manifest = RunManifest {
        spec: spec.clone(),
        seed: spec.base.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        points,
    };
    Ok((rows, manifest))
}

fn run_point(cfg: &ProtocolConfig, sigma: f64, q_norm: f64, want_gamma: bool) -> Result<SweepRow> {
    let res = match run_ensemble(cfg) {
        Ok(res) => res,
        // an empty ensemble is a flagged row, not a dropped point
        Err(Error::EmptyEnsemble { total }) => {
            return Ok(SweepRow {
                sigma_pn: sigma,
                q: cfg.q,
                q_norm,
                n_accepted: 0,
                n_total: total,
                low_stats: true,
                metrics: None,
                gamma: None,
                gamma_se: None,
            })
        }
        Err(e) => return Err(e),
    };
    let metrics = match metrics_report(&res) {
        Ok(m) => Some(m),
        Err(Error::InsufficientData(_)) => None,
        Err(e) => return Err(e),
    };
    let (gamma, gamma_se) = if want_gamma && metrics.is_some() {
        match tomography_input(&res).and_then(|input| estimate_covariance(&input)) {
            Ok(est) => {
                let mut se = [0.0; 16];
                for r in 0..4 {
                    for c in 0..4 {
                        se[4 * r + c] = est.standard_errors[(r, c)];
                    }
                }
                (Some(est.to_row_major()), Some(se))
            }
            Err(Error::InsufficientData(_)) => (None, None),
            Err(e) => return Err(e),
        }
    } else {
        (None, None)
    };
    Ok(SweepRow {
        sigma_pn: sigma,
        q: cfg.q,
        q_norm,
        n_accepted: res.accepted,
        n_total: res.total,
        low_stats: res.accepted < LOW_STATS_THRESHOLD,
        metrics,
        gamma,
        gamma_se,
    })
}

fn max_finite_se(metrics: Option<&MetricsReport>) -> f64 {
    let Some(m) = metrics else { return f64::NAN };
    [
        m.success_rate.se,
        m.var_xplus.se,
        m.var_pminus.se,
        m.total_variance.se,
        m.determinant.se,
        m.purity.se,
        m.log_negativity.se,
        m.kurtosis_xplus.se,
    ]
    .into_iter()
    .filter(|se| se.is_finite())
    .fold(f64::NAN, f64::max)
}

/// One CSV data line in the [`CSV_HEADER`] column order. Floats use Rust's
/// shortest-roundtrip formatting; missing metrics render as `NaN`.
pub fn csv_line(row: &SweepRow) -> String {
    let nan = crate::metrics::Estimate {
        value: f64::NAN,
        se: f64::NAN,
    };
    let get = |f: fn(&MetricsReport) -> crate::metrics::Estimate| {
        row.metrics.as_ref().map(f).unwrap_or(nan)
    };
    let success = get(|m| m.success_rate);
    let vx = get(|m| m.var_xplus);
    let vp = get(|m| m.var_pminus);
    let i = get(|m| m.total_variance);
    let d = get(|m| m.determinant);
    let pu = get(|m| m.purity);
    let en = get(|m| m.log_negativity);
    let ku = get(|m| m.kurtosis_xplus);
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        row.sigma_pn,
        row.q,
        success.value,
        vx.value,
        vp.value,
        i.value,
        d.value,
        pu.value,
        en.value,
        ku.value,
        success.se,
        vx.se,
        vp.se,
        i.se,
        d.se,
        pu.se,
        en.se,
        ku.se,
        row.q_norm,
        row.n_accepted,
        row.low_stats
    )
}

fn jsonl_line(row: &SweepRow, with_gamma: bool) -> Result<String> {
    let mut slim;
    let row = if with_gamma {
        row
    } else {
        slim = row.clone();
        slim.gamma = None;
        slim.gamma_se = None;
        &slim
    };
    let mut value = serde_json::to_value(row)
        .map_err(|e| Error::Numerical(format!("JSON encoding failed: {e}")))?;
    // JSON has no infinity literal; keep the undistilled Q reading parseable
    if !row.q.is_finite() {
        value["q"] = serde_json::Value::String(row.q.to_string());
    }
    serde_json::to_string(&value).map_err(|e| Error::Numerical(format!("JSON encoding failed: {e}")))
}

fn write_outputs(spec: &SweepSpec, rows: &[SweepRow], manifest: &RunManifest) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(&spec.out_dir)?;
    let mut files = Vec::new();
    for ds in spec.outputs.expand() {
        let with_gamma = ds == DatasetSelection::Fig3;
        let mut csv = String::from(CSV_HEADER);
        csv.push('\n');
        let mut jsonl = String::new();
        for row in rows {
            csv.push_str(&csv_line(row));
            csv.push('\n');
            jsonl.push_str(&jsonl_line(row, with_gamma)?);
            jsonl.push('\n');
        }
        let csv_path = spec.out_dir.join(format!("{}.csv", ds.stem()));
        let jsonl_path = spec.out_dir.join(format!("{}.jsonl", ds.stem()));
        std::fs::write(&csv_path, csv)?;
        std::fs::write(&jsonl_path, jsonl)?;
        files.push(csv_path);
        files.push(jsonl_path);
    }
    let manifest_path = spec.out_dir.join("manifest.json");
    let body = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Numerical(format!("JSON encoding failed: {e}")))?;
    std::fs::write(&manifest_path, body + "\n")?;
    files.push(manifest_path);
    Ok(files)
}

/// One compared quantity at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyEntry {
    pub name: String,
    pub mc: f64,
    pub mc_se: f64,
    pub oracle: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyPoint {
    pub sigma_pn: f64,
    pub q: f64,
    /// Oracle self-consistency: result shift under order doubling.
    pub convergence_delta: f64,
    pub entries: Vec<VerifyEntry>,
    pub max_abs_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub points: Vec<VerifyPoint>,
    pub max_abs_z: f64,
    pub z_gate: f64,
    pub pass: bool,
}

fn z_score(mc: f64, se: f64, oracle: f64) -> f64 {
    let diff = mc - oracle;
    if se > 0.0 {
        diff / se
    } else if diff.abs() < 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Run Monte Carlo and the oracle over the grid and compare success rates
/// and every reported second moment. Oracle non-convergence is its own
/// error ([`Error::OracleConvergence`]), distinct from a Monte Carlo
/// disagreement, which yields `pass = false` in the report.
pub fn verify(spec: &SweepSpec) -> Result<VerifyReport> {
    spec.validate()?;
    let grid = QuadratureGrid::new(spec.gh_order)?;
    let fine = QuadratureGrid::new(2 * spec.gh_order)?;
    let mut points = Vec::new();
    for &sigma in &spec.sigma_list {
        let base = spec.base.clone().with_sigma(sigma)?;
        let coarse_curve = oracle_curve(&base, &spec.q_grid, &grid)?;
        let fine_curve = oracle_curve(&base, &spec.q_grid, &fine)?;
        for (k, &q) in spec.q_grid.iter().enumerate() {
            let oracle = &coarse_curve[k];
            let delta = (oracle.success_rate - fine_curve[k].success_rate)
                .abs()
                .max((oracle.total_variance - fine_curve[k].total_variance).abs());
            if !(delta < ORACLE_CONVERGENCE_TOL) {
                return Err(Error::OracleConvergence(format!(
                    "oracle unconverged at sigma_pn = {sigma}, Q = {q}: order \
                     {} -> {} moved results by {delta:.3e} (tolerance {ORACLE_CONVERGENCE_TOL:.1e}); \
                     raise gh_order",
                    grid.order(),
                    fine.order()
                )));
            }
            let cfg = ProtocolConfig { q, ..base.clone() };
            points.push(verify_point(&cfg, sigma, delta, oracle)?);
        }
    }
    let max_abs_z = points
        .iter()
        .map(|p| p.max_abs_z)
        .fold(0.0f64, f64::max);
    Ok(VerifyReport {
        points,
        max_abs_z,
        z_gate: VERIFY_Z_GATE,
        pass: max_abs_z <= VERIFY_Z_GATE,
    })
}

fn verify_point(
    cfg: &ProtocolConfig,
    sigma: f64,
    convergence_delta: f64,
    oracle: &OracleMoments,
) -> Result<VerifyPoint> {
    let res = run_ensemble(cfg)?;
    let report = metrics_report(&res)?;
    let est = estimate_covariance(&tomography_input(&res)?)?;

    let mut entries = vec![
        VerifyEntry {
            name: "success_rate".into(),
            mc: report.success_rate.value,
            mc_se: report.success_rate.se,
            oracle: oracle.success_rate,
            z: z_score(
                report.success_rate.value,
                report.success_rate.se,
                oracle.success_rate,
            ),
        },
        VerifyEntry {
            name: "var_xplus".into(),
            mc: report.var_xplus.value,
            mc_se: report.var_xplus.se,
            oracle: oracle.var_xplus,
            z: z_score(report.var_xplus.value, report.var_xplus.se, oracle.var_xplus),
        },
        VerifyEntry {
            name: "var_pminus".into(),
            mc: report.var_pminus.value,
            mc_se: report.var_pminus.se,
            oracle: oracle.var_pminus,
            z: z_score(
                report.var_pminus.value,
                report.var_pminus.se,
                oracle.var_pminus,
            ),
        },
    ];
    // the eight free entries of the normalized covariance matrix (the
    // intra-modal pair is pinned to zero on both sides by convention)
    for (r, c) in [(0, 0), (1, 1), (2, 2), (3, 3), (0, 2), (0, 3), (1, 2), (1, 3)] {
        let mc = est.gamma_normalized[(r, c)];
        let se = est.standard_errors[(r, c)];
        let orc = oracle.moments[(r, c)] / VACUUM_VAR;
        entries.push(VerifyEntry {
            name: format!("gamma[{r},{c}]"),
            mc,
            mc_se: se,
            oracle: orc,
            z: z_score(mc, se, orc),
        });
    }
    let max_abs_z = entries.iter().map(|e| e.z.abs()).fold(0.0f64, f64::max);
    Ok(VerifyPoint {
        sigma_pn: sigma,
        q: cfg.q,
        convergence_delta,
        entries,
        max_abs_z,
    })
}

/// Analytic no-noise, undistilled total variance as a function of the
/// per-beam efficiency: `I(eta) = 1 + eta (a - v0) / (2 v0)` with `a` the
/// squeezed input variance. Antisqueezing cancels: `Var(P_A - P_B)` is the
/// vacuum value for any eta.
pub fn undistilled_total_variance(eta: f64, squeezing_db: f64) -> f64 {
    let a = VACUUM_VAR * 10f64.powf(-squeezing_db / 10.0);
    1.0 + eta * (a - VACUUM_VAR) / (2.0 * VACUUM_VAR)
}

/// Find the per-beam efficiency whose no-noise undistilled total variance
/// equals `target_i`, by bisection on the analytic expression. The
/// reachable range is [I(1), 1); targets within 1e-4 below I(1) snap to
/// eta = 1.
pub fn calibrate_eta(target_i: f64, squeezing_db: f64) -> Result<f64> {
    if !(squeezing_db > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "calibration needs nonzero squeezing, got {squeezing_db} dB"
        )));
    }
    let floor = undistilled_total_variance(1.0, squeezing_db);
    if target_i >= 1.0 || target_i < floor - 1e-4 {
        return Err(Error::InvalidConfig(format!(
            "target I = {target_i} unreachable: I(eta) spans [{floor:.6}, 1) for eta in (0, 1]"
        )));
    }
    if target_i <= floor {
        return Ok(1.0);
    }
    // I(eta) is strictly decreasing; bisect far below the 1e-4 contract
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if undistilled_total_variance(mid, squeezing_db) > target_i {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
