//! Flat key/value config files.
//!
//! Keys mirror the [`ProtocolConfig`](crate::protocol::ProtocolConfig) and
//! [`SweepSpec`](crate::sweep::SweepSpec) field names; values are plain
//! text. `#` starts a comment, blank lines are skipped, later keys override
//! earlier ones. CLI flags are applied on top of whatever the file set.
//!
//! ```text
//! # experiment
//! squeezing_db     = 4.5
//! antisqueezing_db = 8.0
//! eta              = 0.8525
//! n_shots          = 1000000
//! seed             = 7
//! sampling_mode    = per-setting
//!
//! # sweep grids ("sigma_pn = 0.3" is shorthand for a one-entry sigma_list)
//! sigma_list = 0.1, 0.2, 0.3, 0.4, 0.497
//! q_grid     = 0.1, 0.25, 0.5, 1.0, inf
//! datasets   = all
//! out_dir    = out
//! gh_order   = 40
//! ```

use std::path::{Path, PathBuf};

use crate::protocol::SamplingMode;
use crate::sweep::SweepSpec;
use crate::{Error, Result};

/// Parse config text into a spec, starting from the defaults.
pub fn parse_spec(text: &str) -> Result<SweepSpec> {
    let mut spec = SweepSpec::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::InvalidConfig(format!(
                "line {}: expected 'key = value', got '{raw}'",
                lineno + 1
            )));
        };
        apply_key(&mut spec, key.trim(), value.trim())
            .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", lineno + 1)))?;
    }
    Ok(spec)
}

/// Read and parse a config file.
pub fn load_spec(path: &Path) -> Result<SweepSpec> {
    parse_spec(&std::fs::read_to_string(path)?)
}

/// Apply one key/value pair to a spec. Unknown keys are errors: a typo must
/// never silently run the default experiment.
pub fn apply_key(spec: &mut SweepSpec, key: &str, value: &str) -> Result<()> {
    match key {
        "squeezing_db" => spec.base.squeezing_db = parse_f64(key, value)?,
        "antisqueezing_db" => spec.base.antisqueezing_db = parse_f64(key, value)?,
        "eta" => spec.base.eta = parse_f64(key, value)?,
        "q" => spec.q_grid = vec![parse_f64(key, value)?],
        "q_grid" => spec.q_grid = parse_list(key, value)?,
        "sigma_pn" => spec.sigma_list = vec![parse_f64(key, value)?],
        "sigma_list" => spec.sigma_list = parse_list(key, value)?,
        "n_shots" => spec.base.n_shots = parse_u64(key, value)?,
        "seed" => spec.base.seed = parse_u64(key, value)?,
        "sampling_mode" => spec.base.sampling_mode = parse_sampling_mode(value)?,
        "distill_bs_transmittance" => {
            spec.base.distill_bs_transmittance = parse_f64(key, value)?
        }
        "bhd_settings" => spec.base.bhd_settings = parse_settings(value)?,
        "datasets" | "outputs" => spec.outputs = value.parse()?,
        "out_dir" => spec.out_dir = PathBuf::from(value),
        "gh_order" => {
            spec.gh_order = value.parse().map_err(|_| {
                Error::InvalidConfig(format!("gh_order: expected an integer, got '{value}'"))
            })?
        }
        other => {
            return Err(Error::InvalidConfig(format!("unknown key '{other}'")));
        }
    }
    Ok(())
}

pub fn parse_sampling_mode(value: &str) -> Result<SamplingMode> {
    match value {
        "per-setting" => Ok(SamplingMode::PerSetting),
        "joint" => Ok(SamplingMode::Joint),
        other => Err(Error::InvalidConfig(format!(
            "sampling_mode must be 'per-setting' or 'joint', got '{other}'"
        ))),
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value.parse().map_err(|_| {
        Error::InvalidConfig(format!("{key}: expected a number, got '{value}'"))
    })
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value.parse().map_err(|_| {
        Error::InvalidConfig(format!("{key}: expected a nonnegative integer, got '{value}'"))
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|item| parse_f64(key, item.trim()))
        .collect()
}

/// Detector settings as comma-separated `phi_a:phi_b` radian pairs.
fn parse_settings(value: &str) -> Result<Vec<(f64, f64)>> {
    value
        .split(',')
        .map(|pair| {
            let Some((a, b)) = pair.split_once(':') else {
                return Err(Error::InvalidConfig(format!(
                    "bhd_settings: expected 'phi_a:phi_b', got '{pair}'"
                )));
            };
            Ok((
                parse_f64("bhd_settings", a.trim())?,
                parse_f64("bhd_settings", b.trim())?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::DatasetSelection;

    #[test]
    fn full_file_round_trip() {
        let text = "\
            # experiment\n\
            squeezing_db = 3.0\n\
            antisqueezing_db = 6.5   # inline comment\n\
            eta = 0.9\n\
            n_shots = 5000\n\
            seed = 42\n\
            sampling_mode = joint\n\
            \n\
            sigma_list = 0.1, 0.3\n\
            q_grid = 0.2, 0.8, inf\n\
            datasets = fig3\n\
            out_dir = /tmp/somewhere\n\
            gh_order = 24\n";
        let spec = parse_spec(text).unwrap();
        assert_eq!(spec.base.squeezing_db, 3.0);
        assert_eq!(spec.base.antisqueezing_db, 6.5);
        assert_eq!(spec.base.eta, 0.9);
        assert_eq!(spec.base.n_shots, 5000);
        assert_eq!(spec.base.seed, 42);
        assert_eq!(spec.base.sampling_mode, crate::protocol::SamplingMode::Joint);
        assert_eq!(spec.sigma_list, vec![0.1, 0.3]);
        assert_eq!(spec.q_grid, vec![0.2, 0.8, f64::INFINITY]);
        assert_eq!(spec.outputs, DatasetSelection::Fig3);
        assert_eq!(spec.out_dir, PathBuf::from("/tmp/somewhere"));
        assert_eq!(spec.gh_order, 24);
        spec.validate().unwrap();
    }

    #[test]
    fn shorthand_and_precedence() {
        let spec = parse_spec("sigma_pn = 0.3\nq = 0.7\n").unwrap();
        assert_eq!(spec.sigma_list, vec![0.3]);
        assert_eq!(spec.q_grid, vec![0.7]);

        // later keys win
        let spec = parse_spec("seed = 1\nseed = 9\n").unwrap();
        assert_eq!(spec.base.seed, 9);
    }

    #[test]
    fn settings_pairs() {
        let spec = parse_spec("bhd_settings = 0:0, 0:1.5707963267948966\n").unwrap();
        assert_eq!(
            spec.base.bhd_settings,
            vec![(0.0, 0.0), (0.0, std::f64::consts::FRAC_PI_2)]
        );
        assert!(parse_spec("bhd_settings = 0-0\n").is_err());
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_spec("unknown_key = 1\n").is_err());
        assert!(parse_spec("eta\n").is_err());
        assert!(parse_spec("eta = fast\n").is_err());
        assert!(parse_spec("n_shots = -3\n").is_err());
        assert!(parse_spec("sampling_mode = sometimes\n").is_err());
        assert!(parse_spec("datasets = fig9\n").is_err());
        // errors carry the line number
        let err = parse_spec("eta = 0.9\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
