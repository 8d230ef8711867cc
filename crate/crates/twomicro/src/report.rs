//! Report bundles: every run echoes its config and the versioned defaults
//! table, so pass/fail is reproducible from the numbers in the bundle alone.

use crate::error::{Error, Result};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

/// The one versioned table of tolerances; echoed into every report.
#[derive(Debug, Clone, Serialize)]
pub struct Defaults {
    pub version: u32,
    /// machine-precision identities (criterion-level exact algebra)
    pub machine_tol: f64,
    /// slope margin for order regressions (N+1 - margin)
    pub order_slope_margin: f64,
    pub commutator_weyl_min_slope: f64,
    pub commutator_left_min_slope: f64,
    pub norm_scaling_max_ratio: f64,
    pub offdiag_min_slope: f64,
    pub no_mass_floor: f64,
    /// a cell is in WF^{m,l} when its slope < m - wf_detect_margin
    pub wf_detect_margin: f64,
    pub quasimode_null_tol: f64,
    pub profile_rel_tol: f64,
    /// angular exclusion for the u_k scan structure check
    pub uk_angle_exclusion: f64,
    pub uk_slope_band: f64,
    pub isoenergetic_tol: f64,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults {
            version: 1,
            machine_tol: 1e-12,
            order_slope_margin: 0.3,
            commutator_weyl_min_slope: 1.7,
            commutator_left_min_slope: 0.7,
            norm_scaling_max_ratio: 1.5,
            offdiag_min_slope: 4.0,
            no_mass_floor: crate::calculus::NO_MASS_FLOOR,
            wf_detect_margin: 0.25,
            quasimode_null_tol: 1e-10,
            profile_rel_tol: 1e-8,
            uk_angle_exclusion: std::f64::consts::FRAC_PI_4,
            uk_slope_band: 0.15,
            isoenergetic_tol: crate::integrable::ISOENERGETIC_TOL,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ReportBundle {
    pub schema_version: u32,
    pub experiment: String,
    pub config: serde_json::Value,
    pub defaults: Defaults,
    pub results: serde_json::Value,
    pub passed: bool,
    pub failures: Vec<String>,
    pub wall_clock_s: f64,
}

/// Write a file atomically (temp in the same directory, then rename).
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("create {dir:?}: {e}")))?;
    let tmp: PathBuf = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("report")
    ));
    fs::write(&tmp, contents).map_err(|e| Error::Config(format!("write {tmp:?}: {e}")))?;
    fs::rename(&tmp, path).map_err(|e| Error::Config(format!("rename to {path:?}: {e}")))?;
    Ok(())
}

/// Sweep CSV rows: (experiment-id, h, value).
pub fn sweep_csv(rows: &[(String, f64, f64)]) -> String {
    let mut s = String::from("experiment,h,value\n");
    for (id, h, v) in rows {
        s.push_str(&format!("{id},{h},{v}\n"));
    }
    s
}
