//! Experiment configuration: a versioned JSON schema with unknown keys
//! rejected, mapped onto the experiment runner.

use crate::error::{Error, Result};
use crate::symbols::LocalizerSpec;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    QuantizeCheck,
    ConvertOrder,
    MoyalOrder,
    CommutatorOrder,
    NormScaling,
    OffdiagDecay,
    WfScan,
    Wf2Scan,
    IteratedRegularity,
    Isoenergetic,
    OrbitClosure,
    PropagationConsistency,
}

impl ExperimentName {
    pub fn all() -> &'static [ExperimentName] {
        use ExperimentName::*;
        &[
            QuantizeCheck,
            ConvertOrder,
            MoyalOrder,
            CommutatorOrder,
            NormScaling,
            OffdiagDecay,
            WfScan,
            Wf2Scan,
            IteratedRegularity,
            Isoenergetic,
            OrbitClosure,
            PropagationConsistency,
        ]
    }

    pub fn as_str(&self) -> &'static str {
        use ExperimentName::*;
        match self {
            QuantizeCheck => "quantize-check",
            ConvertOrder => "convert-order",
            MoyalOrder => "moyal-order",
            CommutatorOrder => "commutator-order",
            NormScaling => "norm-scaling",
            OffdiagDecay => "offdiag-decay",
            WfScan => "wf-scan",
            Wf2Scan => "wf2-scan",
            IteratedRegularity => "iterated-regularity",
            Isoenergetic => "isoenergetic",
            OrbitClosure => "orbit-closure",
            PropagationConsistency => "propagation-consistency",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// h = 2^{-e} for e in [first, last], inclusive.
    pub h_exponents: [i32; 2],
    /// grid dims per axis, fixed across the sweep unless `scale_grid` is set
    pub grid: Vec<usize>,
    /// grow the grid like 1/h to keep a fixed momentum window covered
    #[serde(default)]
    pub scale_grid: bool,
    /// momentum half-window used when `scale_grid` is set
    #[serde(default)]
    pub xi_window: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// "flat" or "linear"
    pub name: String,
    /// numerators/denominators of xi0 (flat) or omega (linear)
    #[serde(default)]
    pub num: Vec<i64>,
    #[serde(default)]
    pub den: Vec<i64>,
    #[serde(default = "one")]
    pub energy: f64,
    #[serde(default)]
    pub mu: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    /// "resonant-uk" or "wkb-control"
    pub name: String,
    /// quasimode indices for resonant-uk
    #[serde(default)]
    pub ks: Vec<u64>,
    /// h-exponents for wkb-control
    #[serde(default)]
    pub exponents: Vec<i32>,
    /// integer xi* for wkb-control
    #[serde(default)]
    pub xi_star: Vec<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanParams {
    #[serde(default)]
    pub order_m: f64,
    #[serde(default)]
    pub order_l: f64,
    #[serde(default = "default_x_cells")]
    pub x_cells: usize,
    #[serde(default = "default_angle_cells")]
    pub angle_cells: usize,
    #[serde(default = "default_width_factor")]
    pub width_factor: f64,
    #[serde(default = "default_half")]
    pub delta: f64,
    #[serde(default = "default_half")]
    pub eps: f64,
}

fn default_x_cells() -> usize {
    8
}
fn default_angle_cells() -> usize {
    16
}
fn default_width_factor() -> f64 {
    1.5
}
fn default_half() -> f64 {
    0.5
}

impl Default for ScanParams {
    fn default() -> Self {
        ScanParams {
            order_m: 0.0,
            order_l: 0.0,
            x_cells: default_x_cells(),
            angle_cells: default_angle_cells(),
            width_factor: default_width_factor(),
            delta: default_half(),
            eps: default_half(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub linear: Vec<f64>,
    #[serde(default)]
    pub c0: f64,
}

/// Per-experiment parameters; unused fields are rejected only when unknown,
/// not when irrelevant to the chosen experiment.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub trunc_orders: Option<Vec<usize>>,
    pub orders_mm: Option<Vec<f64>>,
    pub separation: Option<f64>,
    pub model: Option<ModelConfig>,
    pub ihat_num: Option<Vec<i64>>,
    pub ihat_den: Option<Vec<i64>>,
    pub family: Option<FamilyConfig>,
    pub scan: Option<ScanParams>,
    pub localizer: Option<LocalizerSpec>,
    pub kind: Option<String>,
    pub generators: Option<Vec<GeneratorConfig>>,
    pub depth: Option<usize>,
    pub times: Option<usize>,
    pub expected_slope: Option<f64>,
    pub slope_tol: Option<f64>,
    pub expected_det: Option<String>,
    pub expected_closure: Option<String>,
    pub grid: Option<Vec<usize>>,
    pub h: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentName,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub params: Option<Params>,
}

fn default_seed() -> u64 {
    42
}

impl ExperimentConfig {
    pub fn from_json(data: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(data).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(sweep) = &self.sweep {
            if sweep.h_exponents[1] < sweep.h_exponents[0] {
                return Err(Error::Config("h_exponents must be [first, last] ascending".into()));
            }
            if sweep.h_exponents[1] - sweep.h_exponents[0] < 3 {
                return Err(Error::Config("a sweep needs at least 4 h values".into()));
            }
            if sweep.grid.is_empty() || sweep.grid.iter().any(|&n| n < 2 || n % 2 != 0) {
                return Err(Error::Config("grid dims must be even and >= 2".into()));
            }
        }
        if let Some(p) = &self.params {
            if let Some(k) = &p.kind {
                if !matches!(k.as_str(), "left" | "right" | "weyl") {
                    return Err(Error::Config(format!("unknown quantization kind '{k}'")));
                }
            }
            if let Some(m) = &p.model {
                if !matches!(m.name.as_str(), "flat" | "linear") {
                    return Err(Error::Config(format!("unknown model '{}'", m.name)));
                }
            }
            if let Some(f) = &p.family {
                if !matches!(f.name.as_str(), "resonant-uk" | "wkb-control") {
                    return Err(Error::Config(format!("unknown family '{}'", f.name)));
                }
            }
        }
        Ok(())
    }
}

/// Schema summary printed by `twomicro list`.
pub fn schema_help() -> String {
    let mut s = String::new();
    s.push_str("experiments:\n");
    for e in ExperimentName::all() {
        s.push_str(&format!("  {}\n", e.as_str()));
    }
    s.push_str(
        r#"
config schema (JSON, unknown keys rejected):
  schema_version   required, currently 1
  experiment       one of the names above
  seed             u64, default 42 (power-iteration start vectors)
  threads          optional worker count
  out_dir          optional output directory (default "out")
  sweep            { "h_exponents": [first, last], "grid": [N per axis],
                     "scale_grid": bool, "xi_window": float }
  params           experiment-specific, all optional:
    trunc_orders   [0,1,2]        moyal-order / convert-order
    kind           "left|right|weyl"  convert-order / wf-scan
    orders_mm      [0,1,2]        norm-scaling (order (m,m) localizers)
    separation     0.5            offdiag-decay
    model          {"name":"flat|linear","num":[..],"den":[..],"energy":e,"mu":mu}
    ihat_num/_den  rational direction for orbit-closure
    family         {"name":"resonant-uk","ks":[8,16,32,64]} or
                   {"name":"wkb-control","exponents":[5..9],"xi_star":[1,0]}
    scan           {"order_m":k,"order_l":l,"x_cells":8,"angle_cells":16,
                    "width_factor":1.5,"delta":0.5,"eps":0.5}
    localizer      LocalizerSpec (wf-scan): x0, ihat0, delta, eps, xwidth,
                   anglewidth, order{m,l}, optional xi0/classical/rho_center
    generators     [{"linear":[0,1],"c0":0}]   iterated-regularity
    depth          word depth (default 4, cap 6)
    times          flow sample count (default 8)  propagation-consistency
    expected_slope/slope_tol, expected_det, expected_closure   pass criteria
    grid, h        quantize-check grid and h

output: report.json plus CSV sweep data in out_dir; exit codes:
  0 pass, 2 config error, 3 resource cap, 4 numeric failure, 5 tolerance failure
"#,
    );
    s
}
