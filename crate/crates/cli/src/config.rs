//! Experiment configuration. One JSON file per experiment; unknown keys are
//! rejected at every level.

use std::path::PathBuf;
use std::sync::Arc;

use harnack_lab::comparison_functions::GridResolution;
use harnack_lab::equation_core::ExponentTriple;
use harnack_lab::extinction_lab::{ExtinctionParams, HarnackConstants};
use harnack_lab::harnack_verifier::{BaseConstants, ChainMode, HarnackQuery};
use harnack_lab::radial_solver::{RadialField, RadialGrid, SolverParams, TimeScheme};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Certify,
    Solve,
    Harnack,
    Chain,
    Extinction,
    Sobolev,
    Sweep,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Certify => "certify",
            Command::Solve => "solve",
            Command::Harnack => "harnack",
            Command::Chain => "chain",
            Command::Extinction => "extinction",
            Command::Sobolev => "sobolev",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub exponents: Option<ExponentTriple>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub certify: CertifyConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub harnack: HarnackConfig,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub extinction: ExtinctionConfig,
    #[serde(default)]
    pub sobolev: SobolevConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            exponents: None,
            seed: 0,
            output_dir: None,
            certify: Default::default(),
            solve: Default::default(),
            harnack: Default::default(),
            chain: Default::default(),
            extinction: Default::default(),
            sobolev: Default::default(),
            sweep: Default::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FunctionChoice {
    Phi,
    G,
    Psi,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyConfig {
    pub function: FunctionChoice,
    /// Height and radius of Phi and G.
    pub kappa: f64,
    pub rho: f64,
    /// Height and hole radius of Psi.
    pub k: f64,
    pub nu_hole: f64,
    pub grid: GridResolution,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self { function: FunctionChoice::All, kappa: 1.0, rho: 1.0, k: 1.0, nu_hole: 0.5, grid: GridResolution::default() }
    }
}

/// Radial initial profiles. Every profile is set to zero at the outer node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `amplitude (1 - (r/support)^2)_+^power`
    Bump { amplitude: f64, support: f64, power: f64 },
    /// `amplitude (1 - r/support)_+`
    Cone { amplitude: f64, support: f64 },
    /// `amplitude exp(-r^2/width^2)`
    Gaussian { amplitude: f64, width: f64 },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Bump { amplitude: 1.0, support: 1.0, power: 2.0 }
    }
}

impl InitialData {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            InitialData::Bump { amplitude, support, power } => amplitude * (1.0 - (r / support).powi(2)).max(0.0).powf(power),
            InitialData::Cone { amplitude, support } => amplitude * (1.0 - r / support).max(0.0),
            InitialData::Gaussian { amplitude, width } => amplitude * (-(r / width).powi(2)).exp(),
        }
    }

    pub fn field(&self, grid: &GridConfig) -> harnack_lab::Result<RadialField> {
        let g = Arc::new(RadialGrid::uniform(grid.intervals, grid.radius)?);
        let mut values: Vec<f64> = g.nodes().iter().map(|&r| self.eval(r)).collect();
        if let Some(last) = values.last_mut() {
            *last = 0.0;
        }
        RadialField::new(g, values)
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            InitialData::Bump { amplitude, support, power } => amplitude >= 0.0 && support > 0.0 && power >= 1.0,
            InitialData::Cone { amplitude, support } => amplitude >= 0.0 && support > 0.0,
            InitialData::Gaussian { amplitude, width } => amplitude >= 0.0 && width > 0.0,
        };
        if ok && self.eval(0.0).is_finite() {
            Ok(())
        } else {
            Err(format!("invalid initial data {self:?}"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub intervals: usize,
    pub radius: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { intervals: 200, radius: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub initial: InitialData,
    pub grid: GridConfig,
    pub t_end: f64,
    /// When absent: explicit stepping for `q >= 2`, linearly implicit with tol 0.02 for `q < 2`.
    pub solver: Option<SolverParams>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { initial: InitialData::default(), grid: GridConfig::default(), t_end: 0.1, solver: None }
    }
}

impl SolveConfig {
    pub fn solver_params(&self, q: f64) -> SolverParams {
        self.solver.clone().unwrap_or_else(|| {
            let mut p = SolverParams::default();
            if q < 2.0 {
                p.scheme = TimeScheme::LinearlyImplicit { tol: 0.02 };
            }
            p
        })
    }
}

/// Empirical-mu sweep over base points and radii.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MuSweepConfig {
    pub c: f64,
    pub radii: Vec<f64>,
    pub base_points: Vec<(f64, f64)>,
    /// Extra base points drawn uniformly from `[0, R/2] x [0.1 T, 0.9 T]` with the seed.
    pub random_points: usize,
}

impl Default for MuSweepConfig {
    fn default() -> Self {
        Self { c: 1.0, radii: vec![0.1, 0.2, 0.4], base_points: Vec::new(), random_points: 16 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnackConfig {
    pub queries: Vec<HarnackQuery>,
    pub sweep: Option<MuSweepConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    pub sigma_t: f64,
    pub base: BaseConstants,
    pub mode: ChainMode,
    pub start: Option<(f64, f64)>,
    pub target: Option<(f64, f64)>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            sigma_t: 1.5,
            base: BaseConstants { c: 0.5, mu: 20.0, sigma: 2.0 },
            mode: ChainMode::Time,
            start: None,
            target: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtinctionConfig {
    pub initial: InitialData,
    pub grid: GridConfig,
    pub params: ExtinctionParams,
    /// Harnack constants for the counterexample record, usually from a supercritical sweep.
    pub counterexample: Option<HarnackConstants>,
}

impl Default for ExtinctionConfig {
    fn default() -> Self {
        Self { initial: InitialData::default(), grid: GridConfig::default(), params: ExtinctionParams::default(), counterexample: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SobolevConfig {
    pub profile: InitialData,
    pub radius: f64,
    /// Grid intervals of the refinement study.
    pub levels: Vec<usize>,
    /// Largest allowed relative spread of the ratio across levels.
    pub tolerance: f64,
}

impl Default for SobolevConfig {
    fn default() -> Self {
        Self {
            profile: InitialData::Cone { amplitude: 1.0, support: 1.0 },
            radius: 2.0,
            levels: vec![200, 400, 800],
            tolerance: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub n: u32,
    pub p: f64,
    /// `start:stop:step`, inclusive.
    pub q_range: String,
    pub initial: InitialData,
    pub grid: GridConfig,
    pub params: ExtinctionParams,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n: 3,
            p: 1.4,
            q_range: "1.325:1.975:0.05".into(),
            initial: InitialData::default(),
            grid: GridConfig::default(),
            params: ExtinctionParams::default(),
        }
    }
}

/// Parses `start:stop:step` into the values `start + i step <= stop`, rounded to 12 decimals.
pub fn parse_range(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, h] = parts.as_slice() else {
        return Err(format!("range '{s}' is not start:stop:step"));
    };
    let num = |x: &str| x.trim().parse::<f64>().map_err(|_| format!("bad number '{x}' in range '{s}'"));
    let (a, b, h) = (num(a)?, num(b)?, num(h)?);
    if !(a.is_finite() && b.is_finite() && h > 0.0 && b >= a) {
        return Err(format!("range '{s}' needs start <= stop and step > 0"));
    }
    let count = ((b - a) / h + 1e-9).floor() as usize + 1;
    if count > 10_000 {
        return Err(format!("range '{s}' has {count} points"));
    }
    Ok((0..count).map(|i| ((a + h * i as f64) * 1e12).round() / 1e12).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("1.2:1.5:0.1").unwrap(), vec![1.2, 1.3, 1.4, 1.5]);
        assert_eq!(parse_range("1.2:2.8:0.1").unwrap().len(), 17);
        assert!(parse_range("1:2").is_err());
        assert!(parse_range("2:1:0.1").is_err());
        assert!(parse_range("1:2:0").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = r#"{"command": "solve", "solve": {"t_end": 1, "tend": 2}}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err());
        let good = r#"{"command": "solve", "exponents": {"n": 3, "p": 2, "q": 2}, "solve": {"t_end": 1}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(good).unwrap();
        assert_eq!(cfg.solve.t_end, 1.0);
    }
}
