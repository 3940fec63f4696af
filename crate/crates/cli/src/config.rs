//! TOML run configuration: a preset plus overrides.
//!
//! ```toml
//! preset = "one-scar"
//!
//! [problem]
//! noise_ld = 0.0
//! seeds = [0, 1, 2]
//!
//! [problem.schedule]
//! full_bfgs = 2000
//!
//! [sweep]
//! obs = [1.0, 10.0, 100.0]
//! pde = [0.01, 0.1, 1.0]
//! bcn = 0.1
//! ```
//!
//! Top-level keys of `[problem]` replace the preset's value. A nested table
//! such as `[problem.points]` replaces the whole table, with its own
//! defaults for missing keys. Unknown keys are errors.

use activepinn::activation::BcsParams;
use activepinn::exec::ExecMode;
use activepinn::experiments::{BcMode, CaseKind, ClassifySpec, PointCounts, ProblemSpec, SaSpec};
use activepinn::losses::{LossWeights, RbaConfig};
use activepinn::training::Schedule;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    #[serde(default)]
    pub problem: ProblemPatch,
    #[serde(default)]
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemPatch {
    pub case: Option<CaseKind>,
    pub bc: Option<BcMode>,
    pub sa: Option<SaSpec>,
    pub u_hidden: Option<Vec<usize>>,
    pub points: Option<PointCounts>,
    pub noise_ld: Option<f64>,
    pub weights: Option<LossWeights>,
    pub rba: Option<RbaConfig>,
    pub schedule: Option<Schedule>,
    pub seeds: Option<Vec<u64>>,
    pub data_seed: Option<u64>,
    pub bcs: Option<BcsParams>,
    pub classify: Option<ClassifySpec>,
    pub exec: Option<ExecMode>,
}

macro_rules! patch {
    ($self:ident, $spec:ident, $($f:ident),*) => {
        $(if let Some(v) = $self.$f { $spec.$f = v; })*
    };
}

impl ProblemPatch {
    pub fn apply(self, mut spec: ProblemSpec) -> ProblemSpec {
        patch!(
            self, spec, case, bc, sa, u_hidden, points, noise_ld, weights, rba, schedule, seeds,
            data_seed, bcs, classify, exec
        );
        spec
    }
}

/// Weight grid of the `sweep` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub obs: Vec<f64>,
    pub pde: Vec<f64>,
    pub bcn: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            obs: vec![1.0, 10.0, 100.0],
            pde: vec![0.01, 0.1, 1.0],
            bcn: 1.0,
        }
    }
}

/// `obs=1,10,100;pde=0.01,0.1,1;bcn=1`. Missing keys keep the defaults.
pub fn parse_grid(s: &str) -> Result<SweepConfig, String> {
    let list = |v: &str| -> Result<Vec<f64>, String> {
        v.split(',')
            .map(|x| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("bad weight `{x}`: {e}"))
            })
            .collect()
    };
    let mut g = SweepConfig::default();
    for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("expected key=values, got `{part}`"))?;
        match k.trim() {
            "obs" => g.obs = list(v)?,
            "pde" => g.pde = list(v)?,
            "bcn" => {
                g.bcn = v
                    .trim()
                    .parse()
                    .map_err(|e| format!("bad bcn weight: {e}"))?
            }
            other => {
                return Err(format!(
                    "unknown grid key `{other}`; expected obs, pde or bcn"
                ))
            }
        }
    }
    if g.obs.is_empty() || g.pde.is_empty() {
        return Err("grid needs at least one obs and one pde weight".into());
    }
    Ok(g)
}

impl RunConfig {
    /// Parse TOML text. Errors carry the line and column of the problem.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
    }

    /// The effective spec: `preset` (or `fallback`) with the overrides.
    pub fn spec(&self, fallback: &str) -> Result<ProblemSpec, CliError> {
        let id = self.preset.as_deref().unwrap_or(fallback);
        let base = ProblemSpec::preset(id)?;
        let spec = self.problem.clone().apply(base);
        spec.validate()?;
        Ok(spec)
    }
}
