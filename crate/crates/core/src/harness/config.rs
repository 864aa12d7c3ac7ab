//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::descent::DescentConfig;
use crate::domain::ProductDistribution;
use crate::error::{PdError, Result};
use crate::lagrangian::DEFAULT_BROUWER_MIX;
use crate::montecarlo::MonteCarloConfig;
use crate::utility::{GameUtilities, PrivateUtilitySet, TableDocument, WorldUtility};
use crate::variants::{VariantConfig, VariantKind};

use super::problems::generate_problem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub name: String,
    pub agents: usize,
    pub moves: usize,
    #[serde(default)]
    pub seed: u64,
    /// Per-multiplicity costs for `congestion`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<Vec<f64>>,
}

/// Where a utility comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemSpec {
    Table(TableDocument),
    /// Path to a table document, relative to the config file's directory.
    File(PathBuf),
    Generator(GeneratorSpec),
}

impl ProblemSpec {
    pub fn build(&self, base_dir: Option<&Path>) -> Result<WorldUtility> {
        match self {
            ProblemSpec::Table(doc) => doc.clone().into_utility(),
            ProblemSpec::File(path) => {
                let resolved = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                WorldUtility::load_table(&resolved)
            }
            ProblemSpec::Generator(g) => generate_problem(&g.name, g.agents, g.moves, g.seed, g.costs.as_deref()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Gradient,
    NearestNewton,
    Brouwer,
    ThresholdGradient,
    KlpqThreshold,
    KlpqExponential,
}

impl Algorithm {
    /// The variant kind this algorithm implements, if any.
    pub fn variant_kind(self) -> Option<VariantKind> {
        match self {
            Algorithm::ThresholdGradient => Some(VariantKind::ThresholdGradient),
            Algorithm::KlpqThreshold => Some(VariantKind::KlpqThreshold),
            Algorithm::KlpqExponential => Some(VariantKind::KlpqExponential),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpectationMode {
    #[default]
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub beta0: f64,
    /// Factor applied to β after each round; at least 1.
    pub beta_growth: f64,
    /// Cap on steps per round.
    pub inner_steps: usize,
    pub rounds: usize,
    /// Exact mode ends a round early once the step criterion drops below this.
    pub tolerance: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { beta0: 0.1, beta_growth: 2.0, inner_steps: 100, rounds: 8, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Relative per-component jitter applied to the starting marginals.
    pub jitter: f64,
    /// Starting marginals; uniform when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marginals: Option<Vec<Vec<f64>>>,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { jitter: 1e-3, marginals: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    /// One utility per agent for a non-team game.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub private: Option<Vec<ProblemSpec>>,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub expectation: ExpectationMode,
    #[serde(default)]
    pub descent: DescentConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<VariantConfig>,
    #[serde(default = "default_mix")]
    pub brouwer_mix: f64,
    #[serde(default)]
    pub init: InitConfig,
    /// Joint moves drawn from `q` after each exact-mode step to track the best
    /// sampled move.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Also write every Monte-Carlo sample to `samples.jsonl`.
    #[serde(default)]
    pub log_samples: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_mix() -> f64 {
    DEFAULT_BROUWER_MIX
}

fn default_eval_samples() -> usize {
    16
}

impl RunConfig {
    pub fn new(problem: ProblemSpec, algorithm: Algorithm) -> Self {
        Self {
            problem,
            private: None,
            algorithm,
            expectation: ExpectationMode::Exact,
            descent: DescentConfig::default(),
            schedule: ScheduleConfig::default(),
            monte_carlo: MonteCarloConfig::default(),
            variant: None,
            brouwer_mix: DEFAULT_BROUWER_MIX,
            init: InitConfig::default(),
            eval_samples: default_eval_samples(),
            log_samples: false,
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The variant parameters in effect: the configured block, or defaults for
    /// the algorithm's own kind.
    pub fn effective_variant(&self) -> Option<VariantConfig> {
        self.variant.or_else(|| self.algorithm.variant_kind().map(VariantConfig::new))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        if !(s.beta0 >= 0.0 && s.beta0.is_finite()) {
            return Err(PdError::InvalidParameter(format!("beta0 must be finite and >= 0, got {}", s.beta0)));
        }
        if !(s.beta_growth >= 1.0 && s.beta_growth.is_finite()) {
            return Err(PdError::InvalidParameter(format!("beta_growth must be >= 1, got {}", s.beta_growth)));
        }
        if !(s.tolerance >= 0.0) {
            return Err(PdError::InvalidParameter(format!("tolerance must be >= 0, got {}", s.tolerance)));
        }
        if !(self.brouwer_mix > 0.0 && self.brouwer_mix <= 1.0) {
            return Err(PdError::InvalidParameter(format!("brouwer_mix must be in (0, 1], got {}", self.brouwer_mix)));
        }
        if !(self.init.jitter >= 0.0 && self.init.jitter < 1.0) {
            return Err(PdError::InvalidParameter(format!("jitter must be in [0, 1), got {}", self.init.jitter)));
        }
        self.descent.validate()?;
        self.monte_carlo.validate()?;
        if let Some(v) = self.effective_variant() {
            v.validate()?;
            match (self.algorithm.variant_kind(), v.kind) {
                (Some(own), kind) if own != kind => {
                    return Err(PdError::InvalidParameter(format!(
                        "algorithm {:?} conflicts with variant kind {kind:?}",
                        self.algorithm
                    )));
                }
                (None, VariantKind::ThresholdGradient | VariantKind::KlpqThreshold | VariantKind::KlpqExponential) => {
                    return Err(PdError::InvalidParameter(format!(
                        "variant kind {:?} needs the matching algorithm",
                        v.kind
                    )));
                }
                _ => {}
            }
            if v.kind == VariantKind::Percentile && self.expectation != ExpectationMode::MonteCarlo {
                return Err(PdError::InvalidParameter("the percentile variant filters samples and needs monte-carlo mode".into()));
            }
        }
        Ok(())
    }

    /// World and private utilities, resolving file paths against `base_dir`.
    pub fn build_utilities(&self, base_dir: Option<&Path>) -> Result<GameUtilities> {
        let world = self.problem.build(base_dir)?;
        match &self.private {
            None => Ok(GameUtilities::team(world)),
            Some(list) => {
                let per_agent = list.iter().map(|p| p.build(base_dir)).collect::<Result<Vec<_>>>()?;
                GameUtilities::with_private(world, PrivateUtilitySet::new(per_agent))
            }
        }
    }

    /// Starting marginals before jitter.
    pub fn initial_marginals(&self, utilities: &GameUtilities) -> Result<ProductDistribution> {
        match &self.init.marginals {
            None => Ok(ProductDistribution::uniform(utilities.domain())),
            Some(m) => {
                let q = ProductDistribution::from_marginals(m.clone())?;
                if &q.domain() != utilities.domain() {
                    return Err(PdError::InvalidParameter("initial marginals do not match the problem's moves".into()));
                }
                Ok(q)
            }
        }
    }
}
