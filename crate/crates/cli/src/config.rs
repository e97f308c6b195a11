use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use fpq_core::balance::BalanceConfig;
use fpq_core::hfom::{AssemblyConfig, HfomConfig, QuadrantRule};
use fpq_core::learners::{BoostParams, ForestParams};
use fpq_core::ucflem::UcflemConfig;
use fpq_core::{Execution, FeatureConfig};

/// Flat `key = value` run configuration. Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Crop side every image is brought to before feature extraction.
    pub side: usize,
    pub threshold: u8,
    /// Block side for the ridge/valley ratio and the orientation maps.
    pub block: usize,
    /// Standard fingerprints used for the hybrid map.
    pub n: usize,
    pub epsilon: f64,
    pub theta_scale: f64,
    pub train_ratio: f64,
    pub seed: u64,
    pub balance: bool,
    pub max_attempts: usize,
    pub validation_fraction: f64,
    pub refit: bool,
    pub trees: usize,
    pub max_depth: usize,
    pub features_per_split: usize,
    pub min_samples_leaf: usize,
    pub boost_rounds: usize,
    pub learning_rate: f64,
    pub boost_max_depth: usize,
    pub subsample: f64,
    /// `distinct` or `derangement`.
    pub quadrant_rule: String,
    pub quadrant_seed: Option<u64>,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let feat = FeatureConfig::default();
        let u = UcflemConfig::default();
        let h = HfomConfig::default();
        Self {
            side: h.side,
            threshold: feat.threshold,
            block: feat.rvr_block,
            n: h.n,
            epsilon: feat.epsilon,
            theta_scale: feat.theta_scale,
            train_ratio: u.train_ratio,
            seed: u.seed,
            balance: u.balance,
            max_attempts: u.balance_config.max_attempts,
            validation_fraction: u.validation_fraction,
            refit: u.refit,
            trees: u.forest.trees,
            max_depth: u.forest.max_depth,
            features_per_split: u.forest.features_per_split,
            min_samples_leaf: u.forest.min_samples_leaf,
            boost_rounds: u.boost.rounds,
            learning_rate: u.boost.learning_rate,
            boost_max_depth: u.boost.max_depth,
            subsample: u.boost.subsample,
            quadrant_rule: "distinct".into(),
            quadrant_seed: None,
            parallel: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate().with_context(|| format!("config {}", path.display()))?;
        Ok(cfg)
    }

    /// Loads `path` when given, applies the seed override and validates.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.side < 16 {
            bail!("side must be at least 16, got {}", self.side);
        }
        if self.block.is_multiple_of(2) || self.block > self.side {
            bail!("block must be odd and at most side, got {}", self.block);
        }
        if self.n < 4 {
            bail!("n must be at least 4, got {}", self.n);
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            bail!("train_ratio must lie in (0, 1), got {}", self.train_ratio);
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            bail!("validation_fraction must lie in (0, 1), got {}", self.validation_fraction);
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            bail!("subsample must lie in (0, 1], got {}", self.subsample);
        }
        if !(1..=6).contains(&self.features_per_split) {
            bail!("features_per_split must lie in 1..=6, got {}", self.features_per_split);
        }
        if self.trees == 0 || self.boost_rounds == 0 || self.max_attempts == 0 {
            bail!("trees, boost_rounds and max_attempts must be positive");
        }
        self.quadrant_rule()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Writes the effective configuration next to the run's outputs.
    pub fn echo(&self, out: &Path) -> Result<()> {
        let path = out.join("config.toml");
        fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    fn quadrant_rule(&self) -> Result<QuadrantRule> {
        match self.quadrant_rule.as_str() {
            "distinct" => Ok(QuadrantRule::Distinct),
            "derangement" => Ok(QuadrantRule::Derangement),
            other => bail!("quadrant_rule must be distinct or derangement, got {other:?}"),
        }
    }

    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            threshold: self.threshold,
            rvr_block: self.block,
            epsilon: self.epsilon,
            theta_scale: self.theta_scale,
            ..FeatureConfig::default()
        }
    }

    pub fn ucflem(&self) -> UcflemConfig {
        let execution = self.execution();
        UcflemConfig {
            train_ratio: self.train_ratio,
            seed: self.seed,
            balance: self.balance,
            balance_config: BalanceConfig {
                max_attempts: self.max_attempts,
                ..BalanceConfig::default()
            },
            forest: ForestParams {
                trees: self.trees,
                max_depth: self.max_depth,
                min_samples_leaf: self.min_samples_leaf,
                features_per_split: self.features_per_split,
                seed: 0,
                execution,
            },
            boost: BoostParams {
                rounds: self.boost_rounds,
                learning_rate: self.learning_rate,
                max_depth: self.boost_max_depth,
                min_samples_leaf: self.min_samples_leaf,
                subsample: self.subsample,
                seed: 0,
                execution,
            },
            validation_fraction: self.validation_fraction,
            refit: self.refit,
        }
    }

    pub fn hfom(&self) -> HfomConfig {
        HfomConfig {
            n: self.n,
            side: self.side,
            threshold: self.threshold,
            block: self.block,
            assembly: AssemblyConfig {
                seed: self.quadrant_seed,
                rule: self.quadrant_rule().unwrap_or_default(),
            },
            execution: self.execution(),
        }
    }
}
