//! Run configuration: a single JSON document, strict about unknown keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::epi::MaskStrategy;
use crate::error::{EpiError, Result};
use crate::metrics::SigmaRule;
use crate::model::{Activation, Architecture, ModelSpec};
use crate::optim::{AdamWConfig, ScheduleShape};
use crate::tasks::{Ordering, SuiteSpec};

pub const SCHEMA_VERSION: u32 = 1;

/// Training method: baselines, the evolving mask, and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// No isolation; trains in the configured ordering.
    FullSft,
    /// No isolation; tasks randomly partitioned into stages.
    MultistageRandom,
    /// No isolation; conflict-group members share a stage.
    MultistageHeuristic,
    /// Probe-derived mask frozen for the whole run.
    Static,
    /// Evolving isolation.
    Epi,
    /// Evolving isolation with a fixed per-group budget.
    PerLayerBudget,
    /// Evolving isolation on unnormalised scores.
    GlobalRaw,
    /// Random mask of the same cardinality, re-drawn at every refresh.
    RandomMask,
}

impl Method {
    /// Mask strategy the method runs with; `layer_norm = false` turns the
    /// evolving mask into global selection on raw scores.
    pub fn strategy(self, layer_norm: bool) -> MaskStrategy {
        match self {
            Method::FullSft | Method::MultistageRandom | Method::MultistageHeuristic => MaskStrategy::None,
            Method::Static => MaskStrategy::Static,
            Method::Epi if layer_norm => MaskStrategy::Epi,
            Method::Epi | Method::GlobalRaw => MaskStrategy::GlobalRaw,
            Method::PerLayerBudget => MaskStrategy::PerLayerBudget,
            Method::RandomMask => MaskStrategy::Random,
        }
    }

    /// Stage ordering the method trains in.
    pub fn ordering(self, configured: Ordering) -> Ordering {
        match self {
            Method::MultistageRandom => Ordering::Random,
            Method::MultistageHeuristic => Ordering::Heuristic,
            _ => configured,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::FullSft => "full-sft",
            Method::MultistageRandom => "multistage-random",
            Method::MultistageHeuristic => "multistage-heuristic",
            Method::Static => "static",
            Method::Epi => "epi",
            Method::PerLayerBudget => "per-layer-budget",
            Method::GlobalRaw => "global-raw",
            Method::RandomMask => "random-mask",
        }
    }
}

/// Network shape; input/output sizes and loss follow from the task suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub widths: Vec<usize>,
    pub activation: Activation,
    /// Standard deviation of the Gaussian initialisation.
    pub init_scale: f64,
}

/// Perturbation diagnostic settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// Sampled coordinates per parameter group.
    pub per_group: usize,
    /// Antithetic perturbation pairs per coordinate.
    pub trials: usize,
    pub sigma: SigmaRule,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            per_group: 64,
            trials: 16,
            sigma: SigmaRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub suite: SuiteSpec,
    pub ordering: Ordering,
    pub method: Method,
    /// Protected fraction of all coordinates.
    pub p: f64,
    /// EMA factor of the sensitivity signal.
    pub beta: f64,
    /// Mask refresh interval in steps.
    pub refresh_interval: u64,
    /// Steps per task in a stage; the step-budget stand-in for epochs.
    pub steps_per_stage: usize,
    pub batch_size: usize,
    /// Rows in each task's held-out evaluation set.
    pub eval_size: usize,
    pub optimizer: AdamWConfig,
    pub warmup_fraction: f64,
    pub schedule: ScheduleShape,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Evaluate and snapshot every this many steps.
    pub snapshot_every: usize,
    pub layer_norm: bool,
    pub reset_sensitivity_on_stage: bool,
    /// Probe steps per task for the static baseline.
    pub probe_steps: usize,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
}

impl Default for RunConfig {
    /// The four-task conflict benchmark trained with the evolving mask.
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: ModelConfig {
                architecture: Architecture::Mlp,
                widths: vec![32],
                activation: Activation::Tanh,
                init_scale: 0.1,
            },
            suite: SuiteSpec::conflict_benchmark(),
            ordering: Ordering::PaperSequence,
            method: Method::Epi,
            p: 0.01,
            beta: 0.99,
            refresh_interval: 500,
            steps_per_stage: 2000,
            batch_size: 64,
            eval_size: 512,
            optimizer: AdamWConfig::default(),
            warmup_fraction: 0.05,
            schedule: ScheduleShape::Cosine,
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("out"),
            snapshot_every: 500,
            layer_norm: true,
            reset_sensitivity_on_stage: false,
            probe_steps: 500,
            diagnose: DiagnoseConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EpiError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad(format!("p = {} must lie in (0, 1)", self.p));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta = {} must lie in [0, 1)", self.beta));
        }
        if self.refresh_interval == 0 {
            return bad("refresh_interval must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.steps_per_stage == 0 || self.batch_size == 0 || self.eval_size == 0 || self.snapshot_every == 0 {
            return bad("steps_per_stage, batch_size, eval_size and snapshot_every must be >= 1".into());
        }
        if !(self.model.init_scale > 0.0) {
            return bad(format!("init_scale = {} must be positive", self.model.init_scale));
        }
        if self.method == Method::Static && self.probe_steps == 0 {
            return bad("the static baseline needs probe_steps >= 1".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction = {} must lie in [0, 1)", self.warmup_fraction));
        }
        self.optimizer.validate()?;
        self.model_spec().validate()
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            architecture: self.model.architecture,
            widths: self.model.widths.clone(),
            activation: self.model.activation,
            input_dim: self.suite.input_dim,
            output_dim: self.suite.output_dim,
            loss: self.suite.kind.loss(),
        }
    }

    pub fn strategy(&self) -> MaskStrategy {
        self.method.strategy(self.layer_norm)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(text)?)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let config: RunConfig = serde_json::from_value(value)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Value> {
        let text = std::fs::read_to_string(path).map_err(|e| EpiError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Reads `path` (or the built-in default), applies `key=value` overrides
    /// and validates.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => Self::load(p)?,
            None => serde_json::to_value(RunConfig::default())?,
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Sets a dotted path such as `optimizer.lr=3e-4`. The right-hand side is
/// parsed as JSON when possible and taken as a plain string otherwise. Only
/// existing keys can be overridden.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| EpiError::Config(format!("override `{assignment}` is not key=value")))?;
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = root;
    for key in path.split('.') {
        slot = match slot {
            Value::Object(map) => map
                .get_mut(key)
                .ok_or_else(|| EpiError::Config(format!("override path `{path}`: no key `{key}`")))?,
            Value::Array(items) => {
                let idx: usize = key
                    .parse()
                    .map_err(|_| EpiError::Config(format!("override path `{path}`: `{key}` is not an index")))?;
                let len = items.len();
                items
                    .get_mut(idx)
                    .ok_or_else(|| EpiError::Config(format!("override path `{path}`: index {idx} >= {len}")))?
            }
            _ => return Err(EpiError::Config(format!("override path `{path}` descends into a scalar"))),
        };
    }
    *slot = new;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back = RunConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        v["lerning_rate"] = Value::from(0.1);
        assert!(RunConfig::from_value(v).is_err());
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        v["optimizer"]["lr_typo"] = Value::from(0.1);
        assert!(RunConfig::from_value(v).is_err());
    }

    #[test]
    fn invariants_enforced() {
        for o in ["p=0", "p=1", "beta=1", "refresh_interval=0", "seeds=[]", "schema_version=2"] {
            assert!(RunConfig::resolve(None, &[o.to_string()]).is_err(), "{o}");
        }
        assert!(RunConfig::resolve(None, &["beta=0".to_string()]).is_ok());
    }

    #[test]
    fn overrides_follow_dotted_paths() {
        let c = RunConfig::resolve(
            None,
            &[
                "optimizer.lr=0.005".into(),
                "method=static".into(),
                "model.widths=[8,8]".into(),
                "seeds.0=42".into(),
                "output_dir=runs/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.optimizer.lr, 0.005);
        assert_eq!(c.method, Method::Static);
        assert_eq!(c.model.widths, vec![8, 8]);
        assert_eq!(c.seeds[0], 42);
        assert_eq!(c.output_dir, PathBuf::from("runs/x"));
        assert!(RunConfig::resolve(None, &["optimiser.lr=1".into()]).is_err());
        assert!(RunConfig::resolve(None, &["p".into()]).is_err());
    }

    #[test]
    fn method_mapping() {
        assert_eq!(Method::Epi.strategy(true), MaskStrategy::Epi);
        assert_eq!(Method::Epi.strategy(false), MaskStrategy::GlobalRaw);
        assert_eq!(Method::FullSft.strategy(true), MaskStrategy::None);
        assert_eq!(Method::MultistageHeuristic.ordering(Ordering::PaperSequence), Ordering::Heuristic);
        assert_eq!(Method::Static.ordering(Ordering::FullMix), Ordering::FullMix);
    }
}
