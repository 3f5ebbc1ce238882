use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::deq::{OnFailure, SolverPolicy};
use crate::error::{Error, Result};
use crate::lpm::{DeqPath, HeadKind, TrainConfig};
use crate::theory::ImbalanceSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl Preset {
    pub fn train(self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig::desk(),
            Preset::Paper => TrainConfig::paper(),
        }
    }

    /// Default DEQ head budget. The head must be a contraction, so the desk
    /// preset does not reuse its unit `e_h`.
    pub fn deq_e_h(self) -> f64 {
        match self {
            Preset::Desk => 0.5,
            Preset::Paper => 0.01,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadSelection {
    Explicit,
    Deq,
    #[default]
    Both,
}

impl HeadSelection {
    pub fn kinds(self) -> Vec<HeadKind> {
        match self {
            HeadSelection::Explicit => vec![HeadKind::Explicit],
            HeadSelection::Deq => vec![HeadKind::Deq],
            HeadSelection::Both => vec![HeadKind::Explicit, HeadKind::Deq],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Balanced { n: usize },
    Imbalanced(ImbalanceSpec),
}

impl Layout {
    pub fn class_counts(&self, k: usize) -> Vec<usize> {
        match self {
            Layout::Balanced { n } => vec![*n; k],
            Layout::Imbalanced(spec) => spec.class_counts(),
        }
    }

    /// Majority classes first.
    pub fn labels(&self, k: usize) -> Vec<usize> {
        match self {
            Layout::Balanced { n } => (0..k).flat_map(|c| std::iter::repeat_n(c, *n)).collect(),
            Layout::Imbalanced(spec) => spec.labels(),
        }
    }

    pub fn imbalance(&self) -> Option<&ImbalanceSpec> {
        match self {
            Layout::Imbalanced(spec) => Some(spec),
            Layout::Balanced { .. } => None,
        }
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub preset: Preset,
    pub head: HeadSelection,
    pub k: usize,
    pub d0: usize,
    pub d: usize,
    pub layout: Layout,
    /// `train.e_h` bounds the explicit head and `deq_e_h` the DEQ head.
    pub train: TrainConfig,
    pub deq_e_h: f64,
    pub solver: SolverPolicy,
    /// Not part of the config hash.
    pub output_dir: PathBuf,
}

/// The on-disk form: a flat TOML table. Missing keys come from the preset.
///
/// ```toml
/// name = "balanced-k4"
/// preset = "desk"
/// head = "both"            # explicit | deq | both
/// k = 4
/// d0 = 16
/// d = 16
/// n = 10                   # balanced: samples per class
/// # imbalanced instead of n:
/// # k_a = 3
/// # k_b = 7
/// # n_a = 100
/// # r = 10                 # n_b = n_a / r
/// learning_rate = 0.05
/// momentum = 0.9
/// steps = 8000
/// e_w = 1.0
/// e_h = 1.0
/// deq_e_h = 0.5
/// feature_budget = 1.0
/// seed = 0
/// log_every = 100
/// metric_cutoff = 1e-10
/// deq_path = "auto"        # auto | closed-form | iterative
/// solver_epsilon = 1e-3
/// solver_t_max = 20
/// solver_on_failure = "skip"   # skip | error | accept-last
/// output_dir = "runs/balanced-k4"
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub name: Option<String>,
    pub preset: Option<Preset>,
    pub head: Option<HeadSelection>,
    pub k: Option<usize>,
    pub d0: Option<usize>,
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub k_a: Option<usize>,
    pub k_b: Option<usize>,
    pub n_a: Option<usize>,
    pub r: Option<f64>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub steps: Option<usize>,
    pub e_w: Option<f64>,
    pub e_h: Option<f64>,
    pub deq_e_h: Option<f64>,
    pub feature_budget: Option<f64>,
    pub seed: Option<u64>,
    pub log_every: Option<usize>,
    pub metric_cutoff: Option<f64>,
    pub deq_path: Option<DeqPath>,
    pub solver_epsilon: Option<f64>,
    pub solver_t_max: Option<usize>,
    pub solver_on_failure: Option<OnFailure>,
    pub minority_classes: Option<Vec<usize>>,
    pub output_dir: Option<PathBuf>,
}

/// Command-line overrides applied on top of a file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve(&self, overrides: &Overrides) -> Result<ExperimentConfig> {
        let preset = overrides.preset.or(self.preset).unwrap_or_default();
        let base = preset.train();
        let layout = match (self.n, self.k_a, self.k_b, self.n_a, self.r) {
            (Some(n), None, None, None, None) => Layout::Balanced { n },
            (None, Some(k_a), Some(k_b), Some(n_a), Some(r)) => {
                Layout::Imbalanced(ImbalanceSpec::from_ratio(k_a, k_b, n_a, r).map_err(|e| Error::Config(e.to_string()))?)
            }
            _ => {
                return Err(Error::Config(
                    "give either n (balanced) or all of k_a, k_b, n_a, r (imbalanced)".into(),
                ))
            }
        };
        let k = match (&layout, self.k) {
            (Layout::Imbalanced(spec), Some(k)) if k != spec.k() => {
                return Err(Error::Config(format!("k = {k} but k_a + k_b = {}", spec.k())));
            }
            (Layout::Imbalanced(spec), _) => spec.k(),
            (Layout::Balanced { .. }, Some(k)) => k,
            (Layout::Balanced { .. }, None) => return Err(Error::Config("missing k".into())),
        };
        let d = self.d.ok_or_else(|| Error::Config("missing d".into()))?;
        let d0 = self.d0.unwrap_or(d);
        let train = TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            momentum: self.momentum.unwrap_or(base.momentum),
            steps: self.steps.unwrap_or(base.steps),
            e_w: self.e_w.unwrap_or(base.e_w),
            e_h: self.e_h.unwrap_or(base.e_h),
            feature_budget: self.feature_budget.unwrap_or(base.feature_budget),
            seed: overrides.seed.or(self.seed).unwrap_or(base.seed),
            log_every: self.log_every.unwrap_or(base.log_every),
            metric_cutoff: self.metric_cutoff.unwrap_or(base.metric_cutoff),
            deq_path: self.deq_path.unwrap_or(base.deq_path),
            minority_classes: self.minority_classes.clone(),
        };
        let default_solver = SolverPolicy::default();
        let solver = SolverPolicy {
            epsilon: self.solver_epsilon.unwrap_or(default_solver.epsilon),
            t_max: self.solver_t_max.unwrap_or(default_solver.t_max),
            on_failure: self.solver_on_failure.unwrap_or(default_solver.on_failure),
        };
        let name = self.name.clone().unwrap_or_else(|| "run".into());
        let output_dir = overrides
            .output_dir
            .clone()
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs").join(&name));
        let cfg = ExperimentConfig {
            name,
            preset,
            head: self.head.unwrap_or_default(),
            k,
            d0,
            d,
            layout,
            train,
            deq_e_h: self.deq_e_h.unwrap_or(preset.deq_e_h()),
            solver,
            output_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<&ExperimentConfig> for ConfigFile {
    fn from(cfg: &ExperimentConfig) -> Self {
        let (n, k_a, k_b, n_a, r) = match cfg.layout {
            Layout::Balanced { n } => (Some(n), None, None, None, None),
            Layout::Imbalanced(s) => (None, Some(s.k_a), Some(s.k_b), Some(s.n_a), Some(s.r())),
        };
        let t = &cfg.train;
        ConfigFile {
            name: Some(cfg.name.clone()),
            preset: Some(cfg.preset),
            head: Some(cfg.head),
            k: Some(cfg.k),
            d0: Some(cfg.d0),
            d: Some(cfg.d),
            n,
            k_a,
            k_b,
            n_a,
            r,
            learning_rate: Some(t.learning_rate),
            momentum: Some(t.momentum),
            steps: Some(t.steps),
            e_w: Some(t.e_w),
            e_h: Some(t.e_h),
            deq_e_h: Some(cfg.deq_e_h),
            feature_budget: Some(t.feature_budget),
            seed: Some(t.seed),
            log_every: Some(t.log_every),
            metric_cutoff: Some(t.metric_cutoff),
            deq_path: Some(t.deq_path),
            solver_epsilon: Some(cfg.solver.epsilon),
            solver_t_max: Some(cfg.solver.t_max),
            solver_on_failure: Some(cfg.solver.on_failure),
            minority_classes: t.minority_classes.clone(),
            output_dir: Some(cfg.output_dir.clone()),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, overrides: &Overrides) -> Result<Self> {
        ConfigFile::parse(text)?.resolve(overrides)
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&ConfigFile::from(self)).expect("flat config always serializes")
    }

    /// Balanced desk run: K=4, n=10, D₀=D=16, 8000 steps.
    pub fn desk_balanced() -> Self {
        let file = ConfigFile {
            name: Some("desk-balanced".into()),
            k: Some(4),
            d: Some(16),
            n: Some(10),
            ..Default::default()
        };
        file.resolve(&Overrides::default()).expect("built-in config is valid")
    }

    /// Imbalanced desk run with `n_A = 100` and `n_B = 100 / r`.
    pub fn desk_imbalanced(k_a: usize, k_b: usize, r: f64) -> Result<Self> {
        let file = ConfigFile {
            name: Some(format!("desk-ka{k_a}-kb{k_b}-r{r}")),
            d: Some(16),
            k_a: Some(k_a),
            k_b: Some(k_b),
            n_a: Some(100),
            r: Some(r),
            ..Default::default()
        };
        file.resolve(&Overrides::default())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("k must be >= 2, got {}", self.k)));
        }
        if self.d < 2 || self.d0 < 2 {
            return Err(Error::Config(format!("d and d0 must be >= 2, got {} and {}", self.d, self.d0)));
        }
        if let Layout::Balanced { n: 0 } = self.layout {
            return Err(Error::Config("n must be positive".into()));
        }
        if self.head != HeadSelection::Explicit && self.d0 != self.d {
            return Err(Error::Config(format!("a DEQ head needs d0 = d, got {} and {}", self.d0, self.d)));
        }
        if !(self.deq_e_h > 0.0) || !self.deq_e_h.is_finite() {
            return Err(Error::Config(format!("deq_e_h must be positive, got {}", self.deq_e_h)));
        }
        if let Some(m) = &self.train.minority_classes {
            if m.iter().any(|&c| c >= self.k) {
                return Err(Error::Config(format!("minority class out of range in {m:?}")));
            }
        }
        self.train.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(msg),
            other => Error::Config(other.to_string()),
        })?;
        self.solver.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn head_budget(&self, kind: HeadKind) -> f64 {
        match kind {
            HeadKind::Explicit => self.train.e_h,
            HeadKind::Deq => self.deq_e_h,
        }
    }

    /// Training settings for one head.
    pub fn train_for(&self, kind: HeadKind) -> TrainConfig {
        TrainConfig {
            e_h: self.head_budget(kind),
            ..self.train.clone()
        }
    }

    /// Canonical JSON: keys sorted, `output_dir` dropped.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(map) = &mut v {
            map.remove("output_dir");
        }
        // serde_json's default map is ordered by key, at every level
        serde_json::to_string(&v).expect("value serializes")
    }

    /// Hex SHA-256 of [`canonical_json`](Self::canonical_json).
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// The nine imbalanced desk configs: `(K_A, K_B) ∈ {(3,7), (5,5), (7,3)}`,
/// `R ∈ {10, 50, 100}`.
pub fn desk_grid() -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for (k_a, k_b) in [(3, 7), (5, 5), (7, 3)] {
        for r in [10.0, 50.0, 100.0] {
            out.push(ExperimentConfig::desk_imbalanced(k_a, k_b, r).expect("grid configs are valid"));
        }
    }
    out
}
