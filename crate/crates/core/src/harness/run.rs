use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::artifacts::{export_gram, write_features, write_trace, FEATURES_FILE, TRACE_FILE};
use super::config::{ExperimentConfig, HeadSelection, Layout};
use super::dataset::{matrix_digest, InitialState};
use crate::error::{Error, Result};
use crate::etf::etf_gram;
use crate::lpm::{forward, head_features, train, HeadKind, SolverStats, TrainTrace};
use crate::metrics::{class_alignment, class_statistics, NcReport};
use crate::numerics::Matrix;
use crate::theory::{
    balanced_lower_bounds, constants_from_ratio, mean_logit_gap, proposition1_check, ratio_from_gap,
    theorem2_conditions, ConditionReport, Proposition1Report,
};

pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.toml";
/// Written instead of `report.json` when a run fails; holds the error text.
pub const FAILED_FILE: &str = "FAILED";

/// Slack of the loss-versus-bound comparison.
pub const BOUND_TOL: f64 = 1e-9;
/// Relative tolerance of the extreme-imbalance diagnostics.
pub const PROPOSITION1_TOL: f64 = 0.1;

/// Final loss against the balanced lower bounds, with constants taken from
/// the optimal ratio at the run's mean logit gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub mean_logit_gap: f64,
    /// `c1/c2`.
    pub ratio: f64,
    pub explicit_bound: f64,
    pub deq_bound: f64,
    /// The bound for this head.
    pub bound: f64,
    pub loss: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadRecord {
    pub head: HeadKind,
    pub e_h: f64,
    /// Digest of the `H⁰` this head started from.
    pub h0_sha256: String,
    pub final_step: usize,
    pub final_report: NcReport,
    /// Mean and standard deviation of accuracy over the last 10 snapshots.
    /// This is training accuracy: the features are parameters, so there is
    /// no held-out set.
    pub accuracy_last10_mean: f64,
    pub accuracy_last10_std: f64,
    pub solver: Option<SolverStats>,
    /// `‖H̄ᵀH̄ − S‖_F` for the final class means against the ETF Gram at the
    /// feature budget.
    pub nc2_distance: f64,
    /// Mean cosine between class means and classifier rows.
    pub mean_class_cosine: f64,
    pub bound: Option<BoundCheck>,
    pub proposition1: Option<Proposition1Report>,
    /// Relative to the run directory.
    pub trace: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub duration_secs: f64,
    pub heads: Vec<HeadRecord>,
    /// Imbalanced runs only; `None` also when the DEQ budget is outside `(0, 1)`.
    pub conditions: Option<ConditionReport>,
}

impl RunRecord {
    pub fn head(&self, kind: HeadKind) -> Option<&HeadRecord> {
        self.heads.iter().find(|h| h.head == kind)
    }

    /// The record with the wall-clock field zeroed.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord {
            duration_secs: 0.0,
            ..self.clone()
        }
    }
}

pub struct RunOutput {
    pub record: RunRecord,
    pub traces: Vec<TrainTrace>,
    pub dir: PathBuf,
}

fn accuracy_window(trace: &TrainTrace) -> (f64, f64) {
    let acc: Vec<f64> = trace.snapshots.iter().rev().take(10).map(|s| s.report.accuracy).collect();
    let n = acc.len() as f64;
    let mean = acc.iter().sum::<f64>() / n;
    let var = acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Gram of the per-class sums of `H⁰` columns.
pub fn class_sum_gram(h0: &Matrix, labels: &[usize], k: usize) -> Matrix {
    let mut sums = Matrix::zeros(h0.rows(), k);
    for (j, &l) in labels.iter().enumerate() {
        for r in 0..h0.rows() {
            sums.set(r, l, sums.get(r, l) + h0.get(r, j));
        }
    }
    sums.t_matmul(&sums)
}

fn bound_check(cfg: &ExperimentConfig, trace: &TrainTrace, loss: f64) -> Result<BoundCheck> {
    let logits = forward(&trace.features, &trace.head, &trace.cls)?;
    let gap = mean_logit_gap(&logits, trace.features.labels())?;
    let ratio = ratio_from_gap(gap, cfg.k);
    let consts = constants_from_ratio(ratio, cfg.k)?;
    let b = balanced_lower_bounds(cfg.train.e_w, cfg.train.feature_budget, cfg.k, &consts)?;
    let bound = match trace.head.kind() {
        HeadKind::Explicit => b.explicit_bound,
        HeadKind::Deq => b.deq_bound,
    };
    Ok(BoundCheck {
        mean_logit_gap: gap,
        ratio,
        explicit_bound: b.explicit_bound,
        deq_bound: b.deq_bound,
        bound,
        loss,
        holds: loss >= bound - BOUND_TOL,
    })
}

fn head_record(cfg: &ExperimentConfig, trace: &TrainTrace, h0_sha256: String) -> Result<HeadRecord> {
    let kind = trace.head.kind();
    let last = trace.final_snapshot();
    let h = head_features(&trace.head, &trace.features.h0)?;
    let stats = class_statistics(&h, trace.features.labels(), cfg.k)?;
    let means = stats.class_means;
    let s = etf_gram(cfg.k, cfg.train.feature_budget.sqrt());
    let nc2_distance = means.t_matmul(&means).sub(&s).frobenius_norm();
    let cosines = class_alignment(&trace.cls.w, &means);
    let (accuracy_last10_mean, accuracy_last10_std) = accuracy_window(trace);
    let (bound, proposition1) = match &cfg.layout {
        Layout::Balanced { .. } => (Some(bound_check(cfg, trace, last.report.loss)?), None),
        Layout::Imbalanced(spec) => (None, Some(proposition1_check(trace, spec, PROPOSITION1_TOL)?)),
    };
    Ok(HeadRecord {
        head: kind,
        e_h: cfg.head_budget(kind),
        h0_sha256,
        final_step: last.step,
        final_report: last.report.clone(),
        accuracy_last10_mean,
        accuracy_last10_std,
        solver: last.solver,
        nc2_distance,
        mean_class_cosine: cosines.iter().sum::<f64>() / cosines.len() as f64,
        bound,
        proposition1,
        trace: PathBuf::from(kind.as_str()).join(TRACE_FILE),
    })
}

fn write_head_artifacts(dir: &Path, trace: &TrainTrace) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_trace(&dir.join(TRACE_FILE), trace.features.k(), &trace.snapshots)?;
    let h = head_features(&trace.head, &trace.features.h0)?;
    write_features(&dir.join(FEATURES_FILE), &h, trace.features.labels())?;
    export_gram(&h, trace.features.labels(), dir)?;
    Ok(())
}

fn conditions(cfg: &ExperimentConfig, init: &InitialState) -> Result<Option<ConditionReport>> {
    if cfg.layout.imbalance().is_none() || !(cfg.deq_e_h < 1.0) {
        return Ok(None);
    }
    let fs = &init.features;
    let m = class_sum_gram(&fs.h0, fs.labels(), cfg.k);
    let s = etf_gram(cfg.k, cfg.train.feature_budget.sqrt());
    theorem2_conditions(cfg.train.e_w, cfg.deq_e_h, &m, &s).map(Some)
}

fn execute_inner(cfg: &ExperimentConfig, dir: &Path, started: Instant) -> Result<RunOutput> {
    let init = InitialState::new(cfg)?;
    let h0_digest = matrix_digest(&init.features.h0);
    let mut heads = Vec::new();
    let mut traces = Vec::new();
    for kind in cfg.head.kinds() {
        let head = init.head(cfg, kind)?;
        let fs = init.features.clone();
        let consumed = matrix_digest(&fs.h0);
        if consumed != h0_digest {
            return Err(Error::InvalidArgument(format!("{} head saw a different H0", kind.as_str())));
        }
        let trace = train(&fs, &head, &init.cls, &cfg.train_for(kind))?;
        write_head_artifacts(&dir.join(kind.as_str()), &trace)?;
        heads.push(head_record(cfg, &trace, consumed)?);
        traces.push(trace);
    }

    let mut conditions = conditions(cfg, &init)?;
    if let (Some(c), HeadSelection::Both) = (conditions.as_mut(), cfg.head) {
        let ex = &heads[0];
        let deq = &heads[1];
        c.nc2_distance_explicit = Some(ex.nc2_distance);
        c.nc2_distance_deq = Some(deq.nc2_distance);
        // undefined when the explicit class means are orthogonal to (or
        // opposite) their classifier rows on average
        c.nc3_cosine_ratio = (ex.mean_class_cosine > 0.0).then(|| deq.mean_class_cosine / ex.mean_class_cosine);
    }
    let record = RunRecord {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        seed: cfg.train.seed,
        duration_secs: started.elapsed().as_secs_f64(),
        heads,
        conditions,
    };
    let report = dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&record).expect("record serializes");
    fs::write(&report, json + "\n").map_err(|e| Error::io(&report, e))?;
    Ok(RunOutput {
        record,
        traces,
        dir: dir.to_path_buf(),
    })
}

/// Trains the requested heads from one shared initialization and writes
/// every artifact under `cfg.output_dir`:
///
/// ```text
/// config.toml  report.json
/// explicit/{trace,features,gram_samples,gram_class_means}.csv
/// deq/...
/// ```
///
/// On failure the artifacts written so far stay in place next to a `FAILED`
/// file holding the error.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for stale in [FAILED_FILE, REPORT_FILE] {
        let p = dir.join(stale);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    execute_inner(cfg, &dir, started).inspect_err(|e| {
        // best effort: the original error matters more than this write
        let _ = fs::write(dir.join(FAILED_FILE), format!("{e}\n"));
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    execute(cfg).map(|o| o.record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Overrides;

    #[test]
    fn class_sums() {
        let h = Matrix::from_rows(&[[1.0, 2.0, -1.0]]).unwrap();
        let g = class_sum_gram(&h, &[0, 0, 1], 2);
        assert_eq!(g, Matrix::from_rows(&[[9.0, -3.0], [-3.0, 1.0]]).unwrap());
    }

    #[test]
    fn failure_leaves_marker() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "k = 3\nd = 4\nn = 3\nhead = \"deq\"\ndeq_path = \"iterative\"\nsolver_t_max = 1\nsolver_epsilon = 1e-14\nsolver_on_failure = \"error\"\nsteps = 5\noutput_dir = {:?}\n",
            dir.path().join("r")
        );
        let cfg = ExperimentConfig::from_toml(&text, &Overrides::default()).unwrap();
        let err = run_experiment(&cfg).unwrap_err();
        assert!(matches!(err, Error::SolverNonConvergence { .. }), "{err}");
        let marker = fs::read_to_string(dir.path().join("r").join(FAILED_FILE)).unwrap();
        assert_eq!(marker.trim(), err.to_string());
        assert!(dir.path().join("r").join(CONFIG_FILE).exists());
    }
}
