use serde::{Deserialize, Serialize};

use super::model::{evaluate, gradients, project_feasible, Evaluation, HeadState};
use super::{ClassifierWeights, FeatureSet, HeadModel, TrainConfig};
use crate::deq::{iterate_columns, OnFailure, SolverPolicy};
use crate::error::{Error, Result};
use crate::metrics::{default_minority_classes, nc_report, NcReport, ReportInputs};
use crate::numerics::Matrix;

/// Picard-solver diagnostics for a DEQ head at one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub mean_iterations: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub report: NcReport,
    pub solver: Option<SolverStats>,
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    /// Ordered by step: step 0, every `log_every` steps, and the last step.
    pub snapshots: Vec<Snapshot>,
    /// Loss before each update plus the final loss (`steps + 1` values).
    pub loss_history: Vec<f64>,
    pub features: FeatureSet,
    pub head: HeadModel,
    pub cls: ClassifierWeights,
}

impl TrainTrace {
    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("a trace always holds the initial snapshot")
    }
}

fn solver_stats(head: &HeadModel, eval: &Evaluation, h0: &Matrix) -> Result<Option<SolverStats>> {
    let HeadModel::Deq { weights, policy } = head else {
        return Ok(None);
    };
    let solve = match &eval.state {
        HeadState::Iterated(solve) => solve.clone(),
        // the closed-form path runs the iteration only as a diagnostic
        _ => {
            let diag = SolverPolicy {
                on_failure: OnFailure::AcceptLast,
                ..*policy
            };
            iterate_columns(&weights.w_deq, h0, &diag)?
        }
    };
    Ok(Some(SolverStats {
        mean_iterations: solve.mean_iterations(),
        skipped: solve.skipped(),
    }))
}

fn snapshot(
    step: usize,
    fs: &FeatureSet,
    head: &HeadModel,
    cls: &ClassifierWeights,
    eval: &Evaluation,
    cfg: &TrainConfig,
    minority: &[usize],
) -> Result<Snapshot> {
    let report = nc_report(&ReportInputs {
        features: &eval.features,
        labels: fs.labels(),
        k: fs.k(),
        w: &cls.w,
        logits: &eval.logits,
        loss: eval.loss,
        cutoff: cfg.metric_cutoff,
        minority,
    })?;
    Ok(Snapshot {
        step,
        report,
        solver: solver_stats(head, eval, &fs.h0)?,
    })
}

/// Full-batch projected gradient descent with heavy-ball momentum over
/// `H⁰`, the head weight and `W`:
///
/// ```text
/// v ← μ·v + ∇,   x ← Π(x − lr·v)
/// ```
///
/// The inputs are projected once before the first step. A non-finite loss
/// aborts with [`Error::NonFiniteLoss`] carrying the last snapshot.
pub fn train(fs: &FeatureSet, head: &HeadModel, cls: &ClassifierWeights, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    let minority = match &cfg.minority_classes {
        Some(m) => m.clone(),
        None => default_minority_classes(fs.class_counts()),
    };
    let (mut fs, mut head, mut cls) = project_feasible(fs, head, cls, cfg)?;
    let mut v_w = Matrix::zeros(cls.w.rows(), cls.w.cols());
    let mut v_head = Matrix::zeros(head.weight().rows(), head.weight().cols());
    let mut v_h0 = Matrix::zeros(fs.h0.rows(), fs.h0.cols());
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut loss_history = Vec::with_capacity(cfg.steps + 1);

    for step in 0..=cfg.steps {
        let eval = evaluate(&fs, &head, &cls, cfg.deq_path)?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                last_valid: snapshots.pop().map(Box::new),
            });
        }
        loss_history.push(eval.loss);
        if step % cfg.log_every == 0 || step == cfg.steps {
            snapshots.push(snapshot(step, &fs, &head, &cls, &eval, cfg, &minority)?);
        }
        if step == cfg.steps {
            break;
        }

        let g = gradients(&fs, &head, &cls, &eval)?;
        let lr = cfg.learning_rate;
        for (v, grad) in [(&mut v_w, &g.w), (&mut v_head, &g.head), (&mut v_h0, &g.h0)] {
            v.scale_in_place(cfg.momentum);
            v.add_scaled(1.0, grad);
        }
        cls.w.add_scaled(-lr, &v_w);
        head.weight_mut().add_scaled(-lr, &v_head);
        fs.h0.add_scaled(-lr, &v_h0);
        (fs, head, cls) = project_feasible(&fs, &head, &cls, cfg)?;
    }

    Ok(TrainTrace {
        snapshots,
        loss_history,
        features: fs,
        head,
        cls,
    })
}
