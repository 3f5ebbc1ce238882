//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{central_difference, naive_nc1, naive_nc2, naive_nc3, rel_err};
use deqnc_core::deq::{fixed_point_closed_form, fixed_point_iterate, DeqWeights, OnFailure, SolverPolicy};
use deqnc_core::etf::{etf_gram, make_etf};
use deqnc_core::harness::{execute, run_all, ExperimentConfig, HeadRecord, HeadSelection, Overrides, RunOutput, TRACE_FILE};
use deqnc_core::lpm::{cross_entropy, forward, loss_and_gradients, ClassifierWeights, FeatureSet, HeadKind, HeadModel};
use deqnc_core::metrics::{class_statistics, nc1, nc2, nc3};
use deqnc_core::numerics::{svd, Matrix, Rng};
use deqnc_core::theory::lemma1_fuzz;

const NC_THRESHOLD: f64 = 0.05;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, secs: f64) -> bool {
    elapsed.as_secs_f64() < secs
}

fn etf_grid() -> Outcome {
    let started = Instant::now();
    let mut rng = Rng::new(0);
    let mut worst = 0.0f64;
    let mut frames = 0;
    for k in 2..=10 {
        for d in k..=32 {
            for alpha in [0.5, 1.0, 2.0] {
                let f = make_etf(k, d, alpha, &mut rng).unwrap();
                let orth = f.p.t_matmul(&f.p).sub(&Matrix::identity(k)).frobenius_norm();
                let gram = f.gram().sub(&etf_gram(k, alpha)).frobenius_norm();
                worst = worst.max(orth).max(gram);
                frames += 1;
            }
        }
    }
    let t = started.elapsed();
    outcome(
        worst <= 1e-10 && within(t, 5.0),
        format!("{frames} frames, worst deviation {worst:.2e} (tol 1e-10), {:.2}s (limit 5s)", t.as_secs_f64()),
    )
}

fn fixed_point_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = Rng::new(1);
    let policy = SolverPolicy {
        epsilon: 1e-12,
        t_max: 10_000,
        on_failure: OnFailure::Error,
    };
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let d = 2 + rng.below(15);
        let n = 1 + rng.below(8);
        let m = rng.gaussian_matrix(d, d, 1.0);
        let sigma = rng.uniform_in(0.0, 0.9);
        let w = m.scale(sigma / svd(&m).unwrap().sigma_max());
        let norm = w.frobenius_norm();
        let weights = DeqWeights::new(w, norm.max(1e-300)).unwrap();
        let h0 = rng.gaussian_matrix(d, n, 1.0);
        let it = fixed_point_iterate(&weights, &h0, &policy).unwrap();
        let cf = fixed_point_closed_form(&weights, &h0).unwrap();
        worst = worst.max(it.z_star.sub(&cf).frobenius_norm());
    }
    let t = started.elapsed();
    outcome(
        worst <= 1e-8 && within(t, 10.0),
        format!("200 pairs, worst ‖iterative − closed form‖_F {worst:.2e} (tol 1e-8), {:.2}s (limit 10s)", t.as_secs_f64()),
    )
}

fn gradient_checks() -> Outcome {
    let started = Instant::now();
    let (k, n, d) = (3, 4, 6);
    let labels: Vec<usize> = (0..k * n).map(|i| i % k).collect();
    let mut rng = Rng::new(2);
    let mut worst = 0.0f64;
    for kind in [HeadKind::Explicit, HeadKind::Deq] {
        for _ in 0..20 {
            let fs = FeatureSet::new(rng.gaussian_matrix(d, k * n, 1.0), labels.clone(), k).unwrap();
            let cls = ClassifierWeights::new(rng.gaussian_matrix(k, d, 0.7), 10.0).unwrap();
            let g = rng.gaussian_matrix(d, d, 1.0);
            let build = |w: &Matrix| match kind {
                HeadKind::Explicit => HeadModel::explicit(w.clone(), 100.0).unwrap(),
                HeadKind::Deq => HeadModel::deq(w.clone(), 0.9, SolverPolicy::default()).unwrap(),
            };
            let hw = match kind {
                HeadKind::Explicit => g,
                HeadKind::Deq => g.scale(0.5 / g.frobenius_norm()),
            };
            let head = build(&hw);
            let loss = |fs: &FeatureSet, head: &HeadModel, cls: &ClassifierWeights| {
                cross_entropy(&forward(fs, head, cls).unwrap(), fs.labels()).unwrap()
            };
            let (_, grads) = loss_and_gradients(&fs, &head, &cls).unwrap();
            let fd_w = central_difference(&cls.w, |w| loss(&fs, &head, &ClassifierWeights::new(w.clone(), cls.e_w).unwrap()));
            let fd_head = central_difference(&hw, |w| loss(&fs, &build(w), &cls));
            let fd_h0 = central_difference(&fs.h0, |h0| loss(&fs.with_h0(h0.clone()).unwrap(), &head, &cls));
            worst = worst
                .max(rel_err(&grads.w, &fd_w))
                .max(rel_err(&grads.head, &fd_head))
                .max(rel_err(&grads.h0, &fd_h0));
        }
    }
    let t = started.elapsed();
    outcome(
        worst < 1e-4 && within(t, 30.0),
        format!("20 instances per head, worst relative error {worst:.2e} (tol 1e-4), {:.2}s (limit 30s)", t.as_secs_f64()),
    )
}

fn balanced_config(kind: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk_balanced();
    cfg.name = format!("acceptance-balanced-{kind}");
    cfg.head = if kind == "deq" { HeadSelection::Deq } else { HeadSelection::Explicit };
    cfg.output_dir = out.join(&cfg.name);
    cfg
}

struct BalancedRuns {
    explicit: RunOutput,
    deq: RunOutput,
    times: [Duration; 2],
}

fn head_of(out: &RunOutput) -> &HeadRecord {
    &out.record.heads[0]
}

fn balanced_runs(out: &Path) -> BalancedRuns {
    let started = Instant::now();
    let explicit = execute(&balanced_config("explicit", out)).unwrap();
    let t_ex = started.elapsed();
    let started = Instant::now();
    let deq = execute(&balanced_config("deq", out)).unwrap();
    BalancedRuns {
        explicit,
        deq,
        times: [t_ex, started.elapsed()],
    }
}

fn nc_emergence(runs: &BalancedRuns) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (out, t) in [(&runs.explicit, runs.times[0]), (&runs.deq, runs.times[1])] {
        let h = head_of(out);
        let r = &h.final_report;
        let ok = r.nc1 < NC_THRESHOLD && r.nc2 < NC_THRESHOLD && r.nc3 < NC_THRESHOLD && within(t, 60.0);
        pass &= ok;
        parts.push(format!(
            "{} (budget {}) nc1 {:.2e} nc2 {:.2e} nc3 {:.2e} in {:.1}s",
            h.head.as_str(),
            h.e_h,
            r.nc1,
            r.nc2,
            r.nc3,
            t.as_secs_f64()
        ));
    }
    outcome(pass, format!("{}; thresholds 0.05, limit 60s per head", parts.join("; ")))
}

fn bound_validity(runs: &BalancedRuns) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for out in [&runs.explicit, &runs.deq] {
        let h = head_of(out);
        let b = h.bound.as_ref().unwrap();
        let ok = b.loss >= b.bound - 1e-9 && b.deq_bound <= b.explicit_bound;
        pass &= ok;
        parts.push(format!(
            "{} loss {:.9} ≥ bound {:.9} (deq {:.6} ≤ explicit {:.6})",
            h.head.as_str(),
            b.loss,
            b.bound,
            b.deq_bound,
            b.explicit_bound
        ));
    }
    outcome(pass, format!("{}; slack 1e-9", parts.join("; ")))
}

fn lemma_fuzz() -> Outcome {
    let started = Instant::now();
    let r = lemma1_fuzz(10_000, 5).unwrap();
    let t = started.elapsed();
    outcome(
        r.violations == 0 && r.symmetric_gap < 1e-10 && within(t, 5.0),
        format!(
            "{} draws, {} violations (slack 1e-12), worst lhs − rhs {:.2e}, symmetric |lhs − rhs| {:.2e} (tol 1e-10), {:.2}s (limit 5s)",
            r.draws,
            r.violations,
            r.worst_excess,
            r.symmetric_gap,
            t.as_secs_f64()
        ),
    )
}

fn minority_collapse(out: &Path) -> Outcome {
    let started = Instant::now();
    let mut imb = ExperimentConfig::desk_imbalanced(3, 7, 100.0).unwrap();
    imb.output_dir = out.join(&imb.name);
    let imbalanced = execute(&imb).unwrap();

    let minority: Vec<usize> = (3..10).collect();
    let text = format!("name = \"acceptance-balanced-k10\"\nk = 10\nd = 16\nn = 10\nminority_classes = {minority:?}\n");
    let overrides = Overrides {
        output_dir: Some(out.join("acceptance-balanced-k10")),
        ..Default::default()
    };
    let balanced = execute(&ExperimentConfig::from_toml(&text, &overrides).unwrap()).unwrap();
    let t = started.elapsed();

    let mut pass = within(t, 90.0);
    let mut parts = Vec::new();
    for (h, b) in imbalanced.record.heads.iter().zip(&balanced.record.heads) {
        let norms = &h.final_report.per_class_weight_norm;
        let majority = norms[..3].iter().sum::<f64>() / 3.0;
        let minority_norm = norms[3..].iter().sum::<f64>() / 7.0;
        let index = h.final_report.minority_mean_pairwise_cosine;
        let reference = b.final_report.minority_mean_pairwise_cosine;
        let ok = index - reference >= 0.3 && minority_norm < 0.5 * majority;
        pass &= ok;
        parts.push(format!(
            "{} index {:.3} vs balanced {:.3} (need +0.3), minority ‖w‖ {:.3} vs majority {:.3} (need < 0.5×)",
            h.head.as_str(),
            index,
            reference,
            minority_norm,
            majority
        ));
    }
    outcome(pass, format!("{}; {:.1}s (limit 90s)", parts.join("; "), t.as_secs_f64()))
}

fn theorem2_consequent(out: &Path) -> Outcome {
    let started = Instant::now();
    let configs: Vec<ExperimentConfig> = (0..10)
        .map(|seed| {
            let mut cfg = ExperimentConfig::desk_imbalanced(2, 2, 50.0).unwrap();
            cfg.train.seed = seed;
            cfg.name = format!("{}-seed{seed}", cfg.name);
            cfg.output_dir = out.join(&cfg.name);
            cfg
        })
        .collect();
    let records: Vec<_> = run_all(&configs).into_iter().map(|r| r.unwrap()).collect();
    let t = started.elapsed();

    let mut held = 0;
    let mut violated = Vec::new();
    let mut closer = 0;
    for r in &records {
        let c = r.conditions.as_ref().unwrap();
        let (d_ex, d_deq) = (c.nc2_distance_explicit.unwrap(), c.nc2_distance_deq.unwrap());
        if d_deq <= d_ex {
            closer += 1;
        }
        if c.nc2_condition_holds && c.nc3_condition_holds {
            held += 1;
            let ratio_ok = c.nc3_cosine_ratio.is_some_and(|x| x >= 1.0 - 0.05);
            if !(d_deq <= d_ex && ratio_ok) {
                violated.push(r.seed);
            }
        }
    }
    let best_margin = records
        .iter()
        .map(|r| r.conditions.as_ref().unwrap().nc2_margin)
        .fold(f64::NEG_INFINITY, f64::max);
    outcome(
        violated.is_empty() && within(t, 600.0),
        format!(
            "conditions held in {held}/10 seeds (best nc2 margin {best_margin:.3}), consequent violated in {violated:?}; \
             unconditioned: deq NC2 distance ≤ explicit in {closer}/10; {:.1}s (limit 600s)",
            t.as_secs_f64()
        ),
    )
}

fn determinism(runs: &BalancedRuns, out: &Path) -> Outcome {
    let again = out.join("repeat");
    let mut pass = true;
    let mut parts = Vec::new();
    for (first, kind) in [(&runs.explicit, "explicit"), (&runs.deq, "deq")] {
        let second = execute(&balanced_config(kind, &again)).unwrap();
        let a = fs::read(first.dir.join(kind).join(TRACE_FILE)).unwrap();
        let b = fs::read(second.dir.join(kind).join(TRACE_FILE)).unwrap();
        let same = a == b && first.record.without_timing() == second.record.without_timing();
        pass &= same;
        parts.push(format!("{kind} trace.csv {} ({} bytes)", if a == b { "identical" } else { "differs" }, a.len()));
    }
    outcome(pass, parts.join("; "))
}

fn metric_oracles() -> Outcome {
    let mut rng = Rng::new(10);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let k = 2 + rng.below(5);
        let n = 1 + rng.below(8);
        let d = k + rng.below(11 - k);
        let labels: Vec<usize> = (0..k * n).map(|i| i % k).collect();
        let centres = rng.gaussian_matrix(d, k, 2.0);
        let h = Matrix::from_fn(d, k * n, |i, j| centres.get(i, labels[j]) + 0.3 * rng.normal());
        let w = rng.gaussian_matrix(k, d, 1.0);
        let s = class_statistics(&h, &labels, k).unwrap();
        worst = worst
            .max((nc1(&s, 1e-10).unwrap() - naive_nc1(&h, &labels, k, 1e-10)).abs())
            .max((nc2(&s.class_means).unwrap() - naive_nc2(&h, &labels, k)).abs())
            .max((nc3(&w, &s.class_means).unwrap() - naive_nc3(&w, &h, &labels, k)).abs());
    }
    outcome(worst <= 1e-9, format!("50 instances, worst |metric − reference| {worst:.2e} (tol 1e-9)"))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        }
    }
}

fn main() -> ExitCode {
    panic::set_hook(Box::new(|_| {}));
    let tmp = tempfile::tempdir().expect("temp dir");
    let out = tmp.path();
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut report = |n: u8, name: &'static str, o: Outcome| {
        println!("[{}] criterion {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };

    report(1, "ETF correctness", guarded(etf_grid));
    report(2, "fixed-point oracle equivalence", guarded(fixed_point_oracle));
    report(3, "gradient checks", guarded(gradient_checks));
    let runs = panic::catch_unwind(AssertUnwindSafe(|| balanced_runs(out))).ok();
    let missing = || outcome(false, "balanced runs failed");
    report(4, "balanced NC emergence", runs.as_ref().map_or_else(missing, |r| guarded(|| nc_emergence(r))));
    report(5, "log-bound fuzz", guarded(lemma_fuzz));
    report(6, "bound validity", runs.as_ref().map_or_else(missing, |r| guarded(|| bound_validity(r))));
    report(7, "minority collapse", guarded(|| minority_collapse(out)));
    report(8, "imbalanced comparison consequent", guarded(|| theorem2_consequent(out)));
    report(9, "determinism", runs.as_ref().map_or_else(missing, |r| guarded(|| determinism(r, out))));
    report(10, "metric oracle equivalence", guarded(metric_oracles));

    let failed: Vec<u8> = results.iter().filter(|(_, _, o)| !o.pass).map(|(n, _, _)| *n).collect();
    if failed.is_empty() {
        println!("all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
