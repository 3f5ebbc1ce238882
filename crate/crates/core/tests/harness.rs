use std::fs;
use std::path::Path;

use deqnc_core::harness::{
    execute, export_gram, matrix_digest, read_features, read_gram_class_means, read_gram_samples, read_trace,
    ExperimentConfig, InitialState, Overrides, CONFIG_FILE, FEATURES_FILE, GRAM_CLASS_MEANS_FILE, GRAM_SAMPLES_FILE,
    REPORT_FILE, TRACE_FILE,
};
use deqnc_core::lpm::HeadKind;
use deqnc_core::numerics::{Matrix, Rng};

fn config(text: &str, out: &Path) -> ExperimentConfig {
    let overrides = Overrides {
        output_dir: Some(out.to_path_buf()),
        ..Default::default()
    };
    ExperimentConfig::from_toml(text, &overrides).unwrap()
}

const SHORT: &str = r#"
name = "short"
k = 3
d = 8
n = 5
steps = 400
log_every = 50
seed = 11
"#;

const IMBALANCED: &str = r#"
name = "short-imbalanced"
k_a = 2
k_b = 2
n_a = 20
r = 5
d = 8
steps = 200
log_every = 20
"#;

fn csv_files() -> Vec<String> {
    let mut out = Vec::new();
    for head in ["explicit", "deq"] {
        for f in [TRACE_FILE, FEATURES_FILE, GRAM_SAMPLES_FILE, GRAM_CLASS_MEANS_FILE] {
            out.push(format!("{head}/{f}"));
        }
    }
    out
}

#[test]
fn same_seed_same_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let a = execute(&config(SHORT, &tmp.path().join("a"))).unwrap();
    let b = execute(&config(SHORT, &tmp.path().join("b"))).unwrap();
    assert_eq!(a.record.without_timing(), b.record.without_timing());
    for f in csv_files() {
        let x = fs::read(a.dir.join(&f)).unwrap();
        let y = fs::read(b.dir.join(&f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
    let c = execute(&config(&format!("{SHORT}\n"), &tmp.path().join("c"))).unwrap();
    assert_eq!(c.record.config_hash, a.record.config_hash);
}

#[test]
fn heads_share_the_initial_features() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(SHORT, tmp.path());
    let out = execute(&cfg).unwrap();
    let want = matrix_digest(&InitialState::new(&cfg).unwrap().features.h0);
    let ex = out.record.head(HeadKind::Explicit).unwrap();
    let deq = out.record.head(HeadKind::Deq).unwrap();
    assert_eq!(ex.h0_sha256, want);
    assert_eq!(deq.h0_sha256, want);
}

#[test]
fn artifacts_parse_and_agree_with_the_record() {
    let tmp = tempfile::tempdir().unwrap();
    let out = execute(&config(SHORT, tmp.path())).unwrap();
    for (rec, trace) in out.record.heads.iter().zip(&out.traces) {
        let rows = read_trace(&out.dir.join(&rec.trace)).unwrap();
        assert_eq!(rows.len(), trace.snapshots.len());
        let last = rows.last().unwrap();
        assert_eq!(last.step, 400);
        assert_eq!(last.loss, rec.final_report.loss);
        assert_eq!(last.nc1, rec.final_report.nc1);
        assert_eq!(rows.iter().all(|r| r.solver_mean_iters.is_some()), rec.head == HeadKind::Deq);

        let dir = out.dir.join(rec.head.as_str());
        let (h, labels) = read_features(&dir.join(FEATURES_FILE)).unwrap();
        assert_eq!(labels, trace.features.labels());
        let (sample_labels, gram) = read_gram_samples(&dir.join(GRAM_SAMPLES_FILE)).unwrap();
        assert!(sample_labels.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(gram.shape(), (labels.len(), labels.len()));
        let means = read_gram_class_means(&dir.join(GRAM_CLASS_MEANS_FILE)).unwrap();
        assert_eq!(means.shape(), (3, 3));
        assert!((gram.trace() - h.frobenius_norm_sq()).abs() < 1e-12 * h.frobenius_norm_sq());
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.dir.join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(report["config_hash"], out.record.config_hash);
    let written = ExperimentConfig::load(&out.dir.join(CONFIG_FILE), &Overrides::default()).unwrap();
    assert_eq!(written.hash(), out.record.config_hash);
}

#[test]
fn gram_files_round_trip_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(3);
    let labels = vec![2, 0, 1, 0, 2, 1, 1];
    let h = rng.gaussian_matrix(4, labels.len(), 1.0);
    let (samples, classes) = export_gram(&h, &labels, tmp.path()).unwrap();
    let (sorted, gram) = read_gram_samples(&samples).unwrap();
    assert_eq!(sorted, vec![0, 0, 1, 1, 1, 2, 2]);
    let order = [1usize, 3, 2, 5, 6, 0, 4];
    let hs = h.select_columns(&order);
    assert_eq!(gram, hs.t_matmul(&hs));

    let means = read_gram_class_means(&classes).unwrap();
    let mut m = Matrix::zeros(4, 3);
    for c in 0..3 {
        let cols: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == c).collect();
        for i in 0..4 {
            m.set(i, c, cols.iter().map(|&j| h.get(i, j)).sum::<f64>() / cols.len() as f64);
        }
    }
    assert!(means.max_abs_diff(&m.t_matmul(&m)) < 1e-14);
}

#[test]
fn two_identical_unit_features() {
    let tmp = tempfile::tempdir().unwrap();
    let h = Matrix::from_rows(&[[1.0, 1.0], [0.0, 0.0]]).unwrap();
    let (samples, _) = export_gram(&h, &[0, 1], tmp.path()).unwrap();
    let (_, gram) = read_gram_samples(&samples).unwrap();
    assert_eq!(gram, Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap());
}

#[test]
fn imbalanced_run_reports_conditions_and_solver_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let out = execute(&config(IMBALANCED, tmp.path())).unwrap();
    let c = out.record.conditions.as_ref().unwrap();
    assert!(c.nc2_distance_explicit.is_some() && c.nc2_distance_deq.is_some());
    assert!(c.nc2_margin.is_finite() && c.nc3_margin.is_finite());
    for rec in &out.record.heads {
        assert!(rec.bound.is_none());
        assert!(rec.proposition1.is_some());
    }
    let deq = out.record.head(HeadKind::Deq).unwrap();
    assert!(deq.solver.is_some());
    let rows = read_trace(&out.dir.join(&deq.trace)).unwrap();
    assert!(rows.iter().all(|r| r.solver_mean_iters.is_some() && r.solver_skip_count.is_some()));
}
