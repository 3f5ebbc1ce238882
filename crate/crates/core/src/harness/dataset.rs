use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::Result;
use crate::lpm::{feature_energy, gaussian_with_norm, init_features, ClassifierWeights, FeatureSet, HeadKind, HeadModel};
use crate::numerics::{Matrix, Rng};

/// Labels laid out majority-first and an i.i.d. Gaussian `H⁰` at half the
/// feature budget (measured on `H⁰` itself).
pub fn synthesize_dataset(cfg: &ExperimentConfig, rng: &mut Rng) -> Result<FeatureSet> {
    let labels = cfg.layout.labels(cfg.k);
    init_features(labels, cfg.k, cfg.d0, cfg.train.feature_budget / 2.0, rng)
}

/// Everything both heads start from.
///
/// Both heads share the classifier draw and the head direction `G`
/// (`‖G‖_F = 1`); each head scales `G` to half its own budget. `H⁰` is then
/// rescaled so the explicit head's features `(e_h/2)·G·H⁰` sit at half the
/// feature budget, and that one `H⁰` feeds every head.
#[derive(Debug, Clone)]
pub struct InitialState {
    pub features: FeatureSet,
    pub cls: ClassifierWeights,
    pub direction: Matrix,
}

impl InitialState {
    /// Draw order from `Rng::new(seed)`: `H⁰`, `W`, `G`.
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let mut rng = Rng::new(cfg.train.seed);
        let fs = synthesize_dataset(cfg, &mut rng)?;
        let e_w = cfg.train.e_w;
        let w = gaussian_with_norm(&mut rng, cfg.k, cfg.d, (cfg.k as f64 * e_w / 2.0).sqrt());
        let direction = gaussian_with_norm(&mut rng, cfg.d, cfg.d0, 1.0);

        let h = direction.scale(cfg.train.e_h / 2.0).matmul(&fs.h0);
        let energy = feature_energy(&h, fs.labels(), fs.class_counts());
        let h0 = fs.h0.scale((cfg.train.feature_budget / 2.0 / energy).sqrt());
        Ok(Self {
            features: fs.with_h0(h0)?,
            cls: ClassifierWeights::new(w, e_w)?,
            direction,
        })
    }

    pub fn head(&self, cfg: &ExperimentConfig, kind: HeadKind) -> Result<HeadModel> {
        let budget = cfg.head_budget(kind);
        let w = self.direction.scale(budget / 2.0);
        match kind {
            HeadKind::Explicit => HeadModel::explicit(w, budget),
            HeadKind::Deq => HeadModel::deq(w, budget, cfg.solver),
        }
    }
}

/// Hex SHA-256 over the shape and the little-endian bytes of every entry.
pub fn matrix_digest(m: &Matrix) -> String {
    let mut hasher = Sha256::new();
    hasher.update((m.rows() as u64).to_le_bytes());
    hasher.update((m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Overrides;
    use crate::lpm::head_features;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(text, &Overrides::default()).unwrap()
    }

    #[test]
    fn class_counts_follow_layout() {
        let b = cfg("k = 4\nd = 8\nn = 10\n");
        let fs = synthesize_dataset(&b, &mut Rng::new(0)).unwrap();
        assert_eq!(fs.class_counts(), &[10, 10, 10, 10]);

        let imb = cfg("k_a = 3\nk_b = 7\nn_a = 100\nr = 10\nd = 8\n");
        let fs = synthesize_dataset(&imb, &mut Rng::new(0)).unwrap();
        assert_eq!(fs.class_counts(), &[100, 100, 100, 10, 10, 10, 10, 10, 10, 10]);
        assert!(fs.labels().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn same_seed_same_bits() {
        let c = cfg("k = 3\nd = 5\nn = 4\nseed = 9\n");
        let a = InitialState::new(&c).unwrap();
        let b = InitialState::new(&c).unwrap();
        assert_eq!(matrix_digest(&a.features.h0), matrix_digest(&b.features.h0));
        assert_eq!(a.features.h0.as_slice(), b.features.h0.as_slice());
        let other = InitialState::new(&cfg("k = 3\nd = 5\nn = 4\nseed = 10\n")).unwrap();
        assert_ne!(matrix_digest(&a.features.h0), matrix_digest(&other.features.h0));
    }

    #[test]
    fn every_block_starts_at_half_budget() {
        let c = cfg("k = 4\nd = 6\nn = 5\ne_w = 2.0\nfeature_budget = 3.0\n");
        let s = InitialState::new(&c).unwrap();
        assert!((s.cls.mean_sq_norm() - 1.0).abs() < 1e-14);
        let ex = s.head(&c, HeadKind::Explicit).unwrap();
        let deq = s.head(&c, HeadKind::Deq).unwrap();
        assert!((ex.weight().frobenius_norm() - 0.5).abs() < 1e-14);
        assert!((deq.weight().frobenius_norm() - 0.25).abs() < 1e-14);
        let h = head_features(&ex, &s.features.h0).unwrap();
        let energy = feature_energy(&h, s.features.labels(), s.features.class_counts());
        assert!((energy - 1.5).abs() < 1e-12);
    }
}
