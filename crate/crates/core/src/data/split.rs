use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use super::dataset::{LabeledSet, PuDataset, SplitSpec};
use super::idx::LabeledPool;
use crate::rng::seeded;
use crate::{Error, Result};

impl LabeledPool {
    /// Relabels the pool: classes in `positive_classes` become 1, others 0.
    pub fn binarize(&self, positive_classes: &BTreeSet<u8>) -> Result<LabeledSet> {
        check_classes(self, positive_classes)?;
        Ok(LabeledSet {
            features: self.features.clone(),
            labels: self
                .labels
                .iter()
                .map(|l| positive_classes.contains(l) as u8)
                .collect(),
        })
    }
}

fn check_classes(pool: &LabeledPool, positive_classes: &BTreeSet<u8>) -> Result<()> {
    if positive_classes.is_empty() {
        return Err(Error::config("positive class set is empty"));
    }
    let present = pool.classes();
    if let Some(c) = positive_classes.iter().find(|c| !present.contains(c)) {
        return Err(Error::config(format!(
            "positive class {c} does not occur in the pool"
        )));
    }
    Ok(())
}

/// Builds a PU dataset from a multi-class pool.
///
/// Labeled positives, unlabeled positives and unlabeled negatives are drawn
/// without replacement and are pairwise disjoint. The draw depends only on
/// `spec.seed`.
pub fn binarize_and_split(
    pool: &LabeledPool,
    positive_classes: &BTreeSet<u8>,
    spec: &SplitSpec,
) -> Result<PuDataset> {
    spec.validate()?;
    check_classes(pool, positive_classes)?;
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        (0..pool.len()).partition(|&i| positive_classes.contains(&pool.labels[i]));

    let need_pos = spec.n_labeled_positive + spec.n_unlabeled_positive();
    let need_neg = spec.n_unlabeled_negative();
    if pos.len() < need_pos || neg.len() < need_neg {
        return Err(Error::Capacity(format!(
            "split needs {need_pos} positives and {need_neg} negatives, pool has {} and {} \
             (short by {} and {})",
            pos.len(),
            neg.len(),
            need_pos.saturating_sub(pos.len()),
            need_neg.saturating_sub(neg.len()),
        )));
    }

    let mut rng = seeded(spec.seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let labeled = &pos[..spec.n_labeled_positive];
    let mut unlabeled: Vec<(usize, u8)> = pos[spec.n_labeled_positive..need_pos]
        .iter()
        .map(|&i| (i, 1))
        .chain(neg[..need_neg].iter().map(|&i| (i, 0)))
        .collect();
    unlabeled.shuffle(&mut rng);

    let gather = |idx: &[usize]| -> Array2<f64> { pool.features.select(Axis(0), idx) };
    let u_idx: Vec<usize> = unlabeled.iter().map(|p| p.0).collect();
    PuDataset::from_parts(
        gather(labeled),
        gather(&u_idx),
        Some(unlabeled.iter().map(|p| p.1).collect()),
        Some(spec.alpha),
        spec.seed,
        None,
    )
}
