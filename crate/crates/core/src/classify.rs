//! PU classifier: 2-means on the unlabeled representations, with the
//! cluster nearest to the labeled positives named positive.

use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans2, KMeansConfig, KMeansResult};
use crate::data::{PuDataset, TrainingView};
use crate::exec::Parallelism;
use crate::model::{FeatureMode, PuModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PuClassifier {
    pub centroids: Array2<f64>,
    pub positive_cluster: u8,
    pub feature_mode: FeatureMode,
    /// 2-means found no split; predictions are all one class.
    pub low_confidence: bool,
}

/// A fitted classifier plus what fitting learned about the unlabeled set.
#[derive(Debug, Clone)]
pub struct ClassifierFit {
    pub classifier: PuClassifier,
    pub kmeans: KMeansResult,
    /// Predicted labels of the unlabeled training samples.
    pub unlabeled_predictions: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Confusion,
}

/// Which labeled split of a dataset to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Unlabeled,
    Test,
}

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The cluster whose centroid has the smallest mean distance to the labeled
/// positives. Ties go to the cluster with fewer unlabeled points, then to 0.
pub fn positive_cluster(kmeans: &KMeansResult, positives: ArrayView2<f64>) -> u8 {
    let mean_dist = |c: usize| {
        let row = kmeans.centroids.row(c);
        positives
            .rows()
            .into_iter()
            .map(|p| dist(p, row))
            .sum::<f64>()
            / positives.nrows() as f64
    };
    let (d0, d1) = (mean_dist(0), mean_dist(1));
    if d0 < d1 {
        0
    } else if d1 < d0 {
        1
    } else {
        let sizes = kmeans.cluster_sizes();
        u8::from(sizes[1] < sizes[0])
    }
}

pub fn fit_classifier(
    model: &PuModel,
    data: TrainingView<'_>,
    mode: FeatureMode,
    kmeans: &KMeansConfig,
    par: Parallelism,
) -> Result<ClassifierFit> {
    let unl = model.representation(data.unlabeled, mode, par)?;
    let km = kmeans2(unl.view(), kmeans, par)?;
    let pos = model.representation(data.positives, mode, par)?;
    let classifier = PuClassifier {
        centroids: km.centroids.clone(),
        positive_cluster: positive_cluster(&km, pos.view()),
        feature_mode: mode,
        low_confidence: km.degenerate,
    };
    if km.degenerate {
        log::warn!("2-means found a single cluster; the classifier is low-confidence");
    }
    let unlabeled_predictions = km
        .assignments
        .iter()
        .map(|&a| u8::from(a == classifier.positive_cluster))
        .collect();
    Ok(ClassifierFit {
        classifier,
        kmeans: km,
        unlabeled_predictions,
    })
}

impl PuClassifier {
    /// Label for one representation; equidistant points are positive.
    pub fn label(&self, features: ArrayView1<f64>) -> u8 {
        let d0 = dist(self.centroids.row(0), features);
        let d1 = dist(self.centroids.row(1), features);
        if d0 == d1 {
            return 1;
        }
        let cluster = u8::from(d1 < d0);
        u8::from(cluster == self.positive_cluster)
    }

    pub fn predict(
        &self,
        model: &PuModel,
        x: ArrayView2<f64>,
        par: Parallelism,
    ) -> Result<Vec<u8>> {
        let reps = model.representation(x, self.feature_mode, par)?;
        if reps.ncols() != self.centroids.ncols() {
            return Err(Error::shape(self.centroids.ncols(), reps.ncols()));
        }
        Ok(reps.rows().into_iter().map(|r| self.label(r)).collect())
    }

    pub fn to_artifact(&self, checkpoint: &Path) -> ClassifierArtifact {
        ClassifierArtifact {
            centroids: self
                .centroids
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            positive_cluster: self.positive_cluster,
            checkpoint: checkpoint.display().to_string(),
            feature_mode: self.feature_mode,
            low_confidence: self.low_confidence,
        }
    }

    pub fn from_artifact(a: &ClassifierArtifact) -> Result<Self> {
        let width = a.centroids.first().map_or(0, Vec::len);
        if a.centroids.len() != 2 || a.centroids[1].len() != width || a.positive_cluster > 1 {
            return Err(Error::config(
                "classifier artifact needs 2 equal-width centroids and cluster 0 or 1",
            ));
        }
        Ok(Self {
            centroids: Array2::from_shape_vec((2, width), a.centroids.concat()).expect("sized"),
            positive_cluster: a.positive_cluster,
            feature_mode: a.feature_mode,
            low_confidence: a.low_confidence,
        })
    }
}

/// Serialized form of a [`PuClassifier`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierArtifact {
    pub centroids: Vec<Vec<f64>>,
    pub positive_cluster: u8,
    pub checkpoint: String,
    pub feature_mode: FeatureMode,
    pub low_confidence: bool,
}

/// Accuracy and confusion counts of `predictions` against `labels`.
pub fn score(predictions: &[u8], labels: &[u8]) -> Result<Evaluation> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::shape(labels.len(), predictions.len()));
    }
    let mut c = Confusion {
        true_positive: 0,
        false_positive: 0,
        true_negative: 0,
        false_negative: 0,
    };
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => c.true_positive += 1,
            (1, _) => c.false_positive += 1,
            (_, 1) => c.false_negative += 1,
            _ => c.true_negative += 1,
        }
    }
    Ok(Evaluation {
        accuracy: (c.true_positive + c.true_negative) as f64 / labels.len() as f64,
        confusion: c,
    })
}

/// Scores the classifier on a split carrying hidden labels.
pub fn evaluate(
    classifier: &PuClassifier,
    model: &PuModel,
    dataset: &PuDataset,
    split: EvalSplit,
    par: Parallelism,
) -> Result<Evaluation> {
    let eval = dataset.evaluation()?;
    match split {
        EvalSplit::Unlabeled => {
            let pred = classifier.predict(model, eval.unlabeled_features, par)?;
            score(&pred, eval.unlabeled_labels)
        }
        EvalSplit::Test => {
            let test = eval
                .test
                .ok_or_else(|| Error::usage("dataset has no held-out test split"))?;
            let pred = classifier.predict(model, test.features.view(), par)?;
            score(&pred, &test.labels)
        }
    }
}

/// Writes `sample_id,label` rows.
pub fn write_predictions(path: &Path, predictions: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(predictions.len() * 8);
    writeln!(out, "sample_id,label").expect("vec write");
    for (i, p) in predictions.iter().enumerate() {
        writeln!(out, "{i},{p}").expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
