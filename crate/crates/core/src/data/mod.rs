//! PU datasets: construction, simulation, loading and storage.

mod dataset;
pub mod idx;
mod io;
mod split;
mod synth;

pub use dataset::{EvaluationView, LabeledSet, PuDataset, Sample, SplitSpec, TrainingView};
pub use idx::{load_idx_images, LabeledPool};
pub use io::{dataset_fingerprint, read_dataset, write_dataset, DatasetFiles, DatasetSidecar};
pub use split::binarize_and_split;
pub use synth::{
    make_gaussian_highdim, make_gaussian_toy, make_pu, sample_labeled, ClassConditional,
    GaussianClasses, IsotropicGaussianClasses,
};
