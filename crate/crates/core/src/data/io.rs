//! Dataset storage: a columnar CSV plus a JSON sidecar.
//!
//! CSV layout, one row per sample:
//!
//! ```text
//! split,hidden_label,x0,x1,...,x{d-1}
//! labeled,1,0.25,...
//! unlabeled,0,1.5,...
//! test,1,-0.75,...
//! ```
//!
//! `split` is `labeled`, `unlabeled` or `test`. `hidden_label` is `0`/`1`,
//! or empty for unlabeled rows whose ground truth was stripped. Features are
//! written in Rust's shortest round-trip decimal form, so reading and
//! rewriting a file reproduces it byte for byte.
//!
//! The sidecar (`<name>.json`) records `{d, n_p, n_u, n_test, alpha_true, seed}`.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{empirical_alpha, rows_to_array, LabeledSet, PuDataset};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub d: usize,
    pub n_p: usize,
    pub n_u: usize,
    #[serde(default)]
    pub n_test: usize,
    pub alpha_true: Option<f64>,
    pub seed: u64,
}

/// Where a dataset was written, plus a SHA-256 over both files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFiles {
    pub csv: PathBuf,
    pub sidecar: PathBuf,
    pub fingerprint: String,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn push_row(out: &mut String, split: &str, label: Option<u8>, row: ArrayView1<f64>) {
    out.push_str(split);
    out.push(',');
    if let Some(l) = label {
        out.push(char::from(b'0' + l));
    }
    for x in row {
        out.push(',');
        out.push_str(&x.to_string());
    }
    out.push('\n');
}

fn render_csv(ds: &PuDataset) -> String {
    let (pos, unl, hidden, test) = ds.raw_parts();
    let mut out = String::from("split,hidden_label");
    for j in 0..ds.dim() {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for r in pos.rows() {
        push_row(&mut out, "labeled", Some(1), r);
    }
    for (i, r) in unl.rows().into_iter().enumerate() {
        push_row(&mut out, "unlabeled", hidden.map(|h| h[i]), r);
    }
    if let Some(t) = test {
        for (r, &l) in t.features.rows().into_iter().zip(&t.labels) {
            push_row(&mut out, "test", Some(l), r);
        }
    }
    out
}

fn fingerprint(csv: &[u8], sidecar: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(csv);
    h.update(sidecar);
    hex::encode(h.finalize())
}

fn render(ds: &PuDataset) -> (String, String) {
    let sidecar = DatasetSidecar {
        d: ds.dim(),
        n_p: ds.n_positive(),
        n_u: ds.n_unlabeled(),
        n_test: ds.n_test(),
        alpha_true: ds.alpha_true(),
        seed: ds.seed(),
    };
    let side_json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
    (render_csv(ds), side_json)
}

/// The fingerprint [`write_dataset`] would report for `ds`.
pub fn dataset_fingerprint(ds: &PuDataset) -> String {
    let (csv, side) = render(ds);
    fingerprint(csv.as_bytes(), side.as_bytes())
}

/// Writes `csv_path` and its sidecar, creating parent directories.
pub fn write_dataset(ds: &PuDataset, csv_path: &Path) -> Result<DatasetFiles> {
    if let Some(parent) = csv_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let (csv, side_json) = render(ds);
    let side_path = sidecar_path(csv_path);
    std::fs::write(csv_path, &csv).map_err(|e| Error::io(csv_path, e))?;
    std::fs::write(&side_path, &side_json).map_err(|e| Error::io(&side_path, e))?;
    Ok(DatasetFiles {
        csv: csv_path.to_path_buf(),
        sidecar: side_path,
        fingerprint: fingerprint(csv.as_bytes(), side_json.as_bytes()),
    })
}

/// Reads a dataset written by [`write_dataset`]. Returns the dataset and
/// the fingerprint of the files it came from.
pub fn read_dataset(csv_path: &Path) -> Result<(PuDataset, String)> {
    let side_path = sidecar_path(csv_path);
    let side_bytes = std::fs::read(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let sidecar: DatasetSidecar = serde_json::from_slice(&side_bytes)
        .map_err(|e| Error::format(&side_path, 0, format!("invalid sidecar JSON: {e}")))?;
    let csv_bytes = std::fs::read(csv_path).map_err(|e| Error::io(csv_path, e))?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(csv_bytes.as_slice());
    let header_len = reader
        .headers()
        .map_err(|e| Error::format(csv_path, 0, e.to_string()))?
        .len();
    if header_len != sidecar.d + 2 {
        return Err(Error::format(
            csv_path,
            0,
            format!(
                "header has {header_len} columns, sidecar implies {}",
                sidecar.d + 2
            ),
        ));
    }

    let mut pos = Vec::new();
    let mut unl = Vec::new();
    let mut hidden: Vec<Option<u8>> = Vec::new();
    let mut test = Vec::new();
    let mut test_labels = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let off = e.position().map_or(0, |p| p.byte());
            Error::format(csv_path, off, e.to_string())
        })?;
        let off = rec.position().map_or(0, |p| p.byte());
        let bad = |msg: String| Error::format(csv_path, off, msg);
        if rec.len() != sidecar.d + 2 {
            return Err(bad(format!(
                "row has {} columns, expected {}",
                rec.len(),
                sidecar.d + 2
            )));
        }
        let label = match &rec[1] {
            "" => None,
            "0" => Some(0u8),
            "1" => Some(1u8),
            other => return Err(bad(format!("invalid hidden label {other:?}"))),
        };
        let features = rec
            .iter()
            .skip(2)
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| bad(format!("invalid feature value {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match &rec[0] {
            "labeled" => {
                if label != Some(1) {
                    return Err(bad("labeled rows must carry hidden label 1".into()));
                }
                pos.push(features);
            }
            "unlabeled" => {
                unl.push(features);
                hidden.push(label);
            }
            "test" => {
                test_labels.push(label.ok_or_else(|| bad("test rows need a label".into()))?);
                test.push(features);
            }
            other => return Err(bad(format!("unknown split tag {other:?}"))),
        }
    }

    if pos.len() != sidecar.n_p || unl.len() != sidecar.n_u || test.len() != sidecar.n_test {
        return Err(Error::format(
            csv_path,
            csv_bytes.len() as u64,
            format!(
                "row counts (labeled {}, unlabeled {}, test {}) disagree with sidecar ({}, {}, {})",
                pos.len(),
                unl.len(),
                test.len(),
                sidecar.n_p,
                sidecar.n_u,
                sidecar.n_test
            ),
        ));
    }
    let hidden = if hidden.iter().all(Option::is_some) {
        Some(hidden.into_iter().flatten().collect::<Vec<u8>>())
    } else if hidden.iter().all(Option::is_none) {
        None
    } else {
        return Err(Error::format(
            csv_path,
            0,
            "hidden labels must be present for all unlabeled rows or for none",
        ));
    };
    if let (Some(h), Some(a)) = (&hidden, sidecar.alpha_true) {
        if (empirical_alpha(h) - a).abs() > 1.0 / h.len().max(1) as f64 + 1e-12 {
            return Err(Error::format(
                &side_path,
                0,
                format!("alpha_true {a} inconsistent with hidden labels"),
            ));
        }
    }
    let test = (!test.is_empty()).then(|| LabeledSet {
        features: rows_to_array(&test, sidecar.d),
        labels: test_labels,
    });
    let ds = PuDataset::from_parts(
        rows_to_array(&pos, sidecar.d),
        if unl.is_empty() {
            Array2::zeros((0, sidecar.d))
        } else {
            rows_to_array(&unl, sidecar.d)
        },
        hidden,
        sidecar.alpha_true,
        sidecar.seed,
        test,
    )?;
    Ok((ds, fingerprint(&csv_bytes, &side_bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_gaussian_toy, sample_labeled, GaussianClasses, SplitSpec};

    fn toy() -> PuDataset {
        let ds = make_gaussian_toy(0.0, 9.0, 30.0, 25.0, &SplitSpec::new(0.5, 20, 60, 11)).unwrap();
        let src = GaussianClasses::new(0.0, 9.0, 30.0, 25.0).unwrap();
        ds.with_test(sample_labeled(&src, 10, 0.5, 12).unwrap())
            .unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let files = write_dataset(&toy(), &a).unwrap();
        let (back, fp) = read_dataset(&a).unwrap();
        assert_eq!(back, toy());
        assert_eq!(fp, files.fingerprint);
        let b = dir.path().join("b.csv");
        write_dataset(&back, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn stripped_labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let stripped = toy().without_hidden_labels();
        write_dataset(&stripped, &p).unwrap();
        let (back, _) = read_dataset(&p).unwrap();
        assert!(!back.has_hidden_labels());
        assert_eq!(back, stripped);
    }

    #[test]
    fn corrupt_row_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_dataset(&toy(), &p).unwrap();
        let mut text = std::fs::read_to_string(&p).unwrap();
        text = text.replacen("unlabeled,", "unlabeled,7", 1);
        std::fs::write(&p, text).unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_dataset(&dir.path().join("nope.csv")),
            Err(Error::Io { .. })
        ));
    }
}
