//! Synthetic domain-shift generators and CSV feature ingestion.
//!
//! A [`ShiftSpec`] describes a class-conditional base law and the shift
//! applied to the target domain: rotation of the first two coordinates
//! about the origin, then a translation, with fresh noise. Source and
//! target draw from disjoint random streams.
//!
//! CSV files are UTF-8, comma separated, with a header row. Feature columns
//! hold decimal floats; the optional label column holds arbitrary tokens
//! that are mapped to dense class indices in sorted order (numeric order
//! when every token parses as a number).

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::FeatureMatrix;
use crate::net::LabeledDataset;
use crate::rng;

/// Header used for the label column in files this crate writes.
pub const LABEL_COLUMN: &str = "label";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// Isotropic Gaussian classes with means spread on a circle.
    GaussianMixture,
    /// Two interleaved half-circles ("moons"); always two classes.
    TwoArcs,
}

fn default_classes() -> usize {
    2
}

fn default_separation() -> f64 {
    2.0
}

/// Description of a source/target pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub generator: Generator,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
    pub n_per_class: usize,
    pub d: usize,
    #[serde(default)]
    pub rotation_degrees: f64,
    /// Added to every target sample; empty means no translation.
    #[serde(default)]
    pub translation: Vec<f64>,
    pub noise_scale: f64,
    /// Target noise level; defaults to `noise_scale`.
    #[serde(default)]
    pub target_noise_scale: Option<f64>,
    /// Fraction of the total held by each non-reference class relative to
    /// class 0: a class of size `m` satisfies `m / (n_per_class + m) = ratio`.
    #[serde(default)]
    pub class_imbalance: Option<f64>,
    /// Radius of the class-mean circle for the Gaussian generator; the
    /// two-arcs generator has unit-radius arcs and ignores it.
    #[serde(default = "default_separation")]
    pub class_separation: f64,
}

impl ShiftSpec {
    /// The default benchmark shift: two arcs, 500 per class, 30° rotation.
    pub fn rotated_arcs() -> Self {
        ShiftSpec {
            generator: Generator::TwoArcs,
            n_classes: 2,
            n_per_class: 500,
            d: 2,
            rotation_degrees: 30.0,
            translation: Vec::new(),
            noise_scale: 0.1,
            target_noise_scale: None,
            class_imbalance: None,
            class_separation: default_separation(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::input("shift spec needs d ≥ 2 (rotation acts on the first two axes)"));
        }
        if self.n_per_class == 0 {
            return Err(Error::input("n_per_class must be positive"));
        }
        if self.n_classes < 2 {
            return Err(Error::input("need at least two classes"));
        }
        if self.generator == Generator::TwoArcs && self.n_classes != 2 {
            return Err(Error::input("two-arcs generator has exactly two classes"));
        }
        if !self.translation.is_empty() && self.translation.len() != self.d {
            return Err(Error::input(format!(
                "translation has {} entries, expected {}",
                self.translation.len(),
                self.d
            )));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.noise_scale) || !self.target_noise_scale.is_none_or(positive) {
            return Err(Error::input("noise scales must be positive"));
        }
        if !self.rotation_degrees.is_finite() || self.translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::input("rotation and translation must be finite"));
        }
        if let Some(r) = self.class_imbalance {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::input("class_imbalance must lie in (0, 1)"));
            }
        }
        if !positive(self.class_separation) {
            return Err(Error::input("class_separation must be positive"));
        }
        Ok(())
    }

    /// Samples per class in each domain.
    pub fn class_sizes(&self) -> Vec<usize> {
        let minor = match self.class_imbalance {
            Some(r) => (self.n_per_class as f64 * r / (1.0 - r)).round() as usize,
            None => self.n_per_class,
        };
        std::iter::once(self.n_per_class)
            .chain(std::iter::repeat_n(minor, self.n_classes - 1))
            .collect()
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.n_classes).map(|c| c.to_string()).collect()
    }
}

/// Draw a labeled source set and a (shifted) labeled target set.
///
/// The target labels are for evaluation only.
pub fn generate(spec: &ShiftSpec, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let mut src_rng = rng::substream(seed, rng::stream::DATA_SOURCE);
    let mut tgt_rng = rng::substream(seed, rng::stream::DATA_TARGET);
    let source = draw_domain(spec, &mut src_rng, spec.noise_scale, false)?;
    let target = draw_domain(
        spec,
        &mut tgt_rng,
        spec.target_noise_scale.unwrap_or(spec.noise_scale),
        true,
    )?;
    Ok((source, target))
}

fn draw_domain(spec: &ShiftSpec, rng: &mut rng::Rng, noise: f64, shifted: bool) -> Result<LabeledDataset> {
    let sizes = spec.class_sizes();
    let n: usize = sizes.iter().sum();
    let d = spec.d;
    let mut data = Array2::<f64>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let (sin, cos) = spec.rotation_degrees.to_radians().sin_cos();
    let mut row = 0;
    for (class, &count) in sizes.iter().enumerate() {
        for _ in 0..count {
            let mut x = base_point(spec, class, rng);
            for v in x.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += noise * z;
            }
            if shifted {
                let (a, b) = (x[0], x[1]);
                x[0] = cos * a - sin * b;
                x[1] = sin * a + cos * b;
                for (v, t) in x.iter_mut().zip(&spec.translation) {
                    *v += t;
                }
            }
            data.row_mut(row).assign(&ndarray::ArrayView1::from(&x));
            labels.push(class);
            row += 1;
        }
    }
    LabeledDataset::new(FeatureMatrix::new(data)?, labels, spec.class_names())
}

/// Noise-free point of `class`, centered so the pooled base law has its
/// centroid near the origin (the rotation center).
fn base_point(spec: &ShiftSpec, class: usize, rng: &mut rng::Rng) -> Vec<f64> {
    let mut x = vec![0.0; spec.d];
    match spec.generator {
        Generator::GaussianMixture => {
            let angle = 2.0 * PI * class as f64 / spec.n_classes as f64;
            x[0] = spec.class_separation * angle.cos();
            x[1] = spec.class_separation * angle.sin();
        }
        Generator::TwoArcs => {
            let t: f64 = rng.random_range(0.0..PI);
            if class == 0 {
                x[0] = t.cos() - 0.5;
                x[1] = t.sin() - 0.25;
            } else {
                x[0] = 0.5 - t.cos();
                x[1] = 0.25 - t.sin();
            }
        }
    }
    x
}

fn feature_header(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("f{j}")).collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            column: String::new(),
            message: format!("{other:?}"),
        },
    }
}

/// Write features (header `f0..f{d-1}`), with a trailing label column when
/// `labels` is given.
pub fn save_csv(path: &Path, features: &FeatureMatrix, labels: Option<(&[usize], &[String])>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = feature_header(features.d());
    if labels.is_some() {
        header.push(LABEL_COLUMN.to_string());
    }
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    for i in 0..features.n() {
        let mut record: Vec<String> = features.row(i).iter().map(|v| v.to_string()).collect();
        if let Some((labels, names)) = labels {
            record.push(names[labels[i]].clone());
        }
        w.write_record(&record).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_labeled(path: &Path, ds: &LabeledDataset) -> Result<()> {
    save_csv(path, &ds.features, Some((&ds.labels, &ds.class_names)))
}

struct RawCsv {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

fn read_raw(path: &Path) -> Result<RawCsv> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_io(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::input(format!("{}: missing header row", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| {
            let row = e.position().map(|p| p.line() as usize).unwrap_or(i + 2);
            Error::Parse {
                path: path.to_path_buf(),
                row,
                column: String::new(),
                message: e.to_string(),
            }
        })?;
        rows.push(rec);
    }
    Ok(RawCsv { header, rows })
}

fn parse_features(path: &Path, raw: &RawCsv, skip: Option<usize>) -> Result<FeatureMatrix> {
    let cols: Vec<usize> = (0..raw.header.len()).filter(|&j| Some(j) != skip).collect();
    if cols.is_empty() {
        return Err(Error::input(format!("{}: no feature columns", path.display())));
    }
    let mut data = Array2::<f64>::zeros((raw.rows.len(), cols.len()));
    for (i, rec) in raw.rows.iter().enumerate() {
        for (k, &j) in cols.iter().enumerate() {
            let cell = &rec[j];
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                // header is line 1
                row: i + 2,
                column: raw.header[j].clone(),
                message: format!("not a finite number: {cell:?}"),
            })?;
            data[[i, k]] = v;
        }
    }
    FeatureMatrix::new(data)
}

fn label_index(path: &Path, raw: &RawCsv, label_column: &str) -> Result<usize> {
    raw.header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::input(format!("{}: no column named {label_column:?}", path.display())))
}

/// Sorted distinct label tokens: numerically when all parse as numbers,
/// lexicographically otherwise.
fn sorted_classes(tokens: impl Iterator<Item = String>) -> Vec<String> {
    let distinct: BTreeSet<String> = tokens.collect();
    let mut classes: Vec<String> = distinct.into_iter().collect();
    let numeric: Option<Vec<f64>> = classes.iter().map(|c| c.parse::<f64>().ok()).collect();
    if let Some(values) = numeric {
        let mut paired: Vec<(f64, String)> = values.into_iter().zip(classes).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        classes = paired.into_iter().map(|(_, c)| c).collect();
    }
    classes
}

/// Load an unlabeled feature matrix, dropping `ignore_column` if present.
pub fn load_features(path: &Path, ignore_column: Option<&str>) -> Result<FeatureMatrix> {
    let raw = read_raw(path)?;
    let skip = ignore_column.and_then(|c| raw.header.iter().position(|h| h == c));
    parse_features(path, &raw, skip)
}

/// Load a labeled dataset; classes are the sorted distinct label values.
pub fn load_labeled(path: &Path, label_column: &str) -> Result<LabeledDataset> {
    let raw = read_raw(path)?;
    let j = label_index(path, &raw, label_column)?;
    let classes = sorted_classes(raw.rows.iter().map(|r| r[j].to_string()));
    log::info!(
        "{}: label mapping {}",
        path.display(),
        classes
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{c}->{i}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    build_labeled(path, &raw, j, classes)
}

/// Load a labeled dataset against a known class list (e.g. from a
/// checkpoint), so indices agree with the model's outputs.
pub fn load_labeled_with_classes(path: &Path, label_column: &str, class_names: &[String]) -> Result<LabeledDataset> {
    let raw = read_raw(path)?;
    let j = label_index(path, &raw, label_column)?;
    build_labeled(path, &raw, j, class_names.to_vec())
}

fn build_labeled(path: &Path, raw: &RawCsv, j: usize, classes: Vec<String>) -> Result<LabeledDataset> {
    let features = parse_features(path, raw, Some(j))?;
    let labels = raw
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            classes.iter().position(|c| c == &r[j]).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                row: i + 2,
                column: raw.header[j].clone(),
                message: format!("unknown class {:?}", &r[j]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(features, labels, classes)
}

/// Either shape `load_csv` can return.
#[derive(Clone, Debug, PartialEq)]
pub enum CsvData {
    Labeled(LabeledDataset),
    Unlabeled(FeatureMatrix),
}

pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<CsvData> {
    match label_column {
        Some(col) => load_labeled(path, col).map(CsvData::Labeled),
        None => load_features(path, None).map(CsvData::Unlabeled),
    }
}
