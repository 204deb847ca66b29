//! Dataset model and the feature-dump directory format.
//!
//! A dump directory holds a `manifest.json` plus headerless CSV matrices:
//!
//! ```text
//! manifest.json    {task_id, kind, m, k, p, q, perturbation_split, files{...}}
//! clean.csv        m rows × p columns
//! perturbed.csv    m·k rows × p columns, example-major
//! labels.csv       m integers in [0, q)            (optional)
//! weights.csv      q rows × p columns              (optional, features only)
//! biases.csv       q floats                        (optional, with weights)
//! ```
//!
//! For `kind = "logits"` the stored vectors are the module outputs
//! themselves (p = q). For `kind = "features"` they are inputs of a linear
//! classification head given by `weights` (and `biases`); without weights the
//! features are treated as the module outputs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::error::{Error, Result};
use crate::util::argmax;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DumpKind {
    Logits,
    Features,
}

/// How perturbation indices relate across splits.
///
/// `Partitioned` models fixed template perturbations: each split receives a
/// disjoint subset of the perturbation indices. `Resampled` models
/// perturbations drawn independently per example, so every split uses all
/// `k` indices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationSplit {
    #[default]
    Partitioned,
    Resampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFiles {
    pub clean: String,
    pub perturbed: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub biases: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub task_id: String,
    pub kind: DumpKind,
    pub m: usize,
    pub k: usize,
    pub p: usize,
    pub q: usize,
    #[serde(default)]
    pub perturbation_split: PerturbationSplit,
    pub files: ManifestFiles,
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task_id: String,
    pub kind: DumpKind,
    /// Number of output components (logits) or classes `q`.
    pub n_outputs: usize,
    /// `m × p` clean vectors.
    pub clean: Array2<f64>,
    /// `m × k × p` perturbed vectors.
    pub perturbed: Array3<f64>,
    pub labels: Option<Vec<usize>>,
    /// `q × p` classifier rows (features dumps only).
    pub weights: Option<Array2<f64>>,
    pub biases: Option<Vec<f64>>,
    pub perturbation_split: PerturbationSplit,
}

impl Dataset {
    pub fn n_examples(&self) -> usize {
        self.clean.nrows()
    }

    pub fn n_perturbations(&self) -> usize {
        self.perturbed.len_of(Axis(1))
    }

    /// Width `p` of the stored vectors.
    pub fn width(&self) -> usize {
        self.clean.ncols()
    }

    /// Input dimension seen by debiasing feature maps.
    pub fn n_features(&self) -> usize {
        self.width()
    }

    /// Whether outputs come from a linear head applied to stored features.
    pub fn has_linear_head(&self) -> bool {
        self.kind == DumpKind::Features && self.weights.is_some()
    }

    pub fn n_components(&self) -> usize {
        if self.has_linear_head() {
            self.n_outputs
        } else {
            self.width()
        }
    }

    /// Module outputs for a batch of stored vectors (rows).
    pub fn outputs_of(&self, vectors: ArrayView2<f64>) -> Array2<f64> {
        match (&self.weights, self.kind) {
            (Some(w), DumpKind::Features) => {
                let mut out = vectors.dot(&w.t()).as_standard_layout().into_owned();
                if let Some(b) = &self.biases {
                    for mut row in out.rows_mut() {
                        row.iter_mut().zip(b).for_each(|(o, bi)| *o += bi);
                    }
                }
                out
            }
            _ => vectors.as_standard_layout().into_owned(),
        }
    }

    pub fn clean_outputs(&self) -> Array2<f64> {
        self.outputs_of(self.clean.view())
    }

    /// `m × k × d` outputs for the perturbed vectors.
    pub fn perturbed_outputs(&self) -> Array3<f64> {
        let (m, k, _) = self.perturbed.dim();
        let flat = crate::util::flatten3(&self.perturbed);
        let out = self.outputs_of(flat.view());
        let d = out.ncols();
        out.into_shape_with_order((m, k, d))
            .expect("reshape of freshly built outputs")
    }

    /// Perturbed rows flattened to `(m·k) × p`, example-major.
    pub fn perturbed_flat(&self) -> Array2<f64> {
        crate::util::flatten3(&self.perturbed)
    }

    pub fn label(&self, example: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[example])
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("dataset has no labels".into()))
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            task_id: self.task_id.clone(),
            kind: self.kind,
            m: self.n_examples(),
            k: self.n_perturbations(),
            p: self.width(),
            q: self.n_outputs,
            perturbation_split: self.perturbation_split,
            files: ManifestFiles {
                clean: "clean.csv".into(),
                perturbed: "perturbed.csv".into(),
                labels: self.labels.as_ref().map(|_| "labels.csv".into()),
                weights: self.weights.as_ref().map(|_| "weights.csv".into()),
                biases: self.biases.as_ref().map(|_| "biases.csv".into()),
            },
        }
    }
}

/// Predicted class per row.
pub fn predict(outputs: ArrayView2<f64>) -> Vec<usize> {
    outputs
        .rows()
        .into_iter()
        .map(|r| argmax_view(r))
        .collect()
}

pub(crate) fn argmax_view(row: ArrayView1<f64>) -> usize {
    match row.as_slice() {
        Some(s) => argmax(s),
        None => argmax(&row.to_vec()),
    }
}

fn resolve_manifest(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads and validates a dump. `path` may be the manifest or its directory.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest_path = resolve_manifest(path);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let Manifest { m, k, p, q, .. } = manifest;
    if m == 0 || k == 0 || p == 0 || q == 0 {
        return Err(Error::DimensionMismatch(
            "manifest dims m, k, p, q must be positive".into(),
        ));
    }
    if manifest.kind == DumpKind::Logits && p != q {
        return Err(Error::DimensionMismatch(format!(
            "logits dump must have p = q, got p = {p}, q = {q}"
        )));
    }

    let check_rows = |name: &str, got: usize, want: usize| -> Result<()> {
        if got != want {
            return Err(Error::DimensionMismatch(format!(
                "{name} has {got} rows, manifest declares {want}"
            )));
        }
        Ok(())
    };

    let clean = csvio::read_matrix(&root.join(&manifest.files.clean), Some(p))?;
    check_rows(&manifest.files.clean, clean.nrows(), m)?;

    let flat = csvio::read_matrix(&root.join(&manifest.files.perturbed), Some(p))?;
    check_rows(&manifest.files.perturbed, flat.nrows(), m * k)?;
    let perturbed = flat
        .into_shape_with_order((m, k, p))
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;

    let labels = match &manifest.files.labels {
        Some(f) => {
            let raw = csvio::read_integers(&root.join(f))?;
            check_rows(f, raw.len(), m)?;
            let mut labels = Vec::with_capacity(m);
            for (row, &l) in raw.iter().enumerate() {
                if l < 0 || l as usize >= q {
                    return Err(Error::LabelOutOfRange {
                        row,
                        label: l,
                        classes: q,
                    });
                }
                labels.push(l as usize);
            }
            Some(labels)
        }
        None => None,
    };

    let weights = match &manifest.files.weights {
        Some(f) => {
            let w = csvio::read_matrix(&root.join(f), Some(p))?;
            check_rows(f, w.nrows(), q)?;
            Some(w)
        }
        None => None,
    };

    let biases = match &manifest.files.biases {
        Some(f) => {
            let b = csvio::read_matrix(&root.join(f), Some(1))?;
            check_rows(f, b.nrows(), q)?;
            Some(b.column(0).to_vec())
        }
        None => None,
    };

    Ok(Dataset {
        task_id: manifest.task_id,
        kind: manifest.kind,
        n_outputs: q,
        clean,
        perturbed,
        labels,
        weights,
        biases,
        perturbation_split: manifest.perturbation_split,
    })
}

/// Writes `d` as a conforming dump into `dir` (created if needed).
pub fn save_dataset(d: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = d.manifest();
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    csvio::write_string(&dir.join(MANIFEST_FILE), &json)?;
    csvio::write_matrix(&dir.join(&manifest.files.clean), d.clean.view())?;
    csvio::write_matrix(&dir.join(&manifest.files.perturbed), d.perturbed_flat().view())?;
    if let (Some(f), Some(l)) = (&manifest.files.labels, &d.labels) {
        csvio::write_integers(&dir.join(f), l)?;
    }
    if let (Some(f), Some(w)) = (&manifest.files.weights, &d.weights) {
        csvio::write_matrix(&dir.join(f), w.view())?;
    }
    if let (Some(f), Some(b)) = (&manifest.files.biases, &d.biases) {
        csvio::write_floats(&dir.join(f), b)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    PerturbedShape { expected: [usize; 3], found: [usize; 3] },
    NonFinite { matrix: &'static str, row: usize, col: usize },
    LabelCount { expected: usize, found: usize },
    LabelOutOfRange { row: usize, label: usize, classes: usize },
    WeightShape { expected: [usize; 2], found: [usize; 2] },
    ZeroNormWeight { row: usize },
    BiasesWithoutWeights,
    BiasCount { expected: usize, found: usize },
    WeightsOnLogits,
    LogitWidth { width: usize, classes: usize },
    Empty,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::PerturbedShape { expected, found } => {
                write!(f, "perturbed tensor shape {found:?}, expected {expected:?}")
            }
            Violation::NonFinite { matrix, row, col } => {
                write!(f, "non-finite value in {matrix} at row {row}, column {col}")
            }
            Violation::LabelCount { expected, found } => {
                write!(f, "label count {found}, expected {expected}")
            }
            Violation::LabelOutOfRange { row, label, classes } => {
                write!(f, "label out of range: row {row} has {label}, classes = {classes}")
            }
            Violation::WeightShape { expected, found } => {
                write!(f, "weights shape {found:?}, expected {expected:?}")
            }
            Violation::ZeroNormWeight { row } => write!(f, "zero-norm class weight at row {row}"),
            Violation::BiasesWithoutWeights => write!(f, "biases given without weights"),
            Violation::BiasCount { expected, found } => {
                write!(f, "bias count {found}, expected {expected}")
            }
            Violation::WeightsOnLogits => write!(f, "weights are only meaningful for features dumps"),
            Violation::LogitWidth { width, classes } => {
                write!(f, "logits width {width} differs from class count {classes}")
            }
            Violation::Empty => write!(f, "dataset has no examples or perturbations"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Conditions that are legal but limit what can be computed.
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn first_non_finite<'a>(
    name: &'static str,
    rows: impl Iterator<Item = ArrayView1<'a, f64>>,
) -> Option<Violation> {
    for (row, r) in rows.enumerate() {
        if let Some(col) = r.iter().position(|v| !v.is_finite()) {
            return Some(Violation::NonFinite { matrix: name, row, col });
        }
    }
    None
}

/// Lists every violated dataset invariant.
pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let v = &mut report.violations;
    let (m, p) = d.clean.dim();
    let (pm, pk, pp) = d.perturbed.dim();
    let q = d.n_outputs;
    if m == 0 || pk == 0 || p == 0 {
        v.push(Violation::Empty);
    }
    if (pm, pp) != (m, p) {
        v.push(Violation::PerturbedShape {
            expected: [m, pk, p],
            found: [pm, pk, pp],
        });
    }
    v.extend(first_non_finite("clean", d.clean.rows().into_iter()));
    if let Some(slice) = d.perturbed.as_slice() {
        if let Some(pos) = slice.iter().position(|x| !x.is_finite()) {
            v.push(Violation::NonFinite {
                matrix: "perturbed",
                row: pos / pp.max(1),
                col: pos % pp.max(1),
            });
        }
    } else if d.perturbed.iter().any(|x| !x.is_finite()) {
        v.push(Violation::NonFinite { matrix: "perturbed", row: 0, col: 0 });
    }
    if d.kind == DumpKind::Logits && p != q {
        v.push(Violation::LogitWidth { width: p, classes: q });
    }
    match &d.labels {
        Some(labels) => {
            if labels.len() != m {
                v.push(Violation::LabelCount { expected: m, found: labels.len() });
            }
            for (row, &label) in labels.iter().enumerate() {
                if label >= q {
                    v.push(Violation::LabelOutOfRange { row, label, classes: q });
                }
            }
        }
        None => report
            .warnings
            .push("no labels: margin certification and metrics unavailable".into()),
    }
    match &d.weights {
        Some(w) => {
            if d.kind == DumpKind::Logits {
                v.push(Violation::WeightsOnLogits);
            }
            if w.dim() != (q, p) {
                v.push(Violation::WeightShape { expected: [q, p], found: [w.nrows(), w.ncols()] });
            }
            v.extend(first_non_finite("weights", w.rows().into_iter()));
            for (row, r) in w.rows().into_iter().enumerate() {
                if r.iter().all(|x| *x == 0.0) {
                    v.push(Violation::ZeroNormWeight { row });
                }
            }
            if let Some(b) = &d.biases {
                if b.len() != q {
                    v.push(Violation::BiasCount { expected: q, found: b.len() });
                }
                if let Some(col) = b.iter().position(|x| !x.is_finite()) {
                    v.push(Violation::NonFinite { matrix: "biases", row: col, col: 0 });
                }
            }
        }
        None => {
            if d.biases.is_some() {
                v.push(Violation::BiasesWithoutWeights);
            }
            if d.kind == DumpKind::Features {
                report
                    .warnings
                    .push("features dump without weights: features are treated as outputs".into());
            }
        }
    }
    report
}
