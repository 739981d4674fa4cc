//! Activation dumps and probe labels on disk.
//!
//! A dump directory holds `manifest.json` plus one `layer_{index}.npy` per
//! layer, each an `(n_tokens, dim)` matrix. Item-level dumps used by probes sit
//! beside them as `items_layer_{index}.npy`. Labels live in `labels.npy`
//! (int64, or float64 for regression) with `splits.json` next to it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::npy::{self, ElementType, NpyError, RawArray};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABELS_FILE: &str = "labels.npy";
pub const SPLITS_FILE: &str = "splits.json";

/// Manifest keys the extractor may add beyond the required ones.
const KNOWN_OPTIONAL_KEYS: &[&str] = &[
    "layer_convention",
    "special_tokens",
    "item_pooling",
    "n_items",
];

pub fn layer_file_name(layer: usize) -> String {
    format!("layer_{layer}.npy")
}

pub fn item_file_name(layer: usize) -> String {
    format!("items_layer_{layer}.npy")
}

/// SHA-256 hex digest of the token-id sequence, each id as little-endian i64.
pub fn corpus_fingerprint(token_ids: &[i64]) -> String {
    let mut hasher = Sha256::new();
    for id in token_ids {
        hasher.update(id.to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceDtype {
    F32,
    F64,
    Bf16,
}

impl SourceDtype {
    fn expected_element(self) -> ElementType {
        match self {
            SourceDtype::F32 => ElementType::F32,
            SourceDtype::F64 => ElementType::F64,
            SourceDtype::Bf16 => ElementType::Raw16,
        }
    }
}

impl fmt::Display for SourceDtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceDtype::F32 => "f32",
            SourceDtype::F64 => "f64",
            SourceDtype::Bf16 => "bf16",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub model_id: String,
    pub num_layers: usize,
    pub n_tokens: usize,
    pub dim: usize,
    pub dtype: SourceDtype,
    pub corpus_fingerprint: String,
}

/// One layer's token-by-feature matrix. Storage is always f64.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMatrix {
    data: DMatrix<f64>,
    pub layer_index: usize,
    pub model_id: String,
    pub source_dtype: SourceDtype,
    pub corpus_fingerprint: String,
}

impl ActivationMatrix {
    pub fn new(
        data: DMatrix<f64>,
        layer_index: usize,
        model_id: impl Into<String>,
        source_dtype: SourceDtype,
        corpus_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        let layer_err = |reason: String| Error::Layer {
            layer: layer_index,
            file: layer_file_name(layer_index),
            reason,
        };
        if data.nrows() < 2 || data.ncols() < 1 {
            return Err(layer_err(format!(
                "shape ({}, {}) needs N >= 2 and D >= 1",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % data.nrows(), pos / data.nrows());
            return Err(layer_err(format!("non-finite entry at ({row}, {col})")));
        }
        Ok(ActivationMatrix {
            data,
            layer_index,
            model_id: model_id.into(),
            source_dtype,
            corpus_fingerprint: corpus_fingerprint.into(),
        })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn n_tokens(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn select_rows(&self, rows: &[usize]) -> Self {
        ActivationMatrix {
            data: self.data.select_rows(rows),
            ..self.clone()
        }
    }
}

/// Every hidden state of one model over one corpus, indexed by layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationSet {
    matrices: Vec<ActivationMatrix>,
    pub model_id: String,
    pub corpus_fingerprint: String,
}

impl ActivationSet {
    pub fn new(matrices: Vec<ActivationMatrix>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::Invalid("activation set needs at least one layer".into()))?;
        let (model_id, fingerprint, n) = (
            first.model_id.clone(),
            first.corpus_fingerprint.clone(),
            first.n_tokens(),
        );
        for (i, m) in matrices.iter().enumerate() {
            let err = |reason: String| Error::Layer {
                layer: i,
                file: layer_file_name(i),
                reason,
            };
            if m.layer_index != i {
                return Err(err(format!(
                    "layer index {} out of sequence",
                    m.layer_index
                )));
            }
            if m.n_tokens() != n {
                return Err(err(format!(
                    "has N = {} but layer 0 has N = {n}",
                    m.n_tokens()
                )));
            }
            if m.corpus_fingerprint != fingerprint {
                return Err(err("corpus fingerprint differs from layer 0".into()));
            }
        }
        Ok(ActivationSet {
            matrices,
            model_id,
            corpus_fingerprint: fingerprint,
        })
    }

    /// Build a set from plain matrices, all tagged with the same provenance.
    pub fn from_matrices(
        model_id: &str,
        corpus_fingerprint: &str,
        source_dtype: SourceDtype,
        layers: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let matrices = layers
            .into_iter()
            .enumerate()
            .map(|(i, m)| ActivationMatrix::new(m, i, model_id, source_dtype, corpus_fingerprint))
            .collect::<Result<Vec<_>>>()?;
        Self::new(matrices)
    }

    pub fn layers(&self) -> &[ActivationMatrix] {
        &self.matrices
    }

    pub fn layer(&self, index: usize) -> Option<&ActivationMatrix> {
        self.matrices.get(index)
    }

    pub fn num_layers(&self) -> usize {
        self.matrices.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.matrices[0].n_tokens()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.matrices.iter().map(ActivationMatrix::dim).collect()
    }

    pub(crate) fn select_rows(&self, rows: &[usize]) -> Self {
        ActivationSet {
            matrices: self.matrices.iter().map(|m| m.select_rows(rows)).collect(),
            model_id: self.model_id.clone(),
            corpus_fingerprint: self.corpus_fingerprint.clone(),
        }
    }
}

fn read_npy(path: &Path) -> Result<RawArray> {
    let file_name = file_label(path);
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    npy::read(&mut bytes.as_slice()).map_err(|e| match e {
        NpyError::Io(e) => Error::Npy {
            file: file_name,
            reason: e.to_string(),
        },
        NpyError::Format(reason) => Error::Npy {
            file: file_name,
            reason,
        },
        NpyError::UnsupportedDtype(dtype) => Error::UnsupportedDtype {
            file: file_name,
            dtype,
        },
    })
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn read_manifest(dir: &Path) -> Result<(Manifest, Vec<String>)> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::MissingManifest(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |reason: String| Error::BadManifest {
        path: path.clone(),
        reason,
    };
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let mut warnings = Vec::new();
    if let Some(obj) = raw.as_object() {
        for key in obj.keys() {
            let required = matches!(
                key.as_str(),
                "model_id" | "num_layers" | "n_tokens" | "dim" | "dtype" | "corpus_fingerprint"
            );
            if !required && !KNOWN_OPTIONAL_KEYS.contains(&key.as_str()) {
                warnings.push(format!("manifest: unknown key `{key}` ignored"));
            }
        }
    }
    let manifest: Manifest = serde_json::from_value(raw).map_err(|e| bad(e.to_string()))?;
    if manifest.num_layers == 0 {
        return Err(bad("num_layers must be at least 1".into()));
    }
    Ok((manifest, warnings))
}

/// Layer indices of every `layer_{k}.npy` present in `dir`.
fn layer_files_present(dir: &Path) -> Result<BTreeSet<usize>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(idx) = name
            .strip_prefix("layer_")
            .and_then(|rest| rest.strip_suffix(".npy"))
            .and_then(|idx| idx.parse::<usize>().ok())
        {
            found.insert(idx);
        }
    }
    Ok(found)
}

fn load_matrix(
    path: &Path,
    layer: usize,
    manifest: &Manifest,
    expected_rows: Option<usize>,
) -> Result<ActivationMatrix> {
    let file = file_label(path);
    let err = |reason: String| Error::Layer {
        layer,
        file: file.clone(),
        reason,
    };
    let raw = read_npy(path)?;
    if raw.element != manifest.dtype.expected_element() {
        return Err(Error::UnsupportedDtype {
            file,
            dtype: format!(
                "{:?} payload but manifest dtype is {}",
                raw.element, manifest.dtype
            ),
        });
    }
    if raw.shape.len() != 2 {
        return Err(err(format!(
            "expected a 2-D array, got shape {:?}",
            raw.shape
        )));
    }
    let (rows, cols) = (raw.shape[0], raw.shape[1]);
    if let Some(n) = expected_rows {
        if rows != n {
            return Err(err(format!(
                "shape mismatch: {rows} rows but manifest n_tokens = {n}"
            )));
        }
    }
    if cols != manifest.dim {
        return Err(err(format!(
            "shape mismatch: {cols} columns but manifest dim = {}",
            manifest.dim
        )));
    }
    let values = raw
        .to_f64(manifest.dtype == SourceDtype::Bf16)
        .map_err(|_| err("payload does not decode under the manifest dtype".into()))?;
    let data = DMatrix::from_row_slice(rows, cols, &values);
    ActivationMatrix::new(
        data,
        layer,
        manifest.model_id.clone(),
        manifest.dtype,
        manifest.corpus_fingerprint.clone(),
    )
    .map_err(|e| match e {
        Error::Layer { reason, .. } => err(reason),
        other => other,
    })
}

/// Load and validate a dump directory.
pub fn load_activation_set(dir: &Path) -> Result<ActivationSet> {
    load_activation_set_with_warnings(dir).map(|(set, _)| set)
}

/// Like [`load_activation_set`] but also returns non-fatal findings.
pub fn load_activation_set_with_warnings(dir: &Path) -> Result<(ActivationSet, Vec<String>)> {
    let (manifest, warnings) = read_manifest(dir)?;
    let present = layer_files_present(dir)?;
    let complete = (0..manifest.num_layers).all(|i| present.contains(&i));
    if !complete || present.len() != manifest.num_layers {
        return Err(Error::LayerCountMismatch {
            declared: manifest.num_layers,
            found: present.len(),
        });
    }
    let matrices = (0..manifest.num_layers)
        .into_par_iter()
        .map(|i| {
            load_matrix(
                &dir.join(layer_file_name(i)),
                i,
                &manifest,
                Some(manifest.n_tokens),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ActivationSet::new(matrices)?, warnings))
}

/// Load the item-level (per-document pooled) matrix for one layer.
pub fn load_item_matrix(dir: &Path, layer: usize) -> Result<ActivationMatrix> {
    let (manifest, _) = read_manifest(dir)?;
    if layer >= manifest.num_layers {
        return Err(Error::Invalid(format!(
            "layer {layer} out of range for {} layers",
            manifest.num_layers
        )));
    }
    let path = dir.join(item_file_name(layer));
    if !path.is_file() {
        return Err(Error::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "item-level dump not found"),
        ));
    }
    load_matrix(&path, layer, &manifest, None)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_matrix(m: &ActivationMatrix) -> RawArray {
    let shape = vec![m.n_tokens(), m.dim()];
    // C order is the row-major walk; nalgebra stores column-major
    let values: Vec<f64> = m.data.transpose().iter().copied().collect();
    match m.source_dtype {
        SourceDtype::F64 => RawArray::from_f64(shape, &values),
        SourceDtype::F32 => RawArray::from_f32(shape, &values),
        SourceDtype::Bf16 => RawArray::from_bf16(shape, &values),
    }
}

/// Write a dump directory in the exchange format. Payloads are encoded in
/// each layer's source dtype, so f64 sources reproduce byte-identical files.
pub fn write_activation_set(set: &ActivationSet, dir: &Path) -> Result<()> {
    let dims = set.dims();
    if dims.iter().any(|&d| d != dims[0]) {
        return Err(Error::Invalid(format!(
            "exchange format needs one width for all layers, got {dims:?}"
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        model_id: set.model_id.clone(),
        num_layers: set.num_layers(),
        n_tokens: set.n_tokens(),
        dim: dims[0],
        dtype: set.matrices[0].source_dtype,
        corpus_fingerprint: set.corpus_fingerprint.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    for m in &set.matrices {
        let mut bytes = Vec::new();
        npy::write(&mut bytes, &encode_matrix(m)).expect("in-memory write");
        write_file(&dir.join(layer_file_name(m.layer_index)), &bytes)?;
    }
    Ok(())
}

/// Which alignment requirements two sets satisfy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub same_n: bool,
    pub same_d: bool,
    pub same_fingerprint: bool,
    pub n: (usize, usize),
    pub fingerprints: (String, String),
}

pub fn check_alignment(a: &ActivationSet, b: &ActivationSet) -> AlignmentReport {
    AlignmentReport {
        same_n: a.n_tokens() == b.n_tokens(),
        same_d: a.dims() == b.dims(),
        same_fingerprint: a.corpus_fingerprint == b.corpus_fingerprint,
        n: (a.n_tokens(), b.n_tokens()),
        fingerprints: (a.corpus_fingerprint.clone(), b.corpus_fingerprint.clone()),
    }
}

impl AlignmentReport {
    /// Turn the requirements shared by every metric into errors.
    pub fn require_common(&self, allow_fingerprint_mismatch: bool) -> Result<()> {
        if !self.same_fingerprint && !allow_fingerprint_mismatch {
            return Err(Error::FingerprintMismatch {
                x: self.fingerprints.0.clone(),
                y: self.fingerprints.1.clone(),
            });
        }
        if !self.same_n {
            return Err(Error::TokenCountMismatch {
                x: self.n.0,
                y: self.n.1,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Classes {
        values: Vec<usize>,
        num_classes: usize,
    },
    Targets(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes { values, .. } => values.len(),
            Labels::Targets(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelSet {
    pub labels: Labels,
    pub splits: Splits,
}

impl LabelSet {
    pub fn new(labels: Labels, splits: Splits) -> Result<Self> {
        let n = labels.len();
        let mut seen: BTreeMap<usize, Split> = BTreeMap::new();
        for split in Split::ALL {
            for &idx in splits.get(split) {
                if let Some(prev) = seen.insert(idx, split) {
                    return Err(Error::Labels(format!(
                        "index {idx} appears in both {prev} and {split}"
                    )));
                }
            }
        }
        if let Some((&max, _)) = seen.last_key_value() {
            if max >= n {
                return Err(Error::Labels(format!(
                    "length mismatch: splits reference index {max} but only {n} labels exist"
                )));
            }
        }
        if let Labels::Classes {
            values,
            num_classes,
        } = &labels
        {
            if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| **v >= *num_classes) {
                return Err(Error::Labels(format!(
                    "label {v} at index {i} out of range for {num_classes} classes"
                )));
            }
        }
        Ok(LabelSet { labels, splits })
    }

    pub fn task_kind(&self) -> TaskKind {
        match self.labels {
            Labels::Classes { .. } => TaskKind::Classification,
            Labels::Targets(_) => TaskKind::Regression,
        }
    }

    pub fn n_items(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct SplitsFile {
    train: Vec<usize>,
    dev: Vec<usize>,
    test: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task: Option<TaskKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
}

fn label_paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join(LABELS_FILE), path.join(SPLITS_FILE))
    } else {
        let dir = path.parent().unwrap_or(Path::new("."));
        (path.to_path_buf(), dir.join(SPLITS_FILE))
    }
}

/// Load `labels.npy` and `splits.json`. `path` is either the directory holding
/// both or the labels file itself. `task` overrides the task stored in
/// `splits.json`; classification is the default.
pub fn load_label_set(path: &Path, task: Option<TaskKind>) -> Result<LabelSet> {
    let (labels_path, splits_path) = label_paths(path);
    let text = fs::read_to_string(&splits_path).map_err(|e| Error::io(&splits_path, e))?;
    let file: SplitsFile = serde_json::from_str(&text)
        .map_err(|e| Error::Labels(format!("{}: {e}", splits_path.display())))?;
    let raw = read_npy(&labels_path)?;
    if raw.shape.len() != 1 {
        return Err(Error::Labels(format!(
            "{} must be a vector, got shape {:?}",
            labels_path.display(),
            raw.shape
        )));
    }
    let task = task.or(file.task).unwrap_or(TaskKind::Classification);
    let labels = match task {
        TaskKind::Classification => {
            let ints = raw.to_i64().map_err(|_| {
                Error::Labels("classification labels must be integer (int64)".into())
            })?;
            if let Some((i, v)) = ints.iter().enumerate().find(|(_, v)| **v < 0) {
                return Err(Error::Labels(format!("negative label {v} at index {i}")));
            }
            let values: Vec<usize> = ints.iter().map(|&v| v as usize).collect();
            let num_classes = file
                .num_classes
                .unwrap_or_else(|| values.iter().max().map_or(0, |m| m + 1));
            Labels::Classes {
                values,
                num_classes,
            }
        }
        TaskKind::Regression => Labels::Targets(
            raw.to_f64(false)
                .map_err(|_| Error::Labels("regression targets must be numeric".into()))?,
        ),
    };
    LabelSet::new(
        labels,
        Splits {
            train: file.train,
            dev: file.dev,
            test: file.test,
        },
    )
}

/// Write `labels.npy` and `splits.json` into `dir`.
pub fn write_label_set(labels: &LabelSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (array, num_classes) = match &labels.labels {
        Labels::Classes {
            values,
            num_classes,
        } => {
            let ints: Vec<i64> = values.iter().map(|&v| v as i64).collect();
            (RawArray::from_i64(&ints), Some(*num_classes))
        }
        Labels::Targets(t) => (RawArray::from_f64(vec![t.len()], t), None),
    };
    let mut bytes = Vec::new();
    npy::write(&mut bytes, &array).expect("in-memory write");
    write_file(&dir.join(LABELS_FILE), &bytes)?;
    let file = SplitsFile {
        train: labels.splits.train.clone(),
        dev: labels.splits.dev.clone(),
        test: labels.splits.test.clone(),
        task: Some(labels.task_kind()),
        num_classes,
    };
    let json = serde_json::to_string_pretty(&file).expect("splits serialize");
    write_file(&dir.join(SPLITS_FILE), json.as_bytes())
}
