//! Layer-wise feature packs.
//!
//! A pack is a directory holding:
//!
//! - `manifest.json`: layer count, per-layer widths, domains, classes;
//! - `features_layer{l}.f32le`: one row-major `[N_total x H_l]` matrix of
//!   little-endian `f32` per layer;
//! - `labels.u32le` and `domain_ids.u32le`: one little-endian `u32` per sample.
//!
//! Row `i` is the same underlying sample at every layer.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABELS_FILE: &str = "labels.u32le";
pub const DOMAIN_IDS_FILE: &str = "domain_ids.u32le";

pub fn layer_file_name(layer: usize) -> String {
    format!("features_layer{layer}.f32le")
}

#[derive(Debug, Error)]
pub enum PackError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no domains")]
    NoDomains,
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("size mismatch in {file}: expected {expected} bytes, found {actual}")]
    SizeMismatch {
        file: String,
        expected: u64,
        actual: u64,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in layer {layer} at row {row}, column {col}")]
    NonFinite { layer: usize, row: usize, col: usize },
    #[error("label out of range: sample {index} has label {value} but the pack has {num_classes} classes")]
    LabelOutOfRange {
        index: usize,
        value: u32,
        num_classes: usize,
    },
    #[error("domain id out of range: sample {index} has domain id {value} but the pack has {num_domains} domains")]
    DomainOutOfRange {
        index: usize,
        value: u32,
        num_domains: usize,
    },
    #[error("domain '{domain}' declares {expected} samples but {actual} rows carry its id")]
    DomainCountMismatch {
        domain: String,
        expected: usize,
        actual: usize,
    },
    #[error("unknown domain '{0}'")]
    UnknownDomain(String),
    #[error("layer {layer} out of range (pack has {num_layers} layers)")]
    LayerOutOfRange { layer: usize, num_layers: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PackError + '_ {
    move |source| PackError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainEntry {
    pub name: String,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackManifest {
    pub format_version: u32,
    pub model_name: String,
    pub num_layers: usize,
    pub dims: Vec<usize>,
    pub domains: Vec<DomainEntry>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub total_samples: usize,
}

impl PackManifest {
    /// Every violated manifest invariant, in a fixed order.
    pub fn violations(&self) -> Vec<PackError> {
        let mut out = Vec::new();
        if self.domains.is_empty() {
            out.push(PackError::NoDomains);
        }
        if self.format_version != FORMAT_VERSION {
            out.push(PackError::InvalidManifest(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.num_layers < 2 {
            out.push(PackError::InvalidManifest(format!(
                "num_layers must be at least 2, got {}",
                self.num_layers
            )));
        }
        if self.dims.len() != self.num_layers {
            out.push(PackError::InvalidManifest(format!(
                "dims lists {} layers but num_layers is {}",
                self.dims.len(),
                self.num_layers
            )));
        }
        if let Some(l) = self.dims.iter().position(|&h| h == 0) {
            out.push(PackError::InvalidManifest(format!("layer {l} has width 0")));
        }
        if self.num_classes < 2 {
            out.push(PackError::InvalidManifest(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.class_names.len() != self.num_classes {
            out.push(PackError::InvalidManifest(format!(
                "class_names has {} entries but num_classes is {}",
                self.class_names.len(),
                self.num_classes
            )));
        }
        let declared: usize = self.domains.iter().map(|d| d.sample_count).sum();
        if declared != self.total_samples {
            out.push(PackError::InvalidManifest(format!(
                "domain sample counts sum to {declared} but total_samples is {}",
                self.total_samples
            )));
        }
        let mut seen = HashSet::new();
        for d in &self.domains {
            if !seen.insert(d.name.as_str()) {
                out.push(PackError::InvalidManifest(format!(
                    "duplicate domain name '{}'",
                    d.name
                )));
            }
            if d.name.contains('+') {
                out.push(PackError::InvalidManifest(format!(
                    "domain name '{}' contains '+', which is reserved for blend ids",
                    d.name
                )));
            }
        }
        out
    }

    pub fn check(&self) -> Result<(), PackError> {
        match self.violations().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn domain_index(&self, name: &str) -> Result<usize, PackError> {
        self.domains
            .iter()
            .position(|d| d.name == name)
            .ok_or_else(|| PackError::UnknownDomain(name.to_string()))
    }
}

/// Layer-wise features for every sample of every domain.
///
/// Immutable once constructed; all invariants are checked in [`FeaturePack::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePack {
    manifest: PackManifest,
    features: Vec<Array2<f32>>,
    labels: Vec<u32>,
    domain_ids: Vec<u32>,
    domain_rows: Vec<Vec<usize>>,
}

impl FeaturePack {
    pub fn new(
        manifest: PackManifest,
        features: Vec<Array2<f32>>,
        labels: Vec<u32>,
        domain_ids: Vec<u32>,
    ) -> Result<Self, PackError> {
        manifest.check()?;
        let n = manifest.total_samples;
        if features.len() != manifest.num_layers {
            return Err(PackError::ShapeMismatch(format!(
                "{} feature matrices for {} layers",
                features.len(),
                manifest.num_layers
            )));
        }
        for (l, m) in features.iter().enumerate() {
            if m.dim() != (n, manifest.dims[l]) {
                return Err(PackError::ShapeMismatch(format!(
                    "layer {l} matrix is {:?}, expected ({n}, {})",
                    m.dim(),
                    manifest.dims[l]
                )));
            }
            if let Some((row, col)) = first_non_finite(m) {
                return Err(PackError::NonFinite { layer: l, row, col });
            }
        }
        if labels.len() != n || domain_ids.len() != n {
            return Err(PackError::ShapeMismatch(format!(
                "{} labels and {} domain ids for {n} samples",
                labels.len(),
                domain_ids.len()
            )));
        }
        if let Some((index, &value)) = labels
            .iter()
            .enumerate()
            .find(|(_, &y)| y as usize >= manifest.num_classes)
        {
            return Err(PackError::LabelOutOfRange {
                index,
                value,
                num_classes: manifest.num_classes,
            });
        }
        let k = manifest.domains.len();
        let mut domain_rows = vec![Vec::new(); k];
        for (index, &d) in domain_ids.iter().enumerate() {
            if d as usize >= k {
                return Err(PackError::DomainOutOfRange {
                    index,
                    value: d,
                    num_domains: k,
                });
            }
            domain_rows[d as usize].push(index);
        }
        for (entry, rows) in manifest.domains.iter().zip(&domain_rows) {
            if rows.len() != entry.sample_count {
                return Err(PackError::DomainCountMismatch {
                    domain: entry.name.clone(),
                    expected: entry.sample_count,
                    actual: rows.len(),
                });
            }
        }
        Ok(Self {
            manifest,
            features: features
                .into_iter()
                .map(|m| m.as_standard_layout().into_owned())
                .collect(),
            labels,
            domain_ids,
            domain_rows,
        })
    }

    pub fn manifest(&self) -> &PackManifest {
        &self.manifest
    }

    pub fn num_layers(&self) -> usize {
        self.manifest.num_layers
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn num_samples(&self) -> usize {
        self.manifest.total_samples
    }

    pub fn layer(&self, layer: usize) -> Result<&Array2<f32>, PackError> {
        self.features.get(layer).ok_or(PackError::LayerOutOfRange {
            layer,
            num_layers: self.num_layers(),
        })
    }

    /// Feature row of sample `index` at `layer`. Panics on out-of-range input.
    pub fn row(&self, layer: usize, index: usize) -> &[f32] {
        let m = &self.features[layer];
        let h = m.ncols();
        &m.as_slice().expect("standard layout")[index * h..(index + 1) * h]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn domain_ids(&self) -> &[u32] {
        &self.domain_ids
    }

    pub fn domain_names(&self) -> impl Iterator<Item = &str> {
        self.manifest.domains.iter().map(|d| d.name.as_str())
    }

    pub fn domain_index(&self, name: &str) -> Result<usize, PackError> {
        self.manifest.domain_index(name)
    }

    /// Sample indices belonging to domain `domain`, in ascending order.
    pub fn domain_rows(&self, domain: usize) -> &[usize] {
        &self.domain_rows[domain]
    }

    /// Sample indices of a named domain.
    pub fn rows_of(&self, name: &str) -> Result<&[usize], PackError> {
        Ok(self.domain_rows(self.domain_index(name)?))
    }

    /// Sample indices of the union of named domains, in the order given.
    pub fn union_rows(&self, names: &[&str]) -> Result<Vec<usize>, PackError> {
        let mut out = Vec::new();
        for name in names {
            out.extend_from_slice(self.rows_of(name)?);
        }
        Ok(out)
    }

    pub fn slice(&self, domain: &str, layer: usize) -> Result<DomainSlice, PackError> {
        self.union_slice(&[domain], layer)
    }

    pub fn union_slice(&self, domains: &[&str], layer: usize) -> Result<DomainSlice, PackError> {
        let m = self.layer(layer)?;
        let indices = self.union_rows(domains)?;
        let features = m.select(Axis(0), &indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(DomainSlice {
            indices,
            features,
            labels,
        })
    }
}

/// Rows of one or more domains at a single layer.
#[derive(Debug, Clone)]
pub struct DomainSlice {
    /// Pack-level sample indices, stable across layers.
    pub indices: Vec<usize>,
    pub features: Array2<f32>,
    pub labels: Vec<u32>,
}

fn first_non_finite(m: &Array2<f32>) -> Option<(usize, usize)> {
    m.indexed_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(idx, _)| idx)
}

pub fn write_pack(pack: &FeaturePack, path: impl AsRef<Path>) -> Result<(), PackError> {
    let path = path.as_ref();
    // FeaturePack::new guarantees the invariants, but the manifest is
    // re-checked so a hand-edited pack is never written half-way.
    pack.manifest.check()?;
    fs::create_dir_all(path).map_err(io_err(path))?;

    let manifest_path = path.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&pack.manifest)?;
    fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;

    for (l, m) in pack.features.iter().enumerate() {
        let mut buf = Vec::with_capacity(m.len() * 4);
        for v in m.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let p = path.join(layer_file_name(l));
        fs::write(&p, buf).map_err(io_err(&p))?;
    }
    for (name, values) in [(LABELS_FILE, &pack.labels), (DOMAIN_IDS_FILE, &pack.domain_ids)] {
        let buf: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        let p = path.join(name);
        fs::write(&p, buf).map_err(io_err(&p))?;
    }
    Ok(())
}

fn read_manifest(path: &Path) -> Result<PackManifest, PackError> {
    let p = path.join(MANIFEST_FILE);
    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_sized(path: &Path, file: &str, expected: u64) -> Result<Vec<u8>, PackError> {
    let p = path.join(file);
    let bytes = fs::read(&p).map_err(io_err(&p))?;
    if bytes.len() as u64 != expected {
        return Err(PackError::SizeMismatch {
            file: file.to_string(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn decode_u32(bytes: &[u8]) -> Vec<u32> {
    bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn load_pack(path: impl AsRef<Path>) -> Result<FeaturePack, PackError> {
    let path = path.as_ref();
    let manifest = read_manifest(path)?;
    manifest.check()?;
    let n = manifest.total_samples;
    let mut features = Vec::with_capacity(manifest.num_layers);
    for (l, &h) in manifest.dims.iter().enumerate() {
        let bytes = read_sized(path, &layer_file_name(l), (n * h * 4) as u64)?;
        let m = Array2::from_shape_vec((n, h), decode_f32(&bytes))
            .map_err(|e| PackError::ShapeMismatch(e.to_string()))?;
        features.push(m);
    }
    let labels = decode_u32(&read_sized(path, LABELS_FILE, (n * 4) as u64)?);
    let domain_ids = decode_u32(&read_sized(path, DOMAIN_IDS_FILE, (n * 4) as u64)?);
    FeaturePack::new(manifest, features, labels, domain_ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    fn error(&mut self, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Error,
            message: message.into(),
        });
    }

    fn warning(&mut self, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Warning,
            message: message.into(),
        });
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Warning)
    }
}

/// Check a pack directory and list every problem found. Never fails: problems
/// are report entries.
pub fn validate_pack(path: impl AsRef<Path>) -> ValidationReport {
    let path = path.as_ref();
    let mut report = ValidationReport::default();
    let manifest = match read_manifest(path) {
        Ok(m) => m,
        Err(e) => {
            report.error(e.to_string());
            return report;
        }
    };
    for v in manifest.violations() {
        report.error(v.to_string());
    }
    let n = manifest.total_samples;

    for (l, &h) in manifest.dims.iter().enumerate() {
        match read_sized(path, &layer_file_name(l), (n * h * 4) as u64) {
            Ok(bytes) => {
                let values = decode_f32(&bytes);
                if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
                    report.error(
                        PackError::NonFinite {
                            layer: l,
                            row: pos / h,
                            col: pos % h,
                        }
                        .to_string(),
                    );
                }
            }
            Err(e) => report.error(e.to_string()),
        }
    }

    let labels = read_sized(path, LABELS_FILE, (n * 4) as u64).map(|b| decode_u32(&b));
    let domain_ids = read_sized(path, DOMAIN_IDS_FILE, (n * 4) as u64).map(|b| decode_u32(&b));
    let labels = match labels {
        Ok(v) => {
            let bad = v
                .iter()
                .enumerate()
                .find(|(_, &y)| y as usize >= manifest.num_classes);
            match bad {
                Some((index, &value)) => {
                    report.error(
                        PackError::LabelOutOfRange {
                            index,
                            value,
                            num_classes: manifest.num_classes,
                        }
                        .to_string(),
                    );
                    None
                }
                None => Some(v),
            }
        }
        Err(e) => {
            report.error(e.to_string());
            None
        }
    };
    let k = manifest.domains.len();
    let domain_ids = match domain_ids {
        Ok(v) => match v.iter().enumerate().find(|(_, &d)| d as usize >= k) {
            Some((index, &value)) => {
                report.error(
                    PackError::DomainOutOfRange {
                        index,
                        value,
                        num_domains: k,
                    }
                    .to_string(),
                );
                None
            }
            None => Some(v),
        },
        Err(e) => {
            report.error(e.to_string());
            None
        }
    };

    if let Some(ids) = &domain_ids {
        let mut counts = vec![0usize; k];
        for &d in ids {
            counts[d as usize] += 1;
        }
        for (entry, &actual) in manifest.domains.iter().zip(&counts) {
            if actual != entry.sample_count {
                report.error(
                    PackError::DomainCountMismatch {
                        domain: entry.name.clone(),
                        expected: entry.sample_count,
                        actual,
                    }
                    .to_string(),
                );
            }
        }
        if let Some(labels) = &labels {
            let c = manifest.num_classes;
            let mut present = vec![vec![false; c]; k];
            for (&d, &y) in ids.iter().zip(labels) {
                present[d as usize][y as usize] = true;
            }
            for (entry, row) in manifest.domains.iter().zip(&present) {
                for (class, &seen) in row.iter().enumerate() {
                    if !seen {
                        let class_name = manifest
                            .class_names
                            .get(class)
                            .cloned()
                            .unwrap_or_else(|| class.to_string());
                        report.warning(format!(
                            "class coverage: class {class} ('{class_name}') absent from domain '{}'",
                            entry.name
                        ));
                    }
                }
            }
        }
    }

    let ok = report.errors().next().is_none();
    report.ok = ok;
    report
}
