//! Prediction-sample tensors, label vectors and run manifests, plus the UQT1
//! container they are exchanged in.
//!
//! UQT1 layout (all integers and floats little-endian):
//!
//! ```text
//! offset 0   4 bytes   magic 0x55 0x51 0x54 0x31 ("UQT1")
//! offset 4   u32       header byte length H
//! offset 8   H bytes   UTF-8 JSON header
//!                      {"kind":"classifier-softmax"|"regression",
//!                       "shape":[N,T,C]|[N,T],"dtype":"f32","order":"row-major"}
//! offset 8+H           N*T*C (or N*T) f32 values, row-major
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const MAGIC: [u8; 4] = *b"UQT1";

/// Maximum allowed |row sum - 1| for a softmax row.
pub const SOFTMAX_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TensorKind {
    #[serde(rename = "classifier-softmax")]
    ClassifierSoftmax,
    #[serde(rename = "regression")]
    Regression,
}

impl TensorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TensorKind::ClassifierSoftmax => "classifier-softmax",
            TensorKind::Regression => "regression",
        }
    }
}

impl fmt::Display for TensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadOptions {
    /// Divide every softmax row by its sum instead of rejecting drifted rows.
    pub renormalize: bool,
}

/// N inputs x T samples (x C classes) of f32 predictions.
///
/// Point predictors are stored with `T = 1`. Once constructed a tensor is
/// always valid: finite, and for classifiers every row is a softmax row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTensor {
    kind: TensorKind,
    inputs: usize,
    samples: usize,
    classes: usize,
    values: Vec<f32>,
}

impl SampleTensor {
    pub fn classifier(inputs: usize, samples: usize, classes: usize, values: Vec<f32>) -> Result<Self> {
        Self::build(TensorKind::ClassifierSoftmax, inputs, samples, classes, values, ReadOptions::default())
    }

    pub fn regression(inputs: usize, samples: usize, values: Vec<f32>) -> Result<Self> {
        Self::build(TensorKind::Regression, inputs, samples, 1, values, ReadOptions::default())
    }

    /// Builds a classifier tensor, renormalizing drifted rows when asked to.
    pub fn classifier_with(
        inputs: usize,
        samples: usize,
        classes: usize,
        values: Vec<f32>,
        options: ReadOptions,
    ) -> Result<Self> {
        Self::build(TensorKind::ClassifierSoftmax, inputs, samples, classes, values, options)
    }

    fn build(
        kind: TensorKind,
        inputs: usize,
        samples: usize,
        classes: usize,
        mut values: Vec<f32>,
        options: ReadOptions,
    ) -> Result<Self> {
        let shape = match kind {
            TensorKind::ClassifierSoftmax => vec![inputs, samples, classes],
            TensorKind::Regression => vec![inputs, samples],
        };
        if samples == 0 || (kind == TensorKind::ClassifierSoftmax && classes < 2) {
            return Err(Error::ShapeMismatch {
                kind: kind.as_str(),
                shape,
            });
        }
        let expected = element_count(&shape).ok_or_else(|| Error::MalformedHeader("shape overflows".into()))?;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                what: "tensor values",
                expected,
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if kind == TensorKind::ClassifierSoftmax {
            validate_softmax(&mut values, samples, classes, options.renormalize)?;
        }
        Ok(SampleTensor {
            kind,
            inputs,
            samples,
            classes,
            values,
        })
    }

    pub fn kind(&self) -> TensorKind {
        self.kind
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Class count for classifiers, `None` for regression tensors.
    pub fn classes(&self) -> Option<usize> {
        match self.kind {
            TensorKind::ClassifierSoftmax => Some(self.classes),
            TensorKind::Regression => None,
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self.kind {
            TensorKind::ClassifierSoftmax => vec![self.inputs, self.samples, self.classes],
            TensorKind::Regression => vec![self.inputs, self.samples],
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// All samples for one input: `T * C` values (or `T` for regression).
    pub fn input(&self, index: usize) -> &[f32] {
        let stride = self.samples * self.classes;
        &self.values[index * stride..(index + 1) * stride]
    }

    /// One sample row: `C` values for classifiers, a single value for regression.
    pub fn row(&self, input: usize, sample: usize) -> &[f32] {
        let start = (input * self.samples + sample) * self.classes;
        &self.values[start..start + self.classes]
    }

    /// Serializes to the UQT1 container.
    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            kind: self.kind,
            shape: self.shape(),
            dtype: "f32".into(),
            order: "row-major".into(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(8 + header.len() + 4 * self.values.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses and validates a UQT1 container.
    pub fn decode(bytes: &[u8], options: ReadOptions) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 8 {
            return Err(Error::TruncatedHeader);
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let payload_start = 8usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or(Error::TruncatedHeader)?;
        let header: Header = serde_json::from_slice(&bytes[8..payload_start])
            .map_err(|e| Error::MalformedHeader(e.to_string()))?;
        if header.dtype != "f32" {
            return Err(Error::MalformedHeader(format!("unsupported dtype `{}`", header.dtype)));
        }
        if header.order != "row-major" {
            return Err(Error::MalformedHeader(format!("unsupported order `{}`", header.order)));
        }
        let (inputs, samples, classes) = match (header.kind, header.shape.as_slice()) {
            (TensorKind::ClassifierSoftmax, &[n, t, c]) => (n, t, c),
            (TensorKind::Regression, &[n, t]) => (n, t, 1),
            (kind, shape) => {
                return Err(Error::ShapeMismatch {
                    kind: kind.as_str(),
                    shape: shape.to_vec(),
                })
            }
        };
        let count = element_count(&header.shape).ok_or_else(|| Error::MalformedHeader("shape overflows".into()))?;
        let payload = &bytes[payload_start..];
        let expected = count
            .checked_mul(4)
            .ok_or_else(|| Error::MalformedHeader("shape overflows".into()))?;
        if payload.len() != expected {
            return Err(Error::PayloadLengthMismatch {
                expected,
                found: payload.len(),
            });
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::build(header.kind, inputs, samples, classes, values, options)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: TensorKind,
    shape: Vec<usize>,
    dtype: String,
    order: String,
}

fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

fn validate_softmax(values: &mut [f32], samples: usize, classes: usize, renormalize: bool) -> Result<()> {
    for (r, row) in values.chunks_exact_mut(classes).enumerate() {
        let (input, sample) = (r / samples, r % samples);
        let sum: f64 = row.iter().map(|&v| v as f64).sum();
        if renormalize {
            if let Some(&value) = row.iter().find(|&&v| v < 0.0) {
                return Err(Error::SoftmaxEntryOutOfRange { input, sample, value });
            }
            if sum <= 0.0 {
                return Err(Error::SoftmaxRowSum {
                    input,
                    sample,
                    sum: sum as f32,
                });
            }
            if (sum - 1.0).abs() > f64::EPSILON {
                for v in row.iter_mut() {
                    *v = (*v as f64 / sum) as f32;
                }
            }
            continue;
        }
        if let Some(&value) = row.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::SoftmaxEntryOutOfRange { input, sample, value });
        }
        if (sum - 1.0).abs() > SOFTMAX_TOLERANCE {
            return Err(Error::SoftmaxRowSum {
                input,
                sample,
                sum: sum as f32,
            });
        }
    }
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>, options: ReadOptions) -> Result<SampleTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    SampleTensor::decode(&bytes, options)
}

/// Writes the tensor atomically. Tensors are validated at construction, so an
/// invalid tensor can never reach this point; no bytes are written on error.
pub fn write_tensor(tensor: &SampleTensor, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &tensor.encode())
}

/// Ground truth per input: class indices for classifiers, real targets for
/// regression.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes(Vec<usize>),
    Targets(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(v) => v.len(),
            Labels::Targets(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> TensorKind {
        match self {
            Labels::Classes(_) => TensorKind::ClassifierSoftmax,
            Labels::Targets(_) => TensorKind::Regression,
        }
    }

    /// Checks length (and class range) against the tensor the labels belong to.
    pub fn check_against(&self, tensor: &SampleTensor) -> Result<()> {
        if self.kind() != tensor.kind() {
            return Err(Error::LabelKindMismatch);
        }
        if self.len() != tensor.inputs() {
            return Err(Error::LengthMismatch {
                what: "labels",
                expected: tensor.inputs(),
                found: self.len(),
            });
        }
        if let (Labels::Classes(v), Some(classes)) = (self, tensor.classes()) {
            if let Some(&label) = v.iter().find(|&&l| l >= classes) {
                return Err(Error::ClassOutOfRange { label, classes });
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,label\n");
        match self {
            Labels::Classes(v) => v.iter().enumerate().for_each(|(i, l)| out.push_str(&format!("{i},{l}\n"))),
            Labels::Targets(v) => v.iter().enumerate().for_each(|(i, l)| out.push_str(&format!("{i},{l}\n"))),
        }
        out
    }
}

/// Parses an `index,label` CSV. `classes`, when given, bounds class labels.
pub fn parse_labels(text: &str, kind: TensorKind, classes: Option<usize>) -> Result<Labels> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::LabelParse {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    if header.len() != 2 || &header[0] != "index" || &header[1] != "label" {
        return Err(Error::LabelHeader(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut class_labels = Vec::new();
    let mut targets = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::LabelParse {
            line,
            reason: e.to_string(),
        })?;
        let index: usize = record[0].parse().map_err(|_| Error::LabelParse {
            line,
            reason: format!("bad index `{}`", &record[0]),
        })?;
        let expected = class_labels.len() + targets.len();
        if index < expected {
            return Err(Error::DuplicateIndex(index));
        }
        if index > expected {
            return Err(Error::NonContiguousIndex { expected, found: index });
        }
        match kind {
            TensorKind::ClassifierSoftmax => {
                let label: usize = record[1].parse().map_err(|_| Error::LabelParse {
                    line,
                    reason: format!("bad class label `{}`", &record[1]),
                })?;
                if let Some(classes) = classes {
                    if label >= classes {
                        return Err(Error::ClassOutOfRange { label, classes });
                    }
                }
                class_labels.push(label);
            }
            TensorKind::Regression => {
                let target: f64 = record[1]
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| Error::LabelParse {
                        line,
                        reason: format!("bad target `{}`", &record[1]),
                    })?;
                targets.push(target);
            }
        }
    }
    Ok(match kind {
        TensorKind::ClassifierSoftmax => Labels::Classes(class_labels),
        TensorKind::Regression => Labels::Targets(targets),
    })
}

pub fn read_labels(path: impl AsRef<Path>, kind: TensorKind, classes: Option<usize>) -> Result<Labels> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, kind, classes)
}

pub fn write_labels(labels: &Labels, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, labels.to_csv().as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Nominal,
    Ood,
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distribution::Nominal => "nominal",
            Distribution::Ood => "ood",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Validation,
    Test,
}

/// Sidecar metadata describing where a sample dump came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunManifest {
    pub dataset_tag: String,
    pub distribution: Distribution,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_rate: Option<f64>,
    pub technique_tag: String,
    /// Producer-specific keys (sample count, member order, ...), kept verbatim.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        if let Some(rate) = self.dropout_rate {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Manifest(format!("dropout-rate {rate} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// `dir/name.uqt` -> `dir/name.manifest.json`.
pub fn manifest_path_for(tensor_path: impl AsRef<Path>) -> PathBuf {
    let path = tensor_path.as_ref();
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.manifest.json"))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<RunManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &RunManifest, path: impl AsRef<Path>) -> Result<()> {
    manifest.validate()?;
    write_atomic(path, manifest.to_json().as_bytes())
}
