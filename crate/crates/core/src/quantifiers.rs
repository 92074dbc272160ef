//! Per-input (prediction, uncertainty) from softmax or regression samples.
//!
//! Every quantifier reports *uncertainty*: confidence-style quantifiers (SM,
//! PCS, MS) store the negated confidence, so a single "reject iff
//! uncertainty >= t" rule applies downstream.
//!
//! Softmax rows are treated as distributions: each row is divided by its own
//! f64 sum before aggregation, which removes the f32 export drift that the
//! container tolerates. Sums over samples are taken over ascending-sorted
//! terms, so results are bit-identical under any reordering of the samples.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{SampleTensor, TensorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quantifier {
    /// Max-softmax confidence of a point prediction.
    #[serde(rename = "SM")]
    MaxSoftmax,
    /// Prediction confidence score: gap between the two largest softmax entries.
    #[serde(rename = "PCS")]
    Pcs,
    /// Entropy of a single softmax row.
    #[serde(rename = "SME")]
    SoftmaxEntropy,
    #[serde(rename = "MS")]
    MeanSoftmax,
    #[serde(rename = "VR")]
    VariationRatio,
    #[serde(rename = "PE")]
    PredictiveEntropy,
    #[serde(rename = "MI")]
    MutualInformation,
    #[serde(rename = "PRED-VAR")]
    PredictiveVariance,
    #[serde(rename = "MEAN-VAR")]
    MeanVariance,
}

impl Quantifier {
    pub const ALL: [Quantifier; 9] = [
        Quantifier::MaxSoftmax,
        Quantifier::Pcs,
        Quantifier::SoftmaxEntropy,
        Quantifier::MeanSoftmax,
        Quantifier::VariationRatio,
        Quantifier::PredictiveEntropy,
        Quantifier::MutualInformation,
        Quantifier::PredictiveVariance,
        Quantifier::MeanVariance,
    ];

    /// Sampling quantifiers for classifiers.
    pub const CLASSIFIER_SAMPLING: [Quantifier; 4] = [
        Quantifier::MeanSoftmax,
        Quantifier::VariationRatio,
        Quantifier::PredictiveEntropy,
        Quantifier::MutualInformation,
    ];

    pub const POINT: [Quantifier; 3] = [Quantifier::MaxSoftmax, Quantifier::Pcs, Quantifier::SoftmaxEntropy];

    pub fn code(self) -> &'static str {
        match self {
            Quantifier::MaxSoftmax => "SM",
            Quantifier::Pcs => "PCS",
            Quantifier::SoftmaxEntropy => "SME",
            Quantifier::MeanSoftmax => "MS",
            Quantifier::VariationRatio => "VR",
            Quantifier::PredictiveEntropy => "PE",
            Quantifier::MutualInformation => "MI",
            Quantifier::PredictiveVariance => "PRED-VAR",
            Quantifier::MeanVariance => "MEAN-VAR",
        }
    }

    /// Works on a single sample per input.
    pub fn is_point(self) -> bool {
        Self::POINT.contains(&self)
    }

    /// Natively a confidence; stored negated.
    pub fn is_confidence(self) -> bool {
        matches!(self, Quantifier::MaxSoftmax | Quantifier::Pcs | Quantifier::MeanSoftmax)
    }

    pub fn tensor_kind(self) -> TensorKind {
        match self {
            Quantifier::PredictiveVariance | Quantifier::MeanVariance => TensorKind::Regression,
            _ => TensorKind::ClassifierSoftmax,
        }
    }
}

impl fmt::Display for Quantifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Quantifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_ascii_uppercase().replace('_', "-");
        let alias = match wanted.as_str() {
            // tables sometimes label mean-softmax "AS"
            "AS" => "MS",
            "PREDVAR" | "VAR" => "PRED-VAR",
            "MEANVAR" => "MEAN-VAR",
            other => other,
        };
        Quantifier::ALL
            .into_iter()
            .find(|q| q.code() == alias)
            .ok_or_else(|| Error::UnknownQuantifier(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Class(usize),
    Value(f64),
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Class(c) => write!(f, "{c}"),
            Prediction::Value(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub predicted: Prediction,
    /// Larger means more uncertain.
    pub uncertainty: f64,
}

impl Assessment {
    pub fn class(&self) -> Option<usize> {
        match self.predicted {
            Prediction::Class(c) => Some(c),
            Prediction::Value(_) => None,
        }
    }
}

/// Assessments of one quantifier over a whole tensor, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessments {
    pub quantifier: Quantifier,
    pub items: Vec<Assessment>,
}

impl Assessments {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn uncertainties(&self) -> Vec<f64> {
        self.items.iter().map(|a| a.uncertainty).collect()
    }

    /// `index,predicted,uncertainty` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,predicted,uncertainty\n");
        for (i, a) in self.items.iter().enumerate() {
            out.push_str(&format!("{i},{},{}\n", a.predicted, a.uncertainty));
        }
        out
    }
}

/// Which quantifier to run, optionally on the first `prefix` samples only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantifierSpec {
    pub quantifier: Quantifier,
    pub prefix: Option<usize>,
}

impl QuantifierSpec {
    pub fn new(quantifier: Quantifier) -> Self {
        QuantifierSpec { quantifier, prefix: None }
    }

    pub fn with_prefix(quantifier: Quantifier, prefix: usize) -> Self {
        QuantifierSpec {
            quantifier,
            prefix: Some(prefix),
        }
    }
}

/// Runs any single-tensor quantifier. MEAN-VAR needs a second tensor and goes
/// through [`mean_variance`].
pub fn quantify(tensor: &SampleTensor, spec: QuantifierSpec) -> Result<Assessments> {
    let q = spec.quantifier;
    if q == Quantifier::MeanVariance {
        return Err(Error::WrongKind {
            quantifier: q,
            expected: "paired mean/variance",
        });
    }
    if q.is_point() {
        let k = point_samples(tensor, q, spec.prefix)?;
        debug_assert_eq!(k, 1);
        return Ok(match q {
            Quantifier::MaxSoftmax => max_softmax_impl(tensor),
            Quantifier::Pcs => pcs_impl(tensor),
            _ => softmax_entropy_impl(tensor),
        });
    }
    let k = sampling_samples(tensor, q, spec.prefix)?;
    Ok(match q {
        Quantifier::MeanSoftmax => mean_softmax_impl(tensor, k),
        Quantifier::VariationRatio => variation_ratio_impl(tensor, k),
        Quantifier::PredictiveEntropy => predictive_entropy_impl(tensor, k),
        Quantifier::MutualInformation => mutual_information_impl(tensor, k),
        _ => predictive_variance_impl(tensor, k),
    })
}

pub fn max_softmax(tensor: &SampleTensor) -> Result<Assessments> {
    quantify(tensor, QuantifierSpec::new(Quantifier::MaxSoftmax))
}

pub fn pcs(tensor: &SampleTensor) -> Result<Assessments> {
    quantify(tensor, QuantifierSpec::new(Quantifier::Pcs))
}

pub fn softmax_entropy(tensor: &SampleTensor) -> Result<Assessments> {
    quantify(tensor, QuantifierSpec::new(Quantifier::SoftmaxEntropy))
}

pub fn mean_softmax(tensor: &SampleTensor, k: Option<usize>) -> Result<Assessments> {
    quantify(tensor, spec_with(Quantifier::MeanSoftmax, k))
}

pub fn variation_ratio(tensor: &SampleTensor, k: Option<usize>) -> Result<Assessments> {
    quantify(tensor, spec_with(Quantifier::VariationRatio, k))
}

pub fn predictive_entropy(tensor: &SampleTensor, k: Option<usize>) -> Result<Assessments> {
    quantify(tensor, spec_with(Quantifier::PredictiveEntropy, k))
}

pub fn mutual_information(tensor: &SampleTensor, k: Option<usize>) -> Result<Assessments> {
    quantify(tensor, spec_with(Quantifier::MutualInformation, k))
}

pub fn predictive_variance(tensor: &SampleTensor, k: Option<usize>) -> Result<Assessments> {
    quantify(tensor, spec_with(Quantifier::PredictiveVariance, k))
}

fn spec_with(quantifier: Quantifier, prefix: Option<usize>) -> QuantifierSpec {
    QuantifierSpec { quantifier, prefix }
}

/// Ensemble of members that each predict a mean and a variance: the
/// prediction is the mean of the member means, the uncertainty the mean of
/// the member variances.
pub fn mean_variance(means: &SampleTensor, variances: &SampleTensor, k: Option<usize>) -> Result<Assessments> {
    let q = Quantifier::MeanVariance;
    for t in [means, variances] {
        if t.kind() != TensorKind::Regression {
            return Err(Error::WrongKind {
                quantifier: q,
                expected: "regression",
            });
        }
    }
    if means.shape() != variances.shape() {
        return Err(Error::LengthMismatch {
            what: "variance tensor",
            expected: means.values().len(),
            found: variances.values().len(),
        });
    }
    if let Some(pos) = variances.values().iter().position(|&v| v < 0.0) {
        return Err(Error::NegativeVariance {
            input: pos / variances.samples(),
            value: variances.values()[pos],
        });
    }
    let k = sampling_samples(means, q, k)?;
    let items = (0..means.inputs())
        .into_par_iter()
        .map_init(Vec::new, |scratch, i| {
            let mean = prefix_mean(&means.input(i)[..k], scratch);
            let var = prefix_mean(&variances.input(i)[..k], scratch);
            Assessment {
                predicted: Prediction::Value(mean),
                uncertainty: var,
            }
        })
        .collect();
    Ok(Assessments { quantifier: q, items })
}

fn check_kind(tensor: &SampleTensor, q: Quantifier) -> Result<()> {
    if tensor.kind() != q.tensor_kind() {
        return Err(Error::WrongKind {
            quantifier: q,
            expected: q.tensor_kind().as_str(),
        });
    }
    Ok(())
}

fn point_samples(tensor: &SampleTensor, q: Quantifier, prefix: Option<usize>) -> Result<usize> {
    check_kind(tensor, q)?;
    let k = prefix.unwrap_or(tensor.samples());
    if k > tensor.samples() {
        return Err(Error::PrefixTooLarge {
            prefix: k,
            available: tensor.samples(),
        });
    }
    if k != 1 {
        return Err(Error::SampleCount {
            quantifier: q,
            requirement: "exactly one sample",
            got: k,
        });
    }
    Ok(k)
}

fn sampling_samples(tensor: &SampleTensor, q: Quantifier, prefix: Option<usize>) -> Result<usize> {
    check_kind(tensor, q)?;
    let k = prefix.unwrap_or(tensor.samples());
    if k > tensor.samples() {
        return Err(Error::PrefixTooLarge {
            prefix: k,
            available: tensor.samples(),
        });
    }
    if k < 2 {
        return Err(Error::SampleCount {
            quantifier: q,
            requirement: "at least two samples",
            got: k,
        });
    }
    Ok(k)
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn row_sum(row: &[f32]) -> f64 {
    row.iter().map(|&v| v as f64).sum()
}

/// Sum of the terms in ascending order; reorders `terms`.
fn ordered_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// Mean taken as `min + mean(x - min)` over sorted deviations, so that a run
/// of identical values averages back to exactly that value.
fn ordered_mean(terms: &mut [f64]) -> f64 {
    let low = terms.iter().copied().fold(f64::INFINITY, f64::min);
    for v in terms.iter_mut() {
        *v -= low;
    }
    low + ordered_sum(terms) / terms.len() as f64
}

fn prefix_mean(values: &[f32], scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(values.iter().map(|&v| v as f64));
    ordered_mean(scratch)
}

/// Entropy (nats) of a row after normalizing it by its sum; 0 ln 0 = 0.
fn row_entropy(row: &[f32]) -> f64 {
    let sum = row_sum(row);
    entropy(row.iter().map(|&v| v as f64 / sum))
}

fn entropy(probs: impl Iterator<Item = f64>) -> f64 {
    let h: f64 = probs.filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum();
    h.max(0.0)
}

fn max_softmax_impl(tensor: &SampleTensor) -> Assessments {
    point_map(tensor, Quantifier::MaxSoftmax, |row| {
        let best = argmax(row);
        (best, -(row[best] as f64 / row_sum(row)))
    })
}

fn pcs_impl(tensor: &SampleTensor) -> Assessments {
    point_map(tensor, Quantifier::Pcs, |row| {
        let best = argmax(row);
        let runner_up = row
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != best)
            .map(|(_, &v)| v)
            .fold(f32::NEG_INFINITY, f32::max);
        (best, -((row[best] - runner_up) as f64 / row_sum(row)))
    })
}

fn softmax_entropy_impl(tensor: &SampleTensor) -> Assessments {
    point_map(tensor, Quantifier::SoftmaxEntropy, |row| (argmax(row), row_entropy(row)))
}

fn point_map(tensor: &SampleTensor, quantifier: Quantifier, f: impl Fn(&[f32]) -> (usize, f64) + Sync) -> Assessments {
    let items = (0..tensor.inputs())
        .into_par_iter()
        .map(|i| {
            let (class, uncertainty) = f(tensor.row(i, 0));
            Assessment {
                predicted: Prediction::Class(class),
                uncertainty,
            }
        })
        .collect();
    Assessments { quantifier, items }
}

/// Per-class means over the first `k` normalized sample rows of input `i`.
fn mean_distribution(tensor: &SampleTensor, i: usize, k: usize, column: &mut Vec<f64>, out: &mut Vec<f64>) {
    let classes = tensor.classes().expect("classifier tensor");
    let sums: Vec<f64> = (0..k).map(|t| row_sum(tensor.row(i, t))).collect();
    out.clear();
    for c in 0..classes {
        column.clear();
        column.extend((0..k).map(|t| tensor.row(i, t)[c] as f64 / sums[t]));
        out.push(ordered_mean(column));
    }
}

fn sampling_map(
    tensor: &SampleTensor,
    quantifier: Quantifier,
    f: impl Fn(usize, &mut Vec<f64>, &mut Vec<f64>) -> (usize, f64) + Sync,
) -> Assessments {
    let items = (0..tensor.inputs())
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(column, mean), i| {
                let (class, uncertainty) = f(i, column, mean);
                Assessment {
                    predicted: Prediction::Class(class),
                    uncertainty,
                }
            },
        )
        .collect();
    Assessments { quantifier, items }
}

fn mean_softmax_impl(tensor: &SampleTensor, k: usize) -> Assessments {
    sampling_map(tensor, Quantifier::MeanSoftmax, |i, column, mean| {
        mean_distribution(tensor, i, k, column, mean);
        let best = argmax(mean);
        (best, -mean[best])
    })
}

fn variation_ratio_impl(tensor: &SampleTensor, k: usize) -> Assessments {
    let classes = tensor.classes().unwrap_or(1);
    sampling_map(tensor, Quantifier::VariationRatio, |i, _, _| {
        let mut votes = vec![0usize; classes];
        for t in 0..k {
            votes[argmax(tensor.row(i, t))] += 1;
        }
        let mode = argmax(&votes);
        (mode, (k - votes[mode]) as f64 / k as f64)
    })
}

fn predictive_entropy_impl(tensor: &SampleTensor, k: usize) -> Assessments {
    sampling_map(tensor, Quantifier::PredictiveEntropy, |i, column, mean| {
        mean_distribution(tensor, i, k, column, mean);
        (argmax(mean), entropy(mean.iter().copied()))
    })
}

fn mutual_information_impl(tensor: &SampleTensor, k: usize) -> Assessments {
    sampling_map(tensor, Quantifier::MutualInformation, |i, column, mean| {
        mean_distribution(tensor, i, k, column, mean);
        let predictive = entropy(mean.iter().copied());
        column.clear();
        column.extend((0..k).map(|t| row_entropy(tensor.row(i, t))));
        let expected = ordered_mean(column);
        (argmax(mean), (predictive - expected).max(0.0))
    })
}

fn predictive_variance_impl(tensor: &SampleTensor, k: usize) -> Assessments {
    let items = (0..tensor.inputs())
        .into_par_iter()
        .map_init(Vec::new, |scratch, i| {
            let samples = &tensor.input(i)[..k];
            let mean = prefix_mean(samples, scratch);
            scratch.clear();
            scratch.extend(samples.iter().map(|&v| (v as f64 - mean).powi(2)));
            let variance = ordered_sum(scratch) / (k - 1) as f64;
            Assessment {
                predicted: Prediction::Value(mean),
                uncertainty: variance,
            }
        })
        .collect();
    Assessments {
        quantifier: Quantifier::PredictiveVariance,
        items,
    }
}
