//! Supervisor metrics: binary rates at a fixed threshold, threshold-free
//! ranking metrics, and the joint model/supervisor metrics (supervised
//! objective, acceptance rate, S-beta score).
//!
//! The positive class is *malicious*: a rejected input is a positive
//! prediction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantifiers::{Assessments, Prediction};
use crate::supervisor::{label_malicious, SupervisionDecision, SupervisorThreshold};
use crate::tensor_io::Labels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Accuracy,
    Mse,
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "accuracy" | "acc" => Ok(Objective::Accuracy),
            "mse" => Ok(Objective::Mse),
            other => Err(format!("unknown objective `{other}`")),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Accuracy => "accuracy",
            Objective::Mse => "mse",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// Normalization range for an objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ObjectiveBounds {
    pub lower: f64,
    pub upper: f64,
    pub direction: Direction,
}

impl ObjectiveBounds {
    pub fn new(lower: f64, upper: f64, direction: Direction) -> Result<Self> {
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::DegenerateBounds { lower, upper });
        }
        Ok(ObjectiveBounds { lower, upper, direction })
    }

    pub fn accuracy() -> Self {
        ObjectiveBounds {
            lower: 0.0,
            upper: 1.0,
            direction: Direction::HigherBetter,
        }
    }

    /// Bounds for a lower-is-better error objective, taken as the 1st and
    /// 99th percentiles (nearest rank) of per-input errors measured on data
    /// independent of the model under test.
    pub fn estimate_lower_better(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut sorted = errors.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        let rank = |p: f64| {
            let r = (p * sorted.len() as f64).ceil() as usize;
            sorted[r.clamp(1, sorted.len()) - 1]
        };
        Self::new(rank(0.01), rank(0.99), Direction::LowerBetter)
    }

    /// Maps an objective value into [0, 1] (1 = best). The flag reports
    /// whether clipping was needed.
    pub fn normalize(&self, value: f64) -> (f64, bool) {
        let raw = match self.direction {
            Direction::HigherBetter => (value - self.lower) / (self.upper - self.lower),
            Direction::LowerBetter => (self.upper - value) / (self.upper - self.lower),
        };
        let clipped = raw.clamp(0.0, 1.0);
        (clipped, clipped != raw)
    }
}

/// Objective over the inputs selected by `keep`; `None` when nothing is kept.
fn objective_over(
    assessments: &Assessments,
    labels: &Labels,
    objective: Objective,
    keep: impl Fn(usize) -> bool,
) -> Result<Option<f64>> {
    if labels.len() != assessments.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: assessments.len(),
            found: labels.len(),
        });
    }
    let mut kept = 0usize;
    let mut total = 0.0f64;
    for (i, a) in assessments.items.iter().enumerate() {
        if !keep(i) {
            continue;
        }
        kept += 1;
        total += match (objective, a.predicted, labels) {
            (Objective::Accuracy, Prediction::Class(c), Labels::Classes(l)) => (c == l[i]) as u8 as f64,
            (Objective::Mse, Prediction::Value(v), Labels::Targets(l)) => (v - l[i]).powi(2),
            _ => return Err(Error::LabelKindMismatch),
        };
    }
    Ok((kept > 0).then(|| total / kept as f64))
}

pub fn unsupervised_objective(assessments: &Assessments, labels: &Labels, objective: Objective) -> Result<f64> {
    objective_over(assessments, labels, objective, |_| true)?.ok_or(Error::EmptyInput)
}

/// Objective restricted to accepted inputs. `None` when nothing was accepted.
pub fn supervised_objective(
    decisions: &[SupervisionDecision],
    assessments: &Assessments,
    labels: &Labels,
    objective: Objective,
) -> Result<Option<f64>> {
    if decisions.len() != assessments.len() {
        return Err(Error::LengthMismatch {
            what: "decisions",
            expected: assessments.len(),
            found: decisions.len(),
        });
    }
    objective_over(assessments, labels, objective, |i| decisions[i].accepted)
}

pub fn acceptance_rate(decisions: &[SupervisionDecision]) -> Result<f64> {
    if decisions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let accepted = decisions.iter().filter(|d| d.accepted).count();
    Ok(accepted as f64 / decisions.len() as f64)
}

/// S-beta from an already-normalized objective in [0, 1].
pub fn s_score_normalized(nobj: f64, delta: f64, beta: f64) -> f64 {
    if nobj == 0.0 || delta == 0.0 {
        return 0.0;
    }
    let b2 = beta * beta;
    (1.0 + b2) * nobj * delta / (b2 * nobj + delta)
}

/// Weighted harmonic mean of the normalized supervised objective and the
/// acceptance rate.
pub fn s_score(supervised: f64, delta: f64, bounds: &ObjectiveBounds, beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidBeta(beta));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::DeltaOutOfRange(delta));
    }
    let bounds = ObjectiveBounds::new(bounds.lower, bounds.upper, bounds.direction)?;
    let (nobj, clipped) = bounds.normalize(supervised);
    if clipped {
        log::warn!("supervised objective {supervised} outside [{}, {}], clipped", bounds.lower, bounds.upper);
    }
    Ok(s_score_normalized(nobj, delta, beta))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Rates with an empty denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub tnr: Option<f64>,
    pub fnr: Option<f64>,
    /// F1 of the rejection class; 0 when precision + recall is 0.
    pub f1: f64,
    pub acc: f64,
    pub confusion: Confusion,
}

pub fn binary_metrics(decisions: &[SupervisionDecision], malicious: &[bool]) -> Result<BinaryMetrics> {
    if decisions.len() != malicious.len() {
        return Err(Error::LengthMismatch {
            what: "malicious labels",
            expected: decisions.len(),
            found: malicious.len(),
        });
    }
    if decisions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut m = Confusion::default();
    for (d, &bad) in decisions.iter().zip(malicious) {
        match (!d.accepted, bad) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, false) => m.tn += 1,
            (false, true) => m.fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    let f1_den = 2 * m.tp + m.fp + m.fn_;
    Ok(BinaryMetrics {
        tpr: ratio(m.tp, m.tp + m.fn_),
        fpr: ratio(m.fp, m.fp + m.tn),
        tnr: ratio(m.tn, m.fp + m.tn),
        fnr: ratio(m.fn_, m.tp + m.fn_),
        f1: if f1_den == 0 { 0.0 } else { 2.0 * m.tp as f64 / f1_den as f64 },
        acc: (m.tp + m.tn) as f64 / decisions.len() as f64,
        confusion: m,
    })
}

fn class_counts(malicious: &[bool], what: &'static str) -> Result<(usize, usize)> {
    let pos = malicious.iter().filter(|&&m| m).count();
    let neg = malicious.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass(what));
    }
    Ok((pos, neg))
}

fn check_aligned(uncertainties: &[f64], malicious: &[bool]) -> Result<()> {
    if uncertainties.len() != malicious.len() {
        return Err(Error::LengthMismatch {
            what: "malicious labels",
            expected: uncertainties.len(),
            found: malicious.len(),
        });
    }
    Ok(())
}

/// Step-wise average precision: `sum_k (R_k - R_{k-1}) * P_k`, sweeping the
/// threshold down through the distinct uncertainty values. Tied values enter
/// as one block.
pub fn average_precision(uncertainties: &[f64], malicious: &[bool]) -> Result<f64> {
    check_aligned(uncertainties, malicious)?;
    let (positives, _) = class_counts(malicious, "average precision")?;
    let mut order: Vec<usize> = (0..uncertainties.len()).collect();
    order.sort_unstable_by(|&a, &b| uncertainties[b].total_cmp(&uncertainties[a]));

    let (mut tp, mut fp, mut prev_tp) = (0usize, 0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let v = uncertainties[order[i]];
        while i < order.len() && uncertainties[order[i]] == v {
            if malicious[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        ap += step_precision(tp, fp, prev_tp, positives);
        prev_tp = tp;
    }
    Ok(ap)
}

/// One term of the average-precision sum: recall gained times precision.
fn step_precision(tp: usize, fp: usize, prev_tp: usize, positives: usize) -> f64 {
    let recall_step = (tp - prev_tp) as f64 / positives as f64;
    recall_step * (tp as f64 / (tp + fp) as f64)
}

/// Area under the ROC curve via the Mann-Whitney rank statistic:
/// `P(u_malicious > u_benign) + P(equal) / 2`.
pub fn auroc(uncertainties: &[f64], malicious: &[bool]) -> Result<f64> {
    check_aligned(uncertainties, malicious)?;
    let (positives, negatives) = class_counts(malicious, "AUROC")?;
    let mut order: Vec<usize> = (0..uncertainties.len()).collect();
    order.sort_unstable_by(|&a, &b| uncertainties[a].total_cmp(&uncertainties[b]));

    // Twice the rank sum of the positives, with average ranks for ties,
    // stays an integer.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let v = uncertainties[order[i]];
        let start = i;
        while i < order.len() && uncertainties[order[i]] == v {
            i += 1;
        }
        // ranks start+1 ..= i, average (start + 1 + i) / 2
        let block_pos = order[start..i].iter().filter(|&&j| malicious[j]).count() as u128;
        twice_rank_sum += block_pos * (start as u128 + 1 + i as u128);
    }
    let p = positives as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2.0 * positives as f64 * negatives as f64))
}

/// Pearson correlation; errors on zero variance in either input.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "second series",
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("first series"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("second series"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Point-biserial correlation between uncertainty and observed error. The
/// error may be dichotomous (0/1) or continuous.
pub fn point_biserial(uncertainties: &[f64], errors: &[f64]) -> Result<f64> {
    pearson(uncertainties, errors).map_err(|e| match e {
        Error::ZeroVariance("first series") => Error::ZeroVariance("uncertainties"),
        Error::ZeroVariance(_) => Error::ZeroVariance("errors"),
        other => other,
    })
}

pub fn point_biserial_binary(uncertainties: &[f64], malicious: &[bool]) -> Result<f64> {
    let errors: Vec<f64> = malicious.iter().map(|&m| m as u8 as f64).collect();
    point_biserial(uncertainties, &errors)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SScore {
    pub beta: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ThresholdFree {
    pub avgpr: Option<f64>,
    pub auroc: Option<f64>,
    pub point_biserial: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub accepted: usize,
    pub rejected: usize,
    pub benign: usize,
    pub malicious: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvaluationReport {
    pub objective: Objective,
    pub unsupervised_objective: f64,
    /// `None` when the supervisor accepted nothing.
    pub supervised_objective: Option<f64>,
    pub acceptance_rate: f64,
    pub s_scores: Vec<SScore>,
    /// The supervised objective fell outside the bounds and was clipped.
    pub objective_clipped: bool,
    pub binary: BinaryMetrics,
    pub threshold_free: ThresholdFree,
    pub counts: Counts,
}

impl EvaluationReport {
    pub fn s_score(&self, beta: f64) -> Option<f64> {
        self.s_scores.iter().find(|s| s.beta == beta).map(|s| s.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationOptions {
    pub objective: Objective,
    pub bounds: ObjectiveBounds,
    pub betas: Vec<f64>,
    /// Required for regression: errors above this bound are malicious.
    pub imprecision: Option<f64>,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        EvaluationOptions {
            objective: Objective::Accuracy,
            bounds: ObjectiveBounds::accuracy(),
            betas: vec![1.0],
            imprecision: None,
        }
    }
}

/// Supervises `assessments` with `threshold` and computes every metric.
pub fn evaluate(
    assessments: &Assessments,
    labels: &Labels,
    threshold: &SupervisorThreshold,
    options: &EvaluationOptions,
) -> Result<EvaluationReport> {
    let decisions = crate::supervisor::supervise(assessments, threshold)?;
    evaluate_decisions(assessments, labels, &decisions, options)
}

pub fn evaluate_decisions(
    assessments: &Assessments,
    labels: &Labels,
    decisions: &[SupervisionDecision],
    options: &EvaluationOptions,
) -> Result<EvaluationReport> {
    for &beta in &options.betas {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidBeta(beta));
        }
    }
    let malicious = label_malicious(assessments, labels, options.imprecision)?;
    let unsupervised = unsupervised_objective(assessments, labels, options.objective)?;
    let supervised = supervised_objective(decisions, assessments, labels, options.objective)?;
    let delta = acceptance_rate(decisions)?;

    let (nobj, clipped) = match supervised {
        Some(v) => options.bounds.normalize(v),
        None => (0.0, false),
    };
    if clipped {
        log::warn!("supervised objective outside the normalization bounds, clipped");
    }
    let s_scores = options
        .betas
        .iter()
        .map(|&beta| SScore {
            beta,
            value: s_score_normalized(nobj, delta, beta),
        })
        .collect();

    let uncertainties = assessments.uncertainties();
    let errors: Vec<f64> = match labels {
        Labels::Classes(_) => malicious.iter().map(|&m| m as u8 as f64).collect(),
        Labels::Targets(t) => assessments
            .items
            .iter()
            .zip(t)
            .map(|(a, &y)| match a.predicted {
                Prediction::Value(v) => (v - y).powi(2),
                Prediction::Class(_) => f64::NAN,
            })
            .collect(),
    };
    let threshold_free = ThresholdFree {
        avgpr: average_precision(&uncertainties, &malicious).ok(),
        auroc: auroc(&uncertainties, &malicious).ok(),
        point_biserial: point_biserial(&uncertainties, &errors).ok(),
    };

    let accepted = decisions.iter().filter(|d| d.accepted).count();
    let n_malicious = malicious.iter().filter(|&&m| m).count();
    Ok(EvaluationReport {
        objective: options.objective,
        unsupervised_objective: unsupervised,
        supervised_objective: supervised,
        acceptance_rate: delta,
        s_scores,
        objective_clipped: clipped,
        binary: binary_metrics(decisions, &malicious)?,
        threshold_free,
        counts: Counts {
            accepted,
            rejected: decisions.len() - accepted,
            benign: malicious.len() - n_malicious,
            malicious: n_malicious,
        },
    })
}
