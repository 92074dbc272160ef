//! Threshold calibration and the accept/reject rule.
//!
//! Inputs are *malicious* (positive, should be rejected) when the model is
//! wrong on them and *benign* otherwise. The threshold `t` is calibrated on
//! benign validation uncertainties so that the false positive rate
//! `FPR(t) = |{u >= t}| / n` is the smallest achievable value that is still
//! at least `epsilon`. An input is accepted iff `u < t`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantifiers::{Assessments, Prediction, Quantifier};
use crate::tensor_io::Labels;

/// Which nominal validation inputs count as benign during calibration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenignDefinition {
    /// Only inputs the model predicts correctly.
    #[default]
    CorrectOnly,
    /// Every nominal input, for dumps without usable labels.
    AllNominal,
}

impl FromStr for BenignDefinition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "correct-only" => Ok(BenignDefinition::CorrectOnly),
            "all-nominal" => Ok(BenignDefinition::AllNominal),
            other => Err(format!("unknown benign definition `{other}`")),
        }
    }
}

impl fmt::Display for BenignDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenignDefinition::CorrectOnly => "correct-only",
            BenignDefinition::AllNominal => "all-nominal",
        })
    }
}

/// How to pick among candidate thresholds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationRule {
    /// Lowest realized FPR that is still >= epsilon.
    #[default]
    MinimalAbove,
    /// Realized FPR closest to epsilon; ties prefer the one >= epsilon.
    Closest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CalibrationWarning {
    /// Fewer calibration inputs than 1/epsilon.
    SmallCalibrationSet { size: usize, recommended: usize },
    /// Tied uncertainties forced the realized FPR more than one calibration
    /// input above epsilon.
    CoarseGranularity { target: f64, realized: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorThreshold {
    /// Acceptance threshold; `+inf` accepts everything.
    #[serde(with = "float_or_inf")]
    pub t: f64,
    pub epsilon: f64,
    pub realized_fpr: f64,
    pub quantifier: Quantifier,
    pub calibration_size: usize,
    pub benign_definition: BenignDefinition,
    #[serde(default)]
    pub rule: CalibrationRule,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<CalibrationWarning>,
}

impl SupervisorThreshold {
    /// A threshold that accepts every input.
    pub fn accept_all(quantifier: Quantifier) -> Self {
        SupervisorThreshold {
            t: f64::INFINITY,
            epsilon: 0.0,
            realized_fpr: 0.0,
            quantifier,
            calibration_size: 0,
            benign_definition: BenignDefinition::default(),
            rule: CalibrationRule::default(),
            warnings: Vec::new(),
        }
    }

    pub fn accepts(&self, uncertainty: f64) -> bool {
        uncertainty < self.t
    }
}

/// JSON has no infinity; `+inf` is written as the string "inf".
mod float_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" || s == "+inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad threshold `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisionDecision {
    pub accepted: bool,
    pub uncertainty: f64,
}

/// Marks each input as malicious (`true`) or benign.
///
/// Classifiers: malicious iff the predicted class differs from the label.
/// Regression: malicious iff `|predicted - target| > imprecision`.
pub fn label_malicious(assessments: &Assessments, labels: &Labels, imprecision: Option<f64>) -> Result<Vec<bool>> {
    if labels.len() != assessments.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: assessments.len(),
            found: labels.len(),
        });
    }
    match labels {
        Labels::Classes(truth) => assessments
            .items
            .iter()
            .zip(truth)
            .map(|(a, &label)| match a.predicted {
                Prediction::Class(c) => Ok(c != label),
                Prediction::Value(_) => Err(Error::LabelKindMismatch),
            })
            .collect(),
        Labels::Targets(truth) => {
            let bound = imprecision.ok_or(Error::MissingImprecision)?;
            assessments
                .items
                .iter()
                .zip(truth)
                .map(|(a, &target)| match a.predicted {
                    Prediction::Value(v) => Ok((v - target).abs() > bound),
                    Prediction::Class(_) => Err(Error::LabelKindMismatch),
                })
                .collect()
        }
    }
}

/// Uncertainties of the inputs that count as benign under `definition`.
pub fn benign_uncertainties(assessments: &Assessments, malicious: &[bool], definition: BenignDefinition) -> Vec<f64> {
    match definition {
        BenignDefinition::AllNominal => assessments.uncertainties(),
        BenignDefinition::CorrectOnly => assessments
            .items
            .iter()
            .zip(malicious)
            .filter(|(_, &m)| !m)
            .map(|(a, _)| a.uncertainty)
            .collect(),
    }
}

/// Calibrates with the default "lowest FPR still >= epsilon" rule.
pub fn calibrate_threshold(benign: &[f64], epsilon: f64, quantifier: Quantifier) -> Result<SupervisorThreshold> {
    calibrate_threshold_with(benign, epsilon, quantifier, CalibrationRule::MinimalAbove)
}

pub fn calibrate_threshold_with(
    benign: &[f64],
    epsilon: f64,
    quantifier: Quantifier,
    rule: CalibrationRule,
) -> Result<SupervisorThreshold> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::EpsilonOutOfRange(epsilon));
    }
    if benign.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if let Some(bad) = benign.iter().find(|u| !u.is_finite()) {
        return Err(Error::NonFinite {
            index: benign.iter().position(|u| u == bad).unwrap_or(0),
        });
    }
    let n = benign.len();
    let mut sorted = benign.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);

    // Candidates in ascending threshold order, paired with the number of
    // values >= the candidate. `+inf` (count 0) closes the list.
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    let mut i = 0;
    while i < n {
        candidates.push((sorted[i], n - i));
        let v = sorted[i];
        while i < n && sorted[i] == v {
            i += 1;
        }
    }
    candidates.push((f64::INFINITY, 0));

    let fpr = |count: usize| count as f64 / n as f64;
    // FPR is non-increasing along the list, so the last feasible candidate
    // has the smallest FPR >= epsilon. The minimum value always has FPR 1.
    let above = candidates
        .iter()
        .rposition(|&(_, c)| fpr(c) >= epsilon)
        .expect("minimum candidate rejects everything");
    let chosen = match rule {
        CalibrationRule::MinimalAbove => above,
        CalibrationRule::Closest => {
            let below = above + 1;
            if below < candidates.len() && epsilon - fpr(candidates[below].1) < fpr(candidates[above].1) - epsilon {
                below
            } else {
                above
            }
        }
    };
    let (t, count) = candidates[chosen];
    let realized = fpr(count);

    let mut warnings = Vec::new();
    let recommended = (1.0 / epsilon).ceil() as usize;
    if n < recommended {
        warnings.push(CalibrationWarning::SmallCalibrationSet { size: n, recommended });
    }
    if realized - epsilon >= 1.0 / n as f64 {
        warnings.push(CalibrationWarning::CoarseGranularity {
            target: epsilon,
            realized,
        });
    }
    for w in &warnings {
        log::warn!("{quantifier} calibration at epsilon {epsilon}: {w:?}");
    }

    Ok(SupervisorThreshold {
        t,
        epsilon,
        realized_fpr: realized,
        quantifier,
        calibration_size: n,
        benign_definition: BenignDefinition::default(),
        rule,
        warnings,
    })
}

/// Accepts inputs whose uncertainty is strictly below the threshold.
pub fn supervise(assessments: &Assessments, threshold: &SupervisorThreshold) -> Result<Vec<SupervisionDecision>> {
    if assessments.quantifier != threshold.quantifier {
        return Err(Error::QuantifierMismatch {
            threshold: threshold.quantifier,
            assessments: assessments.quantifier,
        });
    }
    Ok(assessments
        .items
        .iter()
        .map(|a| SupervisionDecision {
            accepted: threshold.accepts(a.uncertainty),
            uncertainty: a.uncertainty,
        })
        .collect())
}

pub fn accepted_count(decisions: &[SupervisionDecision]) -> usize {
    decisions.iter().filter(|d| d.accepted).count()
}
