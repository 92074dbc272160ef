//! Calibrate on a nominal validation dump, then supervise and evaluate a
//! test dump. This is the single evaluation path used by the CLI and by the
//! sample-size analysis, so both produce identical numbers.

use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvaluationOptions, EvaluationReport};
use crate::quantifiers::{quantify, Assessments, QuantifierSpec};
use crate::supervisor::{
    benign_uncertainties, calibrate_threshold_with, label_malicious, BenignDefinition, CalibrationRule,
    SupervisorThreshold,
};
use crate::tensor_io::{Labels, SampleTensor};

/// A tensor with its ground truth.
#[derive(Debug, Clone, Copy)]
pub struct Dump<'a> {
    pub tensor: &'a SampleTensor,
    pub labels: &'a Labels,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CalibrationSettings {
    pub rule: CalibrationRule,
    pub benign_definition: BenignDefinition,
    /// Regression only.
    pub imprecision: Option<f64>,
}

/// Calibrates a threshold from validation assessments. Labels may be
/// omitted only when every nominal input counts as benign.
pub fn calibrate_from(
    validation: &Assessments,
    labels: Option<&Labels>,
    epsilon: f64,
    settings: &CalibrationSettings,
) -> Result<SupervisorThreshold> {
    let malicious = match (settings.benign_definition, labels) {
        (BenignDefinition::CorrectOnly, Some(labels)) => label_malicious(validation, labels, settings.imprecision)?,
        (BenignDefinition::CorrectOnly, None) => return Err(Error::MissingLabels),
        (BenignDefinition::AllNominal, _) => vec![false; validation.len()],
    };
    let benign = benign_uncertainties(validation, &malicious, settings.benign_definition);
    let mut threshold = calibrate_threshold_with(&benign, epsilon, validation.quantifier, settings.rule)?;
    threshold.benign_definition = settings.benign_definition;
    Ok(threshold)
}

/// Full pass for one (quantifier, sample prefix, epsilon) configuration.
pub fn evaluate_configuration(
    validation: Dump<'_>,
    test: Dump<'_>,
    spec: QuantifierSpec,
    epsilon: f64,
    settings: &CalibrationSettings,
    options: &EvaluationOptions,
) -> Result<(SupervisorThreshold, EvaluationReport)> {
    validation.labels.check_against(validation.tensor)?;
    test.labels.check_against(test.tensor)?;
    let val = quantify(validation.tensor, spec)?;
    let threshold = calibrate_from(&val, Some(validation.labels), epsilon, settings)?;
    let assessed = quantify(test.tensor, spec)?;
    let report = evaluate(&assessed, test.labels, &threshold, options)?;
    Ok((threshold, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantifiers::Quantifier;

    #[test]
    fn correct_only_calibration_ignores_misclassified_inputs() {
        // SM uncertainties -0.9, -0.8, -0.6, -0.55; the last input is wrong
        let t = SampleTensor::classifier(4, 1, 2, vec![0.9, 0.1, 0.8, 0.2, 0.6, 0.4, 0.55, 0.45]).unwrap();
        let labels = Labels::Classes(vec![0, 0, 0, 1]);
        let a = quantify(&t, QuantifierSpec::new(Quantifier::MaxSoftmax)).unwrap();
        let th = calibrate_from(&a, Some(&labels), 0.3, &CalibrationSettings::default()).unwrap();
        assert_eq!(th.calibration_size, 3);
        assert!((th.realized_fpr - 1.0 / 3.0).abs() < 1e-15);
        assert!((th.t + 0.6).abs() < 1e-6);

        let all = CalibrationSettings {
            benign_definition: BenignDefinition::AllNominal,
            ..Default::default()
        };
        let th = calibrate_from(&a, None, 0.3, &all).unwrap();
        assert_eq!(th.calibration_size, 4);
        assert!(matches!(
            calibrate_from(&a, None, 0.3, &CalibrationSettings::default()),
            Err(Error::MissingLabels)
        ));
        assert_eq!(th.benign_definition, BenignDefinition::AllNominal);
    }
}
