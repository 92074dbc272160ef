//! Uncertainty-based supervision of DNN predictions.
//!
//! A [`SampleTensor`] holds softmax rows (or regression outputs) for `N`
//! inputs and `T` stochastic samples. A [`Quantifier`] turns each input into
//! a scalar uncertainty; a [`SupervisorThreshold`] calibrated on nominal
//! validation data accepts inputs strictly below it; [`evaluate`] scores the
//! resulting supervised system.
//!
//! ```
//! use uqsup_core::{calibrate_threshold, quantify, supervise, Quantifier, QuantifierSpec, SampleTensor};
//!
//! let tensor = SampleTensor::classifier(2, 1, 2, vec![0.9, 0.1, 0.55, 0.45]).unwrap();
//! let assessed = quantify(&tensor, QuantifierSpec::new(Quantifier::MaxSoftmax)).unwrap();
//! let threshold = calibrate_threshold(&[-0.95, -0.9, -0.85, -0.6], 0.25, Quantifier::MaxSoftmax).unwrap();
//! let decisions = supervise(&assessed, &threshold).unwrap();
//! assert!(decisions[0].accepted);
//! assert!(!decisions[1].accepted);
//! ```

pub mod analysis;
pub mod error;
pub mod fsutil;
pub mod metrics;
pub mod pipeline;
pub mod quantifiers;
pub mod supervisor;
pub mod synthgen;
pub mod tensor_io;

pub use analysis::{
    dropout_rate_summary, fractional_ranks, rank_table, sample_size_curve, sensitivity_maps, AnalysisGrid,
    CurvePoint, DropoutRecord, DropoutSummary, RankEntry, RankTable, SensitivityMaps,
};
pub use error::{Error, Result};
pub use metrics::{
    auroc, average_precision, binary_metrics, evaluate, s_score, BinaryMetrics, EvaluationOptions,
    EvaluationReport, Objective, ObjectiveBounds,
};
pub use pipeline::{calibrate_from, evaluate_configuration, CalibrationSettings, Dump};
pub use quantifiers::{quantify, Assessment, Assessments, Prediction, Quantifier, QuantifierSpec};
pub use supervisor::{
    calibrate_threshold, calibrate_threshold_with, supervise, BenignDefinition, CalibrationRule,
    SupervisionDecision, SupervisorThreshold,
};
pub use synthgen::{generate, GeneratorConfig, SyntheticDump};
pub use tensor_io::{
    read_labels, read_manifest, read_tensor, write_labels, write_manifest, write_tensor, Labels, ReadOptions,
    RunManifest, SampleTensor, TensorKind,
};
