use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use uqsup_core::analysis::{
    dropout_rate_summary, long_format_csv, rank_table, sample_size_curve, sensitivity_maps, AnalysisGrid,
    DropoutRecord, PlotRow, RankEntry,
};
use uqsup_core::fsutil::write_atomic;
use uqsup_core::metrics::{
    evaluate, unsupervised_objective, EvaluationOptions, EvaluationReport, Objective, ObjectiveBounds,
};
use uqsup_core::pipeline::{calibrate_from, CalibrationSettings, Dump};
use uqsup_core::quantifiers::{mean_variance, quantify, Assessments, Prediction, Quantifier, QuantifierSpec};
use uqsup_core::supervisor::{supervise, CalibrationRule, SupervisorThreshold};
use uqsup_core::synthgen::{generate, GeneratorConfig};
use uqsup_core::tensor_io::{
    manifest_path_for, read_labels, read_manifest, read_tensor, Distribution, Labels, ReadOptions, RunManifest,
    SampleTensor,
};

use crate::args::*;
use crate::error::CliError;
use crate::table::Table;

/// Files produced by a command, written only after everything succeeded.
#[derive(Default)]
pub struct Outputs(Vec<(PathBuf, Vec<u8>)>);

impl Outputs {
    fn add(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.0.push((path.into(), bytes.into()));
    }

    pub fn commit(self) -> Result<(), CliError> {
        for (path, bytes) in self.0 {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)
                    .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", parent.display())))?;
            }
            write_atomic(&path, &bytes).map_err(|e| CliError::Internal(e.to_string()))?;
        }
        Ok(())
    }
}

pub fn run(command: Command) -> Result<Outputs, CliError> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Quantify(a) => quantify_cmd(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Supervise(a) => supervise_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Rank(a) => rank(a),
        Command::SampleSize(a) => sample_size(a),
        Command::Sensitivity(a) => sensitivity(a),
        Command::DropoutSummary(a) => dropout_summary(a),
    }
}

/// `dir/name.uqt` -> `dir/name<suffix>`.
fn sidecar(tensor: &Path, suffix: &str) -> PathBuf {
    let stem = tensor.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    tensor.with_file_name(format!("{stem}{suffix}"))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_tensor(path: &Path, renormalize: bool) -> Result<SampleTensor, CliError> {
    Ok(read_tensor(path, ReadOptions { renormalize })?)
}

fn load_labels(explicit: Option<&Path>, tensor_path: &Path, tensor: &SampleTensor) -> Result<Labels, CliError> {
    let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| sidecar(tensor_path, ".labels.csv"));
    let labels = read_labels(&path, tensor.kind(), tensor.classes())?;
    labels.check_against(tensor)?;
    Ok(labels)
}

/// Labels are optional when every nominal input counts as benign.
fn calibration_labels(
    explicit: Option<&Path>,
    tensor_path: &Path,
    tensor: &SampleTensor,
    settings: &CalibrationSettings,
) -> Result<Option<Labels>, CliError> {
    let default = sidecar(tensor_path, ".labels.csv");
    if explicit.is_none() && settings.benign_definition.to_string() == "all-nominal" && !default.exists() {
        return Ok(None);
    }
    load_labels(explicit, tensor_path, tensor).map(Some)
}

fn assess(tensor: &SampleTensor, path: &Path, q: Quantifier, prefix: Option<usize>) -> Result<Assessments, CliError> {
    if q == Quantifier::MeanVariance {
        let variances = load_tensor(&sidecar(path, ".variances.uqt"), false)?;
        return Ok(mean_variance(tensor, &variances, prefix)?);
    }
    Ok(quantify(tensor, QuantifierSpec { quantifier: q, prefix })?)
}

fn settings(c: &CalibrationOptions) -> CalibrationSettings {
    CalibrationSettings {
        rule: if c.closest {
            CalibrationRule::Closest
        } else {
            CalibrationRule::MinimalAbove
        },
        benign_definition: c.benign_definition,
        imprecision: c.imprecision,
    }
}

fn to_json(value: &impl Serialize) -> Result<Vec<u8>, CliError> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn synth(a: SynthArgs) -> Result<Outputs, CliError> {
    let config = GeneratorConfig {
        seed: a.seed,
        inputs: a.inputs,
        samples: a.samples,
        classes: a.classes,
        noise_scale: a.noise_scale,
        mislabel_link: a.mislabel_link,
    };
    let dump = generate(&config)?;
    let extra = [
        ("generator", json!("synthgen")),
        ("seed", json!(a.seed)),
        ("samples", json!(a.samples)),
        ("noise-scale", json!(a.noise_scale)),
        ("mislabel-link", json!(a.mislabel_link)),
    ];
    let manifest = RunManifest {
        dataset_tag: a.dataset_tag,
        distribution: a.distribution,
        split: a.split,
        epoch: a.epoch,
        dropout_rate: a.dropout_rate,
        technique_tag: a.technique_tag,
        extra: extra.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    };
    manifest.validate()?;
    let mut out = Outputs::default();
    out.add(&a.out, dump.tensor.encode());
    out.add(sidecar(&a.out, ".labels.csv"), dump.labels.to_csv());
    out.add(manifest_path_for(&a.out), manifest.to_json());
    Ok(out)
}

fn quantify_cmd(a: QuantifyArgs) -> Result<Outputs, CliError> {
    let tensor = load_tensor(&a.tensor, a.tensor_options.renormalize)?;
    let name = stem(&a.tensor);
    let mut out = Outputs::default();
    for &q in &a.quantifier {
        let assessed = if q == Quantifier::MeanVariance {
            let path = a.variances.clone().unwrap_or_else(|| sidecar(&a.tensor, ".variances.uqt"));
            mean_variance(&tensor, &load_tensor(&path, false)?, a.tensor_options.samples)?
        } else {
            assess(&tensor, &a.tensor, q, a.tensor_options.samples)?
        };
        let file = format!("{name}.{}.csv", q.code().to_ascii_lowercase());
        out.add(a.out_dir.join(file), assessed.to_csv());
    }
    Ok(out)
}

fn calibrate(a: CalibrateArgs) -> Result<Outputs, CliError> {
    let tensor = load_tensor(&a.tensor, a.tensor_options.renormalize)?;
    let settings = settings(&a.calibration);
    let labels = calibration_labels(a.labels.as_deref(), &a.tensor, &tensor, &settings)?;
    let assessed = assess(&tensor, &a.tensor, a.quantifier, a.tensor_options.samples)?;
    let threshold = calibrate_from(&assessed, labels.as_ref(), a.epsilon, &settings)?;
    let mut out = Outputs::default();
    out.add(&a.out, to_json(&threshold)?);
    Ok(out)
}

fn supervise_cmd(a: SuperviseArgs) -> Result<Outputs, CliError> {
    let text = std::fs::read_to_string(&a.threshold)
        .map_err(|e| CliError::invalid(format!("cannot read {}: {e}", a.threshold.display())))?;
    let threshold: SupervisorThreshold = serde_json::from_str(&text)
        .map_err(|e| CliError::invalid(format!("{}: {e}", a.threshold.display())))?;
    let tensor = load_tensor(&a.tensor, a.tensor_options.renormalize)?;
    let assessed = assess(&tensor, &a.tensor, threshold.quantifier, a.tensor_options.samples)?;
    let decisions = supervise(&assessed, &threshold)?;
    let mut csv = String::from("index,predicted,uncertainty,accepted\n");
    for (i, (item, d)) in assessed.items.iter().zip(&decisions).enumerate() {
        writeln!(csv, "{i},{},{},{}", item.predicted, item.uncertainty, d.accepted).unwrap();
    }
    let mut out = Outputs::default();
    out.add(&a.out, csv);
    Ok(out)
}

/// Where a test dump came from; missing manifests fall back to the file name.
#[derive(Debug, Clone, Serialize)]
struct Origin {
    subject: String,
    technique: String,
    distribution: Distribution,
    epoch: Option<u32>,
    dropout_rate: Option<f64>,
    source: String,
}

fn origin(path: &Path) -> Result<Origin, CliError> {
    let manifest_path = manifest_path_for(path);
    let source = path.display().to_string();
    if !manifest_path.exists() {
        log::warn!("{} has no manifest, using defaults", path.display());
        return Ok(Origin {
            subject: stem(path),
            technique: "unknown".into(),
            distribution: Distribution::Nominal,
            epoch: None,
            dropout_rate: None,
            source,
        });
    }
    let m = read_manifest(&manifest_path)?;
    Ok(Origin {
        subject: m.dataset_tag,
        technique: m.technique_tag,
        distribution: m.distribution,
        epoch: m.epoch,
        dropout_rate: m.dropout_rate,
        source,
    })
}

#[derive(Debug, Serialize)]
struct EvaluationRecord {
    #[serde(flatten)]
    origin: Origin,
    quantifier: Quantifier,
    samples: usize,
    epsilon: f64,
    threshold: SupervisorThreshold,
    report: EvaluationReport,
}

fn squared_errors(assessed: &Assessments, labels: &Labels) -> Vec<f64> {
    match labels {
        Labels::Targets(t) => assessed
            .items
            .iter()
            .zip(t)
            .filter_map(|(a, y)| match a.predicted {
                Prediction::Value(v) => Some((v - y).powi(2)),
                Prediction::Class(_) => None,
            })
            .collect(),
        Labels::Classes(_) => Vec::new(),
    }
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<Outputs, CliError> {
    let renormalize = a.tensor_options.renormalize;
    let prefix = a.tensor_options.samples;
    let settings = settings(&a.calibration);
    let validation = load_tensor(&a.validation, renormalize)?;
    let validation_labels = calibration_labels(a.validation_labels.as_deref(), &a.validation, &validation, &settings)?;

    let mut tests = Vec::new();
    for path in &a.test {
        let tensor = load_tensor(path, renormalize)?;
        let labels = load_labels(None, path, &tensor)?;
        tests.push((path.clone(), origin(path)?, tensor, labels));
    }
    if a.objective == Objective::Mse && a.calibration.imprecision.is_none() {
        return Err(uqsup_core::Error::MissingImprecision.into());
    }

    // Each quantifier is computed once per dump and shared by every epsilon.
    let mut records = Vec::new();
    for &q in &a.quantifier {
        let val = assess(&validation, &a.validation, q, prefix)?;
        let bounds = match (&a.bounds, a.objective) {
            (Some(b), Objective::Accuracy) => ObjectiveBounds::new(b[0], b[1], uqsup_core::metrics::Direction::HigherBetter)?,
            (Some(b), Objective::Mse) => ObjectiveBounds::new(b[0], b[1], uqsup_core::metrics::Direction::LowerBetter)?,
            (None, Objective::Accuracy) => ObjectiveBounds::accuracy(),
            (None, Objective::Mse) => {
                let labels = validation_labels.as_ref().ok_or(uqsup_core::Error::MissingLabels)?;
                ObjectiveBounds::estimate_lower_better(&squared_errors(&val, labels))?
            }
        };
        let options = EvaluationOptions {
            objective: a.objective,
            bounds,
            betas: a.beta.clone(),
            imprecision: a.calibration.imprecision,
        };
        let thresholds: Vec<SupervisorThreshold> = a
            .epsilon
            .iter()
            .map(|&eps| calibrate_from(&val, validation_labels.as_ref(), eps, &settings))
            .collect::<Result<_, _>>()?;
        for (path, origin, tensor, labels) in &tests {
            let assessed = assess(tensor, path, q, prefix)?;
            unsupervised_objective(&assessed, labels, a.objective)?;
            let cells: Vec<EvaluationRecord> = thresholds
                .par_iter()
                .map(|th| {
                    Ok(EvaluationRecord {
                        origin: origin.clone(),
                        quantifier: q,
                        samples: prefix.unwrap_or(tensor.samples()),
                        epsilon: th.epsilon,
                        threshold: th.clone(),
                        report: evaluate(&assessed, labels, th, &options)?,
                    })
                })
                .collect::<Result<_, uqsup_core::Error>>()?;
            records.extend(cells);
        }
    }
    records.sort_by(|x, y| {
        let key = |r: &EvaluationRecord| {
            (
                r.origin.subject.clone(),
                r.origin.technique.clone(),
                r.quantifier,
                r.origin.distribution,
                r.origin.epoch,
                r.origin.source.clone(),
            )
        };
        key(x).cmp(&key(y)).then(x.epsilon.total_cmp(&y.epsilon))
    });

    let mut out = Outputs::default();
    out.add(&a.out_json, to_json(&records)?);
    out.add(&a.out_csv, evaluation_csv(&records, &a.beta));
    Ok(out)
}

fn evaluation_csv(records: &[EvaluationRecord], betas: &[f64]) -> String {
    let mut csv = String::from(
        "subject,technique,distribution,epoch,dropout_rate,samples,quantifier,epsilon,objective,unsupervised,supervised,delta",
    );
    for b in betas {
        write!(csv, ",s{b}").unwrap();
    }
    csv.push_str(
        ",avgpr,auroc,point_biserial,threshold,realized_fpr,tpr,fpr,tnr,fnr,f1,binary_acc,accepted,rejected,benign,malicious,source\n",
    );
    for r in records {
        let (o, rep) = (&r.origin, &r.report);
        write!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            o.subject,
            o.technique,
            o.distribution,
            o.epoch.map(|e| e.to_string()).unwrap_or_default(),
            opt(o.dropout_rate),
            r.samples,
            r.quantifier,
            r.epsilon,
            rep.objective,
            rep.unsupervised_objective,
            opt(rep.supervised_objective),
            rep.acceptance_rate
        )
        .unwrap();
        for b in betas {
            write!(csv, ",{}", opt(rep.s_score(*b))).unwrap();
        }
        let tf = &rep.threshold_free;
        let bin = &rep.binary;
        let c = &rep.counts;
        writeln!(
            csv,
            ",{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            opt(tf.avgpr),
            opt(tf.auroc),
            opt(tf.point_biserial),
            r.threshold.t,
            r.threshold.realized_fpr,
            opt(bin.tpr),
            opt(bin.fpr),
            opt(bin.tnr),
            opt(bin.fnr),
            bin.f1,
            bin.acc,
            c.accepted,
            c.rejected,
            c.benign,
            c.malicious,
            o.source
        )
        .unwrap();
    }
    csv
}

fn rank(a: RankArgs) -> Result<Outputs, CliError> {
    let table = Table::read_all(&a.table.input)?.filter(&a.table.filters)?;
    let groups: Vec<usize> = a.group_by.iter().map(|c| table.column(c)).collect::<Result<_, _>>()?;
    let competitors: Vec<usize> = a.competitor.iter().map(|c| table.column(c)).collect::<Result<_, _>>()?;
    let metric = table.column(&a.metric)?;
    let entries: Vec<RankEntry> = table
        .rows
        .iter()
        .map(|row| {
            Ok(RankEntry {
                group: table.key(row, &groups),
                competitor: table.key(row, &competitors),
                score: table.number(row, metric)?,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let result = rank_table(&entries)?;
    let mut ranks = result.ranks.clone();
    ranks.sort_by(|x, y| x.mean_rank.total_cmp(&y.mean_rank).then_with(|| x.competitor.cmp(&y.competitor)));

    let body = match a.format {
        Format::Json => to_json(&json!({ "groups": result.groups, "metric": a.metric, "ranks": ranks }))?,
        Format::Csv => {
            let mut csv = format!("{},mean_rank,groups\n", a.competitor.join("/"));
            for r in &ranks {
                writeln!(csv, "{},{},{}", r.competitor, r.mean_rank, result.groups).unwrap();
            }
            csv.into_bytes()
        }
    };
    let mut out = Outputs::default();
    out.add(&a.out, body);
    Ok(out)
}

fn sample_size(a: SampleSizeArgs) -> Result<Outputs, CliError> {
    let validation = load_tensor(&a.validation, a.renormalize)?;
    let test = load_tensor(&a.test, a.renormalize)?;
    let validation_labels = load_labels(a.validation_labels.as_deref(), &a.validation, &validation)?;
    let test_labels = load_labels(a.test_labels.as_deref(), &a.test, &test)?;
    let k_max = a.k_max.unwrap_or(validation.samples().min(test.samples()));
    let ks: Vec<usize> = (a.k_min..=k_max).collect();
    let options = EvaluationOptions {
        imprecision: a.calibration.imprecision,
        ..Default::default()
    };
    let curve = sample_size_curve(
        Dump {
            tensor: &validation,
            labels: &validation_labels,
        },
        Dump {
            tensor: &test,
            labels: &test_labels,
        },
        a.quantifier,
        a.epsilon,
        &ks,
        &settings(&a.calibration),
        &options,
    )?;

    let body = match a.format {
        Format::Json => to_json(&json!({ "quantifier": a.quantifier, "epsilon": a.epsilon, "points": curve }))?,
        Format::Csv => {
            let mut csv = String::from("k,supervised,delta,threshold\n");
            for p in &curve {
                writeln!(csv, "{},{},{},{}", p.k, opt(p.supervised_objective), p.acceptance_rate, p.threshold).unwrap();
            }
            csv.into_bytes()
        }
    };
    let mut out = Outputs::default();
    out.add(&a.out, body);
    if let Some(plot) = &a.plot {
        let rows: Vec<PlotRow> = curve
            .iter()
            .flat_map(|p| {
                let sup = p.supervised_objective.map(|v| PlotRow {
                    x: p.k as f64,
                    y: 0.0,
                    value: v,
                    series: format!("{} supervised", a.quantifier),
                });
                let delta = PlotRow {
                    x: p.k as f64,
                    y: 0.0,
                    value: p.acceptance_rate,
                    series: format!("{} delta", a.quantifier),
                };
                sup.into_iter().chain([delta])
            })
            .collect();
        out.add(plot, long_format_csv(&rows));
    }
    Ok(out)
}

fn matrix_csv(corner: &str, rows: &[f64], cols: &[f64], cells: &[Vec<f64>]) -> String {
    let mut csv = corner.to_string();
    for c in cols {
        write!(csv, ",{c}").unwrap();
    }
    csv.push('\n');
    for (r, line) in rows.iter().zip(cells) {
        write!(csv, "{r}").unwrap();
        for v in line {
            write!(csv, ",{v}").unwrap();
        }
        csv.push('\n');
    }
    csv
}

fn sensitivity(a: SensitivityArgs) -> Result<Outputs, CliError> {
    let table = Table::read_all(&a.table.input)?.filter(&a.table.filters)?;
    let (r, c, v) = (table.column(&a.row)?, table.column(&a.col)?, table.column(&a.value)?);
    let mut cells = BTreeMap::new();
    for row in &table.rows {
        let key = (table.number(row, r)?.to_bits(), table.number(row, c)?.to_bits());
        if cells.insert(key, table.number(row, v)?).is_some() {
            return Err(CliError::invalid(format!(
                "more than one value for {}={}, {}={}; narrow the table with --where",
                a.row, row[r], a.col, row[c]
            )));
        }
    }
    let points: Vec<(f64, f64, f64)> =
        cells.iter().map(|(&(r, c), &v)| (f64::from_bits(r), f64::from_bits(c), v)).collect();
    let grid = AnalysisGrid::from_long(&points)?;
    let maps = sensitivity_maps(&grid, a.window)?;

    let corner = format!("{}/{}", a.row, a.col);
    let mut plot = Vec::new();
    for (series, map) in [("mean", &maps.mean), ("std", &maps.std)] {
        for (ri, line) in map.iter().enumerate() {
            for (ci, &value) in line.iter().enumerate() {
                plot.push(PlotRow {
                    x: maps.col_keys[ci],
                    y: maps.row_keys[ri],
                    value,
                    series: series.into(),
                });
            }
        }
    }
    let summary = json!({
        "window": maps.window,
        "rows": grid.rows(),
        "cols": grid.cols(),
        "interior-rows": maps.row_keys.len(),
        "interior-cols": maps.col_keys.len(),
        "s-c": maps.sc,
    });
    let mut out = Outputs::default();
    out.add(a.out_dir.join("mean.csv"), matrix_csv(&corner, &maps.row_keys, &maps.col_keys, &maps.mean));
    out.add(a.out_dir.join("std.csv"), matrix_csv(&corner, &maps.row_keys, &maps.col_keys, &maps.std));
    out.add(a.out_dir.join("summary.json"), to_json(&summary)?);
    out.add(a.out_dir.join("plot.csv"), long_format_csv(&plot));
    Ok(out)
}

fn dropout_summary(a: DropoutSummaryArgs) -> Result<Outputs, CliError> {
    let table = Table::read_all(&a.table.input)?.filter(&a.table.filters)?;
    if let Ok(eps) = table.column("epsilon") {
        let mut seen: Vec<&str> = table.rows.iter().map(|r| r[eps].as_str()).collect();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() > 1 {
            return Err(CliError::invalid(
                "the table repeats each run for several epsilons; select one with --where epsilon=VALUE",
            ));
        }
    }
    let (rate, q, metric) = (table.column(&a.rate)?, table.column("quantifier")?, table.column(&a.metric)?);
    let records: Vec<DropoutRecord> = table
        .rows
        .iter()
        .map(|row| {
            Ok(DropoutRecord {
                rate: table.number(row, rate)?,
                quantifier: row[q].clone(),
                avgpr: table.number(row, metric)?,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let summary = dropout_rate_summary(&records)?;

    let body = match a.format {
        Format::Json => to_json(&summary)?,
        Format::Csv => {
            let mut csv = format!("rate,quantifier,mean_{0},std_{0},count\n", a.metric);
            for s in &summary {
                writeln!(csv, "{},{},{},{},{}", s.rate, s.quantifier, s.mean_avgpr, s.std_avgpr, s.count).unwrap();
            }
            csv.into_bytes()
        }
    };
    let mut out = Outputs::default();
    out.add(&a.out, body);
    if let Some(plot) = &a.plot {
        let rows: Vec<PlotRow> = summary
            .iter()
            .map(|s| PlotRow {
                x: s.rate,
                y: 0.0,
                value: s.mean_avgpr,
                series: s.quantifier.clone(),
            })
            .collect();
        out.add(plot, long_format_csv(&rows));
    }
    Ok(out)
}
