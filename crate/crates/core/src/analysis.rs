//! Cross-configuration analyses: average rank tables, sample-size curves,
//! windowed sensitivity maps over (epoch, sample-count) grids, and per
//! dropout-rate aggregation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{pearson, EvaluationOptions};
use crate::pipeline::{evaluate_configuration, CalibrationSettings, Dump};
use crate::quantifiers::{Quantifier, QuantifierSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct RankEntry {
    pub group: String,
    pub competitor: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompetitorRank {
    pub competitor: String,
    pub mean_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankTable {
    /// In order of first appearance.
    pub ranks: Vec<CompetitorRank>,
    /// Number of groups the ranks were averaged over.
    pub groups: usize,
}

impl RankTable {
    pub fn mean_rank(&self, competitor: &str) -> Option<f64> {
        self.ranks.iter().find(|r| r.competitor == competitor).map(|r| r.mean_rank)
    }
}

/// Ranks with 1 = highest score; tied scores share the average of the ranks
/// they cover.
pub fn fractional_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let shared = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = shared;
        }
        i = j;
    }
    ranks
}

/// Ranks competitors within every group by score and averages the ranks
/// across groups. Every group must contain every competitor exactly once.
pub fn rank_table(entries: &[RankEntry]) -> Result<RankTable> {
    if entries.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut competitors: Vec<&str> = Vec::new();
    let mut groups: Vec<(&str, Vec<&RankEntry>)> = Vec::new();
    for e in entries {
        if !competitors.contains(&e.competitor.as_str()) {
            competitors.push(&e.competitor);
        }
        match groups.iter_mut().find(|(g, _)| *g == e.group) {
            Some((_, members)) => members.push(e),
            None => groups.push((&e.group, vec![e])),
        }
    }

    let mut totals = vec![0.0; competitors.len()];
    for (group, members) in &groups {
        let mut scores = vec![None; competitors.len()];
        for e in members {
            let slot = competitors.iter().position(|c| *c == e.competitor).unwrap();
            if scores[slot].replace(e.score).is_some() {
                return Err(Error::DuplicateCompetitor {
                    group: group.to_string(),
                    competitor: e.competitor.clone(),
                });
            }
        }
        let scores: Vec<f64> = scores
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| Error::MissingCompetitor {
                    group: group.to_string(),
                    competitor: competitors[i].to_string(),
                })
            })
            .collect::<Result<_>>()?;
        for (total, rank) in totals.iter_mut().zip(fractional_ranks(&scores)) {
            *total += rank;
        }
    }
    let n = groups.len() as f64;
    Ok(RankTable {
        ranks: competitors
            .iter()
            .zip(totals)
            .map(|(c, total)| CompetitorRank {
                competitor: c.to_string(),
                mean_rank: total / n,
            })
            .collect(),
        groups: groups.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub k: usize,
    pub supervised_objective: Option<f64>,
    pub acceptance_rate: f64,
    pub threshold: f64,
}

/// Supervised objective and acceptance rate as a function of how many
/// samples (a prefix of each input's samples) feed the quantifier. The
/// threshold is recalibrated for every `k`.
pub fn sample_size_curve(
    validation: Dump<'_>,
    test: Dump<'_>,
    quantifier: Quantifier,
    epsilon: f64,
    ks: &[usize],
    settings: &CalibrationSettings,
    options: &EvaluationOptions,
) -> Result<Vec<CurvePoint>> {
    let max = validation.tensor.samples().min(test.tensor.samples());
    if let Some(&k) = ks.iter().find(|&&k| k < 2 || k > max) {
        return Err(Error::SampleCountOutOfRange { k, max });
    }
    ks.par_iter()
        .map(|&k| {
            let spec = QuantifierSpec::with_prefix(quantifier, k);
            let (threshold, report) = evaluate_configuration(validation, test, spec, epsilon, settings, options)?;
            Ok(CurvePoint {
                k,
                supervised_objective: report.supervised_objective,
                acceptance_rate: report.acceptance_rate,
                threshold: threshold.t,
            })
        })
        .collect()
}

/// Objective values over (row, column) hyperparameters, e.g. epochs by sample
/// counts. Keys are ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisGrid {
    pub row_keys: Vec<f64>,
    pub col_keys: Vec<f64>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl AnalysisGrid {
    pub fn from_dense(cells: Vec<Vec<f64>>) -> Result<Self> {
        let rows = cells.len();
        let cols = cells.first().map_or(0, Vec::len);
        if cells.iter().any(|r| r.len() != cols) {
            return Err(Error::RaggedGrid);
        }
        Ok(AnalysisGrid {
            row_keys: (0..rows).map(|r| r as f64).collect(),
            col_keys: (0..cols).map(|c| c as f64).collect(),
            cells: cells.into_iter().map(|r| r.into_iter().map(Some).collect()).collect(),
        })
    }

    /// Builds a grid from `(row key, column key, value)` triples. Keys are
    /// sorted ascending; combinations never seen stay missing.
    pub fn from_long(points: &[(f64, f64, f64)]) -> Result<Self> {
        let mut rows: Vec<f64> = points.iter().map(|p| p.0).collect();
        let mut cols: Vec<f64> = points.iter().map(|p| p.1).collect();
        for keys in [&mut rows, &mut cols] {
            keys.sort_by(f64::total_cmp);
            keys.dedup();
        }
        let mut cells = vec![vec![None; cols.len()]; rows.len()];
        for &(r, c, v) in points {
            let ri = rows.iter().position(|&k| k == r).unwrap();
            let ci = cols.iter().position(|&k| k == c).unwrap();
            cells[ri][ci] = Some(v);
        }
        Ok(AnalysisGrid {
            row_keys: rows,
            col_keys: cols,
            cells,
        })
    }

    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn cols(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityMaps {
    pub window: usize,
    /// Keys of the interior cells the maps cover.
    pub row_keys: Vec<f64>,
    pub col_keys: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    /// Pearson correlation between the mean and std maps; `None` when either
    /// map is constant.
    pub sc: Option<f64>,
}

/// Mean and population standard deviation of every `window x window`
/// neighborhood centered on an interior cell (edge cells are dropped, no
/// padding), plus the correlation between the two maps.
pub fn sensitivity_maps(grid: &AnalysisGrid, window: usize) -> Result<SensitivityMaps> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidWindow(window));
    }
    let (rows, cols) = (grid.rows(), grid.cols());
    if grid.cells.iter().any(|r| r.len() != cols) {
        return Err(Error::RaggedGrid);
    }
    if rows < window || cols < window {
        return Err(Error::GridTooSmall { rows, cols, window });
    }
    for (r, row) in grid.cells.iter().enumerate() {
        if let Some(c) = row.iter().position(Option::is_none) {
            return Err(Error::MissingCell { row: r, col: c });
        }
    }
    let value = |r: usize, c: usize| grid.cells[r][c].unwrap();
    let area = (window * window) as f64;
    let (out_rows, out_cols) = (rows - window + 1, cols - window + 1);
    let mut mean = vec![vec![0.0; out_cols]; out_rows];
    let mut std = vec![vec![0.0; out_cols]; out_rows];
    for r in 0..out_rows {
        for c in 0..out_cols {
            // shifted by the window's first cell so flat windows give exactly 0
            let origin = value(r, c);
            let cells = || (r..r + window).flat_map(move |i| (c..c + window).map(move |j| value(i, j) - origin));
            let shift = cells().sum::<f64>() / area;
            let var = cells().map(|d| (d - shift).powi(2)).sum::<f64>() / area;
            mean[r][c] = origin + shift;
            std[r][c] = var.sqrt();
        }
    }
    let flat = |m: &Vec<Vec<f64>>| m.iter().flatten().copied().collect::<Vec<f64>>();
    let sc = pearson(&flat(&mean), &flat(&std)).ok();
    let half = window / 2;
    Ok(SensitivityMaps {
        window,
        row_keys: grid.row_keys[half..rows - half].to_vec(),
        col_keys: grid.col_keys[half..cols - half].to_vec(),
        mean,
        std,
        sc,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutRecord {
    pub rate: f64,
    pub quantifier: String,
    pub avgpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropoutSummary {
    pub rate: f64,
    pub quantifier: String,
    pub mean_avgpr: f64,
    /// Population standard deviation over the repetitions.
    pub std_avgpr: f64,
    pub count: usize,
}

/// Mean (and spread) of AVGPR per dropout rate and quantifier, ordered by
/// ascending rate.
pub fn dropout_rate_summary(records: &[DropoutRecord]) -> Result<Vec<DropoutSummary>> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut groups: BTreeMap<(u64, &str), Vec<f64>> = BTreeMap::new();
    for r in records {
        if !r.rate.is_finite() || r.rate < 0.0 {
            return Err(Error::Manifest(format!("invalid dropout rate {}", r.rate)));
        }
        // non-negative floats order like their bit patterns
        groups.entry((r.rate.to_bits(), &r.quantifier)).or_default().push(r.avgpr);
    }
    Ok(groups
        .into_iter()
        .map(|((bits, quantifier), values)| {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            DropoutSummary {
                rate: f64::from_bits(bits),
                quantifier: quantifier.to_string(),
                mean_avgpr: mean,
                std_avgpr: var.sqrt(),
                count: values.len(),
            }
        })
        .collect())
}

/// One row of the plot-ready `x,y,value,series` CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub x: f64,
    pub y: f64,
    pub value: f64,
    pub series: String,
}

pub fn long_format_csv(rows: &[PlotRow]) -> String {
    let mut out = String::from("x,y,value,series\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.x, r.y, r.value, r.series));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(groups: &[(&str, &[(&str, f64)])]) -> Vec<RankEntry> {
        groups
            .iter()
            .flat_map(|(g, members)| {
                members.iter().map(move |(c, s)| RankEntry {
                    group: g.to_string(),
                    competitor: c.to_string(),
                    score: *s,
                })
            })
            .collect()
    }

    #[test]
    fn rank_examples() {
        assert_eq!(fractional_ranks(&[0.9, 0.8, 0.7]), vec![1.0, 2.0, 3.0]);
        assert_eq!(fractional_ranks(&[0.9, 0.9, 0.7]), vec![1.5, 1.5, 3.0]);
        assert_eq!(fractional_ranks(&[0.5, 0.5, 0.5]), vec![2.0, 2.0, 2.0]);

        let t = rank_table(&entries(&[("g1", &[("a", 0.9), ("b", 0.8)]), ("g2", &[("a", 0.1), ("b", 0.8)])])).unwrap();
        assert_eq!(t.mean_rank("a"), Some(1.5));
        assert_eq!(t.mean_rank("b"), Some(1.5));
        assert_eq!(t.groups, 2);
    }

    #[test]
    fn rank_table_requires_complete_groups() {
        let e = entries(&[("g1", &[("a", 0.9), ("b", 0.8)]), ("g2", &[("a", 0.1)])]);
        assert!(matches!(rank_table(&e), Err(Error::MissingCompetitor { .. })));
        let e = entries(&[("g1", &[("a", 0.9), ("a", 0.8)])]);
        assert!(matches!(rank_table(&e), Err(Error::DuplicateCompetitor { .. })));
    }

    #[test]
    fn constant_grid_has_zero_std_and_no_correlation() {
        let grid = AnalysisGrid::from_dense(vec![vec![0.8; 7]; 6]).unwrap();
        let maps = sensitivity_maps(&grid, 5).unwrap();
        assert_eq!((maps.mean.len(), maps.mean[0].len()), (2, 3));
        assert!(maps.std.iter().flatten().all(|&s| s == 0.0));
        assert_eq!(maps.sc, None);
        assert_eq!(maps.row_keys, vec![2.0, 3.0]);
    }

    #[test]
    fn single_outlier_in_a_5x5_grid() {
        let mut cells = vec![vec![0.9; 5]; 5];
        cells[2][2] = 0.4;
        let maps = sensitivity_maps(&AnalysisGrid::from_dense(cells).unwrap(), 5).unwrap();
        // mean = (24 * 0.9 + 0.4) / 25 = 0.88
        assert!((maps.mean[0][0] - 0.88).abs() < 1e-12);
        // deviations: 24 cells at +0.02, one at -0.48 -> var = (24*0.0004 + 0.2304)/25 = 0.0096
        assert!((maps.std[0][0] - 0.0096f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sensitivity_errors() {
        let small = AnalysisGrid::from_dense(vec![vec![0.0; 4]; 5]).unwrap();
        assert!(matches!(sensitivity_maps(&small, 5), Err(Error::GridTooSmall { .. })));
        assert!(matches!(sensitivity_maps(&small, 4), Err(Error::InvalidWindow(4))));
        let holes = AnalysisGrid::from_long(&[(0.0, 0.0, 1.0), (1.0, 1.0, 1.0)]).unwrap();
        assert_eq!(holes.cells[0][1], None);
        assert!(matches!(sensitivity_maps(&holes, 1), Err(Error::MissingCell { row: 0, col: 1 })));
    }

    #[test]
    fn dropout_summary_examples() {
        let rec = |rate, avgpr| DropoutRecord {
            rate,
            quantifier: "VR".into(),
            avgpr,
        };
        let s = dropout_rate_summary(&[rec(0.3, 0.7), rec(0.1, 0.8), rec(0.1, 0.9)]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].rate, 0.1);
        assert!((s[0].mean_avgpr - 0.85).abs() < 1e-12);
        assert_eq!(s[0].count, 2);
        assert_eq!((s[1].rate, s[1].mean_avgpr, s[1].std_avgpr), (0.3, 0.7, 0.0));
        assert!(matches!(dropout_rate_summary(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn long_format() {
        let csv = long_format_csv(&[PlotRow {
            x: 2.0,
            y: 0.5,
            value: 0.93,
            series: "MS".into(),
        }]);
        assert_eq!(csv, "x,y,value,series\n2,0.5,0.93,MS\n");
    }
}
