//! Deterministic synthetic sample dumps and brute-force reference oracles.
//!
//! # Random stream
//!
//! All randomness comes from SplitMix64. With a 64-bit state `s` and
//! wrapping arithmetic, each draw is
//!
//! ```text
//! s = s + 0x9E3779B97F4A7C15
//! z = s
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! return z ^ (z >> 31)
//! ```
//!
//! A uniform in `[0, 1)` is `(z >> 11) * 2^-53`. A standard-normal-like
//! value is the sum of 12 consecutive uniforms minus 6. `below(n)` is
//! `floor(uniform * n)`.
//!
//! # Generation order
//!
//! For each input `i` in order:
//!
//! 1. `u = uniform()` is the input's noise level; `sigma = noise_scale * u`.
//! 2. `base = below(C)` is the class whose logit gets the margin
//!    `BASE_MARGIN - MARGIN_DROP * u`; all other base logits are 0.
//! 3. `coin = uniform()` and `shift = below(C - 1)` are drawn for the label.
//! 4. For each sample `t` and class `c` in order, the logit is
//!    `base_logit[c] + sigma * gaussian()`, softmax-normalized per row in
//!    f64 and stored as f32.
//!
//! The dominant class is the argmax of the mean softmax over all samples
//! (lowest index on ties). The label is the dominant class, except when
//! `u >= HIGH_NOISE` and `coin < link`, where it becomes
//! `(dominant + 1 + shift) mod C`, a class the model never predicts.

use crate::error::{Error, Result};
use crate::quantifiers::{max_softmax, mean_softmax, Prediction};
use crate::tensor_io::{Labels, SampleTensor};

/// Logit advantage of the base class for a noise-free input.
pub const BASE_MARGIN: f64 = 4.0;
/// How much of the margin a maximally noisy input loses.
pub const MARGIN_DROP: f64 = 3.5;
/// Inputs at or above this noise level are eligible for a wrong label.
pub const HIGH_NOISE: f64 = 0.75;
/// Largest instance the enumeration oracles accept.
pub const ORACLE_LIMIT: usize = 12;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn gaussian(&mut self) -> f64 {
        (0..12).map(|_| self.uniform()).sum::<f64>() - 6.0
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n.saturating_sub(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub inputs: usize,
    pub samples: usize,
    pub classes: usize,
    pub noise_scale: f64,
    pub mislabel_link: f64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.inputs == 0 || self.samples == 0 {
            return bad(format!("inputs and samples must be >= 1, got n={} t={}", self.inputs, self.samples));
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad(format!("noise scale must be finite and >= 0, got {}", self.noise_scale));
        }
        if !(0.0..=1.0).contains(&self.mislabel_link) {
            return bad(format!("mislabel link must lie in [0, 1], got {}", self.mislabel_link));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDump {
    pub tensor: SampleTensor,
    pub labels: Labels,
    /// Per-input noise level `u` in `[0, 1)`.
    pub noise: Vec<f64>,
    pub dominant: Vec<usize>,
}

pub fn generate(config: &GeneratorConfig) -> Result<SyntheticDump> {
    config.validate()?;
    let GeneratorConfig {
        inputs: n,
        samples: t,
        classes: c,
        ..
    } = *config;
    let mut rng = SplitMix64::new(config.seed);
    let mut values = Vec::with_capacity(n * t * c);
    let mut noise = Vec::with_capacity(n);
    let mut draws = Vec::with_capacity(n);
    let mut logits = vec![0.0f64; c];

    for _ in 0..n {
        let u = rng.uniform();
        let sigma = config.noise_scale * u;
        let margin = BASE_MARGIN - MARGIN_DROP * u;
        let base = rng.below(c);
        let coin = rng.uniform();
        let shift = rng.below(c - 1);
        for _ in 0..t {
            for (class, logit) in logits.iter_mut().enumerate() {
                let centre = if class == base { margin } else { 0.0 };
                *logit = centre + sigma * rng.gaussian();
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            values.extend(logits.iter().map(|l| ((l - max).exp() / total) as f32));
        }
        noise.push(u);
        draws.push((coin, shift));
    }

    let tensor = SampleTensor::classifier(n, t, c, values)?;
    let consensus = if t == 1 { max_softmax(&tensor)? } else { mean_softmax(&tensor, None)? };
    let dominant: Vec<usize> = consensus
        .items
        .iter()
        .map(|a| match a.predicted {
            Prediction::Class(k) => k,
            Prediction::Value(_) => unreachable!("classifier assessments carry classes"),
        })
        .collect();
    let labels = dominant
        .iter()
        .zip(&noise)
        .zip(&draws)
        .map(|((&d, &u), &(coin, shift))| {
            if u >= HIGH_NOISE && coin < config.mislabel_link {
                (d + 1 + shift) % c
            } else {
                d
            }
        })
        .collect();

    Ok(SyntheticDump {
        tensor,
        labels: Labels::Classes(labels),
        noise,
        dominant,
    })
}

/// Which reference computation [`oracle_metric`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMetric {
    AveragePrecision,
    Auroc,
    /// Realized threshold for the given epsilon.
    Calibrate,
    SScore,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleInstance<'a> {
    Ranking { scores: &'a [f64], positive: &'a [bool] },
    Calibration { benign: &'a [f64], epsilon: f64 },
    SScore { nobj: f64, delta: f64, beta: f64 },
}

pub fn oracle_metric(metric: OracleMetric, instance: &OracleInstance<'_>) -> Result<f64> {
    match (metric, instance) {
        (OracleMetric::AveragePrecision, OracleInstance::Ranking { scores, positive }) => {
            oracle_average_precision(scores, positive)
        }
        (OracleMetric::Auroc, OracleInstance::Ranking { scores, positive }) => oracle_auroc(scores, positive),
        (OracleMetric::Calibrate, OracleInstance::Calibration { benign, epsilon }) => {
            oracle_calibrate(benign, *epsilon).map(|(t, _)| t)
        }
        (OracleMetric::SScore, OracleInstance::SScore { nobj, delta, beta }) => Ok(oracle_s_score(*nobj, *delta, *beta)),
        _ => Err(Error::InvalidConfig(format!("{metric:?} oracle cannot take this instance"))),
    }
}

fn check_size(n: usize) -> Result<()> {
    if n > ORACLE_LIMIT {
        return Err(Error::OracleTooLarge(n));
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

fn check_ranking(scores: &[f64], positive: &[bool], what: &'static str) -> Result<(usize, usize)> {
    check_size(scores.len())?;
    if scores.len() != positive.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: scores.len(),
            found: positive.len(),
        });
    }
    let p = positive.iter().filter(|&&m| m).count();
    if p == 0 || p == scores.len() {
        return Err(Error::SingleClass(what));
    }
    Ok((p, scores.len() - p))
}

/// Tries every observed score as a cut, highest first, and counts what lands
/// at or above it.
pub fn oracle_average_precision(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (p, _) = check_ranking(scores, positive, "average precision")?;
    let mut cuts = scores.to_vec();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    let mut ap = 0.0;
    let mut prev_tp = 0usize;
    for cut in cuts {
        let tp = (0..scores.len()).filter(|&i| scores[i] >= cut && positive[i]).count();
        let fp = (0..scores.len()).filter(|&i| scores[i] >= cut && !positive[i]).count();
        ap += ((tp - prev_tp) as f64 / p as f64) * (tp as f64 / (tp + fp) as f64);
        prev_tp = tp;
    }
    Ok(ap)
}

/// Compares every positive against every negative; ties count half.
pub fn oracle_auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (p, n) = check_ranking(scores, positive, "AUROC")?;
    let mut twice_wins: u128 = 0;
    for i in (0..scores.len()).filter(|&i| positive[i]) {
        for j in (0..scores.len()).filter(|&j| !positive[j]) {
            if scores[i] > scores[j] {
                twice_wins += 2;
            } else if scores[i] == scores[j] {
                twice_wins += 1;
            }
        }
    }
    Ok(twice_wins as f64 / (2.0 * p as f64 * n as f64))
}

/// Returns `(threshold, realized FPR)`: among every observed value and
/// `+inf`, the candidate whose FPR is the smallest one still `>= epsilon`.
pub fn oracle_calibrate(benign: &[f64], epsilon: f64) -> Result<(f64, f64)> {
    check_size(benign.len())?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::EpsilonOutOfRange(epsilon));
    }
    let n = benign.len();
    let mut best: Option<(f64, f64)> = None;
    for t in benign.iter().copied().chain([f64::INFINITY]) {
        let fpr = benign.iter().filter(|&&u| u >= t).count() as f64 / n as f64;
        if fpr >= epsilon && best.is_none_or(|(_, b)| fpr < b) {
            best = Some((t, fpr));
        }
    }
    Ok(best.expect("the smallest value always has FPR 1"))
}

/// `S_beta` as the weighted harmonic mean written out directly; for
/// `beta = 1` this is `2 / (1/nobj + 1/delta)`.
pub fn oracle_s_score(nobj: f64, delta: f64, beta: f64) -> f64 {
    if nobj <= 0.0 || delta <= 0.0 {
        return 0.0;
    }
    let b2 = beta * beta;
    (1.0 + b2) / (b2 / delta + 1.0 / nobj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantifiers::{mutual_information, variation_ratio};

    fn config() -> GeneratorConfig {
        GeneratorConfig {
            seed: 7,
            inputs: 50,
            samples: 6,
            classes: 4,
            noise_scale: 2.0,
            mislabel_link: 0.8,
        }
    }

    #[test]
    fn splitmix_reference_stream() {
        // first outputs for seed 0 of the published SplitMix64
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn zero_noise_gives_identical_rows() {
        let d = generate(&GeneratorConfig {
            noise_scale: 0.0,
            ..config()
        })
        .unwrap();
        for i in 0..d.tensor.inputs() {
            let first = d.tensor.row(i, 0);
            for t in 1..d.tensor.samples() {
                assert_eq!(d.tensor.row(i, t), first);
            }
        }
        assert!(variation_ratio(&d.tensor, None).unwrap().uncertainties().iter().all(|&u| u == 0.0));
        assert!(mutual_information(&d.tensor, None).unwrap().uncertainties().iter().all(|&u| u == 0.0));
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&config()).unwrap();
        let b = generate(&config()).unwrap();
        assert_eq!(a.tensor.encode(), b.tensor.encode());
        assert_eq!(a.labels, b.labels);
        let c = generate(&GeneratorConfig { seed: 8, ..config() }).unwrap();
        assert_ne!(a.tensor.encode(), c.tensor.encode());
    }

    #[test]
    fn no_link_means_every_label_matches_the_prediction() {
        let d = generate(&GeneratorConfig {
            mislabel_link: 0.0,
            ..config()
        })
        .unwrap();
        assert_eq!(d.labels, Labels::Classes(d.dominant.clone()));
    }

    #[test]
    fn full_link_flips_every_high_noise_label() {
        let d = generate(&GeneratorConfig {
            mislabel_link: 1.0,
            ..config()
        })
        .unwrap();
        let Labels::Classes(labels) = &d.labels else { unreachable!() };
        for i in 0..labels.len() {
            assert_eq!(labels[i] != d.dominant[i], d.noise[i] >= HIGH_NOISE);
        }
    }

    #[test]
    fn single_sample_generation() {
        let d = generate(&GeneratorConfig { samples: 1, ..config() }).unwrap();
        assert_eq!(d.tensor.samples(), 1);
    }

    #[test]
    fn invalid_configs() {
        for bad in [
            GeneratorConfig { classes: 1, ..config() },
            GeneratorConfig { inputs: 0, ..config() },
            GeneratorConfig {
                noise_scale: -1.0,
                ..config()
            },
            GeneratorConfig {
                mislabel_link: 1.5,
                ..config()
            },
        ] {
            assert!(matches!(generate(&bad), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn oracle_examples() {
        let perfect = OracleInstance::Ranking {
            scores: &[0.9, 0.8, 0.2, 0.1],
            positive: &[true, true, false, false],
        };
        assert_eq!(oracle_metric(OracleMetric::AveragePrecision, &perfect).unwrap(), 1.0);
        assert_eq!(oracle_metric(OracleMetric::Auroc, &perfect).unwrap(), 1.0);

        let cal = OracleInstance::Calibration {
            benign: &[0.1, 0.2, 0.3, 0.4],
            epsilon: 0.25,
        };
        assert_eq!(oracle_metric(OracleMetric::Calibrate, &cal).unwrap(), 0.4);
        assert_eq!(oracle_calibrate(&[0.5; 4], 0.1).unwrap(), (0.5, 1.0));

        let s = OracleInstance::SScore {
            nobj: 0.83,
            delta: 0.98,
            beta: 1.0,
        };
        let v = oracle_metric(OracleMetric::SScore, &s).unwrap();
        assert!((v - 0.8987845303867402).abs() < 1e-12);
        assert_eq!((v * 100.0).round() / 100.0, 0.90);
        assert_eq!(oracle_s_score(0.0, 0.5, 1.0), 0.0);
    }

    #[test]
    fn oracle_limits() {
        let big = [0.0; 13];
        assert!(matches!(oracle_calibrate(&big, 0.1), Err(Error::OracleTooLarge(13))));
        let pos = [true; 13];
        assert!(matches!(oracle_auroc(&big, &pos), Err(Error::OracleTooLarge(13))));
        let wrong = OracleInstance::SScore {
            nobj: 1.0,
            delta: 1.0,
            beta: 1.0,
        };
        assert!(oracle_metric(OracleMetric::Auroc, &wrong).is_err());
    }
}
