//! Empirical evaluation: apply thresholds to labeled samples and score the
//! predictions with accuracy and group-fairness metrics.
//!
//! Everything here is computed from confusion counts, never from fitted
//! densities.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Sample;
use crate::objective::ThresholdPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Acc,
    #[serde(rename = "ba")]
    BalancedAcc,
    #[serde(rename = "eop")]
    EOp,
    #[serde(rename = "eod")]
    EOd,
    #[serde(rename = "bd")]
    BalancedDiff,
    OneMinusDimp,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Acc,
        Metric::BalancedAcc,
        Metric::EOp,
        Metric::EOd,
        Metric::BalancedDiff,
        Metric::OneMinusDimp,
    ];

    /// Key used in JSON output.
    pub fn key(self) -> &'static str {
        match self {
            Metric::Acc => "acc",
            Metric::BalancedAcc => "ba",
            Metric::EOp => "eop",
            Metric::EOd => "eod",
            Metric::BalancedDiff => "bd",
            Metric::OneMinusDimp => "one_minus_dimp",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Metric::Acc => "ACC",
            Metric::BalancedAcc => "BA",
            Metric::EOp => "EOp",
            Metric::EOd => "EOd",
            Metric::BalancedDiff => "BD",
            Metric::OneMinusDimp => "1-DIMP",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("{metric} is undefined: {reason}")]
    UndefinedMetric { metric: Metric, reason: String },
    #[error("{samples} samples but {predictions} predictions")]
    LengthMismatch { samples: usize, predictions: usize },
    #[error("prediction {index} is {value}; predictions must be 0 or 1")]
    InvalidPrediction { index: usize, value: u8 },
}

/// `1` iff `logit >= θ_group`.
pub fn apply_thresholds(samples: &[Sample], theta: ThresholdPair) -> Vec<u8> {
    samples
        .iter()
        .map(|s| u8::from(s.logit >= theta.get(s.group as usize)))
        .collect()
}

/// Confusion counts per group, indexed by `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: [u64; 2],
    pub fp: [u64; 2],
    pub tn: [u64; 2],
    #[serde(rename = "fn")]
    pub fn_: [u64; 2],
}

/// Per-group empirical rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub tp: [f64; 2],
    pub fp: [f64; 2],
    pub tn: [f64; 2],
    #[serde(rename = "fn")]
    pub fn_: [f64; 2],
}

fn ratio(
    num: u64,
    den: u64,
    metric: Metric,
    what: impl FnOnce() -> String,
) -> Result<f64, MetricError> {
    if den == 0 {
        Err(MetricError::UndefinedMetric {
            metric,
            reason: what(),
        })
    } else {
        Ok(num as f64 / den as f64)
    }
}

impl ConfusionCounts {
    pub fn from_predictions(samples: &[Sample], predictions: &[u8]) -> Result<Self, MetricError> {
        if samples.len() != predictions.len() {
            return Err(MetricError::LengthMismatch {
                samples: samples.len(),
                predictions: predictions.len(),
            });
        }
        let mut c = Self::default();
        for (index, (s, &p)) in samples.iter().zip(predictions).enumerate() {
            let a = s.group as usize;
            match (s.label, p) {
                (1, 1) => c.tp[a] += 1,
                (1, 0) => c.fn_[a] += 1,
                (0, 1) => c.fp[a] += 1,
                (0, 0) => c.tn[a] += 1,
                (_, value) => return Err(MetricError::InvalidPrediction { index, value }),
            }
        }
        Ok(c)
    }

    pub fn positives(&self, group: usize) -> u64 {
        self.tp[group] + self.fn_[group]
    }

    pub fn negatives(&self, group: usize) -> u64 {
        self.fp[group] + self.tn[group]
    }

    pub fn group_size(&self, group: usize) -> u64 {
        self.positives(group) + self.negatives(group)
    }

    pub fn total(&self) -> u64 {
        self.group_size(0) + self.group_size(1)
    }

    fn tpr(&self, a: usize, metric: Metric) -> Result<f64, MetricError> {
        ratio(self.tp[a], self.positives(a), metric, || {
            format!("group {a} has no positive samples")
        })
    }

    fn fpr(&self, a: usize, metric: Metric) -> Result<f64, MetricError> {
        ratio(self.fp[a], self.negatives(a), metric, || {
            format!("group {a} has no negative samples")
        })
    }

    fn selection_rate(&self, a: usize, metric: Metric) -> Result<f64, MetricError> {
        ratio(self.tp[a] + self.fp[a], self.group_size(a), metric, || {
            format!("group {a} has no samples")
        })
    }

    /// Rates per group; needs all four (label, group) cells nonempty.
    pub fn rates(&self) -> Result<GroupRates, MetricError> {
        let m = Metric::EOd;
        let tp = [self.tpr(0, m)?, self.tpr(1, m)?];
        let fp = [self.fpr(0, m)?, self.fpr(1, m)?];
        Ok(GroupRates {
            tp,
            fp,
            tn: fp.map(|x| 1.0 - x),
            fn_: tp.map(|x| 1.0 - x),
        })
    }

    pub fn metric(&self, metric: Metric) -> Result<f64, MetricError> {
        match metric {
            Metric::Acc => ratio(
                self.tp[0] + self.tp[1] + self.tn[0] + self.tn[1],
                self.total(),
                metric,
                || "no samples".into(),
            ),
            Metric::BalancedAcc => {
                let pos = self.positives(0) + self.positives(1);
                let neg = self.negatives(0) + self.negatives(1);
                let tpr = ratio(self.tp[0] + self.tp[1], pos, metric, || {
                    "no positive samples".into()
                })?;
                let tnr = ratio(self.tn[0] + self.tn[1], neg, metric, || {
                    "no negative samples".into()
                })?;
                Ok(0.5 * (tpr + tnr))
            }
            Metric::EOp => Ok((self.tpr(1, metric)? - self.tpr(0, metric)?).abs()),
            Metric::EOd => Ok((self.tpr(1, metric)? - self.tpr(0, metric)?).abs()
                + (self.fpr(1, metric)? - self.fpr(0, metric)?).abs()),
            Metric::BalancedDiff => {
                let score = |a| -> Result<f64, MetricError> {
                    Ok(self.tpr(a, metric)? + 1.0 - self.fpr(a, metric)?)
                };
                Ok((score(1)? - score(0)?).abs())
            }
            Metric::OneMinusDimp => {
                let p1 = self.selection_rate(1, metric)?;
                let p0 = self.selection_rate(0, metric)?;
                if p0 == 0.0 {
                    return Err(MetricError::UndefinedMetric {
                        metric,
                        reason: "group 0 has no positive predictions".into(),
                    });
                }
                Ok((1.0 - p1 / p0).abs())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc: f64,
    #[serde(rename = "ba")]
    pub balanced_acc: f64,
    #[serde(rename = "eop")]
    pub eop_diff: f64,
    #[serde(rename = "eod")]
    pub eod_diff: f64,
    #[serde(rename = "bd")]
    pub balanced_diff: f64,
    pub one_minus_dimp: f64,
    pub rates: GroupRates,
}

impl MetricReport {
    pub fn from_counts(c: &ConfusionCounts) -> Result<Self, MetricError> {
        Ok(Self {
            acc: c.metric(Metric::Acc)?,
            balanced_acc: c.metric(Metric::BalancedAcc)?,
            eop_diff: c.metric(Metric::EOp)?,
            eod_diff: c.metric(Metric::EOd)?,
            balanced_diff: c.metric(Metric::BalancedDiff)?,
            one_minus_dimp: c.metric(Metric::OneMinusDimp)?,
            rates: c.rates()?,
        })
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Acc => self.acc,
            Metric::BalancedAcc => self.balanced_acc,
            Metric::EOp => self.eop_diff,
            Metric::EOd => self.eod_diff,
            Metric::BalancedDiff => self.balanced_diff,
            Metric::OneMinusDimp => self.one_minus_dimp,
        }
    }
}

/// Every metric that is defined; undefined ones are `None` (`null` in JSON).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub acc: Option<f64>,
    pub ba: Option<f64>,
    pub eop: Option<f64>,
    pub eod: Option<f64>,
    pub bd: Option<f64>,
    pub one_minus_dimp: Option<f64>,
}

impl MetricSummary {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        let m = |metric| c.metric(metric).ok();
        Self {
            acc: m(Metric::Acc),
            ba: m(Metric::BalancedAcc),
            eop: m(Metric::EOp),
            eod: m(Metric::EOd),
            bd: m(Metric::BalancedDiff),
            one_minus_dimp: m(Metric::OneMinusDimp),
        }
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Acc => self.acc,
            Metric::BalancedAcc => self.ba,
            Metric::EOp => self.eop,
            Metric::EOd => self.eod,
            Metric::BalancedDiff => self.bd,
            Metric::OneMinusDimp => self.one_minus_dimp,
        }
    }
}

/// Every metric, failing on the first one that is undefined.
pub fn evaluate(samples: &[Sample], predictions: &[u8]) -> Result<MetricReport, MetricError> {
    MetricReport::from_counts(&ConfusionCounts::from_predictions(samples, predictions)?)
}

/// `evaluate` of the predictions made by `theta`.
pub fn evaluate_thresholds(
    samples: &[Sample],
    theta: ThresholdPair,
) -> Result<MetricReport, MetricError> {
    evaluate(samples, &apply_thresholds(samples, theta))
}
