//! Confusion rates as functions of the group thresholds, and the
//! least-squares accuracy/fairness objective built from them.
//!
//! With `F_ya` the cdf of logits in cell `(y, a)` and `θ_a` the threshold of
//! group `a` (predict positive when `logit >= θ_a`):
//!
//! ```text
//! TP_a = 1 - F_1a(θ_a)    FN_a = 1 - TP_a
//! FP_a = 1 - F_0a(θ_a)    TN_a = 1 - FP_a
//! ```
//!
//! The objective is `L(θ) = L_per(θ) + Σ_k λ_k L_k(θ)` where
//! `L_per = (Σ_a n_0a/N·FP_a + n_1a/N·FN_a)²` is the squared error rate and
//! each fairness term is a sum of squared rate gaps.
//!
//! Writing the weights as `λ_k` multipliers is equivalent to folding `√λ_k`
//! into the fairness residuals; both give the same loss and the same
//! Gauss–Newton step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CellMap, Counts, GroupedLogits};
use crate::density::{
    best_candidate, score_candidates, CandidateScore, DensityError, Family, FittedDensity,
    KdeOptions,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("demographic parity is undefined: group {group} has no samples")]
    EmptyGroup { group: usize },
    #[error("cell (y={label}, a={group}) is empty; every cell needs samples to fit a density")]
    EmptyCell { label: usize, group: usize },
    #[error("cell (y={label}, a={group}): {source}")]
    CellFit {
        label: usize,
        group: usize,
        #[source]
        source: DensityError,
    },
    #[error("lambda for {kind} must be finite and non-negative, got {lambda}")]
    InvalidLambda { kind: FairnessKind, lambda: f64 },
    #[error("unknown fairness constraint `{0}` (expected EOp, PE, EOd or DP)")]
    UnknownConstraint(String),
}

/// Per-group decision thresholds on the logit scale.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub theta0: f64,
    pub theta1: f64,
}

impl ThresholdPair {
    pub fn new(theta0: f64, theta1: f64) -> Self {
        Self { theta0, theta1 }
    }

    pub fn unified(theta: f64) -> Self {
        Self::new(theta, theta)
    }

    #[inline]
    pub fn get(&self, group: usize) -> f64 {
        if group == 0 {
            self.theta0
        } else {
            self.theta1
        }
    }

    #[inline]
    pub fn set(&mut self, group: usize, value: f64) {
        if group == 0 {
            self.theta0 = value
        } else {
            self.theta1 = value
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta0.is_finite() && self.theta1.is_finite()
    }
}

impl fmt::Display for ThresholdPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(θ0={}, θ1={})", self.theta0, self.theta1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FairnessKind {
    /// Equal opportunity: `TP_1 = TP_0`.
    EOp,
    /// Predictive equality: `FP_1 = FP_0`.
    PE,
    /// Equalized odds: EOp and PE together.
    EOd,
    /// Demographic parity: equal positive-prediction rates.
    DP,
}

impl FairnessKind {
    pub const ALL: [FairnessKind; 4] = [
        FairnessKind::EOp,
        FairnessKind::PE,
        FairnessKind::EOd,
        FairnessKind::DP,
    ];

    /// Number of squared residuals the constraint contributes.
    pub fn residual_count(self) -> usize {
        match self {
            FairnessKind::EOd => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for FairnessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FairnessKind::EOp => "EOp",
            FairnessKind::PE => "PE",
            FairnessKind::EOd => "EOd",
            FairnessKind::DP => "DP",
        };
        f.write_str(s)
    }
}

impl FromStr for FairnessKind {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "eop" | "eq_opp" | "equal_opportunity" => Ok(FairnessKind::EOp),
            "pe" | "predictive_equality" => Ok(FairnessKind::PE),
            "eod" | "eq_odds" | "equalized_odds" => Ok(FairnessKind::EOd),
            "dp" | "demographic_parity" => Ok(FairnessKind::DP),
            _ => Err(ObjectiveError::UnknownConstraint(s.trim().to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub kind: FairnessKind,
    pub lambda: f64,
}

/// Which fairness terms enter the objective, and with what weight.
/// An empty constraint list is the pure-accuracy objective.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "SpecWire")]
pub struct ObjectiveSpec {
    constraints: Vec<Constraint>,
}

#[derive(Deserialize)]
struct SpecWire {
    #[serde(default)]
    constraints: Vec<Constraint>,
}

impl TryFrom<SpecWire> for ObjectiveSpec {
    type Error = ObjectiveError;

    fn try_from(w: SpecWire) -> Result<Self, Self::Error> {
        ObjectiveSpec::new(w.constraints)
    }
}

impl ObjectiveSpec {
    pub fn new(constraints: Vec<Constraint>) -> Result<Self, ObjectiveError> {
        for c in &constraints {
            if !(c.lambda.is_finite() && c.lambda >= 0.0) {
                return Err(ObjectiveError::InvalidLambda {
                    kind: c.kind,
                    lambda: c.lambda,
                });
            }
        }
        Ok(Self { constraints })
    }

    pub fn accuracy_only() -> Self {
        Self::default()
    }

    /// Every listed constraint with the same `lambda`.
    pub fn shared(kinds: &[FairnessKind], lambda: f64) -> Result<Self, ObjectiveError> {
        Self::new(
            kinds
                .iter()
                .map(|&kind| Constraint { kind, lambda })
                .collect(),
        )
    }

    /// Parses a comma-separated list such as `"EOd,DP"`.
    pub fn parse_kinds(list: &str) -> Result<Vec<FairnessKind>, ObjectiveError> {
        list.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(str::parse)
            .collect()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Same constraints, every weight replaced by `lambda`.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self, ObjectiveError> {
        Self::new(
            self.constraints
                .iter()
                .map(|c| Constraint {
                    kind: c.kind,
                    lambda,
                })
                .collect(),
        )
    }
}

/// The four fitted densities plus the cell sizes that weight them.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityBundle {
    densities: [[FittedDensity; 2]; 2],
    counts: Counts,
}

#[derive(Serialize, Deserialize)]
struct BundleWire {
    counts: Counts,
    densities: CellMap<FittedDensity>,
}

impl Serialize for DensityBundle {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        BundleWire {
            counts: self.counts,
            densities: CellMap::from_fn(|y, a| self.densities[y][a].clone()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DensityBundle {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let w = BundleWire::deserialize(deserializer)?;
        DensityBundle::new(w.densities.into_array(), w.counts).map_err(serde::de::Error::custom)
    }
}

/// Result of fitting a bundle: the chosen densities plus every candidate's
/// score, cell by cell.
#[derive(Debug, Clone)]
pub struct BundleFit {
    pub bundle: DensityBundle,
    pub scores: [[Vec<CandidateScore>; 2]; 2],
}

impl DensityBundle {
    /// `densities` is indexed `[y][a]`. Every cell count must be positive.
    pub fn new(densities: [[FittedDensity; 2]; 2], counts: Counts) -> Result<Self, ObjectiveError> {
        Self::check_counts(&counts)?;
        Ok(Self { densities, counts })
    }

    fn check_counts(counts: &Counts) -> Result<(), ObjectiveError> {
        for y in 0..2 {
            for a in 0..2 {
                if counts.n(y, a) == 0 {
                    return Err(ObjectiveError::EmptyCell { label: y, group: a });
                }
            }
        }
        Ok(())
    }

    /// Selects a density for each cell from `candidates` by mean NLL.
    pub fn fit(
        data: &GroupedLogits,
        candidates: &[Family],
        kde: &KdeOptions,
    ) -> Result<BundleFit, ObjectiveError> {
        // Empty cells are reported before any fitting starts.
        DensityBundle::check_counts(&data.counts())?;
        let mut scores: [[Vec<CandidateScore>; 2]; 2] = Default::default();
        let mut chosen: [[Option<FittedDensity>; 2]; 2] = Default::default();
        for y in 0..2 {
            for a in 0..2 {
                let xs = data.cell(y, a);
                let table = score_candidates(xs, candidates, kde);
                let best = best_candidate(&table).map_err(|source| ObjectiveError::CellFit {
                    label: y,
                    group: a,
                    source,
                })?;
                chosen[y][a] = Some(best);
                scores[y][a] = table;
            }
        }
        let densities = chosen.map(|row| row.map(|d| d.expect("every cell fitted")));
        Ok(BundleFit {
            bundle: DensityBundle::new(densities, data.counts())?,
            scores,
        })
    }

    #[inline]
    pub fn density(&self, label: usize, group: usize) -> &FittedDensity {
        &self.densities[label][group]
    }

    pub fn counts(&self) -> &Counts {
        &self.counts
    }

    /// Same densities with different counts.
    pub fn with_counts(&self, counts: Counts) -> Result<Self, ObjectiveError> {
        Self::new(self.densities.clone(), counts)
    }
}

/// Confusion-matrix rates per group, from the fitted densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSet {
    pub tp: [f64; 2],
    pub fp: [f64; 2],
    pub tn: [f64; 2],
    #[serde(rename = "fn")]
    pub fnr: [f64; 2],
}

impl RateSet {
    pub fn from_positive_rates(tp: [f64; 2], fp: [f64; 2]) -> Self {
        Self {
            tp,
            fp,
            tn: [1.0 - fp[0], 1.0 - fp[1]],
            fnr: [1.0 - tp[0], 1.0 - tp[1]],
        }
    }

    /// Positive-prediction rate of group `a`, `P(Ŷ=1 | A=a)`.
    pub fn selection_rate(&self, counts: &Counts, group: usize) -> Result<f64, ObjectiveError> {
        let size = counts.group_size(group);
        if size == 0 {
            return Err(ObjectiveError::EmptyGroup { group });
        }
        Ok((self.tp[group] * counts.n(1, group) as f64
            + self.fp[group] * counts.n(0, group) as f64)
            / size as f64)
    }
}

pub fn rates(bundle: &DensityBundle, theta: ThresholdPair) -> RateSet {
    let tp = [0, 1].map(|a| bundle.density(1, a).sf(theta.get(a)));
    let fp = [0, 1].map(|a| bundle.density(0, a).sf(theta.get(a)));
    RateSet::from_positive_rates(tp, fp)
}

/// Un-squared performance residual: the weighted error rate.
pub fn perf_residual(rates: &RateSet, counts: &Counts) -> f64 {
    (0..2)
        .map(|a| counts.fraction(0, a) * rates.fp[a] + counts.fraction(1, a) * rates.fnr[a])
        .sum()
}

pub fn perf_loss(rates: &RateSet, counts: &Counts) -> f64 {
    perf_residual(rates, counts).powi(2)
}

/// The one or two residuals whose squares make up a fairness term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FairResiduals {
    values: [f64; 2],
    len: usize,
}

impl FairResiduals {
    fn one(r: f64) -> Self {
        Self {
            values: [r, 0.0],
            len: 1,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.len]
    }

    pub fn sum_sq(&self) -> f64 {
        self.as_slice().iter().map(|r| r * r).sum()
    }
}

/// Signed residuals, always "group 1 minus group 0". EOd yields the EOp
/// residual followed by the PE residual.
pub fn fair_residuals(
    kind: FairnessKind,
    rates: &RateSet,
    counts: &Counts,
) -> Result<FairResiduals, ObjectiveError> {
    Ok(match kind {
        FairnessKind::EOp => FairResiduals::one(rates.tp[1] - rates.tp[0]),
        FairnessKind::PE => FairResiduals::one(rates.fp[1] - rates.fp[0]),
        FairnessKind::EOd => FairResiduals {
            values: [rates.tp[1] - rates.tp[0], rates.fp[1] - rates.fp[0]],
            len: 2,
        },
        FairnessKind::DP => {
            FairResiduals::one(rates.selection_rate(counts, 1)? - rates.selection_rate(counts, 0)?)
        }
    })
}

pub fn fair_loss(
    kind: FairnessKind,
    rates: &RateSet,
    counts: &Counts,
) -> Result<f64, ObjectiveError> {
    fair_residuals(kind, rates, counts).map(|r| r.sum_sq())
}

/// Loss from precomputed rates; `total_loss` is this at `rates(bundle, θ)`.
pub fn loss_from_rates(
    rates: &RateSet,
    counts: &Counts,
    spec: &ObjectiveSpec,
) -> Result<f64, ObjectiveError> {
    let mut loss = perf_loss(rates, counts);
    for c in spec.constraints() {
        loss += c.lambda * fair_loss(c.kind, rates, counts)?;
    }
    Ok(loss)
}

/// `L_per(θ) + Σ_k λ_k L_k(θ)`.
pub fn total_loss(
    bundle: &DensityBundle,
    theta: ThresholdPair,
    spec: &ObjectiveSpec,
) -> Result<f64, ObjectiveError> {
    loss_from_rates(&rates(bundle, theta), bundle.counts(), spec)
}
