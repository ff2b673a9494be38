//! Per-cell densities of classifier logits.
//!
//! Every cell `(y, a)` of the data gets its own univariate density. The
//! optimizer only ever touches these through [`FittedDensity::pdf`],
//! [`FittedDensity::cdf`] and [`FittedDensity::sf`], so once a density is
//! fitted the raw logits are no longer needed.
//!
//! Parametric candidates (gaussian, Student's t, location-shifted gamma) are
//! fitted by maximum likelihood; [`select_density`] keeps the candidate with
//! the lowest mean negative log-likelihood. The binned-gaussian KDE handles
//! multimodal cells the parametric families cannot.

mod fit;
mod kde;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use libm::erfc;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};
use thiserror::Error;

pub use fit::{fit_gamma_loc, fit_gaussian, fit_student_t, MIN_NUMERIC_FIT_SAMPLES};
pub use kde::{default_kde_bins, fit_kde, KdeDensity, KdeOptions, DEFAULT_KERNEL_SD};

use crate::numeric;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("{family} needs at least {need} samples, got {got}")]
    TooFewSamples {
        family: Family,
        need: usize,
        got: usize,
    },
    #[error("{family} fit failed: {reason}")]
    FitFailure { family: Family, reason: String },
    #[error("sample {x} has zero density; negative log-likelihood is infinite")]
    InfiniteNll { x: f64 },
    #[error("no candidate family could be fitted ({0})")]
    AllFitsFailed(String),
    #[error("probability {p} is outside (0, 1)")]
    OutOfSupport { p: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
}

/// Candidate density families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    StudentT,
    GammaLoc,
    Kde,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Gaussian,
        Family::StudentT,
        Family::GammaLoc,
        Family::Kde,
    ];
    /// The parametric set used when no family list is given.
    pub const PARAMETRIC: [Family; 3] = [Family::Gaussian, Family::StudentT, Family::GammaLoc];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::StudentT => "student_t",
            Family::GammaLoc => "gamma_loc",
            Family::Kde => "kde",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" | "norm" => Ok(Family::Gaussian),
            "student_t" | "student-t" | "t" | "studentt" => Ok(Family::StudentT),
            "gamma_loc" | "gamma" => Ok(Family::GammaLoc),
            "kde" => Ok(Family::Kde),
            other => Err(format!(
                "unknown density family `{other}` (expected gaussian|student_t|gamma|kde)"
            )),
        }
    }
}

/// A fitted univariate density.
///
/// JSON form is `{"family": ..., "params": [...]}` for the parametric
/// families, with params ordered `[mean, sd]`, `[df, loc, scale]` and
/// `[shape, scale, loc]`; KDE carries `centers`, `weights` and `kernel_sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "DensityWire", try_from = "DensityWire")]
pub enum FittedDensity {
    Gaussian { mean: f64, sd: f64 },
    StudentT { df: f64, loc: f64, scale: f64 },
    GammaLoc { shape: f64, scale: f64, loc: f64 },
    Kde(KdeDensity),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
enum DensityWire {
    Gaussian {
        params: [f64; 2],
    },
    StudentT {
        params: [f64; 3],
    },
    GammaLoc {
        params: [f64; 3],
    },
    Kde {
        centers: Vec<f64>,
        weights: Vec<f64>,
        kernel_sd: f64,
    },
}

impl From<FittedDensity> for DensityWire {
    fn from(d: FittedDensity) -> Self {
        match d {
            FittedDensity::Gaussian { mean, sd } => DensityWire::Gaussian { params: [mean, sd] },
            FittedDensity::StudentT { df, loc, scale } => DensityWire::StudentT {
                params: [df, loc, scale],
            },
            FittedDensity::GammaLoc { shape, scale, loc } => DensityWire::GammaLoc {
                params: [shape, scale, loc],
            },
            FittedDensity::Kde(k) => {
                let (centers, weights, kernel_sd) = k.into_parts();
                DensityWire::Kde {
                    centers,
                    weights,
                    kernel_sd,
                }
            }
        }
    }
}

impl TryFrom<DensityWire> for FittedDensity {
    type Error = DensityError;

    fn try_from(w: DensityWire) -> Result<Self, Self::Error> {
        let d = match w {
            DensityWire::Gaussian { params: [mean, sd] } => FittedDensity::Gaussian { mean, sd },
            DensityWire::StudentT {
                params: [df, loc, scale],
            } => FittedDensity::StudentT { df, loc, scale },
            DensityWire::GammaLoc {
                params: [shape, scale, loc],
            } => FittedDensity::GammaLoc { shape, scale, loc },
            DensityWire::Kde {
                centers,
                weights,
                kernel_sd,
            } => FittedDensity::Kde(KdeDensity::new(centers, weights, kernel_sd)?),
        };
        d.validate()?;
        Ok(d)
    }
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub(crate) fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

impl FittedDensity {
    pub fn family(&self) -> Family {
        match self {
            FittedDensity::Gaussian { .. } => Family::Gaussian,
            FittedDensity::StudentT { .. } => Family::StudentT,
            FittedDensity::GammaLoc { .. } => Family::GammaLoc,
            FittedDensity::Kde(_) => Family::Kde,
        }
    }

    fn validate(&self) -> Result<(), DensityError> {
        let ok = |v: f64| v.is_finite();
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let valid = match *self {
            FittedDensity::Gaussian { mean, sd } => ok(mean) && pos(sd),
            FittedDensity::StudentT { df, loc, scale } => pos(df) && ok(loc) && pos(scale),
            FittedDensity::GammaLoc { shape, scale, loc } => pos(shape) && pos(scale) && ok(loc),
            FittedDensity::Kde(_) => true,
        };
        if valid {
            Ok(())
        } else {
            Err(DensityError::InvalidParameters(format!("{self:?}")))
        }
    }

    /// Interval outside which the density is exactly zero.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            FittedDensity::GammaLoc { loc, .. } => (loc, f64::INFINITY),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            FittedDensity::Kde(k) => k.pdf(x),
            _ => self.ln_pdf(x).exp(),
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            FittedDensity::Gaussian { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - LN_SQRT_2PI - sd.ln()
            }
            FittedDensity::StudentT { df, loc, scale } => {
                let z = (x - loc) / scale;
                ln_gamma(0.5 * (df + 1.0))
                    - ln_gamma(0.5 * df)
                    - 0.5 * (df * PI).ln()
                    - scale.ln()
                    - 0.5 * (df + 1.0) * (z * z / df).ln_1p()
            }
            FittedDensity::GammaLoc { shape, scale, loc } => {
                let y = x - loc;
                if y <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                (shape - 1.0) * y.ln() - y / scale - ln_gamma(shape) - shape * scale.ln()
            }
            FittedDensity::Kde(ref k) => k.pdf(x).ln(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            FittedDensity::Gaussian { mean, sd } => std_normal_cdf((x - mean) / sd),
            FittedDensity::StudentT { df, loc, scale } => {
                let z = (x - loc) / scale;
                let tail = 0.5 * beta_reg(0.5 * df, 0.5, df / (df + z * z));
                if z < 0.0 {
                    tail
                } else {
                    1.0 - tail
                }
            }
            FittedDensity::GammaLoc { shape, scale, loc } => {
                let y = x - loc;
                if y <= 0.0 {
                    0.0
                } else if y.is_infinite() {
                    1.0
                } else {
                    gamma_lr(shape, y / scale)
                }
            }
            FittedDensity::Kde(ref k) => k.cdf(x),
        }
    }

    /// Survival function `1 - cdf(x)`, computed without cancellation in the
    /// upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        match *self {
            FittedDensity::Gaussian { mean, sd } => std_normal_cdf(-(x - mean) / sd),
            FittedDensity::StudentT { df, loc, scale } => {
                let z = (x - loc) / scale;
                let tail = 0.5 * beta_reg(0.5 * df, 0.5, df / (df + z * z));
                if z > 0.0 {
                    tail
                } else {
                    1.0 - tail
                }
            }
            FittedDensity::GammaLoc { shape, scale, loc } => {
                let y = x - loc;
                if y <= 0.0 {
                    1.0
                } else if y.is_infinite() {
                    0.0
                } else {
                    gamma_ur(shape, y / scale)
                }
            }
            FittedDensity::Kde(ref k) => k.sf(x),
        }
    }

    /// Mean where it exists, otherwise a central location.
    pub fn center(&self) -> f64 {
        match *self {
            FittedDensity::Gaussian { mean, .. } => mean,
            FittedDensity::StudentT { loc, .. } => loc,
            FittedDensity::GammaLoc { shape, scale, loc } => loc + shape * scale,
            FittedDensity::Kde(ref k) => k.mean(),
        }
    }

    /// A length scale used to seed bracket searches.
    pub fn spread(&self) -> f64 {
        match *self {
            FittedDensity::Gaussian { sd, .. } => sd,
            FittedDensity::StudentT { scale, .. } => scale,
            FittedDensity::GammaLoc { shape, scale, .. } => shape.sqrt() * scale,
            FittedDensity::Kde(ref k) => k.variance().sqrt(),
        }
    }

    /// Quantile function by bracketed bisection; absolute tolerance `1e-13`.
    pub fn inv_cdf(&self, p: f64) -> Result<f64, DensityError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(DensityError::OutOfSupport { p });
        }
        let center = self.center();
        let (support_lo, _) = self.support();
        let mut width = self.spread().max(1e-12);
        let mut lo = (center - width).max(support_lo);
        let mut hi = center + width;
        while self.cdf(lo) > p {
            width *= 2.0;
            lo = (center - width).max(support_lo);
            if !lo.is_finite() {
                return Err(DensityError::OutOfSupport { p });
            }
        }
        width = self.spread().max(1e-12);
        while self.cdf(hi) < p {
            width *= 2.0;
            hi = center + width;
            if !hi.is_finite() {
                return Err(DensityError::OutOfSupport { p });
            }
        }
        numeric::bisect(|x| self.cdf(x) - p, lo, hi, 1e-13, 400)
            .ok_or(DensityError::OutOfSupport { p })
    }

    /// `sup_x pdf(x)`. Analytic at the mode for the parametric families
    /// (infinite for a gamma with shape below one); a 4096-point grid
    /// estimate for KDE.
    pub fn max_pdf(&self) -> f64 {
        match *self {
            FittedDensity::Gaussian { sd, .. } => 1.0 / (sd * (2.0 * PI).sqrt()),
            FittedDensity::StudentT { df, scale, .. } => {
                (ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df)).exp() / ((df * PI).sqrt() * scale)
            }
            FittedDensity::GammaLoc { shape, scale, loc } => {
                if shape < 1.0 {
                    f64::INFINITY
                } else if shape == 1.0 {
                    1.0 / scale
                } else {
                    self.pdf(loc + (shape - 1.0) * scale)
                }
            }
            FittedDensity::Kde(ref k) => k.max_pdf_grid(4096),
        }
    }
}

/// `-(1/n) Σ ln pdf(x_i)`.
pub fn mean_nll(density: &FittedDensity, samples: &[f64]) -> Result<f64, DensityError> {
    if samples.is_empty() {
        return Err(DensityError::DegenerateSample("no samples".into()));
    }
    let mut total = 0.0;
    for &x in samples {
        let lp = density.ln_pdf(x);
        if lp == f64::NEG_INFINITY || lp.is_nan() {
            return Err(DensityError::InfiniteNll { x });
        }
        total -= lp;
    }
    Ok(total / samples.len() as f64)
}

/// Fit of one candidate family, successful or not.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub family: Family,
    pub outcome: Result<(FittedDensity, f64), DensityError>,
}

impl CandidateScore {
    pub fn nll(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|(_, nll)| *nll)
    }
}

pub fn fit_family(
    family: Family,
    samples: &[f64],
    kde: &KdeOptions,
) -> Result<FittedDensity, DensityError> {
    match family {
        Family::Gaussian => fit_gaussian(samples),
        Family::StudentT => fit_student_t(samples),
        Family::GammaLoc => fit_gamma_loc(samples),
        Family::Kde => {
            fit_kde(samples, kde.bins_for(samples.len()), kde.kernel_sd).map(FittedDensity::Kde)
        }
    }
}

/// Fits every candidate and scores it by mean NLL on the fitting samples.
pub fn score_candidates(
    samples: &[f64],
    candidates: &[Family],
    kde: &KdeOptions,
) -> Vec<CandidateScore> {
    candidates
        .iter()
        .map(|&family| {
            let outcome = fit_family(family, samples, kde)
                .and_then(|d| mean_nll(&d, samples).map(|nll| (d, nll)));
            CandidateScore { family, outcome }
        })
        .collect()
}

/// Picks the lowest-NLL fit from a scored table; ties go to the earlier
/// candidate.
pub fn best_candidate(scores: &[CandidateScore]) -> Result<FittedDensity, DensityError> {
    let mut best: Option<(&FittedDensity, f64)> = None;
    for s in scores {
        if let Ok((d, nll)) = &s.outcome {
            if best.is_none_or(|(_, b)| *nll < b) {
                best = Some((d, *nll));
            }
        }
    }
    best.map(|(d, _)| d.clone()).ok_or_else(|| {
        DensityError::AllFitsFailed(
            scores
                .iter()
                .filter_map(|s| {
                    s.outcome
                        .as_ref()
                        .err()
                        .map(|e| format!("{}: {e}", s.family))
                })
                .collect::<Vec<_>>()
                .join("; "),
        )
    })
}

/// Fits each candidate family and returns the one with minimum mean NLL.
/// Families whose fit fails are skipped.
pub fn select_density(
    samples: &[f64],
    candidates: &[Family],
    kde: &KdeOptions,
) -> Result<FittedDensity, DensityError> {
    best_candidate(&score_candidates(samples, candidates, kde))
}
