//! Fairness/accuracy frontiers over λ, empirical checks of the CDF-gap
//! bounds, and the equalized-odds ROC intersection.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Sample;
use crate::density::DensityError;
use crate::metrics::{apply_thresholds, ConfusionCounts, Metric, MetricError, MetricSummary};
use crate::numeric::{bisect, golden_section_min, linspace};
use crate::objective::{rates, DensityBundle, ObjectiveError, ObjectiveSpec, ThresholdPair};
use crate::optimizer::{optimize, optimize_unified, OptimError, OptimOptions, OptimResult};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("the λ list is empty")]
    EmptyLambdas,
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error("grid size must be at least {min}, got {got}")]
    GridTooSmall { min: usize, got: usize },
    #[error("the group ROC curves do not cross inside the unit square")]
    NoIntersection,
    #[error("the group ROC curves coincide")]
    DegenerateCurves,
    #[error("line-segment construction needs {0}")]
    SegmentPrecondition(String),
    #[error("the segments q0 → (1, 1) and (0, 0) → q1 do not meet")]
    SegmentsDisjoint,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Converged,
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub lambda: f64,
    pub theta: ThresholdPair,
    pub objective_value: f64,
    pub iterations: usize,
    pub status: PointStatus,
    pub metrics: MetricSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    pub optim: OptimOptions,
    pub unified: bool,
    /// Start each λ from the previous λ's thresholds instead of `optim.init`.
    /// Forces sequential evaluation.
    pub warm_start: bool,
}

fn solve(
    bundle: &DensityBundle,
    spec: &ObjectiveSpec,
    opts: &SweepOptions,
    init: ThresholdPair,
) -> Result<(OptimResult, PointStatus), OptimError> {
    let o = OptimOptions { init, ..opts.optim };
    let run = if opts.unified {
        optimize_unified
    } else {
        optimize
    };
    match run(bundle, spec, &o) {
        Ok(r) => Ok((r, PointStatus::Converged)),
        Err(OptimError::Stalled(r)) => Ok((*r, PointStatus::Stalled)),
        Err(OptimError::MaxIterations(r)) => Ok((*r, PointStatus::MaxIterations)),
        Err(e) => Err(e),
    }
}

/// One frontier point per λ, in input order. Every constraint of `template`
/// gets weight λ. Unconverged points are kept and flagged.
pub fn sweep_lambda(
    bundle: &DensityBundle,
    template: &ObjectiveSpec,
    lambdas: &[f64],
    eval_samples: &[Sample],
    opts: &SweepOptions,
) -> Result<Vec<FrontierPoint>, AnalysisError> {
    if lambdas.is_empty() {
        return Err(AnalysisError::EmptyLambdas);
    }
    let specs = lambdas
        .iter()
        .map(|&l| template.with_lambda(l))
        .collect::<Result<Vec<_>, _>>()?;
    let point = |lambda: f64,
                 (r, status): (OptimResult, PointStatus)|
     -> Result<FrontierPoint, AnalysisError> {
        let preds = apply_thresholds(eval_samples, r.theta);
        let counts = ConfusionCounts::from_predictions(eval_samples, &preds)?;
        Ok(FrontierPoint {
            lambda,
            theta: r.theta,
            objective_value: r.loss,
            iterations: r.iterations,
            status,
            metrics: MetricSummary::from_counts(&counts),
        })
    };
    if opts.warm_start {
        let mut init = opts.optim.init;
        let mut out = Vec::with_capacity(lambdas.len());
        for (lambda, spec) in lambdas.iter().zip(&specs) {
            let solved = solve(bundle, spec, opts, init)?;
            init = solved.0.theta;
            out.push(point(*lambda, solved)?);
        }
        Ok(out)
    } else {
        lambdas
            .par_iter()
            .zip(specs.par_iter())
            .map(|(&lambda, spec)| point(lambda, solve(bundle, spec, opts, opts.optim.init)?))
            .collect()
    }
}

/// Indices of points not dominated by any other: `j` dominates `i` when it
/// has strictly lower fairness violation and strictly higher accuracy.
/// Input pairs are `(violation, accuracy)`.
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    // Ascending violation; among ties, descending accuracy.
    order.sort_by(|&i, &j| {
        points[i]
            .0
            .total_cmp(&points[j].0)
            .then(points[j].1.total_cmp(&points[i].1))
    });
    let mut keep = Vec::new();
    // Best accuracy among points with strictly smaller violation.
    let mut best_before = f64::NEG_INFINITY;
    let mut k = 0;
    while k < order.len() {
        let v = points[order[k]].0;
        let mut end = k;
        let mut best_here = f64::NEG_INFINITY;
        while end < order.len() && points[order[end]].0 == v {
            best_here = best_here.max(points[order[end]].1);
            end += 1;
        }
        for &i in &order[k..end] {
            if !(best_before > points[i].1) {
                keep.push(i);
            }
        }
        best_before = best_before.max(best_here);
        k = end;
    }
    keep.sort_unstable();
    keep
}

/// Nondominated frontier points. Points where either metric is undefined
/// are dropped.
pub fn pareto_front(
    points: &[FrontierPoint],
    fairness: Metric,
    accuracy: Metric,
) -> Vec<FrontierPoint> {
    let defined: Vec<(usize, (f64, f64))> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| Some((i, (p.metrics.get(fairness)?, p.metrics.get(accuracy)?))))
        .collect();
    let pairs: Vec<(f64, f64)> = defined.iter().map(|d| d.1).collect();
    pareto_indices(&pairs)
        .into_iter()
        .map(|k| points[defined[k].0].clone())
        .collect()
}

/// CSV with header `lambda,theta0,theta1,acc,eop,eod,dimp,bd`; undefined
/// metrics are written as `n/a`.
pub fn write_frontier_csv<W: Write>(points: &[FrontierPoint], w: W) -> Result<(), AnalysisError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "lambda", "theta0", "theta1", "acc", "eop", "eod", "dimp", "bd",
    ])
    .map_err(csv_io)?;
    let fmt = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| v.to_string());
    for p in points {
        let m = &p.metrics;
        wr.write_record([
            p.lambda.to_string(),
            p.theta.theta0.to_string(),
            p.theta.theta1.to_string(),
            fmt(m.acc),
            fmt(m.eop),
            fmt(m.eod),
            fmt(m.one_minus_dimp),
            fmt(m.bd),
        ])
        .map_err(csv_io)?;
    }
    wr.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> AnalysisError {
    AnalysisError::Io(std::io::Error::other(e))
}

/// Constants of the CDF-gap bounds, indexed `[y]` or `[y][a]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// `sup_x |F_y1(x) - F_y0(x)|`.
    pub u: [f64; 2],
    /// `sup_x f_ya(x)`.
    pub f_hat: [[f64; 2]; 2],
    /// Largest slope of `F_ya^{-1}` over the quantile grid on `[0.001, 0.999]`.
    pub m: [[f64; 2]; 2],
}

pub const LIPSCHITZ_QUANTILES: (f64, f64) = (0.001, 0.999);

pub fn estimate_bound_constants(
    bundle: &DensityBundle,
    grid_size: usize,
) -> Result<BoundConstants, AnalysisError> {
    if grid_size < 100 {
        return Err(AnalysisError::GridTooSmall {
            min: 100,
            got: grid_size,
        });
    }
    let mut u = [0.0; 2];
    for (y, u_y) in u.iter_mut().enumerate() {
        let (d0, d1) = (bundle.density(y, 0), bundle.density(y, 1));
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for d in [d0, d1] {
            lo = lo.min(d.inv_cdf(1e-9)?);
            hi = hi.max(d.inv_cdf(1.0 - 1e-9)?);
        }
        let gap = |x: f64| (d1.cdf(x) - d0.cdf(x)).abs();
        let step = (hi - lo) / (grid_size - 1) as f64;
        let (bx, bv) = linspace(lo, hi, grid_size)
            .map(|x| (x, gap(x)))
            .fold((lo, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        let (_, neg) = golden_section_min(|x| -gap(x), bx - step, bx + step, 1e-12, 200);
        *u_y = bv.max(-neg).min(1.0);
    }
    let mut f_hat = [[0.0; 2]; 2];
    let mut m = [[0.0; 2]; 2];
    let ps: Vec<f64> = linspace(LIPSCHITZ_QUANTILES.0, LIPSCHITZ_QUANTILES.1, grid_size).collect();
    for y in 0..2 {
        for a in 0..2 {
            let d = bundle.density(y, a);
            f_hat[y][a] = d.max_pdf();
            let qs = ps
                .iter()
                .map(|&p| d.inv_cdf(p))
                .collect::<Result<Vec<_>, _>>()?;
            m[y][a] = ps
                .windows(2)
                .zip(qs.windows(2))
                .map(|(p, q)| (q[1] - q[0]) / (p[1] - p[0]))
                .fold(0.0, f64::max);
        }
    }
    Ok(BoundConstants { u, f_hat, m })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapBound {
    /// `|FP_0 - FP_1| <= u_0 + f̂_01 M_10 u_1` on perfect equal opportunity.
    FalsePositiveUnderEOp,
    /// `|FN_0 - FN_1| <= u_1 + f̂_11 M_00 u_0` on perfect predictive equality.
    FalseNegativeUnderPE,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapBoundReport {
    pub bound_kind: GapBound,
    pub trials: usize,
    pub bound: f64,
    pub max_gap: f64,
    pub violations: usize,
    pub pass: bool,
}

/// Quantile levels of the matched cdf at which trial thresholds are placed.
pub const TRIAL_QUANTILES: (f64, f64) = (0.01, 0.99);

/// Checks both gap bounds at `num_trials` evenly spaced interior quantiles.
///
/// For the first bound, `θ1 = F_11^{-1}(p)` and `θ0 = F_10^{-1}(p)` so the
/// true-positive rates match; the second matches false-positive rates
/// through `F_01` and `F_00`.
pub fn verify_gap_bound(
    bundle: &DensityBundle,
    constants: &BoundConstants,
    num_trials: usize,
) -> Result<[GapBoundReport; 2], AnalysisError> {
    let c = constants;
    let levels: Vec<f64> = (0..num_trials)
        .map(|i| {
            let (lo, hi) = TRIAL_QUANTILES;
            lo + (hi - lo) * (i as f64 + 0.5) / num_trials as f64
        })
        .collect();
    let mut out = Vec::with_capacity(2);
    for kind in [
        GapBound::FalsePositiveUnderEOp,
        GapBound::FalseNegativeUnderPE,
    ] {
        let (y, bound) = match kind {
            GapBound::FalsePositiveUnderEOp => (1, c.u[0] + c.f_hat[0][1] * c.m[1][0] * c.u[1]),
            GapBound::FalseNegativeUnderPE => (0, c.u[1] + c.f_hat[1][1] * c.m[0][0] * c.u[0]),
        };
        let mut max_gap: f64 = 0.0;
        let mut violations = 0;
        for &p in &levels {
            let theta = ThresholdPair::new(
                bundle.density(y, 0).inv_cdf(p)?,
                bundle.density(y, 1).inv_cdf(p)?,
            );
            let r = rates(bundle, theta);
            let gap = match kind {
                GapBound::FalsePositiveUnderEOp => (r.fp[0] - r.fp[1]).abs(),
                GapBound::FalseNegativeUnderPE => (r.fnr[0] - r.fnr[1]).abs(),
            };
            max_gap = max_gap.max(gap);
            if gap > bound {
                violations += 1;
            }
        }
        out.push(GapBoundReport {
            bound_kind: kind,
            trials: num_trials,
            bound,
            max_gap,
            violations,
            pass: violations == 0,
        });
    }
    Ok([out[0], out[1]])
}

/// A point in ROC space, `(FP, TP)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fp: f64,
    pub tp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EodIntersection {
    /// Where the two group ROC curves cross, with the thresholds reaching it.
    pub curve_point: RocPoint,
    pub theta: ThresholdPair,
    /// Crossing of segment `q0 → (1, 1)` with segment `(0, 0) → q1`, where
    /// `q_a` is group `a`'s ROC point at the base thresholds.
    pub segment_point: RocPoint,
}

const SCAN_POINTS: usize = 2000;

/// Both equalized-odds points. `base` gives the ROC points `q_a` used by the
/// line-segment construction; group 1's must lie to the right of group 0's
/// and both above the diagonal.
pub fn eod_intersection(
    bundle: &DensityBundle,
    base: ThresholdPair,
) -> Result<EodIntersection, AnalysisError> {
    let (d10, d11) = (bundle.density(1, 0), bundle.density(1, 1));
    // Along θ1, pick θ0 with the same true-positive rate; a crossing is where
    // the false-positive rates also agree.
    let theta0_of = |t1: f64| d10.inv_cdf(d11.cdf(t1).clamp(1e-15, 1.0 - 1e-15));
    let gap = |t1: f64| -> f64 {
        match theta0_of(t1) {
            Ok(t0) => bundle.density(0, 1).sf(t1) - bundle.density(0, 0).sf(t0),
            Err(_) => f64::NAN,
        }
    };
    let ts: Vec<f64> = linspace(1e-4, 1.0 - 1e-4, SCAN_POINTS)
        .map(|p| d11.inv_cdf(p))
        .collect::<Result<_, _>>()?;
    let gs: Vec<f64> = ts.iter().map(|&t| gap(t)).collect();
    if gs.iter().all(|g| g.abs() < 1e-12) {
        return Err(AnalysisError::DegenerateCurves);
    }
    let mut best: Option<(f64, ThresholdPair, RocPoint)> = None;
    for k in 0..ts.len() - 1 {
        let (g0, g1) = (gs[k], gs[k + 1]);
        if !(g0.is_finite() && g1.is_finite()) || g0.signum() == g1.signum() && g0 != 0.0 {
            continue;
        }
        let Some(t1) = bisect(gap, ts[k], ts[k + 1], 1e-13, 200) else {
            continue;
        };
        let theta = ThresholdPair::new(theta0_of(t1)?, t1);
        let r = rates(bundle, theta);
        let pt = RocPoint {
            fp: 0.5 * (r.fp[0] + r.fp[1]),
            tp: 0.5 * (r.tp[0] + r.tp[1]),
        };
        // Of several crossings keep the one furthest above the diagonal.
        let score = pt.tp - pt.fp;
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, theta, pt));
        }
    }
    let (_, theta, curve_point) = best.ok_or(AnalysisError::NoIntersection)?;

    let r = rates(bundle, base);
    let q0 = RocPoint {
        fp: r.fp[0],
        tp: r.tp[0],
    };
    let q1 = RocPoint {
        fp: r.fp[1],
        tp: r.tp[1],
    };
    Ok(EodIntersection {
        curve_point,
        theta,
        segment_point: segment_intersection(q0, q1)?,
    })
}

/// Intersection of segment `q0 → (1, 1)` with segment `(0, 0) → q1`.
pub fn segment_intersection(q0: RocPoint, q1: RocPoint) -> Result<RocPoint, AnalysisError> {
    if !(q1.fp > q0.fp) {
        return Err(AnalysisError::SegmentPrecondition(format!(
            "group 1's FP ({}) to exceed group 0's ({})",
            q1.fp, q0.fp
        )));
    }
    if !(q0.tp > q0.fp && q1.tp > q1.fp) {
        return Err(AnalysisError::SegmentPrecondition(
            "both base ROC points above the diagonal".into(),
        ));
    }
    // q0 + s (1 - q0) = t q1, solved for (s, t) by Cramer's rule.
    let (a11, a12) = (1.0 - q0.fp, -q1.fp);
    let (a21, a22) = (1.0 - q0.tp, -q1.tp);
    let (b1, b2) = (-q0.fp, -q0.tp);
    let det = a11 * a22 - a12 * a21;
    if det == 0.0 {
        return Err(AnalysisError::SegmentsDisjoint);
    }
    let s = (b1 * a22 - a12 * b2) / det;
    let t = (a11 * b2 - b1 * a21) / det;
    if !((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t)) {
        return Err(AnalysisError::SegmentsDisjoint);
    }
    Ok(RocPoint {
        fp: t * q1.fp,
        tp: t * q1.tp,
    })
}
