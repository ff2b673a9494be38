//! Per-group Gauss–Newton on the threshold objective.
//!
//! For group `a` the residuals are linearized in `Δ_a = θ_a' - θ_a` alone
//! (only the diagonal of `JᵀJ` is kept):
//!
//! ```text
//! (η + αΔ_a)² + Σ_k λ_k (ε_k + β_k Δ_a)²
//! ```
//!
//! and its minimizer `Δ_a = -(αη + Σ λβε) / (α² + Σ λβ²)` is proposed.
//! A proposal is accepted only if it lowers the true loss; otherwise it is
//! shrunk by `cut_factor` up to `max_cuts` times.
//!
//! By default both group steps are proposed and cut from the same point and
//! then applied together (shrunk further if the combination overshoots),
//! which keeps identical groups exactly in lockstep.
//! [`SweepOrder::Alternating`] instead moves `θ1` and then `θ0` from the
//! updated point.
//!
//! Large `λ` makes progress along the fair manifold slow: the fairness
//! derivatives sit in the denominator of every step even where the fairness
//! residuals vanish.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objective::{
    fair_residuals, loss_from_rates, perf_residual, rates, total_loss, DensityBundle, FairnessKind,
    ObjectiveError, ObjectiveSpec, ThresholdPair,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("optimizer stalled: {}", .0.stall_reason.as_deref().unwrap_or("no descent"))]
    Stalled(Box<OptimResult>),
    #[error("no convergence after {} iterations", .0.iterations)]
    MaxIterations(Box<OptimResult>),
    #[error("invalid optimizer options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

impl OptimError {
    /// The partial result carried by `Stalled` and `MaxIterations`.
    pub fn partial(&self) -> Option<&OptimResult> {
        match self {
            OptimError::Stalled(r) | OptimError::MaxIterations(r) => Some(r),
            _ => None,
        }
    }

    pub fn into_partial(self) -> Option<OptimResult> {
        match self {
            OptimError::Stalled(r) | OptimError::MaxIterations(r) => Some(*r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub cut_factor: f64,
    pub max_cuts: usize,
    /// Starting point; the standard start is `(0, 0)`.
    pub init: ThresholdPair,
    pub sweep: SweepOrder,
}

/// How the two per-group steps of a sweep are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    /// Both steps proposed and cut from the same point, then applied together.
    #[default]
    Simultaneous,
    /// `θ1` first, then `θ0` from the updated point, each cut on its own.
    Alternating,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-6,
            cut_factor: 0.5,
            // 30 halvings cannot shrink the pure-accuracy step (which grows
            // like 1/α near the optimum) below 1e-6; 60 can.
            max_cuts: 60,
            init: ThresholdPair::default(),
            sweep: SweepOrder::default(),
        }
    }
}

impl OptimOptions {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: String| Err(OptimError::InvalidOptions(m));
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.cut_factor > 0.0 && self.cut_factor < 1.0) {
            return bad(format!(
                "cut_factor must lie in (0, 1), got {}",
                self.cut_factor
            ));
        }
        if !self.init.is_finite() {
            return bad("initial thresholds must be finite".into());
        }
        Ok(())
    }
}

/// One weighted fairness residual and its derivative in the active threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualTerm {
    pub kind: FairnessKind,
    pub lambda: f64,
    pub beta: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCoeffs {
    pub alpha: f64,
    pub eta: f64,
    pub terms: Vec<ResidualTerm>,
}

/// Which threshold(s) a step moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Active {
    Group(usize),
    /// Both thresholds together.
    Unified,
}

/// Derivatives of a constraint's residuals with respect to `θ_a`, in the
/// order produced by [`fair_residuals`].
fn residual_derivatives(
    kind: FairnessKind,
    bundle: &DensityBundle,
    theta: ThresholdPair,
    a: usize,
) -> [f64; 2] {
    let t = theta.get(a);
    // Residuals are "group 1 minus group 0", and every rate falls as θ_a rises.
    let sign = if a == 1 { -1.0 } else { 1.0 };
    let f1 = bundle.density(1, a).pdf(t);
    let f0 = bundle.density(0, a).pdf(t);
    match kind {
        FairnessKind::EOp => [sign * f1, 0.0],
        FairnessKind::PE => [sign * f0, 0.0],
        FairnessKind::EOd => [sign * f1, sign * f0],
        FairnessKind::DP => {
            let c = bundle.counts();
            let n1 = c.n(1, a) as f64;
            let n0 = c.n(0, a) as f64;
            [sign * (n1 * f1 + n0 * f0) / (n0 + n1), 0.0]
        }
    }
}

fn alpha_for(bundle: &DensityBundle, theta: ThresholdPair, a: usize) -> f64 {
    let c = bundle.counts();
    let t = theta.get(a);
    c.fraction(1, a) * bundle.density(1, a).pdf(t) - c.fraction(0, a) * bundle.density(0, a).pdf(t)
}

/// Residuals at `theta` and their derivatives in the active threshold.
pub fn step_coefficients(
    bundle: &DensityBundle,
    theta: ThresholdPair,
    spec: &ObjectiveSpec,
    active: Active,
) -> Result<StepCoeffs, ObjectiveError> {
    let groups: &[usize] = match active {
        Active::Group(0) => &[0],
        Active::Group(_) => &[1],
        Active::Unified => &[0, 1],
    };
    let r = rates(bundle, theta);
    let counts = bundle.counts();
    let alpha = groups.iter().map(|&a| alpha_for(bundle, theta, a)).sum();
    let mut terms = Vec::new();
    for c in spec.constraints() {
        let eps = fair_residuals(c.kind, &r, counts)?;
        let mut beta = [0.0; 2];
        for &a in groups {
            let d = residual_derivatives(c.kind, bundle, theta, a);
            beta[0] += d[0];
            beta[1] += d[1];
        }
        for (i, &epsilon) in eps.as_slice().iter().enumerate() {
            terms.push(ResidualTerm {
                kind: c.kind,
                lambda: c.lambda,
                beta: beta[i],
                epsilon,
            });
        }
    }
    Ok(StepCoeffs {
        alpha,
        eta: perf_residual(&r, counts),
        terms,
    })
}

/// Minimizer of the linearized objective; zero when the model is flat.
pub fn gauss_newton_step(coeffs: &StepCoeffs) -> f64 {
    let mut num = coeffs.alpha * coeffs.eta;
    let mut den = coeffs.alpha * coeffs.alpha;
    for t in &coeffs.terms {
        num += t.lambda * t.beta * t.epsilon;
        den += t.lambda * t.beta * t.beta;
    }
    if den == 0.0 || !den.is_finite() || !num.is_finite() {
        0.0
    } else {
        -num / den
    }
}

/// Value of the linearized objective at step `delta`.
pub fn quadratic_model(coeffs: &StepCoeffs, delta: f64) -> f64 {
    (coeffs.eta + coeffs.alpha * delta).powi(2)
        + coeffs
            .terms
            .iter()
            .map(|t| t.lambda * (t.epsilon + t.beta * delta).powi(2))
            .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub theta: ThresholdPair,
    pub loss: f64,
    /// Accepted steps this sweep (zero when nothing was accepted).
    pub delta0: f64,
    pub delta1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub theta: ThresholdPair,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stall_reason: Option<String>,
    pub unified: bool,
    /// Starts with the initial point at iteration 0.
    pub trace: Vec<TraceRecord>,
}

struct LineOutcome {
    scale: f64,
    settled: bool,
    exhausted: bool,
}

/// Shift-cutting along a fixed step whose largest component is `norm`: try
/// scales `cut^j`, `j = 0..=max_cuts`, and keep the first that lowers the loss.
fn cut_search(
    norm: f64,
    loss: &mut f64,
    theta: &mut ThresholdPair,
    apply: impl Fn(ThresholdPair, f64) -> ThresholdPair,
    eval: impl Fn(ThresholdPair) -> Result<f64, ObjectiveError>,
    opts: &OptimOptions,
) -> Result<LineOutcome, ObjectiveError> {
    if norm == 0.0 {
        return Ok(LineOutcome {
            scale: 0.0,
            settled: true,
            exhausted: false,
        });
    }
    let mut scale = 1.0;
    for _ in 0..=opts.max_cuts {
        let cand = apply(*theta, scale);
        let l = eval(cand)?;
        if l < *loss {
            *theta = cand;
            *loss = l;
            return Ok(LineOutcome {
                scale,
                settled: scale * norm < opts.tol,
                exhausted: false,
            });
        }
        scale *= opts.cut_factor;
    }
    // If even the smallest step tried is below tolerance there is no descent
    // at the resolution we care about.
    let smallest = scale / opts.cut_factor * norm;
    Ok(LineOutcome {
        scale: 0.0,
        settled: smallest < opts.tol,
        exhausted: true,
    })
}

fn run(
    bundle: &DensityBundle,
    spec: &ObjectiveSpec,
    opts: &OptimOptions,
    unified: bool,
) -> Result<OptimResult, OptimError> {
    opts.validate()?;
    let counts = bundle.counts();
    let eval = |th: ThresholdPair| loss_from_rates(&rates(bundle, th), counts, spec);
    let mut theta = if unified {
        ThresholdPair::unified(opts.init.theta1)
    } else {
        opts.init
    };
    let mut loss = eval(theta)?;
    let mut result = OptimResult {
        theta,
        loss,
        iterations: 0,
        converged: false,
        stall_reason: None,
        unified,
        trace: vec![TraceRecord {
            iteration: 0,
            theta,
            loss,
            delta0: 0.0,
            delta1: 0.0,
        }],
    };
    let propose = |th: ThresholdPair, active: Active| -> Result<f64, ObjectiveError> {
        Ok(gauss_newton_step(&step_coefficients(
            bundle, th, spec, active,
        )?))
    };

    for it in 1..=opts.max_iter {
        let mut deltas = [0.0; 2];
        let (settled, exhausted) = if unified {
            let d = propose(theta, Active::Unified)?;
            let out = cut_search(
                d.abs(),
                &mut loss,
                &mut theta,
                |th, s| ThresholdPair::unified(th.theta0 + s * d),
                eval,
                opts,
            )?;
            deltas = [out.scale * d; 2];
            (out.settled, out.exhausted)
        } else {
            match opts.sweep {
                SweepOrder::Simultaneous => {
                    let d = [
                        propose(theta, Active::Group(0))?,
                        propose(theta, Active::Group(1))?,
                    ];
                    let mut moved = [0.0; 2];
                    let mut best_single = (loss, theta);
                    let (mut settled, mut exhausted) = (true, true);
                    for a in 0..2 {
                        let mut l = loss;
                        let mut th = theta;
                        let out = cut_search(
                            d[a].abs(),
                            &mut l,
                            &mut th,
                            |mut th, s| {
                                th.set(a, th.get(a) + s * d[a]);
                                th
                            },
                            eval,
                            opts,
                        )?;
                        moved[a] = out.scale * d[a];
                        if l < best_single.0 {
                            best_single = (l, th);
                        }
                        settled &= out.settled;
                        exhausted &= out.exhausted;
                    }
                    if moved != [0.0; 2] {
                        // Each move lowers the loss on its own; together they
                        // may overshoot a shared fairness residual.
                        let base = theta;
                        let out = cut_search(
                            moved[0].abs().max(moved[1].abs()),
                            &mut loss,
                            &mut theta,
                            |th, s| {
                                ThresholdPair::new(
                                    th.theta0 + s * moved[0],
                                    th.theta1 + s * moved[1],
                                )
                            },
                            eval,
                            opts,
                        )?;
                        if out.exhausted {
                            (loss, theta) = best_single;
                        } else {
                            // Both groups chase the same error residual, so
                            // the joint move tends to overshoot; keep cutting
                            // while that still helps.
                            let mut scale = out.scale * opts.cut_factor;
                            for _ in 0..opts.max_cuts {
                                let cand = ThresholdPair::new(
                                    base.theta0 + scale * moved[0],
                                    base.theta1 + scale * moved[1],
                                );
                                let l = eval(cand)?;
                                if l >= loss {
                                    break;
                                }
                                (loss, theta) = (l, cand);
                                scale *= opts.cut_factor;
                            }
                        }
                        deltas = [theta.theta0 - base.theta0, theta.theta1 - base.theta1];
                    }
                    (settled, exhausted)
                }
                SweepOrder::Alternating => {
                    let (mut settled, mut exhausted) = (true, true);
                    for a in [1, 0] {
                        let d = propose(theta, Active::Group(a))?;
                        let out = cut_search(
                            d.abs(),
                            &mut loss,
                            &mut theta,
                            |mut th, s| {
                                th.set(a, th.get(a) + s * d);
                                th
                            },
                            eval,
                            opts,
                        )?;
                        deltas[a] = out.scale * d;
                        settled &= out.settled;
                        exhausted &= out.exhausted;
                    }
                    (settled, exhausted)
                }
            }
        };
        result.trace.push(TraceRecord {
            iteration: it,
            theta,
            loss,
            delta0: deltas[0],
            delta1: deltas[1],
        });
        result.theta = theta;
        result.loss = loss;
        result.iterations = it;
        if settled {
            result.converged = true;
            return Ok(result);
        }
        if exhausted {
            result.stall_reason = Some(format!(
                "no loss decrease within {} cuts at iteration {it}",
                opts.max_cuts
            ));
            return Err(OptimError::Stalled(Box::new(result)));
        }
    }
    Err(OptimError::MaxIterations(Box::new(result)))
}

/// Two-threshold optimization from `opts.init`.
pub fn optimize(
    bundle: &DensityBundle,
    spec: &ObjectiveSpec,
    opts: &OptimOptions,
) -> Result<OptimResult, OptimError> {
    run(bundle, spec, opts, false)
}

/// Single shared threshold; starts from `opts.init.theta1`.
pub fn optimize_unified(
    bundle: &DensityBundle,
    spec: &ObjectiveSpec,
    opts: &OptimOptions,
) -> Result<OptimResult, OptimError> {
    run(bundle, spec, opts, true)
}

/// Rectangle of thresholds searched by [`grid_oracle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRange {
    pub theta0: (f64, f64),
    pub theta1: (f64, f64),
}

impl GridRange {
    /// Per group, from the lowest `lo`-quantile to the highest
    /// `hi`-quantile of its two label densities.
    pub fn from_quantiles(bundle: &DensityBundle, lo: f64, hi: f64) -> Result<Self, OptimError> {
        let span = |a: usize| -> Result<(f64, f64), OptimError> {
            let q = |y: usize, p: f64| {
                bundle
                    .density(y, a)
                    .inv_cdf(p)
                    .map_err(|e| OptimError::InvalidOptions(e.to_string()))
            };
            Ok((q(0, lo)?.min(q(1, lo)?), q(0, hi)?.max(q(1, hi)?)))
        };
        Ok(Self {
            theta0: span(0)?,
            theta1: span(1)?,
        })
    }
}

/// Exhaustive minimum of the loss over a `resolution × resolution` grid.
pub fn grid_oracle(
    bundle: &DensityBundle,
    spec: &ObjectiveSpec,
    range: GridRange,
    resolution: usize,
) -> Result<(ThresholdPair, f64), OptimError> {
    if resolution < 2 {
        return Err(OptimError::InvalidOptions(
            "grid resolution must be at least 2".into(),
        ));
    }
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        crate::numeric::linspace(lo, hi, resolution).collect()
    };
    let xs0 = axis(range.theta0);
    let xs1 = axis(range.theta1);
    let rows: Vec<(ThresholdPair, f64)> = xs1
        .par_iter()
        .map(|&t1| {
            let mut best = (ThresholdPair::new(xs0[0], t1), f64::INFINITY);
            for &t0 in &xs0 {
                let th = ThresholdPair::new(t0, t1);
                let l = total_loss(bundle, th, spec)?;
                if l < best.1 {
                    best = (th, l);
                }
            }
            Ok(best)
        })
        .collect::<Result<_, ObjectiveError>>()?;
    // Sequential reduction keeps ties deterministic.
    Ok(rows
        .into_iter()
        .fold((ThresholdPair::default(), f64::INFINITY), |acc, r| {
            if r.1 < acc.1 {
                r
            } else {
                acc
            }
        }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Counts;
    use crate::density::FittedDensity;
    use crate::numeric::bisect;
    use proptest::prelude::*;

    fn gauss(mean: f64, sd: f64) -> FittedDensity {
        FittedDensity::Gaussian { mean, sd }
    }

    fn bundle(params: [[(f64, f64); 2]; 2], n: [[u64; 2]; 2]) -> DensityBundle {
        DensityBundle::new(
            params.map(|row| row.map(|(m, s)| gauss(m, s))),
            Counts::new(n),
        )
        .unwrap()
    }

    fn shifted() -> DensityBundle {
        bundle(
            [[(-1.0, 1.0), (-0.3, 1.1)], [(1.2, 0.9), (2.0, 1.2)]],
            [[400, 200], [150, 250]],
        )
    }

    fn symmetric() -> DensityBundle {
        bundle(
            [[(-1.0, 1.0), (-1.0, 1.0)], [(1.0, 1.5), (1.0, 1.5)]],
            [[300, 300], [200, 200]],
        )
    }

    fn spec(kinds: &[FairnessKind], lambda: f64) -> ObjectiveSpec {
        ObjectiveSpec::shared(kinds, lambda).unwrap()
    }

    #[test]
    fn step_arithmetic() {
        let c = StepCoeffs {
            alpha: 0.2,
            eta: 0.3,
            terms: vec![ResidualTerm {
                kind: FairnessKind::EOp,
                lambda: 2.0,
                beta: -0.5,
                epsilon: 0.1,
            }],
        };
        let d = gauss_newton_step(&c);
        assert!((d - 0.04 / 0.54).abs() < 1e-15);
        assert!((d - 0.074_074_074_074).abs() < 1e-12);
    }

    #[test]
    fn step_edge_cases() {
        let flat = StepCoeffs {
            alpha: 0.0,
            eta: 0.4,
            terms: vec![],
        };
        assert_eq!(gauss_newton_step(&flat), 0.0);
        let newton = StepCoeffs {
            alpha: 0.25,
            eta: 0.1,
            terms: vec![ResidualTerm {
                kind: FairnessKind::DP,
                lambda: 0.0,
                beta: 3.0,
                epsilon: 1.0,
            }],
        };
        assert!((gauss_newton_step(&newton) + 0.4).abs() < 1e-15);
        let still = StepCoeffs {
            alpha: 0.25,
            eta: 0.0,
            terms: vec![],
        };
        assert_eq!(gauss_newton_step(&still), 0.0);
    }

    #[test]
    fn eop_beta_is_negative_pdf_for_group_one() {
        let b = shifted();
        let th = ThresholdPair::new(0.2, 0.7);
        let c =
            step_coefficients(&b, th, &spec(&[FairnessKind::EOp], 1.0), Active::Group(1)).unwrap();
        assert_eq!(c.terms[0].beta, -b.density(1, 1).pdf(0.7));
        let c =
            step_coefficients(&b, th, &spec(&[FairnessKind::EOp], 1.0), Active::Group(0)).unwrap();
        assert_eq!(c.terms[0].beta, b.density(1, 0).pdf(0.2));
    }

    #[test]
    fn balanced_cell_cancels_alpha() {
        let b = bundle(
            [[(0.0, 1.0), (0.0, 1.0)], [(0.0, 1.0), (0.0, 1.0)]],
            [[10, 20], [10, 20]],
        );
        for a in 0..2 {
            let c = step_coefficients(
                &b,
                ThresholdPair::new(0.3, -0.4),
                &ObjectiveSpec::accuracy_only(),
                Active::Group(a),
            )
            .unwrap();
            assert_eq!(c.alpha, 0.0);
        }
    }

    #[test]
    fn eod_contributes_two_terms() {
        let c = step_coefficients(
            &shifted(),
            ThresholdPair::default(),
            &spec(&[FairnessKind::EOd, FairnessKind::DP], 5.0),
            Active::Group(0),
        )
        .unwrap();
        assert_eq!(c.terms.len(), 3);
        assert!(c.terms.iter().all(|t| t.lambda == 5.0));
    }

    #[test]
    fn symmetric_bundle_keeps_thresholds_equal() {
        let b = symmetric();
        for kinds in [&[FairnessKind::EOd, FairnessKind::DP][..], &[][..]] {
            let s = spec(kinds, 1.0);
            let r = optimize(&b, &s, &OptimOptions::default()).unwrap();
            assert!(r.converged);
            assert_eq!(r.theta.theta1, r.theta.theta0);
            let u = optimize_unified(&b, &s, &OptimOptions::default()).unwrap();
            assert!((u.theta.theta0 - r.theta.theta0).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_lambda_reaches_bayes_thresholds() {
        let b = shifted();
        let r = optimize(&b, &spec(&FairnessKind::ALL, 0.0), &OptimOptions::default()).unwrap();
        assert!(r.converged);
        let c = b.counts();
        for a in 0..2 {
            let g = |t: f64| {
                c.n(1, a) as f64 * b.density(1, a).pdf(t)
                    - c.n(0, a) as f64 * b.density(0, a).pdf(t)
            };
            let root = bisect(g, -3.0, 3.0, 1e-14, 300).unwrap();
            assert!(
                (r.theta.get(a) - root).abs() < 1e-6,
                "group {a}: {} vs {root}",
                r.theta.get(a)
            );
        }
    }

    #[test]
    fn unified_zero_lambda_pooled_stationarity() {
        let b = shifted();
        let r = optimize_unified(
            &b,
            &ObjectiveSpec::accuracy_only(),
            &OptimOptions::default(),
        )
        .unwrap();
        let t = r.theta.theta0;
        let c = b.counts();
        let slope: f64 = (0..2)
            .map(|a| {
                c.n(1, a) as f64 * b.density(1, a).pdf(t)
                    - c.n(0, a) as f64 * b.density(0, a).pdf(t)
            })
            .sum();
        assert!(slope.abs() / c.total() as f64 <= 1e-6, "{slope}");
        assert_eq!(r.theta.theta0, r.theta.theta1);
    }

    #[test]
    fn unified_never_beats_pair() {
        let b = shifted();
        for lam in [0.0, 1.0, 10.0] {
            let s = spec(&[FairnessKind::EOp], lam);
            let pair = optimize(&b, &s, &OptimOptions::default()).unwrap();
            let uni = optimize_unified(&b, &s, &OptimOptions::default()).unwrap();
            assert!(
                uni.loss >= pair.loss - 1e-9,
                "λ={lam}: {} < {}",
                uni.loss,
                pair.loss
            );
        }
    }

    #[test]
    fn matches_grid_oracle() {
        let b = shifted();
        let s = spec(&[FairnessKind::EOd], 2.0);
        let r = optimize(&b, &s, &OptimOptions::default()).unwrap();
        let range = GridRange::from_quantiles(&b, 0.001, 0.999).unwrap();
        let (_, grid) = grid_oracle(&b, &s, range, 120).unwrap();
        assert!(r.loss <= grid + 1e-3 * (1.0 + grid.abs()));
    }

    #[test]
    fn grid_oracle_symmetric_argmin_on_diagonal() {
        let b = symmetric();
        let range = GridRange {
            theta0: (-3.0, 3.0),
            theta1: (-3.0, 3.0),
        };
        let (th, _) = grid_oracle(&b, &spec(&[FairnessKind::DP], 1.0), range, 61).unwrap();
        assert!((th.theta0 - th.theta1).abs() <= 0.1 + 1e-12);
        assert!(grid_oracle(&b, &ObjectiveSpec::accuracy_only(), range, 1).is_err());
    }

    #[test]
    fn trace_starts_at_init_and_is_monotone() {
        let b = shifted();
        let r = optimize(
            &b,
            &spec(&[FairnessKind::DP], 10.0),
            &OptimOptions::default(),
        )
        .unwrap();
        assert_eq!(r.trace[0].theta, ThresholdPair::default());
        assert_eq!(r.trace.len(), r.iterations + 1);
        for w in r.trace.windows(2) {
            assert!(w[1].loss <= w[0].loss);
        }
    }

    #[test]
    fn alternating_order_reaches_same_point() {
        let b = shifted();
        let s = spec(&[FairnessKind::EOp], 1.0);
        let sim = optimize(&b, &s, &OptimOptions::default()).unwrap();
        let alt = optimize(
            &b,
            &s,
            &OptimOptions {
                sweep: SweepOrder::Alternating,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((sim.theta.theta0 - alt.theta.theta0).abs() < 1e-4);
        assert!((sim.theta.theta1 - alt.theta.theta1).abs() < 1e-4);
        assert!((sim.loss - alt.loss).abs() < 1e-9);
    }

    #[test]
    fn joint_move_does_not_zigzag() {
        // Group 1 is group 0 shifted by 0.5. Applying both full steps at
        // once used to bounce between two points here indefinitely.
        let b = bundle(
            [[(-1.0, 1.0), (-0.5, 1.0)], [(1.0, 1.0), (1.5, 1.0)]],
            [[300, 300], [300, 300]],
        );
        let s = spec(&[FairnessKind::EOd], 10.0);
        let sim = optimize(&b, &s, &OptimOptions::default()).unwrap();
        let alt = optimize(
            &b,
            &s,
            &OptimOptions {
                sweep: SweepOrder::Alternating,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((sim.loss - alt.loss).abs() < 1e-9);
        assert!((sim.theta.theta1 - sim.theta.theta0 - 0.5).abs() < 1e-4);
    }

    #[test]
    fn large_lambda_is_slow_but_fair() {
        // Steps along the fair manifold shrink like 1/λ, so the iteration
        // budget runs out; the partial result is still nearly fair.
        let b = shifted();
        let err = optimize(
            &b,
            &spec(&[FairnessKind::EOp], 1e4),
            &OptimOptions::default(),
        )
        .unwrap_err();
        let r = err.partial().unwrap();
        let rt = rates(&b, r.theta);
        assert!((rt.tp[1] - rt.tp[0]).abs() < 1e-2);
        assert!(r.loss < r.trace[0].loss);
    }

    #[test]
    fn stalls_without_cuts() {
        // With no shrinking allowed the pure-accuracy step overshoots.
        let opts = OptimOptions {
            max_cuts: 0,
            ..Default::default()
        };
        let b = shifted();
        let mut saw_stall = false;
        for init in [-2.0, -0.5, 0.0, 0.5, 2.0] {
            let o = OptimOptions {
                init: ThresholdPair::unified(init),
                ..opts
            };
            match optimize(&b, &ObjectiveSpec::accuracy_only(), &o) {
                Err(OptimError::Stalled(r)) => {
                    saw_stall = true;
                    assert!(!r.converged);
                    assert!(r.stall_reason.is_some());
                }
                Ok(_) | Err(OptimError::MaxIterations(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
        assert!(saw_stall);
    }

    #[test]
    fn max_iterations_carries_partial() {
        let opts = OptimOptions {
            max_iter: 1,
            ..Default::default()
        };
        let err = optimize(&shifted(), &spec(&[FairnessKind::EOd], 1e3), &opts).unwrap_err();
        let r = err.partial().expect("partial result");
        assert_eq!(r.iterations, 1);
        assert!(matches!(err, OptimError::MaxIterations(_)));
    }

    #[test]
    fn rejects_bad_options() {
        for o in [
            OptimOptions {
                max_iter: 0,
                ..Default::default()
            },
            OptimOptions {
                tol: 0.0,
                ..Default::default()
            },
            OptimOptions {
                cut_factor: 1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                optimize(&shifted(), &ObjectiveSpec::accuracy_only(), &o),
                Err(OptimError::InvalidOptions(_))
            ));
        }
    }

    #[test]
    fn result_json_has_trace() {
        let r = optimize(
            &symmetric(),
            &spec(&[FairnessKind::EOp], 1.0),
            &OptimOptions::default(),
        )
        .unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert!(v["trace"].as_array().unwrap().len() >= 2);
        assert!(v["theta"]["theta0"].is_number());
    }

    fn residual_vector(b: &DensityBundle, th: ThresholdPair, s: &ObjectiveSpec) -> (f64, Vec<f64>) {
        let r = rates(b, th);
        let eps = s
            .constraints()
            .iter()
            .flat_map(|c| {
                fair_residuals(c.kind, &r, b.counts())
                    .unwrap()
                    .as_slice()
                    .to_vec()
            })
            .collect();
        (perf_residual(&r, b.counts()), eps)
    }

    fn close_rel(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-3)
    }

    proptest! {
        #[test]
        fn coefficients_match_finite_differences(
            m in prop::array::uniform4(-2.0f64..2.0),
            s in prop::array::uniform4(0.5f64..2.0),
            n in prop::array::uniform4(1u64..500),
            t0 in -2.0f64..2.0, t1 in -2.0f64..2.0, unified in any::<bool>(), a in 0usize..2,
        ) {
            let b = bundle(
                [[(m[0], s[0]), (m[1], s[1])], [(m[2], s[2]), (m[3], s[3])]],
                [[n[0], n[1]], [n[2], n[3]]],
            );
            let sp = spec(&[FairnessKind::EOd, FairnessKind::DP], 1.0);
            let th = if unified { ThresholdPair::unified(t0) } else { ThresholdPair::new(t0, t1) };
            let active = if unified { Active::Unified } else { Active::Group(a) };
            let c = step_coefficients(&b, th, &sp, active).unwrap();
            let h = 1e-5;
            let shift = |d: f64| match active {
                Active::Group(0) => ThresholdPair::new(th.theta0 + d, th.theta1),
                Active::Group(_) => ThresholdPair::new(th.theta0, th.theta1 + d),
                Active::Unified => ThresholdPair::unified(th.theta0 + d),
            };
            let (ep, rp) = residual_vector(&b, shift(h), &sp);
            let (em, rm) = residual_vector(&b, shift(-h), &sp);
            prop_assert!(close_rel((ep - em) / (2.0 * h), c.alpha, 1e-5));
            for (i, t) in c.terms.iter().enumerate() {
                prop_assert!(close_rel((rp[i] - rm[i]) / (2.0 * h), t.beta, 1e-5), "term {i}");
            }
        }

        #[test]
        fn step_minimizes_quadratic_model(
            alpha in -1.0f64..1.0, eta in -1.0f64..1.0,
            terms in prop::collection::vec((0.0f64..100.0, -1.0f64..1.0, -1.0f64..1.0), 0..4),
        ) {
            let c = StepCoeffs {
                alpha,
                eta,
                terms: terms.into_iter().map(|(lambda, beta, epsilon)| ResidualTerm {
                    kind: FairnessKind::EOp, lambda, beta, epsilon,
                }).collect(),
            };
            let d = gauss_newton_step(&c);
            let q = quadratic_model(&c, d);
            let slack = 1e-12 * (1.0 + q);
            prop_assert!(quadratic_model(&c, d + 1e-3) >= q - slack);
            prop_assert!(quadratic_model(&c, d - 1e-3) >= q - slack);
        }

        #[test]
        fn trace_is_monotone(
            mu in prop::array::uniform4(-1.5f64..1.5),
            lam in 0.0f64..1e3,
        ) {
            let b = bundle(
                [[(mu[0] - 1.0, 1.0), (mu[1] - 1.0, 1.2)], [(mu[2] + 1.0, 0.9), (mu[3] + 1.0, 1.1)]],
                [[100, 200], [300, 150]],
            );
            let r = match optimize(&b, &spec(&[FairnessKind::EOd], lam), &OptimOptions::default()) {
                Ok(r) => r,
                Err(e) => e.into_partial().unwrap(),
            };
            for w in r.trace.windows(2) {
                prop_assert!(w[1].loss <= w[0].loss);
            }
        }
    }
}
