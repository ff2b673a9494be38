//! Binned gaussian kernel density estimate.
//!
//! Samples are histogrammed into `B` equal-width bins over `[min, max]`;
//! each bin contributes a gaussian kernel at its center weighted by its
//! share of the samples: `f(x) = Σ_b w_b K(x - T_b)`.

use serde::{Deserialize, Serialize};

use super::{std_normal_cdf, std_normal_pdf, DensityError, LN_SQRT_2PI};
use crate::numeric::{golden_section_min, linspace};

pub const DEFAULT_KERNEL_SD: f64 = 0.5;

/// `ceil(sqrt(n))` clipped to `[10, 200]`.
pub fn default_kde_bins(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).clamp(10, 200)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeOptions {
    /// `None` means [`default_kde_bins`].
    pub num_bins: Option<usize>,
    pub kernel_sd: f64,
}

impl Default for KdeOptions {
    fn default() -> Self {
        Self {
            num_bins: None,
            kernel_sd: DEFAULT_KERNEL_SD,
        }
    }
}

impl KdeOptions {
    pub fn bins_for(&self, n: usize) -> usize {
        self.num_bins.unwrap_or_else(|| default_kde_bins(n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeDensity {
    centers: Vec<f64>,
    weights: Vec<f64>,
    kernel_sd: f64,
}

impl KdeDensity {
    /// Weights must be non-negative and sum to one (within `1e-9`).
    pub fn new(centers: Vec<f64>, weights: Vec<f64>, kernel_sd: f64) -> Result<Self, DensityError> {
        if centers.is_empty() || centers.len() != weights.len() {
            return Err(DensityError::InvalidParameters(
                "kde needs matching, non-empty centers and weights".into(),
            ));
        }
        if !(kernel_sd.is_finite() && kernel_sd > 0.0) {
            return Err(DensityError::InvalidParameters(format!(
                "kernel_sd must be positive, got {kernel_sd}"
            )));
        }
        if centers.iter().any(|c| !c.is_finite())
            || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(DensityError::InvalidParameters(
                "kde centers must be finite and weights non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DensityError::InvalidParameters(format!(
                "kde weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            centers,
            weights,
            kernel_sd,
        })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kernel_sd(&self) -> f64 {
        self.kernel_sd
    }

    pub(crate) fn into_parts(self) -> (Vec<f64>, Vec<f64>, f64) {
        (self.centers, self.weights, self.kernel_sd)
    }

    fn terms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.centers
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
            .filter(|(_, w)| *w > 0.0)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let h = self.kernel_sd;
        self.terms()
            .map(|(t, w)| w * std_normal_pdf((x - t) / h))
            .sum::<f64>()
            / h
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let h = self.kernel_sd;
        self.terms()
            .map(|(t, w)| w * std_normal_cdf((x - t) / h))
            .sum::<f64>()
            .min(1.0)
    }

    pub fn sf(&self, x: f64) -> f64 {
        let h = self.kernel_sd;
        self.terms()
            .map(|(t, w)| w * std_normal_cdf((t - x) / h))
            .sum::<f64>()
            .min(1.0)
    }

    pub fn mean(&self) -> f64 {
        self.terms().map(|(t, w)| w * t).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.terms().map(|(t, w)| w * (t - m).powi(2)).sum::<f64>() + self.kernel_sd.powi(2)
    }

    /// Grid estimate of `sup pdf` over the span of the kernels, polished by
    /// a golden-section search between the neighbours of the best grid point.
    pub fn max_pdf_grid(&self, points: usize) -> f64 {
        let points = points.max(3);
        let lo = self.centers.iter().copied().fold(f64::INFINITY, f64::min) - 4.0 * self.kernel_sd;
        let hi = self
            .centers
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
            + 4.0 * self.kernel_sd;
        let step = (hi - lo) / (points - 1) as f64;
        let (best_x, best) = linspace(lo, hi, points)
            .map(|x| (x, self.pdf(x)))
            .fold((lo, 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        let (_, neg) = golden_section_min(
            |x| -self.pdf(x),
            best_x - step,
            best_x + step,
            1e-12 * (1.0 + best_x.abs()),
            200,
        );
        best.max(-neg)
    }

    /// Peak of a single kernel; an upper bound on the KDE pdf.
    pub fn kernel_peak(&self) -> f64 {
        (-LN_SQRT_2PI).exp() / self.kernel_sd
    }
}

/// Histogram the samples into `num_bins` bins over `[min, max]` and place a
/// kernel of standard deviation `kernel_sd` at each bin center.
pub fn fit_kde(
    samples: &[f64],
    num_bins: usize,
    kernel_sd: f64,
) -> Result<KdeDensity, DensityError> {
    if samples.is_empty() {
        return Err(DensityError::DegenerateSample(
            "kde needs at least one sample".into(),
        ));
    }
    if num_bins == 0 {
        return Err(DensityError::InvalidParameters(
            "num_bins must be at least 1".into(),
        ));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(DensityError::DegenerateSample("non-finite sample".into()));
    }
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / num_bins as f64;
    let mut counts = vec![0usize; num_bins];
    for &x in samples {
        let idx = if width > 0.0 {
            (((x - min) / width) as usize).min(num_bins - 1)
        } else {
            0
        };
        counts[idx] += 1;
    }
    let n = samples.len() as f64;
    let centers = (0..num_bins)
        .map(|b| min + width * (b as f64 + 0.5))
        .collect();
    let weights = counts.iter().map(|&c| c as f64 / n).collect();
    KdeDensity::new(centers, weights, kernel_sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{fit_gaussian, mean_nll, FittedDensity};

    #[test]
    fn single_point_is_one_kernel() {
        let k = fit_kde(&[0.0, 0.0, 0.0], 1, 0.5).unwrap();
        let normal = FittedDensity::Gaussian { mean: 0.0, sd: 0.5 };
        for x in [-1.3, -0.2, 0.0, 0.4, 2.0] {
            assert!((k.pdf(x) - normal.pdf(x)).abs() < 1e-15);
            assert!((k.cdf(x) - normal.cdf(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_bins_equal_weights() {
        let k = fit_kde(&[0.0, 0.1, 0.9, 1.0], 2, 0.5).unwrap();
        assert_eq!(k.weights(), &[0.5, 0.5]);
        assert_eq!(k.centers(), &[0.25, 0.75]);
    }

    #[test]
    fn weights_on_simplex() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let k = fit_kde(&xs, default_kde_bins(xs.len()), 0.5).unwrap();
        assert_eq!(k.centers().len(), 32);
        assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(k.weights().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn default_bins_clip() {
        assert_eq!(default_kde_bins(4), 10);
        assert_eq!(default_kde_bins(1000), 32);
        assert_eq!(default_kde_bins(1_000_000), 200);
    }

    #[test]
    fn cdf_far_right_is_one() {
        let k = fit_kde(&[-3.0, 0.0, 0.5, 8.0], 4, 0.5).unwrap();
        assert!((k.cdf(1e3) - 1.0).abs() < 1e-6);
        assert!(k.cdf(-1e3) < 1e-6);
        let mut prev = 0.0;
        for x in linspace(-10.0, 15.0, 1000) {
            let c = k.cdf(x);
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn grid_max_never_exceeds_kernel_peak() {
        let k = fit_kde(&[0.0, 0.01, 5.0], 3, 0.5).unwrap();
        assert!(k.max_pdf_grid(4096) <= k.kernel_peak() + 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_kde(&[], 3, 0.5).is_err());
        assert!(fit_kde(&[1.0], 0, 0.5).is_err());
        assert!(fit_kde(&[1.0], 1, 0.0).is_err());
    }

    #[test]
    fn beats_gaussian_on_trimodal_mixture() {
        // Deterministic stand-in for the three-component mixture shape.
        let mut xs = Vec::new();
        for (mu, sd, count) in [(-7.0f64, 1.7f64, 300), (-2.0, 1.2, 500), (1.1, 1.4, 200)] {
            for i in 0..count {
                let u = (i as f64 + 0.5) / count as f64;
                let z = crate::density::FittedDensity::Gaussian { mean: 0.0, sd: 1.0 }
                    .inv_cdf(u)
                    .unwrap();
                xs.push(mu + sd * z);
            }
        }
        let k = FittedDensity::Kde(fit_kde(&xs, default_kde_bins(xs.len()), 0.5).unwrap());
        let g = fit_gaussian(&xs).unwrap();
        assert!(mean_nll(&k, &xs).unwrap() < mean_nll(&g, &xs).unwrap());
    }
}
