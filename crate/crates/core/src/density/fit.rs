//! Maximum-likelihood fits for the parametric families.

use statrs::function::gamma::{digamma, ln_gamma};

use super::{mean_nll, DensityError, Family, FittedDensity};
use crate::numeric::{bisect, golden_section_min};

/// Student's t and gamma fits are numeric and need some mass to work with.
pub const MIN_NUMERIC_FIT_SAMPLES: usize = 10;

const DF_RANGE: (f64, f64) = (0.3, 1000.0);

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn require(family: Family, xs: &[f64], need: usize) -> Result<(), DensityError> {
    if xs.len() < need {
        return Err(DensityError::TooFewSamples {
            family,
            need,
            got: xs.len(),
        });
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(DensityError::DegenerateSample("non-finite sample".into()));
    }
    Ok(())
}

/// MLE mean and (biased) standard deviation.
pub fn fit_gaussian(samples: &[f64]) -> Result<FittedDensity, DensityError> {
    if samples.len() < 2 {
        return Err(DensityError::DegenerateSample(format!(
            "gaussian needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    require(Family::Gaussian, samples, 2)?;
    let (mean, var) = mean_and_var(samples);
    if !(var > 0.0) {
        return Err(DensityError::DegenerateSample(
            "all samples are equal".into(),
        ));
    }
    Ok(FittedDensity::Gaussian {
        mean,
        sd: var.sqrt(),
    })
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Location/scale MLE for a fixed `df`, by the usual EM reweighting.
fn t_loc_scale(xs: &[f64], df: f64, mut loc: f64, mut scale: f64) -> (f64, f64) {
    let n = xs.len() as f64;
    for _ in 0..500 {
        let mut sw = 0.0;
        let mut swx = 0.0;
        for &x in xs {
            let z = (x - loc) / scale;
            let w = (df + 1.0) / (df + z * z);
            sw += w;
            swx += w * x;
        }
        let new_loc = swx / sw;
        let mut ss = 0.0;
        for &x in xs {
            let z = (x - loc) / scale;
            let w = (df + 1.0) / (df + z * z);
            ss += w * (x - new_loc).powi(2);
        }
        let new_scale = (ss / n).sqrt();
        let done = (new_loc - loc).abs() <= 1e-10 * scale.max(1e-300)
            && (new_scale - scale).abs() <= 1e-10 * scale;
        loc = new_loc;
        scale = new_scale;
        if done || !(scale > 0.0) {
            break;
        }
    }
    (loc, scale)
}

/// Three-parameter Student's t MLE: EM for location/scale nested inside a
/// bounded golden-section search over `ln df`.
pub fn fit_student_t(samples: &[f64]) -> Result<FittedDensity, DensityError> {
    require(Family::StudentT, samples, MIN_NUMERIC_FIT_SAMPLES)?;
    let (_, var) = mean_and_var(samples);
    if !(var > 0.0) {
        return Err(DensityError::DegenerateSample(
            "all samples are equal".into(),
        ));
    }
    let loc0 = median(samples);
    let mad = median(&samples.iter().map(|x| (x - loc0).abs()).collect::<Vec<_>>());
    let scale0 = if mad > 0.0 { 1.4826 * mad } else { var.sqrt() };

    let profile = |ln_df: f64| {
        let df = ln_df.exp();
        let (loc, scale) = t_loc_scale(samples, df, loc0, scale0);
        let d = FittedDensity::StudentT { df, loc, scale };
        mean_nll(&d, samples).unwrap_or(f64::INFINITY)
    };
    let (ln_df, nll) = golden_section_min(profile, DF_RANGE.0.ln(), DF_RANGE.1.ln(), 1e-6, 200);
    if !nll.is_finite() {
        return Err(DensityError::FitFailure {
            family: Family::StudentT,
            reason: "likelihood is not finite over the df range".into(),
        });
    }
    let df = ln_df.exp();
    let (loc, scale) = t_loc_scale(samples, df, loc0, scale0);
    if !(loc.is_finite() && scale.is_finite() && scale > 0.0) {
        return Err(DensityError::FitFailure {
            family: Family::StudentT,
            reason: format!("EM did not converge (loc={loc}, scale={scale})"),
        });
    }
    Ok(FittedDensity::StudentT { df, loc, scale })
}

/// Gamma shape MLE for positive data: solves `ln k - ψ(k) = ln(mean) - mean(ln)`.
fn gamma_shape(ys: &[f64]) -> Option<(f64, f64)> {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let mean_ln = ys.iter().map(|y| y.ln()).sum::<f64>() / n;
    let s = mean.ln() - mean_ln;
    if !(s > 0.0) || !s.is_finite() {
        return None;
    }
    // ln k - ψ(k) decreases from +inf to 0, so the root is unique.
    let ln_k = bisect(
        |lk: f64| lk - digamma(lk.exp()) - s,
        -30.0,
        40.0,
        1e-12,
        300,
    )?;
    let shape = ln_k.exp();
    Some((shape, mean / shape))
}

fn gamma_mean_nll(ys: &[f64], shape: f64, scale: f64) -> f64 {
    let n = ys.len() as f64;
    let sum_ln = ys.iter().map(|y| y.ln()).sum::<f64>();
    let sum = ys.iter().sum::<f64>();
    -((shape - 1.0) * sum_ln - sum / scale) / n + ln_gamma(shape) + shape * scale.ln()
}

/// Gamma with a location shift, so real-valued logits fit. The location is
/// profiled by golden-section search on `ln(min(x) - loc)`; shape and scale
/// are closed-form/1-D MLEs given the location.
pub fn fit_gamma_loc(samples: &[f64]) -> Result<FittedDensity, DensityError> {
    require(Family::GammaLoc, samples, MIN_NUMERIC_FIT_SAMPLES)?;
    let (_, var) = mean_and_var(samples);
    if !(var > 0.0) {
        return Err(DensityError::DegenerateSample(
            "all samples are equal".into(),
        ));
    }
    let sd = var.sqrt();
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let mut ys = vec![0.0; samples.len()];
    let mut profile = |ln_gap: f64| {
        let loc = min - ln_gap.exp();
        for (y, x) in ys.iter_mut().zip(samples) {
            *y = x - loc;
        }
        match gamma_shape(&ys) {
            Some((shape, scale)) => gamma_mean_nll(&ys, shape, scale),
            None => f64::INFINITY,
        }
    };
    let (ln_gap, nll) =
        golden_section_min(&mut profile, (1e-3 * sd).ln(), (100.0 * sd).ln(), 1e-8, 300);
    if !nll.is_finite() {
        return Err(DensityError::FitFailure {
            family: Family::GammaLoc,
            reason: "no finite likelihood over the location range".into(),
        });
    }
    let loc = min - ln_gap.exp();
    let ys: Vec<f64> = samples.iter().map(|x| x - loc).collect();
    let (shape, scale) = gamma_shape(&ys).ok_or_else(|| DensityError::FitFailure {
        family: Family::GammaLoc,
        reason: "shape equation has no root".into(),
    })?;
    if !(loc < min) {
        return Err(DensityError::FitFailure {
            family: Family::GammaLoc,
            reason: "location is not below the sample minimum".into(),
        });
    }
    Ok(FittedDensity::GammaLoc { shape, scale, loc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma, Normal, StudentT};

    #[test]
    fn gaussian_two_point() {
        let FittedDensity::Gaussian { mean, sd } = fit_gaussian(&[-1.0, 1.0]).unwrap() else {
            panic!()
        };
        assert_eq!(mean, 0.0);
        assert_eq!(sd * sd, 1.0);
    }

    #[test]
    fn gaussian_degenerate() {
        assert!(matches!(
            fit_gaussian(&[5.0, 5.0, 5.0]),
            Err(DensityError::DegenerateSample(_))
        ));
        assert!(matches!(
            fit_gaussian(&[5.0]),
            Err(DensityError::DegenerateSample(_))
        ));
    }

    #[test]
    fn gaussian_recovers_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = Normal::new(2.0, 1.5).unwrap();
        let xs: Vec<f64> = (0..5000).map(|_| n.sample(&mut rng)).collect();
        let FittedDensity::Gaussian { mean, sd } = fit_gaussian(&xs).unwrap() else {
            panic!()
        };
        assert!((mean - 2.0).abs() < 0.1, "{mean}");
        assert!((sd - 1.5).abs() < 0.1, "{sd}");
    }

    #[test]
    fn student_t_recovers_df() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = StudentT::new(3.0).unwrap();
        let xs: Vec<f64> = (0..5000).map(|_| t.sample(&mut rng)).collect();
        let FittedDensity::StudentT { df, loc, scale } = fit_student_t(&xs).unwrap() else {
            panic!()
        };
        assert!((2.0..=5.0).contains(&df), "df={df}");
        assert!(loc.abs() < 0.1, "{loc}");
        assert!((scale - 1.0).abs() < 0.1, "{scale}");
    }

    #[test]
    fn student_t_mle_is_local_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = StudentT::new(4.0).unwrap();
        let xs: Vec<f64> = (0..800).map(|_| 0.5 + 2.0 * t.sample(&mut rng)).collect();
        let fit = fit_student_t(&xs).unwrap();
        let FittedDensity::StudentT { df, loc, scale } = fit else {
            panic!()
        };
        let base = mean_nll(&fit, &xs).unwrap();
        for (dd, dl, ds) in [
            (1.02, 0.0, 1.0),
            (0.98, 0.0, 1.0),
            (1.0, 0.01, 1.0),
            (1.0, -0.01, 1.0),
            (1.0, 0.0, 1.01),
            (1.0, 0.0, 0.99),
        ] {
            let other = FittedDensity::StudentT {
                df: df * dd,
                loc: loc + dl,
                scale: scale * ds,
            };
            assert!(mean_nll(&other, &xs).unwrap() >= base - 1e-9);
        }
    }

    #[test]
    fn numeric_fits_need_ten_samples() {
        let xs = [0.1, 0.5, 0.9];
        assert!(matches!(
            fit_student_t(&xs),
            Err(DensityError::TooFewSamples {
                need: 10,
                got: 3,
                ..
            })
        ));
        assert!(matches!(
            fit_gamma_loc(&xs),
            Err(DensityError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn gamma_on_negative_samples() {
        // Right-skewed data living entirely below zero.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Gamma::new(2.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..3000).map(|_| g.sample(&mut rng) - 12.0).collect();
        assert!(xs.iter().all(|&x| x < 0.0));
        let fit = fit_gamma_loc(&xs).unwrap();
        let FittedDensity::GammaLoc { shape, loc, .. } = fit else {
            panic!()
        };
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(loc < min);
        assert!((shape - 2.0).abs() < 0.5, "{shape}");
        let gauss = fit_gaussian(&xs).unwrap();
        assert!(mean_nll(&fit, &xs).unwrap() <= mean_nll(&gauss, &xs).unwrap());
    }

    #[test]
    fn gamma_shape_root() {
        // Exact data from a known mean/log-mean pair: shape from the equation
        // must reproduce the digamma identity.
        let ys = [0.5, 1.0, 2.0, 4.0];
        let (k, theta) = gamma_shape(&ys).unwrap();
        let n = ys.len() as f64;
        let s =
            (ys.iter().sum::<f64>() / n).ln() - ys.iter().map(|y: &f64| y.ln()).sum::<f64>() / n;
        assert!((k.ln() - digamma(k) - s).abs() < 1e-10);
        assert!((k * theta - 1.875).abs() < 1e-12);
    }
}
