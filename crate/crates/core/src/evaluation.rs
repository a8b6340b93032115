//! Error metrics, bootstrap inference and result tables.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dina::DinaFit;
use crate::error::{DinaError, Result};
use crate::model::{dot, Dataset, Matrix};
use crate::rng::{self, replication_seed, streams};

pub use crate::simgen::snr;

pub const EVAL_POINTS: usize = 100_000;

/// Mean of `(τ̂_t(x) − τ_t(x))²` over `eval` and treated arms, with `τ_t(x) = β_t0 + xᵀβ_t`.
pub fn tau_mse(fit: &DinaFit, true_beta: &[Vec<f64>], eval: &Matrix) -> Result<f64> {
    let k = fit.n_arms - 1;
    if true_beta.len() != k || eval.cols() != fit.d() || true_beta.iter().any(|b| b.len() != fit.d() + 1) {
        return Err(DinaError::DimensionMismatch(format!(
            "fit has {k} arms and {} covariates; truth has {} arms, evaluation points {} columns",
            fit.d(),
            true_beta.len(),
            eval.cols()
        )));
    }
    let mut total = 0.0;
    for x in eval.iter_rows() {
        for (t, b) in true_beta.iter().enumerate() {
            let est = fit.arm_beta(t + 1);
            let diff = (est[0] - b[0]) + dot(&est[1..], x) - dot(&b[1..], x);
            total += diff * diff;
        }
    }
    Ok(total / (eval.rows() * k) as f64)
}

/// `1 − Σ(τ̂ − τ)² / Στ²`.
pub fn sensitivity_r2(oracle: &[f64], estimate: &[f64]) -> Result<f64> {
    if oracle.len() != estimate.len() {
        return Err(DinaError::DimensionMismatch(format!("{} oracle vs {} estimated values", oracle.len(), estimate.len())));
    }
    let denom: f64 = oracle.iter().map(|t| t * t).sum();
    if denom == 0.0 {
        return Err(DinaError::InvalidArgument("oracle effects are all zero".into()));
    }
    let num: f64 = oracle.iter().zip(estimate).map(|(t, h)| (h - t).powi(2)).sum();
    Ok(1.0 - num / denom)
}

/// Least-squares slope of `log MSE` on `log n`.
pub fn rate_regression(mse_by_n: &[(usize, f64)]) -> Result<f64> {
    let mut sizes: Vec<usize> = mse_by_n.iter().map(|p| p.0).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 3 {
        return Err(DinaError::InvalidArgument("rate regression needs at least three sample sizes".into()));
    }
    if let Some(&(n, m)) = mse_by_n.iter().find(|p| !(p.1 > 0.0) || p.0 == 0) {
        return Err(DinaError::InvalidArgument(format!("nonpositive entry (n = {n}, mse = {m})")));
    }
    let lx: Vec<f64> = mse_by_n.iter().map(|p| (p.0 as f64).ln()).collect();
    let ly: Vec<f64> = mse_by_n.iter().map(|p| p.1.ln()).collect();
    Ok(crate::dina::diagnostics::ols_slope(&lx, &ly))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub b: usize,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    /// Resamples drawn, including failed ones.
    pub attempts: usize,
}

impl BootstrapResult {
    pub fn covers(&self, j: usize, value: f64) -> bool {
        self.ci_lo[j] <= value && value <= self.ci_hi[j]
    }

    pub fn width(&self, j: usize) -> f64 {
        self.ci_hi[j] - self.ci_lo[j]
    }
}

/// Row indices of bootstrap resample `attempt`.
pub fn resample_indices(n: usize, seed: u64, attempt: usize) -> Vec<usize> {
    use rand::Rng;
    let mut rng = rng::stream(replication_seed(seed, attempt as u64), streams::BOOTSTRAP);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Normal-type interval `β̂ ± z·SE` from `b` row resamples, each refitted by
/// `estimator`. Failed resamples are redrawn, up to `5b` attempts.
pub fn bootstrap_ci<F>(data: &Dataset, estimator: F, b: usize, level: f64, seed: u64) -> Result<BootstrapResult>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    if b < 2 {
        return Err(DinaError::InvalidArgument("bootstrap needs at least two resamples".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(DinaError::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    let estimate = estimator(data)?;
    let p = estimate.len();
    let max_attempts = 5 * b;
    let mut draws: Vec<Vec<f64>> = Vec::with_capacity(b);
    let mut attempts = 0;
    let mut last_error = None;
    while draws.len() < b && attempts < max_attempts {
        let batch = (b - draws.len()).min(max_attempts - attempts);
        let results: Vec<Result<Vec<f64>>> = (attempts..attempts + batch)
            .into_par_iter()
            .map(|a| estimator(&data.subset(&resample_indices(data.n(), seed, a))))
            .collect();
        attempts += batch;
        for r in results {
            match r {
                Ok(v) if v.len() == p && v.iter().all(|x| x.is_finite()) => draws.push(v),
                Ok(_) => last_error = Some("resample returned a malformed estimate".to_string()),
                Err(e) => last_error = Some(e.to_string()),
            }
        }
    }
    if draws.len() < b {
        return Err(DinaError::Bootstrap(format!(
            "{} of {max_attempts} resamples failed; last error: {}",
            max_attempts - draws.len(),
            last_error.unwrap_or_default()
        )));
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let nb = b as f64;
    let se: Vec<f64> = (0..p)
        .map(|j| {
            let m = draws.iter().map(|d| d[j]).sum::<f64>() / nb;
            (draws.iter().map(|d| (d[j] - m).powi(2)).sum::<f64>() / (nb - 1.0)).sqrt()
        })
        .collect();
    let ci_lo = estimate.iter().zip(&se).map(|(e, s)| e - z * s).collect();
    let ci_hi = estimate.iter().zip(&se).map(|(e, s)| e + z * s).collect();
    Ok(BootstrapResult { b, estimate, se, ci_lo, ci_hi, attempts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub method: String,
    pub n: usize,
    pub replication: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub method: String,
    pub sample_size: usize,
    pub coefficient: usize,
    pub coverage: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Row {
    pub method: String,
    pub replication: usize,
    pub r2: f64,
}

/// Coverage and mean width per coefficient over replications.
pub fn coverage_rows(method: &str, sample_size: usize, truth: &[f64], results: &[BootstrapResult]) -> Vec<CoverageRow> {
    let reps = results.len() as f64;
    (0..truth.len())
        .map(|j| {
            let hits = results.iter().filter(|r| r.covers(j, truth[j])).count();
            CoverageRow {
                method: method.into(),
                sample_size,
                coefficient: j,
                coverage: hits as f64 / reps,
                width: results.iter().map(|r| r.width(j)).sum::<f64>() / reps,
            }
        })
        .collect()
}

pub fn write_rows<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().map(|r| r.map_err(DinaError::from)).collect()
}

/// Mean and Monte Carlo standard error.
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dina::Method;
    use crate::model::Family;
    use crate::simgen::sample_covariates;

    fn fit_with(beta: Vec<f64>) -> DinaFit {
        DinaFit {
            fold_estimates: vec![beta.clone(), beta.clone()],
            beta,
            diagnostics: vec![],
            family: Family::gaussian(),
            method: Method::Dina,
            n_arms: 2,
        }
    }

    #[test]
    fn tau_mse_examples() {
        let x = sample_covariates(100_000, 2, 1);
        let truth = vec![vec![0.5, 1.0, -1.0]];
        assert_eq!(tau_mse(&fit_with(truth[0].clone()), &truth, &x).unwrap(), 0.0);
        let shifted = fit_with(vec![1.5, 1.0, -1.0]);
        assert!((tau_mse(&shifted, &truth, &x).unwrap() - 1.0).abs() < 1e-12);
        let tilted = fit_with(vec![0.5, 2.0, -1.0]);
        assert!((tau_mse(&tilted, &truth, &x).unwrap() - 1.0 / 3.0).abs() < 0.01);
        assert!(tau_mse(&tilted, &truth, &sample_covariates(10, 3, 1)).is_err());
    }

    #[test]
    fn r2_examples() {
        let t = [1.0, -2.0, 0.5];
        assert_eq!(sensitivity_r2(&t, &t).unwrap(), 1.0);
        assert_eq!(sensitivity_r2(&t, &[0.0; 3]).unwrap(), 0.0);
        let doubled: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
        assert!(sensitivity_r2(&t, &doubled).unwrap().abs() < 1e-15);
        assert!(sensitivity_r2(&[0.0; 3], &t).is_err());
    }

    #[test]
    fn rate_examples() {
        let exact: Vec<(usize, f64)> = [1024, 2048, 4096].iter().map(|&n| (n, 3.0 / n as f64)).collect();
        assert!((rate_regression(&exact).unwrap() + 1.0).abs() < 1e-12);
        let flat: Vec<(usize, f64)> = [1024, 2048, 4096].iter().map(|&n| (n, 0.2)).collect();
        assert!(rate_regression(&flat).unwrap().abs() < 1e-12);
        assert!(rate_regression(&exact[..2]).is_err());
        assert!(rate_regression(&[(1, 1.0), (2, 0.0), (3, 1.0)]).is_err());
    }

    fn toy_data(n: usize) -> Dataset {
        let cfg = crate::simgen::SimConfig { alpha: vec![0.0, 1.0], ..crate::simgen::SimConfig::null(n, 1, Family::gaussian()) };
        crate::simgen::gen_dataset(&cfg).unwrap().0
    }

    #[test]
    fn constant_estimator_is_degenerate() {
        let data = toy_data(50);
        let r = bootstrap_ci(&data, |_| Ok(vec![2.0, -1.0]), 20, 0.95, 3).unwrap();
        assert_eq!(r.se, vec![0.0, 0.0]);
        assert_eq!(r.ci_lo, r.ci_hi);
        assert_eq!(r.ci_lo, vec![2.0, -1.0]);
    }

    #[test]
    fn bootstrap_is_deterministic_and_ordered() {
        let data = toy_data(200);
        let mean = |d: &Dataset| Ok(vec![d.y.iter().sum::<f64>() / d.n() as f64]);
        let a = bootstrap_ci(&data, mean, 50, 0.95, 9).unwrap();
        let b = bootstrap_ci(&data, mean, 50, 0.95, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.ci_lo[0] <= a.ci_hi[0]);
    }

    #[test]
    fn failing_resamples_are_redrawn_then_error() {
        let data = toy_data(40);
        let original = data.y.clone();
        let flaky = |d: &Dataset| if d.y != original && d.y[0] > 0.0 { Err(DinaError::NoEvents) } else { Ok(vec![1.0]) };
        let r = bootstrap_ci(&data, flaky, 10, 0.95, 1).unwrap();
        assert!(r.attempts > 10 && r.attempts <= 50);
        let never = |d: &Dataset| if d.y == original { Ok(vec![0.0]) } else { Err(DinaError::NoEvents) };
        assert!(matches!(bootstrap_ci(&data, never, 10, 0.95, 1), Err(DinaError::Bootstrap(_))));
    }

    #[test]
    fn ols_bootstrap_se_matches_analytic() {
        let n = 2048;
        let data = toy_data(n);
        let ols = |d: &Dataset| {
            let spec = crate::glm::GlmSpec::new(Family::gaussian(), d.x.with_intercept());
            Ok(crate::glm::fit_glm(&spec, &d.y)?.coef)
        };
        let r = bootstrap_ci(&data, ols, 100, 0.95, 5).unwrap();
        let xs: Vec<f64> = (0..n).map(|i| data.x.get(i, 0)).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let analytic = (1.0 / sxx).sqrt();
        assert!((r.se[1] / analytic - 1.0).abs() < 0.3, "{} vs {analytic}", r.se[1]);
    }

    #[test]
    fn coverage_rows_tally() {
        let r = BootstrapResult { b: 2, estimate: vec![0.0], se: vec![1.0], ci_lo: vec![-1.0], ci_hi: vec![1.0], attempts: 2 };
        let far = BootstrapResult { ci_lo: vec![2.0], ci_hi: vec![3.0], ..r.clone() };
        let rows = coverage_rows("dina", 10, &[0.5], &[r.clone(), r, far]);
        assert!((rows[0].coverage * 3.0 - 2.0).abs() < 1e-12);
        assert!((rows[0].width - (2.0 + 2.0 + 1.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            MseRow { method: "dina".into(), n: 1024, replication: 0, mse: 0.125 },
            MseRow { method: "se".into(), n: 2048, replication: 3, mse: 1.0 / 3.0 },
        ];
        let mut buf = Vec::new();
        write_rows(&rows, &mut buf).unwrap();
        assert_eq!(read_rows::<MseRow, _>(&buf[..]).unwrap(), rows);
        let cov = vec![CoverageRow { method: "dina".into(), sample_size: 2048, coefficient: 2, coverage: 0.93, width: 0.31 }];
        let mut buf = Vec::new();
        write_rows(&cov, &mut buf).unwrap();
        assert_eq!(read_rows::<CoverageRow, _>(&buf[..]).unwrap(), cov);
    }
}
