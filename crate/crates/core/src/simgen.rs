//! Simulation designs: misspecified GLM arms, latent non-collapsible
//! components, censoring regimes and observational subsampling.

use rand::Rng;

use crate::cox::CensoringMechanism;
use crate::error::{DinaError, Result};
use crate::model::{dot, mu_unchecked, response_variance, sample, sigmoid, BaselineHazard, Dataset, Family, Matrix};
use crate::rng::{self, streams};

/// Unobserved binary `Z` added to every arm's natural parameter.
/// `P(Z = 1 | x) = σ(logit(prob) + slope·x₁)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentZ {
    pub prob: f64,
    pub effect: f64,
    pub slope: f64,
}

impl LatentZ {
    pub fn new(prob: f64, effect: f64) -> Result<Self> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(DinaError::InvalidArgument(format!("latent probability must lie in (0, 1), got {prob}")));
        }
        Ok(Self { prob, effect, slope: 0.0 })
    }

    pub fn with_slope(mut self, slope: f64) -> Self {
        self.slope = slope;
        self
    }

    pub fn prob_at(&self, x: &[f64]) -> f64 {
        sigmoid(crate::model::logit(self.prob) + self.slope * x.first().copied().unwrap_or(0.0))
    }
}

/// `η₀(x) = α₀ + xᵀα + δx₁x₂ [+ effect·z]`, `η_t(x) = η₀(x) + β_t0 + xᵀβ_t`,
/// `X ~ U[−1, 1]^d`, multinomial-logistic treatment.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub d: usize,
    /// `[α₀, α₁, …, α_d]`
    pub alpha: Vec<f64>,
    /// `[β_t0, β_t1, …, β_td]` for every treated arm `t = 1..K`.
    pub beta: Vec<Vec<f64>>,
    pub delta: f64,
    /// Logistic coefficients over `[1, x]` for every treated arm (arm 0 is the reference).
    pub propensity: Vec<Vec<f64>>,
    pub family: Family,
    /// Baseline hazard used to draw Cox event times (a `CoxFull` family uses its own).
    pub baseline: BaselineHazard,
    pub censoring: CensoringMechanism,
    pub latent_z: Option<LatentZ>,
    pub seed: u64,
    /// Seed for the outcome, censoring and latent streams, when it differs from `seed`.
    pub noise_seed: Option<u64>,
}

impl SimConfig {
    /// Randomized null design with `d` covariates and two arms.
    pub fn null(n: usize, d: usize, family: Family) -> Self {
        SimConfig {
            n,
            d,
            alpha: vec![0.0; d + 1],
            beta: vec![vec![0.0; d + 1]],
            delta: 0.0,
            propensity: vec![vec![0.0; d + 1]],
            family,
            baseline: BaselineHazard::linear_hazard(),
            censoring: CensoringMechanism::NoCensoring,
            latent_z: None,
            seed: 0,
            noise_seed: None,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_censoring(mut self, censoring: CensoringMechanism) -> Self {
        self.censoring = censoring;
        self
    }

    pub fn n_arms(&self) -> usize {
        self.beta.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.d + 1;
        let bad = |what: &str| Err(DinaError::InvalidArgument(format!("{what} must have {p} entries")));
        if self.n == 0 || self.d < 2 && self.delta != 0.0 {
            return Err(DinaError::InvalidArgument("need n ≥ 1 and d ≥ 2 when delta is nonzero".into()));
        }
        if self.alpha.len() != p {
            return bad("alpha");
        }
        if self.beta.is_empty() || self.beta.iter().any(|b| b.len() != p) {
            return bad("every beta");
        }
        if self.propensity.len() != self.beta.len() || self.propensity.iter().any(|b| b.len() != p) {
            return bad("every propensity vector");
        }
        self.censoring.validate()
    }

    fn sampling_family(&self) -> Family {
        match &self.family {
            Family::CoxPartial => Family::CoxFull(self.baseline.clone()),
            f => f.clone(),
        }
    }

    /// `η₀(x)` without the latent term.
    pub fn eta0(&self, x: &[f64]) -> f64 {
        let inter = if self.d >= 2 { self.delta * x[0] * x[1] } else { 0.0 };
        self.alpha[0] + dot(&self.alpha[1..], x) + inter
    }

    /// `τ_t(x)` for treated arm `t ≥ 1`.
    pub fn tau(&self, x: &[f64], t: usize) -> f64 {
        let b = &self.beta[t - 1];
        b[0] + dot(&b[1..], x)
    }

    /// `η_w(x)` without the latent term.
    pub fn eta(&self, x: &[f64], w: usize) -> f64 {
        self.eta0(x) + if w == 0 { 0.0 } else { self.tau(x, w) }
    }

    /// True treatment probabilities for every arm.
    pub fn propensity_at(&self, x: &[f64]) -> Vec<f64> {
        let lin: Vec<f64> = self.propensity.iter().map(|c| c[0] + dot(&c[1..], x)).collect();
        let m = lin.iter().fold(0.0_f64, |a, &b| a.max(b));
        let mut p = vec![(-m).exp()];
        p.extend(lin.iter().map(|l| (l - m).exp()));
        let s: f64 = p.iter().sum();
        p.into_iter().map(|v| v / s).collect()
    }
}

/// Per-row truth behind a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `η_w(x, z)` for every arm.
    pub eta: Vec<Vec<f64>>,
    /// Treatment probabilities for every arm.
    pub e: Vec<Vec<f64>>,
    /// `τ_t(x)` for every treated arm.
    pub tau: Vec<Vec<f64>>,
    pub z: Option<Vec<u8>>,
}

impl GroundTruth {
    /// Writes `true_eta0.., true_e, true_tau` (binary) or per-arm columns.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let k = self.eta.first().map_or(2, Vec::len);
        let mut header: Vec<String> = (0..k).map(|t| format!("true_eta{t}")).collect();
        if k == 2 {
            header.push("true_e".into());
            header.push("true_tau".into());
        } else {
            header.extend((1..k).map(|t| format!("true_e{t}")));
            header.extend((1..k).map(|t| format!("true_tau{t}")));
        }
        wtr.write_record(&header)?;
        for i in 0..self.eta.len() {
            let mut rec: Vec<String> = self.eta[i].iter().map(|v| v.to_string()).collect();
            rec.extend(self.e[i][1..].iter().map(|v| v.to_string()));
            rec.extend(self.tau[i].iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `n × d` covariates from `U[−1, 1]`.
pub fn sample_covariates(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = rng::stream(seed, streams::COVARIATES);
    Matrix::from_raw(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn draw_arm<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (t, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return t;
        }
    }
    p.len() - 1
}

pub fn gen_dataset(config: &SimConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let n = config.n;
    let k = config.n_arms();
    let x = sample_covariates(n, config.d, config.seed);
    let noise = config.noise_seed.unwrap_or(config.seed);
    let mut treat_rng = rng::stream(config.seed, streams::TREATMENT);
    let mut out_rng = rng::stream(noise, streams::OUTCOME);
    let mut cens_rng = rng::stream(noise, streams::CENSORING);
    let mut z_rng = rng::stream(noise, streams::LATENT);
    let fam = config.sampling_family();
    let is_cox = config.family.is_cox();

    let mut w = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut delta = Vec::with_capacity(if is_cox { n } else { 0 });
    let mut truth = GroundTruth {
        eta: Vec::with_capacity(n),
        e: Vec::with_capacity(n),
        tau: Vec::with_capacity(n),
        z: config.latent_z.map(|_| Vec::with_capacity(n)),
    };
    for xi in x.iter_rows() {
        let e = config.propensity_at(xi);
        let arm = draw_arm(&e, &mut treat_rng);
        let shift = match &config.latent_z {
            Some(lz) => {
                let z = u8::from(z_rng.gen::<f64>() < lz.prob_at(xi));
                truth.z.as_mut().expect("allocated with latent").push(z);
                lz.effect * f64::from(z)
            }
            None => 0.0,
        };
        let etas: Vec<f64> = (0..k).map(|t| config.eta(xi, t) + shift).collect();
        let t = sample(&fam, etas[arm], &mut out_rng)?;
        if is_cox {
            let c = config.censoring.sample(&mut cens_rng);
            delta.push(u8::from(t <= c));
            y.push(t.min(c));
        } else {
            y.push(t);
        }
        w.push(arm);
        truth.tau.push((1..k).map(|t| config.tau(xi, t)).collect());
        truth.eta.push(etas);
        truth.e.push(e);
    }
    let data = Dataset::new(config.family.clone(), x, w, y, is_cox.then_some(delta), k)?;
    Ok((data, truth))
}

/// Gaussian outcomes with `η₀ = η₁ = x₁²` and `e(x) = σ(x₁)`: no effect, confounded.
pub fn gen_confounded_toy(n: usize, seed: u64) -> Result<(Dataset, GroundTruth)> {
    let x = sample_covariates(n, 1, seed);
    let mut treat_rng = rng::stream(seed, streams::TREATMENT);
    let mut out_rng = rng::stream(seed, streams::OUTCOME);
    let fam = Family::gaussian();
    let mut w = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut truth = GroundTruth { eta: vec![], e: vec![], tau: vec![], z: None };
    for r in x.iter_rows() {
        let e = sigmoid(r[0]);
        let arm = usize::from(treat_rng.gen::<f64>() < e);
        let eta = r[0] * r[0];
        y.push(sample(&fam, eta, &mut out_rng)?);
        w.push(arm);
        truth.eta.push(vec![eta, eta]);
        truth.e.push(vec![1.0 - e, e]);
        truth.tau.push(vec![0.0]);
    }
    Ok((Dataset::new(fam, x, w, y, None, 2)?, truth))
}

/// Randomized design (`e = 1/2`) with `η₀ = effect·Z`, `η₁ = τ(x) + effect·Z`,
/// `Z` unobserved. `tau` holds `[β₀, β₁, …]` and fixes `d`.
pub fn gen_noncollapsible(
    n: usize,
    family: &Family,
    tau: &[f64],
    latent: LatentZ,
    seed: u64,
) -> Result<(Dataset, GroundTruth)> {
    if family.is_cox() {
        return Err(DinaError::UnsupportedFamily {
            family: family.name().into(),
            reason: "the latent-variable design is for exponential families".into(),
        });
    }
    let d = tau.len().saturating_sub(1).max(1);
    let mut beta = tau.to_vec();
    beta.resize(d + 1, 0.0);
    let config = SimConfig { latent_z: Some(latent), beta: vec![beta], seed, ..SimConfig::null(n, d, family.clone()) };
    gen_dataset(&config)
}

/// Thins a randomized dataset so that `P(W = 1 | x)` among kept rows is
/// `e(x) = σ([1, x]·coefs)`. Returns the kept rows and their indices.
pub fn subsample_observational(data: &Dataset, coefs: &[f64], seed: u64) -> Result<(Dataset, Vec<usize>)> {
    if data.n_arms != 2 {
        return Err(DinaError::InvalidArgument("subsampling needs two arms".into()));
    }
    if coefs.len() != data.d() + 1 {
        return Err(DinaError::DimensionMismatch(format!(
            "{} coefficients for {} covariates",
            coefs.len(),
            data.d()
        )));
    }
    let mut rng = rng::stream(seed, streams::SUBSAMPLE);
    let mut keep = Vec::new();
    for i in 0..data.n() {
        let x = data.x.row(i);
        let e = sigmoid(coefs[0] + dot(&coefs[1..], x));
        let p = if data.w[i] == 1 { (e / (1.0 - e)).min(1.0) } else { ((1.0 - e) / e).min(1.0) };
        if rng.gen::<f64>() < p {
            keep.push(i);
        }
    }
    Ok((data.subset(&keep), keep))
}

pub const CALIBRATION_DRAWS: usize = 100_000;

/// Censored fraction of `config` under `mechanism`, from a fixed sample.
pub fn censored_fraction(config: &SimConfig, mechanism: &CensoringMechanism, draws: usize, seed: u64) -> Result<f64> {
    let probe = CensoringProbe::new(config, draws, seed)?;
    Ok(probe.fraction(mechanism))
}

/// Event times and standardized censoring draws shared across candidate scales.
struct CensoringProbe {
    times: Vec<f64>,
    unit: Vec<f64>,
    shape: CensoringMechanism,
}

impl CensoringProbe {
    fn new(config: &SimConfig, draws: usize, seed: u64) -> Result<Self> {
        let mut c = config.clone();
        c.n = draws;
        c.seed = seed;
        c.noise_seed = None;
        c.censoring = CensoringMechanism::NoCensoring;
        let (data, _) = gen_dataset(&c)?;
        let mut rng = rng::stream(seed, streams::CALIBRATION);
        let unit = (0..draws).map(|_| config.censoring.with_scale(1.0).sample(&mut rng)).collect();
        Ok(Self { times: data.y, unit, shape: config.censoring })
    }

    fn fraction(&self, m: &CensoringMechanism) -> f64 {
        let s = m.scale().unwrap_or(f64::INFINITY);
        let censored = self.times.iter().zip(&self.unit).filter(|(t, u)| **t > s * **u).count();
        censored as f64 / self.times.len() as f64
    }
}

/// Bisects the scale of `config.censoring` so that the censored fraction
/// matches `target` to within 0.005.
pub fn calibrate_censoring(config: &SimConfig, target: f64) -> Result<CensoringMechanism> {
    if !config.family.is_cox() {
        return Err(DinaError::UnsupportedFamily { family: config.family.name().into(), reason: "no censoring".into() });
    }
    if !(0.0..1.0).contains(&target) {
        return Err(DinaError::CalibrationFailed { target, reason: "target must lie in [0, 1)".into() });
    }
    if let CensoringMechanism::NoCensoring = config.censoring {
        if target == 0.0 {
            return Ok(CensoringMechanism::NoCensoring);
        }
        return Err(DinaError::CalibrationFailed {
            target,
            reason: "no censoring mechanism to scale".into(),
        });
    }
    let probe = CensoringProbe::new(config, CALIBRATION_DRAWS, config.seed ^ 0x5eed)?;
    let at = |log_s: f64| probe.fraction(&probe.shape.with_scale(log_s.exp()));
    let (mut lo, mut hi) = (-30.0_f64, 30.0_f64);
    // fraction decreases in the scale
    if at(lo) < target - 0.005 || at(hi) > target + 0.005 {
        return Err(DinaError::CalibrationFailed {
            target,
            reason: format!("bracket covers [{:.4}, {:.4}]", at(hi), at(lo)),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = at(mid);
        if (f - target).abs() <= 1e-3 || hi - lo < 1e-12 {
            return Ok(probe.shape.with_scale(mid.exp()));
        }
        if f > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    if (at(mid) - target).abs() <= 0.005 {
        Ok(probe.shape.with_scale(mid.exp()))
    } else {
        Err(DinaError::CalibrationFailed { target, reason: "bisection did not settle".into() })
    }
}

/// `Var(E[Y | X, W]) / E[Var(Y | X, W)]` by Monte Carlo over `draws` units,
/// integrating the latent `Z` exactly.
pub fn snr(config: &SimConfig, draws: usize, seed: u64) -> Result<f64> {
    config.validate()?;
    if config.family.is_cox() {
        return Err(DinaError::UnsupportedFamily {
            family: config.family.name().into(),
            reason: "signal-to-noise ratio is defined for exponential families".into(),
        });
    }
    let fam = &config.family;
    let x = sample_covariates(draws, config.d, seed);
    let mut rng = rng::stream(seed, streams::TREATMENT);
    let mut means = Vec::with_capacity(draws);
    let mut var_sum = 0.0;
    for xi in x.iter_rows() {
        let arm = draw_arm(&config.propensity_at(xi), &mut rng);
        let eta = config.eta(xi, arm);
        let (m, v) = match &config.latent_z {
            None => (mu_unchecked(fam, eta), response_variance(fam, eta)?),
            Some(lz) => {
                let p = lz.prob_at(xi);
                let (m0, m1) = (mu_unchecked(fam, eta), mu_unchecked(fam, eta + lz.effect));
                let (v0, v1) = (response_variance(fam, eta)?, response_variance(fam, eta + lz.effect)?);
                let m = (1.0 - p) * m0 + p * m1;
                let within = (1.0 - p) * v0 + p * v1;
                let between = (1.0 - p) * (m0 - m).powi(2) + p * (m1 - m).powi(2);
                (m, within + between)
            }
        };
        means.push(m);
        var_sum += v;
    }
    let nf = draws as f64;
    let mean = means.iter().sum::<f64>() / nf;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok(var / (var_sum / nf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn randomized_null_treated_fraction() {
        let n = 10_000;
        let (data, truth) = gen_dataset(&SimConfig::null(n, 5, Family::Poisson).with_seed(3)).unwrap();
        let frac = data.w.iter().sum::<usize>() as f64 / n as f64;
        assert!((frac - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
        assert!(truth.tau.iter().all(|t| t[0] == 0.0));
    }

    #[test]
    fn noise_seed_keeps_covariates() {
        let a = SimConfig::null(200, 3, Family::Poisson).with_seed(9);
        let b = SimConfig { noise_seed: Some(77), ..a.clone() };
        let (da, _) = gen_dataset(&a).unwrap();
        let (db, _) = gen_dataset(&b).unwrap();
        assert_eq!(da.x, db.x);
        assert_eq!(da.w, db.w);
        assert_ne!(da.y, db.y);
    }

    #[test]
    fn ground_truth_tau_is_linear() {
        let cfg = SimConfig {
            beta: vec![vec![0.3, 1.0, -0.5, 0.0]],
            alpha: vec![0.1, 0.2, 0.3, 0.4],
            delta: 0.7,
            ..SimConfig::null(100, 3, Family::gaussian())
        };
        let (data, truth) = gen_dataset(&cfg).unwrap();
        for i in 0..100 {
            let x = data.x.row(i);
            assert!((truth.tau[i][0] - (0.3 + x[0] - 0.5 * x[1])).abs() < 1e-12);
            assert!((truth.eta[i][1] - truth.eta[i][0] - truth.tau[i][0]).abs() < 1e-12);
        }
    }

    #[test]
    fn singly_censored_rate() {
        let base = BaselineHazard::power(1.0, 1.0).unwrap();
        let cfg = SimConfig {
            censoring: CensoringMechanism::SinglyCensored(2f64.ln()),
            ..SimConfig::null(10_000, 2, Family::CoxFull(base))
        };
        let (data, _) = gen_dataset(&cfg).unwrap();
        let rate = 1.0 - data.censored_fraction().unwrap();
        assert!((rate - 0.5).abs() < 0.02, "{rate}");
    }

    #[test]
    fn calibration_examples() {
        let base = BaselineHazard::power(1.0, 1.0).unwrap();
        let none = SimConfig::null(10, 2, Family::CoxFull(base.clone()));
        assert_eq!(calibrate_censoring(&none, 0.0).unwrap(), CensoringMechanism::NoCensoring);
        let fixed = SimConfig { censoring: CensoringMechanism::SinglyCensored(1.0), ..none.clone() };
        let m = calibrate_censoring(&fixed, 0.5).unwrap();
        let CensoringMechanism::SinglyCensored(t) = m else { panic!() };
        assert!((t - 2f64.ln()).abs() < 0.02, "{t}");

        let unif = SimConfig { censoring: CensoringMechanism::UniformOn(1.0), seed: 4, ..none };
        let m = calibrate_censoring(&unif, 0.95).unwrap();
        let check = SimConfig { censoring: m, seed: 99, n: 20_000, ..unif };
        let (data, _) = gen_dataset(&check).unwrap();
        assert!((data.censored_fraction().unwrap() - 0.95).abs() < 0.01);
    }

    #[test]
    fn subsample_examples() {
        let (data, _) = gen_dataset(&SimConfig::null(2000, 2, Family::Poisson).with_seed(1)).unwrap();
        let (all, idx) = subsample_observational(&data, &[0.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(all.n(), 2000);
        assert_eq!(idx.len(), 2000);
        let big = gen_dataset(&SimConfig::null(100_000, 2, Family::Poisson).with_seed(5)).unwrap().0;
        let (kept, _) = subsample_observational(&big, &[crate::model::logit(0.9), 0.0, 0.0], 3).unwrap();
        let controls_before = big.w.iter().filter(|&&w| w == 0).count() as f64;
        let controls_after = kept.w.iter().filter(|&&w| w == 0).count() as f64;
        let rate = controls_after / controls_before;
        assert!((rate - 1.0 / 9.0).abs() < 3.0 * ((1.0 / 9.0) * (8.0 / 9.0) / controls_before).sqrt());
    }

    #[test]
    fn subsample_matches_target_propensity_in_bins() {
        let big = gen_dataset(&SimConfig::null(100_000, 1, Family::Poisson).with_seed(6)).unwrap().0;
        let (kept, _) = subsample_observational(&big, &[0.0, 2.0], 4).unwrap();
        for b in 0..4 {
            let lo = -1.0 + 0.5 * b as f64;
            let rows: Vec<usize> = (0..kept.n()).filter(|&i| (lo..lo + 0.5).contains(&kept.x.get(i, 0))).collect();
            let treated = rows.iter().filter(|&&i| kept.w[i] == 1).count() as f64 / rows.len() as f64;
            let mid = sigmoid(2.0 * (lo + 0.25));
            assert!((treated - mid).abs() < 0.03, "bin {b}: {treated} vs {mid}");
        }
    }

    #[test]
    fn snr_examples() {
        let flat = SimConfig::null(10, 2, Family::gaussian());
        assert!(snr(&flat, 10_000, 1).unwrap().abs() < 1e-12);
        let lin = SimConfig { alpha: vec![0.0, 1.0, 0.0], ..flat };
        let s = snr(&lin, 100_000, 2).unwrap();
        assert!((s - 1.0 / 3.0).abs() < 0.01, "{s}");
    }

    #[test]
    fn confounded_toy_has_no_effect() {
        let (data, truth) = gen_confounded_toy(500, 1).unwrap();
        assert_eq!(data.d(), 1);
        assert!(truth.tau.iter().all(|t| t[0] == 0.0));
    }
}
