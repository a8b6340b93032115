//! Numerical checks of the estimator's theoretical guarantees.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use super::{blend_cox_at, blend_exponential_at, blend_nuisances, second_stage, BlendRule, DinaOptions, NuisanceEstimates};
use crate::cox::{uncensored_prob, CensoringMechanism, UncensoredModel};
use crate::error::{DinaError, Result};
use crate::glm::FitOptions;
use crate::learners::{FittedFunction, Propensity};
use crate::model::{dot, logit, mu_unchecked, sample, sigmoid, variance_unchecked, BaselineHazard, Family};
use crate::rng::{self, replication_seed, streams};
use crate::simgen::{gen_dataset, sample_covariates, SimConfig};

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// True nuisances of a simulation design without a latent component.
pub fn oracle_nuisances(config: &SimConfig) -> Result<NuisanceEstimates> {
    if config.latent_z.is_some() {
        return Err(DinaError::InvalidArgument("oracle nuisances need an observed-covariate design".into()));
    }
    let k = config.n_arms();
    let c = Arc::new(config.clone());
    let pc = c.clone();
    let propensity = Propensity::Custom { n_arms: k, f: Arc::new(move |x| pc.propensity_at(x)) };
    let eta = (0..k)
        .map(|t| {
            let c = c.clone();
            FittedFunction::custom(move |x| c.eta(x, t))
        })
        .collect();
    let uncensored = match &config.family {
        f if f.is_cox() && !matches!(config.censoring, CensoringMechanism::NoCensoring) => {
            let b = f.baseline().unwrap_or(&config.baseline).clone();
            let c = c.clone();
            let mech = config.censoring;
            Some(UncensoredModel::Custom(Arc::new(move |x, t| {
                uncensored_prob(&mech, &b, c.eta(x, t)).unwrap_or(1.0).max(1e-12)
            })))
        }
        f if f.is_cox() => Some(UncensoredModel::Constant(1.0)),
        _ => None,
    };
    Ok(NuisanceEstimates { propensity, eta, uncensored, mean_outcome: None })
}

/// `|E[Y | X = x] − μ(ν(x))|` for `τ` scaled by each of `scales`.
pub fn claim1_remainders(family: &Family, e: f64, eta0: f64, tau: f64, scales: &[f64]) -> Vec<f64> {
    scales
        .iter()
        .map(|s| {
            let eta1 = eta0 + s * tau;
            let mean = (1.0 - e) * mu_unchecked(family, eta0) + e * mu_unchecked(family, eta1);
            let nu = blend_exponential_at(family, e, eta0, eta1).nu;
            (mean - mu_unchecked(family, nu)).abs()
        })
        .collect()
}

/// Log-log slope of the mean-approximation remainder in the effect scale.
pub fn claim1_slope(family: &Family, e: f64, eta0: f64, tau: f64) -> f64 {
    let scales = [1.0, 0.5, 0.25];
    let r = claim1_remainders(family, e, eta0, tau, &scales);
    let lx: Vec<f64> = scales.iter().map(|s: &f64| s.ln()).collect();
    let ly: Vec<f64> = r.iter().map(|v| v.ln()).collect();
    ols_slope(&lx, &ly)
}

/// Kolmogorov–Smirnov distance of `draws` to `Exp(rate)`.
pub fn ks_exponential(draws: &[f64], rate: f64) -> f64 {
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = 1.0 - (-rate * v).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic level-0.01 critical value of the one-sample KS distance.
pub fn ks_critical_01(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// `Λ(T)` for `draws` Cox event times at natural parameter `eta`.
pub fn transformed_cox_draws(baseline: &BaselineHazard, eta: f64, draws: usize, seed: u64) -> Result<Vec<f64>> {
    let fam = Family::CoxFull(baseline.clone());
    let mut rng = rng::stream(seed, streams::OUTCOME);
    (0..draws).map(|_| sample(&fam, eta, &mut rng).map(|t| baseline.cum_hazard(t))).collect()
}

/// Censored Cox draws `(Yᶜ, Δ)` at natural parameter `eta`.
pub fn censoring_draws(
    mechanism: &CensoringMechanism,
    baseline: &BaselineHazard,
    eta: f64,
    draws: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let fam = Family::CoxFull(baseline.clone());
    let mut out_rng = rng::stream(seed, streams::OUTCOME);
    let mut cens_rng = rng::stream(seed, streams::CENSORING);
    let mut y = Vec::with_capacity(draws);
    let mut delta = Vec::with_capacity(draws);
    for _ in 0..draws {
        let t = sample(&fam, eta, &mut out_rng)?;
        let c = mechanism.sample(&mut cens_rng);
        y.push(t.min(c));
        delta.push(f64::from(u8::from(t <= c)));
    }
    Ok((y, delta))
}

/// Monte Carlo check of `E[Λ(Yᶜ)e^η] = P(Δ = 1)`: returns
/// `(mean of Λ(Yᶜ)e^η − Δ, its standard error)`.
pub fn lemma_moment_gap(
    mechanism: &CensoringMechanism,
    baseline: &BaselineHazard,
    eta: f64,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let (y, delta) = censoring_draws(mechanism, baseline, eta, draws, seed)?;
    let diffs: Vec<f64> = y.iter().zip(&delta).map(|(y, d)| baseline.cum_hazard(*y) * eta.exp() - d).collect();
    Ok(mean_se(&diffs))
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// A bounded perturbation `√2·sin(u·x + φ)`, unit `L²` norm along each axis it uses.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub u: Vec<f64>,
    pub phase: f64,
}

impl Direction {
    pub fn random<R: Rng>(d: usize, rng: &mut R) -> Self {
        let j = rng.gen_range(0..d);
        let mut u = vec![0.0; d];
        u[j] = std::f64::consts::PI * f64::from(rng.gen_range(1..=2u8));
        Direction { u, phase: rng.gen_range(0.0..std::f64::consts::TAU) }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        std::f64::consts::SQRT_2 * (dot(&self.u, x) + self.phase).sin()
    }
}

/// Finite-difference derivative of one score component along a perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalityRow {
    pub direction: usize,
    pub component: usize,
    pub derivative: f64,
    pub se: f64,
}

impl OrthogonalityRow {
    pub fn z(&self) -> f64 {
        if self.se > 0.0 {
            self.derivative / self.se
        } else if self.derivative == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Centered finite differences, at step `h`, of the empirical second-stage
/// score at the true `(a, ν, β)` under `a + hξ`, `ν + hζ`, for `directions`
/// random `(ξ, ζ)` pairs. Two-arm exponential families and `CoxFull`.
pub fn orthogonality_check(config: &SimConfig, h: f64, directions: usize, seed: u64) -> Result<Vec<OrthogonalityRow>> {
    if config.n_arms() != 2 || config.latent_z.is_some() {
        return Err(DinaError::InvalidArgument("orthogonality check needs a two-arm oracle design".into()));
    }
    let baseline = match &config.family {
        Family::CoxPartial => {
            return Err(DinaError::UnsupportedFamily {
                family: "cox-partial".into(),
                reason: "the partial score is not a sum of independent terms".into(),
            })
        }
        Family::CoxFull(b) => Some(b.clone()),
        _ => None,
    };
    let (data, _) = gen_dataset(config)?;
    let beta = &config.beta[0];
    let p = config.d + 1;
    let mut rng = rng::stream(seed, streams::EVALUATION);
    let dirs: Vec<(Direction, Direction)> =
        (0..directions).map(|_| (Direction::random(config.d, &mut rng), Direction::random(config.d, &mut rng))).collect();

    let truth: Vec<(f64, f64)> = (0..data.n())
        .map(|i| {
            let x = data.x.row(i);
            let e = config.propensity_at(x)[1];
            let (h0, h1) = (config.eta(x, 0), config.eta(x, 1));
            let pt = match &baseline {
                Some(b) => {
                    let p0 = uncensored_prob(&config.censoring, b, h0)?;
                    let p1 = uncensored_prob(&config.censoring, b, h1)?;
                    blend_cox_at(e, h0, h1, p0, p1)
                }
                None => blend_exponential_at(&config.family, e, h0, h1),
            };
            Ok((pt.a[0], pt.nu))
        })
        .collect::<Result<_>>()?;

    let score = |i: usize, a: f64, nu: f64, out: &mut [f64]| {
        let x = data.x.row(i);
        let r = f64::from(u8::from(data.w[i] == 1)) - a;
        let eta = nu + r * (beta[0] + dot(&beta[1..], x));
        let resid = match &baseline {
            Some(b) => f64::from(data.delta.as_ref().expect("cox data")[i]) - b.cum_hazard(data.y[i]) * eta.exp(),
            None => data.y[i] - mu_unchecked(&config.family, eta),
        };
        out[0] = r * resid;
        for j in 0..config.d {
            out[j + 1] = r * x[j] * resid;
        }
    };

    let mut rows = Vec::with_capacity(directions * p);
    let mut plus = vec![0.0; p];
    let mut minus = vec![0.0; p];
    for (k, (xi, zeta)) in dirs.iter().enumerate() {
        let mut fd = vec![Vec::with_capacity(data.n()); p];
        for i in 0..data.n() {
            let x = data.x.row(i);
            let (a, nu) = truth[i];
            let (da, dn) = (xi.eval(x), zeta.eval(x));
            score(i, a + h * da, nu + h * dn, &mut plus);
            score(i, a - h * da, nu - h * dn, &mut minus);
            for j in 0..p {
                fd[j].push((plus[j] - minus[j]) / (2.0 * h));
            }
        }
        for (j, v) in fd.iter().enumerate() {
            let (m, se) = mean_se(v);
            rows.push(OrthogonalityRow { direction: k, component: j, derivative: m, se });
        }
    }
    Ok(rows)
}

/// Paired bias of DINA and SE under injected nuisance errors of size `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessResult {
    pub sizes: Vec<f64>,
    /// `‖mean(β̂_c − β̂_0)‖₂` for DINA at each size.
    pub dina_bias: Vec<f64>,
    pub se_bias: Vec<f64>,
    pub dina_slope: f64,
    pub se_slope: f64,
}

struct Perturbation {
    e: Direction,
    eta: [Direction; 2],
}

fn perturbed_nuisances(config: &SimConfig, pert: &Arc<Perturbation>, c: f64) -> NuisanceEstimates {
    let cfg = Arc::new(config.clone());
    let (pc, pp) = (cfg.clone(), pert.clone());
    let propensity = Propensity::binary_fn(move |x| sigmoid(logit(pc.propensity_at(x)[1]) + c * pp.e.eval(x)));
    let eta = (0..2)
        .map(|t| {
            let (cc, pp) = (cfg.clone(), pert.clone());
            FittedFunction::custom(move |x| cc.eta(x, t) + c * pp.eta[t].eval(x))
        })
        .collect();
    NuisanceEstimates { propensity, eta, uncensored: None, mean_outcome: None }
}

fn ols(design: &[Vec<f64>], target: &[f64]) -> Vec<f64> {
    let p = design[0].len();
    let mut g = nalgebra::DMatrix::<f64>::zeros(p, p);
    let mut b = nalgebra::DVector::<f64>::zeros(p);
    for (r, t) in design.iter().zip(target) {
        for i in 0..p {
            b[i] += r[i] * t;
            for j in 0..p {
                g[(i, j)] += r[i] * r[j];
            }
        }
    }
    g.cholesky().map(|c| c.solve(&b).iter().copied().collect()).unwrap_or_else(|| vec![f64::NAN; p])
}

/// Injects `c·ζ` errors into the true logit propensity and both arms'
/// natural parameters and measures the bias of the second-stage estimate
/// relative to the unperturbed oracle fit on the same data, averaged over
/// `reps` datasets of `config.n` rows. Two-arm exponential families.
pub fn robustness_rate(config: &SimConfig, sizes: &[f64], reps: usize, seed: u64) -> Result<RobustnessResult> {
    if config.family.is_cox() || config.n_arms() != 2 || config.latent_z.is_some() {
        return Err(DinaError::InvalidArgument("robustness rate needs a two-arm exponential-family oracle design".into()));
    }
    let mut rng = rng::stream(seed, streams::EVALUATION);
    let pert = Arc::new(Perturbation {
        e: Direction::random(config.d, &mut rng),
        eta: [Direction::random(config.d, &mut rng), Direction::random(config.d, &mut rng)],
    });
    let opts = DinaOptions::default();
    let fit = FitOptions::default().with_ridge_fallback(true);
    let p = config.d + 1;

    let per_rep: Vec<Result<Vec<Vec<f64>>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let cfg = SimConfig { seed: replication_seed(seed, r as u64), ..config.clone() };
            let (data, _) = gen_dataset(&cfg)?;
            let mut fits = Vec::with_capacity(sizes.len() + 1);
            for &c in std::iter::once(&0.0).chain(sizes) {
                let blend = blend_nuisances(&config.family, perturbed_nuisances(config, &pert, c), BlendRule::Dina, &opts)?;
                fits.push(second_stage(&data, &blend, &fit)?.coef);
            }
            Ok(fits)
        })
        .collect();
    let per_rep: Vec<Vec<Vec<f64>>> = per_rep.into_iter().collect::<Result<_>>()?;

    let mut dina_bias = Vec::with_capacity(sizes.len());
    for k in 0..sizes.len() {
        let mean: Vec<f64> = (0..p)
            .map(|j| per_rep.iter().map(|f| f[k + 1][j] - f[0][j]).sum::<f64>() / reps as f64)
            .collect();
        dina_bias.push(mean.iter().map(|v| v * v).sum::<f64>().sqrt());
    }

    // SE regresses the perturbed difference on [1, x]; the outcome noise cancels in the pairing.
    let x = sample_covariates(config.n.min(100_000), config.d, seed);
    let design: Vec<Vec<f64>> = x.iter_rows().map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect()).collect();
    let se_bias: Vec<f64> = sizes
        .iter()
        .map(|&c| {
            let target: Vec<f64> = x.iter_rows().map(|r| c * (pert.eta[1].eval(r) - pert.eta[0].eval(r))).collect();
            ols(&design, &target).iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .collect();

    let lc: Vec<f64> = sizes.iter().map(|c| c.ln()).collect();
    let dl: Vec<f64> = dina_bias.iter().map(|v| v.ln()).collect();
    let sl: Vec<f64> = se_bias.iter().map(|v| v.ln()).collect();
    Ok(RobustnessResult {
        sizes: sizes.to_vec(),
        dina_slope: ols_slope(&lc, &dl),
        se_slope: ols_slope(&lc, &sl),
        dina_bias,
        se_bias,
    })
}

/// Pointwise `|logit a − logit e − log(V₁/V₀)|` at the unclipped blend.
pub fn logit_identity_gap(family: &Family, e: f64, eta0: f64, eta1: f64) -> f64 {
    let (v0, v1) = (variance_unchecked(family, eta0), variance_unchecked(family, eta1));
    let a = e * v1 / (e * v1 + (1.0 - e) * v0);
    (logit(a) - logit(e) - (v1 / v0).ln()).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_slope_examples() {
        assert!((ols_slope(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 2.0).abs() < 1e-12);
        assert!(ols_slope(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).abs() < 1e-12);
    }

    #[test]
    fn direction_has_unit_norm() {
        let mut rng = rng::stream(1, 1);
        let d = Direction::random(3, &mut rng);
        let x = sample_covariates(200_000, 3, 2);
        let m = x.iter_rows().map(|r| d.eval(r).powi(2)).sum::<f64>() / 200_000.0;
        assert!((m - 1.0).abs() < 0.01, "{m}");
    }

    #[test]
    fn logit_identity_holds() {
        for fam in [Family::Bernoulli, Family::Poisson, Family::gaussian()] {
            for &(e, h0, h1) in &[(0.3, -1.0, 0.5), (0.8, 2.0, -0.7), (0.05, 0.0, 3.0)] {
                assert!(logit_identity_gap(&fam, e, h0, h1) < 1e-10);
            }
        }
    }

    #[test]
    fn claim1_slope_is_two() {
        for fam in [Family::Bernoulli, Family::Poisson] {
            for &(e, h0, tau) in &[(0.3, -0.5, 0.3), (0.6, 0.4, -0.3), (0.5, 1.0, 0.2)] {
                let s = claim1_slope(&fam, e, h0, tau);
                assert!((1.7..=2.3).contains(&s), "{fam:?}: {s}");
            }
        }
        assert!(claim1_remainders(&Family::gaussian(), 0.4, 1.0, 2.0, &[1.0])[0] < 1e-12);
    }

    #[test]
    fn ks_accepts_exponential_rejects_shifted() {
        let b = BaselineHazard::power(1.0, 2.0).unwrap();
        let draws = transformed_cox_draws(&b, 0.0, 10_000, 3).unwrap();
        assert!(ks_exponential(&draws, 1.0) < ks_critical_01(draws.len()));
        assert!(ks_exponential(&draws, 1.5) > ks_critical_01(draws.len()));
    }

    #[test]
    fn oracle_nuisances_match_config() {
        let cfg = SimConfig {
            alpha: vec![0.2, 0.5, -0.3],
            beta: vec![vec![0.1, 0.4, 0.0]],
            propensity: vec![vec![0.0, 1.0, 0.0]],
            ..SimConfig::null(10, 2, Family::Poisson)
        };
        let nu = oracle_nuisances(&cfg).unwrap();
        let x = [0.3, -0.6];
        assert!((nu.eta[1].eval(&x) - cfg.eta(&x, 1)).abs() < 1e-15);
        assert!((nu.propensity.treated(&x) - sigmoid(0.3)).abs() < 1e-15);
    }
}
