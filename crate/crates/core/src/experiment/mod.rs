//! Configuration-driven experiments writing CSV result tables.
//!
//! An experiment expands into scenarios (one simulation design each). Every
//! scenario runs `methods × sizes × replications` fits; results are written
//! to the output directory, or to one subdirectory per scenario when there are
//! several, together with a `manifest.txt` that reproduces the run.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::fit_method;
use crate::designs::{self, Fig3Scenario};
use crate::dina::diagnostics::{orthogonality_check, robustness_rate};
use crate::dina::{DinaFit, DinaOptions, Method};
use crate::error::{DinaError, Result};
use crate::evaluation::{
    bootstrap_ci, coverage_rows, mean_and_se, rate_regression, sensitivity_r2, tau_mse, write_rows, BootstrapResult,
    CoverageRow, MseRow, R2Row, EVAL_POINTS,
};
use crate::learners::LearnerSpec;
use crate::model::{BaselineHazard, Dataset, Family, Matrix};
use crate::rng::replication_seed;
use crate::simgen::{
    gen_confounded_toy, gen_dataset, gen_noncollapsible, sample_covariates, subsample_observational, GroundTruth, LatentZ,
    SimConfig,
};

pub use config::{ExperimentId, MethodSpec, Overrides, RunConfig};

pub const MANIFEST: &str = "manifest.txt";

/// Source of a scenario's datasets.
#[derive(Debug, Clone)]
pub enum Design {
    Sim(SimConfig),
    /// Randomized latent-variable design with `τ(x) = tau[0] + x·tau[1..]`.
    Latent { family: Family, tau: Vec<f64>, latent: LatentZ },
    Toy,
}

impl Design {
    pub fn d(&self) -> usize {
        match self {
            Design::Sim(c) => c.d,
            Design::Latent { tau, .. } => tau.len() - 1,
            Design::Toy => 1,
        }
    }

    /// True `[β_t0, β_t1, …]` per treated arm.
    pub fn truth(&self) -> Vec<Vec<f64>> {
        match self {
            Design::Sim(c) => c.beta.clone(),
            Design::Latent { tau, .. } => vec![tau.clone()],
            Design::Toy => vec![vec![0.0, 0.0]],
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        Ok(self.simulate(n, seed)?.0)
    }

    pub fn simulate(&self, n: usize, seed: u64) -> Result<(Dataset, GroundTruth)> {
        match self {
            Design::Sim(c) => gen_dataset(&c.clone().with_n(n).with_seed(seed)),
            Design::Latent { family, tau, latent } => gen_noncollapsible(n, family, tau, *latent, seed),
            Design::Toy => gen_confounded_toy(n, seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub label: String,
    pub design: Design,
}

fn sim(label: impl Into<String>, cfg: SimConfig) -> Scenario {
    Scenario { label: label.into(), design: Design::Sim(cfg) }
}

fn family_or(cfg: &RunConfig, default: Family) -> Family {
    cfg.family.clone().unwrap_or(default)
}

fn families(cfg: &RunConfig, defaults: Vec<Family>) -> Vec<Family> {
    match &cfg.family {
        Some(f) => vec![f.clone()],
        None => defaults,
    }
}

fn apply_overrides(mut c: SimConfig, o: &Overrides) -> Result<SimConfig> {
    if let Some(a) = &o.alpha {
        c.alpha = a.clone();
    }
    if let Some(b) = &o.beta {
        c.beta = vec![b.clone()];
    }
    if let Some(d) = o.delta {
        c.delta = d;
    }
    if let Some(p) = &o.propensity {
        c.propensity = vec![p.clone()];
    }
    if let Some([p, e, s]) = o.latent {
        c.latent_z = Some(LatentZ::new(p, e)?.with_slope(s));
    }
    c.validate()?;
    Ok(c)
}

/// Applies overrides; Cox designs are recalibrated to `target` when the
/// natural parameters change and no censoring mechanism is given.
fn adjust(c: SimConfig, o: &Overrides, target: Option<f64>) -> Result<SimConfig> {
    let eta_changed = o.alpha.is_some() || o.beta.is_some() || o.delta.is_some() || o.propensity.is_some() || o.latent.is_some();
    let mut c = apply_overrides(c, o)?;
    if let Some(m) = o.censoring {
        c.censoring = m;
    } else if let (true, Some(t), true) = (c.family.is_cox(), target, eta_changed) {
        c = designs::calibrated(c, t)?;
    }
    Ok(c)
}

fn percent(c: f64) -> String {
    format!("{}", (c * 100.0).round())
}

/// Expands a run configuration into its scenarios, honoring `scenarios`.
pub fn scenarios(cfg: &RunConfig) -> Result<Vec<Scenario>> {
    use ExperimentId::*;
    let o = &cfg.overrides;
    let n = cfg.sizes[0];
    let all = match cfg.experiment {
        Fig2 => {
            let mut v = Vec::new();
            for family in families(cfg, vec![Family::gaussian(), Family::Poisson, Family::Bernoulli]) {
                for het in [false, true] {
                    let tau = o.beta.clone().unwrap_or_else(|| designs::fig2_tau(het).to_vec());
                    let latent = match o.latent {
                        Some([p, e, s]) => LatentZ::new(p, e)?.with_slope(s),
                        None => designs::fig2_latent(),
                    };
                    let kind = if het { "heterogeneous" } else { "constant" };
                    v.push(Scenario {
                        label: format!("{}-{kind}", family.name()),
                        design: Design::Latent { family: family.clone(), tau, latent },
                    });
                }
            }
            v
        }
        Fig3 => Fig3Scenario::ALL
            .iter()
            .map(|s| Ok(sim(s.label(), adjust(designs::fig3(*s, n), o, None)?)))
            .collect::<Result<_>>()?,
        Fig4 => designs::FIG4_CENSORING
            .iter()
            .map(|&c| Ok(sim(format!("censored-{}", percent(c)), adjust(designs::fig4(c, n)?, o, Some(c))?)))
            .collect::<Result<_>>()?,
        Fig5 => designs::FIG5_SHAPES
            .iter()
            .map(|&k| {
                Ok(sim(format!("shape-{k}"), adjust(designs::fig5(k, n)?, o, Some(designs::FIG5_CENSORING))?))
            })
            .collect::<Result<_>>()?,
        Fig6 | Table3 => {
            let f = family_or(cfg, Family::Poisson);
            let base = if cfg.experiment == Table3 && matches!(f, Family::Poisson) {
                designs::table3(n)
            } else {
                designs::simulation_model(&f, n)?
            };
            vec![sim(f.name(), adjust(base, o, Some(designs::FIG6_COX_CENSORING))?)]
        }
        Rate => families(
            cfg,
            vec![Family::gaussian(), Family::Poisson, Family::Bernoulli, Family::CoxPartial],
        )
        .into_iter()
        .map(|f| {
            Ok(sim(f.name(), adjust(designs::simulation_model(&f, n)?, o, Some(designs::FIG6_COX_CENSORING))?))
        })
        .collect::<Result<_>>()?,
        ToyConfounding => vec![Scenario { label: "toy".into(), design: Design::Toy }],
        Orthogonality => families(cfg, vec![Family::Poisson, Family::CoxFull(BaselineHazard::linear_hazard())])
            .into_iter()
            .map(|f| Ok(sim(f.name(), adjust(designs::orthogonality(&f, n)?, o, Some(0.3))?)))
            .collect::<Result<_>>()?,
        RobustnessRate => families(cfg, vec![Family::Poisson, Family::Bernoulli])
            .into_iter()
            .map(|f| Ok(sim(f.name(), adjust(designs::robustness(&f, n)?, o, None)?)))
            .collect::<Result<_>>()?,
        Sensitivity => {
            let mut c = designs::sensitivity(n);
            if let Some(f) = &cfg.family {
                c.family = f.clone();
            }
            let o = Overrides { propensity: None, ..o.clone() };
            vec![sim("sensitivity", adjust(c, &o, None)?)]
        }
    };
    if cfg.scenarios.is_empty() {
        return Ok(all);
    }
    cfg.scenarios
        .iter()
        .map(|want| {
            let want = match cfg.experiment {
                Fig3 => Fig3Scenario::parse(want)?.label().to_string(),
                _ => want.clone(),
            };
            all.iter().find(|s| s.label == want).cloned().ok_or_else(|| {
                let known: Vec<&str> = all.iter().map(|s| s.label.as_str()).collect();
                DinaError::Config(format!("unknown scenario `{want}` (known: {})", known.join(", ")))
            })
        })
        .collect()
}

/// One fitted coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub method: String,
    pub n: usize,
    pub replication: usize,
    pub beta: Vec<f64>,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub method: String,
    pub n: usize,
    pub replication: usize,
    pub coefficient: usize,
    pub estimate: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub n: usize,
    pub mean_mse: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub method: String,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityCsvRow {
    pub direction: usize,
    pub component: usize,
    pub derivative: f64,
    pub se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub size: f64,
    pub dina_bias: f64,
    pub se_bias: f64,
}

/// Seed of replication `rep` at sample size `n`.
pub fn data_seed(seed: u64, n: usize, rep: usize) -> u64 {
    replication_seed(replication_seed(seed, n as u64), rep as u64)
}

/// Fresh covariate sample for `τ` errors.
pub fn eval_points(seed: u64, d: usize) -> Matrix {
    sample_covariates(EVAL_POINTS, d, replication_seed(seed, u64::MAX))
}

/// Fits one method; `-partial` methods refit Cox data on the partial likelihood.
pub fn fit_spec(
    spec: MethodSpec,
    data: &Dataset,
    propensity: &LearnerSpec,
    outcome: &LearnerSpec,
    seed: u64,
) -> Result<DinaFit> {
    let opts = DinaOptions::default().with_seed(seed);
    if spec.partial {
        if !data.family.is_cox() {
            return Err(DinaError::Config(format!("{} needs a Cox family", spec.label())));
        }
        fit_method(spec.method, &data.with_family(Family::CoxPartial)?, propensity, outcome, &opts)
    } else {
        fit_method(spec.method, data, propensity, outcome, &opts)
    }
}

fn context(label: &str, n: usize, rep: usize) -> impl Fn(DinaError) -> DinaError + '_ {
    move |e| DinaError::Config(format!("{label} failed at n={n}, replication {rep}: {e}"))
}

/// Every method on the same replicated datasets, ordered by `(n, replication, method)`.
pub fn mse_study(cfg: &RunConfig, design: &Design) -> Result<Vec<FitRecord>> {
    let truth = design.truth();
    let eval = eval_points(cfg.seed, design.d());
    let cells: Vec<(usize, usize)> =
        cfg.sizes.iter().flat_map(|&n| (0..cfg.replications).map(move |r| (n, r))).collect();
    let out: Vec<Vec<FitRecord>> = cells
        .par_iter()
        .map(|&(n, r)| {
            let seed = data_seed(cfg.seed, n, r);
            let data = design.generate(n, seed)?;
            cfg.methods
                .iter()
                .map(|&m| {
                    let label = m.label();
                    let fit = fit_spec(m, &data, &cfg.propensity_learner, &cfg.outcome_learner, seed)
                        .map_err(context(&label, n, r))?;
                    let mse = tau_mse(&fit, &truth, &eval)?;
                    Ok(FitRecord { method: label, n, replication: r, beta: fit.beta, mse })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

pub fn mse_rows(records: &[FitRecord]) -> Vec<MseRow> {
    records
        .iter()
        .map(|r| MseRow { method: r.method.clone(), n: r.n, replication: r.replication, mse: r.mse })
        .collect()
}

pub fn estimate_rows(records: &[FitRecord], truth: &[Vec<f64>]) -> Vec<EstimateRow> {
    let flat: Vec<f64> = truth.concat();
    records
        .iter()
        .flat_map(|r| {
            r.beta.iter().enumerate().map(|(j, &b)| EstimateRow {
                method: r.method.clone(),
                n: r.n,
                replication: r.replication,
                coefficient: j,
                estimate: b,
                truth: flat.get(j).copied().unwrap_or(f64::NAN),
            })
        })
        .collect()
}

/// Mean MSE and its Monte Carlo standard error per method and size, in first-seen order.
pub fn summary_rows(records: &[FitRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in records {
        let k = (r.method.clone(), r.n);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, n)| {
            let v: Vec<f64> = records.iter().filter(|r| r.method == method && r.n == n).map(|r| r.mse).collect();
            let (mean_mse, mc_se) = mean_and_se(&v);
            SummaryRow { method, n, mean_mse, mc_se }
        })
        .collect()
}

/// Log-log slope of mean MSE on `n` per method (needs three sizes).
pub fn rate_rows(summary: &[SummaryRow]) -> Result<Vec<RateRow>> {
    let mut methods: Vec<&str> = Vec::new();
    for s in summary {
        if !methods.contains(&s.method.as_str()) {
            methods.push(&s.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let pts: Vec<(usize, f64)> = summary.iter().filter(|s| s.method == m).map(|s| (s.n, s.mean_mse)).collect();
            Ok(RateRow { method: m.to_string(), slope: rate_regression(&pts)? })
        })
        .collect()
}

/// Bootstrap intervals for every method and replication, ordered as in [`mse_study`].
pub fn coverage_study(cfg: &RunConfig, design: &Design) -> Result<Vec<(String, usize, BootstrapResult)>> {
    let cells: Vec<(usize, usize)> =
        cfg.sizes.iter().flat_map(|&n| (0..cfg.replications).map(move |r| (n, r))).collect();
    let out: Vec<Vec<(String, usize, BootstrapResult)>> = cells
        .par_iter()
        .map(|&(n, r)| {
            let seed = data_seed(cfg.seed, n, r);
            let data = design.generate(n, seed)?;
            cfg.methods
                .iter()
                .map(|&m| {
                    let label = m.label();
                    let estimator = |d: &Dataset| {
                        fit_spec(m, d, &cfg.propensity_learner, &cfg.outcome_learner, seed).map(|f| f.beta)
                    };
                    let res = bootstrap_ci(&data, estimator, cfg.bootstrap, 0.95, seed).map_err(context(&label, n, r))?;
                    Ok((label, n, res))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

pub fn coverage_table(cfg: &RunConfig, truth: &[f64], results: &[(String, usize, BootstrapResult)]) -> Vec<CoverageRow> {
    let mut rows = Vec::new();
    for m in &cfg.methods {
        let label = m.label();
        for &n in &cfg.sizes {
            let cell: Vec<BootstrapResult> =
                results.iter().filter(|(l, k, _)| *l == label && *k == n).map(|(_, _, r)| r.clone()).collect();
            rows.extend(coverage_rows(&label, n, truth, &cell));
        }
    }
    rows
}

/// Sensitivity of each method to an artificial assignment mechanism: every
/// method's fit on the randomized data is its own oracle, compared on the
/// original rows against fits on `replications` thinned subsamples.
pub fn sensitivity_study(cfg: &RunConfig, design: &Design, propensity: &[f64]) -> Result<Vec<R2Row>> {
    let n = cfg.sizes[0];
    let original = design.generate(n, data_seed(cfg.seed, n, usize::MAX))?;
    let tau_on = |fit: &DinaFit| -> Vec<f64> { original.x.iter_rows().map(|x| fit.tau(x)).collect() };
    let oracles: Vec<Vec<f64>> = cfg
        .methods
        .iter()
        .map(|&m| {
            let fit = fit_spec(m, &original, &cfg.propensity_learner, &cfg.outcome_learner, cfg.seed)
                .map_err(context(&m.label(), n, 0))?;
            Ok(tau_on(&fit))
        })
        .collect::<Result<_>>()?;
    let per_rep: Vec<Vec<R2Row>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seed = data_seed(cfg.seed, n, r);
            let (sub, _) = subsample_observational(&original, propensity, seed)?;
            cfg.methods
                .iter()
                .zip(&oracles)
                .map(|(&m, oracle)| {
                    let fit = fit_spec(m, &sub, &cfg.propensity_learner, &cfg.outcome_learner, seed)
                        .map_err(context(&m.label(), sub.n(), r))?;
                    Ok(R2Row { method: m.label(), replication: r, r2: sensitivity_r2(oracle, &tau_on(&fit))? })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

/// In-memory output of a run: relative paths and file contents.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(PathBuf, Vec<u8>)>,
}

impl Artifacts {
    fn csv<T: Serialize>(&mut self, dir: &Path, name: &str, rows: &[T]) -> Result<()> {
        let mut buf = Vec::new();
        write_rows(rows, &mut buf)?;
        self.files.push((dir.join(name), buf));
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&[u8]> {
        self.files.iter().find(|(p, _)| p == Path::new(path)).map(|(_, b)| b.as_slice())
    }
}

fn sim_config(design: &Design) -> Result<&SimConfig> {
    match design {
        Design::Sim(c) => Ok(c),
        _ => Err(DinaError::Config("experiment needs a simulation design".into())),
    }
}

fn run_scenario(cfg: &RunConfig, scenario: &Scenario, dir: &Path, art: &mut Artifacts) -> Result<()> {
    use ExperimentId::*;
    match cfg.experiment {
        Orthogonality => {
            let c = sim_config(&scenario.design)?;
            let rows: Vec<OrthogonalityCsvRow> = orthogonality_check(c, cfg.step, cfg.directions, cfg.seed)?
                .into_iter()
                .map(|r| OrthogonalityCsvRow {
                    direction: r.direction,
                    component: r.component,
                    derivative: r.derivative,
                    se: r.se,
                    z: r.z(),
                })
                .collect();
            art.csv(dir, "orthogonality.csv", &rows)
        }
        RobustnessRate => {
            let c = sim_config(&scenario.design)?;
            let res = robustness_rate(c, &cfg.perturbations, cfg.replications, cfg.seed)?;
            let rows: Vec<RobustnessRow> = (0..res.sizes.len())
                .map(|i| RobustnessRow { size: res.sizes[i], dina_bias: res.dina_bias[i], se_bias: res.se_bias[i] })
                .collect();
            art.csv(dir, "robustness.csv", &rows)?;
            let rates = [
                RateRow { method: Method::Dina.name().into(), slope: res.dina_slope },
                RateRow { method: Method::Se.name().into(), slope: res.se_slope },
            ];
            art.csv(dir, "rates.csv", &rates)
        }
        Sensitivity => {
            let coefs = cfg.overrides.propensity.clone().unwrap_or_else(|| designs::SENSITIVITY_PROPENSITY.to_vec());
            let rows = sensitivity_study(cfg, &scenario.design, &coefs)?;
            art.csv(dir, "r2.csv", &rows)
        }
        Table3 => {
            let results = coverage_study(cfg, &scenario.design)?;
            let truth = scenario.design.truth();
            art.csv(dir, "coverage.csv", &coverage_table(cfg, &truth[0], &results))?;
            let eval = eval_points(cfg.seed, scenario.design.d());
            let mut records = Vec::with_capacity(results.len());
            let reps = cfg.replications;
            for (i, (label, n, r)) in results.iter().enumerate() {
                let fit = placeholder_fit(&r.estimate, &scenario.design);
                records.push(FitRecord {
                    method: label.clone(),
                    n: *n,
                    replication: (i / cfg.methods.len()) % reps,
                    beta: r.estimate.clone(),
                    mse: tau_mse(&fit, &truth, &eval)?,
                });
            }
            write_fit_tables(dir, art, &records, &truth, false)
        }
        _ => {
            let records = mse_study(cfg, &scenario.design)?;
            let rates = matches!(cfg.experiment, Fig6 | Rate) && cfg.sizes.len() >= 3;
            write_fit_tables(dir, art, &records, &scenario.design.truth(), rates)
        }
    }
}

fn placeholder_fit(beta: &[f64], design: &Design) -> DinaFit {
    let family = match design {
        Design::Sim(c) => c.family.clone(),
        Design::Latent { family, .. } => family.clone(),
        Design::Toy => Family::gaussian(),
    };
    DinaFit {
        beta: beta.to_vec(),
        fold_estimates: vec![],
        diagnostics: vec![],
        family,
        method: Method::Dina,
        n_arms: 2,
    }
}

fn write_fit_tables(dir: &Path, art: &mut Artifacts, records: &[FitRecord], truth: &[Vec<f64>], rates: bool) -> Result<()> {
    art.csv(dir, "mse_results.csv", &mse_rows(records))?;
    art.csv(dir, "estimates.csv", &estimate_rows(records, truth))?;
    let summary = summary_rows(records);
    art.csv(dir, "summary.csv", &summary)?;
    if rates {
        art.csv(dir, "rates.csv", &rate_rows(&summary)?)?;
    }
    Ok(())
}

/// Runs every scenario in memory; nothing touches the filesystem.
pub fn run_in_memory(cfg: &RunConfig) -> Result<Artifacts> {
    cfg.validate()?;
    let run = || -> Result<Artifacts> {
        let list = scenarios(cfg)?;
        let mut art = Artifacts::default();
        let nested = list.len() > 1;
        for s in &list {
            let dir = if nested { PathBuf::from(&s.label) } else { PathBuf::new() };
            run_scenario(cfg, s, &dir, &mut art)?;
        }
        let manifest = format!("# dina {}\nversion = {}\n{}", env!("CARGO_PKG_VERSION"), env!("CARGO_PKG_VERSION"), manifest_config(cfg));
        art.files.push((PathBuf::from(MANIFEST), manifest.into_bytes()));
        Ok(art)
    };
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| DinaError::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

fn manifest_config(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.out = None;
    c.threads = None;
    c.to_text()
}

/// Runs the experiment and writes its files under `cfg.out`. On error no
/// file is written.
pub fn run_experiment(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let out = cfg.out.clone().ok_or_else(|| DinaError::Config("no output directory given".into()))?;
    let art = run_in_memory(cfg)?;
    let mut written = Vec::with_capacity(art.files.len());
    for (rel, bytes) in &art.files {
        let path = out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        written.push(path);
    }
    Ok(written)
}
