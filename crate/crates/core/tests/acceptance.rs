//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs as a plain binary so each line is printed whether or not it passes.
//! Positional arguments filter criteria by number (`cargo test --test
//! acceptance -- 4 7`).

use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;

use dina::baselines::fit_method;
use dina::cox::{uncensored_prob, CensoringMechanism};
use dina::designs;
use dina::dina::diagnostics::{
    claim1_slope, ks_critical_01, ks_exponential, lemma_moment_gap, logit_identity_gap, oracle_nuisances,
    transformed_cox_draws,
};
use dina::dina::{blend_exponential, blend_multi, second_stage, DinaOptions, Method};
use dina::evaluation::{read_rows, CoverageRow, R2Row};
use dina::experiment::{
    run_in_memory, Artifacts, EstimateRow, ExperimentId, MethodSpec, OrthogonalityCsvRow, RateRow, RunConfig,
    SummaryRow,
};
use dina::glm::FitOptions;
use dina::learners::{FittedFunction, LearnerSpec, Propensity};
use dina::simgen::{gen_dataset, sample_covariates};
use dina::{BaselineHazard, Family};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run(cfg: &RunConfig) -> Artifacts {
    run_in_memory(cfg).unwrap_or_else(|e| panic!("{} failed: {e}", cfg.experiment))
}

fn table<T: DeserializeOwned>(art: &Artifacts, path: &str) -> Vec<T> {
    read_rows(art.get(path).unwrap_or_else(|| panic!("missing {path}"))).unwrap()
}

fn config(id: ExperimentId, methods: &[&str]) -> RunConfig {
    let mut cfg = RunConfig::new(id);
    if !methods.is_empty() {
        cfg.methods = methods.iter().map(|m| MethodSpec::parse(m).unwrap()).collect();
    }
    cfg
}

struct Cell {
    mean: f64,
    se: f64,
}

fn cell(summary: &[SummaryRow], method: &str) -> Cell {
    let r = summary.iter().find(|r| r.method == method).unwrap_or_else(|| panic!("no {method} row"));
    Cell { mean: r.mean_mse, se: r.mc_se }
}

/// Standardized gap `(hi − lo) / √(se_lo² + se_hi²)`.
fn gap(lo: &Cell, hi: &Cell) -> f64 {
    (hi.mean - lo.mean) / (lo.se.powi(2) + hi.se.powi(2)).sqrt()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn coefficient(rows: &[EstimateRow], method: &str, j: usize) -> Vec<(f64, f64)> {
    rows.iter().filter(|r| r.method == method && r.coefficient == j).map(|r| (r.estimate, r.truth)).collect()
}

fn c01_gaussian_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for (seed, cfg) in [(1, designs::simulation_model(&Family::gaussian(), 2000).unwrap()), (2, designs::fig3(designs::Fig3Scenario::Both, 1500))] {
        let cfg = dina::simgen::SimConfig { family: Family::gaussian(), ..cfg }.with_seed(seed);
        let (data, _) = gen_dataset(&cfg).unwrap();
        let opts = DinaOptions::default().with_seed(seed);
        let a = fit_method(Method::Dina, &data, &LearnerSpec::Glm, &LearnerSpec::Glm, &opts).unwrap();
        let b = fit_method(Method::E, &data, &LearnerSpec::Glm, &LearnerSpec::Glm, &opts).unwrap();
        worst = a.beta.iter().zip(&b.beta).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    check(worst <= 1e-8, format!("max |dina - e| = {worst:.2e}"))
}

fn c02_confounding_toy() -> Outcome {
    let art = run(&config(ExperimentId::ToyConfounding, &["dina", "se"]));
    let est: Vec<EstimateRow> = table(&art, "estimates.csv");
    let mae = |m| {
        let v = coefficient(&est, m, 1);
        v.iter().map(|(e, t)| (e - t).abs()).sum::<f64>() / v.len() as f64
    };
    let (d, s) = (mae("dina"), mae("se"));
    check(s >= 4.0 * d && d < 0.05, format!("mean |b1|: se {s:.4}, dina {d:.4} (ratio {:.1})", s / d))
}

fn c03_non_collapsibility() -> Outcome {
    let art = run(&config(ExperimentId::Fig2, &["se"]));
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, biased) in [
        ("gaussian-constant", false),
        ("gaussian-heterogeneous", false),
        ("poisson-constant", false),
        ("poisson-heterogeneous", true),
        ("bernoulli-constant", true),
        ("bernoulli-heterogeneous", true),
    ] {
        let est: Vec<EstimateRow> = table(&art, &format!("{label}/estimates.csv"));
        let err: Vec<f64> = coefficient(&est, "se", 1).iter().map(|(e, t)| e - t).collect();
        let (m, sd) = mean_sd(&err);
        let z = m / (sd / (err.len() as f64).sqrt());
        ok &= (z.abs() >= 2.0) == biased;
        parts.push(format!("{label} z={z:+.2}"));
    }
    check(ok, format!("se b1 bias: {}", parts.join(", ")))
}

fn c04_poisson_ordering() -> Outcome {
    let mut cfg = config(ExperimentId::Fig3, &["dina", "e", "se"]);
    cfg.scenarios = vec!["c".into()];
    let s: Vec<SummaryRow> = table(&run(&cfg), "summary.csv");
    let (d, e, se) = (cell(&s, "dina"), cell(&s, "e"), cell(&s, "se"));
    let (z1, z2) = (gap(&d, &e), gap(&e, &se));
    check(
        z1 >= 2.0 && z2 >= 2.0,
        format!("mse dina {:.4} e {:.4} se {:.4}; gaps z={z1:.2}, z={z2:.2}", d.mean, e.mean, se.mean),
    )
}

fn c05_cox_full() -> Outcome {
    let art = run(&config(ExperimentId::Fig4, &["dina", "e", "se"]));
    let mut ok = true;
    let mut parts = Vec::new();
    for c in ["5", "50", "95"] {
        let s: Vec<SummaryRow> = table(&art, &format!("censored-{c}/summary.csv"));
        let (d, e, se) = (cell(&s, "dina"), cell(&s, "e"), cell(&s, "se"));
        let zs = gap(&d, &se);
        ok &= zs >= 2.0;
        let mut p = format!("{c}%: dina {:.4} se {:.4} z={zs:.1}", d.mean, se.mean);
        if c == "95" {
            let ze = gap(&d, &e);
            ok &= ze >= 2.0;
            p += &format!(", e {:.4} z={ze:.2}", e.mean);
        }
        parts.push(p);
    }
    check(ok, parts.join("; "))
}

fn c06_partial_vs_full() -> Outcome {
    let art = run(&config(ExperimentId::Fig5, &["dina", "dina-partial", "se"]));
    let mut ok = true;
    let mut parts = Vec::new();
    for k in ["1", "2", "5"] {
        let s: Vec<SummaryRow> = table(&art, &format!("shape-{k}/summary.csv"));
        let (full, part, se) = (cell(&s, "dina"), cell(&s, "dina-partial"), cell(&s, "se"));
        let ratio = part.mean / full.mean;
        ok &= ratio <= 1.5 && full.mean < se.mean && part.mean < se.mean;
        parts.push(format!("y^{k}: partial/full {ratio:.2}, se {:.4}", se.mean));
    }
    check(ok, parts.join("; "))
}

fn c07_rates() -> Outcome {
    let art = run(&config(ExperimentId::Rate, &["dina", "se"]));
    let mut ok = true;
    let mut parts = Vec::new();
    for fam in ["gaussian", "poisson", "bernoulli", "cox-partial"] {
        let rates: Vec<RateRow> = table(&art, &format!("{fam}/rates.csv"));
        let slope = |m: &str| rates.iter().find(|r| r.method == m).unwrap().slope;
        let d = slope("dina");
        ok &= (-1.3..=-0.7).contains(&d);
        let mut p = format!("{fam} dina {d:.2}");
        if fam == "poisson" || fam == "bernoulli" {
            let s = slope("se");
            ok &= s >= -0.4;
            p += &format!(" se {s:.2}");
        }
        parts.push(p);
    }
    check(ok, format!("slopes: {}", parts.join(", ")))
}

fn c08_coverage() -> Outcome {
    const REFERENCE_WIDTH: [f64; 6] = [0.271, 0.478, 0.491, 0.450, 0.450, 0.449];
    let mut cfg = config(ExperimentId::Table3, &["dina", "se"]);
    cfg.sizes = vec![2048];
    let rows: Vec<CoverageRow> = table(&run(&cfg), "coverage.csv");
    let dina: Vec<&CoverageRow> = rows.iter().filter(|r| r.method == "dina").collect();
    let se_b1 = rows.iter().find(|r| r.method == "se" && r.coefficient == 1).unwrap().coverage;
    let cover_ok = dina.iter().all(|r| (0.86..=1.0).contains(&r.coverage));
    let width_ok = dina.iter().all(|r| (r.width / REFERENCE_WIDTH[r.coefficient] - 1.0).abs() <= 0.4);
    let cov: Vec<String> = dina.iter().map(|r| format!("{:.2}", r.coverage)).collect();
    let wid: Vec<String> = dina.iter().map(|r| format!("{:.3}", r.width)).collect();
    check(
        cover_ok && width_ok && se_b1 <= 0.3,
        format!("dina coverage [{}], widths [{}]; se b1 coverage {se_b1:.2}", cov.join(" "), wid.join(" ")),
    )
}

fn c09_robustness() -> Outcome {
    let art = run(&config(ExperimentId::RobustnessRate, &[]));
    let mut ok = true;
    let mut parts = Vec::new();
    for fam in ["poisson", "bernoulli"] {
        let rates: Vec<RateRow> = table(&art, &format!("{fam}/rates.csv"));
        let slope = |m: &str| rates.iter().find(|r| r.method == m).unwrap().slope;
        let (d, s) = (slope("dina"), slope("se"));
        ok &= d >= 1.6 && s <= 1.3;
        parts.push(format!("{fam} dina {d:.2} se {s:.2}"));
    }
    check(ok, format!("bias slopes: {}", parts.join(", ")))
}

fn c10_orthogonality() -> Outcome {
    let art = run(&config(ExperimentId::Orthogonality, &[]));
    let mut ok = true;
    let mut parts = Vec::new();
    for fam in ["poisson", "cox-full"] {
        let rows: Vec<OrthogonalityCsvRow> = table(&art, &format!("{fam}/orthogonality.csv"));
        let dirs = rows.iter().map(|r| r.direction).collect::<std::collections::BTreeSet<_>>().len();
        let worst = rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
        ok &= worst <= 5.0 && dirs == 5;
        parts.push(format!("{fam} max |z| {worst:.2} over {} rows", rows.len()));
    }
    check(ok, parts.join(", "))
}

fn c11_unit_checks() -> Outcome {
    let b = BaselineHazard::power(1.0, 2.0).unwrap();
    let draws = transformed_cox_draws(&b, 0.0, 10_000, 17).unwrap();
    let ks = ks_exponential(&draws, 1.0);
    let ks_ok = ks < ks_critical_01(draws.len());

    let mut lemma_z: f64 = 0.0;
    for (mech, eta) in [(CensoringMechanism::UniformOn(1.5), 0.3), (CensoringMechanism::UniformOn(0.5), -0.8)] {
        let (m, se) = lemma_moment_gap(&mech, &BaselineHazard::linear_hazard(), eta, 100_000, 23).unwrap();
        lemma_z = lemma_z.max((m / se).abs());
    }
    let mech = CensoringMechanism::UniformOn(1.5);
    let base = BaselineHazard::linear_hazard();
    let p = uncensored_prob(&mech, &base, 0.3).unwrap();
    let (_, delta) = dina::dina::diagnostics::censoring_draws(&mech, &base, 0.3, 100_000, 29).unwrap();
    let (md, sd) = mean_sd(&delta);
    let delta_z = (md - p) / (sd / (delta.len() as f64).sqrt());
    let lemma_ok = lemma_z <= 3.0 && delta_z.abs() <= 3.0;

    let mut logit: f64 = 0.0;
    let mut slopes = (f64::INFINITY, f64::NEG_INFINITY);
    for fam in [Family::Bernoulli, Family::Poisson] {
        for &(e, h0, t) in &[(0.3, -0.5, 0.3), (0.6, 0.4, -0.3), (0.5, 1.0, 0.2), (0.15, -1.2, 0.5)] {
            logit = logit.max(logit_identity_gap(&fam, e, h0, h0 + t));
            let s = claim1_slope(&fam, e, h0, t);
            slopes = (slopes.0.min(s), slopes.1.max(s));
        }
    }
    let slope_ok = 1.7 <= slopes.0 && slopes.1 <= 2.3;
    check(
        ks_ok && lemma_ok && logit <= 1e-10 && slope_ok,
        format!(
            "ks {ks:.4} (crit {:.4}); moment |z| {lemma_z:.2}, delta z {delta_z:+.2}; logit gap {logit:.1e}; remainder slopes [{:.2}, {:.2}]",
            ks_critical_01(draws.len()),
            slopes.0,
            slopes.1
        ),
    )
}

fn c12_multi_arm() -> Outcome {
    let fam = Family::Poisson;
    let h0 = |x: &[f64]| 0.3 * x[0] - 0.5 * x[1];
    let h1 = |x: &[f64]| 0.2 + 0.8 * x[1] + 0.1 * x[2];
    let lg = |x: &[f64]| 0.7 * x[0] - 0.4 * x[2];
    let two = blend_exponential(
        &fam,
        Propensity::Binary(FittedFunction::custom(lg)),
        FittedFunction::custom(h0),
        FittedFunction::custom(h1),
    )
    .unwrap();
    let multi = blend_multi(
        &fam,
        Propensity::Binary(FittedFunction::custom(lg)),
        vec![FittedFunction::custom(h0), FittedFunction::custom(h1)],
    )
    .unwrap();
    let pts = sample_covariates(1000, 3, 31);
    let mut diff: f64 = 0.0;
    for x in pts.iter_rows() {
        let (p, q) = (two.at(x), multi.at(x));
        diff = diff.max((p.a[0] - q.a[0]).abs()).max((p.nu - q.nu).abs());
    }

    let cfg = designs::multi_arm_poisson(20_000).with_seed(37);
    let (data, _) = gen_dataset(&cfg).unwrap();
    let nu = oracle_nuisances(&cfg).unwrap();
    let blend = blend_multi(&fam, nu.propensity, nu.eta).unwrap();
    let fit = second_stage(&data, &blend, &FitOptions::default()).unwrap();
    let truth = cfg.beta.concat();
    let err = fit.coef.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(diff <= 1e-12 && err <= 0.1, format!("K=1 max diff {diff:.1e}; K=2 max coefficient error {err:.3}"))
}

fn c13_sensitivity() -> Outcome {
    let art = run(&config(ExperimentId::Sensitivity, &[]));
    let rows: Vec<R2Row> = table(&art, "r2.csv");
    let stats = |m: &str| {
        let v: Vec<f64> = rows.iter().filter(|r| r.method == m).map(|r| r.r2).collect();
        let (mean, sd) = mean_sd(&v);
        Cell { mean, se: sd / (v.len() as f64).sqrt() }
    };
    let all: Vec<String> = ["dina", "e", "se", "x", "pax"]
        .iter()
        .map(|m| format!("{m} {:.3}", stats(m).mean))
        .collect();
    let (d, s) = (stats("dina"), stats("se"));
    let z = (d.mean - s.mean) / (d.se.powi(2) + s.se.powi(2)).sqrt();
    check(z >= 2.0, format!("mean r2 {}; dina-se z={z:.2}", all.join(", ")))
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

const fn c(id: usize, name: &'static str, secs: u64, run: fn() -> Outcome) -> Criterion {
    Criterion { id, name, limit: Duration::from_secs(secs), run }
}

const CRITERIA: [Criterion; 13] = [
    c(1, "gaussian identity", 1, c01_gaussian_identity),
    c(2, "confounding toy", 60, c02_confounding_toy),
    c(3, "non-collapsibility", 120, c03_non_collapsibility),
    c(4, "poisson three-scenario ordering", 120, c04_poisson_ordering),
    c(5, "cox full likelihood", 300, c05_cox_full),
    c(6, "partial vs full likelihood", 300, c06_partial_vs_full),
    c(7, "convergence rate", 1800, c07_rates),
    c(8, "bootstrap coverage", 3600, c08_coverage),
    c(9, "quadratic robustness", 600, c09_robustness),
    c(10, "orthogonality", 120, c10_orthogonality),
    c(11, "distributional unit checks", 120, c11_unit_checks),
    c(12, "multi-valued reduction", 60, c12_multi_arm),
    c(13, "sensitivity protocol", 600, c13_sensitivity),
];

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for cr in CRITERIA.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let outcome = (cr.run)();
        let took = start.elapsed();
        let in_time = took <= cr.limit;
        let (ok, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        let status = if ok { "PASS" } else { "FAIL" };
        let timing = format!("{:.1}s of {}s", took.as_secs_f64(), cr.limit.as_secs());
        let timing = if in_time { timing } else { format!("{timing}, over time") };
        println!("criterion {:>2} {status} {}: {detail} ({timing})", cr.id, cr.name);
        if !ok {
            failed.push(cr.id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
