use std::sync::Arc;

use dina::baselines::{fit_method, fit_pax, fit_x};
use dina::designs;
use dina::dina::diagnostics::oracle_nuisances;
use dina::dina::{DinaOptions, Method};
use dina::learners::{FittedFunction, LearnerSpec, Propensity};
use dina::simgen::{gen_confounded_toy, gen_dataset, SimConfig};
use dina::Family;

const GLM: LearnerSpec = LearnerSpec::Glm;

fn oracle_options(cfg: &SimConfig, seed: u64) -> DinaOptions {
    let cfg = cfg.clone();
    DinaOptions { nuisance: Some(Arc::new(move |_| oracle_nuisances(&cfg))), ..DinaOptions::default().with_seed(seed) }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().map(|b| b.abs()).fold(0.0, f64::max)
}

#[test]
fn dina_randomized_poisson_null() {
    let cfg = SimConfig::null(8192, 5, Family::Poisson).with_seed(41);
    let (data, _) = gen_dataset(&cfg).unwrap();
    let fit = fit_method(Method::Dina, &data, &GLM, &GLM, &DinaOptions::default().with_seed(41)).unwrap();
    assert!(sup(&fit.beta) <= 0.1, "{:?}", fit.beta);
}

#[test]
fn dina_with_oracle_nuisances_is_consistent() {
    let cfg = designs::simulation_model(&Family::Poisson, 8192).unwrap();
    let reps = 20;
    let mut mean = vec![0.0; 6];
    for r in 0..reps {
        let c = cfg.clone().with_seed(300 + r);
        let (data, _) = gen_dataset(&c).unwrap();
        let fit = fit_method(Method::Dina, &data, &GLM, &GLM, &oracle_options(&c, r)).unwrap();
        for j in 0..6 {
            mean[j] += fit.beta[j] / reps as f64;
        }
    }
    let err: f64 = mean.iter().zip(&cfg.beta[0]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(err <= 0.1, "{err}");
}

#[test]
fn e_learner_with_oracle_nuisances_null() {
    let mut cfg = designs::simulation_model(&Family::Poisson, 8192).unwrap().with_seed(47);
    cfg.beta = vec![vec![0.0; 6]];
    let (data, _) = gen_dataset(&cfg).unwrap();
    let fit = fit_method(Method::E, &data, &GLM, &GLM, &oracle_options(&cfg, 47)).unwrap();
    assert!(sup(&fit.beta) <= 0.1, "{:?}", fit.beta);
}

#[test]
fn pax_matches_x_when_randomized() {
    let mut cfg = designs::simulation_model(&Family::Poisson, 8192).unwrap().with_seed(53);
    cfg.propensity = vec![vec![0.0; 6]];
    let (data, _) = gen_dataset(&cfg).unwrap();
    let pax = fit_pax(&data, &GLM, &GLM).unwrap();
    let x = fit_x(&data, &GLM).unwrap();
    let gap = sup(&pax.beta.iter().zip(&x.beta).map(|(a, b)| a - b).collect::<Vec<_>>());
    assert!(gap < 0.05, "{gap}");
}

#[test]
fn pax_less_biased_than_x_under_confounding() {
    let cfg = designs::fig3(designs::Fig3Scenario::Both, 4096);
    let truth = &cfg.beta[0];
    let (mut bx, mut bp) = (vec![0.0; 6], vec![0.0; 6]);
    let reps = 20;
    for r in 0..reps {
        let (data, _) = gen_dataset(&cfg.clone().with_seed(100 + r)).unwrap();
        let x = fit_x(&data, &GLM).unwrap();
        let p = fit_pax(&data, &GLM, &GLM).unwrap();
        for j in 0..6 {
            bx[j] += (x.beta[j] - truth[j]) / reps as f64;
            bp[j] += (p.beta[j] - truth[j]) / reps as f64;
        }
    }
    let norm = |v: &[f64]| v.iter().map(|b| b * b).sum::<f64>().sqrt();
    assert!(norm(&bp) < norm(&bx), "pax {bp:?} x {bx:?}");
}

#[test]
fn confounded_toy_separates_se_from_dina() {
    let (data, _) = gen_confounded_toy(10_000, 59).unwrap();
    let se = fit_method(Method::Se, &data, &GLM, &GLM, &DinaOptions::default()).unwrap();
    assert!(se.beta[1].abs() >= 0.2, "{:?}", se.beta);
    let opts = DinaOptions {
        propensity: Some(Propensity::Binary(FittedFunction::custom(|x| x[0]))),
        ..DinaOptions::default().with_seed(59)
    };
    let dina = fit_method(Method::Dina, &data, &GLM, &GLM, &opts).unwrap();
    assert!(sup(&dina.beta) <= 0.05, "{:?}", dina.beta);
}

#[test]
fn gaussian_null_se_and_e_near_zero() {
    let cfg = SimConfig::null(4000, 3, Family::gaussian()).with_seed(61);
    let (data, _) = gen_dataset(&cfg).unwrap();
    for m in [Method::Se, Method::E] {
        let fit = fit_method(m, &data, &GLM, &GLM, &DinaOptions::default().with_seed(61)).unwrap();
        assert!(sup(&fit.beta) < 0.15, "{} {:?}", m.name(), fit.beta);
    }
}

#[test]
fn multi_arm_fit_recovers_both_effects() {
    let cfg = designs::multi_arm_poisson(20_000).with_seed(67);
    let (data, _) = gen_dataset(&cfg).unwrap();
    let fit = fit_method(Method::Dina, &data, &GLM, &GLM, &oracle_options(&cfg, 67)).unwrap();
    let truth = cfg.beta.concat();
    assert_eq!(fit.beta.len(), truth.len());
    for (a, b) in fit.beta.iter().zip(&truth) {
        assert!((a - b).abs() < 0.1, "{:?} vs {truth:?}", fit.beta);
    }
}

#[test]
fn all_methods_share_output_shape() {
    let cfg = designs::simulation_model(&Family::Bernoulli, 1500).unwrap();
    let (data, _) = gen_dataset(&cfg).unwrap();
    for m in Method::ALL {
        let fit = fit_method(m, &data, &GLM, &GLM, &DinaOptions::default()).unwrap();
        assert_eq!(fit.beta.len(), 6, "{}", m.name());
        assert!(fit.beta.iter().all(|b| b.is_finite()));
    }
}
