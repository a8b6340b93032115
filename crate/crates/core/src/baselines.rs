//! Comparator meta-learners: separate estimation (SE), the X-learner, the
//! propensity-augmented X-learner (PA-X) and the direct R-learner extension (E).

use crate::cox::{fit_cox_full, fit_cox_partial, CoxDesign};
use crate::dina::{fit_dina, BlendRule, DinaFit, DinaOptions, FoldDiagnostics, Method};
use crate::error::{DinaError, Result};
use crate::glm::{fit_glm, FitOptions, GlmFit, GlmSpec};
use crate::learners::{fit_arm_outcomes, fit_learner_with, fit_propensity, FittedFunction, LearnerSpec};
use crate::model::{Dataset, Family, Matrix};

fn single_pass(beta: Vec<f64>, fit: Option<&GlmFit>, data: &Dataset, method: Method) -> DinaFit {
    let diagnostics = vec![match fit {
        Some(f) => FoldDiagnostics::from((0, f)),
        None => FoldDiagnostics { fold: 0, converged: true, iterations: 0, final_gradient_norm: 0.0, ridge_used: false },
    }];
    DinaFit {
        fold_estimates: vec![beta.clone()],
        beta,
        diagnostics,
        family: data.family.clone(),
        method,
        n_arms: data.n_arms,
    }
}

fn require_binary(data: &Dataset) -> Result<()> {
    if data.n_arms != 2 {
        return Err(DinaError::InvalidArgument(format!("method needs two arms, got {}", data.n_arms)));
    }
    Ok(())
}

fn ols(design: Matrix, target: &[f64]) -> Result<GlmFit> {
    fit_glm(&GlmSpec::new(Family::gaussian(), design).with_ridge_fallback(true), target)
}

/// Fits each arm, then regresses `η̂_t(x) − η̂₀(x)` on `[1, x]` over all rows.
pub fn fit_se(data: &Dataset, outcome_spec: &LearnerSpec) -> Result<DinaFit> {
    let eta = fit_arm_outcomes(outcome_spec, data)?;
    let design = data.x.with_intercept();
    let base = eta[0].eval_rows(&data.x);
    let mut beta = Vec::with_capacity((data.n_arms - 1) * (data.d() + 1));
    for f in &eta[1..] {
        let diff: Vec<f64> = f.eval_rows(&data.x).iter().zip(&base).map(|(a, b)| a - b).collect();
        beta.extend(ols(design.clone(), &diff)?.coef);
    }
    Ok(single_pass(beta, None, data, Method::Se))
}

/// Second stage of the X-learner: treated rows with offset `η̂₀(x)` and design `[1, x]`.
/// Under the partial likelihood all rows enter with design `W·[1, x]`.
fn offset_regression(data: &Dataset, eta0: &[f64], opts: &FitOptions) -> Result<GlmFit> {
    let treated = data.arm_indices(1);
    if treated.is_empty() {
        return Err(DinaError::EmptyArm { arm: 1 });
    }
    let events = || data.delta.clone().ok_or_else(|| DinaError::MissingColumn("delta".into()));
    match &data.family {
        Family::CoxPartial => {
            let w: Vec<f64> = data.w.iter().map(|&w| f64::from(u8::from(w == 1))).collect();
            let design = data.x.with_intercept().scale_rows(&w);
            fit_cox_partial(&CoxDesign::new(design, eta0.to_vec(), data.y.clone(), events()?)?, opts)
        }
        fam => {
            let sub = data.subset(&treated);
            let off: Vec<f64> = treated.iter().map(|&i| eta0[i]).collect();
            match fam {
                Family::CoxFull(b) => {
                    let cd = CoxDesign::new(sub.x.with_intercept(), off, sub.y, sub.delta.unwrap_or_default())?;
                    fit_cox_full(&cd, b, opts)
                }
                _ => {
                    let spec =
                        GlmSpec::new(fam.clone(), sub.x.with_intercept()).with_offset(off).with_ridge_fallback(opts.ridge_fallback);
                    fit_glm(&spec, &sub.y)
                }
            }
        }
    }
}

fn control_fit(data: &Dataset, features: &Matrix, spec: &LearnerSpec, opts: &FitOptions) -> Result<FittedFunction> {
    let controls = data.arm_indices(0);
    if controls.is_empty() {
        return Err(DinaError::EmptyArm { arm: 0 });
    }
    let sub = data.subset(&controls);
    fit_learner_with(spec, &data.family, &features.select_rows(&controls), &sub.y, sub.delta.as_deref(), None, opts)
}

/// X-learner: `η̂₀` from controls, then a treated-arm regression offset by it.
pub fn fit_x(data: &Dataset, outcome_spec: &LearnerSpec) -> Result<DinaFit> {
    require_binary(data)?;
    let opts = FitOptions::default().with_ridge_fallback(true);
    let eta0 = control_fit(data, &data.x, outcome_spec, &opts)?.eval_rows(&data.x);
    let fit = offset_regression(data, &eta0, &opts)?;
    Ok(single_pass(fit.coef.clone(), Some(&fit), data, Method::X))
}

/// Features `[x, ê(x), x·ê(x)]`.
pub fn augment_with_propensity(x: &Matrix, e: &[f64]) -> Matrix {
    let d = x.cols();
    let mut rows = Vec::with_capacity(x.rows() * (2 * d + 1));
    for (r, &ei) in x.iter_rows().zip(e) {
        rows.extend_from_slice(r);
        rows.push(ei);
        rows.extend(r.iter().map(|v| v * ei));
    }
    Matrix::from_raw(x.rows(), 2 * d + 1, rows)
}

/// [`augment_with_propensity`] with the augmented columns orthonormalized
/// against `[1, x]` and each other; columns that vanish are dropped.
pub fn orthogonal_augmentation(x: &Matrix, e: &[f64]) -> Matrix {
    let n = x.rows();
    let d = x.cols();
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (n as f64).sqrt(); n]];
    let add = |mut v: Vec<f64>, basis: &mut Vec<Vec<f64>>| -> Option<Vec<f64>> {
        let before = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for _ in 0..2 {
            for q in basis.iter() {
                let c: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(norm > 1e-6 * before) {
            return None;
        }
        let q: Vec<f64> = v.iter().map(|a| a / norm).collect();
        basis.push(q.clone());
        Some(q.iter().map(|a| a * (n as f64).sqrt()).collect())
    };
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(2 * d + 1);
    for j in 0..d {
        let c: Vec<f64> = (0..n).map(|i| x.get(i, j)).collect();
        if add(c.clone(), &mut basis).is_some() {
            cols.push(c);
        }
    }
    let extra = std::iter::once(e.to_vec()).chain((0..d).map(|j| (0..n).map(|i| x.get(i, j) * e[i]).collect()));
    for c in extra {
        if let Some(q) = add(c, &mut basis) {
            cols.push(q);
        }
    }
    let k = cols.len();
    Matrix::from_raw(n, k, (0..n).flat_map(|i| cols.iter().map(move |c| c[i])).collect::<Vec<_>>())
}

/// PA-X: as [`fit_x`] with `η̂₀` learnt on `[x, ê, x·ê]`, `ê` fitted on all rows.
pub fn fit_pax(data: &Dataset, propensity_spec: &LearnerSpec, outcome_spec: &LearnerSpec) -> Result<DinaFit> {
    require_binary(data)?;
    let opts = FitOptions::default().with_ridge_fallback(true);
    let prop = fit_propensity(propensity_spec, &data.x, &data.w, 2)?;
    let e: Vec<f64> = data.x.iter_rows().map(|r| prop.treated(r)).collect();
    let features = match outcome_spec {
        LearnerSpec::Glm => orthogonal_augmentation(&data.x, &e),
        LearnerSpec::Boost(_) => augment_with_propensity(&data.x, &e),
    };
    let eta0 = control_fit(data, &features, outcome_spec, &opts)?.eval_rows(&features);
    let fit = offset_regression(data, &eta0, &opts)?;
    Ok(single_pass(fit.coef.clone(), Some(&fit), data, Method::Pax))
}

/// DINA's cross-fitted pipeline with `a = ê` and `ν = Σ ê_t η̂_t`.
pub fn fit_e(
    data: &Dataset,
    propensity_spec: &LearnerSpec,
    outcome_spec: &LearnerSpec,
    options: &DinaOptions,
) -> Result<DinaFit> {
    fit_dina(data, propensity_spec, outcome_spec, &options.clone().with_rule(BlendRule::RLearner))
}

/// Runs any of the five meta-learners.
pub fn fit_method(
    method: Method,
    data: &Dataset,
    propensity_spec: &LearnerSpec,
    outcome_spec: &LearnerSpec,
    options: &DinaOptions,
) -> Result<DinaFit> {
    match method {
        Method::Dina => fit_dina(data, propensity_spec, outcome_spec, &options.clone().with_rule(BlendRule::Dina)),
        Method::E => fit_e(data, propensity_spec, outcome_spec, options),
        Method::Se => fit_se(data, outcome_spec),
        Method::X => fit_x(data, outcome_spec),
        Method::Pax => fit_pax(data, propensity_spec, outcome_spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{gen_dataset, SimConfig};

    fn gaussian_linear(n: usize, seed: u64) -> Dataset {
        let cfg = SimConfig {
            alpha: vec![0.5, 1.0, -1.0],
            beta: vec![vec![0.3, 0.8, 0.0]],
            propensity: vec![vec![0.0, 0.5, 0.0]],
            seed,
            ..SimConfig::null(n, 2, Family::gaussian())
        };
        gen_dataset(&cfg).unwrap().0
    }

    #[test]
    fn shapes_are_uniform() {
        let data = gaussian_linear(400, 1);
        for m in Method::ALL {
            let fit = fit_method(m, &data, &LearnerSpec::Glm, &LearnerSpec::Glm, &DinaOptions::default()).unwrap();
            assert_eq!(fit.beta.len(), 3, "{m}");
            assert_eq!(fit.method, m);
        }
    }

    #[test]
    fn se_of_identical_arms_is_zero() {
        let data = gaussian_linear(200, 2);
        let mut same = data.clone();
        same.w = data.w.clone();
        let eta = FittedFunction::Linear(vec![0.1, 0.2, 0.3]);
        let diff: Vec<f64> = eta.eval_rows(&data.x).iter().map(|v| v - v).collect();
        let fit = ols(data.x.with_intercept(), &diff).unwrap();
        assert!(fit.coef.iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn x_learner_recovers_linear_gaussian() {
        let data = gaussian_linear(20_000, 3);
        let fit = fit_x(&data, &LearnerSpec::Glm).unwrap();
        for (b, t) in fit.beta.iter().zip([0.3, 0.8, 0.0]) {
            assert!((b - t).abs() < 0.05, "{:?}", fit.beta);
        }
    }

    #[test]
    fn pax_with_constant_propensity_matches_x() {
        let data = gaussian_linear(2000, 4);
        let x = fit_x(&data, &LearnerSpec::Glm).unwrap();
        let opts = FitOptions::default().with_ridge_fallback(true);
        let features = orthogonal_augmentation(&data.x, &vec![0.5; data.n()]);
        assert_eq!(features.cols(), 2);
        let eta0 = control_fit(&data, &features, &LearnerSpec::Glm, &opts).unwrap().eval_rows(&features);
        let pax = offset_regression(&data, &eta0, &opts).unwrap();
        for (a, b) in pax.coef.iter().zip(&x.beta) {
            assert!((a - b).abs() < 1e-4, "{:?} vs {:?}", pax.coef, x.beta);
        }
    }

    #[test]
    fn orthogonal_augmentation_spans_the_same_space() {
        let data = gaussian_linear(500, 8);
        let e: Vec<f64> = data.x.iter_rows().map(|r| crate::model::sigmoid(0.3 * r[0] - r[1])).collect();
        let raw = augment_with_propensity(&data.x, &e);
        let orth = orthogonal_augmentation(&data.x, &e);
        assert_eq!(orth.cols(), raw.cols());
        let y: Vec<f64> = data.y.clone();
        let a = fit_glm(&GlmSpec::new(Family::gaussian(), raw.with_intercept()), &y).unwrap();
        let b = fit_glm(&GlmSpec::new(Family::gaussian(), orth.with_intercept()), &y).unwrap();
        let pa = raw.with_intercept().mul_vec(&a.coef);
        let pb = orth.with_intercept().mul_vec(&b.coef);
        for (u, v) in pa.iter().zip(&pb) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn x_learner_needs_treated_rows() {
        let mut data = gaussian_linear(100, 5);
        data.w = vec![0; 100];
        assert!(matches!(fit_x(&data, &LearnerSpec::Glm), Err(DinaError::EmptyArm { arm: 1 })));
    }

    #[test]
    fn e_learner_equals_dina_for_gaussian() {
        let data = gaussian_linear(1000, 6);
        let opts = DinaOptions::default().with_seed(11);
        let a = fit_dina(&data, &LearnerSpec::Glm, &LearnerSpec::Glm, &opts).unwrap();
        let b = fit_e(&data, &LearnerSpec::Glm, &LearnerSpec::Glm, &opts).unwrap();
        for (x, y) in a.beta.iter().zip(&b.beta) {
            assert!((x - y).abs() <= 1e-8);
        }
    }

    #[test]
    fn cox_baselines_run() {
        use crate::cox::CensoringMechanism;
        use crate::model::BaselineHazard;
        for fam in [Family::CoxFull(BaselineHazard::linear_hazard()), Family::CoxPartial] {
            let cfg = SimConfig {
                beta: vec![vec![0.5, 0.5, 0.0]],
                censoring: CensoringMechanism::UniformOn(3.0),
                seed: 7,
                ..SimConfig::null(3000, 2, fam)
            };
            let data = gen_dataset(&cfg).unwrap().0;
            for m in [Method::Se, Method::X, Method::Pax] {
                let fit = fit_method(m, &data, &LearnerSpec::Glm, &LearnerSpec::Glm, &DinaOptions::default())
                    .unwrap_or_else(|e| panic!("{m} {}: {e}", data.family.name()));
                assert!((fit.beta[0] - 0.5).abs() < 0.2 && (fit.beta[1] - 0.5).abs() < 0.3, "{m}: {:?}", fit.beta);
            }
        }
    }
}
