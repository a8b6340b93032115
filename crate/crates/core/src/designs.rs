//! Preset simulation designs for the reproduced experiments.
//!
//! Every design has `d = 5` covariates on `U[−1, 1]` unless stated. The
//! coefficient values are free parameters chosen to put the signal-to-noise
//! ratio near one half.

use crate::cox::CensoringMechanism;
use crate::error::{DinaError, Result};
use crate::model::{BaselineHazard, Family};
use crate::simgen::{calibrate_censoring, LatentZ, SimConfig};

pub const FIG6_SIZES: [usize; 6] = [1024, 1448, 2048, 2896, 4096, 5792];
pub const FIG4_CENSORING: [f64; 3] = [0.05, 0.5, 0.95];
pub const FIG5_SHAPES: [f64; 3] = [1.0, 2.0, 5.0];
pub const FIG6_COX_CENSORING: f64 = 0.75;
pub const FIG5_CENSORING: f64 = 0.5;

/// Treatment effect shared by the misspecified designs: `τ(x) = 0.2 + 0.6x₂ + 0.2x₃`.
pub const SIM_BETA: [f64; 6] = [0.2, 0.0, 0.6, 0.2, 0.0, 0.0];
/// Assignment logit `1.2x₂`.
pub const SIM_PROPENSITY: [f64; 6] = [0.0, 0.0, 1.2, 0.0, 0.0, 0.0];

fn misspecified(n: usize, family: Family, alpha: [f64; 6], delta: f64) -> SimConfig {
    SimConfig {
        alpha: alpha.to_vec(),
        beta: vec![SIM_BETA.to_vec()],
        delta,
        propensity: vec![SIM_PROPENSITY.to_vec()],
        ..SimConfig::null(n, 5, family)
    }
}

/// Misspecified-GLM design `η₀ = α₀ + xᵀα + δx₁x₂`, `η₁ = η₀ + τ(x)` per family.
/// Cox families use `λ(y) = y` and uniform censoring with 75% censored.
pub fn simulation_model(family: &Family, n: usize) -> Result<SimConfig> {
    Ok(match family {
        Family::Gaussian { .. } => misspecified(n, family.clone(), [0.0, 0.5, 0.5, 0.3, 0.0, 0.0], 1.2),
        Family::Bernoulli => misspecified(n, Family::Bernoulli, [0.0, 1.3, 1.3, 0.3, 0.0, 0.0], 2.5),
        Family::Poisson => misspecified(n, Family::Poisson, [-0.7, 0.3, 0.3, 0.3, 0.0, 0.0], 0.8),
        Family::CoxFull(_) | Family::CoxPartial => {
            calibrated(misspecified(n, family.clone(), [0.0, 0.5, 0.5, 0.3, 0.0, 0.0], 1.0), FIG6_COX_CENSORING)?
        }
    })
}

/// Coverage design: the Poisson simulation model at `n = 2048`.
pub fn table3(n: usize) -> SimConfig {
    misspecified(n, Family::Poisson, [-0.7, 0.3, 0.3, 0.3, 0.0, 0.0], 0.8)
}

/// Latent-variable design: `Z` with `P(Z = 1 | x) = σ(4x₁)` adds 3 to both arms.
pub fn fig2_latent() -> LatentZ {
    LatentZ { prob: 0.5, effect: 3.0, slope: 4.0 }
}

/// `[β₀, β₁]` for the constant and heterogeneous latent designs.
pub fn fig2_tau(heterogeneous: bool) -> [f64; 2] {
    if heterogeneous {
        [0.5, 1.0]
    } else {
        [0.5, 0.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fig3Scenario {
    /// Confounded assignment, constant effect.
    Confounding,
    /// Randomized assignment, heterogeneous effect.
    NonCollapsible,
    /// Confounded assignment, heterogeneous effect.
    Both,
}

impl Fig3Scenario {
    pub const ALL: [Fig3Scenario; 3] = [Fig3Scenario::Confounding, Fig3Scenario::NonCollapsible, Fig3Scenario::Both];

    pub fn label(&self) -> &'static str {
        match self {
            Fig3Scenario::Confounding => "a",
            Fig3Scenario::NonCollapsible => "b",
            Fig3Scenario::Both => "c",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "a" | "confounding" => Ok(Fig3Scenario::Confounding),
            "b" | "noncollapsible" => Ok(Fig3Scenario::NonCollapsible),
            "c" | "both" => Ok(Fig3Scenario::Both),
            other => Err(DinaError::Config(format!("unknown fig3 scenario `{other}`"))),
        }
    }
}

/// Poisson designs isolating confounding and non-collapsibility.
pub fn fig3(scenario: Fig3Scenario, n: usize) -> SimConfig {
    let confounded = scenario != Fig3Scenario::NonCollapsible;
    let heterogeneous = scenario != Fig3Scenario::Confounding;
    let mut cfg = misspecified(n, Family::Poisson, [-1.2, 0.3, 0.0, 0.3, 0.0, 0.0], 0.8);
    cfg.beta = vec![if heterogeneous { vec![0.0, 0.0, 1.5, 0.0, 0.0, 0.0] } else { vec![1.3, 0.0, 0.0, 0.0, 0.0, 0.0] }];
    cfg.propensity = vec![if confounded { vec![0.0, 0.0, 1.5, 0.0, 0.0, 0.0] } else { vec![0.0; 6] }];
    cfg
}

/// Cox full-likelihood design with `λ(y) = y` calibrated to `censored`:
/// strong interaction and a large effect on the confounder `x₂`.
pub fn fig4(censored: f64, n: usize) -> Result<SimConfig> {
    let mut cfg = misspecified(n, Family::CoxFull(BaselineHazard::linear_hazard()), [0.0, 0.5, 0.5, 0.3, 0.0, 0.0], 2.5);
    cfg.beta = vec![vec![-1.0, 0.0, 1.5, 0.0, 0.0, 0.0]];
    calibrated(cfg, censored)
}

/// `Λ(y) = y^shape` at 50% uniform censoring.
pub fn fig5(shape: f64, n: usize) -> Result<SimConfig> {
    let baseline = BaselineHazard::power(1.0, shape)?;
    let mut cfg = misspecified(n, Family::CoxFull(baseline.clone()), [0.0, 0.5, 0.5, 0.3, 0.0, 0.0], 1.0);
    cfg.baseline = baseline;
    calibrated(cfg, FIG5_CENSORING)
}

/// Sets uniform censoring (or the configured mechanism's shape) so that
/// `censored` of the units are censored.
pub fn calibrated(mut cfg: SimConfig, censored: f64) -> Result<SimConfig> {
    if let Some(b) = cfg.family.baseline() {
        cfg.baseline = b.clone();
    }
    let template = match cfg.censoring {
        CensoringMechanism::NoCensoring => CensoringMechanism::UniformOn(1.0),
        m => m,
    };
    cfg.censoring = calibrate_censoring(&cfg.clone().with_censoring(template), censored)?;
    Ok(cfg)
}

/// Randomized binary-outcome trial standing in for the original data of the
/// subsampling protocol.
pub fn sensitivity(n: usize) -> SimConfig {
    let mut cfg = misspecified(n, Family::Bernoulli, [-0.5, 1.2, 1.2, 0.3, 0.0, 0.0], 2.0);
    cfg.propensity = vec![vec![0.0; 6]];
    cfg
}

/// Artificial assignment logit used to thin the randomized trial.
pub const SENSITIVITY_PROPENSITY: [f64; 6] = [0.0, 1.5, 1.0, 0.0, 0.0, 0.0];

/// Three-arm Poisson design with correctly specified arms.
pub fn multi_arm_poisson(n: usize) -> SimConfig {
    SimConfig {
        alpha: vec![0.2, 0.4, -0.3, 0.0],
        beta: vec![vec![0.3, 0.5, 0.0, -0.2], vec![-0.2, 0.0, 0.4, 0.3]],
        propensity: vec![vec![0.0, 0.5, 0.0, 0.0], vec![0.0, 0.0, -0.5, 0.3]],
        ..SimConfig::null(n, 3, Family::Poisson)
    }
}

/// Designs for the score-level checks: nonlinear `η₀`, confounded assignment.
pub fn orthogonality(family: &Family, n: usize) -> Result<SimConfig> {
    let cfg = SimConfig {
        alpha: vec![0.0, 0.5, -0.3, 0.0],
        beta: vec![vec![0.3, 0.4, 0.0, -0.2]],
        delta: 0.5,
        propensity: vec![vec![0.0, 0.8, 0.0, 0.3]],
        ..SimConfig::null(n, 3, family.clone())
    };
    if family.is_cox() {
        return calibrated(cfg, 0.3);
    }
    Ok(cfg)
}

/// Perturbation-rate design (also used for the orthogonality check on exponential families).
pub fn robustness(family: &Family, n: usize) -> Result<SimConfig> {
    orthogonality(family, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::snr;

    fn in_band(cfg: &SimConfig) {
        let s = snr(cfg, 100_000, 11).unwrap();
        assert!((0.3..=0.7).contains(&s), "{} snr {s}", cfg.family.name());
    }

    #[test]
    fn simulation_designs_have_moderate_snr() {
        for f in [Family::gaussian(), Family::Bernoulli, Family::Poisson] {
            in_band(&simulation_model(&f, 100).unwrap());
        }
        in_band(&table3(2048));
        for s in Fig3Scenario::ALL {
            in_band(&fig3(s, 100));
        }
    }

    #[test]
    fn cox_designs_hit_censoring_targets() {
        let cfg = simulation_model(&Family::CoxPartial, 4096).unwrap();
        let (data, _) = crate::simgen::gen_dataset(&cfg).unwrap();
        let frac = data.censored_fraction().unwrap();
        assert!((0.72..=0.78).contains(&frac), "{frac}");
        for c in FIG4_CENSORING {
            let cfg = fig4(c, 4096).unwrap();
            let (data, _) = crate::simgen::gen_dataset(&cfg.with_seed(3)).unwrap();
            assert!((data.censored_fraction().unwrap() - c).abs() < 0.03);
        }
    }
}
