//! Flat `key = value` run configurations.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::cox::CensoringMechanism;
use crate::dina::Method;
use crate::error::{DinaError, Result};
use crate::learners::LearnerSpec;
use crate::model::Family;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Table3,
    ToyConfounding,
    Rate,
    Orthogonality,
    RobustnessRate,
    Sensitivity,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 11] = [
        ExperimentId::Fig2,
        ExperimentId::Fig3,
        ExperimentId::Fig4,
        ExperimentId::Fig5,
        ExperimentId::Fig6,
        ExperimentId::Table3,
        ExperimentId::ToyConfounding,
        ExperimentId::Rate,
        ExperimentId::Orthogonality,
        ExperimentId::RobustnessRate,
        ExperimentId::Sensitivity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentId::Fig2 => "fig2",
            ExperimentId::Fig3 => "fig3",
            ExperimentId::Fig4 => "fig4",
            ExperimentId::Fig5 => "fig5",
            ExperimentId::Fig6 => "fig6",
            ExperimentId::Table3 => "table3",
            ExperimentId::ToyConfounding => "toy-confounding",
            ExperimentId::Rate => "rate",
            ExperimentId::Orthogonality => "orthogonality",
            ExperimentId::RobustnessRate => "robustness-rate",
            ExperimentId::Sensitivity => "sensitivity",
        }
    }
}

impl FromStr for ExperimentId {
    type Err = DinaError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| DinaError::Config(format!("unknown experiment id `{s}`")))
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A meta-learner, optionally refit on the partial likelihood (`dina-partial`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodSpec {
    pub method: Method,
    pub partial: bool,
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        Self { method, partial: false }
    }

    pub fn partial(method: Method) -> Self {
        Self { method, partial: true }
    }

    pub fn label(&self) -> String {
        if self.partial {
            format!("{}-partial", self.method.name())
        } else {
            self.method.name().to_string()
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.strip_suffix("-partial") {
            Some(m) => Ok(Self::partial(Method::parse(m)?)),
            None => Ok(Self::new(Method::parse(s)?)),
        }
    }
}

/// Simulation-design overrides applied on top of an experiment's preset.
impl FromStr for MethodSpec {
    type Err = DinaError;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub delta: Option<f64>,
    pub propensity: Option<Vec<f64>>,
    /// `prob, effect, slope`
    pub latent: Option<[f64; 3]>,
    pub censoring: Option<CensoringMechanism>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        *self == Overrides::default()
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub experiment: ExperimentId,
    pub family: Option<Family>,
    /// Scenario labels to run; empty runs every scenario of the experiment.
    pub scenarios: Vec<String>,
    pub methods: Vec<MethodSpec>,
    pub sizes: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub propensity_learner: LearnerSpec,
    pub outcome_learner: LearnerSpec,
    pub bootstrap: usize,
    pub overrides: Overrides,
    /// Perturbation sizes for the robustness-rate experiment.
    pub perturbations: Vec<f64>,
    /// Random directions for the orthogonality experiment.
    pub directions: usize,
    pub step: f64,
}

impl RunConfig {
    /// Defaults for `experiment`; every field may be overridden.
    pub fn new(experiment: ExperimentId) -> Self {
        use ExperimentId::*;
        let methods = |m: &[Method]| m.iter().copied().map(MethodSpec::new).collect::<Vec<_>>();
        let (methods, sizes, replications) = match experiment {
            Fig2 => (methods(&[Method::Se]), vec![4096], 50),
            Fig3 | Fig4 => (methods(&[Method::Dina, Method::E, Method::Se]), vec![4096], 50),
            Fig5 => (
                vec![MethodSpec::new(Method::Dina), MethodSpec::partial(Method::Dina), MethodSpec::new(Method::Se)],
                vec![4096],
                50,
            ),
            Fig6 => (Method::ALL.iter().copied().map(MethodSpec::new).collect(), crate::designs::FIG6_SIZES.to_vec(), 100),
            Rate => (methods(&[Method::Dina, Method::Se]), crate::designs::FIG6_SIZES.to_vec(), 100),
            Table3 => (Method::ALL.iter().copied().map(MethodSpec::new).collect(), vec![2048], 100),
            ToyConfounding => (methods(&[Method::Se, Method::Dina]), vec![10_000], 50),
            Orthogonality => (vec![], vec![100_000], 1),
            RobustnessRate => (methods(&[Method::Dina, Method::Se]), vec![100_000], 200),
            Sensitivity => (Method::ALL.iter().copied().map(MethodSpec::new).collect(), vec![10_000], 100),
        };
        Self {
            experiment,
            family: None,
            scenarios: vec![],
            methods,
            sizes,
            replications,
            seed: 20_240_601,
            out: None,
            threads: None,
            propensity_learner: LearnerSpec::Glm,
            outcome_learner: LearnerSpec::Glm,
            bootstrap: 100,
            overrides: Overrides::default(),
            perturbations: vec![0.05, 0.1, 0.2, 0.4],
            directions: 5,
            step: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(DinaError::Config("replications must be at least 1".into()));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(DinaError::Config("sizes must be a nonempty list of positive counts".into()));
        }
        if self.bootstrap < 2 {
            return Err(DinaError::Config("bootstrap must be at least 2".into()));
        }
        if self.threads == Some(0) {
            return Err(DinaError::Config("threads must be positive".into()));
        }
        self.propensity_learner.validate()?;
        self.outcome_learner.validate()?;
        Ok(())
    }

    /// Parses the `key = value` format; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DinaError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            pairs.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let experiment = pairs
            .iter()
            .find(|(_, k, _)| k == "experiment")
            .ok_or_else(|| DinaError::Config("missing `experiment`".into()))?
            .2
            .parse::<ExperimentId>()?;
        let mut cfg = RunConfig::new(experiment);
        for (line, k, v) in &pairs {
            cfg.set(k, v).map_err(|e| match e {
                DinaError::Config(m) => DinaError::Config(format!("line {line}: {m}")),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let o = &mut self.overrides;
        match key {
            "experiment" => self.experiment = value.parse()?,
            "version" => {}
            "family" => self.family = Some(Family::parse(value)?),
            "scenario" | "scenarios" => self.scenarios = list(value).into_iter().map(String::from).collect(),
            "methods" | "method" => self.methods = list(value).into_iter().map(MethodSpec::parse).collect::<Result<_>>()?,
            "sizes" | "n" => self.sizes = numbers(key, value)?,
            "replications" => self.replications = number(key, value)?,
            "seed" => self.seed = number(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "threads" => self.threads = Some(number(key, value)?),
            "propensity_learner" => self.propensity_learner = LearnerSpec::parse(value)?,
            "outcome_learner" => self.outcome_learner = LearnerSpec::parse(value)?,
            "bootstrap" => self.bootstrap = number(key, value)?,
            "alpha" => o.alpha = Some(numbers(key, value)?),
            "beta" => o.beta = Some(numbers(key, value)?),
            "delta" => o.delta = Some(number(key, value)?),
            "propensity" => o.propensity = Some(numbers(key, value)?),
            "latent" => {
                let v: Vec<f64> = numbers(key, value)?;
                let arr: [f64; 3] = v
                    .try_into()
                    .map_err(|_| DinaError::Config("latent takes `prob, effect, slope`".into()))?;
                o.latent = Some(arr);
            }
            "censoring" => o.censoring = Some(CensoringMechanism::parse(value)?),
            "perturbations" => self.perturbations = numbers(key, value)?,
            "directions" => self.directions = number(key, value)?,
            "step" => self.step = number(key, value)?,
            other => return Err(DinaError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Serializes to the format read by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let join = |v: &[String]| v.join(", ");
        let nums = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let mut s = format!("experiment = {}\n", self.experiment);
        if let Some(f) = &self.family {
            s += &format!("family = {}\n", f.describe());
        }
        if !self.scenarios.is_empty() {
            s += &format!("scenarios = {}\n", join(&self.scenarios));
        }
        if !self.methods.is_empty() {
            s += &format!("methods = {}\n", join(&self.methods.iter().map(MethodSpec::label).collect::<Vec<_>>()));
        }
        s += &format!("sizes = {}\n", join(&self.sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>()));
        s += &format!("replications = {}\n", self.replications);
        s += &format!("seed = {}\n", self.seed);
        s += &format!("propensity_learner = {}\n", self.propensity_learner.describe());
        s += &format!("outcome_learner = {}\n", self.outcome_learner.describe());
        s += &format!("bootstrap = {}\n", self.bootstrap);
        let o = &self.overrides;
        if let Some(v) = &o.alpha {
            s += &format!("alpha = {}\n", nums(v));
        }
        if let Some(v) = &o.beta {
            s += &format!("beta = {}\n", nums(v));
        }
        if let Some(v) = o.delta {
            s += &format!("delta = {v}\n");
        }
        if let Some(v) = &o.propensity {
            s += &format!("propensity = {}\n", nums(v));
        }
        if let Some(v) = &o.latent {
            s += &format!("latent = {}\n", nums(v));
        }
        if let Some(c) = &o.censoring {
            s += &format!("censoring = {}\n", c.describe());
        }
        s += &format!("perturbations = {}\n", nums(&self.perturbations));
        s += &format!("directions = {}\n", self.directions);
        s += &format!("step = {}\n", self.step);
        s
    }
}

fn list(value: &str) -> Vec<&str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn number<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| DinaError::Config(format!("bad value `{value}` for `{key}`")))
}

fn numbers<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    list(value).into_iter().map(|v| number(key, v)).collect()
}
