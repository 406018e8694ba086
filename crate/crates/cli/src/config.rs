//! Run configuration: one TOML file, dotted `--set` overrides on top.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use geobridge_core::distributions::Prior;
use geobridge_core::fields::{Activation, Direction, TrainConfig};
use geobridge_core::samplers::{SamplerConfig, Scheme};
use geobridge_core::{Error, Manifold, Result};

/// Where the points live and how SO(3) is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    #[serde(rename = "s2")]
    S2,
    /// SO(3) through S^5 with a uniform S^5 prior.
    #[serde(rename = "so3-es")]
    So3Es,
    /// SO(3) through S^5 with the embedded Haar prior.
    #[serde(rename = "so3-em")]
    So3Em,
}

impl Route {
    /// Manifold of the data files.
    pub fn data_manifold(self) -> Manifold {
        match self {
            Route::S2 => Manifold::S2,
            Route::So3Es | Route::So3Em => Manifold::So3,
        }
    }

    /// Manifold the fields and samplers work on.
    pub fn model_manifold(self) -> Manifold {
        match self {
            Route::S2 => Manifold::S2,
            Route::So3Es | Route::So3Em => Manifold::S5,
        }
    }

    pub fn prior(self) -> Prior {
        match self {
            Route::S2 => Prior::Uniform(Manifold::S2),
            Route::So3Es => Prior::Uniform(Manifold::S5),
            Route::So3Em => Prior::EmbeddedHaar,
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Route::S2 => "s2",
            Route::So3Es => "so3-es",
            Route::So3Em => "so3-em",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    Uniform,
    Vmf,
    WrappedGaussian,
    /// `lat,lon` degrees on S^2.
    Latlon,
    /// Sample file in the `c0,c1,...` format.
    Samples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetSection {
    pub kind: TargetKind,
    pub components: usize,
    pub kappa: f64,
    pub variance: f64,
    /// Seed of the mixture centres; the run seed when absent.
    pub centers_seed: Option<u64>,
    pub count: usize,
    pub path: Option<PathBuf>,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self {
            kind: TargetKind::Vmf,
            components: 8,
            kappa: 256.0,
            variance: 0.01,
            centers_seed: None,
            count: 20_000,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub eval_every: usize,
    pub hidden: Vec<usize>,
    pub activation: String,
    pub time_features: usize,
    /// Train a score net alongside the velocity net.
    pub score: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            iterations: t.iterations,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            lr_step: t.lr_step,
            lr_gamma: t.lr_gamma,
            eval_every: t.eval_every,
            hidden: vec![128, 128, 128],
            activation: "silu".into(),
            time_features: 4,
            score: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub scheme: String,
    pub steps: usize,
    pub epsilon: f64,
    pub direction: String,
    pub count: usize,
    /// Paths whose full trajectory is written out.
    pub trajectories: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            scheme: "ode-rk4".into(),
            steps: 100,
            epsilon: 0.0,
            direction: "forward".into(),
            count: 2048,
            trajectories: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub max_n: usize,
    pub k: usize,
    /// Steps of the likelihood ODE; 0 skips NLL.
    pub nll_steps: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            max_n: 2048,
            k: 5,
            nll_steps: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub schemes: Vec<String>,
    pub epsilon: f64,
    /// Step counts for the E-SDE strong-error levels.
    pub steps: Vec<usize>,
    pub paths: usize,
    /// Step counts and paths for the GRW weak-error levels.
    pub grw_steps: Vec<usize>,
    pub grw_paths: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            schemes: vec!["esde-em".into(), "esde-heun".into(), "grw".into()],
            epsilon: 0.5,
            steps: vec![16, 32, 64, 128, 256, 512],
            paths: 10_000,
            grw_steps: vec![2, 4, 8, 16, 32, 64],
            grw_paths: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub route: Route,
    pub seed: u64,
    /// Worker threads; 0 uses every core, 1 gives bit-reproducible runs.
    pub threads: usize,
    pub output_dir: Option<PathBuf>,
    pub target: TargetSection,
    pub train: TrainSection,
    pub sample: SampleSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            route: Route::S2,
            seed: 0,
            threads: 0,
            output_dir: None,
            target: TargetSection::default(),
            train: TrainSection::default(),
            sample: SampleSection::default(),
            eval: EvalSection::default(),
            bench: BenchSection::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override '{assignment}' is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("bad override key '{key}'")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| config_err(format!("override '{key}': '{p}' is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies the overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| config_err(format!("{}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks cross-section consistency before any work starts.
    pub fn validate(&self) -> Result<()> {
        match (self.target.kind, self.route) {
            (TargetKind::Vmf | TargetKind::Latlon, Route::S2) => {}
            (TargetKind::WrappedGaussian, Route::So3Es | Route::So3Em) => {}
            (TargetKind::Uniform | TargetKind::Samples, _) => {}
            (k, r) => {
                return Err(config_err(format!(
                    "target kind {} does not fit route {r}",
                    toml::Value::try_from(k).unwrap()
                )))
            }
        }
        if matches!(self.target.kind, TargetKind::Latlon | TargetKind::Samples) && self.target.path.is_none() {
            return Err(config_err("target.path is required for file targets"));
        }
        if self.target.count == 0 {
            return Err(config_err("target.count must be positive"));
        }
        if self.target.components == 0 {
            return Err(config_err("target.components must be positive"));
        }
        if self.target.kind == TargetKind::Vmf && !(self.target.kappa > 0.0) {
            return Err(config_err("target.kappa must be positive"));
        }
        if self.target.kind == TargetKind::WrappedGaussian && !(self.target.variance > 0.0) {
            return Err(config_err("target.variance must be positive"));
        }
        if self.train.hidden.is_empty() || self.train.hidden.contains(&0) {
            return Err(config_err("train.hidden needs positive layer widths"));
        }
        let act = self.activation()?;
        if self.train.score && !act.is_smooth() {
            return Err(config_err(format!("score net needs a smooth activation, got {act}")));
        }
        self.train_config().validate()?;
        self.sampler_config()?.validate()?;
        if self.sample.count == 0 {
            return Err(config_err("sample.count must be positive"));
        }
        if self.eval.max_n == 0 || self.eval.k == 0 {
            return Err(config_err("eval.max_n and eval.k must be positive"));
        }
        self.bench_schemes()?;
        Ok(())
    }

    pub fn activation(&self) -> Result<Activation> {
        Activation::from_str(&self.train.activation)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.train.iterations,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            weight_decay: self.train.weight_decay,
            lr_step: self.train.lr_step,
            lr_gamma: self.train.lr_gamma,
            seed: self.seed,
            eval_every: self.train.eval_every,
        }
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let scheme: Scheme = self.sample.scheme.parse()?;
        let direction: Direction = self.sample.direction.parse()?;
        Ok(SamplerConfig {
            scheme,
            steps: self.sample.steps,
            epsilon: self.sample.epsilon,
            seed: self.seed,
            direction,
            record: self.sample.trajectories > 0,
        })
    }

    pub fn bench_schemes(&self) -> Result<Vec<Scheme>> {
        self.bench.schemes.iter().map(|s| s.parse()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_apply_with_types() {
        let c = RunConfig::load(
            None,
            &[
                "train.iterations=10".into(),
                "sample.scheme=grw".into(),
                "train.hidden=[4, 4]".into(),
                "route=so3-es".into(),
                "target.kind=wrapped-gaussian".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.train.iterations, 10);
        assert_eq!(c.sample.scheme, "grw");
        assert_eq!(c.train.hidden, vec![4, 4]);
        assert_eq!(c.route, Route::So3Es);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for o in [
            "train.iterationz=1",
            "route=s3",
            "sample.scheme=leapfrog",
            "target.kind=wrapped-gaussian",
            "train.activation=relu",
            "nonsense",
        ] {
            let e = RunConfig::load(None, &[o.into()]).unwrap_err();
            assert_eq!(e.class(), "ConfigError", "{o}");
        }
    }
}
