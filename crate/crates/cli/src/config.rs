//! Flat `section.key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use scalegp::admm::AdmmConfig;
use scalegp::data::{Impute, SyntheticSpec};
use scalegp::fusion::FusionConfig;
use scalegp::gp::GpOptions;
use scalegp::kernel::{KernelSpec, Term};
use scalegp::optim::LbfgsConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    Duplicate(String),
    #[error("bad value for `{key}`: {reason}")]
    Value { key: String, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic,
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoisePolicy {
    /// Half the variance of the lag-1 differences of each training window.
    Estimate,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    pub train_len: usize,
    pub horizon: usize,
    pub step: usize,
    /// Keep only the last `repeats` windows; 0 keeps all.
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPlan {
    pub points: usize,
    pub workers: Vec<usize>,
    pub repeats: usize,
    pub dense: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub source: DataSource,
    pub impute: Impute,
    pub synth: SyntheticSpec,
    pub kernel: KernelSpec,
    pub gp: GpOptions,
    pub noise: NoisePolicy,
    pub admm: AdmmConfig,
    pub fusion: FusionConfig,
    pub window: WindowPlan,
    pub bench: BenchPlan,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            source: DataSource::Synthetic,
            impute: Impute::None,
            synth: SyntheticSpec {
                seed: 1,
                ..SyntheticSpec::default()
            },
            kernel: KernelSpec::default(),
            gp: GpOptions::default(),
            noise: NoisePolicy::Estimate,
            admm: AdmmConfig {
                seed: 1,
                ..AdmmConfig::default()
            },
            fusion: FusionConfig::default(),
            window: WindowPlan {
                train_len: 504,
                horizon: 1,
                step: 4,
                repeats: 0,
            },
            bench: BenchPlan {
                points: 700,
                workers: vec![1, 2, 4, 8],
                repeats: 3,
                dense: true,
            },
            out_dir: PathBuf::from("out"),
        }
    }
}

const KEYS: &[&str] = &[
    "run.seed",
    "run.out_dir",
    "data.source",
    "data.path",
    "data.impute",
    "synth.weekly_amplitude",
    "synth.daily_amplitude",
    "synth.deviation_scale",
    "synth.noise_scale",
    "synth.level",
    "synth.length",
    "kernel.lambda1",
    "kernel.lambda2",
    "kernel.terms",
    "kernel.toeplitz",
    "noise.policy",
    "noise.value",
    "optim.max_iter",
    "optim.grad_tol",
    "optim.f_tol",
    "optim.memory",
    "admm.workers",
    "admm.rho",
    "admm.eps_abs",
    "admm.eps_rel",
    "admm.max_rounds",
    "admm.partition",
    "admm.warm_start",
    "fusion.strategy",
    "fusion.validation_points",
    "fusion.concatenate",
    "fusion.mirror_iterations",
    "window.train_len",
    "window.horizon",
    "window.step",
    "window.repeats",
    "bench.points",
    "bench.workers",
    "bench.repeats",
    "bench.dense",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        reason: e.to_string(),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "run.seed" => {
                self.seed = parse(key, v)?;
                self.synth.seed = self.seed;
                self.admm.seed = self.seed;
            }
            "run.out_dir" => self.out_dir = PathBuf::from(v),
            "data.source" => {
                self.source = match v {
                    "synthetic" => DataSource::Synthetic,
                    "csv" => DataSource::Csv(match &self.source {
                        DataSource::Csv(p) => p.clone(),
                        DataSource::Synthetic => PathBuf::new(),
                    }),
                    other => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            reason: format!("expected `synthetic` or `csv`, got `{other}`"),
                        })
                    }
                }
            }
            "data.path" => self.source = DataSource::Csv(PathBuf::from(v)),
            "data.impute" => self.impute = parse(key, v)?,
            "synth.weekly_amplitude" => self.synth.weekly_amplitude = parse(key, v)?,
            "synth.daily_amplitude" => self.synth.daily_amplitude = parse(key, v)?,
            "synth.deviation_scale" => self.synth.deviation_scale = parse(key, v)?,
            "synth.noise_scale" => self.synth.noise_scale = parse(key, v)?,
            "synth.level" => self.synth.level = parse(key, v)?,
            "synth.length" => self.synth.length = parse(key, v)?,
            "kernel.lambda1" => self.kernel.lambda1 = parse(key, v)?,
            "kernel.lambda2" => self.kernel.lambda2 = parse(key, v)?,
            "kernel.terms" => {
                let terms: Vec<Term> = parse_list(key, v)?;
                self.kernel = KernelSpec::new(self.kernel.lambda1, self.kernel.lambda2, &terms).map_err(|e| {
                    ConfigError::Value {
                        key: key.into(),
                        reason: e.to_string(),
                    }
                })?;
            }
            "kernel.toeplitz" => self.gp.toeplitz = parse(key, v)?,
            "noise.policy" => {
                self.noise = match v {
                    "estimate" => NoisePolicy::Estimate,
                    "fixed" => NoisePolicy::Fixed(match self.noise {
                        NoisePolicy::Fixed(x) => x,
                        NoisePolicy::Estimate => 0.01,
                    }),
                    other => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            reason: format!("expected `estimate` or `fixed`, got `{other}`"),
                        })
                    }
                }
            }
            "noise.value" => self.noise = NoisePolicy::Fixed(parse(key, v)?),
            "optim.max_iter" => self.gp.optimizer.max_iter = parse(key, v)?,
            "optim.grad_tol" => self.gp.optimizer.grad_tol = parse(key, v)?,
            "optim.f_tol" => self.gp.optimizer.f_tol = parse(key, v)?,
            "optim.memory" => self.gp.optimizer.memory = parse(key, v)?,
            "admm.workers" => self.admm.workers = parse(key, v)?,
            "admm.rho" => self.admm.rho = parse(key, v)?,
            "admm.eps_abs" => self.admm.eps_abs = parse(key, v)?,
            "admm.eps_rel" => self.admm.eps_rel = parse(key, v)?,
            "admm.max_rounds" => self.admm.max_rounds = parse(key, v)?,
            "admm.partition" => self.admm.partition = parse(key, v)?,
            "admm.warm_start" => self.admm.warm_start = parse(key, v)?,
            "fusion.strategy" => self.fusion.strategy = parse(key, v)?,
            "fusion.validation_points" => self.fusion.validation_points = parse(key, v)?,
            "fusion.concatenate" => self.fusion.concatenate = parse(key, v)?,
            "fusion.mirror_iterations" => self.fusion.mirror.iterations = parse(key, v)?,
            "window.train_len" => self.window.train_len = parse(key, v)?,
            "window.horizon" => self.window.horizon = parse(key, v)?,
            "window.step" => self.window.step = parse(key, v)?,
            "window.repeats" => self.window.repeats = parse(key, v)?,
            "bench.points" => self.bench.points = parse(key, v)?,
            "bench.workers" => self.bench.workers = parse_list(key, v)?,
            "bench.repeats" => self.bench.repeats = parse(key, v)?,
            "bench.dense" => self.bench.dense = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                reason: "expected `section.key = value`".into(),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate(key.to_string()));
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            reason: format!("override `{assignment}` is not `key=value`"),
        })?;
        self.set(k.trim(), v)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |e: scalegp::Error| ConfigError::Invalid(e.to_string());
        if let DataSource::Csv(p) = &self.source {
            if p.as_os_str().is_empty() {
                return Err(ConfigError::Invalid("data.source = csv needs data.path".into()));
            }
        } else {
            self.synth.validate().map_err(wrap)?;
        }
        self.kernel.validate().map_err(wrap)?;
        self.admm.validate().map_err(wrap)?;
        self.fusion.validate().map_err(wrap)?;
        if let NoisePolicy::Fixed(v) = self.noise {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid("noise.value must be positive".into()));
            }
        }
        let o = &self.gp.optimizer;
        if o.max_iter == 0 || o.memory == 0 || !(o.grad_tol > 0.0) || !(o.f_tol >= 0.0) {
            return Err(ConfigError::Invalid("optimizer settings must be positive".into()));
        }
        let w = &self.window;
        if w.horizon == 0 || w.step == 0 {
            return Err(ConfigError::Invalid("window.horizon and window.step must be positive".into()));
        }
        let fit_points = w.train_len.saturating_sub(self.fusion.validation_points);
        if fit_points < 2 * self.admm.workers {
            return Err(ConfigError::Invalid(format!(
                "window.train_len = {} leaves {fit_points} fitting points for {} workers",
                w.train_len, self.admm.workers
            )));
        }
        if self.bench.workers.is_empty() || self.bench.workers.contains(&0) || self.bench.repeats == 0 {
            return Err(ConfigError::Invalid("bench.workers and bench.repeats must be positive".into()));
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("run.seed", self.seed.to_string());
        put("run.out_dir", self.out_dir.display().to_string());
        match &self.source {
            DataSource::Synthetic => put("data.source", "synthetic".into()),
            DataSource::Csv(p) => {
                put("data.source", "csv".into());
                put("data.path", p.display().to_string());
            }
        }
        put(
            "data.impute",
            match self.impute {
                Impute::None => "none",
                Impute::Linear => "linear",
            }
            .into(),
        );
        put("synth.weekly_amplitude", self.synth.weekly_amplitude.to_string());
        put("synth.daily_amplitude", self.synth.daily_amplitude.to_string());
        put("synth.deviation_scale", self.synth.deviation_scale.to_string());
        put("synth.noise_scale", self.synth.noise_scale.to_string());
        put("synth.level", self.synth.level.to_string());
        put("synth.length", self.synth.length.to_string());
        put("kernel.lambda1", self.kernel.lambda1.to_string());
        put("kernel.lambda2", self.kernel.lambda2.to_string());
        put(
            "kernel.terms",
            self.kernel.terms().iter().map(|t| t.to_string()).collect::<Vec<_>>().join(","),
        );
        put("kernel.toeplitz", self.gp.toeplitz.to_string());
        match self.noise {
            NoisePolicy::Estimate => put("noise.policy", "estimate".into()),
            NoisePolicy::Fixed(v) => {
                put("noise.policy", "fixed".into());
                put("noise.value", v.to_string());
            }
        }
        let o: &LbfgsConfig = &self.gp.optimizer;
        put("optim.max_iter", o.max_iter.to_string());
        put("optim.grad_tol", o.grad_tol.to_string());
        put("optim.f_tol", o.f_tol.to_string());
        put("optim.memory", o.memory.to_string());
        let a: &AdmmConfig = &self.admm;
        put("admm.workers", a.workers.to_string());
        put("admm.rho", a.rho.to_string());
        put("admm.eps_abs", a.eps_abs.to_string());
        put("admm.eps_rel", a.eps_rel.to_string());
        put("admm.max_rounds", a.max_rounds.to_string());
        put("admm.partition", a.partition.name().into());
        put("admm.warm_start", a.warm_start.to_string());
        let f: &FusionConfig = &self.fusion;
        put("fusion.strategy", f.strategy.name().into());
        put("fusion.validation_points", f.validation_points.to_string());
        put("fusion.concatenate", f.concatenate.to_string());
        put("fusion.mirror_iterations", f.mirror.iterations.to_string());
        put("window.train_len", self.window.train_len.to_string());
        put("window.horizon", self.window.horizon.to_string());
        put("window.step", self.window.step.to_string());
        put("window.repeats", self.window.repeats.to_string());
        put("bench.points", self.bench.points.to_string());
        put(
            "bench.workers",
            self.bench.workers.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
        );
        put("bench.repeats", self.bench.repeats.to_string());
        put("bench.dense", self.bench.dense.to_string());
        s
    }

    pub fn keys() -> &'static [&'static str] {
        KEYS
    }
}
