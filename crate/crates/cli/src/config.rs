//! Flat `key = value` run configuration.
//!
//! Keys carry a section prefix (`update.actor_lr`, `dagger.rounds`, ...).
//! Every key has a default; files and `--set` overrides may only name
//! known keys. The resolved configuration is written back in the same
//! format, so feeding it to the CLI again reproduces the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use progrl::dsl::ClassConfig;
use progrl::env::{make_env, Environment, TrackSim, TrackSpec};
use progrl::nn::UpdateConfig;
use progrl::project::{BetaSchedule, DaggerConfig};
use progrl::propel::PropelConfig;
use progrl::sandbox::{MdConfig, StepSchedule};
use progrl::{Error, Result, Scalar};

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "root seed; every random stream derives from it"),
    ("env", "pendulum", "pendulum | mountain_car | track"),
    ("env.track", "", "track file for env=track; empty uses the built-in oval"),
    ("program", "", "initial program file; empty uses the shipped prior for env"),
    ("run_dir", "runs/latest", "output directory"),
    ("workers", "0", "worker threads; 0 uses all cores"),
    ("iterations", "5", "update/project iterations"),
    ("warm_start", "true", "carry the residual network across iterations"),
    ("eval.seeds", "10000..10010", "evaluation seeds: a..b (exclusive) or a comma list"),
    ("update.steps", "15000", "environment steps per update"),
    ("update.actor_lr", "0.001", "actor Adam step size"),
    ("update.critic_lr", "0.001", "critic Adam step size"),
    ("update.gamma", "0.99", "discount"),
    ("update.tau", "0.005", "target network averaging rate"),
    ("update.noise", "0.1", "exploration noise, fraction of the action half-range"),
    ("update.batch", "64", "minibatch size"),
    ("update.warmup", "1000", "uniformly random steps before learning starts"),
    ("update.hidden", "64", "hidden layer width"),
    ("update.buffer", "100000", "replay capacity"),
    ("update.lambda", "1", "residual weight in the mixed policy"),
    ("dagger.rounds", "4", "aggregation rounds"),
    ("dagger.episodes", "5", "episodes per round"),
    ("dagger.horizon", "0", "episode cap; 0 uses the environment horizon"),
    ("dagger.beta", "first", "expert probability: first | const:B | geom:R | comma list"),
    ("dagger.holdout", "0.2", "held-out fraction of each round"),
    ("dagger.eval_seeds", "", "seeds for per-round program returns; empty skips"),
    ("class.kind", "pid", "pid | tree"),
    ("class.max_depth", "4", "tree depth limit"),
    ("class.features", "", "comma list of usable features; empty allows all"),
    ("class.affine_leaves", "false", "fit affine models in tree leaves"),
    ("project.checkpoint", "", "run directory holding the expert checkpoint"),
    ("project.iteration", "0", "checkpoint iteration used as the expert"),
    ("project.lambda", "1", "residual weight of the expert"),
    ("project.probe_states", "1000", "states in the probe comparing programs"),
    ("sandbox.dim", "2", "problem dimension"),
    ("sandbox.iterations", "10000", "iterations per repeat"),
    ("sandbox.schedule", "const", "const | invsqrt"),
    ("sandbox.eta", "0.1", "step size, or c in c/sqrt(t)"),
    ("sandbox.lo", "-1", "box lower bound: one value or one per dimension"),
    ("sandbox.hi", "1", "box upper bound: one value or one per dimension"),
    ("sandbox.target", "0.5,2", "unconstrained minimiser"),
    ("sandbox.scale", "identity", "identity or a row-major PSD matrix"),
    ("sandbox.beta", "0", "gradient bias norm"),
    ("sandbox.sigma", "0", "gradient noise standard deviation"),
    ("sandbox.epsilon", "0", "projection perturbation norm"),
    ("sandbox.repeats", "32", "independent repeats"),
    ("sandbox.x0", "", "start point; empty uses the box centre"),
    ("sandbox.sweep", "", "grid of beta,sigma,epsilon points separated by ';'"),
    ("sandbox.precision", "f64", "f32 | f64"),
];

pub const PENDULUM_PRIOR: &str = include_str!("../../../programs/pendulum_prior.sexp");
pub const MOUNTAIN_CAR_PRIOR: &str = include_str!("../../../programs/mountain_car_prior.sexp");
pub const TRACK_PRIOR: &str = include_str!("../../../programs/track_prior.sexp");

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

fn split_assignment(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    Some((k.trim(), v.trim()))
}

impl RunConfig {
    /// Defaults, then the file (if any), then each `KEY=VALUE` override.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            cfg.merge_text(&text)?;
        }
        for o in overrides {
            let (k, v) = split_assignment(o).ok_or_else(|| Error::Config(format!("override '{o}' is not KEY=VALUE")))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_assignment(line)
                .ok_or_else(|| Error::Config(format!("line {}: expected KEY = VALUE, found '{line}'", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("configuration error: "))))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key '{key}'"))),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("key is in the defaults table")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| Error::Config(format!("key '{key}' has invalid value '{v}'")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.raw(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("key '{key}' has invalid entry '{}'", t.trim())))
            })
            .collect()
    }

    fn seeds(&self, key: &str) -> Result<Vec<u64>> {
        let v = self.raw(key);
        if let Some((a, b)) = v.split_once("..") {
            let bad = || Error::Config(format!("key '{key}' has invalid range '{v}'"));
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            return Ok((a..b).collect());
        }
        self.list(key)
    }

    fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(Error::Config(format!("key '{key}' expects true or false, found '{v}'"))),
        }
    }

    /// Resolved configuration in file format, one key per line in table order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, _, _) in KEYS {
            let _ = writeln!(s, "{k} = {}", self.raw(k));
        }
        s
    }

    pub fn run_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("run_dir"))
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn workers(&self) -> Result<usize> {
        self.get("workers")
    }

    pub fn env(&self) -> Result<Box<dyn Environment>> {
        let name = self.raw("env");
        let track = self.raw("env.track");
        if name == "track" && !track.is_empty() {
            let spec = TrackSpec::load(Path::new(track))?;
            return Ok(Box::new(TrackSim::new(spec)?));
        }
        make_env(name, 0)
    }

    /// Text of the initial program: the configured file or the shipped prior.
    pub fn program_text(&self) -> Result<String> {
        let p = self.raw("program");
        if !p.is_empty() {
            return std::fs::read_to_string(p).map_err(|e| Error::io(Path::new(p), e));
        }
        match self.raw("env") {
            "pendulum" => Ok(PENDULUM_PRIOR.into()),
            "mountain_car" => Ok(MOUNTAIN_CAR_PRIOR.into()),
            "track" => Ok(TRACK_PRIOR.into()),
            other => Err(Error::Config(format!("no shipped prior for environment '{other}'"))),
        }
    }

    pub fn update(&self) -> Result<UpdateConfig> {
        let u = UpdateConfig {
            steps: self.get("update.steps")?,
            actor_lr: self.get("update.actor_lr")?,
            critic_lr: self.get("update.critic_lr")?,
            gamma: self.get("update.gamma")?,
            tau: self.get("update.tau")?,
            noise: self.get("update.noise")?,
            batch: self.get("update.batch")?,
            warmup: self.get("update.warmup")?,
            hidden: self.get("update.hidden")?,
            buffer: self.get("update.buffer")?,
            lambda: self.get("update.lambda")?,
        };
        u.validate()?;
        Ok(u)
    }

    pub fn class(&self) -> Result<ClassConfig> {
        let mut c = match self.raw("class.kind") {
            "pid" => ClassConfig::pid_dsl(),
            "tree" => ClassConfig::tree(self.get("class.max_depth")?),
            other => return Err(Error::Config(format!("key 'class.kind' must be pid or tree, found '{other}'"))),
        };
        let features: Vec<usize> = self.list("class.features")?;
        if !features.is_empty() {
            c.features = Some(features);
        }
        c.affine_leaves = self.bool("class.affine_leaves")?;
        c.validate()?;
        Ok(c)
    }

    pub fn dagger(&self) -> Result<DaggerConfig> {
        let horizon: usize = self.get("dagger.horizon")?;
        let d = DaggerConfig {
            rounds: self.get("dagger.rounds")?,
            episodes: self.get("dagger.episodes")?,
            horizon: (horizon > 0).then_some(horizon),
            beta: BetaSchedule::parse(self.raw("dagger.beta"))?,
            class: self.class()?,
            eval_seeds: self.seeds("dagger.eval_seeds")?,
            holdout: self.get("dagger.holdout")?,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn propel(&self) -> Result<PropelConfig> {
        let p = PropelConfig {
            iterations: self.get("iterations")?,
            update: self.update()?,
            dagger: self.dagger()?,
            eval_seeds: self.seeds("eval.seeds")?,
            warm_start: self.bool("warm_start")?,
            run_dir: Some(self.run_dir()),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn eval_seeds(&self) -> Result<Vec<u64>> {
        self.seeds("eval.seeds")
    }

    fn per_dim<S: Scalar>(&self, key: &str, d: usize) -> Result<Vec<S>> {
        let v: Vec<S> = self.list(key)?;
        match v.len() {
            1 => Ok(vec![v[0]; d]),
            n if n == d => Ok(v),
            n => Err(Error::Config(format!("key '{key}' has {n} entries, expected 1 or {d}"))),
        }
    }

    pub fn sandbox<S: Scalar>(&self) -> Result<MdConfig<S>> {
        let d: usize = self.get("sandbox.dim")?;
        if d == 0 {
            return Err(Error::Config("key 'sandbox.dim' must be positive".into()));
        }
        let target = self.per_dim("sandbox.target", d)?;
        let mut cfg = MdConfig::identity(d, S::zero(), S::zero(), target);
        cfg.lo = self.per_dim("sandbox.lo", d)?;
        cfg.hi = self.per_dim("sandbox.hi", d)?;
        if self.raw("sandbox.scale") != "identity" {
            cfg.scale = self.list("sandbox.scale")?;
        }
        cfg.iterations = self.get("sandbox.iterations")?;
        let eta: S = self.get("sandbox.eta")?;
        cfg.schedule = match self.raw("sandbox.schedule") {
            "const" => StepSchedule::Constant(eta),
            "invsqrt" => StepSchedule::InvSqrt(eta),
            other => {
                return Err(Error::Config(format!(
                    "key 'sandbox.schedule' must be const or invsqrt, found '{other}'"
                )))
            }
        };
        cfg.beta = self.get("sandbox.beta")?;
        cfg.sigma = self.get("sandbox.sigma")?;
        cfg.epsilon = self.get("sandbox.epsilon")?;
        cfg.repeats = self.get("sandbox.repeats")?;
        cfg.seed = self.seed()?;
        let x0: Vec<S> = self.list("sandbox.x0")?;
        if !x0.is_empty() {
            cfg.x0 = Some(x0);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Grid points `(beta, sigma, epsilon)`; empty means a single run.
    pub fn sweep<S: Scalar>(&self) -> Result<Vec<(S, S, S)>> {
        let v = self.raw("sandbox.sweep");
        v.split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                let xs: Vec<S> = p
                    .split(',')
                    .map(|t| t.trim().parse::<S>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("bad sweep point '{p}'")))?;
                match xs.as_slice() {
                    [b, s, e] => Ok((*b, *s, *e)),
                    _ => Err(Error::Config(format!("sweep point '{p}' needs beta,sigma,epsilon"))),
                }
            })
            .collect()
    }
}
