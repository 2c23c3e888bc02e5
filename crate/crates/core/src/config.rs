//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Sections use dotted
//! prefixes (`noise.sigma = 0.1`). Every key can be overridden on the
//! command line as `--key=value`. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use crate::datalab::{NoiseKind, NoiseSpec, SyntheticSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Output directory; every stage reads and writes fixed file names here.
    pub out: PathBuf,
    /// Overrides the primary input file of `corrupt`, `denoise` and `extract`.
    pub input: Option<PathBuf>,
    pub seed: u64,
    pub trials: usize,
    pub n1: usize,
    pub n2: usize,
    pub m: usize,
    pub pairs: usize,
    pub range: (f64, f64),
    pub sigma: f64,
    pub ps: f64,
    pub kind: NoiseKind,
    pub alpha: f64,
    pub reduce_alpha: f64,
    pub w: f64,
    /// 0 selects the rank by `energy`.
    pub rank: usize,
    pub energy: f64,
    pub mu: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub strict: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            out: PathBuf::from("out"),
            input: None,
            seed: 0,
            trials: 1,
            n1: 32,
            n2: 32,
            m: 32,
            pairs: 3,
            range: (-0.5, 0.5),
            sigma: 0.1,
            ps: 0.1,
            kind: NoiseKind::SaltPepper,
            alpha: 0.91,
            reduce_alpha: 0.86,
            w: 0.9,
            rank: 6,
            energy: 0.99,
            mu: crate::dimred::DEFAULT_MU,
            tol: crate::ppds::DEFAULT_TOL,
            max_iter: crate::ppds::DEFAULT_MAX_ITER,
            strict: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "out",
    "input",
    "seed",
    "trials",
    "synthetic.n1",
    "synthetic.n2",
    "synthetic.m",
    "synthetic.pairs",
    "synthetic.min",
    "synthetic.max",
    "noise.sigma",
    "noise.ps",
    "noise.kind",
    "alpha",
    "reduce.alpha",
    "w",
    "rank",
    "energy",
    "mu",
    "tol",
    "max_iter",
    "strict",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("bad value `{value}` for key `{key}`")))
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "out" => self.out = PathBuf::from(v),
            "input" => self.input = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "seed" => self.seed = parse(key, v)?,
            "trials" => self.trials = parse(key, v)?,
            "synthetic.n1" => self.n1 = parse(key, v)?,
            "synthetic.n2" => self.n2 = parse(key, v)?,
            "synthetic.m" => self.m = parse(key, v)?,
            "synthetic.pairs" => self.pairs = parse(key, v)?,
            "synthetic.min" => self.range.0 = parse(key, v)?,
            "synthetic.max" => self.range.1 = parse(key, v)?,
            "noise.sigma" => self.sigma = parse(key, v)?,
            "noise.ps" => self.ps = parse(key, v)?,
            "noise.kind" => {
                self.kind = match v {
                    "saltpepper" | "salt-pepper" => NoiseKind::SaltPepper,
                    "missing" => NoiseKind::Missing,
                    _ => return Err(Error::Config(format!("noise.kind must be saltpepper or missing, got `{v}`"))),
                }
            }
            "alpha" => self.alpha = parse(key, v)?,
            "reduce.alpha" => self.reduce_alpha = parse(key, v)?,
            "w" => self.w = parse(key, v)?,
            "rank" => self.rank = parse(key, v)?,
            "energy" => self.energy = parse(key, v)?,
            "mu" => self.mu = parse(key, v)?,
            "tol" => self.tol = parse(key, v)?,
            "max_iter" => self.max_iter = parse(key, v)?,
            "strict" => self.strict = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.sigma >= 0.0) || !(0.0..1.0).contains(&self.ps) {
            return Err(Error::Config("need noise.sigma >= 0 and 0 <= noise.ps < 1".into()));
        }
        if !(self.alpha >= 0.0) || !(self.reduce_alpha >= 0.0) {
            return Err(Error::Config("alpha values must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::Config(format!("w must lie in [0, 1], got {}", self.w)));
        }
        if self.rank == 0 && !(self.energy > 0.0 && self.energy <= 1.0) {
            return Err(Error::Config("energy must lie in (0, 1]".into()));
        }
        if !(self.mu >= 0.0) || !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("need mu >= 0, tol > 0 and max_iter > 0".into()));
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let mut spec = SyntheticSpec::standard(self.n1, self.n2, self.m, self.pairs)?;
        spec.range = self.range;
        Ok(spec)
    }

    pub fn noise_spec(&self, trial: usize) -> NoiseSpec {
        NoiseSpec { sigma: self.sigma, ps: self.ps, kind: self.kind, seed: self.seed.wrapping_add(trial as u64) }
    }

    /// `key = value` lines that reproduce this configuration.
    pub fn to_text(&self) -> String {
        let kind = match self.kind {
            NoiseKind::SaltPepper => "saltpepper",
            NoiseKind::Missing => "missing",
        };
        let input = self.input.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        format!(
            "out = {}\ninput = {}\nseed = {}\ntrials = {}\nsynthetic.n1 = {}\nsynthetic.n2 = {}\nsynthetic.m = {}\n\
             synthetic.pairs = {}\nsynthetic.min = {}\nsynthetic.max = {}\nnoise.sigma = {}\nnoise.ps = {}\n\
             noise.kind = {}\nalpha = {}\nreduce.alpha = {}\nw = {}\nrank = {}\nenergy = {}\nmu = {}\ntol = {}\n\
             max_iter = {}\nstrict = {}\n",
            self.out.display(),
            input,
            self.seed,
            self.trials,
            self.n1,
            self.n2,
            self.m,
            self.pairs,
            self.range.0,
            self.range.1,
            self.sigma,
            self.ps,
            kind,
            self.alpha,
            self.reduce_alpha,
            self.w,
            self.rank,
            self.energy,
            self.mu,
            self.tol,
            self.max_iter,
            self.strict
        )
    }
}
