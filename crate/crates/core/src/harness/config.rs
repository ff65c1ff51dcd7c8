//! Flat `key = value` run configuration.
//!
//! Files hold one assignment per line; `#` starts a comment. Every key can
//! also be overridden from the command line as `--key value`, applied after
//! the file in the order given.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::optimizer::{AdamConfig, OptimizerConfig, OptimizerKind};
use crate::residuals::LossSettings;
use crate::scene::ParamBounds;
use crate::trustregion::{RadiusCaps, TrustRegionSchedule};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub optimizer: OptimizerKind,
    pub iterations: usize,
    pub lambda: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub grad_batch: usize,
    pub hutch_batch: usize,
    pub nu: usize,
    pub interval: usize,
    pub theta1: f64,
    pub theta2: f64,
    pub trust_region: bool,
    pub eta_position: f64,
    pub eta_scale: f64,
    pub eta_rotation: f64,
    pub eta_opacity: f64,
    pub eta_color: f64,
    pub eta_rotation_relative: f64,
    pub lr_position: f64,
    pub lr_position_final: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub seed: u64,
    pub data: PathBuf,
    /// Starting scene; defaults to `<data>/init.ply`.
    pub init: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub eval_every: usize,
    pub preview_every: usize,
    pub checkpoint_every: usize,
    /// Rayon worker threads; 0 uses the library default.
    pub workers: usize,
    /// When false the `seconds` column is written as 0.
    pub record_time: bool,

    pub num_gt: usize,
    pub num_init: usize,
    pub num_views: usize,
    pub holdout_every: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub camera_radius: f64,
    pub init_sigma: f64,
    pub init_scale: f64,

    pub fit_iterations: usize,
    pub fit_perturb: f64,
    pub fit_size: usize,
    pub fit_views: usize,
    pub fit_eps_start: f64,
    pub fit_eps_end: f64,
    pub fit_lr_position: f64,
    pub fit_lr_scale: f64,
    pub fit_lr_rotation: f64,
    pub fit_lr_opacity: f64,
    pub fit_lr_color: f64,

    pub check_samples: usize,
    pub check_eps: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            optimizer: OptimizerKind::Tr,
            iterations: 2000,
            lambda: 0.2,
            eps_start: 1e-6,
            eps_end: 1e-8,
            grad_batch: 1,
            hutch_batch: 1,
            nu: 1,
            interval: 10,
            theta1: 0.9,
            theta2: 0.999,
            trust_region: true,
            eta_position: 1.0,
            eta_scale: 1.0,
            eta_rotation: 1.0,
            eta_opacity: 1.0,
            eta_color: 1.0,
            eta_rotation_relative: 0.2,
            lr_position: adam.lr_position_start,
            lr_position_final: adam.lr_position_end,
            lr_scale: adam.lr_scale,
            lr_rotation: adam.lr_rotation,
            lr_opacity: adam.lr_opacity,
            lr_color: adam.lr_color,
            seed: 0,
            data: PathBuf::from("data"),
            init: None,
            checkpoint: None,
            out: PathBuf::from("runs/default"),
            eval_every: 100,
            preview_every: 500,
            checkpoint_every: 500,
            workers: 0,
            record_time: true,

            num_gt: 64,
            num_init: 96,
            num_views: 25,
            holdout_every: 5,
            width: 64,
            height: 64,
            focal: 70.0,
            camera_radius: 3.0,
            init_sigma: 0.02,
            init_scale: 0.05,

            fit_iterations: 500,
            fit_perturb: 0.05,
            fit_size: 32,
            fit_views: 4,
            fit_eps_start: 1e-4,
            fit_eps_end: 1e-6,
            fit_lr_position: 2e-3,
            fit_lr_scale: 5e-3,
            fit_lr_rotation: 5e-3,
            fit_lr_opacity: 2e-2,
            fit_lr_color: 5e-3,

            check_samples: 10_000,
            check_eps: 1e-5,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

macro_rules! fields {
    ($self:ident, $key:ident, $value:ident; num: $($n:ident),*; path: $($p:ident),*; opt: $($o:ident),*; flag: $($b:ident),*) => {
        match $key {
            $(stringify!($n) => $self.$n = parse_num($key, $value)?,)*
            $(stringify!($p) => $self.$p = PathBuf::from($value),)*
            $(stringify!($o) => $self.$o = Some(PathBuf::from($value)),)*
            $(stringify!($b) => $self.$b = parse_bool($key, $value)?,)*
            "optimizer" => $self.optimizer = OptimizerKind::parse($value)?,
            _ => return Err(Error::Config(format!("unknown key `{}`", $key))),
        }
    };
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        let key = key.as_str();
        fields!(self, key, value;
            num: iterations, lambda, eps_start, eps_end, grad_batch, hutch_batch, nu, interval,
                 theta1, theta2, eta_position, eta_scale, eta_rotation, eta_opacity, eta_color,
                 eta_rotation_relative, lr_position, lr_position_final, lr_scale, lr_rotation,
                 lr_opacity, lr_color, seed, eval_every, preview_every, checkpoint_every, workers,
                 num_gt, num_init, num_views, holdout_every, width, height, focal, camera_radius,
                 init_sigma, init_scale, fit_iterations, fit_perturb, fit_size, fit_views,
                 fit_eps_start, fit_eps_end, fit_lr_position, fit_lr_scale, fit_lr_rotation,
                 fit_lr_opacity, fit_lr_color, check_samples, check_eps;
            path: data, out;
            opt: init, checkpoint;
            flag: trust_region, record_time);
        Ok(())
    }

    /// Applies `key = value` lines.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::parse(origin, format!("line {}", n + 1), "expected `key = value`"));
            };
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::parse(origin, format!("line {}", n + 1), e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::default();
        c.apply_text(&text, path)?;
        Ok(c)
    }

    /// Applies `--key value` pairs.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<()> {
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let Some(key) = flag.strip_prefix("--") else {
                return Err(Error::Config(format!("expected `--key value`, got `{flag}`")));
            };
            let value = it
                .next()
                .ok_or_else(|| Error::Config(format!("`--{key}` needs a value")))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.width == 0 || self.height == 0 || self.fit_size == 0 {
            return bad("image sizes must be positive".into());
        }
        if self.holdout_every < 2 {
            return bad("holdout_every must be at least 2".into());
        }
        self.optimizer_config().validate()
    }

    pub fn init_path(&self) -> PathBuf {
        self.init.clone().unwrap_or_else(|| self.data.join("init.ply"))
    }

    pub fn loss(&self) -> LossSettings {
        LossSettings {
            lambda: self.lambda,
            ..Default::default()
        }
    }

    pub fn caps(&self) -> RadiusCaps {
        RadiusCaps {
            position: self.eta_position,
            scale: self.eta_scale,
            rotation: self.eta_rotation,
            opacity: self.eta_opacity,
            color: self.eta_color,
            rotation_relative: self.eta_rotation_relative,
        }
    }

    /// Optimizer settings for a run of `iterations` steps.
    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            grad_batch: self.grad_batch,
            hutch_batch: self.hutch_batch,
            nu: self.nu,
            interval: self.interval,
            theta1: self.theta1,
            theta2: self.theta2,
            gamma_d: 1e-12,
            trust_region: self.trust_region,
            schedule: TrustRegionSchedule {
                eps_start: self.eps_start,
                eps_end: self.eps_end,
                total_steps: self.iterations.saturating_sub(1),
            },
            caps: self.caps(),
            bounds: ParamBounds::default(),
            adam: AdamConfig {
                lr_position_start: self.lr_position,
                lr_position_end: self.lr_position_final,
                decay_steps: self.iterations.saturating_sub(1),
                lr_scale: self.lr_scale,
                lr_rotation: self.lr_rotation,
                lr_opacity: self.lr_opacity,
                lr_color: self.lr_color,
                ..Default::default()
            },
            seed: self.seed,
        }
    }

    /// The configuration as `key = value` text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "optimizer = {}", self.optimizer.name());
        macro_rules! put {
            ($($f:ident),*) => { $( let _ = writeln!(s, "{} = {}", stringify!($f), self.$f); )* };
        }
        put!(iterations, lambda, eps_start, eps_end, grad_batch, hutch_batch, nu, interval, theta1,
             theta2, trust_region, eta_position, eta_scale, eta_rotation, eta_opacity, eta_color,
             eta_rotation_relative, lr_position, lr_position_final, lr_scale, lr_rotation,
             lr_opacity, lr_color, seed, eval_every, preview_every, checkpoint_every, workers,
             record_time, num_gt, num_init, num_views, holdout_every, width, height, focal,
             camera_radius, init_sigma, init_scale, fit_iterations, fit_perturb, fit_size,
             fit_views, fit_eps_start, fit_eps_end, fit_lr_position, fit_lr_scale,
             fit_lr_rotation, fit_lr_opacity, fit_lr_color, check_samples, check_eps);
        let _ = writeln!(s, "data = {}", self.data.display());
        let _ = writeln!(s, "out = {}", self.out.display());
        if let Some(p) = &self.init {
            let _ = writeln!(s, "init = {}", p.display());
        }
        if let Some(p) = &self.checkpoint {
            let _ = writeln!(s, "checkpoint = {}", p.display());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\niterations = 10\noptimizer = adam  # trailing\n\nlambda=0.5\n", Path::new("c.cfg"))
            .unwrap();
        assert_eq!(c.iterations, 10);
        assert_eq!(c.optimizer, OptimizerKind::Adam);
        c.apply_overrides(&["--iterations".into(), "20".into(), "--record-time".into(), "false".into()])
            .unwrap();
        assert_eq!(c.iterations, 20);
        assert!(!c.record_time);
        assert_eq!(c.lambda, 0.5);
    }

    #[test]
    fn errors_are_located() {
        let mut c = RunConfig::default();
        let e = c.apply_text("iterations = 1\nbogus = 3\n", Path::new("c.cfg")).unwrap_err();
        assert!(e.to_string().contains("line 2") && e.to_string().contains("bogus"), "{e}");
        assert!(c.apply_text("iterations = x\n", Path::new("c.cfg")).is_err());
        assert!(c.apply_overrides(&["--seed".into()]).is_err());
        assert!(c.apply_overrides(&["seed".into(), "1".into()]).is_err());
    }

    #[test]
    fn text_round_trips() {
        let mut c = RunConfig::default();
        c.set("optimizer", "adam-tr").unwrap();
        c.set("init", "x/y.ply").unwrap();
        c.set("check_eps", "3e-5").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text(), Path::new("t")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn schedule_spans_the_run() {
        let c = RunConfig {
            iterations: 101,
            ..Default::default()
        };
        let o = c.optimizer_config();
        assert_eq!(o.schedule.eps_at(0), 1e-6);
        assert!((o.schedule.eps_at(100) - 1e-8).abs() < 1e-22);
    }
}
