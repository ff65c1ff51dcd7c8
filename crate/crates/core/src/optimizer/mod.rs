//! The 3DGS²-TR optimizer and its ADAM / ADAM-TR baselines.
//!
//! Per iteration `t` (starting at 1) the shared random stream is consumed
//! in this order:
//!
//! 1. the gradient minibatch `S₁`,
//! 2. on diagonal refreshes only, the minibatch `S₂`,
//! 3. then `ν` Rademacher probes, each drawn entry by entry in layout order.
//!
//! ADAM draws only `S₁`.

mod adam;
mod model;

pub use adam::AdamConfig;
pub use model::{LinearModel, RenderModel, ResidualModel};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scene::{Group, ParamBounds, Scene};
use crate::trustregion::{self, RadiusCaps, RadiusVector, TrustRegionSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Tr,
    Adam,
    AdamTr,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Tr => "3dgs2tr",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamTr => "adam-tr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "3dgs2tr" => Ok(OptimizerKind::Tr),
            "adam" => Ok(OptimizerKind::Adam),
            "adam-tr" => Ok(OptimizerKind::AdamTr),
            other => Err(Error::Config(format!(
                "unknown optimizer `{other}` (expected 3dgs2tr, adam or adam-tr)"
            ))),
        }
    }

    fn clips(self) -> bool {
        matches!(self, OptimizerKind::Tr | OptimizerKind::AdamTr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// `|S₁|`.
    pub grad_batch: usize,
    /// `|S₂|`.
    pub hutch_batch: usize,
    /// Probes per diagonal refresh.
    pub nu: usize,
    /// Diagonal refresh interval `l`.
    pub interval: usize,
    pub theta1: f64,
    pub theta2: f64,
    /// Floor on the diagonal before division.
    pub gamma_d: f64,
    /// Turns trust-region clipping off for the second-order method.
    pub trust_region: bool,
    pub schedule: TrustRegionSchedule,
    pub caps: RadiusCaps,
    pub bounds: ParamBounds,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Tr,
            grad_batch: 1,
            hutch_batch: 1,
            nu: 1,
            interval: 10,
            theta1: 0.9,
            theta2: 0.999,
            gamma_d: 1e-12,
            trust_region: true,
            schedule: TrustRegionSchedule::default(),
            caps: RadiusCaps::default(),
            bounds: ParamBounds::default(),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.grad_batch == 0 || self.hutch_batch == 0 {
            return bad("batch sizes must be at least 1");
        }
        if self.nu == 0 {
            return bad("nu must be at least 1");
        }
        if self.interval == 0 {
            return bad("hutchinson interval must be at least 1");
        }
        if !(0.0..1.0).contains(&self.theta1) || !(0.0..1.0).contains(&self.theta2) {
            return bad("EMA factors must lie in [0, 1)");
        }
        TrustRegionSchedule::new(self.schedule.eps_start, self.schedule.eps_end, self.schedule.total_steps)?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub g_hat: Vec<f64>,
    pub d_hat: Vec<f64>,
    /// Iterations completed so far.
    pub t: usize,
    pub rng: ChaCha8Rng,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            g_hat: vec![0.0; dim],
            d_hat: vec![0.0; dim],
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            adam_m: vec![0.0; dim],
            adam_v: vec![0.0; dim],
        }
    }
}

/// View indices drawn uniformly without replacement, in ascending order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Minibatch {
    pub indices: Vec<usize>,
}

impl Minibatch {
    pub fn all(num_views: usize) -> Self {
        Self {
            indices: (0..num_views).collect(),
        }
    }
}

pub fn sample_minibatch<R: Rng>(rng: &mut R, num_views: usize, size: usize) -> Result<Minibatch> {
    if num_views == 0 || size == 0 {
        return Err(Error::InvalidInput("minibatch needs views and a positive size".into()));
    }
    let mut indices = index::sample(rng, num_views, size.min(num_views)).into_vec();
    indices.sort_unstable();
    Ok(Minibatch { indices })
}

fn batch_weight(model: &dyn ResidualModel, batch: &Minibatch) -> f64 {
    model.num_views() as f64 / batch.indices.len() as f64 / model.residual_count() as f64
}

fn check_batch(model: &dyn ResidualModel, batch: &Minibatch) -> Result<()> {
    if batch.indices.is_empty() {
        return Err(Error::InvalidInput("empty minibatch".into()));
    }
    if let Some(&i) = batch.indices.iter().find(|&&i| i >= model.num_views()) {
        return Err(Error::InvalidInput(format!("view index {i} out of range")));
    }
    Ok(())
}

/// Minibatch gradient `(1/m)(M/|S|) Σ Jᵢᵀfᵢ` and the minibatch loss
/// `Σ‖fᵢ‖² / (2 m |S| / M)`.
pub fn stochastic_gradient(model: &dyn ResidualModel, scene: &Scene, batch: &Minibatch) -> Result<(Vec<f64>, f64)> {
    check_batch(model, batch)?;
    let mut g = vec![0.0; scene.dim()];
    let mut fsq = 0.0;
    for &i in &batch.indices {
        let (gi, fi) = model.view_gradient(scene, i)?;
        if !fi.is_finite() || gi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient of view {i}"),
            });
        }
        for (a, b) in g.iter_mut().zip(gi) {
            *a += b;
        }
        fsq += fi;
    }
    let w = batch_weight(model, batch);
    g.iter_mut().for_each(|a| *a *= w);
    Ok((g, 0.5 * fsq * w))
}

/// Draws one Rademacher vector, entry by entry.
pub fn rademacher<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Hutchinson estimate with caller-supplied probes: the mean of
/// `z ⊙ (1/m)(M/|S|) Σᵢ JᵢᵀJᵢ z` over the probes.
pub fn hutchinson_diag_with(
    model: &dyn ResidualModel,
    scene: &Scene,
    batch: &Minibatch,
    probes: &[Vec<f64>],
) -> Result<Vec<f64>> {
    check_batch(model, batch)?;
    if probes.is_empty() {
        return Err(Error::InvalidInput("hutchinson needs at least one probe".into()));
    }
    let mut d = vec![0.0; scene.dim()];
    for z in probes {
        if z.len() != scene.dim() {
            return Err(Error::DimensionMismatch {
                expected: scene.dim(),
                got: z.len(),
            });
        }
        for &i in &batch.indices {
            let w = model.view_gauss_newton(scene, i, z)?;
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("Gauss-Newton product of view {i}"),
                });
            }
            for ((a, zk), wk) in d.iter_mut().zip(z).zip(&w) {
                *a += zk * wk;
            }
        }
    }
    let w = batch_weight(model, batch) / probes.len() as f64;
    d.iter_mut().for_each(|a| *a *= w);
    Ok(d)
}

pub fn hutchinson_diag<R: Rng>(
    model: &dyn ResidualModel,
    scene: &Scene,
    batch: &Minibatch,
    nu: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let probes: Vec<Vec<f64>> = (0..nu).map(|_| rademacher(rng, scene.dim())).collect();
    hutchinson_diag_with(model, scene, batch, &probes)
}

/// Exact `diag((1/m)(M/|S|) Σ JᵢᵀJᵢ)` from one JVP per coordinate.
pub fn exact_gauss_newton_diag(model: &dyn ResidualModel, scene: &Scene, batch: &Minibatch) -> Result<Vec<f64>> {
    check_batch(model, batch)?;
    let n = scene.dim();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    for (k, dk) in d.iter_mut().enumerate() {
        e[k] = 1.0;
        for &i in &batch.indices {
            let u = model.view_jvp(scene, i, &e)?;
            *dk += u.iter().map(|v| v * v).sum::<f64>();
        }
        e[k] = 0.0;
    }
    let w = batch_weight(model, batch);
    d.iter_mut().for_each(|a| *a *= w);
    Ok(d)
}

/// `θ·prev + (1 − θ)·new`.
pub fn ema(prev: &[f64], new: &[f64], theta: f64) -> Result<Vec<f64>> {
    if prev.len() != new.len() {
        return Err(Error::DimensionMismatch {
            expected: prev.len(),
            got: new.len(),
        });
    }
    Ok(prev.iter().zip(new).map(|(p, n)| theta * p + (1.0 - theta) * n).collect())
}

/// What happened in one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub iter: usize,
    /// Minibatch objective before the step.
    pub loss: f64,
    pub grad_norm: f64,
    pub step_pre: f64,
    /// NaN when no trust region is applied.
    pub step_post: f64,
    pub clip_frac: f64,
    pub eps: f64,
    pub refreshed_diagonal: bool,
    /// The step added to the parameters, before box clamping.
    pub step: Vec<f64>,
    pub radii: Option<RadiusVector>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn first_non_finite(v: &[f64], k: usize) -> Option<Error> {
    v.iter().position(|a| !a.is_finite()).map(|idx| {
        let (g, i, c) = Group::locate(k, idx);
        Error::NonFinite {
            what: format!("{} update (splat {i}, component {c})", g.name()),
        }
    })
}

/// One iteration of the configured optimizer; updates `scene` and `state`.
pub fn step(
    model: &dyn ResidualModel,
    scene: &mut Scene,
    state: &mut OptimizerState,
    config: &OptimizerConfig,
) -> Result<StepDiagnostics> {
    if state.g_hat.len() != scene.dim() {
        return Err(Error::DimensionMismatch {
            expected: scene.dim(),
            got: state.g_hat.len(),
        });
    }
    let t = state.t + 1;
    let s1 = sample_minibatch(&mut state.rng, model.num_views(), config.grad_batch)?;
    let (g, loss) = stochastic_gradient(model, scene, &s1)?;

    let mut refreshed = false;
    let delta: Vec<f64> = match config.kind {
        OptimizerKind::Tr => {
            state.g_hat = ema(&state.g_hat, &g, config.theta1)?;
            if (t - 1).is_multiple_of(config.interval) {
                let s2 = sample_minibatch(&mut state.rng, model.num_views(), config.hutch_batch)?;
                let d = hutchinson_diag(model, scene, &s2, config.nu, &mut state.rng)?;
                state.d_hat = ema(&state.d_hat, &d, config.theta2)?;
                refreshed = true;
            }
            state
                .g_hat
                .iter()
                .zip(&state.d_hat)
                .map(|(g, d)| -g / d.max(config.gamma_d))
                .collect()
        }
        OptimizerKind::Adam | OptimizerKind::AdamTr => adam::step(state, &g, scene.len(), t, &config.adam),
    };
    if let Some(e) = first_non_finite(&delta, scene.len()) {
        return Err(e);
    }

    let step_pre = norm(&delta);
    let clip = config.kind.clips() && (config.kind != OptimizerKind::Tr || config.trust_region);
    let (applied, radii, eps, clip_frac) = if clip {
        let eps = config.schedule.eps_at(t - 1);
        let radii = trustregion::shd_radii(scene, eps, &config.caps)?;
        let applied = trustregion::clip_step(&delta, &radii)?;
        let clipped = delta.iter().zip(&radii.values).filter(|(d, r)| d.abs() > **r).count();
        let frac = clipped as f64 / delta.len().max(1) as f64;
        (applied, Some(radii), eps, frac)
    } else {
        (delta, None, f64::NAN, f64::NAN)
    };
    let step_post = if clip { norm(&applied) } else { f64::NAN };

    let mut x = scene.pack();
    for (a, d) in x.iter_mut().zip(&applied) {
        *a += d;
    }
    scene.set_params(&x)?;
    scene.clamp(&config.bounds);
    state.t = t;

    Ok(StepDiagnostics {
        iter: t,
        loss,
        grad_norm: norm(&g),
        step_pre,
        step_post,
        clip_frac,
        eps,
        refreshed_diagonal: refreshed,
        step: applied,
        radii,
    })
}
