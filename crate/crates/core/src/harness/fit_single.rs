//! One perturbed Gaussian fitted back to its ground truth by ADAM and by
//! the trust-region method, logging how much the splat moves per step.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::RunConfig;
use super::dataset::ring_cameras;
use super::train::with_workers;
use crate::error::{Error, Result};
use crate::image::{save_png, Image, PngDepth};
use crate::optimizer::{step, AdamConfig, OptimizerConfig, OptimizerKind, OptimizerState, RenderModel};
use crate::renderer::{rasterize, RenderSettings};
use crate::residuals::psnr;
use crate::scene::{GaussianPrimitive, Group, ParamBounds, Scene, View};
use crate::trustregion::{normalized_hellinger, MassForm, TrustRegionSchedule};

/// Normalized Hellinger motion of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Motion {
    /// Per family, the largest single-coordinate `H²/det S`.
    pub family: [f64; 5],
    /// All parameters changed at once (opacity mass).
    pub joint: f64,
}

impl Motion {
    pub fn max(&self) -> f64 {
        self.family.iter().copied().fold(0.0, f64::max)
    }
}

/// Motion from `a` to `b`, one coordinate at a time.
pub fn step_motion(a: &GaussianPrimitive, b: &GaussianPrimitive) -> Result<Motion> {
    let pa = Scene::new(vec![*a]).pack();
    let pb = Scene::new(vec![*b]).pack();
    let mut family = [0.0f64; 5];
    for j in 0..pa.len() {
        if pa[j] == pb[j] {
            continue;
        }
        let mut x = pa.clone();
        x[j] = pb[j];
        let moved = Scene::unpack(&x)?.primitives[0];
        let (g, _, c) = Group::locate(1, j);
        let form = if g == Group::Color {
            MassForm::Color(c)
        } else {
            MassForm::Opacity
        };
        let h = normalized_hellinger(a, &moved, form)?;
        let slot = Group::ALL.iter().position(|&x| x == g).unwrap_or(0);
        family[slot] = family[slot].max(h);
    }
    Ok(Motion {
        family,
        joint: normalized_hellinger(a, b, MassForm::Opacity)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub kind: OptimizerKind,
    /// Mean PSNR over the fit views, before the first step and after each.
    pub psnr: Vec<f64>,
    pub motion: Vec<Motion>,
    /// Trust-region size used at each step; NaN without clipping.
    pub eps: Vec<f64>,
    pub splats: Vec<GaussianPrimitive>,
}

impl Trajectory {
    pub fn max_motion(&self) -> f64 {
        self.motion.iter().map(Motion::max).fold(0.0, f64::max)
    }

    /// Largest `motion / ε` over steps and families.
    pub fn max_bound_ratio(&self) -> f64 {
        self.motion
            .iter()
            .zip(&self.eps)
            .map(|(m, e)| m.max() / e)
            .fold(0.0, f64::max)
    }

    /// First iteration whose PSNR reaches `db`.
    pub fn first_reaching(&self, db: f64) -> Option<usize> {
        self.psnr.iter().position(|&p| p >= db)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSingleReport {
    pub ground_truth: GaussianPrimitive,
    pub start: GaussianPrimitive,
    pub adam: Trajectory,
    pub tr: Trajectory,
}

pub fn ground_truth_splat() -> GaussianPrimitive {
    GaussianPrimitive {
        mean: [0.0; 3],
        scale: [0.18, 0.08, 0.12],
        rotation: [0.2, -0.3, 0.1, 0.9],
        opacity: 0.8,
        color: [0.9, 0.5, 0.2],
    }
}

/// The ground truth with every parameter jittered by `N(0, σ)`.
pub fn perturbed(gt: &GaussianPrimitive, sigma: f64, seed: u64) -> Result<GaussianPrimitive> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut x = Scene::new(vec![*gt]).pack();
    for v in &mut x {
        *v += n.sample(&mut rng);
    }
    let mut s = Scene::unpack(&x)?;
    s.clamp(&ParamBounds {
        scale_min: 0.01,
        opacity_min: 0.05,
        ..Default::default()
    });
    Ok(s.primitives[0])
}

pub fn fit_views(config: &RunConfig, gt: &GaussianPrimitive) -> Result<Vec<View>> {
    let n = config.fit_size;
    let cams = ring_cameras(config.fit_views.max(1), 3.0, 2.5 * n as f64, n, n);
    let scene = Scene::new(vec![*gt]);
    cams.into_iter()
        .map(|camera| {
            Ok(View {
                camera,
                image: rasterize(&scene, &camera, &RenderSettings::default())?.image,
            })
        })
        .collect()
}

fn optimizer(config: &RunConfig, kind: OptimizerKind, views: usize) -> OptimizerConfig {
    let steps = config.fit_iterations.saturating_sub(1);
    OptimizerConfig {
        kind,
        grad_batch: views,
        hutch_batch: views,
        schedule: TrustRegionSchedule {
            eps_start: config.fit_eps_start,
            eps_end: config.fit_eps_end,
            total_steps: steps,
        },
        caps: config.caps(),
        adam: AdamConfig {
            lr_position_start: config.fit_lr_position,
            lr_position_end: config.fit_lr_position / 100.0,
            decay_steps: steps,
            lr_scale: config.fit_lr_scale,
            lr_rotation: config.fit_lr_rotation,
            lr_opacity: config.fit_lr_opacity,
            lr_color: config.fit_lr_color,
            ..Default::default()
        },
        seed: config.seed,
        ..Default::default()
    }
}

fn mean_psnr(scene: &Scene, views: &[View]) -> Result<f64> {
    let mut s = 0.0;
    for v in views {
        s += psnr(&rasterize(scene, &v.camera, &RenderSettings::default())?.image, &v.image)?;
    }
    Ok(s / views.len() as f64)
}

fn run(
    config: &RunConfig,
    kind: OptimizerKind,
    start: &GaussianPrimitive,
    views: &[View],
) -> Result<Trajectory> {
    let model = RenderModel::new(views, config.loss());
    let opt = optimizer(config, kind, views.len());
    let mut scene = Scene::new(vec![*start]);
    let mut state = OptimizerState::new(scene.dim(), config.seed);
    let mut traj = Trajectory {
        kind,
        psnr: vec![mean_psnr(&scene, views)?],
        motion: Vec::new(),
        eps: Vec::new(),
        splats: vec![*start],
    };
    for _ in 0..config.fit_iterations {
        let before = scene.primitives[0];
        let d = step(&model, &mut scene, &mut state, &opt)?;
        let after = scene.primitives[0];
        traj.motion.push(step_motion(&before, &after)?);
        traj.eps.push(d.eps);
        traj.psnr.push(mean_psnr(&scene, views)?);
        traj.splats.push(after);
    }
    Ok(traj)
}

pub fn fit_single(config: &RunConfig) -> Result<FitSingleReport> {
    config.validate()?;
    with_workers(config.workers, || {
        let gt = ground_truth_splat();
        let start = perturbed(&gt, config.fit_perturb, config.seed)?;
        let views = fit_views(config, &gt)?;
        Ok(FitSingleReport {
            ground_truth: gt,
            start,
            adam: run(config, OptimizerKind::Adam, &start, &views)?,
            tr: run(config, OptimizerKind::Tr, &start, &views)?,
        })
    })?
}

impl FitSingleReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "method,iter,psnr,h2_position,h2_scale,h2_rotation,h2_opacity,h2_color,h2_joint,eps\n",
        );
        for t in [&self.adam, &self.tr] {
            for (i, m) in t.motion.iter().enumerate() {
                let f = m.family;
                let eps = if t.eps[i].is_nan() { "nan".into() } else { t.eps[i].to_string() };
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{}",
                    t.kind.name(),
                    i + 1,
                    t.psnr[i + 1],
                    f[0],
                    f[1],
                    f[2],
                    f[3],
                    f[4],
                    m.joint,
                    eps
                );
            }
        }
        s
    }

    /// Renders of the first view at a few iterations: one row per method,
    /// ground truth in the last column.
    pub fn strip(&self, config: &RunConfig) -> Result<Image> {
        let views = fit_views(config, &self.ground_truth)?;
        let cam = views[0].camera;
        let n = self.adam.splats.len() - 1;
        let mut picks: Vec<usize> = [0usize, 5, 10, 25, 50, 100, 200]
            .into_iter()
            .filter(|&i| i < n)
            .collect();
        picks.push(n);
        let mut rows = Vec::new();
        for t in [&self.adam, &self.tr] {
            let mut frames = Vec::new();
            for &i in &picks {
                frames.push(rasterize(&Scene::new(vec![t.splats[i]]), &cam, &RenderSettings::default())?.image);
            }
            frames.push(views[0].image.clone());
            rows.push(Image::hstack(&frames)?);
        }
        Image::vstack(&rows)
    }

    pub fn write(&self, config: &RunConfig) -> Result<()> {
        let out = &config.out;
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let csv = out.join("fit_single.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        save_png(&self.strip(config)?, &out.join("fit_single_strip.png"), PngDepth::Eight)
    }
}
