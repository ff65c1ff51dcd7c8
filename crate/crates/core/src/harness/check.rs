//! Self-checks of derivatives, estimators and trust-region bounds.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::RunConfig;
use super::dataset::{random_quaternion, random_splat, ring_cameras};
use super::train::with_workers;
use crate::error::{Error, Result};
use crate::optimizer::{exact_gauss_newton_diag, hutchinson_diag, Minibatch, RenderModel, ResidualModel};
use crate::renderer::{rasterize, RenderSettings};
use crate::residuals::{full_gradient, residual_count, view_residuals, LossSettings};
use crate::scene::{GaussianPrimitive, Group, Scene, View};
use crate::trustregion::{
    beta_rotation, certification_ratios, hellinger_quadrature, hellinger_sq, mass_gaussian, shd_radii, MassForm,
    RadiusCaps,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    Grad,
    Adjoint,
    Hutch,
    Hellinger,
    TrBounds,
    Beta,
    Radii,
}

impl CheckKind {
    pub const ALL: [CheckKind; 7] = [
        CheckKind::Grad,
        CheckKind::Adjoint,
        CheckKind::Hutch,
        CheckKind::Hellinger,
        CheckKind::TrBounds,
        CheckKind::Beta,
        CheckKind::Radii,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Grad => "grad",
            CheckKind::Adjoint => "adjoint",
            CheckKind::Hutch => "hutch",
            CheckKind::Hellinger => "hellinger",
            CheckKind::TrBounds => "tr-bounds",
            CheckKind::Beta => "beta",
            CheckKind::Radii => "radii",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown check `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn new(name: &'static str, max_error: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name,
            max_error,
            tolerance,
            passed: max_error <= tolerance,
            detail,
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "{} {}: max error {:.3e} (tolerance {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.tolerance
        )
    }
}

/// A seeded scene of `k` splats with `views` square views of side `size`,
/// whose target images come from a perturbed copy of the scene.
pub fn check_problem(seed: u64, k: usize, size: usize, views: usize) -> Result<(Scene, Vec<View>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::new((0..k).map(|_| random_splat(&mut rng)).collect());
    let mut target = scene.clone();
    for p in &mut target.primitives {
        for m in &mut p.mean {
            *m += 0.05 * rng.random_range(-1.0..1.0);
        }
        for c in &mut p.color {
            *c = rng.random_range(0.1..1.0);
        }
        p.opacity = rng.random_range(0.3..0.9);
    }
    let settings = RenderSettings::default();
    let cams = ring_cameras(views, 3.0, 1.6 * size as f64, size, size);
    let views = cams
        .into_iter()
        .map(|camera| {
            Ok(View {
                camera,
                image: rasterize(&target, &camera, &settings)?.image,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((scene, views))
}

/// A primitive with scales in `[0.1, 2]`, opacity in `[0.05, 0.9]` and an
/// unnormalized quaternion of norm in `[0.5, 2]`.
pub fn random_primitive<R: Rng>(rng: &mut R) -> GaussianPrimitive {
    let norm = rng.random_range(0.5..2.0);
    GaussianPrimitive {
        mean: std::array::from_fn(|_| StandardNormal.sample(rng)),
        scale: std::array::from_fn(|_| rng.random_range(0.1..2.0)),
        rotation: random_quaternion(rng).map(|v| v * norm),
        opacity: rng.random_range(0.05..0.9),
        color: std::array::from_fn(|_| rng.random_range(0.05..1.0)),
    }
}

/// Objective difference `φ(x + h e_k) − φ(x − h e_k)` accumulated entry by
/// entry, which keeps cancellation error proportional to the difference.
fn objective_difference(scene: &Scene, views: &[View], loss: &LossSettings, k: usize, h: f64) -> Result<f64> {
    let x = scene.pack();
    let mut plus = scene.clone();
    let mut xp = x.clone();
    xp[k] += h;
    plus.set_params(&xp)?;
    let mut minus = scene.clone();
    let mut xm = x;
    xm[k] -= h;
    minus.set_params(&xm)?;
    let mut acc = 0.0;
    for v in views {
        let a = view_residuals(&plus, v, loss)?;
        let b = view_residuals(&minus, v, loss)?;
        acc += a.entries.iter().zip(&b.entries).map(|(p, q)| (p - q) * (p + q)).sum::<f64>();
    }
    Ok(acc / (2.0 * residual_count(views) as f64))
}

/// Reverse-mode gradient against central differences.
pub fn check_grad(seed: u64) -> Result<CheckReport> {
    let (scene, views) = check_problem(seed, 8, 16, 2)?;
    let loss = LossSettings::default();
    let g = full_gradient(&scene, &views, &loss)?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    let mut compared = 0;
    for (k, &gk) in g.iter().enumerate() {
        if gk.abs() <= 1e-8 {
            continue;
        }
        compared += 1;
        let fd = objective_difference(&scene, &views, &loss, k, h)? / (2.0 * h);
        let rel = (gk - fd).abs() / gk.abs();
        if rel > worst {
            let (grp, i, c) = Group::locate(scene.len(), k);
            detail = format!(
                "worst at {} of splat {i} component {c}: reverse {gk:.6e}, differences {fd:.6e}",
                grp.name()
            );
            worst = rel;
        }
    }
    let _ = write!(detail, "; {compared} of {} coordinates compared", g.len());
    Ok(CheckReport::new("grad", worst, 1e-4, detail))
}

/// `⟨u, Jv⟩ = ⟨Jᵀu, v⟩` for random pairs.
pub fn check_adjoint(seed: u64, pairs: usize) -> Result<CheckReport> {
    let (scene, views) = check_problem(seed, 8, 16, 2)?;
    let model = RenderModel::new(&views, LossSettings::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xad70);
    let mut worst: f64 = 0.0;
    for p in 0..pairs {
        let view = p % views.len();
        let v: Vec<f64> = (0..scene.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = 6 * views[view].image.pixels();
        let u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let jv = model.view_jvp(&scene, view, &v)?;
        let jtu = model.view_vjp(&scene, view, &u)?;
        let a: f64 = u.iter().zip(&jv).map(|(x, y)| x * y).sum();
        let b: f64 = jtu.iter().zip(&v).map(|(x, y)| x * y).sum();
        worst = worst.max((a - b).abs() / (1.0 + a.abs()));
    }
    Ok(CheckReport::new("adjoint", worst, 1e-9, format!("{pairs} random pairs")))
}

/// Per-coordinate Hutchinson means and standard errors over `samples`
/// single-probe estimates on the full batch.
pub fn hutchinson_statistics(
    model: &dyn ResidualModel,
    scene: &Scene,
    samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let batch = Minibatch::all(model.num_views());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = scene.dim();
    let (mut sum, mut sq) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..samples {
        let d = hutchinson_diag(model, scene, &batch, 1, &mut rng)?;
        for k in 0..n {
            sum[k] += d[k];
            sq[k] += d[k] * d[k];
        }
    }
    let s = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|v| v / s).collect();
    let se = (0..n)
        .map(|k| {
            let var = (sq[k] / s - mean[k] * mean[k]).max(0.0) * s / (s - 1.0).max(1.0);
            (var / s).sqrt()
        })
        .collect();
    Ok((mean, se))
}

/// Hutchinson means within three standard errors of the exact diagonal.
pub fn check_hutch(seed: u64, samples: usize) -> Result<CheckReport> {
    let (scene, views) = check_problem(seed, 4, 12, 2)?;
    let model = RenderModel::new(&views, LossSettings::default());
    let exact = exact_gauss_newton_diag(&model, &scene, &Minibatch::all(views.len()))?;
    let (mean, se) = hutchinson_statistics(&model, &scene, samples, seed)?;
    let mut worst: f64 = 0.0;
    let mut outside = 0;
    for k in 0..exact.len() {
        let dev = (mean[k] - exact[k]).abs();
        let z = if se[k] > 0.0 {
            dev / se[k]
        } else if dev <= 1e-15 * exact[k].abs().max(f64::MIN_POSITIVE) {
            0.0
        } else {
            f64::INFINITY
        };
        if z > 3.0 {
            outside += 1;
        }
        worst = worst.max(z);
    }
    Ok(CheckReport::new(
        "hutch",
        worst,
        3.0,
        format!(
            "{} parameters, {samples} samples, {outside} outside 3 standard errors (error in standard errors)",
            exact.len()
        ),
    ))
}

/// Closed-form Hellinger distance against 64³ quadrature.
pub fn check_hellinger(seed: u64, pairs: usize) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut identity: f64 = 0.0;
    for _ in 0..pairs {
        let a = random_primitive(&mut rng);
        let mut b = a;
        b.mean = std::array::from_fn(|c| a.mean[c] + 0.5 * a.scale[c] * rng.random_range(-1.0..1.0));
        b.scale = a.scale.map(|s| s * rng.random_range(0.7..1.4));
        b.rotation = a.rotation.map(|q| q + 0.3 * rng.random_range(-1.0..1.0));
        b.opacity = rng.random_range(0.05..0.9);
        let (ga, gb) = (mass_gaussian(&a, MassForm::Opacity)?, mass_gaussian(&b, MassForm::Opacity)?);
        let exact = hellinger_sq(&ga, &gb)?;
        let quad = hellinger_quadrature(&ga, &gb, 64)?;
        worst = worst.max((exact - quad).abs() / exact);
        identity = identity.max(hellinger_sq(&ga, &ga)?);
    }
    let mut r = CheckReport::new(
        "hellinger",
        worst,
        1e-3,
        format!("{pairs} pairs; largest H²(G, G) = {identity:.1e}"),
    );
    r.passed &= identity <= 1e-12;
    Ok(r)
}

/// Single-parameter steps at the returned radii stay inside the region.
pub fn check_tr_bounds(seed: u64, primitives: usize, extra_eps: f64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let caps = RadiusCaps::default();
    let mut eps_list = vec![1e-6, 1e-5, 1e-4];
    if !eps_list.contains(&extra_eps) {
        eps_list.push(extra_eps);
    }
    let mut family = [0.0f64; 5];
    for _ in 0..primitives {
        let p = random_primitive(&mut rng);
        for &e in &eps_list {
            let r = certification_ratios(&p, e, &caps)?;
            for (j, v) in r.iter().enumerate() {
                let (g, _, _) = Group::locate(1, j);
                let slot = Group::ALL.iter().position(|&x| x == g).unwrap_or(0);
                family[slot] = family[slot].max(*v);
            }
        }
    }
    // error measured against each family's own tolerance
    let excess = family
        .iter()
        .enumerate()
        .map(|(i, v)| if i == 0 { v - (1.0 + 1e-6) } else { v - 1.15 })
        .fold(f64::NEG_INFINITY, f64::max);
    let mut detail = format!("{primitives} primitives, eps in {eps_list:?}; worst H²/(det S·eps):");
    for (g, v) in Group::ALL.iter().zip(family) {
        let _ = write!(detail, " {}={v:.4}", g.name());
    }
    let mut r = CheckReport::new("tr-bounds", excess.max(0.0), 0.0, detail);
    r.max_error = family.iter().copied().fold(0.0, f64::max);
    r.tolerance = 1.15;
    r.passed = excess <= 0.0;
    Ok(r)
}

/// `T(Δq) = ‖S R(q)ᵀ R(q + Δq) S⁻¹‖²_F`.
fn rotation_objective(p: &GaussianPrimitive, c: usize, dq: f64) -> Result<f64> {
    let r0 = p.rotation_matrix()?;
    let mut q = p.rotation;
    q[c] += dq;
    let r1 = crate::scene::quat_to_rotation(&q)?;
    let m = crate::linalg::matmul(&crate::linalg::transpose(&r0), &r1);
    let mut t = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let v = p.scale[i] * m[i][j] / p.scale[j];
            t += v * v;
        }
    }
    Ok(t)
}

/// Closed-form `β_c` against the second difference of `T`.
pub fn check_beta(seed: u64, pairs: usize) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let p = random_primitive(&mut rng);
        for c in 0..4 {
            let b = beta_rotation(&p, c)?;
            let fd = (rotation_objective(&p, c, h)? - 2.0 * rotation_objective(&p, c, 0.0)?
                + rotation_objective(&p, c, -h)?)
                / (h * h);
            worst = worst.max((b - fd).abs() / b.abs().max(1e-12));
        }
    }
    Ok(CheckReport::new("beta", worst, 1e-3, format!("{pairs} random (q, S) pairs")))
}

/// Per-family histograms of log10 radii as CSV.
pub fn radii_histogram(scene: &Scene, eps: f64, caps: &RadiusCaps, bins: usize) -> Result<String> {
    let rv = shd_radii(scene, eps, caps)?;
    let k = scene.len();
    let mut s = String::from("family,log10_lo,log10_hi,count\n");
    for g in Group::ALL {
        let vals: Vec<f64> = rv.group(k, g).iter().map(|v| v.log10()).collect();
        if vals.is_empty() {
            continue;
        }
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = ((hi - lo) / bins as f64).max(1e-12);
        let mut counts = vec![0usize; bins];
        for v in &vals {
            counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let a = lo + i as f64 * width;
            let _ = writeln!(s, "{},{a},{},{c}", g.name(), a + width);
        }
    }
    Ok(s)
}

/// Runs one check with the configured seed and sample counts.
pub fn run_check(kind: CheckKind, config: &RunConfig) -> Result<CheckReport> {
    with_workers(config.workers, || match kind {
        CheckKind::Grad => check_grad(config.seed),
        CheckKind::Adjoint => check_adjoint(config.seed, 20),
        CheckKind::Hutch => check_hutch(config.seed, config.check_samples),
        CheckKind::Hellinger => check_hellinger(config.seed, 100),
        CheckKind::TrBounds => check_tr_bounds(config.seed, 1000, config.check_eps),
        CheckKind::Beta => check_beta(config.seed, 200),
        CheckKind::Radii => {
            let scene = match &config.init {
                Some(p) => crate::scene::load_scene(p)?,
                None => check_problem(config.seed, 8, 16, 1)?.0,
            };
            let csv = radii_histogram(&scene, config.check_eps, &config.caps(), 10)?;
            std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
            let path = config.out.join("radii_histogram.csv");
            std::fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
            Ok(CheckReport::new("radii", 0.0, 0.0, format!("wrote {}", path.display())))
        }
    })?
}
