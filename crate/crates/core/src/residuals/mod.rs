//! Least-squares residuals of the photometric loss.
//!
//! Each view contributes `6·H·W` entries: the square roots of the weighted
//! per-channel L1 terms, then the square roots of the weighted D-SSIM terms,
//! each block channel-major. The objective is `‖f‖² / 2m` with `m` the total
//! entry count, i.e. the mean per-component loss halved.

mod ssim;

pub use ssim::{gaussian_taps, reflect, ssim, ssim_map, C1, C2, SIGMA, WINDOW};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::renderer::{rasterize, rasterize_dual, rasterize_vjp, RenderSettings};
use crate::scene::{Scene, View};

/// Loss and rendering options shared by every residual evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings {
    /// D-SSIM weight.
    pub lambda: f64,
    /// Floor inside the square root.
    pub residual_floor: f64,
    pub render: RenderSettings,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            residual_floor: 1e-12,
            render: RenderSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualVector {
    pub width: usize,
    pub height: usize,
    pub entries: Vec<f64>,
}

impl ResidualVector {
    pub fn l1(&self) -> &[f64] {
        &self.entries[..self.entries.len() / 2]
    }

    pub fn dssim(&self) -> &[f64] {
        &self.entries[self.entries.len() / 2..]
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }
}

fn check_shapes(rendered_len: usize, gt: &Image) -> Result<()> {
    if rendered_len != gt.data.len() {
        return Err(Error::DimensionMismatch {
            expected: gt.data.len(),
            got: rendered_len,
        });
    }
    Ok(())
}

pub(crate) fn residuals_generic<T: Real>(rendered: &[T], gt: &Image, lambda: f64, floor: f64) -> Vec<T> {
    let n = gt.pixels();
    let mut out = Vec::with_capacity(6 * n);
    for c in 0..3 {
        for i in 0..n {
            let d = rendered[i * 3 + c] - gt.data[i * 3 + c];
            out.push((d.abs() * (1.0 - lambda)).max(T::cst(floor)).sqrt());
        }
    }
    for s in ssim::ssim_map_generic(rendered, gt) {
        out.push(((-s + 1.0) * (lambda / 2.0)).max(T::cst(floor)).sqrt());
    }
    out
}

/// Residual entries of a rendered image against its ground truth.
pub fn residuals(rendered: &Image, gt: &Image, lambda: f64) -> Result<ResidualVector> {
    residuals_with_floor(rendered, gt, lambda, LossSettings::default().residual_floor)
}

pub fn residuals_with_floor(rendered: &Image, gt: &Image, lambda: f64, floor: f64) -> Result<ResidualVector> {
    if !rendered.same_shape(gt) {
        return Err(Error::DimensionMismatch {
            expected: gt.data.len(),
            got: rendered.data.len(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(ResidualVector {
        width: gt.width,
        height: gt.height,
        entries: residuals_generic(&rendered.data, gt, lambda, floor),
    })
}

/// Maps a cotangent on the residual entries to a cotangent on the rendered
/// image (channel-last). Entries sitting on the floor pass nothing back.
pub fn residual_pullback(
    rendered: &Image,
    gt: &Image,
    settings: &LossSettings,
    cotangent: &[f64],
) -> Result<Vec<f64>> {
    check_shapes(rendered.data.len(), gt)?;
    let n = gt.pixels();
    if cotangent.len() != 6 * n {
        return Err(Error::DimensionMismatch {
            expected: 6 * n,
            got: cotangent.len(),
        });
    }
    let lambda = settings.lambda;
    let floor = settings.residual_floor;
    let mut adj = vec![0.0; 3 * n];
    for c in 0..3 {
        for i in 0..n {
            let d = rendered.data[i * 3 + c] - gt.data[i * 3 + c];
            let u = (1.0 - lambda) * d.abs();
            if u < floor || d == 0.0 {
                continue;
            }
            let f = u.sqrt();
            adj[i * 3 + c] += cotangent[c * n + i] * (1.0 - lambda) * d.signum() / (2.0 * f);
        }
    }
    let smap = ssim::ssim_map_generic(&rendered.data, gt);
    let mut d_ssim = vec![0.0; 3 * n];
    let mut any = false;
    for (j, &s) in smap.iter().enumerate() {
        let u = lambda * (1.0 - s) / 2.0;
        if u < floor {
            continue;
        }
        let f = u.sqrt();
        d_ssim[j] = cotangent[3 * n + j] * (-lambda / (4.0 * f));
        any |= d_ssim[j] != 0.0;
    }
    if any {
        for (a, b) in adj.iter_mut().zip(ssim::ssim_vjp(rendered, gt, &d_ssim)) {
            *a += b;
        }
    }
    Ok(adj)
}

/// Residuals of one view at the current scene.
pub fn view_residuals(scene: &Scene, view: &View, settings: &LossSettings) -> Result<ResidualVector> {
    let rendered = rasterize(scene, &view.camera, &settings.render)?;
    residuals_with_floor(&rendered.image, &view.image, settings.lambda, settings.residual_floor)
}

/// Residuals and their directional derivative `J v` for one view.
pub fn view_jvp(
    scene: &Scene,
    view: &View,
    direction: &[f64],
    settings: &LossSettings,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let img = rasterize_dual(scene, &view.camera, direction, &settings.render)?;
    check_shapes(img.len(), &view.image)?;
    let r = residuals_generic(&img, &view.image, settings.lambda, settings.residual_floor);
    Ok(r.iter().map(|d| (d.value, d.tangent)).unzip())
}

/// `Jᵀ u` for one view's residual Jacobian.
pub fn view_vjp(scene: &Scene, view: &View, cotangent: &[f64], settings: &LossSettings) -> Result<Vec<f64>> {
    let rendered = rasterize(scene, &view.camera, &settings.render)?;
    let adj = residual_pullback(&rendered.image, &view.image, settings, cotangent)?;
    rasterize_vjp(scene, &view.camera, &adj, &settings.render)
}

/// `Jᵀ f` and `‖f‖²` for one view, sharing a single forward render.
pub fn view_gradient(scene: &Scene, view: &View, settings: &LossSettings) -> Result<(Vec<f64>, f64)> {
    let rendered = rasterize(scene, &view.camera, &settings.render)?;
    let f = residuals_with_floor(&rendered.image, &view.image, settings.lambda, settings.residual_floor)?;
    let adj = residual_pullback(&rendered.image, &view.image, settings, &f.entries)?;
    let g = rasterize_vjp(scene, &view.camera, &adj, &settings.render)?;
    Ok((g, f.norm_sq()))
}

/// Total residual count over a set of views.
pub fn residual_count(views: &[View]) -> usize {
    views.iter().map(|v| 6 * v.image.pixels()).sum()
}

/// `‖f‖² / 2m` over all views.
pub fn objective(scene: &Scene, views: &[View], settings: &LossSettings) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::InvalidInput("objective needs at least one view".into()));
    }
    let mut total = 0.0;
    for v in views {
        total += view_residuals(scene, v, settings)?.norm_sq();
    }
    Ok(total / (2.0 * residual_count(views) as f64))
}

/// Exact gradient `(1/m) Σ Jᵢᵀ fᵢ` of [`objective`].
pub fn full_gradient(scene: &Scene, views: &[View], settings: &LossSettings) -> Result<Vec<f64>> {
    if views.is_empty() {
        return Err(Error::InvalidInput("gradient needs at least one view".into()));
    }
    let mut g = vec![0.0; scene.dim()];
    for v in views {
        let (gv, _) = view_gradient(scene, v, settings)?;
        for (a, b) in g.iter_mut().zip(gv) {
            *a += b;
        }
    }
    let w = 1.0 / residual_count(views) as f64;
    g.iter_mut().for_each(|a| *a *= w);
    Ok(g)
}

/// `10 log10(1 / MSE)`, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a.data.len(), b)?;
    let n = a.data.len().max(1) as f64;
    let mse = a.data.iter().zip(&b.data).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n;
    Ok(if mse < 1e-10 { 100.0 } else { -10.0 * mse.log10() })
}
