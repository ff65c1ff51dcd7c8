//! Depth-sorted alpha blending of projected splats.
//!
//! Three entry points share one set of branch decisions:
//!
//! * [`rasterize`] evaluates the image,
//! * [`rasterize_jvp`] pushes a parameter direction through the same code
//!   instantiated with [`Dual`] numbers,
//! * [`rasterize_vjp`] replays each pixel's blending list back to front and
//!   accumulates `Jᵀ · adjoint`.
//!
//! Sort order, the opacity clamp, the skip threshold and early termination
//! are decided on primal values, so the JVP and VJP differentiate the same
//! smooth piece and are exact adjoints of one another.

use rayon::prelude::*;

use crate::autodiff::{seed_direction, Dual, Real};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scene::{project_generic, quat_norm_sq, Camera, Group, ProjectionSettings, Scene, PARAMS_PER_SPLAT};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub projection: ProjectionSettings,
    /// Upper clamp on the per-pixel opacity.
    pub alpha_max: f64,
    /// Contributions with per-pixel opacity below this are skipped.
    pub alpha_skip: f64,
    /// Blending stops once transmittance drops below this.
    pub t_min: f64,
    pub background: [f64; 3],
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            projection: ProjectionSettings::default(),
            alpha_max: 0.99,
            alpha_skip: 1.0 / 255.0,
            t_min: 1e-4,
            background: [0.0; 3],
        }
    }
}

/// Forward render output.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub image: Image,
    /// Per-pixel transmittance left after blending.
    pub transmittance: Vec<f64>,
}

/// A projected splat ready for blending, in depth order.
#[derive(Clone, Copy, Debug)]
struct Fragment<T> {
    splat: usize,
    depth: f64,
    mean: [T; 2],
    conic: [T; 3],
    opacity: T,
    color: [T; 3],
    /// Inclusive pixel bounds `x0, x1, y0, y1`.
    bbox: [usize; 4],
}

/// Depth-sorted fragment list for one camera; the visible index set.
#[derive(Clone, Debug)]
pub struct SplatFragmentList {
    /// `(splat index, depth)` ascending by depth, ties by index.
    pub order: Vec<(usize, f64)>,
    /// `culled[i]` is true when splat `i` cannot touch any pixel.
    pub culled: Vec<bool>,
}

fn check_params<T: Real>(params: &[T]) -> Result<usize> {
    if !params.len().is_multiple_of(PARAMS_PER_SPLAT) {
        return Err(Error::InvalidInput(format!(
            "parameter vector length {} is not a multiple of {PARAMS_PER_SPLAT}",
            params.len()
        )));
    }
    let k = params.len() / PARAMS_PER_SPLAT;
    for i in 0..k {
        let bad = Group::ALL.iter().any(|&g| {
            (0..g.width()).any(|c| !params[g.index(k, i, c)].is_finite())
        });
        if bad {
            return Err(Error::NonFiniteSplat { splat: i });
        }
    }
    Ok(k)
}

fn gather3<T: Real>(params: &[T], g: Group, k: usize, i: usize) -> [T; 3] {
    let o = g.index(k, i, 0);
    [params[o], params[o + 1], params[o + 2]]
}

fn gather_quat<T: Real>(params: &[T], k: usize, i: usize) -> [T; 4] {
    let o = Group::Rotation.index(k, i, 0);
    [params[o], params[o + 1], params[o + 2], params[o + 3]]
}

fn prepare<T: Real>(params: &[T], cam: &Camera, settings: &RenderSettings) -> Result<Vec<Fragment<T>>> {
    let k = check_params(params)?;
    let mut frags = Vec::with_capacity(k);
    for i in 0..k {
        let rot = gather_quat(params, k, i);
        let qn = quat_norm_sq(&rot).v().sqrt();
        if !(qn >= 1e-12) {
            return Err(Error::DegenerateQuaternion(qn));
        }
        let mean = gather3(params, Group::Position, k, i);
        let scale = gather3(params, Group::Scale, k, i);
        let Some(proj) = project_generic(&mean, &scale, &rot, cam, &settings.projection) else {
            continue;
        };
        let opacity = params[Group::Opacity.index(k, i, 0)];
        // Beyond Mahalanobis radius r the per-pixel opacity is below the skip
        // threshold, so the box loses nothing.
        let ratio = opacity.v() / settings.alpha_skip;
        if !(ratio > 1.0) {
            continue;
        }
        let r2 = 2.0 * ratio.ln();
        let hx = (r2 * proj.cov2d[0].v()).sqrt() + 1e-6;
        let hy = (r2 * proj.cov2d[2].v()).sqrt() + 1e-6;
        let (mx, my) = (proj.mean2d[0].v(), proj.mean2d[1].v());
        // pixel centers sit at integer + 0.5
        let lo = |m: f64, h: f64| (m - h - 0.5).ceil();
        let hi = |m: f64, h: f64| (m - 0.5 + h).floor();
        let (x0, x1, y0, y1) = (lo(mx, hx), hi(mx, hx), lo(my, hy), hi(my, hy));
        if !(x1 >= 0.0 && y1 >= 0.0 && x0 <= (cam.width as f64 - 1.0) && y0 <= (cam.height as f64 - 1.0))
            || x0 > x1
            || y0 > y1
        {
            continue;
        }
        let clampi = |v: f64, n: usize| v.max(0.0).min(n as f64 - 1.0) as usize;
        frags.push(Fragment {
            splat: i,
            depth: proj.depth,
            mean: proj.mean2d,
            conic: proj.conic,
            opacity,
            color: gather3(params, Group::Color, k, i),
            bbox: [
                clampi(x0, cam.width),
                clampi(x1, cam.width),
                clampi(y0, cam.height),
                clampi(y1, cam.height),
            ],
        });
    }
    frags.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.splat.cmp(&b.splat)));
    Ok(frags)
}

/// Visible splats of `scene` in blending order.
pub fn fragment_list(scene: &Scene, cam: &Camera, settings: &RenderSettings) -> Result<SplatFragmentList> {
    let frags = prepare(&scene.pack(), cam, settings)?;
    let mut culled = vec![true; scene.len()];
    for f in &frags {
        culled[f.splat] = false;
    }
    Ok(SplatFragmentList {
        order: frags.iter().map(|f| (f.splat, f.depth)).collect(),
        culled,
    })
}

/// Fragments whose bounding box covers row `y`, still in depth order.
fn row_fragments<T: Copy>(frags: &[Fragment<T>], y: usize) -> Vec<&Fragment<T>> {
    frags
        .iter()
        .filter(|f| f.bbox[2] <= y && y <= f.bbox[3])
        .collect()
}

#[inline]
fn footprint<T: Real>(f: &Fragment<T>, px: f64, py: f64) -> T {
    let dx = -f.mean[0] + px;
    let dy = -f.mean[1] + py;
    (f.conic[0] * dx * dx + f.conic[1] * dx * dy * 2.0 + f.conic[2] * dy * dy) * -0.5
}

fn blend_row<T: Real>(
    row: &[&Fragment<T>],
    y: usize,
    width: usize,
    settings: &RenderSettings,
) -> (Vec<T>, Vec<f64>) {
    let mut out = Vec::with_capacity(width * 3);
    let mut trans = Vec::with_capacity(width);
    let py = y as f64 + 0.5;
    for x in 0..width {
        let px = x as f64 + 0.5;
        let mut t = T::one();
        let mut acc = [T::zero(); 3];
        for f in row.iter().filter(|f| f.bbox[0] <= x && x <= f.bbox[1]) {
            let power = footprint(f, px, py);
            if power.v() > 0.0 {
                continue;
            }
            let a = (f.opacity * power.exp()).min(T::cst(settings.alpha_max));
            if a.v() < settings.alpha_skip {
                continue;
            }
            let w = a * t;
            for c in 0..3 {
                acc[c] += f.color[c] * w;
            }
            t *= -a + 1.0;
            if t.v() < settings.t_min {
                break;
            }
        }
        for c in 0..3 {
            out.push(acc[c] + t * settings.background[c]);
        }
        trans.push(t.v());
    }
    (out, trans)
}

fn render_generic<T: Real>(
    params: &[T],
    cam: &Camera,
    settings: &RenderSettings,
) -> Result<(Vec<T>, Vec<f64>)> {
    let frags = prepare(params, cam, settings)?;
    let rows: Vec<(Vec<T>, Vec<f64>)> = (0..cam.height)
        .into_par_iter()
        .map(|y| blend_row(&row_fragments(&frags, y), y, cam.width, settings))
        .collect();
    let mut data = Vec::with_capacity(cam.width * cam.height * 3);
    let mut trans = Vec::with_capacity(cam.width * cam.height);
    for (d, t) in rows {
        data.extend(d);
        trans.extend(t);
    }
    Ok((data, trans))
}

pub fn rasterize(scene: &Scene, cam: &Camera, settings: &RenderSettings) -> Result<RenderedImage> {
    let (data, transmittance) = render_generic(&scene.pack(), cam, settings)?;
    Ok(RenderedImage {
        image: Image::from_data(cam.width, cam.height, data)?,
        transmittance,
    })
}

/// Image with tangents along `direction`; primal values equal [`rasterize`].
pub fn rasterize_dual(
    scene: &Scene,
    cam: &Camera,
    direction: &[f64],
    settings: &RenderSettings,
) -> Result<Vec<Dual>> {
    let params = seed_direction(&scene.pack(), direction)?;
    Ok(render_generic(&params, cam, settings)?.0)
}

/// Directional derivative of the rendered image along `direction`.
pub fn rasterize_jvp(
    scene: &Scene,
    cam: &Camera,
    direction: &[f64],
    settings: &RenderSettings,
) -> Result<Image> {
    let duals = rasterize_dual(scene, cam, direction, settings)?;
    Image::from_data(cam.width, cam.height, duals.iter().map(|d| d.tangent).collect())
}

/// Per-fragment screen-space gradient: mean (2), conic (3), opacity, color (3).
type ScreenGrad = [f64; 9];

struct Contribution {
    frag: usize,
    gauss: f64,
    alpha: f64,
    clamped: bool,
    t_before: f64,
}

fn backprop_row(
    frags: &[Fragment<f64>],
    row: &[usize],
    y: usize,
    width: usize,
    adjoint: &[f64],
    settings: &RenderSettings,
) -> Vec<(usize, ScreenGrad)> {
    let mut grads: Vec<ScreenGrad> = vec![[0.0; 9]; row.len()];
    let mut touched = vec![false; row.len()];
    let mut list: Vec<(usize, Contribution)> = Vec::new();
    let py = y as f64 + 0.5;
    for x in 0..width {
        let d_out = &adjoint[(y * width + x) * 3..][..3];
        if d_out.iter().all(|&v| v == 0.0) {
            continue;
        }
        let px = x as f64 + 0.5;
        list.clear();
        let mut t = 1.0;
        for (slot, &fi) in row.iter().enumerate() {
            let f = &frags[fi];
            if !(f.bbox[0] <= x && x <= f.bbox[1]) {
                continue;
            }
            let power = footprint(f, px, py);
            if power > 0.0 {
                continue;
            }
            let gauss = power.exp();
            let raw = f.opacity * gauss;
            let clamped = settings.alpha_max < raw;
            let alpha = if clamped { settings.alpha_max } else { raw };
            if alpha < settings.alpha_skip {
                continue;
            }
            list.push((
                slot,
                Contribution {
                    frag: fi,
                    gauss,
                    alpha,
                    clamped,
                    t_before: t,
                },
            ));
            t *= 1.0 - alpha;
            if t < settings.t_min {
                break;
            }
        }
        // light arriving from behind each fragment, starting with the background
        let mut behind = [
            settings.background[0] * t,
            settings.background[1] * t,
            settings.background[2] * t,
        ];
        for (slot, c) in list.iter().rev() {
            let f = &frags[c.frag];
            let g = &mut grads[*slot];
            touched[*slot] = true;
            let w = c.alpha * c.t_before;
            let mut d_alpha = 0.0;
            for ch in 0..3 {
                g[6 + ch] += w * d_out[ch];
                d_alpha += d_out[ch] * (f.color[ch] * c.t_before - behind[ch] / (1.0 - c.alpha));
                behind[ch] += f.color[ch] * w;
            }
            if c.clamped {
                continue;
            }
            g[5] += d_alpha * c.gauss;
            let d_power = d_alpha * f.opacity * c.gauss;
            let dx = px - f.mean[0];
            let dy = py - f.mean[1];
            g[0] += d_power * (f.conic[0] * dx + f.conic[1] * dy);
            g[1] += d_power * (f.conic[1] * dx + f.conic[2] * dy);
            g[2] += d_power * (-0.5 * dx * dx);
            g[3] += d_power * (-dx * dy);
            g[4] += d_power * (-0.5 * dy * dy);
        }
    }
    row.iter()
        .zip(grads)
        .zip(touched)
        .filter(|(_, t)| *t)
        .map(|((&fi, g), _)| (fi, g))
        .collect()
}

/// `Jᵀ · adjoint` for the flattened `H × W × 3` image, in the scene layout.
pub fn rasterize_vjp(
    scene: &Scene,
    cam: &Camera,
    adjoint: &[f64],
    settings: &RenderSettings,
) -> Result<Vec<f64>> {
    let n_px = cam.width * cam.height * 3;
    if adjoint.len() != n_px {
        return Err(Error::DimensionMismatch {
            expected: n_px,
            got: adjoint.len(),
        });
    }
    if adjoint.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "render adjoint".into(),
        });
    }
    let params = scene.pack();
    let frags = prepare(&params, cam, settings)?;

    let per_row: Vec<Vec<(usize, ScreenGrad)>> = (0..cam.height)
        .into_par_iter()
        .map(|y| {
            let row: Vec<usize> = (0..frags.len())
                .filter(|&i| frags[i].bbox[2] <= y && y <= frags[i].bbox[3])
                .collect();
            backprop_row(&frags, &row, y, cam.width, adjoint, settings)
        })
        .collect();
    // fixed row order keeps the reduction reproducible for any thread count
    let mut screen = vec![[0.0f64; 9]; frags.len()];
    for row in per_row {
        for (fi, g) in row {
            for (a, b) in screen[fi].iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    let k = scene.len();
    let mut grad = vec![0.0; params.len()];
    for (f, sg) in frags.iter().zip(&screen) {
        let i = f.splat;
        grad[Group::Opacity.index(k, i, 0)] += sg[5];
        for c in 0..3 {
            grad[Group::Color.index(k, i, c)] += sg[6 + c];
        }
        if sg[..5].iter().all(|&v| v == 0.0) {
            continue;
        }
        chain_geometry(&params, k, i, cam, settings, &sg[..5], &mut grad);
    }
    Ok(grad)
}

/// Pulls screen-space mean/conic gradients back to position, scale and
/// rotation using one dual evaluation of the projection per input.
fn chain_geometry(
    params: &[f64],
    k: usize,
    i: usize,
    cam: &Camera,
    settings: &RenderSettings,
    screen: &[f64],
    grad: &mut [f64],
) {
    let mean = gather3(params, Group::Position, k, i);
    let scale = gather3(params, Group::Scale, k, i);
    let rot = gather_quat(params, k, i);
    let inputs: [(Group, usize); 10] = [
        (Group::Position, 0),
        (Group::Position, 1),
        (Group::Position, 2),
        (Group::Scale, 0),
        (Group::Scale, 1),
        (Group::Scale, 2),
        (Group::Rotation, 0),
        (Group::Rotation, 1),
        (Group::Rotation, 2),
        (Group::Rotation, 3),
    ];
    for (n, &(g, c)) in inputs.iter().enumerate() {
        let seed = |j: usize| if n == j { 1.0 } else { 0.0 };
        let m: [Dual; 3] = std::array::from_fn(|j| Dual::new(mean[j], seed(j)));
        let s: [Dual; 3] = std::array::from_fn(|j| Dual::new(scale[j], seed(3 + j)));
        let q: [Dual; 4] = std::array::from_fn(|j| Dual::new(rot[j], seed(6 + j)));
        let Some(p) = project_generic(&m, &s, &q, cam, &settings.projection) else {
            return;
        };
        let d = p.mean2d[0].tangent * screen[0]
            + p.mean2d[1].tangent * screen[1]
            + p.conic[0].tangent * screen[2]
            + p.conic[1].tangent * screen[3]
            + p.conic[2].tangent * screen[4];
        grad[g.index(k, i, c)] += d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianPrimitive;

    pub(crate) fn cam(w: usize, h: usize) -> Camera {
        Camera {
            fx: 20.0,
            fy: 20.0,
            cx: w as f64 / 2.0 + 0.5,
            cy: h as f64 / 2.0 + 0.5,
            width: w,
            height: h,
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0, 0.0, 0.0],
        }
    }

    fn splat(mean: [f64; 3], opacity: f64, color: [f64; 3]) -> GaussianPrimitive {
        GaussianPrimitive {
            mean,
            scale: [0.1; 3],
            rotation: [0.0, 0.0, 0.0, 1.0],
            opacity,
            color,
        }
    }

    #[test]
    fn splat_at_pixel_center() {
        // principal point (w/2 + 0.5) is the center of pixel (w/2, h/2)
        let c = cam(8, 8);
        let scene = Scene::new(vec![splat([0.0, 0.0, 1.0], 0.8, [1.0, 0.0, 0.0])]);
        let out = rasterize(&scene, &c, &RenderSettings::default()).unwrap();
        assert!((out.image.get(4, 4, 0) - 0.8).abs() < 1e-15);
        assert_eq!(out.image.get(4, 4, 1), 0.0);
        assert!((out.transmittance[4 * 8 + 4] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn two_coincident_splats_blend() {
        let c = cam(8, 8);
        let scene = Scene::new(vec![
            splat([0.0, 0.0, 1.0], 0.5, [1.0; 3]),
            splat([0.0, 0.0, 1.0], 0.5, [0.0; 3]),
        ]);
        let out = rasterize(&scene, &c, &RenderSettings::default()).unwrap();
        assert!((out.image.get(4, 4, 0) - 0.5).abs() < 1e-15);
        // swapping storage order flips which one is in front (index tie-break)
        let swapped = Scene::new(vec![scene.primitives[1], scene.primitives[0]]);
        let out = rasterize(&swapped, &c, &RenderSettings::default()).unwrap();
        assert!((out.image.get(4, 4, 0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn empty_scene_shows_background() {
        let settings = RenderSettings {
            background: [0.2, 0.3, 0.4],
            ..Default::default()
        };
        let out = rasterize(&Scene::default(), &cam(4, 3), &settings).unwrap();
        assert!(out.transmittance.iter().all(|&t| t == 1.0));
        assert_eq!(out.image.get(2, 1, 2), 0.4);
    }

    #[test]
    fn non_finite_parameter_names_the_splat() {
        let mut scene = Scene::new(vec![splat([0.0, 0.0, 1.0], 0.5, [1.0; 3]); 3]);
        scene.primitives[2].color[1] = f64::NAN;
        let err = rasterize(&scene, &cam(4, 4), &RenderSettings::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteSplat { splat: 2 }));
    }

    #[test]
    fn opacity_clamp_and_cull() {
        let c = cam(8, 8);
        let scene = Scene::new(vec![
            splat([0.0, 0.0, 1.0], 0.999, [1.0; 3]),
            splat([0.0, 0.0, -1.0], 0.9, [1.0; 3]),
        ]);
        let out = rasterize(&scene, &c, &RenderSettings::default()).unwrap();
        assert!((out.image.get(4, 4, 0) - 0.99).abs() < 1e-15);
        let list = fragment_list(&scene, &c, &RenderSettings::default()).unwrap();
        assert_eq!(list.culled, vec![false, true]);
    }

    #[test]
    fn color_gradient_is_alpha_times_transmittance() {
        let c = cam(8, 8);
        let scene = Scene::new(vec![
            splat([0.02, -0.01, 1.0], 0.6, [0.3, 0.4, 0.5]),
            splat([0.0, 0.03, 1.5], 0.7, [0.9, 0.1, 0.2]),
        ]);
        let settings = RenderSettings::default();
        let (x, y) = (4, 3);
        let mut adj = vec![0.0; 8 * 8 * 3];
        adj[(y * 8 + x) * 3 + 1] = 1.0;
        let g = rasterize_vjp(&scene, &c, &adj, &settings).unwrap();
        // front splat: ᾱ·1; back splat: ᾱ₂·(1-ᾱ₁)
        let abar = |p: &GaussianPrimitive| {
            let pr = crate::scene::project(p, &c, &settings.projection).unwrap();
            let dx = x as f64 + 0.5 - pr.mean2d[0];
            let dy = y as f64 + 0.5 - pr.mean2d[1];
            p.opacity * (-0.5 * (pr.conic[0] * dx * dx + 2.0 * pr.conic[1] * dx * dy + pr.conic[2] * dy * dy)).exp()
        };
        let a0 = abar(&scene.primitives[0]);
        let a1 = abar(&scene.primitives[1]);
        let k = 2;
        assert!((g[Group::Color.index(k, 0, 1)] - a0).abs() < 1e-14);
        assert!((g[Group::Color.index(k, 1, 1)] - a1 * (1.0 - a0)).abs() < 1e-14);
        assert_eq!(g[Group::Color.index(k, 0, 0)], 0.0);
    }

    #[test]
    fn zero_direction_and_zero_adjoint() {
        let c = cam(6, 5);
        let scene = Scene::new(vec![splat([0.01, 0.0, 1.0], 0.6, [0.3, 0.4, 0.5])]);
        let settings = RenderSettings::default();
        let t = rasterize_jvp(&scene, &c, &[0.0; 14], &settings).unwrap();
        assert!(t.data.iter().all(|&v| v == 0.0));
        let g = rasterize_vjp(&scene, &c, &vec![0.0; 90], &settings).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn culled_splat_has_dead_parameters() {
        let c = cam(6, 6);
        let scene = Scene::new(vec![
            splat([0.0, 0.0, 1.0], 0.6, [0.3, 0.4, 0.5]),
            splat([0.0, 0.0, -2.0], 0.6, [0.3, 0.4, 0.5]),
        ]);
        let settings = RenderSettings::default();
        let mut v = vec![0.0; 28];
        v[Group::Color.index(2, 1, 0)] = 1.0;
        let t = rasterize_jvp(&scene, &c, &v, &settings).unwrap();
        assert!(t.data.iter().all(|&x| x == 0.0));
        let g = rasterize_vjp(&scene, &c, &vec![1.0; 108], &settings).unwrap();
        for grp in Group::ALL {
            for c in 0..grp.width() {
                assert_eq!(g[grp.index(2, 1, c)], 0.0);
            }
        }
    }
}
