//! Gaussian primitives, the flat parameter layout, and camera geometry.
//!
//! Parameters live in activated space: scales are linear and positive,
//! opacity is a probability, color is linear RGB. The flat vector is
//! group-major:
//!
//! | group       | offset  | length |
//! |-------------|---------|--------|
//! | positions   | 0       | 3K     |
//! | scales      | 3K      | 3K     |
//! | quaternions | 6K      | 4K     |
//! | opacities   | 10K     | K      |
//! | colors      | 11K     | 3K     |

mod camera;
mod ply;

pub use camera::{load_cameras, save_cameras, Camera, CameraRecord, View};
pub(crate) use camera::resolve;
pub use ply::{load_scene, save_scene};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat3};

pub const PARAMS_PER_SPLAT: usize = 14;

/// Parameter families, in layout order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Position,
    Scale,
    Rotation,
    Opacity,
    Color,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::Position,
        Group::Scale,
        Group::Rotation,
        Group::Opacity,
        Group::Color,
    ];

    pub const fn width(self) -> usize {
        match self {
            Group::Position | Group::Scale | Group::Color => 3,
            Group::Rotation => 4,
            Group::Opacity => 1,
        }
    }

    /// Offset of the group's block in a vector of `k` splats.
    pub const fn offset(self, k: usize) -> usize {
        match self {
            Group::Position => 0,
            Group::Scale => 3 * k,
            Group::Rotation => 6 * k,
            Group::Opacity => 10 * k,
            Group::Color => 11 * k,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Group::Position => "position",
            Group::Scale => "scale",
            Group::Rotation => "rotation",
            Group::Opacity => "opacity",
            Group::Color => "color",
        }
    }

    /// Index of parameter `c` of splat `i` in the flat vector.
    #[inline]
    pub const fn index(self, k: usize, i: usize, c: usize) -> usize {
        self.offset(k) + i * self.width() + c
    }

    /// Group and (splat, component) owning flat index `idx`.
    pub fn locate(k: usize, idx: usize) -> (Group, usize, usize) {
        let mut g = Group::Position;
        for cand in Group::ALL {
            if idx >= cand.offset(k) {
                g = cand;
            }
        }
        let local = idx - g.offset(k);
        (g, local / g.width(), local % g.width())
    }
}

/// One splat's optimizable parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub mean: [f64; 3],
    pub scale: [f64; 3],
    /// Unnormalized quaternion `(x, y, z, w)`.
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub color: [f64; 3],
}

impl GaussianPrimitive {
    pub fn rotation_matrix(&self) -> Result<Mat3<f64>> {
        quat_to_rotation(&self.rotation)
    }

    pub fn covariance(&self) -> Result<Mat3<f64>> {
        Ok(covariance_from(&self.rotation_matrix()?, &self.scale))
    }

    /// `det(S) = s_x s_y s_z`.
    pub fn det_scale(&self) -> f64 {
        self.scale.iter().product()
    }

    pub fn is_finite(&self) -> bool {
        self.mean
            .iter()
            .chain(&self.scale)
            .chain(&self.rotation)
            .chain(&self.color)
            .chain(std::iter::once(&self.opacity))
            .all(|v| v.is_finite())
    }
}

/// Box constraints applied after every optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamBounds {
    pub scale_min: f64,
    pub opacity_min: f64,
    pub opacity_max: f64,
    pub color_min: f64,
    pub color_max: f64,
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            scale_min: 1e-6,
            opacity_min: 1e-4,
            opacity_max: 0.995,
            color_min: 1e-6,
            color_max: 1.5,
        }
    }
}

impl ParamBounds {
    pub fn clamp(&self, prim: &mut GaussianPrimitive) {
        for s in &mut prim.scale {
            *s = s.max(self.scale_min);
        }
        prim.opacity = prim.opacity.clamp(self.opacity_min, self.opacity_max);
        for c in &mut prim.color {
            *c = c.clamp(self.color_min, self.color_max);
        }
    }

    pub fn contains(&self, prim: &GaussianPrimitive) -> bool {
        prim.is_finite()
            && prim.scale.iter().all(|&s| s >= self.scale_min)
            && (self.opacity_min..=self.opacity_max).contains(&prim.opacity)
            && prim
                .color
                .iter()
                .all(|c| (self.color_min..=self.color_max).contains(c))
            && quat_norm_sq(&prim.rotation) > 1e-24
    }
}

/// A set of splats and its flat parameter layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scene {
    pub primitives: Vec<GaussianPrimitive>,
}

impl Scene {
    pub fn new(primitives: Vec<GaussianPrimitive>) -> Self {
        Self { primitives }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn dim(&self) -> usize {
        PARAMS_PER_SPLAT * self.len()
    }

    pub fn pack(&self) -> Vec<f64> {
        let k = self.len();
        let mut x = vec![0.0; self.dim()];
        for (i, p) in self.primitives.iter().enumerate() {
            x[Group::Position.index(k, i, 0)..][..3].copy_from_slice(&p.mean);
            x[Group::Scale.index(k, i, 0)..][..3].copy_from_slice(&p.scale);
            x[Group::Rotation.index(k, i, 0)..][..4].copy_from_slice(&p.rotation);
            x[Group::Opacity.index(k, i, 0)] = p.opacity;
            x[Group::Color.index(k, i, 0)..][..3].copy_from_slice(&p.color);
        }
        x
    }

    pub fn unpack(x: &[f64]) -> Result<Self> {
        if !x.len().is_multiple_of(PARAMS_PER_SPLAT) {
            return Err(Error::InvalidInput(format!(
                "parameter vector length {} is not a multiple of {PARAMS_PER_SPLAT}",
                x.len()
            )));
        }
        let k = x.len() / PARAMS_PER_SPLAT;
        let primitives = (0..k).map(|i| unpack_one(x, k, i)).collect();
        Ok(Self { primitives })
    }

    /// Overwrites the parameters from a flat vector of matching length.
    pub fn set_params(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let k = self.len();
        for (i, p) in self.primitives.iter_mut().enumerate() {
            *p = unpack_one(x, k, i);
        }
        Ok(())
    }

    pub fn clamp(&mut self, bounds: &ParamBounds) {
        self.primitives.iter_mut().for_each(|p| bounds.clamp(p));
    }
}

fn unpack_one(x: &[f64], k: usize, i: usize) -> GaussianPrimitive {
    let take3 = |g: Group| {
        let o = g.index(k, i, 0);
        [x[o], x[o + 1], x[o + 2]]
    };
    let o = Group::Rotation.index(k, i, 0);
    GaussianPrimitive {
        mean: take3(Group::Position),
        scale: take3(Group::Scale),
        rotation: [x[o], x[o + 1], x[o + 2], x[o + 3]],
        opacity: x[Group::Opacity.index(k, i, 0)],
        color: take3(Group::Color),
    }
}

#[inline]
pub fn quat_norm_sq<T: Real>(q: &[T; 4]) -> T {
    q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]
}

/// The unnormalized rotation matrix `R̃(q)`, whose entries are quadratic in
/// `q = (x, y, z, w)`; the rotation is `R̃ / ‖q‖²`.
pub fn unnormalized_rotation<T: Real>(q: &[T; 4]) -> Mat3<T> {
    let [x, y, z, w] = *q;
    let r2 = quat_norm_sq(q);
    [
        [
            r2 - (y * y + z * z) * 2.0,
            (x * y - w * z) * 2.0,
            (x * z + w * y) * 2.0,
        ],
        [
            (x * y + w * z) * 2.0,
            r2 - (z * z + x * x) * 2.0,
            (y * z - w * x) * 2.0,
        ],
        [
            (x * z - w * y) * 2.0,
            (y * z + w * x) * 2.0,
            r2 - (x * x + y * y) * 2.0,
        ],
    ]
}

/// Rotation matrix of an unnormalized quaternion. Generic so the renderer
/// can push tangents through it; no degeneracy check.
pub fn rotation_generic<T: Real>(q: &[T; 4]) -> Mat3<T> {
    let inv = T::one() / quat_norm_sq(q);
    let mut r = unnormalized_rotation(q);
    r.iter_mut().flatten().for_each(|v| *v *= inv);
    r
}

pub fn quat_to_rotation(q: &[f64; 4]) -> Result<Mat3<f64>> {
    let n = quat_norm_sq(q).sqrt();
    if !(n >= 1e-12) {
        return Err(Error::DegenerateQuaternion(n));
    }
    Ok(rotation_generic(q))
}

/// `Σ = Rᵀ S² R`.
pub fn covariance_from<T: Real>(r: &Mat3<T>, scale: &[T; 3]) -> Mat3<T> {
    let s2 = [scale[0] * scale[0], scale[1] * scale[1], scale[2] * scale[2]];
    let mut sigma = linalg::zeros();
    for i in 0..3 {
        for j in i..3 {
            let v = r[0][i] * s2[0] * r[0][j] + r[1][i] * s2[1] * r[1][j] + r[2][i] * s2[2] * r[2][j];
            sigma[i][j] = v;
            sigma[j][i] = v;
        }
    }
    sigma
}

pub fn covariance(prim: &GaussianPrimitive) -> Result<Mat3<f64>> {
    prim.covariance()
}

/// Screen-space footprint of one splat.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected<T> {
    pub mean2d: [T; 2],
    /// Upper triangle `(xx, xy, yy)` of the 2D covariance, low-pass floor included.
    pub cov2d: [T; 3],
    /// Upper triangle of the inverse 2D covariance.
    pub conic: [T; 3],
    /// Camera-space depth of the mean.
    pub depth: f64,
}

/// Projection options.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionSettings {
    pub z_near: f64,
    /// Added to both diagonal entries of the 2D covariance (pixels²).
    pub low_pass: f64,
}

impl Default for ProjectionSettings {
    fn default() -> Self {
        Self {
            z_near: 0.01,
            low_pass: 0.3,
        }
    }
}

/// EWA projection of a splat given as generic parameters. `None` means the
/// splat is culled by the near plane.
pub fn project_generic<T: Real>(
    mean: &[T; 3],
    scale: &[T; 3],
    rotation: &[T; 4],
    cam: &Camera,
    settings: &ProjectionSettings,
) -> Option<Projected<T>> {
    let w = cam.rotation_matrix();
    let t = cam.translation;
    let pc: [T; 3] = std::array::from_fn(|i| {
        mean[0] * w[i][0] + mean[1] * w[i][1] + mean[2] * w[i][2] + t[i]
    });
    let depth = pc[2].v();
    if !(depth > settings.z_near) {
        return None;
    }
    let inv_z = T::one() / pc[2];
    let mean2d = [pc[0] * inv_z * cam.fx + cam.cx, pc[1] * inv_z * cam.fy + cam.cy];

    let sigma = covariance_from(&rotation_generic(rotation), scale);
    // camera-space covariance W Σ Wᵀ with W constant
    let mut ws = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            ws[i][j] = sigma[0][j] * w[i][0] + sigma[1][j] * w[i][1] + sigma[2][j] * w[i][2];
        }
    }
    let mut cc = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            cc[i][j] = ws[i][0] * w[j][0] + ws[i][1] * w[j][1] + ws[i][2] * w[j][2];
        }
    }
    // Jacobian of the perspective map at the mean: rows (fx/z, 0, -fx x/z²), (0, fy/z, -fy y/z²)
    let j0 = [inv_z * cam.fx, T::zero(), -(pc[0] * inv_z * inv_z) * cam.fx];
    let j1 = [T::zero(), inv_z * cam.fy, -(pc[1] * inv_z * inv_z) * cam.fy];
    let quad = |a: &[T; 3], b: &[T; 3]| {
        let mut acc = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                acc += a[i] * cc[i][j] * b[j];
            }
        }
        acc
    };
    let cxx = quad(&j0, &j0) + settings.low_pass;
    let cxy = quad(&j0, &j1);
    let cyy = quad(&j1, &j1) + settings.low_pass;
    let det = cxx * cyy - cxy * cxy;
    let inv_det = T::one() / det;
    let conic = [cyy * inv_det, -cxy * inv_det, cxx * inv_det];
    Some(Projected {
        mean2d,
        cov2d: [cxx, cxy, cyy],
        conic,
        depth,
    })
}

pub fn project(
    prim: &GaussianPrimitive,
    cam: &Camera,
    settings: &ProjectionSettings,
) -> Option<Projected<f64>> {
    project_generic(&prim.mean, &prim.scale, &prim.rotation, cam, settings)
}
