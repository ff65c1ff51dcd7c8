//! Parameter-wise trust regions measured by the squared Hellinger distance
//! between unnormalized Gaussians.
//!
//! A splat `G(z) = Z·N(z; μ, Σ)` carries mass `Z = α·det S` (opacity as
//! mass), or `Z = α·C_c·det S` when a color channel is the quantity being
//! bounded. Distances are normalized by `det S` of the reference splat.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3};
use crate::scene::{quat_norm_sq, unnormalized_rotation, GaussianPrimitive, Group, Scene};

/// Geometric decay of the trust-region size `ε` over a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrustRegionSchedule {
    pub eps_start: f64,
    pub eps_end: f64,
    pub total_steps: usize,
}

impl TrustRegionSchedule {
    pub fn new(eps_start: f64, eps_end: f64, total_steps: usize) -> Result<Self> {
        if !(eps_end > 0.0 && eps_start >= eps_end && eps_start.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "trust-region schedule needs eps_start >= eps_end > 0, got {eps_start} -> {eps_end}"
            )));
        }
        Ok(Self {
            eps_start,
            eps_end,
            total_steps,
        })
    }

    pub fn eps_at(&self, t: usize) -> f64 {
        eps_at(self, t)
    }
}

impl Default for TrustRegionSchedule {
    fn default() -> Self {
        Self {
            eps_start: 1e-6,
            eps_end: 1e-8,
            total_steps: 1,
        }
    }
}

/// `ε_start·(ε_end/ε_start)^(t/total)`, clamped to the endpoints.
pub fn eps_at(schedule: &TrustRegionSchedule, t: usize) -> f64 {
    if schedule.total_steps == 0 {
        return schedule.eps_start;
    }
    let frac = (t as f64 / schedule.total_steps as f64).min(1.0);
    let e = schedule.eps_start * (schedule.eps_end / schedule.eps_start).powf(frac);
    e.clamp(schedule.eps_end, schedule.eps_start)
}

/// Upper bounds on the radii of each family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusCaps {
    pub position: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
    /// Rotation radii are additionally capped at this multiple of `‖q‖`.
    pub rotation_relative: f64,
}

impl Default for RadiusCaps {
    fn default() -> Self {
        Self {
            position: 1.0,
            scale: 1.0,
            rotation: 1.0,
            opacity: 1.0,
            color: 1.0,
            rotation_relative: 0.2,
        }
    }
}

impl RadiusCaps {
    pub fn uniform(eta_max: f64) -> Self {
        Self {
            position: eta_max,
            scale: eta_max,
            rotation: eta_max,
            opacity: eta_max,
            color: eta_max,
            rotation_relative: f64::INFINITY,
        }
    }

    pub fn for_group(&self, g: Group) -> f64 {
        match g {
            Group::Position => self.position,
            Group::Scale => self.scale,
            Group::Rotation => self.rotation,
            Group::Opacity => self.opacity,
            Group::Color => self.color,
        }
    }
}

const BETA_FLOOR: f64 = 1e-12;

fn cap(r: f64, eta_max: f64) -> f64 {
    if r.is_nan() {
        return eta_max;
    }
    r.clamp(f64::MIN_POSITIVE, eta_max)
}

fn vacuous(eps: f64, alpha: f64) -> bool {
    eps >= alpha * (1.0 - 1e-12)
}

// ---------------------------------------------------------------------------
// Hellinger distance
// ---------------------------------------------------------------------------

/// An unnormalized Gaussian `Z·N(μ, Σ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassGaussian {
    pub mean: [f64; 3],
    pub cov: Mat3<f64>,
    pub mass: f64,
}

impl MassGaussian {
    pub fn density(&self, p: &[f64; 3]) -> Result<f64> {
        let inv = linalg::inverse(&self.cov).ok_or(Error::NotSpd)?;
        let d = [p[0] - self.mean[0], p[1] - self.mean[1], p[2] - self.mean[2]];
        let m = linalg::mat_vec(&inv, &d);
        let q = d[0] * m[0] + d[1] * m[1] + d[2] * m[2];
        let norm = ((2.0 * std::f64::consts::PI).powi(3) * linalg::det(&self.cov)).sqrt();
        Ok(self.mass * (-0.5 * q).exp() / norm)
    }
}

/// Which mass a primitive carries when compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MassForm {
    Opacity,
    Color(usize),
}

pub fn mass_gaussian(prim: &GaussianPrimitive, form: MassForm) -> Result<MassGaussian> {
    let mut mass = prim.opacity * prim.det_scale();
    if let MassForm::Color(c) = form {
        mass *= prim.color[c];
    }
    Ok(MassGaussian {
        mean: prim.mean,
        cov: prim.covariance()?,
        mass,
    })
}

/// Closed-form `½∫(√G − √G')²`; symmetric in its arguments bit for bit.
pub fn hellinger_sq(a: &MassGaussian, b: &MassGaussian) -> Result<f64> {
    if !linalg::is_spd(&a.cov) || !linalg::is_spd(&b.cov) {
        return Err(Error::NotSpd);
    }
    let mut mid = linalg::zeros();
    for i in 0..3 {
        for j in 0..3 {
            mid[i][j] = (a.cov[i][j] + b.cov[i][j]) * 0.5;
        }
    }
    let inv = linalg::inverse(&mid).ok_or(Error::NotSpd)?;
    let d = [a.mean[0] - b.mean[0], a.mean[1] - b.mean[1], a.mean[2] - b.mean[2]];
    let m = linalg::mat_vec(&inv, &d);
    let quad = d[0] * m[0] + d[1] * m[1] + d[2] * m[2];
    let dets = linalg::det(&a.cov) * linalg::det(&b.cov);
    let overlap = dets.powf(0.25) / linalg::det(&mid).sqrt() * (-quad / 8.0).exp();
    let h = 0.5 * (a.mass + b.mass) - (a.mass * b.mass).sqrt() * overlap;
    Ok(h.max(0.0))
}

/// `H²(G, G') / det S` with `S` taken from the reference splat `a`.
pub fn normalized_hellinger(a: &GaussianPrimitive, b: &GaussianPrimitive, form: MassForm) -> Result<f64> {
    let h = hellinger_sq(&mass_gaussian(a, form)?, &mass_gaussian(b, form)?)?;
    Ok(h / a.det_scale())
}

/// Midpoint-rule value of `½∫(√G − √G')²` on an `n³` grid spanning ±6σ
/// per axis around the two means.
pub fn hellinger_quadrature(a: &MassGaussian, b: &MassGaussian, n: usize) -> Result<f64> {
    let mut lo = [0.0; 3];
    let mut step = [0.0; 3];
    for c in 0..3 {
        let sd = a.cov[c][c].max(b.cov[c][c]).sqrt();
        let l = a.mean[c].min(b.mean[c]) - 6.0 * sd;
        let h = a.mean[c].max(b.mean[c]) + 6.0 * sd;
        lo[c] = l;
        step[c] = (h - l) / n as f64;
    }
    let ia = linalg::inverse(&a.cov).ok_or(Error::NotSpd)?;
    let ib = linalg::inverse(&b.cov).ok_or(Error::NotSpd)?;
    let tau = (2.0 * std::f64::consts::PI).powi(3);
    let na = (a.mass / (tau * linalg::det(&a.cov)).sqrt()).sqrt();
    let nb = (b.mass / (tau * linalg::det(&b.cov)).sqrt()).sqrt();
    let root = |inv: &Mat3<f64>, mean: &[f64; 3], p: &[f64; 3]| {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        let m = linalg::mat_vec(inv, &d);
        (-0.25 * (d[0] * m[0] + d[1] * m[1] + d[2] * m[2])).exp()
    };
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for j in 0..n {
                for k in 0..n {
                    let p = [
                        lo[0] + (i as f64 + 0.5) * step[0],
                        lo[1] + (j as f64 + 0.5) * step[1],
                        lo[2] + (k as f64 + 0.5) * step[2],
                    ];
                    let diff = na * root(&ia, &a.mean, &p) - nb * root(&ib, &b.mean, &p);
                    s += diff * diff;
                }
            }
            s
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(0.5 * total * step[0] * step[1] * step[2])
}

// ---------------------------------------------------------------------------
// Radii
// ---------------------------------------------------------------------------

/// Per-axis mean radii. The variance along axis `c` is taken conditional on
/// the other axes, `1/(Σ⁻¹)_cc`, which equals `Σ_cc` for axis-aligned splats
/// and keeps the bound exact for rotated ones.
pub fn radius_mean(prim: &GaussianPrimitive, eps: f64, caps: &RadiusCaps) -> Result<[f64; 3]> {
    let eta = caps.position;
    if vacuous(eps, prim.opacity) {
        return Ok([eta; 3]);
    }
    let r = prim.rotation_matrix()?;
    let log = -(1.0 - eps / prim.opacity).ln();
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let prec: f64 = (0..3).map(|k| r[k][c] * r[k][c] / (prim.scale[k] * prim.scale[k])).sum();
        *o = cap((8.0 * log / prec).sqrt(), eta);
    }
    Ok(out)
}

pub fn radius_scale(prim: &GaussianPrimitive, eps: f64, caps: &RadiusCaps) -> [f64; 3] {
    prim.scale
        .map(|s| cap((2.0 * s * s * eps / prim.opacity).sqrt(), caps.scale))
}

pub fn radius_opacity(prim: &GaussianPrimitive, eps: f64, caps: &RadiusCaps) -> f64 {
    cap((4.0 * prim.opacity * eps).sqrt(), caps.opacity)
}

pub fn radius_color(prim: &GaussianPrimitive, eps: f64, caps: &RadiusCaps) -> [f64; 3] {
    prim.color
        .map(|c| cap((4.0 * c * eps / prim.opacity).sqrt(), caps.color))
}

/// How the derivatives of `E` are obtained in [`beta_rotation_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BetaMode {
    ClosedForm,
    /// Central differences of `E(q + h·e_c)`, `h = 1e-4`.
    FiniteDifference,
}

fn unit(c: usize) -> [f64; 4] {
    let mut e = [0.0; 4];
    e[c] = 1.0;
    e
}

fn sub(a: &Mat3<f64>, b: &Mat3<f64>) -> Mat3<f64> {
    linalg::add(a, &linalg::scale(b, -1.0))
}

/// `(∂_c E, ∂_c² E)` at `Δq = 0`, with `E(Δq) = R(q)ᵀ R(q + Δq) − I`.
fn e_derivatives(q: &[f64; 4], c: usize, mode: BetaMode) -> (Mat3<f64>, Mat3<f64>) {
    let r2 = quat_norm_sq(q);
    let rt = linalg::transpose(&linalg::scale(&unnormalized_rotation(q), 1.0 / r2));
    match mode {
        BetaMode::ClosedForm => {
            // R̃ is a quadratic form in q: ∂R̃ is bilinear, ∂²R̃ constant.
            let rq = unnormalized_rotation(q);
            let re = unnormalized_rotation(&unit(c));
            let mut qe = *q;
            qe[c] += 1.0;
            let d1 = sub(&sub(&unnormalized_rotation(&qe), &rq), &re);
            let d2 = linalg::scale(&re, 2.0);
            let qc = q[c];
            let (r4, r6) = (r2 * r2, r2 * r2 * r2);
            let de = linalg::add(&linalg::scale(&d1, 1.0 / r2), &linalg::scale(&rq, -2.0 * qc / r4));
            let dde = linalg::add(
                &linalg::add(&linalg::scale(&d2, 1.0 / r2), &linalg::scale(&d1, -4.0 * qc / r4)),
                &linalg::scale(&rq, -2.0 / r4 + 8.0 * qc * qc / r6),
            );
            (linalg::matmul(&rt, &de), linalg::matmul(&rt, &dde))
        }
        BetaMode::FiniteDifference => {
            let h = 1e-4;
            let e_at = |t: f64| {
                let mut qt = *q;
                qt[c] += t;
                let rn = linalg::scale(&unnormalized_rotation(&qt), 1.0 / quat_norm_sq(&qt));
                sub(&linalg::matmul(&rt, &rn), &linalg::identity())
            };
            let (ep, e0, em) = (e_at(h), e_at(0.0), e_at(-h));
            let d1 = linalg::scale(&sub(&ep, &em), 0.5 / h);
            let d2 = linalg::scale(&linalg::add(&sub(&ep, &linalg::scale(&e0, 2.0)), &em), 1.0 / (h * h));
            (d1, d2)
        }
    }
}

/// Curvature `β_c = 2‖S ∂_cE S⁻¹‖²_F + 2 tr(∂_c²E)` of
/// `T(Δq) = ‖S R(q)ᵀ R(q+Δq) S⁻¹‖²_F` along quaternion component `c`.
pub fn beta_rotation(prim: &GaussianPrimitive, c: usize) -> Result<f64> {
    beta_rotation_with(prim, c, BetaMode::ClosedForm)
}

pub fn beta_rotation_with(prim: &GaussianPrimitive, c: usize, mode: BetaMode) -> Result<f64> {
    if c >= 4 {
        return Err(Error::InvalidInput(format!("quaternion component {c} out of range")));
    }
    prim.rotation_matrix()?;
    let (de, dde) = e_derivatives(&prim.rotation, c, mode);
    let s = prim.scale;
    let mut fro = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let v = s[i] * de[i][j] / s[j];
            fro += v * v;
        }
    }
    Ok(2.0 * fro + 2.0 * linalg::trace(&dde))
}

pub fn radius_rotation(prim: &GaussianPrimitive, eps: f64, caps: &RadiusCaps) -> Result<[f64; 4]> {
    let eta = caps.rotation.min(caps.rotation_relative * quat_norm_sq(&prim.rotation).sqrt());
    let mut out = [eta; 4];
    if vacuous(eps, prim.opacity) {
        return Ok(out);
    }
    let log = -(1.0 - eps / prim.opacity).ln();
    for (c, o) in out.iter_mut().enumerate() {
        let b = beta_rotation(prim, c)?;
        if b > BETA_FLOOR {
            *o = cap((8.0 * log / b).sqrt(), eta);
        }
    }
    Ok(out)
}

/// All 14 radii of one splat in `(mean, scale, rotation, opacity, color)`
/// order.
pub fn splat_radii(prim: &GaussianPrimitive, eps: f64, caps: &RadiusCaps) -> Result<[f64; 14]> {
    let mut out = [0.0; 14];
    out[0..3].copy_from_slice(&radius_mean(prim, eps, caps)?);
    out[3..6].copy_from_slice(&radius_scale(prim, eps, caps));
    out[6..10].copy_from_slice(&radius_rotation(prim, eps, caps)?);
    out[10] = radius_opacity(prim, eps, caps);
    out[11..14].copy_from_slice(&radius_color(prim, eps, caps));
    Ok(out)
}

/// Trust-region radii in the scene's flat layout.
#[derive(Clone, Debug, PartialEq)]
pub struct RadiusVector {
    pub values: Vec<f64>,
}

impl RadiusVector {
    pub fn uniform(dim: usize, eta: f64) -> Self {
        Self { values: vec![eta; dim] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn group(&self, k: usize, g: Group) -> &[f64] {
        &self.values[g.offset(k)..g.offset(k) + k * g.width()]
    }
}

pub fn shd_radii(scene: &Scene, eps: f64, caps: &RadiusCaps) -> Result<RadiusVector> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("trust-region size must be positive, got {eps}")));
    }
    let per: Vec<[f64; 14]> = scene
        .primitives
        .par_iter()
        .map(|p| splat_radii(p, eps, caps))
        .collect::<Result<_>>()?;
    let k = scene.len();
    let mut values = vec![0.0; scene.dim()];
    for (i, r) in per.iter().enumerate() {
        let mut j = 0;
        for g in Group::ALL {
            for c in 0..g.width() {
                values[g.index(k, i, c)] = r[j];
                j += 1;
            }
        }
    }
    Ok(RadiusVector { values })
}

/// Elementwise clamp of `delta` to `[−η, η]`.
pub fn clip_step(delta: &[f64], eta: &RadiusVector) -> Result<Vec<f64>> {
    if delta.len() != eta.len() {
        return Err(Error::DimensionMismatch {
            expected: eta.len(),
            got: delta.len(),
        });
    }
    Ok(delta.iter().zip(&eta.values).map(|(d, e)| d.clamp(-e, *e)).collect())
}

/// Worst normalized Hellinger distance over `±radius` single-parameter
/// steps, per parameter, as a multiple of `ε`.
pub fn certification_ratios(prim: &GaussianPrimitive, eps: f64, caps: &RadiusCaps) -> Result<[f64; 14]> {
    let radii = splat_radii(prim, eps, caps)?;
    let mut out = [0.0; 14];
    for (j, &r) in radii.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for sign in [1.0, -1.0] {
            let mut q = *prim;
            let form = match j {
                0..=2 => {
                    q.mean[j] += sign * r;
                    MassForm::Opacity
                }
                3..=5 => {
                    q.scale[j - 3] = (q.scale[j - 3] + sign * r).max(f64::MIN_POSITIVE);
                    MassForm::Opacity
                }
                6..=9 => {
                    q.rotation[j - 6] += sign * r;
                    MassForm::Opacity
                }
                10 => {
                    q.opacity = (q.opacity + sign * r).max(0.0);
                    MassForm::Opacity
                }
                _ => {
                    q.color[j - 11] = (q.color[j - 11] + sign * r).max(0.0);
                    MassForm::Color(j - 11)
                }
            };
            worst = worst.max(normalized_hellinger(prim, &q, form)? / eps);
        }
        out[j] = worst;
    }
    Ok(out)
}
