//! Windowed SSIM: 11×11 Gaussian window (σ = 1.5), reflective borders,
//! `C1 = 0.01²`, `C2 = 0.03²` on unit dynamic range.

use crate::autodiff::Real;
use crate::image::Image;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

pub fn gaussian_taps() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut taps = [0.0; WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = (-(d * d) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Mirror index without repeating the edge sample (`-1 → 1`).
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Separable Gaussian blur of one `w × h` plane.
pub(crate) fn blur<T: Real>(plane: &[T], w: usize, h: usize, taps: &[f64; WINDOW]) -> Vec<T> {
    let half = (WINDOW / 2) as isize;
    let mut tmp = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (k, &t) in taps.iter().enumerate() {
                let sx = reflect(x as isize + k as isize - half, w);
                acc += plane[y * w + sx] * t;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (k, &t) in taps.iter().enumerate() {
                let sy = reflect(y as isize + k as isize - half, h);
                acc += tmp[sy * w + x] * t;
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Adjoint of [`blur`].
pub(crate) fn blur_transpose(adj: &[f64], w: usize, h: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let half = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let g = adj[y * w + x];
            if g == 0.0 {
                continue;
            }
            for (k, &t) in taps.iter().enumerate() {
                let sy = reflect(y as isize + k as isize - half, h);
                tmp[sy * w + x] += g * t;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let g = tmp[y * w + x];
            if g == 0.0 {
                continue;
            }
            for (k, &t) in taps.iter().enumerate() {
                let sx = reflect(x as isize + k as isize - half, w);
                out[y * w + sx] += g * t;
            }
        }
    }
    out
}

/// Window statistics of one channel, kept for the backward pass.
pub(crate) struct Stats<T> {
    pub mu_a: Vec<T>,
    pub mu_b: Vec<f64>,
    pub sigma_a: Vec<T>,
    pub sigma_b: Vec<f64>,
    pub sigma_ab: Vec<T>,
    pub ssim: Vec<T>,
}

pub(crate) fn channel_stats<T: Real>(a: &[T], b: &[f64], w: usize, h: usize) -> Stats<T> {
    let taps = gaussian_taps();
    let aa: Vec<T> = a.iter().map(|&v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|&v| v * v).collect();
    let ab: Vec<T> = a.iter().zip(b).map(|(&p, &q)| p * q).collect();
    let mu_a = blur(a, w, h, &taps);
    let mu_b = blur(b, w, h, &taps);
    let e_aa = blur(&aa, w, h, &taps);
    let e_bb = blur(&bb, w, h, &taps);
    let e_ab = blur(&ab, w, h, &taps);
    let n = w * h;
    let mut sigma_a = Vec::with_capacity(n);
    let mut sigma_b = Vec::with_capacity(n);
    let mut sigma_ab = Vec::with_capacity(n);
    let mut ssim = Vec::with_capacity(n);
    for i in 0..n {
        let sa = e_aa[i] - mu_a[i] * mu_a[i];
        let sb = e_bb[i] - mu_b[i] * mu_b[i];
        let sab = e_ab[i] - mu_a[i] * mu_b[i];
        let num = (mu_a[i] * mu_b[i] * 2.0 + C1) * (sab * 2.0 + C2);
        let den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + C1) * (sa + sb + C2);
        sigma_a.push(sa);
        sigma_b.push(sb);
        sigma_ab.push(sab);
        ssim.push(num / den);
    }
    Stats {
        mu_a,
        mu_b,
        sigma_a,
        sigma_b,
        sigma_ab,
        ssim,
    }
}

fn plane<T: Copy>(data: &[T], c: usize) -> Vec<T> {
    data.iter().skip(c).step_by(3).copied().collect()
}

/// Per-pixel, per-channel SSIM of `a` against `b`, channel-major
/// (`c · H·W + y · W + x`).
pub(crate) fn ssim_map_generic<T: Real>(a: &[T], b: &Image) -> Vec<T> {
    let (w, h) = (b.width, b.height);
    let mut out = Vec::with_capacity(3 * w * h);
    for c in 0..3 {
        out.extend(channel_stats(&plane(a, c), &plane(&b.data, c), w, h).ssim);
    }
    out
}

/// SSIM map of two equally shaped images, channel-major.
pub fn ssim_map(a: &Image, b: &Image) -> crate::error::Result<Vec<f64>> {
    if !a.same_shape(b) {
        return Err(crate::error::Error::DimensionMismatch {
            expected: b.data.len(),
            got: a.data.len(),
        });
    }
    Ok(ssim_map_generic(&a.data, b))
}

/// Mean SSIM over pixels and channels.
pub fn ssim(a: &Image, b: &Image) -> crate::error::Result<f64> {
    let m = ssim_map(a, b)?;
    Ok(m.iter().sum::<f64>() / m.len().max(1) as f64)
}

/// Pulls a channel-major SSIM-map cotangent back to an adjoint on `a`
/// (`H × W × 3`, channel-last).
pub(crate) fn ssim_vjp(a: &Image, b: &Image, d_ssim: &[f64]) -> Vec<f64> {
    let (w, h) = (a.width, a.height);
    let n = w * h;
    let taps = gaussian_taps();
    let mut out = vec![0.0; 3 * n];
    for c in 0..3 {
        let pa = plane(&a.data, c);
        let pb = plane(&b.data, c);
        let st = channel_stats(&pa, &pb, w, h);
        let ds = &d_ssim[c * n..(c + 1) * n];
        let mut g_mu = vec![0.0; n];
        let mut g_aa = vec![0.0; n];
        let mut g_ab = vec![0.0; n];
        for i in 0..n {
            if ds[i] == 0.0 {
                continue;
            }
            let (ma, mb) = (st.mu_a[i], st.mu_b[i]);
            let a1 = 2.0 * ma * mb + C1;
            let a2 = 2.0 * st.sigma_ab[i] + C2;
            let b1 = ma * ma + mb * mb + C1;
            let b2 = st.sigma_a[i] + st.sigma_b[i] + C2;
            let s = st.ssim[i];
            let den = b1 * b2;
            // derivatives w.r.t. the windowed moments E[a], E[a²], E[ab]
            let d_mu = (2.0 * mb * a2 + a1 * (-2.0 * mb)) / den - s * (2.0 * ma * b2 + b1 * (-2.0 * ma)) / den;
            let d_aa = -s / b2;
            let d_ab = 2.0 * a1 / den;
            g_mu[i] = ds[i] * d_mu;
            g_aa[i] = ds[i] * d_aa;
            g_ab[i] = ds[i] * d_ab;
        }
        let t_mu = blur_transpose(&g_mu, w, h, &taps);
        let t_aa = blur_transpose(&g_aa, w, h, &taps);
        let t_ab = blur_transpose(&g_ab, w, h, &taps);
        for i in 0..n {
            out[i * 3 + c] = t_mu[i] + 2.0 * pa[i] * t_aa[i] + pb[i] * t_ab[i];
        }
    }
    out
}
