//! Fixed-size 3×3 helpers, generic over [`Real`] so the same code runs on
//! plain floats and on dual numbers.

use crate::autodiff::Real;

pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];

#[inline]
pub fn zeros<T: Real>() -> Mat3<T> {
    [[T::zero(); 3]; 3]
}

#[inline]
pub fn identity<T: Real>() -> Mat3<T> {
    let mut m = zeros();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::one();
    }
    m
}

#[inline]
pub fn transpose<T: Real>(a: &Mat3<T>) -> Mat3<T> {
    let mut t = zeros();
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

#[inline]
pub fn matmul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut c = zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

#[inline]
pub fn mat_vec<T: Real>(a: &Mat3<T>, v: &Vec3<T>) -> Vec3<T> {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn det<T: Real>(a: &Mat3<T>) -> T {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Inverse via the adjugate. Returns `None` for a (numerically) singular matrix.
pub fn inverse(a: &Mat3<f64>) -> Option<Mat3<f64>> {
    let d = det(a);
    if !d.is_finite() || d.abs() < 1e-300 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) / d;
        }
    }
    Some(inv)
}

/// Symmetric positive definiteness by leading principal minors.
pub fn is_spd(a: &Mat3<f64>) -> bool {
    let sym = (0..3).all(|i| (0..3).all(|j| (a[i][j] - a[j][i]).abs() <= 1e-12 * (1.0 + a[i][j].abs())));
    let m1 = a[0][0];
    let m2 = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    sym && m1 > 0.0 && m2 > 0.0 && det(a) > 0.0
}

pub fn frobenius_sq(a: &Mat3<f64>) -> f64 {
    a.iter().flatten().map(|x| x * x).sum()
}

pub fn trace(a: &Mat3<f64>) -> f64 {
    a[0][0] + a[1][1] + a[2][2]
}

pub fn scale(a: &Mat3<f64>, s: f64) -> Mat3<f64> {
    let mut out = *a;
    out.iter_mut().flatten().for_each(|x| *x *= s);
    out
}

pub fn add(a: &Mat3<f64>, b: &Mat3<f64>) -> Mat3<f64> {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += b[i][j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trip() {
        let a = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let inv = inverse(&a).unwrap();
        let p = matmul(&a, &inv);
        for (i, row) in p.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((x - e).abs() < 1e-14);
            }
        }
        assert!(is_spd(&a));
        assert!(!is_spd(&[[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]));
        assert!(inverse(&zeros()).is_none());
    }
}
