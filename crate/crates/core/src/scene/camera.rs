use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::linalg::Mat3;

/// Pinhole camera with world-to-camera extrinsics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation as a quaternion `(w, x, y, z)`; any nonzero norm.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl Camera {
    pub fn rotation_matrix(&self) -> Mat3<f64> {
        let [w, x, y, z] = self.rotation;
        crate::scene::rotation_generic(&[x, y, z, w])
    }

    /// Camera looking from `eye` at `target`, +y of the image pointing along
    /// `-up` (image rows grow downwards).
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        focal: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let norm = |a: [f64; 3]| {
            let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            [a[0] / n, a[1] / n, a[2] / n]
        };
        let cross = |a: [f64; 3], b: [f64; 3]| {
            [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ]
        };
        let fwd = norm(sub(target, eye));
        let right = norm(cross(fwd, up));
        let down = cross(fwd, right);
        // rows of the world-to-camera matrix are the camera axes in world space
        let m = [right, down, fwd];
        let rotation = matrix_to_quat(&m);
        let rm = {
            let [w, x, y, z] = rotation;
            crate::scene::rotation_generic(&[x, y, z, w])
        };
        let translation = std::array::from_fn(|i| {
            -(rm[i][0] * eye[0] + rm[i][1] * eye[1] + rm[i][2] * eye[2])
        });
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
        }
    }

    /// Camera-space position of a world point.
    pub fn to_camera(&self, p: &[f64; 3]) -> [f64; 3] {
        let m = self.rotation_matrix();
        std::array::from_fn(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + self.translation[i])
    }
}

/// Unit quaternion `(w, x, y, z)` of a proper rotation matrix.
fn matrix_to_quat(m: &Mat3<f64>) -> [f64; 4] {
    let tr = m[0][0] + m[1][1] + m[2][2];
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (m[2][1] - m[1][2]) / s,
            (m[0][2] - m[2][0]) / s,
            (m[1][0] - m[0][1]) / s,
        ]
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
        [
            (m[2][1] - m[1][2]) / s,
            0.25 * s,
            (m[0][1] + m[1][0]) / s,
            (m[0][2] + m[2][0]) / s,
        ]
    } else if m[1][1] > m[2][2] {
        let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
        [
            (m[0][2] - m[2][0]) / s,
            (m[0][1] + m[1][0]) / s,
            0.25 * s,
            (m[1][2] + m[2][1]) / s,
        ]
    } else {
        let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
        [
            (m[1][0] - m[0][1]) / s,
            (m[0][2] + m[2][0]) / s,
            (m[1][2] + m[2][1]) / s,
            0.25 * s,
        ]
    };
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

/// A camera together with its ground-truth image.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
}

/// One line of a camera file.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRecord {
    pub id: u32,
    pub camera: Camera,
    pub image_filename: String,
}

/// Parses `id fx fy cx cy width height qw qx qy qz tx ty tz image_filename`
/// lines; `#` starts a comment.
pub fn load_cameras(path: &Path) -> Result<Vec<CameraRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cameras(&text, path)
}

pub(crate) fn parse_cameras(text: &str, path: &Path) -> Result<Vec<CameraRecord>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let loc = format!("line {}", lineno + 1);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 15 {
            return Err(Error::parse(
                path,
                loc,
                format!("expected 15 fields, found {}", fields.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            let v: f64 = fields[i].parse().map_err(|_| {
                Error::parse(path, loc.clone(), format!("field {} `{}` is not a number", i + 1, fields[i]))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(path, loc.clone(), format!("field {} is not finite", i + 1)));
            }
            Ok(v)
        };
        let int = |i: usize| -> Result<usize> {
            fields[i].parse().map_err(|_| {
                Error::parse(path, loc.clone(), format!("field {} `{}` is not an integer", i + 1, fields[i]))
            })
        };
        let id: u32 = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, loc.clone(), "camera id is not an integer"))?;
        let (fx, fy) = (num(1)?, num(2)?);
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::parse(path, loc, "focal lengths must be positive"));
        }
        let q = [num(7)?, num(8)?, num(9)?, num(10)?];
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if qn < 1e-12 {
            return Err(Error::parse(path, loc, "degenerate camera rotation"));
        }
        let camera = Camera {
            fx,
            fy,
            cx: num(3)?,
            cy: num(4)?,
            width: int(5)?,
            height: int(6)?,
            rotation: q,
            translation: [num(11)?, num(12)?, num(13)?],
        };
        out.push(CameraRecord {
            id,
            camera,
            image_filename: fields[14].to_string(),
        });
    }
    Ok(out)
}

pub fn save_cameras(path: &Path, records: &[CameraRecord]) -> Result<()> {
    let mut s = String::from("# id fx fy cx cy width height qw qx qy qz tx ty tz image_filename\n");
    for r in records {
        let c = &r.camera;
        let [qw, qx, qy, qz] = c.rotation;
        let [tx, ty, tz] = c.translation;
        let _ = writeln!(
            s,
            "{} {:?} {:?} {:?} {:?} {} {} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {}",
            r.id, c.fx, c.fy, c.cx, c.cy, c.width, c.height, qw, qx, qy, qz, tx, ty, tz, r.image_filename
        );
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Resolves an image filename relative to the camera file's directory.
pub(crate) fn resolve(camera_file: &Path, name: &str) -> PathBuf {
    camera_file
        .parent()
        .map(|d| d.join(name))
        .unwrap_or_else(|| PathBuf::from(name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn camera_file_round_trip() {
        let cam = Camera::look_at([2.0, 0.5, -1.0], [0.0; 3], [0.0, 1.0, 0.0], 30.0, 32, 24);
        let recs = vec![CameraRecord {
            id: 3,
            camera: cam,
            image_filename: "images/view_003.png".into(),
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cameras.txt");
        save_cameras(&path, &recs).unwrap();
        let back = load_cameras(&path).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn look_at_centers_target() {
        let cam = Camera::look_at([0.0, 0.3, -3.0], [0.0; 3], [0.0, 1.0, 0.0], 50.0, 64, 64);
        let pc = cam.to_camera(&[0.0; 3]);
        assert!(pc[0].abs() < 1e-12 && pc[1].abs() < 1e-12);
        assert!((pc[2] - (9.09f64).sqrt()).abs() < 1e-12);
        // world up maps to image up (negative camera y)
        let up = cam.to_camera(&[0.0, 1.0, 0.0]);
        assert!(up[1] < pc[1]);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let p = Path::new("cams.txt");
        let err = parse_cameras("# header\n1 2 3\n", p).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err =
            parse_cameras("0 -1 1 0 0 4 4 1 0 0 0 0 0 0 a.png\n", p).unwrap_err();
        assert!(err.to_string().contains("positive"));
        let ok = parse_cameras("0 1 1 0 0 4 4 2 0 0 0 0 0 0 a.png # trailing\n", p).unwrap();
        assert_eq!(ok[0].camera.rotation, [2.0, 0.0, 0.0, 0.0]);
        assert_eq!(ok[0].camera.rotation_matrix(), crate::linalg::identity());
    }
}
