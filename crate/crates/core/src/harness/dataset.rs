//! Synthetic multi-view datasets.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! gt.ply          ground-truth splats
//! init.ply        jittered starting point
//! cameras.txt     one camera per view, image paths relative to this file
//! images/*.png    16-bit ground-truth renders
//! ```

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::image::{load_png, save_png, PngDepth};
use crate::renderer::{rasterize, RenderSettings};
use crate::scene::{load_cameras, load_scene, save_cameras, save_scene, Camera, CameraRecord, GaussianPrimitive, Scene, View};

/// Uniform random rotation as an `(x, y, z, w)` unit quaternion.
pub fn random_quaternion<R: Rng>(rng: &mut R) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            return q.map(|v| v / n);
        }
    }
}

/// Ground-truth splat: mean uniform in `[-0.5, 0.5]³`, scales log-uniform
/// in `[0.02, 0.2]`, uniform rotation, opacity uniform in `[0.3, 0.9]`,
/// color uniform in `[0.1, 1]`.
pub fn random_splat<R: Rng>(rng: &mut R) -> GaussianPrimitive {
    let (lo, hi) = (0.02f64.ln(), 0.2f64.ln());
    GaussianPrimitive {
        mean: std::array::from_fn(|_| rng.random_range(-0.5..0.5)),
        scale: std::array::from_fn(|_| rng.random_range(lo..hi).exp()),
        rotation: random_quaternion(rng),
        opacity: rng.random_range(0.3..0.9),
        color: std::array::from_fn(|_| rng.random_range(0.1..1.0)),
    }
}

/// `count` cameras on a ring around the origin, alternating slightly above
/// and below the equator.
pub fn ring_cameras(count: usize, radius: f64, focal: f64, width: usize, height: usize) -> Vec<Camera> {
    (0..count)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / count as f64;
            let y = if i % 2 == 0 { 0.3 } else { -0.3 } * radius;
            let eye = [radius * th.cos(), y, radius * th.sin()];
            Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], focal, width, height)
        })
        .collect()
}

/// SfM-like start: ground-truth means (cycled, then resampled) plus
/// Gaussian noise, isotropic scales, identity rotations, `α = 0.5`, gray.
pub fn init_scene<R: Rng>(rng: &mut R, gt: &Scene, count: usize, sigma: f64, scale: f64) -> Result<Scene> {
    if gt.is_empty() {
        return Err(Error::InvalidInput("cannot initialize from an empty scene".into()));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let prims = (0..count)
        .map(|i| {
            let src = if i < gt.len() { i } else { rng.random_range(0..gt.len()) };
            let m = gt.primitives[src].mean;
            GaussianPrimitive {
                mean: std::array::from_fn(|c| m[c] + noise.sample(rng)),
                scale: [scale; 3],
                rotation: [0.0, 0.0, 0.0, 1.0],
                opacity: 0.5,
                color: [0.5; 3],
            }
        })
        .collect();
    Ok(Scene::new(prims))
}

pub fn generate(config: &RunConfig) -> Result<()> {
    let dir = &config.data;
    std::fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gt = Scene::new((0..config.num_gt).map(|_| random_splat(&mut rng)).collect());
    let init = init_scene(&mut rng, &gt, config.num_init, config.init_sigma, config.init_scale)?;
    let cams = ring_cameras(config.num_views, config.camera_radius, config.focal, config.width, config.height);
    let settings = RenderSettings::default();
    let mut records = Vec::with_capacity(cams.len());
    for (i, cam) in cams.iter().enumerate() {
        let name = format!("images/view_{i:03}.png");
        let img = rasterize(&gt, cam, &settings)?.image;
        save_png(&img, &dir.join(&name), PngDepth::Sixteen)?;
        records.push(CameraRecord {
            id: i as u32,
            camera: *cam,
            image_filename: name,
        });
    }
    save_scene(&gt, &dir.join("gt.ply"))?;
    save_scene(&init, &dir.join("init.ply"))?;
    save_cameras(&dir.join("cameras.txt"), &records)
}

/// Views of a dataset split into training and held-out sets; every
/// `holdout_every`-th camera (1-based) is held out.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<View>,
    pub test: Vec<View>,
}

pub fn load_views(dir: &Path) -> Result<Vec<View>> {
    let cam_file = dir.join("cameras.txt");
    let records = load_cameras(&cam_file)?;
    records
        .iter()
        .map(|r| {
            let path = crate::scene::resolve(&cam_file, &r.image_filename);
            let image = load_png(&path)?;
            if image.width != r.camera.width || image.height != r.camera.height {
                return Err(Error::Image {
                    path,
                    message: format!(
                        "image is {}x{}, camera expects {}x{}",
                        image.width, image.height, r.camera.width, r.camera.height
                    ),
                });
            }
            Ok(View {
                camera: r.camera,
                image,
            })
        })
        .collect()
}

pub fn load_dataset(dir: &Path, holdout_every: usize) -> Result<Dataset> {
    let views = load_views(dir)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, v) in views.into_iter().enumerate() {
        if holdout_every > 0 && (i + 1) % holdout_every == 0 {
            test.push(v);
        } else {
            train.push(v);
        }
    }
    if train.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no training views", dir.display())));
    }
    Ok(Dataset { train, test })
}

pub fn load_init(config: &RunConfig) -> Result<Scene> {
    load_scene(&config.init_path())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residuals::psnr;

    fn small(dir: &Path) -> RunConfig {
        RunConfig {
            data: dir.to_path_buf(),
            num_gt: 6,
            num_init: 8,
            num_views: 5,
            width: 16,
            height: 12,
            focal: 18.0,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic_and_self_consistent() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate(&small(a.path())).unwrap();
        generate(&small(b.path())).unwrap();
        for f in ["gt.ply", "init.ply", "cameras.txt", "images/view_003.png"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let ds = load_dataset(a.path(), 5).unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (4, 1));
        let gt = load_scene(&a.path().join("gt.ply")).unwrap();
        assert_eq!(gt.len(), 6);
        assert_eq!(load_scene(&a.path().join("init.ply")).unwrap().len(), 8);
        for v in ds.train.iter().chain(&ds.test) {
            let img = rasterize(&gt, &v.camera, &RenderSettings::default()).unwrap().image;
            assert_eq!(psnr(&img, &v.image).unwrap(), 100.0);
        }
    }

    #[test]
    fn single_splat_on_axis_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = random_splat(&mut rng);
        p.mean = [0.0; 3];
        let cam = Camera::look_at([0.0, 0.0, -3.0], [0.0; 3], [0.0, 1.0, 0.0], 30.0, 21, 21);
        let img = rasterize(&Scene::new(vec![p]), &cam, &RenderSettings::default()).unwrap().image;
        let (mut sx, mut sy, mut s) = (0.0, 0.0, 0.0);
        for y in 0..21 {
            for x in 0..21 {
                let v = img.get(x, y, 0);
                sx += v * (x as f64 + 0.5);
                sy += v * (y as f64 + 0.5);
                s += v;
            }
        }
        assert!(s > 0.0);
        assert!((sx / s - 10.5).abs() < 0.5 && (sy / s - 10.5).abs() < 0.5);
    }

    #[test]
    fn missing_dataset_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(&dir.path().join("nope"), 5), Err(Error::Io { .. })));
    }
}
