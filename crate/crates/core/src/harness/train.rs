use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::RunConfig;
use super::dataset::{load_dataset, load_init};
use crate::error::{Error, Result};
use crate::image::{save_png, Image, PngDepth};
use crate::optimizer::{step, OptimizerState, RenderModel, StepDiagnostics};
use crate::renderer::rasterize;
use crate::residuals::{objective, psnr, ssim, LossSettings};
use crate::scene::{save_scene, Scene, View};

pub const METRICS_HEADER: &str = "iter,loss,psnr,ssim,gnorm,step_pre,step_post,clip_frac,eps,seconds";

/// One metrics CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub loss: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub gnorm: f64,
    pub step_pre: f64,
    pub step_post: f64,
    pub clip_frac: f64,
    pub eps: f64,
    pub seconds: f64,
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let vals = [
            self.loss,
            self.psnr,
            self.ssim,
            self.gnorm,
            self.step_pre,
            self.step_post,
            self.clip_frac,
            self.eps,
            self.seconds,
        ];
        let mut s = self.iter.to_string();
        for v in vals {
            s.push(',');
            s.push_str(&fmt(v));
        }
        s
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 10 {
            return Err(Error::InvalidInput(format!("metrics row has {} fields", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::InvalidInput(format!("bad metrics value `{s}`")))
        };
        Ok(Self {
            iter: f[0]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad iteration `{}`", f[0])))?,
            loss: num(f[1])?,
            psnr: num(f[2])?,
            ssim: num(f[3])?,
            gnorm: num(f[4])?,
            step_pre: num(f[5])?,
            step_post: num(f[6])?,
            clip_frac: num(f[7])?,
            eps: num(f[8])?,
            seconds: num(f[9])?,
        })
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::parse(path, "line 1", "unexpected metrics header"));
    }
    lines.map(MetricsRow::parse).collect()
}

/// Mean PSNR and SSIM over views.
pub fn evaluate_views(scene: &Scene, views: &[View], loss: &LossSettings) -> Result<Vec<(f64, f64)>> {
    views
        .iter()
        .map(|v| {
            let img = rasterize(scene, &v.camera, &loss.render)?.image;
            Ok((psnr(&img, &v.image)?, ssim(&img, &v.image)?))
        })
        .collect()
}

fn means(rows: &[(f64, f64)]) -> (f64, f64) {
    if rows.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = rows.len() as f64;
    (rows.iter().map(|r| r.0).sum::<f64>() / n, rows.iter().map(|r| r.1).sum::<f64>() / n)
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub scene: Scene,
    pub metrics_path: PathBuf,
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn append(path: &Path, line: &str) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

pub(crate) fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    with_workers(config.workers, || train_inner(config))?
}

fn train_inner(config: &RunConfig) -> Result<TrainOutcome> {
    let data = load_dataset(&config.data, config.holdout_every)?;
    let mut scene = load_init(config)?;
    let out = &config.out;
    create_dir(&out.join("checkpoints"))?;
    create_dir(&out.join("previews"))?;
    std::fs::write(out.join("config.txt"), config.to_text()).map_err(|e| Error::io(out, e))?;
    let metrics_path = out.join("metrics.csv");
    std::fs::write(&metrics_path, format!("{METRICS_HEADER}\n")).map_err(|e| Error::io(&metrics_path, e))?;

    let loss = config.loss();
    let model = RenderModel::new(&data.train, loss);
    let mut opt = config.optimizer_config();
    opt.adam.extent = camera_extent(&data.train);
    let mut state = OptimizerState::new(scene.dim(), config.seed);
    let start = Instant::now();
    let mut rows = Vec::new();

    let eval_row = |scene: &Scene, diag: Option<&StepDiagnostics>, iter: usize| -> Result<MetricsRow> {
        let train_loss = objective(scene, &data.train, &loss)?;
        let (p, s) = means(&evaluate_views(scene, &data.test, &loss)?);
        let nan = f64::NAN;
        Ok(MetricsRow {
            iter,
            loss: train_loss,
            psnr: p,
            ssim: s,
            gnorm: diag.map_or(nan, |d| d.grad_norm),
            step_pre: diag.map_or(nan, |d| d.step_pre),
            step_post: diag.map_or(nan, |d| d.step_post),
            clip_frac: diag.map_or(nan, |d| d.clip_frac),
            eps: diag.map_or(nan, |d| d.eps),
            seconds: if config.record_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        })
    };

    let first = eval_row(&scene, None, 0)?;
    append(&metrics_path, &first.to_csv())?;
    rows.push(first);
    let mut last_good = scene.clone();

    for t in 1..=config.iterations {
        let diag = match step(&model, &mut scene, &mut state, &opt) {
            Ok(d) if d.loss.is_finite() => d,
            Ok(_) => return abort(out, &last_good, t, "non-finite loss".into()),
            Err(e) if e.is_numerical() => return abort(out, &last_good, t, e.to_string()),
            Err(e) => return Err(e),
        };
        if scene.primitives.iter().any(|p| !p.is_finite()) {
            return abort(out, &last_good, t, "non-finite parameters".into());
        }
        last_good.clone_from(&scene);

        let at = |every: usize| every > 0 && t % every == 0;
        if at(config.eval_every) || t == config.iterations {
            let row = eval_row(&scene, Some(&diag), t)?;
            if !row.loss.is_finite() {
                return abort(out, &last_good, t, "non-finite loss".into());
            }
            append(&metrics_path, &row.to_csv())?;
            rows.push(row);
        }
        if at(config.checkpoint_every) {
            save_scene(&scene, &out.join(format!("checkpoints/iter_{t:06}.ply")))?;
        }
        if at(config.preview_every) {
            write_preview(&scene, &data.test, &data.train, &loss, &out.join(format!("previews/iter_{t:06}.png")))?;
        }
    }
    save_scene(&scene, &out.join("final.ply"))?;
    Ok(TrainOutcome {
        rows,
        scene,
        metrics_path,
    })
}

fn abort(out: &Path, last_good: &Scene, t: usize, why: String) -> Result<TrainOutcome> {
    save_scene(last_good, &out.join("last_good.ply"))?;
    Err(Error::NonFinite {
        what: format!("training at iteration {t} ({why}); last good scene kept in last_good.ply"),
    })
}

/// `1.1 ×` the largest distance of a camera center from their mean.
pub fn camera_extent(views: &[View]) -> f64 {
    let centers: Vec<[f64; 3]> = views
        .iter()
        .map(|v| {
            let r = v.camera.rotation_matrix();
            let t = v.camera.translation;
            std::array::from_fn(|i| -(r[0][i] * t[0] + r[1][i] * t[1] + r[2][i] * t[2]))
        })
        .collect();
    if centers.is_empty() {
        return 1.0;
    }
    let n = centers.len() as f64;
    let mean: [f64; 3] = std::array::from_fn(|i| centers.iter().map(|c| c[i]).sum::<f64>() / n);
    let r = centers
        .iter()
        .map(|c| ((c[0] - mean[0]).powi(2) + (c[1] - mean[1]).powi(2) + (c[2] - mean[2]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

fn write_preview(scene: &Scene, test: &[View], train: &[View], loss: &LossSettings, path: &Path) -> Result<()> {
    let Some(v) = test.first().or(train.first()) else {
        return Ok(());
    };
    let img = rasterize(scene, &v.camera, &loss.render)?.image;
    save_png(&Image::hstack(&[img, v.image.clone()])?, path, PngDepth::Eight)
}

/// Per-view and mean metrics of a scene on held-out views.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_view: Vec<(f64, f64)>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("view,psnr,ssim\n");
        for (i, (p, q)) in self.per_view.iter().enumerate() {
            let _ = writeln!(s, "{i},{p},{q}");
        }
        let _ = writeln!(s, "mean,{},{}", self.mean_psnr, self.mean_ssim);
        s
    }
}

pub fn evaluate(scene: &Scene, views: &[View], loss: &LossSettings) -> Result<EvalReport> {
    if views.is_empty() {
        return Err(Error::InvalidInput("evaluation needs at least one held-out view".into()));
    }
    let per_view = evaluate_views(scene, views, loss)?;
    let (mean_psnr, mean_ssim) = means(&per_view);
    Ok(EvalReport {
        per_view,
        mean_psnr,
        mean_ssim,
    })
}

/// Evaluates `checkpoint` (or the ground truth when unset) on the held-out
/// views of the configured dataset.
pub fn eval(config: &RunConfig) -> Result<EvalReport> {
    with_workers(config.workers, || {
        let data = load_dataset(&config.data, config.holdout_every)?;
        let path = config
            .checkpoint
            .clone()
            .unwrap_or_else(|| config.out.join("final.ply"));
        let scene = crate::scene::load_scene(&path)?;
        evaluate(&scene, &data.test, &config.loss())
    })?
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::generate;
    use crate::optimizer::OptimizerKind;

    fn config(dir: &Path) -> RunConfig {
        RunConfig {
            data: dir.join("data"),
            out: dir.join("run"),
            num_gt: 4,
            num_init: 5,
            num_views: 5,
            width: 12,
            height: 12,
            focal: 14.0,
            iterations: 6,
            eval_every: 2,
            checkpoint_every: 3,
            preview_every: 3,
            record_time: false,
            ..Default::default()
        }
    }

    #[test]
    fn metrics_rows_round_trip() {
        let r = MetricsRow {
            iter: 3,
            loss: 0.1,
            psnr: 21.5,
            ssim: 0.7,
            gnorm: 1e-3,
            step_pre: 2.0,
            step_post: f64::NAN,
            clip_frac: f64::NAN,
            eps: 1e-7,
            seconds: 0.0,
        };
        let line = r.to_csv();
        assert!(line.contains(",nan,nan,"));
        let back = MetricsRow::parse(&line).unwrap();
        assert_eq!(back.to_csv(), line);
    }

    #[test]
    fn training_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path());
        generate(&c).unwrap();
        for kind in [OptimizerKind::Tr, OptimizerKind::Adam] {
            let c = RunConfig {
                optimizer: kind,
                ..c.clone()
            };
            let out = train(&c).unwrap();
            let rows = read_metrics(&out.metrics_path).unwrap();
            assert_eq!(rows.iter().map(|r| r.iter).collect::<Vec<_>>(), vec![0, 2, 4, 6]);
            assert!(rows[0].gnorm.is_nan());
            assert_eq!(rows[1].eps.is_nan(), kind == OptimizerKind::Adam);
            assert!(c.out.join("checkpoints/iter_000003.ply").exists());
            assert!(c.out.join("previews/iter_000006.png").exists());
            let fin = crate::scene::load_scene(&c.out.join("final.ply")).unwrap();
            assert!(fin.primitives.iter().all(|p| crate::scene::ParamBounds::default().contains(p)));
        }
    }

    #[test]
    fn eval_only_run_logs_initial_row() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig {
            iterations: 0,
            ..config(dir.path())
        };
        generate(&c).unwrap();
        let out = train(&c).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].iter, 0);
    }

    #[test]
    fn eval_examples() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path());
        generate(&c).unwrap();
        let gt = crate::scene::load_scene(&c.data.join("gt.ply")).unwrap();
        let data = load_dataset(&c.data, 5).unwrap();
        let rep = evaluate(&gt, &data.test, &c.loss()).unwrap();
        assert_eq!(rep.mean_psnr, 100.0);

        let black = evaluate(&Scene::default(), &data.test, &c.loss()).unwrap();
        let img = &data.test[0].image;
        let mse = img.data.iter().map(|v| v * v).sum::<f64>() / img.data.len() as f64;
        assert!((black.per_view[0].0 - (-10.0 * mse.log10())).abs() < 1e-9);
        assert!(evaluate(&gt, &[], &c.loss()).is_err());
    }
}
