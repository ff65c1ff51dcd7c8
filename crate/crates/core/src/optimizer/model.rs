use crate::error::{Error, Result};
use crate::residuals::{self, LossSettings};
use crate::scene::{Scene, View};

/// A least-squares problem split into per-view residual blocks `fᵢ(x)`.
///
/// The optimizer only needs products with the Jacobian, never `J` itself.
pub trait ResidualModel: Sync {
    fn num_views(&self) -> usize;

    /// Total residual count `m` over all views.
    fn residual_count(&self) -> usize;

    /// `Jᵢᵀfᵢ` and `‖fᵢ‖²`.
    fn view_gradient(&self, scene: &Scene, view: usize) -> Result<(Vec<f64>, f64)>;

    /// `Jᵢ v`.
    fn view_jvp(&self, scene: &Scene, view: usize, v: &[f64]) -> Result<Vec<f64>>;

    /// `Jᵢᵀ u`.
    fn view_vjp(&self, scene: &Scene, view: usize, u: &[f64]) -> Result<Vec<f64>>;

    /// `JᵢᵀJᵢ z`.
    fn view_gauss_newton(&self, scene: &Scene, view: usize, z: &[f64]) -> Result<Vec<f64>> {
        let u = self.view_jvp(scene, view, z)?;
        self.view_vjp(scene, view, &u)
    }
}

/// Residuals of rendered images against ground-truth views.
#[derive(Clone, Copy, Debug)]
pub struct RenderModel<'a> {
    pub views: &'a [View],
    pub loss: LossSettings,
}

impl<'a> RenderModel<'a> {
    pub fn new(views: &'a [View], loss: LossSettings) -> Self {
        Self { views, loss }
    }
}

impl ResidualModel for RenderModel<'_> {
    fn num_views(&self) -> usize {
        self.views.len()
    }

    fn residual_count(&self) -> usize {
        residuals::residual_count(self.views)
    }

    fn view_gradient(&self, scene: &Scene, view: usize) -> Result<(Vec<f64>, f64)> {
        residuals::view_gradient(scene, &self.views[view], &self.loss)
    }

    fn view_jvp(&self, scene: &Scene, view: usize, v: &[f64]) -> Result<Vec<f64>> {
        Ok(residuals::view_jvp(scene, &self.views[view], v, &self.loss)?.1)
    }

    fn view_vjp(&self, scene: &Scene, view: usize, u: &[f64]) -> Result<Vec<f64>> {
        residuals::view_vjp(scene, &self.views[view], u, &self.loss)
    }
}

/// Affine residuals `fᵢ(x) = Aᵢx − bᵢ` over the packed scene vector, for
/// exercising the optimizer on problems with known solutions.
#[derive(Clone, Debug, Default)]
pub struct LinearModel {
    /// Per view: rows of `Aᵢ` and the offsets `bᵢ`.
    pub blocks: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
}

impl LinearModel {
    fn rows(&self, view: usize) -> &[Vec<f64>] {
        &self.blocks[view].0
    }

    fn check(&self, len: usize, dim: usize) -> Result<()> {
        if len != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: len });
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ResidualModel for LinearModel {
    fn num_views(&self) -> usize {
        self.blocks.len()
    }

    fn residual_count(&self) -> usize {
        self.blocks.iter().map(|(a, _)| a.len()).sum()
    }

    fn view_gradient(&self, scene: &Scene, view: usize) -> Result<(Vec<f64>, f64)> {
        let x = scene.pack();
        let (a, b) = &self.blocks[view];
        let f: Vec<f64> = a.iter().zip(b).map(|(row, bi)| dot(row, &x) - bi).collect();
        let g = self.view_vjp(scene, view, &f)?;
        Ok((g, dot(&f, &f)))
    }

    fn view_jvp(&self, scene: &Scene, view: usize, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v.len(), scene.dim())?;
        Ok(self.rows(view).iter().map(|row| dot(row, v)).collect())
    }

    fn view_vjp(&self, scene: &Scene, view: usize, u: &[f64]) -> Result<Vec<f64>> {
        let rows = self.rows(view);
        self.check(u.len(), rows.len())?;
        let mut out = vec![0.0; scene.dim()];
        for (row, ui) in rows.iter().zip(u) {
            self.check(row.len(), scene.dim())?;
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * ui;
            }
        }
        Ok(out)
    }
}
