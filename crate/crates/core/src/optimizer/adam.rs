use super::OptimizerState;
use crate::scene::Group;

/// ADAM with per-group learning rates. The position rate decays
/// exponentially from `lr_position_start` to `lr_position_end` (both times
/// `extent`) over `decay_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr_position_start: f64,
    pub lr_position_end: f64,
    pub decay_steps: usize,
    pub extent: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr_position_start: 1.6e-4,
            lr_position_end: 1.6e-6,
            decay_steps: 30_000,
            extent: 1.0,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
        }
    }
}

impl AdamConfig {
    /// Position learning rate at iteration `t ≥ 1`.
    pub fn position_lr(&self, t: usize) -> f64 {
        let frac = if self.decay_steps == 0 {
            1.0
        } else {
            ((t - 1) as f64 / self.decay_steps as f64).min(1.0)
        };
        let (a, b) = (self.lr_position_start, self.lr_position_end);
        self.extent * (a.ln() * (1.0 - frac) + b.ln() * frac).exp()
    }

    fn lr(&self, g: Group, t: usize) -> f64 {
        match g {
            Group::Position => self.position_lr(t),
            Group::Scale => self.lr_scale,
            Group::Rotation => self.lr_rotation,
            Group::Opacity => self.lr_opacity,
            Group::Color => self.lr_color,
        }
    }
}

/// Bias-corrected ADAM step for iteration `t`; updates the moments.
pub(super) fn step(state: &mut OptimizerState, g: &[f64], k: usize, t: usize, cfg: &AdamConfig) -> Vec<f64> {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    let mut out = vec![0.0; g.len()];
    for group in Group::ALL {
        let lr = cfg.lr(group, t);
        let lo = group.offset(k);
        for j in lo..lo + k * group.width() {
            let m = cfg.beta1 * state.adam_m[j] + (1.0 - cfg.beta1) * g[j];
            let v = cfg.beta2 * state.adam_v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            state.adam_m[j] = m;
            state.adam_v[j] = v;
            out[j] = -lr * (m / c1) / ((v / c2).sqrt() + cfg.epsilon);
        }
    }
    out
}
