//! Fixtures shared by the benchmarks.

use splat_tr::harness::check::check_problem;
use splat_tr::{Scene, View};

/// A seeded scene of `splats` Gaussians seen by `views` square views.
pub fn problem(splats: usize, size: usize, views: usize) -> (Scene, Vec<View>) {
    check_problem(0, splats, size, views).expect("fixture scene")
}
