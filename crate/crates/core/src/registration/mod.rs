//! Intensity-based registration of the atlas (moving) onto a reference
//! (fixed): an affine stage followed by a demons deformable stage, both run
//! coarse-to-fine over an image pyramid with SSD as the objective.

mod affine;
mod demons;
mod pyramid;

pub use affine::register_affine;
pub use demons::{register_deformable, register_deformable_observed, DemonsIteration};

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::imaging::{AffineTransform2D, DisplacementField, Image, ScalarGrid};

/// Solver hyperparameters. Every field has a default, so partial settings
/// files deserialize cleanly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub pyramid_levels: usize,
    pub affine_iters_per_level: usize,
    /// Initial step length of the affine optimizer, in pixels of the level
    /// being optimized.
    pub affine_step: f64,
    pub demons_iters_per_level: usize,
    pub demons_sigma_fluid: f64,
    pub demons_sigma_diffusion: f64,
    pub demons_max_step: f64,
    /// Relative SSD improvement over a 5-iteration window below which a
    /// stage stops early.
    pub convergence_tol: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            affine_iters_per_level: 100,
            affine_step: 1.0,
            demons_iters_per_level: 50,
            demons_sigma_fluid: 1.0,
            demons_sigma_diffusion: 1.5,
            demons_max_step: 1.25,
            convergence_tol: 1e-5,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::invalid("registration config", reason.to_string()));
        if self.pyramid_levels < 1
            || self.affine_iters_per_level < 1
            || self.demons_iters_per_level < 1
        {
            return bad("iteration and level counts must be at least 1");
        }
        if !(self.demons_sigma_fluid >= 0.0 && self.demons_sigma_diffusion >= 0.0) {
            return bad("sigmas must be non-negative");
        }
        if !(self.demons_max_step > 0.0 && self.demons_max_step.is_finite()) {
            return bad("demons_max_step must be positive");
        }
        if !(self.affine_step > 0.0 && self.affine_step.is_finite()) {
            return bad("affine_step must be positive");
        }
        if !(self.convergence_tol > 0.0) {
            return bad("convergence_tol must be positive");
        }
        Ok(())
    }
}

/// Outcome of a full atlas→reference registration.
#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationResult {
    pub affine: AffineTransform2D,
    /// Total pull-back field (affine and deformable parts composed) on the
    /// fixed image grid.
    pub field: DisplacementField,
    /// Mean squared intensity difference after the full registration.
    pub final_ssd: f64,
    /// SSD after the affine stage alone.
    pub affine_ssd: f64,
    pub affine_iterations: usize,
    pub demons_iterations: usize,
}

/// Affine stage followed by the deformable stage.
pub fn register(
    moving: &Image,
    fixed: &Image,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    let affine = register_affine(moving, fixed, cfg)?;
    let mut result = register_deformable(moving, fixed, &affine.transform, cfg)?;
    result.affine_iterations = affine.iterations;
    Ok(result)
}

/// Affine stage output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineResult {
    pub transform: AffineTransform2D,
    pub ssd: f64,
    pub initial_ssd: f64,
    pub iterations: usize,
}

pub(crate) fn mean_squared(a: &ScalarGrid, b: &ScalarGrid) -> f64 {
    crate::similarity::mean_squared_difference(a.data(), b.data())
}

/// SSD between `fixed` and `moving` pulled back through `field`.
pub fn warped_ssd(moving: &Image, fixed: &Image, field: &DisplacementField) -> Result<f64> {
    check_dims(fixed.dims(), moving.dims())?;
    let warped = crate::imaging::resample_image(moving, field)?;
    Ok(mean_squared(warped.as_grid(), fixed.as_grid()))
}

/// Central-difference gradient with replicated borders.
pub(crate) fn gradient(grid: &ScalarGrid) -> (ScalarGrid, ScalarGrid) {
    let (w, h) = grid.dims();
    let mut gx = Vec::with_capacity(w * h);
    let mut gy = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            gx.push(0.5 * (grid.get_clamped(x + 1, y) - grid.get_clamped(x - 1, y)));
            gy.push(0.5 * (grid.get_clamped(x, y + 1) - grid.get_clamped(x, y - 1)));
        }
    }
    (
        ScalarGrid::from_raw(w, h, gx),
        ScalarGrid::from_raw(w, h, gy),
    )
}

/// Early-exit rule shared by both stages: stop once the best SSD improved by
/// less than `tol` (relative) over the last `WINDOW` recorded values.
pub(crate) const WINDOW: usize = 5;

pub(crate) fn converged(history: &[f64], tol: f64) -> bool {
    let n = history.len();
    if n == 0 {
        return false;
    }
    if history[n - 1] == 0.0 {
        return true;
    }
    if n <= WINDOW {
        return false;
    }
    let old = history[n - 1 - WINDOW];
    old > 0.0 && (old - history[n - 1]) / old < tol
}
