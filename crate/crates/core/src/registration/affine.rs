use super::pyramid::{self, affine_from_level, affine_to_level};
use super::{converged, gradient, mean_squared, AffineResult, RegistrationConfig};
use crate::error::{check_dims, Error, Result};
use crate::imaging::{
    affine_to_field, image_center, resample_image, AffineTransform2D, Image, ScalarGrid,
};

const MIN_STEP: f64 = 1e-4;
const GROW: f64 = 1.2;
const SHRINK: f64 = 0.5;

/// Coarse-to-fine affine alignment minimizing mean squared intensity
/// difference by normalized gradient descent with an adaptive step.
///
/// Parameters are optimized in pixel units: the linear part is scaled by
/// half the image extent, so a unit step moves the image corners by about one
/// pixel whichever parameter changes. A trial step is kept only if it lowers
/// the SSD, so the returned transform is never worse than identity.
pub fn register_affine(
    moving: &Image,
    fixed: &Image,
    cfg: &RegistrationConfig,
) -> Result<AffineResult> {
    check_dims(fixed.dims(), moving.dims())?;
    cfg.validate()?;
    let levels = pyramid::build(fixed.as_grid(), moving.as_grid(), cfg.pyramid_levels);

    let identity_ssd = mean_squared(moving.as_grid(), fixed.as_grid());
    let mut current = AffineTransform2D::identity();
    let mut iterations = 0;
    for (index, level) in levels.iter().enumerate().rev() {
        let mut params = affine_to_level(&current, level.scale);
        let problem = LevelProblem::new(&level.moving, &level.fixed);
        iterations += problem.optimize(&mut params, cfg, index)?;
        let p = affine_from_level(&params, level.scale);
        current =
            AffineTransform2D::new([[p[0], p[1]], [p[2], p[3]]], [p[4], p[5]]).map_err(|e| {
                Error::Registration {
                    stage: "affine",
                    level: index,
                    reason: e.to_string(),
                }
            })?;
    }

    let (w, h) = fixed.dims();
    let warped = resample_image(moving, &affine_to_field(&current, w, h))?;
    let ssd = mean_squared(warped.as_grid(), fixed.as_grid());
    if ssd > identity_ssd {
        return Ok(AffineResult {
            transform: AffineTransform2D::identity(),
            ssd: identity_ssd,
            initial_ssd: identity_ssd,
            iterations,
        });
    }
    Ok(AffineResult {
        transform: current,
        ssd,
        initial_ssd: identity_ssd,
        iterations,
    })
}

struct LevelProblem<'a> {
    moving: &'a ScalarGrid,
    fixed: &'a ScalarGrid,
    grad_x: ScalarGrid,
    grad_y: ScalarGrid,
    center: (f64, f64),
    radius: f64,
}

impl<'a> LevelProblem<'a> {
    fn new(moving: &'a ScalarGrid, fixed: &'a ScalarGrid) -> Self {
        let (grad_x, grad_y) = gradient(moving);
        let (w, h) = fixed.dims();
        Self {
            moving,
            fixed,
            grad_x,
            grad_y,
            center: image_center(w, h),
            radius: 0.5 * w.max(h) as f64,
        }
    }

    fn to_scaled(&self, p: &[f64; 6]) -> [f64; 6] {
        let r = self.radius;
        [
            (p[0] - 1.0) * r,
            p[1] * r,
            p[2] * r,
            (p[3] - 1.0) * r,
            p[4],
            p[5],
        ]
    }

    fn unscale(&self, z: &[f64; 6]) -> [f64; 6] {
        let r = self.radius;
        [
            z[0] / r + 1.0,
            z[1] / r,
            z[2] / r,
            z[3] / r + 1.0,
            z[4],
            z[5],
        ]
    }

    /// SSD and, optionally, its gradient with respect to the raw parameters.
    fn evaluate(&self, p: &[f64; 6], with_grad: bool) -> (f64, [f64; 6]) {
        let (w, h) = self.fixed.dims();
        let (cx, cy) = self.center;
        let (max_x, max_y) = ((w - 1) as f64, (h - 1) as f64);
        let mut ssd = 0.0;
        let mut g = [0.0; 6];
        for y in 0..h {
            let py = y as f64 - cy;
            for x in 0..w {
                let px = x as f64 - cx;
                let sx = p[0] * px + p[1] * py + p[4] + cx;
                let sy = p[2] * px + p[3] * py + p[5] + cy;
                let r = self.moving.sample_bilinear(sx, sy) - self.fixed.get(x, y);
                ssd += r * r;
                if with_grad && (0.0..=max_x).contains(&sx) && (0.0..=max_y).contains(&sy) {
                    let gx = self.grad_x.sample_bilinear(sx, sy);
                    let gy = self.grad_y.sample_bilinear(sx, sy);
                    g[0] += r * gx * px;
                    g[1] += r * gx * py;
                    g[2] += r * gy * px;
                    g[3] += r * gy * py;
                    g[4] += r * gx;
                    g[5] += r * gy;
                }
            }
        }
        let n = (w * h) as f64;
        g.iter_mut().for_each(|v| *v *= 2.0 / n);
        (ssd / n, g)
    }

    fn optimize(
        &self,
        params: &mut [f64; 6],
        cfg: &RegistrationConfig,
        level: usize,
    ) -> Result<usize> {
        let fail = |reason: String| Error::Registration {
            stage: "affine",
            level,
            reason,
        };
        let mut z = self.to_scaled(params);
        let (mut best, _) = self.evaluate(params, false);
        if !best.is_finite() {
            return Err(fail("non-finite objective".into()));
        }
        let mut history = vec![best];
        let mut step = cfg.affine_step;
        let mut iterations = 0;
        while iterations < cfg.affine_iters_per_level && !converged(&history, cfg.convergence_tol) {
            iterations += 1;
            let raw = self.unscale(&z);
            let (_, g) = self.evaluate(&raw, true);
            let r = self.radius;
            let gz = [g[0] / r, g[1] / r, g[2] / r, g[3] / r, g[4], g[5]];
            if gz.iter().any(|v| !v.is_finite()) {
                return Err(fail("non-finite gradient".into()));
            }
            let norm = gz.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            let mut trial = z;
            for (t, gv) in trial.iter_mut().zip(gz) {
                *t -= step * gv / norm;
            }
            let trial_raw = self.unscale(&trial);
            let det = trial_raw[0] * trial_raw[3] - trial_raw[1] * trial_raw[2];
            let (ssd, _) = self.evaluate(&trial_raw, false);
            if det > 0.0 && ssd < best {
                z = trial;
                best = ssd;
                history.push(best);
                step *= GROW;
            } else {
                step *= SHRINK;
                if step < MIN_STEP {
                    break;
                }
            }
        }
        *params = self.unscale(&z);
        Ok(iterations)
    }
}
