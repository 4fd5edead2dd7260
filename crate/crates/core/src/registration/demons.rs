use super::pyramid::{self, affine_to_level, upsample_field};
use super::{converged, gradient, mean_squared, RegistrationConfig, RegistrationResult};
use crate::error::{check_dims, Error, Result};
use crate::imaging::{
    affine_to_field, gaussian_smooth, image_center, resample_image, AffineTransform2D,
    DisplacementField, Image, ScalarGrid,
};

/// Per-iteration diagnostics handed to an observer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DemonsIteration {
    /// Pyramid level, 0 being full resolution.
    pub level: usize,
    pub iteration: usize,
    /// SSD of the field before this iteration's update.
    pub ssd: f64,
    /// Largest update vector length after clamping and fluid smoothing.
    pub max_update: f64,
}

/// Demons refinement on top of an affine initialization.
pub fn register_deformable(
    moving: &Image,
    fixed: &Image,
    init: &AffineTransform2D,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    register_deformable_observed(moving, fixed, init, cfg, |_| {})
}

/// Same as [`register_deformable`], calling `observer` after every update.
///
/// The deformable part `u` lives on the fixed grid and is applied before the
/// affine map, so the moving image is sampled at `A(x + u(x))`. Each
/// iteration computes the Thirion force from the fixed-image gradient,
/// clamps it to `demons_max_step`, smooths it with `demons_sigma_fluid`, adds
/// it to `u` and smooths `u` with `demons_sigma_diffusion`. The best field
/// seen on each level is carried to the next one.
pub fn register_deformable_observed(
    moving: &Image,
    fixed: &Image,
    init: &AffineTransform2D,
    cfg: &RegistrationConfig,
    mut observer: impl FnMut(&DemonsIteration),
) -> Result<RegistrationResult> {
    check_dims(fixed.dims(), moving.dims())?;
    cfg.validate()?;
    let (w, h) = fixed.dims();
    let levels = pyramid::build(fixed.as_grid(), moving.as_grid(), cfg.pyramid_levels);

    let mut u: Option<DisplacementField> = None;
    let mut iterations = 0;
    for (index, level) in levels.iter().enumerate().rev() {
        let (lw, lh) = level.fixed.dims();
        let start = match u.take() {
            Some(coarse) => upsample_field(&coarse, lw, lh),
            None => DisplacementField::zeros(lw, lh),
        };
        let affine = affine_to_level(init, level.scale);
        let solver = LevelSolver::new(&level.moving, &level.fixed, affine, cfg, index);
        let (best, used) = solver.run(start, &mut observer)?;
        iterations += used;
        u = Some(best);
    }
    let u = u.expect("at least one level");

    let affine_field = affine_to_field(init, w, h);
    let affine_ssd = mean_squared(
        resample_image(moving, &affine_field)?.as_grid(),
        fixed.as_grid(),
    );
    let total = total_field(&u, &affine_to_level(init, (1.0, 1.0)));
    let final_ssd = mean_squared(resample_image(moving, &total)?.as_grid(), fixed.as_grid());

    let (field, final_ssd) = if final_ssd <= affine_ssd {
        (total, final_ssd)
    } else {
        (affine_field, affine_ssd)
    };
    Ok(RegistrationResult {
        affine: *init,
        field,
        final_ssd,
        affine_ssd,
        affine_iterations: 0,
        demons_iterations: iterations,
    })
}

/// Pull-back field of `x ↦ A(x + u(x))` on `u`'s grid.
fn total_field(u: &DisplacementField, a: &[f64; 6]) -> DisplacementField {
    let (w, h) = u.dims();
    let (cx, cy) = image_center(w, h);
    let mut dx = Vec::with_capacity(w * h);
    let mut dy = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let [ux, uy] = u.get(x, y);
            let px = x as f64 + ux - cx;
            let py = y as f64 + uy - cy;
            dx.push(a[0] * px + a[1] * py + a[4] + cx - x as f64);
            dy.push(a[2] * px + a[3] * py + a[5] + cy - y as f64);
        }
    }
    DisplacementField::from_components(
        ScalarGrid::from_raw(w, h, dx),
        ScalarGrid::from_raw(w, h, dy),
    )
    .expect("same dimensions")
}

struct LevelSolver<'a> {
    moving: &'a ScalarGrid,
    fixed: &'a ScalarGrid,
    grad_x: ScalarGrid,
    grad_y: ScalarGrid,
    affine: [f64; 6],
    cfg: &'a RegistrationConfig,
    level: usize,
}

impl<'a> LevelSolver<'a> {
    fn new(
        moving: &'a ScalarGrid,
        fixed: &'a ScalarGrid,
        affine: [f64; 6],
        cfg: &'a RegistrationConfig,
        level: usize,
    ) -> Self {
        let (grad_x, grad_y) = gradient(fixed);
        Self {
            moving,
            fixed,
            grad_x,
            grad_y,
            affine,
            cfg,
            level,
        }
    }

    fn fail(&self, reason: &str) -> Error {
        Error::Registration {
            stage: "deformable",
            level: self.level,
            reason: reason.to_string(),
        }
    }

    fn warp(&self, u: &DisplacementField) -> ScalarGrid {
        let total = total_field(u, &self.affine);
        crate::imaging::warp::resample_grid(self.moving, &total)
    }

    fn run(
        &self,
        mut u: DisplacementField,
        observer: &mut impl FnMut(&DemonsIteration),
    ) -> Result<(DisplacementField, usize)> {
        let (w, h) = self.fixed.dims();
        let max_step = self.cfg.demons_max_step;
        let mut warped = self.warp(&u);
        let mut ssd = mean_squared(&warped, self.fixed);
        let mut best = (u.clone(), ssd);
        let mut history = vec![ssd];
        let mut iterations = 0;

        while iterations < self.cfg.demons_iters_per_level
            && !converged(&history, self.cfg.convergence_tol)
        {
            let mut ux = Vec::with_capacity(w * h);
            let mut uy = Vec::with_capacity(w * h);
            for i in 0..w * h {
                let diff = self.fixed.data()[i] - warped.data()[i];
                let gx = self.grad_x.data()[i];
                let gy = self.grad_y.data()[i];
                let denom = gx * gx + gy * gy + diff * diff;
                let (mut vx, mut vy) = if denom > 1e-12 {
                    (diff * gx / denom, diff * gy / denom)
                } else {
                    (0.0, 0.0)
                };
                let len = vx.hypot(vy);
                if len > max_step {
                    vx *= max_step / len;
                    vy *= max_step / len;
                }
                ux.push(vx);
                uy.push(vy);
            }
            let sx = gaussian_smooth(&ScalarGrid::from_raw(w, h, ux), self.cfg.demons_sigma_fluid)?;
            let sy = gaussian_smooth(&ScalarGrid::from_raw(w, h, uy), self.cfg.demons_sigma_fluid)?;
            let max_update = sx
                .data()
                .iter()
                .zip(sy.data())
                .map(|(a, b)| a.hypot(*b))
                .fold(0.0, f64::max);
            if !max_update.is_finite() {
                return Err(self.fail("non-finite update"));
            }
            observer(&DemonsIteration {
                level: self.level,
                iteration: iterations,
                ssd,
                max_update,
            });

            let (cur_x, cur_y) = u.into_components();
            let acc_x = cur_x
                .data()
                .iter()
                .zip(sx.data())
                .map(|(a, b)| a + b)
                .collect();
            let acc_y = cur_y
                .data()
                .iter()
                .zip(sy.data())
                .map(|(a, b)| a + b)
                .collect();
            let acc_x = gaussian_smooth(
                &ScalarGrid::from_raw(w, h, acc_x),
                self.cfg.demons_sigma_diffusion,
            )?;
            let acc_y = gaussian_smooth(
                &ScalarGrid::from_raw(w, h, acc_y),
                self.cfg.demons_sigma_diffusion,
            )?;
            u = DisplacementField::from_components(acc_x, acc_y)?;
            iterations += 1;

            warped = self.warp(&u);
            ssd = mean_squared(&warped, self.fixed);
            if !ssd.is_finite() {
                return Err(self.fail("non-finite objective"));
            }
            if ssd < best.1 {
                best = (u.clone(), ssd);
            }
            history.push(best.1);
        }
        Ok((best.0, iterations))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomSpec, Sex};

    #[test]
    fn identical_images_exit_immediately() {
        let (img, _) = generate_phantom(&PhantomSpec::new(3, 64, Sex::M)).unwrap();
        let res = register_deformable(
            &img,
            &img,
            &AffineTransform2D::identity(),
            &RegistrationConfig::default(),
        )
        .unwrap();
        assert!(res.field.max_magnitude() <= 0.1);
        assert_eq!(res.demons_iterations, 0);
        assert_eq!(res.final_ssd, 0.0);
    }

    #[test]
    fn updates_respect_max_step() {
        let (a, _) = generate_phantom(&PhantomSpec::new(3, 64, Sex::M)).unwrap();
        let (b, _) = generate_phantom(&PhantomSpec::new(4, 64, Sex::F)).unwrap();
        let cfg = RegistrationConfig {
            demons_max_step: 0.2,
            ..RegistrationConfig::default()
        };
        let mut seen = 0;
        register_deformable_observed(&a, &b, &AffineTransform2D::identity(), &cfg, |it| {
            seen += 1;
            assert!(it.max_update <= 0.2 + 1e-12, "{it:?}");
        })
        .unwrap();
        assert!(seen > 0);
    }

    #[test]
    fn total_field_with_zero_u_is_affine_field() {
        let t = AffineTransform2D::new([[1.02, 0.05], [-0.03, 0.98]], [1.5, -0.5]).unwrap();
        let u = DisplacementField::zeros(20, 14);
        let direct = affine_to_field(&t, 20, 14);
        let via = total_field(&u, &affine_to_level(&t, (1.0, 1.0)));
        for (a, b) in direct.dx().data().iter().zip(via.dx().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
