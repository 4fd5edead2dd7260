use super::ScalarGrid;
use crate::error::{Error, Result};

/// Separable Gaussian blur with kernel radius `⌈3σ⌉` and replicated borders.
/// `sigma == 0` returns the input unchanged.
pub fn gaussian_smooth(grid: &ScalarGrid, sigma: f64) -> Result<ScalarGrid> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(
            "sigma",
            format!("{sigma} must be finite and non-negative"),
        ));
    }
    if sigma == 0.0 {
        return Ok(grid.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = grid.dims();

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                acc += wt * grid.get_clamped(x as isize + k as isize - r, y as isize);
            }
            tmp[y * w + x] = acc;
        }
    }
    let tmp = ScalarGrid::from_raw(w, h, tmp);

    // Rounding in the weights could nudge values a hair outside the input
    // range; clamp so the result is a true convex combination.
    let (lo, hi) = grid.min_max();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                acc += wt * tmp.get_clamped(x as isize, y as isize + k as isize - r);
            }
            out[y * w + x] = acc.clamp(lo, hi);
        }
    }
    Ok(ScalarGrid::from_raw(w, h, out))
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_sigma_is_identity() {
        let g = ScalarGrid::from_fn(5, 4, |x, y| (x * y) as f64);
        assert_eq!(gaussian_smooth(&g, 0.0).unwrap(), g);
    }

    #[test]
    fn negative_sigma_errors() {
        let g = ScalarGrid::filled(3, 3, 1.0);
        assert!(gaussian_smooth(&g, -0.1).is_err());
        assert!(gaussian_smooth(&g, f64::NAN).is_err());
    }

    #[test]
    fn constant_preserved() {
        let g = ScalarGrid::filled(7, 9, 0.3);
        let s = gaussian_smooth(&g, 2.3).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn impulse_matches_kernel_weight() {
        let g = ScalarGrid::from_fn(9, 9, |x, y| if x == 4 && y == 4 { 1.0 } else { 0.0 });
        let s = gaussian_smooth(&g, 1.0).unwrap();
        // Independent construction: radius 3, weights exp(-i^2/2) normalized.
        let raw: Vec<f64> = (-3i32..=3).map(|i| (-(i * i) as f64 / 2.0).exp()).collect();
        let norm: f64 = raw.iter().sum();
        let w0 = raw[3] / norm;
        let w1 = raw[4] / norm;
        assert!((s.get(4, 4) - w0 * w0).abs() < 1e-12);
        assert!((s.get(5, 4) - w1 * w0).abs() < 1e-12);
        assert!((s.get(5, 5) - w1 * w1).abs() < 1e-12);
        // Interior-supported signal keeps its mass.
        assert!((s.sum() - 1.0).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn output_within_input_range(vals in proptest::collection::vec(-5.0f64..5.0, 48), sigma in 0.0f64..4.0) {
            let g = ScalarGrid::new(8, 6, vals).unwrap();
            let (lo, hi) = g.min_max();
            let s = gaussian_smooth(&g, sigma).unwrap();
            prop_assert!(s.data().iter().all(|&v| v >= lo && v <= hi));
        }
    }
}
