//! Images, label masks and transforms, plus the sampling primitives shared by
//! registration and label propagation.
//!
//! All geometry follows the pull-back convention: a displacement field `d`
//! warps an input `I` into `O(x) = I(x + d(x))`. Coordinates are pixel
//! indices, `x` along a row and `y` down the columns, stored row-major.

mod io;
mod smooth;
pub(crate) mod warp;

pub use io::{
    load_image, load_label_values, load_mask_channel, read_pgm, save_image, save_mask_channel,
    write_pgm,
};
pub use smooth::gaussian_smooth;
pub use warp::{affine_to_field, compose_fields, resample_image, warp_mask};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense row-major grid of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("grid", "width and height must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::invalid(
                "grid",
                format!("expected {} values, got {}", width * height, data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "grid",
                format!("non-finite value at index {i}"),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && value.is_finite());
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    // Skips validation; used internally where finiteness is already known.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Value at integer coordinates, replicating the border outside the grid.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    /// Bilinear interpolation at a real-valued location. Locations outside the
    /// grid are clamped onto the border first.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as usize;
        let y0 = y0 as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarGrid {
        ScalarGrid::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Box-filter downsampling to an arbitrary target size. Each output pixel
    /// is the area-weighted mean of the input region it covers.
    pub fn box_downsample(&self, out_w: usize, out_h: usize) -> ScalarGrid {
        assert!(out_w > 0 && out_h > 0);
        let sx = self.width as f64 / out_w as f64;
        let sy = self.height as f64 / out_h as f64;
        let weights_x = axis_weights(self.width, out_w, sx);
        let weights_y = axis_weights(self.height, out_h, sy);
        let mut out = Vec::with_capacity(out_w * out_h);
        for wy in &weights_y {
            for wx in &weights_x {
                let mut acc = 0.0;
                let mut total = 0.0;
                for &(iy, ay) in wy {
                    for &(ix, ax) in wx {
                        acc += self.get(ix, iy) * ax * ay;
                        total += ax * ay;
                    }
                }
                out.push(acc / total);
            }
        }
        ScalarGrid::from_raw(out_w, out_h, out)
    }
}

// Overlap of output cell `o` ([o*s, (o+1)*s)) with each input pixel.
fn axis_weights(len: usize, out_len: usize, scale: f64) -> Vec<Vec<(usize, f64)>> {
    (0..out_len)
        .map(|o| {
            let start = o as f64 * scale;
            let end = start + scale;
            let first = start.floor() as usize;
            let last = (end.ceil() as usize).min(len);
            (first..last)
                .filter_map(|i| {
                    let overlap = (end.min(i as f64 + 1.0) - start.max(i as f64)).max(0.0);
                    (overlap > 1e-12).then_some((i, overlap))
                })
                .collect()
        })
        .collect()
}

/// A 2D grayscale image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    grid: ScalarGrid,
}

impl Image {
    pub fn new(width: usize, height: usize, intensities: Vec<f64>) -> Result<Self> {
        let grid = ScalarGrid::new(width, height, intensities)?;
        Self::from_grid(grid)
    }

    pub fn from_grid(grid: ScalarGrid) -> Result<Self> {
        if let Some(i) = grid.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(
                "image",
                format!("intensity {} at index {i} outside [0, 1]", grid.data[i]),
            ));
        }
        Ok(Self { grid })
    }

    /// Builds an image from arbitrary values by clipping them into `[0, 1]`.
    pub fn from_grid_clipped(grid: ScalarGrid) -> Self {
        Self {
            grid: grid.map(|v| v.clamp(0.0, 1.0)),
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        Self::from_grid(ScalarGrid::from_fn(width, height, f))
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.grid.get(x, y)
    }

    pub fn intensities(&self) -> &[f64] {
        &self.grid.data
    }

    pub fn as_grid(&self) -> &ScalarGrid {
        &self.grid
    }

    pub fn into_grid(self) -> ScalarGrid {
        self.grid
    }

    /// Box-filtered thumbnail, used for cheap similarity ranking.
    pub fn thumbnail(&self, width: usize, height: usize) -> Image {
        Image {
            grid: self.grid.box_downsample(width, height),
        }
    }
}

/// Multi-structure binary segmentation. Channels are independent and may
/// overlap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    structures: Vec<String>,
    channels: Vec<Vec<bool>>,
}

impl LabelMask {
    pub fn new(
        width: usize,
        height: usize,
        structures: Vec<String>,
        channels: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(
                "label mask",
                "width and height must be positive",
            ));
        }
        if structures.len() != channels.len() {
            return Err(Error::invalid(
                "label mask",
                format!(
                    "{} structures but {} channels",
                    structures.len(),
                    channels.len()
                ),
            ));
        }
        for (i, name) in structures.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::invalid("label mask", "empty structure name"));
            }
            if structures[..i].contains(name) {
                return Err(Error::invalid(
                    "label mask",
                    format!("duplicate structure name {name:?}"),
                ));
            }
        }
        for (name, ch) in structures.iter().zip(&channels) {
            if ch.len() != width * height {
                return Err(Error::invalid(
                    "label mask",
                    format!(
                        "channel {name:?} has {} pixels, expected {}",
                        ch.len(),
                        width * height
                    ),
                ));
            }
        }
        Ok(Self {
            width,
            height,
            structures,
            channels,
        })
    }

    /// A mask with every structure empty.
    pub fn empty(width: usize, height: usize, structures: Vec<String>) -> Result<Self> {
        let channels = vec![vec![false; width * height]; structures.len()];
        Self::new(width, height, structures, channels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn structures(&self) -> &[String] {
        &self.structures
    }

    pub fn channels(&self) -> &[Vec<bool>] {
        &self.channels
    }

    pub fn channel(&self, structure: &str) -> Option<&[bool]> {
        self.structures
            .iter()
            .position(|s| s == structure)
            .map(|i| self.channels[i].as_slice())
    }

    pub fn get(&self, channel: usize, x: usize, y: usize) -> bool {
        self.channels[channel][y * self.width + x]
    }

    pub fn count(&self, channel: usize) -> usize {
        self.channels[channel].iter().filter(|&&b| b).count()
    }

    /// Replaces the pixels of one channel, keeping everything else.
    pub fn with_channel(mut self, channel: usize, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() != self.width * self.height {
            return Err(Error::invalid("label mask", "channel length mismatch"));
        }
        self.channels[channel] = pixels;
        Ok(self)
    }
}

/// Orientation-preserving 2D affine map `p ↦ A·p + t`, expressed in
/// coordinates centered on the image center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform2D {
    matrix: [[f64; 2]; 2],
    translation: [f64; 2],
}

impl AffineTransform2D {
    pub fn new(matrix: [[f64; 2]; 2], translation: [f64; 2]) -> Result<Self> {
        let all = [
            matrix[0][0],
            matrix[0][1],
            matrix[1][0],
            matrix[1][1],
            translation[0],
            translation[1],
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("affine transform", "non-finite parameter"));
        }
        let det = matrix[0][0] * matrix[1][1] - matrix[0][1] * matrix[1][0];
        if det <= 0.0 {
            return Err(Error::invalid(
                "affine transform",
                format!("determinant {det} is not positive"),
            ));
        }
        Ok(Self {
            matrix,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            matrix: [[1.0, 0.0], [0.0, 1.0]],
            translation: [0.0, 0.0],
        }
    }

    pub fn from_translation(tx: f64, ty: f64) -> Result<Self> {
        Self::new([[1.0, 0.0], [0.0, 1.0]], [tx, ty])
    }

    /// Rotation by `degrees` about the image center (counter-clockwise in
    /// `(x, y)` coordinates).
    pub fn from_rotation_degrees(degrees: f64) -> Result<Self> {
        let (s, c) = degrees.to_radians().sin_cos();
        Self::new([[c, -s], [s, c]], [0.0, 0.0])
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        self.matrix
    }

    pub fn translation(&self) -> [f64; 2] {
        self.translation
    }

    pub fn determinant(&self) -> f64 {
        self.matrix[0][0] * self.matrix[1][1] - self.matrix[0][1] * self.matrix[1][0]
    }

    /// Rotation angle of the closest rotation to the linear part, in degrees.
    pub fn rotation_degrees(&self) -> f64 {
        let m = self.matrix;
        (m[1][0] - m[0][1]).atan2(m[0][0] + m[1][1]).to_degrees()
    }

    /// Applies the map to a centered coordinate.
    #[inline]
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let m = self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + self.translation[0],
            m[1][0] * p[0] + m[1][1] * p[1] + self.translation[1],
        ]
    }

    /// Displacement at pixel `(x, y)` of a `width × height` image.
    #[inline]
    pub fn displacement_at(&self, x: f64, y: f64, width: usize, height: usize) -> [f64; 2] {
        let (cx, cy) = image_center(width, height);
        let p = self.apply([x - cx, y - cy]);
        [p[0] + cx - x, p[1] + cy - y]
    }
}

impl Default for AffineTransform2D {
    fn default() -> Self {
        Self::identity()
    }
}

pub(crate) fn image_center(width: usize, height: usize) -> (f64, f64) {
    ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

/// Dense per-pixel displacement, in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    dx: ScalarGrid,
    dy: ScalarGrid,
}

impl DisplacementField {
    pub fn new(width: usize, height: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        let dx = ScalarGrid::new(width, height, dx)?;
        let dy = ScalarGrid::new(width, height, dy)?;
        Ok(Self { dx, dy })
    }

    pub fn from_components(dx: ScalarGrid, dy: ScalarGrid) -> Result<Self> {
        crate::error::check_dims(dx.dims(), dy.dims())?;
        Ok(Self { dx, dy })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            dx: ScalarGrid::filled(width, height, 0.0),
            dy: ScalarGrid::filled(width, height, 0.0),
        }
    }

    pub fn uniform(width: usize, height: usize, dx: f64, dy: f64) -> Self {
        Self {
            dx: ScalarGrid::filled(width, height, dx),
            dy: ScalarGrid::filled(width, height, dy),
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 2],
    ) -> Result<Self> {
        let mut dx = Vec::with_capacity(width * height);
        let mut dy = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let [u, v] = f(x, y);
                dx.push(u);
                dy.push(v);
            }
        }
        Self::new(width, height, dx, dy)
    }

    pub fn width(&self) -> usize {
        self.dx.width
    }

    pub fn height(&self) -> usize {
        self.dx.height
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dx.dims()
    }

    pub fn dx(&self) -> &ScalarGrid {
        &self.dx
    }

    pub fn dy(&self) -> &ScalarGrid {
        &self.dy
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        [self.dx.get(x, y), self.dy.get(x, y)]
    }

    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 2] {
        [self.dx.sample_bilinear(x, y), self.dy.sample_bilinear(x, y)]
    }

    pub fn is_zero(&self) -> bool {
        self.dx.data.iter().chain(&self.dy.data).all(|&v| v == 0.0)
    }

    /// Largest displacement magnitude over the field.
    pub fn max_magnitude(&self) -> f64 {
        self.dx
            .data
            .iter()
            .zip(&self.dy.data)
            .map(|(u, v)| u.hypot(*v))
            .fold(0.0, f64::max)
    }

    pub fn into_components(self) -> (ScalarGrid, ScalarGrid) {
        (self.dx, self.dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range() {
        assert!(Image::new(2, 1, vec![0.2, 1.2]).is_err());
        assert!(Image::new(2, 1, vec![0.2, f64::NAN]).is_err());
        assert!(Image::new(2, 2, vec![0.2]).is_err());
        assert!(Image::new(2, 1, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn mask_rejects_bad_structures() {
        let ch = vec![false; 4];
        assert!(LabelMask::new(
            2,
            2,
            vec!["a".into(), "a".into()],
            vec![ch.clone(), ch.clone()]
        )
        .is_err());
        assert!(LabelMask::new(2, 2, vec!["".into()], vec![ch.clone()]).is_err());
        assert!(LabelMask::new(2, 2, vec!["a".into()], vec![vec![false; 3]]).is_err());
        assert!(LabelMask::new(2, 2, vec!["a".into(), "b".into()], vec![ch.clone(), ch]).is_ok());
    }

    #[test]
    fn affine_rejects_reflection_and_nan() {
        assert!(AffineTransform2D::new([[-1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]).is_err());
        assert!(AffineTransform2D::new([[1.0, 0.0], [0.0, 1.0]], [f64::INFINITY, 0.0]).is_err());
        let r = AffineTransform2D::from_rotation_degrees(5.0).unwrap();
        assert!((r.rotation_degrees() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn field_rejects_non_finite() {
        assert!(DisplacementField::new(1, 1, vec![f64::NAN], vec![0.0]).is_err());
        assert!(DisplacementField::zeros(3, 2).is_zero());
    }

    #[test]
    fn box_downsample_averages_blocks() {
        let g = ScalarGrid::from_fn(4, 4, |x, y| (x + 4 * y) as f64);
        let d = g.box_downsample(2, 2);
        // mean of {0,1,4,5}
        assert!((d.get(0, 0) - 2.5).abs() < 1e-12);
        assert!((d.get(1, 1) - 12.5).abs() < 1e-12);
        let same = g.box_downsample(4, 4);
        assert_eq!(same, g);
    }

    #[test]
    fn bilinear_clamps_outside() {
        let g = ScalarGrid::from_fn(3, 1, |x, _| x as f64);
        assert_eq!(g.sample_bilinear(-5.0, 0.0), 0.0);
        assert_eq!(g.sample_bilinear(7.0, 0.0), 2.0);
        assert!((g.sample_bilinear(0.25, 0.0) - 0.25).abs() < 1e-15);
    }
}
