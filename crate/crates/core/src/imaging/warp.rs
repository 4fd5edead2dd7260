use super::{AffineTransform2D, DisplacementField, Image, LabelMask, ScalarGrid};
use crate::error::{check_dims, Result};

/// Pull-back resampling with bilinear interpolation: `out(x) = img(x + d(x))`.
pub fn resample_image(img: &Image, field: &DisplacementField) -> Result<Image> {
    check_dims(img.dims(), field.dims())?;
    Ok(Image::from_grid_clipped(resample_grid(
        img.as_grid(),
        field,
    )))
}

pub(crate) fn resample_grid(grid: &ScalarGrid, field: &DisplacementField) -> ScalarGrid {
    let (w, h) = grid.dims();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let [u, v] = field.get(x, y);
            out.push(grid.sample_bilinear(x as f64 + u, y as f64 + v));
        }
    }
    ScalarGrid::from_raw(w, h, out)
}

/// Label propagation: every channel is pulled back through `field` with
/// nearest-neighbor sampling, so channels stay binary.
pub fn warp_mask(mask: &LabelMask, field: &DisplacementField) -> Result<LabelMask> {
    check_dims(mask.dims(), field.dims())?;
    let (w, h) = mask.dims();
    // Source index per output pixel is shared by all channels.
    let mut source = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let [u, v] = field.get(x, y);
            let sx = (x as f64 + u).round().clamp(0.0, (w - 1) as f64) as usize;
            let sy = (y as f64 + v).round().clamp(0.0, (h - 1) as f64) as usize;
            source.push(sy * w + sx);
        }
    }
    let channels = mask
        .channels()
        .iter()
        .map(|ch| source.iter().map(|&i| ch[i]).collect())
        .collect();
    LabelMask::new(w, h, mask.structures().to_vec(), channels)
}

/// Expresses an affine map as a displacement field over a `width × height`
/// grid, with coordinates centered on the image center.
pub fn affine_to_field(t: &AffineTransform2D, width: usize, height: usize) -> DisplacementField {
    let mut dx = Vec::with_capacity(width * height);
    let mut dy = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let [u, v] = t.displacement_at(x as f64, y as f64, width, height);
            dx.push(u);
            dy.push(v);
        }
    }
    DisplacementField::from_components(
        ScalarGrid::from_raw(width, height, dx),
        ScalarGrid::from_raw(width, height, dy),
    )
    .expect("dimensions agree by construction")
}

/// Composition of two pull-back fields. Warping by the result equals warping
/// by `inner` first and then by `outer`:
/// `result(x) = outer(x) + inner(x + outer(x))`.
pub fn compose_fields(
    outer: &DisplacementField,
    inner: &DisplacementField,
) -> Result<DisplacementField> {
    check_dims(outer.dims(), inner.dims())?;
    let (w, h) = outer.dims();
    let mut dx = Vec::with_capacity(w * h);
    let mut dy = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let [ou, ov] = outer.get(x, y);
            let [iu, iv] = inner.sample_bilinear(x as f64 + ou, y as f64 + ov);
            dx.push(ou + iu);
            dy.push(ov + iv);
        }
    }
    DisplacementField::new(w, h, dx, dy)
}
