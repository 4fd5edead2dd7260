use crate::imaging::{AffineTransform2D, DisplacementField, ScalarGrid};

const MIN_LEVEL_SIZE: usize = 8;

/// One resolution level. `scale` is the full-resolution size divided by this
/// level's size, per axis.
pub(crate) struct Level {
    pub fixed: ScalarGrid,
    pub moving: ScalarGrid,
    pub scale: (f64, f64),
}

/// Builds up to `levels` levels, finest first. Halving stops before any side
/// drops under `MIN_LEVEL_SIZE`.
pub(crate) fn build(fixed: &ScalarGrid, moving: &ScalarGrid, levels: usize) -> Vec<Level> {
    let (w, h) = fixed.dims();
    let mut out = vec![Level {
        fixed: fixed.clone(),
        moving: moving.clone(),
        scale: (1.0, 1.0),
    }];
    let (mut cw, mut ch) = (w, h);
    while out.len() < levels {
        let (nw, nh) = (cw.div_ceil(2), ch.div_ceil(2));
        if nw < MIN_LEVEL_SIZE || nh < MIN_LEVEL_SIZE {
            break;
        }
        (cw, ch) = (nw, nh);
        out.push(Level {
            fixed: fixed.box_downsample(cw, ch),
            moving: moving.box_downsample(cw, ch),
            scale: (w as f64 / cw as f64, h as f64 / ch as f64),
        });
    }
    out
}

/// Re-expresses a full-resolution affine map in the centered pixel
/// coordinates of a level with the given scale.
pub(crate) fn affine_to_level(t: &AffineTransform2D, (sx, sy): (f64, f64)) -> [f64; 6] {
    let m = t.matrix();
    let b = t.translation();
    [
        m[0][0],
        m[0][1] * sy / sx,
        m[1][0] * sx / sy,
        m[1][1],
        b[0] / sx,
        b[1] / sy,
    ]
}

pub(crate) fn affine_from_level(p: &[f64; 6], (sx, sy): (f64, f64)) -> [f64; 6] {
    [
        p[0],
        p[1] * sx / sy,
        p[2] * sy / sx,
        p[3],
        p[4] * sx,
        p[5] * sy,
    ]
}

/// Bilinear upsampling of a displacement field onto a finer grid; vectors
/// are rescaled by the size ratio.
pub(crate) fn upsample_field(
    field: &DisplacementField,
    width: usize,
    height: usize,
) -> DisplacementField {
    let (cw, chh) = field.dims();
    let rx = width as f64 / cw as f64;
    let ry = height as f64 / chh as f64;
    let mut dx = Vec::with_capacity(width * height);
    let mut dy = Vec::with_capacity(width * height);
    for y in 0..height {
        let cy = (y as f64 + 0.5) / ry - 0.5;
        for x in 0..width {
            let cx = (x as f64 + 0.5) / rx - 0.5;
            let [u, v] = field.sample_bilinear(cx, cy);
            dx.push(u * rx);
            dy.push(v * ry);
        }
    }
    DisplacementField::from_components(
        ScalarGrid::from_raw(width, height, dx),
        ScalarGrid::from_raw(width, height, dy),
    )
    .expect("same dimensions")
}
