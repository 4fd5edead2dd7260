//! Graded corruption of ground-truth masks, standing in for segmenters of
//! increasing quality (level 1 worst, level 12 perfect).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::seeds::derive_seed;
use crate::error::{Error, Result};
use crate::imaging::{gaussian_smooth, LabelMask, ScalarGrid};

pub const NUM_LEVELS: u8 = 12;

const MAX_EROSION: f64 = 3.56;
const MIN_JITTER: f64 = 0.2;
const MAX_JITTER: f64 = 0.3;
const JITTER_CORRELATION: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationLevel {
    pub level: u8,
    /// Boundary retreat, in pixels.
    pub erosion_radius: f64,
    /// RMS amplitude of the smooth random boundary displacement, in pixels.
    pub jitter_amplitude: f64,
    /// Per-structure chance of erasing the whole channel.
    pub drop_probability: f64,
}

impl DegradationLevel {
    /// The fixed severity schedule. Erosion and jitter fall strictly with the
    /// level; level 12 is the identity. The schedule never erases whole
    /// structures: one erased channel shifts a small group's mean Dice by
    /// several hundredths, swamping the gaps the grid is meant to resolve.
    /// Custom levels may still set `drop_probability`.
    pub fn schedule(level: u8) -> Result<Self> {
        if !(1..=NUM_LEVELS).contains(&level) {
            return Err(Error::invalid(
                "degradation level",
                format!("{level} is not in 1..={NUM_LEVELS}"),
            ));
        }
        if level == NUM_LEVELS {
            return Ok(Self {
                level,
                erosion_radius: 0.0,
                jitter_amplitude: 0.0,
                drop_probability: 0.0,
            });
        }
        let t = (NUM_LEVELS - level) as f64 / (NUM_LEVELS - 1) as f64;
        Ok(Self {
            level,
            erosion_radius: MAX_EROSION * t,
            jitter_amplitude: MIN_JITTER + (MAX_JITTER - MIN_JITTER) * t,
            drop_probability: 0.0,
        })
    }

    pub fn all() -> Vec<Self> {
        (1..=NUM_LEVELS)
            .map(|l| Self::schedule(l).expect("in range"))
            .collect()
    }

    pub fn is_identity(&self) -> bool {
        self.erosion_radius == 0.0 && self.jitter_amplitude == 0.0 && self.drop_probability == 0.0
    }
}

/// Corrupts every channel of `gt`: the whole structure may be erased, and
/// otherwise its boundary is eroded by `erosion_radius` and pushed in or out
/// by a smooth random field of RMS `jitter_amplitude`.
pub fn degrade(gt: &LabelMask, level: &DegradationLevel, seed: u64) -> LabelMask {
    if level.is_identity() {
        return gt.clone();
    }
    let (w, h) = gt.dims();
    let channels = gt
        .channels()
        .iter()
        .enumerate()
        .map(|(c, ch)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[c as u64]));
            let drop = rng.gen::<f64>() < level.drop_probability;
            let jitter = smooth_noise(w, h, &mut rng);
            if drop {
                return vec![false; w * h];
            }
            let sd = signed_distance(ch, w, h);
            sd.iter()
                .zip(jitter.data())
                .map(|(s, n)| s - level.erosion_radius + level.jitter_amplitude * n > 0.0)
                .collect()
        })
        .collect();
    LabelMask::new(w, h, gt.structures().to_vec(), channels).expect("shape preserved")
}

/// Smoothed white noise rescaled to unit RMS.
fn smooth_noise(w: usize, h: usize, rng: &mut ChaCha8Rng) -> ScalarGrid {
    let white = ScalarGrid::from_fn(w, h, |_, _| rng.gen_range(-1.0..1.0));
    let smooth = gaussian_smooth(&white, JITTER_CORRELATION).expect("positive sigma");
    let mean = smooth.sum() / (w * h) as f64;
    let rms = (smooth
        .data()
        .iter()
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / (w * h) as f64)
        .sqrt();
    if rms > 0.0 {
        smooth.map(|v| (v - mean) / rms)
    } else {
        smooth.map(|_| 0.0)
    }
}

/// Signed Euclidean distance to the boundary between pixel centers: `+d − ½`
/// inside (distance to the nearest background pixel), `−d + ½` outside. The
/// zero level set sits half way between boundary pixels.
pub(crate) fn signed_distance(mask: &[bool], w: usize, h: usize) -> Vec<f64> {
    let to_background = edt(&mask.iter().map(|&b| !b).collect::<Vec<_>>(), w, h);
    let to_foreground = edt(mask, w, h);
    mask.iter()
        .enumerate()
        .map(|(i, &inside)| {
            if inside {
                to_background[i].sqrt() - 0.5
            } else {
                0.5 - to_foreground[i].sqrt()
            }
        })
        .collect()
}

const FAR: f64 = 1e20;

/// Squared Euclidean distance from every pixel to the nearest `true` pixel
/// (Felzenszwalb-Huttenlocher separable transform). Pixels with no seed in
/// the image get a large finite value.
fn edt(seeds: &[bool], w: usize, h: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    let mut line = vec![0.0; w.max(h)];
    let mut out = vec![0.0; w.max(h)];
    for x in 0..w {
        for y in 0..h {
            line[y] = grid[y * w + x];
        }
        edt_1d(&line[..h], &mut out[..h]);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        line[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&line[..w], &mut out[..w]);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

fn edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is -inf, so this stops at k == 0
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        *dq = (diff * diff + f[p]).min(FAR);
    }
}
