//! Ranking of reference images by similarity to the atlas, used to pick the
//! `k` references worth registering.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::imaging::Image;
use crate::rca::ReferenceDatabase;

pub const DEFAULT_THUMB_SIZE: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMetric {
    /// Pearson correlation of intensities.
    #[default]
    Ncc,
    /// Negated mean squared difference, so larger is still more similar.
    Ssd,
}

impl SimilarityMetric {
    pub fn name(self) -> &'static str {
        match self {
            SimilarityMetric::Ncc => "ncc",
            SimilarityMetric::Ssd => "ssd",
        }
    }

    pub fn score(self, a: &Image, b: &Image) -> Result<f64> {
        match self {
            SimilarityMetric::Ncc => ncc(a, b),
            SimilarityMetric::Ssd => {
                check_dims(a.dims(), b.dims())?;
                Ok(-mean_squared_difference(a.intensities(), b.intensities()))
            }
        }
    }
}

pub(crate) fn mean_squared_difference(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Normalized cross-correlation. Zero-variance inputs score 0.
pub fn ncc(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    let (xs, ys) = (a.intensities(), b.intensities());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // rounding in the mean leaves a tiny variance on constant images
    let flat = |s: f64, m: f64| s <= 1e-24 * n * (1.0 + m * m);
    if flat(sxx, mx) || flat(syy, my) {
        return Ok(0.0);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRanking {
    pub entries: Vec<(String, f64)>,
    pub metric_name: String,
}

impl SimilarityRanking {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Top-`k` references by NCC on `thumb_size × thumb_size` thumbnails.
pub fn top_k_select(
    atlas: &Image,
    db: &ReferenceDatabase,
    k: usize,
    thumb_size: usize,
) -> Result<SimilarityRanking> {
    top_k_select_with(atlas, db, k, thumb_size, SimilarityMetric::Ncc)
}

pub fn top_k_select_with(
    atlas: &Image,
    db: &ReferenceDatabase,
    k: usize,
    thumb_size: usize,
    metric: SimilarityMetric,
) -> Result<SimilarityRanking> {
    if k < 1 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if thumb_size < 1 {
        return Err(Error::invalid("thumb_size", "must be at least 1"));
    }
    if db.is_empty() {
        return Err(Error::invalid("reference database", "is empty"));
    }
    let thumb = atlas.thumbnail(thumb_size, thumb_size);
    let mut entries = db
        .records()
        .par_iter()
        .map(|r| {
            let score = metric.score(&thumb, &r.image.thumbnail(thumb_size, thumb_size))?;
            Ok((r.id.clone(), score))
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    entries.truncate(k);
    Ok(SimilarityRanking {
        entries,
        metric_name: metric.name().to_string(),
    })
}
