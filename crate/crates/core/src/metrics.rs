//! Overlap metrics between label masks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::imaging::LabelMask;

/// Dice scores per structure, in the mask's structure order, plus their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceScore {
    per_structure: Vec<(String, f64)>,
    macro_average: f64,
}

impl DiceScore {
    /// Builds a score from per-structure values; the macro average is derived.
    pub fn from_values(per_structure: Vec<(String, f64)>) -> Result<Self> {
        if let Some((name, v)) = per_structure.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(
                "dice score",
                format!("{name}: {v} outside [0, 1]"),
            ));
        }
        let macro_average = if per_structure.is_empty() {
            0.0
        } else {
            per_structure.iter().map(|(_, v)| v).sum::<f64>() / per_structure.len() as f64
        };
        Ok(Self {
            per_structure,
            macro_average,
        })
    }

    pub fn per_structure(&self) -> &[(String, f64)] {
        &self.per_structure
    }

    pub fn get(&self, structure: &str) -> Option<f64> {
        self.per_structure
            .iter()
            .find(|(s, _)| s == structure)
            .map(|(_, v)| *v)
    }

    pub fn macro_average(&self) -> f64 {
        self.macro_average
    }

    pub fn structures(&self) -> impl Iterator<Item = &str> {
        self.per_structure.iter().map(|(s, _)| s.as_str())
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        self.per_structure.iter().cloned().collect()
    }
}

/// Dice coefficient between binary channels. Both empty counts as a perfect
/// match; exactly one empty scores zero.
pub fn dice_channel(pred: &[bool], gt: &[bool]) -> f64 {
    debug_assert_eq!(pred.len(), gt.len());
    let (mut inter, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        np += p as usize;
        ng += g as usize;
        inter += (p && g) as usize;
    }
    if np + ng == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (np + ng) as f64
    }
}

/// Per-structure Dice between a predicted and reference mask.
pub fn dsc(pred: &LabelMask, gt: &LabelMask) -> Result<DiceScore> {
    check_dims(gt.dims(), pred.dims())?;
    if pred.structures() != gt.structures() {
        return Err(Error::StructureMismatch {
            left: pred.structures().to_vec(),
            right: gt.structures().to_vec(),
        });
    }
    let values = pred
        .structures()
        .iter()
        .zip(pred.channels().iter().zip(gt.channels()))
        .map(|(name, (p, g))| (name.clone(), dice_channel(p, g)))
        .collect();
    DiceScore::from_values(values)
}
