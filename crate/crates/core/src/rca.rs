//! Reverse classification accuracy: estimating how good a predicted
//! segmentation is without its ground truth.
//!
//! The atlas image is registered onto the `k` most similar references, its
//! predicted mask is propagated through each recovered field, and every
//! propagated mask is scored against that reference's known segmentation.
//! The per-reference scores are then averaged (or, optionally, maxed) into
//! the estimate `DSC^RCA`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::imaging::{warp_mask, DisplacementField, Image, LabelMask};
use crate::metrics::{dsc, DiceScore};
use crate::registration::{register, RegistrationConfig};
use crate::similarity::{
    top_k_select_with, SimilarityMetric, SimilarityRanking, DEFAULT_THUMB_SIZE,
};

pub const DEFAULT_K: usize = 5;

/// A reference case with known segmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceRecord {
    pub id: String,
    pub image: Image,
    pub mask: LabelMask,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReferenceDatabase {
    records: Vec<ReferenceRecord>,
}

impl ReferenceDatabase {
    /// Validates unique ids, image/mask agreement and a shared structure list.
    pub fn new(records: Vec<ReferenceRecord>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::invalid(
                    "reference database",
                    format!("duplicate id {:?}", r.id),
                ));
            }
            check_dims(r.image.dims(), r.mask.dims())?;
            if r.mask.structures() != records[0].mask.structures() {
                return Err(Error::StructureMismatch {
                    left: records[0].mask.structures().to_vec(),
                    right: r.mask.structures().to_vec(),
                });
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ReferenceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ReferenceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn structures(&self) -> Option<&[String]> {
        self.records.first().map(|r| r.mask.structures())
    }

    /// A view of the database without the record `id`, if present.
    pub fn without(&self, id: &str) -> ReferenceDatabase {
        ReferenceDatabase {
            records: self
                .records
                .iter()
                .filter(|r| r.id != id)
                .cloned()
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Mean,
    Max,
}

impl Aggregator {
    pub fn apply(self, values: &[f64]) -> f64 {
        match self {
            Aggregator::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregator::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Mean => "mean",
            Aggregator::Max => "max",
        })
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Aggregator::Mean),
            "max" => Ok(Aggregator::Max),
            other => Err(Error::invalid(
                "aggregator",
                format!("{other:?} is not one of mean, max"),
            )),
        }
    }
}

/// Knobs for one RCA estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct RcaParams {
    pub k: usize,
    pub thumb_size: usize,
    pub metric: SimilarityMetric,
    pub aggregator: Aggregator,
    pub registration: RegistrationConfig,
}

impl Default for RcaParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            thumb_size: DEFAULT_THUMB_SIZE,
            metric: SimilarityMetric::Ncc,
            aggregator: Aggregator::Mean,
            registration: RegistrationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcaEstimate {
    pub case_id: String,
    /// Dice of the propagated prediction against each reference's ground
    /// truth, sorted by reference id.
    pub per_reference: Vec<(String, DiceScore)>,
    pub aggregate: DiceScore,
    pub aggregator: Aggregator,
    pub k_used: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Registrations of one atlas onto its selected references. Registration
/// only looks at images, so the same set can score any number of predicted
/// masks for that atlas.
#[derive(Clone, Debug)]
pub struct PreparedAtlas {
    case_id: String,
    dims: (usize, usize),
    ranking: SimilarityRanking,
    /// (reference id, atlas→reference pull-back field), sorted by id.
    fields: Vec<(String, DisplacementField)>,
    warnings: Vec<String>,
}

impl PreparedAtlas {
    /// Selects references and registers the atlas onto each of them.
    ///
    /// A record whose id equals `case_id` is dropped first. References whose
    /// registration fails are skipped with a warning; if none succeed this is
    /// an error.
    pub fn new(
        case_id: &str,
        atlas: &Image,
        db: &ReferenceDatabase,
        params: &RcaParams,
    ) -> Result<Self> {
        params.registration.validate()?;
        let pool = db.without(case_id);
        if pool.is_empty() {
            return Err(Error::invalid(
                "reference database",
                "is empty once the atlas case is excluded",
            ));
        }
        let ranking = top_k_select_with(atlas, &pool, params.k, params.thumb_size, params.metric)?;
        let attempts: Vec<(String, Result<DisplacementField>)> = ranking
            .entries
            .par_iter()
            .map(|(id, _)| {
                let reference = pool.get(id).expect("ranked ids come from the pool");
                let outcome = check_dims(reference.image.dims(), atlas.dims())
                    .and_then(|_| register(atlas, &reference.image, &params.registration))
                    .map(|r| r.field);
                (id.clone(), outcome)
            })
            .collect();

        let mut fields = Vec::new();
        let mut warnings = Vec::new();
        for (id, outcome) in attempts {
            match outcome {
                Ok(field) => fields.push((id, field)),
                Err(e) => {
                    log::warn!("case {case_id}: skipping reference {id}: {e}");
                    warnings.push(format!("reference {id} skipped: {e}"));
                }
            }
        }
        if fields.is_empty() {
            return Err(Error::AllReferencesFailed {
                case_id: case_id.to_string(),
                attempted: ranking.len(),
            });
        }
        fields.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self {
            case_id: case_id.to_string(),
            dims: atlas.dims(),
            ranking,
            fields,
            warnings,
        })
    }

    pub fn case_id(&self) -> &str {
        &self.case_id
    }

    pub fn ranking(&self) -> &SimilarityRanking {
        &self.ranking
    }

    pub fn fields(&self) -> &[(String, DisplacementField)] {
        &self.fields
    }

    /// Propagates `pred` onto every registered reference and aggregates the
    /// resulting Dice scores.
    pub fn score(
        &self,
        pred: &LabelMask,
        db: &ReferenceDatabase,
        aggregator: Aggregator,
    ) -> Result<RcaEstimate> {
        check_dims(self.dims, pred.dims())?;
        let per_reference = self
            .fields
            .iter()
            .map(|(id, field)| {
                let reference = db.get(id).ok_or_else(|| {
                    Error::invalid("reference database", format!("reference {id} is missing"))
                })?;
                let propagated = warp_mask(pred, field)?;
                Ok((id.clone(), dsc(&propagated, &reference.mask)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let aggregate = aggregate_scores(&per_reference, aggregator)?;
        Ok(RcaEstimate {
            case_id: self.case_id.clone(),
            k_used: per_reference.len(),
            per_reference,
            aggregate,
            aggregator,
            warnings: self.warnings.clone(),
        })
    }
}

/// Combines per-reference scores structure by structure.
pub fn aggregate_scores(
    per_reference: &[(String, DiceScore)],
    aggregator: Aggregator,
) -> Result<DiceScore> {
    let first = per_reference
        .first()
        .ok_or_else(|| Error::invalid("rca estimate", "no per-reference scores to aggregate"))?;
    let values = first
        .1
        .structures()
        .map(|s| {
            let column: Vec<f64> = per_reference
                .iter()
                .map(|(_, d)| d.get(s).unwrap_or(0.0))
                .collect();
            (s.to_string(), aggregator.apply(&column).clamp(0.0, 1.0))
        })
        .collect();
    DiceScore::from_values(values)
}

/// Estimates the Dice score of `pred` on `atlas` without ground truth.
pub fn estimate_dsc_rca(
    case_id: &str,
    atlas: &Image,
    pred: &LabelMask,
    db: &ReferenceDatabase,
    params: &RcaParams,
) -> Result<RcaEstimate> {
    check_dims(atlas.dims(), pred.dims())?;
    if let Some(structures) = db.structures() {
        if structures != pred.structures() {
            return Err(Error::StructureMismatch {
                left: pred.structures().to_vec(),
                right: structures.to_vec(),
            });
        }
    }
    PreparedAtlas::new(case_id, atlas, db, params)?.score(pred, db, params.aggregator)
}
