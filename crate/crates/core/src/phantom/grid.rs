//! The fictitious-model grid: every pairing of a male-group segmenter level
//! with a female-group level, scored with true and RCA-estimated gaps.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::degrade::{degrade, DegradationLevel, NUM_LEVELS};
use super::generate::{generate_phantom, PhantomSpec, Sex, DEFAULT_NOISE};
use super::seeds::derive_seed;
use crate::audit::{audit, linear_fit, pearson, sign_agreement, AuditCase};
use crate::error::Result;
use crate::imaging::{Image, LabelMask};
use crate::metrics::dsc;
use crate::rca::{
    aggregate_scores, Aggregator, PreparedAtlas, RcaParams, ReferenceDatabase, ReferenceRecord,
};

pub const SEX_ATTRIBUTE: &str = "sex";
/// Exclusion thresholds on `|ΔDSC|` used when reporting sign agreement.
pub const REPORT_THRESHOLDS: [f64; 3] = [0.0, 0.01, 0.02];

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCase {
    pub id: String,
    pub sex: Sex,
    pub image: Image,
    pub mask: LabelMask,
}

impl PhantomCase {
    pub fn attributes(&self) -> BTreeMap<String, String> {
        [(SEX_ATTRIBUTE.to_string(), self.sex.to_string())].into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_test: usize,
    pub n_reference: usize,
    pub size: usize,
    pub noise_level: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 2023,
            n_test: 40,
            n_reference: 20,
            size: 64,
            noise_level: DEFAULT_NOISE,
        }
    }
}

/// A sex-balanced test set plus a disjoint reference set.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCorpus {
    pub test: Vec<PhantomCase>,
    pub references: Vec<PhantomCase>,
}

impl PhantomCorpus {
    /// Cases alternate M, F, M, ... so both sets are balanced (up to one case
    /// for odd counts). Test and reference phantoms draw from separate seed
    /// streams.
    pub fn generate(cfg: &CorpusConfig) -> Result<Self> {
        let make = |stream: u64, prefix: &str, n: usize| -> Result<Vec<PhantomCase>> {
            (0..n)
                .map(|i| {
                    let sex = if i % 2 == 0 { Sex::M } else { Sex::F };
                    let seed = derive_seed(cfg.seed, &[stream, i as u64]);
                    let spec = PhantomSpec::new(seed, cfg.size, sex).with_noise(cfg.noise_level);
                    let (image, mask) = generate_phantom(&spec)?;
                    Ok(PhantomCase {
                        id: format!("{prefix}-{i:03}"),
                        sex,
                        image,
                        mask,
                    })
                })
                .collect()
        };
        Ok(Self {
            test: make(0, "test", cfg.n_test)?,
            references: make(1, "ref", cfg.n_reference)?,
        })
    }

    pub fn reference_db(&self) -> Result<ReferenceDatabase> {
        ReferenceDatabase::new(
            self.references
                .iter()
                .map(|c| ReferenceRecord {
                    id: c.id.clone(),
                    image: c.image.clone(),
                    mask: c.mask.clone(),
                    attributes: c.attributes(),
                })
                .collect(),
        )
    }
}

/// Predictions for one cell: male cases degraded at `male_level`, female
/// cases at `female_level`, each from its own `(seed, i, j, case)` stream.
pub fn cell_predictions(
    cases: &[PhantomCase],
    seed: u64,
    male_level: u8,
    female_level: u8,
) -> Result<Vec<LabelMask>> {
    let male = DegradationLevel::schedule(male_level)?;
    let female = DegradationLevel::schedule(female_level)?;
    Ok(cases
        .iter()
        .enumerate()
        .map(|(c, case)| {
            let level = match case.sex {
                Sex::M => &male,
                Sex::F => &female,
            };
            let stream = derive_seed(seed, &[male_level as u64, female_level as u64, c as u64]);
            degrade(&case.mask, level, stream)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub male_level: u8,
    pub female_level: u8,
    pub delta_true: BTreeMap<String, f64>,
    /// Estimated gap with the mean aggregator.
    pub delta_rca: BTreeMap<String, f64>,
    /// Estimated gap with the max aggregator.
    pub delta_rca_max: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub structures: Vec<String>,
    pub levels: u8,
    /// Row-major over `(male_level, female_level)`.
    pub cells: Vec<GridCell>,
    pub n_male: usize,
    pub n_female: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAgreement {
    pub threshold: f64,
    pub fraction: Option<f64>,
    pub retained: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapDiagnostics {
    pub structure: String,
    pub aggregator: Aggregator,
    pub n_pairs: usize,
    pub pearson_r: Option<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub sign_agreement: Vec<ThresholdAgreement>,
}

impl GapDiagnostics {
    pub fn agreement_at(&self, threshold: f64) -> Option<f64> {
        self.sign_agreement
            .iter()
            .find(|a| a.threshold == threshold)
            .and_then(|a| a.fraction)
    }
}

/// Diagnostics of `(delta_true, delta_rca)` pairs at the reporting
/// thresholds.
pub fn gap_diagnostics(
    structure: &str,
    aggregator: Aggregator,
    pairs: &[(f64, f64)],
) -> GapDiagnostics {
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let fit = linear_fit(&xs, &ys);
    GapDiagnostics {
        structure: structure.to_string(),
        aggregator,
        n_pairs: pairs.len(),
        pearson_r: pearson(&xs, &ys),
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
        sign_agreement: REPORT_THRESHOLDS
            .iter()
            .map(|&threshold| match sign_agreement(pairs, threshold) {
                Ok((fraction, retained)) => ThresholdAgreement {
                    threshold,
                    fraction: Some(fraction),
                    retained,
                },
                Err(_) => ThresholdAgreement {
                    threshold,
                    fraction: None,
                    retained: 0,
                },
            })
            .collect(),
    }
}

impl GridResult {
    pub fn cell(&self, male_level: u8, female_level: u8) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.male_level == male_level && c.female_level == female_level)
    }

    fn estimated(cell: &GridCell, aggregator: Aggregator) -> &BTreeMap<String, f64> {
        match aggregator {
            Aggregator::Mean => &cell.delta_rca,
            Aggregator::Max => &cell.delta_rca_max,
        }
    }

    /// `(delta_true, delta_rca)` per cell for one structure.
    pub fn pairs(&self, structure: &str, aggregator: Aggregator) -> Vec<(f64, f64)> {
        self.cells
            .iter()
            .map(|c| {
                (
                    c.delta_true[structure],
                    Self::estimated(c, aggregator)[structure],
                )
            })
            .collect()
    }

    /// `matrix[i-1][j-1]` holds the true gap of cell `(i, j)`.
    pub fn true_matrix(&self, structure: &str) -> Vec<Vec<f64>> {
        self.matrix(|c| c.delta_true[structure])
    }

    pub fn rca_matrix(&self, structure: &str, aggregator: Aggregator) -> Vec<Vec<f64>> {
        self.matrix(|c| Self::estimated(c, aggregator)[structure])
    }

    fn matrix(&self, value: impl Fn(&GridCell) -> f64) -> Vec<Vec<f64>> {
        let n = self.levels as usize;
        let mut m = vec![vec![0.0; n]; n];
        for c in &self.cells {
            m[c.male_level as usize - 1][c.female_level as usize - 1] = value(c);
        }
        m
    }

    pub fn diagnostics(&self, structure: &str, aggregator: Aggregator) -> GapDiagnostics {
        gap_diagnostics(structure, aggregator, &self.pairs(structure, aggregator))
    }
}

/// Runs all `12 × 12` cells. Registrations depend only on images, so each
/// test case is registered once and reused by every cell.
pub fn run_grid(
    cases: &[PhantomCase],
    db: &ReferenceDatabase,
    params: &RcaParams,
    seed: u64,
) -> Result<GridResult> {
    let n_male = cases.iter().filter(|c| c.sex == Sex::M).count();
    let n_female = cases.len() - n_male;
    let mut warnings = Vec::new();
    if n_male != n_female {
        let msg = format!("unbalanced corpus: {n_male} male vs {n_female} female cases");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    for case in cases {
        if db.get(&case.id).is_some() {
            warnings.push(format!(
                "test case {} also appears in the reference database",
                case.id
            ));
        }
    }

    let prepared = cases
        .par_iter()
        .map(|c| PreparedAtlas::new(&c.id, &c.image, db, params))
        .collect::<Result<Vec<_>>>()?;
    for p in &prepared {
        let est_warnings = p.fields().len() < p.ranking().len();
        if est_warnings {
            warnings.push(format!(
                "case {}: some reference registrations failed",
                p.case_id()
            ));
        }
    }

    let keys: Vec<(u8, u8)> = (1..=NUM_LEVELS)
        .flat_map(|i| (1..=NUM_LEVELS).map(move |j| (i, j)))
        .collect();
    let cells = keys
        .par_iter()
        .map(|&(i, j)| run_cell(cases, &prepared, db, seed, i, j))
        .collect::<Result<Vec<_>>>()?;

    Ok(GridResult {
        structures: cases
            .first()
            .map(|c| c.mask.structures().to_vec())
            .unwrap_or_default(),
        levels: NUM_LEVELS,
        cells,
        n_male,
        n_female,
        warnings,
    })
}

fn run_cell(
    cases: &[PhantomCase],
    prepared: &[PreparedAtlas],
    db: &ReferenceDatabase,
    seed: u64,
    male_level: u8,
    female_level: u8,
) -> Result<GridCell> {
    let predictions = cell_predictions(cases, seed, male_level, female_level)?;
    let mut mean_cases = Vec::with_capacity(cases.len());
    let mut max_cases = Vec::with_capacity(cases.len());
    for ((case, atlas), pred) in cases.iter().zip(prepared).zip(&predictions) {
        let truth = dsc(pred, &case.mask)?;
        let estimate = atlas.score(pred, db, Aggregator::Mean)?;
        let max = aggregate_scores(&estimate.per_reference, Aggregator::Max)?;
        mean_cases.push(AuditCase::from_estimate(
            &estimate,
            case.attributes(),
            Some(truth.clone()),
        ));
        max_cases.push(AuditCase {
            dsc_rca: max,
            ..AuditCase::from_estimate(&estimate, case.attributes(), Some(truth))
        });
    }
    let mean_report = audit(&mean_cases, SEX_ATTRIBUTE, Sex::M.as_str())?;
    let max_report = audit(&max_cases, SEX_ATTRIBUTE, Sex::M.as_str())?;
    Ok(GridCell {
        male_level,
        female_level,
        delta_true: mean_report.delta_true.unwrap_or_default(),
        delta_rca: mean_report.delta_rca,
        delta_rca_max: max_report.delta_rca,
    })
}
