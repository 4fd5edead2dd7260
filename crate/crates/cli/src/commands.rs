use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use ubd::audit::{audit, AuditCase, AuditReport};
use ubd::imaging::{save_image, save_mask_channel, LabelMask};
use ubd::metrics::{dsc, DiceScore};
use ubd::phantom::{
    cell_predictions, run_grid, CorpusConfig, GapDiagnostics, GridResult, PhantomCase,
    PhantomCorpus,
};
use ubd::plot::{heatmap_svg, scatter_svg, Panel, Series};
use ubd::rca::{estimate_dsc_rca, Aggregator, RcaEstimate, RcaParams};
use ubd::registration::RegistrationConfig;
use ubd::similarity::SimilarityMetric;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{load_dataset, CaseEntry, Dataset, Manifest, MANIFEST_VERSION};
use crate::output::Staging;

/// RCA estimate of one target case, with its true Dice when ground truth
/// was supplied.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub estimate: RcaEstimate,
    pub dsc_true: Option<DiceScore>,
    pub attributes: BTreeMap<String, String>,
}

impl CaseResult {
    pub fn audit_case(&self) -> AuditCase {
        AuditCase::from_estimate(
            &self.estimate,
            self.attributes.clone(),
            self.dsc_true.clone(),
        )
    }
}

/// Row of `estimates.csv`.
#[derive(Serialize)]
struct EstimateRow<'a> {
    case_id: &'a str,
    structure: &'a str,
    dsc_rca: f64,
    k_used: usize,
    aggregator: Aggregator,
}

#[derive(Serialize)]
struct ReferenceScore<'a> {
    reference_id: &'a str,
    dsc: BTreeMap<String, f64>,
}

/// Entry of `estimates.json`.
#[derive(Serialize)]
struct EstimateRecord<'a> {
    case_id: &'a str,
    aggregator: Aggregator,
    k_used: usize,
    dsc_rca: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dsc_true: Option<BTreeMap<String, f64>>,
    attributes: &'a BTreeMap<String, String>,
    per_reference: Vec<ReferenceScore<'a>>,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    warnings: &'a [String],
}

/// Scores every target case that has a prediction.
pub fn estimate_dataset(ds: &Dataset, params: &RcaParams) -> Result<Vec<CaseResult>> {
    if ds.references.is_empty() {
        return Err(CliError::input("manifest has no reference cases"));
    }
    if ds.targets.is_empty() {
        return Err(CliError::input(
            "manifest has no non-reference cases to score",
        ));
    }
    if let Some(missing) = ds.targets.iter().find(|c| c.prediction.is_none()) {
        return Err(CliError::input(format!(
            "case {:?} has no prediction masks",
            missing.id
        )));
    }
    ds.targets
        .par_iter()
        .map(|case| {
            let pred = case.prediction.as_ref().expect("checked above");
            let estimate = estimate_dsc_rca(&case.id, &case.image, pred, &ds.references, params)?;
            let dsc_true = case
                .ground_truth
                .as_ref()
                .map(|gt| dsc(pred, gt))
                .transpose()?;
            Ok(CaseResult {
                estimate,
                dsc_true,
                attributes: case.attributes.clone(),
            })
        })
        .collect()
}

fn stage_estimates(staging: &mut Staging, results: &[CaseResult]) -> Result<()> {
    staging.write_csv(
        "estimates.csv",
        results.iter().flat_map(|r| {
            let e = &r.estimate;
            e.aggregate
                .per_structure()
                .iter()
                .map(move |(s, v)| EstimateRow {
                    case_id: &e.case_id,
                    structure: s,
                    dsc_rca: *v,
                    k_used: e.k_used,
                    aggregator: e.aggregator,
                })
        }),
    )?;
    let records: Vec<EstimateRecord> = results
        .iter()
        .map(|r| EstimateRecord {
            case_id: &r.estimate.case_id,
            aggregator: r.estimate.aggregator,
            k_used: r.estimate.k_used,
            dsc_rca: r.estimate.aggregate.to_map(),
            dsc_true: r.dsc_true.as_ref().map(DiceScore::to_map),
            attributes: &r.attributes,
            per_reference: r
                .estimate
                .per_reference
                .iter()
                .map(|(id, d)| ReferenceScore {
                    reference_id: id,
                    dsc: d.to_map(),
                })
                .collect(),
            warnings: &r.estimate.warnings,
        })
        .collect();
    staging.write_json("estimates.json", &records)
}

pub struct EstimateOutcome {
    pub results: Vec<CaseResult>,
    pub files: Vec<PathBuf>,
}

/// `estimate`: writes `estimates.csv` and `estimates.json`.
pub fn cmd_estimate(manifest: &Path, cfg: &RunConfig) -> Result<EstimateOutcome> {
    let ds = load_dataset(manifest)?;
    let results = cfg
        .thread_pool()?
        .install(|| estimate_dataset(&ds, &cfg.rca))?;
    let mut staging = Staging::new(&cfg.out)?;
    stage_estimates(&mut staging, &results)?;
    Ok(EstimateOutcome {
        results,
        files: staging.commit()?,
    })
}

/// Row of `audit.csv`. True-Dice columns are empty without ground truth.
#[derive(Serialize)]
struct AuditRow<'a> {
    structure: &'a str,
    attribute: &'a str,
    positive_group: &'a str,
    other_group: &'a str,
    n_positive: usize,
    n_other: usize,
    mean_rca_positive: f64,
    mean_rca_other: f64,
    delta_rca: f64,
    mean_true_positive: Option<f64>,
    mean_true_other: Option<f64>,
    delta_true: Option<f64>,
}

pub struct AuditOutcome {
    pub results: Vec<CaseResult>,
    pub report: AuditReport,
    pub files: Vec<PathBuf>,
}

impl AuditOutcome {
    /// Human-readable gap summary with the sign convention spelled out.
    pub fn summary(&self) -> String {
        let [pos, neg] = &self.report.groups;
        let mut out = format!(
            "delta_rca = mean DSC_RCA({a}={p}) - mean DSC_RCA({a}={n}); positive means {a}={p} is segmented better\n",
            a = self.report.attribute,
            p = pos.group_value,
            n = neg.group_value,
        );
        for (s, d) in &self.report.delta_rca {
            out.push_str(&format!("  {s:<12} delta_rca {d:+.4}"));
            if let Some(t) = self.report.delta_true.as_ref().and_then(|t| t.get(s)) {
                out.push_str(&format!("  delta_true {t:+.4}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs the fairness audit on already computed estimates.
pub fn audit_results(
    results: &[CaseResult],
    attribute: &str,
    positive_group: &str,
) -> Result<AuditReport> {
    let cases: Vec<AuditCase> = results.iter().map(CaseResult::audit_case).collect();
    Ok(audit(&cases, attribute, positive_group)?)
}

/// `audit`: estimates, then `audit.json`, `audit.csv` and, with ground
/// truth, `scatter.svg`.
pub fn cmd_audit(manifest: &Path, cfg: &RunConfig) -> Result<AuditOutcome> {
    let ds = load_dataset(manifest)?;
    if let Some(case) = ds
        .targets
        .iter()
        .find(|c| !c.attributes.contains_key(&cfg.attribute))
    {
        return Err(CliError::input(format!(
            "case {:?} has no value for attribute {:?}",
            case.id, cfg.attribute
        )));
    }
    let results = cfg
        .thread_pool()?
        .install(|| estimate_dataset(&ds, &cfg.rca))?;
    let report = audit_results(&results, &cfg.attribute, &cfg.positive_group)?;

    let mut staging = Staging::new(&cfg.out)?;
    stage_estimates(&mut staging, &results)?;
    staging.write_json("audit.json", &report)?;
    let [pos, neg] = &report.groups;
    let rows = report.delta_rca.iter().map(|(s, d)| AuditRow {
        structure: s,
        attribute: &report.attribute,
        positive_group: &pos.group_value,
        other_group: &neg.group_value,
        n_positive: pos.n_cases,
        n_other: neg.n_cases,
        mean_rca_positive: pos.mean_dsc_rca[s],
        mean_rca_other: neg.mean_dsc_rca[s],
        delta_rca: *d,
        mean_true_positive: pos.mean_dsc_true.as_ref().and_then(|m| m.get(s).copied()),
        mean_true_other: neg.mean_dsc_true.as_ref().and_then(|m| m.get(s).copied()),
        delta_true: report.delta_true.as_ref().and_then(|m| m.get(s).copied()),
    });
    staging.write_csv("audit.csv", rows)?;
    let gaps = report.paired_gaps();
    if !gaps.is_empty() {
        let points: Vec<(f64, f64)> = gaps.iter().map(|(_, t, r)| (*t, *r)).collect();
        let fit = report.fitted_slope.zip(report.fitted_intercept);
        let title = format!(
            "{} gap: {} - {}",
            report.attribute, pos.group_value, neg.group_value
        );
        let svg = scatter_svg(
            &title,
            "true gap",
            "RCA-estimated gap",
            &[Series {
                name: "structures",
                points: &points,
                fit,
            }],
        );
        staging.write("scatter.svg", svg)?;
    }
    Ok(AuditOutcome {
        results,
        report,
        files: staging.commit()?,
    })
}

#[derive(Serialize)]
struct GridTrueRow<'a> {
    structure: &'a str,
    male_level: u8,
    female_level: u8,
    delta_true: f64,
}

#[derive(Serialize)]
struct GridRcaRow<'a> {
    structure: &'a str,
    male_level: u8,
    female_level: u8,
    delta_rca_mean: f64,
    delta_rca_max: f64,
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSummary {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub k: usize,
    pub thumb_size: usize,
    pub similarity: SimilarityMetric,
    pub registration: RegistrationConfig,
    pub levels: u8,
    pub n_male: usize,
    pub n_female: usize,
    /// One entry per structure and aggregator.
    pub diagnostics: Vec<GapDiagnostics>,
    pub warnings: Vec<String>,
}

pub struct GridOutcome {
    pub grid: GridResult,
    pub summary: GridSummary,
    pub files: Vec<PathBuf>,
}

/// Generates the phantom corpus and runs the full grid in the configured
/// worker pool.
pub fn run_synthetic_grid(cfg: &RunConfig) -> Result<(GridResult, GridSummary)> {
    let corpus = PhantomCorpus::generate(&cfg.corpus)?;
    let db = corpus.reference_db()?;
    let grid = cfg
        .thread_pool()?
        .install(|| run_grid(&corpus.test, &db, &cfg.rca, cfg.seed))?;
    let diagnostics = grid
        .structures
        .iter()
        .flat_map(|s| [Aggregator::Mean, Aggregator::Max].map(|a| grid.diagnostics(s, a)))
        .collect();
    let summary = GridSummary {
        seed: cfg.seed,
        corpus: cfg.corpus.clone(),
        k: cfg.rca.k,
        thumb_size: cfg.rca.thumb_size,
        similarity: cfg.rca.metric,
        registration: cfg.rca.registration.clone(),
        levels: grid.levels,
        n_male: grid.n_male,
        n_female: grid.n_female,
        diagnostics,
        warnings: grid.warnings.clone(),
    };
    Ok((grid, summary))
}

/// `synthetic-grid`: CSV gap tables, heatmaps, a scatter plot and
/// `summary.json`.
pub fn cmd_synthetic_grid(cfg: &RunConfig) -> Result<GridOutcome> {
    let (grid, summary) = run_synthetic_grid(cfg)?;
    let mut staging = Staging::new(&cfg.out)?;
    let cells = || {
        grid.structures
            .iter()
            .flat_map(|s| grid.cells.iter().map(move |c| (s, c)))
    };
    staging.write_csv(
        "grid_true.csv",
        cells().map(|(s, c)| GridTrueRow {
            structure: s,
            male_level: c.male_level,
            female_level: c.female_level,
            delta_true: c.delta_true[s],
        }),
    )?;
    staging.write_csv(
        "grid_rca.csv",
        cells().map(|(s, c)| GridRcaRow {
            structure: s,
            male_level: c.male_level,
            female_level: c.female_level,
            delta_rca_mean: c.delta_rca[s],
            delta_rca_max: c.delta_rca_max[s],
        }),
    )?;

    let true_m: Vec<_> = grid
        .structures
        .iter()
        .map(|s| grid.true_matrix(s))
        .collect();
    let rca_m: Vec<_> = grid
        .structures
        .iter()
        .map(|s| grid.rca_matrix(s, Aggregator::Mean))
        .collect();
    fn panels<'a>(structures: &'a [String], ms: &'a [Vec<Vec<f64>>]) -> Vec<Panel<'a>> {
        structures
            .iter()
            .zip(ms)
            .map(|(s, m)| Panel { name: s, matrix: m })
            .collect()
    }
    let (rows, cols) = ("male segmenter level", "female segmenter level");
    staging.write(
        "heatmap_true.svg",
        heatmap_svg(
            "true gap (M - F)",
            rows,
            cols,
            &panels(&grid.structures, &true_m),
        ),
    )?;
    staging.write(
        "heatmap_rca.svg",
        heatmap_svg(
            "RCA-estimated gap (M - F)",
            rows,
            cols,
            &panels(&grid.structures, &rca_m),
        ),
    )?;
    let pairs: Vec<Vec<(f64, f64)>> = grid
        .structures
        .iter()
        .map(|s| grid.pairs(s, Aggregator::Mean))
        .collect();
    let series: Vec<Series> = grid
        .structures
        .iter()
        .zip(&pairs)
        .map(|(s, p)| {
            let d = summary
                .diagnostics
                .iter()
                .find(|d| &d.structure == s && d.aggregator == Aggregator::Mean)
                .expect("diagnostics cover every structure");
            Series {
                name: s,
                points: p,
                fit: d.slope.zip(d.intercept),
            }
        })
        .collect();
    staging.write(
        "grid_scatter.svg",
        scatter_svg(
            "grid cells",
            "true gap (M - F)",
            "RCA-estimated gap (M - F)",
            &series,
        ),
    )?;
    staging.write_json("summary.json", &summary)?;
    Ok(GridOutcome {
        grid,
        summary,
        files: staging.commit()?,
    })
}

pub struct PhantomExport {
    pub manifest: Manifest,
    pub files: Vec<PathBuf>,
}

fn stage_masks(
    staging: &mut Staging,
    dir: &str,
    id: &str,
    mask: &LabelMask,
) -> Result<BTreeMap<String, PathBuf>> {
    let (w, h) = mask.dims();
    mask.structures()
        .iter()
        .zip(mask.channels())
        .map(|(s, ch)| {
            let rel = PathBuf::from(format!("{dir}/{id}_{s}.png"));
            save_mask_channel(staging.path(&rel)?, w, h, ch)?;
            Ok((s.clone(), rel))
        })
        .collect()
}

/// `gen-phantoms`: writes the phantom corpus as PNGs plus `manifest.json`.
/// With `cell = (i, j)` the test cases also carry the predictions of that
/// grid cell (male cases at level `i`, female cases at level `j`).
pub fn cmd_gen_phantoms(cfg: &RunConfig, cell: Option<(u8, u8)>) -> Result<PhantomExport> {
    let corpus = PhantomCorpus::generate(&cfg.corpus)?;
    let predictions = match cell {
        Some((i, j)) => Some(cell_predictions(&corpus.test, cfg.seed, i, j)?),
        None => None,
    };
    let mut staging = Staging::new(&cfg.out)?;
    let mut cases = Vec::new();
    let mut export = |staging: &mut Staging,
                      case: &PhantomCase,
                      reference: bool,
                      pred: Option<&LabelMask>|
     -> Result<()> {
        let image = PathBuf::from(format!("images/{}.png", case.id));
        save_image(staging.path(&image)?, &case.image)?;
        let ground_truth = stage_masks(staging, "masks", &case.id, &case.mask)?;
        let prediction = match pred {
            Some(p) => stage_masks(staging, "predictions", &case.id, p)?,
            None => BTreeMap::new(),
        };
        cases.push(CaseEntry {
            id: case.id.clone(),
            image,
            reference,
            prediction,
            ground_truth,
            attributes: case.attributes(),
        });
        Ok(())
    };
    for (n, case) in corpus.test.iter().enumerate() {
        export(
            &mut staging,
            case,
            false,
            predictions.as_ref().map(|p| &p[n]),
        )?;
    }
    for case in &corpus.references {
        export(&mut staging, case, true, None)?;
    }
    let structures = corpus
        .test
        .iter()
        .chain(&corpus.references)
        .next()
        .map(|c| c.mask.structures().to_vec())
        .unwrap_or_default();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        structures,
        cases,
    };
    staging.write("manifest.json", manifest.to_json() + "\n")?;
    Ok(PhantomExport {
        manifest,
        files: staging.commit()?,
    })
}
