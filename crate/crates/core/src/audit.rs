//! Group fairness audit on estimated (and optionally true) Dice scores.
//!
//! The population is split by one binary protected attribute. The bias
//! measure is the signed gap `mean(positive group) − mean(other group)` per
//! structure; a positive value means the positive group is segmented better.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DiceScore;
use crate::rca::RcaEstimate;

/// One audited case.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditCase {
    pub case_id: String,
    pub dsc_rca: DiceScore,
    pub attributes: BTreeMap<String, String>,
    pub dsc_true: Option<DiceScore>,
}

impl AuditCase {
    pub fn from_estimate(
        estimate: &RcaEstimate,
        attributes: BTreeMap<String, String>,
        dsc_true: Option<DiceScore>,
    ) -> Self {
        Self {
            case_id: estimate.case_id.clone(),
            dsc_rca: estimate.aggregate.clone(),
            attributes,
            dsc_true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group_value: String,
    pub n_cases: usize,
    pub mean_dsc_rca: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_dsc_true: Option<BTreeMap<String, f64>>,
    pub case_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub attribute: String,
    /// `groups[0]` is the positive group; every gap is `groups[0] − groups[1]`.
    pub groups: [GroupStats; 2],
    pub delta_rca: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_true: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign_agreement: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pearson_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitted_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitted_intercept: Option<f64>,
}

impl AuditReport {
    /// `(structure, delta_true, delta_rca)` triples, when ground truth exists.
    pub fn paired_gaps(&self) -> Vec<(String, f64, f64)> {
        let Some(truth) = &self.delta_true else {
            return Vec::new();
        };
        self.delta_rca
            .iter()
            .filter_map(|(s, &r)| truth.get(s).map(|&t| (s.clone(), t, r)))
            .collect()
    }
}

/// Splits `cases` by `attribute` and reports the signed gaps between the
/// `positive_group` and the other value.
///
/// When every case carries a true Dice score, the true gaps are reported as
/// well, together with their agreement with the estimated gaps. Each
/// structure contributes one `(delta_true, delta_rca)` observation; the
/// correlation and fitted line need at least two.
pub fn audit(cases: &[AuditCase], attribute: &str, positive_group: &str) -> Result<AuditReport> {
    let mut values = BTreeSet::new();
    for c in cases {
        let v = c
            .attributes
            .get(attribute)
            .ok_or_else(|| Error::MissingAttribute {
                case_id: c.case_id.clone(),
                attribute: attribute.to_string(),
            })?;
        values.insert(v.clone());
    }
    if values.len() != 2 {
        return Err(Error::GroupCount {
            attribute: attribute.to_string(),
            found: values.into_iter().collect(),
        });
    }
    if !values.contains(positive_group) {
        return Err(Error::invalid(
            "positive group",
            format!("{positive_group:?} is not a value of {attribute:?} (found {values:?})"),
        ));
    }
    let negative = values
        .iter()
        .find(|v| *v != positive_group)
        .unwrap()
        .clone();

    let stats = |value: &str| -> GroupStats {
        let members: Vec<&AuditCase> = cases
            .iter()
            .filter(|c| c.attributes[attribute] == value)
            .collect();
        let mean_dsc_rca = mean_by_structure(members.iter().map(|c| &c.dsc_rca));
        let mean_dsc_true = members
            .iter()
            .map(|c| c.dsc_true.as_ref())
            .collect::<Option<Vec<_>>>()
            .map(|scores| mean_by_structure(scores.into_iter()));
        GroupStats {
            group_value: value.to_string(),
            n_cases: members.len(),
            mean_dsc_rca,
            mean_dsc_true,
            case_ids: members.iter().map(|c| c.case_id.clone()).collect(),
        }
    };
    let pos = stats(positive_group);
    let neg = stats(&negative);

    let delta_rca = gap(&pos.mean_dsc_rca, &neg.mean_dsc_rca);
    let delta_true = match (&pos.mean_dsc_true, &neg.mean_dsc_true) {
        (Some(a), Some(b)) => Some(gap(a, b)),
        _ => None,
    };

    let mut report = AuditReport {
        attribute: attribute.to_string(),
        groups: [pos, neg],
        delta_rca,
        delta_true,
        sign_agreement: None,
        pearson_r: None,
        fitted_slope: None,
        fitted_intercept: None,
    };
    let pairs: Vec<(f64, f64)> = report
        .paired_gaps()
        .into_iter()
        .map(|(_, t, r)| (t, r))
        .collect();
    if !pairs.is_empty() {
        report.sign_agreement = sign_agreement(&pairs, 0.0).ok().map(|(f, _)| f);
    }
    if pairs.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        report.pearson_r = pearson(&xs, &ys);
        if let Some((slope, intercept)) = linear_fit(&xs, &ys) {
            report.fitted_slope = Some(slope);
            report.fitted_intercept = Some(intercept);
        }
    }
    Ok(report)
}

fn mean_by_structure<'a>(scores: impl Iterator<Item = &'a DiceScore>) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for s in scores {
        for (name, v) in s.per_structure() {
            let e = sums.entry(name.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

fn gap(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    a.iter()
        .filter_map(|(s, va)| b.get(s).map(|vb| (s.clone(), va - vb)))
        .collect()
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Fraction of `(delta_true, delta_rca)` pairs whose signs agree, ignoring
/// pairs with `|delta_true| < threshold`. Zero only matches zero. Returns
/// the fraction and how many pairs were kept.
pub fn sign_agreement(pairs: &[(f64, f64)], threshold: f64) -> Result<(f64, usize)> {
    if pairs.is_empty() {
        return Err(Error::invalid("sign agreement", "no pairs given"));
    }
    if !(threshold >= 0.0) {
        return Err(Error::invalid(
            "sign agreement",
            format!("threshold {threshold} must be non-negative"),
        ));
    }
    let kept: Vec<_> = pairs.iter().filter(|(t, _)| t.abs() >= threshold).collect();
    if kept.is_empty() {
        return Err(Error::AllPairsExcluded { threshold });
    }
    let agree = kept.iter().filter(|(t, r)| sign(*t) == sign(*r)).count();
    Ok((agree as f64 / kept.len() as f64, kept.len()))
}

/// Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}
