//! Dataset manifests: one JSON file listing images, masks and attributes,
//! with paths relative to the manifest's own directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ubd::imaging::{load_image, load_mask_channel, Image, LabelMask};
use ubd::rca::{ReferenceDatabase, ReferenceRecord};

use crate::error::{CliError, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    /// Structure names, in channel order.
    pub structures: Vec<String>,
    pub cases: Vec<CaseEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub id: String,
    pub image: PathBuf,
    /// Reference cases form the database that predictions are scored
    /// against; they need ground truth.
    #[serde(default)]
    pub reference: bool,
    /// Predicted binary mask per structure.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub prediction: BTreeMap<String, PathBuf>,
    /// Ground-truth binary mask per structure.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ground_truth: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

/// A case to be scored.
#[derive(Clone, Debug)]
pub struct TargetCase {
    pub id: String,
    pub image: Image,
    pub prediction: Option<LabelMask>,
    pub ground_truth: Option<LabelMask>,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub structures: Vec<String>,
    pub targets: Vec<TargetCase>,
    pub references: ReferenceDatabase,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::input(format!("malformed manifest: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::input(format!("cannot read manifest {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Checks everything that can be checked without decoding images.
    pub fn validate(&self, base: &Path) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(CliError::input(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        if self.structures.is_empty() {
            return Err(CliError::input("manifest lists no structures"));
        }
        let structures: BTreeSet<&String> = self.structures.iter().collect();
        if structures.len() != self.structures.len() {
            return Err(CliError::input("manifest lists a structure twice"));
        }

        let mut ids = BTreeSet::new();
        let mut attribute_keys: Option<(&str, BTreeSet<&String>)> = None;
        for case in &self.cases {
            if case.id.is_empty() {
                return Err(CliError::input("a case has an empty id"));
            }
            if !ids.insert(case.id.as_str()) {
                return Err(CliError::input(format!("duplicate case id {:?}", case.id)));
            }
            let check_masks = |what: &str, masks: &BTreeMap<String, PathBuf>| -> Result<()> {
                if masks.is_empty() {
                    return Ok(());
                }
                let keys: BTreeSet<&String> = masks.keys().collect();
                if keys != structures {
                    return Err(CliError::input(format!(
                        "case {:?}: {what} masks cover {:?}, expected {:?}",
                        case.id, keys, self.structures
                    )));
                }
                masks
                    .values()
                    .try_for_each(|p| require_file(&case.id, base, p))
            };
            require_file(&case.id, base, &case.image)?;
            check_masks("prediction", &case.prediction)?;
            check_masks("ground_truth", &case.ground_truth)?;
            if case.reference && case.ground_truth.is_empty() {
                return Err(CliError::input(format!(
                    "reference case {:?} has no ground_truth masks",
                    case.id
                )));
            }
            if !case.attributes.is_empty() {
                let keys: BTreeSet<&String> = case.attributes.keys().collect();
                match &attribute_keys {
                    None => attribute_keys = Some((&case.id, keys)),
                    Some((first, expected)) if *expected != keys => {
                        return Err(CliError::input(format!(
                            "case {:?} has attribute keys {:?} but case {first:?} has {:?}",
                            case.id, keys, expected
                        )));
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    /// Validates the manifest and decodes every image and mask.
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        self.validate(base)?;
        let mut targets = Vec::new();
        let mut records = Vec::new();
        for case in &self.cases {
            let image = load_image(base.join(&case.image)).map_err(|e| in_case(&case.id, e))?;
            let masks = |paths: &BTreeMap<String, PathBuf>| -> Result<Option<LabelMask>> {
                if paths.is_empty() {
                    return Ok(None);
                }
                let channels = self
                    .structures
                    .iter()
                    .map(|s| {
                        let (w, h, channel) = load_mask_channel(base.join(&paths[s]))
                            .map_err(|e| in_case(&case.id, e))?;
                        if (w, h) != image.dims() {
                            return Err(CliError::input(format!(
                                "case {:?}: mask for {s:?} is {w}x{h} but the image is {}x{}",
                                case.id,
                                image.width(),
                                image.height()
                            )));
                        }
                        Ok(channel)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (w, h) = image.dims();
                Ok(Some(LabelMask::new(
                    w,
                    h,
                    self.structures.clone(),
                    channels,
                )?))
            };
            let ground_truth = masks(&case.ground_truth)?;
            if case.reference {
                records.push(ReferenceRecord {
                    id: case.id.clone(),
                    image,
                    mask: ground_truth.expect("validated: references carry ground truth"),
                    attributes: case.attributes.clone(),
                });
            } else {
                targets.push(TargetCase {
                    id: case.id.clone(),
                    prediction: masks(&case.prediction)?,
                    ground_truth,
                    image,
                    attributes: case.attributes.clone(),
                });
            }
        }
        Ok(Dataset {
            structures: self.structures.clone(),
            targets,
            references: ReferenceDatabase::new(records)?,
        })
    }
}

/// Reads and loads the manifest at `path`, resolving paths against its
/// directory.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest = Manifest::read(path)?;
    manifest.load(path.parent().unwrap_or(Path::new(".")))
}

fn require_file(case_id: &str, base: &Path, rel: &Path) -> Result<()> {
    let full = base.join(rel);
    if full.is_file() {
        Ok(())
    } else {
        Err(CliError::input(format!(
            "case {case_id:?}: file {} does not exist",
            full.display()
        )))
    }
}

fn in_case(case_id: &str, e: ubd::Error) -> CliError {
    CliError::input(format!("case {case_id:?}: {e}"))
}
