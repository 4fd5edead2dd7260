//! Run configuration: an optional TOML or JSON settings file, overridden by
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use ubd::phantom::CorpusConfig;
use ubd::rca::{Aggregator, RcaParams, DEFAULT_K};
use ubd::registration::RegistrationConfig;
use ubd::similarity::{SimilarityMetric, DEFAULT_THUMB_SIZE};

use crate::error::{CliError, Result};

pub const DEFAULT_ATTRIBUTE: &str = "sex";
pub const DEFAULT_POSITIVE_GROUP: &str = "M";
pub const DEFAULT_SEED: u64 = 2023;

/// Contents of a settings file. Every key is optional.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub k: Option<usize>,
    pub aggregator: Option<Aggregator>,
    pub thumb_size: Option<usize>,
    pub similarity: Option<SimilarityMetric>,
    pub attribute: Option<String>,
    pub positive_group: Option<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub registration: RegistrationConfig,
    pub corpus: Option<CorpusConfig>,
}

impl Settings {
    /// Parses by extension: `.toml` or `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::input(format!("cannot read settings {}: {e}", path.display()))
        })?;
        let bad = |e: &dyn std::fmt::Display| {
            CliError::input(format!("invalid settings {}: {e}", path.display()))
        };
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| bad(&e)),
            Some("json") => serde_json::from_str(&text).map_err(|e| bad(&e)),
            _ => Err(CliError::input(format!(
                "settings file {} must end in .toml or .json",
                path.display()
            ))),
        }
    }
}

/// Values given on the command line; `None` falls back to the settings file
/// and then to the built-in default.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub k: Option<usize>,
    pub aggregator: Option<Aggregator>,
    pub attribute: Option<String>,
    pub positive_group: Option<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: PathBuf,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub rca: RcaParams,
    pub attribute: String,
    pub positive_group: String,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
    pub corpus: CorpusConfig,
}

impl RunConfig {
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let s = match &o.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        s.registration.validate()?;
        let k = o.k.or(s.k).unwrap_or(DEFAULT_K);
        if k == 0 {
            return Err(CliError::input("k must be at least 1"));
        }
        let thumb_size = s.thumb_size.unwrap_or(DEFAULT_THUMB_SIZE);
        if thumb_size == 0 {
            return Err(CliError::input("thumb_size must be at least 1"));
        }
        let threads = o
            .threads
            .or(s.threads)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if threads == 0 {
            return Err(CliError::input("thread count must be at least 1"));
        }
        let seed = o.seed.or(s.seed).unwrap_or(DEFAULT_SEED);
        let corpus = CorpusConfig {
            seed,
            ..s.corpus.unwrap_or_default()
        };
        Ok(Self {
            rca: RcaParams {
                k,
                thumb_size,
                metric: s.similarity.unwrap_or_default(),
                aggregator: o.aggregator.or(s.aggregator).unwrap_or_default(),
                registration: s.registration,
            },
            attribute: o
                .attribute
                .clone()
                .or(s.attribute)
                .unwrap_or_else(|| DEFAULT_ATTRIBUTE.into()),
            positive_group: o
                .positive_group
                .clone()
                .or(s.positive_group)
                .unwrap_or_else(|| DEFAULT_POSITIVE_GROUP.into()),
            seed,
            threads,
            out: o.out.clone(),
            corpus,
        })
    }

    pub fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| CliError::compute(format!("cannot start worker pool: {e}")))
    }
}
