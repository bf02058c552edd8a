//! Run configuration files (TOML or JSON) and their materialisation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certifier::Extras;
use crate::datasets::{self, BatchSpec, Dataset, IndexSplit};
use crate::error::{Error, Result};
use crate::models::ModelArch;
use crate::optimizers::{Algorithm, RunSpec, Schedule};
use crate::rng;
use crate::scalar_bounds::TheoremId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Blobs {
        n: usize,
        input_dim: usize,
        num_classes: usize,
        separation: f64,
        /// size of an independent sample from the same distribution
        #[serde(default)]
        test_size: usize,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// keep this many rows, chosen by the run seed
        #[serde(default)]
        subset: Option<usize>,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        test_path: Option<PathBuf>,
        #[serde(default)]
        num_classes: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub m: usize,
}

fn default_eta() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    #[serde(default)]
    pub theorem: Option<TheoremId>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub extras: Extras,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig { theorem: None, eta: default_eta(), delta: default_delta(), extras: Extras::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub model: ModelArch,
    pub data: DataSource,
    pub split: SplitConfig,
    pub schedule: Schedule,
    #[serde(default)]
    pub batch: Option<BatchSpec>,
    #[serde(default)]
    pub certify: CertifyConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub risk_every: usize,
    /// portion of training labels replaced by uniform random labels
    #[serde(default)]
    pub label_noise: f64,
}

/// Data and split drawn for one seed.
#[derive(Clone, Debug)]
pub struct Materialized {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub split: IndexSplit,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(toml_path(&e), e.message().to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("line {}", e.line()), e.to_string()))
    }

    /// `.json` files are parsed as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative data paths are taken relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.data {
            DataSource::Idx { images, labels, test_images, test_labels, .. } => {
                fix(images);
                fix(labels);
                test_images.iter_mut().for_each(fix);
                test_labels.iter_mut().for_each(fix);
            }
            DataSource::Csv { path, test_path, .. } => {
                fix(path);
                test_path.iter_mut().for_each(fix);
            }
            DataSource::Blobs { .. } => {}
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        RunConfig { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Blobs { n, .. } = self.data {
            if self.split.m >= n {
                return Err(Error::config("split.m", format!("m = {} must be < n = {n}", self.split.m)));
            }
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::config("label_noise", "must lie in [0, 1]"));
        }
        let c = &self.certify;
        if !(c.eta > 0.0 && c.eta.is_finite()) {
            return Err(Error::config("certify.eta", "must be positive"));
        }
        if !(c.delta > 0.0 && c.delta < 1.0) {
            return Err(Error::config("certify.delta", "must lie in (0, 1)"));
        }
        self.run_spec().validate().map_err(|e| match e {
            Error::Config { .. } => e,
            other => Error::config("run", other.to_string()),
        })
    }

    pub fn run_spec(&self) -> RunSpec {
        RunSpec {
            algorithm: self.algorithm,
            arch: self.model.clone(),
            schedule: self.schedule.clone(),
            batch: self.batch,
            seed: self.seed,
            risk_every: self.risk_every,
            snapshot_every: 0,
        }
    }

    /// The theorem matching the algorithm unless one is configured.
    pub fn theorem(&self) -> TheoremId {
        self.certify.theorem.unwrap_or(match self.algorithm {
            Algorithm::Fgd | Algorithm::Gd => TheoremId::Fgd,
            Algorithm::Fsgd | Algorithm::Sgd => TheoremId::Fsgd,
            Algorithm::Rgd => TheoremId::Rgd,
            Algorithm::Gld => TheoremId::Gld,
            Algorithm::Sgld => TheoremId::Sgld,
            Algorithm::Cld => TheoremId::Cld,
        })
    }

    /// Load or generate the data for `self.seed`, corrupt labels and draw `J`.
    pub fn materialize(&self) -> Result<Materialized> {
        let (train, test) = match &self.data {
            DataSource::Blobs { n, input_dim, num_classes, separation, test_size } => {
                let train = datasets::synth_blobs(*n, *input_dim, *num_classes, *separation, self.seed)?;
                let test = if *test_size > 0 {
                    let mut fresh = rng::stream(self.seed, rng::streams::FRESH_SAMPLE);
                    Some(datasets::synth_blobs_from(*test_size, *input_dim, *num_classes, *separation, &mut fresh)?)
                } else {
                    None
                };
                (train, test)
            }
            DataSource::Idx { images, labels, subset, test_images, test_labels } => {
                let full = datasets::load_idx(images, labels)?;
                let train = match subset {
                    Some(k) => full.random_subset(*k, self.seed)?,
                    None => full,
                };
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => Some(datasets::load_idx(i, l)?),
                    (None, None) => None,
                    _ => return Err(Error::config("data.test_images", "test images and labels go together")),
                };
                (train, test)
            }
            DataSource::Csv { path, test_path, num_classes } => {
                let read = |p: &Path| -> Result<Dataset> {
                    Dataset::read_csv(std::io::BufReader::new(std::fs::File::open(p)?), *num_classes)
                };
                let train = read(path)?;
                let test = test_path.as_deref().map(read).transpose()?;
                (train, test)
            }
        };
        let train = if self.label_noise > 0.0 {
            datasets::corrupt_labels(&train, self.label_noise, self.seed)?.0
        } else {
            train
        };
        if self.split.m >= train.len() {
            return Err(Error::config("split.m", format!("m = {} must be < n = {}", self.split.m, train.len())));
        }
        let split = datasets::sample_prior_indices(train.len(), self.split.m, self.seed)?;
        Ok(Materialized { train, test, split })
    }
}

fn toml_path(e: &toml::de::Error) -> String {
    // toml reports the offending key inside the message; keep the span as a fallback locator
    e.span().map_or_else(|| "config".to_string(), |s| format!("config bytes {}..{}", s.start, s.end))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
algorithm = "fgd"
seed = 3

[model]
kind = "linear_softmax"
input_dim = 2
num_classes = 2

[data]
kind = "blobs"
n = 40
input_dim = 2
num_classes = 2
separation = 4.0

[split]
m = 20

[schedule]
steps = 5
gamma = 0.1
eps = 0.01
"#;

    #[test]
    fn minimal_toml_parses_and_materialises() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.certify.eta, 1.0);
        assert_eq!(cfg.theorem(), TheoremId::Fgd);
        let m = cfg.materialize().unwrap();
        assert_eq!(m.split.m(), 20);
        assert_eq!(m.train.len(), 40);
    }

    #[test]
    fn json_round_trip_keeps_digest() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
        assert_ne!(cfg.with_seed(4).digest(), cfg.digest());
    }

    #[test]
    fn missing_field_is_named() {
        let text = MINIMAL.replace("[split]\nm = 20\n", "");
        match RunConfig::from_toml(&text) {
            Err(Error::Config { msg, .. }) => assert!(msg.contains("split"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inconsistent_schedule_is_rejected() {
        let text = MINIMAL.replace("eps = 0.01\n", "");
        match RunConfig::from_toml(&text).unwrap().validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "schedule.eps"),
            other => panic!("{other:?}"),
        }
    }
}
