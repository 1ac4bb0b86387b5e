//! Run configuration and the commands behind the `ris-lab` binary: scene
//! rendering, RIS selection through the geometric or the vision path,
//! dataset generation, policy training and the DNN versus AO benchmark.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use ris_core::baseline::{AOConfig, BaselineError};
use ris_core::dataset::{generate, Dataset, DatasetError, DatasetMeta, GenConfig};
use ris_core::geometry::{GeometryError, SamplerConfig, SceneSampler};
use ris_core::policy::{train_with, EpochLog, PolicyError, TrainConfig, TrainOutcome};
use ris_core::transmit::{Dims, TransmitError};
use ris_core::vision::{RasterGeometry, RecoverConfig, VisionError, DEFAULT_THRESHOLD};

mod bench;
mod select;

pub use bench::{benchmark, render_table, BenchmarkReport, BenchmarkResults, MethodResult, MethodTiming, Timing};
pub use select::{agreement, select, AgreementReport, Selection, Via};

#[derive(Debug, Error)]
pub enum CliError {
    /// Rejected input: bad configuration, malformed files or mismatched shapes.
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Transmit(#[from] TransmitError),
}

impl CliError {
    /// Process exit code: 2 for validation failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_)
            | CliError::Json(_)
            | CliError::Geometry(GeometryError::Json { .. } | GeometryError::InvalidScene(_) | GeometryError::DegeneratePolygon(_))
            | CliError::Vision(
                VisionError::InvalidRaster(_) | VisionError::InvalidParameter(_) | VisionError::Format(_) | VisionError::OutOfFrame { .. },
            )
            | CliError::Dataset(DatasetError::InvalidConfig(_) | DatasetError::Format(_) | DatasetError::Transmit(_))
            | CliError::Policy(
                PolicyError::InvalidConfig(_)
                | PolicyError::Dimension(_)
                | PolicyError::Checkpoint(_)
                | PolicyError::DatasetTooSmall { .. },
            )
            | CliError::Baseline(BaselineError::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Seeds of the independent random streams of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub train_data: u64,
    pub test_data: u64,
    /// Scenes of the vision agreement run.
    pub scenes: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { train_data: 1, test_data: 2, scenes: 0 }
    }
}

/// Default output locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub raster: PathBuf,
    pub train_data: PathBuf,
    pub test_data: PathBuf,
    pub checkpoint: PathBuf,
    pub report: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            raster: "scene.pgm".into(),
            train_data: "train.risd".into(),
            test_data: "test.risd".into(),
            checkpoint: "policy.rism".into(),
            report: "report.json".into(),
        }
    }
}

/// Everything a run depends on. `users`, `candidate_ris` and `kappa` take
/// precedence over the matching fields of `scene`; `ao.iterations` is replaced
/// by `ao_short` and `ao_long` in the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// K.
    pub users: usize,
    /// N.
    pub ris_elements: usize,
    /// N_T.
    pub antennas: usize,
    /// 2L.
    pub candidate_ris: usize,
    pub p_max: f64,
    /// Target mean link power over noise, dB.
    pub ratio_db: f64,
    pub kappa: f64,
    /// Channel pathloss exponent.
    pub eta: f64,
    pub sigma2: f64,
    pub user_weight: f64,
    pub calibration_scenes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub scene: SamplerConfig,
    pub train: TrainConfig,
    pub ao: AOConfig,
    pub ao_short: usize,
    pub ao_long: usize,
    /// Timed repetitions of the DNN pass; the median is reported.
    pub dnn_repeats: usize,
    pub seeds: Seeds,
    pub raster: RasterGeometry,
    pub recover: RecoverConfig,
    pub detection_threshold: f64,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            users: 4,
            ris_elements: 8,
            antennas: 8,
            candidate_ris: 6,
            p_max: 1.0,
            ratio_db: 20.0,
            kappa: 0.5,
            eta: 2.0,
            sigma2: 1.0,
            user_weight: 1.0,
            calibration_scenes: 2000,
            train_samples: 10_000,
            test_samples: 200,
            scene: SamplerConfig::default(),
            train: TrainConfig::default(),
            ao: AOConfig::default(),
            ao_short: 25,
            ao_long: 50,
            dnn_repeats: 5,
            seeds: Seeds::default(),
            raster: RasterGeometry::default(),
            recover: RecoverConfig::default(),
            detection_threshold: DEFAULT_THRESHOLD,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Invalid(format!("config line {} column {}: {e}", e.line(), e.column())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.users, self.ris_elements, self.antennas)
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig { num_users: self.users, num_ris: self.candidate_ris, kappa: self.kappa, ..self.scene.clone() }
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            n: self.ris_elements,
            n_t: self.antennas,
            scene: self.sampler_config(),
            eta: self.eta,
            sigma2: self.sigma2,
            p_max: self.p_max,
            user_weight: self.user_weight,
            target_db: self.ratio_db,
            calibration_scenes: self.calibration_scenes,
        }
    }

    pub fn ao_config(&self, iterations: usize) -> AOConfig {
        AOConfig { iterations, ..self.ao.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Invalid(m));
        if self.train_samples == 0 || self.test_samples == 0 {
            return bad("dataset sizes must be positive".into());
        }
        if self.ao_short == 0 || self.ao_long < self.ao_short {
            return bad(format!("AO iterations {} and {} must satisfy 0 < short <= long", self.ao_short, self.ao_long));
        }
        if !self.scene.ris_layout.is_empty() && self.scene.ris_layout.len() != self.candidate_ris {
            return bad(format!("{} RIS positions given for {} candidates", self.scene.ris_layout.len(), self.candidate_ris));
        }
        if self.dnn_repeats == 0 {
            return bad("dnn_repeats must be positive".into());
        }
        if !(self.detection_threshold > 0.0 && self.detection_threshold < 1.0) {
            return bad(format!("detection threshold {} outside (0, 1)", self.detection_threshold));
        }
        if !(self.recover.epsilon_px > 0.0) || self.recover.canny_low > self.recover.canny_high {
            return bad(format!("recovery settings {:?}", self.recover));
        }
        self.gen_config().validate()?;
        SceneSampler::new(self.sampler_config())?;
        self.train.validate()?;
        self.ao.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serialises"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Generates the training or test set; `seed` overrides the configured one.
pub fn gen_data(config: &RunConfig, split: Split, seed: Option<u64>) -> Result<(Dataset, DatasetMeta)> {
    config.validate()?;
    let (count, default_seed) = match split {
        Split::Train => (config.train_samples, config.seeds.train_data),
        Split::Test => (config.test_samples, config.seeds.test_data),
    };
    Ok(generate(&config.gen_config(), count, seed.unwrap_or(default_seed))?)
}

/// Trains a policy on `data`, which must match the configured dimensions.
pub fn train_policy(config: &RunConfig, data: &Dataset, on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    config.validate()?;
    if data.dims != config.dims() {
        return Err(CliError::Invalid(format!("dataset is {:?}, config expects {:?}", data.dims, config.dims())));
    }
    Ok(train_with(&config.train, &data.samples, on_epoch)?)
}

#[cfg(test)]
mod tests;
