//! Seeded channel datasets. Every sample draws its own scene, activates the
//! RIS chosen by the geometric selection rule, and draws Rayleigh channels
//! whose scale `rho0` is calibrated beforehand so that the mean link power
//! over noise hits a target in dB.
//!
//! Binary layout (little-endian): `"RISD"`, `u32` version, `u32` K, N, N_T
//! and sample count, then per sample the `f64` real/imag pairs of `H`
//! (row-major), every `h_k`, every `g_k`, followed by the K noise powers and
//! the K user weights. A JSON sidecar records the generation settings.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, SamplerConfig, SceneSampler};
use crate::linalg::{CMat, CVec, C64};
use crate::transmit::{calibrate_rho0, sample_channels, ChannelModel, ChannelSet, Dims, LinkPathlosses, TransmitError};

pub const MAGIC: &[u8; 4] = b"RISD";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 5 * 4;
/// Stream index reserved for the calibration scenes.
const CALIBRATION_STREAM: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Transmit(#[from] TransmitError),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Scene distribution and channel statistics of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// RIS elements.
    pub n: usize,
    /// Transmit antennas.
    pub n_t: usize,
    /// Users come from `scene.num_users`, candidate panels from `scene.num_ris`.
    pub scene: SamplerConfig,
    pub eta: f64,
    pub sigma2: f64,
    pub p_max: f64,
    pub user_weight: f64,
    /// Mean link power over noise, dB.
    pub target_db: f64,
    pub calibration_scenes: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n: 8,
            n_t: 8,
            scene: SamplerConfig::default(),
            eta: 2.0,
            sigma2: 1.0,
            p_max: 1.0,
            user_weight: 1.0,
            target_db: 20.0,
            calibration_scenes: 2000,
        }
    }
}

impl GenConfig {
    pub fn dims(&self) -> Dims {
        Dims::new(self.scene.num_users, self.n, self.n_t)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DatasetError::InvalidConfig(m.into()));
        if self.n == 0 || self.n_t == 0 || self.scene.num_users == 0 {
            return bad("K, N and N_T must be positive");
        }
        if !(self.sigma2 > 0.0 && self.p_max > 0.0 && self.user_weight > 0.0) {
            return bad("noise power, p_max and user weight must be positive");
        }
        if !self.eta.is_finite() || !self.target_db.is_finite() {
            return bad("eta and target_db must be finite");
        }
        if self.calibration_scenes == 0 {
            return bad("calibration needs at least one scene");
        }
        Ok(())
    }

    fn model(&self, rho0: f64) -> ChannelModel {
        ChannelModel { rho0, eta: self.eta, sigma2: self.sigma2, p_max: self.p_max }
    }
}

/// Channel sets sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: Dims,
    pub samples: Vec<ChannelSet>,
}

/// Sidecar contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub config: GenConfig,
    pub seed: u64,
    pub count: usize,
    pub rho0: f64,
    /// Mean link power over noise measured on the generated channels, dB.
    pub empirical_db: f64,
    /// How often each candidate panel was selected.
    pub ris_usage: Vec<usize>,
}

/// Independent generator for item `stream` of a seeded run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Pathlosses of one random scene with its selected RIS.
fn draw_links(sampler: &SceneSampler, rng: &mut ChaCha8Rng) -> Result<(LinkPathlosses, usize)> {
    let scene = sampler.sample(rng)?;
    let l = scene.select_ris()?;
    Ok((LinkPathlosses::from_scene(&scene, l)?, l))
}

/// `rho0` for `config`, from its own stream of calibration scenes.
pub fn calibrate(config: &GenConfig, seed: u64) -> Result<f64> {
    config.validate()?;
    let sampler = SceneSampler::new(config.scene.clone())?;
    let mut rng = stream_rng(seed, CALIBRATION_STREAM);
    let links =
        (0..config.calibration_scenes).map(|_| draw_links(&sampler, &mut rng).map(|(links, _)| links)).collect::<Result<Vec<_>>>()?;
    Ok(calibrate_rho0(&links, config.eta, config.sigma2, config.target_db)?)
}

/// Mean over samples and links (transmitter-RIS, RIS-user, direct) of the
/// per-link mean entry power over noise, in dB.
pub fn empirical_ratio_db(samples: &[ChannelSet]) -> f64 {
    let per_sample = |ch: &ChannelSet| {
        let mean_power = |z: &[C64]| z.iter().map(|v| v.norm_sqr()).sum::<f64>() / z.len() as f64;
        let k = ch.h_ru.len();
        let total = mean_power(ch.h_tr.as_slice())
            + ch.h_ru.iter().map(|h| mean_power(h.as_slice())).sum::<f64>()
            + ch.g.iter().map(|g| mean_power(g.as_slice())).sum::<f64>();
        let noise = ch.sigma2.iter().sum::<f64>() / k as f64;
        total / (2 * k + 1) as f64 / noise
    };
    let mean = samples.iter().map(per_sample).sum::<f64>() / samples.len() as f64;
    10.0 * mean.log10()
}

/// Calibrates `rho0`, then draws `count` samples, sample `i` from stream `i`
/// of `seed`.
pub fn generate(config: &GenConfig, count: usize, seed: u64) -> Result<(Dataset, DatasetMeta)> {
    if count == 0 {
        return Err(DatasetError::InvalidConfig("sample count must be positive".into()));
    }
    let rho0 = calibrate(config, seed)?;
    let sampler = SceneSampler::new(config.scene.clone())?;
    let dims = config.dims();
    let model = config.model(rho0);
    let k = dims.k;
    let drawn = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let (links, l) = draw_links(&sampler, &mut rng)?;
            let mut ch = sample_channels(&links, dims, &model, &mut rng)?;
            ch.sigma2 = vec![config.sigma2; k];
            ch.user_weight = vec![config.user_weight; k];
            Ok((ch, l))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ris_usage = vec![0; sampler.ris().len()];
    for (_, l) in &drawn {
        ris_usage[*l] += 1;
    }
    let samples: Vec<ChannelSet> = drawn.into_iter().map(|(ch, _)| ch).collect();
    let meta = DatasetMeta { config: config.clone(), seed, count, rho0, empirical_db: empirical_ratio_db(&samples), ris_usage };
    Ok((Dataset { dims, samples }, meta))
}

fn sample_len(d: Dims) -> usize {
    d.input_len() + 2 * d.k
}

/// Serialises `data` in the binary layout described above.
pub fn to_bytes(data: &Dataset) -> Result<Vec<u8>> {
    let d = data.dims;
    let header = [d.k, d.n, d.n_t, data.samples.len()]
        .iter()
        .map(|&v| u32::try_from(v).map_err(|_| DatasetError::Format(format!("{v} does not fit a u32 header field"))))
        .collect::<Result<Vec<u32>>>()?;
    let mut out = Vec::with_capacity(HEADER_LEN + data.samples.len() * sample_len(d) * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in header {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for ch in &data.samples {
        if ch.dims() != d {
            return Err(DatasetError::Format(format!("sample of shape {:?} in a {d:?} dataset", ch.dims())));
        }
        let complex =
            ch.h_tr.as_slice().iter().chain(ch.h_ru.iter().flat_map(|h| h.as_slice())).chain(ch.g.iter().flat_map(|g| g.as_slice()));
        for z in complex {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
        for v in ch.sigma2.iter().chain(&ch.user_weight) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses the binary layout; `p_max` is not stored per sample.
pub fn from_bytes(bytes: &[u8], p_max: f64) -> Result<Dataset> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(DatasetError::Format("missing RISD header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    if word(0) != VERSION as usize {
        return Err(DatasetError::Format(format!("unsupported version {}", word(0))));
    }
    let dims = Dims::new(word(1), word(2), word(3));
    let count = word(4);
    if dims.k == 0 || dims.n == 0 || dims.n_t == 0 {
        return Err(DatasetError::Format(format!("degenerate dimensions {dims:?}")));
    }
    let per = sample_len(dims) * 8;
    let expected = count.checked_mul(per).and_then(|b| b.checked_add(HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(DatasetError::Format(format!("{} bytes for {count} samples of {dims:?}", bytes.len())));
    }
    let samples = bytes[HEADER_LEN..]
        .chunks_exact(per)
        .map(|chunk| {
            let vals: Vec<f64> = chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
            let mut pos = 0;
            let mut take = |len: usize| {
                let zs: Vec<C64> = vals[pos..pos + 2 * len].chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect();
                pos += 2 * len;
                zs
            };
            let h_tr = CMat::from_vec(dims.n, dims.n_t, take(dims.n * dims.n_t)).map_err(TransmitError::from)?;
            let h_ru =
                (0..dims.k).map(|_| CVec::new(take(dims.n))).collect::<std::result::Result<Vec<_>, _>>().map_err(TransmitError::from)?;
            let g =
                (0..dims.k).map(|_| CVec::new(take(dims.n_t))).collect::<std::result::Result<Vec<_>, _>>().map_err(TransmitError::from)?;
            let tail = &vals[dims.input_len()..];
            let (sigma2, weights) = tail.split_at(dims.k);
            Ok(ChannelSet::new(h_tr, h_ru, g, sigma2.to_vec(), weights.to_vec(), p_max)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { dims, samples })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the binary file and its JSON sidecar.
pub fn save(path: &Path, data: &Dataset, meta: &DatasetMeta) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&to_bytes(data)?)?;
    f.sync_all()?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

/// Reads a dataset and its sidecar; `p_max` comes from the sidecar.
pub fn load(path: &Path) -> Result<(Dataset, DatasetMeta)> {
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let data = from_bytes(&fs::read(path)?, meta.config.p_max)?;
    if data.samples.len() != meta.count || data.dims != meta.config.dims() {
        return Err(DatasetError::Format("sidecar does not describe the binary file".into()));
    }
    Ok((data, meta))
}

#[cfg(test)]
mod tests;
