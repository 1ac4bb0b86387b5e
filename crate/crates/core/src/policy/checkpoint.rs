//! Binary checkpoint layout, all integers `u32` and all reals `f64`, little
//! endian: magic `RISM`, version, `K`, `N`, `N_T`, hidden layer count, the
//! widths, then per hidden layer `W, b, gamma, beta, running_mean,
//! running_var`, then the power head `W, b` and the phase head `W, b`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::transmit::Dims;

use super::{Dense, EpochLog, HiddenLayer, MLPParams, PolicyError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RISM";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_WIDTH: u32 = 1 << 20;
const MAX_PARAMETERS: usize = 1 << 28;

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    dims: Dims,
    hidden: Vec<usize>,
    log: Vec<EpochLog>,
}

impl MLPParams {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dims();
        w.write_all(CHECKPOINT_MAGIC)?;
        let widths = self.widths();
        let header = [CHECKPOINT_VERSION, d.k as u32, d.n as u32, d.n_t as u32, widths.len() as u32];
        for v in header.into_iter().chain(widths.iter().map(|&x| x as u32)) {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut put = |xs: &[f64]| -> std::io::Result<()> { xs.iter().try_for_each(|x| w.write_all(&x.to_le_bytes())) };
        for l in self.hidden() {
            put(l.dense.weight.data())?;
            put(l.dense.bias.data())?;
            put(l.gamma.data())?;
            put(l.beta.data())?;
            put(&l.running_mean)?;
            put(&l.running_var)?;
        }
        for head in [self.power_head(), self.phase_head()] {
            put(head.weight.data())?;
            put(head.bias.data())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(PolicyError::Checkpoint(format!("bad magic {magic:?}")));
        }
        let mut u32_at = || -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = u32_at()?;
        if version != CHECKPOINT_VERSION {
            return Err(PolicyError::Checkpoint(format!("unsupported version {version}")));
        }
        let (k, n, n_t, layers) = (u32_at()?, u32_at()?, u32_at()?, u32_at()?);
        if [k, n, n_t, layers].iter().any(|&v| v == 0 || v > MAX_WIDTH) {
            return Err(PolicyError::Checkpoint(format!("implausible header K={k} N={n} N_T={n_t} layers={layers}")));
        }
        let widths = (0..layers).map(|_| u32_at()).collect::<Result<Vec<_>>>()?;
        if widths.iter().any(|&v| v == 0 || v > MAX_WIDTH) {
            return Err(PolicyError::Checkpoint(format!("implausible widths {widths:?}")));
        }
        let dims = Dims::new(k as usize, n as usize, n_t as usize);
        let mut chain = vec![dims.input_len()];
        chain.extend(widths.iter().map(|&w| w as usize));
        let total: usize = chain.windows(2).map(|p| p[0] * p[1]).sum::<usize>() + (dims.k + dims.n) * chain[chain.len() - 1];
        if total > MAX_PARAMETERS {
            return Err(PolicyError::Checkpoint(format!("{total} weights exceed the supported size")));
        }
        let mut fin = dims.input_len();
        let mut hidden = Vec::with_capacity(widths.len());
        for &w in &widths {
            let w = w as usize;
            hidden.push(HiddenLayer {
                dense: read_dense(&mut r, w, fin)?,
                gamma: Tensor::new(vec![w], read_f64s(&mut r, w)?)?,
                beta: Tensor::new(vec![w], read_f64s(&mut r, w)?)?,
                running_mean: read_f64s(&mut r, w)?,
                running_var: read_f64s(&mut r, w)?,
            });
            fin = w;
        }
        let power_head = read_dense(&mut r, dims.k, fin)?;
        let phase_head = read_dense(&mut r, dims.n, fin)?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(PolicyError::Checkpoint("trailing bytes".into()));
        }
        MLPParams::from_parts(dims, hidden, power_head, phase_head)
    }
}

fn read_f64s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * len];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

fn read_dense<R: Read>(r: &mut R, fout: usize, fin: usize) -> Result<Dense> {
    Ok(Dense { weight: Tensor::new(vec![fout, fin], read_f64s(r, fout * fin)?)?, bias: Tensor::new(vec![fout], read_f64s(r, fout)?)? })
}

/// Path of the JSON training-log sidecar written next to a checkpoint.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the binary checkpoint and its JSON sidecar with the training log.
pub fn save_checkpoint(path: &Path, params: &MLPParams, log: &[EpochLog]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    params.write_to(&mut w)?;
    w.flush()?;
    let side = Sidecar { dims: params.dims(), hidden: params.widths(), log: log.to_vec() };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MLPParams> {
    MLPParams::read_from(BufReader::new(File::open(path)?))
}
