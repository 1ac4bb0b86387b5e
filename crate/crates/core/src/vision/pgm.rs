use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Raster, RasterGeometry, Result, VisionError};
use crate::geometry::Point2;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    meters_per_pixel: f64,
    world_origin: Point2,
}

/// JSON file next to an image that carries its world mapping.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Binary 8-bit PGM plus a JSON sidecar with scale and origin.
pub fn write_pgm(path: &Path, raster: &Raster) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", raster.width(), raster.height()).into_bytes();
    bytes.extend_from_slice(raster.pixels());
    fs::write(path, bytes)?;
    let side = Sidecar { meters_per_pixel: raster.meters_per_pixel(), world_origin: raster.world_origin() };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

/// Reads a binary PGM and its sidecar.
pub fn read_pgm(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(VisionError::Format("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(VisionError::Format(format!("unsupported magic {:?}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| VisionError::Format(format!("bad header field {s:?}")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(VisionError::Format(format!("max value {maxval}, expected 255")));
    }
    // exactly one whitespace byte separates the header from the data
    pos += 1;
    let n = w.checked_mul(h).ok_or_else(|| VisionError::Format("image too large".into()))?;
    if bytes.len() < pos || bytes.len() - pos != n {
        return Err(VisionError::Format(format!("expected {n} data bytes")));
    }
    let side: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let geometry = RasterGeometry { width: w, height: h, meters_per_pixel: side.meters_per_pixel, world_origin: side.world_origin };
    Raster::new(geometry, bytes[pos..].to_vec())
}
