use rayon::prelude::*;
use serde::Serialize;

use ris_core::dataset::stream_rng;
use ris_core::geometry::{PathlossRow, Polygon, Scene, SceneSampler};
use ris_core::vision::{recover_scene, render_top_view};

use crate::{CliError, Result, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Via {
    /// Ground-truth coordinates.
    Geometry,
    /// Render, detect, recover, then select on the recovered scene.
    Vision,
}

#[derive(Debug, Clone, Serialize)]
pub struct Selection {
    pub via: Via,
    pub index: usize,
    pub table: Vec<PathlossRow>,
}

/// Selected panel and pathloss table of `scene`.
pub fn select(config: &RunConfig, scene: &Scene, via: Via) -> Result<Selection> {
    let target = match via {
        Via::Geometry => scene.clone(),
        Via::Vision => {
            let raster = render_top_view(scene, config.raster)?;
            recover_scene(&raster, scene.ris().to_vec(), scene.kappa(), config.detection_threshold, &config.recover)?
        }
    };
    Ok(Selection { via, index: target.select_ris()?, table: target.pathloss_table()? })
}

/// Vision against geometry selection over random scenes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub scenes: usize,
    pub agree: usize,
    pub rate: f64,
    /// Scenes where recovery failed outright; they count as disagreements.
    pub failed: usize,
    /// Scenes with fewer or more recovered objects than the truth.
    pub object_count_mismatch: usize,
    pub missed_obstacles: usize,
    pub missed_users: usize,
    /// Recovered obstacles matched to a true one.
    pub polygons: usize,
    pub polygons_within_tolerance: usize,
    pub vertex_tolerance_px: f64,
    /// Largest symmetric vertex distance over matched polygons, pixels.
    pub worst_vertex_px: f64,
}

struct SceneOutcome {
    agree: bool,
    failed: bool,
    count_mismatch: bool,
    missed_obstacles: usize,
    missed_users: usize,
    vertex_px: Vec<f64>,
}

/// Largest distance from a vertex of either polygon to the nearest vertex of
/// the other.
fn vertex_distance(a: &Polygon, b: &Polygon) -> f64 {
    let one_way = |p: &Polygon, q: &Polygon| {
        p.vertices().iter().map(|u| q.vertices().iter().map(|v| u.dist(v)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
    };
    one_way(a, b).max(one_way(b, a))
}

fn compare(config: &RunConfig, truth: &Scene) -> Result<SceneOutcome> {
    let expected = truth.select_ris()?;
    let recovered = render_top_view(truth, config.raster)
        .map_err(CliError::from)
        .and_then(|r| Ok(recover_scene(&r, truth.ris().to_vec(), truth.kappa(), config.detection_threshold, &config.recover)?));
    let Ok(found) = recovered else {
        return Ok(SceneOutcome {
            agree: false,
            failed: true,
            count_mismatch: true,
            missed_obstacles: truth.obstacles().len(),
            missed_users: truth.users().len(),
            vertex_px: Vec::new(),
        });
    };
    let mpp = config.raster.meters_per_pixel;
    let vertex_px = found
        .obstacles()
        .iter()
        .map(|b| {
            let c = b.centroid();
            let a = truth
                .obstacles()
                .iter()
                .min_by(|x, y| x.centroid().dist(&c).total_cmp(&y.centroid().dist(&c)))
                .expect("a recovered obstacle implies a true one");
            vertex_distance(a, b) / mpp
        })
        .collect();
    Ok(SceneOutcome {
        agree: found.select_ris()? == expected,
        failed: false,
        count_mismatch: found.obstacles().len() != truth.obstacles().len() || found.users().len() != truth.users().len(),
        missed_obstacles: truth.obstacles().len().saturating_sub(found.obstacles().len()),
        missed_users: truth.users().len().saturating_sub(found.users().len()),
        vertex_px,
    })
}

/// Runs both selection paths on `scenes` sampled scenes; scene `i` uses
/// stream `i` of `seed`.
pub fn agreement(config: &RunConfig, scenes: usize, seed: u64, vertex_tolerance_px: f64) -> Result<AgreementReport> {
    if scenes == 0 {
        return Err(CliError::Invalid("agreement run needs at least one scene".into()));
    }
    let sampler = SceneSampler::new(config.sampler_config())?;
    let outcomes = (0..scenes)
        .into_par_iter()
        .map(|i| compare(config, &sampler.sample(&mut stream_rng(seed, i as u64))?))
        .collect::<Result<Vec<_>>>()?;
    let all_px: Vec<f64> = outcomes.iter().flat_map(|o| o.vertex_px.iter().copied()).collect();
    let agree = outcomes.iter().filter(|o| o.agree).count();
    Ok(AgreementReport {
        scenes,
        agree,
        rate: agree as f64 / scenes as f64,
        failed: outcomes.iter().filter(|o| o.failed).count(),
        object_count_mismatch: outcomes.iter().filter(|o| o.count_mismatch).count(),
        missed_obstacles: outcomes.iter().map(|o| o.missed_obstacles).sum(),
        missed_users: outcomes.iter().map(|o| o.missed_users).sum(),
        polygons: all_px.len(),
        polygons_within_tolerance: all_px.iter().filter(|&&d| d <= vertex_tolerance_px).count(),
        vertex_tolerance_px,
        worst_vertex_px: all_px.iter().copied().fold(0.0, f64::max),
    })
}
