//! Deterministic stand-in for a camera-based scene reader: renders a
//! top-view frame of a [`Scene`], finds users and obstacles as
//! intensity-coded blobs, and recovers their world coordinates through
//! Canny edges, Moore contour tracing and Douglas–Peucker simplification.
//!
//! Pixel `(c, r)` has its centre at `world_origin + (c, r) * meters_per_pixel`;
//! world `y` grows with the row index. Obstacles are drawn at intensity
//! [`OBSTACLE_LEVEL`], users as discs of radius [`USER_RADIUS`] at
//! [`USER_LEVEL`], background is zero.

mod canny;
mod contour;
mod pgm;

pub use canny::{canny_edges, gaussian_blur, hysteresis, sobel, EdgeMap, DEFAULT_HIGH, DEFAULT_LOW};
pub use contour::{approx_polygon, bridge_gaps, douglas_peucker_closed, longest_contour, trace_contours, VertexSet, BRIDGE_GAP};
pub use pgm::{read_pgm, sidecar_path, write_pgm};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Point2, Polygon, Scene};

pub const OBSTACLE_LEVEL: u8 = 90;
pub const USER_LEVEL: u8 = 200;
pub const USER_RADIUS: f64 = 0.5;
pub const MIN_SIDE: usize = 16;
pub const MIN_RENDER_SIDE: usize = 64;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("scene content at ({x}, {y}) lies outside the raster")]
    OutOfFrame { x: f64, y: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("bounding box does not intersect the raster")]
    EmptyCrop,
    #[error("no closed contour found")]
    NoContour,
    #[error("malformed image file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, VisionError>;

/// Size and world placement of a raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterGeometry {
    pub width: usize,
    pub height: usize,
    pub meters_per_pixel: f64,
    pub world_origin: Point2,
}

impl RasterGeometry {
    /// Raster whose centre pixel sits at the world origin. Odd sizes put the
    /// origin exactly on a pixel centre.
    pub fn centered(width: usize, height: usize, meters_per_pixel: f64) -> Self {
        let half = |n: usize| (n as f64 - 1.0) / 2.0 * meters_per_pixel;
        Self { width, height, meters_per_pixel, world_origin: Point2::new(-half(width), -half(height)) }
    }

    fn validate(&self, min: usize) -> Result<()> {
        if self.width < min || self.height < min {
            return Err(VisionError::InvalidRaster(format!("{}x{} is below {min}x{min}", self.width, self.height)));
        }
        if !(self.meters_per_pixel > 0.0) || !self.meters_per_pixel.is_finite() || !self.world_origin.is_finite() {
            return Err(VisionError::InvalidRaster("scale and origin must be finite and positive".into()));
        }
        Ok(())
    }

    pub fn pixel_to_world(&self, x: f64, y: f64) -> Point2 {
        Point2::new(self.world_origin.x + x * self.meters_per_pixel, self.world_origin.y + y * self.meters_per_pixel)
    }

    pub fn world_to_pixel(&self, p: &Point2) -> (f64, f64) {
        ((p.x - self.world_origin.x) / self.meters_per_pixel, (p.y - self.world_origin.y) / self.meters_per_pixel)
    }

    fn contains_world(&self, p: &Point2) -> bool {
        let (x, y) = self.world_to_pixel(p);
        x >= -0.5 && y >= -0.5 && x <= self.width as f64 - 0.5 && y <= self.height as f64 - 0.5
    }
}

impl Default for RasterGeometry {
    /// 401 x 401 pixels at 0.1 m, covering +-20 m.
    fn default() -> Self {
        Self::centered(401, 401, 0.1)
    }
}

/// Grayscale frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    geometry: RasterGeometry,
    pixels: Vec<u8>,
}

impl Raster {
    pub fn new(geometry: RasterGeometry, pixels: Vec<u8>) -> Result<Self> {
        geometry.validate(MIN_SIDE)?;
        if pixels.len() != geometry.width * geometry.height {
            return Err(VisionError::InvalidRaster(format!("{} pixels for {}x{}", pixels.len(), geometry.width, geometry.height)));
        }
        Ok(Self { geometry, pixels })
    }

    pub fn blank(geometry: RasterGeometry) -> Result<Self> {
        Self::new(geometry, vec![0; geometry.width * geometry.height])
    }

    pub fn geometry(&self) -> &RasterGeometry {
        &self.geometry
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn meters_per_pixel(&self) -> f64 {
        self.geometry.meters_per_pixel
    }

    pub fn world_origin(&self) -> Point2 {
        self.geometry.world_origin
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width() + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        let w = self.width();
        self.pixels[y * w + x] = v;
    }

    /// Fills every pixel whose centre satisfies `inside`, restricted to the
    /// world-space box `[lo, hi]`.
    fn fill_where(&mut self, lo: Point2, hi: Point2, level: u8, inside: impl Fn(&Point2) -> bool) {
        let g = self.geometry;
        let (x0, y0) = g.world_to_pixel(&lo);
        let (x1, y1) = g.world_to_pixel(&hi);
        let clamp = |v: f64, n: usize| v.max(0.0).min(n as f64 - 1.0) as usize;
        for y in clamp(y0.floor(), g.height)..=clamp(y1.ceil(), g.height) {
            for x in clamp(x0.floor(), g.width)..=clamp(x1.ceil(), g.width) {
                if inside(&g.pixel_to_world(x as f64, y as f64)) {
                    self.set(x, y, level);
                }
            }
        }
    }
}

/// Draws obstacles, then user discs, on a blank frame.
pub fn render_top_view(scene: &Scene, geometry: RasterGeometry) -> Result<Raster> {
    geometry.validate(MIN_RENDER_SIDE)?;
    let mut raster = Raster::blank(geometry)?;
    for poly in scene.obstacles() {
        if let Some(v) = poly.vertices().iter().find(|v| !geometry.contains_world(v)) {
            return Err(VisionError::OutOfFrame { x: v.x, y: v.y });
        }
        let (lo, hi) = bounds(poly.vertices());
        raster.fill_where(lo, hi, OBSTACLE_LEVEL, |p| poly.contains_strict(p) || poly.boundary_distance(p) < 1e-9);
    }
    for u in scene.users() {
        let r = USER_RADIUS;
        for corner in [Point2::new(u.x - r, u.y - r), Point2::new(u.x + r, u.y + r)] {
            if !geometry.contains_world(&corner) {
                return Err(VisionError::OutOfFrame { x: u.x, y: u.y });
            }
        }
        let (lo, hi) = (Point2::new(u.x - r, u.y - r), Point2::new(u.x + r, u.y + r));
        raster.fill_where(lo, hi, USER_LEVEL, |p| p.dist(u) <= r);
    }
    Ok(raster)
}

fn bounds(points: &[Point2]) -> (Point2, Point2) {
    let lo = points.iter().fold(Point2::new(f64::INFINITY, f64::INFINITY), |a, p| Point2::new(a.x.min(p.x), a.y.min(p.y)));
    let hi = points.iter().fold(Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY), |a, p| Point2::new(a.x.max(p.x), a.y.max(p.y)));
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    User,
    Obstacle,
}

/// Pixel rectangle: left column, top row, width, height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + (self.w as f64 - 1.0) / 2.0, self.y as f64 + (self.h as f64 - 1.0) / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub category: Category,
    /// Fraction of the bounding box covered by the blob.
    pub score: f64,
    pub bbox: BBox,
}

/// 8-connected components of non-zero pixels, each as a list of pixel
/// indices, in raster order of their first pixel.
fn components(raster: &Raster) -> Vec<Vec<usize>> {
    let (w, h) = (raster.width(), raster.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || raster.pixels[start] == 0 {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && raster.pixels[j] != 0 {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn component_bbox(comp: &[usize], w: usize) -> BBox {
    let xs = comp.iter().map(|i| i % w);
    let ys = comp.iter().map(|i| i / w);
    let (x0, x1) = (xs.clone().min().unwrap_or(0), xs.max().unwrap_or(0));
    let (y0, y1) = (ys.clone().min().unwrap_or(0), ys.max().unwrap_or(0));
    BBox { x: x0, y: y0, w: x1 - x0 + 1, h: y1 - y0 + 1 }
}

/// One object per connected blob; category from the mean intensity, score
/// from the bounding-box fill fraction. Blobs scoring below `threshold` are
/// dropped.
pub fn detect_objects(raster: &Raster, threshold: f64) -> Result<Vec<DetectedObject>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(VisionError::InvalidParameter(format!("threshold {threshold} outside (0, 1)")));
    }
    let split = (OBSTACLE_LEVEL as f64 + USER_LEVEL as f64) / 2.0;
    let mut out = Vec::new();
    for comp in components(raster) {
        let bbox = component_bbox(&comp, raster.width());
        let score = comp.len() as f64 / (bbox.w * bbox.h) as f64;
        if score < threshold {
            continue;
        }
        let mean = comp.iter().map(|&i| raster.pixels[i] as f64).sum::<f64>() / comp.len() as f64;
        let category = if mean > split { Category::User } else { Category::Obstacle };
        out.push(DetectedObject { category, score, bbox });
    }
    Ok(out)
}

/// Sub-raster covering `bbox` grown by `margin_px` on every side, clamped
/// to the frame; the world mapping follows the crop.
pub fn crop(raster: &Raster, bbox: BBox, margin_px: usize) -> Result<Raster> {
    let (w, h) = (raster.width(), raster.height());
    if bbox.w == 0 || bbox.h == 0 || bbox.x >= w || bbox.y >= h {
        return Err(VisionError::EmptyCrop);
    }
    let x0 = bbox.x.saturating_sub(margin_px);
    let y0 = bbox.y.saturating_sub(margin_px);
    let x1 = (bbox.x + bbox.w + margin_px).min(w);
    let y1 = (bbox.y + bbox.h + margin_px).min(h);
    let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0));
    for y in y0..y1 {
        pixels.extend_from_slice(&raster.pixels[y * w + x0..y * w + x1]);
    }
    let g = raster.geometry;
    let geometry = RasterGeometry {
        width: x1 - x0,
        height: y1 - y0,
        meters_per_pixel: g.meters_per_pixel,
        world_origin: g.pixel_to_world(x0 as f64, y0 as f64),
    };
    // crops are exempt from the minimum frame size
    Ok(Raster { geometry, pixels })
}

/// Tuning of the coordinate recovery chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoverConfig {
    pub margin_px: usize,
    pub canny_low: f64,
    pub canny_high: f64,
    pub epsilon_px: f64,
}

impl Default for RecoverConfig {
    fn default() -> Self {
        Self { margin_px: 4, canny_low: DEFAULT_LOW, canny_high: DEFAULT_HIGH, epsilon_px: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovered {
    pub users: Vec<Point2>,
    pub obstacles: Vec<Polygon>,
}

/// Crop around `bbox` and blank everything except the blob that spans it,
/// so neighbouring objects do not leak edges into the crop.
fn isolate(raster: &Raster, bbox: BBox, margin_px: usize) -> Result<Raster> {
    let mut c = crop(raster, bbox, margin_px)?;
    let (ox, oy) = (bbox.x - bbox.x.saturating_sub(margin_px), bbox.y - bbox.y.saturating_sub(margin_px));
    let target = BBox { x: ox, y: oy, w: bbox.w, h: bbox.h };
    let keep = components(&c).into_iter().filter(|comp| component_bbox(comp, c.width()) == target).max_by_key(|comp| comp.len());
    let mut mask = vec![0u8; c.pixels.len()];
    for i in keep.into_iter().flatten() {
        mask[i] = c.pixels[i];
    }
    c.pixels = mask;
    Ok(c)
}

/// World-space users (contour centroids) and obstacle polygons for the
/// detected objects of `raster`.
pub fn recover_coordinates(objects: &[DetectedObject], raster: &Raster, config: &RecoverConfig) -> Result<Recovered> {
    let mut users = Vec::new();
    let mut obstacles = Vec::new();
    for obj in objects {
        let c = isolate(raster, obj.bbox, config.margin_px)?;
        let edges = canny_edges(&c, config.canny_low, config.canny_high)?;
        let g = c.geometry();
        match obj.category {
            Category::User => {
                let contour = longest_contour(&edges).ok_or(VisionError::NoContour)?;
                let n = contour.len() as f64;
                let cx = contour.iter().map(|p| p.0 as f64).sum::<f64>() / n;
                let cy = contour.iter().map(|p| p.1 as f64).sum::<f64>() / n;
                users.push(g.pixel_to_world(cx, cy));
            }
            Category::Obstacle => {
                let vs = approx_polygon(&edges, config.epsilon_px)?;
                let world = vs.vertices.iter().map(|v| g.pixel_to_world(v.x, v.y)).collect();
                obstacles.push(Polygon::new(world)?);
            }
        }
    }
    Ok(Recovered { users, obstacles })
}

/// Full vision chain: detect, recover, and rebuild a scene around the given
/// RIS layout.
pub fn recover_scene(raster: &Raster, ris: Vec<Point2>, kappa: f64, threshold: f64, config: &RecoverConfig) -> Result<Scene> {
    let objects = detect_objects(raster, threshold)?;
    let rec = recover_coordinates(&objects, raster, config)?;
    Ok(Scene::new(ris, rec.users, rec.obstacles, kappa)?)
}

#[cfg(test)]
mod tests;
