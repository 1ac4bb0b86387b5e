//! Top-view world model: transmitter, RIS panels, users and polygonal
//! obstacles, with obstacle-aware effective pathlosses and RIS selection.
//!
//! Coordinates are meters with the transmitter at the origin. A link's
//! attenuation factor is `1 + kappa * d`, where `d` is the total length of
//! the link segment lying strictly inside obstacles; grazing an obstacle
//! edge costs nothing.

mod sampler;

pub use sampler::{SamplerConfig, SceneSampler};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("negative or non-finite input: {0}")]
    InvalidInput(String),
    #[error("index {index} out of range ({len} available)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("scene has no RIS")]
    NoRis,
    #[error("malformed scene JSON at line {line}, column {column}: {msg}")]
    Json { line: usize, column: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, GeometryError>;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(&self, o: &Point2) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    fn sub(&self, o: &Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    fn lerp(&self, o: &Point2, t: f64) -> Point2 {
        Point2::new(self.x + t * (o.x - self.x), self.y + t * (o.y - self.y))
    }
}

fn cross(a: Point2, b: Point2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn dot(a: Point2, b: Point2) -> f64 {
    a.x * b.x + a.y * b.y
}

fn point_segment_dist(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let ab = b.sub(a);
    let l2 = dot(ab, ab);
    if l2 == 0.0 {
        return p.dist(a);
    }
    let t = (dot(p.sub(a), ab) / l2).clamp(0.0, 1.0);
    p.dist(&a.lerp(b, t))
}

/// Whether closed segments `ab` and `cd` share at least one point.
fn segments_touch(a: &Point2, b: &Point2, c: &Point2, d: &Point2) -> bool {
    let o = |p: &Point2, q: &Point2, r: &Point2| cross(q.sub(p), r.sub(p));
    let (d1, d2, d3, d4) = (o(c, d, a), o(c, d, b), o(a, b, c), o(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    point_segment_dist(a, c, d) < EPS
        || point_segment_dist(b, c, d) < EPS
        || point_segment_dist(c, a, b) < EPS
        || point_segment_dist(d, a, b) < EPS
}

/// Simple polygon with counter-clockwise vertex order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "Vec<Point2>")]
pub struct Polygon {
    vertices: Vec<Point2>,
}

impl From<Polygon> for Vec<Point2> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

impl Polygon {
    /// Validates and normalises to counter-clockwise order.
    pub fn new(mut vertices: Vec<Point2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(GeometryError::DegeneratePolygon(format!("{} vertices", vertices.len())));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::DegeneratePolygon("non-finite vertex".into()));
        }
        let area = signed_area(&vertices);
        if area.abs() < EPS {
            return Err(GeometryError::DegeneratePolygon("zero area".into()));
        }
        let n = vertices.len();
        for i in 0..n {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            if a.dist(&b) < EPS {
                return Err(GeometryError::DegeneratePolygon(format!("repeated vertex {i}")));
            }
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                if segments_touch(&a, &b, &c, &d) {
                    return Err(GeometryError::DegeneratePolygon(format!("edges {i} and {j} intersect")));
                }
            }
        }
        if area < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn boundary_distance(&self, p: &Point2) -> f64 {
        self.edges().map(|(a, b)| point_segment_dist(p, &a, &b)).fold(f64::INFINITY, f64::min)
    }

    /// Crossing-number test, ignoring points within `1e-9` of the boundary.
    pub fn contains_strict(&self, p: &Point2) -> bool {
        if self.boundary_distance(p) < EPS {
            return false;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn centroid(&self) -> Point2 {
        let a = self.area();
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let c = p.x * q.y - q.x * p.y;
            cx += (p.x + q.x) * c;
            cy += (p.y + q.y) * c;
        }
        Point2::new(cx / (6.0 * a), cy / (6.0 * a))
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Polygon {
        Polygon { vertices: self.vertices.iter().map(|p| Point2::new(p.x + dx, p.y + dy)).collect() }
    }

    fn intersects(&self, other: &Polygon) -> bool {
        for (a, b) in self.edges() {
            for (c, d) in other.edges() {
                if segments_touch(&a, &b, &c, &d) {
                    return true;
                }
            }
        }
        other.vertices.iter().any(|v| self.contains_strict(v)) || self.vertices.iter().any(|v| other.contains_strict(v))
    }
}

fn signed_area(v: &[Point2]) -> f64 {
    let n = v.len();
    (0..n).map(|i| cross(v[i], v[(i + 1) % n])).sum::<f64>() / 2.0
}

/// Length of segment `ab` lying strictly inside `poly`.
pub fn penetration_length(a: &Point2, b: &Point2, poly: &Polygon) -> f64 {
    let r = b.sub(a);
    let len = r.x.hypot(r.y);
    if len == 0.0 {
        return 0.0;
    }
    let mut ts = vec![0.0, 1.0];
    for (c, d) in poly.edges() {
        let s = d.sub(&c);
        let qp = c.sub(a);
        let denom = cross(r, s);
        if denom.abs() > EPS * len * s.x.hypot(s.y) {
            let t = cross(qp, s) / denom;
            let u = cross(qp, r) / denom;
            if (-EPS..=1.0 + EPS).contains(&u) && (0.0..=1.0).contains(&t) {
                ts.push(t);
            }
        } else if cross(qp, r).abs() <= EPS * len * len.max(1.0) {
            // collinear: the overlap endpoints bound boundary-only stretches
            for p in [c, d] {
                let t = dot(p.sub(a), r) / (len * len);
                if (0.0..=1.0).contains(&t) {
                    ts.push(t);
                }
            }
        }
    }
    ts.sort_by(|x, y| x.total_cmp(y));
    ts.dedup_by(|x, y| (*x - *y).abs() < 1e-15);
    ts.windows(2)
        .filter(|w| w[1] - w[0] > 1e-15)
        .filter(|w| poly.contains_strict(&a.lerp(b, 0.5 * (w[0] + w[1]))))
        .map(|w| (w[1] - w[0]) * len)
        .sum()
}

/// `1 + kappa * total_penetration`.
pub fn attenuation_factor(total_penetration: f64, kappa: f64) -> Result<f64> {
    if !(total_penetration >= 0.0) || !total_penetration.is_finite() {
        return Err(GeometryError::InvalidInput(format!("penetration {total_penetration}")));
    }
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(GeometryError::InvalidInput(format!("kappa {kappa}")));
    }
    Ok(1.0 + kappa * total_penetration)
}

/// Immutable deployment snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    ris: Vec<Point2>,
    users: Vec<Point2>,
    obstacles: Vec<Polygon>,
    kappa: f64,
}

#[derive(Serialize, Deserialize)]
struct SceneDoc {
    ris: Vec<Point2>,
    users: Vec<Point2>,
    #[serde(default)]
    obstacles: Vec<Vec<Point2>>,
    kappa: f64,
}

impl Scene {
    pub const TRANSMITTER: Point2 = Point2::ORIGIN;

    pub fn new(ris: Vec<Point2>, users: Vec<Point2>, obstacles: Vec<Polygon>, kappa: f64) -> Result<Self> {
        if ris.is_empty() {
            return Err(GeometryError::NoRis);
        }
        if users.is_empty() {
            return Err(GeometryError::InvalidScene("no users".into()));
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(GeometryError::InvalidScene(format!("kappa {kappa}")));
        }
        if ris.iter().chain(&users).any(|p| !p.is_finite()) {
            return Err(GeometryError::InvalidScene("non-finite coordinate".into()));
        }
        for (i, o) in obstacles.iter().enumerate() {
            for (j, other) in obstacles.iter().enumerate().skip(i + 1) {
                if o.intersects(other) {
                    return Err(GeometryError::InvalidScene(format!("obstacles {i} and {j} overlap")));
                }
            }
            if o.contains_strict(&Self::TRANSMITTER) {
                return Err(GeometryError::InvalidScene(format!("transmitter inside obstacle {i}")));
            }
            if let Some(k) = users.iter().position(|u| o.contains_strict(u)) {
                return Err(GeometryError::InvalidScene(format!("user {k} inside obstacle {i}")));
            }
            if let Some(l) = ris.iter().position(|r| o.contains_strict(r)) {
                return Err(GeometryError::InvalidScene(format!("RIS {l} inside obstacle {i}")));
            }
        }
        Ok(Self { ris, users, obstacles, kappa })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SceneDoc =
            serde_json::from_str(text).map_err(|e| GeometryError::Json { line: e.line(), column: e.column(), msg: e.to_string() })?;
        let obstacles = doc.obstacles.into_iter().map(Polygon::new).collect::<Result<Vec<_>>>()?;
        Self::new(doc.ris, doc.users, obstacles, doc.kappa)
    }

    pub fn to_json(&self) -> String {
        let doc = SceneDoc {
            ris: self.ris.clone(),
            users: self.users.clone(),
            obstacles: self.obstacles.iter().map(|p| p.vertices.clone()).collect(),
            kappa: self.kappa,
        };
        serde_json::to_string_pretty(&doc).expect("scene serialises")
    }

    pub fn ris(&self) -> &[Point2] {
        &self.ris
    }

    pub fn users(&self) -> &[Point2] {
        &self.users
    }

    pub fn obstacles(&self) -> &[Polygon] {
        &self.obstacles
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Same RIS layout and kappa with different users and obstacles.
    pub fn with_content(&self, users: Vec<Point2>, obstacles: Vec<Polygon>) -> Result<Scene> {
        Scene::new(self.ris.clone(), users, obstacles, self.kappa)
    }

    pub fn total_penetration(&self, a: &Point2, b: &Point2) -> f64 {
        self.obstacles.iter().map(|o| penetration_length(a, b, o)).sum()
    }

    /// Attenuation factor of the straight link `a -> b`.
    pub fn link_attenuation(&self, a: &Point2, b: &Point2) -> f64 {
        1.0 + self.kappa * self.total_penetration(a, b)
    }

    fn ris_at(&self, l: usize) -> Result<&Point2> {
        self.ris.get(l).ok_or(GeometryError::IndexOutOfRange { index: l, len: self.ris.len() })
    }

    fn user_at(&self, k: usize) -> Result<&Point2> {
        self.users.get(k).ok_or(GeometryError::IndexOutOfRange { index: k, len: self.users.len() })
    }

    /// Transmitter to RIS `l`.
    pub fn effective_pathloss_tr(&self, l: usize) -> Result<f64> {
        let r = self.ris_at(l)?;
        Ok(self.link_attenuation(&Self::TRANSMITTER, r) * Self::TRANSMITTER.dist(r))
    }

    /// RIS `l` to user `k`.
    pub fn effective_pathloss_ru(&self, l: usize, k: usize) -> Result<f64> {
        let (r, u) = (self.ris_at(l)?, self.user_at(k)?);
        Ok(self.link_attenuation(r, u) * r.dist(u))
    }

    /// Direct transmitter to user `k`.
    pub fn effective_pathloss_tu(&self, k: usize) -> Result<f64> {
        let u = self.user_at(k)?;
        Ok(self.link_attenuation(&Self::TRANSMITTER, u) * Self::TRANSMITTER.dist(u))
    }

    /// Sum over users of the cascade pathloss through RIS `l`.
    pub fn cascade_cost(&self, l: usize) -> Result<f64> {
        let tr = self.effective_pathloss_tr(l)?;
        let mut s = 0.0;
        for k in 0..self.users.len() {
            s += tr * self.effective_pathloss_ru(l, k)?;
        }
        Ok(s)
    }

    /// RIS minimising the summed cascade pathloss; lowest index wins ties.
    pub fn select_ris(&self) -> Result<usize> {
        let costs = (0..self.ris.len()).map(|l| self.cascade_cost(l)).collect::<Result<Vec<_>>>()?;
        argmin_lowest(&costs).ok_or(GeometryError::NoRis)
    }

    /// Per-RIS rows of `(e_tr, [e_ru per user], cascade cost)`.
    pub fn pathloss_table(&self) -> Result<Vec<PathlossRow>> {
        (0..self.ris.len())
            .map(|l| {
                Ok(PathlossRow {
                    ris: l,
                    tr: self.effective_pathloss_tr(l)?,
                    ru: (0..self.users.len()).map(|k| self.effective_pathloss_ru(l, k)).collect::<Result<_>>()?,
                    cascade: self.cascade_cost(l)?,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PathlossRow {
    pub ris: usize,
    pub tr: f64,
    pub ru: Vec<f64>,
    pub cascade: f64,
}

pub(crate) fn argmin_lowest(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if !(v < values[b]) => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Free-function form of [`Scene::select_ris`].
pub fn select_ris(scene: &Scene) -> Result<usize> {
    scene.select_ris()
}
