use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Point2, Polygon, Result, Scene};

/// Distribution of random deployments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Content stays within `[-half_extent, half_extent]^2`.
    pub half_extent: f64,
    pub num_ris: usize,
    /// Fixed RIS positions; when empty, `num_ris` panels are placed evenly on
    /// a ring of radius `ris_ring_radius`.
    pub ris_layout: Vec<Point2>,
    pub ris_ring_radius: f64,
    pub num_users: usize,
    pub max_obstacles: usize,
    pub obstacle_radius: (f64, f64),
    pub max_obstacle_vertices: usize,
    pub kappa: f64,
    /// Minimum distance from a user to the transmitter and to every RIS.
    pub min_link_distance: f64,
    /// Gap kept between obstacles, users and RIS panels.
    pub clearance: f64,
    pub user_radius: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            half_extent: 19.0,
            num_ris: 6,
            ris_layout: Vec::new(),
            ris_ring_radius: 12.0,
            num_users: 4,
            max_obstacles: 5,
            obstacle_radius: (1.5, 3.5),
            max_obstacle_vertices: 6,
            kappa: 0.5,
            min_link_distance: 2.0,
            clearance: 1.0,
            user_radius: 0.5,
        }
    }
}

/// Draws random scenes with a fixed RIS layout.
#[derive(Debug, Clone)]
pub struct SceneSampler {
    config: SamplerConfig,
    ris: Vec<Point2>,
}

const MAX_TRIES: usize = 10_000;

impl SceneSampler {
    pub fn new(config: SamplerConfig) -> Result<Self> {
        let ris = if config.ris_layout.is_empty() {
            if config.num_ris == 0 {
                return Err(GeometryError::NoRis);
            }
            (0..config.num_ris)
                .map(|l| {
                    let a = TAU * (l as f64 + 0.5) / config.num_ris as f64;
                    Point2::new(config.ris_ring_radius * a.cos(), config.ris_ring_radius * a.sin())
                })
                .collect()
        } else {
            config.ris_layout.clone()
        };
        if config.num_users == 0 || !(config.half_extent > 0.0) {
            return Err(GeometryError::InvalidScene("sampler needs users and a positive extent".into()));
        }
        Ok(Self { config, ris })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn ris(&self) -> &[Point2] {
        &self.ris
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Scene> {
        let c = &self.config;
        let n_obs = rng.random_range(0..=c.max_obstacles);
        let mut obstacles: Vec<Polygon> = Vec::with_capacity(n_obs);
        let mut tries = 0;
        while obstacles.len() < n_obs && tries < MAX_TRIES {
            tries += 1;
            let poly = self.random_convex(rng)?;
            let clear_of_points = std::iter::once(&Scene::TRANSMITTER)
                .chain(&self.ris)
                .all(|p| !poly.contains_strict(p) && poly.boundary_distance(p) > c.clearance);
            let clear_of_obstacles = obstacles.iter().all(|o| polygon_gap(o, &poly) > c.clearance);
            if clear_of_points && clear_of_obstacles {
                obstacles.push(poly);
            }
        }
        let mut users = Vec::with_capacity(c.num_users);
        let lim = c.half_extent - c.user_radius - c.clearance;
        tries = 0;
        while users.len() < c.num_users {
            tries += 1;
            if tries > MAX_TRIES {
                return Err(GeometryError::InvalidScene("could not place users".into()));
            }
            let u = Point2::new(rng.random_range(-lim..lim), rng.random_range(-lim..lim));
            let far_from_nodes = std::iter::once(&Scene::TRANSMITTER).chain(&self.ris).all(|p| p.dist(&u) >= c.min_link_distance);
            let clear_of_obstacles =
                obstacles.iter().all(|o| !o.contains_strict(&u) && o.boundary_distance(&u) > c.user_radius + c.clearance);
            let clear_of_users = users.iter().all(|v: &Point2| v.dist(&u) > 2.0 * c.user_radius + c.clearance);
            if far_from_nodes && clear_of_obstacles && clear_of_users {
                users.push(u);
            }
        }
        Scene::new(self.ris.clone(), users, obstacles, c.kappa)
    }

    fn random_convex<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Polygon> {
        let c = &self.config;
        let (rmin, rmax) = c.obstacle_radius;
        let r = rng.random_range(rmin..=rmax);
        let lim = c.half_extent - r;
        let center = Point2::new(rng.random_range(-lim..lim), rng.random_range(-lim..lim));
        let n = rng.random_range(3..=c.max_obstacle_vertices.max(3));
        // arcs between consecutive vertices vary by at most 30% around even
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.7..1.3)).collect();
        let total: f64 = weights.iter().sum();
        let start = rng.random_range(0.0..TAU);
        let mut angle = start;
        let mut vertices = Vec::with_capacity(n);
        for w in &weights {
            vertices.push(Point2::new(center.x + r * angle.cos(), center.y + r * angle.sin()));
            angle += TAU * w / total;
        }
        Polygon::new(vertices)
    }
}

/// Smallest distance between the boundaries of two disjoint polygons, zero
/// when they touch or overlap.
pub(crate) fn polygon_gap(a: &Polygon, b: &Polygon) -> f64 {
    if a.intersects(b) {
        return 0.0;
    }
    let d1 = b.vertices().iter().map(|v| a.boundary_distance(v)).fold(f64::INFINITY, f64::min);
    let d2 = a.vertices().iter().map(|v| b.boundary_distance(v)).fold(f64::INFINITY, f64::min);
    d1.min(d2)
}
