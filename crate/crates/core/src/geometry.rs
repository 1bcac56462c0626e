//! Workspace geometry: parametric obstacles, their sampled point clouds and
//! analytic collision queries.
//!
//! The workspace is the box `[-1, 1]^d` with `d` in `{2, 3}`. Circles are
//! spheres when `d = 3`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Points sampled per obstacle.
pub const POINTS_PER_OBSTACLE: usize = 64;
/// Inflation applied to every obstacle when an environment is built.
pub const DEFAULT_INFLATION: f64 = 0.02;
pub const WORKSPACE_MIN: f64 = -1.0;
pub const WORKSPACE_MAX: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: &[f64]) -> Self {
        Point(coords.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Obstacle {
    Circle { center: Point, radius: f64 },
    #[serde(rename = "box")]
    AxisBox { min: Point, max: Point },
}

impl Obstacle {
    pub fn circle(center: &[f64], radius: f64) -> Self {
        Obstacle::Circle { center: Point::new(center), radius }
    }

    pub fn axis_box(min: &[f64], max: &[f64]) -> Self {
        Obstacle::AxisBox { min: Point::new(min), max: Point::new(max) }
    }

    pub fn dim(&self) -> usize {
        match self {
            Obstacle::Circle { center, .. } => center.dim(),
            Obstacle::AxisBox { min, .. } => min.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |p: &Point| p.0.iter().all(|x| x.is_finite());
        match self {
            Obstacle::Circle { center, radius } => {
                if !(*radius > 0.0) || !radius.is_finite() || !finite(center) {
                    return Err(Error::DegenerateObstacle(format!("circle radius {radius}")));
                }
            }
            Obstacle::AxisBox { min, max } => {
                if min.dim() != max.dim() || !finite(min) || !finite(max) {
                    return Err(Error::DegenerateObstacle("box corners".into()));
                }
                if min.0.iter().zip(&max.0).any(|(a, b)| !(a < b)) {
                    return Err(Error::DegenerateObstacle("empty box".into()));
                }
            }
        }
        if !(2..=3).contains(&self.dim()) {
            return Err(Error::DegenerateObstacle(format!("dimension {}", self.dim())));
        }
        Ok(())
    }

    /// Grows the obstacle by `by` in every direction.
    pub fn inflate(&self, by: f64) -> Obstacle {
        match self {
            Obstacle::Circle { center, radius } => {
                Obstacle::Circle { center: center.clone(), radius: radius + by }
            }
            Obstacle::AxisBox { min, max } => Obstacle::AxisBox {
                min: Point(min.0.iter().map(|x| x - by).collect()),
                max: Point(max.0.iter().map(|x| x + by).collect()),
            },
        }
    }

    /// Euclidean distance from `p` to the obstacle, zero inside.
    pub fn distance(&self, p: &[f64]) -> f64 {
        match self {
            Obstacle::Circle { center, radius } => (dist(p, &center.0) - radius).max(0.0),
            Obstacle::AxisBox { min, max } => {
                let mut acc = 0.0;
                for k in 0..p.len() {
                    let d = (min.0[k] - p[k]).max(p[k] - max.0[k]).max(0.0);
                    acc += d * d;
                }
                acc.sqrt()
            }
        }
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        match self {
            Obstacle::Circle { center, radius } => dist(p, &center.0) <= radius + tol,
            Obstacle::AxisBox { min, max } => {
                (0..p.len()).all(|k| p[k] >= min.0[k] - tol && p[k] <= max.0[k] + tol)
            }
        }
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Obstacle::Circle { center, radius } => (
                center.0.iter().map(|c| c - radius).collect(),
                center.0.iter().map(|c| c + radius).collect(),
            ),
            Obstacle::AxisBox { min, max } => (min.0.clone(), max.0.clone()),
        }
    }

    pub fn inside_workspace(&self) -> bool {
        let (lo, hi) = self.bounds();
        lo.iter().all(|&x| x >= WORKSPACE_MIN) && hi.iter().all(|&x| x <= WORKSPACE_MAX)
    }
}

fn unit_vector<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Samples `n` points from an obstacle: the first `n / 2` on its boundary,
/// the rest uniformly in its interior.
pub fn sample_obstacle_points<R: Rng>(obstacle: &Obstacle, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    obstacle.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("point count must be >= 1".into()));
    }
    let d = obstacle.dim();
    let n_surface = n / 2;
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        let on_surface = i < n_surface;
        match obstacle {
            Obstacle::Circle { center, radius } => {
                let dir = unit_vector(d, rng);
                let r = if on_surface {
                    *radius
                } else {
                    let u: f64 = rng.random();
                    radius * u.powf(1.0 / d as f64)
                };
                out.extend(center.0.iter().zip(&dir).map(|(c, u)| c + r * u));
            }
            Obstacle::AxisBox { min, max } => {
                let mut p: Vec<f64> =
                    (0..d).map(|k| rng.random_range(min.0[k]..max.0[k])).collect();
                if on_surface {
                    // Pick a face with probability proportional to its measure.
                    let ext: Vec<f64> = (0..d).map(|k| max.0[k] - min.0[k]).collect();
                    let face_area: Vec<f64> = (0..d)
                        .map(|k| (0..d).filter(|&j| j != k).map(|j| ext[j]).product())
                        .collect();
                    let total: f64 = face_area.iter().sum::<f64>() * 2.0;
                    let mut pick = rng.random::<f64>() * total;
                    let mut axis = d - 1;
                    let mut upper = true;
                    'faces: for k in 0..d {
                        for side in [false, true] {
                            if pick < face_area[k] {
                                axis = k;
                                upper = side;
                                break 'faces;
                            }
                            pick -= face_area[k];
                        }
                    }
                    p[axis] = if upper { max.0[axis] } else { min.0[axis] };
                }
                out.extend(p);
            }
        }
    }
    Ok(out)
}

/// Obstacle point clouds, grouped per obstacle.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub d_space: usize,
    pub per_obstacle: usize,
    /// Flat `n_obstacles x per_obstacle x d_space` layout.
    pub points: Vec<f64>,
}

impl PointCloud {
    pub fn empty(d_space: usize) -> Self {
        PointCloud { d_space, per_obstacle: POINTS_PER_OBSTACLE, points: Vec::new() }
    }

    pub fn n_obstacles(&self) -> usize {
        if self.points.is_empty() {
            0
        } else {
            self.points.len() / (self.per_obstacle * self.d_space)
        }
    }

    pub fn n_points(&self) -> usize {
        self.points.len() / self.d_space
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d_space..(i + 1) * self.d_space]
    }

    pub fn obstacle_points(&self, k: usize) -> &[f64] {
        let w = self.per_obstacle * self.d_space;
        &self.points[k * w..(k + 1) * w]
    }

    /// Concatenates clouds, keeping obstacle grouping.
    pub fn merged(clouds: &[&PointCloud]) -> PointCloud {
        let d_space = clouds.first().map_or(2, |c| c.d_space);
        let mut points = Vec::new();
        for c in clouds {
            points.extend_from_slice(&c.points);
        }
        PointCloud { d_space, per_obstacle: POINTS_PER_OBSTACLE, points }
    }
}

pub fn sample_cloud(obstacles: &[Obstacle], d_space: usize, seed: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(obstacles.len() * POINTS_PER_OBSTACLE * d_space);
    for o in obstacles {
        points.extend(sample_obstacle_points(o, POINTS_PER_OBSTACLE, &mut rng)?);
    }
    Ok(PointCloud { d_space, per_obstacle: POINTS_PER_OBSTACLE, points })
}

/// On-disk environment description. The cloud is regenerated from `cloud_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentFile {
    pub id: String,
    pub d_space: usize,
    pub bounds: Vec<[f64; 2]>,
    pub obstacles: Vec<Obstacle>,
    pub cloud_seed: u64,
    #[serde(default = "default_inflation")]
    pub inflation: f64,
}

fn default_inflation() -> f64 {
    DEFAULT_INFLATION
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub id: String,
    pub d_space: usize,
    /// Obstacles as specified, before inflation.
    pub obstacles: Vec<Obstacle>,
    /// Inflated obstacles used for collision checks and the cloud.
    pub inflated: Vec<Obstacle>,
    pub inflation: f64,
    pub cloud_seed: u64,
    pub cloud: PointCloud,
}

impl Environment {
    pub fn new(id: impl Into<String>, d_space: usize, obstacles: Vec<Obstacle>, cloud_seed: u64) -> Result<Self> {
        Self::with_inflation(id, d_space, obstacles, cloud_seed, DEFAULT_INFLATION)
    }

    pub fn with_inflation(
        id: impl Into<String>,
        d_space: usize,
        obstacles: Vec<Obstacle>,
        cloud_seed: u64,
        inflation: f64,
    ) -> Result<Self> {
        if !(2..=3).contains(&d_space) {
            return Err(Error::InvalidArgument(format!("d_space must be 2 or 3, got {d_space}")));
        }
        if !(inflation >= 0.0) {
            return Err(Error::InvalidArgument("inflation must be >= 0".into()));
        }
        for o in &obstacles {
            o.validate()?;
            if o.dim() != d_space {
                return Err(Error::ShapeMismatch { expected: vec![d_space], got: vec![o.dim()] });
            }
            if !o.inside_workspace() {
                return Err(Error::InvalidArgument(format!("obstacle outside workspace: {o:?}")));
            }
        }
        let inflated: Vec<Obstacle> = obstacles.iter().map(|o| o.inflate(inflation)).collect();
        let cloud = sample_cloud(&inflated, d_space, cloud_seed)?;
        Ok(Environment { id: id.into(), d_space, obstacles, inflated, inflation, cloud_seed, cloud })
    }

    pub fn empty(id: impl Into<String>, d_space: usize) -> Self {
        Environment {
            id: id.into(),
            d_space,
            obstacles: Vec::new(),
            inflated: Vec::new(),
            inflation: DEFAULT_INFLATION,
            cloud_seed: 0,
            cloud: PointCloud::empty(d_space),
        }
    }

    /// Union of several environments; obstacle order follows argument order.
    pub fn union(id: impl Into<String>, parts: &[&Environment]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("empty union".into()))?;
        let mut obstacles = Vec::new();
        let mut inflated = Vec::new();
        for p in parts {
            if p.d_space != first.d_space {
                return Err(Error::ShapeMismatch { expected: vec![first.d_space], got: vec![p.d_space] });
            }
            obstacles.extend(p.obstacles.iter().cloned());
            inflated.extend(p.inflated.iter().cloned());
        }
        let clouds: Vec<&PointCloud> = parts.iter().map(|p| &p.cloud).collect();
        Ok(Environment {
            id: id.into(),
            d_space: first.d_space,
            obstacles,
            inflated,
            inflation: first.inflation,
            cloud_seed: first.cloud_seed,
            cloud: PointCloud::merged(&clouds),
        })
    }

    pub fn from_file(f: &EnvironmentFile) -> Result<Self> {
        Self::with_inflation(f.id.clone(), f.d_space, f.obstacles.clone(), f.cloud_seed, f.inflation)
    }

    pub fn to_file(&self) -> EnvironmentFile {
        EnvironmentFile {
            id: self.id.clone(),
            d_space: self.d_space,
            bounds: vec![[WORKSPACE_MIN, WORKSPACE_MAX]; self.d_space],
            obstacles: self.obstacles.clone(),
            cloud_seed: self.cloud_seed,
            inflation: self.inflation,
        }
    }

    /// True iff `p` lies within `margin` of any (inflated) obstacle.
    pub fn in_collision(&self, p: &[f64], margin: f64) -> bool {
        self.inflated.iter().any(|o| o.distance(p) <= margin)
    }

    /// Distance to the closest inflated obstacle, `+inf` when there are none.
    pub fn clearance(&self, p: &[f64]) -> f64 {
        self.inflated.iter().map(|o| o.distance(p)).fold(f64::INFINITY, f64::min)
    }

    pub fn in_workspace(&self, p: &[f64]) -> bool {
        p.iter().all(|&x| (WORKSPACE_MIN..=WORKSPACE_MAX).contains(&x))
    }

    /// Checks the straight segment `a -> b` at the given spatial resolution.
    pub fn segment_free(&self, a: &[f64], b: &[f64], resolution: f64, margin: f64) -> bool {
        let len = dist(a, b);
        let steps = (len / resolution).ceil().max(1.0) as usize;
        let mut p = vec![0.0; a.len()];
        for i in 0..=steps {
            let s = i as f64 / steps as f64;
            for k in 0..a.len() {
                p[k] = a[k] + s * (b[k] - a[k]);
            }
            if self.in_collision(&p, margin) {
                return false;
            }
        }
        true
    }

    /// `(n_colliding, n_total)` over the waypoint positions of `traj`.
    pub fn trajectory_collision_stats(&self, traj: &Trajectory, margin: f64) -> (usize, usize) {
        let n = (0..traj.horizon()).filter(|&k| self.in_collision(traj.pos(k), margin)).count();
        (n, traj.horizon())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_points_are_contained() {
        let c = Obstacle::circle(&[0.0, 0.0], 0.1);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = sample_obstacle_points(&c, 64, &mut rng).unwrap();
            assert_eq!(pts.len(), 128);
            for p in pts.chunks(2) {
                assert!(norm(p) <= 0.1 + 1e-9);
            }
        }
    }

    #[test]
    fn box_points_are_contained_and_half_on_boundary() {
        let b = Obstacle::axis_box(&[-0.1, -0.1], &[0.1, 0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = sample_obstacle_points(&b, 64, &mut rng).unwrap();
        for p in pts.chunks(2) {
            assert!(p.iter().all(|x| (-0.1..=0.1).contains(x)));
        }
        let on_edge = pts
            .chunks(2)
            .take(32)
            .filter(|p| p.iter().any(|x| (x.abs() - 0.1).abs() < 1e-12))
            .count();
        assert_eq!(on_edge, 32);
    }

    #[test]
    fn sphere_and_cube_points_are_contained() {
        let s = Obstacle::circle(&[0.2, 0.1, -0.3], 0.15);
        let b = Obstacle::axis_box(&[0.0, 0.0, 0.0], &[0.1, 0.2, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for o in [&s, &b] {
            let pts = sample_obstacle_points(o, 64, &mut rng).unwrap();
            for p in pts.chunks(3) {
                assert!(o.contains(p, 1e-9));
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let c = Obstacle::circle(&[0.3, -0.2], 0.12);
        let a = sample_obstacle_points(&c, 64, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = sample_obstacle_points(&c, 64, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_obstacles_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_obstacle_points(&Obstacle::circle(&[0.0, 0.0], 0.0), 8, &mut rng).is_err());
        assert!(sample_obstacle_points(&Obstacle::circle(&[0.0, 0.0], -1.0), 8, &mut rng).is_err());
        let flat = Obstacle::axis_box(&[0.0, 0.0], &[0.0, 0.1]);
        assert!(sample_obstacle_points(&flat, 8, &mut rng).is_err());
    }

    #[test]
    fn collision_queries() {
        let env = Environment::with_inflation("t", 2, vec![Obstacle::circle(&[0.0, 0.0], 0.2)], 1, 0.0).unwrap();
        assert!(env.in_collision(&[0.0, 0.0], 0.0));
        assert!(!env.in_collision(&[0.2 + 0.05 + 0.01, 0.0], 0.05));
        assert!(env.in_collision(&[0.24, 0.0], 0.05));
    }

    #[test]
    fn collision_agrees_with_occupancy_grid() {
        // Rasterize at 1e-3 and compare at random points away from boundaries.
        let env = Environment::with_inflation(
            "g",
            2,
            vec![
                Obstacle::circle(&[0.3, 0.2], 0.15),
                Obstacle::axis_box(&[-0.5, -0.4], &[-0.2, 0.1]),
            ],
            2,
            0.0,
        )
        .unwrap();
        let res = 1e-3;
        let cells = (2.0 / res) as usize;
        let mut grid = vec![false; cells * cells];
        for i in 0..cells {
            for j in 0..cells {
                let c = [-1.0 + (i as f64 + 0.5) * res, -1.0 + (j as f64 + 0.5) * res];
                grid[i * cells + j] = env.inflated.iter().any(|o| o.contains(&c, 0.0));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        for _ in 0..10_000 {
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let near_boundary = env.inflated.iter().any(|o| {
                let outside = o.distance(&p);
                let inside = match o {
                    Obstacle::Circle { center, radius } => radius - dist(&p, &center.0),
                    Obstacle::AxisBox { min, max } => (0..2)
                        .map(|k| (p[k] - min.0[k]).min(max.0[k] - p[k]))
                        .fold(f64::INFINITY, f64::min),
                };
                outside.max(inside).abs() < 2e-3 || (outside == 0.0 && inside < 2e-3)
            });
            if near_boundary {
                continue;
            }
            let i = (((p[0] + 1.0) / res) as usize).min(cells - 1);
            let j = (((p[1] + 1.0) / res) as usize).min(cells - 1);
            assert_eq!(env.in_collision(&p, 0.0), grid[i * cells + j], "at {p:?}");
            checked += 1;
        }
        assert!(checked > 9000);
    }

    #[test]
    fn collision_is_monotone_in_margin() {
        let env = Environment::new("m", 2, vec![Obstacle::axis_box(&[-0.2, -0.1], &[0.1, 0.3])], 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let m1 = rng.random_range(0.0..0.3);
            let m2 = m1 + rng.random_range(0.0..0.3);
            if env.in_collision(&p, m1) {
                assert!(env.in_collision(&p, m2));
            }
        }
    }

    #[test]
    fn cloud_points_lie_inside_inflated_obstacles() {
        let env = Environment::new(
            "c",
            2,
            vec![Obstacle::circle(&[0.5, 0.5], 0.1), Obstacle::axis_box(&[-0.6, -0.6], &[-0.4, -0.3])],
            17,
        )
        .unwrap();
        assert_eq!(env.cloud.n_obstacles(), 2);
        for k in 0..2 {
            for p in env.cloud.obstacle_points(k).chunks(2) {
                assert!(env.inflated[k].contains(p, 1e-9));
            }
        }
        let again = Environment::new("c", 2, env.obstacles.clone(), 17).unwrap();
        assert_eq!(again.cloud, env.cloud);
    }

    #[test]
    fn env_file_json_shape() {
        let env = Environment::new("e1", 2, vec![Obstacle::circle(&[0.0, 0.0], 0.1), Obstacle::axis_box(&[0.3, 0.3], &[0.5, 0.4])], 3).unwrap();
        let json = serde_json::to_value(env.to_file()).unwrap();
        assert_eq!(json["obstacles"][0]["type"], "circle");
        assert_eq!(json["obstacles"][1]["type"], "box");
        assert_eq!(json["cloud_seed"], 3);
        let back: EnvironmentFile = serde_json::from_value(json).unwrap();
        assert_eq!(Environment::from_file(&back).unwrap(), env);
    }

    #[test]
    fn trajectory_stats_count_waypoints() {
        let env = Environment::with_inflation("s", 2, vec![Obstacle::circle(&[0.0, 0.0], 0.2)], 0, 0.0).unwrap();
        let outside = Trajectory::from_positions(2, &(0..48).map(|k| vec![-0.9 + k as f64 * 0.001, 0.8]).collect::<Vec<_>>(), 0.1);
        assert_eq!(env.trajectory_collision_stats(&outside, 0.0), (0, 48));
        let line: Vec<Vec<f64>> = (0..48).map(|k| vec![-0.9 + 1.8 * k as f64 / 47.0, 0.0]).collect();
        let through = Trajectory::from_positions(2, &line, 0.1);
        let expected = line.iter().filter(|p| norm(p) <= 0.2).count();
        assert_eq!(env.trajectory_collision_stats(&through, 0.0), (expected, 48));
        assert!(expected > 0);
    }
}
