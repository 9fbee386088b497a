//! Independent reference implementations shared by the integration tests.
//!
//! Everything here is written from the mathematical definitions, with the
//! slowest obvious algorithm, so that agreement with the library is evidence
//! rather than tautology.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use groundplan::gridmap::{GridSpec, OccupancyGrid};
use groundplan::minco::{BoundaryState, MincoTrajectory};
use groundplan::path_search::SearchSpace;
use groundplan::vgf::VgfParams;
use groundplan::Point3;
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Relative error of two vectors, measured against the larger norm.
pub fn rel_err_vec(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    diff / scale.max(1e-12)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

// ---------------------------------------------------------------- VGF

/// Quadratic-time filter straight from the two rules, using explicit
/// elevation angles.
pub fn brute_vgf(points: &[Point3], params: &VgfParams) -> Vec<bool> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut keep = true;
            for (j, q) in points.iter().enumerate() {
                if i == j || (q - p).norm_squared() > params.radius * params.radius {
                    continue;
                }
                let h = (q.x - p.x).hypot(q.y - p.y);
                let dz = q.z - p.z;
                if dz > params.eps_z && dz.atan2(h) >= params.theta {
                    keep = false;
                }
                if dz <= -params.eps_z && (-dz).atan2(h) >= params.theta {
                    keep = false;
                }
            }
            keep
        })
        .collect()
}

/// Mixed test cloud: flat patches, a tilted ramp and overhanging slabs.
pub fn random_vgf_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
    let mut pts = Vec::with_capacity(n);
    let tilt: f64 = rng.gen_range(0.0..60.0f64).to_radians().tan();
    while pts.len() < n {
        let x: f64 = rng.gen_range(0.0..4.0);
        let y: f64 = rng.gen_range(0.0..4.0);
        let noise = rng.gen_range(-0.01..0.01);
        let p = match rng.gen_range(0..4) {
            0 => Point3::new(x, y, noise),
            1 => Point3::new(x, y, 0.5 + tilt * (x - 2.0).max(0.0) + noise),
            2 => Point3::new(x.min(1.5), y, rng.gen_range(0.3..1.2)),
            _ => Point3::new(x, y, 0.8 + noise),
        };
        pts.push(p);
    }
    pts
}

// ---------------------------------------------------------------- ESDF

/// Distance from every voxel center to the nearest occupied voxel center.
pub fn brute_esdf(occ: &OccupancyGrid) -> Vec<f64> {
    let spec = occ.spec;
    let occupied: Vec<[usize; 3]> = (0..spec.len())
        .filter(|&i| occ.occupied[i])
        .map(|i| spec.unlinear(i))
        .collect();
    (0..spec.len())
        .map(|i| {
            let c = spec.unlinear(i);
            occupied
                .iter()
                .map(|o| {
                    let d2: f64 = (0..3).map(|a| (c[a] as f64 - o[a] as f64).powi(2)).sum();
                    d2.sqrt() * spec.resolution
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn random_occupancy(rng: &mut ChaCha8Rng, dims: [usize; 3], density: f64) -> OccupancyGrid {
    let spec = GridSpec::new(Point3::new(-1.0, 0.5, 2.0), 0.1, dims).unwrap();
    let mut occ = OccupancyGrid::empty(spec);
    for i in 0..spec.len() {
        if rng.gen_bool(density) {
            occ.occupied[i] = true;
        }
    }
    // at least one obstacle
    let c = [rng.gen_range(0..dims[0]), rng.gen_range(0..dims[1]), rng.gen_range(0..dims[2])];
    occ.set(c, true);
    occ
}

// ---------------------------------------------------------------- search

/// Terrain-like random search space: a few stacked height maps with holes.
pub fn random_space(rng: &mut ChaCha8Rng, dims: [usize; 3], step_max: f64) -> SearchSpace {
    let spec = GridSpec::new(Point3::zeros(), 0.1, dims).unwrap();
    let mut standable = vec![false; spec.len()];
    let layers = rng.gen_range(1..=3);
    for _ in 0..layers {
        let base = rng.gen_range(0..dims[2]) as f64;
        let (ax, ay) = (rng.gen_range(0.0..0.8), rng.gen_range(0.0..0.8));
        let (fx, fy) = (rng.gen_range(0.05..0.5), rng.gen_range(0.05..0.5));
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                if rng.gen_bool(0.15) {
                    continue;
                }
                let z = base + ax * (fx * i as f64).sin() * 4.0 + ay * (fy * j as f64).cos() * 4.0;
                let k = z.round().clamp(0.0, dims[2] as f64 - 1.0) as usize;
                standable[spec.linear(i, j, k)] = true;
            }
        }
    }
    let mut space = SearchSpace::new(spec, standable.clone(), step_max);
    while space.is_err() {
        standable[0] = true;
        space = SearchSpace::new(spec, standable.clone(), step_max);
    }
    space.unwrap()
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// Dijkstra over the same graph: 8 horizontal moves, any standable voxel of
/// the neighbour column within `step_max` vertically, Euclidean edge length.
pub fn dijkstra(space: &SearchSpace, s: [usize; 3], g: [usize; 3]) -> Option<f64> {
    let spec = space.spec;
    let [nx, ny, nz] = spec.dims;
    let mut dist = vec![f64::INFINITY; spec.len()];
    let si = spec.linear(s[0], s[1], s[2]);
    let gi = spec.linear(g[0], g[1], g[2]);
    dist[si] = 0.0;
    let mut heap = BinaryHeap::from([Item(0.0, si)]);
    while let Some(Item(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if u == gi {
            return Some(d);
        }
        let c = spec.unlinear(u);
        let pc = spec.center(c);
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (i, j) = (c[0] as i64 + di, c[1] as i64 + dj);
                if i < 0 || j < 0 || i >= nx as i64 || j >= ny as i64 {
                    continue;
                }
                for k in 0..nz {
                    let n = [i as usize, j as usize, k];
                    if !space.is_standable(n) {
                        continue;
                    }
                    let pn = spec.center(n);
                    if (pn.z - pc.z).abs() > space.step_max + 1e-9 {
                        continue;
                    }
                    let v = spec.linear(n[0], n[1], n[2]);
                    let nd = d + (pn - pc).norm();
                    if nd < dist[v] {
                        dist[v] = nd;
                        heap.push(Item(nd, v));
                    }
                }
            }
        }
    }
    None
}

// ---------------------------------------------------------------- trajectories

pub fn random_boundary(rng: &mut ChaCha8Rng, at: Point3) -> BoundaryState {
    let mut v = || Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    BoundaryState {
        position: at,
        velocity: v(),
        acceleration: v(),
    }
}

/// Random trajectory with `m` pieces wandering around `origin`.
pub fn random_trajectory(rng: &mut ChaCha8Rng, m: usize, origin: Point3) -> MincoTrajectory {
    let mut p = origin;
    let start = random_boundary(rng, p);
    let mut q = Vec::new();
    for _ in 1..m {
        p += Vector3::new(rng.gen_range(0.3..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.2..0.2));
        q.push(p);
    }
    p += Vector3::new(rng.gen_range(0.3..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.2..0.2));
    let end = random_boundary(rng, p);
    let t = (0..m).map(|_| rng.gen_range(0.4..1.5)).collect();
    MincoTrajectory::new(start, end, q, t).unwrap()
}

// ---------------------------------------------------------------- analytic stand-in fields

/// Smooth penalty-like field with a bump around `(x0, y0)`.
pub fn analytic_penalty(p: &Point3) -> (f64, Vector3<f64>) {
    let (x0, y0) = (1.5, 0.2);
    let r2 = (p.x - x0).powi(2) + (p.y - y0).powi(2) + 0.3 * p.z * p.z;
    let e = (-r2).exp();
    let v = 3.0 * e + 0.1 * p.x.sin();
    let g = Vector3::new(
        -6.0 * (p.x - x0) * e + 0.1 * p.x.cos(),
        -6.0 * (p.y - y0) * e,
        -1.8 * p.z * e,
    );
    (v, g)
}

/// Smooth distance-like field that gets small near a line.
pub fn analytic_distance(p: &Point3) -> (f64, Vector3<f64>) {
    let v = 0.2 + 0.3 * (p.y - 0.4).powi(2) + 0.05 * (2.0 * p.x).cos() + 0.1 * p.z.powi(2);
    let g = Vector3::new(-0.1 * (2.0 * p.x).sin(), 0.6 * (p.y - 0.4), 0.2 * p.z);
    (v, g)
}

pub fn analytic_ground(p: &Point3) -> (f64, Vector3<f64>) {
    (0.2 * (0.7 * p.x).sin() + 0.1 * p.y, Vector3::new(0.14 * (0.7 * p.x).cos(), 0.1, 0.0))
}

pub fn analytic_suitable(p: &Point3) -> (f64, Vector3<f64>) {
    (0.6 + 0.2 * (0.5 * p.y).cos(), Vector3::new(0.0, -0.1 * (0.5 * p.y).sin(), 0.0))
}
