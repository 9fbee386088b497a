//! A* front end over standable voxels.
//!
//! The search graph has one node per standable voxel. From every node the
//! robot may step to any standable voxel of the eight horizontally adjacent
//! columns whose height differs by at most `step_max`. Edge costs are the
//! Euclidean distances between voxel centers, so the straight-line heuristic
//! is consistent and the returned path is length-optimal.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path as FsPath;

use crate::cloud_io::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::gridmap::{Field3, GridSpec};

/// Horizontal neighbourhood, in a fixed order for determinism.
const MOVES: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub spec: GridSpec,
    pub standable: Vec<bool>,
    /// Largest height change allowed between adjacent columns, meters.
    pub step_max: f64,
}

impl SearchSpace {
    pub fn new(spec: GridSpec, standable: Vec<bool>, step_max: f64) -> Result<Self> {
        spec.validate()?;
        if standable.len() != spec.len() {
            return Err(Error::InvalidParam(format!(
                "standable mask has {} entries, grid has {}",
                standable.len(),
                spec.len()
            )));
        }
        if !(step_max >= 0.0) {
            return Err(Error::InvalidParam(format!("step_max {step_max} must be >= 0")));
        }
        let space = Self {
            spec,
            standable,
            step_max,
        };
        if space.count() == 0 {
            return Err(Error::NoStandableTerrain);
        }
        Ok(space)
    }

    pub fn is_standable(&self, c: [usize; 3]) -> bool {
        self.standable[self.spec.linear(c[0], c[1], c[2])]
    }

    pub fn count(&self) -> usize {
        self.standable.iter().filter(|&&s| s).count()
    }

    /// Drop standable voxels for which `keep` returns false.
    pub fn retain(&mut self, mut keep: impl FnMut([usize; 3]) -> bool) {
        for idx in 0..self.standable.len() {
            if self.standable[idx] && !keep(self.spec.unlinear(idx)) {
                self.standable[idx] = false;
            }
        }
    }

    /// Largest vertical voxel offset reachable in one step.
    fn max_dk(&self) -> usize {
        (self.step_max / self.spec.resolution + 1e-9).floor() as usize
    }

    /// Nearest standable voxel to `p` within `radius`, by center distance.
    pub fn snap(&self, p: &Point3, radius: f64) -> Result<[usize; 3]> {
        let r = self.spec.resolution;
        let reach = (radius / r).ceil() as i64 + 1;
        let u: Vec<i64> = (0..3)
            .map(|a| ((p[a] - self.spec.origin[a]) / r).floor() as i64)
            .collect();
        let mut best: Option<(f64, usize)> = None;
        for dk in -reach..=reach {
            for dj in -reach..=reach {
                for di in -reach..=reach {
                    let c = [u[0] + di, u[1] + dj, u[2] + dk];
                    if !self.spec.contains(c) {
                        continue;
                    }
                    let c = [c[0] as usize, c[1] as usize, c[2] as usize];
                    let idx = self.spec.linear(c[0], c[1], c[2]);
                    if !self.standable[idx] {
                        continue;
                    }
                    let d = (self.spec.center(c) - p).norm();
                    if d <= radius && best.is_none_or(|(bd, bi)| d < bd || (d == bd && idx < bi)) {
                        best = Some((d, idx));
                    }
                }
            }
        }
        match best {
            Some((_, idx)) => Ok(self.spec.unlinear(idx)),
            None => {
                let nearest = self
                    .standable
                    .iter()
                    .enumerate()
                    .filter(|(_, &s)| s)
                    .map(|(i, _)| self.spec.center(self.spec.unlinear(i)))
                    .min_by(|a, b| (a - p).norm().total_cmp(&(b - p).norm()));
                Err(Error::SnapFailed { point: *p, nearest })
            }
        }
    }

    /// Calls `f(neighbour, step_cost)` for every edge leaving `c`.
    pub fn for_each_neighbor(&self, c: [usize; 3], mut f: impl FnMut([usize; 3], f64)) {
        let [nx, ny, nz] = self.spec.dims;
        let max_dk = self.max_dk() as i64;
        let from = self.spec.center(c);
        for (di, dj) in MOVES {
            let (i, j) = (c[0] as i64 + di, c[1] as i64 + dj);
            if i < 0 || j < 0 || i >= nx as i64 || j >= ny as i64 {
                continue;
            }
            let lo = (c[2] as i64 - max_dk).max(0);
            let hi = (c[2] as i64 + max_dk).min(nz as i64 - 1);
            for k in lo..=hi {
                let n = [i as usize, j as usize, k as usize];
                if self.is_standable(n) {
                    f(n, (self.spec.center(n) - from).norm());
                }
            }
        }
    }

    /// Store the mask as a field dump of 0/1 values.
    pub fn write_dump(&self, path: &FsPath) -> Result<()> {
        let values = self.standable.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
        Field3 {
            spec: self.spec,
            values,
        }
        .write_dump(path)
    }

    pub fn read_dump(path: &FsPath, step_max: f64) -> Result<Self> {
        let f = Field3::read_dump(path)?;
        let standable = f.values.iter().map(|&v| v > 0.5).collect();
        Self::new(f.spec, standable, step_max)
    }
}

/// Mark voxels holding a valid ground point, plus `h_clear` voxels above each.
pub fn build_search_space(valid_cloud: &PointCloud, spec: &GridSpec, step_max: f64, h_clear: usize) -> Result<SearchSpace> {
    spec.validate()?;
    let mut standable = vec![false; spec.len()];
    for p in valid_cloud.points() {
        if let Some(c) = spec.cell_of(p) {
            for k in c[2]..=(c[2] + h_clear).min(spec.dims[2] - 1) {
                standable[spec.linear(c[0], c[1], k)] = true;
            }
        }
    }
    SearchSpace::new(*spec, standable, step_max)
}

/// Voxel path from start to goal.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub cells: Vec<[usize; 3]>,
    pub points: Vec<Point3>,
    /// Summed Euclidean step length.
    pub cost: f64,
    /// Nodes expanded by the search.
    pub explored: usize,
}

impl Path {
    pub fn write_csv(&self, path: &FsPath) -> Result<()> {
        let mut s = String::from("x,y,z\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.x, p.y, p.z));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy)]
struct Open {
    f: f64,
    h: f64,
    idx: usize,
    g: f64,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Open {}
impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Open {
    // reversed: BinaryHeap is a max-heap and we want the smallest (f, h, idx)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

/// Shortest path between the voxels `start` and `goal` snap to.
pub fn astar(space: &SearchSpace, start: &Point3, goal: &Point3) -> Result<Path> {
    let radius = 5.0 * space.spec.resolution;
    let s = space.snap(start, radius)?;
    let g = space.snap(goal, radius)?;
    astar_cells(space, s, g)
}

/// A* between two standable voxels.
pub fn astar_cells(space: &SearchSpace, start: [usize; 3], goal: [usize; 3]) -> Result<Path> {
    let spec = &space.spec;
    let goal_p = spec.center(goal);
    let s_idx = spec.linear(start[0], start[1], start[2]);
    let g_idx = spec.linear(goal[0], goal[1], goal[2]);
    for (c, idx) in [(start, s_idx), (goal, g_idx)] {
        if !space.standable[idx] {
            return Err(Error::SnapFailed {
                point: spec.center(c),
                nearest: None,
            });
        }
    }
    let heur = |c: [usize; 3]| (spec.center(c) - goal_p).norm();

    let mut best_g = vec![f64::INFINITY; spec.len()];
    let mut parent = vec![usize::MAX; spec.len()];
    let mut closed = vec![false; spec.len()];
    let mut heap = BinaryHeap::new();
    best_g[s_idx] = 0.0;
    let h0 = heur(start);
    heap.push(Open {
        f: h0,
        h: h0,
        idx: s_idx,
        g: 0.0,
    });
    let mut explored = 0;
    while let Some(Open { idx, g: g_cur, .. }) = heap.pop() {
        if g_cur > best_g[idx] || closed[idx] {
            continue;
        }
        closed[idx] = true;
        explored += 1;
        if idx == g_idx {
            let mut cells = vec![spec.unlinear(idx)];
            let mut cur = idx;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                cells.push(spec.unlinear(cur));
            }
            cells.reverse();
            let points = cells.iter().map(|&c| spec.center(c)).collect();
            return Ok(Path {
                cells,
                points,
                cost: g_cur,
                explored,
            });
        }
        space.for_each_neighbor(spec.unlinear(idx), |n, w| {
            let ni = spec.linear(n[0], n[1], n[2]);
            let ng = g_cur + w;
            if ng < best_g[ni] {
                // a strictly better route reopens a settled node
                best_g[ni] = ng;
                parent[ni] = idx;
                closed[ni] = false;
                let h = heur(n);
                heap.push(Open {
                    f: ng + h,
                    h,
                    idx: ni,
                    g: ng,
                });
            }
        });
    }
    Err(Error::NoPath { explored })
}

/// Mean Menger curvature over the interior vertices of a polyline, 1/m.
pub fn polyline_curvature(points: &[Point3]) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let mut sum = 0.0;
    for w in points.windows(3) {
        let (a, b, c) = (w[1] - w[0], w[2] - w[1], w[2] - w[0]);
        let denom = a.norm() * b.norm() * c.norm();
        if denom > 0.0 {
            sum += 2.0 * a.cross(&b).norm() / denom;
        }
    }
    sum / (points.len() - 2) as f64
}
