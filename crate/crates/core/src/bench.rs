//! Synthetic scenes and the randomized evaluation harness.
//!
//! Horizontal surfaces are sampled on a jittered grid whose cells nest inside
//! 0.1 m voxel columns (cell edges on odd multiples of 0.05 m), so every
//! column of a surface receives the same number of points and no surface
//! voxel is left empty by chance.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud_io::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::solver::Termination;
use crate::planner::{assess_terrain, plan_on, PlanStatus, PlannerConfig, Terrain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    UnevenTerrain,
    MultiLevel,
    CorridorWithTables,
    RampBetweenFloors,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub kind: SceneKind,
    /// Side length of the scene (corridor length for the table scene), meters.
    pub extent: f64,
    pub seed: u64,
    /// Points per square meter of surface.
    pub density: f64,
    /// Height noise amplitude of uneven terrain, meters.
    pub amplitude: f64,
    /// Shortest wavelength of the height noise, meters.
    pub wavelength: f64,
    /// Upper bound on terrain slope, degrees.
    pub max_slope_deg: f64,
    /// Tree trunks scattered over uneven terrain.
    pub trees: usize,
    /// Height of the upper level in the multi-level and ramp scenes, meters.
    pub level_height: f64,
    pub ramp_grade_deg: f64,
    /// Free height under each table, meters.
    pub table_clearance: f64,
    pub table_thickness: f64,
    pub tables: usize,
    pub corridor_width: f64,
    /// Uniform vertical jitter added to every sample, meters.
    pub noise: f64,
}

impl SceneSpec {
    pub fn new(kind: SceneKind, seed: u64) -> Self {
        let mut s = Self {
            kind,
            extent: 40.0,
            seed,
            density: 100.0,
            amplitude: 1.0,
            wavelength: 8.0,
            max_slope_deg: 10.0,
            trees: 30,
            level_height: 2.4,
            ramp_grade_deg: 12.0,
            table_clearance: 0.6,
            table_thickness: 0.1,
            tables: 2,
            corridor_width: 3.0,
            noise: 0.005,
        };
        match kind {
            SceneKind::UnevenTerrain => {}
            SceneKind::MultiLevel => s.extent = 30.0,
            SceneKind::CorridorWithTables => s.extent = 12.0,
            SceneKind::RampBetweenFloors => s.extent = 20.0,
        }
        s
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.density.sqrt()
    }

    /// `[x0, x1]` of every table along the corridor, snapped to sample
    /// cell edges so no cell is half covered by a table.
    pub fn table_spans(&self) -> Vec<(f64, f64)> {
        let len = 1.2;
        let s = self.spacing();
        let snap = |v: f64| ((v + CELL_ANCHOR) / s).round() * s - CELL_ANCHOR;
        (1..=self.tables)
            .map(|k| {
                let c = self.extent * k as f64 / (self.tables + 1) as f64;
                (snap(c - 0.5 * len), snap(c + 0.5 * len))
            })
            .collect()
    }

    /// Start of the ramp and of the upper floor along x, ramp scene.
    pub fn ramp_span(&self) -> (f64, f64) {
        let run = self.level_height / self.ramp_grade_deg.to_radians().tan();
        let x0 = 0.5 * (self.extent - run);
        (x0, x0 + run)
    }
}

/// Offset placing jitter-cell edges on odd multiples of 0.05 m.
const CELL_ANCHOR: f64 = 0.05;

struct Sampler {
    rng: ChaCha8Rng,
    spacing: f64,
    noise: f64,
    points: Vec<Point3>,
}

impl Sampler {
    /// One jittered sample per `spacing` cell centered in `[x0, x1) x [y0, y1)`.
    fn horizontal(&mut self, x0: f64, x1: f64, y0: f64, y1: f64, z: impl Fn(f64, f64) -> Option<f64>) {
        let s = self.spacing;
        // first cell whose center is at or beyond `v`
        let cell = |v: f64| ((v + CELL_ANCHOR) / s - 0.5 - 1e-9).ceil() as i64;
        let (i0, i1) = (cell(x0), cell(x1));
        let (j0, j1) = (cell(y0), cell(y1));
        for j in j0..j1 {
            for i in i0..i1 {
                let x = (i as f64 + self.rng.gen_range(0.0..1.0)) * s - CELL_ANCHOR;
                let y = (j as f64 + self.rng.gen_range(0.0..1.0)) * s - CELL_ANCHOR;
                let dz = if self.noise > 0.0 { self.rng.gen_range(-self.noise..self.noise) } else { 0.0 };
                if let Some(h) = z(x, y) {
                    self.points.push(Point3::new(x, y, h + dz));
                }
            }
        }
    }

    /// Vertical rectangle from `a` to `b` in plan, spanning `[z0, z1]`.
    fn vertical(&mut self, a: (f64, f64), b: (f64, f64), z0: f64, z1: f64) {
        let s = self.spacing;
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        let nu = (len / s).ceil().max(1.0) as usize;
        let nv = ((z1 - z0) / s).ceil().max(1.0) as usize;
        for v in 0..nv {
            for u in 0..nu {
                let fu = (u as f64 + self.rng.gen_range(0.0..1.0)) / nu as f64;
                let z = z0 + (v as f64 + self.rng.gen_range(0.0..1.0)) / nv as f64 * (z1 - z0);
                self.points.push(Point3::new(a.0 + fu * (b.0 - a.0), a.1 + fu * (b.1 - a.1), z));
            }
        }
    }

    fn cylinder(&mut self, cx: f64, cy: f64, r: f64, z0: f64, z1: f64) {
        let s = self.spacing;
        let nu = ((std::f64::consts::TAU * r) / s).ceil().max(6.0) as usize;
        let nv = ((z1 - z0) / s).ceil().max(1.0) as usize;
        for v in 0..nv {
            for u in 0..nu {
                let a = (u as f64 + self.rng.gen_range(0.0..1.0)) / nu as f64 * std::f64::consts::TAU;
                let z = z0 + (v as f64 + self.rng.gen_range(0.0..1.0)) / nv as f64 * (z1 - z0);
                self.points.push(Point3::new(cx + r * a.cos(), cy + r * a.sin(), z));
            }
        }
    }
}

/// Band-limited height noise with bounded slope.
#[derive(Debug, Clone)]
pub struct HeightNoise {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl HeightNoise {
    pub fn new(rng: &mut ChaCha8Rng, amplitude: f64, wavelength: f64, max_slope_deg: f64) -> Self {
        let mut waves: Vec<(f64, f64, f64, f64)> = (0..6)
            .map(|k| {
                let lambda = wavelength * (1.0 + k as f64 * 0.6);
                let dir = rng.gen_range(0.0..std::f64::consts::TAU);
                let f = std::f64::consts::TAU / lambda;
                let amp = amplitude / (1.0 + k as f64 * 0.5);
                (f * dir.cos(), f * dir.sin(), rng.gen_range(0.0..std::f64::consts::TAU), amp)
            })
            .collect();
        let norm: f64 = waves.iter().map(|w| w.3).sum::<f64>().max(1e-300);
        let slope: f64 = waves.iter().map(|w| w.3 * w.0.hypot(w.1)).sum::<f64>() * amplitude / norm;
        let limit = max_slope_deg.to_radians().tan();
        let scale = if slope > limit { limit / slope } else { 1.0 } * amplitude / norm;
        for w in &mut waves {
            w.3 *= scale;
        }
        Self { waves }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.waves.iter().map(|&(fx, fy, ph, a)| a * (fx * x + fy * y + ph).sin()).sum()
    }
}

/// Deterministic cloud for `spec`.
pub fn generate_scene(spec: &SceneSpec) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let e = spec.extent;
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1)),
        spacing: spec.spacing(),
        noise: spec.noise,
        points: Vec::new(),
    };
    match spec.kind {
        SceneKind::UnevenTerrain => {
            let hn = HeightNoise::new(&mut rng, spec.amplitude, spec.wavelength, spec.max_slope_deg);
            let trees: Vec<(f64, f64, f64)> = (0..spec.trees)
                .map(|_| (rng.gen_range(1.0..e - 1.0), rng.gen_range(1.0..e - 1.0), rng.gen_range(0.15..0.25)))
                .collect();
            s.horizontal(0.0, e, 0.0, e, |x, y| {
                let inside = trees.iter().any(|&(tx, ty, r)| (x - tx).hypot(y - ty) < r);
                (!inside).then(|| hn.height(x, y))
            });
            for &(tx, ty, r) in &trees {
                let z0 = hn.height(tx, ty) - 0.2;
                s.cylinder(tx, ty, r, z0, z0 + 3.0);
            }
        }
        SceneKind::MultiLevel => {
            let w = 0.5 * e;
            let h = spec.level_height;
            let run = h / spec.ramp_grade_deg.to_radians().tan();
            let xr = 0.5 * e - run;
            let (y_lo, y_hi) = (0.5 * w, 0.5 * w + 3.0);
            s.horizontal(0.0, e, 0.0, w, |_, _| Some(0.0));
            // upper deck: top and underside
            s.horizontal(0.5 * e, e, 0.5 * w, w, |_, _| Some(h));
            s.horizontal(0.5 * e, e, 0.5 * w, w, |_, _| Some(h - 0.2));
            s.horizontal(xr, 0.5 * e, y_lo, y_hi, |x, _| Some((x - xr) * spec.ramp_grade_deg.to_radians().tan()));
        }
        SceneKind::CorridorWithTables => {
            let wd = spec.corridor_width;
            s.horizontal(0.0, e, 0.0, wd, |_, _| Some(0.0));
            for y in [0.0, wd] {
                s.vertical((0.0, y), (e, y), 0.0, 1.5);
            }
            let lo = spec.table_clearance;
            let hi = lo + spec.table_thickness;
            for (x0, x1) in spec.table_spans() {
                s.horizontal(x0, x1, 0.0, wd, |_, _| Some(lo));
                s.horizontal(x0, x1, 0.0, wd, |_, _| Some(hi));
                s.vertical((x0, 0.0), (x0, wd), lo, hi);
                s.vertical((x1, 0.0), (x1, wd), lo, hi);
            }
        }
        SceneKind::RampBetweenFloors => {
            let (x0, x1) = spec.ramp_span();
            let w = 6.0;
            let tan = spec.ramp_grade_deg.to_radians().tan();
            let h = spec.level_height;
            s.horizontal(0.0, e, 0.0, w, |x, _| {
                Some(if x < x0 {
                    0.0
                } else if x < x1 {
                    (x - x0) * tan
                } else {
                    h
                })
            });
        }
    }
    PointCloud::new(s.points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub start: [f64; 3],
    pub goal: [f64; 3],
    pub status: Option<PlanStatus>,
    pub termination: Option<Termination>,
    pub error: Option<String>,
    pub t_assess: f64,
    pub t_plan: f64,
    pub t_optimize: f64,
    pub len: f64,
    pub kappa_m: f64,
    pub kappa_path: f64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub max_penalty_excess: f64,
    pub max_clearance_deficit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                median: f64::NAN,
                p95: f64::NAN,
            };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Self {
            mean: v.iter().sum::<f64>() / n as f64,
            median,
            p95: v[rank - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub scene: SceneSpec,
    pub rows: Vec<TrialRow>,
    pub success_rate: f64,
    /// Over all trials.
    pub t_assess: Aggregate,
    /// The remaining aggregates cover successful trials only.
    pub t_plan: Aggregate,
    pub len: Aggregate,
    pub kappa_m: Aggregate,
    pub kappa_path: Aggregate,
}

impl TrialReport {
    pub fn from_rows(scene: SceneSpec, rows: Vec<TrialRow>) -> Self {
        let ok: Vec<&TrialRow> = rows.iter().filter(|r| r.status == Some(PlanStatus::Success)).collect();
        let col = |f: fn(&TrialRow) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<_>>();
        Self {
            scene,
            success_rate: ok.len() as f64 / rows.len().max(1) as f64,
            t_assess: Aggregate::of(&rows.iter().map(|r| r.t_assess).collect::<Vec<_>>()),
            t_plan: Aggregate::of(&col(|r| r.t_plan)),
            len: Aggregate::of(&col(|r| r.len)),
            kappa_m: Aggregate::of(&col(|r| r.kappa_m)),
            kappa_path: Aggregate::of(&col(|r| r.kappa_path)),
            rows,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(
            out,
            "trial,sx,sy,sz,gx,gy,gz,status,t_assess,t_plan,t_optimize,len,kappa_m,kappa_path,initial_cost,final_cost,max_penalty_excess,max_clearance_deficit,error"
        )
        .map_err(io)?;
        for r in &self.rows {
            let status = match r.status {
                Some(s) => serde_json::to_value(s)?.as_str().unwrap_or("").to_string(),
                None => "error".into(),
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},\"{}\"",
                r.trial,
                r.start[0],
                r.start[1],
                r.start[2],
                r.goal[0],
                r.goal[1],
                r.goal[2],
                status,
                r.t_assess,
                r.t_plan,
                r.t_optimize,
                r.len,
                r.kappa_m,
                r.kappa_path,
                r.initial_cost,
                r.final_cost,
                r.max_penalty_excess,
                r.max_clearance_deficit,
                r.error.as_deref().unwrap_or("").replace('"', "'")
            )
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let summary = serde_json::json!({
            "scene": self.scene,
            "trials": self.rows.len(),
            "success_rate": self.success_rate,
            "t_assess": self.t_assess,
            "t_plan": self.t_plan,
            "len": self.len,
            "kappa_m": self.kappa_m,
            "kappa_path": self.kappa_path,
        });
        std::fs::write(path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(path, e))
    }
}

/// Seeded start/goal pair among standable voxels, at least `min_sep` apart
/// horizontally.
pub fn sample_query(terrain: &Terrain, rng: &mut ChaCha8Rng, min_sep: f64) -> Result<(Point3, Point3)> {
    let spec = terrain.space.spec;
    let cells: Vec<usize> = (0..spec.len()).filter(|&i| terrain.space.standable[i]).collect();
    if cells.is_empty() {
        return Err(Error::NoStandableTerrain);
    }
    for _ in 0..1000 {
        let a = spec.center(spec.unlinear(cells[rng.gen_range(0..cells.len())]));
        let b = spec.center(spec.unlinear(cells[rng.gen_range(0..cells.len())]));
        if (a.x - b.x).hypot(a.y - b.y) >= min_sep {
            return Ok((a, b));
        }
    }
    Err(Error::InvalidParam(format!("no standable pair {min_sep} m apart")))
}

/// Per-trial seed derived from the master seed.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    master ^ (trial as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Plan `n_trials` random queries on one assessed scene.
pub fn run_on_terrain(terrain: &Terrain, scene: &SceneSpec, n_trials: usize, master_seed: u64, config: &PlannerConfig) -> Result<TrialReport> {
    if n_trials == 0 {
        return Err(Error::InvalidParam("n_trials must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(n_trials);
    for trial in 0..n_trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(master_seed, trial));
        let (start, goal) = sample_query(terrain, &mut rng, 0.5 * scene.extent)?;
        let mut row = TrialRow {
            trial,
            start: [start.x, start.y, start.z],
            goal: [goal.x, goal.y, goal.z],
            status: None,
            termination: None,
            error: None,
            t_assess: terrain.t_assess,
            t_plan: f64::NAN,
            t_optimize: f64::NAN,
            len: f64::NAN,
            kappa_m: f64::NAN,
            kappa_path: f64::NAN,
            initial_cost: f64::NAN,
            final_cost: f64::NAN,
            max_penalty_excess: f64::NAN,
            max_clearance_deficit: f64::NAN,
        };
        let t0 = Instant::now();
        match plan_on(terrain, &start, &goal, config) {
            Ok(res) => {
                row.status = Some(res.status);
                row.termination = res.traces.last().map(|t| t.termination);
                row.t_plan = res.metrics.t_plan;
                row.t_optimize = res.metrics.t_optimize;
                row.len = res.metrics.len;
                row.kappa_m = res.metrics.kappa_m;
                row.kappa_path = res.metrics.kappa_path;
                if let Some(c) = &res.initial_cost {
                    row.initial_cost = c.total;
                }
                if let Some(c) = &res.costs {
                    row.final_cost = c.total;
                    row.max_penalty_excess = c.max_penalty_excess;
                    row.max_clearance_deficit = c.max_clearance_deficit;
                }
            }
            Err(e) => {
                row.t_plan = t0.elapsed().as_secs_f64();
                row.error = Some(e.to_string());
            }
        }
        rows.push(row);
    }
    Ok(TrialReport::from_rows(*scene, rows))
}

/// Generate the scene, assess it once and run the trials.
pub fn run_benchmark(scene: &SceneSpec, n_trials: usize, config: &PlannerConfig) -> Result<TrialReport> {
    let cloud = generate_scene(scene);
    let terrain = assess_terrain(&cloud, config)?;
    run_on_terrain(&terrain, scene, n_trials, scene.seed, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_when_amplitude_zero() {
        let mut s = SceneSpec::new(SceneKind::UnevenTerrain, 3);
        s.extent = 4.0;
        s.amplitude = 0.0;
        s.trees = 0;
        s.noise = 0.0;
        let c = generate_scene(&s);
        assert!(c.points().iter().all(|p| p.z == 0.0));
        assert_eq!(c.len(), (4.0f64 / s.spacing()).round().powi(2) as usize);
    }

    #[test]
    fn deterministic() {
        let mut s = SceneSpec::new(SceneKind::UnevenTerrain, 9);
        s.extent = 5.0;
        assert_eq!(generate_scene(&s).points(), generate_scene(&s).points());
    }

    #[test]
    fn slope_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hn = HeightNoise::new(&mut rng, 3.0, 5.0, 10.0);
        let h = 1e-4;
        for k in 0..200 {
            let (x, y) = (k as f64 * 0.37, k as f64 * 0.11);
            let gx = (hn.height(x + h, y) - hn.height(x - h, y)) / (2.0 * h);
            let gy = (hn.height(x, y + h) - hn.height(x, y - h)) / (2.0 * h);
            assert!(gx.hypot(gy) <= 10f64.to_radians().tan() + 1e-6);
        }
    }

    #[test]
    fn aggregate_values() {
        let a = Aggregate::of(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(a.mean, 2.5);
        assert_eq!(a.median, 2.5);
        assert_eq!(a.p95, 4.0);
    }
}
