//! End-to-end planning pipeline.
//!
//! [`assess_terrain`] turns a raw cloud into the products that do not depend
//! on the query: the valid-ground cloud, the voxel grid with its distance
//! field, the travel penalty, the height targets and the A* search space.
//! [`plan_on`] then searches a path, lifts it to body height, fits the
//! initial trajectory and optimizes it. The trajectory `z` coordinate is the
//! body height above the ground surface, i.e. it tracks `h_G + h_S`.
//!
//! Safety is enforced by a penalty method: when the optimum still violates a
//! threshold, the safety weight is raised and the problem re-solved, up to a
//! fixed number of rounds.

use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cloud_io::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::gridmap::{build_esdf, rasterize, EsdfField, FieldQuery, GridSpec, OccupancyGrid};
use crate::minco::{piece_eval, BoundaryState, MincoTrajectory};
use crate::objective::{CostFields, CostReport, CostWeights, Decision, HeightQuery};
use crate::path_search::{astar_cells, build_search_space, polyline_curvature, Path, SearchSpace};
use crate::penalty_field::{DiffusionMode, HeightFields, HeightPolicy, PenaltyField, PenaltyParams, PoseField, RansacParams};
use crate::solver::{minimize, SolveTrace, SolverOptions, Termination};
use crate::vgf::{valid_ground_filter, VgfParams, VgfStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPolicy {
    pub resolution: f64,
    /// Extra voxels around the cloud bounds on every side.
    pub pad: usize,
    /// Free space kept above the highest body position, meters.
    pub top_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    /// Kernel reach, meters.
    pub distance: f64,
    pub mode: DiffusionMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Defaults to two voxels when absent.
    pub step_max: Option<f64>,
    /// Voxels above each valid ground point that count as standable.
    pub h_clear: usize,
    /// Start/goal snapping radius in voxels.
    pub snap_cells: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitPolicy {
    /// Keep every `stride`-th A* cell as a waypoint.
    pub stride: usize,
    /// Speed for the initial time allocation; defaults to half of `v_max`.
    pub v_init: Option<f64>,
    /// Largest rise of initial body height per meter travelled, so the
    /// first guess starts crouching before an overhang instead of at it.
    pub height_slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationPolicy {
    /// Extra solves with a raised safety weight after the first one.
    pub max_rounds: usize,
    pub factor: f64,
    /// Threshold slack accepted as safe, in field units.
    pub tolerance: f64,
    /// The solver sees `s_thr` lowered by this much, so the penalty
    /// method's equilibrium violation lands inside the true threshold.
    pub penalty_margin: f64,
    /// Same for `d_thr`, raised by this much, meters.
    pub clearance_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    /// Radius of the robot body, meters.
    pub robot_radius: f64,
    pub vgf: VgfParams,
    pub grid: GridPolicy,
    pub ransac: RansacParams,
    pub penalty: PenaltyParams,
    pub diffusion: DiffusionConfig,
    pub height: HeightPolicy,
    pub search: SearchConfig,
    pub cost: CostWeights,
    pub solver: SolverOptions,
    pub init: InitPolicy,
    pub continuation: ContinuationPolicy,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        let resolution = 0.1;
        Self {
            robot_radius: 0.3,
            vgf: VgfParams {
                radius: 0.4,
                theta: 30f64.to_radians(),
                eps_z: 0.1,
            },
            grid: GridPolicy {
                resolution,
                pad: 3,
                top_margin: 0.5,
            },
            ransac: RansacParams::for_resolution(resolution),
            penalty: PenaltyParams::default(),
            diffusion: DiffusionConfig {
                distance: 0.2,
                mode: DiffusionMode::MaxDilation,
            },
            height: HeightPolicy::default(),
            search: SearchConfig {
                step_max: None,
                h_clear: 1,
                snap_cells: 5.0,
            },
            cost: CostWeights::default(),
            solver: SolverOptions {
                max_iterations: 1000,
                grad_tolerance: 1e-4,
                rel_cost_tolerance: 1e-4,
                past: 3,
                ..SolverOptions::default()
            },
            init: InitPolicy {
                stride: 5,
                v_init: None,
                height_slope: 0.5,
            },
            continuation: ContinuationPolicy {
                max_rounds: 3,
                factor: 10.0,
                tolerance: 1e-3,
                penalty_margin: 0.05,
                clearance_margin: 0.03,
            },
        }
    }
}

impl PlannerConfig {
    /// Settings for scenes where the body must pass under overhangs: a
    /// clearance that fits below a low ceiling, a ceiling gap that keeps the
    /// height target clear of it, and tighter height tracking.
    pub fn crouch() -> Self {
        let mut c = Self::default();
        c.cost.d_thr = 0.12;
        c.cost.lambda_h = 1000.0;
        c.height.ceiling_margin = 0.15;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.vgf.validate()?;
        self.cost.validate()?;
        self.solver.validate()?;
        let r_g = self.grid.resolution;
        if !(r_g > 0.0) {
            return Err(Error::Config(format!("grid resolution {r_g} must be > 0")));
        }
        if self.vgf.radius < self.robot_radius {
            return Err(Error::Config(format!(
                "vgf radius {} is smaller than the robot radius {}",
                self.vgf.radius, self.robot_radius
            )));
        }
        if self.cost.d_thr < r_g {
            return Err(Error::Config(format!(
                "clearance threshold {} is below the grid resolution {r_g}",
                self.cost.d_thr
            )));
        }
        if self.cost.kappa < 4 {
            return Err(Error::Config(format!("kappa {} must be >= 4", self.cost.kappa)));
        }
        if self.init.stride == 0 {
            return Err(Error::Config("waypoint stride must be >= 1".into()));
        }
        if !(self.height.h_min > 0.0 && self.height.h_min <= self.height.h_max) {
            return Err(Error::Config(format!(
                "height range [{}, {}] is empty",
                self.height.h_min, self.height.h_max
            )));
        }
        Ok(())
    }

    pub fn step_max(&self) -> f64 {
        self.search.step_max.unwrap_or(2.0 * self.grid.resolution)
    }

    pub fn v_init(&self) -> f64 {
        self.init.v_init.unwrap_or(0.5 * self.cost.v_max)
    }

    /// Parse a config document; keys it leaves out keep their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        Self::default().merge_json(text)
    }

    /// Overlay a (possibly partial) JSON document onto `self`. Unknown keys
    /// are rejected.
    pub fn merge_json(&self, text: &str) -> Result<Self> {
        fn overlay(base: &mut serde_json::Value, patch: serde_json::Value) {
            match (base, patch) {
                (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
                    for (k, v) in p {
                        match b.get_mut(&k) {
                            Some(slot) => overlay(slot, v),
                            None => {
                                b.insert(k, v);
                            }
                        }
                    }
                }
                (slot, v) => *slot = v,
            }
        }
        let patch: serde_json::Value = serde_json::from_str(text)?;
        let mut doc = serde_json::to_value(*self)?;
        overlay(&mut doc, patch);
        let c: Self = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Apply a dotted-key override such as `cost.d_thr=0.2`.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let mut doc = serde_json::to_value(*self)?;
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        }
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        *self = serde_json::from_value(doc).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }
}

/// Query-independent products of terrain assessment.
#[derive(Debug, Clone)]
pub struct Terrain {
    pub valid_cloud: PointCloud,
    pub vgf_stats: VgfStats,
    pub occupancy: OccupancyGrid,
    pub esdf: EsdfField,
    pub penalty: PenaltyField,
    pub heights: HeightFields,
    pub space: SearchSpace,
    /// Wall-clock assessment time, seconds.
    pub t_assess: f64,
    /// Wall-clock time of each assessment stage, seconds.
    pub stage_times: Vec<(&'static str, f64)>,
}

impl Terrain {
    pub fn spec(&self) -> &GridSpec {
        &self.esdf.field.spec
    }

    /// Target body height `h_G + h_S` above voxel `c`, with `h_S` clamped.
    pub fn body_target(&self, c: [usize; 3], policy: &HeightPolicy) -> f64 {
        self.heights.ground.get(c) + self.heights.suitable.get(c).clamp(policy.h_min, policy.h_max)
    }

    /// Highest body height in `[h_min, h_S]` above the standable voxel `c`
    /// that clears both safety thresholds, tightened by the solver margins.
    pub fn safe_body_height(&self, c: [usize; 3], config: &PlannerConfig) -> Option<f64> {
        let spec = self.spec();
        let center = spec.center(c);
        let ground = self.heights.ground.get(c);
        let h = &config.height;
        let s_max = config.cost.s_thr - config.continuation.penalty_margin;
        let d_min = config.cost.d_thr + config.continuation.clearance_margin;
        let top = self.heights.suitable.get(c).clamp(h.h_min, h.h_max);
        let step = 0.5 * spec.resolution;
        let mut z = ground + top;
        while z >= ground + h.h_min - 1e-9 {
            let p = Point3::new(center.x, center.y, z);
            let safe = matches!(self.penalty.query_penalty_grad(&p), Ok((s, _)) if s <= s_max)
                && matches!(self.esdf.query(&p), Ok((d, _)) if d >= d_min);
            if safe {
                return Some(z);
            }
            z -= step;
        }
        None
    }
}

/// Build every field and the search space from a raw cloud.
pub fn assess_terrain(cloud: &PointCloud, config: &PlannerConfig) -> Result<Terrain> {
    config.validate()?;
    let started = Instant::now();
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let r = config.vgf.radius;
    let indexed;
    let cloud = if (cloud.cell_size() - r).abs() > 1e-12 {
        indexed = PointCloud::with_cell_size(cloud.points().to_vec(), r);
        &indexed
    } else {
        cloud
    };
    let mut stage_times = Vec::new();
    let mut lap = Instant::now();
    let mut stage = |name: &'static str| {
        stage_times.push((name, lap.elapsed().as_secs_f64()));
        lap = Instant::now();
    };
    let vgf = valid_ground_filter(cloud, &config.vgf)?;
    stage("vgf");
    let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud)?;
    let (_, vhi) = vgf.cloud.bounds().ok_or(Error::NoStandableTerrain)?;
    let top = (vhi.z + config.height.h_max + config.grid.top_margin).max(lo.z);
    let spec = GridSpec::covering(lo, Point3::new(hi.x, hi.y, top), config.grid.resolution, config.grid.pad)?;

    let occupancy = rasterize(cloud, &spec)?;
    let esdf = build_esdf(&occupancy)?;
    stage("esdf");
    let poses = PoseField::build(cloud, &occupancy, r, &config.ransac);
    stage("poses");
    let penalty = PenaltyField::build(&poses, &config.penalty, config.diffusion.distance, config.diffusion.mode);
    stage("penalty");
    let heights = HeightFields::build(&poses, &occupancy, &config.height);
    drop(poses);
    stage("heights");
    let space = build_search_space(&vgf.cloud, &spec, config.step_max(), config.search.h_clear)?;
    let mut terrain = Terrain {
        valid_cloud: vgf.cloud,
        vgf_stats: vgf.stats,
        occupancy,
        esdf,
        penalty,
        heights,
        space,
        t_assess: 0.0,
        stage_times: Vec::new(),
    };
    // keep voxels where some admissible body height is outside the danger zone
    let keep: Vec<bool> = (0..spec.len())
        .map(|i| terrain.space.standable[i] && terrain.safe_body_height(spec.unlinear(i), config).is_some())
        .collect();
    terrain.space.standable = keep;
    if terrain.space.count() == 0 {
        return Err(Error::NoStandableTerrain);
    }
    stage("search space");
    terrain.stage_times = stage_times;
    terrain.t_assess = started.elapsed().as_secs_f64();
    Ok(terrain)
}

/// Lower body heights above ground so consecutive waypoints never differ
/// by more than `slope` times their horizontal distance, upward. A forward
/// and a backward sweep give the exact lower envelope along the path.
fn slope_limited(points: &[Point3], heights: &mut [f64], slope: f64) {
    for i in 1..heights.len() {
        let ds = (points[i].xy() - points[i - 1].xy()).norm();
        heights[i] = heights[i].min(heights[i - 1] + slope * ds);
    }
    for i in (0..heights.len().saturating_sub(1)).rev() {
        let ds = (points[i].xy() - points[i + 1].xy()).norm();
        heights[i] = heights[i].min(heights[i + 1] + slope * ds);
    }
}

/// Fit the rest-to-rest trajectory through every `stride`-th body waypoint.
pub fn initialize_trajectory(body_path: &[Point3], config: &PlannerConfig) -> Result<MincoTrajectory> {
    if body_path.len() < 2 {
        return Err(Error::DegeneratePath(format!("{} waypoint(s)", body_path.len())));
    }
    let stride = config.init.stride;
    let last = body_path.len() - 1;
    let mut idx: Vec<usize> = (0..last).step_by(stride).collect();
    // avoid a stub final piece shorter than half a stride
    if idx.len() > 1 && last - idx[idx.len() - 1] < stride.div_ceil(2) {
        idx.pop();
    }
    idx.push(last);
    let pts: Vec<Point3> = idx.iter().map(|&i| body_path[i]).collect();
    let v = config.v_init();
    let t: Vec<f64> = pts.windows(2).map(|w| (w[1] - w[0]).norm() / v).collect();
    if let Some(i) = t.iter().position(|&ti| !(ti > 1e-9)) {
        return Err(Error::DegeneratePath(format!("waypoints {i} and {} coincide", i + 1)));
    }
    MincoTrajectory::new(
        BoundaryState::at_rest(pts[0]),
        BoundaryState::at_rest(pts[pts.len() - 1]),
        pts[1..pts.len() - 1].to_vec(),
        t,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Success,
    /// Best-effort trajectory that misses a safety threshold or a tolerance.
    Infeasible,
    NoPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanMetrics {
    pub t_assess: f64,
    /// Search plus optimization, seconds.
    pub t_plan: f64,
    pub t_search: f64,
    pub t_optimize: f64,
    pub len: f64,
    pub kappa_m: f64,
    /// Mean discrete curvature of the A* polyline.
    pub kappa_path: f64,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub status: PlanStatus,
    pub path: Option<Path>,
    pub initial: Option<MincoTrajectory>,
    pub trajectory: Option<MincoTrajectory>,
    /// Cost of the initial trajectory under the final weights.
    pub initial_cost: Option<CostReport>,
    pub costs: Option<CostReport>,
    pub final_weights: CostWeights,
    pub traces: Vec<SolveTrace>,
    pub metrics: PlanMetrics,
}

impl PlanResult {
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "status": self.status,
            "metrics": self.metrics,
            "initial_cost": self.initial_cost.as_ref().map(|c| c.total),
            "final_cost": self.costs.as_ref().map(|c| c.total),
            "lambda_s": self.final_weights.lambda_s,
            "termination": self.traces.last().map(|t| t.termination),
            "explored": self.path.as_ref().map(|p| p.explored),
        })
    }
}

/// Arc length (Simpson's rule) and mean curvature of a trajectory.
pub fn trajectory_metrics(traj: &MincoTrajectory) -> (f64, f64) {
    let n = 100;
    let mut len = 0.0;
    let mut ksum = 0.0;
    let mut kcount = 0usize;
    for (c, &t) in traj.c.iter().zip(&traj.t) {
        let h = t / n as f64;
        let speed = |s: f64| piece_eval(c, s, 1).norm();
        let mut acc = speed(0.0) + speed(t);
        for k in 1..n {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * speed(k as f64 * h);
        }
        len += acc * h / 3.0;
        for k in 0..n {
            let s = k as f64 * h;
            let v = piece_eval(c, s, 1);
            let a = piece_eval(c, s, 2);
            let vn = v.norm();
            if vn >= 1e-3 {
                ksum += v.cross(&a).norm() / (vn * vn * vn);
                kcount += 1;
            }
        }
    }
    (len, if kcount > 0 { ksum / kcount as f64 } else { 0.0 })
}

fn cost_fields<'a>(terrain: &'a Terrain, config: &PlannerConfig) -> CostFields<'a> {
    CostFields {
        esdf: &terrain.esdf,
        penalty: &terrain.penalty,
        height: Some(HeightQuery {
            ground: &terrain.heights.ground,
            suitable: &terrain.heights.suitable,
            h_min: config.height.h_min,
            h_max: config.height.h_max,
        }),
    }
}

/// Objective in decision space; points leaving the fields count as `+inf`.
fn objective(decision: &Decision, x: &[f64], fields: &CostFields, weights: &CostWeights) -> Result<(f64, Vec<f64>)> {
    match decision.evaluate(x, fields, weights) {
        Ok((f, g, _)) => Ok((f, g)),
        Err(Error::ConstraintOutOfBounds { .. } | Error::OutOfBounds(_) | Error::Singular(_)) => {
            Ok((f64::INFINITY, vec![0.0; x.len()]))
        }
        Err(e) => Err(e),
    }
}

/// Plan on an assessed terrain.
pub fn plan_on(terrain: &Terrain, start: &Point3, goal: &Point3, config: &PlannerConfig) -> Result<PlanResult> {
    config.validate()?;
    let started = Instant::now();
    let mut metrics = PlanMetrics {
        t_assess: terrain.t_assess,
        ..Default::default()
    };
    let space = &terrain.space;
    let snap = config.search.snap_cells * space.spec.resolution;
    let s = space.snap(start, snap)?;
    let g = space.snap(goal, snap)?;
    let path = match astar_cells(space, s, g) {
        Ok(p) => p,
        Err(Error::NoPath { .. }) => {
            metrics.t_search = started.elapsed().as_secs_f64();
            metrics.t_plan = metrics.t_search;
            return Ok(PlanResult {
                status: PlanStatus::NoPath,
                path: None,
                initial: None,
                trajectory: None,
                initial_cost: None,
                costs: None,
                final_weights: config.cost,
                traces: vec![],
                metrics,
            });
        }
        Err(e) => return Err(e),
    };
    metrics.t_search = started.elapsed().as_secs_f64();
    metrics.kappa_path = polyline_curvature(&path.points);

    let mut body: Vec<Point3> = path.cells.iter().map(|&c| terrain.spec().center(c)).collect();
    let ground: Vec<f64> = path.cells.iter().map(|&c| terrain.heights.ground.get(c)).collect();
    let mut heights: Vec<f64> = path
        .cells
        .iter()
        .zip(&ground)
        .map(|(&c, g)| {
            let z = terrain
                .safe_body_height(c, config)
                .unwrap_or_else(|| terrain.body_target(c, &config.height));
            z - g
        })
        .collect();
    slope_limited(&body, &mut heights, config.init.height_slope);
    for ((p, g), h) in body.iter_mut().zip(&ground).zip(&heights) {
        p.z = g + h;
    }
    let opt_started = Instant::now();
    let initial = initialize_trajectory(&body, config)?;
    let decision = Decision {
        start: initial.start,
        end: initial.end,
        pieces: initial.pieces(),
    };
    let x_init = Decision::pack(&initial.q, &initial.t);
    let fields = cost_fields(terrain, config);

    let margins = (config.continuation.penalty_margin, config.continuation.clearance_margin);
    let mut weights = config.cost;
    weights.s_thr -= margins.0;
    weights.d_thr += margins.1;
    let mut x = x_init.clone();
    let mut traces = Vec::new();
    let mut result = None;
    for round in 0..=config.continuation.max_rounds {
        if round > 0 {
            weights.lambda_s *= config.continuation.factor;
            // restart from whichever candidate is cheaper under the new weights
            let f_prev = objective(&decision, &x, &fields, &weights)?.0;
            let f_init = objective(&decision, &x_init, &fields, &weights)?.0;
            if f_init < f_prev {
                x = x_init.clone();
            }
        }
        let (xn, trace) = minimize(|v| objective(&decision, v, &fields, &weights), &x, &config.solver)?;
        x = xn;
        let (_, _, mut report) = decision.evaluate(&x, &fields, &weights)?;
        // report violations against the thresholds the caller asked for
        report.max_penalty_excess -= margins.0;
        report.max_clearance_deficit -= margins.1;
        let safe = report.max_penalty_excess <= config.continuation.tolerance
            && report.max_clearance_deficit <= config.continuation.tolerance;
        let converged = trace.termination.converged();
        traces.push(trace);
        result = Some((report, safe && converged));
        if safe {
            break;
        }
    }
    let (report, ok) = result.expect("at least one solve");
    let trajectory = decision.trajectory(&x)?;
    let initial_cost = decision.evaluate(&x_init, &fields, &weights).ok().map(|r| r.2);
    metrics.t_optimize = opt_started.elapsed().as_secs_f64();
    metrics.t_plan = started.elapsed().as_secs_f64();
    let (len, kappa_m) = trajectory_metrics(&trajectory);
    metrics.len = len;
    metrics.kappa_m = kappa_m;
    Ok(PlanResult {
        status: if ok { PlanStatus::Success } else { PlanStatus::Infeasible },
        path: Some(path),
        initial: Some(initial),
        trajectory: Some(trajectory),
        initial_cost,
        costs: Some(report),
        final_weights: weights,
        traces,
        metrics,
    })
}

/// Assess `cloud` and plan once.
pub fn plan(cloud: &PointCloud, start: &Point3, goal: &Point3, config: &PlannerConfig) -> Result<PlanResult> {
    let terrain = assess_terrain(cloud, config)?;
    plan_on(&terrain, start, goal, config)
}

/// Termination of the last solve, if any ran.
pub fn last_termination(result: &PlanResult) -> Option<Termination> {
    result.traces.last().map(|t| t.termination)
}

/// Straight line check helper: largest distance of the trajectory from the
/// segment between its end points, sampled uniformly in time.
pub fn max_lateral_deviation(traj: &MincoTrajectory, samples: usize) -> f64 {
    let a = traj.start.position;
    let b = traj.end.position;
    let dir: Vector3<f64> = (b - a).normalize();
    let total = traj.total_duration();
    (0..=samples)
        .map(|k| {
            let p = traj.evaluate(total * k as f64 / samples as f64, 0).expect("in range");
            let d = p - a;
            (d - dir * d.dot(&dir)).norm()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_round_trip_and_override() {
        let c = PlannerConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(PlannerConfig::from_json(&text).unwrap(), c);
        let mut d = c;
        d.set("cost.d_thr=0.2").unwrap();
        assert_eq!(d.cost.d_thr, 0.2);
        d.set("diffusion.mode=convolution").unwrap();
        assert_eq!(d.diffusion.mode, DiffusionMode::Convolution);
        assert!(d.set("cost.nope=1").is_err());
        assert!(d.set("cost.d_thr=\"x\"").is_err());
    }

    #[test]
    fn cross_consistency() {
        let mut c = PlannerConfig::default();
        c.cost.kappa = 3;
        assert!(c.validate().is_err());
        let mut c = PlannerConfig::default();
        c.cost.d_thr = 0.05;
        assert!(c.validate().is_err());
        let mut c = PlannerConfig::default();
        c.robot_radius = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_two_points() {
        let c = PlannerConfig::default();
        let tr = initialize_trajectory(&[Point3::zeros(), Point3::new(1.0, 0.0, 0.0)], &c).unwrap();
        assert_eq!(tr.pieces(), 1);
        assert!((tr.t[0] - 1.0 / c.v_init()).abs() < 1e-12);
        assert!(initialize_trajectory(&[Point3::zeros()], &c).is_err());
    }

    #[test]
    fn init_l_shape_stride_one() {
        let mut c = PlannerConfig::default();
        c.init.stride = 1;
        let pts = [Point3::zeros(), Point3::new(1.0, 0.0, 0.0), Point3::new(1.0, 1.0, 0.0)];
        let tr = initialize_trajectory(&pts, &c).unwrap();
        assert_eq!(tr.q, vec![pts[1]]);
    }

    #[test]
    fn metrics_of_straight_line() {
        let c = PlannerConfig::default();
        let tr = initialize_trajectory(&[Point3::zeros(), Point3::new(10.0, 0.0, 0.0)], &c).unwrap();
        let (len, k) = trajectory_metrics(&tr);
        assert!((len - 10.0).abs() < 1e-6);
        assert!(k < 1e-9);
    }
}
