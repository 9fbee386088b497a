//! Command-line front end.
//!
//! Every subcommand is a thin shell over the library: it loads inputs,
//! calls one pipeline stage and writes artifacts into the output directory.
//! Human-readable progress goes to standard error; files carry everything
//! machine-readable.
//!
//! Exit codes: 0 on success, 1 when planning (or any pipeline stage) fails,
//! 2 on usage and configuration errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::{generate_scene, run_benchmark, sample_query, SceneKind, SceneSpec};
use crate::cloud_io::{load_cloud, save_cloud, CloudFormat, Point3, PointCloud};
use crate::error::{Error, Result};
use crate::gridmap::Field3;
use crate::path_search::{astar, SearchSpace};
use crate::planner::{assess_terrain, plan_on, PlanStatus, PlannerConfig, Terrain};
use crate::vgf::valid_ground_filter;

#[derive(Debug, Parser)]
#[command(name = "groundplan", version, about = "Terrain-aware trajectory planning for ground robots")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config file; missing keys keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in starting config, applied before `--config`.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    /// Dotted-key override such as `cost.lambda_s=2000`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed for scene generation and query sampling.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Write per-term cost reports and solver traces.
    #[arg(long, global = true)]
    pub debug_costs: bool,
    /// Write binary dumps of every field.
    #[arg(long, global = true)]
    pub dump_fields: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Default,
    /// Low clearance and tight height tracking for passing under overhangs.
    Crouch,
}

/// Where the point cloud comes from.
#[derive(Debug, Args)]
pub struct CloudSource {
    /// Point cloud file (.pcd, .ply, .xyz/.csv).
    pub cloud: Option<PathBuf>,
    /// Override format detection from the extension.
    #[arg(long, value_enum)]
    pub format: Option<CloudFormat>,
    /// Generate a synthetic scene instead of reading a file.
    #[arg(long, value_enum, conflicts_with = "cloud")]
    pub scene: Option<DemoScene>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoScene {
    /// Noise-free level floor, 12 m across.
    Flat,
    UnevenTerrain,
    MultiLevel,
    CorridorWithTables,
    RampBetweenFloors,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Keep the standable points of a cloud.
    Filter {
        #[command(flatten)]
        source: CloudSource,
    },
    /// Build every field and the search space.
    Field {
        #[command(flatten)]
        source: CloudSource,
    },
    /// Run A* between two points.
    Search {
        #[command(flatten)]
        source: CloudSource,
        /// Directory holding a `standable.bin` written by `field`.
        #[arg(long, conflicts_with_all = ["cloud", "scene"])]
        space: Option<PathBuf>,
        #[arg(long, value_parser = parse_point)]
        start: Point3,
        #[arg(long, value_parser = parse_point)]
        goal: Point3,
    },
    /// Plan a trajectory.
    Plan {
        #[command(flatten)]
        source: CloudSource,
        /// `x,y,z`; sampled from the standable terrain when omitted.
        #[arg(long, value_parser = parse_point)]
        start: Option<Point3>,
        #[arg(long, value_parser = parse_point)]
        goal: Option<Point3>,
    },
    /// Run randomized trials on a synthetic scene.
    Bench {
        #[arg(long, value_enum)]
        scene: SceneKind,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Print statistics of a field dump and write per-layer CSV slices.
    Inspect {
        dump: PathBuf,
        /// Only this layer; all layers when omitted.
        #[arg(long)]
        layer: Option<usize>,
    },
}

fn parse_point(s: &str) -> std::result::Result<Point3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok(Point3::new(x, y, z)),
        _ => Err(format!("expected three finite numbers x,y,z, got {s:?}")),
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let out = cli.common.out.clone();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let usage = matches!(e, Error::Config(_) | Error::InvalidParam(_) | Error::Json(_));
            write_error_json(&out, &e);
            if usage {
                2
            } else {
                1
            }
        }
    }
}

fn write_error_json(out: &Path, e: &Error) {
    let kind = format!("{e:?}");
    let kind = kind.split(['(', ' ', '{']).next().unwrap_or("Error").to_string();
    let doc = serde_json::json!({ "error": kind, "message": e.to_string() });
    if std::fs::create_dir_all(out).is_ok() {
        let _ = std::fs::write(out.join("error.json"), serde_json::to_string_pretty(&doc).unwrap_or_default());
    }
}

fn load_config(common: &CommonArgs) -> Result<PlannerConfig> {
    let mut config = match common.preset {
        Preset::Default => PlannerConfig::default(),
        Preset::Crouch => PlannerConfig::crouch(),
    };
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        config = config.merge_json(&text)?;
    }
    for o in &common.overrides {
        config.set(o)?;
    }
    config.validate()?;
    Ok(config)
}

fn scene_spec(scene: DemoScene, seed: u64) -> SceneSpec {
    let kind = match scene {
        DemoScene::Flat | DemoScene::UnevenTerrain => SceneKind::UnevenTerrain,
        DemoScene::MultiLevel => SceneKind::MultiLevel,
        DemoScene::CorridorWithTables => SceneKind::CorridorWithTables,
        DemoScene::RampBetweenFloors => SceneKind::RampBetweenFloors,
    };
    let mut spec = SceneSpec::new(kind, seed);
    if scene == DemoScene::Flat {
        spec.amplitude = 0.0;
        spec.trees = 0;
        spec.extent = 12.0;
        spec.noise = 0.0;
    }
    spec
}

fn load_source(source: &CloudSource, seed: u64) -> Result<PointCloud> {
    if let Some(scene) = source.scene {
        let cloud = generate_scene(&scene_spec(scene, seed));
        eprintln!("generated {:?} scene: {} points", scene, cloud.len());
        return Ok(cloud);
    }
    let path = source
        .cloud
        .as_ref()
        .ok_or_else(|| Error::InvalidParam("give a cloud file or --scene".into()))?;
    let format = match source.format.or_else(|| CloudFormat::from_path(path)) {
        Some(f) => f,
        None => return Err(Error::InvalidParam(format!("cannot tell the format of {}; pass --format", path.display()))),
    };
    let loaded = load_cloud(path, format)?;
    eprintln!(
        "loaded {} points from {} ({} non-finite rows dropped)",
        loaded.cloud.len(),
        path.display(),
        loaded.rejected_non_finite
    );
    Ok(loaded.cloud)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn occupancy_field(terrain: &Terrain) -> Field3 {
    let occ = &terrain.occupancy;
    Field3 {
        spec: occ.spec,
        values: occ.occupied.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect(),
    }
}

fn dump_fields(terrain: &Terrain, dir: &Path) -> Result<()> {
    occupancy_field(terrain).write_dump(&dir.join("occupancy.bin"))?;
    terrain.esdf.field.write_dump(&dir.join("esdf.bin"))?;
    terrain.penalty.s_raw.write_dump(&dir.join("penalty_raw.bin"))?;
    terrain.penalty.s_diff.write_dump(&dir.join("penalty.bin"))?;
    terrain.heights.ground.write_dump(&dir.join("ground_height.bin"))?;
    terrain.heights.suitable.write_dump(&dir.join("suitable_height.bin"))?;
    terrain.space.write_dump(&dir.join("standable.bin"))?;
    Ok(())
}

fn assess_summary(terrain: &Terrain) -> serde_json::Value {
    let stages: serde_json::Map<String, serde_json::Value> =
        terrain.stage_times.iter().map(|(k, v)| (k.to_string(), (*v).into())).collect();
    serde_json::json!({
        "t_assess": terrain.t_assess,
        "stages": stages,
        "vgf": terrain.vgf_stats,
        "dims": terrain.spec().dims,
        "resolution": terrain.spec().resolution,
        "standable_voxels": terrain.space.count(),
    })
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let common = &cli.common;
    let config = load_config(common)?;
    let out = &common.out;
    match &cli.command {
        Command::Filter { source } => {
            let cloud = load_source(source, common.seed)?;
            let vgf = valid_ground_filter(&cloud, &config.vgf)?;
            ensure_dir(out)?;
            save_cloud(&vgf.cloud, &out.join("valid_ground.xyz"), CloudFormat::XyzCsv)?;
            write_json(&out.join("vgf_stats.json"), &vgf.stats)?;
            eprintln!(
                "kept {} points, rejected {} obstructed and {} steep",
                vgf.stats.kept, vgf.stats.rejected_obstructed, vgf.stats.rejected_steep
            );
            Ok(0)
        }
        Command::Field { source } => {
            let cloud = load_source(source, common.seed)?;
            let terrain = assess_terrain(&cloud, &config)?;
            ensure_dir(out)?;
            dump_fields(&terrain, out)?;
            write_json(&out.join("assess.json"), &assess_summary(&terrain))?;
            eprintln!(
                "assessed terrain in {:.3} s: grid {:?}, {} standable voxels",
                terrain.t_assess,
                terrain.spec().dims,
                terrain.space.count()
            );
            Ok(0)
        }
        Command::Search { source, space, start, goal } => {
            let space = match space {
                Some(dir) => SearchSpace::read_dump(&dir.join("standable.bin"), config.step_max())?,
                None => {
                    let cloud = load_source(source, common.seed)?;
                    assess_terrain(&cloud, &config)?.space
                }
            };
            let path = astar(&space, start, goal)?;
            ensure_dir(out)?;
            path.write_csv(&out.join("path.csv"))?;
            write_json(
                &out.join("search.json"),
                &serde_json::json!({ "cost": path.cost, "explored": path.explored, "cells": path.cells.len() }),
            )?;
            eprintln!("path of {} cells, cost {:.3} m, {} cells explored", path.cells.len(), path.cost, path.explored);
            Ok(0)
        }
        Command::Plan { source, start, goal } => {
            let cloud = load_source(source, common.seed)?;
            let terrain = assess_terrain(&cloud, &config)?;
            eprintln!("assessed terrain in {:.3} s", terrain.t_assess);
            let (start, goal) = match (start, goal) {
                (Some(s), Some(g)) => (*s, *g),
                (None, None) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
                    let extent = terrain.spec().max_corner() - terrain.spec().origin;
                    sample_query(&terrain, &mut rng, 0.5 * extent.x.max(extent.y))?
                }
                _ => return Err(Error::InvalidParam("give both --start and --goal, or neither".into())),
            };
            ensure_dir(out)?;
            if common.dump_fields {
                dump_fields(&terrain, out)?;
            }
            let result = plan_on(&terrain, &start, &goal, &config)?;
            let mut summary = result.summary_json();
            summary["start"] = serde_json::json!([start.x, start.y, start.z]);
            summary["goal"] = serde_json::json!([goal.x, goal.y, goal.z]);
            summary["t_assess"] = terrain.t_assess.into();
            write_json(&out.join("summary.json"), &summary)?;
            if let Some(path) = &result.path {
                path.write_csv(&out.join("path.csv"))?;
            }
            if let Some(traj) = &result.trajectory {
                traj.write_json(&out.join("trajectory.json"))?;
                traj.write_csv(&out.join("trajectory.csv"), 0.05)?;
            }
            if let Some(costs) = &result.costs {
                let brief = serde_json::json!({
                    "total": costs.total, "js": costs.js, "jt": costs.jt, "jm": costs.jm,
                    "jd": costs.jd, "jh": costs.jh,
                    "max_penalty_excess": costs.max_penalty_excess,
                    "max_clearance_deficit": costs.max_clearance_deficit,
                    "initial_total": result.initial_cost.as_ref().map(|c| c.total),
                });
                write_json(&out.join("cost_report.json"), &brief)?;
            }
            if common.debug_costs {
                if let Some(costs) = &result.costs {
                    write_json(&out.join("cost_debug.json"), costs)?;
                }
                if let Some(init) = &result.initial_cost {
                    write_json(&out.join("cost_debug_initial.json"), init)?;
                }
                for (i, trace) in result.traces.iter().enumerate() {
                    trace.write_csv(&out.join(format!("solver_round{i}.csv")))?;
                }
            }
            match result.status {
                PlanStatus::Success => {
                    eprintln!(
                        "success: length {:.2} m, mean curvature {:.4}, planned in {:.3} s",
                        result.metrics.len, result.metrics.kappa_m, result.metrics.t_plan
                    );
                    Ok(0)
                }
                PlanStatus::NoPath => Err(Error::NoPath {
                    explored: result.path.as_ref().map_or(0, |p| p.explored),
                }),
                PlanStatus::Infeasible => {
                    let costs = result.costs.as_ref();
                    let doc = serde_json::json!({
                        "error": "Infeasible",
                        "message": "optimized trajectory misses a safety threshold or did not converge",
                        "max_penalty_excess": costs.map(|c| c.max_penalty_excess),
                        "max_clearance_deficit": costs.map(|c| c.max_clearance_deficit),
                        "termination": result.traces.last().map(|t| t.termination),
                    });
                    write_json(&out.join("error.json"), &doc)?;
                    eprintln!("planning failed: trajectory infeasible (best effort written)");
                    Ok(1)
                }
            }
        }
        Command::Bench { scene, trials } => {
            let spec = SceneSpec::new(*scene, common.seed);
            let report = run_benchmark(&spec, *trials, &config)?;
            ensure_dir(out)?;
            report.write_csv(&out.join("trials.csv"))?;
            report.write_json(&out.join("report.json"))?;
            eprintln!(
                "{} trials: success rate {:.3}, t_assess {:.3} s, median t_plan {:.3} s, median kappa_m {:.4}",
                report.rows.len(),
                report.success_rate,
                report.t_assess.median,
                report.t_plan.median,
                report.kappa_m.median
            );
            Ok(0)
        }
        Command::Inspect { dump, layer } => {
            let field = Field3::read_dump(dump)?;
            let (lo, hi, mean) = field.stats();
            eprintln!(
                "{}: dims {:?}, resolution {}, origin ({:.3}, {:.3}, {:.3})",
                dump.display(),
                field.spec.dims,
                field.spec.resolution,
                field.spec.origin.x,
                field.spec.origin.y,
                field.spec.origin.z
            );
            eprintln!("finite values: min {lo}, max {hi}, mean {mean}");
            let nz = field.spec.dims[2];
            let layers: Vec<usize> = match layer {
                Some(k) if *k < nz => vec![*k],
                Some(k) => return Err(Error::InvalidParam(format!("layer {k} outside 0..{nz}"))),
                None => (0..nz).collect(),
            };
            ensure_dir(out)?;
            let stem = dump.file_stem().and_then(|s| s.to_str()).unwrap_or("field");
            for k in layers {
                field.write_layer_csv(&out.join(format!("{stem}_layer{k:03}.csv")), k)?;
            }
            Ok(0)
        }
    }
}
