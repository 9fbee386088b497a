//! End-to-end planning, the benchmark harness and the command-line tool.

use std::process::Command;

use groundplan::bench::{generate_scene, run_benchmark, SceneKind, SceneSpec, TrialReport};
use groundplan::planner::{assess_terrain, max_lateral_deviation, plan_on, PlanStatus, PlannerConfig, Terrain};
use groundplan::{Point3, PointCloud};

fn flat_spec() -> SceneSpec {
    let mut s = SceneSpec::new(SceneKind::UnevenTerrain, 3);
    s.amplitude = 0.0;
    s.trees = 0;
    s.extent = 12.0;
    s.noise = 0.0;
    s
}

fn flat_terrain(cfg: &PlannerConfig) -> Terrain {
    assess_terrain(&generate_scene(&flat_spec()), cfg).unwrap()
}

#[test]
fn straight_line_on_flat_ground() {
    let cfg = PlannerConfig::default();
    let terrain = flat_terrain(&cfg);
    let res = plan_on(&terrain, &Point3::new(1.0, 6.0, 0.0), &Point3::new(11.0, 6.0, 0.0), &cfg).unwrap();
    assert_eq!(res.status, PlanStatus::Success);
    let tr = res.trajectory.as_ref().unwrap();
    assert!(res.metrics.kappa_m <= 0.01, "kappa_m {}", res.metrics.kappa_m);
    assert!(max_lateral_deviation(tr, 400) < 0.05);
    assert!((res.metrics.len - 10.0).abs() < 0.3, "len {}", res.metrics.len);
    // body rides at the full height above the floor
    let mid = tr.evaluate(0.5 * tr.total_duration(), 0).unwrap();
    assert!((mid.z - cfg.height.h_max).abs() < 0.1, "z {}", mid.z);
}

#[test]
fn walled_off_goal_has_no_path() {
    let cfg = PlannerConfig::default();
    let mut pts = generate_scene(&flat_spec()).points().to_vec();
    let (cx, cy, half) = (9.0, 6.0, 1.0);
    for k in 0..=30 {
        let z = 0.05 * k as f64;
        for i in 0..=40 {
            let u = -half + 0.05 * i as f64;
            pts.push(Point3::new(cx + u, cy - half, z));
            pts.push(Point3::new(cx + u, cy + half, z));
            pts.push(Point3::new(cx - half, cy + u, z));
            pts.push(Point3::new(cx + half, cy + u, z));
        }
    }
    let terrain = assess_terrain(&PointCloud::new(pts), &cfg).unwrap();
    let res = plan_on(&terrain, &Point3::new(2.0, 6.0, 0.0), &Point3::new(cx, cy, 0.0), &cfg).unwrap();
    assert_eq!(res.status, PlanStatus::NoPath);
    assert!(res.trajectory.is_none());
}

#[test]
fn planning_is_deterministic() {
    let cfg = PlannerConfig::default();
    let terrain = flat_terrain(&cfg);
    let (s, g) = (Point3::new(1.5, 2.0, 0.0), Point3::new(10.0, 9.5, 0.0));
    let a = plan_on(&terrain, &s, &g, &cfg).unwrap();
    let b = plan_on(&terrain, &s, &g, &cfg).unwrap();
    let (ta, tb) = (a.trajectory.unwrap(), b.trajectory.unwrap());
    assert_eq!(ta.c, tb.c);
    assert_eq!(ta.t, tb.t);
}

#[test]
fn benchmark_aggregates_follow_from_rows() {
    let cfg = PlannerConfig::default();
    let report = run_benchmark(&flat_spec(), 3, &cfg).unwrap();
    assert_eq!(report.rows.len(), 3);
    let again = TrialReport::from_rows(report.scene, report.rows.clone());
    assert_eq!(again.success_rate, report.success_rate);
    assert_eq!(again.kappa_m, report.kappa_m);
    assert_eq!(again.len, report.len);
    let ok = report.rows.iter().filter(|r| r.status == Some(PlanStatus::Success)).count();
    assert_eq!(report.success_rate, ok as f64 / 3.0);
    assert!(report.success_rate > 0.0);
}

#[test]
fn benchmark_is_reproducible_from_the_seed() {
    let cfg = PlannerConfig::default();
    let a = run_benchmark(&flat_spec(), 2, &cfg).unwrap();
    let b = run_benchmark(&flat_spec(), 2, &cfg).unwrap();
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert_eq!(ra.start, rb.start);
        assert_eq!(ra.goal, rb.goal);
        assert_eq!(ra.status, rb.status);
        assert_eq!(ra.final_cost, rb.final_cost);
        assert_eq!(ra.kappa_m, rb.kappa_m);
    }
}

#[test]
fn config_overrides_round_trip() {
    let mut cfg = PlannerConfig::default();
    cfg.set("cost.lambda_s=250").unwrap();
    cfg.set("height.h_max=0.8").unwrap();
    assert_eq!(cfg.cost.lambda_s, 250.0);
    let text = serde_json::to_string(&cfg).unwrap();
    let back = PlannerConfig::from_json(&text).unwrap();
    assert_eq!(back.cost, cfg.cost);
    assert_eq!(back.height, cfg.height);
    assert!(cfg.set("cost.no_such_key=1").is_err());
    let partial = PlannerConfig::from_json(r#"{"cost": {"d_thr": 0.2}}"#).unwrap();
    assert_eq!(partial.cost.d_thr, 0.2);
    assert_eq!(partial.cost.lambda_s, PlannerConfig::default().cost.lambda_s);
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_groundplan"))
}

#[test]
fn cli_help_succeeds() {
    let out = cli().arg("--help").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("plan"));
}

#[test]
fn cli_rejects_unknown_flags() {
    let out = cli().args(["plan", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_plans_on_the_flat_demo() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli()
        .args(["plan", "--scene", "flat", "--start", "1,6,0", "--goal", "11,6,0", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["summary.json", "path.csv", "trajectory.json", "trajectory.csv", "cost_report.json"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "success");
    let traj = groundplan::minco::MincoTrajectory::read_json(&dir.path().join("trajectory.json")).unwrap();
    assert!((traj.end.position.x - 11.0).abs() < 0.2);
}

#[test]
fn cli_reports_unreachable_goals() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli()
        .args(["plan", "--scene", "flat", "--start", "1,6,0", "--goal", "40,40,0", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("error.json")).unwrap()).unwrap();
    assert!(err["error"].is_string());
    assert!(err["message"].is_string());
}

#[test]
fn cli_field_dump_can_be_inspected() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli().args(["field", "--scene", "flat", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = cli()
        .arg("inspect")
        .arg(dir.path().join("esdf.bin"))
        .args(["--layer", "2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("esdf_layer002.csv").is_file());
}
