//! Trajectory cost terms and their exact gradients.
//!
//! Penalty terms are evaluated at constraint points: sample `j` of piece `i`
//! sits at local time `(j / kappa_i) T_i` and contributes `F(p, v, a) T_i / kappa_i`.
//! The chain rule through the sampled derivatives gives
//!
//! ```text
//! dF/dc_i = (T_i / kappa_i) (b(t) F_p^T + b'(t) F_v^T + b''(t) F_a^T)
//! dF/dT_i = F / kappa_i + (T_i / kappa_i) (j / kappa_i) (F_p . v + F_v . a + F_a . jerk)
//! ```
//!
//! where `b` is the monomial basis. The cubic penalty `C(x) = max(x, 0)^3`
//! makes every penalty twice continuously differentiable at activation.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridmap::FieldQuery;
use crate::minco::{basis, BoundaryState, Coeffs, ConstraintPoint, ConstraintPointSet, MincoTrajectory};
use crate::cloud_io::Point3;
use crate::solver::{inverse_time_map, time_map};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub lambda_smooth: f64,
    pub lambda_d: f64,
    pub lambda_h: f64,
    /// Highest tolerated diffused travel penalty.
    pub s_thr: f64,
    /// Required clearance from the nearest obstacle, meters.
    pub d_thr: f64,
    pub v_max: f64,
    pub a_max: f64,
    /// Constraint points per piece.
    pub kappa: usize,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            lambda_s: 1000.0,
            lambda_t: 1.0,
            lambda_smooth: 1.0,
            lambda_d: 100.0,
            lambda_h: 100.0,
            s_thr: 1.0,
            d_thr: 0.3,
            v_max: 1.5,
            a_max: 2.0,
            kappa: 16,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_s, self.lambda_t, self.lambda_smooth, self.lambda_d, self.lambda_h];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParam(format!("cost weights must be >= 0, got {weights:?}")));
        }
        for (name, v) in [("s_thr", self.s_thr), ("d_thr", self.d_thr), ("v_max", self.v_max), ("a_max", self.a_max)] {
            if !(v > 0.0) {
                return Err(Error::InvalidParam(format!("{name} = {v} must be > 0")));
            }
        }
        if self.kappa == 0 {
            return Err(Error::InvalidParam("kappa must be >= 1".into()));
        }
        Ok(())
    }
}

#[inline]
pub fn cubic(x: f64) -> f64 {
    if x > 0.0 {
        x * x * x
    } else {
        0.0
    }
}

#[inline]
pub fn quadratic(x: f64) -> f64 {
    if x > 0.0 {
        x * x
    } else {
        0.0
    }
}

/// Value of one cost term with its gradient in coefficient and time space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermGrad {
    pub value: f64,
    pub dc: Vec<Coeffs>,
    pub dt: Vec<f64>,
}

impl TermGrad {
    pub fn zeros(m: usize) -> Self {
        Self {
            value: 0.0,
            dc: vec![Coeffs::zeros(); m],
            dt: vec![0.0; m],
        }
    }

    fn accumulate(&mut self, other: &TermGrad, w: f64) {
        self.value += w * other.value;
        for (a, b) in self.dc.iter_mut().zip(&other.dc) {
            *a += b * w;
        }
        for (a, b) in self.dt.iter_mut().zip(&other.dt) {
            *a += w * b;
        }
    }
}

/// Integrand and partials at one constraint point.
struct Local {
    f: f64,
    fp: Vector3<f64>,
    fv: Vector3<f64>,
    fa: Vector3<f64>,
}

impl Local {
    const ZERO: Local = Local {
        f: 0.0,
        fp: Vector3::new(0.0, 0.0, 0.0),
        fv: Vector3::new(0.0, 0.0, 0.0),
        fa: Vector3::new(0.0, 0.0, 0.0),
    };
}

/// Sum `F T_i / kappa_i` over all constraint points with the chain rule.
fn integrate<F>(traj: &MincoTrajectory, set: &ConstraintPointSet, local: F) -> Result<TermGrad>
where
    F: Fn(&ConstraintPoint) -> Result<Local> + Sync,
{
    let locals: Vec<Local> = set.points.par_iter().map(&local).collect::<Result<_>>()?;
    let mut out = TermGrad::zeros(traj.pieces());
    for (cp, l) in set.points.iter().zip(&locals) {
        if l.f == 0.0 && l.fp.norm_squared() == 0.0 && l.fv.norm_squared() == 0.0 && l.fa.norm_squared() == 0.0 {
            continue;
        }
        let i = cp.piece;
        let kappa = set.kappa[i] as f64;
        let ti = traj.t[i];
        let w = ti / kappa;
        out.value += l.f * w;
        let (b0, b1, b2) = (basis(cp.t, 0), basis(cp.t, 1), basis(cp.t, 2));
        for n in 0..6 {
            let row = l.fp * b0[n] + l.fv * b1[n] + l.fa * b2[n];
            for a in 0..3 {
                out.dc[i][(n, a)] += w * row[a];
            }
        }
        let chain = l.fp.dot(&cp.velocity) + l.fv.dot(&cp.acceleration) + l.fa.dot(&cp.jerk);
        out.dt[i] += l.f / kappa + w * (cp.j as f64 / kappa) * chain;
    }
    Ok(out)
}

fn query(field: &dyn FieldQuery, cp: &ConstraintPoint) -> Result<(f64, Vector3<f64>)> {
    field.query(&cp.position).map_err(|e| match e {
        Error::OutOfBounds(_) => Error::ConstraintOutOfBounds {
            piece: cp.piece,
            sample: cp.j,
        },
        other => other,
    })
}

/// Safety term from the diffused penalty `S'` and the obstacle distance `d`.
pub fn cost_safety(
    traj: &MincoTrajectory,
    set: &ConstraintPointSet,
    esdf: &dyn FieldQuery,
    penalty: &dyn FieldQuery,
    weights: &CostWeights,
) -> Result<TermGrad> {
    integrate(traj, set, |cp| {
        let (s, gs) = query(penalty, cp)?;
        let (d, gd) = query(esdf, cp)?;
        let g_s = (s - weights.s_thr).max(0.0);
        let g_c = (weights.d_thr - d).max(0.0);
        let g_n = g_s + g_c;
        if g_n <= 0.0 {
            return Ok(Local::ZERO);
        }
        let mut dir = Vector3::zeros();
        if g_s > 0.0 {
            dir += gs;
        }
        if g_c > 0.0 {
            dir -= gd;
        }
        Ok(Local {
            f: cubic(g_n),
            fp: dir * (3.0 * quadratic(g_n)),
            ..Local::ZERO
        })
    })
}

/// Total duration.
pub fn cost_time(t: &[f64]) -> TermGrad {
    TermGrad {
        value: t.iter().sum(),
        dc: vec![Coeffs::zeros(); t.len()],
        dt: vec![1.0; t.len()],
    }
}

/// Integrated squared jerk, in closed form per piece.
pub fn cost_smoothness(traj: &MincoTrajectory) -> TermGrad {
    let m = traj.pieces();
    let mut out = TermGrad::zeros(m);
    for i in 0..m {
        let c = &traj.c[i];
        let t = traj.t[i];
        let a: Vector3<f64> = c.row(3).transpose() * 6.0;
        let b: Vector3<f64> = c.row(4).transpose() * 24.0;
        let cc: Vector3<f64> = c.row(5).transpose() * 60.0;
        let (t2, t3, t4, t5) = (t * t, t * t * t, t.powi(4), t.powi(5));
        out.value += a.dot(&a) * t
            + a.dot(&b) * t2
            + (b.dot(&b) + 2.0 * a.dot(&cc)) * t3 / 3.0
            + b.dot(&cc) * t4 / 2.0
            + cc.dot(&cc) * t5 / 5.0;
        let da = a * (2.0 * t) + b * t2 + cc * (2.0 * t3 / 3.0);
        let db = a * t2 + b * (2.0 * t3 / 3.0) + cc * (t4 / 2.0);
        let dcc = a * (2.0 * t3 / 3.0) + b * (t4 / 2.0) + cc * (2.0 * t5 / 5.0);
        for ax in 0..3 {
            out.dc[i][(3, ax)] = 6.0 * da[ax];
            out.dc[i][(4, ax)] = 24.0 * db[ax];
            out.dc[i][(5, ax)] = 60.0 * dcc[ax];
        }
        let jerk_end = a + b * t + cc * t2;
        out.dt[i] = jerk_end.norm_squared();
    }
    out
}

/// Velocity and acceleration limits as cubic penalties.
pub fn cost_dynamics(traj: &MincoTrajectory, set: &ConstraintPointSet, v_max: f64, a_max: f64) -> Result<TermGrad> {
    integrate(traj, set, |cp| {
        let gv = cp.velocity.norm_squared() - v_max * v_max;
        let ga = cp.acceleration.norm_squared() - a_max * a_max;
        Ok(Local {
            f: cubic(gv) + cubic(ga),
            fv: cp.velocity * (6.0 * quadratic(gv)),
            fa: cp.acceleration * (6.0 * quadratic(ga)),
            ..Local::ZERO
        })
    })
}

/// Ground and suitable-height queries with the admissible height range.
pub struct HeightQuery<'a> {
    pub ground: &'a dyn FieldQuery,
    pub suitable: &'a dyn FieldQuery,
    pub h_min: f64,
    pub h_max: f64,
}

/// Squared deviation of `z` from `h_G + h_S` below the trajectory.
pub fn cost_height(traj: &MincoTrajectory, set: &ConstraintPointSet, h: &HeightQuery) -> Result<TermGrad> {
    integrate(traj, set, |cp| {
        let (hg, ghg) = query(h.ground, cp)?;
        let (hs_raw, ghs_raw) = query(h.suitable, cp)?;
        let (hs, ghs) = if hs_raw < h.h_min {
            (h.h_min, Vector3::zeros())
        } else if hs_raw > h.h_max {
            (h.h_max, Vector3::zeros())
        } else {
            (hs_raw, ghs_raw)
        };
        let r = cp.position.z - hg - hs;
        Ok(Local {
            f: r * r,
            fp: (Vector3::z() - ghg - ghs) * (2.0 * r),
            ..Local::ZERO
        })
    })
}

/// Every field the objective reads.
pub struct CostFields<'a> {
    pub esdf: &'a dyn FieldQuery,
    pub penalty: &'a dyn FieldQuery,
    pub height: Option<HeightQuery<'a>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub total: f64,
    pub js: f64,
    pub jt: f64,
    pub jm: f64,
    pub jd: f64,
    pub jh: f64,
    pub dj_dc: Vec<Coeffs>,
    pub dj_dt: Vec<f64>,
    /// Gradient in waypoint space.
    pub dh_dq: Vec<Vector3<f64>>,
    /// Gradient in duration space.
    pub dh_dt: Vec<f64>,
    /// Largest `S' - s_thr` over the constraint points.
    pub max_penalty_excess: f64,
    /// Largest `d_thr - d` over the constraint points.
    pub max_clearance_deficit: f64,
}

/// Weighted sum of all terms, pulled back onto `(q, T)`.
pub fn total_cost(traj: &MincoTrajectory, fields: &CostFields, weights: &CostWeights) -> Result<CostReport> {
    let m = traj.pieces();
    let set = traj.sample_constraint_points(&vec![weights.kappa; m]);
    let mut sum = TermGrad::zeros(m);

    let js = cost_safety(traj, &set, fields.esdf, fields.penalty, weights)?;
    sum.accumulate(&js, weights.lambda_s);
    let jt = cost_time(&traj.t);
    sum.accumulate(&jt, weights.lambda_t);
    let jm = cost_smoothness(traj);
    sum.accumulate(&jm, weights.lambda_smooth);
    let jd = cost_dynamics(traj, &set, weights.v_max, weights.a_max)?;
    sum.accumulate(&jd, weights.lambda_d);
    let jh = match &fields.height {
        Some(h) => {
            let jh = cost_height(traj, &set, h)?;
            sum.accumulate(&jh, weights.lambda_h);
            jh.value
        }
        None => 0.0,
    };

    let (max_penalty_excess, max_clearance_deficit) = violations(&set, fields, weights)?;
    let (dh_dq, dh_dt) = traj.propagate_gradient(&sum.dc, &sum.dt)?;
    Ok(CostReport {
        total: sum.value,
        js: js.value,
        jt: jt.value,
        jm: jm.value,
        jd: jd.value,
        jh,
        dj_dc: sum.dc,
        dj_dt: sum.dt,
        dh_dq,
        dh_dt,
        max_penalty_excess,
        max_clearance_deficit,
    })
}

fn violations(set: &ConstraintPointSet, fields: &CostFields, weights: &CostWeights) -> Result<(f64, f64)> {
    let mut ps = f64::NEG_INFINITY;
    let mut dc = f64::NEG_INFINITY;
    for cp in &set.points {
        ps = ps.max(query(fields.penalty, cp)?.0 - weights.s_thr);
        dc = dc.max(weights.d_thr - query(fields.esdf, cp)?.0);
    }
    Ok((ps, dc))
}

/// Flat decision vector `[q_1.x, q_1.y, q_1.z, .., tau_1, .., tau_M]` with
/// fixed boundary states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub start: BoundaryState,
    pub end: BoundaryState,
    pub pieces: usize,
}

impl Decision {
    pub fn len(&self) -> usize {
        3 * (self.pieces - 1) + self.pieces
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pack(q: &[Point3], t: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = q.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        x.extend(inverse_time_map(t));
        x
    }

    pub fn unpack(&self, x: &[f64]) -> (Vec<Point3>, Vec<f64>, Vec<f64>) {
        let nq = self.pieces - 1;
        let q = (0..nq).map(|i| Point3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])).collect();
        let (t, dt_dtau) = time_map(&x[3 * nq..]);
        (q, t, dt_dtau)
    }

    pub fn trajectory(&self, x: &[f64]) -> Result<MincoTrajectory> {
        let (q, t, _) = self.unpack(x);
        MincoTrajectory::new(self.start, self.end, q, t)
    }

    /// Objective value and gradient in decision space.
    pub fn evaluate(&self, x: &[f64], fields: &CostFields, weights: &CostWeights) -> Result<(f64, Vec<f64>, CostReport)> {
        let (q, t, dt_dtau) = self.unpack(x);
        let traj = MincoTrajectory::new(self.start, self.end, q, t)?;
        let report = total_cost(&traj, fields, weights)?;
        let mut g: Vec<f64> = report.dh_dq.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
        g.extend(report.dh_dt.iter().zip(&dt_dtau).map(|(a, b)| a * b));
        Ok((report.total, g, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmap::AnalyticField;

    fn rest_quintic() -> MincoTrajectory {
        MincoTrajectory::new(
            BoundaryState::at_rest(Point3::zeros()),
            BoundaryState::at_rest(Point3::new(1.0, 0.0, 0.0)),
            vec![],
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn jerk_energy_of_rest_to_rest() {
        let jm = cost_smoothness(&rest_quintic());
        assert!((jm.value - 720.0).abs() < 1e-9 * 720.0);
    }

    #[test]
    fn linear_piece_has_no_jerk_energy() {
        let tr = MincoTrajectory::new(
            BoundaryState {
                position: Point3::zeros(),
                velocity: Vector3::new(1.0, 0.0, 0.0),
                acceleration: Vector3::zeros(),
            },
            BoundaryState {
                position: Point3::new(2.0, 0.0, 0.0),
                velocity: Vector3::new(1.0, 0.0, 0.0),
                acceleration: Vector3::zeros(),
            },
            vec![],
            vec![2.0],
        )
        .unwrap();
        assert!(cost_smoothness(&tr).value.abs() < 1e-18);
    }

    #[test]
    fn time_cost() {
        let t = cost_time(&[1.0, 2.0, 3.0]);
        assert_eq!(t.value, 6.0);
        assert_eq!(t.dt, vec![1.0; 3]);
    }

    #[test]
    fn single_unit_violation() {
        let p = Point3::new(0.5, 0.5, 0.5);
        let tr = MincoTrajectory::new(BoundaryState::at_rest(p), BoundaryState::at_rest(p), vec![], vec![1.0]).unwrap();
        let set = tr.sample_constraint_points(&[1]);
        let w = CostWeights {
            s_thr: 2.0,
            d_thr: 0.3,
            ..Default::default()
        };
        let pen = AnalyticField(|_: &Point3| (3.0, Vector3::zeros()));
        let far = AnalyticField(|_: &Point3| (10.0, Vector3::zeros()));
        let js = cost_safety(&tr, &set, &far, &pen, &w).unwrap();
        assert!((js.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dynamics_decrease_when_slowed() {
        let mk = |t: f64| {
            MincoTrajectory::new(
                BoundaryState {
                    position: Point3::zeros(),
                    velocity: Vector3::new(3.0, 0.0, 0.0),
                    acceleration: Vector3::zeros(),
                },
                BoundaryState {
                    position: Point3::new(3.0 * t, 0.0, 0.0),
                    velocity: Vector3::new(3.0, 0.0, 0.0),
                    acceleration: Vector3::zeros(),
                },
                vec![],
                vec![t],
            )
            .unwrap()
        };
        let a = mk(1.0);
        let jd = cost_dynamics(&a, &a.sample_constraint_points(&[16]), 1.5, 2.0).unwrap();
        assert!(jd.value > 0.0);
    }
}
