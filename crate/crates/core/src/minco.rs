//! Minimum-jerk piecewise quintic trajectories.
//!
//! A trajectory with `M` pieces is fixed by its boundary states, the `M - 1`
//! interior waypoints `q` and the piece durations `T`. The coefficients
//! follow from one banded linear system of size `6M`:
//!
//! * three rows pin position, velocity and acceleration at the start;
//! * every junction contributes a waypoint row and five rows equating
//!   derivatives 0..=4 of the two adjacent pieces;
//! * three rows pin the end state.
//!
//! The matrix has two super- and four sub-diagonals and is factored once by
//! banded LU with partial pivoting. The same factors serve the transposed
//! solve that pulls coefficient-space gradients back onto `(q, T)`.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud_io::Point3;
use crate::error::{Error, Result};

/// Six polynomial coefficients (rows, ascending power) per axis (columns).
pub type Coeffs = SMatrix<f64, 6, 3>;

const KL: usize = 4;
const KU: usize = 2;
const W: usize = 2 * KL + KU + 1;

/// Position, velocity and acceleration at one end of the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryState {
    pub position: Point3,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl BoundaryState {
    pub fn at_rest(position: Point3) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        }
    }

    fn derivative(&self, k: usize) -> Vector3<f64> {
        match k {
            0 => self.position,
            1 => self.velocity,
            _ => self.acceleration,
        }
    }

    fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).chain(self.acceleration.iter()).all(|v| v.is_finite())
    }
}

/// Row `k`-th derivative of the monomial basis `[1, t, .., t^5]` at `t`.
#[inline]
pub fn basis(t: f64, k: usize) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (n, o) in out.iter_mut().enumerate().skip(k) {
        let mut f = 1.0;
        for m in (n - k + 1)..=n {
            f *= m as f64;
        }
        *o = f * t.powi((n - k) as i32);
    }
    out
}

/// Derivative of order `k` of one piece at local time `t`.
#[inline]
pub fn piece_eval(c: &Coeffs, t: f64, k: usize) -> Vector3<f64> {
    let b = basis(t, k);
    let mut v = Vector3::zeros();
    for n in k..6 {
        v += c.row(n).transpose() * b[n];
    }
    v
}

/// Banded LU factors with partial pivoting.
#[derive(Debug, Clone)]
struct BandedLu {
    n: usize,
    /// Row `r` of `U`, columns `r..r + W`.
    u: Vec<[f64; W]>,
    /// Multipliers of elimination step `j` for rows `j + 1..=j + KL`.
    l: Vec<[f64; KL]>,
    ipiv: Vec<usize>,
}

impl BandedLu {
    /// `rows[r] = (start, values)` with values covering `start..start + W`.
    fn factor(mut rows: Vec<(isize, [f64; W])>) -> Result<Self> {
        let n = rows.len();
        let mut l = vec![[0.0; KL]; n];
        let mut ipiv = vec![0; n];
        for j in 0..n {
            let last = (j + KL).min(n - 1);
            // rebase candidate rows so their window starts at column j
            for row in rows.iter_mut().take(last + 1).skip(j) {
                let shift = j as isize - row.0;
                debug_assert!(shift >= 0);
                if shift > 0 {
                    let s = shift as usize;
                    row.1.copy_within(s.., 0);
                    for v in &mut row.1[W - s..] {
                        *v = 0.0;
                    }
                    row.0 = j as isize;
                }
            }
            let mut p = j;
            for r in j + 1..=last {
                if rows[r].1[0].abs() > rows[p].1[0].abs() {
                    p = r;
                }
            }
            let pivot = rows[p].1[0];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::Singular(j));
            }
            ipiv[j] = p;
            rows.swap(j, p);
            let pivot_row = rows[j].1;
            for r in j + 1..=last {
                let m = rows[r].1[0] / pivot;
                l[j][r - j - 1] = m;
                if m != 0.0 {
                    for (c, pv) in pivot_row.iter().enumerate().skip(1) {
                        rows[r].1[c] -= m * pv;
                    }
                }
                rows[r].1[0] = 0.0;
            }
        }
        Ok(Self {
            n,
            u: rows.into_iter().map(|(_, v)| v).collect(),
            l,
            ipiv,
        })
    }

    fn solve(&self, b: &mut [Vector3<f64>]) {
        let n = self.n;
        for j in 0..n {
            b.swap(j, self.ipiv[j]);
            let bj = b[j];
            for (o, m) in self.l[j].iter().enumerate() {
                let r = j + 1 + o;
                if r < n && *m != 0.0 {
                    b[r] -= bj * *m;
                }
            }
        }
        for j in (0..n).rev() {
            let row = &self.u[j];
            let mut acc = b[j];
            for (c, &v) in row.iter().enumerate().skip(1) {
                if j + c < n && v != 0.0 {
                    acc -= b[j + c] * v;
                }
            }
            b[j] = acc / row[0];
        }
    }

    fn solve_transpose(&self, g: &mut [Vector3<f64>]) {
        let n = self.n;
        // U^T z = g
        for j in 0..n {
            let mut acc = g[j];
            for i in j.saturating_sub(W - 1)..j {
                let v = self.u[i][j - i];
                if v != 0.0 {
                    acc -= g[i] * v;
                }
            }
            g[j] = acc / self.u[j][0];
        }
        // apply L_j^T and P_j in reverse order
        for j in (0..n).rev() {
            let mut acc = g[j];
            for (o, m) in self.l[j].iter().enumerate() {
                let r = j + 1 + o;
                if r < n && *m != 0.0 {
                    acc -= g[r] * *m;
                }
            }
            g[j] = acc;
            g.swap(j, self.ipiv[j]);
        }
    }
}

/// Assemble the banded system rows for the durations `t`.
fn system_rows(t: &[f64]) -> Vec<(isize, [f64; W])> {
    let m = t.len();
    let n = 6 * m;
    let mut rows: Vec<(isize, [f64; W])> = (0..n).map(|r| (r as isize - KL as isize, [0.0; W])).collect();
    let mut put = |r: usize, c: usize, v: f64| {
        let off = (c as isize - rows[r].0) as usize;
        rows[r].1[off] = v;
    };
    for k in 0..3 {
        let b = basis(0.0, k);
        put(k, k, b[k]);
    }
    for i in 0..m.saturating_sub(1) {
        let base = 3 + 6 * i;
        let bt = basis(t[i], 0);
        for n in 0..6 {
            put(base, 6 * i + n, bt[n]);
        }
        for k in 0..5 {
            let bt = basis(t[i], k);
            for n in k..6 {
                put(base + 1 + k, 6 * i + n, bt[n]);
            }
            put(base + 1 + k, 6 * (i + 1) + k, -basis(0.0, k)[k]);
        }
    }
    for k in 0..3 {
        let bt = basis(t[m - 1], k);
        for nn in k..6 {
            put(n - 3 + k, 6 * (m - 1) + nn, bt[nn]);
        }
    }
    rows
}

/// Per-piece samples at `t = (j / kappa_i) T_i`, `j = 0..kappa_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintPoint {
    pub piece: usize,
    pub j: usize,
    /// Local time within the piece.
    pub t: f64,
    pub position: Point3,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub jerk: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintPointSet {
    pub kappa: Vec<usize>,
    pub points: Vec<ConstraintPoint>,
}

/// Serializable trajectory record; re-solving it reproduces the coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDoc {
    pub start: BoundaryState,
    pub end: BoundaryState,
    pub waypoints: Vec<Point3>,
    pub durations: Vec<f64>,
    /// Per piece, six rows of `[x, y, z]` coefficients in ascending power.
    pub coefficients: Vec<[[f64; 3]; 6]>,
}

#[derive(Debug, Clone)]
pub struct MincoTrajectory {
    pub start: BoundaryState,
    pub end: BoundaryState,
    pub q: Vec<Point3>,
    pub t: Vec<f64>,
    pub c: Vec<Coeffs>,
    lu: BandedLu,
}

impl MincoTrajectory {
    /// Solve for the coefficients of the minimum-jerk trajectory.
    pub fn new(start: BoundaryState, end: BoundaryState, q: Vec<Point3>, t: Vec<f64>) -> Result<Self> {
        let m = t.len();
        if m == 0 {
            return Err(Error::InvalidParam("trajectory needs at least one piece".into()));
        }
        if q.len() + 1 != m {
            return Err(Error::InvalidParam(format!(
                "{} pieces need {} interior waypoints, got {}",
                m,
                m - 1,
                q.len()
            )));
        }
        if let Some(bad) = t.iter().position(|&ti| !(ti > 0.0 && ti.is_finite())) {
            return Err(Error::InvalidParam(format!("duration T[{bad}] = {} must be positive", t[bad])));
        }
        if !start.is_finite() || !end.is_finite() || q.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidParam("non-finite boundary state or waypoint".into()));
        }
        let lu = BandedLu::factor(system_rows(&t))?;
        let mut b = vec![Vector3::zeros(); 6 * m];
        for k in 0..3 {
            b[k] = start.derivative(k);
            b[6 * m - 3 + k] = end.derivative(k);
        }
        for (i, qi) in q.iter().enumerate() {
            b[3 + 6 * i] = *qi;
        }
        lu.solve(&mut b);
        let c = (0..m)
            .map(|i| Coeffs::from_fn(|r, a| b[6 * i + r][a]))
            .collect();
        Ok(Self { start, end, q, t, c, lu })
    }

    pub fn pieces(&self) -> usize {
        self.t.len()
    }

    pub fn total_duration(&self) -> f64 {
        self.t.iter().sum()
    }

    /// Piece index and local time for global time `t`; junctions belong to
    /// the later piece and the final instant to the last one.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let total = self.total_duration();
        if !(t >= 0.0 && t <= total) {
            return Err(Error::TimeOutOfRange { t, total });
        }
        let mut acc = 0.0;
        for (i, &ti) in self.t.iter().enumerate() {
            if t < acc + ti || i + 1 == self.t.len() {
                return Ok((i, (t - acc).min(ti)));
            }
            acc += ti;
        }
        unreachable!()
    }

    /// Derivative of order `order` (0..=5) at global time `t`.
    pub fn evaluate(&self, t: f64, order: usize) -> Result<Vector3<f64>> {
        if order > 5 {
            return Err(Error::InvalidParam(format!("derivative order {order} exceeds 5")));
        }
        let (i, tau) = self.locate(t)?;
        Ok(piece_eval(&self.c[i], tau, order))
    }

    /// Uniform-in-time samples with their derivative stack.
    pub fn sample_constraint_points(&self, kappa: &[usize]) -> ConstraintPointSet {
        assert_eq!(kappa.len(), self.pieces(), "one sample count per piece");
        let mut points = Vec::with_capacity(kappa.iter().sum());
        for (i, (&k, c)) in kappa.iter().zip(&self.c).enumerate() {
            let k = k.max(1);
            for j in 0..k {
                let t = j as f64 / k as f64 * self.t[i];
                points.push(ConstraintPoint {
                    piece: i,
                    j,
                    t,
                    position: piece_eval(c, t, 0),
                    velocity: piece_eval(c, t, 1),
                    acceleration: piece_eval(c, t, 2),
                    jerk: piece_eval(c, t, 3),
                });
            }
        }
        ConstraintPointSet {
            kappa: kappa.iter().map(|&k| k.max(1)).collect(),
            points,
        }
    }

    /// Pull `dJ/dc` back to `(dJ/dq, dJ/dT)` through the coefficient map and
    /// add the explicit time gradient.
    pub fn propagate_gradient(&self, dj_dc: &[Coeffs], dj_dt_direct: &[f64]) -> Result<(Vec<Vector3<f64>>, Vec<f64>)> {
        let m = self.pieces();
        if dj_dc.len() != m || dj_dt_direct.len() != m {
            return Err(Error::InvalidParam("gradient blocks do not match piece count".into()));
        }
        if dj_dc.iter().any(|g| !g.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidParam("non-finite coefficient gradient".into()));
        }
        let mut g: Vec<Vector3<f64>> = (0..6 * m)
            .map(|r| dj_dc[r / 6].row(r % 6).transpose())
            .collect();
        self.lu.solve_transpose(&mut g);

        let dq = (0..m - 1).map(|i| g[3 + 6 * i]).collect();
        let mut dt = dj_dt_direct.to_vec();
        for i in 0..m {
            let c = &self.c[i];
            let tt = self.t[i];
            if i + 1 < m {
                let base = 3 + 6 * i;
                dt[i] -= g[base].dot(&piece_eval(c, tt, 1));
                for k in 0..5 {
                    dt[i] -= g[base + 1 + k].dot(&piece_eval(c, tt, k + 1));
                }
            } else {
                for k in 0..3 {
                    dt[i] -= g[6 * m - 3 + k].dot(&piece_eval(c, tt, k + 1));
                }
            }
        }
        Ok((dq, dt))
    }

    pub fn to_doc(&self) -> TrajectoryDoc {
        TrajectoryDoc {
            start: self.start,
            end: self.end,
            waypoints: self.q.clone(),
            durations: self.t.clone(),
            coefficients: self
                .c
                .iter()
                .map(|c| std::array::from_fn(|r| std::array::from_fn(|a| c[(r, a)])))
                .collect(),
        }
    }

    pub fn from_doc(doc: &TrajectoryDoc) -> Result<Self> {
        Self::new(doc.start, doc.end, doc.waypoints.clone(), doc.durations.clone())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(&self.to_doc())?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_doc(&serde_json::from_str(&s)?)
    }

    /// Rows `t, x, y, z, vx, vy, vz, ax, ay, az` every `dt` seconds, plus the end instant.
    pub fn write_csv(&self, path: &Path, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParam(format!("sampling step {dt} must be positive")));
        }
        let total = self.total_duration();
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        writeln!(out, "t,x,y,z,vx,vy,vz,ax,ay,az").map_err(io)?;
        let steps = (total / dt).floor() as usize;
        let mut times: Vec<f64> = (0..=steps).map(|s| s as f64 * dt).filter(|&t| t < total).collect();
        times.push(total);
        for t in times {
            let p = self.evaluate(t, 0)?;
            let v = self.evaluate(t, 1)?;
            let a = self.evaluate(t, 2)?;
            writeln!(
                out,
                "{t},{},{},{},{},{},{},{},{},{}",
                p.x, p.y, p.z, v.x, v.y, v.z, a.x, a.y, a.z
            )
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }
}
