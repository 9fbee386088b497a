//! L-BFGS minimizer with a weak Wolfe line search.
//!
//! The bracketing search of Lewis and Overton is used instead of a strong
//! Wolfe search: the cubic penalties are only twice differentiable where they
//! switch on and interpolated grid fields have kinks on voxel faces, and the
//! weak conditions remain satisfiable there.
//!
//! An objective may return `+inf` to mark a trial point outside its domain;
//! the line search then shortens the step. NaN values and non-finite
//! gradients abort with an error carrying the offending point.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Number of stored curvature pairs.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once the Euclidean gradient norm falls below this.
    pub grad_tolerance: f64,
    /// Stop once the cost drops by less than this fraction of `max(1, |f|)`
    /// over the last `past` iterations.
    pub rel_cost_tolerance: f64,
    /// Window for the cost test; 1 compares consecutive iterates.
    #[serde(default = "default_past")]
    pub past: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            memory: 8,
            max_iterations: 200,
            grad_tolerance: 1e-6,
            rel_cost_tolerance: 1e-10,
            past: 1,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 60,
        }
    }
}

fn default_past() -> usize {
    1
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::InvalidParam("solver memory must be >= 1".into()));
        }
        if self.past == 0 {
            return Err(Error::InvalidParam("solver cost window must be >= 1".into()));
        }
        if !(self.grad_tolerance > 0.0 && self.rel_cost_tolerance > 0.0) {
            return Err(Error::InvalidParam("solver tolerances must be > 0".into()));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::InvalidParam(format!(
                "line-search constants need 0 < c1 < c2 < 1, got {} and {}",
                self.c1, self.c2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradTol,
    CostTol,
    MaxIter,
    LineSearchFail,
}

impl Termination {
    /// True when the solver stopped on one of its tolerances.
    pub fn converged(self) -> bool {
        matches!(self, Termination::GradTol | Termination::CostTol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    /// Entry 0 is the starting point; later entries are accepted iterates.
    pub records: Vec<IterRecord>,
    pub termination: Termination,
    pub evaluations: usize,
}

impl SolveTrace {
    pub fn final_cost(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.cost)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(out, "iteration,cost,grad_norm,step").map_err(io)?;
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.iteration, r.cost, r.grad_norm, r.step).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Exponential time map with the exponent clamped to `[-20, 20]`; returns
/// the durations and the diagonal of their Jacobian.
pub fn time_map(tau: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let t: Vec<f64> = tau.iter().map(|&x| x.clamp(-20.0, 20.0).exp()).collect();
    let d = tau
        .iter()
        .zip(&t)
        .map(|(&x, &ti)| if (-20.0..=20.0).contains(&x) { ti } else { 0.0 })
        .collect();
    (t, d)
}

pub fn inverse_time_map(t: &[f64]) -> Vec<f64> {
    t.iter().map(|&ti| ti.ln()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn checked(x: &[f64], (f, g): (f64, Vec<f64>)) -> Result<(f64, Vec<f64>)> {
    if f.is_nan() || f == f64::NEG_INFINITY || (f.is_finite() && !g.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite { x: x.to_vec() });
    }
    Ok((f, g))
}

/// Minimize `f` from `x0`. On line-search failure the best iterate so far is
/// returned with the corresponding termination reason.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolveTrace)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    opts.validate()?;
    let mut x = x0.to_vec();
    let (mut fx, mut g) = checked(&x, f(&x)?)?;
    if !fx.is_finite() {
        return Err(Error::NonFinite { x });
    }
    let mut evaluations = 1;
    let mut records = vec![IterRecord {
        iteration: 0,
        cost: fx,
        grad_norm: norm(&g),
        step: 0.0,
    }];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();

    let finish = |x: Vec<f64>, records, termination, evaluations| {
        Ok((
            x,
            SolveTrace {
                records,
                termination,
                evaluations,
            },
        ))
    };

    if norm(&g) <= opts.grad_tolerance {
        return finish(x, records, Termination::GradTol, evaluations);
    }

    for iter in 1..=opts.max_iterations {
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = rho[i] * dot(&s_hist[i], &d);
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= alpha[i] * yj;
            }
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let beta = rho[i] * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alpha[i] - beta) * sj;
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
            s_hist.clear();
            y_hist.clear();
            rho.clear();
        }

        // weak Wolfe bracketing
        let mut step = if k == 0 { 1.0 / norm(&d).max(1e-300) } else { 1.0 };
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut accepted = None;
        for _ in 0..opts.max_line_search {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let (ft, gt) = checked(&xt, f(&xt)?)?;
            evaluations += 1;
            if !(ft <= fx + opts.c1 * step * slope) || !(ft < fx) {
                hi = step;
            } else if dot(&gt, &d) < opts.c2 * slope {
                lo = step;
                // keep the best admissible point in case the search runs out
                accepted = Some((xt, ft, gt, step, false));
            } else {
                accepted = Some((xt, ft, gt, step, true));
                break;
            }
            step = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo };
        }
        // a point with sufficient decrease but no curvature is still a descent step
        let Some((xn, fnew, gn, step, _wolfe)) = accepted else {
            return finish(x, records, Termination::LineSearchFail, evaluations);
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho.push(1.0 / sy);
        }
        x = xn;
        fx = fnew;
        g = gn;
        let gnorm = norm(&g);
        records.push(IterRecord {
            iteration: iter,
            cost: fx,
            grad_norm: gnorm,
            step,
        });
        if gnorm <= opts.grad_tolerance {
            return finish(x, records, Termination::GradTol, evaluations);
        }
        let n = records.len();
        if n > opts.past && records[n - 1 - opts.past].cost - fx <= opts.rel_cost_tolerance * fx.abs().max(1.0) {
            return finish(x, records, Termination::CostTol, evaluations);
        }
    }
    finish(x, records, Termination::MaxIter, evaluations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn time_map_values() {
        let (t, d) = time_map(&[0.0, 2f64.ln(), 30.0]);
        assert_eq!(t[0], 1.0);
        assert!((t[1] - 2.0).abs() < 1e-15);
        assert_eq!(t[2], 20f64.exp());
        assert_eq!(d[2], 0.0);
        assert!((inverse_time_map(&t[..2])[1] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rosenbrock_converges() {
        let opts = SolverOptions {
            grad_tolerance: 1e-10,
            rel_cost_tolerance: 1e-300,
            max_iterations: 1000,
            ..Default::default()
        };
        let (x, trace) = minimize(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?} {:?}", trace.termination);
        for w in trace.records.windows(2) {
            assert!(w[1].cost < w[0].cost);
        }
    }

    #[test]
    fn quadratic_to_origin() {
        let f = |x: &[f64]| Ok((dot(x, x), x.iter().map(|v| 2.0 * v).collect()));
        let (x, _) = minimize(f, &[3.0, -1.0, 0.5, 7.0], &SolverOptions::default()).unwrap();
        assert!(norm(&x) < 1e-8);
    }

    #[test]
    fn nan_is_an_error() {
        let f = |x: &[f64]| Ok((if x[0] < 0.5 { f64::NAN } else { x[0] * x[0] }, vec![2.0 * x[0]]));
        assert!(matches!(minimize(f, &[1.0], &SolverOptions::default()), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn infinite_trial_shortens_step() {
        // domain x > 0.25
        let f = |x: &[f64]| {
            if x[0] <= 0.25 {
                Ok((f64::INFINITY, vec![0.0]))
            } else {
                Ok(((x[0] - 0.5).powi(2), vec![2.0 * (x[0] - 0.5)]))
            }
        };
        let (x, _) = minimize(f, &[3.0], &SolverOptions::default()).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-6);
    }
}
