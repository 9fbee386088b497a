//! Valid Ground Filter.
//!
//! Keeps the points of a cloud on which a robot wrapped by a ball of radius
//! `radius` can stand. A point is kept iff, over its neighbours within
//! `radius`, every point more than `eps_z` above it rises at an angle below
//! `theta` (no lateral or overhead obstruction) and every point at least
//! `eps_z` below it falls at an angle below `theta` (locally flat support).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud_io::{Point3, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VgfParams {
    /// Clearance ball radius, meters.
    pub radius: f64,
    /// Maximum standable tilt, radians.
    pub theta: f64,
    /// Vertical noise band, meters.
    pub eps_z: f64,
}

impl VgfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::InvalidParam(format!("vgf radius {} must be > 0", self.radius)));
        }
        if !(self.theta > 0.0 && self.theta < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidParam(format!(
                "vgf theta {} must lie in (0, pi/2)",
                self.theta
            )));
        }
        if !(self.eps_z >= 0.0 && self.eps_z < self.radius) {
            return Err(Error::InvalidParam(format!(
                "vgf eps_z {} must lie in [0, radius)",
                self.eps_z
            )));
        }
        Ok(())
    }

    /// Noise band of twice the median nearest-neighbour spacing, capped below `radius`.
    pub fn default_eps_z(cloud: &PointCloud, radius: f64) -> f64 {
        let spacing = cloud.median_spacing().unwrap_or(0.0);
        (2.0 * spacing).min(0.5 * radius)
    }
}

/// Why a point was dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Kept,
    /// A neighbour above the noise band rises too steeply (wall, overhang).
    Obstructed,
    /// A neighbour below the noise band falls too steeply (tilt, edge).
    TooSteep,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VgfStats {
    pub kept: usize,
    pub rejected_obstructed: usize,
    pub rejected_steep: usize,
    /// Kept points that had no neighbours at all.
    pub isolated: usize,
}

#[derive(Debug, Clone)]
pub struct VgfOutput {
    pub cloud: PointCloud,
    /// Indices into the input cloud of the kept points, ascending.
    pub kept_indices: Vec<usize>,
    pub stats: VgfStats,
}

/// Decide a single point against a set of neighbour positions.
pub fn classify_point(p: &Point3, neighbors: impl IntoIterator<Item = Point3>, params: &VgfParams) -> Verdict {
    // elevation angle >= theta  <=>  |dz| >= h tan(theta), for theta in (0, pi/2)
    let tan = params.theta.tan();
    let mut steep = false;
    for q in neighbors {
        let dz = q.z - p.z;
        let h = (q.x - p.x).hypot(q.y - p.y);
        if dz > params.eps_z {
            if dz >= h * tan {
                return Verdict::Obstructed;
            }
        } else if dz <= -params.eps_z && -dz >= h * tan {
            steep = true;
        }
    }
    if steep {
        Verdict::TooSteep
    } else {
        Verdict::Kept
    }
}

/// Filter `cloud`, preserving input order in the output.
pub fn valid_ground_filter(cloud: &PointCloud, params: &VgfParams) -> Result<VgfOutput> {
    params.validate()?;
    let pts = cloud.points();
    let verdicts: Vec<(Verdict, bool)> = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let p = pts[i];
            let mut nbrs = Vec::with_capacity(64);
            cloud.for_each_within(&p, params.radius, |j| {
                if j != i {
                    nbrs.push(pts[j]);
                }
            });
            let isolated = nbrs.is_empty();
            (classify_point(&p, nbrs, params), isolated)
        })
        .collect();

    let mut stats = VgfStats::default();
    let mut kept_indices = Vec::new();
    for (i, (v, isolated)) in verdicts.into_iter().enumerate() {
        match v {
            Verdict::Kept => {
                stats.kept += 1;
                if isolated {
                    stats.isolated += 1;
                }
                kept_indices.push(i);
            }
            Verdict::Obstructed => stats.rejected_obstructed += 1,
            Verdict::TooSteep => stats.rejected_steep += 1,
        }
    }
    let kept: Vec<Point3> = kept_indices.iter().map(|&i| pts[i]).collect();
    Ok(VgfOutput {
        cloud: PointCloud::with_cell_size(kept, cloud.cell_size()),
        kept_indices,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(theta_deg: f64) -> VgfParams {
        VgfParams {
            radius: 0.8,
            theta: theta_deg.to_radians(),
            eps_z: 0.02,
        }
    }

    fn plane(n: i32, step: f64, z: f64) -> Vec<Point3> {
        let mut v = Vec::new();
        for i in -n..=n {
            for j in -n..=n {
                v.push(Point3::new(i as f64 * step, j as f64 * step, z));
            }
        }
        v
    }

    #[test]
    fn flat_interior_point_kept() {
        let cloud = PointCloud::new(plane(10, 0.1, 0.0));
        let out = valid_ground_filter(&cloud, &params(30.0)).unwrap();
        assert_eq!(out.stats.kept, cloud.len());
    }

    #[test]
    fn point_under_table_rejected() {
        let mut pts = plane(10, 0.1, 0.0);
        pts.push(Point3::new(0.0, 0.0, 0.5));
        let cloud = PointCloud::new(pts);
        let out = valid_ground_filter(&cloud, &params(30.0)).unwrap();
        // the floor point directly beneath the tabletop sample
        let idx = cloud.points().iter().position(|p| *p == Point3::zeros()).unwrap();
        assert!(!out.kept_indices.contains(&idx));
    }

    #[test]
    fn point_near_wall_rejected() {
        let mut pts = plane(10, 0.1, 0.0);
        for j in -10..=10 {
            for k in 1..=10 {
                pts.push(Point3::new(0.3, j as f64 * 0.1, k as f64 * 0.1));
            }
        }
        let cloud = PointCloud::new(pts);
        let v = classify_point(
            &Point3::zeros(),
            cloud.radius_neighbors(&Point3::zeros(), 0.8),
            &params(30.0),
        );
        assert_eq!(v, Verdict::Obstructed);
    }

    #[test]
    fn isolated_point_kept_and_flagged() {
        let cloud = PointCloud::new(vec![Point3::zeros(), Point3::new(10.0, 0.0, 0.0)]);
        let out = valid_ground_filter(&cloud, &params(30.0)).unwrap();
        assert_eq!(out.stats.kept, 2);
        assert_eq!(out.stats.isolated, 2);
    }

    #[test]
    fn directly_underneath_fails_flatness() {
        let p = Point3::new(0.0, 0.0, 1.0);
        let v = classify_point(&p, [Point3::new(0.0, 0.0, 0.5)], &params(80.0));
        assert_eq!(v, Verdict::TooSteep);
    }

    #[test]
    fn empty_cloud_empty_output() {
        let out = valid_ground_filter(&PointCloud::new(vec![]), &params(30.0)).unwrap();
        assert!(out.cloud.is_empty());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = params(30.0);
        p.eps_z = 1.0;
        assert!(p.validate().is_err());
        p = params(95.0);
        assert!(p.validate().is_err());
    }
}
