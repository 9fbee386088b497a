//! Travel penalty field over the voxel grid.
//!
//! Every occupied voxel gets a local plane fitted by RANSAC to the cloud
//! around it. Free voxels inherit the estimate of the highest occupied voxel
//! beneath them in the same column, so the pose field is defined everywhere
//! above a surface and constant along each free vertical run. The raw penalty
//! combines plane tilt with the sharpness of the pose change between
//! horizontal neighbours; the diffused penalty spreads it horizontally with
//! a distance-decaying kernel to give a safety margin.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud_io::{Point3, PointCloud};
use crate::gridmap::{Field3, FieldQuery, GridSpec, OccupancyGrid};
use crate::error::Result;

const NO_SURFACE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    /// Upper bound on hypotheses; sampling stops earlier once the consensus
    /// reaches 99.9% confidence.
    pub iterations: usize,
    /// Point-to-plane distance for an inlier, meters.
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl RansacParams {
    pub fn for_resolution(r_g: f64) -> Self {
        Self {
            iterations: 100,
            inlier_threshold: 0.5 * r_g,
            min_inliers: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    /// Centroid of the inliers of the local plane.
    pub p_c: Point3,
    /// Unit plane normal, oriented with non-negative z.
    pub normal: Vector3<f64>,
    /// Tilt of the plane against vertical, in [0, pi/2].
    pub phi: f64,
    pub valid: bool,
}

impl PoseEstimate {
    pub fn invalid() -> Self {
        Self {
            p_c: Point3::zeros(),
            normal: Vector3::z(),
            phi: 0.0,
            valid: false,
        }
    }

    /// Height of the fitted plane above the column through `(x, y)`.
    pub fn plane_height(&self, x: f64, y: f64) -> f64 {
        if self.normal.z.abs() < 0.1 {
            return self.p_c.z;
        }
        self.p_c.z - (self.normal.x * (x - self.p_c.x) + self.normal.y * (y - self.p_c.y)) / self.normal.z
    }
}

/// Tilt of a plane normal against `[0, 0, 1]`, folded into [0, pi/2].
pub fn tilt_of(normal: &Vector3<f64>) -> f64 {
    let n = normal.normalize();
    let phi = n.z.clamp(-1.0, 1.0).acos();
    phi.min(std::f64::consts::PI - phi)
}

/// RANSAC plane over the cloud points within `radius` of `center`.
pub fn fit_local_plane(cloud: &PointCloud, center: &Point3, radius: f64, ransac: &RansacParams) -> PoseEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(ransac.seed);
    fit_with_rng(cloud, center, radius, ransac, &mut rng)
}

fn fit_with_rng(
    cloud: &PointCloud,
    center: &Point3,
    radius: f64,
    ransac: &RansacParams,
    rng: &mut ChaCha8Rng,
) -> PoseEstimate {
    let pts = cloud.points();
    let mut idx = Vec::new();
    cloud.for_each_within(center, radius, |i| idx.push(i));
    idx.sort_unstable();
    let n = idx.len();
    if n < ransac.min_inliers.max(3) {
        return PoseEstimate::invalid();
    }
    let local: Vec<Point3> = idx.iter().map(|&i| pts[i]).collect();
    let thr = ransac.inlier_threshold;

    let mut best: Option<(usize, Vector3<f64>, Point3)> = None;
    let mut needed = ransac.iterations;
    let mut it = 0;
    while it < needed.min(ransac.iterations) {
        it += 1;
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let c = rng.gen_range(0..n);
        if a == b || b == c || a == c {
            continue;
        }
        let nrm = (local[b] - local[a]).cross(&(local[c] - local[a]));
        let len = nrm.norm();
        if len < 1e-12 {
            continue;
        }
        let nrm = nrm / len;
        let count = local.iter().filter(|p| nrm.dot(&(*p - local[a])).abs() <= thr).count();
        if best.is_none_or(|(bc, _, _)| count > bc) {
            best = Some((count, nrm, local[a]));
            let w = count as f64 / n as f64;
            if count == n {
                break;
            }
            let denom = (1.0 - w.powi(3)).ln();
            if denom < 0.0 {
                needed = ((1.0f64 - 0.999).ln() / denom).ceil() as usize;
            }
        }
    }
    let Some((count, nrm, anchor)) = best else {
        return PoseEstimate::invalid();
    };
    if count < ransac.min_inliers.max(3) {
        return PoseEstimate::invalid();
    }
    let inliers: Vec<Point3> = local
        .iter()
        .copied()
        .filter(|p| nrm.dot(&(p - anchor)).abs() <= thr)
        .collect();
    let centroid = inliers.iter().sum::<Point3>() / inliers.len() as f64;
    // least-squares refinement on the consensus set
    let mut cov = Matrix3::zeros();
    for p in &inliers {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (mut min_i, mut min_v) = (0, f64::INFINITY);
    for i in 0..3 {
        if eig.eigenvalues[i] < min_v {
            min_v = eig.eigenvalues[i];
            min_i = i;
        }
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(min_i).into_owned();
    if !normal.iter().all(|c| c.is_finite()) || normal.norm() < 0.5 {
        normal = nrm;
    }
    normal.normalize_mut();
    if normal.z < 0.0 {
        normal = -normal;
    }
    PoseEstimate {
        p_c: centroid,
        phi: tilt_of(&normal),
        normal,
        valid: true,
    }
}

/// Highest occupied voxel at or below `c` in the same column.
pub fn project_down(occ: &OccupancyGrid, c: [usize; 3]) -> Option<[usize; 3]> {
    (0..=c[2])
        .rev()
        .map(|k| [c[0], c[1], k])
        .find(|&v| occ.is_occupied(v))
}

/// Pose estimate per voxel, stored once per occupied voxel.
#[derive(Debug, Clone)]
pub struct PoseField {
    pub spec: GridSpec,
    /// Per voxel: slot in `fits` of the surface voxel it projects onto.
    surface: Vec<u32>,
    fits: Vec<PoseEstimate>,
    /// Linear index of the occupied voxel each slot belongs to.
    fit_voxel: Vec<usize>,
}

impl PoseField {
    /// Fit one plane per occupied voxel and propagate it up each free run.
    pub fn build(cloud: &PointCloud, occ: &OccupancyGrid, fit_radius: f64, ransac: &RansacParams) -> Self {
        let spec = occ.spec;
        let fit_voxel: Vec<usize> = (0..spec.len()).filter(|&i| occ.occupied[i]).collect();
        let fits: Vec<PoseEstimate> = fit_voxel
            .par_iter()
            .map(|&lin| {
                let center = spec.center(spec.unlinear(lin));
                let seed = ransac.seed ^ (lin as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                fit_with_rng(cloud, &center, fit_radius, ransac, &mut rng)
            })
            .collect();
        let mut slot_of = vec![NO_SURFACE; spec.len()];
        for (slot, &lin) in fit_voxel.iter().enumerate() {
            slot_of[lin] = slot as u32;
        }
        Self::from_slots(spec, occ, slot_of, fits, fit_voxel)
    }

    /// Build from explicit per-occupied-voxel estimates, in ascending voxel order.
    pub fn from_estimates(occ: &OccupancyGrid, estimates: impl Fn([usize; 3]) -> PoseEstimate) -> Self {
        let spec = occ.spec;
        let fit_voxel: Vec<usize> = (0..spec.len()).filter(|&i| occ.occupied[i]).collect();
        let fits = fit_voxel.iter().map(|&l| estimates(spec.unlinear(l))).collect();
        let mut slot_of = vec![NO_SURFACE; spec.len()];
        for (slot, &lin) in fit_voxel.iter().enumerate() {
            slot_of[lin] = slot as u32;
        }
        Self::from_slots(spec, occ, slot_of, fits, fit_voxel)
    }

    fn from_slots(
        spec: GridSpec,
        occ: &OccupancyGrid,
        slot_of: Vec<u32>,
        fits: Vec<PoseEstimate>,
        fit_voxel: Vec<usize>,
    ) -> Self {
        let [nx, ny, nz] = spec.dims;
        let mut surface = vec![NO_SURFACE; spec.len()];
        for j in 0..ny {
            for i in 0..nx {
                let mut current = NO_SURFACE;
                for k in 0..nz {
                    let lin = spec.linear(i, j, k);
                    if occ.occupied[lin] {
                        current = slot_of[lin];
                    }
                    surface[lin] = current;
                }
            }
        }
        Self {
            spec,
            surface,
            fits,
            fit_voxel,
        }
    }

    /// Estimate at voxel `c`; invalid when no surface lies beneath it.
    pub fn estimate(&self, c: [usize; 3]) -> PoseEstimate {
        self.estimate_lin(self.spec.linear(c[0], c[1], c[2]))
    }

    pub fn estimate_lin(&self, lin: usize) -> PoseEstimate {
        match self.surface[lin] {
            NO_SURFACE => PoseEstimate::invalid(),
            s => self.fits[s as usize],
        }
    }

    /// Voxel whose fit `c` inherits, i.e. its downward projection.
    pub fn surface_voxel(&self, c: [usize; 3]) -> Option<[usize; 3]> {
        match self.surface[self.spec.linear(c[0], c[1], c[2])] {
            NO_SURFACE => None,
            s => Some(self.spec.unlinear(self.fit_voxel[s as usize])),
        }
    }

    pub fn fitted_count(&self) -> usize {
        self.fits.len()
    }
}

/// Weights and constants of the raw travel penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub lambda_f: f64,
    pub lambda_m: f64,
    /// Value assigned where no valid pose exists.
    pub s_max: f64,
    /// Scale of `[x_c, y_c, z_c, phi]` inside the pose-change norm.
    pub component_weights: [f64; 4],
}

impl Default for PenaltyParams {
    fn default() -> Self {
        Self {
            lambda_f: 1.0,
            lambda_m: 1.0,
            s_max: 1e6,
            component_weights: [0.0, 0.0, 1.0, 1.0],
        }
    }
}

/// Largest singular value of the 4x2 matrix with columns `a`, `b`.
pub fn spectral_norm_4x2(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let aa: f64 = a.iter().map(|v| v * v).sum();
    let bb: f64 = b.iter().map(|v| v * v).sum();
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let half = 0.5 * (aa + bb);
    let disc = (0.25 * (aa - bb) * (aa - bb) + ab * ab).sqrt();
    (half + disc).max(0.0).sqrt()
}

/// Raw penalty `S = lambda_f * phi^2 + lambda_m * sqrt(||grad H||_2)` per voxel.
pub fn build_penalty(poses: &PoseField, params: &PenaltyParams) -> Field3 {
    let spec = poses.spec;
    let [nx, ny, _] = spec.dims;
    let w = params.component_weights;
    let comp = |e: &PoseEstimate| -> [f64; 4] {
        [w[0] * e.p_c.x, w[1] * e.p_c.y, w[2] * e.p_c.z, w[3] * e.phi]
    };
    let r = spec.resolution;
    let mut values = vec![0.0; spec.len()];
    values
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, layer)| {
            for j in 0..ny {
                for i in 0..nx {
                    let here = poses.estimate([i, j, k]);
                    let out = &mut layer[i + nx * j];
                    if !here.valid {
                        *out = params.s_max;
                        continue;
                    }
                    // central difference, one-sided at the grid edge
                    let diff = |lo: Option<[usize; 3]>, hi: Option<[usize; 3]>| -> Option<[f64; 4]> {
                        let el = lo.map(|c| poses.estimate(c));
                        let eh = hi.map(|c| poses.estimate(c));
                        if el.is_some_and(|e| !e.valid) || eh.is_some_and(|e| !e.valid) {
                            return None;
                        }
                        let (vl, vh, span) = match (el, eh) {
                            (Some(l), Some(h)) => (comp(&l), comp(&h), 2.0 * r),
                            (None, Some(h)) => (comp(&here), comp(&h), r),
                            (Some(l), None) => (comp(&l), comp(&here), r),
                            (None, None) => return Some([0.0; 4]),
                        };
                        Some(std::array::from_fn(|t| (vh[t] - vl[t]) / span))
                    };
                    let dx = diff(
                        (i > 0).then(|| [i - 1, j, k]),
                        (i + 1 < nx).then(|| [i + 1, j, k]),
                    );
                    let dy = diff(
                        (j > 0).then(|| [i, j - 1, k]),
                        (j + 1 < ny).then(|| [i, j + 1, k]),
                    );
                    *out = match (dx, dy) {
                        (Some(dx), Some(dy)) => {
                            params.lambda_f * here.phi * here.phi
                                + params.lambda_m * spectral_norm_4x2(&dx, &dy).sqrt()
                        }
                        _ => params.s_max,
                    };
                }
            }
        });
    Field3 { spec, values }
}

/// How the diffusion kernel combines neighbouring penalties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionMode {
    /// Weighted maximum; keeps source values unchanged.
    #[default]
    MaxDilation,
    /// Literal weighted sum.
    Convolution,
}

/// Square diffusion kernel of side `2 * ceil(t / r_g) + 1`.
pub fn diffusion_kernel(t: f64, r_g: f64) -> Vec<Vec<f64>> {
    if t <= 0.0 {
        return vec![vec![1.0]];
    }
    let m = 2 * (t / r_g).ceil() as usize + 1;
    let c = (m - 1) as f64 / 2.0;
    (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let d = ((i as f64 - c).powi(2) + (j as f64 - c).powi(2)).sqrt();
                    (1.0 - r_g * d / t).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Diffuse each horizontal layer of `s_raw` with the kernel for distance `t`.
pub fn diffuse(s_raw: &Field3, t: f64, mode: DiffusionMode) -> Field3 {
    let spec = s_raw.spec;
    if t <= 0.0 {
        return s_raw.clone();
    }
    let kernel = diffusion_kernel(t, spec.resolution);
    let m = kernel.len();
    let half = (m - 1) as i64 / 2;
    let taps: Vec<(i64, i64, f64)> = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .filter(|&(i, j)| kernel[i][j] > 0.0)
        .map(|(i, j)| (i as i64 - half, j as i64 - half, kernel[i][j]))
        .collect();
    let [nx, ny, _] = spec.dims;
    let mut values = vec![0.0; spec.len()];
    values
        .par_chunks_mut(nx * ny)
        .zip(s_raw.values.par_chunks(nx * ny))
        .for_each(|(out, src)| {
            for j in 0..ny as i64 {
                for i in 0..nx as i64 {
                    let mut acc = 0.0f64;
                    for &(di, dj, a) in &taps {
                        let (si, sj) = (i + di, j + dj);
                        if si < 0 || sj < 0 || si >= nx as i64 || sj >= ny as i64 {
                            continue;
                        }
                        let v = a * src[si as usize + nx * sj as usize];
                        match mode {
                            DiffusionMode::MaxDilation => acc = acc.max(v),
                            DiffusionMode::Convolution => acc += v,
                        }
                    }
                    out[i as usize + nx * j as usize] = acc;
                }
            }
        });
    Field3 { spec, values }
}

/// Raw and diffused travel penalty.
#[derive(Debug, Clone)]
pub struct PenaltyField {
    pub spec: GridSpec,
    pub s_raw: Field3,
    pub s_diff: Field3,
    pub params: PenaltyParams,
    pub t_diff: f64,
    pub mode: DiffusionMode,
}

impl PenaltyField {
    pub fn build(poses: &PoseField, params: &PenaltyParams, t_diff: f64, mode: DiffusionMode) -> Self {
        let s_raw = build_penalty(poses, params);
        let s_diff = diffuse(&s_raw, t_diff, mode);
        Self {
            spec: poses.spec,
            s_raw,
            s_diff,
            params: *params,
            t_diff,
            mode,
        }
    }

    /// Trilinear diffused penalty and its gradient.
    pub fn query_penalty_grad(&self, p: &Point3) -> Result<(f64, Vector3<f64>)> {
        self.s_diff.sample(p)
    }

    pub fn is_lethal(&self, c: [usize; 3]) -> bool {
        self.s_raw.get(c) >= self.params.s_max
    }
}

impl FieldQuery for PenaltyField {
    fn query(&self, p: &Point3) -> Result<(f64, Vector3<f64>)> {
        self.s_diff.sample(p)
    }
}

/// Height range of the robot's active vertical degree of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightPolicy {
    pub h_min: f64,
    pub h_max: f64,
    /// Gap kept between the robot top and any ceiling, meters.
    pub ceiling_margin: f64,
    /// Half-width of the square footprint whose lowest ceiling bounds the
    /// height at its center, meters.
    #[serde(default)]
    pub footprint_radius: f64,
}

impl Default for HeightPolicy {
    fn default() -> Self {
        Self {
            h_min: 0.3,
            h_max: 1.0,
            ceiling_margin: 0.1,
            footprint_radius: 0.3,
        }
    }
}

impl HeightPolicy {
    /// Most suitable height given the free clearance above the ground.
    pub fn suitable(&self, clearance: f64) -> f64 {
        (clearance - self.ceiling_margin).min(self.h_max).clamp(self.h_min, self.h_max)
    }
}

/// Ground height `h_G` and suitable height `h_S` per voxel, both constant
/// along each free vertical run like the pose field.
#[derive(Debug, Clone)]
pub struct HeightFields {
    pub ground: Field3,
    pub suitable: Field3,
}

impl HeightFields {
    pub fn build(poses: &PoseField, occ: &OccupancyGrid, policy: &HeightPolicy) -> Self {
        let spec = poses.spec;
        let [nx, ny, nz] = spec.dims;
        let mut ground = vec![0.0; spec.len()];
        // height of the first occupied voxel above each voxel's free run
        let mut ceiling = vec![f64::INFINITY; spec.len()];
        let mut valid = vec![false; spec.len()];
        for j in 0..ny {
            for i in 0..nx {
                let col_center = spec.center([i, j, 0]);
                let mut k = 0;
                while k < nz {
                    let c = [i, j, k];
                    let lin = spec.linear(i, j, k);
                    let est = poses.estimate(c);
                    if !est.valid {
                        ground[lin] = spec.center(c).z;
                        k += 1;
                        continue;
                    }
                    // voxels sharing this surface: the run up to the next occupied voxel above a gap
                    let surf = poses.surface_voxel(c).unwrap_or(c);
                    let mut top = surf[2];
                    while top + 1 < nz && occ.is_occupied([i, j, top + 1]) {
                        top += 1;
                    }
                    let mut ceil = top + 1;
                    while ceil < nz && !occ.is_occupied([i, j, ceil]) {
                        ceil += 1;
                    }
                    let ceil_z = if ceil < nz { spec.center([i, j, ceil]).z } else { f64::INFINITY };
                    // every voxel from here to the ceiling projects onto a surface in this run
                    let end = ceil.min(nz);
                    for kk in k..end {
                        let e = poses.estimate([i, j, kk]);
                        let l = spec.linear(i, j, kk);
                        ground[l] = e.plane_height(col_center.x, col_center.y);
                        ceiling[l] = ceil_z;
                        valid[l] = true;
                    }
                    k = end;
                }
            }
        }
        let w = (policy.footprint_radius / spec.resolution).round() as usize;
        if w > 0 {
            ceiling = square_min_filter(&ceiling, spec.dims, w);
        }
        let suitable = (0..spec.len())
            .map(|l| {
                if valid[l] && ceiling[l].is_finite() {
                    policy.suitable(ceiling[l] - ground[l])
                } else {
                    policy.h_max
                }
            })
            .collect();
        Self {
            ground: Field3 { spec, values: ground },
            suitable: Field3 { spec, values: suitable },
        }
    }
}

/// Minimum over the horizontal `(2w+1)^2` square around each voxel, layer by layer.
fn square_min_filter(values: &[f64], dims: [usize; 3], w: usize) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let idx = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
    let mut along_x = vec![f64::INFINITY; values.len()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let (a, b) = (i.saturating_sub(w), (i + w).min(nx - 1));
                along_x[idx(i, j, k)] = (a..=b).map(|ii| values[idx(ii, j, k)]).fold(f64::INFINITY, f64::min);
            }
        }
    }
    let mut out = vec![f64::INFINITY; values.len()];
    for k in 0..nz {
        for j in 0..ny {
            let (a, b) = (j.saturating_sub(w), (j + w).min(ny - 1));
            for i in 0..nx {
                out[idx(i, j, k)] = (a..=b).map(|jj| along_x[idx(i, jj, k)]).fold(f64::INFINITY, f64::min);
            }
        }
    }
    out
}
