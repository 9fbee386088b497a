//! Voxel grids, occupancy rasterization and the Euclidean distance field.
//!
//! Cells are addressed x-fastest. Values live at voxel centers and are
//! interpolated trilinearly; gradients are the exact derivative of that
//! interpolant, so they agree with finite differences of the returned value
//! everywhere except on voxel faces.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud_io::{Point3, PointCloud};
use crate::error::{Error, Result};

pub const DUMP_MAGIC: &[u8; 8] = b"GPFIELD1";
pub const DUMP_HEADER_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Corner of voxel (0, 0, 0).
    pub origin: Point3,
    pub resolution: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: Point3, resolution: f64, dims: [usize; 3]) -> Result<Self> {
        let spec = Self {
            origin,
            resolution,
            dims,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::ZeroVolume(self.dims));
        }
        if !(self.resolution > 0.0) || !self.origin.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "grid resolution {} must be positive and origin finite",
                self.resolution
            )));
        }
        Ok(())
    }

    /// Grid covering `[lo, hi]` with `pad` extra voxels on every side, laid
    /// out so that voxel centers sit on integer multiples of `resolution`.
    pub fn covering(lo: Point3, hi: Point3, resolution: f64, pad: usize) -> Result<Self> {
        let mut origin = Point3::zeros();
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let k_lo = (lo[a] / resolution).round() as i64 - pad as i64;
            let k_hi = (hi[a] / resolution).round() as i64 + pad as i64;
            origin[a] = (k_lo as f64 - 0.5) * resolution;
            dims[a] = (k_hi - k_lo + 1).max(1) as usize;
        }
        Self::new(origin, resolution, dims)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn unlinear(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let r = idx / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    pub fn contains(&self, c: [i64; 3]) -> bool {
        (0..3).all(|a| c[a] >= 0 && (c[a] as usize) < self.dims[a])
    }

    /// Cell containing `p`, if in bounds.
    pub fn cell_of(&self, p: &Point3) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.resolution).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }

    pub fn center(&self, c: [usize; 3]) -> Point3 {
        Point3::new(
            self.origin.x + (c[0] as f64 + 0.5) * self.resolution,
            self.origin.y + (c[1] as f64 + 0.5) * self.resolution,
            self.origin.z + (c[2] as f64 + 0.5) * self.resolution,
        )
    }

    /// Upper corner of the grid box.
    pub fn max_corner(&self) -> Point3 {
        self.origin
            + Vector3::new(
                self.dims[0] as f64,
                self.dims[1] as f64,
                self.dims[2] as f64,
            ) * self.resolution
    }

    /// True when `p` lies inside the hull of voxel centers, where trilinear
    /// interpolation is defined.
    pub fn in_interp_domain(&self, p: &Point3) -> bool {
        (0..3).all(|a| {
            let u = (p[a] - self.origin[a]) / self.resolution - 0.5;
            u >= -DOMAIN_SLACK && u <= (self.dims[a] - 1) as f64 + DOMAIN_SLACK
        })
    }
}

/// Tolerance, in cells, on the interpolation domain.
const DOMAIN_SLACK: f64 = 1e-9;

/// Scalar values at voxel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Field3 {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

/// A scalar field that can be sampled with its spatial gradient.
pub trait FieldQuery: Sync {
    fn query(&self, p: &Point3) -> Result<(f64, Vector3<f64>)>;
}

impl Field3 {
    pub fn filled(spec: GridSpec, v: f64) -> Self {
        Self {
            values: vec![v; spec.len()],
            spec,
        }
    }

    pub fn get(&self, c: [usize; 3]) -> f64 {
        self.values[self.spec.linear(c[0], c[1], c[2])]
    }

    /// Trilinear value and its exact gradient.
    pub fn sample(&self, p: &Point3) -> Result<(f64, Vector3<f64>)> {
        let s = &self.spec;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut step = [0usize; 3];
        for a in 0..3 {
            let u = (p[a] - s.origin[a]) / s.resolution - 0.5;
            let n = s.dims[a];
            // absorb rounding in `center` so the outermost centers stay queryable
            if !(u >= -DOMAIN_SLACK && u <= (n - 1) as f64 + DOMAIN_SLACK) {
                return Err(Error::OutOfBounds(*p));
            }
            let u = u.clamp(0.0, (n - 1) as f64);
            if n == 1 {
                continue;
            }
            let i0 = (u.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = u - i0 as f64;
            step[a] = 1;
        }
        let nx = s.dims[0];
        let nxy = nx * s.dims[1];
        let idx0 = base[0] + nx * base[1] + nxy * base[2];
        let dx = step[0];
        let dy = step[1] * nx;
        let dz = step[2] * nxy;
        let v = &self.values;
        let c000 = v[idx0];
        let c100 = v[idx0 + dx];
        let c010 = v[idx0 + dy];
        let c110 = v[idx0 + dx + dy];
        let c001 = v[idx0 + dz];
        let c101 = v[idx0 + dx + dz];
        let c011 = v[idx0 + dy + dz];
        let c111 = v[idx0 + dx + dy + dz];
        let [fx, fy, fz] = frac;
        let c00 = c000 + (c100 - c000) * fx;
        let c10 = c010 + (c110 - c010) * fx;
        let c01 = c001 + (c101 - c001) * fx;
        let c11 = c011 + (c111 - c011) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        let value = c0 + (c1 - c0) * fz;

        let gx0 = (c100 - c000) + ((c110 - c010) - (c100 - c000)) * fy;
        let gx1 = (c101 - c001) + ((c111 - c011) - (c101 - c001)) * fy;
        let gx = gx0 + (gx1 - gx0) * fz;
        let gy = (c10 - c00) + ((c11 - c01) - (c10 - c00)) * fz;
        let gz = c1 - c0;
        let inv = 1.0 / s.resolution;
        let grad = Vector3::new(
            gx * inv * step[0] as f64,
            gy * inv * step[1] as f64,
            gz * inv * step[2] as f64,
        );
        Ok((value, grad))
    }

    /// Minimum, maximum and mean over finite values.
    pub fn stats(&self) -> (f64, f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut n = 0usize;
        for &v in self.values.iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
            n += 1;
        }
        (lo, hi, if n > 0 { sum / n as f64 } else { f64::NAN })
    }

    /// Write the flat binary dump: 64-byte header then `f64` values x-fastest.
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut header = Vec::with_capacity(DUMP_HEADER_LEN);
        header.extend_from_slice(DUMP_MAGIC);
        for d in self.spec.dims {
            header.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for a in 0..3 {
            header.extend_from_slice(&self.spec.origin[a].to_le_bytes());
        }
        header.extend_from_slice(&self.spec.resolution.to_le_bytes());
        debug_assert_eq!(header.len(), DUMP_HEADER_LEN);
        let res: std::io::Result<()> = (|| {
            w.write_all(&header)?;
            for v in &self.values {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }

    pub fn read_dump(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: m.to_string(),
        };
        if bytes.len() < DUMP_HEADER_LEN || &bytes[..8] != DUMP_MAGIC {
            return Err(bad("not a field dump (bad magic)"));
        }
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let dims = [u64_at(8) as usize, u64_at(16) as usize, u64_at(24) as usize];
        let origin = Point3::new(f64_at(32), f64_at(40), f64_at(48));
        let spec = GridSpec::new(origin, f64_at(56), dims)?;
        if bytes.len() != DUMP_HEADER_LEN + 8 * spec.len() {
            return Err(bad("payload length does not match header dims"));
        }
        let values = bytes[DUMP_HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { spec, values })
    }

    /// Write one horizontal layer as CSV rows `i,j,k,x,y,z,value`.
    pub fn write_layer_csv(&self, path: &Path, k: usize) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let res: std::io::Result<()> = (|| {
            writeln!(w, "i,j,k,x,y,z,value")?;
            for j in 0..self.spec.dims[1] {
                for i in 0..self.spec.dims[0] {
                    let c = self.spec.center([i, j, k]);
                    writeln!(w, "{i},{j},{k},{},{},{},{}", c.x, c.y, c.z, self.get([i, j, k]))?;
                }
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }
}

impl FieldQuery for Field3 {
    fn query(&self, p: &Point3) -> Result<(f64, Vector3<f64>)> {
        self.sample(p)
    }
}

/// Closure-backed field, used for analytic stand-ins.
pub struct AnalyticField<F>(pub F);

impl<F> FieldQuery for AnalyticField<F>
where
    F: Fn(&Point3) -> (f64, Vector3<f64>) + Sync,
{
    fn query(&self, p: &Point3) -> Result<(f64, Vector3<f64>)> {
        Ok((self.0)(p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub spec: GridSpec,
    pub occupied: Vec<bool>,
    /// Points that fell outside the grid and were ignored.
    pub dropped: usize,
}

impl OccupancyGrid {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            occupied: vec![false; spec.len()],
            spec,
            dropped: 0,
        }
    }

    pub fn is_occupied(&self, c: [usize; 3]) -> bool {
        self.occupied[self.spec.linear(c[0], c[1], c[2])]
    }

    pub fn set(&mut self, c: [usize; 3], v: bool) {
        let idx = self.spec.linear(c[0], c[1], c[2]);
        self.occupied[idx] = v;
    }

    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }
}

/// Mark every voxel that contains at least one point.
pub fn rasterize(cloud: &PointCloud, spec: &GridSpec) -> Result<OccupancyGrid> {
    spec.validate()?;
    let mut occ = OccupancyGrid::empty(*spec);
    for p in cloud.points() {
        match spec.cell_of(p) {
            Some(c) => occ.set(c, true),
            None => occ.dropped += 1,
        }
    }
    Ok(occ)
}

/// Unsigned distance to the nearest occupied voxel center, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct EsdfField {
    pub field: Field3,
}

impl EsdfField {
    pub fn spec(&self) -> &GridSpec {
        &self.field.spec
    }

    pub fn dist(&self, c: [usize; 3]) -> f64 {
        self.field.get(c)
    }

    /// Trilinear distance and gradient at `p`.
    pub fn query_dist_grad(&self, p: &Point3) -> Result<(f64, Vector3<f64>)> {
        self.field.sample(p)
    }
}

impl FieldQuery for EsdfField {
    fn query(&self, p: &Point3) -> Result<(f64, Vector3<f64>)> {
        self.field.sample(p)
    }
}

/// Lower envelope of parabolas: `out[q] = min_p (q - p)^2 + f[p]`.
/// Infinite entries of `f` are not sites.
pub(crate) fn edt_1d(f: &[f64], out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        while let Some(&p) = v.last() {
            let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
        if v.is_empty() {
            v.push(q);
            z.push(f64::NEG_INFINITY);
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut j = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while j + 1 < v.len() && z[j + 1] < q as f64 {
            j += 1;
        }
        let d = q as f64 - v[j] as f64;
        *o = d * d + f[v[j]];
    }
}

/// Exact squared distance transform in voxel units via three separable passes.
pub(crate) fn squared_edt(spec: &GridSpec, seeds: &[bool]) -> Vec<f64> {
    let [nx, ny, nz] = spec.dims;
    let mut g: Vec<f64> = seeds
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();

    // x lines are contiguous
    g.par_chunks_mut(nx).for_each_init(
        || (vec![0.0; nx], Vec::new(), Vec::new()),
        |(out, v, z), line| {
            edt_1d(line, out, v, z);
            line.copy_from_slice(out);
        },
    );
    // y lines, one xy slab at a time
    g.par_chunks_mut(nx * ny).for_each_init(
        || (vec![0.0; ny], vec![0.0; ny], Vec::new(), Vec::new()),
        |(buf, out, v, z), slab| {
            for i in 0..nx {
                for j in 0..ny {
                    buf[j] = slab[i + nx * j];
                }
                edt_1d(buf, out, v, z);
                for j in 0..ny {
                    slab[i + nx * j] = out[j];
                }
            }
        },
    );
    // z lines: compute per column then scatter
    let nxy = nx * ny;
    let cols: Vec<Vec<f64>> = (0..nxy)
        .into_par_iter()
        .map_init(
            || (vec![0.0; nz], Vec::new(), Vec::new()),
            |(buf, v, z), col| {
                for k in 0..nz {
                    buf[k] = g[col + nxy * k];
                }
                let mut out = vec![0.0; nz];
                edt_1d(buf, &mut out, v, z);
                out
            },
        )
        .collect();
    for (col, out) in cols.into_iter().enumerate() {
        for k in 0..nz {
            g[col + nxy * k] = out[k];
        }
    }
    g
}

/// Exact Euclidean distance field of an occupancy grid.
pub fn build_esdf(occ: &OccupancyGrid) -> Result<EsdfField> {
    if !occ.occupied.iter().any(|&o| o) {
        return Err(Error::NoObstacles);
    }
    let r = occ.spec.resolution;
    let values = squared_edt(&occ.spec, &occ.occupied)
        .into_iter()
        .map(|d2| r * d2.sqrt())
        .collect();
    Ok(EsdfField {
        field: Field3 {
            spec: occ.spec,
            values,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(n: usize) -> GridSpec {
        GridSpec::new(Point3::zeros(), 0.1, [n, n, n]).unwrap()
    }

    #[test]
    fn zero_volume_rejected() {
        assert!(matches!(
            GridSpec::new(Point3::zeros(), 0.1, [3, 0, 3]),
            Err(Error::ZeroVolume(_))
        ));
    }

    #[test]
    fn rasterize_cases() {
        let s = spec(4);
        let empty = rasterize(&PointCloud::new(vec![]), &s).unwrap();
        assert_eq!(empty.count(), 0);
        let c = s.center([0, 0, 0]);
        let one = rasterize(&PointCloud::new(vec![c]), &s).unwrap();
        assert_eq!(one.count(), 1);
        let two = rasterize(&PointCloud::new(vec![c, c + Vector3::repeat(0.01)]), &s).unwrap();
        assert_eq!(two.count(), 1);
        let out = rasterize(&PointCloud::new(vec![Point3::new(-1.0, 0.0, 0.0)]), &s).unwrap();
        assert_eq!(out.dropped, 1);
    }

    #[test]
    fn single_voxel_distances() {
        let s = spec(5);
        let mut occ = OccupancyGrid::empty(s);
        occ.set([2, 2, 2], true);
        let e = build_esdf(&occ).unwrap();
        assert_eq!(e.dist([2, 2, 2]), 0.0);
        assert!((e.dist([3, 2, 2]) - 0.1).abs() < 1e-15);
        assert!((e.dist([2, 2, 1]) - 0.1).abs() < 1e-15);
        assert!((e.dist([3, 3, 2]) - 0.1 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn free_grid_is_an_error() {
        assert!(matches!(build_esdf(&OccupancyGrid::empty(spec(3))), Err(Error::NoObstacles)));
    }

    #[test]
    fn edt_matches_brute_force_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = GridSpec::new(Point3::zeros(), 0.25, [7, 5, 6]).unwrap();
        let mut occ = OccupancyGrid::empty(s);
        for _ in 0..6 {
            occ.set([rng.gen_range(0..7), rng.gen_range(0..5), rng.gen_range(0..6)], true);
        }
        let e = build_esdf(&occ).unwrap();
        for idx in 0..s.len() {
            let a = s.unlinear(idx);
            let best = (0..s.len())
                .filter(|&j| occ.occupied[j])
                .map(|j| {
                    let b = s.unlinear(j);
                    (0..3).map(|t| (a[t] as f64 - b[t] as f64).powi(2)).sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((e.field.values[idx] - 0.25 * best.sqrt()).abs() <= 1e-9);
        }
    }

    #[test]
    fn trilinear_center_and_midpoint() {
        let s = spec(4);
        let mut f = Field3::filled(s, 0.0);
        for (i, v) in f.values.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        let c = s.center([1, 2, 1]);
        assert!((f.sample(&c).unwrap().0 - f.get([1, 2, 1])).abs() < 1e-15);
        let mid = (s.center([1, 2, 1]) + s.center([2, 2, 1])) / 2.0;
        let want = 0.5 * (f.get([1, 2, 1]) + f.get([2, 2, 1]));
        assert!((f.sample(&mid).unwrap().0 - want).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_query_errors() {
        let f = Field3::filled(spec(4), 1.0);
        assert!(matches!(
            f.sample(&Point3::new(0.01, 0.2, 0.2)),
            Err(Error::OutOfBounds(_))
        ));
    }

    #[test]
    fn constant_field_zero_gradient() {
        let f = Field3::filled(spec(4), 3.0);
        let (v, g) = f.sample(&Point3::new(0.17, 0.22, 0.31)).unwrap();
        assert_eq!(v, 3.0);
        assert_eq!(g, Vector3::zeros());
    }

    #[test]
    fn gradient_matches_finite_differences_inside_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = spec(6);
        let mut f = Field3::filled(s, 0.0);
        f.values.iter_mut().for_each(|v| *v = rng.gen_range(0.0..2.0));
        let h = s.resolution / 10.0;
        let mut checked = 0;
        while checked < 50 {
            let p = Point3::new(
                rng.gen_range(0.06..0.54),
                rng.gen_range(0.06..0.54),
                rng.gen_range(0.06..0.54),
            );
            // keep the stencil inside one cell
            let safe = (0..3).all(|a| {
                let u = (p[a] / s.resolution - 0.5).fract();
                u > 0.11 && u < 0.89
            });
            if !safe {
                continue;
            }
            let (_, g) = f.sample(&p).unwrap();
            for a in 0..3 {
                let mut e = Vector3::zeros();
                e[a] = h;
                let fd = (f.sample(&(p + e)).unwrap().0 - f.sample(&(p - e)).unwrap().0) / (2.0 * h);
                assert!((fd - g[a]).abs() <= 1e-6 * g[a].abs().max(1.0));
            }
            checked += 1;
        }
    }

    #[test]
    fn value_continuous_across_faces() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = spec(5);
        let mut f = Field3::filled(s, 0.0);
        f.values.iter_mut().for_each(|v| *v = rng.gen_range(0.0..2.0));
        let face_x = s.origin.x + 2.5 * s.resolution;
        let below = f.sample(&Point3::new(face_x - 1e-12, 0.23, 0.27)).unwrap().0;
        let above = f.sample(&Point3::new(face_x + 1e-12, 0.23, 0.27)).unwrap().0;
        assert!((below - above).abs() <= 1e-9);
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = GridSpec::new(Point3::new(-1.0, 2.0, 0.5), 0.2, [3, 2, 4]).unwrap();
        let mut f = Field3::filled(s, 0.0);
        f.values.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 1.5);
        let p = dir.path().join("f.bin");
        f.write_dump(&p).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 64 + 8 * 24);
        assert_eq!(Field3::read_dump(&p).unwrap(), f);
    }

    #[test]
    fn covering_puts_centers_on_multiples() {
        let s = GridSpec::covering(Point3::new(-0.31, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0), 0.1, 2)
            .unwrap();
        let c = s.center([0, 0, 0]);
        assert!(((c.x / 0.1).round() * 0.1 - c.x).abs() < 1e-12);
        assert!(s.cell_of(&Point3::new(-0.31, 0.0, 0.0)).is_some());
    }
}
