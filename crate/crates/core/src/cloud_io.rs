//! Point cloud storage, spatial indexing and ASCII file formats.
//!
//! A [`PointCloud`] is an immutable list of points plus a uniform hash grid
//! used to answer radius and k-nearest-neighbour queries. Supported file
//! formats are ASCII PCD, ASCII PLY and plain XYZ text (comma or whitespace
//! separated).

use std::collections::HashMap;
use std::fs::File;
use std::hash::{BuildHasherDefault, Hasher};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in world coordinates, meters. `z` is gravity-aligned up.
pub type Point3 = nalgebra::Vector3<f64>;

type CellKey = (i64, i64, i64);

/// Multiply-xorshift hasher for integer cell keys.
#[derive(Default)]
pub(crate) struct CellHasher(u64);

impl Hasher for CellHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.write_u64(b as u64);
        }
    }

    fn write_i64(&mut self, v: i64) {
        self.write_u64(v as u64);
    }

    fn write_u64(&mut self, v: u64) {
        let h = (self.0 ^ v).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        self.0 = h ^ (h >> 29);
    }
}

pub(crate) type CellMap<V> = HashMap<CellKey, V, BuildHasherDefault<CellHasher>>;

/// Supported on-disk formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CloudFormat {
    PcdAscii,
    PlyAscii,
    XyzCsv,
}

impl CloudFormat {
    /// Guess the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pcd" => Some(CloudFormat::PcdAscii),
            "ply" => Some(CloudFormat::PlyAscii),
            "xyz" | "csv" | "txt" => Some(CloudFormat::XyzCsv),
            _ => None,
        }
    }
}

/// Immutable point set with a uniform-grid radius index.
#[derive(Debug, Clone)]
pub struct PointCloud {
    points: Vec<Point3>,
    cell: f64,
    // point indices sorted by cell, and the [start, end) range of each cell
    order: Vec<u32>,
    cells: CellMap<(u32, u32)>,
    cell_min: [i64; 3],
    cell_max: [i64; 3],
}

impl PointCloud {
    /// Build a cloud with an automatically chosen index cell size.
    pub fn new(points: Vec<Point3>) -> Self {
        let cell = auto_cell_size(&points);
        Self::with_cell_size(points, cell)
    }

    /// Build a cloud whose index uses cubic cells of edge `cell` meters.
    ///
    /// Radius queries are cheapest when `cell` is close to the query radius.
    pub fn with_cell_size(points: Vec<Point3>, cell: f64) -> Self {
        let cell = if cell.is_finite() && cell > 0.0 { cell } else { 1.0 };
        let key_of = |p: &Point3| -> CellKey {
            (
                (p.x / cell).floor() as i64,
                (p.y / cell).floor() as i64,
                (p.z / cell).floor() as i64,
            )
        };
        let mut keyed: Vec<(CellKey, u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (key_of(p), i as u32))
            .collect();
        keyed.sort_unstable();

        let mut cells = CellMap::default();
        let mut cell_min = [i64::MAX; 3];
        let mut cell_max = [i64::MIN; 3];
        let mut start = 0usize;
        while start < keyed.len() {
            let key = keyed[start].0;
            let mut end = start + 1;
            while end < keyed.len() && keyed[end].0 == key {
                end += 1;
            }
            cells.insert(key, (start as u32, end as u32));
            for (a, k) in [key.0, key.1, key.2].into_iter().enumerate() {
                cell_min[a] = cell_min[a].min(k);
                cell_max[a] = cell_max[a].max(k);
            }
            start = end;
        }
        let order = keyed.into_iter().map(|(_, i)| i).collect();
        Self {
            points,
            cell,
            order,
            cells,
            cell_min,
            cell_max,
        }
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    /// Axis-aligned bounding box, `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    /// Visit the index of every point within distance `r` (inclusive) of `center`.
    pub fn for_each_within(&self, center: &Point3, r: f64, mut f: impl FnMut(usize)) {
        if self.points.is_empty() || !(r >= 0.0) {
            return;
        }
        let r2 = r * r;
        let lo = [
            ((center.x - r) / self.cell).floor(),
            ((center.y - r) / self.cell).floor(),
            ((center.z - r) / self.cell).floor(),
        ];
        let hi = [
            ((center.x + r) / self.cell).floor(),
            ((center.y + r) / self.cell).floor(),
            ((center.z + r) / self.cell).floor(),
        ];
        let mut lo_i = [0i64; 3];
        let mut hi_i = [0i64; 3];
        let mut span = 1.0f64;
        for a in 0..3 {
            lo_i[a] = (lo[a].max(self.cell_min[a] as f64)) as i64;
            hi_i[a] = (hi[a].min(self.cell_max[a] as f64)) as i64;
            if hi_i[a] < lo_i[a] {
                return;
            }
            span *= (hi_i[a] - lo_i[a] + 1) as f64;
        }
        if span > self.cells.len() as f64 {
            // cheaper to walk the occupied cells than the query box
            for (i, p) in self.points.iter().enumerate() {
                if (p - center).norm_squared() <= r2 {
                    f(i);
                }
            }
            return;
        }
        for ix in lo_i[0]..=hi_i[0] {
            for iy in lo_i[1]..=hi_i[1] {
                for iz in lo_i[2]..=hi_i[2] {
                    if let Some(&(s, e)) = self.cells.get(&(ix, iy, iz)) {
                        for &idx in &self.order[s as usize..e as usize] {
                            let idx = idx as usize;
                            if (self.points[idx] - center).norm_squared() <= r2 {
                                f(idx);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Indices of points within `r` of `center`, in ascending index order.
    pub fn radius_indices(&self, center: &Point3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(center, r, |i| out.push(i));
        out.sort_unstable();
        out
    }

    /// Points within Euclidean distance `r` of `center` (boundary inclusive),
    /// excluding cloud members that coincide with `center`.
    pub fn radius_neighbors(&self, center: &Point3, r: f64) -> Vec<Point3> {
        let mut out = Vec::new();
        self.for_each_within(center, r, |i| {
            let p = self.points[i];
            if p != *center {
                out.push(p);
            }
        });
        out
    }

    /// The `k` nearest points to `center` (excluding coincident points),
    /// sorted by distance then index.
    pub fn nearest_k(&self, center: &Point3, k: usize) -> Vec<usize> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut r = self.cell;
        loop {
            let mut found: Vec<(f64, usize)> = Vec::new();
            self.for_each_within(center, r, |i| {
                let d = (self.points[i] - center).norm_squared();
                if d > 0.0 {
                    found.push((d, i));
                }
            });
            let exhausted = found.len() + 1 >= self.points.len() || r > 1e12;
            if found.len() >= k || exhausted {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                found.truncate(k);
                return found.into_iter().map(|(_, i)| i).collect();
            }
            r *= 2.0;
        }
    }

    /// Median nearest-neighbour distance, `None` when fewer than two distinct points.
    pub fn median_spacing(&self) -> Option<f64> {
        let mut d: Vec<f64> = self
            .points
            .iter()
            .filter_map(|p| {
                self.nearest_k(p, 1)
                    .first()
                    .map(|&j| (self.points[j] - p).norm())
            })
            .collect();
        if d.is_empty() {
            return None;
        }
        d.sort_by(f64::total_cmp);
        Some(d[d.len() / 2])
    }
}

fn auto_cell_size(points: &[Point3]) -> f64 {
    if points.len() < 2 {
        return 1.0;
    }
    let (lo, hi) = points
        .iter()
        .fold((points[0], points[0]), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    let ext = hi - lo;
    // clouds are mostly surfaces; size cells from the largest face of the box
    let mut dims = [ext.x, ext.y, ext.z];
    dims.sort_by(f64::total_cmp);
    let area = (dims[1] * dims[2]).max(1e-12);
    (2.0 * (area / points.len() as f64).sqrt()).max(1e-6)
}

/// Result of [`load_cloud`].
#[derive(Debug, Clone)]
pub struct LoadedCloud {
    pub cloud: PointCloud,
    /// Rows that parsed but contained NaN or infinite coordinates.
    pub rejected_non_finite: usize,
}

/// Read a point cloud from `path`.
pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<LoadedCloud> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line.map_err(|e| Error::io(path, e))?);
    }
    let raw = match format {
        CloudFormat::XyzCsv => parse_xyz(path, &lines)?,
        CloudFormat::PcdAscii => parse_pcd(path, &lines)?,
        CloudFormat::PlyAscii => parse_ply(path, &lines)?,
    };
    let total = raw.len();
    let points: Vec<Point3> = raw
        .into_iter()
        .filter(|p| p.iter().all(|c| c.is_finite()))
        .collect();
    let rejected_non_finite = total - points.len();
    Ok(LoadedCloud {
        cloud: PointCloud::new(points),
        rejected_non_finite,
    })
}

/// Write `cloud` to `path`. Coordinates use shortest round-trip formatting,
/// so reading the file back reproduces them bit for bit.
pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let n = cloud.len();
    let res: std::io::Result<()> = (|| {
        match format {
            CloudFormat::XyzCsv => {}
            CloudFormat::PcdAscii => {
                writeln!(w, "# .PCD v0.7 - Point Cloud Data file format")?;
                writeln!(w, "VERSION 0.7")?;
                writeln!(w, "FIELDS x y z")?;
                writeln!(w, "SIZE 8 8 8")?;
                writeln!(w, "TYPE F F F")?;
                writeln!(w, "COUNT 1 1 1")?;
                writeln!(w, "WIDTH {n}")?;
                writeln!(w, "HEIGHT 1")?;
                writeln!(w, "VIEWPOINT 0 0 0 1 0 0 0")?;
                writeln!(w, "POINTS {n}")?;
                writeln!(w, "DATA ascii")?;
            }
            CloudFormat::PlyAscii => {
                writeln!(w, "ply")?;
                writeln!(w, "format ascii 1.0")?;
                writeln!(w, "element vertex {n}")?;
                writeln!(w, "property double x")?;
                writeln!(w, "property double y")?;
                writeln!(w, "property double z")?;
                writeln!(w, "end_header")?;
            }
        }
        let sep = if format == CloudFormat::XyzCsv { "," } else { " " };
        for p in cloud.points() {
            writeln!(w, "{}{sep}{}{sep}{}", p.x, p.y, p.z)?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("non-numeric field {tok:?}")))
}

fn split_fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
}

fn parse_xyz(path: &Path, lines: &[String]) -> Result<Vec<Point3>> {
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = split_fields(t).collect();
        if toks.len() < 3 {
            return Err(parse_err(path, i + 1, "expected three coordinates"));
        }
        out.push(Point3::new(
            parse_f64(path, i + 1, toks[0])?,
            parse_f64(path, i + 1, toks[1])?,
            parse_f64(path, i + 1, toks[2])?,
        ));
    }
    Ok(out)
}

fn parse_pcd(path: &Path, lines: &[String]) -> Result<Vec<Point3>> {
    let mut fields: Option<Vec<String>> = None;
    let mut counts: Option<Vec<usize>> = None;
    let mut n_points: Option<usize> = None;
    let mut data_line = None;
    for (i, line) in lines.iter().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut toks = t.split_whitespace();
        let key = toks.next().unwrap_or("").to_ascii_uppercase();
        let rest: Vec<&str> = toks.collect();
        match key.as_str() {
            "FIELDS" => fields = Some(rest.iter().map(|s| s.to_string()).collect()),
            "COUNT" => {
                let c = rest
                    .iter()
                    .map(|s| s.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| parse_err(path, i + 1, "malformed COUNT"))?;
                counts = Some(c);
            }
            "POINTS" => {
                let n = rest
                    .first()
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(path, i + 1, "malformed POINTS"))?;
                n_points = Some(n);
            }
            "DATA" => {
                match rest.first().map(|s| s.to_ascii_lowercase()) {
                    Some(ref s) if s == "ascii" => {}
                    _ => return Err(parse_err(path, i + 1, "only DATA ascii is supported")),
                }
                data_line = Some(i + 1);
                break;
            }
            "VERSION" | "SIZE" | "TYPE" | "WIDTH" | "HEIGHT" | "VIEWPOINT" => {}
            _ => return Err(parse_err(path, i + 1, format!("unknown header key {key:?}"))),
        }
    }
    let start = data_line.ok_or_else(|| parse_err(path, lines.len(), "missing DATA line"))?;
    let fields = fields.ok_or_else(|| parse_err(path, start, "missing FIELDS"))?;
    let counts = counts.unwrap_or_else(|| vec![1; fields.len()]);
    if counts.len() != fields.len() {
        return Err(parse_err(path, start, "COUNT and FIELDS lengths differ"));
    }
    // column offset of each field
    let mut col = 0;
    let mut xyz = [None; 3];
    for (f, c) in fields.iter().zip(&counts) {
        match f.as_str() {
            "x" => xyz[0] = Some(col),
            "y" => xyz[1] = Some(col),
            "z" => xyz[2] = Some(col),
            _ => {}
        }
        col += c;
    }
    let [Some(cx), Some(cy), Some(cz)] = xyz else {
        return Err(parse_err(path, start, "FIELDS must include x, y and z"));
    };
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(start) {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        if toks.len() < col {
            return Err(parse_err(path, i + 1, format!("expected {col} values")));
        }
        out.push(Point3::new(
            parse_f64(path, i + 1, toks[cx])?,
            parse_f64(path, i + 1, toks[cy])?,
            parse_f64(path, i + 1, toks[cz])?,
        ));
    }
    if let Some(n) = n_points {
        if n != out.len() {
            return Err(parse_err(
                path,
                lines.len(),
                format!("header declares {n} points, found {}", out.len()),
            ));
        }
    }
    Ok(out)
}

fn parse_ply(path: &Path, lines: &[String]) -> Result<Vec<Point3>> {
    struct Element {
        name: String,
        count: usize,
        props: Vec<String>,
        has_list: bool,
    }
    if lines.first().map(|l| l.trim()) != Some("ply") {
        return Err(parse_err(path, 1, "missing 'ply' magic"));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut body = None;
    for (i, line) in lines.iter().enumerate().skip(1) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(parse_err(path, i + 1, "only ascii PLY is supported"));
                }
            }
            Some("element") => {
                let (Some(name), Some(count)) = (toks.get(1), toks.get(2)) else {
                    return Err(parse_err(path, i + 1, "malformed element line"));
                };
                let count = count
                    .parse()
                    .map_err(|_| parse_err(path, i + 1, "malformed element count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                    has_list: false,
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, i + 1, "property before element"))?;
                if toks.get(1) == Some(&"list") {
                    el.has_list = true;
                } else if let Some(name) = toks.get(2) {
                    el.props.push(name.to_string());
                } else {
                    return Err(parse_err(path, i + 1, "malformed property line"));
                }
            }
            Some("end_header") => {
                body = Some(i + 1);
                break;
            }
            Some(other) => {
                return Err(parse_err(path, i + 1, format!("unknown header keyword {other:?}")))
            }
        }
    }
    let mut cursor = body.ok_or_else(|| parse_err(path, lines.len(), "missing end_header"))?;
    let mut out = Vec::new();
    for el in &elements {
        if el.name != "vertex" {
            cursor += el.count;
            continue;
        }
        if el.has_list {
            return Err(parse_err(path, cursor, "list properties on vertex are not supported"));
        }
        let find = |n: &str| el.props.iter().position(|p| p == n);
        let (Some(cx), Some(cy), Some(cz)) = (find("x"), find("y"), find("z")) else {
            return Err(parse_err(path, cursor, "vertex element lacks x, y or z"));
        };
        for k in 0..el.count {
            let ln = cursor + k;
            let line = lines
                .get(ln)
                .ok_or_else(|| parse_err(path, ln + 1, "unexpected end of file"))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() < el.props.len() {
                return Err(parse_err(path, ln + 1, "too few vertex values"));
            }
            out.push(Point3::new(
                parse_f64(path, ln + 1, toks[cx])?,
                parse_f64(path, ln + 1, toks[cy])?,
                parse_f64(path, ln + 1, toks[cz])?,
            ));
        }
        cursor += el.count;
    }
    Ok(out)
}
