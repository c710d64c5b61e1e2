//! Space-time fields, location tables, forecast sets and their file formats.
//!
//! Two field formats are supported:
//!
//! * CSV: header `t,loc0,loc1,...`, first column the time index, one column
//!   per location. Masked cells are written as `NaN` (an empty cell also reads
//!   as masked). Values use the shortest representation that round-trips.
//! * flat binary: a 64-byte little-endian header followed by the row-major
//!   `f64` payload and, when present, a mask bitmap (one bit per cell,
//!   row-major, LSB first).
//!
//! ```text
//! offset  size  field
//!      0     8  magic  b"WCFIELD\0"
//!      8     4  version (u32, currently 1)
//!     12     4  flags   (u32, bit 0 = mask bitmap present)
//!     16     8  T       (u64, rows / time steps)
//!     24     8  n       (u64, columns / locations)
//!     32     8  t0      (f64, time index of the first row)
//!     40     8  dt      (f64, hours between rows)
//!     48    16  reserved, zero
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FIELD_MAGIC: &[u8; 8] = b"WCFIELD\0";
pub const FIELD_VERSION: u32 = 1;
const HEADER_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldFormat {
    Csv,
    FlatBinary,
}

impl FieldFormat {
    /// Guess the format from a file extension (`.csv` or anything else as binary).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => FieldFormat::Csv,
            _ => FieldFormat::FlatBinary,
        }
    }
}

/// Planar coordinates of the spatial locations, indexed `0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationTable {
    coords: Vec<[f64; 2]>,
}

impl LocationTable {
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Argument("location table must not be empty".into()));
        }
        for (i, c) in coords.iter().enumerate() {
            if !c[0].is_finite() || !c[1].is_finite() {
                return Err(Error::schema(i, 1, "non-finite coordinate"));
            }
        }
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by(|&a, &b| {
            coords[a][0]
                .total_cmp(&coords[b][0])
                .then(coords[a][1].total_cmp(&coords[b][1]))
        });
        for w in order.windows(2) {
            if coords[w[0]] == coords[w[1]] {
                return Err(Error::Argument(format!(
                    "duplicate coordinates at locations {} and {}",
                    w[0].min(w[1]),
                    w[0].max(w[1])
                )));
            }
        }
        Ok(Self { coords })
    }

    /// Placeholder table with locations on the x axis at `0, 1, ..., n-1`.
    pub fn indexed(n: usize) -> Self {
        Self {
            coords: (0..n).map(|i| [i as f64, 0.0]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn get(&self, i: usize) -> [f64; 2] {
        self.coords[i]
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Argument(format!(
                "location index {bad} outside table of {}",
                self.len()
            )));
        }
        Self::new(idx.iter().map(|&i| self.coords[i]).collect())
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.len() as f64;
        let (sx, sy) = self
            .coords
            .iter()
            .fold((0.0, 0.0), |(sx, sy), c| (sx + c[0], sy + c[1]));
        [sx / n, sy / n]
    }

    /// `(xmin, ymin, xmax, ymax)`.
    pub fn bbox(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for c in &self.coords {
            b[0] = b[0].min(c[0]);
            b[1] = b[1].min(c[1]);
            b[2] = b[2].max(c[0]);
            b[3] = b[3].max(c[1]);
        }
        b
    }

    /// Read a CSV table with header `id,x,y`; ids must run `0..n` in order.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = match lines.next() {
            Some(l) => l.map_err(|e| Error::io(path, e))?,
            None => return Err(Error::schema(0, 0, "empty location file")),
        };
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["id", "x", "y"] {
            return Err(Error::schema(0, 0, format!("expected header id,x,y, got {header:?}")));
        }
        let mut coords = Vec::new();
        for (r, line) in lines.enumerate() {
            let row = r + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != 3 {
                return Err(Error::schema(row, cells.len(), "expected 3 columns"));
            }
            let id: usize = cells[0]
                .parse()
                .map_err(|_| Error::schema(row, 0, format!("bad id {:?}", cells[0])))?;
            if id != coords.len() {
                return Err(Error::schema(row, 0, format!("expected id {}, got {id}", coords.len())));
            }
            let x = parse_float(cells[1], row, 1)?;
            let y = parse_float(cells[2], row, 2)?;
            coords.push([x, y]);
        }
        Self::new(coords)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let res: std::io::Result<()> = (|| {
            writeln!(w, "id,x,y")?;
            for (i, c) in self.coords.iter().enumerate() {
                writeln!(w, "{i},{},{}", c[0], c[1])?;
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }
}

fn parse_float(s: &str, row: usize, col: usize) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::schema(row, col, format!("cannot parse {s:?} as a number")))
}

/// Values `Z_t(s_i)` on a `T x n` grid of time steps and locations.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    values: DMatrix<f64>,
    mask: Option<Vec<bool>>,
    locations: LocationTable,
    t0: f64,
    dt: f64,
}

impl SpaceTimeField {
    /// Build an unmasked field; every value must be finite.
    pub fn new(values: DMatrix<f64>, locations: LocationTable, t0: f64, dt: f64) -> Result<Self> {
        Self::with_mask(values, None, locations, t0, dt)
    }

    /// Build a field with an optional row-major mask (`true` = missing).
    pub fn with_mask(
        values: DMatrix<f64>,
        mask: Option<Vec<bool>>,
        locations: LocationTable,
        t0: f64,
        dt: f64,
    ) -> Result<Self> {
        let (t, n) = values.shape();
        if n != locations.len() {
            return Err(Error::Shape(format!(
                "field has {n} columns but location table has {} entries",
                locations.len()
            )));
        }
        if !(dt > 0.0) || !t0.is_finite() {
            return Err(Error::Argument(format!("invalid time axis t0={t0}, dt={dt}")));
        }
        if let Some(m) = &mask {
            if m.len() != t * n {
                return Err(Error::Shape(format!("mask has {} cells, expected {}", m.len(), t * n)));
            }
        }
        let mut values = values;
        for r in 0..t {
            for c in 0..n {
                let masked = mask.as_ref().is_some_and(|m| m[r * n + c]);
                if masked {
                    values[(r, c)] = f64::NAN;
                } else if !values[(r, c)].is_finite() {
                    return Err(Error::schema(r, c, "non-finite value in an unmasked cell"));
                }
            }
        }
        let mask = mask.filter(|m| m.iter().any(|&b| b));
        Ok(Self {
            values,
            mask,
            locations,
            t0,
            dt,
        })
    }

    pub fn n_times(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_locations(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn locations(&self) -> &LocationTable {
        &self.locations
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time index of row `r`.
    pub fn time(&self, r: usize) -> f64 {
        self.t0 + r as f64 * self.dt
    }

    pub fn has_mask(&self) -> bool {
        self.mask.is_some()
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn is_masked(&self, r: usize, c: usize) -> bool {
        self.mask
            .as_ref()
            .is_some_and(|m| m[r * self.n_locations() + c])
    }

    /// Replace the location table (same count required).
    pub fn with_locations(mut self, locations: LocationTable) -> Result<Self> {
        if locations.len() != self.n_locations() {
            return Err(Error::Shape(format!(
                "field has {} columns but location table has {} entries",
                self.n_locations(),
                locations.len()
            )));
        }
        self.locations = locations;
        Ok(self)
    }

    /// Same grid and locations, new values (mask carried over).
    pub fn map_values(&self, values: DMatrix<f64>) -> Result<Self> {
        if values.shape() != self.values.shape() {
            return Err(Error::Shape(format!(
                "replacement values {:?} vs field {:?}",
                values.shape(),
                self.values.shape()
            )));
        }
        Self::with_mask(values, self.mask.clone(), self.locations.clone(), self.t0, self.dt)
    }

    /// Columns `idx`, with the matching sub-table of locations.
    pub fn select_locations(&self, idx: &[usize]) -> Result<Self> {
        let locations = self.locations.subset(idx)?;
        let t = self.n_times();
        let values = DMatrix::from_fn(t, idx.len(), |r, c| self.values[(r, idx[c])]);
        let mask = self.mask.as_ref().map(|m| {
            let n = self.n_locations();
            let mut out = Vec::with_capacity(t * idx.len());
            for r in 0..t {
                out.extend(idx.iter().map(|&c| m[r * n + c]));
            }
            out
        });
        Self::with_mask(values, mask, locations, self.t0, self.dt)
    }

    /// Rows `start..end`.
    pub fn slice_times(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_times() {
            return Err(Error::Argument(format!(
                "time range {start}..{end} invalid for {} steps",
                self.n_times()
            )));
        }
        let n = self.n_locations();
        let values = self.values.rows(start, end - start).into_owned();
        let mask = self.mask.as_ref().map(|m| m[start * n..end * n].to_vec());
        Self::with_mask(values, mask, self.locations.clone(), self.time(start), self.dt)
    }

    pub fn write(&self, path: impl AsRef<Path>, format: FieldFormat) -> Result<()> {
        write_field(self, path, format)
    }
}

pub fn read_field(path: impl AsRef<Path>, format: FieldFormat) -> Result<SpaceTimeField> {
    match format {
        FieldFormat::Csv => read_csv(path.as_ref()),
        FieldFormat::FlatBinary => read_binary(path.as_ref()),
    }
}

pub fn write_field(field: &SpaceTimeField, path: impl AsRef<Path>, format: FieldFormat) -> Result<()> {
    let path = path.as_ref();
    let res = match format {
        FieldFormat::Csv => write_csv(field, path),
        FieldFormat::FlatBinary => write_binary(field, path),
    };
    res.map_err(|e| Error::io(path, e))
}

fn write_csv(field: &SpaceTimeField, path: &Path) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "t")?;
    for c in 0..field.n_locations() {
        write!(w, ",loc{c}")?;
    }
    writeln!(w)?;
    for r in 0..field.n_times() {
        write!(w, "{}", field.time(r))?;
        for c in 0..field.n_locations() {
            if field.is_masked(r, c) {
                write!(w, ",NaN")?;
            } else {
                write!(w, ",{}", field.values[(r, c)])?;
            }
        }
        writeln!(w)?;
    }
    w.flush()
}

fn read_csv(path: &Path) -> Result<SpaceTimeField> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::schema(0, 0, "empty file, header row required")),
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "t" {
        return Err(Error::schema(
            0,
            0,
            "header must start with 't' followed by at least one location column",
        ));
    }
    let n = cols.len() - 1;
    let mut times = Vec::new();
    let mut data = Vec::new();
    let mut mask = Vec::new();
    for (r, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = times.len();
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != n + 1 {
            return Err(Error::schema(
                row,
                cells.len().min(n + 1),
                format!("line {} has {} cells, expected {}", r + 2, cells.len(), n + 1),
            ));
        }
        times.push(parse_float(cells[0], row, 0)?);
        for (c, cell) in cells[1..].iter().enumerate() {
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") || cell.eq_ignore_ascii_case("na") {
                data.push(f64::NAN);
                mask.push(true);
            } else {
                let v = parse_float(cell, row, c + 1)?;
                if !v.is_finite() {
                    return Err(Error::schema(row, c + 1, "non-finite value in an unmasked cell"));
                }
                data.push(v);
                mask.push(false);
            }
        }
    }
    if times.is_empty() {
        return Err(Error::schema(1, 0, "no data rows"));
    }
    let (t0, dt) = time_axis(&times)?;
    let t = times.len();
    let values = DMatrix::from_row_slice(t, n, &data);
    SpaceTimeField::with_mask(values, Some(mask), LocationTable::indexed(n), t0, dt)
}

fn time_axis(times: &[f64]) -> Result<(f64, f64)> {
    let t0 = times[0];
    if times.len() == 1 {
        return Ok((t0, 1.0));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::schema(1, 0, "time index must be strictly increasing"));
    }
    for (r, &t) in times.iter().enumerate() {
        let expect = t0 + r as f64 * dt;
        if (t - expect).abs() > 1e-9 * (1.0 + expect.abs()) {
            return Err(Error::schema(r, 0, format!("irregular time index {t}, expected {expect}")));
        }
    }
    Ok((t0, dt))
}

fn write_binary(field: &SpaceTimeField, path: &Path) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let (t, n) = field.values.shape();
    let mut header = [0u8; HEADER_LEN];
    header[0..8].copy_from_slice(FIELD_MAGIC);
    header[8..12].copy_from_slice(&FIELD_VERSION.to_le_bytes());
    let flags: u32 = if field.mask.is_some() { 1 } else { 0 };
    header[12..16].copy_from_slice(&flags.to_le_bytes());
    header[16..24].copy_from_slice(&(t as u64).to_le_bytes());
    header[24..32].copy_from_slice(&(n as u64).to_le_bytes());
    header[32..40].copy_from_slice(&field.t0.to_le_bytes());
    header[40..48].copy_from_slice(&field.dt.to_le_bytes());
    w.write_all(&header)?;
    for r in 0..t {
        for c in 0..n {
            w.write_all(&field.values[(r, c)].to_le_bytes())?;
        }
    }
    if let Some(m) = &field.mask {
        let mut bytes = vec![0u8; m.len().div_ceil(8)];
        for (i, &b) in m.iter().enumerate() {
            if b {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bytes)?;
    }
    w.flush()
}

fn read_binary(path: &Path) -> Result<SpaceTimeField> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[0..8] != FIELD_MAGIC {
        return Err(Error::schema(0, 0, "missing flat-binary field magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != FIELD_VERSION {
        return Err(Error::schema(0, 0, format!("unsupported field version {version}")));
    }
    let flags = u32_at(12);
    let t = u64_at(16) as usize;
    let n = u64_at(24) as usize;
    let (t0, dt) = (f64_at(32), f64_at(40));
    let cells = t
        .checked_mul(n)
        .ok_or_else(|| Error::schema(0, 0, "dimensions overflow"))?;
    let has_mask = flags & 1 == 1;
    let expected = HEADER_LEN + cells * 8 + if has_mask { cells.div_ceil(8) } else { 0 };
    if bytes.len() != expected {
        return Err(Error::schema(
            0,
            0,
            format!("file is {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(cells);
    for i in 0..cells {
        data.push(f64_at(HEADER_LEN + 8 * i));
    }
    let mask = has_mask.then(|| {
        let base = HEADER_LEN + cells * 8;
        (0..cells).map(|i| bytes[base + i / 8] >> (i % 8) & 1 == 1).collect::<Vec<_>>()
    });
    let values = DMatrix::from_row_slice(t, n, &data);
    SpaceTimeField::with_mask(values, mask, LocationTable::indexed(n), t0, dt)
}

/// Forecasts at one lead for a sequence of origins.
///
/// Row `r` of `point` is the forecast of time step `origins[r] + lead` made
/// with data up to and including `origins[r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSet {
    pub lead: usize,
    pub origins: Vec<usize>,
    pub point: DMatrix<f64>,
    pub ensemble: Vec<DMatrix<f64>>,
    pub half_widths: Option<DMatrix<f64>>,
}

impl ForecastSet {
    pub fn new(lead: usize, origins: Vec<usize>, point: DMatrix<f64>) -> Result<Self> {
        Self::with_ensemble(lead, origins, point, Vec::new())
    }

    pub fn with_ensemble(
        lead: usize,
        origins: Vec<usize>,
        point: DMatrix<f64>,
        ensemble: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if lead == 0 {
            return Err(Error::Argument("lead must be at least 1".into()));
        }
        if point.nrows() != origins.len() {
            return Err(Error::Shape(format!(
                "{} origins but {} forecast rows",
                origins.len(),
                point.nrows()
            )));
        }
        if let Some(m) = ensemble.iter().find(|m| m.shape() != point.shape()) {
            return Err(Error::Shape(format!(
                "ensemble member shape {:?} differs from {:?}",
                m.shape(),
                point.shape()
            )));
        }
        Ok(Self {
            lead,
            origins,
            point,
            ensemble,
            half_widths: None,
        })
    }

    /// Time-step indices being forecast, one per row.
    pub fn targets(&self) -> Vec<usize> {
        self.origins.iter().map(|o| o + self.lead).collect()
    }

    pub fn n_locations(&self) -> usize {
        self.point.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_coordinates_rejected() {
        assert!(LocationTable::new(vec![[0.0, 1.0], [2.0, 3.0], [0.0, 1.0]]).is_err());
        assert!(LocationTable::new(vec![]).is_err());
    }

    #[test]
    fn csv_three_locations_two_steps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        std::fs::write(&p, "t,loc0,loc1,loc2\n0,1.5,2,3\n1,4,5,6.25\n").unwrap();
        let f = read_field(&p, FieldFormat::Csv).unwrap();
        assert_eq!((f.n_times(), f.n_locations()), (2, 3));
        assert_eq!(f.values()[(1, 2)], 6.25);
        assert!(!f.has_mask());
    }

    #[test]
    fn ragged_row_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        std::fs::write(&p, "t,loc0,loc1\n0,1,2\n1,4\n2,5,6\n").unwrap();
        match read_field(&p, FieldFormat::Csv) {
            Err(Error::Schema { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn unmasked_infinity_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        std::fs::write(&p, "t,loc0\n0,1\n1,inf\n").unwrap();
        assert!(matches!(read_field(&p, FieldFormat::Csv), Err(Error::Schema { row: 1, col: 1, .. })));
    }

    #[test]
    fn masked_cell_round_trips_in_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let values = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let f = SpaceTimeField::with_mask(
            values,
            Some(vec![false, true, false, false]),
            LocationTable::indexed(2),
            10.0,
            1.0,
        )
        .unwrap();
        for fmt in [FieldFormat::Csv, FieldFormat::FlatBinary] {
            let p = dir.path().join(format!("f.{fmt:?}"));
            f.write(&p, fmt).unwrap();
            let g = read_field(&p, fmt).unwrap();
            assert_eq!(g.mask(), f.mask());
            assert!(g.values()[(0, 1)].is_nan());
            assert_eq!(g.values()[(1, 0)], 3.0);
            assert_eq!(g.t0(), 10.0);
        }
    }

    #[test]
    fn unmasked_nan_in_binary_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let f = SpaceTimeField::new(DMatrix::from_element(1, 1, 1.0), LocationTable::indexed(1), 0.0, 1.0).unwrap();
        f.write(&p, FieldFormat::FlatBinary).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[64..72].copy_from_slice(&f64::NAN.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        assert!(read_field(&p, FieldFormat::FlatBinary).is_err());
    }

    #[test]
    fn location_table_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loc.csv");
        let t = LocationTable::new(vec![[0.1, 0.2], [1.0 / 3.0, 2.0]]).unwrap();
        t.write_csv(&p).unwrap();
        assert_eq!(LocationTable::read_csv(&p).unwrap(), t);
        std::fs::write(&p, "id,x,y\n1,0,0\n").unwrap();
        assert!(LocationTable::read_csv(&p).is_err());
    }

    #[test]
    fn forecast_set_invariants() {
        let p = DMatrix::zeros(3, 2);
        assert!(ForecastSet::new(0, vec![0, 1, 2], p.clone()).is_err());
        assert!(ForecastSet::with_ensemble(1, vec![0, 1, 2], p.clone(), vec![DMatrix::zeros(2, 2)]).is_err());
        let f = ForecastSet::new(2, vec![5, 6, 7], p).unwrap();
        assert_eq!(f.targets(), vec![7, 8, 9]);
    }
}
