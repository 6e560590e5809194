//! Feature extraction against a binary field store.
//!
//! A request (constraint + spatial feature) is resolved into an
//! [`AccessPlan`] before any storage is touched: the constraint prunes the
//! index to the fields that exist, the feature becomes runs of grid cells,
//! and runs become byte ranges which are coalesced per field.
//!
//! Store layout, per field, concatenated in field-index order:
//!
//! | bytes | content                               |
//! |-------|---------------------------------------|
//! | 4     | magic `QFLD`                          |
//! | 4     | field index, `u32` little-endian      |
//! | 8     | cell count, `u64` little-endian       |
//! | 8 × n | cell values, `f64` little-endian      |
//!
//! Plan offsets are relative to a field's first value byte.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde_json::{json, Value};

use crate::error::{QubeError, Result};
use crate::par::{self, Execution};
use crate::qube::Qube;
use crate::select::{select, Constraint};
use crate::value::{escape, CoordinateValue, DimensionName};

pub const FIELD_MAGIC: &[u8; 4] = b"QFLD";
pub const FIELD_HEADER_LEN: u64 = 16;
pub const VALUE_LEN: u64 = 8;

/// Regular latitude/longitude grid. Row 0 lies at `lat0`, rows step toward
/// `lat1`; columns step from `lon0` to `lon1`. Both bounds are grid points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub nlat: u32,
    pub nlon: u32,
    pub lat0: f64,
    pub lat1: f64,
    pub lon0: f64,
    pub lon1: f64,
}

impl GridSpec {
    /// Global grid, north to south, `lon1` one step short of 360.
    pub fn global(nlat: u32, nlon: u32) -> Self {
        GridSpec {
            nlat,
            nlon,
            lat0: 90.0,
            lat1: -90.0,
            lon0: 0.0,
            lon1: 360.0 - 360.0 / nlon.max(1) as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nlat == 0 || self.nlon == 0 {
            return Err(QubeError::InvalidConfig(
                "grid dimensions must be positive".into(),
            ));
        }
        let finite = [self.lat0, self.lat1, self.lon0, self.lon1]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(QubeError::InvalidConfig(
                "grid bounds must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> u64 {
        self.nlat as u64 * self.nlon as u64
    }

    pub fn index(&self, row: u32, col: u32) -> u64 {
        row as u64 * self.nlon as u64 + col as u64
    }

    pub fn lat_of(&self, row: u32) -> f64 {
        axis_point(self.lat0, self.lat1, self.nlat, row)
    }

    pub fn lon_of(&self, col: u32) -> f64 {
        axis_point(self.lon0, self.lon1, self.nlon, col)
    }
}

fn axis_point(start: f64, end: f64, n: u32, i: u32) -> f64 {
    if n == 1 {
        start
    } else {
        start + (end - start) * i as f64 / (n - 1) as f64
    }
}

fn within(x: f64, a: f64, b: f64) -> bool {
    a.min(b) <= x && x <= a.max(b)
}

/// Nearest point on an axis; exact midpoints go to the lower index.
fn nearest(start: f64, end: f64, n: u32, x: f64) -> u32 {
    if n == 1 {
        return 0;
    }
    let pos = (x - start) / ((end - start) / (n - 1) as f64);
    ((pos - 0.5).ceil().max(0.0) as u32).min(n - 1)
}

/// Indices of axis points inside `[lo, hi]`.
fn span(start: f64, end: f64, n: u32, lo: f64, hi: f64) -> Option<(u32, u32)> {
    let inside: Vec<u32> = (0..n)
        .filter(|&i| {
            let p = axis_point(start, end, n, i);
            lo <= p && p <= hi
        })
        .collect();
    Some((*inside.first()?, *inside.last()?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Feature {
    Point {
        lat: f64,
        lon: f64,
    },
    /// Inclusive bounds; must not cross the longitude seam.
    Box {
        lat_min: f64,
        lat_max: f64,
        lon_min: f64,
        lon_max: f64,
    },
    AllCells,
}

impl Feature {
    /// `point:LAT,LON`, `box:LATMIN,LATMAX,LONMIN,LONMAX` or `all`.
    pub fn parse(s: &str) -> Result<Self> {
        let nums = |body: &str, n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = body
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| QubeError::InvalidFeature(format!("{s:?}: {e}")))?;
            if v.len() != n {
                return Err(QubeError::InvalidFeature(format!(
                    "{s:?}: expected {n} numbers"
                )));
            }
            Ok(v)
        };
        if s == "all" {
            Ok(Feature::AllCells)
        } else if let Some(body) = s.strip_prefix("point:") {
            let v = nums(body, 2)?;
            Ok(Feature::Point {
                lat: v[0],
                lon: v[1],
            })
        } else if let Some(body) = s.strip_prefix("box:") {
            let v = nums(body, 4)?;
            Ok(Feature::Box {
                lat_min: v[0],
                lat_max: v[1],
                lon_min: v[2],
                lon_max: v[3],
            })
        } else {
            Err(QubeError::InvalidFeature(format!(
                "unrecognised feature {s:?}"
            )))
        }
    }
}

/// Cell runs `(start index, count)` covered by `f`, ascending and disjoint.
pub fn feature_to_indices(grid: &GridSpec, f: &Feature) -> Result<Vec<(u64, u64)>> {
    grid.validate()?;
    match *f {
        Feature::AllCells => Ok(vec![(0, grid.cell_count())]),
        Feature::Point { lat, lon } => {
            if !within(lat, grid.lat0, grid.lat1) || !within(lon, grid.lon0, grid.lon1) {
                return Err(QubeError::OutOfBounds(format!("point ({lat}, {lon})")));
            }
            let row = nearest(grid.lat0, grid.lat1, grid.nlat, lat);
            let col = nearest(grid.lon0, grid.lon1, grid.nlon, lon);
            Ok(vec![(grid.index(row, col), 1)])
        }
        Feature::Box {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        } => {
            if !(lat_min <= lat_max && lon_min <= lon_max) {
                return Err(QubeError::InvalidFeature(format!(
                    "box bounds out of order: lat {lat_min}..{lat_max}, lon {lon_min}..{lon_max}"
                )));
            }
            let (glat_lo, glat_hi) = (grid.lat0.min(grid.lat1), grid.lat0.max(grid.lat1));
            let (glon_lo, glon_hi) = (grid.lon0.min(grid.lon1), grid.lon0.max(grid.lon1));
            if lat_max < glat_lo || lat_min > glat_hi || lon_max < glon_lo || lon_min > glon_hi {
                return Err(QubeError::OutOfBounds(format!(
                    "box lat {lat_min}..{lat_max}, lon {lon_min}..{lon_max}"
                )));
            }
            let rows = span(grid.lat0, grid.lat1, grid.nlat, lat_min, lat_max);
            let cols = span(grid.lon0, grid.lon1, grid.nlon, lon_min, lon_max);
            let (Some((r0, r1)), Some((c0, c1))) = (rows, cols) else {
                return Ok(Vec::new());
            };
            Ok((r0..=r1)
                .map(|r| (grid.index(r, c0), (c1 - c0 + 1) as u64))
                .collect())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ByteRange {
    pub field_index: u32,
    pub offset: u64,
    pub length: u64,
}

impl ByteRange {
    pub fn end(&self) -> u64 {
        self.offset + self.length
    }
}

/// Sorts ranges and fuses those in the same field that touch or overlap.
/// Zero-length ranges are dropped.
pub fn coalesce(mut ranges: Vec<ByteRange>) -> Vec<ByteRange> {
    ranges.retain(|r| r.length > 0);
    ranges.sort_unstable();
    let mut out: Vec<ByteRange> = Vec::with_capacity(ranges.len());
    for r in ranges {
        match out.last_mut() {
            Some(last) if last.field_index == r.field_index && last.end() >= r.offset => {
                last.length = last.end().max(r.end()) - last.offset;
            }
            _ => out.push(r),
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccessPlan {
    pub ranges: Vec<ByteRange>,
    pub total_bytes: u64,
    pub fields_touched: u64,
}

impl AccessPlan {
    pub fn from_ranges(ranges: Vec<ByteRange>) -> Self {
        let ranges = coalesce(ranges);
        let total_bytes = ranges.iter().map(|r| r.length).sum();
        let mut fields: Vec<u32> = ranges.iter().map(|r| r.field_index).collect();
        fields.dedup();
        AccessPlan {
            ranges,
            total_bytes,
            fields_touched: fields.len() as u64,
        }
    }
}

/// Canonical field key: `dim=value` pairs in tree order, comma-joined.
pub fn field_key(tuple: &[(DimensionName, CoordinateValue)]) -> String {
    tuple
        .iter()
        .map(|(d, v)| format!("{}={}", escape(d.as_str(), &[]), escape(&v.token(), &[])))
        .collect::<Vec<_>>()
        .join(",")
}

/// Field addressing for a mock store.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldStoreManifest {
    pub grid: GridSpec,
    pub fields: BTreeMap<String, u32>,
    /// Data file; relative paths resolve against the manifest's directory.
    pub data_path: PathBuf,
}

impl FieldStoreManifest {
    /// One field per leaf of `q`, numbered in leaf order.
    pub fn for_qube(q: &Qube, grid: GridSpec, data_path: impl Into<PathBuf>) -> Self {
        let fields = q
            .compress()
            .leaves()
            .enumerate()
            .map(|(i, t)| (field_key(&t), i as u32))
            .collect();
        FieldStoreManifest {
            grid,
            fields,
            data_path: data_path.into(),
        }
    }

    pub fn field_count(&self) -> u64 {
        self.fields.len() as u64
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let mut idx: Vec<u32> = self.fields.values().copied().collect();
        idx.sort_unstable();
        if idx.iter().enumerate().any(|(i, &f)| i as u32 != f) {
            return Err(QubeError::InvalidConfig(
                "field indices must be dense and unique from 0".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let g = &self.grid;
        json!({
            "grid": {
                "nlat": g.nlat, "nlon": g.nlon,
                "lat0": g.lat0, "lat1": g.lat1, "lon0": g.lon0, "lon1": g.lon1,
            },
            "fields": self.fields,
            "data_path": self.data_path.to_string_lossy(),
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let schema = |path: &str, msg: &str| QubeError::schema(path, msg);
        let g = v.get("grid").ok_or_else(|| schema("$.grid", "missing"))?;
        let uint = |k: &str| -> Result<u32> {
            g.get(k)
                .and_then(Value::as_u64)
                .and_then(|x| u32::try_from(x).ok())
                .ok_or_else(|| schema(&format!("$.grid.{k}"), "expected an unsigned integer"))
        };
        let float = |k: &str| -> Result<f64> {
            g.get(k)
                .and_then(Value::as_f64)
                .ok_or_else(|| schema(&format!("$.grid.{k}"), "expected a number"))
        };
        let grid = GridSpec {
            nlat: uint("nlat")?,
            nlon: uint("nlon")?,
            lat0: float("lat0")?,
            lat1: float("lat1")?,
            lon0: float("lon0")?,
            lon1: float("lon1")?,
        };
        let fields = v
            .get("fields")
            .and_then(Value::as_object)
            .ok_or_else(|| schema("$.fields", "expected an object"))?
            .iter()
            .map(|(k, i)| {
                i.as_u64()
                    .and_then(|x| u32::try_from(x).ok())
                    .map(|i| (k.clone(), i))
                    .ok_or_else(|| schema(&format!("$.fields.{k}"), "expected a field index"))
            })
            .collect::<Result<_>>()?;
        let data_path = v
            .get("data_path")
            .and_then(Value::as_str)
            .ok_or_else(|| schema("$.data_path", "expected a string"))?
            .into();
        let m = FieldStoreManifest {
            grid,
            fields,
            data_path,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s =
            serde_json::to_string_pretty(&self.to_json()).expect("JSON values always serialize");
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| QubeError::syntax(e.line(), e.column(), e.to_string()))?;
        Self::from_json(&v)
    }

    /// `data_path` resolved against `base` when relative.
    pub fn resolve_data_path(&self, base: &Path) -> PathBuf {
        if self.data_path.is_absolute() {
            self.data_path.clone()
        } else {
            base.join(&self.data_path)
        }
    }
}

/// Synthetic cell value written by [`write_mock_store`].
pub fn mock_value(field_index: u32, cell: u64) -> f64 {
    field_index as f64 * 1e6 + cell as f64
}

/// Writes the store for `m` at `path` with values from [`mock_value`].
pub fn write_mock_store(m: &FieldStoreManifest, path: &Path) -> Result<()> {
    m.validate()?;
    let cells = m.grid.cell_count();
    let mut w = BufWriter::new(File::create(path)?);
    for fi in 0..m.field_count() as u32 {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&fi.to_le_bytes())?;
        w.write_all(&cells.to_le_bytes())?;
        for ci in 0..cells {
            w.write_all(&mock_value(fi, ci).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Resolves a request into byte ranges without touching storage.
pub fn plan(q: &Qube, c: &Constraint, f: &Feature, m: &FieldStoreManifest) -> Result<AccessPlan> {
    let runs = feature_to_indices(&m.grid, f)?;
    let selected = select(q, c)?;
    let mut ranges = Vec::new();
    for tuple in selected.leaves() {
        let key = field_key(&tuple);
        let fi = *m.fields.get(&key).ok_or(QubeError::UnknownField(key))?;
        ranges.extend(runs.iter().map(|&(start, count)| ByteRange {
            field_index: fi,
            offset: start * VALUE_LEN,
            length: count * VALUE_LEN,
        }));
    }
    Ok(AccessPlan::from_ranges(ranges))
}

/// Values returned by [`execute`] plus I/O accounting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Extraction {
    pub values: BTreeMap<(u32, u64), f64>,
    /// Cell-value bytes read.
    pub payload_bytes: u64,
    /// Field-header bytes read for validation.
    pub header_bytes: u64,
}

pub fn execute(p: &AccessPlan, store: &Path) -> Result<Extraction> {
    execute_with(p, store, Execution::default())
}

/// As [`execute`]; distinct fields may be read concurrently.
pub fn execute_with(p: &AccessPlan, store: &Path, exec: Execution) -> Result<Extraction> {
    if p.ranges.is_empty() {
        return Ok(Extraction::default());
    }
    let payload = AtomicU64::new(0);
    let header = AtomicU64::new(0);
    let cells = {
        let mut f = File::open(store)?;
        read_header(&mut f, p.ranges[0].field_index, 0, &header)?
    };
    let stride = FIELD_HEADER_LEN + cells * VALUE_LEN;

    let mut per_field: Vec<&[ByteRange]> = Vec::new();
    let mut start = 0;
    for i in 1..=p.ranges.len() {
        if i == p.ranges.len() || p.ranges[i].field_index != p.ranges[start].field_index {
            per_field.push(&p.ranges[start..i]);
            start = i;
        }
    }
    let results = par::map(
        exec,
        per_field,
        |ranges| -> Result<Vec<((u32, u64), f64)>> {
            let fi = ranges[0].field_index;
            let base = fi as u64 * stride;
            let mut f = File::open(store)?;
            let n = read_header(&mut f, fi, base, &header)?;
            if n != cells {
                return Err(QubeError::CorruptField {
                    field_index: fi,
                    reason: format!("cell count {n} differs from {cells}"),
                });
            }
            let mut out = Vec::new();
            let mut buf = Vec::new();
            for r in ranges {
                if r.offset % VALUE_LEN != 0
                    || r.length % VALUE_LEN != 0
                    || r.end() > cells * VALUE_LEN
                {
                    return Err(QubeError::CorruptField {
                        field_index: fi,
                        reason: format!(
                            "range {}+{} does not fit {cells} cells",
                            r.offset, r.length
                        ),
                    });
                }
                buf.resize(r.length as usize, 0);
                f.seek(SeekFrom::Start(base + FIELD_HEADER_LEN + r.offset))?;
                read_full(&mut f, &mut buf, fi)?;
                payload.fetch_add(r.length, Ordering::Relaxed);
                let first = r.offset / VALUE_LEN;
                out.extend(buf.chunks_exact(8).enumerate().map(|(k, b)| {
                    let v = f64::from_le_bytes(b.try_into().expect("8-byte chunk"));
                    ((fi, first + k as u64), v)
                }));
            }
            Ok(out)
        },
    );
    let mut values = BTreeMap::new();
    for r in results {
        values.extend(r?);
    }
    Ok(Extraction {
        values,
        payload_bytes: payload.into_inner(),
        header_bytes: header.into_inner(),
    })
}

fn read_full(f: &mut File, buf: &mut [u8], fi: u32) -> Result<()> {
    f.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => {
            QubeError::ShortRead(format!("field {fi}: wanted {} bytes", buf.len()))
        }
        _ => QubeError::Io(e),
    })
}

/// Reads and checks one field header, returning its cell count.
fn read_header(f: &mut File, fi: u32, at: u64, counter: &AtomicU64) -> Result<u64> {
    let mut h = [0u8; FIELD_HEADER_LEN as usize];
    f.seek(SeekFrom::Start(at))?;
    read_full(f, &mut h, fi)?;
    counter.fetch_add(FIELD_HEADER_LEN, Ordering::Relaxed);
    if &h[..4] != FIELD_MAGIC {
        return Err(QubeError::CorruptField {
            field_index: fi,
            reason: "bad magic".into(),
        });
    }
    let stored = u32::from_le_bytes(h[4..8].try_into().expect("4 bytes"));
    if stored != fi && at != 0 {
        return Err(QubeError::CorruptField {
            field_index: fi,
            reason: format!("header names field {stored}"),
        });
    }
    Ok(u64::from_le_bytes(h[8..16].try_into().expect("8 bytes")))
}
