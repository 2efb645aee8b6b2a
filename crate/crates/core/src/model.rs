//! Shared domain types and the plain-text file formats.
//!
//! Coordinates are geographic degrees throughout. Rasters are stored as an
//! ESRI-ASCII-style grid:
//!
//! ```text
//! ncols 2
//! nrows 2
//! xllcorner -90.0128
//! yllcorner 42.4872
//! cellsize 0.0001
//! nodata_value -1
//! 0 1
//! 1 0
//! ```
//!
//! Row 0 is the northernmost row. Numbers are written with the shortest
//! decimal representation that parses back to the same `f64`, so equal
//! rasters always serialize to identical bytes and reading a written file
//! gives back the exact values.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Geographic position in degrees. Longitude is kept in `[-180, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::Invalid(format!("non-finite coordinate ({lat}, {lon})")));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Invalid(format!("latitude {lat} outside [-90, 90]")));
        }
        let lon = if (-180.0..180.0).contains(&lon) {
            lon
        } else {
            (lon + 180.0).rem_euclid(360.0) - 180.0
        };
        Ok(LatLon { lat, lon })
    }
}

/// Calendar date of an acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DateStamp(NaiveDate);

impl DateStamp {
    pub fn new(year: i32, month: u32, day: u32) -> Result<Self> {
        NaiveDate::from_ymd_opt(year, month, day)
            .map(DateStamp)
            .ok_or_else(|| Error::Invalid(format!("invalid date {year}-{month:02}-{day:02}")))
    }

    pub fn from_naive(date: NaiveDate) -> Self {
        DateStamp(date)
    }

    pub fn naive(self) -> NaiveDate {
        self.0
    }

    pub fn year(self) -> i32 {
        self.0.year()
    }

    pub fn month(self) -> u32 {
        self.0.month()
    }

    pub fn day(self) -> u32 {
        self.0.day()
    }

    /// Signed number of days from `earlier` to `self`.
    pub fn days_since(self, earlier: DateStamp) -> i64 {
        (self.0 - earlier.0).num_days()
    }

    pub fn add_days(self, days: i64) -> Self {
        DateStamp(self.0 + chrono::Duration::days(days))
    }
}

impl fmt::Display for DateStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%d"))
    }
}

impl FromStr for DateStamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
            .map(DateStamp)
            .map_err(|e| Error::Invalid(format!("bad date `{s}`: {e}")))
    }
}

impl Serialize for DateStamp {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DateStamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Crop height class. Integer codes are the ones written to class rasters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeightClass {
    Short,
    Tall,
    Tree,
}

impl HeightClass {
    pub const ALL: [HeightClass; 3] = [HeightClass::Short, HeightClass::Tall, HeightClass::Tree];

    pub fn code(self) -> i32 {
        match self {
            HeightClass::Short => 0,
            HeightClass::Tall => 1,
            HeightClass::Tree => 2,
        }
    }

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(HeightClass::Short),
            1 => Some(HeightClass::Tall),
            2 => Some(HeightClass::Tree),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeightClass::Short => "short",
            HeightClass::Tall => "tall",
            HeightClass::Tree => "tree",
        }
    }
}

impl fmt::Display for HeightClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeightClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "short" | "0" => Ok(HeightClass::Short),
            "tall" | "1" => Ok(HeightClass::Tall),
            "tree" | "2" => Ok(HeightClass::Tree),
            other => Err(Error::Invalid(format!("unknown height class `{other}`"))),
        }
    }
}

/// Nodata code used by class, flag and label rasters.
pub const CLASS_NODATA: f64 = -1.0;

/// Nodata sentinel for continuous rasters (features, GCVI, fractions).
pub const VALUE_NODATA: f64 = -9999.0;

/// Latitude/longitude box, `lat_min <= lat < lat_max`, `lon_min <= lon < lon_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GeoBox {
    pub fn contains(&self, p: &LatLon) -> bool {
        p.lat >= self.lat_min && p.lat < self.lat_max && p.lon >= self.lon_min && p.lon < self.lon_max
    }

    pub fn buffered(&self, by: f64) -> GeoBox {
        GeoBox {
            lat_min: self.lat_min - by,
            lat_max: self.lat_max + by,
            lon_min: self.lon_min - by,
            lon_max: self.lon_max + by,
        }
    }

    pub fn center(&self) -> LatLon {
        LatLon {
            lat: 0.5 * (self.lat_min + self.lat_max),
            lon: 0.5 * (self.lon_min + self.lon_max),
        }
    }
}

/// Georeferenced row-major grid. Row 0 is the northern edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    origin: LatLon,
    cell_size: f64,
    n_rows: usize,
    n_cols: usize,
    nodata: f64,
    values: Vec<f64>,
}

impl Raster {
    pub fn new(
        origin: LatLon,
        cell_size: f64,
        n_rows: usize,
        n_cols: usize,
        nodata: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::Invalid(format!("cell size {cell_size} must be positive")));
        }
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Invalid("raster must have at least one row and column".into()));
        }
        if values.len() != n_rows * n_cols {
            return Err(Error::Dimension {
                expected: n_rows * n_cols,
                got: values.len(),
            });
        }
        if !nodata.is_finite() {
            return Err(Error::Invalid("nodata sentinel must be finite".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite raster value {v}")));
        }
        Ok(Raster {
            origin,
            cell_size,
            n_rows,
            n_cols,
            nodata,
            values,
        })
    }

    pub fn filled(
        origin: LatLon,
        cell_size: f64,
        n_rows: usize,
        n_cols: usize,
        nodata: f64,
        fill: f64,
    ) -> Result<Self> {
        Raster::new(origin, cell_size, n_rows, n_cols, nodata, vec![fill; n_rows * n_cols])
    }

    /// Same geometry as `self`, new contents.
    pub fn like(&self, nodata: f64, values: Vec<f64>) -> Result<Self> {
        Raster::new(self.origin, self.cell_size, self.n_rows, self.n_cols, nodata, values)
    }

    pub fn origin(&self) -> LatLon {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nodata(&self) -> f64 {
        self.nodata
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.n_cols + col] = v;
    }

    /// `None` when the cell holds the nodata sentinel.
    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.get(row, col);
        (v != self.nodata).then_some(v)
    }

    /// Like [`Raster::value`], but `None` outside the grid as well.
    pub fn value_at(&self, row: i64, col: i64) -> Option<f64> {
        if row < 0 || col < 0 || row as usize >= self.n_rows || col as usize >= self.n_cols {
            return None;
        }
        self.value(row as usize, col as usize)
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata
    }

    /// Northern edge latitude.
    pub fn top(&self) -> f64 {
        self.origin.lat + self.n_rows as f64 * self.cell_size
    }

    pub fn right(&self) -> f64 {
        self.origin.lon + self.n_cols as f64 * self.cell_size
    }

    pub fn bounds(&self) -> GeoBox {
        GeoBox {
            lat_min: self.origin.lat,
            lat_max: self.top(),
            lon_min: self.origin.lon,
            lon_max: self.right(),
        }
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> LatLon {
        LatLon {
            lat: self.origin.lat + (self.n_rows - row) as f64 * self.cell_size - 0.5 * self.cell_size,
            lon: self.origin.lon + (col as f64 + 0.5) * self.cell_size,
        }
    }

    /// Pixel containing `p`, or `None` outside the extent.
    pub fn point_to_pixel(&self, p: &LatLon) -> Option<(usize, usize)> {
        let fc = (p.lon - self.origin.lon) / self.cell_size;
        let fr = (self.top() - p.lat) / self.cell_size;
        if !(fc >= 0.0 && fr >= 0.0) {
            return None;
        }
        let (row, col) = (fr.floor() as usize, fc.floor() as usize);
        (row < self.n_rows && col < self.n_cols).then_some((row, col))
    }

    /// Position of `other`'s (0, 0) pixel in this raster's pixel grid. Fails if
    /// the two grids do not share cell size and pixel alignment.
    pub fn grid_offset(&self, other: &Raster) -> Result<(i64, i64)> {
        let rel = (self.cell_size - other.cell_size).abs() / self.cell_size;
        if rel > 1e-9 {
            return Err(Error::Misaligned(format!(
                "cell sizes {} and {} differ",
                self.cell_size, other.cell_size
            )));
        }
        let dr = (self.top() - other.top()) / self.cell_size;
        let dc = (other.origin.lon - self.origin.lon) / self.cell_size;
        if (dr - dr.round()).abs() > 1e-6 || (dc - dc.round()).abs() > 1e-6 {
            return Err(Error::Misaligned(format!(
                "origins differ by a fractional pixel ({dr}, {dc})"
            )));
        }
        Ok((dr.round() as i64, dc.round() as i64))
    }

    /// Pixel-aligned sub-raster covering the part of `self` that intersects `bbox`.
    pub fn window(&self, bbox: &GeoBox) -> Option<Raster> {
        let eps = 1e-9;
        let c0 = ((bbox.lon_min - self.origin.lon) / self.cell_size + eps).floor().max(0.0) as usize;
        let c1 = (((bbox.lon_max - self.origin.lon) / self.cell_size - eps).ceil().max(0.0) as usize)
            .min(self.n_cols);
        let r0 = ((self.top() - bbox.lat_max) / self.cell_size + eps).floor().max(0.0) as usize;
        let r1 = (((self.top() - bbox.lat_min) / self.cell_size - eps).ceil().max(0.0) as usize)
            .min(self.n_rows);
        if c0 >= c1 || r0 >= r1 {
            return None;
        }
        let (nr, nc) = (r1 - r0, c1 - c0);
        let mut values = Vec::with_capacity(nr * nc);
        for r in r0..r1 {
            values.extend_from_slice(&self.values[r * self.n_cols + c0..r * self.n_cols + c1]);
        }
        let origin = LatLon {
            lat: self.origin.lat + (self.n_rows - r1) as f64 * self.cell_size,
            lon: self.origin.lon + c0 as f64 * self.cell_size,
        };
        Raster::new(origin, self.cell_size, nr, nc, self.nodata, values).ok()
    }

    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity(64 + self.values.len() * 4);
        use std::fmt::Write as _;
        let _ = writeln!(out, "ncols {}", self.n_cols);
        let _ = writeln!(out, "nrows {}", self.n_rows);
        let _ = writeln!(out, "xllcorner {}", self.origin.lon);
        let _ = writeln!(out, "yllcorner {}", self.origin.lat);
        let _ = writeln!(out, "cellsize {}", self.cell_size);
        let _ = writeln!(out, "nodata_value {}", self.nodata);
        for row in self.values.chunks(self.n_cols) {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_ascii(text: &str, path: &Path) -> Result<Raster> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        const KEYS: [&str; 6] = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"];
        let mut header = [f64::NAN; 6];
        let mut lines = text.lines().enumerate();
        for _ in 0..KEYS.len() {
            let (i, line) = lines
                .next()
                .ok_or_else(|| perr(text.lines().count() + 1, "truncated header".into()))?;
            let mut parts = line.split_whitespace();
            let (Some(key), Some(val), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(perr(i + 1, format!("malformed header line `{line}`")));
            };
            let key = key.to_ascii_lowercase();
            let slot = KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| perr(i + 1, format!("unknown header key `{key}`")))?;
            if !header[slot].is_nan() {
                return Err(perr(i + 1, format!("duplicate header key `{key}`")));
            }
            header[slot] = val
                .parse::<f64>()
                .map_err(|_| perr(i + 1, format!("non-numeric header value `{val}`")))?;
        }
        let [ncols, nrows, xll, yll, cellsize, nodata] = header;
        let as_count = |v: f64, name: &str| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(perr(0, format!("{name} must be a positive integer, got {v}")))
            }
        };
        let n_cols = as_count(ncols, "ncols")?;
        let n_rows = as_count(nrows, "nrows")?;
        let mut values = Vec::with_capacity(n_rows * n_cols);
        let mut rows_seen = 0;
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            if rows_seen == n_rows {
                return Err(perr(i + 1, format!("more than {n_rows} data rows")));
            }
            let before = values.len();
            for tok in line.split_whitespace() {
                let v = tok
                    .parse::<f64>()
                    .map_err(|_| perr(i + 1, format!("non-numeric value `{tok}`")))?;
                values.push(v);
            }
            let got = values.len() - before;
            if got != n_cols {
                return Err(perr(i + 1, format!("expected {n_cols} values, found {got}")));
            }
            rows_seen += 1;
        }
        if rows_seen != n_rows {
            return Err(perr(
                text.lines().count(),
                format!("expected {n_rows} data rows, found {rows_seen}"),
            ));
        }
        let origin = LatLon::new(yll, xll).map_err(|e| perr(0, e.to_string()))?;
        Raster::new(origin, cellsize, n_rows, n_cols, nodata, values).map_err(|e| perr(0, e.to_string()))
    }
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Raster::parse_ascii(&text, path)
}

pub fn write_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, raster.to_ascii()).map_err(|e| Error::io(path, e))
}

/// One labelled field point used for map evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRecord {
    pub location: LatLon,
    pub crop_name: String,
    pub year: i32,
    pub season_tag: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ReferenceLine {
    lat: f64,
    lon: f64,
    crop: String,
    year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    season: Option<String>,
}

pub fn read_reference(path: impl AsRef<Path>) -> Result<Vec<ReferenceRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let rec: ReferenceLine = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
        if rec.crop.trim().is_empty() {
            return Err(perr("empty crop name".into()));
        }
        out.push(ReferenceRecord {
            location: LatLon::new(rec.lat, rec.lon).map_err(|e| perr(e.to_string()))?,
            crop_name: rec.crop,
            year: rec.year,
            season_tag: rec.season,
        });
    }
    Ok(out)
}

pub fn write_reference(records: &[ReferenceRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = ReferenceLine {
            lat: r.location.lat,
            lon: r.location.lon,
            crop: r.crop_name.clone(),
            year: r.year,
            season: r.season_tag.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> Raster {
        Raster::new(
            LatLon::new(42.0, -90.0).unwrap(),
            0.5,
            2,
            2,
            CLASS_NODATA,
            vec![0.0, 1.0, 1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn parses_two_by_two() {
        let text = "ncols 2\nnrows 2\nxllcorner -90\nyllcorner 42\ncellsize 0.5\nnodata_value -1\n0 1\n1 0\n";
        let r = Raster::parse_ascii(text, Path::new("t.asc")).unwrap();
        assert_eq!(r, small());
        assert_eq!(r.to_ascii(), text);
    }

    #[test]
    fn single_zero_cell() {
        let r = Raster::filled(LatLon::new(0.0, 0.0).unwrap(), 1.0, 1, 1, -9999.0, 0.0).unwrap();
        let text = r.to_ascii();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[6], "0");
        assert_eq!(lines[5], "nodata_value -9999");
    }

    #[test]
    fn nodata_written_verbatim() {
        let mut r = small();
        r.set(0, 0, CLASS_NODATA);
        assert!(r.to_ascii().ends_with("-1 1\n1 0\n"));
        assert_eq!(r.value(0, 0), None);
    }

    #[test]
    fn row_width_mismatch_reports_line() {
        let text = "ncols 3\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nnodata_value -1\n1 2 3 4\n";
        match Raster::parse_ascii(text, Path::new("bad.asc")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_header_and_tokens() {
        let text = "ncols 2\nnrows x\n";
        assert!(matches!(Raster::parse_ascii(text, Path::new("b")), Err(Error::Parse { line: 2, .. })));
        let text = "ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nnodata_value -1\nabc\n";
        assert!(matches!(Raster::parse_ascii(text, Path::new("b")), Err(Error::Parse { line: 7, .. })));
    }

    #[test]
    fn file_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.asc");
        let text = "ncols 3\nnrows 1\nxllcorner -90.0128\nyllcorner 42.4872\ncellsize 0.0001\nnodata_value -9999\n0.25 -9999 3.75\n";
        fs::write(&p, text).unwrap();
        let r = read_raster(&p).unwrap();
        let q = dir.path().join("b.asc");
        write_raster(&r, &q).unwrap();
        assert_eq!(fs::read_to_string(&q).unwrap(), text);
    }

    #[test]
    fn window_is_aligned() {
        let r = Raster::new(
            LatLon::new(0.0, 0.0).unwrap(),
            1.0,
            4,
            4,
            -1.0,
            (0..16).map(f64::from).collect(),
        )
        .unwrap();
        let w = r
            .window(&GeoBox { lat_min: 1.0, lat_max: 3.0, lon_min: 1.0, lon_max: 2.0 })
            .unwrap();
        assert_eq!((w.n_rows(), w.n_cols()), (2, 1));
        assert_eq!(w.values(), &[5.0, 9.0]);
        assert_eq!(r.grid_offset(&w).unwrap(), (1, 1));
    }

    #[test]
    fn longitude_normalized() {
        assert_eq!(LatLon::new(0.0, 180.0).unwrap().lon, -180.0);
        assert_eq!(LatLon::new(0.0, 190.0).unwrap().lon, -170.0);
        assert!(LatLon::new(91.0, 0.0).is_err());
    }

    #[test]
    fn reference_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ref.jsonl");
        let recs = vec![
            ReferenceRecord {
                location: LatLon::new(42.5, -90.0).unwrap(),
                crop_name: "maize".into(),
                year: 2019,
                season_tag: None,
            },
            ReferenceRecord {
                location: LatLon::new(-12.0, 35.25).unwrap(),
                crop_name: "soybean".into(),
                year: 2020,
                season_tag: Some("long_rains".into()),
            },
        ];
        write_reference(&recs, &p).unwrap();
        assert_eq!(read_reference(&p).unwrap(), recs);
        fs::write(&p, "{\"lat\":1,\"lon\":2,\"crop\":\"\",\"year\":2019}\n").unwrap();
        assert!(read_reference(&p).is_err());
    }

    proptest! {
        #[test]
        fn pixel_center_inverts(rows in 1usize..50, cols in 1usize..50,
                                lat in -60.0f64..60.0, lon in -170.0f64..170.0,
                                cs in prop::sample::select(vec![0.0001, 0.001, 0.01, 0.5, 5.0]),
                                fr in 0.0f64..1.0, fc in 0.0f64..1.0) {
            let r = Raster::filled(LatLon::new(lat, lon).unwrap(), cs, rows, cols, -1.0, 0.0).unwrap();
            let i = ((rows as f64 * fr) as usize).min(rows - 1);
            let j = ((cols as f64 * fc) as usize).min(cols - 1);
            prop_assert_eq!(r.point_to_pixel(&r.pixel_center(i, j)), Some((i, j)));
        }
    }
}
