//! Lidar shot records, the shot CSV table, and the shot quality filters.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DateStamp, HeightClass, LatLon, Raster};

/// Relative-height percentiles carried by each shot, in column order.
pub const RH_PERCENTILES: [u32; 11] = [0, 5, 10, 15, 20, 25, 30, 85, 90, 95, 100];
pub const N_RH: usize = RH_PERCENTILES.len();
pub const RH95: usize = 9;
pub const RH100: usize = 10;

/// Meters per degree of latitude.
pub const METERS_PER_DEGREE: f64 = 111_320.0;

const BASE_COLUMNS: [&str; 9] = [
    "id",
    "lat",
    "lon",
    "date",
    "beam",
    "view_angle_rad",
    "slope_deg",
    "quality_flag",
    "degrade_flag",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GediShot {
    pub id: u64,
    pub location: LatLon,
    pub date: DateStamp,
    pub beam: u8,
    /// Heights in meters, ordered as [`RH_PERCENTILES`].
    pub rh: [f64; N_RH],
    pub view_angle: f64,
    pub slope: f64,
    pub quality_flag: u8,
    pub degrade_flag: u32,
    pub pred_class: Option<HeightClass>,
    pub confidence: Option<f64>,
}

impl GediShot {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Invalid(format!("shot {}: {m}", self.id)));
        if self.rh.iter().any(|v| !v.is_finite()) {
            return fail("non-finite RH value".into());
        }
        if self.rh[RH100] < self.rh[RH95] {
            return fail(format!("RH100 {} below RH95 {}", self.rh[RH100], self.rh[RH95]));
        }
        if !(self.view_angle > 0.0 && self.view_angle <= std::f64::consts::FRAC_PI_2) {
            return fail(format!("view angle {} outside (0, pi/2]", self.view_angle));
        }
        if self.beam > 7 {
            return fail(format!("beam {} outside 0..=7", self.beam));
        }
        if self.quality_flag > 1 {
            return fail(format!("quality flag {} is not 0/1", self.quality_flag));
        }
        if !self.slope.is_finite() || self.slope < 0.0 {
            return fail(format!("slope {} is not a non-negative number", self.slope));
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return fail(format!("confidence {c} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn rh100(&self) -> f64 {
        self.rh[RH100]
    }
}

/// Ordered shots with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShotTable {
    shots: Vec<GediShot>,
}

impl ShotTable {
    pub fn new(shots: Vec<GediShot>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(shots.len());
        for s in &shots {
            if !seen.insert(s.id) {
                return Err(Error::DuplicateShot(s.id));
            }
        }
        Ok(ShotTable { shots })
    }

    pub fn shots(&self) -> &[GediShot] {
        &self.shots
    }

    pub fn into_shots(self) -> Vec<GediShot> {
        self.shots
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, GediShot> {
        self.shots.iter()
    }

    fn from_filtered(shots: Vec<GediShot>) -> Self {
        ShotTable { shots }
    }
}

pub fn read_shot_table(path: impl AsRef<Path>) -> Result<ShotTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);

    let mut base = [0usize; BASE_COLUMNS.len()];
    for (slot, name) in base.iter_mut().zip(BASE_COLUMNS) {
        *slot = col(name).ok_or_else(|| Error::MissingColumn(name.into()))?;
    }
    let mut rh_cols = [0usize; N_RH];
    for (slot, p) in rh_cols.iter_mut().zip(RH_PERCENTILES) {
        let name = format!("rh{p}");
        *slot = col(&name).ok_or(Error::MissingColumn(name))?;
    }
    let class_col = col("pred_class");
    let conf_col = col("confidence");
    let known: HashSet<usize> = base
        .iter()
        .chain(&rh_cols)
        .copied()
        .chain(class_col)
        .chain(conf_col)
        .collect();
    for (i, h) in headers.iter().enumerate() {
        if !known.contains(&i) {
            log::warn!("{}: ignoring unknown column `{h}`", path.display());
        }
    }

    let mut shots = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let field = |i: usize| rec.get(i).unwrap_or("");
        fn num<T: std::str::FromStr>(s: &str, what: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("bad {what} `{s}`"))
        }
        let mut rh = [0.0; N_RH];
        for (v, &c) in rh.iter_mut().zip(&rh_cols) {
            *v = num(field(c), "rh").map_err(perr)?;
        }
        let pred_class = match class_col.map(field) {
            Some(s) if !s.is_empty() => Some(s.parse::<HeightClass>().map_err(|e| perr(e.to_string()))?),
            _ => None,
        };
        let confidence = match conf_col.map(field) {
            Some(s) if !s.is_empty() => Some(num(s, "confidence").map_err(perr)?),
            _ => None,
        };
        let lat: f64 = num(field(base[1]), "lat").map_err(perr)?;
        let lon: f64 = num(field(base[2]), "lon").map_err(perr)?;
        let shot = GediShot {
            id: num(field(base[0]), "id").map_err(perr)?,
            location: LatLon::new(lat, lon).map_err(|e| perr(e.to_string()))?,
            date: field(base[3]).parse().map_err(|e: Error| perr(e.to_string()))?,
            beam: num(field(base[4]), "beam").map_err(perr)?,
            view_angle: num(field(base[5]), "view_angle_rad").map_err(perr)?,
            slope: num(field(base[6]), "slope_deg").map_err(perr)?,
            quality_flag: num(field(base[7]), "quality_flag").map_err(perr)?,
            degrade_flag: num(field(base[8]), "degrade_flag").map_err(perr)?,
            rh,
            pred_class,
            confidence,
        };
        shot.validate().map_err(|e| perr(e.to_string()))?;
        shots.push(shot);
    }
    ShotTable::new(shots)
}

/// Writes the shot CSV. The `pred_class`/`confidence` columns are present
/// only when at least one shot carries a prediction.
pub fn write_shot_table(table: &ShotTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let classified = table.iter().any(|s| s.pred_class.is_some());
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(RH_PERCENTILES.iter().map(|p| format!("rh{p}")));
    if classified {
        header.push("pred_class".into());
        header.push("confidence".into());
    }
    w.write_record(&header)?;
    for s in table.iter() {
        let mut row = vec![
            s.id.to_string(),
            s.location.lat.to_string(),
            s.location.lon.to_string(),
            s.date.to_string(),
            s.beam.to_string(),
            s.view_angle.to_string(),
            s.slope.to_string(),
            s.quality_flag.to_string(),
            s.degrade_flag.to_string(),
        ];
        row.extend(s.rh.iter().map(|v| v.to_string()));
        if classified {
            row.push(s.pred_class.map(|c| c.name().to_string()).unwrap_or_default());
            row.push(s.confidence.map(|c| c.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AngleMode {
    /// Compare the mean angle of the shot's beam on the shot's day.
    #[default]
    BeamDayMean,
    /// Compare each shot's own angle.
    PerShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Radians; keep when the angle is at least this.
    pub min_view_angle: f64,
    /// Degrees; keep when slope is at most this.
    pub max_slope: f64,
    pub min_confidence: f64,
    pub require_quality: bool,
    pub require_zero_degrade: bool,
    pub angle_mode: AngleMode,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_view_angle: 1.5,
            max_slope: 5.0,
            min_confidence: 0.8,
            require_quality: true,
            require_zero_degrade: true,
            angle_mode: AngleMode::BeamDayMean,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&self.min_view_angle) {
            return Err(Error::Config(format!("min_view_angle {} outside [0, pi/2]", self.min_view_angle)));
        }
        if !(0.0..=90.0).contains(&self.max_slope) {
            return Err(Error::Config(format!("max_slope {} outside [0, 90]", self.max_slope)));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::Config(format!("min_confidence {} outside [0, 1]", self.min_confidence)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BeamDayAngle {
    pub mean: f64,
    pub count: usize,
}

/// Mean view angle per (beam, day).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BeamDayAngleTable {
    entries: BTreeMap<(u8, DateStamp), BeamDayAngle>,
}

impl BeamDayAngleTable {
    pub fn get(&self, beam: u8, date: DateStamp) -> Option<BeamDayAngle> {
        self.entries.get(&(beam, date)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(u8, DateStamp), &BeamDayAngle)> {
        self.entries.iter()
    }
}

pub fn beam_day_mean_view_angle<'a>(shots: impl IntoIterator<Item = &'a GediShot>) -> BeamDayAngleTable {
    // sum, count, min, max
    let mut acc: BTreeMap<(u8, DateStamp), (f64, usize, f64, f64)> = BTreeMap::new();
    for s in shots {
        let e = acc
            .entry((s.beam, s.date))
            .or_insert((0.0, 0, f64::INFINITY, f64::NEG_INFINITY));
        e.0 += s.view_angle;
        e.1 += 1;
        e.2 = e.2.min(s.view_angle);
        e.3 = e.3.max(s.view_angle);
    }
    let entries = acc
        .into_iter()
        .map(|(k, (sum, n, lo, hi))| {
            let mean = (sum / n as f64).clamp(lo, hi);
            (k, BeamDayAngle { mean, count: n })
        })
        .collect();
    BeamDayAngleTable { entries }
}

/// Shots removed by [`apply_quality_filters`], charged to the first failing test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DropCounts {
    pub quality: usize,
    pub degrade: usize,
    pub angle: usize,
    pub slope: usize,
}

impl DropCounts {
    pub fn total(&self) -> usize {
        self.quality + self.degrade + self.angle + self.slope
    }
}

pub fn apply_quality_filters(
    shots: &ShotTable,
    table: &BeamDayAngleTable,
    config: &FilterConfig,
) -> Result<(ShotTable, DropCounts)> {
    let mut drops = DropCounts::default();
    let mut kept = Vec::with_capacity(shots.len());
    for s in shots.iter() {
        let mean = table
            .get(s.beam, s.date)
            .ok_or_else(|| Error::MissingBeamDay {
                beam: s.beam,
                date: s.date.to_string(),
            })?
            .mean;
        let angle = match config.angle_mode {
            AngleMode::BeamDayMean => mean,
            AngleMode::PerShot => s.view_angle,
        };
        if config.require_quality && s.quality_flag != 1 {
            drops.quality += 1;
        } else if config.require_zero_degrade && s.degrade_flag != 0 {
            drops.degrade += 1;
        } else if angle < config.min_view_angle {
            drops.angle += 1;
        } else if s.slope > config.max_slope {
            drops.slope += 1;
        } else {
            kept.push(s.clone());
        }
    }
    Ok((ShotTable::from_filtered(kept), drops))
}

pub fn filter_confident(shots: &ShotTable, config: &FilterConfig) -> Result<ShotTable> {
    let mut kept = Vec::new();
    for s in shots.iter() {
        match (s.pred_class, s.confidence) {
            (Some(_), Some(c)) => {
                if c >= config.min_confidence {
                    kept.push(s.clone());
                }
            }
            _ => return Err(Error::Unclassified(s.id)),
        }
    }
    Ok(ShotTable::from_filtered(kept))
}

/// Keeps shots whose center falls on a cropland pixel of `mask`.
pub fn within_cropland(shots: &ShotTable, mask: &Raster) -> ShotTable {
    let kept = shots
        .iter()
        .filter(|s| {
            mask.point_to_pixel(&s.location)
                .and_then(|(r, c)| mask.value(r, c))
                .is_some_and(|v| v == 1.0)
        })
        .cloned()
        .collect();
    ShotTable::from_filtered(kept)
}

/// Terrain slope in degrees at a DEM pixel.
///
/// Uses the 3x3 neighborhood with 1-2-1 weights (Horn). At raster edges the
/// missing neighbor is replaced by the center pixel and the difference is
/// divided by the actual spacing, which keeps planar surfaces exact.
pub fn slope_at(dem: &Raster, row: usize, col: usize) -> Result<f64> {
    let (nr, nc) = (dem.n_rows(), dem.n_cols());
    let z = |r: usize, c: usize| -> Result<f64> {
        dem.value(r, c)
            .ok_or_else(|| Error::Invalid(format!("DEM nodata at ({r}, {c})")))
    };
    let lat = dem.pixel_center(row, col).lat;
    let dy = dem.cell_size() * METERS_PER_DEGREE;
    let dx = dy * lat.to_radians().cos();
    let rows = [row.saturating_sub(1), row, (row + 1).min(nr - 1)];
    let cols = [col.saturating_sub(1), col, (col + 1).min(nc - 1)];
    let weights = [1.0, 2.0, 1.0];

    let mut gx = 0.0;
    let (cl, cr) = (cols[0], cols[2]);
    if cr > cl {
        for (&r, w) in rows.iter().zip(weights) {
            gx += w * (z(r, cr)? - z(r, cl)?) / ((cr - cl) as f64 * dx);
        }
        gx /= 4.0;
    }
    let mut gy = 0.0;
    let (north, south) = (rows[0], rows[2]);
    if south > north {
        for (&c, w) in cols.iter().zip(weights) {
            gy += w * (z(north, c)? - z(south, c)?) / ((south - north) as f64 * dy);
        }
        gy /= 4.0;
    }
    Ok(gx.hypot(gy).atan().to_degrees())
}

/// Returns the shots with `slope` sampled from the DEM pixel under each shot.
pub fn sample_slope(shots: &ShotTable, dem: &Raster) -> Result<ShotTable> {
    let mut out = Vec::with_capacity(shots.len());
    for s in shots.iter() {
        let (r, c) = dem
            .point_to_pixel(&s.location)
            .ok_or(Error::OffRaster { id: s.id })?;
        let mut s = s.clone();
        s.slope = slope_at(dem, r, c)?;
        out.push(s);
    }
    Ok(ShotTable::from_filtered(out))
}
