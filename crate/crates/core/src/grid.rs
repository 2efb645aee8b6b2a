//! The 5-degree processing grid: cropland gating, monthly class histograms of
//! classified shots, optimal-month selection and season calendars.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gedi::GediShot;
use crate::harmonics::SeasonWindow;
use crate::model::{DateStamp, GeoBox, HeightClass, LatLon, Raster};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Degrees.
    pub cell_size: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub cropland_gate: f64,
    pub tall_gate: f64,
    pub min_month_shots: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            cell_size: 5.0,
            lat_min: -51.6,
            lat_max: 51.6,
            cropland_gate: 0.05,
            tall_gate: 0.04,
            min_month_shots: 20,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let per_circle = 360.0 / self.cell_size;
        if !(self.cell_size > 0.0) || (per_circle - per_circle.round()).abs() > 1e-9 {
            return Err(Error::Config(format!("cell_size {} does not divide 360", self.cell_size)));
        }
        for (name, g) in [("cropland_gate", self.cropland_gate), ("tall_gate", self.tall_gate)] {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1), got {g}")));
            }
        }
        if !(self.lat_min < self.lat_max && self.lat_min >= -90.0 && self.lat_max <= 90.0) {
            return Err(Error::Config("latitude coverage is empty".into()));
        }
        Ok(())
    }

    /// Grid indices `(lat_idx, lon_idx)` of the cell containing `p`.
    pub fn cell_index(&self, p: &LatLon) -> (i64, i64) {
        (
            (p.lat / self.cell_size).floor() as i64,
            (p.lon / self.cell_size).floor() as i64,
        )
    }

    pub fn cell_id(&self, lat_idx: i64, lon_idx: i64) -> u32 {
        let lat_off = (90.0 / self.cell_size).round() as i64;
        let lon_off = (180.0 / self.cell_size).round() as i64;
        let per_row = (360.0 / self.cell_size).round() as i64;
        ((lat_idx + lat_off) * per_row + lon_idx + lon_off) as u32
    }

    /// Cell bounds, clipped to the latitude coverage.
    pub fn cell_bounds(&self, lat_idx: i64, lon_idx: i64) -> GeoBox {
        let cs = self.cell_size;
        GeoBox {
            lat_min: (lat_idx as f64 * cs).max(self.lat_min),
            lat_max: ((lat_idx + 1) as f64 * cs).min(self.lat_max),
            lon_min: lon_idx as f64 * cs,
            lon_max: (lon_idx + 1) as f64 * cs,
        }
    }

    pub fn covers(&self, p: &LatLon) -> bool {
        p.lat >= self.lat_min && p.lat < self.lat_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hemisphere {
    North,
    South,
}

impl Hemisphere {
    /// Equatorial latitudes count as north.
    pub fn of_latitude(lat: f64) -> Hemisphere {
        if lat >= 0.0 {
            Hemisphere::North
        } else {
            Hemisphere::South
        }
    }

    /// Calendar months in season order.
    pub fn season_months(self) -> [u32; 12] {
        match self {
            Hemisphere::North => [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12],
            Hemisphere::South => [7, 8, 9, 10, 11, 12, 1, 2, 3, 4, 5, 6],
        }
    }
}

/// North: calendar year. South: July 1 of `year` to July 1 of `year + 1`.
pub fn season_date_range(year: i32, hemisphere: Hemisphere) -> Result<SeasonWindow> {
    let (start, end) = match hemisphere {
        Hemisphere::North => (DateStamp::new(year, 1, 1)?, DateStamp::new(year + 1, 1, 1)?),
        Hemisphere::South => (DateStamp::new(year, 7, 1)?, DateStamp::new(year + 1, 7, 1)?),
    };
    Ok(SeasonWindow { start, end })
}

/// The optimal month and its neighbours in season order. Neighbours that fall
/// outside the season are dropped, so windows at the season edge have two months.
pub fn month_window(optimal_month: u32, hemisphere: Hemisphere) -> Result<Vec<u32>> {
    let order = hemisphere.season_months();
    let i = order
        .iter()
        .position(|&m| m == optimal_month)
        .ok_or_else(|| Error::Invalid(format!("month {optimal_month} out of range")))?;
    Ok(order[i.saturating_sub(1)..(i + 2).min(12)].to_vec())
}

/// Calendar-month dates of `month` inside the season starting in `year`.
pub fn month_in_season(year: i32, month: u32, hemisphere: Hemisphere) -> Result<(DateStamp, DateStamp)> {
    let y = match hemisphere {
        Hemisphere::South if month < 7 => year + 1,
        _ => year,
    };
    let start = DateStamp::new(y, month, 1)?;
    let end = if month == 12 {
        DateStamp::new(y + 1, 1, 1)?
    } else {
        DateStamp::new(y, month + 1, 1)?
    };
    Ok((start, end))
}

/// Per calendar month, counts of shots classified Short, Tall and Tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MonthHistogram {
    pub counts: [[u64; 3]; 12],
}

impl MonthHistogram {
    pub fn add(&mut self, month: u32, class: HeightClass) {
        self.counts[(month - 1) as usize][class.code() as usize] += 1;
    }

    pub fn count(&self, month: u32, class: HeightClass) -> u64 {
        self.counts[(month - 1) as usize][class.code() as usize]
    }

    pub fn month_total(&self, month: u32) -> u64 {
        self.counts[(month - 1) as usize].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Tall shots over all classified shots, Tree included.
    pub fn tall_fraction(&self, month: u32) -> Option<f64> {
        let n = self.month_total(month);
        (n > 0).then(|| self.count(month, HeightClass::Tall) as f64 / n as f64)
    }

    pub fn scaled(&self, k: u64) -> MonthHistogram {
        let mut h = *self;
        h.counts.iter_mut().flatten().for_each(|c| *c *= k);
        h
    }
}

/// Histogram of classified shots inside `bounds`, pooled over years.
pub fn tall_fraction_by_month<'a>(
    bounds: &GeoBox,
    shots: impl IntoIterator<Item = &'a GediShot>,
) -> Result<MonthHistogram> {
    let mut h = MonthHistogram::default();
    for s in shots {
        if !bounds.contains(&s.location) {
            continue;
        }
        let class = s.pred_class.ok_or(Error::Unclassified(s.id))?;
        h.add(s.date.month(), class);
    }
    Ok(h)
}

/// Month with the highest tall fraction among months with at least
/// `min_shots` shots. Ties go to the month earliest in the season.
pub fn select_optimal_month(hist: &MonthHistogram, hemisphere: Hemisphere, min_shots: u64) -> Option<u32> {
    let mut best: Option<(u32, u64, u64)> = None;
    for m in hemisphere.season_months() {
        let n = hist.month_total(m);
        if n == 0 || n < min_shots {
            continue;
        }
        let t = hist.count(m, HeightClass::Tall);
        // t/n > bt/bn, compared exactly
        let better = match best {
            None => true,
            Some((_, bt, bn)) => u128::from(t) * u128::from(bn) > u128::from(bt) * u128::from(n),
        };
        if better {
            best = Some((m, t, n));
        }
    }
    best.map(|(m, _, _)| m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub cell_id: u32,
    pub bounds: GeoBox,
    pub hemisphere: Hemisphere,
    pub valid_pixels: u64,
    pub cropland_pixels: u64,
    pub cropland_fraction: f64,
    pub monthly_hist: MonthHistogram,
    pub optimal_month: Option<u32>,
    /// Tall fraction in the optimal month.
    pub tall_fraction: Option<f64>,
    /// Whether the cell passes the tall-fraction gate and gets cell models.
    pub processed: bool,
}

/// Cells whose cropland fraction exceeds the gate, ordered by `cell_id`.
pub fn build_grid(crop_mask: &Raster, spec: &GridSpec) -> Result<Vec<GridCell>> {
    spec.validate()?;
    let mut tally: BTreeMap<(i64, i64), (u64, u64)> = BTreeMap::new();
    for r in 0..crop_mask.n_rows() {
        for c in 0..crop_mask.n_cols() {
            let Some(v) = crop_mask.value(r, c) else { continue };
            if v != 0.0 && v != 1.0 {
                return Err(Error::Invalid(format!("crop mask value {v} at ({r}, {c}) is not 0 or 1")));
            }
            let p = crop_mask.pixel_center(r, c);
            if !spec.covers(&p) {
                continue;
            }
            let e = tally.entry(spec.cell_index(&p)).or_default();
            e.0 += 1;
            e.1 += (v == 1.0) as u64;
        }
    }
    let mut cells: Vec<GridCell> = tally
        .into_iter()
        .filter_map(|((li, lo), (valid, crop))| {
            let fraction = crop as f64 / valid as f64;
            (fraction > spec.cropland_gate).then(|| {
                let bounds = spec.cell_bounds(li, lo);
                GridCell {
                    cell_id: spec.cell_id(li, lo),
                    hemisphere: Hemisphere::of_latitude(bounds.center().lat),
                    bounds,
                    valid_pixels: valid,
                    cropland_pixels: crop,
                    cropland_fraction: fraction,
                    monthly_hist: MonthHistogram::default(),
                    optimal_month: None,
                    tall_fraction: None,
                    processed: false,
                }
            })
        })
        .collect();
    cells.sort_by_key(|c| c.cell_id);
    Ok(cells)
}

/// Fills histograms, optimal months and the tall gate for each cell.
pub fn assign_months(cells: &mut [GridCell], shots: &[GediShot], spec: &GridSpec) -> Result<()> {
    for cell in cells.iter_mut() {
        cell.monthly_hist = tall_fraction_by_month(&cell.bounds, shots)?;
        cell.optimal_month = select_optimal_month(&cell.monthly_hist, cell.hemisphere, spec.min_month_shots);
        cell.tall_fraction = cell.optimal_month.and_then(|m| cell.monthly_hist.tall_fraction(m));
        cell.processed = cell.tall_fraction.is_some_and(|f| f > spec.tall_gate);
    }
    Ok(())
}

pub fn write_grid(cells: &[GridCell], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for c in cells {
        serde_json::to_writer(&mut out, c)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<Vec<GridCell>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use HeightClass::{Short, Tall, Tree};

    fn shot(id: u64, lat: f64, lon: f64) -> GediShot {
        let mut s = crate::gedi::tests::shot(id, 1, 1, 1.6);
        s.location = LatLon::new(lat, lon).unwrap();
        s
    }

    fn mask(vals: Vec<f64>, lat: f64, lon: f64, cs: f64, n: usize) -> Raster {
        Raster::new(LatLon::new(lat, lon).unwrap(), cs, n, n, -1.0, vals).unwrap()
    }

    #[test]
    fn anchor_arithmetic() {
        let spec = GridSpec::default();
        let (li, lo) = spec.cell_index(&LatLon::new(42.5, -93.5).unwrap());
        let b = spec.cell_bounds(li, lo);
        assert_eq!((b.lat_min, b.lat_max, b.lon_min, b.lon_max), (40.0, 45.0, -95.0, -90.0));
        let top = spec.cell_bounds(10, 0);
        assert_eq!((top.lat_min, top.lat_max), (50.0, 51.6));
        assert_eq!(spec.cell_id(-18, -36), 0);
    }

    #[test]
    fn gating() {
        let m = mask(vec![1.0; 16], 41.0, -94.0, 0.5, 4);
        let cells = build_grid(&m, &GridSpec::default()).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].cropland_fraction, 1.0);
        let m = mask(vec![0.0; 16], 41.0, -94.0, 0.5, 4);
        assert!(build_grid(&m, &GridSpec::default()).unwrap().is_empty());
        let m = mask(vec![0.5; 16], 41.0, -94.0, 0.5, 4);
        assert!(build_grid(&m, &GridSpec::default()).is_err());
    }

    #[test]
    fn straddling_mask_splits() {
        // 4x4 pixels of 1 degree straddling lon -90 and lat 45
        let m = mask(vec![1.0; 16], 43.0, -92.0, 1.0, 4);
        let cells = build_grid(&m, &GridSpec::default()).unwrap();
        assert_eq!(cells.len(), 4);
        let total: u64 = cells.iter().map(|c| c.valid_pixels).sum();
        assert_eq!(total, 16);
    }

    #[test]
    fn histogram_counts() {
        let bounds = GeoBox { lat_min: 40.0, lat_max: 45.0, lon_min: -95.0, lon_max: -90.0 };
        let mut shots = Vec::new();
        for i in 0..20u64 {
            let mut s = shot(i, 42.0, -93.0);
            s.date = DateStamp::new(2019, 7, 10).unwrap();
            s.pred_class = Some(if i < 10 { Tall } else { Short });
            shots.push(s);
        }
        let mut outside = shot(99, 10.0, 10.0);
        outside.pred_class = Some(Tall);
        shots.push(outside);
        let h = tall_fraction_by_month(&bounds, &shots).unwrap();
        assert_eq!(h.tall_fraction(7), Some(0.5));
        assert_eq!(h.tall_fraction(8), None);
        assert_eq!(h.total(), 20);
    }

    #[test]
    fn tree_in_denominator() {
        // 12 shots in June: 3 Tall, 6 Short, 3 Tree -> 3/12
        let mut h = MonthHistogram::default();
        for (c, n) in [(Tall, 3), (Short, 6), (Tree, 3)] {
            (0..n).for_each(|_| h.add(6, c));
        }
        assert_eq!(h.tall_fraction(6), Some(0.25));
    }

    #[test]
    fn optimal_month_rules() {
        let mut h = MonthHistogram::default();
        for (m, t) in [(6, 5), (7, 10), (8, 15), (9, 2)] {
            (0..t).for_each(|_| h.add(m, Tall));
            (0..30 - t).for_each(|_| h.add(m, Short));
        }
        assert_eq!(select_optimal_month(&h, Hemisphere::North, 20), Some(8));
        assert_eq!(select_optimal_month(&MonthHistogram::default(), Hemisphere::North, 20), None);
        let mut tie = MonthHistogram::default();
        for m in [7, 8] {
            (0..10).for_each(|_| tie.add(m, Tall));
            (0..10).for_each(|_| tie.add(m, Short));
        }
        assert_eq!(select_optimal_month(&tie, Hemisphere::North, 20), Some(7));
        // a sparse month does not qualify
        let mut sparse = h;
        (0..5).for_each(|_| sparse.add(1, Tall));
        assert_eq!(select_optimal_month(&sparse, Hemisphere::North, 20), Some(8));
        // south season order puts December before January
        let mut s = MonthHistogram::default();
        for m in [12, 1] {
            (0..20).for_each(|_| s.add(m, Tall));
        }
        assert_eq!(select_optimal_month(&s, Hemisphere::South, 20), Some(12));
        assert_eq!(select_optimal_month(&s, Hemisphere::North, 20), Some(1));
    }

    #[test]
    fn windows() {
        assert_eq!(month_window(7, Hemisphere::North).unwrap(), vec![6, 7, 8]);
        assert_eq!(month_window(1, Hemisphere::North).unwrap(), vec![1, 2]);
        assert_eq!(month_window(12, Hemisphere::North).unwrap(), vec![11, 12]);
        assert_eq!(month_window(12, Hemisphere::South).unwrap(), vec![11, 12, 1]);
        assert_eq!(month_window(7, Hemisphere::South).unwrap(), vec![7, 8]);
        assert!(month_window(13, Hemisphere::North).is_err());
    }

    #[test]
    fn season_ranges() {
        let n = season_date_range(2020, Hemisphere::North).unwrap();
        assert_eq!((n.start.to_string(), n.end.to_string()), ("2020-01-01".into(), "2021-01-01".into()));
        assert_eq!(n.len_days(), 366);
        let s = season_date_range(2020, Hemisphere::South).unwrap();
        assert_eq!((s.start.to_string(), s.end.to_string()), ("2020-07-01".into(), "2021-07-01".into()));
        assert_eq!(s.len_days(), 365);
        let (a, b) = month_in_season(2020, 1, Hemisphere::South).unwrap();
        assert_eq!((a.to_string(), b.to_string()), ("2021-01-01".into(), "2021-02-01".into()));
    }

    #[test]
    fn grid_jsonl_round_trip() {
        let m = mask(vec![1.0; 16], 43.0, -92.0, 1.0, 4);
        let cells = build_grid(&m, &GridSpec::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("grid.jsonl");
        write_grid(&cells, &p).unwrap();
        assert_eq!(read_grid(&p).unwrap(), cells);
    }

    proptest! {
        #[test]
        fn optimal_month_scale_invariant(counts in prop::collection::vec((0u64..40, 0u64..40, 0u64..5), 12), k in 1u64..7) {
            let mut h = MonthHistogram::default();
            for (i, (s, t, tr)) in counts.iter().enumerate() {
                h.counts[i] = [*s, *t, *tr];
            }
            // thresholds scale with the counts
            prop_assert_eq!(
                select_optimal_month(&h, Hemisphere::North, 20),
                select_optimal_month(&h.scaled(k), Hemisphere::North, 20 * k)
            );
        }

        #[test]
        fn every_pixel_in_one_cell(vals in prop::collection::vec(0u8..2, 36), lat in -60.0f64..55.0, lon in -100.0f64..-80.0) {
            let m = mask(vals.iter().map(|&v| f64::from(v)).collect(), lat, lon, 1.7, 6);
            let spec = GridSpec { cropland_gate: 1e-9, ..GridSpec::default() };
            let cells = build_grid(&m, &spec).unwrap();
            let mut covered = 0;
            for r in 0..6 {
                for c in 0..6 {
                    let p = m.pixel_center(r, c);
                    let n = cells.iter().filter(|cell| cell.bounds.contains(&p)).count();
                    if m.get(r, c) == 1.0 && spec.covers(&p) {
                        prop_assert_eq!(n, 1);
                        covered += 1;
                    }
                }
            }
            let crop: u64 = cells.iter().map(|c| c.cropland_pixels).sum();
            prop_assert_eq!(crop, covered);
        }
    }
}
