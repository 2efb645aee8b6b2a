//! Per cell-month optical models trained on lidar-derived labels, monthly
//! prediction with tall-if-any combination, buffered mosaicking and the
//! peak-GCVI quality layer.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{self, ForestModel, RfConfig};
use crate::gedi::GediShot;
use crate::grid::{month_in_season, month_window, GridCell};
use crate::harmonics::FeatureStack;
use crate::model::{DateStamp, GeoBox, HeightClass, Raster, CLASS_NODATA};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConfig {
    pub min_train_shots: usize,
    pub holdout_fraction: f64,
    /// Degrees added on every side of a cell for training and prediction.
    pub buffer: f64,
    pub gcvi_flag_threshold: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            min_train_shots: 50,
            holdout_fraction: 0.2,
            buffer: 0.5,
            gcvi_flag_threshold: 4.0,
        }
    }
}

impl CellConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config("holdout_fraction must be in (0, 1)".into()));
        }
        if !(self.buffer >= 0.0) {
            return Err(Error::Config("buffer must be non-negative".into()));
        }
        Ok(())
    }
}

/// Two-class training rows for one cell-month.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellTrainingSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<HeightClass>,
    pub shot_ids: Vec<u64>,
    pub dropped_tree: usize,
    pub dropped_invalid: usize,
}

impl CellTrainingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, class: HeightClass) -> usize {
        self.labels.iter().filter(|c| **c == class).count()
    }
}

/// Rows from classified shots dated in `[start, end)` inside `extent`. Each
/// row is the feature vector of the pixel containing the shot center.
pub fn build_training_set(
    extent: &GeoBox,
    dates: (DateStamp, DateStamp),
    shots: &[GediShot],
    features: &FeatureStack,
) -> Result<CellTrainingSet> {
    let mut set = CellTrainingSet::default();
    for s in shots {
        if s.date < dates.0 || s.date >= dates.1 || !extent.contains(&s.location) {
            continue;
        }
        match s.pred_class.ok_or(Error::Unclassified(s.id))? {
            HeightClass::Tree => set.dropped_tree += 1,
            class => match features.at_point(&s.location) {
                Some(f) => {
                    set.features.push(f.to_vec());
                    set.labels.push(class);
                    set.shot_ids.push(s.id);
                }
                None => set.dropped_invalid += 1,
            },
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum SkipReason {
    NoOptimalMonth,
    BelowTallGate { tall_fraction: f64 },
    TooFewShots { got: usize, need: usize },
    MissingClass { class: HeightClass },
}

pub fn check_trainable(set: &CellTrainingSet, config: &CellConfig) -> Option<SkipReason> {
    if set.len() < config.min_train_shots {
        return Some(SkipReason::TooFewShots {
            got: set.len(),
            need: config.min_train_shots,
        });
    }
    [HeightClass::Short, HeightClass::Tall]
        .into_iter()
        .find(|c| set.count(*c) == 0)
        .map(|class| SkipReason::MissingClass { class })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMonthModel {
    pub cell_id: u32,
    pub year: i32,
    pub month: u32,
    pub forest: ForestModel,
    pub heldout_accuracy: f64,
    pub n_train_shots: usize,
    pub n_test_shots: usize,
}

/// Seed tags for a cell-month; identical regardless of scheduling.
fn cell_tags(label: &str, cell_id: u32, year: i32, month: u32) -> [u64; 4] {
    [rng::tag(label), u64::from(cell_id), year as u64, u64::from(month)]
}

/// Fits the cell-month forest on a class-stratified shot split and scores it
/// on the held-out shots.
pub fn train_cell_month(
    set: &CellTrainingSet,
    cell_id: u32,
    year: i32,
    month: u32,
    rf: &RfConfig,
    config: &CellConfig,
) -> Result<CellMonthModel> {
    if let Some(reason) = check_trainable(set, &CellConfig { min_train_shots: 2, ..config.clone() }) {
        return Err(Error::Training(format!("cell {cell_id} {year}-{month:02}: {reason:?}")));
    }
    let mut rng = rng::stream(rf.seed, &cell_tags("cell-split", cell_id, year, month));
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in [HeightClass::Short, HeightClass::Tall] {
        let mut idx: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64 * config.holdout_fraction).round() as usize).min(idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let x: Vec<Vec<f64>> = train.iter().map(|&i| set.features[i].clone()).collect();
    let y: Vec<usize> = train.iter().map(|&i| set.labels[i].code() as usize).collect();
    let cfg = rf
        .clone()
        .with_seed(rng::derive_seed(rf.seed, &cell_tags("cell-forest", cell_id, year, month)));
    let model = forest::fit(&x, &y, &cfg)?;
    let mut correct = 0usize;
    for &i in &test {
        if model.predict_class(&set.features[i])?.0 == set.labels[i].code() as usize {
            correct += 1;
        }
    }
    let heldout_accuracy = if test.is_empty() {
        0.0
    } else {
        correct as f64 / test.len() as f64
    };
    Ok(CellMonthModel {
        cell_id,
        year,
        month,
        forest: model,
        heldout_accuracy,
        n_train_shots: train.len(),
        n_test_shots: test.len(),
    })
}

/// One line of the per cell-month report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMonthRecord {
    pub cell_id: u32,
    pub year: i32,
    pub month: Option<u32>,
    pub n_shots: usize,
    pub dropped_tree: usize,
    pub dropped_invalid: usize,
    pub heldout_accuracy: Option<f64>,
    pub skipped: Option<SkipReason>,
}

/// Trains every window month of every processed cell for one season.
/// Results are ordered by `(cell_id, month position)` whatever the thread count.
pub fn train_cells(
    cells: &[GridCell],
    year: i32,
    shots: &[GediShot],
    features: &FeatureStack,
    rf: &RfConfig,
    config: &CellConfig,
) -> Result<(Vec<CellMonthModel>, Vec<CellMonthRecord>)> {
    config.validate()?;
    let skip = |cell: &GridCell, reason| CellMonthRecord {
        cell_id: cell.cell_id,
        year,
        month: None,
        n_shots: 0,
        dropped_tree: 0,
        dropped_invalid: 0,
        heldout_accuracy: None,
        skipped: Some(reason),
    };
    let mut units = Vec::new();
    let mut records = Vec::new();
    for cell in cells {
        match (cell.optimal_month, cell.processed) {
            (None, _) => records.push(skip(cell, SkipReason::NoOptimalMonth)),
            (Some(_), false) => records.push(skip(
                cell,
                SkipReason::BelowTallGate {
                    tall_fraction: cell.tall_fraction.unwrap_or(0.0),
                },
            )),
            (Some(m), true) => {
                for month in month_window(m, cell.hemisphere)? {
                    units.push((cell, month));
                }
            }
        }
    }
    let results: Vec<(CellMonthRecord, Option<CellMonthModel>)> = units
        .par_iter()
        .map(|&(cell, month)| {
            let dates = month_in_season(year, month, cell.hemisphere)?;
            let extent = cell.bounds.buffered(config.buffer);
            let set = build_training_set(&extent, dates, shots, features)?;
            let mut rec = CellMonthRecord {
                cell_id: cell.cell_id,
                year,
                month: Some(month),
                n_shots: set.len(),
                dropped_tree: set.dropped_tree,
                dropped_invalid: set.dropped_invalid,
                heldout_accuracy: None,
                skipped: check_trainable(&set, config),
            };
            if rec.skipped.is_some() {
                return Ok((rec, None));
            }
            let model = train_cell_month(&set, cell.cell_id, year, month, rf, config)?;
            rec.heldout_accuracy = Some(model.heldout_accuracy);
            Ok((rec, Some(model)))
        })
        .collect::<Result<_>>()?;
    let mut models = Vec::new();
    for (rec, model) in results {
        records.push(rec);
        models.extend(model);
    }
    records.sort_by_key(|r| (r.cell_id, r.month.is_some()));
    Ok((models, records))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellPrediction {
    pub cell_id: u32,
    pub year: i32,
    /// Mean held-out accuracy over the months used.
    pub accuracy: f64,
    pub months: Vec<u32>,
    pub class: Raster,
    pub monthly: Vec<Raster>,
}

/// Classifies crop pixels inside `extent` with each month's model and
/// combines them: Tall if any month says Tall, else Short.
pub fn predict_cell(
    models: &[&CellMonthModel],
    features: &FeatureStack,
    crop_mask: &Raster,
    extent: &GeoBox,
) -> Result<CellPrediction> {
    let first = models
        .first()
        .ok_or_else(|| Error::Training("no cell-month models to predict with".into()))?;
    if models.iter().any(|m| m.cell_id != first.cell_id || m.year != first.year) {
        return Err(Error::Invalid("models belong to different cells or years".into()));
    }
    let geom = features
        .geometry()
        .window(extent)
        .ok_or_else(|| Error::Invalid(format!("cell {} does not overlap the feature grid", first.cell_id)))?;
    let (dr, dc) = crop_mask.grid_offset(&geom)?;
    let (nr, nc) = (geom.n_rows(), geom.n_cols());
    let (fr, fc) = features.geometry().grid_offset(&geom)?;

    let rows: Vec<Vec<(Option<Vec<bool>>, f64)>> = (0..nr)
        .into_par_iter()
        .map(|r| {
            (0..nc)
                .map(|c| {
                    let (mr, mc) = (r as i64 + dr, c as i64 + dc);
                    let on_crop = crop_mask.value_at(mr, mc) == Some(1.0);
                    let feats = features.at((r as i64 + fr) as usize, (c as i64 + fc) as usize);
                    match (on_crop, feats) {
                        (true, Some(x)) => {
                            let tall: Vec<bool> = models
                                .iter()
                                .map(|m| Ok(m.forest.predict_class(x)?.0 == HeightClass::Tall.code() as usize))
                                .collect::<Result<_>>()?;
                            let any = tall.iter().any(|t| *t);
                            Ok((Some(tall), if any { 1.0 } else { 0.0 }))
                        }
                        _ => Ok((None, CLASS_NODATA)),
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut monthly = vec![vec![CLASS_NODATA; nr * nc]; models.len()];
    let mut combined = Vec::with_capacity(nr * nc);
    for (i, (votes, v)) in rows.into_iter().flatten().enumerate() {
        if let Some(votes) = votes {
            for (k, t) in votes.into_iter().enumerate() {
                monthly[k][i] = if t { 1.0 } else { 0.0 };
            }
        }
        combined.push(v);
    }
    let accuracy = models.iter().map(|m| m.heldout_accuracy).sum::<f64>() / models.len() as f64;
    Ok(CellPrediction {
        cell_id: first.cell_id,
        year: first.year,
        accuracy,
        months: models.iter().map(|m| m.month).collect(),
        class: geom.like(CLASS_NODATA, combined)?,
        monthly: monthly
            .into_iter()
            .map(|v| geom.like(CLASS_NODATA, v))
            .collect::<Result<_>>()?,
    })
}

/// Higher accuracy first, then lower cell id.
fn priority(a: &CellPrediction, b: &CellPrediction) -> Ordering {
    b.accuracy
        .total_cmp(&a.accuracy)
        .then(a.cell_id.cmp(&b.cell_id))
        .then(a.year.cmp(&b.year))
}

/// Pastes cell predictions onto the grid of `template`. Where predictions
/// overlap, the cell with the higher accuracy wins; equal accuracies go to
/// the lower cell id.
pub fn mosaic(predictions: &[CellPrediction], template: &Raster) -> Result<Raster> {
    let mut order: Vec<(&CellPrediction, (i64, i64))> = predictions
        .iter()
        .map(|p| Ok((p, template.grid_offset(&p.class)?)))
        .collect::<Result<_>>()?;
    order.sort_by(|a, b| priority(a.0, b.0));
    let nc = template.n_cols();
    let values: Vec<f64> = (0..template.len())
        .into_par_iter()
        .map(|i| {
            let (r, c) = ((i / nc) as i64, (i % nc) as i64);
            order
                .iter()
                .find_map(|(p, (dr, dc))| p.class.value_at(r - dr, c - dc))
                .unwrap_or(CLASS_NODATA)
        })
        .collect();
    template.like(CLASS_NODATA, values)
}

/// 1 where `0 <= peak GCVI < threshold`, else 0; nodata where the peak is
/// unknown or, if a mask is given, off cropland.
pub fn quality_layer(peak_gcvi: &Raster, crop_mask: Option<&Raster>, threshold: f64) -> Result<Raster> {
    if let Some(m) = crop_mask {
        if m.grid_offset(peak_gcvi)? != (0, 0) || m.len() != peak_gcvi.len() {
            return Err(Error::Misaligned("crop mask and peak GCVI differ in grid".into()));
        }
    }
    let values = peak_gcvi
        .values()
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let off_crop = crop_mask.is_some_and(|m| m.values()[i] != 1.0);
            if peak_gcvi.is_nodata(g) || off_crop {
                CLASS_NODATA
            } else if (0.0..threshold).contains(&g) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    peak_gcvi.like(CLASS_NODATA, values)
}
