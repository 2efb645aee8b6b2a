//! The three-class shot height model: label generation, spatially blocked
//! train/test split, training and shot classification.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::TallCropSet;
use crate::forest::{self, ForestModel, RfConfig};
use crate::gedi::{GediShot, ShotTable, N_RH};
use crate::model::{HeightClass, LatLon, Raster};
use crate::rng;

/// Canopy height above which a shot is labelled as trees, in meters.
pub const TREE_RH100_M: f64 = 10.0;

pub fn assign_label(rh100: f64, crop: &str, tall: &TallCropSet) -> HeightClass {
    if rh100 > TREE_RH100_M {
        HeightClass::Tree
    } else if tall.contains(crop) {
        HeightClass::Tall
    } else {
        HeightClass::Short
    }
}

/// Index of the `block_size`-degree lat/lon bin containing `p`.
pub fn block_id(p: &LatLon, block_size: f64) -> i64 {
    let per_row = (360.0 / block_size).ceil() as i64;
    let row = ((p.lat + 90.0) / block_size).floor() as i64;
    let col = ((p.lon + 180.0) / block_size).floor() as i64;
    row * per_row + col
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    /// Degrees.
    pub block_size: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            block_size: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_blocks: Vec<i64>,
    pub test_blocks: Vec<i64>,
}

/// Assigns whole blocks to train or test.
///
/// Blocks are visited in a seeded random order and added to the training side
/// until it holds at least `train_fraction` of the rows; the remainder is test.
/// If every block ends up in training, the last one is moved to test.
pub fn split_blocks(block_ids: &[i64], spec: &SplitSpec) -> Result<BlockSplit> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!("train_fraction {} outside (0, 1)", spec.train_fraction)));
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for b in block_ids {
        *counts.entry(*b).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::Training(format!(
            "need at least two spatial blocks to split, found {}",
            counts.len()
        )));
    }
    let mut blocks: Vec<i64> = counts.keys().copied().collect();
    blocks.shuffle(&mut rng::stream(spec.seed, &[rng::tag("block-split")]));

    let target = spec.train_fraction * block_ids.len() as f64;
    let mut cum = 0usize;
    let mut n_train = 0;
    for b in &blocks {
        cum += counts[b];
        n_train += 1;
        if cum as f64 >= target - 1e-9 {
            break;
        }
    }
    if n_train == blocks.len() {
        n_train -= 1;
    }
    let mut train_blocks = blocks[..n_train].to_vec();
    let mut test_blocks = blocks[n_train..].to_vec();
    train_blocks.sort_unstable();
    test_blocks.sort_unstable();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, b) in block_ids.iter().enumerate() {
        if train_blocks.binary_search(b).is_ok() {
            train.push(i);
        } else {
            test.push(i);
        }
    }
    Ok(BlockSplit {
        train,
        test,
        train_blocks,
        test_blocks,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeightTrainingSet {
    /// RH metrics in the fixed shot column order.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<HeightClass>,
    pub block_id: Vec<i64>,
    pub region_tag: Vec<String>,
}

impl HeightTrainingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, rh: &[f64; N_RH], label: HeightClass, block: i64, region: &str) {
        self.features.push(rh.to_vec());
        self.labels.push(label);
        self.block_id.push(block);
        self.region_tag.push(region.to_string());
    }

    pub fn subset(&self, idx: &[usize]) -> HeightTrainingSet {
        HeightTrainingSet {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            block_id: idx.iter().map(|&i| self.block_id[i]).collect(),
            region_tag: idx.iter().map(|&i| self.region_tag[i].clone()).collect(),
        }
    }

    pub fn extend(&mut self, other: HeightTrainingSet) {
        self.features.extend(other.features);
        self.labels.extend(other.labels);
        self.block_id.extend(other.block_id);
        self.region_tag.extend(other.region_tag);
    }
}

pub fn spatial_block_split(
    set: &HeightTrainingSet,
    spec: &SplitSpec,
) -> Result<(HeightTrainingSet, HeightTrainingSet)> {
    let split = split_blocks(&set.block_id, spec)?;
    Ok((set.subset(&split.train), set.subset(&split.test)))
}

/// How a shot picks up its reference crop label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ReferenceSampling {
    /// Pixel containing the shot center.
    #[default]
    Center,
    /// Most common label among pixels whose centers lie within `radius_px`
    /// of the shot center; ties go to the lowest crop id.
    FootprintMajority { radius_px: f64 },
}

/// Crop label under a shot, as an index into the crop list.
pub fn reference_crop(labels: &Raster, p: &LatLon, sampling: ReferenceSampling) -> Option<usize> {
    let (row, col) = labels.point_to_pixel(p)?;
    let as_id = |v: f64| (v >= 0.0).then_some(v as usize);
    match sampling {
        ReferenceSampling::Center => labels.value(row, col).and_then(as_id),
        ReferenceSampling::FootprintMajority { radius_px } => {
            let reach = radius_px.ceil() as i64;
            let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
            let fr = (labels.top() - p.lat) / labels.cell_size();
            let fc = (p.lon - labels.origin().lon) / labels.cell_size();
            for dr in -reach..=reach {
                for dc in -reach..=reach {
                    let (r, c) = (row as i64 + dr, col as i64 + dc);
                    if r < 0 || c < 0 || r >= labels.n_rows() as i64 || c >= labels.n_cols() as i64 {
                        continue;
                    }
                    let dist = ((r as f64 + 0.5 - fr).powi(2) + (c as f64 + 0.5 - fc).powi(2)).sqrt();
                    if dist > radius_px {
                        continue;
                    }
                    if let Some(id) = labels.value(r as usize, c as usize).and_then(as_id) {
                        *votes.entry(id).or_default() += 1;
                    }
                }
            }
            let max = votes.values().copied().max()?;
            votes.into_iter().find(|(_, v)| *v == max).map(|(k, _)| k)
        }
    }
}

/// Labels shots from a crop-id raster. Shots on nodata or unknown ids are skipped.
pub fn label_shots(
    shots: &ShotTable,
    labels: &Raster,
    crop_names: &[String],
    tall: &TallCropSet,
    sampling: ReferenceSampling,
    block_size: f64,
    region: &str,
) -> HeightTrainingSet {
    let mut set = HeightTrainingSet::default();
    for s in shots.iter() {
        let Some(name) = reference_crop(labels, &s.location, sampling).and_then(|id| crop_names.get(id)) else {
            continue;
        };
        let label = assign_label(s.rh100(), name, tall);
        set.push(&s.rh, label, block_id(&s.location, block_size), region);
    }
    set
}

pub fn train_height_model(train: &HeightTrainingSet, config: &RfConfig) -> Result<ForestModel> {
    for class in HeightClass::ALL {
        if !train.labels.contains(&class) {
            return Err(Error::Training(format!("class `{class}` missing from height training data")));
        }
    }
    let y: Vec<usize> = train.labels.iter().map(|c| c.code() as usize).collect();
    forest::fit(&train.features, &y, config)
}

fn class_of(model: &ForestModel, x: &[f64]) -> Result<(HeightClass, f64)> {
    let (code, conf) = model.predict_class(x)?;
    let class = HeightClass::from_code(code as i64)
        .ok_or_else(|| Error::ModelFormat(format!("height model has unknown class {code}")))?;
    Ok((class, conf))
}

/// Annotates every shot with the predicted class and its vote fraction.
pub fn classify_shots(model: &ForestModel, shots: &ShotTable) -> Result<ShotTable> {
    if model.n_features != N_RH {
        return Err(Error::Dimension {
            expected: N_RH,
            got: model.n_features,
        });
    }
    let out: Vec<GediShot> = shots
        .shots()
        .par_iter()
        .map(|s| {
            let (class, conf) = class_of(model, &s.rh)?;
            let mut s = s.clone();
            s.pred_class = Some(class);
            s.confidence = Some(conf);
            Ok(s)
        })
        .collect::<Result<_>>()?;
    ShotTable::new(out)
}

pub fn predict_set(model: &ForestModel, set: &HeightTrainingSet) -> Result<Vec<HeightClass>> {
    set.features
        .par_iter()
        .map(|x| class_of(model, x).map(|(c, _)| c))
        .collect()
}
