//! Map evaluation: tall/short binarization, confusion counts and scores, the
//! locally trained benchmark, coarse aggregation and correlation, and recall
//! by peak-GCVI bin.
//!
//! Scores whose denominator is zero are reported as `None` (`null` in JSON)
//! rather than 0.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{self, RfConfig};
use crate::harmonics::FeatureStack;
use crate::height::{block_id, split_blocks, SplitSpec};
use crate::model::{HeightClass, LatLon, Raster, ReferenceRecord, VALUE_NODATA};
use crate::rng;

/// Crop names mapped to the tall class. Names are compared lowercase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TallCropSet(BTreeSet<String>);

impl TallCropSet {
    pub fn new<I: IntoIterator<Item = S>, S: AsRef<str>>(names: I) -> Result<Self> {
        let set: BTreeSet<String> = names
            .into_iter()
            .map(|s| s.as_ref().trim().to_lowercase())
            .filter(|s| !s.is_empty())
            .collect();
        if set.is_empty() {
            return Err(Error::Config("tall crop set is empty".into()));
        }
        Ok(TallCropSet(set))
    }

    pub fn contains(&self, crop: &str) -> bool {
        self.0.contains(&crop.trim().to_lowercase())
    }
}

impl Default for TallCropSet {
    fn default() -> Self {
        TallCropSet::new(["maize", "sugarcane"]).expect("non-empty")
    }
}

impl TryFrom<Vec<String>> for TallCropSet {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        TallCropSet::new(v)
    }
}

impl From<TallCropSet> for Vec<String> {
    fn from(s: TallCropSet) -> Self {
        s.0.into_iter().collect()
    }
}

pub fn binarize(crop: &str, tall: &TallCropSet) -> HeightClass {
    if tall.contains(crop) {
        HeightClass::Tall
    } else {
        HeightClass::Short
    }
}

/// The `k` most frequent crop names; equal counts are ordered by name.
pub fn top_k_crops(records: &[ReferenceRecord], k: usize) -> Vec<String> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for r in records {
        *counts.entry(r.crop_name.trim().to_lowercase()).or_default() += 1;
    }
    let mut v: Vec<(String, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().take(k).map(|(name, _)| name).collect()
}

/// Two-class confusion counts with Tall as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, pred: HeightClass, truth: HeightClass) {
        match (pred == HeightClass::Tall, truth == HeightClass::Tall) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    /// Same counts with Short as the positive class.
    pub fn swapped(&self) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

pub fn confusion(pred: &[HeightClass], truth: &[HeightClass]) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in pred.iter().zip(truth) {
        cm.add(*p, *t);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: Option<f64>,
    pub f1_short: Option<f64>,
    pub f1_tall: Option<f64>,
    pub precision_short: Option<f64>,
    pub precision_tall: Option<f64>,
    pub recall_short: Option<f64>,
    pub recall_tall: Option<f64>,
    pub kappa: Option<f64>,
}

fn ratio(num: u128, den: u128) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> EvalMetrics {
    let (tp, fp, tn, fn_) = (
        u128::from(cm.tp),
        u128::from(cm.fp),
        u128::from(cm.tn),
        u128::from(cm.fn_),
    );
    let n = tp + fp + tn + fn_;
    // F1 = 2PR/(P+R) reduces to 2TP/(2TP+FP+FN) whenever P and R are defined.
    let f1 = |tp: u128, fp: u128, fn_: u128| {
        (tp + fp > 0 && tp + fn_ > 0)
            .then(|| ratio(2 * tp, 2 * tp + fp + fn_))
            .flatten()
    };
    // kappa = (Po - Pe) / (1 - Pe) with Po = (tp+tn)/n and
    // Pe = [(tp+fp)(tp+fn) + (fn+tn)(fp+tn)] / n^2, scaled by n^2.
    let chance = (tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn);
    let kappa = if n > 0 && n * n > chance {
        let num = (n * (tp + tn)) as i128 - chance as i128;
        Some(num as f64 / (n * n - chance) as f64)
    } else {
        None
    };
    EvalMetrics {
        accuracy: ratio(tp + tn, n),
        f1_short: f1(tn, fn_, fp),
        f1_tall: f1(tp, fp, fn_),
        precision_short: ratio(tn, tn + fn_),
        precision_tall: ratio(tp, tp + fp),
        recall_short: ratio(tn, tn + fp),
        recall_tall: ratio(tp, tp + fn_),
        kappa,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEvaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: EvalMetrics,
    pub crops: Vec<String>,
    pub n_points: usize,
    pub dropped_not_top_k: usize,
    pub dropped_outside: usize,
    pub dropped_nodata: usize,
}

/// Compares a class raster against point labels restricted to the `k` most
/// common crops. Each point is scored at the pixel containing it.
pub fn evaluate_map(
    prediction: &Raster,
    records: &[ReferenceRecord],
    tall: &TallCropSet,
    k: usize,
) -> Result<MapEvaluation> {
    let crops = top_k_crops(records, k);
    let mut cm = ConfusionMatrix::default();
    let (mut not_top, mut outside, mut nodata) = (0, 0, 0);
    for r in records {
        if !crops.contains(&r.crop_name.trim().to_lowercase()) {
            not_top += 1;
            continue;
        }
        let Some((row, col)) = prediction.point_to_pixel(&r.location) else {
            outside += 1;
            continue;
        };
        let pred = prediction
            .value(row, col)
            .and_then(|v| HeightClass::from_code(v as i64))
            .filter(|c| *c != HeightClass::Tree);
        match pred {
            Some(p) => cm.add(p, binarize(&r.crop_name, tall)),
            None => nodata += 1,
        }
    }
    if cm.total() == 0 {
        return Err(Error::Undefined("no reference point falls on a classified pixel".into()));
    }
    Ok(MapEvaluation {
        confusion: cm,
        metrics: metrics(&cm),
        crops,
        n_points: cm.total() as usize,
        dropped_not_top_k: not_top,
        dropped_outside: outside,
        dropped_nodata: nodata,
    })
}

/// Pixel-by-pixel comparison of two class rasters on the same grid.
pub fn compare_rasters(prediction: &Raster, truth: &Raster) -> Result<ConfusionMatrix> {
    if prediction.grid_offset(truth)? != (0, 0)
        || prediction.n_rows() != truth.n_rows()
        || prediction.n_cols() != truth.n_cols()
    {
        return Err(Error::Misaligned("prediction and truth cover different grids".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in prediction.values().iter().zip(truth.values()) {
        if prediction.is_nodata(*p) || truth.is_nodata(*t) {
            continue;
        }
        if let (Some(p), Some(t)) = (HeightClass::from_code(*p as i64), HeightClass::from_code(*t as i64)) {
            cm.add(p, t);
        }
    }
    Ok(cm)
}

/// Per-repeat and mean scores of the locally trained benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub repeats: Vec<EvalMetrics>,
    pub confusions: Vec<ConfusionMatrix>,
    pub mean: EvalMetrics,
}

fn mean_metrics(all: &[EvalMetrics]) -> EvalMetrics {
    let avg = |f: fn(&EvalMetrics) -> Option<f64>| -> Option<f64> {
        let vals: Option<Vec<f64>> = all.iter().map(f).collect();
        vals.filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    EvalMetrics {
        accuracy: avg(|m| m.accuracy),
        f1_short: avg(|m| m.f1_short),
        f1_tall: avg(|m| m.f1_tall),
        precision_short: avg(|m| m.precision_short),
        precision_tall: avg(|m| m.precision_tall),
        recall_short: avg(|m| m.recall_short),
        recall_tall: avg(|m| m.recall_tall),
        kappa: avg(|m| m.kappa),
    }
}

/// Trains a two-class forest directly on reference labels at reference
/// locations, using repeated spatially blocked splits. Repeat `r` uses split
/// seed and forest seed derived from `(seed, r)`.
pub fn s2_local_benchmark(
    records: &[ReferenceRecord],
    features: &FeatureStack,
    tall: &TallCropSet,
    k: usize,
    rf: &RfConfig,
    split: &SplitSpec,
    n_repeats: usize,
) -> Result<BenchmarkResult> {
    let crops = top_k_crops(records, k);
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut blocks = Vec::new();
    for r in records {
        if !crops.contains(&r.crop_name.trim().to_lowercase()) {
            continue;
        }
        if let Some(f) = features.at_point(&r.location) {
            x.push(f.to_vec());
            y.push(binarize(&r.crop_name, tall));
            blocks.push(block_id(&r.location, split.block_size));
        }
    }
    if n_repeats == 0 {
        return Err(Error::Config("n_repeats must be at least 1".into()));
    }
    let mut repeats = Vec::with_capacity(n_repeats);
    let mut confusions = Vec::with_capacity(n_repeats);
    for r in 0..n_repeats as u64 {
        let spec = SplitSpec {
            seed: rng::derive_seed(split.seed, &[rng::tag("s2-local"), r]),
            ..split.clone()
        };
        let s = split_blocks(&blocks, &spec)?;
        let (tx, ty): (Vec<Vec<f64>>, Vec<usize>) = s
            .train
            .iter()
            .map(|&i| (x[i].clone(), y[i].code() as usize))
            .unzip();
        let cfg = rf.clone().with_seed(rng::derive_seed(rf.seed, &[rng::tag("s2-local"), r]));
        let model = forest::fit(&tx, &ty, &cfg)?;
        let preds: Vec<HeightClass> = s
            .test
            .par_iter()
            .map(|&i| {
                model
                    .predict_class(&x[i])
                    .map(|(c, _)| HeightClass::from_code(c as i64).unwrap_or(HeightClass::Short))
            })
            .collect::<Result<_>>()?;
        let truth: Vec<HeightClass> = s.test.iter().map(|&i| y[i]).collect();
        let cm = confusion(&preds, &truth)?;
        confusions.push(cm);
        repeats.push(metrics(&cm));
    }
    let mean = mean_metrics(&repeats);
    Ok(BenchmarkResult {
        repeats,
        confusions,
        mean,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedGrid {
    /// Tall fraction per coarse cell; [`VALUE_NODATA`] where no crop pixel.
    pub fraction: Raster,
    pub tall_pixels: Vec<u64>,
    pub crop_pixels: Vec<u64>,
}

/// Fraction of Tall among Tall+Short pixels per coarse cell. The coarse grid
/// shares the fine raster's north-west corner.
pub fn aggregate_tall(prediction: &Raster, coarse_cell_size: f64) -> Result<AggregatedGrid> {
    let ratio = coarse_cell_size / prediction.cell_size();
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-6 {
        return Err(Error::Invalid(format!(
            "coarse cell size {coarse_cell_size} is not an integer multiple of {}",
            prediction.cell_size()
        )));
    }
    let f = factor as usize;
    let (nr, nc) = (prediction.n_rows().div_ceil(f), prediction.n_cols().div_ceil(f));
    let mut tall = vec![0u64; nr * nc];
    let mut crop = vec![0u64; nr * nc];
    for r in 0..prediction.n_rows() {
        for c in 0..prediction.n_cols() {
            let i = (r / f) * nc + c / f;
            match prediction.value(r, c).and_then(|v| HeightClass::from_code(v as i64)) {
                Some(HeightClass::Tall) => {
                    tall[i] += 1;
                    crop[i] += 1;
                }
                Some(HeightClass::Short) => crop[i] += 1,
                _ => {}
            }
        }
    }
    let values = tall
        .iter()
        .zip(&crop)
        .map(|(&t, &n)| if n == 0 { VALUE_NODATA } else { t as f64 / n as f64 })
        .collect();
    let origin = LatLon::new(prediction.top() - nr as f64 * coarse_cell_size, prediction.origin().lon)?;
    Ok(AggregatedGrid {
        fraction: Raster::new(origin, coarse_cell_size, nr, nc, VALUE_NODATA, values)?,
        tall_pixels: tall,
        crop_pixels: crop,
    })
}

/// Pearson correlation over cells valid in both grids.
pub fn spatial_correlation(a: &Raster, b: &Raster) -> Result<f64> {
    if a.grid_offset(b)? != (0, 0) || a.n_rows() != b.n_rows() || a.n_cols() != b.n_cols() {
        return Err(Error::Misaligned("grids differ".into()));
    }
    let pairs: Vec<(f64, f64)> = a
        .values()
        .iter()
        .zip(b.values())
        .filter(|(x, y)| !a.is_nodata(**x) && !b.is_nodata(**y))
        .map(|(x, y)| (*x, *y))
        .collect();
    pearson(&pairs)
}

pub fn pearson(pairs: &[(f64, f64)]) -> Result<f64> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::Undefined(format!("correlation needs 2 co-valid cells, got {n}")));
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRecall {
    /// Exclusive lower edge; `None` for minus infinity.
    pub lower: Option<f64>,
    /// Inclusive upper edge; `None` for plus infinity.
    pub upper: Option<f64>,
    pub n_tall: usize,
    pub n_hit: usize,
    pub recall: Option<f64>,
}

/// Default bins `(-inf, 2], (2, 3], (3, 4], (4, inf)`.
pub const DEFAULT_GCVI_EDGES: [f64; 3] = [2.0, 3.0, 4.0];

/// Tall recall in bins of peak GCVI. `samples` holds `(predicted, reference,
/// peak_gcvi)`; only reference-Tall samples enter the recall. `edges` are the
/// interior bin edges, ascending.
pub fn recall_by_gcvi_bin(samples: &[(HeightClass, HeightClass, f64)], edges: &[f64]) -> Vec<BinRecall> {
    let n_bins = edges.len() + 1;
    let mut tall = vec![0usize; n_bins];
    let mut hit = vec![0usize; n_bins];
    for &(pred, truth, g) in samples {
        if truth != HeightClass::Tall {
            continue;
        }
        let bin = edges.iter().take_while(|&&e| g > e).count();
        tall[bin] += 1;
        if pred == HeightClass::Tall {
            hit[bin] += 1;
        }
    }
    (0..n_bins)
        .map(|b| BinRecall {
            lower: b.checked_sub(1).map(|i| edges[i]),
            upper: edges.get(b).copied(),
            n_tall: tall[b],
            n_hit: hit[b],
            recall: (tall[b] > 0).then(|| hit[b] as f64 / tall[b] as f64),
        })
        .collect()
}

/// Pixel version of [`recall_by_gcvi_bin`] over three aligned rasters.
pub fn recall_by_gcvi_raster(
    prediction: &Raster,
    truth: &Raster,
    peak_gcvi: &Raster,
    edges: &[f64],
) -> Result<Vec<BinRecall>> {
    for r in [truth, peak_gcvi] {
        if prediction.grid_offset(r)? != (0, 0) || prediction.len() != r.len() {
            return Err(Error::Misaligned("recall inputs differ in grid".into()));
        }
    }
    let mut samples = Vec::new();
    for i in 0..prediction.len() {
        let (p, t, g) = (prediction.values()[i], truth.values()[i], peak_gcvi.values()[i]);
        if prediction.is_nodata(p) || truth.is_nodata(t) || peak_gcvi.is_nodata(g) {
            continue;
        }
        if let (Some(p), Some(t)) = (HeightClass::from_code(p as i64), HeightClass::from_code(t as i64)) {
            samples.push((p, t, g));
        }
    }
    Ok(recall_by_gcvi_bin(&samples, edges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use HeightClass::{Short as S, Tall as T};

    fn rec(crop: &str) -> ReferenceRecord {
        ReferenceRecord {
            location: LatLon::new(0.5, 0.5).unwrap(),
            crop_name: crop.into(),
            year: 2019,
            season_tag: None,
        }
    }

    #[test]
    fn top_k_ordering() {
        let recs: Vec<_> = ["b", "a", "c"].iter().map(|c| rec(c)).collect();
        assert_eq!(top_k_crops(&recs, 10), vec!["a", "b", "c"]);
        let mut recs = Vec::new();
        for (c, n) in [("wheat", 2), ("maize", 5), ("rice", 3), ("oats", 1)] {
            recs.extend((0..n).map(|_| rec(c)));
        }
        assert_eq!(top_k_crops(&recs, 3), vec!["maize", "rice", "wheat"]);
    }

    #[test]
    fn binarize_names() {
        let t = TallCropSet::default();
        assert_eq!(binarize("maize", &t), T);
        assert_eq!(binarize("soybean", &t), S);
        assert_eq!(binarize("MAIZE", &t), T);
        assert!(TallCropSet::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn confusion_fixture() {
        assert_eq!(confusion(&[T; 4], &[T; 4]).unwrap(), ConfusionMatrix { tp: 4, ..Default::default() });
        assert_eq!(confusion(&[S; 3], &[T; 3]).unwrap(), ConfusionMatrix { fn_: 3, ..Default::default() });
        // counted by hand: tp at 0,3; fp at 1,6; tn at 2,5,7; fn at 4
        let pred = [T, T, S, T, S, S, T, S];
        let truth = [T, S, S, T, T, S, S, S];
        assert_eq!(
            confusion(&pred, &truth).unwrap(),
            ConfusionMatrix { tp: 2, fp: 2, tn: 3, fn_: 1 }
        );
        assert!(confusion(&[T], &[T, S]).is_err());
    }

    #[test]
    fn forty_forty_ten_ten() {
        let m = metrics(&ConfusionMatrix { tp: 40, tn: 40, fp: 10, fn_: 10 });
        assert_eq!(m.accuracy, Some(0.8));
        assert_eq!(m.kappa, Some(0.6));
        assert_eq!(m.precision_tall, Some(0.8));
        assert_eq!(m.f1_tall, Some(0.8));
    }

    #[test]
    fn precision_and_undefined_markers() {
        let m = metrics(&ConfusionMatrix { tp: 8, fp: 2, tn: 0, fn_: 0 });
        assert_eq!(m.precision_tall, Some(0.8));
        assert_eq!(m.precision_short, None);
        assert_eq!(m.recall_short, Some(0.0));
        assert_eq!(m.kappa, Some(0.0));
        let only_tall = metrics(&ConfusionMatrix { tp: 5, ..Default::default() });
        assert_eq!(only_tall.kappa, None);
        assert_eq!(metrics(&ConfusionMatrix::default()).accuracy, None);
    }

    #[test]
    fn aggregation_cases() {
        let mk = |vals: Vec<f64>| Raster::new(LatLon::new(0.0, 0.0).unwrap(), 1.0, 2, 2, -1.0, vals).unwrap();
        let g = aggregate_tall(&mk(vec![1.0; 4]), 2.0).unwrap();
        assert_eq!(g.fraction.values(), &[1.0]);
        let g = aggregate_tall(&mk(vec![1.0, 0.0, 0.0, 1.0]), 2.0).unwrap();
        assert_eq!(g.fraction.values(), &[0.5]);
        let g = aggregate_tall(&mk(vec![-1.0; 4]), 2.0).unwrap();
        assert_eq!(g.fraction.values(), &[VALUE_NODATA]);
        assert!(aggregate_tall(&mk(vec![1.0; 4]), 1.5).is_err());
    }

    #[test]
    fn correlation_cases() {
        let vals: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let mean = vals.iter().sum::<f64>() / 50.0;
        let mk = |v: Vec<f64>| Raster::new(LatLon::new(0.0, 0.0).unwrap(), 1.0, 5, 10, VALUE_NODATA, v).unwrap();
        let a = mk(vals.clone());
        assert!((spatial_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = mk(vals.iter().map(|v| 2.0 * mean - v).collect());
        assert!((spatial_correlation(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(spatial_correlation(&a, &mk(vec![3.0; 50])).is_err());
    }

    #[test]
    fn recall_bins() {
        let samples = vec![(T, T, 1.0), (S, T, 1.5), (T, T, 3.5), (T, T, 5.0), (S, S, 2.5)];
        let bins = recall_by_gcvi_bin(&samples, &DEFAULT_GCVI_EDGES);
        assert_eq!(bins.len(), 4);
        assert_eq!(bins[0].recall, Some(0.5));
        assert_eq!(bins[1].recall, None);
        assert_eq!(bins[2].recall, Some(1.0));
        assert_eq!(bins[3].recall, Some(1.0));
        assert_eq!(bins[0].lower, None);
        assert_eq!(bins[3].upper, None);
        // edge value 2.0 lands in the first bin
        let b = recall_by_gcvi_bin(&[(T, T, 2.0)], &DEFAULT_GCVI_EDGES);
        assert_eq!(b[0].n_tall, 1);
    }

    fn cm_strategy() -> impl Strategy<Value = ConfusionMatrix> {
        (0u64..500, 0u64..500, 0u64..500, 0u64..500).prop_map(|(tp, fp, tn, fn_)| ConfusionMatrix { tp, fp, tn, fn_ })
    }

    proptest! {
        #[test]
        fn metric_identities(cm in cm_strategy()) {
            prop_assume!(cm.total() > 0);
            let m = metrics(&cm);
            let acc = (cm.tp + cm.tn) as f64 / cm.total() as f64;
            prop_assert_eq!(m.accuracy, Some(acc));
            if let (Some(p), Some(r), Some(f)) = (m.precision_tall, m.recall_tall, m.f1_tall) {
                prop_assert!(f >= p.min(r) - 1e-12 && f <= p.max(r) + 1e-12);
            }
            let s = metrics(&cm.swapped());
            prop_assert_eq!(s.precision_tall, m.precision_short);
            prop_assert_eq!(s.recall_tall, m.recall_short);
            prop_assert_eq!(s.accuracy, m.accuracy);
            prop_assert_eq!(s.kappa, m.kappa);
            let both = cm.tp + cm.fn_ > 0 && cm.tn + cm.fp > 0;
            prop_assert_eq!(m.kappa == Some(1.0), cm.fp == 0 && cm.fn_ == 0 && both);
        }

        #[test]
        fn aggregation_conserves_tall(vals in prop::collection::vec(-1i32..2, 64), f in prop::sample::select(vec![1usize, 2, 3, 4, 8])) {
            let r = Raster::new(LatLon::new(0.0, 0.0).unwrap(), 0.5, 8, 8, -1.0,
                                vals.iter().map(|&v| f64::from(v)).collect()).unwrap();
            let g = aggregate_tall(&r, 0.5 * f as f64).unwrap();
            let total_tall = vals.iter().filter(|&&v| v == 1).count() as u64;
            prop_assert_eq!(g.tall_pixels.iter().sum::<u64>(), total_tall);
            let recount: f64 = g.fraction.values().iter().zip(&g.crop_pixels)
                .filter(|(v, _)| **v != VALUE_NODATA)
                .map(|(v, n)| (v * *n as f64).round()).sum();
            prop_assert_eq!(recount as u64, total_tall);
        }
    }
}
