//! Harmonic regression features from optical time series.
//!
//! Each signal is modelled over the season as
//!
//! ```text
//! f(t) = c + sum_{k=1..n} [ a_k cos(2 pi omega k t) + b_k sin(2 pi omega k t) ]
//! ```
//!
//! with `t` the elapsed fraction of the season window. Coefficients are the
//! ordinary least-squares solution, computed with a Householder QR
//! factorization of the design matrix.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{read_raster, write_raster, DateStamp, LatLon, Raster, CLASS_NODATA, VALUE_NODATA};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Blue,
    Green,
    Red,
    Nir,
    RedEdge4,
    Swir1,
    Swir2,
}

pub const N_BANDS: usize = 7;

impl Band {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct S2Observation {
    pub date: DateStamp,
    /// Surface reflectance indexed by [`Band::index`].
    pub bands: [f64; N_BANDS],
    /// Cloud probability in percent.
    pub cloud_prob: f64,
}

impl S2Observation {
    pub fn band(&self, b: Band) -> f64 {
        self.bands[b.index()]
    }
}

/// Signals that receive harmonic coefficients, in feature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Nir,
    Swir1,
    Swir2,
    Rded4,
    Gcvi,
}

impl Signal {
    pub const ALL: [Signal; 5] = [Signal::Nir, Signal::Swir1, Signal::Swir2, Signal::Rded4, Signal::Gcvi];

    pub fn name(self) -> &'static str {
        match self {
            Signal::Nir => "NIR",
            Signal::Swir1 => "SWIR1",
            Signal::Swir2 => "SWIR2",
            Signal::Rded4 => "RDED4",
            Signal::Gcvi => "GCVI",
        }
    }

    /// Signal value of one observation; `None` when undefined.
    pub fn value(self, obs: &S2Observation) -> Option<f64> {
        match self {
            Signal::Nir => Some(obs.band(Band::Nir)),
            Signal::Swir1 => Some(obs.band(Band::Swir1)),
            Signal::Swir2 => Some(obs.band(Band::Swir2)),
            Signal::Rded4 => Some(obs.band(Band::RedEdge4)),
            Signal::Gcvi => gcvi(obs.band(Band::Nir), obs.band(Band::Green)),
        }
    }
}

/// Green chlorophyll vegetation index, `NIR / Green - 1`. Undefined for
/// non-positive green reflectance.
pub fn gcvi(nir: f64, green: f64) -> Option<f64> {
    (green > 0.0).then(|| nir / green - 1.0)
}

/// Half-open date interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonWindow {
    pub start: DateStamp,
    pub end: DateStamp,
}

impl SeasonWindow {
    pub fn contains(&self, d: DateStamp) -> bool {
        d >= self.start && d < self.end
    }

    pub fn len_days(&self) -> i64 {
        self.end.days_since(self.start)
    }

    /// Elapsed fraction of the window at `d`, in `[0, 1)` for dates inside it.
    pub fn fraction(&self, d: DateStamp) -> f64 {
        d.days_since(self.start) as f64 / self.len_days() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelTimeSeries {
    pub location: LatLon,
    pub window: SeasonWindow,
    observations: Vec<S2Observation>,
}

impl PixelTimeSeries {
    /// Sorts observations by date; all must fall inside the window.
    pub fn new(location: LatLon, window: SeasonWindow, mut observations: Vec<S2Observation>) -> Result<Self> {
        if let Some(o) = observations.iter().find(|o| !window.contains(o.date)) {
            return Err(Error::Invalid(format!(
                "observation {} outside season window [{}, {})",
                o.date, window.start, window.end
            )));
        }
        if observations
            .iter()
            .any(|o| o.bands.iter().any(|v| !v.is_finite() || *v < 0.0))
        {
            return Err(Error::Invalid("reflectance must be finite and non-negative".into()));
        }
        observations.sort_by_key(|o| o.date);
        Ok(PixelTimeSeries {
            location,
            window,
            observations,
        })
    }

    pub fn observations(&self) -> &[S2Observation] {
        &self.observations
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarmonicConfig {
    pub order: usize,
    pub omega: f64,
    pub min_obs: usize,
    /// Percent; observations above this are treated as cloudy.
    pub cloud_prob_max: f64,
}

impl Default for HarmonicConfig {
    fn default() -> Self {
        HarmonicConfig {
            order: 3,
            omega: 1.0,
            min_obs: 10,
            cloud_prob_max: 40.0,
        }
    }
}

impl HarmonicConfig {
    pub fn n_coeffs(&self) -> usize {
        2 * self.order + 1
    }

    pub fn n_features(&self) -> usize {
        Signal::ALL.len() * self.n_coeffs()
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || !(self.omega > 0.0) || self.min_obs < self.n_coeffs() {
            return Err(Error::Config(format!(
                "harmonic config needs order >= 1, omega > 0, min_obs >= 2*order+1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Why a pixel has no harmonic fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitFailure {
    TooFewObservations { got: usize, need: usize },
    RankDeficient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicFit {
    /// `c, a_1, b_1, ..., a_n, b_n`.
    pub coeffs: Vec<f64>,
    pub rmse: f64,
}

pub fn mask_clouds(series: &PixelTimeSeries, config: &HarmonicConfig) -> PixelTimeSeries {
    PixelTimeSeries {
        location: series.location,
        window: series.window,
        observations: series
            .observations
            .iter()
            .filter(|o| o.cloud_prob <= config.cloud_prob_max)
            .cloned()
            .collect(),
    }
}

/// Regressors `[1, cos(2 pi w t), sin(2 pi w t), ..., cos(2 pi w n t), sin(2 pi w n t)]`.
pub fn design_row(t: f64, order: usize, omega: f64) -> Vec<f64> {
    let mut row = Vec::with_capacity(2 * order + 1);
    row.push(1.0);
    for k in 1..=order {
        let x = 2.0 * PI * omega * k as f64 * t;
        row.push(x.cos());
        row.push(x.sin());
    }
    row
}

pub fn evaluate_harmonic(coeffs: &[f64], omega: f64, t: f64) -> f64 {
    let order = coeffs.len() / 2;
    design_row(t, order, omega)
        .iter()
        .zip(coeffs)
        .map(|(x, c)| x * c)
        .sum()
}

/// Least-squares harmonic fit to `(t, y)` samples.
pub fn fit_samples(t: &[f64], y: &[f64], config: &HarmonicConfig) -> std::result::Result<HarmonicFit, FitFailure> {
    let p = config.n_coeffs();
    let m = t.len();
    if m < config.min_obs.max(p) {
        return Err(FitFailure::TooFewObservations {
            got: m,
            need: config.min_obs.max(p),
        });
    }
    let mut a: Vec<f64> = t
        .iter()
        .flat_map(|&ti| design_row(ti, config.order, config.omega))
        .collect();
    let mut b = y.to_vec();
    let coeffs = householder_lstsq(&mut a, &mut b, m, p).ok_or(FitFailure::RankDeficient)?;
    let sse: f64 = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| {
            let r = evaluate_harmonic(&coeffs, config.omega, ti) - yi;
            r * r
        })
        .sum();
    Ok(HarmonicFit {
        coeffs,
        rmse: (sse / m as f64).sqrt(),
    })
}

/// Solves `min ||A x - b||` for a row-major `m x p` matrix, `m >= p`.
/// Overwrites `a` and `b`. Returns `None` if `A` is numerically rank deficient.
fn householder_lstsq(a: &mut [f64], b: &mut [f64], m: usize, p: usize) -> Option<Vec<f64>> {
    let mut diag = vec![0.0; p];
    for k in 0..p {
        let norm = (k..m).map(|i| a[i * p + k].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        let alpha = if a[k * p + k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a[i * p + k]).collect();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv > 0.0 {
            for j in k + 1..p {
                let s: f64 = v.iter().enumerate().map(|(i, vi)| vi * a[(k + i) * p + j]).sum();
                let f = 2.0 * s / vv;
                for (i, vi) in v.iter().enumerate() {
                    a[(k + i) * p + j] -= f * vi;
                }
            }
            let s: f64 = v.iter().enumerate().map(|(i, vi)| vi * b[k + i]).sum();
            let f = 2.0 * s / vv;
            for (i, vi) in v.iter().enumerate() {
                b[k + i] -= f * vi;
            }
        }
        diag[k] = alpha;
    }
    let scale = diag.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    if diag.iter().any(|d| d.abs() <= 1e-10 * scale) {
        return None;
    }
    let mut x = vec![0.0; p];
    for k in (0..p).rev() {
        let s: f64 = (k + 1..p).map(|j| a[k * p + j] * x[j]).sum();
        x[k] = (b[k] - s) / diag[k];
    }
    Some(x)
}

/// Fits one signal on the cloud-free observations of a series.
pub fn fit_harmonics(
    series: &PixelTimeSeries,
    signal: Signal,
    config: &HarmonicConfig,
) -> std::result::Result<HarmonicFit, FitFailure> {
    let (t, y): (Vec<f64>, Vec<f64>) = series
        .observations
        .iter()
        .filter(|o| o.cloud_prob <= config.cloud_prob_max)
        .filter_map(|o| signal.value(o).map(|v| (series.window.fraction(o.date), v)))
        .unzip();
    fit_samples(&t, &y, config)
}

/// Concatenated coefficients of all signals, signal-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicFeatures {
    pub values: Vec<f64>,
    pub rmse: [f64; 5],
}

pub fn features_for_pixel(
    series: &PixelTimeSeries,
    config: &HarmonicConfig,
) -> std::result::Result<HarmonicFeatures, FitFailure> {
    let mut values = Vec::with_capacity(config.n_features());
    let mut rmse = [0.0; 5];
    for (i, s) in Signal::ALL.into_iter().enumerate() {
        let fit = fit_harmonics(series, s, config)?;
        values.extend_from_slice(&fit.coeffs);
        rmse[i] = fit.rmse;
    }
    Ok(HarmonicFeatures { values, rmse })
}

/// Band names `"{signal}_{coef}"`, e.g. `NIR_c`, `NIR_a1`, `NIR_b1`.
pub fn feature_names(config: &HarmonicConfig) -> Vec<String> {
    let mut names = Vec::with_capacity(config.n_features());
    for s in Signal::ALL {
        names.push(format!("{}_c", s.name()));
        for k in 1..=config.order {
            names.push(format!("{}_a{k}", s.name()));
            names.push(format!("{}_b{k}", s.name()));
        }
    }
    names
}

/// Highest cloud-free GCVI observed in any of `months`.
pub fn peak_gcvi(series: &PixelTimeSeries, months: &[u32], config: &HarmonicConfig) -> Option<f64> {
    series
        .observations
        .iter()
        .filter(|o| o.cloud_prob <= config.cloud_prob_max && months.contains(&o.date.month()))
        .filter_map(|o| Signal::Gcvi.value(o))
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
}

/// Harmonic features and season peak GCVI for every pixel of `geometry`.
/// `series` yields `None` for pixels outside the area of interest; pixels
/// whose fit fails are left invalid and counted.
pub fn fit_stack<F>(geometry: &Raster, series: F, config: &HarmonicConfig) -> Result<(FeatureStack, Raster, usize)>
where
    F: Fn(usize, usize) -> Option<PixelTimeSeries> + Sync,
{
    config.validate()?;
    let nc = geometry.n_cols();
    let all_months: Vec<u32> = (1..=12).collect();
    let fitted: Vec<(Option<Vec<f64>>, f64, bool)> = (0..geometry.len())
        .into_par_iter()
        .map(|i| match series(i / nc, i % nc) {
            None => (None, VALUE_NODATA, false),
            Some(s) => {
                let peak = peak_gcvi(&s, &all_months, config).unwrap_or(VALUE_NODATA);
                match features_for_pixel(&s, config) {
                    Ok(f) => (Some(f.values), peak, false),
                    Err(_) => (None, peak, true),
                }
            }
        })
        .collect();
    let failures = fitted.iter().filter(|f| f.2).count();
    let mut pixels = Vec::with_capacity(fitted.len());
    let mut peaks = Vec::with_capacity(fitted.len());
    for (f, p, _) in fitted {
        pixels.push(f);
        peaks.push(p);
    }
    let stack = FeatureStack::new(geometry, feature_names(config), pixels)?;
    let peak = geometry.like(VALUE_NODATA, peaks)?;
    Ok((stack, peak, failures))
}

/// Per-pixel harmonic features over a raster grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    geometry: Raster,
    names: Vec<String>,
    /// Pixel-major: `data[pixel * n_bands + band]`.
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl FeatureStack {
    /// `geometry` supplies the grid; its values are ignored.
    pub fn new(geometry: &Raster, names: Vec<String>, pixels: Vec<Option<Vec<f64>>>) -> Result<Self> {
        let nb = names.len();
        if pixels.len() != geometry.len() {
            return Err(Error::Dimension {
                expected: geometry.len(),
                got: pixels.len(),
            });
        }
        let mut data = Vec::with_capacity(pixels.len() * nb);
        let mut valid = Vec::with_capacity(pixels.len());
        for p in pixels {
            match p {
                Some(v) if v.len() == nb => {
                    data.extend(v);
                    valid.push(true);
                }
                Some(v) => {
                    return Err(Error::Dimension {
                        expected: nb,
                        got: v.len(),
                    })
                }
                None => {
                    data.extend(std::iter::repeat_n(VALUE_NODATA, nb));
                    valid.push(false);
                }
            }
        }
        let geometry = geometry.like(CLASS_NODATA, vec![0.0; geometry.len()])?;
        Ok(FeatureStack {
            geometry,
            names,
            data,
            valid,
        })
    }

    pub fn geometry(&self) -> &Raster {
        &self.geometry
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_bands(&self) -> usize {
        self.names.len()
    }

    pub fn at(&self, row: usize, col: usize) -> Option<&[f64]> {
        let i = row * self.geometry.n_cols() + col;
        let nb = self.names.len();
        self.valid[i].then(|| &self.data[i * nb..(i + 1) * nb])
    }

    pub fn at_point(&self, p: &LatLon) -> Option<&[f64]> {
        let (r, c) = self.geometry.point_to_pixel(p)?;
        self.at(r, c)
    }

    pub fn band_raster(&self, band: usize) -> Raster {
        let nb = self.names.len();
        let values = (0..self.valid.len())
            .map(|i| if self.valid[i] { self.data[i * nb + band] } else { VALUE_NODATA })
            .collect();
        self.geometry.like(VALUE_NODATA, values).expect("same geometry")
    }

    pub fn validity_raster(&self) -> Raster {
        let values = self.valid.iter().map(|&v| f64::from(u8::from(v))).collect();
        self.geometry.like(CLASS_NODATA, values).expect("same geometry")
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Writes `{name}.asc` per band plus `valid.asc`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (b, name) in self.names.iter().enumerate() {
            write_raster(&self.band_raster(b), dir.join(format!("{name}.asc")))?;
        }
        write_raster(&self.validity_raster(), dir.join("valid.asc"))
    }

    pub fn read_dir(dir: &Path, names: &[String]) -> Result<Self> {
        let valid_r = read_raster(dir.join("valid.asc"))?;
        let bands: Vec<Raster> = names
            .iter()
            .map(|n| read_raster(dir.join(format!("{n}.asc"))))
            .collect::<Result<_>>()?;
        for b in &bands {
            if valid_r.grid_offset(b)? != (0, 0) || b.len() != valid_r.len() {
                return Err(Error::Misaligned("feature band differs from valid.asc".into()));
            }
        }
        let pixels = (0..valid_r.len())
            .map(|i| (valid_r.values()[i] == 1.0).then(|| bands.iter().map(|b| b.values()[i]).collect()))
            .collect();
        FeatureStack::new(&valid_r, names.to_vec(), pixels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn window() -> SeasonWindow {
        SeasonWindow {
            start: DateStamp::new(2019, 1, 1).unwrap(),
            end: DateStamp::new(2020, 1, 1).unwrap(),
        }
    }

    fn obs(day: i64, nir: f64, green: f64, cloud: f64) -> S2Observation {
        let mut bands = [0.1; N_BANDS];
        bands[Band::Nir.index()] = nir;
        bands[Band::Green.index()] = green;
        S2Observation {
            date: window().start.add_days(day),
            bands,
            cloud_prob: cloud,
        }
    }

    fn series(obs: Vec<S2Observation>) -> PixelTimeSeries {
        PixelTimeSeries::new(LatLon::new(42.5, -90.0).unwrap(), window(), obs).unwrap()
    }

    #[test]
    fn gcvi_values() {
        assert!((gcvi(0.5, 0.1).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(gcvi(0.2, 0.2), Some(0.0));
        assert!((gcvi(0.3, 0.15).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(gcvi(0.3, 0.0), None);
    }

    #[test]
    fn cloud_threshold_is_inclusive() {
        let s = series(vec![obs(0, 0.3, 0.1, 100.0), obs(5, 0.3, 0.1, 0.0), obs(10, 0.3, 0.1, 40.0), obs(15, 0.3, 0.1, 41.0)]);
        let kept: Vec<f64> = mask_clouds(&s, &HarmonicConfig::default())
            .observations()
            .iter()
            .map(|o| o.cloud_prob)
            .collect();
        assert_eq!(kept, vec![0.0, 40.0]);
    }

    #[test]
    fn constant_series_gives_intercept_only() {
        let cfg = HarmonicConfig::default();
        let t: Vec<f64> = (0..30).map(|i| i as f64 / 30.0).collect();
        let fit = fit_samples(&t, &vec![2.0; 30], &cfg).unwrap();
        assert!((fit.coeffs[0] - 2.0).abs() < 1e-9);
        assert!(fit.coeffs[1..].iter().all(|c| c.abs() < 1e-9));
        assert!(fit.rmse < 1e-9);
    }

    #[test]
    fn too_few_or_degenerate_samples() {
        let cfg = HarmonicConfig::default();
        let t: Vec<f64> = (0..5).map(|i| i as f64 / 5.0).collect();
        assert_eq!(
            fit_samples(&t, &[1.0; 5], &cfg),
            Err(FitFailure::TooFewObservations { got: 5, need: 10 })
        );
        assert_eq!(fit_samples(&[0.25; 12], &[1.0; 12], &cfg), Err(FitFailure::RankDeficient));
    }

    #[test]
    fn evaluate_basics() {
        assert_eq!(evaluate_harmonic(&[0.0; 7], 1.0, 0.3), 0.0);
        assert!((evaluate_harmonic(&[1.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1.0, 0.7) - 1.5).abs() < 1e-15);
        assert_eq!(evaluate_harmonic(&[0.5, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1.0, 0.0), 1.5);
    }

    #[test]
    fn pixel_features_layout_and_order_invariance() {
        let cfg = HarmonicConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut o: Vec<S2Observation> = (0..60)
            .map(|i| obs(i * 6, 0.3 + rng.gen_range(0.0..0.2), 0.08 + rng.gen_range(0.0..0.02), 5.0))
            .collect();
        let f = features_for_pixel(&series(o.clone()), &cfg).unwrap();
        assert_eq!(f.values.len(), 35);
        assert_eq!(feature_names(&cfg).len(), 35);
        assert_eq!(feature_names(&cfg)[7], "SWIR1_c");
        o.reverse();
        let g = features_for_pixel(&series(o), &cfg).unwrap();
        for (a, b) in f.values.iter().zip(&g.values) {
            assert!((a - b).abs() < 1e-12);
        }

        let flat: Vec<S2Observation> = (0..20).map(|i| obs(i * 15, 0.4, 0.1, 0.0)).collect();
        let f = features_for_pixel(&series(flat), &cfg).unwrap();
        for (i, v) in f.values.iter().enumerate() {
            if i % 7 == 0 {
                assert!(v.abs() > 0.05);
            } else {
                assert!(v.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn one_invalid_signal_invalidates_pixel() {
        let cfg = HarmonicConfig::default();
        // green zero for most dates: GCVI has too few samples
        let o: Vec<S2Observation> = (0..20).map(|i| obs(i * 15, 0.4, if i < 15 { 0.0 } else { 0.1 }, 0.0)).collect();
        assert!(matches!(
            features_for_pixel(&series(o), &cfg),
            Err(FitFailure::TooFewObservations { .. })
        ));
    }

    #[test]
    fn peak_gcvi_window() {
        let cfg = HarmonicConfig::default();
        // August is days 212..243 of 2019
        let s = series(vec![
            obs(213, 0.31, 0.1, 0.0),
            obs(218, 0.55, 0.1, 0.0),
            obs(223, 0.40, 0.1, 0.0),
            obs(228, 0.90, 0.1, 90.0),
            obs(100, 0.90, 0.1, 0.0),
        ]);
        assert!((peak_gcvi(&s, &[8], &cfg).unwrap() - 4.5).abs() < 1e-12);
        let cloudy = series(vec![obs(213, 0.5, 0.1, 95.0)]);
        assert_eq!(peak_gcvi(&cloudy, &[8], &cfg), None);
        let single = series(vec![obs(213, 0.499, 0.1, 0.0)]);
        assert!((peak_gcvi(&single, &[8], &cfg).unwrap() - 3.99).abs() < 1e-12);
    }

    #[test]
    fn gcvi_scale_invariant() {
        for k in [0.5, 2.0, 7.3] {
            assert!((gcvi(0.42 * k, 0.07 * k).unwrap() - gcvi(0.42, 0.07).unwrap()).abs() < 1e-12);
        }
    }
}
