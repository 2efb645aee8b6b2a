//! Deterministic synthetic scenes: rectangular fields with crop-specific
//! optical phenology, lidar shots on parallel ground tracks with a per-day
//! view-angle schedule, a DEM, ground truth and point reference labels.
//!
//! Everything is a pure function of the [`SceneConfig`]. Optical series are
//! not stored; [`CropScene::series`] regenerates any pixel on demand.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{binarize, TallCropSet};
use crate::gedi::{slope_at, write_shot_table, GediShot, ShotTable, N_RH, RH95, RH100};
use crate::grid::{month_in_season, season_date_range, Hemisphere};
use crate::harmonics::{fit_stack, Band, FeatureStack, HarmonicConfig, PixelTimeSeries, S2Observation, SeasonWindow, N_BANDS};
use crate::model::{
    write_raster, write_reference, DateStamp, HeightClass, LatLon, Raster, ReferenceRecord, CLASS_NODATA, VALUE_NODATA,
};
use crate::rng;

pub const SCENE_FORMAT: &str = "cropheight-scene";
pub const SCENE_VERSION: u32 = 1;

/// Canopy height fraction at each RH percentile.
pub const RH_PROFILE: [f64; N_RH] = [-0.20, -0.10, -0.04, 0.0, 0.04, 0.08, 0.12, 0.72, 0.80, 0.90, 1.00];

const CLOUDY_PROB: f64 = 90.0;
const CLEAR_PROB: f64 = 5.0;
const NONCROP_HEIGHT: f64 = 0.3;

/// Reflectance template `base + amplitude * bump(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandTemplate {
    pub base: f64,
    pub amplitude: f64,
}

const fn bt(base: f64, amplitude: f64) -> BandTemplate {
    BandTemplate { base, amplitude }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropTemplate {
    /// Nominal peak GCVI.
    pub biomass: f64,
    /// Off-season GCVI.
    pub gcvi_floor: f64,
    /// Days between the scene peak date and this crop's peak.
    pub peak_offset_days: f64,
    /// Canopy height at peak for biomass at or above the coupling biomass, m.
    pub height_peak: f64,
    pub blue: BandTemplate,
    pub red: BandTemplate,
    pub nir: BandTemplate,
    pub red_edge4: BandTemplate,
    pub swir1: BandTemplate,
    pub swir2: BandTemplate,
    /// Multiplicative reflectance noise sigma.
    pub noise: f64,
}

impl CropTemplate {
    pub fn maize() -> Self {
        CropTemplate {
            biomass: 5.0,
            gcvi_floor: 0.5,
            peak_offset_days: 0.0,
            height_peak: 2.3,
            blue: bt(0.05, -0.015),
            red: bt(0.08, -0.05),
            nir: bt(0.18, 0.30),
            red_edge4: bt(0.16, 0.22),
            swir1: bt(0.28, -0.10),
            swir2: bt(0.20, -0.09),
            noise: 0.01,
        }
    }

    pub fn soybean() -> Self {
        CropTemplate {
            biomass: 3.5,
            gcvi_floor: 0.5,
            peak_offset_days: 30.0,
            height_peak: 0.9,
            blue: bt(0.05, -0.01),
            red: bt(0.08, -0.045),
            nir: bt(0.18, 0.36),
            red_edge4: bt(0.16, 0.28),
            swir1: bt(0.28, -0.12),
            swir2: bt(0.20, -0.11),
            noise: 0.01,
        }
    }

    fn bands(&self, biomass: f64, bump: f64) -> ([f64; N_BANDS], f64) {
        let scale = biomass / self.biomass;
        let v = |b: &BandTemplate| b.base + b.amplitude * scale * bump;
        let gcvi = self.gcvi_floor + (biomass - self.gcvi_floor) * bump;
        let nir = v(&self.nir);
        let mut bands = [0.0; N_BANDS];
        bands[Band::Blue.index()] = v(&self.blue);
        bands[Band::Green.index()] = nir / (gcvi + 1.0);
        bands[Band::Red.index()] = v(&self.red);
        bands[Band::Nir.index()] = nir;
        bands[Band::RedEdge4.index()] = v(&self.red_edge4);
        bands[Band::Swir1.index()] = v(&self.swir1);
        bands[Band::Swir2.index()] = v(&self.swir2);
        (bands, gcvi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DemKind {
    Flat { elevation: f64 },
    /// Plane rising eastwards at `slope` degrees.
    Ramp { slope: f64 },
    /// Sum of two sinusoids; `amplitude` in m, `wavelength` in pixels.
    Hills { amplitude: f64, wavelength: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GediSynthConfig {
    /// Pixels between parallel ground tracks.
    pub track_spacing: usize,
    /// Pixels between shots along a track.
    pub shot_spacing: usize,
    pub beams: u8,
    /// Days between passes over the same track.
    pub revisit_days: i64,
    /// Restrict passes to these calendar months.
    pub months: Option<Vec<u32>>,
    pub rh_sigma: f64,
    /// Chance that a shot over cropland hits a tree.
    pub tree_fraction: f64,
    pub tree_height: f64,
    pub nominal_view_angle: f64,
    /// Explicitly degraded days.
    pub corrupt_days: Vec<DateStamp>,
    /// Fraction of pass days additionally degraded at random.
    pub corrupt_fraction: f64,
    pub corrupt_view_angle: f64,
    /// RH noise sigma (m) per 0.1 rad below 1.5 rad.
    pub corrupt_noise: f64,
    pub quality_dropout: f64,
    pub degrade_rate: f64,
}

impl Default for GediSynthConfig {
    fn default() -> Self {
        GediSynthConfig {
            track_spacing: 60,
            shot_spacing: 6,
            beams: 8,
            revisit_days: 8,
            months: None,
            rh_sigma: 0.15,
            tree_fraction: 0.03,
            tree_height: 12.0,
            nominal_view_angle: 1.54,
            corrupt_days: Vec::new(),
            corrupt_fraction: 0.0,
            corrupt_view_angle: 1.40,
            corrupt_noise: 1.5,
            quality_dropout: 0.02,
            degrade_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub center: LatLon,
    pub n_rows: usize,
    pub n_cols: usize,
    /// Degrees.
    pub pixel_size: f64,
    pub year: i32,
    /// Minimum and maximum field side, pixels.
    pub field_size: [usize; 2],
    /// Share of the scene area under crops.
    pub cropland_fraction: f64,
    /// Share of cropland per crop; sums to 1.
    pub crop_mix: BTreeMap<String, f64>,
    pub crops: BTreeMap<String, CropTemplate>,
    /// Calendar month in which tall crops reach peak height and greenness.
    pub tall_peak_month: u32,
    pub tall_crops: TallCropSet,
    /// Share of tall-crop area given a depressed biomass.
    pub low_biomass_fraction: f64,
    pub low_biomass_range: [f64; 2],
    /// Spread of normal-field biomass around the crop's nominal value.
    pub biomass_jitter: f64,
    /// Biomass at and above which canopy height is not depressed.
    pub coupling_biomass: f64,
    pub cloud_fraction: f64,
    /// Side of the square pixel blocks sharing a cloud draw.
    pub cloud_block: usize,
    pub obs_interval_days: i64,
    pub n_reference: usize,
    pub gedi: GediSynthConfig,
    pub dem: DemKind,
}

impl Default for SceneConfig {
    /// Two 5-degree cells side by side, one season, 256 x 256 pixels.
    fn default() -> Self {
        SceneConfig {
            seed: 0,
            center: LatLon { lat: 42.5, lon: -90.0 },
            n_rows: 256,
            n_cols: 256,
            pixel_size: 0.0001,
            year: 2019,
            field_size: [16, 48],
            cropland_fraction: 0.9,
            crop_mix: BTreeMap::from([("maize".into(), 0.5), ("soybean".into(), 0.5)]),
            crops: BTreeMap::from([
                ("maize".into(), CropTemplate::maize()),
                ("soybean".into(), CropTemplate::soybean()),
            ]),
            tall_peak_month: 8,
            tall_crops: TallCropSet::default(),
            low_biomass_fraction: 0.0,
            low_biomass_range: [1.2, 3.8],
            biomass_jitter: 0.3,
            coupling_biomass: 4.0,
            cloud_fraction: 0.2,
            cloud_block: 32,
            obs_interval_days: 5,
            n_reference: 2000,
            gedi: GediSynthConfig::default(),
            dem: DemKind::Hills {
                amplitude: 8.0,
                wavelength: 64.0,
            },
        }
    }
}

impl SceneConfig {
    /// Coarse scene for the shot height model: 0.01-degree pixels spanning
    /// many 0.5-degree blocks, peak-month shots only.
    pub fn height_training(seed: u64) -> Self {
        SceneConfig {
            seed,
            center: LatLon { lat: 38.0, lon: -97.0 },
            pixel_size: 0.01,
            n_reference: 0,
            gedi: GediSynthConfig {
                months: Some(vec![8]),
                tree_fraction: 0.1,
                ..GediSynthConfig::default()
            },
            ..SceneConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let total: f64 = self.crop_mix.values().sum();
        if self.crop_mix.is_empty() || (total - 1.0).abs() > 1e-9 || self.crop_mix.values().any(|f| *f < 0.0) {
            return bad(format!("crop fractions must be non-negative and sum to 1, got {total}"));
        }
        if let Some(c) = self.crop_mix.keys().find(|c| !self.crops.contains_key(*c)) {
            return bad(format!("crop `{c}` has no template"));
        }
        if self.crops.values().any(|t| t.noise < 0.0) || self.gedi.rh_sigma < 0.0 || self.gedi.corrupt_noise < 0.0 {
            return bad("noise sigmas must be non-negative".into());
        }
        for (name, f) in [
            ("cropland_fraction", self.cropland_fraction),
            ("low_biomass_fraction", self.low_biomass_fraction),
            ("cloud_fraction", self.cloud_fraction),
            ("gedi.tree_fraction", self.gedi.tree_fraction),
            ("gedi.corrupt_fraction", self.gedi.corrupt_fraction),
            ("gedi.quality_dropout", self.gedi.quality_dropout),
            ("gedi.degrade_rate", self.gedi.degrade_rate),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must be in [0, 1], got {f}"));
            }
        }
        let [fmin, fmax] = self.field_size;
        if fmin == 0 || fmin > fmax {
            return bad(format!("invalid field size range {fmin}..{fmax}"));
        }
        if self.n_rows < fmin || self.n_cols < fmin {
            return Err(Error::Invalid(format!(
                "extent {}x{} too small for one {fmin}-pixel field",
                self.n_rows, self.n_cols
            )));
        }
        if !(1..=12).contains(&self.tall_peak_month) {
            return bad("tall_peak_month must be 1..=12".into());
        }
        if self.gedi.track_spacing == 0 || self.gedi.shot_spacing == 0 || self.gedi.beams == 0 {
            return bad("track spacing, shot spacing and beams must be positive".into());
        }
        if self.gedi.revisit_days <= 0 || self.obs_interval_days <= 0 || self.cloud_block == 0 {
            return bad("intervals and cloud block must be positive".into());
        }
        if !(self.pixel_size > 0.0) {
            return bad("pixel_size must be positive".into());
        }
        Ok(())
    }

    pub fn hemisphere(&self) -> Hemisphere {
        Hemisphere::of_latitude(self.center.lat)
    }

    pub fn season(&self) -> Result<SeasonWindow> {
        season_date_range(self.year, self.hemisphere())
    }

    pub fn origin(&self) -> Result<LatLon> {
        LatLon::new(
            self.center.lat - 0.5 * self.n_rows as f64 * self.pixel_size,
            self.center.lon - 0.5 * self.n_cols as f64 * self.pixel_size,
        )
    }
}

/// Per-day mean view angle; days not listed use the nominal angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewAngleSchedule {
    pub nominal: f64,
    pub days: BTreeMap<DateStamp, f64>,
}

impl ViewAngleSchedule {
    pub fn constant(nominal: f64) -> Self {
        ViewAngleSchedule {
            nominal,
            days: BTreeMap::new(),
        }
    }

    pub fn angle(&self, day: DateStamp) -> f64 {
        self.days.get(&day).copied().unwrap_or(self.nominal)
    }
}

/// Marks `days` as off-nadir days flown at `angle`.
pub fn corrupt_view_angle(schedule: &ViewAngleSchedule, days: &[DateStamp], angle: f64) -> ViewAngleSchedule {
    let mut out = schedule.clone();
    for d in days {
        out.days.insert(*d, angle);
    }
    out
}

/// Extra RH noise sigma for shots flown at `angle`; zero at and above 1.5 rad.
pub fn view_angle_noise(angle: f64, per_tenth_rad: f64) -> f64 {
    per_tenth_rad * ((1.5 - angle) / 0.1).max(0.0)
}

/// Peak-normalized seasonal shape, 1 at `delta_days == 0`.
fn phase(delta_days: f64, season_days: f64) -> f64 {
    0.5 * (1.0 + (2.0 * PI * delta_days / season_days).cos())
}

/// Canopy height of a crop `delta_days` from its peak.
pub fn canopy_height(t: &CropTemplate, biomass: f64, coupling_biomass: f64, delta_days: f64, season_days: f64) -> f64 {
    let coupling = (biomass / coupling_biomass).min(1.0);
    (t.height_peak * phase(delta_days, season_days).powi(6) * coupling).max(0.1)
}

/// Expected RH profile for canopy height `h`.
pub fn rh_profile(h: f64) -> [f64; N_RH] {
    RH_PROFILE.map(|f| f * h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
    /// Index into the scene's crop names; `None` off cropland.
    pub crop: Option<usize>,
    pub biomass: f64,
    /// Days from season start to this field's peak.
    pub peak_day: f64,
}

impl Field {
    fn area(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone)]
pub struct CropScene {
    pub config: SceneConfig,
    pub crop_names: Vec<String>,
    pub window: SeasonWindow,
    pub fields: Vec<Field>,
    field_of: Vec<u32>,
    pub crop_mask: Raster,
    pub labels: Raster,
    pub truth: Raster,
    pub biomass: Raster,
    pub dem: Raster,
    pub schedule: ViewAngleSchedule,
    pub shots: ShotTable,
    /// True class of every shot, in shot order.
    pub shot_truth: Vec<HeightClass>,
    pub reference: Vec<ReferenceRecord>,
}

fn split_lengths(total: usize, [fmin, fmax]: [usize; 2], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::new();
    let mut left = total;
    while left > 0 {
        let mut len = rng.gen_range(fmin..=fmax).min(left);
        if left - len < fmin {
            len = left;
        }
        out.push(len);
        left -= len;
    }
    out
}

fn layout_fields(cfg: &SceneConfig) -> Vec<Field> {
    let mut rng = rng::stream(cfg.seed, &[rng::tag("fields")]);
    let mut fields = Vec::new();
    let mut row0 = 0;
    for rows in split_lengths(cfg.n_rows, cfg.field_size, &mut rng) {
        let mut col0 = 0;
        for cols in split_lengths(cfg.n_cols, cfg.field_size, &mut rng) {
            fields.push(Field {
                row0,
                col0,
                rows,
                cols,
                crop: None,
                biomass: 0.0,
                peak_day: 0.0,
            });
            col0 += cols;
        }
        row0 += rows;
    }
    fields
}

/// Gives each field the category furthest below its target area. Category 0
/// is non-crop, category `k + 1` is crop `k`.
fn assign_crops(fields: &mut [Field], cfg: &SceneConfig, crop_names: &[String]) {
    let mut rng = rng::stream(cfg.seed, &[rng::tag("crops")]);
    let total: usize = fields.iter().map(Field::area).sum();
    let mut targets = vec![(1.0 - cfg.cropland_fraction) * total as f64];
    targets.extend(crop_names.iter().map(|c| cfg.cropland_fraction * cfg.crop_mix[c] * total as f64));
    let mut assigned = vec![0.0; targets.len()];
    let mut order: Vec<usize> = (0..fields.len()).collect();
    order.shuffle(&mut rng);
    for i in order {
        let k = (0..targets.len())
            .max_by(|&a, &b| {
                (targets[a] - assigned[a])
                    .total_cmp(&(targets[b] - assigned[b]))
                    .then(b.cmp(&a))
            })
            .expect("at least one category");
        assigned[k] += fields[i].area() as f64;
        fields[i].crop = k.checked_sub(1);
    }
}

fn assign_biomass(fields: &mut [Field], cfg: &SceneConfig, crop_names: &[String], window: &SeasonWindow) -> Result<()> {
    let mut rng = rng::stream(cfg.seed, &[rng::tag("biomass")]);
    let (peak_start, _) = month_in_season(cfg.year, cfg.tall_peak_month, cfg.hemisphere())?;
    let peak_day = peak_start.days_since(window.start) as f64 + 14.0;
    let is_tall = |f: &Field| f.crop.is_some_and(|c| cfg.tall_crops.contains(&crop_names[c]));

    let mut tall: Vec<usize> = (0..fields.len()).filter(|&i| is_tall(&fields[i])).collect();
    tall.shuffle(&mut rng);
    let tall_area: usize = tall.iter().map(|&i| fields[i].area()).sum();
    let target = cfg.low_biomass_fraction * tall_area as f64;
    let mut low = Vec::new();
    let mut low_area = 0.0;
    for &i in &tall {
        let a = fields[i].area() as f64;
        if (low_area + a - target).abs() < (low_area - target).abs() {
            low.push(i);
            low_area += a;
        }
    }
    // evenly spread over the range so every GCVI bin gets fields
    let [lo, hi] = cfg.low_biomass_range;
    let mut values: Vec<f64> = (0..low.len())
        .map(|k| lo + (hi - lo) * (k as f64 + 0.5) / low.len() as f64)
        .collect();
    values.shuffle(&mut rng);

    for (i, f) in fields.iter_mut().enumerate() {
        let Some(c) = f.crop else { continue };
        let t = &cfg.crops[&crop_names[c]];
        f.biomass = t.biomass + cfg.biomass_jitter * rng.gen_range(-1.0..=1.0);
        f.peak_day = peak_day + t.peak_offset_days + rng.gen_range(-5.0..=5.0);
        if let Some(k) = low.iter().position(|&j| j == i) {
            f.biomass = values[k];
        }
    }
    Ok(())
}

fn build_dem(cfg: &SceneConfig, origin: LatLon) -> Result<Raster> {
    let (nr, nc) = (cfg.n_rows, cfg.n_cols);
    let lat = cfg.center.lat.to_radians().cos();
    let dx = cfg.pixel_size * crate::gedi::METERS_PER_DEGREE * lat;
    let mut values = Vec::with_capacity(nr * nc);
    for r in 0..nr {
        for c in 0..nc {
            let z = match cfg.dem {
                DemKind::Flat { elevation } => elevation,
                DemKind::Ramp { slope } => 200.0 + slope.to_radians().tan() * c as f64 * dx,
                DemKind::Hills { amplitude, wavelength } => {
                    let k = 2.0 * PI / wavelength;
                    250.0 + 0.5 * amplitude * ((k * c as f64).sin() + (k * 0.7 * r as f64 + 1.0).cos())
                }
            };
            values.push(z);
        }
    }
    Raster::new(origin, cfg.pixel_size, nr, nc, VALUE_NODATA, values)
}

/// Cloud draw shared by all pixels of a block on observation `k`.
fn cloudy(cfg: &SceneConfig, k: usize, row: usize, col: usize) -> bool {
    let h = rng::derive_seed(
        cfg.seed,
        &[rng::tag("cloud"), k as u64, (row / cfg.cloud_block) as u64, (col / cfg.cloud_block) as u64],
    );
    ((h >> 11) as f64 / (1u64 << 53) as f64) < cfg.cloud_fraction
}

fn unit_normal() -> Normal<f64> {
    Normal::new(0.0, 1.0).expect("unit normal")
}

impl CropScene {
    pub fn n_pixels(&self) -> usize {
        self.config.n_rows * self.config.n_cols
    }

    pub fn field_at(&self, row: usize, col: usize) -> &Field {
        &self.fields[self.field_of[row * self.config.n_cols + col] as usize]
    }

    /// Optical series of a cropland pixel; `None` off cropland.
    pub fn series(&self, row: usize, col: usize) -> Option<PixelTimeSeries> {
        let cfg = &self.config;
        let field = self.field_at(row, col);
        let template = &cfg.crops[&self.crop_names[field.crop?]];
        let mut rng = rng::stream(cfg.seed, &[rng::tag("s2"), row as u64, col as u64]);
        let n01 = unit_normal();
        let season_days = self.window.len_days() as f64;
        let mut obs = Vec::new();
        let mut date = self.window.start;
        let mut k = 0;
        while self.window.contains(date) {
            let delta = date.days_since(self.window.start) as f64 - field.peak_day;
            let bump = phase(delta, season_days).powi(2);
            let (mut bands, _) = template.bands(field.biomass, bump);
            for b in bands.iter_mut() {
                *b = (*b * (1.0 + template.noise * n01.sample(&mut rng))).max(1e-4);
            }
            let cloud = cloudy(cfg, k, row, col);
            if cloud {
                bands.iter_mut().for_each(|b| *b += 0.25);
            }
            obs.push(S2Observation {
                date,
                bands,
                cloud_prob: if cloud { CLOUDY_PROB } else { CLEAR_PROB },
            });
            date = date.add_days(cfg.obs_interval_days);
            k += 1;
        }
        PixelTimeSeries::new(self.crop_mask.pixel_center(row, col), self.window, obs).ok()
    }

    /// Harmonic features and peak GCVI for every cropland pixel.
    pub fn features(&self, config: &HarmonicConfig) -> Result<(FeatureStack, Raster, usize)> {
        fit_stack(&self.crop_mask, |r, c| self.series(r, c), config)
    }

    /// Writes all scene files plus `scene.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_raster(&self.crop_mask, dir.join("crop_mask.asc"))?;
        write_raster(&self.labels, dir.join("labels.asc"))?;
        write_raster(&self.truth, dir.join("truth.asc"))?;
        write_raster(&self.biomass, dir.join("biomass.asc"))?;
        write_raster(&self.dem, dir.join("dem.asc"))?;
        write_shot_table(&self.shots, dir.join("shots.csv"))?;
        write_reference(&self.reference, dir.join("reference.jsonl"))?;
        let mut truth = String::from("id,class\n");
        for (s, c) in self.shots.iter().zip(&self.shot_truth) {
            truth.push_str(&format!("{},{}\n", s.id, c.name()));
        }
        let p = dir.join("shot_truth.csv");
        fs::write(&p, truth).map_err(|e| Error::io(&p, e))?;
        let manifest = SceneManifest {
            format: SCENE_FORMAT.into(),
            version: SCENE_VERSION,
            crop_names: self.crop_names.clone(),
            config: self.config.clone(),
        };
        let p = dir.join("scene.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub format: String,
    pub version: u32,
    pub crop_names: Vec<String>,
    pub config: SceneConfig,
}

pub fn read_scene_manifest(path: impl AsRef<Path>) -> Result<SceneManifest> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let m: SceneManifest = serde_json::from_slice(&bytes)?;
    if m.format != SCENE_FORMAT || m.version != SCENE_VERSION {
        return Err(Error::Invalid(format!(
            "{}: expected {SCENE_FORMAT} v{SCENE_VERSION}, found {} v{}",
            path.display(),
            m.format,
            m.version
        )));
    }
    Ok(m)
}

pub fn generate_scene(config: &SceneConfig) -> Result<CropScene> {
    config.validate()?;
    let cfg = config;
    let window = cfg.season()?;
    let origin = cfg.origin()?;
    let crop_names: Vec<String> = cfg.crop_mix.keys().cloned().collect();

    let mut fields = layout_fields(cfg);
    assign_crops(&mut fields, cfg, &crop_names);
    assign_biomass(&mut fields, cfg, &crop_names, &window)?;

    let (nr, nc) = (cfg.n_rows, cfg.n_cols);
    let mut field_of = vec![0u32; nr * nc];
    let mut mask = vec![0.0; nr * nc];
    let mut labels = vec![CLASS_NODATA; nr * nc];
    let mut truth = vec![CLASS_NODATA; nr * nc];
    let mut biomass = vec![VALUE_NODATA; nr * nc];
    for (k, f) in fields.iter().enumerate() {
        for r in f.row0..f.row0 + f.rows {
            for c in f.col0..f.col0 + f.cols {
                let i = r * nc + c;
                field_of[i] = k as u32;
                if let Some(crop) = f.crop {
                    mask[i] = 1.0;
                    labels[i] = crop as f64;
                    truth[i] = f64::from(binarize(&crop_names[crop], &cfg.tall_crops).code());
                    biomass[i] = f.biomass;
                }
            }
        }
    }
    let geom = |nodata, v| Raster::new(origin, cfg.pixel_size, nr, nc, nodata, v);
    let crop_mask = geom(CLASS_NODATA, mask)?;
    let dem = build_dem(cfg, origin)?;

    let mut scene = CropScene {
        config: cfg.clone(),
        crop_names,
        window,
        fields,
        field_of,
        crop_mask,
        labels: geom(CLASS_NODATA, labels)?,
        truth: geom(CLASS_NODATA, truth)?,
        biomass: geom(VALUE_NODATA, biomass)?,
        dem,
        schedule: ViewAngleSchedule::constant(cfg.gedi.nominal_view_angle),
        shots: ShotTable::new(Vec::new())?,
        shot_truth: Vec::new(),
        reference: Vec::new(),
    };
    let (shots, truth, schedule) = generate_gedi_shots(&scene)?;
    scene.shots = shots;
    scene.shot_truth = truth;
    scene.schedule = schedule;
    scene.reference = sample_reference(&scene);
    Ok(scene)
}

fn pass_days(cfg: &SceneConfig, window: &SeasonWindow, track: usize) -> Vec<DateStamp> {
    let g = &cfg.gedi;
    let mut day = window.start.add_days((track as i64 * 3) % g.revisit_days);
    let mut out = Vec::new();
    while window.contains(day) {
        if g.months.as_ref().is_none_or(|m| m.contains(&day.month())) {
            out.push(day);
        }
        day = day.add_days(g.revisit_days);
    }
    out
}

/// Shots along vertical tracks, their true classes and the view-angle schedule used.
pub fn generate_gedi_shots(scene: &CropScene) -> Result<(ShotTable, Vec<HeightClass>, ViewAngleSchedule)> {
    let cfg = &scene.config;
    let g = &cfg.gedi;
    let season_days = scene.window.len_days() as f64;
    let tracks: Vec<usize> = (g.track_spacing / 2..cfg.n_cols).step_by(g.track_spacing).collect();

    let mut all_days: Vec<DateStamp> = tracks
        .iter()
        .enumerate()
        .flat_map(|(t, _)| pass_days(cfg, &scene.window, t))
        .collect();
    all_days.sort();
    all_days.dedup();
    let mut pick = rng::stream(cfg.seed, &[rng::tag("corrupt-days")]);
    let mut bad: Vec<DateStamp> = all_days
        .iter()
        .copied()
        .filter(|_| pick.gen::<f64>() < g.corrupt_fraction)
        .collect();
    bad.extend(g.corrupt_days.iter().copied());
    let schedule = corrupt_view_angle(&ViewAngleSchedule::constant(g.nominal_view_angle), &bad, g.corrupt_view_angle);

    let n01 = unit_normal();
    let mut shots = Vec::new();
    let mut truth = Vec::new();
    let mut id = 0u64;
    for (t, &col) in tracks.iter().enumerate() {
        let beam = (t % usize::from(g.beams)) as u8;
        for day in pass_days(cfg, &scene.window, t) {
            let mut rng = rng::stream(cfg.seed, &[rng::tag("gedi"), t as u64, day.days_since(scene.window.start) as u64]);
            let day_angle = schedule.angle(day) + 0.005 * n01.sample(&mut rng);
            let extra = view_angle_noise(schedule.angle(day), g.corrupt_noise);
            let elapsed = day.days_since(scene.window.start) as f64;
            for row in (g.shot_spacing / 2..cfg.n_rows).step_by(g.shot_spacing) {
                id += 1;
                let field = scene.field_at(row, col);
                let (h, class) = match field.crop {
                    Some(_) if rng.gen::<f64>() < g.tree_fraction => (g.tree_height, HeightClass::Tree),
                    Some(c) => {
                        let tpl = &cfg.crops[&scene.crop_names[c]];
                        let h = canopy_height(tpl, field.biomass, cfg.coupling_biomass, elapsed - field.peak_day, season_days);
                        (h, binarize(&scene.crop_names[c], &cfg.tall_crops))
                    }
                    None => (NONCROP_HEIGHT, HeightClass::Short),
                };
                let mut rh = rh_profile(h);
                for v in rh.iter_mut() {
                    *v += g.rh_sigma * n01.sample(&mut rng) + extra * n01.sample(&mut rng);
                }
                rh[RH100] = rh[RH100].max(rh[RH95]);
                let quality_flag = u8::from(rng.gen::<f64>() >= g.quality_dropout);
                let degrade_flag = u32::from(rng.gen::<f64>() < g.degrade_rate);
                shots.push(GediShot {
                    id,
                    location: scene.crop_mask.pixel_center(row, col),
                    date: day,
                    beam,
                    rh,
                    view_angle: day_angle + 0.002 * n01.sample(&mut rng),
                    slope: slope_at(&scene.dem, row, col)?,
                    quality_flag,
                    degrade_flag,
                    pred_class: None,
                    confidence: None,
                });
                truth.push(class);
            }
        }
    }
    Ok((ShotTable::new(shots)?, truth, schedule))
}

fn sample_reference(scene: &CropScene) -> Vec<ReferenceRecord> {
    let cfg = &scene.config;
    let crop_pixels: Vec<usize> = (0..scene.n_pixels()).filter(|&i| scene.crop_mask.values()[i] == 1.0).collect();
    if crop_pixels.is_empty() {
        return Vec::new();
    }
    let mut rng = rng::stream(cfg.seed, &[rng::tag("reference")]);
    (0..cfg.n_reference)
        .map(|_| {
            let i = crop_pixels[rng.gen_range(0..crop_pixels.len())];
            let (r, c) = (i / cfg.n_cols, i % cfg.n_cols);
            ReferenceRecord {
                location: scene.crop_mask.pixel_center(r, c),
                crop_name: scene.crop_names[scene.labels.get(r, c) as usize].clone(),
                year: cfg.year,
                season_tag: None,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonics::peak_gcvi;
    use proptest::prelude::*;

    fn small(seed: u64) -> SceneConfig {
        SceneConfig {
            seed,
            n_rows: 96,
            n_cols: 96,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn realized_mix() {
        let cfg = SceneConfig {
            cropland_fraction: 1.0,
            ..SceneConfig::default()
        };
        let s = generate_scene(&cfg).unwrap();
        let maize = s.labels.values().iter().filter(|v| **v == 0.0).count() as f64;
        let frac = maize / s.n_pixels() as f64;
        assert!((frac - 0.5).abs() <= 0.05, "maize fraction {frac}");
    }

    #[test]
    fn same_seed_same_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_scene(&small(3)).unwrap().write_dir(a.path()).unwrap();
        generate_scene(&small(3)).unwrap().write_dir(b.path()).unwrap();
        for f in ["crop_mask.asc", "labels.asc", "shots.csv", "reference.jsonl", "scene.json", "dem.asc"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let c = generate_scene(&small(4)).unwrap();
        assert_ne!(c.labels, generate_scene(&small(3)).unwrap().labels);
    }

    #[test]
    fn cadence_and_clouds() {
        let cfg = SceneConfig {
            cloud_fraction: 0.0,
            ..small(1)
        };
        let s = generate_scene(&cfg).unwrap();
        let (r, c) = (0..96 * 96)
            .map(|i| (i / 96, i % 96))
            .find(|&(r, c)| s.crop_mask.get(r, c) == 1.0)
            .unwrap();
        let series = s.series(r, c).unwrap();
        assert_eq!(series.observations().len(), 73);
        assert!(series.observations().iter().all(|o| o.cloud_prob < 40.0));
        assert!(s.series_count_off_crop() == 0);
    }

    impl CropScene {
        fn series_count_off_crop(&self) -> usize {
            (0..self.n_pixels())
                .filter(|&i| self.crop_mask.values()[i] == 0.0)
                .filter(|&i| self.series(i / self.config.n_cols, i % self.config.n_cols).is_some())
                .count()
        }
    }

    fn pixels_with(s: &CropScene, pred: impl Fn(&Field) -> bool) -> Vec<(usize, usize)> {
        (0..s.n_pixels())
            .map(|i| (i / s.config.n_cols, i % s.config.n_cols))
            .filter(|&(r, c)| pred(s.field_at(r, c)))
            .collect()
    }

    #[test]
    fn peak_gcvi_tracks_biomass() {
        let cfg = SceneConfig {
            low_biomass_fraction: 0.5,
            ..small(2)
        };
        let s = generate_scene(&cfg).unwrap();
        let hc = HarmonicConfig::default();
        let all: Vec<u32> = (1..=12).collect();
        let high = pixels_with(&s, |f| f.crop == Some(0) && f.biomass >= 4.5);
        for &(r, c) in high.iter().step_by(97).take(20) {
            let p = peak_gcvi(&s.series(r, c).unwrap(), &all, &hc).unwrap();
            let b = s.field_at(r, c).biomass;
            assert!((p - b).abs() <= 0.5 && (4.5..=5.5).contains(&p), "peak {p} for biomass {b}");
        }
        let low = pixels_with(&s, |f| f.crop == Some(0) && f.biomass <= 2.5);
        assert!(!low.is_empty());
        for &(r, c) in low.iter().step_by(31).take(20) {
            let p = peak_gcvi(&s.series(r, c).unwrap(), &all, &hc).unwrap();
            assert!(p < 4.0, "low-biomass peak {p}");
        }
    }

    #[test]
    fn shot_heights_at_peak() {
        let s = generate_scene(&SceneConfig {
            gedi: GediSynthConfig {
                months: Some(vec![8]),
                tree_fraction: 0.0,
                ..GediSynthConfig::default()
            },
            ..SceneConfig::default()
        })
        .unwrap();
        let mut maize = Vec::new();
        let mut soy = Vec::new();
        for sh in s.shots.iter() {
            let (r, c) = s.crop_mask.point_to_pixel(&sh.location).unwrap();
            let f = s.field_at(r, c);
            let elapsed = sh.date.days_since(s.window.start) as f64;
            if (elapsed - f.peak_day).abs() > 10.0 {
                continue;
            }
            match f.crop {
                Some(0) => maize.push(sh.rh[RH95]),
                Some(1) => soy.push(sh.rh[RH95]),
                _ => {}
            }
        }
        assert!(maize.len() > 30);
        let inside = |v: &[f64], lo: f64, hi: f64| v.iter().filter(|x| (lo..=hi).contains(*x)).count() as f64 / v.len() as f64;
        assert!(inside(&maize, 2.0 - 0.45, 2.6) > 0.99);
        assert!(maize.iter().sum::<f64>() / maize.len() as f64 > 2.0);
        // soybean peaks a month later; August soy shots mostly sit below 1.1 m
        let soy_mean = soy.iter().sum::<f64>() / soy.len().max(1) as f64;
        assert!(soy.is_empty() || soy_mean < 1.1);
    }

    #[test]
    fn low_biomass_maize_rh95_below_threshold() {
        let t = CropTemplate::maize();
        let rh95 = rh_profile(canopy_height(&t, 2.5, 4.0, 0.0, 365.0))[RH95];
        assert!(rh95 < 1.3, "{rh95}");
        let soy = rh_profile(canopy_height(&CropTemplate::soybean(), 3.5, 4.0, 0.0, 365.0))[RH95];
        assert!((0.6..=1.1).contains(&soy), "{soy}");
        let full = rh_profile(canopy_height(&t, 5.0, 4.0, 0.0, 365.0))[RH95];
        assert!((2.0..=2.6).contains(&full));
    }

    #[test]
    fn corrupted_schedule() {
        let d = DateStamp::new(2019, 8, 3).unwrap();
        let s = corrupt_view_angle(&ViewAngleSchedule::constant(1.54), &[d], 1.40);
        assert_eq!(s.angle(d), 1.40);
        assert_eq!(s.angle(d.add_days(1)), 1.54);
        assert_eq!(view_angle_noise(1.54, 1.5), 0.0);
        assert!((view_angle_noise(1.40, 1.5) - 1.5).abs() < 1e-12);
        let clean = generate_scene(&small(5)).unwrap();
        assert!(clean.shots.iter().all(|s| s.view_angle >= 1.5));
    }

    #[test]
    fn shot_density() {
        let s = generate_scene(&SceneConfig::default()).unwrap();
        let per_month = s.shots.len() as f64 / 12.0;
        assert!((400.0..=800.0).contains(&per_month), "{per_month}");
        assert_eq!(s.shot_truth.len(), s.shots.len());
    }

    #[test]
    fn too_small_extent() {
        let cfg = SceneConfig {
            n_rows: 8,
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(&cfg), Err(Error::Invalid(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_scene(&small(9)).unwrap();
        s.write_dir(dir.path()).unwrap();
        let m = read_scene_manifest(dir.path().join("scene.json")).unwrap();
        assert_eq!(m.config, s.config);
        assert_eq!(generate_scene(&m.config).unwrap().labels, s.labels);
    }

    proptest! {
        #[test]
        fn rh95_monotone_in_biomass(b1 in 0.5f64..8.0, b2 in 0.5f64..8.0, delta in -60.0f64..60.0) {
            let t = CropTemplate::maize();
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            let h = |b| rh_profile(canopy_height(&t, b, 4.0, delta, 365.0))[RH95];
            prop_assert!(h(lo) <= h(hi));
        }
    }
}
