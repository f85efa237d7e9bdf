//! Synthetic cardiac-like phantoms with exactly known region areas.
//!
//! Each image is a short-axis-like slice: a filled disk for the left-ventricle
//! cavity, a concentric annulus for the myocardium and a crescent for the
//! right ventricle (a lateral disk clipped by the myocardial outer boundary).
//! Attributes are the exact pixel counts of the three labels, so the
//! ground truth is available without any estimation.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::substream;

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_LV: u8 = 1;
pub const LABEL_MYO: u8 = 2;
pub const LABEL_RV: u8 = 3;

pub const ATTRIBUTE_NAMES: [&str; 3] = ["lv_area", "myo_area", "rv_area"];

/// Gray value rendered for each region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct IntensityLevels {
    pub background: f64,
    pub lv: f64,
    pub myo: f64,
    pub rv: f64,
}

impl IntensityLevels {
    pub fn by_label(&self) -> [f64; 4] {
        [self.background, self.lv, self.myo, self.rv]
    }
}

impl Default for IntensityLevels {
    fn default() -> Self {
        IntensityLevels {
            background: 0.05,
            lv: 0.9,
            myo: 0.35,
            rv: 0.65,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    /// Side length of the square image in pixels.
    pub image_size: usize,
    pub lv_radius_range: [f64; 2],
    pub myo_thickness_range: [f64; 2],
    /// RV disk radius as a multiple of the myocardial outer radius.
    pub rv_scale_range: [f64; 2],
    /// Maximum absolute displacement of the heart center, in pixels.
    pub center_jitter: f64,
    pub intensity_levels: IntensityLevels,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            image_size: 64,
            lv_radius_range: [5.0, 11.0],
            myo_thickness_range: [2.0, 5.0],
            rv_scale_range: [0.6, 1.2],
            center_jitter: 3.0,
            intensity_levels: IntensityLevels::default(),
            noise_std: 0.03,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.image_size >= 8, Config, "image_size must be at least 8, got {}", self.image_size);
        for (name, [lo, hi]) in [
            ("lv_radius_range", self.lv_radius_range),
            ("myo_thickness_range", self.myo_thickness_range),
            ("rv_scale_range", self.rv_scale_range),
        ] {
            ensure!(
                lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi,
                Config,
                "{name} must satisfy 0 < min <= max, got [{lo}, {hi}]"
            );
        }
        ensure!(
            self.center_jitter.is_finite() && self.center_jitter >= 0.0,
            Config,
            "center_jitter must be a finite non-negative number"
        );
        ensure!(
            self.noise_std.is_finite() && self.noise_std >= 0.0,
            Config,
            "noise_std must be a finite non-negative number"
        );
        let levels = self.intensity_levels.by_label();
        for (i, &a) in levels.iter().enumerate() {
            ensure!((0.0..=1.0).contains(&a), Config, "intensity level {a} outside [0, 1]");
            for &b in &levels[i + 1..] {
                ensure!(a != b, Config, "intensity levels must be pairwise distinct ({a} repeated)");
            }
        }
        Ok(())
    }
}

/// Exact pixel counts of the three anatomical labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionAreas {
    pub lv_area: u64,
    pub myo_area: u64,
    pub rv_area: u64,
}

impl RegionAreas {
    pub fn to_array(self) -> [f64; 3] {
        [self.lv_area as f64, self.myo_area as f64, self.rv_area as f64]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image: Array2<f32>,
    pub region_mask: Array2<u8>,
    pub attributes: RegionAreas,
}

/// Continuous shape parameters of one phantom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomGeometry {
    /// (x, y) in pixel coordinates; pixel (row, col) sits at (col, row).
    pub center: (f64, f64),
    pub lv_radius: f64,
    pub myo_thickness: f64,
    pub rv_scale: f64,
}

impl PhantomGeometry {
    pub fn outer_radius(&self) -> f64 {
        self.lv_radius + self.myo_thickness
    }

    fn rv_disk(&self) -> ((f64, f64), f64) {
        let outer = self.outer_radius();
        ((self.center.0 - 0.9 * outer, self.center.1), self.rv_scale * outer)
    }

    /// Label of the pixel whose coordinates are `(x, y)`.
    pub fn label_at(&self, x: f64, y: f64) -> u8 {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let d2 = dx * dx + dy * dy;
        let outer = self.outer_radius();
        if d2 <= self.lv_radius * self.lv_radius {
            return LABEL_LV;
        }
        if d2 <= outer * outer {
            return LABEL_MYO;
        }
        let ((rx, ry), rr) = self.rv_disk();
        let (ex, ey) = (x - rx, y - ry);
        if ex * ex + ey * ey <= rr * rr {
            LABEL_RV
        } else {
            LABEL_BACKGROUND
        }
    }

    pub fn rasterize(&self, size: usize) -> Array2<u8> {
        Array2::from_shape_fn((size, size), |(row, col)| self.label_at(col as f64, row as f64))
    }
}

/// Renders a label map with the given gray levels (no noise).
pub fn render(mask: ArrayView2<u8>, levels: &IntensityLevels) -> Array2<f32> {
    let by_label = levels.by_label();
    mask.mapv(|l| by_label[usize::from(l)] as f32)
}

/// Per-label pixel counts for labels 1..=3.
pub fn compute_attributes(region_mask: ArrayView2<u8>) -> Result<RegionAreas> {
    let mut counts = [0u64; 4];
    for &label in region_mask.iter() {
        match counts.get_mut(usize::from(label)) {
            Some(c) => *c += 1,
            None => return Err(Error::Data(format!("unknown region label {label} in mask"))),
        }
    }
    Ok(RegionAreas {
        lv_area: counts[1],
        myo_area: counts[2],
        rv_area: counts[3],
    })
}

fn sample_range<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws the geometry of sample `index` from its own substream.
pub fn sample_geometry(spec: &PhantomSpec, index: u64) -> PhantomGeometry {
    let mut rng = substream(spec.seed, "phantom.geometry", index);
    let half = spec.image_size as f64 / 2.0;
    let jitter = spec.center_jitter;
    let offset = |rng: &mut crate::rng::StreamRng| {
        if jitter > 0.0 {
            rng.random_range(-jitter..=jitter)
        } else {
            0.0
        }
    };
    let cx = half + offset(&mut rng);
    let cy = half + offset(&mut rng);
    PhantomGeometry {
        center: (cx, cy),
        lv_radius: sample_range(&mut rng, spec.lv_radius_range),
        myo_thickness: sample_range(&mut rng, spec.myo_thickness_range),
        rv_scale: sample_range(&mut rng, spec.rv_scale_range),
    }
}

/// Renders one sample, adding clipped Gaussian noise from the sample's substream.
pub fn render_sample(spec: &PhantomSpec, geometry: &PhantomGeometry, index: u64) -> Result<LabeledSample> {
    let mask = geometry.rasterize(spec.image_size);
    let mut image = render(mask.view(), &spec.intensity_levels);
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = substream(spec.seed, "phantom.noise", index);
        image.mapv_inplace(|v| (f64::from(v) + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32);
    }
    let attributes = compute_attributes(mask.view())?;
    Ok(LabeledSample {
        image,
        region_mask: mask,
        attributes,
    })
}

pub fn generate_phantom(spec: &PhantomSpec, n: usize) -> Result<Vec<LabeledSample>> {
    spec.validate()?;
    ensure!(n >= 1, Config, "phantom count must be at least 1");
    (0..n as u64)
        .map(|i| render_sample(spec, &sample_geometry(spec, i), i))
        .collect()
}

/// Assigns each pixel of a (possibly noisy or decoded) image the label whose
/// gray level is nearest; used to re-measure areas on generated images.
pub fn segment_by_levels(image: ArrayView2<f32>, levels: &IntensityLevels) -> Array2<u8> {
    let by_label = levels.by_label();
    image.mapv(|v| {
        let v = f64::from(v);
        let mut best = 0u8;
        let mut best_d = f64::INFINITY;
        for (label, &level) in by_label.iter().enumerate() {
            let d = (v - level).abs();
            if d < best_d {
                best_d = d;
                best = label as u8;
            }
        }
        best
    })
}

/// Disease-analog classes, ordered as the ACDC groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiseaseClass {
    Nor = 0,
    Minf = 1,
    Dcm = 2,
    Hcm = 3,
    Arv = 4,
}

impl DiseaseClass {
    pub const ALL: [DiseaseClass; 5] = [
        DiseaseClass::Nor,
        DiseaseClass::Minf,
        DiseaseClass::Dcm,
        DiseaseClass::Hcm,
        DiseaseClass::Arv,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            DiseaseClass::Nor => "NOR",
            DiseaseClass::Minf => "MINF",
            DiseaseClass::Dcm => "DCM",
            DiseaseClass::Hcm => "HCM",
            DiseaseClass::Arv => "ARV",
        }
    }
}

/// Linear-interpolated percentile (`q` in [0, 100]) of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Rule-based labels: HCM-like when myo_area is above its 80th percentile,
/// DCM-like for lv_area above its 80th, aRV-like for rv_area above its 80th,
/// MINF-like when lv_area is above its 70th and myo_area below its 30th,
/// NOR otherwise. Earlier rules win.
pub fn assign_classes(areas: &[RegionAreas]) -> Vec<DiseaseClass> {
    let lv: Vec<f64> = areas.iter().map(|a| a.lv_area as f64).collect();
    let myo: Vec<f64> = areas.iter().map(|a| a.myo_area as f64).collect();
    let rv: Vec<f64> = areas.iter().map(|a| a.rv_area as f64).collect();
    let (myo80, lv80, rv80) = (percentile(&myo, 80.0), percentile(&lv, 80.0), percentile(&rv, 80.0));
    let (lv70, myo30) = (percentile(&lv, 70.0), percentile(&myo, 30.0));
    areas
        .iter()
        .map(|a| {
            let (l, m, r) = (a.lv_area as f64, a.myo_area as f64, a.rv_area as f64);
            if m > myo80 {
                DiseaseClass::Hcm
            } else if l > lv80 {
                DiseaseClass::Dcm
            } else if r > rv80 {
                DiseaseClass::Arv
            } else if l > lv70 && m < myo30 {
                DiseaseClass::Minf
            } else {
                DiseaseClass::Nor
            }
        })
        .collect()
}

/// Binary task: normal (0) versus any pathology (1).
pub fn binary_labels(classes: &[DiseaseClass]) -> Vec<usize> {
    classes.iter().map(|&c| usize::from(c != DiseaseClass::Nor)).collect()
}
