//! Monoenergetic DRR rendering with an analytic cannula, observation sets,
//! and compositing of simulated cannulas over real radiographs.
//!
//! Volume line integrals use uniform midpoint sampling between the slab
//! entry and exit of each ray. Display values are an auto-windowed negative
//! log of the transmitted intensity, so only geometry and ordering of gray
//! levels are meaningful, not absolute values.

use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::geometry::{CameraView, Pose, ViewTag};
use crate::imageio::{encode_png16, GrayImage};
use crate::volume::VoxelVolume;
use crate::{Error, Result, Vec3};

pub const DISPLAY_EPSILON: f64 = 1e-12;
pub const DEFAULT_CANNULA_LENGTH_MM: f64 = 140.0;
pub const DEFAULT_CANNULA_RADIUS_MM: f64 = 1.0;
pub const DEFAULT_CANNULA_ATTENUATION: f64 = 2.0;
pub const DEFAULT_STEP_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Post-processed radiograph, row-major, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RadiographImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
    pub tag: ViewTag,
    /// Rectangle in the parent image, for crops.
    pub crop: Option<CropRect>,
}

impl RadiographImage {
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn is_valid(&self) -> bool {
        self.pixels.len() == self.width * self.height
            && self.pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p))
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.clone(),
        }
    }

    pub fn from_gray(img: GrayImage, tag: ViewTag) -> Self {
        Self {
            width: img.width,
            height: img.height,
            pixels: img.pixels,
            tag,
            crop: None,
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_png16(&self.to_gray())
    }
}

/// Rigid cannula. The pose frame sits at the tip with local +z along the
/// insertion direction; the shaft extends `length_mm` behind the tip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CannulaModel {
    pub pose: Pose,
    pub length_mm: f64,
    pub radius_mm: f64,
    pub attenuation_per_mm: f64,
}

impl CannulaModel {
    pub fn new(pose: Pose, length_mm: f64, radius_mm: f64, attenuation_per_mm: f64) -> Result<Self> {
        if !(length_mm > 0.0) || !(radius_mm > 0.0) || !(attenuation_per_mm >= 0.0) {
            return Err(Error::invalid(format!(
                "cannula needs length > 0, radius > 0, attenuation >= 0 (got {length_mm}, {radius_mm}, {attenuation_per_mm})"
            )));
        }
        Ok(Self {
            pose,
            length_mm,
            radius_mm,
            attenuation_per_mm,
        })
    }

    pub fn with_pose(pose: Pose) -> Self {
        Self {
            pose,
            length_mm: DEFAULT_CANNULA_LENGTH_MM,
            radius_mm: DEFAULT_CANNULA_RADIUS_MM,
            attenuation_per_mm: DEFAULT_CANNULA_ATTENUATION,
        }
    }

    pub fn tip(&self) -> Vec3 {
        self.pose.translation
    }

    pub fn hub(&self) -> Vec3 {
        self.tip() - self.pose.z_axis() * self.length_mm
    }

    /// Length of the ray `origin + t·dir`, `t ∈ [0, tmax]`, inside the capped
    /// cylinder. `dir` must be unit length.
    pub fn chord(&self, origin: &Vec3, dir: &Vec3, tmax: f64) -> f64 {
        cylinder_chord(&self.hub(), &self.pose.z_axis(), self.length_mm, self.radius_mm, origin, dir, tmax)
    }
}

/// Chord of a ray through a capped cylinder starting at `base`, unit `axis`.
pub fn cylinder_chord(base: &Vec3, axis: &Vec3, length: f64, radius: f64, origin: &Vec3, dir: &Vec3, tmax: f64) -> f64 {
    let m = origin - base;
    let md = m.dot(axis);
    let dd = dir.dot(axis);
    let mp = m - axis * md;
    let dp = dir - axis * dd;
    let a = dp.dot(&dp);
    let b = 2.0 * mp.dot(&dp);
    let c = mp.dot(&mp) - radius * radius;

    let (mut lo, mut hi) = (0.0f64, tmax);
    if a < 1e-15 {
        if c > 0.0 {
            return 0.0;
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc <= 0.0 {
            return 0.0;
        }
        let s = disc.sqrt();
        lo = lo.max((-b - s) / (2.0 * a));
        hi = hi.min((-b + s) / (2.0 * a));
    }
    if dd.abs() < 1e-15 {
        if md < 0.0 || md > length {
            return 0.0;
        }
    } else {
        let t0 = (0.0 - md) / dd;
        let t1 = (length - md) / dd;
        lo = lo.max(t0.min(t1));
        hi = hi.min(t0.max(t1));
    }
    (hi - lo).max(0.0)
}

/// Parametric interval of a ray inside an axis-aligned box.
fn clip_to_box(o: &Vec3, d: &Vec3, lo: &Vec3, hi: &Vec3, tmax: f64) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, tmax);
    for k in 0..3 {
        if d[k].abs() < 1e-300 {
            if o[k] < lo[k] || o[k] > hi[k] {
                return None;
            }
            continue;
        }
        let a = (lo[k] - o[k]) / d[k];
        let b = (hi[k] - o[k]) / d[k];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t1 > t0).then_some((t0, t1))
}

/// Attenuation line integral along `origin + t·dir` for `t ∈ [0, tmax]`.
pub fn ray_integral(v: &VoxelVolume, origin: &Vec3, dir: &Vec3, tmax: f64, step_mm: f64) -> f64 {
    let (lo, hi) = v.bounds();
    let Some((t0, t1)) = clip_to_box(origin, dir, &lo, &hi, tmax) else {
        return 0.0;
    };
    let n = ((t1 - t0) / step_mm).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    let inv = v.spacing().map(|s| 1.0 / s);
    let rel = (origin - v.origin()).component_mul(&inv);
    let step = dir.component_mul(&inv);
    let mut sum = 0.0;
    for k in 0..n {
        let t = t0 + (k as f64 + 0.5) * h;
        let c = rel + step * t;
        sum += v.sample_index(c.x, c.y, c.z);
    }
    sum * h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Sampling step as a fraction of the smallest voxel spacing.
    pub step_fraction: f64,
    pub exec: Exec,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            step_fraction: DEFAULT_STEP_FRACTION,
            exec: Exec::default(),
        }
    }
}

/// Per-pixel volume line integrals for one view; the cannula is added later.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub view: CameraView,
    pub integrals: Vec<f64>,
}

impl Projection {
    pub fn render(v: &VoxelVolume, view: &CameraView, opts: &RenderOptions) -> Result<Self> {
        if !view.is_valid() {
            return Err(Error::Degenerate("camera view is not orthonormal".into()));
        }
        if v.is_empty() {
            return Err(Error::invalid("volume is empty"));
        }
        if !(opts.step_fraction > 0.0) {
            return Err(Error::invalid("render step must be > 0"));
        }
        let step = v.min_spacing() * opts.step_fraction;
        let [w, h] = view.image_px;
        let rows = opts.exec.map_range(h, |j| {
            (0..w)
                .map(|i| {
                    let (o, d, len) = pixel_segment(view, i, j);
                    ray_integral(v, &o, &d, len, step)
                })
                .collect::<Vec<f64>>()
        });
        Ok(Self {
            view: *view,
            integrals: rows.concat(),
        })
    }

    /// Volume plus cannula chord integrals.
    pub fn with_cannulas(&self, cannulas: &[CannulaModel], exec: Exec) -> Vec<f64> {
        if cannulas.is_empty() {
            return self.integrals.clone();
        }
        let [w, h] = self.view.image_px;
        let rows = exec.map_range(h, |j| {
            (0..w)
                .map(|i| self.integrals[j * w + i] + cannula_integral(&self.view, cannulas, i, j))
                .collect::<Vec<f64>>()
        });
        rows.concat()
    }
}

fn pixel_segment(view: &CameraView, i: usize, j: usize) -> (Vec3, Vec3, f64) {
    let end = view.detector_point(i as f64 + 0.5, j as f64 + 0.5);
    let d = end - view.source;
    let len = d.norm();
    (view.source, d / len, len)
}

fn cannula_integral(view: &CameraView, cannulas: &[CannulaModel], i: usize, j: usize) -> f64 {
    let (o, d, len) = pixel_segment(view, i, j);
    cannulas
        .iter()
        .map(|c| c.chord(&o, &d, len) * c.attenuation_per_mm)
        .sum()
}

/// Auto-windowed negative log of `exp(-integral)` over the given integrals.
pub fn window(integrals: &[f64]) -> Vec<f32> {
    let cap = -DISPLAY_EPSILON.ln();
    let q: Vec<f64> = integrals.iter().map(|&x| x.min(cap)).collect();
    let lo = q.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    q.iter()
        .map(|&x| {
            if span > 0.0 {
                ((x - lo) / span).clamp(0.0, 1.0) as f32
            } else {
                0.0
            }
        })
        .collect()
}

/// Full-frame render of the volume and optional cannula.
pub fn render(v: &VoxelVolume, view: &CameraView, cannula: Option<&CannulaModel>) -> Result<RadiographImage> {
    let opts = RenderOptions::default();
    let p = Projection::render(v, view, &opts)?;
    Ok(full_image(&p, cannula.map(std::slice::from_ref).unwrap_or(&[]), opts.exec))
}

fn full_image(p: &Projection, cannulas: &[CannulaModel], exec: Exec) -> RadiographImage {
    let ints = p.with_cannulas(cannulas, exec);
    let [w, h] = p.view.image_px;
    RadiographImage {
        width: w,
        height: h,
        pixels: window(&ints),
        tag: p.view.tag,
        crop: None,
    }
}

/// Crop rectangle of `crop_px` centred on the projection of `centroid`,
/// shifted to lie inside the image.
pub fn crop_rect(view: &CameraView, centroid: &Vec3, crop_px: [usize; 2]) -> Result<CropRect> {
    let [w, h] = view.image_px;
    if crop_px[0] == 0 || crop_px[1] == 0 || crop_px[0] > w || crop_px[1] > h {
        return Err(Error::invalid(format!("crop {crop_px:?} does not fit image {w}x{h}")));
    }
    let [px, py] = view.project_point(centroid)?;
    if !(0.0..=w as f64).contains(&px) || !(0.0..=h as f64).contains(&py) {
        return Err(Error::invalid(format!(
            "crop centre projects outside the image at ({px:.1}, {py:.1})"
        )));
    }
    let place = |c: f64, size: usize, full: usize| -> usize {
        let start = (c - size as f64 / 2.0).round();
        start.clamp(0.0, (full - size) as f64) as usize
    };
    Ok(CropRect {
        x: place(px, crop_px[0], w),
        y: place(py, crop_px[1], h),
        width: crop_px[0],
        height: crop_px[1],
    })
}

fn crop_image(p: &Projection, integrals: &[f64], rect: CropRect) -> RadiographImage {
    let w = p.view.image_px[0];
    let mut sub = Vec::with_capacity(rect.width * rect.height);
    for j in rect.y..rect.y + rect.height {
        sub.extend_from_slice(&integrals[j * w + rect.x..j * w + rect.x + rect.width]);
    }
    RadiographImage {
        width: rect.width,
        height: rect.height,
        pixels: window(&sub),
        tag: p.view.tag,
        crop: Some(rect),
    }
}

/// Crop around `centroid`, windowed on its own pixels.
pub fn render_crop(
    v: &VoxelVolume,
    view: &CameraView,
    cannula: Option<&CannulaModel>,
    centroid: &Vec3,
    crop_px: [usize; 2],
) -> Result<RadiographImage> {
    let rect = crop_rect(view, centroid, crop_px)?;
    let opts = RenderOptions::default();
    let p = Projection::render(v, view, &opts)?;
    let ints = p.with_cannulas(cannula.map(std::slice::from_ref).unwrap_or(&[]), opts.exec);
    Ok(crop_image(&p, &ints, rect))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSubset {
    Both,
    ApOnly,
    LateralOnly,
}

/// Which images make up an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationConfig {
    pub views: ViewSubset,
    pub crops: bool,
    pub crop_px: [usize; 2],
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            views: ViewSubset::Both,
            crops: true,
            crop_px: [128, 128],
        }
    }
}

impl ObservationConfig {
    /// Observation slots in output order.
    pub fn kinds(&self) -> Vec<ObsKind> {
        let ap = self.views != ViewSubset::LateralOnly;
        let lat = self.views != ViewSubset::ApOnly;
        let mut out = Vec::new();
        if ap {
            out.push(ObsKind::Ap);
        }
        if lat {
            out.push(ObsKind::Lat);
        }
        if self.crops && ap {
            out.push(ObsKind::ApCrop);
        }
        if self.crops && lat {
            out.push(ObsKind::LatCrop);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsKind {
    Ap,
    Lat,
    ApCrop,
    LatCrop,
}

impl ObsKind {
    pub fn name(self) -> &'static str {
        match self {
            ObsKind::Ap => "ap",
            ObsKind::Lat => "lat",
            ObsKind::ApCrop => "ap_crop",
            ObsKind::LatCrop => "lat_crop",
        }
    }

    pub fn tag(self) -> ViewTag {
        match self {
            ObsKind::Ap | ObsKind::ApCrop => ViewTag::Ap,
            ObsKind::Lat | ObsKind::LatCrop => ViewTag::Lateral,
        }
    }

    pub fn is_crop(self) -> bool {
        matches!(self, ObsKind::ApCrop | ObsKind::LatCrop)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub kind: ObsKind,
    pub image: RadiographImage,
}

/// Renders observation sets for a fixed volume and view pair. Volume
/// projections are computed once; each call only adds the cannula.
#[derive(Debug, Clone)]
pub struct ObservationRenderer {
    config: ObservationConfig,
    exec: Exec,
    ap: Option<(Projection, CropRect)>,
    lat: Option<(Projection, CropRect)>,
}

impl ObservationRenderer {
    pub fn new(
        v: &VoxelVolume,
        ap_view: &CameraView,
        lat_view: &CameraView,
        centroid: &Vec3,
        config: ObservationConfig,
        opts: &RenderOptions,
    ) -> Result<Self> {
        let needs = config.kinds();
        let prep = |view: &CameraView, full: ObsKind| -> Result<Option<(Projection, CropRect)>> {
            if !needs.contains(&full) {
                return Ok(None);
            }
            let rect = if config.crops {
                crop_rect(view, centroid, config.crop_px)?
            } else {
                CropRect {
                    x: 0,
                    y: 0,
                    width: view.image_px[0],
                    height: view.image_px[1],
                }
            };
            Ok(Some((Projection::render(v, view, opts)?, rect)))
        };
        Ok(Self {
            config,
            exec: opts.exec,
            ap: prep(ap_view, ObsKind::Ap)?,
            lat: prep(lat_view, ObsKind::Lat)?,
        })
    }

    pub fn config(&self) -> &ObservationConfig {
        &self.config
    }

    pub fn render(&self, cannula: Option<&CannulaModel>) -> Vec<Observation> {
        let cannulas = cannula.map(std::slice::from_ref).unwrap_or(&[]);
        let ap = self.ap.as_ref().map(|(p, r)| (p, *r, p.with_cannulas(cannulas, self.exec)));
        let lat = self.lat.as_ref().map(|(p, r)| (p, *r, p.with_cannulas(cannulas, self.exec)));
        self.config
            .kinds()
            .into_iter()
            .map(|kind| {
                let (p, rect, ints) = match kind.tag() {
                    ViewTag::Ap => ap.as_ref(),
                    ViewTag::Lateral => lat.as_ref(),
                }
                .expect("projection prepared for every configured kind");
                let image = if kind.is_crop() {
                    crop_image(p, ints, *rect)
                } else {
                    let [w, h] = p.view.image_px;
                    RadiographImage {
                        width: w,
                        height: h,
                        pixels: window(ints),
                        tag: p.view.tag,
                        crop: None,
                    }
                };
                Observation { kind, image }
            })
            .collect()
    }
}

/// Multiplies a real radiograph by the cannula transmission along each
/// pixel ray of `view`.
pub fn blend_real(real: &RadiographImage, view: &CameraView, cannula: &CannulaModel) -> Result<RadiographImage> {
    blend_real_many(real, view, std::slice::from_ref(cannula))
}

pub fn blend_real_many(real: &RadiographImage, view: &CameraView, cannulas: &[CannulaModel]) -> Result<RadiographImage> {
    if !real.is_valid() {
        return Err(Error::invalid("real image must have values in [0, 1]"));
    }
    if [real.width, real.height] != view.image_px {
        return Err(Error::SizeMismatch {
            expected: view.image_px[0] * view.image_px[1],
            actual: real.width * real.height,
        });
    }
    let w = real.width;
    let pixels = real
        .pixels
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let mu = cannula_integral(view, cannulas, k % w, k / w);
            (p as f64 * (-mu).exp()) as f32
        })
        .collect();
    Ok(RadiographImage {
        pixels,
        ..real.clone()
    })
}
