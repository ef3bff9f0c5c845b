//! Rigid poses, C-arm camera views, AP/lateral view construction and
//! randomized view perturbation.

use nalgebra::{Matrix3, Rotation3, Unit};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

const ORTHO_TOL: f64 = 1e-6;

/// Rotation from intrinsic X-Y-Z Euler angles in degrees: `Rx * Ry * Rz`.
pub fn rotation_xyz_deg(angles: [f64; 3]) -> Rotation3<f64> {
    let rx = Rotation3::from_axis_angle(&Vec3::x_axis(), angles[0].to_radians());
    let ry = Rotation3::from_axis_angle(&Vec3::y_axis(), angles[1].to_radians());
    let rz = Rotation3::from_axis_angle(&Vec3::z_axis(), angles[2].to_radians());
    rx * ry * rz
}

/// Inverse of [`rotation_xyz_deg`]. Returns angles in degrees with the
/// middle angle in [-90, 90].
pub fn xyz_deg_from_rotation(r: &Rotation3<f64>) -> [f64; 3] {
    let m = r.matrix();
    // R = Rx Ry Rz  =>  m[(0,2)] = sin(b)
    let sb = m[(0, 2)].clamp(-1.0, 1.0);
    let b = sb.asin();
    let (a, c) = if sb.abs() < 1.0 - 1e-12 {
        (
            (-m[(1, 2)]).atan2(m[(2, 2)]),
            (-m[(0, 1)]).atan2(m[(0, 0)]),
        )
    } else {
        // gimbal lock: fold everything into the first angle
        (m[(2, 1)].atan2(m[(1, 1)]), 0.0)
    };
    [a.to_degrees(), b.to_degrees(), c.to_degrees()]
}

/// Unsigned angle between two vectors in degrees, well conditioned near 0.
pub fn angle_between_deg(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

/// Rigid transform mapping local coordinates to world (`world <- local`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.inverse();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Local +z axis in world coordinates.
    pub fn z_axis(&self) -> Vec3 {
        self.rotation.matrix().column(2).into_owned()
    }

    pub fn is_orthonormal(&self) -> bool {
        let m: &Matrix3<f64> = self.rotation.matrix();
        let gram = m.transpose() * m;
        (gram - Matrix3::identity()).abs().max() < ORTHO_TOL && (m.determinant() - 1.0).abs() < ORTHO_TOL
    }
}

/// C-arm intrinsics shared by AP and lateral views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub source_to_detector_mm: f64,
    pub source_to_target_mm: f64,
    pub detector_mm: [f64; 2],
    pub image_px: [usize; 2],
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            source_to_detector_mm: 1000.0,
            source_to_target_mm: 700.0,
            detector_mm: [300.0, 300.0],
            image_px: [384, 384],
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.source_to_detector_mm > 0.0
            && self.source_to_target_mm > 0.0
            && self.source_to_target_mm < self.source_to_detector_mm
            && self.detector_mm.iter().all(|&d| d > 0.0)
            && self.image_px.iter().all(|&p| p > 0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid camera config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewTag {
    Ap,
    Lateral,
}

impl ViewTag {
    pub fn short(self) -> &'static str {
        match self {
            ViewTag::Ap => "ap",
            ViewTag::Lateral => "lat",
        }
    }
}

/// Perspective projection geometry of a single X-ray view.
///
/// Pixel coordinates are continuous: `(0,0)` is the corner of the first
/// pixel and pixel `(i,j)` has its centre at `(i+0.5, j+0.5)`. Column index
/// grows along `u`, row index along `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub tag: ViewTag,
    pub source: Vec3,
    pub detector_center: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub principal: Vec3,
    pub detector_mm: [f64; 2],
    pub image_px: [usize; 2],
    /// Isocentre the view is aimed at; perturbations rotate about it.
    pub target: Vec3,
}

fn detector_basis(principal: &Vec3) -> (Vec3, Vec3) {
    // rows run caudal (image up = superior, +z) unless the beam is vertical
    let up_hint = if principal.z.abs() < 0.9 {
        Vec3::z()
    } else {
        Vec3::y()
    };
    let up = (up_hint - principal * principal.dot(&up_hint)).normalize();
    let v = -up;
    let u = v.cross(principal).normalize();
    (u, v)
}

impl CameraView {
    /// Builds a view looking along `principal` at `target`.
    pub fn looking_at(tag: ViewTag, principal: Vec3, target: Vec3, config: &CameraConfig) -> Result<Self> {
        config.validate()?;
        let n = principal.norm();
        if !(n > 1e-9) || !n.is_finite() {
            return Err(Error::Degenerate("view direction has zero length".into()));
        }
        let principal = principal / n;
        let (u, v) = detector_basis(&principal);
        let source = target - principal * config.source_to_target_mm;
        Ok(Self {
            tag,
            source,
            detector_center: source + principal * config.source_to_detector_mm,
            u,
            v,
            principal,
            detector_mm: config.detector_mm,
            image_px: config.image_px,
            target,
        })
    }

    pub fn source_to_detector(&self) -> f64 {
        (self.detector_center - self.source).dot(&self.principal)
    }

    pub fn is_valid(&self) -> bool {
        let unit = |a: &Vec3| (a.norm() - 1.0).abs() < ORTHO_TOL;
        unit(&self.u)
            && unit(&self.v)
            && unit(&self.principal)
            && self.u.dot(&self.v).abs() < ORTHO_TOL
            && self.u.dot(&self.principal).abs() < ORTHO_TOL
            && self.v.dot(&self.principal).abs() < ORTHO_TOL
            && self.source_to_detector() > 0.0
    }

    /// World position on the detector of a continuous pixel coordinate.
    pub fn detector_point(&self, px: f64, py: f64) -> Vec3 {
        let su = (px / self.image_px[0] as f64 - 0.5) * self.detector_mm[0];
        let sv = (py / self.image_px[1] as f64 - 0.5) * self.detector_mm[1];
        self.detector_center + self.u * su + self.v * sv
    }

    /// Source position and unit direction of the ray through a pixel
    /// coordinate.
    pub fn pixel_ray(&self, px: f64, py: f64) -> (Vec3, Vec3) {
        let d = self.detector_point(px, py) - self.source;
        (self.source, d.normalize())
    }

    /// Perspective projection to continuous pixel coordinates.
    pub fn project_point(&self, p: &Vec3) -> Result<[f64; 2]> {
        let rel = p - self.source;
        let depth = rel.dot(&self.principal);
        if !(depth > 1e-9) {
            return Err(Error::BehindSource);
        }
        let hit = self.source + rel * (self.source_to_detector() / depth);
        let off = hit - self.detector_center;
        Ok([
            (off.dot(&self.u) / self.detector_mm[0] + 0.5) * self.image_px[0] as f64,
            (off.dot(&self.v) / self.detector_mm[1] + 0.5) * self.image_px[1] as f64,
        ])
    }

    /// Applies a perturbation: intrinsic XYZ rotation about the target
    /// centre, then translation (cm). Source and detector move rigidly.
    pub fn perturb(&self, p: &ViewPerturbation) -> Result<Self> {
        p.validate()?;
        let r = rotation_xyz_deg(p.rotation_deg);
        let shift = Vec3::from(p.translation_cm) * 10.0;
        let about = |x: &Vec3| self.target + r * (x - self.target) + shift;
        Ok(Self {
            tag: self.tag,
            source: about(&self.source),
            detector_center: about(&self.detector_center),
            u: r * self.u,
            v: r * self.v,
            principal: r * self.principal,
            detector_mm: self.detector_mm,
            image_px: self.image_px,
            target: self.target + shift,
        })
    }
}

/// AP view along the normalised mean of the two pedicle axes.
pub fn make_ap_view(left_axis: &Vec3, right_axis: &Vec3, target: Vec3, config: &CameraConfig) -> Result<CameraView> {
    let mean = left_axis + right_axis;
    if mean.norm() < 1e-9 {
        return Err(Error::Degenerate(
            "pedicle axes are anti-parallel; AP direction undefined".into(),
        ));
    }
    CameraView::looking_at(ViewTag::Ap, mean, target, config)
}

/// Lateral view along the patient-right direction.
pub fn make_lateral_view(patient_right: &Vec3, target: Vec3, config: &CameraConfig) -> Result<CameraView> {
    CameraView::looking_at(ViewTag::Lateral, *patient_right, target, config)
}

pub const MAX_ROTATION_OFFSET_DEG: f64 = 5.0;
pub const MAX_TRANSLATION_OFFSET_CM: f64 = 2.5;

/// Random C-arm offset: rotation in degrees, translation in centimetres.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewPerturbation {
    pub rotation_deg: [f64; 3],
    pub translation_cm: [f64; 3],
}

impl ViewPerturbation {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_within_bounds(&self) -> bool {
        self.rotation_deg
            .iter()
            .all(|r| r.is_finite() && r.abs() <= MAX_ROTATION_OFFSET_DEG)
            && self
                .translation_cm
                .iter()
                .all(|t| t.is_finite() && t.abs() <= MAX_TRANSLATION_OFFSET_CM)
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_within_bounds() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "view perturbation {self:?} exceeds ±{MAX_ROTATION_OFFSET_DEG}° / ±{MAX_TRANSLATION_OFFSET_CM} cm"
            )))
        }
    }

    /// Uniform sample inside the bounds.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut p = Self::zero();
        for r in &mut p.rotation_deg {
            *r = rng.random_range(-MAX_ROTATION_OFFSET_DEG..=MAX_ROTATION_OFFSET_DEG);
        }
        for t in &mut p.translation_cm {
            *t = rng.random_range(-MAX_TRANSLATION_OFFSET_CM..=MAX_TRANSLATION_OFFSET_CM);
        }
        p
    }
}

/// Shortest-arc rotation taking unit vector `from` onto unit vector `to`.
pub fn rotation_between(from: &Vec3, to: &Vec3) -> Rotation3<f64> {
    match Rotation3::rotation_between(from, to) {
        Some(r) => r,
        None => {
            // anti-parallel: half turn about any perpendicular axis
            let perp = if from.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            let axis = Unit::new_normalize(from.cross(&perp));
            Rotation3::from_axis_angle(&axis, std::f64::consts::PI)
        }
    }
}
