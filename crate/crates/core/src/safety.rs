//! Cortical breach assessment of a cylindrical cannula against a vertebra
//! mesh, and the A–E breach grading.
//!
//! Grades follow breach depth of the cannula surface beyond the cortical
//! wall: A no breach, B ≤ 2 mm, C ≤ 4 mm, D ≤ 6 mm, E beyond 6 mm or
//! extra-pedicular. Exact threshold values take the better letter.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::mesh::{perpendicular_basis, VertebraMesh};
use crate::planner::Trajectory;
use crate::{Error, Result, Vec3};

/// Outside samples closer than this to the surface count as contact.
pub const CONTACT_TOLERANCE_MM: f64 = 1e-6;
/// Slack on grade threshold comparisons so exact 2/4/6 mm values survive
/// floating-point round-off.
pub const GRADE_TOLERANCE_MM: f64 = 1e-9;
pub const GRADE_THRESHOLDS_MM: [f64; 3] = [2.0, 4.0, 6.0];
/// Cannula radius used for grading (2 mm diameter).
pub const DEFAULT_CANNULA_RADIUS_MM: f64 = 1.0;
const MAX_ENTRY_TAN: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grade {
    A,
    B,
    C,
    D,
    E,
}

impl Grade {
    pub fn from_breach(max_breach_mm: f64, extra_pedicular: bool) -> Grade {
        let [b, c, d] = GRADE_THRESHOLDS_MM;
        if extra_pedicular {
            Grade::E
        } else if max_breach_mm <= 0.0 {
            Grade::A
        } else if max_breach_mm <= b + GRADE_TOLERANCE_MM {
            Grade::B
        } else if max_breach_mm <= c + GRADE_TOLERANCE_MM {
            Grade::C
        } else if max_breach_mm <= d + GRADE_TOLERANCE_MM {
            Grade::D
        } else {
            Grade::E
        }
    }

    /// Grades A and B are clinically acceptable.
    pub fn is_acceptable(self) -> bool {
        matches!(self, Grade::A | Grade::B)
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub axial_step_mm: f64,
    pub circumferential: usize,
    /// How far before the trajectory entry the axis is scanned for the first
    /// mesh crossing.
    pub approach_mm: f64,
    pub profile_step_mm: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            axial_step_mm: 0.5,
            circumferential: 16,
            approach_mm: 20.0,
            profile_step_mm: 0.5,
        }
    }
}

impl SamplingConfig {
    fn validate(&self) -> Result<()> {
        if self.axial_step_mm > 0.0
            && self.profile_step_mm > 0.0
            && self.circumferential >= 1
            && self.approach_mm >= 0.0
        {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid sampling config {self:?}")))
        }
    }
}

/// One axis sample after the first mesh entry. `distance_mm` is `None`
/// where the axis lies outside the mesh (a breach marker).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub arc_mm: f64,
    pub distance_mm: Option<f64>,
}

/// Mean wall distance over the inside samples, `None` if there are none.
pub fn mean_wall_distance(profile: &[ProfileSample]) -> Option<f64> {
    let inside: Vec<f64> = profile.iter().filter_map(|s| s.distance_mm).collect();
    if inside.is_empty() {
        None
    } else {
        Some(inside.iter().sum::<f64>() / inside.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreachReport {
    pub max_breach_mm: f64,
    pub breach_location_mm: Option<Vec3>,
    pub extra_pedicular: bool,
    pub grade: Grade,
    pub wall_profile: Vec<ProfileSample>,
}

impl BreachReport {
    pub fn mean_wall_distance(&self) -> Option<f64> {
        mean_wall_distance(&self.wall_profile)
    }
}

/// Where the trajectory axis first enters the mesh. `arc_mm` is measured
/// from the trajectory entry point along its direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshEntry {
    pub arc_mm: f64,
    pub point: Vec3,
    /// Inward surface normal at the entry, `None` when the scan started inside.
    pub inward_normal: Option<Vec3>,
}

/// First crossing of the axis into the mesh, scanning from
/// `entry - approach * dir` to the tip.
pub fn first_entry(mesh: &VertebraMesh, traj: &Trajectory, approach_mm: f64) -> Option<MeshEntry> {
    let start = traj.entry - traj.direction * approach_mm;
    if mesh.contains(&start) {
        return Some(MeshEntry {
            arc_mm: -approach_mm,
            point: start,
            inward_normal: None,
        });
    }
    let (t, tri) = mesh.first_entering_hit(&start, &traj.direction, approach_mm + traj.depth)?;
    Some(MeshEntry {
        arc_mm: t - approach_mm,
        point: start + traj.direction * t,
        inward_normal: Some(-mesh.triangle_normal(tri)),
    })
}

/// Axis wall-distance profile strictly after the first mesh entry.
pub fn wall_distance_profile(mesh: &VertebraMesh, traj: &Trajectory, step_mm: f64) -> Result<Vec<ProfileSample>> {
    profile_with(mesh, traj, step_mm, SamplingConfig::default().approach_mm)
}

fn profile_with(mesh: &VertebraMesh, traj: &Trajectory, step_mm: f64, approach_mm: f64) -> Result<Vec<ProfileSample>> {
    if !(step_mm > 0.0) {
        return Err(Error::invalid("profile step must be > 0"));
    }
    let Some(entry) = first_entry(mesh, traj, approach_mm) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    let mut k = 1usize;
    loop {
        let arc = entry.arc_mm + k as f64 * step_mm;
        if arc > traj.depth + 1e-12 {
            break;
        }
        let sd = mesh.signed_distance(&traj.point_at(arc));
        out.push(ProfileSample {
            arc_mm: arc,
            distance_mm: (sd < 0.0).then_some(-sd),
        });
        k += 1;
    }
    Ok(out)
}

/// Breach assessment of a cannula of `radius_mm` along `traj`.
pub fn assess_cannula(
    mesh: &VertebraMesh,
    traj: &Trajectory,
    radius_mm: f64,
    sampling: &SamplingConfig,
) -> Result<BreachReport> {
    if !(traj.depth > 0.0) {
        return Err(Error::invalid("trajectory has zero length"));
    }
    if !(radius_mm > 0.0) {
        return Err(Error::invalid("cannula radius must be > 0"));
    }
    sampling.validate()?;
    let Some(entry) = first_entry(mesh, traj, sampling.approach_mm) else {
        return Ok(BreachReport {
            max_breach_mm: 0.0,
            breach_location_mm: None,
            extra_pedicular: true,
            grade: Grade::E,
            wall_profile: Vec::new(),
        });
    };
    let wall_profile = profile_with(mesh, traj, sampling.profile_step_mm, sampling.approach_mm)?;

    // the shaft crossing the entry cortex at incidence θ spans r·tanθ axially,
    // plus one radius for surface curvature around the entry hole
    let entry_zone = entry
        .inward_normal
        .map(|n| {
            let cos = n.dot(&traj.direction).clamp(1e-12, 1.0);
            radius_mm * (1.0 + ((1.0 - cos * cos).sqrt() / cos).min(MAX_ENTRY_TAN))
        })
        .unwrap_or(0.0);

    let (e1, e2) = perpendicular_basis(&traj.direction);
    let ring: Vec<Vec3> = (0..sampling.circumferential)
        .map(|i| {
            let th = 2.0 * std::f64::consts::PI * i as f64 / sampling.circumferential as f64;
            (e1 * th.cos() + e2 * th.sin()) * radius_mm
        })
        .collect();

    let mut max_breach = 0.0;
    let mut location = None;
    let first = entry.arc_mm + entry_zone;
    let mut axial: Vec<f64> = Vec::new();
    if first <= traj.depth {
        let span = traj.depth - first;
        let n = (span / sampling.axial_step_mm).ceil() as usize;
        for k in 0..=n {
            axial.push((first + k as f64 * sampling.axial_step_mm).min(traj.depth));
        }
        axial.dedup();
    }
    for &s in &axial {
        let c = traj.point_at(s);
        for off in &ring {
            let p = c + off;
            if mesh.contains(&p) {
                continue;
            }
            let d = mesh.distance(&p);
            if d > CONTACT_TOLERANCE_MM && d > max_breach {
                max_breach = d;
                location = Some(p);
            }
        }
    }

    let extra_pedicular = if mesh.pedicle_regions.is_empty() {
        false
    } else {
        let step = sampling.axial_step_mm;
        let n = ((traj.depth - entry.arc_mm) / step).ceil().max(0.0) as usize;
        !(0..=n).any(|k| {
            let p = traj.point_at((entry.arc_mm + k as f64 * step).min(traj.depth));
            mesh.pedicle_regions.iter().any(|r| r.contains(&p))
        })
    };

    Ok(BreachReport {
        max_breach_mm: max_breach,
        breach_location_mm: location,
        extra_pedicular,
        grade: Grade::from_breach(max_breach, extra_pedicular),
        wall_profile,
    })
}
