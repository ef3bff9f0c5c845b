//! Candidate trajectory generation around annotated pedicle axes, safety
//! filtering, safest-candidate selection, and agreement metrics.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anatomy::{Level, PedicleRegion, Side};
use crate::exec::Exec;
use crate::geometry::angle_between_deg;
use crate::mesh::{perpendicular_basis, VertebraMesh};
use crate::safety::{assess_cannula, first_entry, Grade, SamplingConfig, DEFAULT_CANNULA_RADIUS_MM};
use crate::{Error, Result, Vec3};

/// Candidates whose mean axis-to-wall distance falls below this are unsafe.
pub const MIN_MEAN_WALL_DISTANCE_MM: f64 = 1.0;

/// A straight insertion line: starts at `entry`, runs `depth` mm along the
/// unit `direction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    #[serde(rename = "entry_mm")]
    pub entry: Vec3,
    pub direction: Vec3,
    #[serde(rename = "depth_mm")]
    pub depth: f64,
}

impl Trajectory {
    /// Normalises `direction`; rejects zero directions and non-positive depth.
    pub fn new(entry: Vec3, direction: Vec3, depth: f64) -> Result<Self> {
        let n = direction.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::invalid("trajectory direction has zero length"));
        }
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::invalid(format!("trajectory depth must be > 0, got {depth}")));
        }
        Ok(Self {
            entry,
            direction: direction / n,
            depth,
        })
    }

    pub fn tip(&self) -> Vec3 {
        self.point_at(self.depth)
    }

    pub fn point_at(&self, arc_mm: f64) -> Vec3 {
        self.entry + self.direction * arc_mm
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let t: Trajectory = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            what: "trajectory",
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Trajectory::new(t.entry, t.direction, t.depth)
    }
}

/// Reference pedicle entry for one vertebra side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedicleAnnotation {
    pub level: Level,
    pub side: Side,
    pub entry_mm: Vec3,
    pub axis: Vec3,
    pub depth_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pedicle_region: Option<PedicleRegion>,
}

impl PedicleAnnotation {
    pub fn validate(&self) -> Result<()> {
        if (self.axis.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "{} {} annotation axis is not unit length",
                self.level, self.side
            )));
        }
        if !(self.depth_mm > 0.0) {
            return Err(Error::invalid(format!(
                "{} {} annotation depth must be > 0",
                self.level, self.side
            )));
        }
        Ok(())
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            entry: self.entry_mm,
            direction: self.axis,
            depth: self.depth_mm,
        }
    }
}

/// Annotation file: `{"annotations": [...]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub annotations: Vec<PedicleAnnotation>,
}

impl AnnotationFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let f: AnnotationFile = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            what: "annotation file",
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        for a in &f.annotations {
            a.validate()?;
        }
        Ok(f)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("annotations serialize");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub half_extent_mm: f64,
    pub step_mm: f64,
    pub cannula_radius_mm: f64,
    pub sampling: SamplingConfig,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            half_extent_mm: 3.0,
            step_mm: 0.75,
            cannula_radius_mm: DEFAULT_CANNULA_RADIUS_MM,
            sampling: SamplingConfig::default(),
        }
    }
}

/// Parallel copies of the annotated axis with entries on a square grid in
/// the plane perpendicular to the axis. Row-major; the unshifted annotation
/// sits at the centre index.
pub fn generate_candidates(a: &PedicleAnnotation, half_extent_mm: f64, step_mm: f64) -> Result<Vec<Trajectory>> {
    if !(step_mm > 0.0) || !(half_extent_mm >= 0.0) {
        return Err(Error::invalid("candidate grid needs step > 0 and half-extent >= 0"));
    }
    a.validate()?;
    let base = a.trajectory();
    let n = (half_extent_mm / step_mm + 1e-9).floor() as i64;
    let (e1, e2) = perpendicular_basis(&base.direction);
    let mut out = Vec::with_capacity(((2 * n + 1) * (2 * n + 1)) as usize);
    for i in -n..=n {
        for j in -n..=n {
            let offset = e1 * (i as f64 * step_mm) + e2 * (j as f64 * step_mm);
            out.push(Trajectory {
                entry: base.entry + offset,
                ..base
            });
        }
    }
    Ok(out)
}

/// Per-candidate evaluation kept for the planning audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAudit {
    pub index: usize,
    pub trajectory: Trajectory,
    pub grade: Grade,
    pub max_breach_mm: f64,
    pub mean_wall_distance_mm: Option<f64>,
    pub survived: bool,
}

pub fn evaluate_candidates(
    candidates: &[Trajectory],
    mesh: &VertebraMesh,
    config: &PlannerConfig,
    exec: Exec,
) -> Result<Vec<CandidateAudit>> {
    let evaluated = exec.map_range(candidates.len(), |i| {
        let t = candidates[i];
        let report = assess_cannula(mesh, &t, config.cannula_radius_mm, &config.sampling)?;
        let mean = report.mean_wall_distance();
        let survived =
            report.grade == Grade::A && mean.is_some_and(|m| m >= MIN_MEAN_WALL_DISTANCE_MM);
        Ok(CandidateAudit {
            index: i,
            trajectory: t,
            grade: report.grade,
            max_breach_mm: report.max_breach_mm,
            mean_wall_distance_mm: mean,
            survived,
        })
    });
    evaluated.into_iter().collect()
}

/// Argmax of mean wall distance over survivors; ties go to the lowest index.
pub fn select_from_audit(audit: &[CandidateAudit]) -> Option<&CandidateAudit> {
    audit
        .iter()
        .filter(|c| c.survived)
        .fold(None, |best: Option<&CandidateAudit>, c| match best {
            Some(b) if b.mean_wall_distance_mm >= c.mean_wall_distance_mm => Some(b),
            _ => Some(c),
        })
}

/// Drops candidates that breach or hug the wall, then returns the one with
/// the greatest mean wall distance.
pub fn filter_and_select(candidates: &[Trajectory], mesh: &VertebraMesh) -> Result<Option<Trajectory>> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate trajectories"));
    }
    let audit = evaluate_candidates(candidates, mesh, &PlannerConfig::default(), Exec::default())?;
    Ok(select_from_audit(&audit).map(|c| c.trajectory))
}

/// Selected plan and audit for one annotated pedicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub level: Level,
    pub side: Side,
    pub selected: Option<SelectedPlan>,
    pub candidates: Vec<CandidateAudit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedPlan {
    pub candidate_index: usize,
    pub trajectory: Trajectory,
    pub mean_wall_distance_mm: f64,
}

pub fn plan_pedicle(
    annotation: &PedicleAnnotation,
    mesh: &VertebraMesh,
    config: &PlannerConfig,
    exec: Exec,
) -> Result<PlanOutcome> {
    let candidates = generate_candidates(annotation, config.half_extent_mm, config.step_mm)?;
    let audit = evaluate_candidates(&candidates, mesh, config, exec)?;
    let selected = select_from_audit(&audit).map(|c| SelectedPlan {
        candidate_index: c.index,
        trajectory: c.trajectory,
        mean_wall_distance_mm: c.mean_wall_distance_mm.unwrap_or(0.0),
    });
    Ok(PlanOutcome {
        level: annotation.level,
        side: annotation.side,
        selected,
        candidates: audit,
    })
}

/// Distance between the first axis–mesh entry points of two trajectories.
pub fn entry_point_distance(pred: &Trajectory, reference: &Trajectory, mesh: &VertebraMesh) -> Result<f64> {
    let approach = SamplingConfig::default().approach_mm;
    let a = first_entry(mesh, pred, approach).ok_or(Error::MissesMesh)?;
    let b = first_entry(mesh, reference, approach).ok_or(Error::MissesMesh)?;
    Ok((a.point - b.point).norm())
}

/// Angle between trajectory directions in degrees, in [0, 180].
pub fn angular_offset(pred: &Trajectory, reference: &Trajectory) -> f64 {
    angle_between_deg(&pred.direction, &reference.direction)
}
