//! Scenario files and the loaded scene they describe.
//!
//! A scenario is a JSON document naming either an inline phantom or volume,
//! mesh and annotation files (paths relative to the scenario file), plus
//! camera, observation, planner and episode settings and a base seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anatomy::{Level, Side};
use crate::drr::{ObservationConfig, RenderOptions, DEFAULT_STEP_FRACTION};
use crate::episode::EpisodeConfig;
use crate::exec::Exec;
use crate::geometry::{make_ap_view, make_lateral_view, CameraConfig, CameraView};
use crate::mesh::{read_stl, VertebraMesh};
use crate::phantom::{build_phantom, PhantomSpec};
use crate::planner::{plan_pedicle, AnnotationFile, PedicleAnnotation, PlanOutcome, PlannerConfig, Trajectory};
use crate::volume::{apply_materials, load_volume, MaterialTable, VoxelVolume};
use crate::{Error, Result, Vec3};

fn default_split() -> [f64; 3] {
    [0.7, 0.2, 0.1]
}
fn default_patient() -> String {
    "phantom".into()
}
fn default_step_fraction() -> f64 {
    DEFAULT_STEP_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default = "default_patient")]
    pub patient_id: String,
    #[serde(default)]
    pub phantom: Option<PhantomSpec>,
    #[serde(default)]
    pub volume: Option<PathBuf>,
    /// Label to material table applied to `volume` when present.
    #[serde(default)]
    pub materials: Option<PathBuf>,
    #[serde(default)]
    pub mesh: Option<PathBuf>,
    #[serde(default)]
    pub annotations: Option<PathBuf>,
    /// Crop and view centre; defaults to the phantom centre or mesh centroid.
    #[serde(default)]
    pub centroid_mm: Option<Vec3>,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default)]
    pub observation: ObservationConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub episode: EpisodeConfig,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default = "default_step_fraction")]
    pub render_step_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioFile {
    pub fn from_phantom(name: &str, phantom: PhantomSpec) -> Self {
        Self {
            name: name.into(),
            patient_id: default_patient(),
            phantom: Some(phantom),
            volume: None,
            materials: None,
            mesh: None,
            annotations: None,
            centroid_mm: None,
            camera: CameraConfig::default(),
            observation: ObservationConfig::default(),
            planner: PlannerConfig::default(),
            episode: EpisodeConfig::default(),
            split: default_split(),
            render_step_fraction: default_step_fraction(),
            seed: 0,
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            what: "scenario file",
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("scenario serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.episode.validate()?;
        validate_split(self.split)?;
        if !(self.render_step_fraction > 0.0) {
            return Err(Error::invalid("render_step_fraction must be > 0"));
        }
        let [cw, ch] = self.observation.crop_px;
        if self.observation.crops && (cw == 0 || ch == 0 || cw > self.camera.image_px[0] || ch > self.camera.image_px[1]) {
            return Err(Error::invalid("crop size must fit the image"));
        }
        match (&self.phantom, &self.volume, &self.mesh) {
            (Some(_), None, None) => Ok(()),
            (None, Some(_), Some(_)) if self.annotations.is_some() => Ok(()),
            (None, Some(_), Some(_)) => Err(Error::invalid("file-based scenario needs an annotations file")),
            _ => Err(Error::invalid("scenario needs either a phantom or both volume and mesh files")),
        }
    }
}

pub fn validate_split(split: [f64; 3]) -> Result<()> {
    if split.iter().any(|f| !(0.0..=1.0).contains(f)) || (split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions {split:?} must be in [0,1] and sum to 1")));
    }
    Ok(())
}

/// Loaded volume, mesh, annotations and safe plans.
#[derive(Debug, Clone)]
pub struct Scene {
    pub file: ScenarioFile,
    pub volume: VoxelVolume,
    pub mesh: VertebraMesh,
    pub annotations: Vec<PedicleAnnotation>,
    pub plans: Vec<PlanOutcome>,
    pub centroid: Vec3,
}

impl Scene {
    /// Loads a scenario file, resolving relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = ScenarioFile::read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::build(file, base)
    }

    pub fn build(file: ScenarioFile, base_dir: &Path) -> Result<Self> {
        file.validate()?;
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base_dir.join(p) };
        let (volume, mesh, mut annotations, centroid) = if let Some(spec) = &file.phantom {
            let p = build_phantom(spec)?;
            (p.volume, p.mesh, p.annotations, p.centroid)
        } else {
            let mut volume = load_volume(resolve(file.volume.as_ref().expect("validated")))?;
            if let Some(m) = &file.materials {
                volume = apply_materials(&volume, &MaterialTable::load(resolve(m))?)?;
            }
            let mesh = read_stl(resolve(file.mesh.as_ref().expect("validated")))?;
            let c = mesh.centroid();
            (volume, mesh, Vec::new(), c)
        };
        if let Some(a) = &file.annotations {
            annotations = AnnotationFile::load(resolve(a))?.annotations;
        }
        if annotations.is_empty() {
            return Err(Error::invalid("scenario has no pedicle annotations"));
        }
        let mut mesh = mesh.with_level(annotations[0].level);
        let regions: Vec<_> = annotations.iter().filter_map(|a| a.pedicle_region).collect();
        if !regions.is_empty() {
            mesh = mesh.with_regions(regions);
        }
        let centroid = file.centroid_mm.unwrap_or(centroid);
        let mut scene = Self {
            file,
            volume,
            mesh,
            annotations,
            plans: Vec::new(),
            centroid,
        };
        scene.plans = scene.plan_all(Exec::default())?;
        Ok(scene)
    }

    pub fn plan_all(&self, exec: Exec) -> Result<Vec<PlanOutcome>> {
        self.annotations
            .iter()
            .map(|a| plan_pedicle(a, &self.mesh, &self.file.planner, exec))
            .collect()
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            step_fraction: self.file.render_step_fraction,
            exec: Exec::default(),
        }
    }

    /// Selected plan for a pedicle.
    pub fn plan(&self, level: Level, side: Side) -> Result<Trajectory> {
        self.plans
            .iter()
            .find(|p| p.level == level && p.side == side)
            .and_then(|p| p.selected.map(|s| s.trajectory))
            .ok_or_else(|| Error::MissingPlan(format!("{level} {side}")))
    }

    /// Pedicles that have a safe plan, in annotation order.
    pub fn planned_targets(&self) -> Vec<(Level, Side, Trajectory)> {
        self.plans
            .iter()
            .filter_map(|p| p.selected.map(|s| (p.level, p.side, s.trajectory)))
            .collect()
    }

    /// Unperturbed AP and lateral views aimed at the scene centroid. The AP
    /// beam runs along the mean pedicle axis of the level.
    pub fn base_views(&self, level: Level) -> Result<(CameraView, CameraView)> {
        let axis = |side: Side| {
            self.annotations
                .iter()
                .find(|a| a.level == level && a.side == side)
                .map(|a| a.axis)
        };
        let (l, r) = match (axis(Side::Left), axis(Side::Right)) {
            (Some(l), Some(r)) => (l, r),
            (Some(a), None) | (None, Some(a)) => (a, a),
            (None, None) => return Err(Error::MissingPlan(format!("no annotation at {level}"))),
        };
        let ap = make_ap_view(&l, &r, self.centroid, &self.file.camera)?;
        let lat = make_lateral_view(&Vec3::x(), self.centroid, &self.file.camera)?;
        Ok((ap, lat))
    }
}

/// Scenarios served by name.
#[derive(Debug, Clone, Default)]
pub struct ScenarioSet {
    scenes: Vec<Scene>,
}

impl ScenarioSet {
    pub fn new(scenes: Vec<Scene>) -> Result<Self> {
        for (i, s) in scenes.iter().enumerate() {
            if scenes[..i].iter().any(|o| o.name() == s.name()) {
                return Err(Error::invalid(format!("duplicate scenario name {:?}", s.name())));
            }
        }
        Ok(Self { scenes })
    }

    pub fn get(&self, name: &str) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.name() == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.scenes.iter().map(|s| s.name()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::write_stl;
    use crate::phantom::CorridorSpec;
    use crate::volume::write_volume;

    fn corridor_file() -> ScenarioFile {
        let mut f = ScenarioFile::from_phantom("corridor", PhantomSpec::CorridorVertebra(CorridorSpec::default()));
        f.camera.image_px = [48, 48];
        f.observation.crop_px = [16, 16];
        f
    }

    #[test]
    fn phantom_scene_plans_both_sides() {
        let s = Scene::build(corridor_file(), Path::new(".")).unwrap();
        assert_eq!(s.planned_targets().len(), 2);
        let l1: Level = "L1".parse().unwrap();
        let t = s.plan(l1, Side::Left).unwrap();
        assert!((t.entry - s.annotations[0].entry_mm).norm() < 0.5);
        assert!(matches!(s.plan("L2".parse().unwrap(), Side::Left), Err(Error::MissingPlan(_))));
        let (ap, lat) = s.base_views(l1).unwrap();
        assert!((ap.principal - Vec3::y()).norm() < 1e-12);
        assert_eq!(lat.principal, Vec3::x());
    }

    #[test]
    fn file_based_scene_matches_phantom() {
        let dir = tempfile::tempdir().unwrap();
        let p = build_phantom(&PhantomSpec::CorridorVertebra(CorridorSpec::default())).unwrap();
        write_volume(&p.volume, dir.path().join("vol.json")).unwrap();
        write_stl(&p.mesh, dir.path().join("mesh.stl")).unwrap();
        AnnotationFile {
            annotations: p.annotations.clone(),
        }
        .save(dir.path().join("ann.json"))
        .unwrap();
        let mut f = corridor_file();
        f.phantom = None;
        f.volume = Some("vol.json".into());
        f.mesh = Some("mesh.stl".into());
        f.annotations = Some("ann.json".into());
        f.centroid_mm = Some(Vec3::zeros());
        f.write(dir.path().join("scenario.json")).unwrap();
        let s = Scene::load(dir.path().join("scenario.json")).unwrap();
        assert_eq!(s.volume.values(), p.volume.values());
        assert_eq!(s.planned_targets().len(), 2);
    }

    #[test]
    fn invalid_scenarios() {
        let mut f = corridor_file();
        f.split = [0.5, 0.5, 0.2];
        assert!(Scene::build(f, Path::new(".")).is_err());
        let mut f = corridor_file();
        f.volume = Some("x.json".into());
        assert!(f.validate().is_err());
        let mut f = corridor_file();
        f.phantom = None;
        f.volume = Some("missing.json".into());
        f.mesh = Some("missing.stl".into());
        f.annotations = Some("missing.json".into());
        let e = Scene::build(f, Path::new("/nonexistent")).unwrap_err();
        assert_eq!(e.kind(), crate::ErrorKind::Io);
        assert!(serde_json::from_str::<ScenarioFile>(r#"{"name":"x","bogus":1}"#).is_err());
    }
}
