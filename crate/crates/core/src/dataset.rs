//! On-disk episode datasets with a seeded train/val/test split.
//!
//! Layout:
//!
//! ```text
//! root/manifest.json
//! root/<split>/episode_NNNN/meta.json
//! root/<split>/episode_NNNN/actions.f32      little-endian, len x 11
//! root/<split>/episode_NNNN/obs/tNNN_<kind>.png
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anatomy::{Level, Side};
use crate::drr::ObservationConfig;
use crate::episode::{observation_renderer, synthesize_expert, DeltaAction, EpisodeMeta, EpisodeRecord, SceneState, ACTION_DIM};
use crate::exec::Exec;
use crate::scenario::{validate_split, Scene};
use crate::{Error, Result};

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];
pub const MANIFEST: &str = "manifest.json";

/// Expert episodes cycling over the planned pedicles: episode `i` targets
/// pedicle `i mod k` with repeat index `i div k`.
pub fn synthesize_episodes(scene: &Scene, count: usize, exec: Exec) -> Result<Vec<EpisodeRecord>> {
    let targets = scene.planned_targets();
    if targets.is_empty() {
        return Err(Error::MissingPlan(format!("scenario {:?} has no safe plan", scene.name())));
    }
    let k = targets.len();
    exec.map_range(count, |i| {
        let (level, side, _) = targets[i % k];
        synthesize_expert(scene, level, side, (i / k) as u64)
    })
    .into_iter()
    .collect()
}

/// Split sizes for `n` items: `round(f·n)` for train and val, the rest test.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    validate_split(fractions)?;
    let train = ((fractions[0] * n as f64).round() as usize).min(n);
    let val = ((fractions[1] * n as f64).round() as usize).min(n - train);
    Ok([train, val, n - train - val])
}

/// Split index (0 train, 1 val, 2 test) for each of `n` items.
pub fn assign_splits(n: usize, fractions: [f64; 3], seed: u64) -> Result<Vec<usize>> {
    let counts = split_counts(n, fractions)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![0; n];
    for (pos, &item) in order.iter().enumerate() {
        out[item] = if pos < counts[0] {
            0
        } else if pos < counts[0] + counts[1] {
            1
        } else {
            2
        };
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: String,
    pub dir: String,
    pub level: Level,
    pub side: Side,
    pub repeat: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub seed: u64,
    pub split_fractions: [f64; 3],
    pub counts: SplitCounts,
    pub episode_length: usize,
    pub action_dim: usize,
    pub observation: ObservationConfig,
    pub episodes: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Manifest {
    pub fn read(root: impl AsRef<Path>) -> Result<Self> {
        read_json(&root.as_ref().join(MANIFEST), "dataset manifest")
    }
}

/// Per-episode metadata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFile {
    pub meta: EpisodeMeta,
    pub initial_state: SceneState,
    pub observation: ObservationConfig,
    pub length: usize,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &'static str) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        what,
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn encode_actions(actions: &[DeltaAction]) -> Vec<u8> {
    actions.iter().flat_map(|a| a.to_array()).flat_map(f32::to_le_bytes).collect()
}

pub fn decode_actions(bytes: &[u8]) -> Result<Vec<DeltaAction>> {
    let row = ACTION_DIM * 4;
    if !bytes.len().is_multiple_of(row) {
        return Err(Error::InvalidAction(format!(
            "action file holds {} bytes, not a multiple of {row}",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(row)
        .map(|r| {
            let v: Vec<f32> = r
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
                .collect();
            DeltaAction::from_slice(&v)
        })
        .collect()
}

/// Renders and writes every episode, then the manifest. Output bytes depend
/// only on the scene, the episodes and `seed`.
pub fn write_dataset(
    scene: &Scene,
    episodes: &[EpisodeRecord],
    root: impl AsRef<Path>,
    fractions: [f64; 3],
    seed: u64,
    observation: ObservationConfig,
    exec: Exec,
) -> Result<Manifest> {
    let root = root.as_ref();
    let splits = assign_splits(episodes.len(), fractions, seed)?;
    let mut next = [0usize; 3];
    let mut entries = Vec::with_capacity(episodes.len());
    for (ep, &s) in episodes.iter().zip(&splits) {
        let dir = format!("{}/episode_{:04}", SPLIT_NAMES[s], next[s]);
        next[s] += 1;
        entries.push(ManifestEntry {
            split: SPLIT_NAMES[s].into(),
            dir,
            level: ep.meta.level,
            side: ep.meta.side,
            repeat: ep.meta.repeat,
            seed: ep.meta.seed,
        });
    }
    mkdir(root)?;
    for (ep, entry) in episodes.iter().zip(&entries) {
        write_episode(scene, ep, &root.join(&entry.dir), &entry.split, observation, exec)?;
    }
    let counts = split_counts(episodes.len(), fractions)?;
    let manifest = Manifest {
        scenario: scene.name().to_string(),
        seed,
        split_fractions: fractions,
        counts: SplitCounts {
            train: counts[0],
            val: counts[1],
            test: counts[2],
        },
        episode_length: episodes.first().map_or(0, EpisodeRecord::len),
        action_dim: ACTION_DIM,
        observation,
        episodes: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&root.join(MANIFEST), text.as_bytes())?;
    Ok(manifest)
}

fn write_episode(scene: &Scene, ep: &EpisodeRecord, dir: &Path, split: &str, observation: ObservationConfig, exec: Exec) -> Result<()> {
    let obs_dir = dir.join("obs");
    mkdir(&obs_dir)?;
    let file = EpisodeFile {
        meta: EpisodeMeta {
            split: Some(split.to_string()),
            ..ep.meta.clone()
        },
        initial_state: ep.initial,
        observation,
        length: ep.len(),
    };
    let text = serde_json::to_string_pretty(&file).expect("episode meta serializes");
    write_file(&dir.join("meta.json"), text.as_bytes())?;
    write_file(&dir.join("actions.f32"), &encode_actions(&ep.actions))?;

    let states = ep.states()?;
    let renderer = observation_renderer(scene, &ep.initial, observation)?;
    // one observation per action, rendered from the state it acts on
    exec.map_range(ep.len(), |t| -> Result<()> {
        for o in renderer.render(Some(&states[t].cannula())) {
            let path = obs_dir.join(format!("t{t:03}_{}.png", o.kind.name()));
            write_file(&path, &o.image.to_png()?)?;
        }
        Ok(())
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedEpisode {
    pub dir: PathBuf,
    pub file: EpisodeFile,
    pub actions: Vec<DeltaAction>,
}

pub fn read_episode(dir: impl AsRef<Path>) -> Result<LoadedEpisode> {
    let dir = dir.as_ref();
    let file: EpisodeFile = read_json(&dir.join("meta.json"), "episode metadata")?;
    let path = dir.join("actions.f32");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let actions = decode_actions(&bytes)?;
    if actions.len() != file.length {
        return Err(Error::Parse {
            what: "episode actions",
            path,
            message: format!("expected {} actions, found {}", file.length, actions.len()),
        });
    }
    Ok(LoadedEpisode {
        dir: dir.to_path_buf(),
        file,
        actions,
    })
}

pub fn read_dataset(root: impl AsRef<Path>) -> Result<(Manifest, Vec<LoadedEpisode>)> {
    let root = root.as_ref();
    let manifest = Manifest::read(root)?;
    let episodes = manifest
        .episodes
        .iter()
        .map(|e| read_episode(root.join(&e.dir)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, episodes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::Phase;
    use crate::phantom::{CorridorSpec, PhantomSpec};
    use crate::scenario::ScenarioFile;
    use proptest::prelude::*;

    #[test]
    fn seventy_twenty_ten() {
        assert_eq!(split_counts(10, [0.7, 0.2, 0.1]).unwrap(), [7, 2, 1]);
        assert!(split_counts(10, [0.5, 0.5, 0.2]).is_err());
        let a = assign_splits(10, [0.7, 0.2, 0.1], 4).unwrap();
        assert_eq!(a, assign_splits(10, [0.7, 0.2, 0.1], 4).unwrap());
        for (k, want) in [7, 2, 1].iter().enumerate() {
            assert_eq!(a.iter().filter(|&&s| s == k).count(), *want);
        }
    }

    proptest! {
        #[test]
        fn split_counts_partition(n in 0usize..500, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let f0 = a;
            let f1 = (1.0 - a) * b;
            let f = [f0, f1, 1.0 - f0 - f1];
            let c = split_counts(n, f).unwrap();
            prop_assert_eq!(c.iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn action_bytes_roundtrip() {
        let acts = vec![
            DeltaAction {
                translation_mm: [0.1, 0.2, -0.3],
                ..DeltaAction::zero(Phase::Navigation, Side::Left)
            },
            DeltaAction {
                insertion_mm: 0.41666666,
                ..DeltaAction::zero(Phase::Insertion, Side::Right)
            },
        ];
        let bytes = encode_actions(&acts);
        assert_eq!(bytes.len(), 2 * 44);
        let back = decode_actions(&bytes).unwrap();
        assert_eq!(encode_actions(&back), bytes);
        assert!(decode_actions(&bytes[..43]).is_err());
    }

    #[test]
    fn small_dataset_roundtrip() {
        let mut f = ScenarioFile::from_phantom("corridor", PhantomSpec::CorridorVertebra(CorridorSpec::default()));
        f.camera.image_px = [24, 24];
        f.observation.crop_px = [8, 8];
        f.episode.schedule.navigation = 4;
        f.episode.schedule.orientation = 3;
        f.episode.schedule.insertion = 3;
        let scene = Scene::build(f, Path::new(".")).unwrap();
        let eps = synthesize_episodes(&scene, 3, Exec::default()).unwrap();
        assert_eq!(eps[0].meta.side, Side::Left);
        assert_eq!(eps[1].meta.side, Side::Right);
        assert_eq!(eps[2].meta.repeat, 1);
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(&scene, &eps, dir.path(), [0.7, 0.2, 0.1], 1, scene.file.observation, Exec::default()).unwrap();
        assert_eq!(m.episodes.len(), 3);
        let (m2, loaded) = read_dataset(dir.path()).unwrap();
        assert_eq!(m, m2);
        for (l, e) in loaded.iter().zip(&eps) {
            assert_eq!(encode_actions(&l.actions), encode_actions(&e.actions));
            assert_eq!(l.file.initial_state, e.initial);
            assert!(l.dir.join("obs/t009_lat_crop.png").exists());
        }
    }
}
