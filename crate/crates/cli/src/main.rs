//! `pedisim` command-line front end.
//!
//! Every command prints a JSON report on stdout. Failures print one JSON
//! line on stderr and exit 1 (contract violation) or 2 (I/O).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use pedisim::dataset::{read_episode, synthesize_episodes, write_dataset};
use pedisim::drr::{blend_real_many, CannulaModel, RadiographImage};
use pedisim::geometry::{rotation_between, CameraView, Pose};
use pedisim::imageio::read_png;
use pedisim::mesh::{read_stl, write_stl};
use pedisim::phantom::{build_phantom, PhantomSpec};
use pedisim::planner::{angular_offset, entry_point_distance, AnnotationFile, Trajectory};
use pedisim::rollout::{Client, ResetRequest, Server};
use pedisim::safety::{assess_cannula, SamplingConfig, DEFAULT_CANNULA_RADIUS_MM};
use pedisim::scenario::{ScenarioFile, ScenarioSet, Scene};
use pedisim::volume::{apply_materials, load_volume, resample_volume, write_volume, MaterialTable};
use pedisim::{ErrorKind, Exec, Vec3};
use serde_json::json;

#[derive(Parser)]
#[command(name = "pedisim", version, about = "X-ray guided cannula insertion sandbox")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Resample, smooth and materially annotate a volume.
    Preprocess {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        factor: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma_mm: f64,
        /// Label to material table applied after resampling.
        #[arg(long)]
        materials: Option<PathBuf>,
    },
    /// Write a phantom scenario out as volume, mesh and annotation files.
    ExportPhantom {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan every annotated pedicle and write plans plus the candidate audit.
    GenTrajectories {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize expert episodes and write the split dataset.
    GenEpisodes {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Grade a trajectory against a mesh.
    Grade {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CANNULA_RADIUS_MM)]
        radius_mm: f64,
    },
    /// Entry-point distance and angular offset between two trajectories.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
    },
    /// Run the rollout server.
    Serve {
        #[arg(long = "scenario", required = true)]
        scenarios: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        port: u16,
    },
    /// Replay a dataset episode through a rollout server and print the result.
    Replay {
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        server: String,
        /// World-frame shift (mm, "x,y,z") added to the first navigation step.
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        offset_mm: Option<Vec3>,
    },
    /// Composite a simulated cannula insertion onto a real radiograph.
    BlendReal {
        #[arg(long)]
        image: PathBuf,
        /// Camera view JSON matching the image.
        #[arg(long)]
        view: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = pedisim::drr::DEFAULT_CANNULA_ATTENUATION)]
        attenuation_per_mm: f64,
    },
}

fn parse_vec3(s: &str) -> std::result::Result<Vec3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok(Vec3::new(x, y, z)),
        _ => Err(format!("expected three finite numbers, got {s:?}")),
    }
}

fn print(v: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    fs::write(path, text).map_err(|e| pedisim::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| pedisim::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn preprocess(volume: &Path, out: &Path, factor: usize, sigma_mm: f64, materials: Option<&Path>) -> Result<()> {
    let mut v = resample_volume(&load_volume(volume)?, factor, sigma_mm)?;
    if let Some(m) = materials {
        v = apply_materials(&v, &MaterialTable::load(m)?)?;
    }
    write_volume(&v, out)?;
    print(&json!({
        "out": out,
        "dims": v.dims(),
        "spacing_mm": v.spacing(),
    }))
}

fn export_phantom(scenario: &Path, out: &Path) -> Result<()> {
    let file = ScenarioFile::read(scenario)?;
    let spec: &PhantomSpec = file.phantom.as_ref().ok_or_else(|| anyhow!("scenario {} has no phantom", scenario.display()))?;
    let p = build_phantom(spec)?;
    mkdir(out)?;
    write_volume(&p.volume, out.join("volume.json"))?;
    write_stl(&p.mesh, out.join("mesh.stl"))?;
    AnnotationFile {
        annotations: p.annotations.clone(),
    }
    .save(out.join("annotations.json"))?;
    let exported = ScenarioFile {
        phantom: None,
        volume: Some("volume.json".into()),
        mesh: Some("mesh.stl".into()),
        annotations: Some("annotations.json".into()),
        centroid_mm: Some(p.centroid),
        ..file
    };
    let path = out.join("scenario.json");
    exported.write(&path)?;
    print(&json!({ "scenario": path }))
}

fn gen_trajectories(scenario: &Path, out: &Path) -> Result<()> {
    let scene = Scene::load(scenario)?;
    mkdir(out)?;
    let mut plans = Vec::new();
    for o in &scene.plans {
        let file = o.selected.map(|_| format!("{}_{}.json", o.level, o.side));
        if let (Some(s), Some(name)) = (o.selected, &file) {
            write_json(&out.join(name), &s.trajectory)?;
        }
        plans.push(json!({
            "level": o.level,
            "side": o.side,
            "selected": o.selected,
            "file": file,
            "candidates": o.candidates.len(),
            "survivors": o.candidates.iter().filter(|c| c.survived).count(),
        }));
    }
    write_json(&out.join("audit.json"), &scene.plans)?;
    let summary = json!({
        "scenario": scene.name(),
        "planned": scene.plans.iter().filter(|o| o.selected.is_some()).count(),
        "plans": plans,
    });
    write_json(&out.join("plans.json"), &summary)?;
    print(&summary)
}

fn gen_episodes(scenario: &Path, count: usize, out: &Path, seed: Option<u64>) -> Result<()> {
    let path = scenario;
    let mut file = ScenarioFile::read(path)?;
    if let Some(s) = seed {
        file.seed = s;
    }
    let scene = Scene::build(file, path.parent().unwrap_or(Path::new(".")))?;
    let exec = Exec::default();
    let episodes = synthesize_episodes(&scene, count, exec)?;
    let f = &scene.file;
    let m = write_dataset(&scene, &episodes, out, f.split, f.seed, f.observation, exec)?;
    print(&json!({
        "out": out,
        "episodes": m.episodes.len(),
        "episode_length": m.episode_length,
        "counts": m.counts,
    }))
}

fn grade(mesh: &Path, trajectory: &Path, radius_mm: f64) -> Result<()> {
    let mesh = read_stl(mesh)?;
    let t = Trajectory::load(trajectory)?;
    let r = assess_cannula(&mesh, &t, radius_mm, &SamplingConfig::default())?;
    print(&json!({
        "grade": r.grade,
        "max_breach_mm": r.max_breach_mm,
        "breach_location_mm": r.breach_location_mm,
        "extra_pedicular": r.extra_pedicular,
        "mean_wall_distance_mm": r.mean_wall_distance(),
    }))
}

fn metrics(pred: &Path, reference: &Path, mesh: &Path) -> Result<()> {
    let mesh = read_stl(mesh)?;
    let p = Trajectory::load(pred)?;
    let r = Trajectory::load(reference)?;
    print(&json!({
        "entry_distance_mm": entry_point_distance(&p, &r, &mesh)?,
        "angle_deg": angular_offset(&p, &r),
    }))
}

fn serve(scenarios: &[PathBuf], host: &str, port: u16) -> Result<()> {
    let scenes = scenarios.iter().map(Scene::load).collect::<pedisim::Result<Vec<_>>>()?;
    let server = Server::bind((host, port), ScenarioSet::new(scenes)?)?;
    print(&json!({ "listening": server.local_addr()?.to_string() }))?;
    server.serve()?;
    Ok(())
}

fn replay(episode: &Path, server: &str, offset: Option<Vec3>) -> Result<()> {
    let ep = read_episode(episode)?;
    let meta = &ep.file.meta;
    let mut actions = ep.actions.clone();
    if let Some(off) = offset {
        // the first navigation step acts in the initial cannula frame
        let local = ep.file.initial_state.pose.rotation.inverse() * off;
        let first = actions
            .iter_mut()
            .find(|a| a.phase == pedisim::episode::Phase::Navigation)
            .ok_or_else(|| anyhow!("episode has no navigation step"))?;
        for k in 0..3 {
            first.translation_mm[k] += local[k];
        }
    }
    let reset = ResetRequest {
        scenario: meta.scenario.clone(),
        seed: meta.seed,
        init_mode: Some(meta.init_mode),
        level: Some(meta.level),
        side: Some(meta.side),
        observation: Some(ep.file.observation),
    };
    let result = Client::connect(server)?.replay(reset, &actions)?;
    print(&serde_json::to_value(result)?)
}

fn blend_real(image: &Path, view: &Path, trajectory: &Path, out: &Path, frames: usize, attenuation: f64) -> Result<()> {
    if frames == 0 {
        bail!(pedisim::Error::InvalidArgument("frames must be >= 1".into()));
    }
    let text = fs::read(view).map_err(|e| pedisim::Error::Io {
        path: view.to_path_buf(),
        source: e,
    })?;
    let view: CameraView = serde_json::from_slice(&text).map_err(|e| pedisim::Error::Parse {
        what: "camera view",
        path: view.to_path_buf(),
        message: e.to_string(),
    })?;
    let real = RadiographImage::from_gray(read_png(image)?, view.tag);
    let t = Trajectory::load(trajectory)?;
    let rotation = rotation_between(&Vec3::z(), &t.direction);
    mkdir(out)?;
    let mut written = Vec::new();
    for k in 0..frames {
        // the tip advances from the entry to the full depth
        let depth = if frames == 1 { t.depth } else { t.depth * k as f64 / (frames - 1) as f64 };
        let pose = Pose {
            rotation,
            translation: t.point_at(depth),
        };
        let cannula = CannulaModel {
            attenuation_per_mm: attenuation,
            ..CannulaModel::with_pose(pose)
        };
        let img = blend_real_many(&real, &view, &[cannula])?;
        let path = out.join(format!("frame_{k:03}.png"));
        fs::write(&path, img.to_png()?).map_err(|e| pedisim::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        written.push(path);
    }
    print(&json!({ "frames": written }))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Preprocess {
            volume,
            out,
            factor,
            sigma_mm,
            materials,
        } => preprocess(&volume, &out, factor, sigma_mm, materials.as_deref()),
        Cmd::ExportPhantom { scenario, out } => export_phantom(&scenario, &out),
        Cmd::GenTrajectories { scenario, out } => gen_trajectories(&scenario, &out),
        Cmd::GenEpisodes { scenario, count, out, seed } => gen_episodes(&scenario, count, &out, seed),
        Cmd::Grade { mesh, trajectory, radius_mm } => grade(&mesh, &trajectory, radius_mm),
        Cmd::Metrics { pred, reference, mesh } => metrics(&pred, &reference, &mesh),
        Cmd::Serve { scenarios, host, port } => serve(&scenarios, &host, port),
        Cmd::Replay { episode, server, offset_mm } => replay(&episode, &server, offset_mm),
        Cmd::BlendReal {
            image,
            view,
            trajectory,
            out,
            frames,
            attenuation_per_mm,
        } => blend_real(&image, &view, &trajectory, &out, frames, attenuation_per_mm),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let lib = e.chain().find_map(|c| c.downcast_ref::<pedisim::Error>());
    match lib.map(pedisim::Error::kind) {
        Some(ErrorKind::Io) => 2,
        Some(ErrorKind::Contract) => 1,
        None if e.chain().any(|c| c.is::<std::io::Error>()) => 2,
        None => 1,
    }
}

fn fail(code: u8, message: String) -> ExitCode {
    let kind = if code == 2 { "io" } else { "contract" };
    eprintln!("{}", json!({ "error": { "kind": kind, "exit_code": code, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(1, e.to_string().trim().to_string()),
    };
    match run(cli).context("pedisim") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(exit_code(&e), format!("{e:#}")),
    }
}
