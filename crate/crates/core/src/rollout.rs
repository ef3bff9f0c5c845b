//! Step-wise rollout protocol.
//!
//! Every frame is a 4-byte big-endian length followed by one UTF-8 JSON
//! object carrying `"version"` and `"type"`. Requests are `reset`, `step`,
//! `result` and `terminate`; each gets a reply of the same type or an
//! `error` reply with a typed `code`. Images travel as base64 PNG.
//!
//! One session lives per connection. A new `reset` replaces it. Sessions
//! share the loaded scenarios read-only and nothing else.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::anatomy::{Level, Side};
use crate::drr::{ObsKind, Observation, ObservationConfig, ObservationRenderer};
use crate::episode::{apply_action, initial_state, observation_renderer, DeltaAction, InitMode, SceneState};
use crate::imageio::{decode_png, GrayImage};
use crate::planner::{angular_offset, entry_point_distance, Trajectory};
use crate::safety::{assess_cannula, Grade};
use crate::scenario::{ScenarioSet, Scene};
use crate::{Error, Result, Vec3};

pub const PROTOCOL_VERSION: u32 = 1;
/// Largest request the server reads; replies may be larger.
pub const MAX_REQUEST_BYTES: usize = 1 << 20;
pub const MAX_REPLY_BYTES: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedFrame,
    UnsupportedVersion,
    FrameTooLarge,
    InvalidRequest,
    UnknownScenario,
    UnknownSession,
    StaleSession,
    InvalidAction,
    NotDone,
    Internal,
}

impl ErrorCode {
    pub fn name(self) -> &'static str {
        match self {
            ErrorCode::MalformedFrame => "malformed_frame",
            ErrorCode::UnsupportedVersion => "unsupported_version",
            ErrorCode::FrameTooLarge => "frame_too_large",
            ErrorCode::InvalidRequest => "invalid_request",
            ErrorCode::UnknownScenario => "unknown_scenario",
            ErrorCode::UnknownSession => "unknown_session",
            ErrorCode::StaleSession => "stale_session",
            ErrorCode::InvalidAction => "invalid_action",
            ErrorCode::NotDone => "not_done",
            ErrorCode::Internal => "internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetRequest {
    pub scenario: String,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to the scenario's configured mode.
    #[serde(default)]
    pub init_mode: Option<InitMode>,
    /// Defaults to the first planned pedicle.
    #[serde(default)]
    pub level: Option<Level>,
    #[serde(default)]
    pub side: Option<Side>,
    /// Defaults to the scenario's observation config.
    #[serde(default)]
    pub observation: Option<ObservationConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Reset(ResetRequest),
    Step { session_id: String, action: Vec<f32> },
    Result { session_id: String },
    Terminate { session_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationPayload {
    pub kind: String,
    pub width: usize,
    pub height: usize,
    pub png: String,
}

impl ObservationPayload {
    fn encode(o: &Observation) -> Result<Self> {
        Ok(Self {
            kind: o.kind.name().to_string(),
            width: o.image.width,
            height: o.image.height,
            png: B64.encode(o.image.to_png()?),
        })
    }

    pub fn decode(&self) -> Result<GrayImage> {
        let bytes = B64.decode(&self.png).map_err(|e| Error::Png(format!("base64: {e}")))?;
        decode_png(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub session_id: String,
    pub steps: usize,
    pub grade: Grade,
    pub max_breach_mm: f64,
    pub extra_pedicular: bool,
    pub breach_location_mm: Option<Vec3>,
    /// Distance between the entry points of the rollout and the plan.
    pub entry_distance_mm: Option<f64>,
    pub angle_deg: Option<f64>,
    pub trajectory: Option<Trajectory>,
    pub plan: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reply {
    Reset {
        session_id: String,
        step: usize,
        episode_length: usize,
        done: bool,
        observations: Vec<ObservationPayload>,
    },
    Step {
        session_id: String,
        step: usize,
        done: bool,
        observations: Vec<ObservationPayload>,
    },
    Result(RolloutResult),
    Terminate {
        session_id: String,
        step: usize,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    version: u32,
    #[serde(flatten)]
    body: T,
}

pub fn encode_request(r: &Request) -> Vec<u8> {
    serde_json::to_vec(&Envelope {
        version: PROTOCOL_VERSION,
        body: r,
    })
    .expect("request serializes")
}

pub fn encode_reply(r: &Reply) -> Vec<u8> {
    serde_json::to_vec(&Envelope {
        version: PROTOCOL_VERSION,
        body: r,
    })
    .expect("reply serializes")
}

fn check_version(v: &serde_json::Value) -> std::result::Result<(), (ErrorCode, String)> {
    match v.get("version").and_then(serde_json::Value::as_u64) {
        Some(x) if x == PROTOCOL_VERSION as u64 => Ok(()),
        Some(x) => Err((ErrorCode::UnsupportedVersion, format!("version {x} is not supported"))),
        None => Err((ErrorCode::MalformedFrame, "missing numeric \"version\"".into())),
    }
}

pub fn decode_request(bytes: &[u8]) -> std::result::Result<Request, (ErrorCode, String)> {
    let v: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| (ErrorCode::MalformedFrame, e.to_string()))?;
    check_version(&v)?;
    serde_json::from_value(v).map_err(|e| (ErrorCode::MalformedFrame, e.to_string()))
}

pub fn decode_reply(bytes: &[u8]) -> Result<Reply> {
    let proto = |m: String| Error::Protocol {
        code: ErrorCode::MalformedFrame.name().into(),
        message: m,
    };
    let v: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| proto(e.to_string()))?;
    check_version(&v).map_err(|(code, message)| Error::Protocol {
        code: code.name().into(),
        message,
    })?;
    serde_json::from_value(v).map_err(|e| proto(e.to_string()))
}

pub enum Incoming {
    Frame(Vec<u8>),
    Closed,
    TooLarge(usize),
}

pub fn read_frame(r: &mut impl Read, max: usize) -> io::Result<Incoming> {
    let mut head = [0u8; 4];
    match r.read_exact(&mut head) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(Incoming::Closed),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(head) as usize;
    if len > max {
        return Ok(Incoming::TooLarge(len));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Incoming::Frame(buf))
}

pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame exceeds 4 GiB"))?;
    let mut buf = Vec::with_capacity(payload.len() + 4);
    buf.extend_from_slice(&len.to_be_bytes());
    buf.extend_from_slice(payload);
    w.write_all(&buf)?;
    w.flush()
}

/// Grades the inserted segment of `state` against the plan. A cannula that
/// was never inserted grades E.
pub fn grade_state(scene: &Scene, state: &SceneState, session_id: &str, steps: usize) -> Result<RolloutResult> {
    let plan = scene.plan(state.level, state.side)?;
    let Some(traj) = state.trajectory() else {
        return Ok(RolloutResult {
            session_id: session_id.into(),
            steps,
            grade: Grade::E,
            max_breach_mm: 0.0,
            extra_pedicular: true,
            breach_location_mm: None,
            entry_distance_mm: None,
            angle_deg: None,
            trajectory: None,
            plan,
        });
    };
    let cfg = &scene.file.planner;
    let report = assess_cannula(&scene.mesh, &traj, cfg.cannula_radius_mm, &cfg.sampling)?;
    let entry = match entry_point_distance(&traj, &plan, &scene.mesh) {
        Ok(d) => Some(d),
        Err(Error::MissesMesh) => None,
        Err(e) => return Err(e),
    };
    Ok(RolloutResult {
        session_id: session_id.into(),
        steps,
        grade: report.grade,
        max_breach_mm: report.max_breach_mm,
        extra_pedicular: report.extra_pedicular,
        breach_location_mm: report.breach_location_mm,
        entry_distance_mm: entry,
        angle_deg: Some(angular_offset(&traj, &plan)),
        trajectory: Some(traj),
        plan,
    })
}

struct Session {
    id: String,
    scenario: String,
    state: SceneState,
    renderer: ObservationRenderer,
    step: usize,
    length: usize,
    result: Option<RolloutResult>,
}

type Failure = (ErrorCode, String);

fn fail<T>(code: ErrorCode, msg: impl Into<String>) -> std::result::Result<T, Failure> {
    Err((code, msg.into()))
}

/// Protocol state of one connection. Transport-free so it can be driven
/// directly.
pub struct Connection {
    scenes: Arc<ScenarioSet>,
    session: Option<Session>,
    resets: u64,
}

impl Connection {
    pub fn new(scenes: Arc<ScenarioSet>) -> Self {
        Self {
            scenes,
            session: None,
            resets: 0,
        }
    }

    /// Handles one request payload and returns the reply payload.
    pub fn handle_frame(&mut self, payload: &[u8]) -> Vec<u8> {
        let reply = match decode_request(payload) {
            Ok(req) => self.handle(req),
            Err((code, message)) => Reply::Error { code, message },
        };
        encode_reply(&reply)
    }

    pub fn handle(&mut self, req: Request) -> Reply {
        let out = match req {
            Request::Reset(r) => self.reset(r),
            Request::Step { session_id, action } => self.step(&session_id, &action),
            Request::Result { session_id } => self.result(&session_id),
            Request::Terminate { session_id } => self.terminate(&session_id),
        };
        out.unwrap_or_else(|(code, message)| Reply::Error { code, message })
    }

    fn scene(&self, name: &str) -> &Scene {
        self.scenes.get(name).expect("session scenario is loaded")
    }

    fn live(&mut self, id: &str) -> std::result::Result<&mut Session, Failure> {
        match &mut self.session {
            Some(s) if s.id == id => Ok(s),
            _ => fail(ErrorCode::UnknownSession, format!("no session {id:?} on this connection")),
        }
    }

    fn reset(&mut self, r: ResetRequest) -> std::result::Result<Reply, Failure> {
        let Some(scene) = self.scenes.get(&r.scenario) else {
            return fail(ErrorCode::UnknownScenario, format!("unknown scenario {:?}", r.scenario));
        };
        let invalid = |e: Error| (ErrorCode::InvalidRequest, e.to_string());
        let (level, side) = match (r.level, r.side) {
            (Some(l), Some(s)) => (l, s),
            (None, None) => match scene.planned_targets().first() {
                Some(&(l, s, _)) => (l, s),
                None => return fail(ErrorCode::InvalidRequest, "scenario has no planned pedicle"),
            },
            _ => return fail(ErrorCode::InvalidRequest, "level and side must be given together"),
        };
        scene.plan(level, side).map_err(invalid)?;
        let config = scene.file.episode;
        let mode = r.init_mode.unwrap_or(config.init_mode);
        let (state, _) = initial_state(scene, level, side, r.seed, &config, mode).map_err(invalid)?;
        let obs_config = r.observation.unwrap_or(scene.file.observation);
        let renderer = observation_renderer(scene, &state, obs_config).map_err(invalid)?;
        let observations = encode_observations(&renderer, &state)?;

        self.resets += 1;
        let id = format!("{}:{}:{}", r.scenario, r.seed, self.resets);
        let length = config.length();
        self.session = Some(Session {
            id: id.clone(),
            scenario: r.scenario,
            state,
            renderer,
            step: 0,
            length,
            result: None,
        });
        Ok(Reply::Reset {
            session_id: id,
            step: 0,
            episode_length: length,
            done: false,
            observations,
        })
    }

    fn step(&mut self, id: &str, action: &[f32]) -> std::result::Result<Reply, Failure> {
        let s = self.live(id)?;
        if s.result.is_some() {
            return fail(ErrorCode::StaleSession, format!("session {id:?} is done"));
        }
        let a = DeltaAction::from_slice(action).map_err(|e| (ErrorCode::InvalidAction, e.to_string()))?;
        if a.side != s.state.side {
            return fail(ErrorCode::InvalidAction, format!("action targets the {} pedicle, session the {}", a.side, s.state.side));
        }
        let next = apply_action(&s.state, &a).map_err(|e| (ErrorCode::InvalidAction, e.to_string()))?;
        let observations = encode_observations(&s.renderer, &next)?;
        s.state = next;
        s.step += 1;
        let done = s.step >= s.length;
        let (step, scenario) = (s.step, s.scenario.clone());
        if done {
            self.finish(&scenario)?;
        }
        Ok(Reply::Step {
            session_id: id.to_string(),
            step,
            done,
            observations,
        })
    }

    fn finish(&mut self, scenario: &str) -> std::result::Result<(), Failure> {
        let s = self.session.as_ref().expect("finishing a live session");
        let r = grade_state(self.scene(scenario), &s.state, &s.id, s.step).map_err(|e| (ErrorCode::Internal, e.to_string()))?;
        self.session.as_mut().expect("live").result = Some(r);
        Ok(())
    }

    fn terminate(&mut self, id: &str) -> std::result::Result<Reply, Failure> {
        let s = self.live(id)?;
        let (done, step, scenario) = (s.result.is_some(), s.step, s.scenario.clone());
        if !done {
            self.finish(&scenario)?;
        }
        Ok(Reply::Terminate {
            session_id: id.to_string(),
            step,
        })
    }

    fn result(&mut self, id: &str) -> std::result::Result<Reply, Failure> {
        let s = self.live(id)?;
        match &s.result {
            Some(r) => Ok(Reply::Result(r.clone())),
            None => fail(ErrorCode::NotDone, format!("session {id:?} is at step {} of {}", s.step, s.length)),
        }
    }
}

fn encode_observations(r: &ObservationRenderer, state: &SceneState) -> std::result::Result<Vec<ObservationPayload>, Failure> {
    r.render(Some(&state.cannula()))
        .iter()
        .map(ObservationPayload::encode)
        .collect::<Result<_>>()
        .map_err(|e| (ErrorCode::Internal, e.to_string()))
}

/// Serves one connection until the peer closes it.
pub fn serve_connection(stream: TcpStream, scenes: Arc<ScenarioSet>) -> io::Result<()> {
    let mut reader = io::BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    let mut conn = Connection::new(scenes);
    loop {
        match read_frame(&mut reader, MAX_REQUEST_BYTES)? {
            Incoming::Closed => return Ok(()),
            Incoming::Frame(f) => write_frame(&mut writer, &conn.handle_frame(&f))?,
            Incoming::TooLarge(n) => {
                // the oversized body is not read, so the stream cannot resync
                let reply = Reply::Error {
                    code: ErrorCode::FrameTooLarge,
                    message: format!("frame of {n} bytes exceeds {MAX_REQUEST_BYTES}"),
                };
                write_frame(&mut writer, &encode_reply(&reply))?;
                return Ok(());
            }
        }
    }
}

pub struct Server {
    listener: TcpListener,
    scenes: Arc<ScenarioSet>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs + std::fmt::Debug, scenes: ScenarioSet) -> Result<Self> {
        let listener = TcpListener::bind(&addr).map_err(|e| Error::Network {
            addr: format!("{addr:?}"),
            source: e,
        })?;
        Ok(Self {
            listener,
            scenes: Arc::new(scenes),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener.local_addr().map_err(|e| Error::Network {
            addr: "listener".into(),
            source: e,
        })
    }

    /// Accepts connections forever, one thread each.
    pub fn serve(self) -> Result<()> {
        for stream in self.listener.incoming() {
            let Ok(stream) = stream else { continue };
            let scenes = Arc::clone(&self.scenes);
            thread::spawn(move || {
                // a broken connection only ends its own session
                let _ = serve_connection(stream, scenes);
            });
        }
        Ok(())
    }

    /// Runs [`Server::serve`] on a background thread.
    pub fn spawn(self) -> Result<SocketAddr> {
        let addr = self.local_addr()?;
        thread::spawn(move || self.serve());
        Ok(addr)
    }
}

/// Blocking client for one connection.
pub struct Client {
    stream: TcpStream,
    addr: String,
}

impl Client {
    pub fn connect(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Network {
            addr: addr.into(),
            source: e,
        })?;
        Ok(Self { stream, addr: addr.into() })
    }

    fn net(&self, e: io::Error) -> Error {
        Error::Network {
            addr: self.addr.clone(),
            source: e,
        }
    }

    /// Sends raw payload bytes and returns the raw reply payload.
    pub fn call_raw(&mut self, payload: &[u8]) -> Result<Vec<u8>> {
        write_frame(&mut self.stream, payload).map_err(|e| self.net(e))?;
        match read_frame(&mut self.stream, MAX_REPLY_BYTES).map_err(|e| self.net(e))? {
            Incoming::Frame(f) => Ok(f),
            Incoming::Closed => Err(self.net(io::ErrorKind::UnexpectedEof.into())),
            Incoming::TooLarge(n) => Err(Error::Protocol {
                code: ErrorCode::FrameTooLarge.name().into(),
                message: format!("reply of {n} bytes"),
            }),
        }
    }

    /// Sends a request; error replies become [`Error::Protocol`].
    pub fn call(&mut self, req: &Request) -> Result<Reply> {
        match decode_reply(&self.call_raw(&encode_request(req))?)? {
            Reply::Error { code, message } => Err(Error::Protocol {
                code: code.name().into(),
                message,
            }),
            r => Ok(r),
        }
    }

    /// Resets, replays `actions` and returns the graded result. Terminates
    /// early when the actions run out before the episode length.
    pub fn replay(&mut self, reset: ResetRequest, actions: &[DeltaAction]) -> Result<RolloutResult> {
        let Reply::Reset { session_id, .. } = self.call(&Request::Reset(reset))? else {
            return Err(unexpected("reset"));
        };
        let mut done = false;
        for a in actions {
            let req = Request::Step {
                session_id: session_id.clone(),
                action: a.to_array().to_vec(),
            };
            let Reply::Step { done: d, .. } = self.call(&req)? else {
                return Err(unexpected("step"));
            };
            done = d;
            if done {
                break;
            }
        }
        if !done {
            self.call(&Request::Terminate {
                session_id: session_id.clone(),
            })?;
        }
        match self.call(&Request::Result { session_id })? {
            Reply::Result(r) => Ok(r),
            _ => Err(unexpected("result")),
        }
    }
}

fn unexpected(what: &str) -> Error {
    Error::Protocol {
        code: ErrorCode::MalformedFrame.name().into(),
        message: format!("unexpected reply type to {what}"),
    }
}

/// Observation kinds carried in a reply, in order.
pub fn reply_kinds(r: &Reply) -> Vec<ObsKind> {
    let obs = match r {
        Reply::Reset { observations, .. } | Reply::Step { observations, .. } => observations,
        _ => return Vec::new(),
    };
    obs.iter()
        .filter_map(|o| [ObsKind::Ap, ObsKind::Lat, ObsKind::ApCrop, ObsKind::LatCrop].into_iter().find(|k| k.name() == o.kind))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drr::ViewSubset;
    use crate::episode::{expert_actions, Phase};
    use crate::phantom::{CorridorSpec, PhantomSpec};
    use crate::safety::assess_cannula;
    use crate::scenario::ScenarioFile;
    use std::path::Path;

    fn scenes() -> Arc<ScenarioSet> {
        let mut f = ScenarioFile::from_phantom("corridor", PhantomSpec::CorridorVertebra(CorridorSpec::default()));
        f.camera.image_px = [24, 24];
        f.observation.crop_px = [8, 8];
        f.episode.schedule.navigation = 5;
        f.episode.schedule.orientation = 4;
        f.episode.schedule.insertion = 4;
        Arc::new(ScenarioSet::new(vec![Scene::build(f, Path::new(".")).unwrap()]).unwrap())
    }

    fn reset(conn: &mut Connection, mode: InitMode, seed: u64) -> Reply {
        conn.handle(Request::Reset(ResetRequest {
            scenario: "corridor".into(),
            seed,
            init_mode: Some(mode),
            level: None,
            side: None,
            observation: None,
        }))
    }

    fn code(r: &Reply) -> Option<ErrorCode> {
        match r {
            Reply::Error { code, .. } => Some(*code),
            _ => None,
        }
    }

    #[test]
    fn midline_reset_is_repeatable() {
        let s = scenes();
        let a = encode_reply(&reset(&mut Connection::new(s.clone()), InitMode::Midline, 3));
        let b = encode_reply(&reset(&mut Connection::new(s), InitMode::Midline, 3));
        assert_eq!(a, b);
        let r = decode_reply(&a).unwrap();
        assert_eq!(reply_kinds(&r), vec![ObsKind::Ap, ObsKind::Lat, ObsKind::ApCrop, ObsKind::LatCrop]);
    }

    #[test]
    fn ap_only_omits_lateral() {
        let mut c = Connection::new(scenes());
        let r = c.handle(Request::Reset(ResetRequest {
            scenario: "corridor".into(),
            seed: 0,
            init_mode: None,
            level: None,
            side: None,
            observation: Some(ObservationConfig {
                views: ViewSubset::ApOnly,
                crops: true,
                crop_px: [8, 8],
            }),
        }));
        assert_eq!(reply_kinds(&r), vec![ObsKind::Ap, ObsKind::ApCrop]);
    }

    #[test]
    fn error_paths_are_typed() {
        let s = scenes();
        let mut c = Connection::new(s.clone());
        let bad = |c: &mut Connection, bytes: &[u8]| code(&decode_reply(&c.handle_frame(bytes)).unwrap());
        assert_eq!(bad(&mut c, b"{nope"), Some(ErrorCode::MalformedFrame));
        assert_eq!(bad(&mut c, br#"{"version":9,"type":"result","session_id":"x"}"#), Some(ErrorCode::UnsupportedVersion));
        assert_eq!(bad(&mut c, br#"{"type":"result","session_id":"x"}"#), Some(ErrorCode::MalformedFrame));
        assert_eq!(bad(&mut c, br#"{"version":1,"type":"fly"}"#), Some(ErrorCode::MalformedFrame));
        assert_eq!(bad(&mut c, br#"{"version":1,"type":"result","session_id":"x"}"#), Some(ErrorCode::UnknownSession));
        assert_eq!(
            code(&c.handle(Request::Reset(ResetRequest {
                scenario: "ghost".into(),
                seed: 0,
                init_mode: None,
                level: None,
                side: None,
                observation: None
            }))),
            Some(ErrorCode::UnknownScenario)
        );

        let Reply::Reset { session_id, .. } = reset(&mut c, InitMode::Midline, 1) else { panic!() };
        assert_eq!(session_id, "corridor:1:1");
        let result = Request::Result { session_id: session_id.clone() };
        assert_eq!(code(&c.handle(result.clone())), Some(ErrorCode::NotDone));
        let mut two_flags = DeltaAction::zero(Phase::Navigation, Side::Left).to_array();
        two_flags[8] = 1.0;
        let step = |a: &[f32]| Request::Step {
            session_id: session_id.clone(),
            action: a.to_vec(),
        };
        assert_eq!(code(&c.handle(step(&two_flags))), Some(ErrorCode::InvalidAction));
        assert_eq!(code(&c.handle(step(&[0.0; 3]))), Some(ErrorCode::InvalidAction));
        let ins = DeltaAction::zero(Phase::Insertion, Side::Left).to_array();
        let nav = DeltaAction::zero(Phase::Navigation, Side::Left).to_array();
        assert!(code(&c.handle(step(&ins))).is_none());
        assert_eq!(code(&c.handle(step(&nav))), Some(ErrorCode::InvalidAction));

        assert!(code(&c.handle(Request::Terminate { session_id: session_id.clone() })).is_none());
        assert_eq!(code(&c.handle(step(&ins))), Some(ErrorCode::StaleSession));
        let Reply::Result(r) = c.handle(result) else { panic!() };
        assert_eq!(r.grade, Grade::E);
        assert_eq!(r.steps, 1);
    }

    #[test]
    fn expert_replay_grades_like_direct_assessment() {
        let s = scenes();
        let scene = s.get("corridor").unwrap();
        let mut c = Connection::new(s.clone());
        let Reply::Reset { session_id, episode_length, .. } = reset(&mut c, InitMode::Randomized, 11) else { panic!() };
        assert_eq!(episode_length, 13);
        let (level, side, plan) = scene.planned_targets()[0];
        let (init, _) = initial_state(scene, level, side, 11, &scene.file.episode, InitMode::Randomized).unwrap();
        let actions = expert_actions(&init, &plan, &scene.file.episode.schedule).unwrap();
        let mut last = None;
        for a in &actions {
            last = Some(c.handle(Request::Step {
                session_id: session_id.clone(),
                action: a.to_array().to_vec(),
            }));
        }
        let Some(Reply::Step { done: true, step: 13, .. }) = last else { panic!("{last:?}") };
        let Reply::Result(r) = c.handle(Request::Result { session_id }) else { panic!() };
        assert_eq!(r.grade, Grade::A);
        assert!(r.entry_distance_mm.unwrap() < 0.1);
        assert!(r.angle_deg.unwrap() < 0.1);
        let direct = assess_cannula(&scene.mesh, &r.trajectory.unwrap(), scene.file.planner.cannula_radius_mm, &scene.file.planner.sampling).unwrap();
        assert_eq!(direct.grade, r.grade);
        assert_eq!(direct.max_breach_mm, r.max_breach_mm);
    }

    #[test]
    fn tcp_sessions_are_isolated() {
        let s = scenes();
        let server = Server::bind("127.0.0.1:0", ScenarioSet::new(vec![Scene::build(s.get("corridor").unwrap().file.clone(), Path::new(".")).unwrap()]).unwrap()).unwrap();
        let addr = server.spawn().unwrap().to_string();
        let mut a = Client::connect(&addr).unwrap();
        let mut b = Client::connect(&addr).unwrap();
        let req = Request::Reset(ResetRequest {
            scenario: "corridor".into(),
            seed: 5,
            init_mode: Some(InitMode::Midline),
            level: None,
            side: None,
            observation: None,
        });
        let ra = a.call_raw(&encode_request(&req)).unwrap();
        let bad = b.call_raw(b"\xff\xfe").unwrap();
        assert_eq!(code(&decode_reply(&bad).unwrap()), Some(ErrorCode::MalformedFrame));
        assert_eq!(b.call_raw(&encode_request(&req)).unwrap(), ra);
        let Reply::Reset { session_id, .. } = decode_reply(&ra).unwrap() else { panic!() };
        // b's session has the same id but lives on another connection
        a.call(&Request::Terminate { session_id: session_id.clone() }).unwrap();
        assert!(matches!(a.call(&Request::Result { session_id: session_id.clone() }), Ok(Reply::Result(_))));
        assert!(matches!(b.call(&Request::Result { session_id }), Err(Error::Protocol { code, .. }) if code == "not_done"));

        // oversized header closes only that connection
        let mut raw = TcpStream::connect(&addr).unwrap();
        raw.write_all(&u32::MAX.to_be_bytes()).unwrap();
        let Incoming::Frame(f) = read_frame(&mut raw, MAX_REPLY_BYTES).unwrap() else { panic!() };
        assert_eq!(code(&decode_reply(&f).unwrap()), Some(ErrorCode::FrameTooLarge));
        assert!(a.call_raw(&encode_request(&req)).is_ok());
    }
}
