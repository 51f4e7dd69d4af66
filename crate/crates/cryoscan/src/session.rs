//! One instrument session: the twin, its scans, the loaded calibration and an
//! append-only event log.
//!
//! Every command takes the same lock, so of two conflicting commands the
//! first wins and the other sees [`ServiceError::Busy`]. Scans run on a worker
//! thread that owns the twin until the scan ends; readers see snapshots.

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use cryoscan_core::calib::{detect_holes, fit_mapping, invert_mapping, FitOptions, MappingModel};
use cryoscan_core::config::SystemConfig;
use cryoscan_core::scan::{execute_with, ExecOptions, MapMetadata, ResponseMap, ResponseSample, ScanPlan};
use cryoscan_core::twin::{SourceState, Twin};
use cryoscan_core::{Error as CoreError, Vec2, VoltageCoord};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::watch;

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Idle,
    Scanning,
    Fault,
}

/// Event log record. `seq` starts at 1 and has no gaps; `t` is session time
/// on the simulated clock and never decreases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub t: f64,
    pub kind: String,
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SessionOptions {
    /// Wall-clock pause after each scan point, so live views can follow.
    pub point_delay: Duration,
}

/// Either a voltage pair or, with a calibration loaded, a device-plane point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerRequest {
    pub vx: Option<f64>,
    pub vy: Option<f64>,
    pub x_mm: Option<f64>,
    pub y_mm: Option<f64>,
}

impl SteerRequest {
    pub fn voltage(vx: f64, vy: f64) -> Self {
        Self {
            vx: Some(vx),
            vy: Some(vy),
            ..Self::default()
        }
    }

    pub fn physical(x_mm: f64, y_mm: f64) -> Self {
        Self {
            x_mm: Some(x_mm),
            y_mm: Some(y_mm),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteerAck {
    pub commanded: VoltageCoord,
    /// Where the twin puts the beam; `None` when it misses the plane.
    pub position_mm: Option<[f64; 2]>,
    /// Where the calibration expects it, for physical targets.
    pub model_position_mm: Option<[f64; 2]>,
    pub slew_s: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceRequest {
    pub on: bool,
    pub wavelength_nm: Option<f64>,
    pub power_w: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceAck {
    pub source: SourceView,
    /// False when the command matched the current state.
    pub changed: bool,
    /// Power reaching the resonator at the current pointing, when on.
    pub absorbed_w: Option<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceView {
    pub on: bool,
    pub wavelength_nm: f64,
    pub power_w: f64,
}

impl From<SourceState> for SourceView {
    fn from(s: SourceState) -> Self {
        Self {
            on: s.on,
            wavelength_nm: s.wavelength_nm,
            power_w: s.power_w,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanRequest {
    pub preset: Option<String>,
    pub plan: Option<ScanPlan>,
    /// Restart the noise stream with this seed.
    pub seed: Option<u64>,
    #[serde(default)]
    pub allow_unstable: bool,
}

impl ScanRequest {
    pub fn preset(name: &str) -> Self {
        Self {
            preset: Some(name.to_string()),
            ..Self::default()
        }
    }

    pub fn plan(plan: ScanPlan) -> Self {
        Self {
            plan: Some(plan),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanStatus {
    Running,
    Complete,
    Cancelled,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanView {
    pub id: u64,
    pub preset: Option<String>,
    pub status: ScanStatus,
    pub done: usize,
    pub total: usize,
    pub latest: Option<ResponseSample>,
    pub config_hash: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRequest {
    /// Install this model as is.
    pub model: Option<MappingModel>,
    /// Or fit one from a finished grid scan over a screen-plate.
    pub scan_id: Option<u64>,
    pub threshold_frac: Option<f64>,
    pub fit_kappa: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationView {
    pub model: MappingModel,
    pub scan_id: Option<u64>,
    pub matched: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorView {
    pub commanded: VoltageCoord,
    pub position_mm: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusView {
    pub session_id: String,
    pub state: SessionState,
    pub fault: Option<String>,
    pub config_hash: String,
    /// Preset whose configuration is active, if any.
    pub preset: Option<String>,
    pub clock_s: f64,
    pub mirror: MirrorView,
    pub source: SourceView,
    pub active_scan: Option<u64>,
    pub calibrated: bool,
    pub last_seq: u64,
}

struct ScanRecord {
    preset: Option<String>,
    plan: ScanPlan,
    status: ScanStatus,
    samples: Vec<ResponseSample>,
    metadata: MapMetadata,
    map: Option<ResponseMap>,
    holes: Vec<Vec2>,
    error: Option<String>,
    cancel: Arc<AtomicBool>,
}

impl ScanRecord {
    fn view(&self, id: u64) -> ScanView {
        ScanView {
            id,
            preset: self.preset.clone(),
            status: self.status,
            done: self.samples.len(),
            total: self.plan.len(),
            latest: self.samples.last().copied(),
            config_hash: self.metadata.config_hash.clone(),
            error: self.error.clone(),
        }
    }
}

struct Inner {
    id: String,
    base: SystemConfig,
    config: SystemConfig,
    preset: Option<String>,
    state: SessionState,
    fault: Option<String>,
    /// `None` while a scan worker holds it.
    twin: Option<Twin>,
    commanded: VoltageCoord,
    source: SourceState,
    /// Session time accumulated by twins that were replaced.
    clock_base: f64,
    /// Twin clock at the last observation while the twin is away.
    last_clock: f64,
    last_t: f64,
    scans: BTreeMap<u64, ScanRecord>,
    active: Option<u64>,
    calibration: Option<MappingModel>,
    log: Vec<Event>,
    tx: watch::Sender<u64>,
}

impl Inner {
    fn now(&self) -> f64 {
        self.clock_base + self.twin.as_ref().map_or(self.last_clock, Twin::clock)
    }

    fn push(&mut self, t: f64, kind: &str, payload: Value) -> u64 {
        let t = t.max(self.last_t);
        self.last_t = t;
        let seq = self.log.len() as u64 + 1;
        self.log.push(Event {
            seq,
            t,
            kind: kind.to_string(),
            payload,
        });
        self.tx.send_replace(seq);
        seq
    }

    fn ready(&self) -> Result<()> {
        match self.state {
            SessionState::Idle => Ok(()),
            SessionState::Scanning => Err(ServiceError::Busy("scan in progress")),
            SessionState::Fault => Err(ServiceError::Fault(self.fault.clone().unwrap_or_default())),
        }
    }

    fn twin_mut(&mut self) -> &mut Twin {
        self.twin.as_mut().expect("idle session holds its twin")
    }

    fn record(&self, id: u64) -> Result<&ScanRecord> {
        self.scans.get(&id).ok_or_else(|| ServiceError::NotFound(format!("scan {id}")))
    }

    fn on_sample(&mut self, id: u64, sample: &ResponseSample) {
        self.last_clock = sample.timestamp;
        self.commanded = sample.v;
        let t = self.clock_base + sample.timestamp;
        if let Some(rec) = self.scans.get_mut(&id) {
            rec.samples.push(*sample);
        }
        self.push(t, "sample", json!({ "scan": id, "sample": sample }));
    }

    fn finish_scan(&mut self, id: u64, twin: Twin, result: cryoscan_core::Result<ResponseMap>) {
        self.last_clock = twin.clock();
        self.commanded = twin.mirror().commanded;
        self.source = twin.source();
        self.twin = Some(twin);
        self.active = None;
        let t = self.now();
        let rec = self.scans.get_mut(&id).expect("scan record exists");
        match result {
            Ok(map) => {
                rec.status = if map.metadata.complete {
                    ScanStatus::Complete
                } else {
                    ScanStatus::Cancelled
                };
                let (status, done, total) = (rec.status, map.samples.len(), rec.plan.len());
                rec.samples = map.samples.clone();
                rec.map = Some(map);
                self.state = SessionState::Idle;
                let kind = if status == ScanStatus::Complete {
                    "scan_finished"
                } else {
                    "scan_cancelled"
                };
                self.push(t, kind, json!({ "scan": id, "done": done, "total": total }));
            }
            Err(e) => {
                let msg = e.to_string();
                rec.status = ScanStatus::Failed;
                rec.error = Some(msg.clone());
                self.state = SessionState::Fault;
                self.fault = Some(format!("scan {id}: {msg}"));
                self.push(t, "scan_failed", json!({ "scan": id, "error": msg }));
            }
        }
    }
}

struct Shared {
    inner: Mutex<Inner>,
    scan_done: Condvar,
    opts: SessionOptions,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Cheap to clone; clones share the session.
#[derive(Clone)]
pub struct Session {
    shared: Arc<Shared>,
}

fn pair(p: Vec2) -> [f64; 2] {
    [p.x, p.y]
}

impl Session {
    pub fn new(config: SystemConfig, opts: SessionOptions) -> Result<Self> {
        let twin = config.twin()?;
        let (tx, _) = watch::channel(0);
        let mut inner = Inner {
            id: config.session_id(),
            base: config.clone(),
            preset: None,
            state: SessionState::Idle,
            fault: None,
            commanded: twin.mirror().commanded,
            source: twin.source(),
            twin: Some(twin),
            clock_base: 0.0,
            last_clock: 0.0,
            last_t: 0.0,
            scans: BTreeMap::new(),
            active: None,
            calibration: None,
            log: Vec::new(),
            tx,
            config,
        };
        let payload = json!({ "session_id": inner.id, "config_hash": inner.config.hash });
        inner.push(0.0, "session_started", payload);
        Ok(Self {
            shared: Arc::new(Shared {
                inner: Mutex::new(inner),
                scan_done: Condvar::new(),
                opts,
            }),
        })
    }

    pub fn id(&self) -> String {
        self.shared.lock().id.clone()
    }

    pub fn status(&self) -> StatusView {
        let g = self.shared.lock();
        let position_mm = g.config.params.position(&g.commanded).ok().map(pair);
        StatusView {
            session_id: g.id.clone(),
            state: g.state,
            fault: g.fault.clone(),
            config_hash: g.config.hash.clone(),
            preset: g.preset.clone(),
            clock_s: g.now(),
            mirror: MirrorView {
                commanded: g.commanded,
                position_mm,
            },
            source: g.source.into(),
            active_scan: g.active,
            calibrated: g.calibration.is_some(),
            last_seq: g.log.len() as u64,
        }
    }

    pub fn steer(&self, req: SteerRequest) -> Result<SteerAck> {
        let mut g = self.shared.lock();
        g.ready()?;
        let (v, model_pos) = match req {
            SteerRequest {
                vx: Some(vx),
                vy: Some(vy),
                x_mm: None,
                y_mm: None,
            } => (VoltageCoord::new(vx, vy)?, None),
            SteerRequest {
                vx: None,
                vy: None,
                x_mm: Some(x),
                y_mm: Some(y),
            } => {
                let model = g.calibration.as_ref().ok_or(ServiceError::Uncalibrated)?;
                let v = invert_mapping(model, Vec2::new(x, y))?;
                (v, Some(pair(model.predict(&v))))
            }
            _ => {
                return Err(ServiceError::BadRequest(
                    "give either `vx` and `vy` or `x_mm` and `y_mm`".into(),
                ))
            }
        };
        let slew_s = g.twin_mut().slew_to(&v, false)?;
        g.commanded = v;
        let position_mm = match g.config.params.position(&v) {
            Ok(p) => Some(pair(p)),
            Err(CoreError::Miss { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        let t = g.now();
        let ack = SteerAck {
            commanded: v,
            position_mm,
            model_position_mm: model_pos,
            slew_s,
            t,
        };
        g.push(t, "steer", serde_json::to_value(ack).expect("ack serializes"));
        Ok(ack)
    }

    pub fn source(&self, req: SourceRequest) -> Result<SourceAck> {
        let mut g = self.shared.lock();
        g.ready()?;
        let prev = g.source;
        let wavelength = req.wavelength_nm.unwrap_or(if prev.power_w > 0.0 {
            prev.wavelength_nm
        } else {
            g.config.source.wavelength_nm
        });
        let power = req.power_w.unwrap_or(if prev.power_w > 0.0 {
            prev.power_w
        } else {
            g.config.source.power_w
        });
        let twin = g.twin_mut();
        twin.set_source(req.on, wavelength, power)?;
        let now = twin.source();
        let absorbed_w = twin.current_illumination()?.map(|i| i.absorbed_w);
        g.source = now;
        let changed = now != prev;
        let t = g.now();
        let ack = SourceAck {
            source: now.into(),
            changed,
            absorbed_w,
            t,
        };
        if changed {
            g.push(t, "source", serde_json::to_value(ack).expect("ack serializes"));
        }
        Ok(ack)
    }

    /// Starts a scan on a worker thread and returns its id.
    pub fn start_scan(&self, req: ScanRequest) -> Result<u64> {
        let mut g = self.shared.lock();
        g.ready()?;
        let (plan, new_config) = match (&req.preset, req.plan) {
            (Some(name), None) => {
                let (cfg, plan) = g.base.preset(name)?;
                (plan, Some((name.clone(), cfg)))
            }
            (None, Some(plan)) => {
                plan.validate()?;
                (plan, None)
            }
            _ => return Err(ServiceError::BadRequest("give exactly one of `preset` or `plan`".into())),
        };
        if let Some((name, cfg)) = new_config {
            let twin = cfg.twin()?;
            let old = g.twin.replace(twin).expect("idle session holds its twin");
            g.clock_base += old.clock();
            g.commanded = VoltageCoord::origin();
            g.source = g.twin_mut().source();
            g.config = cfg;
            g.preset = Some(name);
        }
        if let Some(seed) = req.seed {
            g.twin_mut().reseed(seed);
        }
        let mut twin = g.twin.take().expect("idle session holds its twin");
        g.last_clock = twin.clock();
        let opts = ExecOptions {
            allow_unstable: req.allow_unstable,
            config_hash: g.config.hash.clone(),
            session_id: g.id.clone(),
        };
        let id = g.scans.keys().next_back().map_or(1, |k| k + 1);
        let cancel = Arc::new(AtomicBool::new(false));
        let holes = g.config.params.mask.holes.iter().map(|h| h.center).collect();
        g.scans.insert(
            id,
            ScanRecord {
                preset: req.preset.clone(),
                plan,
                status: ScanStatus::Running,
                samples: Vec::new(),
                metadata: MapMetadata {
                    config_hash: opts.config_hash.clone(),
                    seed: twin.seed(),
                    session_id: opts.session_id.clone(),
                    created_s: twin.clock(),
                    complete: false,
                },
                map: None,
                holes,
                error: None,
                cancel: cancel.clone(),
            },
        );
        g.state = SessionState::Scanning;
        g.active = Some(id);
        let t = g.now();
        g.push(
            t,
            "scan_started",
            json!({ "scan": id, "preset": req.preset, "plan": plan, "total": plan.len(), "config_hash": opts.config_hash }),
        );
        drop(g);

        let shared = self.shared.clone();
        let spawned = thread::Builder::new().name(format!("scan-{id}")).spawn(move || {
            let delay = shared.opts.point_delay;
            let result = execute_with(&plan, &mut twin, &opts, |p| {
                if !delay.is_zero() {
                    thread::sleep(delay);
                }
                shared.lock().on_sample(id, p.sample);
                if cancel.load(Ordering::SeqCst) {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            });
            shared.lock().finish_scan(id, twin, result);
            shared.scan_done.notify_all();
        });
        if let Err(e) = spawned {
            // The closure, and the twin with it, is gone: rebuild from config.
            let mut g = self.shared.lock();
            let twin = g.config.twin()?;
            let msg = format!("could not start scan worker: {e}");
            g.finish_scan(id, twin, Err(CoreError::Validation(msg.clone())));
            return Err(ServiceError::Fault(msg));
        }
        Ok(id)
    }

    pub fn scan(&self, id: u64) -> Result<ScanView> {
        Ok(self.shared.lock().record(id)?.view(id))
    }

    /// The finished map, or a snapshot of the points measured so far.
    pub fn scan_map(&self, id: u64) -> Result<ResponseMap> {
        let g = self.shared.lock();
        let rec = g.record(id)?;
        Ok(rec.map.clone().unwrap_or_else(|| ResponseMap {
            plan: rec.plan,
            samples: rec.samples.clone(),
            metadata: rec.metadata.clone(),
        }))
    }

    /// Asks a running scan to stop at the next point boundary.
    pub fn cancel(&self, id: u64) -> Result<ScanView> {
        let mut g = self.shared.lock();
        let rec = g.record(id)?;
        let view = rec.view(id);
        if rec.status == ScanStatus::Running && !rec.cancel.swap(true, Ordering::SeqCst) {
            let t = g.now();
            g.push(t, "scan_cancel_requested", json!({ "scan": id }));
        }
        Ok(view)
    }

    /// Blocks until scan `id` leaves the running state or `timeout` passes.
    pub fn wait_scan(&self, id: u64, timeout: Duration) -> Result<ScanView> {
        let g = self.shared.lock();
        g.record(id)?;
        let (g, _) = self
            .shared
            .scan_done
            .wait_timeout_while(g, timeout, |g| {
                g.scans.get(&id).is_some_and(|r| r.status == ScanStatus::Running)
            })
            .unwrap_or_else(|e| e.into_inner());
        Ok(g.record(id)?.view(id))
    }

    pub fn calibrate(&self, req: CalibrationRequest) -> Result<CalibrationView> {
        let mut g = self.shared.lock();
        if g.state == SessionState::Fault {
            g.ready()?;
        }
        let view = match (req.model, req.scan_id) {
            (Some(model), None) => {
                model.validate()?;
                CalibrationView {
                    model,
                    scan_id: None,
                    matched: 0,
                }
            }
            (None, Some(id)) => {
                let rec = g.record(id)?;
                let map = match (&rec.map, rec.status) {
                    (Some(m), ScanStatus::Complete) => m,
                    _ => return Err(ServiceError::BadRequest(format!("scan {id} has not completed"))),
                };
                if rec.holes.is_empty() {
                    return Err(ServiceError::BadRequest(format!("scan {id} was not taken through a screen-plate")));
                }
                let blobs = detect_holes(map, req.threshold_frac.unwrap_or(0.5))?;
                let opts = FitOptions {
                    fit_kappa: req.fit_kappa.unwrap_or(true),
                    ..FitOptions::default()
                };
                let mut fit = fit_mapping(&blobs, &rec.holes, &opts)?;
                fit.model.provenance = map.metadata.config_hash.clone();
                CalibrationView {
                    model: fit.model,
                    scan_id: Some(id),
                    matched: fit.matches.len(),
                }
            }
            _ => {
                return Err(ServiceError::BadRequest(
                    "give exactly one of `model` or `scan_id`".into(),
                ))
            }
        };
        g.calibration = Some(view.model.clone());
        let t = g.now();
        g.push(t, "calibration", serde_json::to_value(&view).expect("view serializes"));
        Ok(view)
    }

    /// Clears a fault. A no-op when idle.
    pub fn reset(&self) -> Result<StatusView> {
        {
            let mut g = self.shared.lock();
            match g.state {
                SessionState::Scanning => return Err(ServiceError::Busy("scan in progress")),
                SessionState::Fault => {
                    g.state = SessionState::Idle;
                    let cleared = g.fault.take();
                    let t = g.now();
                    g.push(t, "reset", json!({ "cleared": cleared }));
                }
                SessionState::Idle => {}
            }
        }
        Ok(self.status())
    }

    /// Events with `seq > after`, oldest first, at most `limit`.
    pub fn events_since(&self, after: u64, limit: usize) -> Vec<Event> {
        let g = self.shared.lock();
        let start = (after as usize).min(g.log.len());
        g.log[start..].iter().take(limit).cloned().collect()
    }

    /// Watch channel carrying the latest `seq`.
    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.shared.lock().tx.subscribe()
    }

    #[cfg(test)]
    fn inject_scan_failure(&self, id: u64, message: &str) {
        let mut g = self.shared.lock();
        let twin = g.config.twin().unwrap();
        g.finish_scan(id, twin, Err(CoreError::Validation(message.into())));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> Session {
        Session::new(SystemConfig::defaults().unwrap(), SessionOptions::default()).unwrap()
    }

    #[test]
    fn failed_scan_faults_the_session_until_reset() {
        let s = session();
        let plan = cryoscan_core::scan::plan_line(
            VoltageCoord::origin(),
            VoltageCoord::new(0.1, 0.0).unwrap(),
            3,
            Default::default(),
            SystemConfig::defaults().unwrap().source(),
        )
        .unwrap();
        let id = s.start_scan(ScanRequest::plan(plan)).unwrap();
        s.wait_scan(id, Duration::from_secs(10)).unwrap();
        s.inject_scan_failure(id, "readout lost");
        let st = s.status();
        assert_eq!(st.state, SessionState::Fault);
        assert!(matches!(s.steer(SteerRequest::voltage(0.0, 0.0)), Err(ServiceError::Fault(_))));
        assert_eq!(s.reset().unwrap().state, SessionState::Idle);
        assert!(s.steer(SteerRequest::voltage(0.0, 0.0)).is_ok());
    }

    #[test]
    fn steer_request_needs_one_complete_pair() {
        let s = session();
        let bad = SteerRequest {
            vx: Some(0.1),
            y_mm: Some(1.0),
            ..Default::default()
        };
        assert!(matches!(s.steer(bad), Err(ServiceError::BadRequest(_))));
    }
}

