//! The polling converter. Reads its item group every update period and
//! decides, per production mode, whether the reading becomes a stream
//! element:
//!
//! * **Periodic (PPM)** — emit at every tick; the production period equals
//!   the update period.
//! * **Change-based (CBPM)** — emit only when the reading (timestamps
//!   excluded) differs from the last emitted one; the production period is
//!   undefined. The first good reading emits so consumers get an initial
//!   state.
//!
//! Ticks run at `t0 + k*period`; period and mode changes queue up and apply
//! at the next tick boundary, re-anchoring the schedule at the instant of
//! application. [`decide`] is a pure function so the whole production-mode
//! semantics is unit-testable without I/O.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use crate::client::{ClientSession, Connector};
use crate::clock::Clock;
use crate::model::{
    convert_item_values, values_equal_ignoring_timestamp, ItemValue, ModelError, StreamElement,
};
use crate::sim::{Activity, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductionMode {
    Periodic,
    ChangeBased,
}

impl ProductionMode {
    /// Control-plane/config token.
    pub fn token(&self) -> &'static str {
        match self {
            ProductionMode::Periodic => "PPM",
            ProductionMode::ChangeBased => "CBPM",
        }
    }

    pub fn parse(s: &str) -> Option<ProductionMode> {
        match s {
            "PPM" => Some(ProductionMode::Periodic),
            "CBPM" => Some(ProductionMode::ChangeBased),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WrapperConfig {
    pub name: String,
    pub server_addr: String,
    pub items: Vec<String>,
    pub update_period_ms: u64,
    pub mode: ProductionMode,
    pub include_source_timestamps: bool,
}

impl WrapperConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.items.is_empty() {
            return Err(format!("wrapper `{}`: items must not be empty", self.name));
        }
        if self.update_period_ms < 1 {
            return Err(format!("wrapper `{}`: update-period-ms must be >= 1", self.name));
        }
        let mut seen = std::collections::HashSet::new();
        for it in &self.items {
            if !seen.insert(it.as_str()) {
                return Err(format!("wrapper `{}`: duplicate item `{it}`", self.name));
            }
        }
        Ok(())
    }
}

/// Outcome of one tick's reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Emit,
    Suppress,
    BadQuality,
}

/// Counters and the change-detection baseline.
///
/// Invariant: `emissions + suppressed + bad_quality_ticks == ticks`. Ticks
/// that never produced a reading (transport failures, reconnect gaps) count
/// separately as `missed_ticks`.
#[derive(Debug, Clone, Default)]
pub struct WrapperState {
    item_count: usize,
    pub last_emitted: Option<Vec<ItemValue>>,
    pub ticks: u64,
    pub emissions: u64,
    pub suppressed: u64,
    pub bad_quality_ticks: u64,
    pub missed_ticks: u64,
    pub overruns: u64,
    pub last_emit_time: Option<u64>,
    gap_sum_ms: u64,
    gap_count: u64,
    read_latency_sum_ms: u64,
    read_count: u64,
}

impl WrapperState {
    pub fn new(item_count: usize) -> WrapperState {
        WrapperState { item_count, ..WrapperState::default() }
    }

    /// Applies a decision: counters, emission gaps and the CBPM baseline.
    pub fn record(&mut self, decision: Decision, reading: &[ItemValue], now_ms: u64) {
        self.ticks += 1;
        match decision {
            Decision::Emit => {
                if let Some(prev) = self.last_emit_time {
                    self.gap_sum_ms += now_ms - prev;
                    self.gap_count += 1;
                }
                self.last_emit_time = Some(now_ms);
                self.last_emitted = Some(reading.to_vec());
                self.emissions += 1;
            }
            Decision::Suppress => self.suppressed += 1,
            Decision::BadQuality => self.bad_quality_ticks += 1,
        }
    }

    /// Mean gap between emissions; absent before the second emission.
    pub fn mean_production_period_ms(&self) -> Option<f64> {
        (self.gap_count > 0).then(|| self.gap_sum_ms as f64 / self.gap_count as f64)
    }

    pub fn record_read_latency(&mut self, ms: u64) {
        self.read_latency_sum_ms += ms;
        self.read_count += 1;
    }

    pub fn mean_read_latency_ms(&self) -> Option<f64> {
        (self.read_count > 0).then(|| self.read_latency_sum_ms as f64 / self.read_count as f64)
    }
}

/// Pure production-mode decision for one reading. No I/O, no mutation; the
/// caller applies the result with [`WrapperState::record`].
pub fn decide(
    state: &WrapperState,
    mode: ProductionMode,
    reading: &[ItemValue],
) -> Result<Decision, ModelError> {
    if reading.len() != state.item_count {
        return Err(ModelError::LengthMismatch {
            expected: state.item_count,
            got: reading.len(),
        });
    }
    if reading.iter().any(|iv| iv.quality.is_bad()) {
        return Ok(Decision::BadQuality);
    }
    Ok(match mode {
        ProductionMode::Periodic => Decision::Emit,
        ProductionMode::ChangeBased => match &state.last_emitted {
            None => Decision::Emit,
            Some(prev) => {
                if values_equal_ignoring_timestamp(prev, reading)? {
                    Decision::Suppress
                } else {
                    Decision::Emit
                }
            }
        },
    })
}

/// Consistent snapshot of a wrapper's observable state.
#[derive(Debug, Clone)]
pub struct WrapperMetrics {
    pub name: String,
    pub mode: ProductionMode,
    pub update_period_ms: u64,
    pub ticks: u64,
    pub emissions: u64,
    pub suppressed: u64,
    pub bad_quality_ticks: u64,
    pub missed_ticks: u64,
    pub overruns: u64,
    pub mean_production_period_ms: Option<f64>,
    pub mean_read_latency_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrapperCommand {
    SetPeriod(u64),
    SetMode(ProductionMode),
    Stop,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid update period: must be >= 1 ms")]
pub struct InvalidPeriod;

struct HandleInner {
    commands: VecDeque<WrapperCommand>,
    metrics: WrapperMetrics,
}

/// Shared control surface of a running wrapper: non-blocking command
/// enqueueing (applied at the next tick boundary) and metrics snapshots.
#[derive(Clone)]
pub struct WrapperHandle {
    inner: Arc<Mutex<HandleInner>>,
}

impl WrapperHandle {
    pub fn set_update_period(&self, ms: u64) -> Result<(), InvalidPeriod> {
        if ms < 1 {
            return Err(InvalidPeriod);
        }
        self.push(WrapperCommand::SetPeriod(ms));
        Ok(())
    }

    pub fn set_mode(&self, mode: ProductionMode) {
        self.push(WrapperCommand::SetMode(mode));
    }

    pub fn stop(&self) {
        self.push(WrapperCommand::Stop);
    }

    pub fn metrics(&self) -> WrapperMetrics {
        self.inner.lock().unwrap().metrics.clone()
    }

    fn push(&self, cmd: WrapperCommand) {
        self.inner.lock().unwrap().commands.push_back(cmd);
    }

    fn drain(&self) -> Vec<WrapperCommand> {
        self.inner.lock().unwrap().commands.drain(..).collect()
    }

    fn publish(&self, metrics: WrapperMetrics) {
        self.inner.lock().unwrap().metrics = metrics;
    }
}

/// Receives emitted elements; implemented by virtual sensors and by test
/// collectors.
pub trait ElementSink: Send + Sync {
    fn deliver(&self, wrapper_name: &str, element: StreamElement);
}

enum Phase {
    Polling,
    Reconnecting { backoff_ms: u64 },
}

const RECONNECT_AFTER_FAILURES: u32 = 3;
const BACKOFF_START_MS: u64 = 1000;
const BACKOFF_CAP_MS: u64 = 8000;

/// The polling loop as a steppable activity: runs on a scheduler in
/// simulations and on a thread in production.
pub struct WrapperEngine {
    config: WrapperConfig,
    period_ms: u64,
    mode: ProductionMode,
    connector: Arc<dyn Connector>,
    clock: Arc<dyn Clock>,
    sink: Arc<dyn ElementSink>,
    handle: WrapperHandle,
    session: Option<ClientSession>,
    state: WrapperState,
    phase: Phase,
    consecutive_failures: u32,
    /// Instant of the most recent scheduled tick (attempted or not).
    last_tick_ms: u64,
    /// When the next step is scheduled (to detect overruns on real clocks).
    expected_step_ms: u64,
}

impl WrapperEngine {
    pub fn new(
        config: WrapperConfig,
        connector: Arc<dyn Connector>,
        clock: Arc<dyn Clock>,
        sink: Arc<dyn ElementSink>,
    ) -> Result<(WrapperEngine, WrapperHandle), String> {
        config.validate()?;
        let metrics = WrapperMetrics {
            name: config.name.clone(),
            mode: config.mode,
            update_period_ms: config.update_period_ms,
            ticks: 0,
            emissions: 0,
            suppressed: 0,
            bad_quality_ticks: 0,
            missed_ticks: 0,
            overruns: 0,
            mean_production_period_ms: None,
            mean_read_latency_ms: None,
        };
        let handle = WrapperHandle {
            inner: Arc::new(Mutex::new(HandleInner {
                commands: VecDeque::new(),
                metrics,
            })),
        };
        let state = WrapperState::new(config.items.len());
        let engine = WrapperEngine {
            period_ms: config.update_period_ms,
            mode: config.mode,
            connector,
            clock,
            sink,
            handle: handle.clone(),
            session: None,
            state,
            phase: Phase::Polling,
            consecutive_failures: 0,
            last_tick_ms: 0,
            expected_step_ms: 0,
            config,
        };
        Ok((engine, handle))
    }

    pub fn handle(&self) -> WrapperHandle {
        self.handle.clone()
    }

    fn ensure_session(&mut self) -> bool {
        if self.session.as_ref().is_some_and(|s| !s.is_dead()) {
            return true;
        }
        self.session = None;
        match self.connector.connect(&self.config.server_addr) {
            Ok(mut session) => {
                match session.setup_items(&self.config.items, self.period_ms) {
                    Ok(()) => {
                        self.session = Some(session);
                        true
                    }
                    Err(e) => {
                        log::warn!("wrapper {}: item setup failed: {e}", self.config.name);
                        false
                    }
                }
            }
            Err(e) => {
                log::debug!("wrapper {}: connect failed: {e}", self.config.name);
                false
            }
        }
    }

    /// One scheduled tick: read, decide, emit. Returns false on failure.
    fn run_tick(&mut self, now_ms: u64) -> bool {
        if !self.ensure_session() {
            return false;
        }
        let session = self.session.as_mut().expect("session just ensured");
        let read_start = self.clock.now_ms();
        let entries = match session.sync_read() {
            Ok(entries) => entries,
            Err(e) => {
                log::warn!("wrapper {}: read failed: {e}", self.config.name);
                self.session = None;
                return false;
            }
        };
        self.state.record_read_latency(self.clock.now_ms() - read_start);
        let reading: Vec<ItemValue> = entries.iter().map(|(_, iv)| iv.clone()).collect();
        let decision = match decide(&self.state, self.mode, &reading) {
            Ok(d) => d,
            Err(e) => {
                log::error!("wrapper {}: {e}", self.config.name);
                self.session = None;
                return false;
            }
        };
        self.state.record(decision, &reading, now_ms);
        if decision == Decision::Emit {
            match convert_item_values(&entries, now_ms, self.config.include_source_timestamps) {
                Ok(element) => self.sink.deliver(&self.config.name, element),
                Err(e) => log::error!("wrapper {}: conversion failed: {e}", self.config.name),
            }
        }
        true
    }

    fn snapshot(&self) -> WrapperMetrics {
        WrapperMetrics {
            name: self.config.name.clone(),
            mode: self.mode,
            update_period_ms: self.period_ms,
            ticks: self.state.ticks,
            emissions: self.state.emissions,
            suppressed: self.state.suppressed,
            bad_quality_ticks: self.state.bad_quality_ticks,
            missed_ticks: self.state.missed_ticks,
            overruns: self.state.overruns,
            mean_production_period_ms: self.state.mean_production_period_ms(),
            mean_read_latency_ms: self.state.mean_read_latency_ms(),
        }
    }

    /// Commands coalesce at the tick boundary; the last period/mode wins.
    /// Returns true when a Stop was seen.
    fn apply_commands(&mut self) -> bool {
        for cmd in self.handle.drain() {
            match cmd {
                WrapperCommand::SetPeriod(ms) => self.period_ms = ms.max(1),
                WrapperCommand::SetMode(mode) => self.mode = mode,
                WrapperCommand::Stop => return true,
            }
        }
        false
    }
}

impl Activity for WrapperEngine {
    fn step(&mut self, now_ms: u64) -> Step {
        if self.apply_commands() {
            if let Some(mut s) = self.session.take() {
                s.bye();
            }
            self.handle.publish(self.snapshot());
            return Step::Done;
        }

        // A whole missed slot means the previous tick overran its period.
        if self.expected_step_ms > 0 && now_ms >= self.expected_step_ms + self.period_ms {
            self.state.overruns += 1;
        }

        let next = match self.phase {
            Phase::Polling => {
                self.last_tick_ms = now_ms;
                if self.run_tick(now_ms) {
                    self.consecutive_failures = 0;
                    now_ms + self.period_ms
                } else {
                    self.state.missed_ticks += 1;
                    self.consecutive_failures += 1;
                    if self.consecutive_failures >= RECONNECT_AFTER_FAILURES {
                        self.phase = Phase::Reconnecting { backoff_ms: BACKOFF_START_MS };
                        now_ms + BACKOFF_START_MS
                    } else {
                        now_ms + self.period_ms
                    }
                }
            }
            Phase::Reconnecting { backoff_ms } => {
                if self.ensure_session() {
                    // Tick instants skipped while reconnecting count as
                    // missed; the late tick runs immediately and the
                    // schedule re-anchors here.
                    self.state.missed_ticks +=
                        (now_ms - self.last_tick_ms).saturating_sub(1) / self.period_ms;
                    self.phase = Phase::Polling;
                    self.consecutive_failures = 0;
                    self.last_tick_ms = now_ms;
                    if self.run_tick(now_ms) {
                        now_ms + self.period_ms
                    } else {
                        self.state.missed_ticks += 1;
                        self.consecutive_failures = 1;
                        now_ms + self.period_ms
                    }
                } else {
                    self.consecutive_failures += 1;
                    let next_delay = (backoff_ms * 2).min(BACKOFF_CAP_MS);
                    self.phase = Phase::Reconnecting { backoff_ms: next_delay };
                    now_ms + next_delay
                }
            }
        };
        self.handle.publish(self.snapshot());
        self.expected_step_ms = next;
        Step::NextAt(next)
    }
}
