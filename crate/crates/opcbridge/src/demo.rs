//! Bundled error-detection demo: a surface-treatment line whose bath
//! presence sensors, arm position and camera live on the item server. Two
//! chained virtual sensors raise an alarm when a piece disappears while the
//! arm is elsewhere and steer the camera to the area by writing back to the
//! server.
//!
//! Everything runs in-process on the simulated clock, so a scenario always
//! produces the same event log.

use std::sync::{Arc, Mutex};

use serde::Deserialize;
use thiserror::Error;

use crate::client::{ClientSession, Connector, LoopbackConnector};
use crate::model::{ScalarValue, StreamElement};
use crate::server::{ServerConfig, ServerCore};
use crate::sim::{priority, Activity, Scheduler, Step};
use crate::vsn::processor::{builtin_registry, Processor, ProcessorCtx, ProcessorRegistry};
use crate::vsn::{eval::Row, Node};
use crate::wrapper::ElementSink;

pub const SERVER_CONFIG: &str = include_str!("../assets/demo-server.toml");
pub const VS1_ALARM: &str = include_str!("../assets/vs1-alarm.vsd.xml");
pub const VS2_CAMERA: &str = include_str!("../assets/vs2-camera.vsd.xml");
pub const SCENARIO_DEFAULT: &str = include_str!("../assets/scenario-default.toml");
pub const SCENARIO_ARM_ABOVE: &str = include_str!("../assets/scenario-arm-above.toml");

const SERVER_ADDR: &str = "127.0.0.1:4840";
const CAMERA_ITEM: &str = "camera.target";

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ScenarioAction {
    pub at_ms: u64,
    pub item: String,
    pub value: ScalarValue,
}

/// Timed writes against the item server, applied in order.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ScenarioScript {
    /// How long the simulation runs; defaults past the last action.
    pub run_until_ms: Option<u64>,
    #[serde(default, rename = "action")]
    pub actions: Vec<ScenarioAction>,
}

impl ScenarioScript {
    pub fn from_toml(text: &str) -> Result<ScenarioScript, DemoError> {
        let script: ScenarioScript =
            toml::from_str(text).map_err(|e| DemoError::Scenario(e.to_string()))?;
        if script.actions.windows(2).any(|w| w[0].at_ms > w[1].at_ms) {
            return Err(DemoError::Scenario("actions must be sorted by at-ms".to_owned()));
        }
        Ok(script)
    }

    fn horizon_ms(&self) -> u64 {
        self.run_until_ms
            .unwrap_or_else(|| self.actions.last().map_or(0, |a| a.at_ms) + 2000)
    }
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("scenario error: unknown item `{0}`")]
    UnknownItem(String),
    #[error("demo setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    AlarmRaised,
    CameraFocused,
}

impl EventKind {
    pub fn token(&self) -> &'static str {
        match self {
            EventKind::AlarmRaised => "ALARM_RAISED",
            EventKind::CameraFocused => "CAMERA_FOCUSED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub at_ms: u64,
    pub kind: EventKind,
    pub area: String,
}

pub fn format_event_log(log: &[Event]) -> String {
    log.iter()
        .map(|e| format!("t={} {} area={}\n", e.at_ms, e.kind.token(), e.area))
        .collect()
}

/// An expected event with the time window it must fall into.
#[derive(Debug, Clone)]
pub struct ExpectedEvent {
    pub at_ms_range: (u64, u64),
    pub kind: EventKind,
    pub area: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckResult {
    Pass,
    Fail(Vec<String>),
}

/// Matches the log against the expectations, in order, and flags any
/// unexpected extra events.
pub fn check(log: &[Event], expected: &[ExpectedEvent]) -> CheckResult {
    let mut diffs = Vec::new();
    for (i, exp) in expected.iter().enumerate() {
        match log.get(i) {
            None => diffs.push(format!(
                "missing event #{i}: {} area={} in [{}, {}]",
                exp.kind.token(),
                exp.area,
                exp.at_ms_range.0,
                exp.at_ms_range.1
            )),
            Some(got) => {
                if got.kind != exp.kind || got.area != exp.area {
                    diffs.push(format!(
                        "event #{i}: expected {} area={}, got {} area={}",
                        exp.kind.token(),
                        exp.area,
                        got.kind.token(),
                        got.area
                    ));
                } else if got.at_ms < exp.at_ms_range.0 || got.at_ms > exp.at_ms_range.1 {
                    diffs.push(format!(
                        "event #{i}: {} at t={} outside [{}, {}]",
                        got.kind.token(),
                        got.at_ms,
                        exp.at_ms_range.0,
                        exp.at_ms_range.1
                    ));
                }
            }
        }
    }
    for got in log.iter().skip(expected.len()) {
        diffs.push(format!(
            "unexpected event: {} area={} at t={}",
            got.kind.token(),
            got.area,
            got.at_ms
        ));
    }
    if diffs.is_empty() {
        CheckResult::Pass
    } else {
        CheckResult::Fail(diffs)
    }
}

/// `camera_steer`: writes the alarm area to the camera target item, closing
/// the actuation loop through the server, and forwards the area as output.
struct CameraSteer {
    connector: Arc<dyn Connector>,
    addr: String,
    item: String,
    session: Option<ClientSession>,
}

impl Processor for CameraSteer {
    fn process(
        &mut self,
        rows: &[Row],
        _ctx: &ProcessorCtx<'_>,
    ) -> Result<Option<Vec<ScalarValue>>, String> {
        let Some(row) = rows.first() else { return Ok(None) };
        let Some(ScalarValue::Text(area)) = row.get("area").cloned() else {
            return Err("row lacks a text `area` column".to_owned());
        };
        if self.session.as_ref().is_none_or(|s| s.is_dead()) {
            self.session =
                Some(self.connector.connect(&self.addr).map_err(|e| e.to_string())?);
        }
        self.session
            .as_mut()
            .expect("session just ensured")
            .write(&self.item, ScalarValue::Text(area.clone()))
            .map_err(|e| e.to_string())?;
        Ok(Some(vec![ScalarValue::Text(area)]))
    }
}

/// Registry for demo nodes: the builtins plus `camera_steer` bound to the
/// given server.
pub fn demo_registry(connector: Arc<dyn Connector>, addr: &str) -> ProcessorRegistry {
    let mut registry = builtin_registry();
    let addr = addr.to_owned();
    registry.register("camera_steer", move || {
        Box::new(CameraSteer {
            connector: Arc::clone(&connector),
            addr: addr.clone(),
            item: CAMERA_ITEM.to_owned(),
            session: None,
        })
    });
    registry
}

/// Applies scenario writes at their scheduled instants.
struct ScenarioPlayer {
    actions: std::vec::IntoIter<ScenarioAction>,
    pending: Option<ScenarioAction>,
    session: ClientSession,
}

impl Activity for ScenarioPlayer {
    fn step(&mut self, now_ms: u64) -> Step {
        loop {
            let action = match self.pending.take().or_else(|| self.actions.next()) {
                Some(a) => a,
                None => return Step::Done,
            };
            if action.at_ms > now_ms {
                let due = action.at_ms;
                self.pending = Some(action);
                return Step::NextAt(due);
            }
            if let Err(e) = self.session.write(&action.item, action.value.clone()) {
                log::error!("scenario write to `{}` failed: {e}", action.item);
            }
        }
    }
}

/// Sink that records VS1 alarm outputs.
struct AlarmListener {
    log: Arc<Mutex<Vec<Event>>>,
}

impl ElementSink for AlarmListener {
    fn deliver(&self, _vs: &str, element: StreamElement) {
        if let Some(ScalarValue::Text(area)) = element.value("area") {
            self.log.lock().unwrap().push(Event {
                at_ms: element.timestamp,
                kind: EventKind::AlarmRaised,
                area: area.clone(),
            });
        }
    }
}

/// Sink that records VS2 camera outputs, but only after reading the camera
/// target back from the server and seeing the commanded area.
struct CameraListener {
    log: Arc<Mutex<Vec<Event>>>,
    session: Mutex<ClientSession>,
}

impl ElementSink for CameraListener {
    fn deliver(&self, _vs: &str, element: StreamElement) {
        let Some(ScalarValue::Text(area)) = element.value("target") else { return };
        let mut session = self.session.lock().unwrap();
        match session.sync_read() {
            Ok(entries) => {
                let confirmed = entries
                    .iter()
                    .any(|(n, iv)| n == CAMERA_ITEM && iv.value == ScalarValue::Text(area.clone()));
                if confirmed {
                    self.log.lock().unwrap().push(Event {
                        at_ms: element.timestamp,
                        kind: EventKind::CameraFocused,
                        area: area.clone(),
                    });
                } else {
                    log::error!("camera read-back does not show `{area}`");
                }
            }
            Err(e) => log::error!("camera read-back failed: {e}"),
        }
    }
}

/// Runs the bundled two-VS pipeline against a scenario on the simulated
/// clock and returns the ordered event log.
pub fn run_demo(scenario: &ScenarioScript) -> Result<Vec<Event>, DemoError> {
    let config = ServerConfig::from_toml(SERVER_CONFIG).map_err(DemoError::Setup)?;
    for action in &scenario.actions {
        if !config.items.iter().any(|i| i.name == action.item) {
            return Err(DemoError::UnknownItem(action.item.clone()));
        }
    }

    let mut sched = Scheduler::new();
    let clock = sched.clock();
    let core = Arc::new(
        ServerCore::new(&config, clock.clone()).map_err(|e| DemoError::Setup(e.to_string()))?,
    );
    let mut connector = LoopbackConnector::new();
    connector.register(SERVER_ADDR, Arc::clone(&core));
    let connector: Arc<dyn Connector> = Arc::new(connector);

    let spawner = Arc::new(sched.spawner());
    let node = Node::new(
        demo_registry(Arc::clone(&connector), SERVER_ADDR),
        Arc::clone(&connector),
        clock.clone(),
        spawner,
    );

    // Scenario writes land before wrapper polls at equal instants, so the
    // t=0 initial values are visible to the very first read.
    let session = connector
        .connect(SERVER_ADDR)
        .map_err(|e| DemoError::Setup(e.to_string()))?;
    sched.spawn(
        "scenario",
        priority::SCENARIO,
        scenario.actions.first().map_or(0, |a| a.at_ms),
        Box::new(ScenarioPlayer {
            actions: scenario.actions.clone().into_iter(),
            pending: None,
            session,
        }),
    );

    for text in [VS1_ALARM, VS2_CAMERA] {
        let desc = node
            .parse_description(text)
            .map_err(|e| DemoError::Setup(e.to_string()))?;
        node.start_vs(desc).map_err(|e| DemoError::Setup(e.to_string()))?;
    }

    let log = Arc::new(Mutex::new(Vec::new()));
    node.get_vs("vs1")
        .expect("vs1 deployed")
        .attach_sink(Arc::new(AlarmListener { log: Arc::clone(&log) }));
    let mut readback = connector
        .connect(SERVER_ADDR)
        .map_err(|e| DemoError::Setup(e.to_string()))?;
    readback
        .setup_items(&[CAMERA_ITEM.to_owned()], 0)
        .map_err(|e| DemoError::Setup(e.to_string()))?;
    node.get_vs("vs2")
        .expect("vs2 deployed")
        .attach_sink(Arc::new(CameraListener {
            log: Arc::clone(&log),
            session: Mutex::new(readback),
        }));

    sched.run_until(scenario.horizon_ms());

    let log = log.lock().unwrap().clone();
    Ok(log)
}

/// Expectations for [`SCENARIO_DEFAULT`]: the piece is removed at t=500 and
/// both events must land within one update period plus 200 ms of slack.
pub fn default_expected() -> Vec<ExpectedEvent> {
    vec![
        ExpectedEvent {
            at_ms_range: (500, 500 + 100 + 200),
            kind: EventKind::AlarmRaised,
            area: "bath1".to_owned(),
        },
        ExpectedEvent {
            at_ms_range: (500, 500 + 100 + 200),
            kind: EventKind::CameraFocused,
            area: "bath1".to_owned(),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_raises_alarm_and_focuses_camera() {
        let scenario = ScenarioScript::from_toml(SCENARIO_DEFAULT).unwrap();
        let log = run_demo(&scenario).unwrap();
        assert_eq!(check(&log, &default_expected()), CheckResult::Pass, "log: {log:?}");
    }

    #[test]
    fn arm_above_bath_stays_silent() {
        let scenario = ScenarioScript::from_toml(SCENARIO_ARM_ABOVE).unwrap();
        let log = run_demo(&scenario).unwrap();
        assert_eq!(log, Vec::new());
    }

    #[test]
    fn demo_is_deterministic() {
        let scenario = ScenarioScript::from_toml(SCENARIO_DEFAULT).unwrap();
        let first = format_event_log(&run_demo(&scenario).unwrap());
        for _ in 0..2 {
            assert_eq!(format_event_log(&run_demo(&scenario).unwrap()), first);
        }
    }

    #[test]
    fn unknown_item_rejected_up_front() {
        let text = r#"
[[action]]
at-ms = 0
item = "ghost.item"
value = { bool = true }
"#;
        let scenario = ScenarioScript::from_toml(text).unwrap();
        assert!(matches!(run_demo(&scenario), Err(DemoError::UnknownItem(_))));
    }

    #[test]
    fn unsorted_scenario_rejected() {
        let text = r#"
[[action]]
at-ms = 100
item = "arm.zone"
value = { i32 = 0 }
[[action]]
at-ms = 50
item = "arm.zone"
value = { i32 = 1 }
"#;
        assert!(ScenarioScript::from_toml(text).is_err());
    }

    #[test]
    fn check_reports_missing_and_unexpected() {
        let log = vec![Event { at_ms: 600, kind: EventKind::AlarmRaised, area: "bath1".into() }];
        match check(&log, &default_expected()) {
            CheckResult::Fail(diffs) => {
                assert!(diffs.iter().any(|d| d.contains("missing")), "{diffs:?}")
            }
            CheckResult::Pass => panic!("must fail"),
        }
        let log = vec![
            Event { at_ms: 600, kind: EventKind::AlarmRaised, area: "bath1".into() },
            Event { at_ms: 600, kind: EventKind::CameraFocused, area: "bath1".into() },
            Event { at_ms: 900, kind: EventKind::AlarmRaised, area: "bath2".into() },
        ];
        match check(&log, &default_expected()) {
            CheckResult::Fail(diffs) => {
                assert!(diffs.iter().any(|d| d.contains("unexpected")), "{diffs:?}")
            }
            CheckResult::Pass => panic!("must fail"),
        }
        let log = vec![
            Event { at_ms: 1500, kind: EventKind::AlarmRaised, area: "bath1".into() },
            Event { at_ms: 1500, kind: EventKind::CameraFocused, area: "bath1".into() },
        ];
        match check(&log, &default_expected()) {
            CheckResult::Fail(diffs) => {
                assert!(diffs.iter().any(|d| d.contains("outside")), "{diffs:?}")
            }
            CheckResult::Pass => panic!("must fail"),
        }
    }
}
