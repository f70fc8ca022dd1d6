//! Standalone OPC-lite item server. The cache is plain shared memory: one
//! cell per item, rewritten by that item's generator every sampling period
//! (or by client writes), read concurrently by sessions. The server knows
//! nothing about clients' update periods and does no change tracking.

pub mod config;
pub mod session;
pub mod tcp;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::clock::Clock;
use crate::model::{coerce_nan, ItemValue, OpcTimestamp, Quality, ScalarValue};
use crate::sim::{Activity, Step};

pub use config::{GeneratorSpec, ItemSpec, ServerConfig};

/// Knuth's 64-bit LCG; documented in `docs/server-config.md` so random-walk
/// traces are reproducible across implementations.
pub const LCG_MULTIPLIER: u64 = 6364136223846793005;
pub const LCG_INCREMENT: u64 = 1442695040888963407;

#[derive(Debug, Clone, Copy)]
struct WalkState {
    lcg: u64,
    value: f64,
}

impl WalkState {
    fn next(&mut self, step: f64) -> f64 {
        self.lcg = self.lcg.wrapping_mul(LCG_MULTIPLIER).wrapping_add(LCG_INCREMENT);
        // Top 53 bits -> uniform fraction in [0, 1); scaled to [-step, step).
        let frac = (self.lcg >> 11) as f64 / (1u64 << 53) as f64;
        self.value += (2.0 * frac - 1.0) * step;
        self.value
    }
}

struct ItemState {
    spec: ItemSpec,
    cell: ItemValue,
    /// Generator ticks already applied (tick 0 is the t=0 initialization).
    ticks_done: u64,
    walk: Option<WalkState>,
}

impl ItemState {
    fn next_tick_due(&self, start_ms: u64) -> Option<u64> {
        if matches!(self.spec.generator, GeneratorSpec::External) {
            return None;
        }
        Some(start_ms + self.ticks_done * self.spec.sampling_period_ms)
    }
}

/// The item cache plus everything sessions need. One mutex guards the whole
/// cache, so a synchronous read is one consistent snapshot by construction.
pub struct ServerCore {
    items: Mutex<HashMap<String, ItemState>>,
    names_sorted: Vec<String>,
    start_ms: u64,
    clock: Arc<dyn Clock>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("port {port} unavailable: {source}")]
    PortInUse { port: u16, source: std::io::Error },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, PartialEq, Eq)]
pub enum WriteOutcome {
    Ok,
    UnknownItem,
    Denied,
}

impl ServerCore {
    /// Builds the cache and initializes every cell from its generator at
    /// tick 0. External items start as `Bool(false)` with Uncertain quality
    /// until first written.
    pub fn new(config: &ServerConfig, clock: Arc<dyn Clock>) -> Result<ServerCore, ServerError> {
        config.validate().map_err(ServerError::InvalidConfig)?;
        let start_ms = config.start_time_ms.unwrap_or_else(|| clock.now_ms());
        let mut items = HashMap::new();
        let mut names: Vec<String> = Vec::new();
        for spec in &config.items {
            let mut walk = match &spec.generator {
                GeneratorSpec::RandomWalk { seed, start, .. } => {
                    Some(WalkState { lcg: *seed, value: *start })
                }
                _ => None,
            };
            let (value, quality) = match &spec.generator {
                GeneratorSpec::External => {
                    (ScalarValue::Bool(false), Quality::uncertain(0))
                }
                g => {
                    let v = generate(g, 0, 0, walk.as_mut());
                    let (v, q) = coerce_nan(v, Quality::GOOD);
                    (v, q)
                }
            };
            names.push(spec.name.clone());
            items.insert(
                spec.name.clone(),
                ItemState {
                    spec: spec.clone(),
                    cell: ItemValue { value, quality, timestamp: OpcTimestamp(start_ms) },
                    ticks_done: 1,
                    walk,
                },
            );
        }
        names.sort();
        Ok(ServerCore { items: Mutex::new(items), names_sorted: names, start_ms, clock })
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// All item names, sorted (the BROWSE result).
    pub fn browse(&self) -> Vec<String> {
        self.names_sorted.clone()
    }

    pub fn has_item(&self, name: &str) -> bool {
        self.names_sorted.binary_search_by(|n| n.as_str().cmp(name)).is_ok()
    }

    /// One consistent snapshot of the named items, in the given order.
    pub fn read_items(&self, names: &[String]) -> Option<Vec<(String, ItemValue)>> {
        let items = self.items.lock().unwrap();
        names
            .iter()
            .map(|n| items.get(n).map(|st| (n.clone(), st.cell.clone())))
            .collect()
    }

    /// Client write: replaces the cell immediately. The item's generator
    /// overwrites it again at its next sampling tick (never for External).
    pub fn write_item(&self, name: &str, value: ScalarValue) -> WriteOutcome {
        let mut items = self.items.lock().unwrap();
        let Some(st) = items.get_mut(name) else {
            return WriteOutcome::UnknownItem;
        };
        if !st.spec.writable {
            return WriteOutcome::Denied;
        }
        let (value, quality) = coerce_nan(value, Quality::GOOD);
        st.cell = ItemValue { value, quality, timestamp: OpcTimestamp(self.clock.now_ms()) };
        WriteOutcome::Ok
    }

    /// Applies every generator tick due at or before `now_ms` and returns
    /// the next due instant across all generator-driven items.
    pub fn tick_generators(&self, now_ms: u64) -> Option<u64> {
        let mut items = self.items.lock().unwrap();
        let mut next: Option<u64> = None;
        for st in items.values_mut() {
            while let Some(due) = st.next_tick_due(self.start_ms) {
                if due > now_ms {
                    next = Some(next.map_or(due, |n| n.min(due)));
                    break;
                }
                let t_rel = due - self.start_ms;
                let v = generate(&st.spec.generator, st.ticks_done, t_rel, st.walk.as_mut());
                let (v, q) = coerce_nan(v, Quality::GOOD);
                st.cell = ItemValue { value: v, quality: q, timestamp: OpcTimestamp(due) };
                st.ticks_done += 1;
            }
        }
        next
    }

    /// The cache-update activity to hand to a spawner/scheduler.
    pub fn generator_activity(self: &Arc<Self>) -> GeneratorActivity {
        GeneratorActivity { core: Arc::clone(self) }
    }
}

/// Value of generator `g` at tick `k` (`t_rel` ms after server start).
fn generate(g: &GeneratorSpec, k: u64, t_rel: u64, walk: Option<&mut WalkState>) -> ScalarValue {
    match g {
        GeneratorSpec::Constant { value } => value.clone(),
        GeneratorSpec::Steps { values, cycle } => {
            let idx = if *cycle {
                (k as usize) % values.len()
            } else {
                (k as usize).min(values.len() - 1)
            };
            values[idx].clone()
        }
        GeneratorSpec::Sine { amplitude, period_ms, offset } => {
            let phase = t_rel as f64 / *period_ms as f64;
            ScalarValue::F64(offset + amplitude * (2.0 * std::f64::consts::PI * phase).sin())
        }
        GeneratorSpec::RandomWalk { step, .. } => {
            let walk = walk.expect("walk state present for random-walk items");
            if k == 0 {
                ScalarValue::F64(walk.value)
            } else {
                ScalarValue::F64(walk.next(*step))
            }
        }
        GeneratorSpec::External => unreachable!("external items have no generator ticks"),
    }
}

pub struct GeneratorActivity {
    core: Arc<ServerCore>,
}

impl Activity for GeneratorActivity {
    fn step(&mut self, now_ms: u64) -> Step {
        match self.core.tick_generators(now_ms) {
            Some(next) => Step::NextAt(next),
            None => Step::Done,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::sim::{priority, Scheduler};

    fn core_with(items: Vec<ItemSpec>) -> (Arc<ServerCore>, Arc<SimClock>) {
        let clock = Arc::new(SimClock::new(0));
        let config = ServerConfig { listen_port: 0, start_time_ms: Some(0), items };
        let core = Arc::new(ServerCore::new(&config, clock.clone()).unwrap());
        (core, clock)
    }

    fn item(name: &str, period: u64, generator: GeneratorSpec) -> ItemSpec {
        ItemSpec {
            name: name.to_owned(),
            sampling_period_ms: period,
            writable: false,
            generator,
        }
    }

    #[test]
    fn constant_item_refreshes_timestamp_only() {
        let (core, clock) = core_with(vec![item(
            "c",
            100,
            GeneratorSpec::Constant { value: ScalarValue::F64(5.0) },
        )]);
        clock.advance_to(250);
        core.tick_generators(250);
        let got = core.read_items(&["c".to_owned()]).unwrap();
        assert_eq!(got[0].1.value, ScalarValue::F64(5.0));
        // Timestamp is the last multiple of the sampling period.
        assert_eq!(got[0].1.timestamp, OpcTimestamp(200));
    }

    #[test]
    fn steps_schedule() {
        let vals = vec![ScalarValue::I32(1), ScalarValue::I32(2), ScalarValue::I32(3)];
        let (core, clock) = core_with(vec![item(
            "s",
            100,
            GeneratorSpec::Steps { values: vals, cycle: false },
        )]);
        let read = |core: &ServerCore| core.read_items(&["s".to_owned()]).unwrap()[0].1.clone();
        assert_eq!(read(&core).value, ScalarValue::I32(1));
        clock.advance_to(100);
        core.tick_generators(100);
        assert_eq!(read(&core).value, ScalarValue::I32(2));
        clock.advance_to(250);
        core.tick_generators(250);
        assert_eq!(read(&core).value, ScalarValue::I32(3));
        clock.advance_to(10_000);
        core.tick_generators(10_000);
        assert_eq!(read(&core).value, ScalarValue::I32(3)); // clamped, no cycle
    }

    #[test]
    fn random_walk_is_reproducible() {
        let run = || {
            let (core, _clock) = core_with(vec![item(
                "w",
                50,
                GeneratorSpec::RandomWalk { seed: 42, step: 0.5, start: 1.0 },
            )]);
            let mut trace = Vec::new();
            for t in (0..=1000).step_by(50) {
                core.tick_generators(t);
                trace.push(core.read_items(&["w".to_owned()]).unwrap()[0].1.clone());
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn write_survives_until_next_generator_tick() {
        let (core, clock) = core_with(vec![ItemSpec {
            name: "x".to_owned(),
            sampling_period_ms: 100,
            writable: true,
            generator: GeneratorSpec::Constant { value: ScalarValue::I32(1) },
        }]);
        clock.advance_to(50);
        assert_eq!(core.write_item("x", ScalarValue::I32(99)), WriteOutcome::Ok);
        let got = core.read_items(&["x".to_owned()]).unwrap();
        assert_eq!(got[0].1.value, ScalarValue::I32(99));
        assert_eq!(got[0].1.timestamp, OpcTimestamp(50));
        clock.advance_to(100);
        core.tick_generators(100);
        let got = core.read_items(&["x".to_owned()]).unwrap();
        assert_eq!(got[0].1.value, ScalarValue::I32(1));
    }

    #[test]
    fn write_checks() {
        let (core, _clock) = core_with(vec![item(
            "ro",
            100,
            GeneratorSpec::Constant { value: ScalarValue::I32(1) },
        )]);
        assert_eq!(core.write_item("nope", ScalarValue::I32(0)), WriteOutcome::UnknownItem);
        assert_eq!(core.write_item("ro", ScalarValue::I32(0)), WriteOutcome::Denied);
    }

    #[test]
    fn nan_steps_value_becomes_bad_quality_zero() {
        let (core, clock) = core_with(vec![item(
            "n",
            100,
            GeneratorSpec::Steps {
                values: vec![ScalarValue::F64(1.0), ScalarValue::F64(f64::NAN)],
                cycle: false,
            },
        )]);
        clock.advance_to(100);
        core.tick_generators(100);
        let got = core.read_items(&["n".to_owned()]).unwrap();
        assert_eq!(got[0].1.value, ScalarValue::F64(0.0));
        assert!(got[0].1.quality.is_bad());
    }

    #[test]
    fn cache_timestamps_form_arithmetic_progression() {
        let (core, _clock) = core_with(vec![
            item("a", 100, GeneratorSpec::RandomWalk { seed: 1, step: 1.0, start: 0.0 }),
            item("b", 70, GeneratorSpec::RandomWalk { seed: 2, step: 1.0, start: 0.0 }),
        ]);
        let mut sched = Scheduler::new();
        sched.spawn("gen", priority::SERVER, 0, Box::new(core.generator_activity()));

        let mut seen_a = Vec::new();
        let mut seen_b = Vec::new();
        for t in 0..=1000 {
            sched.run_until(t);
            let got = core.read_items(&["a".to_owned(), "b".to_owned()]).unwrap();
            for (seen, iv) in [(&mut seen_a, &got[0].1), (&mut seen_b, &got[1].1)] {
                assert!(iv.timestamp.0 <= t);
                if seen.last() != Some(&iv.timestamp.0) {
                    seen.push(iv.timestamp.0);
                }
            }
        }
        assert_eq!(seen_a, (0..=1000).step_by(100).collect::<Vec<_>>());
        assert_eq!(seen_b, (0..=1000).step_by(70).filter(|t| *t <= 1000).collect::<Vec<_>>());
    }
}
