//! Shared harness for integration tests.

#![allow(dead_code)]

pub mod oracle;

use std::sync::{Arc, Mutex};

use opcbridge::client::LoopbackConnector;
use opcbridge::model::{ScalarValue, StreamElement};
use opcbridge::server::{GeneratorSpec, ItemSpec, ServerConfig, ServerCore};
use opcbridge::sim::Scheduler;
use opcbridge::wrapper::ElementSink;

/// Collects emitted elements with their production timestamps.
#[derive(Default)]
pub struct Collector {
    elements: Mutex<Vec<StreamElement>>,
}

impl Collector {
    pub fn new() -> Arc<Collector> {
        Arc::new(Collector::default())
    }

    pub fn elements(&self) -> Vec<StreamElement> {
        self.elements.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.elements.lock().unwrap().len()
    }

    /// The single `src` column of each element as i64, in emission order.
    pub fn values_i64(&self) -> Vec<i64> {
        self.elements()
            .iter()
            .map(|e| match e.value("src") {
                Some(ScalarValue::I64(v)) => *v,
                other => panic!("expected I64 src field, got {other:?}"),
            })
            .collect()
    }

    pub fn timestamps(&self) -> Vec<u64> {
        self.elements().iter().map(|e| e.timestamp).collect()
    }
}

impl ElementSink for Collector {
    fn deliver(&self, _wrapper: &str, element: StreamElement) {
        self.elements.lock().unwrap().push(element);
    }
}

/// Server with one `src` item stepping through fresh I64 values, a new one
/// at every sampling tick.
pub fn fresh_value_config(sampling_period_ms: u64, value_count: i64) -> ServerConfig {
    ServerConfig {
        listen_port: 0,
        start_time_ms: Some(0),
        items: vec![ItemSpec {
            name: "src".to_owned(),
            sampling_period_ms,
            writable: false,
            generator: GeneratorSpec::Steps {
                values: (0..value_count).map(ScalarValue::I64).collect(),
                cycle: false,
            },
        }],
    }
}

/// Builds a scheduler-driven server core plus a loopback connector that
/// resolves `addr`.
pub fn sim_server(
    sched: &Scheduler,
    config: &ServerConfig,
    addr: &str,
) -> (Arc<ServerCore>, Arc<LoopbackConnector>) {
    let core = Arc::new(ServerCore::new(config, sched.clock()).expect("valid config"));
    let mut connector = LoopbackConnector::new();
    connector.register(addr, Arc::clone(&core));
    (core, Arc::new(connector))
}
