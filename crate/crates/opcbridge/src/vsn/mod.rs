//! The virtual-sensor node: hosts VSs, routes wrapper elements through
//! selection queries, window tables and processors, links VS outputs to
//! downstream VSs, and hot-deploys description files from a watched
//! directory.

pub mod desc;
pub mod eval;
pub mod processor;
pub mod query;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, Weak};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::client::Connector;
use crate::clock::Clock;
use crate::model::{StreamElement, StreamElementSchema};
use crate::sim::{priority, Activity, Spawner, Step};
use crate::wrapper::{ElementSink, WrapperEngine, WrapperHandle, WrapperMetrics};

use desc::{DescError, VsDescription, VsWrapperKind};
use eval::{eval_global, eval_wrapper_request, WindowTable};
use processor::{Processor, ProcessorCtx, ProcessorRegistry};

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("virtual sensor `{0}` is already deployed")]
    Duplicate(String),
    #[error("unknown producer `{producer}` for local wrapper `{wrapper}`")]
    UnknownProducer { producer: String, wrapper: String },
    #[error("deploying `{vs}` would close a cycle through `{through}`")]
    Cycle { vs: String, through: String },
    #[error(transparent)]
    Desc(#[from] DescError),
    #[error("wrapper setup failed: {0}")]
    Wrapper(String),
}

struct VsState {
    tables: HashMap<String, WindowTable>,
    processor: Box<dyn Processor>,
    /// Downstream VSs: (consumer-side wrapper name, consumer).
    subscribers: Vec<(String, Weak<VsRuntime>)>,
    external_sinks: Vec<Arc<dyn ElementSink>>,
    wrapper_handles: HashMap<String, WrapperHandle>,
    query_failures: u64,
    processor_failures: u64,
    stopped: bool,
}

/// One deployed virtual sensor. The ingest path is serialized by the state
/// mutex: elements from one wrapper are processed in arrival order, and the
/// VS graph being acyclic makes nested delivery through the subscriber list
/// deadlock-free.
pub struct VsRuntime {
    pub name: String,
    desc: VsDescription,
    clock: Arc<dyn Clock>,
    state: Mutex<VsState>,
}

impl VsRuntime {
    /// Feeds one element from `wrapper_name` through the selection pipeline.
    pub fn ingest(self: &Arc<Self>, wrapper_name: &str, element: StreamElement) {
        let mut deliveries: Vec<(String, Arc<VsRuntime>)> = Vec::new();
        let mut sinks: Vec<Arc<dyn ElementSink>> = Vec::new();
        let mut output: Option<StreamElement> = None;
        {
            let mut st = self.state.lock().unwrap();
            if st.stopped {
                return;
            }
            let Some(wrapper) = self.desc.wrappers.iter().find(|w| w.name == wrapper_name)
            else {
                log::error!("{}: element from unknown wrapper `{wrapper_name}`", self.name);
                return;
            };
            let row = match eval_wrapper_request(&wrapper.request, &element) {
                Ok(Some(row)) => row,
                Ok(None) => return,
                Err(e) => {
                    st.query_failures += 1;
                    log::warn!("{}: wrapper request on `{wrapper_name}`: {e}", self.name);
                    return;
                }
            };
            let now = self.clock.now_ms();
            let table = st
                .tables
                .get_mut(wrapper_name)
                .expect("a table exists per wrapper");
            table.push(row.clone(), now);

            // The global request reacts to changes of its source table only.
            if self.desc.global_request.from == wrapper_name {
                let rows = match eval_global(&self.desc.global_request, table, &row, now) {
                    Ok(rows) => rows,
                    Err(e) => {
                        st.query_failures += 1;
                        log::warn!("{}: global request: {e}", self.name);
                        return;
                    }
                };
                if !rows.is_empty() {
                    let ctx = ProcessorCtx {
                        vs_name: &self.name,
                        now_ms: now,
                        output_schema: &self.desc.output_schema,
                    };
                    match st.processor.process(&rows, &ctx) {
                        Ok(Some(values)) => {
                            match StreamElement::new(
                                self.desc.output_schema.clone(),
                                values,
                                now,
                            ) {
                                Ok(el) => output = Some(el),
                                Err(e) => {
                                    st.processor_failures += 1;
                                    log::warn!(
                                        "{}: processor output violates schema: {e}",
                                        self.name
                                    );
                                }
                            }
                        }
                        Ok(None) => {}
                        Err(e) => {
                            st.processor_failures += 1;
                            log::warn!("{}: processor failed: {e}", self.name);
                        }
                    }
                }
            }
            if output.is_some() {
                for (wname, consumer) in &st.subscribers {
                    if let Some(consumer) = consumer.upgrade() {
                        deliveries.push((wname.clone(), consumer));
                    }
                }
                sinks = st.external_sinks.clone();
            }
        }
        // Deliver outside the lock; acyclicity bounds the recursion.
        // External observers see the output before it propagates downstream.
        if let Some(el) = output {
            for sink in sinks {
                sink.deliver(&self.name, el.clone());
            }
            for (wname, consumer) in deliveries {
                consumer.ingest(&wname, el.clone());
            }
        }
    }

    pub fn output_schema(&self) -> &StreamElementSchema {
        &self.desc.output_schema
    }

    fn stop(&self) {
        let mut st = self.state.lock().unwrap();
        st.stopped = true;
        for handle in st.wrapper_handles.values() {
            handle.stop();
        }
        st.tables.clear();
        st.subscribers.clear();
        st.external_sinks.clear();
    }

    pub fn wrapper_handle(&self, wrapper: &str) -> Option<WrapperHandle> {
        self.state.lock().unwrap().wrapper_handles.get(wrapper).cloned()
    }

    pub fn wrapper_names_with_handles(&self) -> Vec<String> {
        let st = self.state.lock().unwrap();
        let mut names: Vec<String> = st.wrapper_handles.keys().cloned().collect();
        names.sort();
        names
    }

    pub fn failure_counts(&self) -> (u64, u64) {
        let st = self.state.lock().unwrap();
        (st.query_failures, st.processor_failures)
    }

    fn subscribe(&self, consumer_wrapper: String, consumer: &Arc<VsRuntime>) {
        self.state
            .lock()
            .unwrap()
            .subscribers
            .push((consumer_wrapper, Arc::downgrade(consumer)));
    }

    pub fn attach_sink(&self, sink: Arc<dyn ElementSink>) {
        self.state.lock().unwrap().external_sinks.push(sink);
    }
}

/// Lets a wrapper engine push into its VS.
struct VsIngestSink {
    vs: Weak<VsRuntime>,
}

impl ElementSink for VsIngestSink {
    fn deliver(&self, wrapper_name: &str, element: StreamElement) {
        if let Some(vs) = self.vs.upgrade() {
            vs.ingest(wrapper_name, element);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct FileRecord {
    hash: [u8; 32],
    /// Name of the VS started from this file; `None` when the file failed
    /// to deploy (kept so the failure is logged once per content version).
    vs_name: Option<String>,
}

struct NodeInner {
    vss: HashMap<String, Arc<VsRuntime>>,
    files: HashMap<PathBuf, FileRecord>,
}

/// Hosts the deployed VS set. Deploy/undeploy may run concurrently with
/// ingest; control lookups re-resolve targets on every command.
pub struct Node {
    processors: ProcessorRegistry,
    connector: Arc<dyn Connector>,
    clock: Arc<dyn Clock>,
    spawner: Arc<dyn Spawner>,
    inner: Mutex<NodeInner>,
}

impl Node {
    pub fn new(
        processors: ProcessorRegistry,
        connector: Arc<dyn Connector>,
        clock: Arc<dyn Clock>,
        spawner: Arc<dyn Spawner>,
    ) -> Arc<Node> {
        Arc::new(Node {
            processors,
            connector,
            clock,
            spawner,
            inner: Mutex::new(NodeInner { vss: HashMap::new(), files: HashMap::new() }),
        })
    }

    pub fn processors(&self) -> &ProcessorRegistry {
        &self.processors
    }

    /// Parses against this node's processor registry.
    pub fn parse_description(&self, text: &str) -> Result<VsDescription, DescError> {
        desc::parse_vs_description(text, &self.processors)
    }

    /// Starts a VS: window tables, processor instance, wrapper engines,
    /// producer/consumer links. Local wrappers need their producer deployed;
    /// cycles are rejected.
    pub fn start_vs(self: &Arc<Self>, description: VsDescription) -> Result<(), NodeError> {
        let mut inner = self.inner.lock().unwrap();
        if inner.vss.contains_key(&description.name) {
            return Err(NodeError::Duplicate(description.name));
        }
        for w in &description.wrappers {
            if let VsWrapperKind::Local { producer } = &w.kind {
                if !inner.vss.contains_key(producer) {
                    return Err(NodeError::UnknownProducer {
                        producer: producer.clone(),
                        wrapper: w.name.clone(),
                    });
                }
            }
        }
        check_acyclic(&inner.vss, &description)?;

        let processor = self
            .processors
            .instantiate(&description.processor)
            .ok_or_else(|| DescError::UnknownProcessor(description.processor.clone()))?;

        let tables = description
            .wrappers
            .iter()
            .map(|w| (w.name.clone(), WindowTable::new(description.window)))
            .collect();

        let vs = Arc::new(VsRuntime {
            name: description.name.clone(),
            desc: description,
            clock: Arc::clone(&self.clock),
            state: Mutex::new(VsState {
                tables,
                processor,
                subscribers: Vec::new(),
                external_sinks: Vec::new(),
                wrapper_handles: HashMap::new(),
                query_failures: 0,
                processor_failures: 0,
                stopped: false,
            }),
        });

        // Wire local wrappers to their producers, then spawn OPC pollers.
        for w in &vs.desc.wrappers {
            match &w.kind {
                VsWrapperKind::Local { producer } => {
                    inner.vss[producer].subscribe(w.name.clone(), &vs);
                }
                VsWrapperKind::Opc(config) => {
                    let sink = Arc::new(VsIngestSink { vs: Arc::downgrade(&vs) });
                    let (engine, handle) = WrapperEngine::new(
                        config.clone(),
                        Arc::clone(&self.connector),
                        Arc::clone(&self.clock),
                        sink,
                    )
                    .map_err(NodeError::Wrapper)?;
                    vs.state
                        .lock()
                        .unwrap()
                        .wrapper_handles
                        .insert(w.name.clone(), handle);
                    self.spawner.spawn(
                        &format!("{}/{}", vs.name, w.name),
                        priority::WRAPPER,
                        self.clock.now_ms(),
                        Box::new(engine),
                    );
                }
            }
        }

        // Consumers deployed earlier whose producer just (re)appeared.
        for other in inner.vss.values() {
            for w in &other.desc.wrappers {
                if let VsWrapperKind::Local { producer } = &w.kind {
                    if *producer == vs.name {
                        vs.subscribe(w.name.clone(), other);
                    }
                }
            }
        }

        log::info!("virtual sensor `{}` started", vs.name);
        inner.vss.insert(vs.name.clone(), vs);
        Ok(())
    }

    /// Stops a VS: wrappers halt at their next tick, tables drop, consumers
    /// stay alive and simply receive nothing.
    pub fn stop_vs(&self, name: &str) -> bool {
        let Some(vs) = self.inner.lock().unwrap().vss.remove(name) else {
            return false;
        };
        vs.stop();
        log::info!("virtual sensor `{name}` stopped");
        true
    }

    pub fn get_vs(&self, name: &str) -> Option<Arc<VsRuntime>> {
        self.inner.lock().unwrap().vss.get(name).cloned()
    }

    pub fn vs_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.inner.lock().unwrap().vss.keys().cloned().collect();
        names.sort();
        names
    }

    /// `(vs, wrapper, metrics)` for every OPC wrapper, sorted.
    pub fn list_wrappers(&self) -> Vec<(String, String, WrapperMetrics)> {
        let vss: Vec<Arc<VsRuntime>> = self.inner.lock().unwrap().vss.values().cloned().collect();
        let mut out = Vec::new();
        for vs in vss {
            for wname in vs.wrapper_names_with_handles() {
                if let Some(h) = vs.wrapper_handle(&wname) {
                    out.push((vs.name.clone(), wname, h.metrics()));
                }
            }
        }
        out.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        out
    }

    /// One scan of the deploy directory: new files start VSs, removed files
    /// stop them, changed content restarts them. Per-file failures never
    /// disturb the rest of the node.
    pub fn scan_deploy_dir(self: &Arc<Self>, dir: &Path) {
        let mut present: Vec<(PathBuf, Vec<u8>)> = Vec::new();
        let entries = match std::fs::read_dir(dir) {
            Ok(entries) => entries,
            Err(e) => {
                log::warn!("deploy scan of {} failed: {e}", dir.display());
                return;
            }
        };
        for entry in entries.flatten() {
            let path = entry.path();
            if !path
                .file_name()
                .is_some_and(|n| n.to_string_lossy().ends_with(".vsd.xml"))
            {
                continue;
            }
            match std::fs::read(&path) {
                Ok(content) => present.push((path, content)),
                Err(e) => log::warn!("cannot read {}: {e}", path.display()),
            }
        }
        present.sort_by(|a, b| a.0.cmp(&b.0));

        // Removed files first so a rename stop+start works in one scan.
        let known: Vec<PathBuf> = self.inner.lock().unwrap().files.keys().cloned().collect();
        for path in known {
            if !present.iter().any(|(p, _)| *p == path) {
                let record = self.inner.lock().unwrap().files.remove(&path);
                if let Some(FileRecord { vs_name: Some(vs), .. }) = record {
                    self.stop_vs(&vs);
                }
            }
        }

        for (path, content) in present {
            let hash: [u8; 32] = Sha256::digest(&content).into();
            let previous = self.inner.lock().unwrap().files.get(&path).cloned();
            match previous {
                Some(rec) if rec.hash == hash => continue, // identical: no-op
                Some(rec) => {
                    if let Some(vs) = rec.vs_name {
                        self.stop_vs(&vs);
                    }
                    self.deploy_file(&path, &content, hash);
                }
                None => self.deploy_file(&path, &content, hash),
            }
        }
    }

    fn deploy_file(self: &Arc<Self>, path: &Path, content: &[u8], hash: [u8; 32]) {
        let vs_name = match std::str::from_utf8(content)
            .map_err(|_| "file is not UTF-8".to_owned())
            .and_then(|text| self.parse_description(text).map_err(|e| e.to_string()))
            .and_then(|d| {
                let name = d.name.clone();
                self.start_vs(d).map(|()| name).map_err(|e| e.to_string())
            }) {
            Ok(name) => Some(name),
            Err(e) => {
                log::error!("deploy of {} failed: {e}", path.display());
                None
            }
        };
        self.inner
            .lock()
            .unwrap()
            .files
            .insert(path.to_owned(), FileRecord { hash, vs_name });
    }

    /// The periodic deploy-scan activity for a spawner/scheduler.
    pub fn deploy_scanner(self: &Arc<Self>, dir: PathBuf, scan_period_ms: u64) -> DeployScanner {
        DeployScanner { node: Arc::clone(self), dir, scan_period_ms }
    }
}

/// Rejects deployments that would close a VS-to-VS delivery cycle. Edges
/// come from the declared descriptions (producer -> consumer), including the
/// candidate's own.
fn check_acyclic(
    deployed: &HashMap<String, Arc<VsRuntime>>,
    candidate: &VsDescription,
) -> Result<(), NodeError> {
    let mut edges: Vec<(String, String)> = Vec::new();
    let mut collect = |desc: &VsDescription| {
        for w in &desc.wrappers {
            if let VsWrapperKind::Local { producer } = &w.kind {
                edges.push((producer.clone(), desc.name.clone()));
            }
        }
    };
    for vs in deployed.values() {
        collect(&vs.desc);
    }
    collect(candidate);

    // DFS from the candidate: a path back to it means a cycle.
    let mut stack = vec![candidate.name.clone()];
    let mut seen = std::collections::HashSet::new();
    while let Some(current) = stack.pop() {
        for (from, to) in &edges {
            if *from == current {
                if *to == candidate.name {
                    return Err(NodeError::Cycle {
                        vs: candidate.name.clone(),
                        through: current,
                    });
                }
                if seen.insert(to.clone()) {
                    stack.push(to.clone());
                }
            }
        }
    }
    Ok(())
}

pub struct DeployScanner {
    node: Arc<Node>,
    dir: PathBuf,
    scan_period_ms: u64,
}

impl Activity for DeployScanner {
    fn step(&mut self, now_ms: u64) -> Step {
        self.node.scan_deploy_dir(&self.dir);
        Step::NextAt(now_ms + self.scan_period_ms)
    }
}
