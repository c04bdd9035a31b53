//! In-process publish/subscribe node graph used to measure pipeline throughput.
//!
//! Every node runs on its own thread. Each subscription has a bounded FIFO queue
//! that either blocks the publisher when full or sheds its oldest message.
//! Messages carry the sequence number of the source frame they derive from; nodes
//! with several inputs only fire once every input holds the same sequence number.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::Serialize;
use thiserror::Error;

use crate::kv;

pub const DEFAULT_CAPACITY: usize = 2;
/// Frames excluded from the FPS figure when warmup exclusion is on.
pub const WARMUP_FRAMES: usize = 10;

/// The reference topology: feeder, combined sign/light detector, visualizer.
pub const REFERENCE_GRAPH: &str = "\
[topic input_frame]
type = image

[topic traffic_sign_detections]
type = detections

[topic traffic_light_detections]
type = detections

[topic output_frame]
type = image

[node image_feeder]
publishes = input_frame

[node traffic_sign_and_traffic_light_detector]
subscribes = input_frame
publishes = traffic_sign_detections, traffic_light_detections

[node visualizer]
subscribes = traffic_sign_detections, traffic_light_detections
publishes = output_frame
";

/// Immutable message body shared between subscribers.
pub type Payload = Arc<[u8]>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Syntax(#[from] kv::KvError),
    #[error("config line {line}: unknown section kind `{kind}`")]
    UnknownSection { line: usize, kind: String },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("duplicate topic `{0}`")]
    DuplicateTopic(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("node `{node}` references undeclared topic `{topic}`")]
    UnknownTopic { node: String, topic: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{node}` subscribes to its own topic `{topic}`")]
    SelfSubscription { node: String, topic: String },
    #[error("node `{node}` lists topic `{topic}` twice")]
    DuplicateReference { node: String, topic: String },
    #[error("topic `{topic}` has several writers ({}) but is not multi_writer", writers.join(", "))]
    MultipleWriters { topic: String, writers: Vec<String> },
    #[error("topic `{topic}` is multi_writer and cannot feed multi-input node `{node}`")]
    MultiWriterJoin { topic: String, node: String },
    #[error("topic `{0}` has capacity 0")]
    ZeroCapacity(String),
    #[error("cycle through nodes: {}", .0.join(", "))]
    Cycle(Vec<String>),
    #[error("graph needs exactly one source node (no subscriptions), found [{}]", .0.join(", "))]
    Sources(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicSpec {
    pub name: String,
    /// Free-form message type tag.
    pub kind: String,
    pub capacity: usize,
    pub multi_writer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSpec {
    pub name: String,
    pub subscribes: Vec<String>,
    pub publishes: Vec<String>,
    /// Simulated processing time added to every message.
    pub latency_ms: f64,
}

/// Unvalidated graph description.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct GraphConfig {
    pub topics: Vec<TopicSpec>,
    pub nodes: Vec<NodeSpec>,
}

impl GraphConfig {
    pub fn reference() -> GraphConfig {
        GraphConfig::parse(REFERENCE_GRAPH).expect("reference graph parses")
    }

    /// Parses `[topic name]` / `[node name]` sections.
    ///
    /// Topic keys: `type`, `capacity`, `multi_writer`.
    /// Node keys: `subscribes`, `publishes` (comma lists), `latency_ms`.
    pub fn parse(text: &str) -> Result<GraphConfig, ConfigError> {
        let sections = kv::parse(text)?;
        if let Some(e) = sections[0].entries.first() {
            return Err(ConfigError::UnknownKey { line: e.line, key: e.key.clone() });
        }
        let mut cfg = GraphConfig::default();
        for s in &sections[1..] {
            let (kind, name) = match s.header.as_slice() {
                [k, n] => (k.as_str(), n.clone()),
                _ => {
                    return Err(kv::KvError { line: s.line, message: "section header must be `[kind name]`".into() }.into())
                }
            };
            match kind {
                "topic" => {
                    let mut t = TopicSpec { name, kind: "bytes".into(), capacity: DEFAULT_CAPACITY, multi_writer: false };
                    for e in &s.entries {
                        match e.key.as_str() {
                            "type" => t.kind = e.value.clone(),
                            "capacity" => t.capacity = kv::value(e)?,
                            "multi_writer" => t.multi_writer = kv::value(e)?,
                            _ => return Err(ConfigError::UnknownKey { line: e.line, key: e.key.clone() }),
                        }
                    }
                    cfg.topics.push(t);
                }
                "node" => {
                    let mut n = NodeSpec { name, subscribes: vec![], publishes: vec![], latency_ms: 0.0 };
                    for e in &s.entries {
                        match e.key.as_str() {
                            "subscribes" => n.subscribes = kv::list(e),
                            "publishes" => n.publishes = kv::list(e),
                            "latency_ms" => {
                                n.latency_ms = kv::value(e)?;
                                if !(n.latency_ms >= 0.0 && n.latency_ms.is_finite()) {
                                    return Err(kv::KvError { line: e.line, message: "latency_ms must be >= 0".into() }.into());
                                }
                            }
                            _ => return Err(ConfigError::UnknownKey { line: e.line, key: e.key.clone() }),
                        }
                    }
                    cfg.nodes.push(n);
                }
                other => return Err(ConfigError::UnknownSection { line: s.line, kind: other.to_string() }),
            }
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.topics {
            s.push_str(&format!("[topic {}]\ntype = {}\ncapacity = {}\n", t.name, t.kind, t.capacity));
            if t.multi_writer {
                s.push_str("multi_writer = true\n");
            }
            s.push('\n');
        }
        for n in &self.nodes {
            s.push_str(&format!("[node {}]\n", n.name));
            if !n.subscribes.is_empty() {
                s.push_str(&format!("subscribes = {}\n", n.subscribes.join(", ")));
            }
            if !n.publishes.is_empty() {
                s.push_str(&format!("publishes = {}\n", n.publishes.join(", ")));
            }
            s.push_str(&format!("latency_ms = {}\n\n", n.latency_ms));
        }
        s
    }
}

/// Transforms one aligned set of inputs into one payload per published topic.
///
/// The source node receives the raw frame as its single input.
pub trait Handler: Send {
    fn handle(&mut self, seq: u64, inputs: &[Payload]) -> Result<Vec<Payload>, String>;
}

impl<F> Handler for F
where
    F: FnMut(u64, &[Payload]) -> Result<Vec<Payload>, String> + Send,
{
    fn handle(&mut self, seq: u64, inputs: &[Payload]) -> Result<Vec<Payload>, String> {
        self(seq, inputs)
    }
}

/// A validated graph, ready to run.
pub struct Graph {
    cfg: GraphConfig,
    handlers: Vec<Option<Box<dyn Handler>>>,
    /// Per topic: (node, input position) of each subscriber.
    subscribers: Vec<Vec<(usize, usize)>>,
    topic_index: HashMap<String, usize>,
    source: usize,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

pub fn build_graph(cfg: &GraphConfig) -> Result<Graph, ConfigError> {
    let mut topic_index = HashMap::new();
    for (i, t) in cfg.topics.iter().enumerate() {
        if topic_index.insert(t.name.clone(), i).is_some() {
            return Err(ConfigError::DuplicateTopic(t.name.clone()));
        }
        if t.capacity == 0 {
            return Err(ConfigError::ZeroCapacity(t.name.clone()));
        }
    }
    let mut seen = HashSet::new();
    let mut subscribers = vec![Vec::new(); cfg.topics.len()];
    let mut writers: Vec<Vec<usize>> = vec![Vec::new(); cfg.topics.len()];
    for (ni, n) in cfg.nodes.iter().enumerate() {
        if !seen.insert(n.name.as_str()) {
            return Err(ConfigError::DuplicateNode(n.name.clone()));
        }
        let resolve = |topic: &String| {
            topic_index
                .get(topic)
                .copied()
                .ok_or_else(|| ConfigError::UnknownTopic { node: n.name.clone(), topic: topic.clone() })
        };
        let mut mine = HashSet::new();
        for (pos, topic) in n.subscribes.iter().enumerate() {
            let ti = resolve(topic)?;
            if !mine.insert(ti) {
                return Err(ConfigError::DuplicateReference { node: n.name.clone(), topic: topic.clone() });
            }
            subscribers[ti].push((ni, pos));
        }
        let mut published = HashSet::new();
        for topic in &n.publishes {
            let ti = resolve(topic)?;
            if mine.contains(&ti) {
                return Err(ConfigError::SelfSubscription { node: n.name.clone(), topic: topic.clone() });
            }
            if !published.insert(ti) {
                return Err(ConfigError::DuplicateReference { node: n.name.clone(), topic: topic.clone() });
            }
            writers[ti].push(ni);
        }
    }
    for (ti, t) in cfg.topics.iter().enumerate() {
        if writers[ti].len() > 1 && !t.multi_writer {
            let names = writers[ti].iter().map(|&n| cfg.nodes[n].name.clone()).collect();
            return Err(ConfigError::MultipleWriters { topic: t.name.clone(), writers: names });
        }
        if t.multi_writer {
            if let Some(&(n, _)) = subscribers[ti].iter().find(|&&(n, _)| cfg.nodes[n].subscribes.len() > 1) {
                return Err(ConfigError::MultiWriterJoin { topic: t.name.clone(), node: cfg.nodes[n].name.clone() });
            }
        }
    }

    // Kahn's algorithm over node -> node edges; anything left over sits on a cycle.
    let mut indegree = vec![0usize; cfg.nodes.len()];
    let mut edges = vec![Vec::new(); cfg.nodes.len()];
    for (ti, subs) in subscribers.iter().enumerate() {
        for &w in &writers[ti] {
            for &(s, _) in subs {
                edges[w].push(s);
                indegree[s] += 1;
            }
        }
    }
    let mut ready: Vec<usize> = (0..cfg.nodes.len()).filter(|&n| indegree[n] == 0).collect();
    let mut visited = 0;
    while let Some(n) = ready.pop() {
        visited += 1;
        for &m in &edges[n] {
            indegree[m] -= 1;
            if indegree[m] == 0 {
                ready.push(m);
            }
        }
    }
    if visited < cfg.nodes.len() {
        let names = (0..cfg.nodes.len()).filter(|&n| indegree[n] > 0).map(|n| cfg.nodes[n].name.clone()).collect();
        return Err(ConfigError::Cycle(names));
    }

    let sources: Vec<usize> = (0..cfg.nodes.len()).filter(|&n| cfg.nodes[n].subscribes.is_empty()).collect();
    if sources.len() != 1 {
        return Err(ConfigError::Sources(sources.iter().map(|&n| cfg.nodes[n].name.clone()).collect()));
    }

    Ok(Graph {
        cfg: cfg.clone(),
        handlers: cfg.nodes.iter().map(|_| None).collect(),
        subscribers,
        topic_index,
        source: sources[0],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueMode {
    /// A full queue blocks its publisher. Lossless.
    Blocking,
    /// A full queue discards its oldest message.
    DropOldest,
}

impl FromStr for QueueMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "blocking" => Ok(QueueMode::Blocking),
            "drop_oldest" | "drop-oldest" => Ok(QueueMode::DropOldest),
            _ => Err(format!("unknown queue mode `{s}` (expected blocking or drop_oldest)")),
        }
    }
}

impl fmt::Display for QueueMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueueMode::Blocking => "blocking",
            QueueMode::DropOldest => "drop_oldest",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub mode: QueueMode,
    /// Measure FPS only after the first `WARMUP_FRAMES` outputs.
    pub warmup: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { mode: QueueMode::Blocking, warmup: false }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("node `{node}` failed: {message}")]
    Node { node: String, message: String },
    #[error("cannot record unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("recording failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    pub fn from_durations(mut samples: Vec<Duration>) -> LatencyStats {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        samples.sort_unstable();
        let ms = |d: Duration| d.as_secs_f64() * 1000.0;
        let rank = |p: f64| ms(samples[((p * samples.len() as f64).ceil() as usize).clamp(1, samples.len()) - 1]);
        LatencyStats {
            count: samples.len(),
            mean_ms: samples.iter().map(|&d| ms(d)).sum::<f64>() / samples.len() as f64,
            p50_ms: rank(0.50),
            p95_ms: rank(0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeReport {
    pub name: String,
    pub processed: usize,
    pub latency: LatencyStats,
    /// 1000 / mean latency: the rate this node could sustain on its own.
    pub capacity_fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueReport {
    pub topic: String,
    pub subscriber: String,
    pub capacity: usize,
    pub high_water: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: QueueMode,
    pub frames_in: usize,
    pub frames_out: usize,
    pub dropped: usize,
    /// First frame enqueued to last output published.
    pub wall_time_s: f64,
    pub fps: f64,
    pub warmup_excluded: bool,
    /// Source handler start to first completion, per frame.
    pub end_to_end: LatencyStats,
    pub nodes: Vec<NodeReport>,
    pub queues: Vec<QueueReport>,
}

impl RunReport {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "mode {}  frames in {}  out {}  dropped {}  wall {:.3} s  FPS {:.2}{}\n",
            self.mode,
            self.frames_in,
            self.frames_out,
            self.dropped,
            self.wall_time_s,
            self.fps,
            if self.warmup_excluded { " (warmup excluded)" } else { "" }
        );
        s.push_str(&format!(
            "end-to-end latency  p50 {:.2} ms  p95 {:.2} ms  mean {:.2} ms\n",
            self.end_to_end.p50_ms, self.end_to_end.p95_ms, self.end_to_end.mean_ms
        ));
        s.push_str(&format!("{:<42} {:>9} {:>9} {:>9} {:>9} {:>10}\n", "node", "processed", "p50 ms", "p95 ms", "mean ms", "cap FPS"));
        for n in &self.nodes {
            s.push_str(&format!(
                "{:<42} {:>9} {:>9.2} {:>9.2} {:>9.2} {:>10.2}\n",
                n.name, n.processed, n.latency.p50_ms, n.latency.p95_ms, n.latency.mean_ms, n.capacity_fps
            ));
        }
        s.push_str(&format!("{:<42} {:<42} {:>4} {:>4}\n", "topic", "subscriber", "cap", "max"));
        for q in &self.queues {
            s.push_str(&format!("{:<42} {:<42} {:>4} {:>4}\n", q.topic, q.subscriber, q.capacity, q.high_water));
        }
        s
    }
}

/// Observer for every message published on selected topics: (topic id, payload).
pub(crate) type Tap<'a> = dyn Fn(usize, &[u8]) + Sync + 'a;

struct Msg {
    seq: u64,
    payload: Payload,
}

struct InboxState {
    queues: Vec<VecDeque<Msg>>,
    caps: Vec<usize>,
    open_writers: Vec<usize>,
    high: Vec<usize>,
}

/// All input queues of one node, guarded together so multi-input alignment sees a
/// consistent view.
struct Inbox {
    state: Mutex<InboxState>,
    cv: Condvar,
}

impl Inbox {
    fn push(&self, input: usize, msg: Msg, mode: QueueMode, abort: &AtomicBool) -> Option<u64> {
        let mut st = self.state.lock();
        let mut shed = None;
        loop {
            if abort.load(Ordering::SeqCst) {
                return None;
            }
            if st.queues[input].len() < st.caps[input] {
                break;
            }
            match mode {
                QueueMode::Blocking => self.cv.wait(&mut st),
                QueueMode::DropOldest => {
                    shed = st.queues[input].pop_front().map(|m| m.seq);
                    break;
                }
            }
        }
        st.queues[input].push_back(msg);
        let len = st.queues[input].len();
        st.high[input] = st.high[input].max(len);
        self.cv.notify_all();
        shed
    }

    /// Next set of inputs sharing one sequence number. Sequence numbers that can no
    /// longer be completed are appended to `lost`. `None` once an input is exhausted.
    fn pop_aligned(&self, abort: &AtomicBool, lost: &mut Vec<u64>) -> Option<(u64, Vec<Payload>)> {
        let mut st = self.state.lock();
        loop {
            if abort.load(Ordering::SeqCst) {
                return None;
            }
            if let Some(i) = (0..st.queues.len()).find(|&i| st.queues[i].is_empty()) {
                if st.open_writers[i] == 0 {
                    for q in st.queues.iter_mut() {
                        lost.extend(q.drain(..).map(|m| m.seq));
                    }
                    self.cv.notify_all();
                    return None;
                }
                self.cv.wait(&mut st);
                continue;
            }
            let newest = st.queues.iter().map(|q| q.front().expect("non-empty").seq).max().expect("has inputs");
            let mut discarded = false;
            for q in st.queues.iter_mut() {
                while q.front().is_some_and(|m| m.seq < newest) {
                    lost.push(q.pop_front().expect("non-empty").seq);
                    discarded = true;
                }
            }
            if discarded {
                self.cv.notify_all();
                continue;
            }
            let payloads = st.queues.iter_mut().map(|q| q.pop_front().expect("non-empty").payload).collect();
            self.cv.notify_all();
            return Some((newest, payloads));
        }
    }

    fn close_writer(&self, input: usize) {
        let mut st = self.state.lock();
        st.open_writers[input] -= 1;
        self.cv.notify_all();
    }

    fn wake(&self) {
        let _st = self.state.lock();
        self.cv.notify_all();
    }
}

#[derive(Default)]
struct Ledger {
    first_enqueue: Option<Instant>,
    started: HashMap<u64, Instant>,
    completed: HashMap<u64, Instant>,
    lost: HashSet<u64>,
}

struct Shared<'t> {
    mode: QueueMode,
    abort: AtomicBool,
    inboxes: Vec<Inbox>,
    ledger: Mutex<Ledger>,
    error: Mutex<Option<RunError>>,
    tap: Option<&'t Tap<'t>>,
}

impl Shared<'_> {
    fn fail(&self, node: &str, message: String) {
        self.error.lock().get_or_insert(RunError::Node { node: node.to_string(), message });
        self.abort.store(true, Ordering::SeqCst);
        for inbox in &self.inboxes {
            inbox.wake();
        }
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    match p.downcast::<String>() {
        Ok(s) => format!("panicked: {s}"),
        Err(p) => match p.downcast::<&str>() {
            Ok(s) => format!("panicked: {s}"),
            Err(_) => "panicked".to_string(),
        },
    }
}

impl Graph {
    pub fn config(&self) -> &GraphConfig {
        &self.cfg
    }

    pub fn topic_names(&self) -> Vec<&str> {
        self.cfg.topics.iter().map(|t| t.name.as_str()).collect()
    }

    /// Position of a topic in declaration order; used as the bag topic id.
    pub fn topic_id(&self, name: &str) -> Option<usize> {
        self.topic_index.get(name).copied()
    }

    pub fn source_node(&self) -> &NodeSpec {
        &self.cfg.nodes[self.source]
    }

    fn node_index(&self, node: &str) -> Result<usize, ConfigError> {
        self.cfg.nodes.iter().position(|n| n.name == node).ok_or_else(|| ConfigError::UnknownNode(node.to_string()))
    }

    /// Replaces a node's pass-through behaviour.
    pub fn set_handler(&mut self, node: &str, handler: Box<dyn Handler>) -> Result<(), ConfigError> {
        let i = self.node_index(node)?;
        self.handlers[i] = Some(handler);
        Ok(())
    }

    pub fn set_latency(&mut self, node: &str, latency_ms: f64) -> Result<(), ConfigError> {
        let i = self.node_index(node)?;
        self.cfg.nodes[i].latency_ms = latency_ms;
        Ok(())
    }

    /// Feeds up to `n_frames` source frames through the graph and reports throughput.
    pub fn run<I>(&mut self, source: I, n_frames: usize, opts: RunOptions) -> Result<RunReport, RunError>
    where
        I: Iterator<Item = Payload> + Send,
    {
        self.run_tapped(source, n_frames, opts, None)
    }

    pub(crate) fn run_tapped<I>(
        &mut self,
        source: I,
        n_frames: usize,
        opts: RunOptions,
        tap: Option<&Tap<'_>>,
    ) -> Result<RunReport, RunError>
    where
        I: Iterator<Item = Payload> + Send,
    {
        let mut writer_count = vec![0usize; self.cfg.topics.len()];
        for n in &self.cfg.nodes {
            for t in &n.publishes {
                writer_count[self.topic_index[t]] += 1;
            }
        }
        let inboxes = self
            .cfg
            .nodes
            .iter()
            .map(|n| {
                let ids: Vec<usize> = n.subscribes.iter().map(|t| self.topic_index[t]).collect();
                Inbox {
                    state: Mutex::new(InboxState {
                        queues: ids.iter().map(|_| VecDeque::new()).collect(),
                        caps: ids.iter().map(|&t| self.cfg.topics[t].capacity).collect(),
                        open_writers: ids.iter().map(|&t| writer_count[t]).collect(),
                        high: vec![0; ids.len()],
                    }),
                    cv: Condvar::new(),
                }
            })
            .collect();
        let shared = Shared {
            mode: opts.mode,
            abort: AtomicBool::new(false),
            inboxes,
            ledger: Mutex::new(Ledger::default()),
            error: Mutex::new(None),
            tap,
        };

        let mut source = Some(source.take(n_frames));
        let samples: Vec<Vec<Duration>> = thread::scope(|scope| {
            let workers: Vec<_> = self
                .cfg
                .nodes
                .iter()
                .zip(self.handlers.iter_mut())
                .enumerate()
                .map(|(ni, (spec, handler))| {
                    let shared = &shared;
                    let subscribers = &self.subscribers;
                    let topic_index = &self.topic_index;
                    let frames = if ni == self.source { source.take() } else { None };
                    scope.spawn(move || {
                        let outputs: Vec<usize> = spec.publishes.iter().map(|t| topic_index[t]).collect();
                        let mut worker = Worker { ni, spec, handler, outputs: &outputs, subscribers, shared, samples: Vec::new() };
                        match frames {
                            Some(frames) => worker.run_source(frames),
                            None => worker.run_inner(),
                        }
                        worker.close();
                        worker.samples
                    })
                })
                .collect();
            workers.into_iter().map(|w| w.join().expect("worker panics are caught")).collect()
        });

        if let Some(e) = shared.error.into_inner() {
            return Err(e);
        }
        let ledger = shared.ledger.into_inner();
        let frames_in = ledger.started.len();
        let mut done: Vec<Instant> = ledger.completed.values().copied().collect();
        done.sort_unstable();
        let frames_out = done.len();
        let dropped = ledger.lost.iter().filter(|s| !ledger.completed.contains_key(s)).count();

        let wall = match (ledger.first_enqueue, done.last()) {
            (Some(a), Some(&b)) => b.saturating_duration_since(a).as_secs_f64(),
            _ => 0.0,
        };
        let warmup_excluded = opts.warmup && frames_out > WARMUP_FRAMES;
        let (count, span) = if warmup_excluded {
            (frames_out - WARMUP_FRAMES, done[frames_out - 1].saturating_duration_since(done[WARMUP_FRAMES - 1]).as_secs_f64())
        } else {
            (frames_out, wall)
        };
        let fps = if count == 0 || span <= 0.0 { 0.0 } else { count as f64 / span };

        let end_to_end = LatencyStats::from_durations(
            ledger
                .completed
                .iter()
                .filter_map(|(seq, &t)| ledger.started.get(seq).map(|&s| t.saturating_duration_since(s)))
                .collect(),
        );
        let nodes = self
            .cfg
            .nodes
            .iter()
            .zip(samples)
            .map(|(n, s)| {
                let latency = LatencyStats::from_durations(s);
                let capacity_fps = if latency.mean_ms > 0.0 { 1000.0 / latency.mean_ms } else { 0.0 };
                NodeReport { name: n.name.clone(), processed: latency.count, latency, capacity_fps }
            })
            .collect();
        let mut queues = Vec::new();
        for (ti, subs) in self.subscribers.iter().enumerate() {
            for &(ni, pos) in subs {
                let st = shared.inboxes[ni].state.lock();
                queues.push(QueueReport {
                    topic: self.cfg.topics[ti].name.clone(),
                    subscriber: self.cfg.nodes[ni].name.clone(),
                    capacity: st.caps[pos],
                    high_water: st.high[pos],
                });
            }
        }
        Ok(RunReport {
            mode: opts.mode,
            frames_in,
            frames_out,
            dropped,
            wall_time_s: wall,
            fps,
            warmup_excluded,
            end_to_end,
            nodes,
            queues,
        })
    }
}

struct Worker<'a, 't> {
    ni: usize,
    spec: &'a NodeSpec,
    handler: &'a mut Option<Box<dyn Handler>>,
    outputs: &'a [usize],
    subscribers: &'a [Vec<(usize, usize)>],
    shared: &'a Shared<'t>,
    samples: Vec<Duration>,
}

impl Worker<'_, '_> {
    fn run_source(&mut self, frames: impl Iterator<Item = Payload>) {
        for (seq, frame) in frames.enumerate() {
            if self.shared.abort.load(Ordering::SeqCst) {
                break;
            }
            let seq = seq as u64;
            self.shared.ledger.lock().started.insert(seq, Instant::now());
            if !self.step(seq, vec![frame]) {
                break;
            }
        }
    }

    fn run_inner(&mut self) {
        let inbox = &self.shared.inboxes[self.ni];
        let mut lost = Vec::new();
        loop {
            let next = inbox.pop_aligned(&self.shared.abort, &mut lost);
            if !lost.is_empty() {
                self.shared.ledger.lock().lost.extend(lost.drain(..));
            }
            let Some((seq, inputs)) = next else { break };
            if !self.step(seq, inputs) {
                break;
            }
        }
    }

    /// Processes one message; false when the run must stop.
    fn step(&mut self, seq: u64, inputs: Vec<Payload>) -> bool {
        let start = Instant::now();
        if self.spec.latency_ms > 0.0 {
            thread::sleep(Duration::from_secs_f64(self.spec.latency_ms / 1000.0));
        }
        let n_out = self.outputs.len();
        let result = match self.handler.as_mut() {
            Some(h) => catch_unwind(AssertUnwindSafe(|| h.handle(seq, &inputs))).unwrap_or_else(|p| Err(panic_message(p))),
            None => Ok(vec![inputs[0].clone(); n_out]),
        };
        self.samples.push(start.elapsed());
        let payloads = match result {
            Ok(p) if p.len() == n_out => p,
            Ok(p) => {
                self.shared.fail(&self.spec.name, format!("handler returned {} payloads for {} topics", p.len(), n_out));
                return false;
            }
            Err(message) => {
                self.shared.fail(&self.spec.name, message);
                return false;
            }
        };
        if n_out == 0 {
            self.complete(seq);
        }
        for (&topic, payload) in self.outputs.iter().zip(payloads) {
            if let Some(tap) = self.shared.tap {
                tap(topic, &payload);
            }
            let subs = &self.subscribers[topic];
            if subs.is_empty() {
                self.complete(seq);
                continue;
            }
            if self.spec.subscribes.is_empty() {
                self.shared.ledger.lock().first_enqueue.get_or_insert_with(Instant::now);
            }
            for &(node, input) in subs {
                let msg = Msg { seq, payload: payload.clone() };
                if let Some(shed) = self.shared.inboxes[node].push(input, msg, self.shared.mode, &self.shared.abort) {
                    self.shared.ledger.lock().lost.insert(shed);
                }
            }
        }
        true
    }

    fn complete(&self, seq: u64) {
        let mut ledger = self.shared.ledger.lock();
        let now = Instant::now();
        ledger.first_enqueue.get_or_insert(now);
        ledger.completed.entry(seq).or_insert(now);
    }

    fn close(&self) {
        for &topic in self.outputs {
            for &(node, input) in &self.subscribers[topic] {
                self.shared.inboxes[node].close_writer(input);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize) -> impl Iterator<Item = Payload> + Send {
        (0..n).map(|i| Payload::from(i.to_le_bytes().to_vec()))
    }

    #[test]
    fn reference_topology() {
        let g = build_graph(&GraphConfig::reference()).unwrap();
        assert_eq!(g.config().nodes.len(), 3);
        assert_eq!(
            g.topic_names(),
            vec!["input_frame", "traffic_sign_detections", "traffic_light_detections", "output_frame"]
        );
        assert_eq!(g.source_node().name, "image_feeder");
        assert!(g.config().topics.iter().all(|t| t.capacity == DEFAULT_CAPACITY));
        let again = GraphConfig::parse(&GraphConfig::reference().to_text()).unwrap();
        assert_eq!(again, GraphConfig::reference());
    }

    #[test]
    fn config_errors_name_offenders() {
        let unknown = "[topic a]\n[node s]\npublishes = a\n[node x]\nsubscribes = b\n";
        assert_eq!(
            build_graph(&GraphConfig::parse(unknown).unwrap()).unwrap_err(),
            ConfigError::UnknownTopic { node: "x".into(), topic: "b".into() }
        );
        let cycle = "[topic a]\n[topic b]\n[topic c]\n[node s]\npublishes = c\n\
                     [node x]\nsubscribes = a, c\npublishes = b\n[node y]\nsubscribes = b\npublishes = a\n";
        assert_eq!(
            build_graph(&GraphConfig::parse(cycle).unwrap()).unwrap_err(),
            ConfigError::Cycle(vec!["x".into(), "y".into()])
        );
        let dup = "[topic a]\n[node s]\npublishes = a\n[node s]\nsubscribes = a\n";
        assert_eq!(build_graph(&GraphConfig::parse(dup).unwrap()).unwrap_err(), ConfigError::DuplicateNode("s".into()));
        let own = "[topic a]\n[node s]\n[node x]\nsubscribes = a\npublishes = a\n";
        assert!(matches!(build_graph(&GraphConfig::parse(own).unwrap()), Err(ConfigError::SelfSubscription { .. })));
        let two_writers = "[topic a]\n[node s]\npublishes = a\n[node t]\npublishes = a\n";
        assert!(matches!(
            build_graph(&GraphConfig::parse(two_writers).unwrap()),
            Err(ConfigError::MultipleWriters { .. })
        ));
        assert!(matches!(GraphConfig::parse("[widget a]\n"), Err(ConfigError::UnknownSection { .. })));
        assert!(matches!(GraphConfig::parse("[topic a]\ncapacity = -1\n"), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn blocking_is_lossless_and_preserves_payloads() {
        let mut g = build_graph(&GraphConfig::reference()).unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let sink = seen.clone();
        g.set_handler(
            "visualizer",
            Box::new(move |seq: u64, inputs: &[Payload]| {
                assert_eq!(inputs[0], inputs[1]);
                sink.lock().push((seq, inputs[0].clone()));
                Ok(vec![inputs[0].clone()])
            }),
        )
        .unwrap();
        let r = g.run(frames(200), 200, RunOptions::default()).unwrap();
        assert_eq!((r.frames_in, r.frames_out, r.dropped), (200, 200, 0));
        let seen = seen.lock();
        assert!(seen.iter().enumerate().all(|(i, (seq, p))| *seq == i as u64 && **p == i.to_le_bytes()));
        assert!(r.queues.iter().all(|q| q.high_water <= q.capacity));
    }

    #[test]
    fn drop_oldest_accounts_for_every_frame() {
        let mut g = build_graph(&GraphConfig::reference()).unwrap();
        g.set_latency("visualizer", 2.0).unwrap();
        let opts = RunOptions { mode: QueueMode::DropOldest, warmup: false };
        let r = g.run(frames(300), 300, opts).unwrap();
        assert_eq!(r.frames_in, 300);
        assert_eq!(r.frames_in, r.frames_out + r.dropped);
        assert!(r.dropped > 0);
    }

    #[test]
    fn zero_frames() {
        let mut g = build_graph(&GraphConfig::reference()).unwrap();
        let r = g.run(frames(10), 0, RunOptions::default()).unwrap();
        assert_eq!((r.frames_in, r.frames_out, r.fps), (0, 0, 0.0));
    }

    #[test]
    fn handler_failure_names_node() {
        let mut g = build_graph(&GraphConfig::reference()).unwrap();
        g.set_handler(
            "traffic_sign_and_traffic_light_detector",
            Box::new(|seq: u64, inputs: &[Payload]| {
                if seq == 5 {
                    panic!("boom");
                }
                Ok(vec![inputs[0].clone(); 2])
            }),
        )
        .unwrap();
        let err = g.run(frames(50), 50, RunOptions::default()).unwrap_err();
        match err {
            RunError::Node { node, message } => {
                assert_eq!(node, "traffic_sign_and_traffic_light_detector");
                assert!(message.contains("boom"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn percentiles_nearest_rank() {
        let s = LatencyStats::from_durations((1..=100).map(Duration::from_millis).collect());
        assert_eq!((s.p50_ms, s.p95_ms), (50.0, 95.0));
        assert!((s.mean_ms - 50.5).abs() < 1e-9);
    }
}
