//! A directed acyclic network of layers. Edges point from a lower node to a
//! higher one: summaries travel up, predictions travel down as context.
//!
//! Nodes with several children combine their inputs through an input merge
//! unit, nodes with several parents combine contexts through a context
//! merge unit. Both are poolers over the concatenated inbound vectors,
//! trained on their own reconstruction.
//!
//! Two executors share the same per-node message handler: [`HetGraph::tick`]
//! is sequential and deterministic, [`HetGraph::run_async`] spreads nodes
//! over worker threads connected by bounded mailboxes.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Duration;

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Select, Sender};

use crate::error::{HicaError, Result};
use crate::layer::{FeedOutcome, Layer};
use crate::signal::{SeededRng, SignalVector};
use crate::unit::Pooler;

pub const DEFAULT_MAILBOX: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum MessageKind {
    Bottom,
    /// Summary from the child occupying `slot` in the receiver's child list.
    Summary { slot: usize },
    /// Prediction from the parent occupying `slot` in the receiver's parent list.
    Context { slot: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Message {
    pub(crate) kind: MessageKind,
    pub(crate) value: SignalVector,
    /// Tick of the bottom input that caused this message.
    pub(crate) stamp: u64,
    pub(crate) gain: f64,
}

impl Message {
    fn describe(&self) -> String {
        match self.kind {
            MessageKind::Bottom => format!("bottom input of tick {}", self.stamp),
            MessageKind::Summary { slot } => format!("summary from child slot {slot} (tick {})", self.stamp),
            MessageKind::Context { slot } => format!("context from parent slot {slot} (tick {})", self.stamp),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Node {
    pub(crate) label: String,
    pub(crate) layer: Layer,
    /// Lower neighbours, in edge insertion order.
    pub(crate) children: Vec<NodeId>,
    pub(crate) parents: Vec<NodeId>,
    pub(crate) input_merge: Option<Pooler>,
    pub(crate) context_merge: Option<Pooler>,
    /// Latest unconsumed summary per child. Overwritten if a child emits
    /// again before the barrier opens.
    pub(crate) pending: Vec<Option<SignalVector>>,
    /// Latest prediction per parent.
    pub(crate) parent_predictions: Vec<SignalVector>,
    pub(crate) context_stamp: Option<u64>,
    /// (parent, my slot in its child list)
    up: Vec<(NodeId, usize)>,
    /// (child, my slot in its parent list)
    down: Vec<(NodeId, usize)>,
}

#[derive(Default)]
struct Handled {
    outcome: Option<(FeedOutcome, Option<u64>)>,
    out: Vec<(NodeId, Message)>,
}

impl Node {
    fn new(label: String, layer: Layer) -> Self {
        Node {
            label,
            layer,
            children: Vec::new(),
            parents: Vec::new(),
            input_merge: None,
            context_merge: None,
            pending: Vec::new(),
            parent_predictions: Vec::new(),
            context_stamp: None,
            up: Vec::new(),
            down: Vec::new(),
        }
    }

    fn merge_lr(&self, gain: f64) -> f64 {
        self.layer.spec().base_lr * gain
    }

    fn handle(&mut self, msg: &Message) -> Result<Handled> {
        match msg.kind {
            MessageKind::Bottom => self.feed(&msg.value, msg),
            MessageKind::Summary { slot } => {
                self.pending[slot] = Some(msg.value.clone());
                if self.pending.iter().any(Option::is_none) {
                    return Ok(Handled::default());
                }
                let inbound: Vec<SignalVector> = self.pending.iter_mut().filter_map(Option::take).collect();
                let lr = self.merge_lr(msg.gain);
                let merged = match self.input_merge.as_mut() {
                    None => inbound.into_iter().next().expect("node with one child"),
                    Some(merge) => {
                        let window = [SignalVector::concat(&inbound)];
                        merge
                            .train(&window, lr)
                            .map_err(|e| e.in_unit(&format!("{}/input_merge", self.label)))?;
                        merge.encode(&window)?
                    }
                };
                self.feed(&merged, msg)
            }
            MessageKind::Context { slot } => {
                self.parent_predictions[slot] = msg.value.clone();
                let lr = self.merge_lr(msg.gain);
                let context = match self.context_merge.as_mut() {
                    None => msg.value.clone(),
                    Some(merge) => {
                        let window = [SignalVector::concat(&self.parent_predictions)];
                        merge
                            .train(&window, lr)
                            .map_err(|e| e.in_unit(&format!("{}/context_merge", self.label)))?;
                        merge.encode(&window)?
                    }
                };
                self.layer.set_context(&context)?;
                self.context_stamp = Some(msg.stamp);
                Ok(Handled::default())
            }
        }
    }

    fn feed(&mut self, x: &SignalVector, msg: &Message) -> Result<Handled> {
        let context_stamp = self.context_stamp;
        let outcome = self.layer.feed(x, msg.gain).map_err(|e| e.in_unit(&self.label))?;
        let mut out = Vec::new();
        if let Some(summary) = outcome.summary() {
            for &(parent, slot) in &self.up {
                out.push((
                    parent,
                    Message {
                        kind: MessageKind::Summary { slot },
                        value: summary.clone(),
                        stamp: msg.stamp,
                        gain: msg.gain,
                    },
                ));
            }
        }
        for &(child, slot) in &self.down {
            out.push((
                child,
                Message {
                    kind: MessageKind::Context { slot },
                    value: outcome.prediction.clone(),
                    stamp: msg.stamp,
                    gain: msg.gain,
                },
            ));
        }
        Ok(Handled {
            outcome: Some((outcome, context_stamp)),
            out,
        })
    }
}

/// One node's feed within a tick.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeed {
    pub node: NodeId,
    pub outcome: FeedOutcome,
    /// Tick at which the context used for this feed was produced.
    pub context_stamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub tick: u64,
    /// Feeds in processing order. A node appears at most once per tick.
    pub fed: Vec<NodeFeed>,
}

impl TickReport {
    pub fn outcome(&self, node: NodeId) -> Option<&FeedOutcome> {
        self.fed.iter().find(|f| f.node == node).map(|f| &f.outcome)
    }
}

/// A feed reported by [`HetGraph::run_async`].
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEvent {
    pub stamp: u64,
    pub node: NodeId,
    pub outcome: FeedOutcome,
}

/// Bottom inputs for one tick together with the plasticity gain to apply.
#[derive(Debug, Clone)]
pub struct TickInput {
    pub inputs: BTreeMap<NodeId, SignalVector>,
    pub gain: f64,
}

#[derive(Debug, Clone)]
pub struct HetGraph {
    pub(crate) nodes: Vec<Node>,
    labels: BTreeMap<String, NodeId>,
    edges: BTreeSet<(NodeId, NodeId)>,
    order: Option<Vec<NodeId>>,
    bottoms: Vec<NodeId>,
    pub(crate) tick: u64,
    merge_rng: SeededRng,
    mailbox: usize,
}

impl HetGraph {
    /// `seed` initializes merge units created at validation.
    pub fn new(seed: u64) -> Self {
        HetGraph {
            nodes: Vec::new(),
            labels: BTreeMap::new(),
            edges: BTreeSet::new(),
            order: None,
            bottoms: Vec::new(),
            tick: 0,
            merge_rng: SeededRng::new(seed),
            mailbox: DEFAULT_MAILBOX,
        }
    }

    pub fn add_node(&mut self, layer: Layer, label: &str) -> Result<NodeId> {
        if self.labels.contains_key(label) {
            return Err(HicaError::Graph(format!("duplicate node label {label:?}")));
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node::new(label.to_string(), layer));
        self.labels.insert(label.to_string(), id);
        self.order = None;
        Ok(id)
    }

    pub fn add_edge(&mut self, lower: NodeId, higher: NodeId) -> Result<()> {
        for id in [lower, higher] {
            if id.0 >= self.nodes.len() {
                return Err(HicaError::Graph(format!("unknown node {id}")));
            }
        }
        if lower == higher {
            return Err(HicaError::Graph(format!(
                "self-edge on {}",
                self.nodes[lower.0].label
            )));
        }
        if !self.edges.insert((lower, higher)) {
            return Err(HicaError::Graph(format!(
                "duplicate edge {} -> {}",
                self.label(lower),
                self.label(higher)
            )));
        }
        self.nodes[higher.0].children.push(lower);
        self.nodes[lower.0].parents.push(higher);
        self.order = None;
        Ok(())
    }

    pub fn set_mailbox_capacity(&mut self, capacity: usize) {
        self.mailbox = capacity.max(1);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_id(&self, label: &str) -> Option<NodeId> {
        self.labels.get(label).copied()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.nodes[id.0].label
    }

    pub fn layer(&self, id: NodeId) -> &Layer {
        &self.nodes[id.0].layer
    }

    pub fn layer_mut(&mut self, id: NodeId) -> &mut Layer {
        &mut self.nodes[id.0].layer
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].parents
    }

    pub fn input_merge(&self, id: NodeId) -> Option<&Pooler> {
        self.nodes[id.0].input_merge.as_ref()
    }

    pub fn context_merge(&self, id: NodeId) -> Option<&Pooler> {
        self.nodes[id.0].context_merge.as_ref()
    }

    pub fn context_stamp(&self, id: NodeId) -> Option<u64> {
        self.nodes[id.0].context_stamp
    }

    /// Nodes with no children; they receive external input.
    pub fn bottoms(&self) -> &[NodeId] {
        &self.bottoms
    }

    /// Topological order from the last successful validation.
    pub fn order(&self) -> Option<&[NodeId]> {
        self.order.as_deref()
    }

    /// Ticks processed so far.
    pub fn ticks(&self) -> u64 {
        self.tick
    }

    pub fn is_validated(&self) -> bool {
        self.order.is_some()
    }

    /// Checks acyclicity, dimension compatibility and connectivity, then
    /// builds merge units and caches the evaluation order. Reports every
    /// problem found.
    pub fn validate(&mut self) -> Result<()> {
        let mut problems = Vec::new();
        if self.nodes.is_empty() {
            problems.push("graph has no nodes".to_string());
        }

        // Kahn's algorithm, smallest id first so the order is reproducible.
        let n = self.nodes.len();
        let mut indegree: Vec<usize> = self.nodes.iter().map(|node| node.children.len()).collect();
        let mut ready: BTreeSet<NodeId> = (0..n).filter(|&i| indegree[i] == 0).map(NodeId).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(id) = ready.pop_first() {
            order.push(id);
            for &p in &self.nodes[id.0].parents {
                indegree[p.0] -= 1;
                if indegree[p.0] == 0 {
                    ready.insert(p);
                }
            }
        }
        if order.len() < n {
            let stuck: Vec<&str> = (0..n)
                .filter(|&i| indegree[i] > 0)
                .map(|i| self.nodes[i].label.as_str())
                .collect();
            problems.push(format!("cycle through nodes: {}", stuck.join(", ")));
        }

        if n > 1 {
            for node in &self.nodes {
                if node.children.is_empty() && node.parents.is_empty() {
                    problems.push(format!("orphan node {:?} has no edges", node.label));
                }
            }
        }

        for node in &self.nodes {
            let spec = node.layer.spec();
            match node.children.as_slice() {
                [] => {}
                [child] => {
                    let d_sum = self.nodes[child.0].layer.spec().d_sum;
                    if d_sum != spec.d_in {
                        problems.push(format!(
                            "edge {} -> {}: summary dim {} != input dim {}",
                            self.nodes[child.0].label, node.label, d_sum, spec.d_in
                        ));
                    }
                }
                many => {
                    let total: usize = many.iter().map(|c| self.nodes[c.0].layer.spec().d_sum).sum();
                    if spec.d_in >= total {
                        problems.push(format!(
                            "node {:?}: input merge needs input dim {} below combined child summary dim {}",
                            node.label, spec.d_in, total
                        ));
                    }
                }
            }
            match node.parents.as_slice() {
                [] => {}
                [parent] => {
                    let d_pred = self.nodes[parent.0].layer.spec().d_in;
                    if d_pred != spec.d_ctx {
                        problems.push(format!(
                            "edge {} -> {}: prediction dim {} != context dim {}",
                            node.label, self.nodes[parent.0].label, d_pred, spec.d_ctx
                        ));
                    }
                }
                many => {
                    let total: usize = many.iter().map(|p| self.nodes[p.0].layer.spec().d_in).sum();
                    if spec.d_ctx >= total {
                        problems.push(format!(
                            "node {:?}: context merge needs context dim {} below combined parent prediction dim {}",
                            node.label, spec.d_ctx, total
                        ));
                    }
                }
            }
        }

        if !problems.is_empty() {
            self.order = None;
            return Err(HicaError::Validation(problems));
        }

        for i in 0..n {
            self.wire(i)?;
        }
        self.bottoms = order
            .iter()
            .copied()
            .filter(|id| self.nodes[id.0].children.is_empty())
            .collect();
        self.order = Some(order);
        Ok(())
    }

    fn wire(&mut self, i: usize) -> Result<()> {
        let children = self.nodes[i].children.clone();
        let parents = self.nodes[i].parents.clone();
        let spec = *self.nodes[i].layer.spec();

        let up = parents
            .iter()
            .map(|&p| {
                let slot = self.nodes[p.0].children.iter().position(|&c| c.0 == i).expect("edge");
                (p, slot)
            })
            .collect();
        let down = children
            .iter()
            .map(|&c| {
                let slot = self.nodes[c.0].parents.iter().position(|&p| p.0 == i).expect("edge");
                (c, slot)
            })
            .collect();

        let child_total: usize = children.iter().map(|c| self.nodes[c.0].layer.spec().d_sum).sum();
        let parent_dims: Vec<usize> = parents.iter().map(|p| self.nodes[p.0].layer.spec().d_in).collect();

        let keep_input = matches!(&self.nodes[i].input_merge, Some(m) if m.d_in() == child_total && m.d_sum() == spec.d_in);
        let input_merge = if children.len() < 2 {
            None
        } else if keep_input {
            self.nodes[i].input_merge.take()
        } else {
            let mut rng = self.merge_rng.child(2 * i as u64);
            Some(Pooler::new(1, child_total, spec.d_in, spec.base_lr, &mut rng)?)
        };

        let parent_total: usize = parent_dims.iter().sum();
        let keep_context = matches!(&self.nodes[i].context_merge, Some(m) if m.d_in() == parent_total && m.d_sum() == spec.d_ctx);
        let context_merge = if parents.len() < 2 {
            None
        } else if keep_context {
            self.nodes[i].context_merge.take()
        } else {
            let mut rng = self.merge_rng.child(2 * i as u64 + 1);
            Some(Pooler::new(1, parent_total, spec.d_ctx, spec.base_lr, &mut rng)?)
        };

        let node = &mut self.nodes[i];
        if node.pending.len() != children.len() {
            node.pending = vec![None; children.len()];
        }
        if node.parent_predictions.len() != parents.len() {
            node.parent_predictions = parent_dims.iter().map(|&d| SignalVector::zeros(d)).collect();
        }
        node.input_merge = input_merge;
        node.context_merge = context_merge;
        node.up = up;
        node.down = down;
        Ok(())
    }

    fn ensure_valid(&self) -> Result<()> {
        if self.order.is_none() {
            return Err(HicaError::Graph("graph must be validated before use".into()));
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &BTreeMap<NodeId, SignalVector>) -> Result<()> {
        for &b in &self.bottoms {
            if !inputs.contains_key(&b) {
                return Err(HicaError::Graph(format!(
                    "missing bottom input for {}",
                    self.label(b)
                )));
            }
        }
        if let Some(extra) = inputs.keys().find(|id| !self.bottoms.contains(id)) {
            let name = self.nodes.get(extra.0).map_or("unknown", |n| n.label.as_str());
            return Err(HicaError::Graph(format!("{name} is not a bottom node")));
        }
        Ok(())
    }

    /// One global propagation step. Bottom nodes are fed in topological
    /// order, summaries are routed upward as they are emitted, and the
    /// predictions of every node that fed are delivered to its children
    /// only after the upward pass, so they take effect next tick.
    pub fn tick(&mut self, inputs: &BTreeMap<NodeId, SignalVector>, gain: f64) -> Result<TickReport> {
        self.ensure_valid()?;
        self.check_inputs(inputs)?;
        self.tick += 1;
        let stamp = self.tick;

        let mut queue: VecDeque<(NodeId, Message)> = self
            .bottoms
            .iter()
            .map(|&b| {
                (
                    b,
                    Message {
                        kind: MessageKind::Bottom,
                        value: inputs[&b].clone(),
                        stamp,
                        gain,
                    },
                )
            })
            .collect();
        let mut deferred = Vec::new();
        let mut fed = Vec::new();

        while let Some((id, msg)) = queue.pop_front() {
            let handled = self.nodes[id.0].handle(&msg)?;
            if let Some((outcome, context_stamp)) = handled.outcome {
                fed.push(NodeFeed {
                    node: id,
                    outcome,
                    context_stamp,
                });
            }
            for (target, m) in handled.out {
                match m.kind {
                    MessageKind::Context { .. } => deferred.push((target, m)),
                    _ => queue.push_back((target, m)),
                }
            }
        }
        for (target, m) in deferred {
            self.nodes[target.0].handle(&m)?;
        }
        Ok(TickReport { tick: stamp, fed })
    }

    /// Delivers `value` to every child of `node` as if `node` had just
    /// predicted it. Used to drive lower layers from an external plan.
    pub fn push_context(&mut self, node: NodeId, value: &SignalVector, gain: f64) -> Result<()> {
        self.ensure_valid()?;
        value.ensure_dim(self.layer(node).spec().d_in, "pushed context")?;
        let down = self.nodes[node.0].down.clone();
        for (child, slot) in down {
            let msg = Message {
                kind: MessageKind::Context { slot },
                value: value.clone(),
                stamp: self.tick,
                gain,
            };
            self.nodes[child.0].handle(&msg)?;
        }
        Ok(())
    }

    /// Runs a stream of ticks. With one worker this is exactly the
    /// [`HetGraph::tick`] loop. With more, nodes are distributed over
    /// threads and process their mailboxes as messages arrive, so contexts
    /// may reach a child earlier or later than in the sequential schedule.
    ///
    /// `on_event` is called on the calling thread for every node feed.
    /// Returns the number of ticks consumed.
    pub fn run_async<I, F>(&mut self, inputs: I, worker_count: usize, mut on_event: F) -> Result<u64>
    where
        I: IntoIterator<Item = TickInput>,
        F: FnMut(NodeEvent) -> Result<()>,
    {
        self.ensure_valid()?;
        if worker_count == 0 {
            return Err(HicaError::InvalidArgument("worker_count must be at least 1".into()));
        }
        if worker_count == 1 {
            let mut ticks = 0;
            for input in inputs {
                let report = self.tick(&input.inputs, input.gain)?;
                ticks += 1;
                for feed in report.fed {
                    on_event(NodeEvent {
                        stamp: report.tick,
                        node: feed.node,
                        outcome: feed.outcome,
                    })?;
                }
            }
            return Ok(ticks);
        }
        self.run_workers(inputs, worker_count, on_event)
    }

    fn run_workers<I, F>(&mut self, inputs: I, workers: usize, mut on_event: F) -> Result<u64>
    where
        I: IntoIterator<Item = TickInput>,
        F: FnMut(NodeEvent) -> Result<()>,
    {
        let owner = move |id: NodeId| id.0 % workers;
        let (txs, rxs): (Vec<Sender<Envelope>>, Vec<Receiver<Envelope>>) =
            (0..workers).map(|_| bounded(self.mailbox)).unzip();
        let (ev_tx, ev_rx) = unbounded::<WorkerEvent>();
        let in_flight = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);

        let bottoms = self.bottoms.clone();
        let labels: Vec<String> = self.nodes.iter().map(|n| n.label.clone()).collect();
        let start = self.tick;

        let mut buckets: Vec<Vec<(NodeId, &mut Node)>> = (0..workers).map(|_| Vec::new()).collect();
        for (i, node) in self.nodes.iter_mut().enumerate() {
            buckets[owner(NodeId(i))].push((NodeId(i), node));
        }

        let mut failure: Option<HicaError> = None;
        let mut ticks = 0u64;

        std::thread::scope(|scope| {
            for (me, (rx, bucket)) in rxs.into_iter().zip(buckets).enumerate() {
                let ctx = WorkerContext {
                    me,
                    owner: &owner,
                    txs: txs.clone(),
                    rx,
                    events: ev_tx.clone(),
                    in_flight: &in_flight,
                    abort: &abort,
                };
                scope.spawn(move || ctx.run(bucket));
            }
            drop(ev_tx);

            let mut deliver = |ev: WorkerEvent, failure: &mut Option<HicaError>| match ev {
                WorkerEvent::Fed(e) => {
                    if failure.is_none() {
                        if let Err(err) = on_event(e) {
                            abort.store(true, Ordering::SeqCst);
                            *failure = Some(err);
                        }
                    }
                }
                WorkerEvent::Failed(err) => {
                    if failure.is_none() {
                        *failure = Some(err);
                    }
                }
            };

            'feed: for input in inputs {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                for b in &bottoms {
                    if !input.inputs.contains_key(b) {
                        failure = Some(HicaError::Graph(format!("missing bottom input for {}", labels[b.0])));
                        abort.store(true, Ordering::SeqCst);
                        break 'feed;
                    }
                }
                if input.inputs.len() != bottoms.len() {
                    failure = Some(HicaError::Graph("input for a node that is not a bottom node".into()));
                    abort.store(true, Ordering::SeqCst);
                    break;
                }
                ticks += 1;
                for b in &bottoms {
                    let env = Envelope::Deliver(
                        *b,
                        Message {
                            kind: MessageKind::Bottom,
                            value: input.inputs[b].clone(),
                            stamp: start + ticks,
                            gain: input.gain,
                        },
                    );
                    in_flight.fetch_add(1, Ordering::SeqCst);
                    let tx = &txs[owner(*b)];
                    let mut env = Some(env);
                    // Block on the mailbox, but keep draining events so a
                    // slow consumer never wedges the workers.
                    while let Some(e) = env.take() {
                        let mut sel = Select::new();
                        let si = sel.send(tx);
                        let ri = sel.recv(&ev_rx);
                        let op = sel.select();
                        if op.index() == si {
                            op.send(tx, e).expect("worker mailbox closed");
                        } else {
                            debug_assert_eq!(op.index(), ri);
                            if let Ok(ev) = op.recv(&ev_rx) {
                                deliver(ev, &mut failure);
                            }
                            env = Some(e);
                        }
                    }
                }
            }

            while in_flight.load(Ordering::SeqCst) > 0 {
                match ev_rx.recv_timeout(Duration::from_millis(1)) {
                    Ok(ev) => deliver(ev, &mut failure),
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => break,
                }
            }
            for tx in &txs {
                let _ = tx.send(Envelope::Stop);
            }
            while let Ok(ev) = ev_rx.recv() {
                deliver(ev, &mut failure);
            }
        });

        self.tick = start + ticks;
        match failure {
            Some(err) => Err(err),
            None => Ok(ticks),
        }
    }
}

enum Envelope {
    Deliver(NodeId, Message),
    Stop,
}

enum WorkerEvent {
    Fed(NodeEvent),
    Failed(HicaError),
}

struct WorkerContext<'a, O: Fn(NodeId) -> usize> {
    me: usize,
    owner: &'a O,
    txs: Vec<Sender<Envelope>>,
    rx: Receiver<Envelope>,
    events: Sender<WorkerEvent>,
    in_flight: &'a AtomicUsize,
    abort: &'a AtomicBool,
}

impl<O: Fn(NodeId) -> usize> WorkerContext<'_, O> {
    fn run(self, mut nodes: Vec<(NodeId, &mut Node)>) {
        let mut local: VecDeque<Envelope> = VecDeque::new();
        let mut failed = false;
        loop {
            let env = match local.pop_front() {
                Some(e) => e,
                None => match self.rx.recv() {
                    Ok(e) => e,
                    Err(_) => break,
                },
            };
            let (id, msg) = match env {
                Envelope::Stop => break,
                Envelope::Deliver(id, msg) => (id, msg),
            };
            if !failed && !self.abort.load(Ordering::SeqCst) {
                let node = nodes
                    .iter_mut()
                    .find(|(nid, _)| *nid == id)
                    .map(|(_, n)| &mut **n)
                    .expect("message routed to owning worker");
                match node.handle(&msg) {
                    Ok(handled) => {
                        if let Some((outcome, _)) = handled.outcome {
                            let _ = self.events.send(WorkerEvent::Fed(NodeEvent {
                                stamp: msg.stamp,
                                node: id,
                                outcome,
                            }));
                        }
                        for (target, m) in handled.out {
                            self.in_flight.fetch_add(1, Ordering::SeqCst);
                            let env = Envelope::Deliver(target, m);
                            let dest = (self.owner)(target);
                            if dest == self.me {
                                local.push_back(env);
                            } else {
                                self.send(dest, env, &mut local);
                            }
                        }
                    }
                    Err(err) => {
                        failed = true;
                        self.abort.store(true, Ordering::SeqCst);
                        let _ = self.events.send(WorkerEvent::Failed(HicaError::Worker {
                            node: node.label.clone(),
                            last_message: msg.describe(),
                            reason: err.to_string(),
                        }));
                    }
                }
            }
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
        }
    }

    /// Blocking send that keeps accepting its own mail meanwhile, so two
    /// workers with full mailboxes cannot wait on each other forever.
    fn send(&self, dest: usize, env: Envelope, local: &mut VecDeque<Envelope>) {
        let tx = &self.txs[dest];
        let mut env = Some(env);
        while let Some(e) = env.take() {
            let mut sel = Select::new();
            let si = sel.send(tx);
            sel.recv(&self.rx);
            let op = sel.select();
            if op.index() == si {
                op.send(tx, e).expect("worker mailbox closed");
            } else {
                if let Ok(m) = op.recv(&self.rx) {
                    local.push_back(m);
                }
                env = Some(e);
            }
        }
    }
}
