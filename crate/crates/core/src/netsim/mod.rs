//! Deterministic discrete-event transport.
//!
//! One virtual clock and one event queue ordered by (time, insertion
//! sequence). Nodes are callbacks registered under an address; all
//! randomness comes from the simulation's [`SplitMix64`].

mod rng;
mod trace;

use std::any::Any;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rng::{fnv1a64, mix64, SplitMix64};
pub use trace::{summarize, TraceEvent, TraceKind, TraceLog};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeAddress(String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid node address `{0}`")]
pub struct InvalidAddress(pub String);

impl NodeAddress {
    pub fn new(id: &str) -> Result<Self, InvalidAddress> {
        if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c.is_control()) {
            return Err(InvalidAddress(id.to_owned()));
        }
        Ok(NodeAddress(id.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for NodeAddress {
    type Error = InvalidAddress;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        NodeAddress::new(&s)
    }
}

impl From<NodeAddress> for String {
    fn from(a: NodeAddress) -> String {
        a.0
    }
}

impl fmt::Display for NodeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Shorthand for addresses known to be valid.
pub fn addr(id: &str) -> NodeAddress {
    NodeAddress::new(id).expect("valid node address")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latency {
    Fixed(u64),
    Uniform { low: u64, high: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub latency: Latency,
    pub loss_probability: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            latency: Latency::Fixed(10),
            loss_probability: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("latency range low {low} exceeds high {high}")]
    LatencyRange { low: u64, high: u64 },
    #[error("loss probability {0} outside [0, 1]")]
    LossProbability(f64),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Latency::Uniform { low, high } = self.latency {
            if low > high {
                return Err(ConfigError::LatencyRange { low, high });
            }
        }
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(ConfigError::LossProbability(self.loss_probability));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub src: NodeAddress,
    pub dst: NodeAddress,
    pub payload: Vec<u8>,
    pub deliver_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimerId(u64);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("address {0} already registered")]
    DuplicateAddress(NodeAddress),
    #[error("timer deadline {fire_at} is before now ({now})")]
    PastDeadline { fire_at: u64, now: u64 },
    #[error("virtual clock limit {limit} exceeded")]
    LimitExceeded { limit: u64, partial: TraceLog },
}

/// A simulated network element.
pub trait Node: Any {
    fn on_message(&mut self, ctx: &mut Context<'_>, env: Envelope);

    fn on_timer(&mut self, _ctx: &mut Context<'_>, _timer: TimerId, _tag: &str) {}
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeHandle {
    pub addr: NodeAddress,
}

enum Scheduled {
    Deliver(Envelope),
    Timer {
        id: TimerId,
        owner: NodeAddress,
        tag: String,
    },
}

struct Kernel {
    config: SimConfig,
    now: u64,
    seq: u64,
    next_timer: u64,
    queue: BTreeMap<(u64, u64), Scheduled>,
    timers: HashMap<TimerId, (u64, u64)>,
    rng: SplitMix64,
    trace: Vec<TraceEvent>,
}

impl Kernel {
    fn record(&mut self, kind: TraceKind, src: &NodeAddress, dst: &NodeAddress, summary: String) {
        self.trace.push(TraceEvent {
            at: self.now,
            kind,
            src: src.clone(),
            dst: dst.clone(),
            summary,
        });
    }

    fn push(&mut self, at: u64, item: Scheduled) -> (u64, u64) {
        let key = (at, self.seq);
        self.seq += 1;
        self.queue.insert(key, item);
        key
    }

    fn sample_latency(&mut self) -> u64 {
        match self.config.latency {
            Latency::Fixed(ms) => ms,
            Latency::Uniform { low, high } => low + self.rng.below(high - low + 1),
        }
    }

    fn send(&mut self, src: &NodeAddress, dst: &NodeAddress, payload: Vec<u8>) {
        let summary = summarize(&payload);
        // The loss draw happens on every send so the stream does not depend
        // on the configured probability.
        let lost = self.rng.next_f64() < self.config.loss_probability;
        if lost {
            self.record(TraceKind::Drop, src, dst, format!("loss {summary}"));
            return;
        }
        let deliver_at = self.now + self.sample_latency();
        self.record(TraceKind::Send, src, dst, summary);
        self.push(
            deliver_at,
            Scheduled::Deliver(Envelope {
                src: src.clone(),
                dst: dst.clone(),
                payload,
                deliver_at,
            }),
        );
    }

    fn set_timer(
        &mut self,
        owner: &NodeAddress,
        fire_at: u64,
        tag: &str,
    ) -> Result<TimerId, SimError> {
        if fire_at < self.now {
            return Err(SimError::PastDeadline {
                fire_at,
                now: self.now,
            });
        }
        let id = TimerId(self.next_timer);
        self.next_timer += 1;
        let key = self.push(
            fire_at,
            Scheduled::Timer {
                id,
                owner: owner.clone(),
                tag: tag.to_owned(),
            },
        );
        self.timers.insert(id, key);
        Ok(id)
    }

    fn cancel_timer(&mut self, id: TimerId) -> bool {
        match self.timers.remove(&id) {
            Some(key) => self.queue.remove(&key).is_some(),
            None => false,
        }
    }
}

/// What a node may do while handling an event.
pub struct Context<'a> {
    kernel: &'a mut Kernel,
    me: &'a NodeAddress,
}

impl Context<'_> {
    pub fn now(&self) -> u64 {
        self.kernel.now
    }

    pub fn me(&self) -> &NodeAddress {
        self.me
    }

    pub fn send(&mut self, dst: &NodeAddress, payload: Vec<u8>) {
        let me = self.me.clone();
        self.kernel.send(&me, dst, payload);
    }

    pub fn set_timer(&mut self, fire_at: u64, tag: &str) -> Result<TimerId, SimError> {
        let me = self.me.clone();
        self.kernel.set_timer(&me, fire_at, tag)
    }

    pub fn set_timer_after(&mut self, delay: u64, tag: &str) -> TimerId {
        let at = self.kernel.now + delay;
        self.set_timer(at, tag).expect("future deadline")
    }

    pub fn cancel_timer(&mut self, id: TimerId) -> bool {
        self.kernel.cancel_timer(id)
    }

    pub fn rng(&mut self) -> &mut SplitMix64 {
        &mut self.kernel.rng
    }
}

pub struct Simulation {
    kernel: Kernel,
    nodes: BTreeMap<NodeAddress, Box<dyn Node>>,
    external: NodeAddress,
    reported: usize,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Simulation {
            kernel: Kernel {
                config,
                now: 0,
                seq: 0,
                next_timer: 0,
                queue: BTreeMap::new(),
                timers: HashMap::new(),
                rng: SplitMix64::new(config.seed),
                trace: Vec::new(),
            },
            nodes: BTreeMap::new(),
            external: addr("external"),
            reported: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.kernel.config
    }

    pub fn now(&self) -> u64 {
        self.kernel.now
    }

    pub fn register_node(
        &mut self,
        addr: NodeAddress,
        node: Box<dyn Node>,
    ) -> Result<NodeHandle, SimError> {
        if self.nodes.contains_key(&addr) {
            return Err(SimError::DuplicateAddress(addr));
        }
        self.nodes.insert(addr.clone(), node);
        Ok(NodeHandle { addr })
    }

    pub fn is_registered(&self, addr: &NodeAddress) -> bool {
        self.nodes.contains_key(addr)
    }

    /// Sends on behalf of `src`, which need not be a registered node.
    pub fn send(&mut self, src: &NodeAddress, dst: &NodeAddress, payload: Vec<u8>) {
        self.kernel.send(src, dst, payload);
    }

    pub fn set_timer(
        &mut self,
        owner: &NodeAddress,
        fire_at: u64,
        tag: &str,
    ) -> Result<TimerId, SimError> {
        self.kernel.set_timer(owner, fire_at, tag)
    }

    pub fn cancel_timer(&mut self, id: TimerId) -> bool {
        self.kernel.cancel_timer(id)
    }

    pub fn rng(&mut self) -> &mut SplitMix64 {
        &mut self.kernel.rng
    }

    pub fn trace(&self) -> TraceLog {
        TraceLog {
            events: self.kernel.trace.clone(),
        }
    }

    pub fn trace_events(&self) -> &[TraceEvent] {
        &self.kernel.trace
    }

    pub fn next_event_time(&self) -> Option<u64> {
        self.kernel.queue.keys().next().map(|k| k.0)
    }

    pub fn pending_events(&self) -> usize {
        self.kernel.queue.len()
    }

    /// Processes a single event. Returns false when the queue is empty.
    pub fn step(&mut self) -> bool {
        let Some(((at, _), item)) = self.kernel.queue.pop_first() else {
            return false;
        };
        self.kernel.now = at;
        match item {
            Scheduled::Deliver(env) => match self.nodes.get_mut(&env.dst) {
                Some(node) => {
                    let summary = summarize(&env.payload);
                    self.kernel
                        .record(TraceKind::Deliver, &env.src, &env.dst, summary);
                    let dst = env.dst.clone();
                    let mut ctx = Context {
                        kernel: &mut self.kernel,
                        me: &dst,
                    };
                    node.on_message(&mut ctx, env);
                }
                None => {
                    let summary = format!("no-route {}", summarize(&env.payload));
                    self.kernel
                        .record(TraceKind::Drop, &env.src, &env.dst, summary);
                }
            },
            Scheduled::Timer { id, owner, tag } => {
                self.kernel.timers.remove(&id);
                self.kernel
                    .record(TraceKind::TimerFired, &owner, &owner, tag.clone());
                if let Some(node) = self.nodes.get_mut(&owner) {
                    let mut ctx = Context {
                        kernel: &mut self.kernel,
                        me: &owner,
                    };
                    node.on_timer(&mut ctx, id, &tag);
                }
            }
        }
        true
    }

    /// Runs until the queue is empty. Events later than `limit` are left
    /// queued and reported through [`SimError::LimitExceeded`]. Returns the
    /// events recorded since the previous call.
    pub fn run_until_idle(&mut self, limit: u64) -> Result<TraceLog, SimError> {
        while let Some(at) = self.next_event_time() {
            if at > limit {
                return Err(SimError::LimitExceeded {
                    limit,
                    partial: self.take_unreported(),
                });
            }
            self.step();
        }
        Ok(self.take_unreported())
    }

    fn take_unreported(&mut self) -> TraceLog {
        let first = self.reported;
        self.reported = self.kernel.trace.len();
        TraceLog {
            events: self.kernel.trace[first..].to_vec(),
        }
    }

    /// Processes every event due at or before `t`, then moves the clock to `t`.
    pub fn run_until(&mut self, t: u64) {
        while self.next_event_time().is_some_and(|at| at <= t) {
            self.step();
        }
        self.kernel.now = self.kernel.now.max(t);
    }

    /// Steps until `done` holds or the clock would pass `limit`.
    /// Returns whether `done` became true.
    pub fn run_while<F>(&mut self, limit: u64, mut done: F) -> bool
    where
        F: FnMut(&Simulation) -> bool,
    {
        loop {
            if done(self) {
                return true;
            }
            match self.next_event_time() {
                Some(at) if at <= limit => {
                    self.step();
                }
                _ => return false,
            }
        }
    }

    pub fn node<T: Node>(&self, addr: &NodeAddress) -> Option<&T> {
        let node: &dyn Any = self.nodes.get(addr)?.as_ref();
        node.downcast_ref()
    }

    pub fn node_mut<T: Node>(&mut self, addr: &NodeAddress) -> Option<&mut T> {
        let node: &mut dyn Any = self.nodes.get_mut(addr)?.as_mut();
        node.downcast_mut()
    }

    /// Runs `f` against a node with a live context, as if the node were
    /// handling an event at the current virtual time. This is the command
    /// entry point for code outside the event loop.
    pub fn with_node<T: Node, R>(
        &mut self,
        addr: &NodeAddress,
        f: impl FnOnce(&mut T, &mut Context<'_>) -> R,
    ) -> Option<R> {
        let node: &mut dyn Any = self.nodes.get_mut(addr)?.as_mut();
        let node = node.downcast_mut::<T>()?;
        let mut ctx = Context {
            kernel: &mut self.kernel,
            me: addr,
        };
        Some(f(node, &mut ctx))
    }

    /// Address used as the source for [`Simulation::send`] calls in tests.
    pub fn external(&self) -> &NodeAddress {
        &self.external
    }
}
