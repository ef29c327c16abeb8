//! Per-hop SIP transactions: request retransmission on the client side,
//! duplicate absorption and response replay on the server side.

use std::collections::BTreeMap;

use crate::netsim::{fnv1a64, Context, NodeAddress, TimerId};
use crate::sip::{serialize_message, Method, SipMessage, Via, BRANCH_COOKIE};

const TIMER_PREFIX: &str = "tx:";

/// When to retransmit an unanswered request and when to give up.
///
/// Retransmission `n` (1-based) goes out `initial_ms * 2^(n-1)` after the
/// previous one, capped at `max_interval_ms`. After `max_retransmits` the
/// transaction times out one further interval later.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetransmitPolicy {
    pub initial_ms: u64,
    pub max_interval_ms: u64,
    pub max_retransmits: u32,
}

impl RetransmitPolicy {
    /// UE policy: 500 ms, doubling, at most four retransmissions.
    pub const UE: RetransmitPolicy = RetransmitPolicy {
        initial_ms: 500,
        max_interval_ms: u64::MAX,
        max_retransmits: 4,
    };

    /// Core-node policy, shaped like SIP timers E/F with the short T1 a
    /// closed network allows (T1 = 100 ms, T2 = 4 s, give up after 34.3 s).
    pub const CORE: RetransmitPolicy = RetransmitPolicy {
        initial_ms: 100,
        max_interval_ms: 4_000,
        max_retransmits: 12,
    };

    /// Wait after the transmission numbered `n` (0 = original send).
    pub fn interval(&self, n: u32) -> u64 {
        let doubled = self.initial_ms.saturating_mul(1u64 << n.min(40));
        doubled.min(self.max_interval_ms)
    }

    /// Offsets from the first send at which each retransmission happens,
    /// followed by the give-up time.
    pub fn schedule(&self) -> (Vec<u64>, u64) {
        let mut at = 0;
        let mut sends = Vec::new();
        for n in 0..self.max_retransmits {
            at += self.interval(n);
            sends.push(at);
        }
        (sends, at + self.interval(self.max_retransmits))
    }
}

/// Branch for a request forwarded by `node`, derived from the upstream
/// branch so retransmissions map onto the same downstream transaction.
pub fn derive_branch(node: &NodeAddress, seed: &str) -> String {
    let mut bytes = node.as_str().as_bytes().to_vec();
    bytes.push(b'|');
    bytes.extend_from_slice(seed.as_bytes());
    format!("{BRANCH_COOKIE}{:016x}", fnv1a64(&bytes))
}

pub type ServerKey = (String, Method);

pub fn server_key(req: &SipMessage) -> Option<ServerKey> {
    Some((req.top_via()?.branch, req.method()?))
}

struct ClientTx<C> {
    dest: NodeAddress,
    bytes: Vec<u8>,
    retransmits: u32,
    timer: TimerId,
    request: SipMessage,
    cookie: C,
}

struct ServerTx {
    upstream: NodeAddress,
    response: Option<Vec<u8>>,
}

/// How a newly arrived request relates to known server transactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerState {
    New,
    /// Retransmission while the transaction is still open.
    Absorbed,
    /// Retransmission after completion; the stored response was resent.
    Replayed,
}

pub enum ClientOutcome<C> {
    Response {
        response: SipMessage,
        request: SipMessage,
        cookie: C,
    },
    Timeout {
        request: SipMessage,
        cookie: C,
    },
}

pub struct TransactionLayer<C> {
    policy: RetransmitPolicy,
    clients: BTreeMap<String, ClientTx<C>>,
    servers: BTreeMap<ServerKey, ServerTx>,
}

impl<C> TransactionLayer<C> {
    pub fn new(policy: RetransmitPolicy) -> Self {
        TransactionLayer {
            policy,
            clients: BTreeMap::new(),
            servers: BTreeMap::new(),
        }
    }

    pub fn policy(&self) -> RetransmitPolicy {
        self.policy
    }

    pub fn open_clients(&self) -> usize {
        self.clients.len()
    }

    /// Sends `req` to `dest` and keeps retransmitting until a final
    /// response arrives or the policy gives up. The top Via branch keys the
    /// transaction. ACK is sent once, untracked.
    pub fn send_request(
        &mut self,
        ctx: &mut Context<'_>,
        dest: &NodeAddress,
        req: SipMessage,
        cookie: C,
    ) {
        let bytes = serialize_message(&req).expect("outgoing request is valid");
        ctx.send(dest, bytes.clone());
        if req.method() == Some(Method::Ack) {
            return;
        }
        let branch = req.top_via().expect("outgoing request has Via").branch;
        let timer =
            ctx.set_timer_after(self.policy.interval(0), &format!("{TIMER_PREFIX}{branch}"));
        if let Some(old) = self.clients.insert(
            branch,
            ClientTx {
                dest: dest.clone(),
                bytes,
                retransmits: 0,
                timer,
                request: req,
                cookie,
            },
        ) {
            ctx.cancel_timer(old.timer);
        }
    }

    /// Matches a response to its client transaction. Final responses close
    /// the transaction; provisional and stray responses yield nothing.
    pub fn on_response(
        &mut self,
        ctx: &mut Context<'_>,
        resp: &SipMessage,
    ) -> Option<ClientOutcome<C>> {
        let branch = resp.top_via()?.branch;
        if resp.status()? < 200 {
            return None;
        }
        let tx = self.clients.remove(&branch)?;
        ctx.cancel_timer(tx.timer);
        Some(ClientOutcome::Response {
            response: resp.clone(),
            request: tx.request,
            cookie: tx.cookie,
        })
    }

    pub fn is_timer(tag: &str) -> bool {
        tag.starts_with(TIMER_PREFIX)
    }

    /// Handles a transaction timer: retransmits or reports a timeout.
    pub fn on_timer(&mut self, ctx: &mut Context<'_>, tag: &str) -> Option<ClientOutcome<C>> {
        let branch = tag.strip_prefix(TIMER_PREFIX)?;
        let tx = self.clients.get_mut(branch)?;
        if tx.retransmits >= self.policy.max_retransmits {
            let tx = self.clients.remove(branch)?;
            return Some(ClientOutcome::Timeout {
                request: tx.request,
                cookie: tx.cookie,
            });
        }
        tx.retransmits += 1;
        let (dest, bytes) = (tx.dest.clone(), tx.bytes.clone());
        ctx.send(&dest, bytes);
        let wait = self.policy.interval(tx.retransmits);
        tx.timer = ctx.set_timer_after(wait, tag);
        None
    }

    /// Registers an incoming request. Duplicates of a completed transaction
    /// get the stored response again.
    pub fn server_begin(
        &mut self,
        ctx: &mut Context<'_>,
        req: &SipMessage,
        from: &NodeAddress,
    ) -> ServerState {
        let Some(key) = server_key(req) else {
            return ServerState::New;
        };
        match self.servers.get(&key) {
            Some(ServerTx {
                upstream,
                response: Some(bytes),
            }) => {
                ctx.send(upstream, bytes.clone());
                ServerState::Replayed
            }
            Some(_) => ServerState::Absorbed,
            None => {
                self.servers.insert(
                    key,
                    ServerTx {
                        upstream: from.clone(),
                        response: None,
                    },
                );
                ServerState::New
            }
        }
    }

    /// Sends the final response for a server transaction and stores it
    /// for replay.
    pub fn server_reply(&mut self, ctx: &mut Context<'_>, key: &ServerKey, resp: &SipMessage) {
        let bytes = serialize_message(resp).expect("outgoing response is valid");
        if let Some(tx) = self.servers.get_mut(key) {
            ctx.send(&tx.upstream, bytes.clone());
            tx.response = Some(bytes);
        }
    }

    pub fn reply_to(&mut self, ctx: &mut Context<'_>, req: &SipMessage, resp: &SipMessage) {
        if let Some(key) = server_key(req) {
            self.server_reply(ctx, &key, resp);
        }
    }
}

/// Pops this node's Via from a response and returns the next hop.
pub fn pop_own_via(resp: &mut SipMessage, me: &NodeAddress) -> Option<NodeAddress> {
    let top = resp.top_via()?;
    if top.node != me.as_str() {
        return None;
    }
    resp.pop_header("Via");
    let next = resp.top_via()?;
    NodeAddress::new(&next.node).ok()
}

/// Clones `req` with a Via for `me` stacked on top.
pub fn with_own_via(req: &SipMessage, me: &NodeAddress) -> SipMessage {
    let upstream = req.top_via().map(|v| v.branch).unwrap_or_default();
    let mut out = req.clone();
    out.push_header_front(
        "Via",
        Via::new(me.as_str(), &derive_branch(me, &upstream)).to_string(),
    );
    out
}
