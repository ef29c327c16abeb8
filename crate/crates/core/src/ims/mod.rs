//! Minimal IMS core: HSS, P-CSCF, I-CSCF and S-CSCF as simulator nodes.
//!
//! Every CSCF is a stateful proxy. Requests are forwarded hop by hop with a
//! Via pushed per hop; responses retrace the Via stack.

pub mod hss;
pub mod proxy;
pub mod registrar;
pub mod transaction;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

pub use hss::{
    aka_response, icscf_assign, parse_subscribers, Hss, HssError, SecretKey, ServiceTrigger,
    SubscriberProfile, TriggerRule,
};
pub use proxy::{Decision, Proxy, Router};
pub use registrar::{
    BindingState, ImsCore, RegistrationBinding, RouteError, DEFAULT_EXPIRES_SECS, DEFAULT_REALM,
};
pub use transaction::{RetransmitPolicy, TransactionLayer};

use crate::netsim::{addr, Context, Envelope, Node, NodeAddress, TimerId};
use crate::sip::{Method, SipMessage, SipUri, Via};

pub type SharedCore = Rc<RefCell<ImsCore>>;

impl<R: Router + 'static> Node for Proxy<R> {
    fn on_message(&mut self, ctx: &mut Context<'_>, env: Envelope) {
        Proxy::on_message(self, ctx, env);
    }

    fn on_timer(&mut self, ctx: &mut Context<'_>, _timer: TimerId, tag: &str) {
        Proxy::on_timer(self, ctx, tag);
    }
}

/// Well-known node addresses of the testbed core.
pub fn pcscf_addr() -> NodeAddress {
    addr("pcscf")
}
pub fn icscf_addr() -> NodeAddress {
    addr("icscf")
}
pub fn scscf_addr() -> NodeAddress {
    addr("scscf")
}

/// A UE registration as seen by the P-CSCF.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcscfEntry {
    pub ue: NodeAddress,
    pub expires_at: u64,
}

pub struct PcscfRouter {
    pub icscf: NodeAddress,
    pub scscf: NodeAddress,
    registrations: BTreeMap<SipUri, PcscfEntry>,
}

impl PcscfRouter {
    pub fn new(icscf: NodeAddress, scscf: NodeAddress) -> Self {
        PcscfRouter {
            icscf,
            scscf,
            registrations: BTreeMap::new(),
        }
    }

    pub fn registration(&self, impu: &SipUri) -> Option<&PcscfEntry> {
        self.registrations.get(&impu.aor())
    }

    fn active(&self, impu: &SipUri, now: u64) -> Option<&PcscfEntry> {
        self.registration(impu).filter(|e| e.expires_at > now)
    }

    /// Routing decision for a request arriving from `from` at time `now`.
    pub fn decide(&self, req: &SipMessage, from: &NodeAddress, now: u64) -> Decision {
        if *from == self.scscf {
            return match req.request_uri().and_then(|u| self.active(u, now)) {
                Some(e) => Decision::Forward(e.ue.clone()),
                None => Decision::Reply(404, "Not Found"),
            };
        }
        if req.method() == Some(Method::Register) {
            return Decision::Forward(self.icscf.clone());
        }
        let registered = req
            .from_uri()
            .and_then(|u| self.active(&u, now))
            .is_some_and(|e| e.ue == *from);
        if registered {
            Decision::Forward(self.scscf.clone())
        } else {
            Decision::Reply(403, "Forbidden")
        }
    }
}

impl Router for PcscfRouter {
    fn route(&mut self, ctx: &mut Context<'_>, req: &SipMessage, from: &NodeAddress) -> Decision {
        self.decide(req, from, ctx.now())
    }

    fn on_final(&mut self, now: u64, upstream: &SipMessage, from: &NodeAddress, resp: &SipMessage) {
        if upstream.method() != Some(Method::Register) || resp.status() != Some(200) {
            return;
        }
        let Some(impu) = upstream.to_uri().map(|u| u.aor()) else {
            return;
        };
        let secs = resp
            .header("Expires")
            .and_then(|e| e.parse::<u64>().ok())
            .unwrap_or(0);
        if secs == 0 {
            self.registrations.remove(&impu);
        } else {
            self.registrations.insert(
                impu,
                PcscfEntry {
                    ue: from.clone(),
                    expires_at: now + secs * 1_000,
                },
            );
        }
    }
}

pub struct IcscfRouter {
    pub core: SharedCore,
    pub scscf: NodeAddress,
}

impl Router for IcscfRouter {
    fn route(&mut self, _ctx: &mut Context<'_>, req: &SipMessage, _from: &NodeAddress) -> Decision {
        if req.method() != Some(Method::Register) {
            return Decision::Forward(self.scscf.clone());
        }
        let Some(impu) = req.to_uri() else {
            return Decision::Reply(400, "Bad Request");
        };
        match icscf_assign(&self.core.borrow().hss, &impu, &self.scscf) {
            Ok(s) => Decision::Forward(s),
            Err(_) => Decision::Reply(404, "Not Found"),
        }
    }
}

pub struct ScscfRouter {
    pub core: SharedCore,
    /// Nodes whose requests are routed as terminating.
    pub app_servers: Vec<NodeAddress>,
}

impl Router for ScscfRouter {
    fn route(&mut self, ctx: &mut Context<'_>, req: &SipMessage, from: &NodeAddress) -> Decision {
        let now = ctx.now();
        if req.method() == Some(Method::Register) {
            // The Via below the I-CSCF's names the P-CSCF.
            let via_pcscf = req
                .header_values("Via")
                .nth(1)
                .and_then(Via::parse)
                .and_then(|v| NodeAddress::new(&v.node).ok())
                .unwrap_or_else(|| from.clone());
            let resp = self
                .core
                .borrow_mut()
                .scscf_register(req, &via_pcscf, now, ctx.rng());
            return Decision::ReplyWith(resp);
        }
        let core = self.core.borrow();
        let routed = if self.app_servers.contains(from) {
            core.route_terminating(req, now)
        } else {
            core.scscf_route(req, now)
        };
        match routed {
            Ok(next) => Decision::Forward(next),
            Err(e) => {
                let (status, reason) = e.status();
                Decision::Reply(status, reason)
            }
        }
    }
}

pub type Pcscf = Proxy<PcscfRouter>;
pub type Icscf = Proxy<IcscfRouter>;
pub type Scscf = Proxy<ScscfRouter>;
