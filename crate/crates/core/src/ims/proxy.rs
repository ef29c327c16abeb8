//! Stateful proxy skeleton shared by the CSCF nodes.

use log::warn;

use super::transaction::{
    pop_own_via, server_key, with_own_via, ClientOutcome, RetransmitPolicy, ServerKey, ServerState,
    TransactionLayer,
};
use crate::netsim::{Context, Envelope, NodeAddress};
use crate::sip::{make_response, parse_message, Method, SipMessage};

/// What a proxy does with a new request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Forward(NodeAddress),
    Reply(u16, &'static str),
    ReplyWith(SipMessage),
}

/// Node-specific routing plugged into [`Proxy`].
pub trait Router {
    fn route(&mut self, ctx: &mut Context<'_>, req: &SipMessage, from: &NodeAddress) -> Decision;

    /// Observes a final response on its way back upstream.
    fn on_final(
        &mut self,
        _now: u64,
        _upstream: &SipMessage,
        _from: &NodeAddress,
        _resp: &SipMessage,
    ) {
    }
}

pub struct Pending {
    key: ServerKey,
    upstream: SipMessage,
    from: NodeAddress,
}

pub struct Proxy<R> {
    pub router: R,
    tx: TransactionLayer<Pending>,
}

impl<R: Router> Proxy<R> {
    pub fn new(router: R) -> Self {
        Proxy {
            router,
            tx: TransactionLayer::new(RetransmitPolicy::CORE),
        }
    }

    pub fn open_transactions(&self) -> usize {
        self.tx.open_clients()
    }

    pub fn on_message(&mut self, ctx: &mut Context<'_>, env: Envelope) {
        let msg = match parse_message(&env.payload) {
            Ok(m) => m,
            Err(e) => {
                warn!(
                    "{}: dropping unparseable message from {}: {e}",
                    ctx.me(),
                    env.src
                );
                return;
            }
        };
        if msg.is_request() {
            self.on_request(ctx, msg, env.src);
        } else {
            self.on_response(ctx, msg);
        }
    }

    fn on_request(&mut self, ctx: &mut Context<'_>, req: SipMessage, from: NodeAddress) {
        let Some(key) = server_key(&req) else { return };
        if req.method() == Some(Method::Ack) {
            if let Decision::Forward(next) = self.router.route(ctx, &req, &from) {
                let out = with_own_via(&req, ctx.me());
                self.tx.send_request(
                    ctx,
                    &next,
                    out,
                    Pending {
                        key,
                        upstream: req,
                        from,
                    },
                );
            }
            return;
        }
        if self.tx.server_begin(ctx, &req, &from) != ServerState::New {
            return;
        }
        match self.router.route(ctx, &req, &from) {
            Decision::Forward(next) => {
                let out = with_own_via(&req, ctx.me());
                self.tx.send_request(
                    ctx,
                    &next,
                    out,
                    Pending {
                        key,
                        upstream: req,
                        from,
                    },
                );
            }
            Decision::Reply(status, reason) => {
                let resp = make_response(&req, status, reason).expect("request");
                self.finish(ctx, &key, &req, &from, resp);
            }
            Decision::ReplyWith(resp) => self.finish(ctx, &key, &req, &from, resp),
        }
    }

    fn finish(
        &mut self,
        ctx: &mut Context<'_>,
        key: &ServerKey,
        req: &SipMessage,
        from: &NodeAddress,
        resp: SipMessage,
    ) {
        self.router.on_final(ctx.now(), req, from, &resp);
        self.tx.server_reply(ctx, key, &resp);
    }

    fn on_response(&mut self, ctx: &mut Context<'_>, mut resp: SipMessage) {
        let Some(ClientOutcome::Response { cookie, .. }) = self.tx.on_response(ctx, &resp) else {
            return;
        };
        if pop_own_via(&mut resp, ctx.me()).is_none() {
            return;
        }
        let Pending {
            key,
            upstream,
            from,
        } = cookie;
        self.finish(ctx, &key, &upstream, &from, resp);
    }

    pub fn on_timer(&mut self, ctx: &mut Context<'_>, tag: &str) {
        if let Some(ClientOutcome::Timeout { cookie, .. }) = self.tx.on_timer(ctx, tag) {
            let Pending {
                key,
                upstream,
                from,
            } = cookie;
            let resp = make_response(&upstream, 408, "Request Timeout").expect("request");
            self.finish(ctx, &key, &upstream, &from, resp);
        }
    }
}
