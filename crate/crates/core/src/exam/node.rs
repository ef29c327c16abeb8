//! The exam application server as a SIP node behind the S-CSCF.

use std::collections::BTreeMap;

use log::{debug, warn};

use super::journal::{Command, Entry, Journal, Outcome};
use super::model::{ExamSession, SessionId, SessionState, UserId};
use super::notify::NotificationSink;
use super::payload::{Ended, ExamPayload, CONTENT_TYPE};
use super::service::{ExamError, ExamService, TickReport};
use crate::ims::transaction::{ClientOutcome, RetransmitPolicy, ServerState, TransactionLayer};
use crate::ims::SharedCore;
use crate::netsim::{Context, Envelope, Node, NodeAddress, TimerId};
use crate::sip::{make_response, parse_message, Method, SipMessage, SipUri, Via, BRANCH_COOKIE};

const WAKE_TAG: &str = "as:wake";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialog {
    pub call_id: String,
    pub student: UserId,
    pub impu: SipUri,
}

pub struct AppServer {
    pub service: ExamService,
    core: SharedCore,
    scscf: NodeAddress,
    uri: SipUri,
    tx: TransactionLayer<SessionId>,
    dialogs: BTreeMap<SessionId, Dialog>,
    sinks: Vec<Box<dyn NotificationSink>>,
    journal: Option<Journal>,
    wake: Option<(u64, TimerId)>,
    cseq: u32,
    branch_seq: u64,
    undelivered: Vec<SessionId>,
}

impl AppServer {
    pub fn new(service: ExamService, core: SharedCore, scscf: NodeAddress, uri: SipUri) -> Self {
        AppServer {
            service,
            core,
            scscf,
            uri,
            tx: TransactionLayer::new(RetransmitPolicy::CORE),
            dialogs: BTreeMap::new(),
            sinks: Vec::new(),
            journal: None,
            wake: None,
            cseq: 0,
            branch_seq: 0,
            undelivered: Vec::new(),
        }
    }

    pub fn add_sink(&mut self, sink: Box<dyn NotificationSink>) {
        self.sinks.push(sink);
    }

    pub fn set_journal(&mut self, journal: Journal) {
        self.journal = Some(journal);
    }

    pub fn dialog(&self, session: &SessionId) -> Option<&Dialog> {
        self.dialogs.get(session)
    }

    /// Result messages the UE never acknowledged.
    pub fn undelivered_results(&self) -> &[SessionId] {
        &self.undelivered
    }

    /// Runs one service command at the current virtual time, then lets the
    /// scheduler catch up. Entry point for both SIP traffic and the gateway.
    pub fn command(&mut self, ctx: &mut Context<'_>, cmd: Command) -> Result<Outcome, ExamError> {
        let now = ctx.now();
        if let Some(j) = &mut self.journal {
            let entry = Entry {
                now,
                command: cmd.clone(),
            };
            if let Err(e) = j.append(&entry) {
                warn!("journal write to {} failed: {e}", j.path().display());
            }
        }
        let result = {
            let mut core = self.core.borrow_mut();
            self.service.execute(now, cmd, &mut *core)
        };
        if !matches!(result, Ok(Outcome::Tick(_))) {
            self.run_tick(ctx);
        }
        result
    }

    /// Lets the scheduler run and re-arms the wake-up timer.
    pub fn run_tick(&mut self, ctx: &mut Context<'_>) {
        if let Ok(Outcome::Tick(report)) = self.command(ctx, Command::Tick) {
            self.apply_tick(ctx, report);
        }
        self.arm(ctx);
    }

    fn apply_tick(&mut self, ctx: &mut Context<'_>, report: TickReport) {
        for n in &report.flushed {
            for sink in &mut self.sinks {
                if let Err(e) = sink.deliver(n) {
                    warn!("notification sink failed: {e}");
                }
            }
        }
        for id in report.expired {
            self.send_result(ctx, &id, Ended::Expired);
        }
    }

    fn arm(&mut self, ctx: &mut Context<'_>) {
        let now = ctx.now();
        let next = self.service.wakeups().into_iter().find(|&t| t > now);
        if self.wake.map(|(t, _)| t) == next {
            return;
        }
        if let Some((_, id)) = self.wake.take() {
            ctx.cancel_timer(id);
        }
        if let Some(t) = next {
            let id = ctx.set_timer(t, WAKE_TAG).expect("future wake-up");
            self.wake = Some((t, id));
        }
    }

    fn next_branch(&mut self, ctx: &Context<'_>) -> String {
        self.branch_seq += 1;
        format!("{BRANCH_COOKIE}{}{}", ctx.me(), self.branch_seq)
    }

    fn send_payload(&mut self, ctx: &mut Context<'_>, session: &SessionId, payload: &ExamPayload) {
        let Some(d) = self.dialogs.get(session).cloned() else {
            debug!("no dialog for {session}; {} not sent", payload.kind());
            return;
        };
        self.cseq += 1;
        let branch = self.next_branch(ctx);
        let msg = SipMessage::request(Method::Message, d.impu.clone())
            .header("Via", Via::new(ctx.me().as_str(), &branch).to_string())
            .header("From", format!("<{}>;tag=as", self.uri))
            .header("To", format!("<{}>", d.impu))
            .header("Call-ID", d.call_id.clone())
            .header("CSeq", format!("{} MESSAGE", self.cseq))
            .body(CONTENT_TYPE, payload.to_bytes())
            .build();
        let scscf = self.scscf.clone();
        self.tx.send_request(ctx, &scscf, msg, session.clone());
    }

    fn send_result(&mut self, ctx: &mut Context<'_>, session: &SessionId, ended: Ended) {
        if let Some(report) = self.service.report(session) {
            let payload = ExamPayload::result(report, ended);
            self.send_payload(ctx, session, &payload);
        }
    }

    fn question_set(&self, session: &ExamSession) -> ExamPayload {
        ExamPayload::question_set(session, |q| {
            self.service.question(q).expect("session question exists")
        })
    }

    fn handle_request(&mut self, ctx: &mut Context<'_>, req: SipMessage, from: NodeAddress) {
        let method = req.method().expect("request");
        if method == Method::Ack {
            return;
        }
        if self.tx.server_begin(ctx, &req, &from) != ServerState::New {
            return;
        }
        let reply =
            |status: u16, reason: &str| make_response(&req, status, reason).expect("request");
        let Some(student) = req
            .from_uri()
            .and_then(|u| self.service.user_by_impu(&u))
            .map(|u| u.id.clone())
        else {
            let resp = reply(403, "Forbidden");
            self.tx.reply_to(ctx, &req, &resp);
            return;
        };
        let handled = match method {
            Method::Invite => self.on_invite(ctx, &req, student),
            Method::Message => self.on_message(ctx, &req, student),
            Method::Bye => {
                self.dialogs
                    .retain(|_, d| Some(d.call_id.as_str()) != req.call_id());
                Ok((reply(200, "OK"), None))
            }
            Method::Register | Method::Ack => Ok((reply(405, "Method Not Allowed"), None)),
        };
        let (resp, follow) = handled.unwrap_or_else(|e| (reply(e.sip_status(), e.code()), None));
        self.tx.reply_to(ctx, &req, &resp);
        if let Some(session) = follow {
            self.follow_up(ctx, &session);
        }
    }

    /// Sends what the UE needs next: the question set for a fresh session,
    /// the result for a graded one.
    fn follow_up(&mut self, ctx: &mut Context<'_>, session: &SessionId) {
        let Some(s) = self.service.session(session).cloned() else {
            return;
        };
        if s.state == SessionState::Graded {
            let ended = if s.ended_by_deadline() {
                Ended::Expired
            } else {
                Ended::Submitted
            };
            self.send_result(ctx, session, ended);
        } else {
            let qs = self.question_set(&s);
            self.send_payload(ctx, session, &qs);
        }
    }

    fn on_invite(&mut self, ctx: &mut Context<'_>, req: &SipMessage, student: UserId) -> Handled {
        let schedule = req
            .request_uri()
            .and_then(|u| u.param("schedule").flatten())
            .ok_or_else(|| {
                ExamError::InvalidQuestionnaire("INVITE without schedule parameter".into())
            })?
            .into();
        let impu = req.from_uri().expect("checked by caller").aor();
        let ims_registered = self.core.borrow().is_registered(&impu, ctx.now());
        let outcome = self.command(
            ctx,
            Command::StartSession {
                actor: student.clone(),
                schedule,
                ims_registered,
            },
        )?;
        let Outcome::Session(session) = outcome else {
            unreachable!("start_session yields a session")
        };
        self.dialogs.insert(
            session.id.clone(),
            Dialog {
                call_id: req.call_id().unwrap_or_default().to_owned(),
                student,
                impu,
            },
        );
        let mut resp = make_response(req, 200, "OK").expect("request");
        resp.set_header("Contact", format!("<{}>", self.uri));
        Ok((resp, Some(session.id)))
    }

    fn on_message(&mut self, ctx: &mut Context<'_>, req: &SipMessage, student: UserId) -> Handled {
        let payload = ExamPayload::from_bytes(&req.body)
            .map_err(|e| ExamError::InvalidEdit(format!("bad payload: {e}")))?;
        let (session, cmd, finishing) = match payload {
            ExamPayload::Answer {
                session,
                question,
                choice,
            } => {
                let cmd = Command::SubmitAnswer {
                    actor: student,
                    session: session.clone(),
                    question,
                    choice,
                };
                (session, cmd, false)
            }
            ExamPayload::Finish { session } => {
                let cmd = Command::FinishSession {
                    actor: student,
                    session: session.clone(),
                };
                (session, cmd, true)
            }
            other => {
                return Err(ExamError::InvalidEdit(format!(
                    "{} is not accepted from a UE",
                    other.kind()
                )));
            }
        };
        match self.command(ctx, cmd) {
            Ok(_) => {
                let resp = make_response(req, 200, "OK").expect("request");
                Ok((resp, finishing.then_some(session)))
            }
            Err(e @ ExamError::DeadlinePassed) => {
                let resp = make_response(req, e.sip_status(), e.code()).expect("request");
                Ok((resp, Some(session)))
            }
            Err(e) => Err(e),
        }
    }
}

type Handled = Result<(SipMessage, Option<SessionId>), ExamError>;

impl Node for AppServer {
    fn on_message(&mut self, ctx: &mut Context<'_>, env: Envelope) {
        let msg = match parse_message(&env.payload) {
            Ok(m) => m,
            Err(e) => {
                warn!("{}: unparseable message from {}: {e}", ctx.me(), env.src);
                return;
            }
        };
        if msg.is_request() {
            self.handle_request(ctx, msg, env.src);
            return;
        }
        match self.tx.on_response(ctx, &msg) {
            Some(ClientOutcome::Response {
                response,
                cookie,
                request,
                ..
            }) => {
                if response.status().is_some_and(|s| s >= 300)
                    && request.body_kind() == Some("result")
                {
                    self.undelivered.push(cookie);
                }
            }
            Some(ClientOutcome::Timeout { .. }) | None => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut Context<'_>, _timer: TimerId, tag: &str) {
        if tag == WAKE_TAG {
            self.wake = None;
            self.run_tick(ctx);
            return;
        }
        if let Some(ClientOutcome::Timeout { request, cookie }) = self.tx.on_timer(ctx, tag) {
            warn!(
                "{}: no answer to {} for {cookie}",
                ctx.me(),
                request.body_kind().unwrap_or("request")
            );
            if request.body_kind() == Some("result") {
                self.undelivered.push(cookie);
            }
        }
    }
}

trait BodyKind {
    fn body_kind(&self) -> Option<&'static str>;
}

impl BodyKind for SipMessage {
    fn body_kind(&self) -> Option<&'static str> {
        ExamPayload::from_bytes(&self.body).ok().map(|p| p.kind())
    }
}
