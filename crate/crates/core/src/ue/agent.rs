use log::debug;

use crate::exam::{ExamPayload, QuestionItem, SessionId, CONTENT_TYPE};
use crate::ims::transaction::{ClientOutcome, RetransmitPolicy, ServerState, TransactionLayer};
use crate::ims::{aka_response, SecretKey};
use crate::netsim::{summarize, Context, Envelope, Node, NodeAddress, TimerId};
use crate::sip::{
    make_response, parse_message, serialize_message, AuthHeader, Method, SipMessage, SipUri, Via,
    BRANCH_COOKIE,
};

use super::transcript::{Direction, Transcript};

/// Credentials a UE holds for its subscription.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UeIdentity {
    pub impi: String,
    pub impu: SipUri,
    pub key: SecretKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purpose {
    Register { authenticated: bool },
    Invite,
    Answer,
    Finish,
    Bye,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Register,
    StartExam,
    Answer,
    Finish,
    Bye,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionSet {
    pub session: SessionId,
    pub deadline: u64,
    pub questions: Vec<QuestionItem>,
}

#[derive(Debug, Clone)]
struct ExamDialog {
    call_id: String,
    invite_ok: bool,
}

/// Scripted UE. Each `begin_*` call starts one action; the driver steps
/// the simulation until [`UeAgent::finished`] reports its outcome.
pub struct UeAgent {
    pub identity: UeIdentity,
    pcscf: NodeAddress,
    service_uri: SipUri,
    tx: TransactionLayer<Purpose>,
    cseq: u32,
    seq: u64,
    registered: bool,
    dialog: Option<ExamDialog>,
    question_set: Option<QuestionSet>,
    result: Option<ExamPayload>,
    current: Option<Action>,
    outcome: Option<Result<(), String>>,
    pub transcript: Transcript,
}

impl UeAgent {
    pub fn new(identity: UeIdentity, pcscf: NodeAddress, service_uri: SipUri) -> Self {
        UeAgent {
            identity,
            pcscf,
            service_uri,
            tx: TransactionLayer::new(RetransmitPolicy::UE),
            cseq: 0,
            seq: 0,
            registered: false,
            dialog: None,
            question_set: None,
            result: None,
            current: None,
            outcome: None,
            transcript: Transcript::default(),
        }
    }

    pub fn is_registered(&self) -> bool {
        self.registered
    }

    pub fn question_set(&self) -> Option<&QuestionSet> {
        self.question_set.as_ref()
    }

    pub fn result(&self) -> Option<&ExamPayload> {
        self.result.as_ref()
    }

    pub fn current(&self) -> Option<Action> {
        self.current
    }

    /// Outcome of the last action once it has finished.
    pub fn finished(&self) -> Option<&Result<(), String>> {
        self.outcome.as_ref()
    }

    fn start(&mut self, action: Action) {
        self.current = Some(action);
        self.outcome = None;
    }

    fn complete(&mut self, outcome: Result<(), String>) {
        if self.current.is_some() {
            self.current = None;
            self.outcome = Some(outcome);
        }
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn request(
        &mut self,
        ctx: &Context<'_>,
        method: Method,
        uri: SipUri,
        call_id: &str,
    ) -> SipMessage {
        self.cseq += 1;
        let branch = format!("{BRANCH_COOKIE}{}x{}", ctx.me(), self.next_seq());
        let to = if method == Method::Register {
            &self.identity.impu
        } else {
            &uri
        };
        SipMessage::request(method, uri.clone())
            .header("Via", Via::new(ctx.me().as_str(), &branch).to_string())
            .header("From", format!("<{}>;tag={}", self.identity.impu, ctx.me()))
            .header("To", format!("<{to}>"))
            .header("Call-ID", call_id.to_owned())
            .header("CSeq", format!("{} {method}", self.cseq))
            .build()
    }

    fn send(&mut self, ctx: &mut Context<'_>, msg: SipMessage, purpose: Purpose) {
        let bytes = serialize_message(&msg).expect("valid request");
        self.transcript.push(
            ctx.now(),
            Direction::Send,
            ctx.me(),
            &self.pcscf,
            summarize(&bytes),
        );
        let pcscf = self.pcscf.clone();
        self.tx.send_request(ctx, &pcscf, msg, purpose);
    }

    fn reg_call_id(&self, ctx: &Context<'_>) -> String {
        format!("reg-{}", ctx.me())
    }

    pub fn begin_register(&mut self, ctx: &mut Context<'_>) {
        self.start(Action::Register);
        let uri = SipUri::new(None, &self.identity.impu.host);
        let call_id = self.reg_call_id(ctx);
        let mut msg = self.request(ctx, Method::Register, uri, &call_id);
        msg.set_header(
            "Contact",
            format!(
                "<sip:{}@{}>",
                self.identity.impu.user.as_deref().unwrap_or(""),
                ctx.me()
            ),
        );
        self.send(
            ctx,
            msg,
            Purpose::Register {
                authenticated: false,
            },
        );
    }

    pub fn begin_start_exam(&mut self, ctx: &mut Context<'_>, schedule: &str) {
        self.start(Action::StartExam);
        self.question_set = None;
        self.result = None;
        let call_id = format!("exam-{}-{}", ctx.me(), self.next_seq());
        self.dialog = Some(ExamDialog {
            call_id: call_id.clone(),
            invite_ok: false,
        });
        let uri = self
            .service_uri
            .clone()
            .with_param("schedule", Some(schedule));
        let msg = self.request(ctx, Method::Invite, uri, &call_id);
        self.send(ctx, msg, Purpose::Invite);
    }

    fn in_dialog(
        &mut self,
        ctx: &mut Context<'_>,
        method: Method,
        payload: Option<ExamPayload>,
        purpose: Purpose,
    ) -> Result<(), String> {
        let call_id = self
            .dialog
            .as_ref()
            .ok_or("no exam dialog")?
            .call_id
            .clone();
        let uri = self.service_uri.clone();
        let mut msg = self.request(ctx, method, uri, &call_id);
        if let Some(p) = payload {
            msg.set_header("Content-Type", CONTENT_TYPE);
            msg.set_body(p.to_bytes());
        }
        self.send(ctx, msg, purpose);
        Ok(())
    }

    /// Answers question `ordinal` (1-based, in question-set order).
    pub fn begin_answer(&mut self, ctx: &mut Context<'_>, ordinal: usize, choice: usize) {
        self.start(Action::Answer);
        let Some(qs) = &self.question_set else {
            return self.complete(Err("no question set received".into()));
        };
        let Some(item) = ordinal.checked_sub(1).and_then(|i| qs.questions.get(i)) else {
            let n = qs.questions.len();
            return self.complete(Err(format!("ordinal {ordinal} outside 1..={n}")));
        };
        let payload = ExamPayload::Answer {
            session: qs.session.clone(),
            question: item.id.clone(),
            choice,
        };
        if let Err(e) = self.in_dialog(ctx, Method::Message, Some(payload), Purpose::Answer) {
            self.complete(Err(e));
        }
    }

    pub fn begin_finish(&mut self, ctx: &mut Context<'_>) {
        self.start(Action::Finish);
        let Some(qs) = &self.question_set else {
            return self.complete(Err("no question set received".into()));
        };
        let payload = ExamPayload::Finish {
            session: qs.session.clone(),
        };
        if let Err(e) = self.in_dialog(ctx, Method::Message, Some(payload), Purpose::Finish) {
            self.complete(Err(e));
        }
    }

    pub fn begin_bye(&mut self, ctx: &mut Context<'_>) {
        self.start(Action::Bye);
        if let Err(e) = self.in_dialog(ctx, Method::Bye, None, Purpose::Bye) {
            self.complete(Err(e));
        }
    }

    fn on_final(&mut self, ctx: &mut Context<'_>, purpose: Purpose, resp: SipMessage) {
        let status = resp.status().unwrap_or(0);
        let failed = |what: &str| {
            let reason = match &resp.start {
                crate::sip::StartLine::Response { reason, .. } => reason.clone(),
                _ => String::new(),
            };
            Err(format!("{what} {status} {reason}"))
        };
        match purpose {
            Purpose::Register {
                authenticated: false,
            } if status == 401 => {
                let Some(challenge) = resp
                    .header("WWW-Authenticate")
                    .and_then(|h| h.parse::<AuthHeader>().ok())
                else {
                    return self.complete(Err("401 without a usable challenge".into()));
                };
                let response = aka_response(&self.identity.key, &challenge.nonce);
                let uri = SipUri::new(None, &self.identity.impu.host);
                let call_id = self.reg_call_id(ctx);
                let mut msg = self.request(ctx, Method::Register, uri, &call_id);
                msg.set_header(
                    "Contact",
                    format!(
                        "<sip:{}@{}>",
                        self.identity.impu.user.as_deref().unwrap_or(""),
                        ctx.me()
                    ),
                );
                msg.set_header(
                    "Authorization",
                    AuthHeader::credentials(&challenge.realm, &challenge.nonce, &response)
                        .to_string(),
                );
                self.send(
                    ctx,
                    msg,
                    Purpose::Register {
                        authenticated: true,
                    },
                );
            }
            Purpose::Register { .. } => {
                if status == 200 {
                    self.registered = resp.header("Expires") != Some("0");
                    self.complete(Ok(()));
                } else {
                    self.complete(failed("REGISTER"));
                }
            }
            Purpose::Invite => {
                if (200..300).contains(&status) {
                    let call_id = resp.call_id().unwrap_or_default().to_owned();
                    let ack = self.request(ctx, Method::Ack, self.service_uri.clone(), &call_id);
                    let bytes = serialize_message(&ack).expect("valid ack");
                    self.transcript.push(
                        ctx.now(),
                        Direction::Send,
                        ctx.me(),
                        &self.pcscf,
                        summarize(&bytes),
                    );
                    let pcscf = self.pcscf.clone();
                    self.tx.send_request(ctx, &pcscf, ack, Purpose::Invite);
                    if let Some(d) = &mut self.dialog {
                        d.invite_ok = true;
                    }
                    if self.question_set.is_some() {
                        self.complete(Ok(()));
                    }
                } else {
                    self.dialog = None;
                    self.complete(failed("INVITE"));
                }
            }
            Purpose::Answer | Purpose::Finish => {
                if status == 200 {
                    self.complete(Ok(()));
                } else {
                    self.complete(failed("MESSAGE"));
                }
            }
            Purpose::Bye => {
                self.dialog = None;
                self.complete(Ok(()));
            }
        }
    }

    fn on_request(&mut self, ctx: &mut Context<'_>, req: SipMessage, from: NodeAddress) {
        if req.method() == Some(Method::Ack) {
            return;
        }
        if self.tx.server_begin(ctx, &req, &from) != ServerState::New {
            return;
        }
        if req.method() != Some(Method::Message) {
            let resp = make_response(&req, 405, "Method Not Allowed").expect("request");
            self.tx.reply_to(ctx, &req, &resp);
            return;
        }
        let payload = ExamPayload::from_bytes(&req.body);
        let status = if payload.is_ok() {
            (200, "OK")
        } else {
            (400, "Bad Request")
        };
        let resp = make_response(&req, status.0, status.1).expect("request");
        self.tx.reply_to(ctx, &req, &resp);
        match payload {
            Ok(ExamPayload::QuestionSet {
                session,
                deadline,
                questions,
                ..
            }) => {
                self.question_set = Some(QuestionSet {
                    session,
                    deadline,
                    questions,
                });
                if self.current == Some(Action::StartExam)
                    && self.dialog.as_ref().is_some_and(|d| d.invite_ok)
                {
                    self.complete(Ok(()));
                }
            }
            Ok(result @ ExamPayload::Result { .. }) => self.result = Some(result),
            Ok(other) => debug!("{}: ignoring {}", ctx.me(), other.kind()),
            Err(e) => debug!("{}: bad payload: {e}", ctx.me()),
        }
    }
}

impl Node for UeAgent {
    fn on_message(&mut self, ctx: &mut Context<'_>, env: Envelope) {
        self.transcript.push(
            ctx.now(),
            Direction::Recv,
            &env.src,
            ctx.me(),
            summarize(&env.payload),
        );
        let Ok(msg) = parse_message(&env.payload) else {
            return;
        };
        if msg.is_request() {
            self.on_request(ctx, msg, env.src);
            return;
        }
        if let Some(ClientOutcome::Response {
            response, cookie, ..
        }) = self.tx.on_response(ctx, &msg)
        {
            self.on_final(ctx, cookie, response);
        }
    }

    fn on_timer(&mut self, ctx: &mut Context<'_>, _timer: TimerId, tag: &str) {
        if let Some(ClientOutcome::Timeout { request, cookie }) = self.tx.on_timer(ctx, tag) {
            let method = request.method().map_or("request", Method::as_str);
            if cookie == Purpose::Bye {
                self.dialog = None;
                return self.complete(Ok(()));
            }
            self.complete(Err(format!("{method} timed out")));
        }
    }
}
