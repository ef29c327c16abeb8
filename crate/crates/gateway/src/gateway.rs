//! The controller: web sessions, request dispatch onto the exam service
//! and live exam channels. Owns the testbed; every call runs on the
//! caller's thread, which makes this type the serialized command queue.

use std::collections::{BTreeMap, BTreeSet};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use momex_core::exam::{
    Channel, Command, ExamDraft, Outcome, QuestionDraft, ReportField, Role, ScheduleDraft,
    University, UserId,
};
use momex_core::ims::SecretKey;
use momex_core::netsim::{mix64, SplitMix64};
use momex_core::sip::SipUri;
use momex_core::testbed::{Testbed, TestbedConfig, TestbedError};

use crate::channel::{ChannelId, ClientEvent, ExamChannel, ServerEvent};
use crate::error::ApiError;
use crate::routes::{match_route, Endpoint};

/// Default web session lifetime: eight hours.
pub const SESSION_TTL_MS: u64 = 8 * 3600 * 1000;
pub const TICK_MS: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebSession {
    pub token: String,
    pub user: UserId,
    pub role: Role,
    pub expires_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenSource {
    /// Tokens from a generator seeded with the simulation seed.
    Seeded,
    OsEntropy,
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub testbed: TestbedConfig,
    pub university: Option<University>,
    pub session_ttl_ms: u64,
    pub tokens: TokenSource,
}

impl GatewayConfig {
    pub fn sim(testbed: TestbedConfig, university: Option<University>) -> Self {
        GatewayConfig {
            testbed,
            university,
            session_ttl_ms: SESSION_TTL_MS,
            tokens: TokenSource::Seeded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    pub path: String,
    pub token: Option<String>,
    pub body: Vec<u8>,
}

impl HttpRequest {
    pub fn new(method: &str, path: &str, token: Option<&str>, body: Value) -> Self {
        HttpRequest {
            method: method.to_owned(),
            path: path.to_owned(),
            token: token.map(str::to_owned),
            body: if body.is_null() {
                Vec::new()
            } else {
                body.to_string().into_bytes()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Value,
}

enum Tokens {
    Seeded(SplitMix64),
    Os,
}

impl Tokens {
    fn next(&mut self) -> String {
        let mut bytes = [0u8; 16];
        match self {
            Tokens::Seeded(rng) => rng.fill_bytes(&mut bytes),
            Tokens::Os => getrandom::getrandom(&mut bytes).expect("OS entropy"),
        }
        hex::encode(bytes)
    }
}

#[derive(Deserialize)]
struct LoginBody {
    user: String,
    password: String,
}

#[derive(Deserialize)]
struct CreateUserBody {
    id: UserId,
    role: Role,
    impu: SipUri,
    display_name: String,
    #[serde(default)]
    channel: Channel,
    #[serde(default)]
    key: Option<SecretKey>,
    password: String,
}

#[derive(Deserialize)]
struct CreateCourseBody {
    id: momex_core::exam::CourseId,
    title: String,
    owners: BTreeSet<UserId>,
}

#[derive(Deserialize)]
struct GroupBody {
    members: BTreeSet<UserId>,
}

/// Parses a JSON body, naming the offending field on failure.
pub fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let message = e.inner().to_string();
        let path = e.path().to_string();
        let field = if path == "." {
            // missing fields are reported against the parent
            message
                .split('`')
                .nth(1)
                .filter(|_| message.starts_with("missing field"))
                .unwrap_or("body")
                .to_owned()
        } else {
            path
        };
        ApiError::validation(&field, format!("{field}: {message}"))
    })
}

fn ok(status: u16, v: impl Serialize) -> Result<HttpResponse, ApiError> {
    Ok(HttpResponse {
        status,
        body: serde_json::to_value(v).expect("response serializes"),
    })
}

/// JSON form of a service outcome.
pub fn outcome_json(o: &Outcome) -> Value {
    let v = match o {
        Outcome::User(u) => serde_json::to_value(u),
        Outcome::Course(c) => serde_json::to_value(c),
        Outcome::Group(g) => serde_json::to_value(g),
        Outcome::Question(q) => serde_json::to_value(q),
        Outcome::Exam(e) => serde_json::to_value(e),
        Outcome::Schedule(s) => serde_json::to_value(s),
        Outcome::Session(s) => serde_json::to_value(s),
        Outcome::Answered => Ok(json!({ "answered": true })),
        Outcome::Report(r) => serde_json::to_value(r),
        Outcome::Tick(t) => serde_json::to_value(t),
    };
    v.expect("outcome serializes")
}

pub struct Gateway {
    tb: Testbed,
    credentials: BTreeMap<UserId, String>,
    sessions: BTreeMap<String, WebSession>,
    tokens: Tokens,
    ttl: u64,
    channels: BTreeMap<ChannelId, ExamChannel>,
    next_channel: ChannelId,
    correlation: u64,
    last_tick: u64,
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Result<Gateway, TestbedError> {
        let tb = Testbed::boot_with(&config.testbed, config.university.as_ref(), &[])?;
        let credentials = tb.installed.passwords.clone();
        let tokens = match config.tokens {
            TokenSource::Seeded => Tokens::Seeded(SplitMix64::new(mix64(
                config.testbed.sim.seed ^ 0x7765_625f_746f_6b65,
            ))),
            TokenSource::OsEntropy => Tokens::Os,
        };
        let now = tb.sim.now();
        Ok(Gateway {
            tb,
            credentials,
            sessions: BTreeMap::new(),
            tokens,
            ttl: config.session_ttl_ms,
            channels: BTreeMap::new(),
            next_channel: 1,
            correlation: 0,
            last_tick: now - now % TICK_MS,
        })
    }

    pub fn testbed(&self) -> &Testbed {
        &self.tb
    }

    pub fn now(&self) -> u64 {
        self.tb.sim.now()
    }

    // ---- sessions ----

    /// Accepts a user id or a public identity. Unknown users and wrong
    /// passwords fail the same way.
    pub fn login(&mut self, user: &str, password: &str) -> Result<WebSession, ApiError> {
        let account = match user.parse::<SipUri>() {
            Ok(impu) if user.starts_with("sip:") => self.tb.service().user_by_impu(&impu),
            _ => self.tb.service().user(&UserId::from(user)),
        };
        let Some(account) = account.cloned() else {
            return Err(ApiError::bad_credentials());
        };
        if self.credentials.get(&account.id).map(String::as_bytes) != Some(password.as_bytes()) {
            return Err(ApiError::bad_credentials());
        }
        let session = WebSession {
            token: self.tokens.next(),
            user: account.id,
            role: account.role,
            expires_at: self.now() + self.ttl,
        };
        self.sessions.insert(session.token.clone(), session.clone());
        Ok(session)
    }

    pub fn logout(&mut self, token: &str) {
        self.sessions.remove(token);
    }

    pub fn authenticate(&mut self, token: Option<&str>) -> Result<WebSession, ApiError> {
        let token = token.ok_or_else(ApiError::unauthorized)?;
        let now = self.now();
        match self.sessions.get(token) {
            Some(s) if now < s.expires_at => Ok(s.clone()),
            Some(_) => {
                self.sessions.remove(token);
                Err(ApiError::unauthorized())
            }
            None => Err(ApiError::unauthorized()),
        }
    }

    // ---- requests ----

    pub fn handle(&mut self, req: &HttpRequest) -> HttpResponse {
        let result = self.dispatch(req);
        self.poll_channels();
        match result {
            Ok(r) => r,
            Err(mut e) => {
                self.correlation += 1;
                e.correlation_id = format!("c{:06}", self.correlation);
                HttpResponse {
                    status: e.status,
                    body: json!({ "error": e }),
                }
            }
        }
    }

    fn command(&mut self, cmd: Command) -> Result<Outcome, ApiError> {
        self.tb.command(cmd).map_err(ApiError::from)
    }

    fn dispatch(&mut self, req: &HttpRequest) -> Result<HttpResponse, ApiError> {
        let (endpoint, params) = match_route(&req.method, &req.path)?;
        if endpoint == Endpoint::Health {
            return ok(200, json!({ "status": "ok", "now": self.now() }));
        }
        if endpoint == Endpoint::Login {
            let body: LoginBody = parse_body(&req.body)?;
            return ok(200, self.login(&body.user, &body.password)?);
        }
        let session = self.authenticate(req.token.as_deref())?;
        let actor = session.user.clone();
        let param = |i: usize| params.get(i).cloned().unwrap_or_default();
        match endpoint {
            Endpoint::Health | Endpoint::Login => unreachable!("handled above"),
            Endpoint::Logout => {
                self.logout(req.token.as_deref().unwrap_or_default());
                ok(200, json!({ "logged_out": true }))
            }
            Endpoint::Me => {
                let account = self.tb.service().user(&actor).cloned();
                ok(200, json!({ "session": session, "account": account }))
            }
            Endpoint::CreateUser => {
                let b: CreateUserBody = parse_body(&req.body)?;
                if b.password.is_empty() {
                    return Err(ApiError::validation(
                        "password",
                        "password: must not be empty",
                    ));
                }
                let user = momex_core::exam::NewUser {
                    id: b.id.clone(),
                    role: b.role,
                    impu: b.impu,
                    display_name: b.display_name,
                    channel: b.channel,
                    key: b.key,
                };
                let out = self.command(Command::CreateUser { actor, user })?;
                self.credentials.insert(b.id, b.password);
                ok(201, outcome_json(&out))
            }
            Endpoint::CreateCourse => {
                let b: CreateCourseBody = parse_body(&req.body)?;
                let out = self.command(Command::CreateCourse {
                    actor,
                    id: b.id,
                    title: b.title,
                    owners: b.owners,
                })?;
                ok(201, outcome_json(&out))
            }
            Endpoint::PutGroup => {
                let b: GroupBody = parse_body(&req.body)?;
                let out = self.command(Command::ManageGroup {
                    actor,
                    id: param(0).as_str().into(),
                    members: b.members,
                })?;
                ok(200, outcome_json(&out))
            }
            Endpoint::AddQuestion => {
                let draft: QuestionDraft = parse_body(&req.body)?;
                let out = self.command(Command::AddQuestion { actor, draft })?;
                ok(201, outcome_json(&out))
            }
            Endpoint::EditQuestion => {
                let draft: QuestionDraft = parse_body(&req.body)?;
                let out = self.command(Command::EditQuestion {
                    actor,
                    id: param(0).as_str().into(),
                    draft,
                })?;
                ok(200, outcome_json(&out))
            }
            Endpoint::QuestionBank => {
                let qs = self
                    .tb
                    .service()
                    .view_question_bank(&actor, &param(0).as_str().into())?;
                ok(200, qs)
            }
            Endpoint::ComposeExam => {
                let draft: ExamDraft = parse_body(&req.body)?;
                let out = self.command(Command::ComposeExam { actor, draft })?;
                ok(201, outcome_json(&out))
            }
            Endpoint::ScheduleExam => {
                let draft: ScheduleDraft = parse_body(&req.body)?;
                let out = self.command(Command::ScheduleExam { actor, draft })?;
                ok(201, outcome_json(&out))
            }
            Endpoint::ListSchedules => ok(200, self.tb.service().list_schedules(&actor)?),
            Endpoint::ViewReport => ok(
                200,
                self.tb
                    .service()
                    .view_report(&actor, &param(0).as_str().into())?,
            ),
            Endpoint::EditReport => {
                let field: ReportField = parse_body(&req.body)?;
                let out = self.command(Command::EditReport {
                    actor,
                    session: param(0).as_str().into(),
                    field,
                })?;
                ok(200, outcome_json(&out))
            }
            Endpoint::ExamChannel => Err(ApiError::new(
                426,
                "UpgradeRequired",
                "the exam channel is a websocket endpoint",
            )),
        }
    }

    // ---- exam channels ----

    /// Opens a live channel for the token's account on `schedule`.
    pub fn open_channel(
        &mut self,
        token: Option<&str>,
        schedule: &str,
    ) -> Result<ChannelId, ApiError> {
        let session = self.authenticate(token)?;
        let schedule = momex_core::exam::ScheduleId::from(schedule);
        if self
            .channels
            .values()
            .any(|c| !c.is_closed() && c.student == session.user && c.schedule == schedule)
        {
            return Err(ApiError::duplicate_channel());
        }
        let ue = Testbed::ue_addr_for(&session.user);
        if !self.tb.sim.is_registered(&ue) {
            let identity = self
                .tb
                .identity_for(&session.user)
                .ok_or_else(|| ApiError::no_subscription(session.user.as_str()))?;
            self.tb.add_ue(&ue, identity);
        }
        let id = self.next_channel;
        self.next_channel += 1;
        let ch = ExamChannel::open(id, session.user, schedule, ue, &mut self.tb);
        self.channels.insert(id, ch);
        Ok(id)
    }

    pub fn channel_input(&mut self, id: ChannelId, ev: ClientEvent) {
        if let Some(ch) = self.channels.get_mut(&id) {
            ch.input(ev, &mut self.tb);
        }
    }

    /// Client went away. The exam itself keeps running on the server.
    pub fn drop_channel(&mut self, id: ChannelId) {
        self.channels.remove(&id);
    }

    /// Events produced since the last call. Closed channels are removed
    /// once their terminal event has been taken.
    pub fn take_events(&mut self, id: ChannelId) -> Vec<ServerEvent> {
        let Some(ch) = self.channels.get_mut(&id) else {
            return Vec::new();
        };
        let events = ch.take_events();
        if ch.is_closed() {
            self.channels.remove(&id);
        }
        events
    }

    pub fn channel_ids(&self) -> Vec<ChannelId> {
        self.channels.keys().copied().collect()
    }

    fn poll_channels(&mut self) {
        for ch in self.channels.values_mut() {
            ch.poll(&mut self.tb);
        }
    }

    // ---- clock ----

    /// Runs the simulation up to virtual time `t`, emitting a tick on
    /// every whole second.
    pub fn advance_to(&mut self, t: u64) {
        loop {
            let next_tick = self.last_tick + TICK_MS;
            match self.tb.sim.next_event_time() {
                Some(at) if at <= t && at <= next_tick => {
                    self.tb.sim.step();
                    self.poll_channels();
                }
                _ if next_tick <= t => {
                    self.tb.sim.run_until(next_tick);
                    self.last_tick = next_tick;
                    for ch in self.channels.values_mut() {
                        ch.tick(next_tick);
                    }
                    self.poll_channels();
                }
                _ => {
                    self.tb.sim.run_until(t);
                    self.poll_channels();
                    return;
                }
            }
        }
    }

    pub fn advance_by(&mut self, ms: u64) {
        let t = self.now() + ms;
        self.advance_to(t);
    }

    /// Virtual time of the next thing the clock must wake for.
    pub fn next_wakeup(&self) -> u64 {
        let tick = self.last_tick + TICK_MS;
        self.tb.sim.next_event_time().map_or(tick, |t| t.min(tick))
    }
}
