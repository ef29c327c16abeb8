//! Live exam channel: drives the student's UE agent through the SIP path
//! and turns what it observes into stream events.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use momex_core::exam::{
    Award, Ended, ExamPayload, QuestionId, QuestionItem, ScheduleId, SessionId, SessionState,
    UserId,
};
use momex_core::netsim::NodeAddress;
use momex_core::testbed::Testbed;
use momex_core::ue::UeAgent;

pub type ChannelId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerView {
    pub question: QuestionId,
    pub choice: usize,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerEvent {
    QuestionSet {
        session: SessionId,
        schedule: ScheduleId,
        deadline: u64,
        remaining_ms: u64,
        questions: Vec<QuestionItem>,
    },
    /// Sent instead of `question_set` when reattaching to an active session.
    Snapshot {
        session: SessionId,
        schedule: ScheduleId,
        deadline: u64,
        remaining_ms: u64,
        questions: Vec<QuestionItem>,
        answers: Vec<AnswerView>,
    },
    Tick {
        session: SessionId,
        remaining_ms: u64,
    },
    AnswerAccepted {
        session: SessionId,
        question: QuestionId,
        choice: usize,
    },
    AnswerRejected {
        session: SessionId,
        question: QuestionId,
        code: String,
    },
    FinishRejected {
        session: SessionId,
        code: String,
    },
    Expired {
        session: SessionId,
    },
    Result {
        session: SessionId,
        ended: Ended,
        total: u32,
        max_total: u32,
        grade: String,
        per_question: Vec<Award>,
    },
    /// Terminal. `code` carries the service error for `rejected`.
    Closed {
        reason: CloseReason,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        code: Option<String>,
    },
}

impl ServerEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            ServerEvent::QuestionSet { .. } => "question_set",
            ServerEvent::Snapshot { .. } => "snapshot",
            ServerEvent::Tick { .. } => "tick",
            ServerEvent::AnswerAccepted { .. } => "answer_accepted",
            ServerEvent::AnswerRejected { .. } => "answer_rejected",
            ServerEvent::FinishRejected { .. } => "finish_rejected",
            ServerEvent::Expired { .. } => "expired",
            ServerEvent::Result { .. } => "result",
            ServerEvent::Closed { .. } => "closed",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, ServerEvent::Closed { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseReason {
    Finished,
    Expired,
    Rejected,
    Unauthorized,
    DuplicateChannel,
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientEvent {
    Answer { question: QuestionId, choice: usize },
    Finish,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Starting,
    Active,
    Closing(CloseReason),
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Inflight {
    Register,
    Start,
    Answer { question: QuestionId, choice: usize },
    Finish,
    Bye,
}

/// Service error code out of a UE failure such as `INVITE 410 OutsideWindow`.
pub fn failure_code(failure: &str) -> String {
    let parts: Vec<&str> = failure.split_whitespace().collect();
    match parts.as_slice() {
        [_, status, code, ..]
            if status.len() == 3 && status.bytes().all(|b| b.is_ascii_digit()) =>
        {
            (*code).to_owned()
        }
        _ if failure.contains("timed out") => "Timeout".into(),
        _ => "UeFailure".into(),
    }
}

pub struct ExamChannel {
    pub id: ChannelId,
    pub student: UserId,
    pub schedule: ScheduleId,
    ue: NodeAddress,
    phase: Phase,
    inflight: Option<Inflight>,
    queue: VecDeque<ClientEvent>,
    session: Option<SessionId>,
    deadline: u64,
    questions: Vec<QuestionItem>,
    result_seen: bool,
    bye_issued: bool,
    outbox: Vec<ServerEvent>,
}

impl ExamChannel {
    /// Opens a channel and issues the first UE action, or reattaches to an
    /// active session with a snapshot.
    pub fn open(
        id: ChannelId,
        student: UserId,
        schedule: ScheduleId,
        ue: NodeAddress,
        tb: &mut Testbed,
    ) -> Self {
        let mut ch = ExamChannel {
            id,
            student,
            schedule,
            ue,
            phase: Phase::Starting,
            inflight: None,
            queue: VecDeque::new(),
            session: None,
            deadline: 0,
            questions: Vec::new(),
            result_seen: false,
            bye_issued: false,
            outbox: Vec::new(),
        };
        if !ch.reattach(tb) {
            let registered = tb.ue(&ch.ue).is_some_and(UeAgent::is_registered);
            ch.begin(
                tb,
                if registered {
                    Inflight::Start
                } else {
                    Inflight::Register
                },
            );
        }
        ch.poll(tb);
        ch
    }

    fn reattach(&mut self, tb: &mut Testbed) -> bool {
        let Some(qs) = tb.ue(&self.ue).and_then(|a| a.question_set()).cloned() else {
            return false;
        };
        let Some(session) = tb.service().session(&qs.session).cloned() else {
            return false;
        };
        if session.schedule != self.schedule || session.state != SessionState::Active {
            return false;
        }
        let now = tb.sim.now();
        self.session = Some(qs.session.clone());
        self.deadline = qs.deadline;
        self.questions = qs.questions.clone();
        self.phase = Phase::Active;
        self.outbox.push(ServerEvent::Snapshot {
            session: qs.session,
            schedule: self.schedule.clone(),
            deadline: qs.deadline,
            remaining_ms: qs.deadline.saturating_sub(now),
            questions: qs.questions,
            answers: session
                .answers
                .iter()
                .map(|(q, a)| AnswerView {
                    question: q.clone(),
                    choice: a.choice,
                })
                .collect(),
        });
        true
    }

    pub fn is_closed(&self) -> bool {
        self.phase == Phase::Closed
    }

    pub fn session(&self) -> Option<&SessionId> {
        self.session.as_ref()
    }

    pub fn take_events(&mut self) -> Vec<ServerEvent> {
        std::mem::take(&mut self.outbox)
    }

    /// Queues a client event; it is relayed once the agent is idle.
    pub fn input(&mut self, ev: ClientEvent, tb: &mut Testbed) {
        if matches!(self.phase, Phase::Starting | Phase::Active) {
            self.queue.push_back(ev);
            self.poll(tb);
        }
    }

    /// One countdown tick at the current virtual time.
    pub fn tick(&mut self, now: u64) {
        if self.phase != Phase::Active || self.result_seen || now >= self.deadline {
            return;
        }
        if let Some(session) = &self.session {
            self.outbox.push(ServerEvent::Tick {
                session: session.clone(),
                remaining_ms: self.deadline - now,
            });
        }
    }

    fn begin(&mut self, tb: &mut Testbed, op: Inflight) {
        let schedule = self.schedule.to_string();
        let ordinal = match &op {
            Inflight::Answer { question, .. } => self
                .questions
                .iter()
                .find(|q| q.id == *question)
                .map(|q| q.ordinal),
            _ => None,
        };
        tb.sim
            .with_node::<UeAgent, _>(&self.ue, |a, ctx| match &op {
                Inflight::Register => a.begin_register(ctx),
                Inflight::Start => a.begin_start_exam(ctx, &schedule),
                Inflight::Answer { choice, .. } => {
                    a.begin_answer(ctx, ordinal.unwrap_or(0), *choice)
                }
                Inflight::Finish => a.begin_finish(ctx),
                Inflight::Bye => a.begin_bye(ctx),
            });
        self.inflight = Some(op);
    }

    fn close(&mut self, reason: CloseReason, code: Option<String>) {
        self.phase = Phase::Closed;
        self.queue.clear();
        self.outbox.push(ServerEvent::Closed { reason, code });
    }

    /// Advances the channel as far as the agent's state allows.
    pub fn poll(&mut self, tb: &mut Testbed) {
        loop {
            if self.phase == Phase::Closed {
                return;
            }
            let Some(agent) = tb.ue(&self.ue) else {
                return self.close(CloseReason::Rejected, Some("UeFailure".into()));
            };
            self.check_result(agent.result().cloned());
            let agent = tb.ue(&self.ue).expect("checked above");
            if agent.current().is_some() {
                return;
            }
            if let Some(op) = self.inflight.take() {
                let outcome = agent
                    .finished()
                    .cloned()
                    .unwrap_or_else(|| Err("no outcome".into()));
                let qs = agent.question_set().cloned();
                self.on_done(tb, op, outcome, qs);
                continue;
            }
            match self.phase {
                Phase::Closing(reason) => {
                    if self.bye_issued {
                        return self.close(reason, None);
                    }
                    self.bye_issued = true;
                    self.begin(tb, Inflight::Bye);
                }
                Phase::Active => match self.queue.pop_front() {
                    Some(ClientEvent::Answer { question, choice }) => {
                        if self.questions.iter().any(|q| q.id == question) {
                            self.begin(tb, Inflight::Answer { question, choice });
                        } else {
                            let session = self.session.clone().expect("active");
                            self.outbox.push(ServerEvent::AnswerRejected {
                                session,
                                question,
                                code: "UnknownQuestion".into(),
                            });
                        }
                    }
                    Some(ClientEvent::Finish) => self.begin(tb, Inflight::Finish),
                    None => return,
                },
                _ => return,
            }
        }
    }

    fn check_result(&mut self, result: Option<ExamPayload>) {
        if self.result_seen || self.phase != Phase::Active {
            return;
        }
        let Some(ExamPayload::Result {
            session,
            ended,
            total,
            max_total,
            grade,
            per_question,
        }) = result
        else {
            return;
        };
        if Some(&session) != self.session.as_ref() {
            return;
        }
        self.result_seen = true;
        self.queue.clear();
        if ended == Ended::Expired {
            self.outbox.push(ServerEvent::Expired {
                session: session.clone(),
            });
        }
        self.outbox.push(ServerEvent::Result {
            session,
            ended,
            total,
            max_total,
            grade,
            per_question,
        });
        // closed follows the BYE
        self.phase = Phase::Closing(match ended {
            Ended::Submitted => CloseReason::Finished,
            Ended::Expired => CloseReason::Expired,
        });
    }

    fn on_done(
        &mut self,
        tb: &mut Testbed,
        op: Inflight,
        outcome: Result<(), String>,
        qs: Option<momex_core::ue::QuestionSet>,
    ) {
        let now = tb.sim.now();
        match (op, outcome) {
            (Inflight::Register, Ok(())) => self.begin(tb, Inflight::Start),
            (Inflight::Register | Inflight::Start, Err(e)) => {
                self.close(CloseReason::Rejected, Some(failure_code(&e)))
            }
            (Inflight::Start, Ok(())) => {
                let Some(qs) = qs else {
                    return self.close(CloseReason::Rejected, Some("UeFailure".into()));
                };
                self.session = Some(qs.session.clone());
                self.deadline = qs.deadline;
                self.questions = qs.questions.clone();
                self.phase = Phase::Active;
                self.outbox.push(ServerEvent::QuestionSet {
                    session: qs.session,
                    schedule: self.schedule.clone(),
                    deadline: qs.deadline,
                    remaining_ms: qs.deadline.saturating_sub(now),
                    questions: qs.questions,
                });
            }
            (Inflight::Answer { question, choice }, result) => {
                let session = self.session.clone().expect("answers only while active");
                self.outbox.push(match result {
                    Ok(()) => ServerEvent::AnswerAccepted {
                        session,
                        question,
                        choice,
                    },
                    Err(e) => ServerEvent::AnswerRejected {
                        session,
                        question,
                        code: failure_code(&e),
                    },
                });
            }
            (Inflight::Finish, Ok(())) => {}
            (Inflight::Finish, Err(e)) => {
                let session = self.session.clone().expect("finish only while active");
                self.outbox.push(ServerEvent::FinishRejected {
                    session,
                    code: failure_code(&e),
                });
            }
            (Inflight::Bye, _) => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failure_codes() {
        assert_eq!(failure_code("INVITE 410 OutsideWindow"), "OutsideWindow");
        assert_eq!(failure_code("MESSAGE 403 Forbidden"), "Forbidden");
        assert_eq!(failure_code("MESSAGE timed out"), "Timeout");
        assert_eq!(failure_code("no question set received"), "UeFailure");
    }

    #[test]
    fn event_wire_form() {
        let e = ServerEvent::Tick {
            session: SessionId::from("sess1"),
            remaining_ms: 4000,
        };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"type":"tick","session":"sess1","remaining_ms":4000}"#
        );
        let c: ClientEvent =
            serde_json::from_str(r#"{"type":"answer","question":"q3","choice":1}"#).unwrap();
        assert_eq!(
            c,
            ClientEvent::Answer {
                question: "q3".into(),
                choice: 1
            }
        );
        let closed = ServerEvent::Closed {
            reason: CloseReason::DuplicateChannel,
            code: None,
        };
        assert_eq!(
            serde_json::to_string(&closed).unwrap(),
            r#"{"type":"closed","reason":"duplicate_channel"}"#
        );
    }
}
