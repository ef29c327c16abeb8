use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::*;
use super::rbac::{access_check, Decision, Operation, Target};
use super::select::{select_random, shuffle, student_seed};
use crate::ims::{HssError, ImsCore, SecretKey, SubscriberProfile};
use crate::netsim::SplitMix64;
use crate::sip::SipUri;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum ExamError {
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("unknown course {0}")]
    UnknownCourse(CourseId),
    #[error("unknown question {0}")]
    UnknownQuestion(QuestionId),
    #[error("unknown exam {0}")]
    UnknownExam(ExamId),
    #[error("unknown group {0}")]
    UnknownGroup(GroupId),
    #[error("unknown schedule {0}")]
    UnknownSchedule(ScheduleId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("no report for session {0}")]
    UnknownReport(SessionId),
    #[error("id {0} already in use")]
    DuplicateId(String),
    #[error("public identity {0} already assigned")]
    DuplicateImpu(SipUri),
    #[error("invalid user: {0}")]
    InvalidUser(String),
    #[error("invalid course: {0}")]
    InvalidCourse(String),
    #[error("invalid group: {0}")]
    InvalidGroup(String),
    #[error("invalid question: {0}")]
    InvalidQuestion(String),
    #[error("invalid questionnaire: {0}")]
    InvalidQuestionnaire(String),
    #[error("pool has {available} eligible questions, {needed} needed")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("window start must precede end")]
    InvalidWindow,
    #[error("question {0} is used by a composed exam")]
    QuestionLocked(QuestionId),
    #[error("student is not registered with the IMS core")]
    NotRegistered,
    #[error("student is not in the scheduled group")]
    NotInGroup,
    #[error("outside the exam window")]
    OutsideWindow,
    #[error("exam already taken")]
    AlreadyTaken,
    #[error("session is not active")]
    SessionNotActive,
    #[error("deadline has passed")]
    DeadlinePassed,
    #[error("choice {choice} out of range for {choices} choices")]
    InvalidChoice { choice: usize, choices: usize },
    #[error("wrong state for this operation")]
    WrongState,
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("subscriber provisioning failed: {0}")]
    Provisioning(String),
}

impl ExamError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ExamError::Forbidden(_) => "Forbidden",
            ExamError::UnknownUser(_) => "UnknownUser",
            ExamError::UnknownCourse(_) => "UnknownCourse",
            ExamError::UnknownQuestion(_) => "UnknownQuestion",
            ExamError::UnknownExam(_) => "UnknownExam",
            ExamError::UnknownGroup(_) => "UnknownGroup",
            ExamError::UnknownSchedule(_) => "UnknownSchedule",
            ExamError::UnknownSession(_) => "UnknownSession",
            ExamError::UnknownReport(_) => "UnknownReport",
            ExamError::DuplicateId(_) => "DuplicateId",
            ExamError::DuplicateImpu(_) => "DuplicateImpu",
            ExamError::InvalidUser(_) => "InvalidUser",
            ExamError::InvalidCourse(_) => "InvalidCourse",
            ExamError::InvalidGroup(_) => "InvalidGroup",
            ExamError::InvalidQuestion(_) => "InvalidQuestion",
            ExamError::InvalidQuestionnaire(_) => "InvalidQuestionnaire",
            ExamError::PoolTooSmall { .. } => "PoolTooSmall",
            ExamError::InvalidWindow => "InvalidWindow",
            ExamError::QuestionLocked(_) => "QuestionLocked",
            ExamError::NotRegistered => "NotRegistered",
            ExamError::NotInGroup => "NotInGroup",
            ExamError::OutsideWindow => "OutsideWindow",
            ExamError::AlreadyTaken => "AlreadyTaken",
            ExamError::SessionNotActive => "SessionNotActive",
            ExamError::DeadlinePassed => "DeadlinePassed",
            ExamError::InvalidChoice { .. } => "InvalidChoice",
            ExamError::WrongState => "WrongState",
            ExamError::InvalidEdit(_) => "InvalidEdit",
            ExamError::Provisioning(_) => "Provisioning",
        }
    }

    /// SIP status used when the error travels back in a response.
    pub fn sip_status(&self) -> u16 {
        match self {
            ExamError::Forbidden(_) | ExamError::NotRegistered | ExamError::NotInGroup => 403,
            ExamError::UnknownSchedule(_)
            | ExamError::UnknownSession(_)
            | ExamError::UnknownUser(_) => 404,
            ExamError::OutsideWindow | ExamError::DeadlinePassed | ExamError::SessionNotActive => {
                410
            }
            ExamError::AlreadyTaken => 486,
            _ => 400,
        }
    }
}

/// Where accounts created at run time get their IMS subscription.
pub trait SubscriberDirectory {
    fn provision(&mut self, impu: &SipUri, key: &SecretKey) -> Result<(), ExamError>;
}

/// Accepts every provisioning request without side effects.
#[derive(Debug, Default)]
pub struct NullDirectory;

impl SubscriberDirectory for NullDirectory {
    fn provision(&mut self, _impu: &SipUri, _key: &SecretKey) -> Result<(), ExamError> {
        Ok(())
    }
}

impl SubscriberDirectory for ImsCore {
    fn provision(&mut self, impu: &SipUri, key: &SecretKey) -> Result<(), ExamError> {
        let aor = impu.aor();
        let impi = match &aor.user {
            Some(u) => format!("{u}@{}", aor.host),
            None => aor.host.clone(),
        };
        let profile = SubscriberProfile {
            impi,
            impus: vec![aor.clone()],
            secret_key: key.clone(),
            service_triggers: self.default_triggers.clone(),
            barred: false,
        };
        self.hss.provision(profile).map_err(|e| match e {
            HssError::DuplicateImpu(_) => ExamError::DuplicateImpu(aor),
            other => ExamError::Provisioning(other.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewUser {
    pub id: UserId,
    pub role: Role,
    pub impu: SipUri,
    pub display_name: String,
    #[serde(default)]
    pub channel: Channel,
    /// IMS secret; drawn from the service generator when absent.
    #[serde(default)]
    pub key: Option<SecretKey>,
}

/// Effects of one scheduler tick.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickReport {
    pub reminders: Vec<Notification>,
    pub expired: Vec<SessionId>,
    /// Notifications released to the channel sinks, in queue order.
    pub flushed: Vec<Notification>,
}

impl TickReport {
    pub fn is_empty(&self) -> bool {
        self.reminders.is_empty() && self.expired.is_empty() && self.flushed.is_empty()
    }
}

/// The exam service model. Every operation takes the current virtual time;
/// nothing here reads a clock or performs I/O.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamService {
    rng: SplitMix64,
    pub bands: GradeBands,
    users: BTreeMap<UserId, UserAccount>,
    courses: BTreeMap<CourseId, Course>,
    questions: BTreeMap<QuestionId, Question>,
    exams: BTreeMap<ExamId, Questionnaire>,
    groups: BTreeMap<GroupId, Group>,
    schedules: BTreeMap<ScheduleId, ExamSchedule>,
    sessions: BTreeMap<SessionId, ExamSession>,
    reports: BTreeMap<SessionId, Report>,
    outbox: Vec<Notification>,
    delivered: Vec<Notification>,
    counters: BTreeMap<String, u64>,
}

fn check(decision: Decision) -> Result<(), ExamError> {
    match decision {
        Decision::Allow => Ok(()),
        Decision::Deny(why) => Err(ExamError::Forbidden(why)),
    }
}

impl ExamService {
    pub fn new(seed: u64) -> Self {
        ExamService {
            rng: SplitMix64::new(seed),
            bands: GradeBands::default(),
            users: BTreeMap::new(),
            courses: BTreeMap::new(),
            questions: BTreeMap::new(),
            exams: BTreeMap::new(),
            groups: BTreeMap::new(),
            schedules: BTreeMap::new(),
            sessions: BTreeMap::new(),
            reports: BTreeMap::new(),
            outbox: Vec::new(),
            delivered: Vec::new(),
            counters: BTreeMap::new(),
        }
    }

    fn next_id(&mut self, prefix: &str) -> String {
        let n = self.counters.entry(prefix.to_owned()).or_insert(0);
        *n += 1;
        format!("{prefix}{n}")
    }

    fn actor(&self, id: &UserId) -> Result<&UserAccount, ExamError> {
        self.users
            .get(id)
            .ok_or_else(|| ExamError::UnknownUser(id.clone()))
    }

    fn authorize(
        &self,
        actor: &UserId,
        op: Operation,
        target: Target<'_>,
    ) -> Result<(), ExamError> {
        check(access_check(self.actor(actor)?, op, target))
    }

    // ---- reads without access control ----

    pub fn user(&self, id: &UserId) -> Option<&UserAccount> {
        self.users.get(id)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserAccount> {
        self.users.values()
    }

    pub fn user_by_impu(&self, impu: &SipUri) -> Option<&UserAccount> {
        self.users.values().find(|u| u.impu.same_aor(impu))
    }

    pub fn course(&self, id: &CourseId) -> Option<&Course> {
        self.courses.get(id)
    }

    pub fn courses(&self) -> impl Iterator<Item = &Course> {
        self.courses.values()
    }

    pub fn question(&self, id: &QuestionId) -> Option<&Question> {
        self.questions.get(id)
    }

    pub fn exam(&self, id: &ExamId) -> Option<&Questionnaire> {
        self.exams.get(id)
    }

    pub fn group(&self, id: &GroupId) -> Option<&Group> {
        self.groups.get(id)
    }

    pub fn schedule(&self, id: &ScheduleId) -> Option<&ExamSchedule> {
        self.schedules.get(id)
    }

    pub fn schedules(&self) -> impl Iterator<Item = &ExamSchedule> {
        self.schedules.values()
    }

    pub fn session(&self, id: &SessionId) -> Option<&ExamSession> {
        self.sessions.get(id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &ExamSession> {
        self.sessions.values()
    }

    pub fn session_for(&self, student: &UserId, schedule: &ScheduleId) -> Option<&ExamSession> {
        self.sessions
            .values()
            .find(|s| &s.student == student && &s.schedule == schedule)
    }

    pub fn report(&self, session: &SessionId) -> Option<&Report> {
        self.reports.get(session)
    }

    pub fn reports(&self) -> impl Iterator<Item = &Report> {
        self.reports.values()
    }

    /// Notifications queued but not yet flushed by `tick`.
    pub fn pending_notifications(&self) -> &[Notification] {
        &self.outbox
    }

    /// Every notification flushed so far.
    pub fn delivered_notifications(&self) -> &[Notification] {
        &self.delivered
    }

    /// Times at which `tick` has work: unsent reminders and the instant
    /// after each active session's deadline.
    pub fn wakeups(&self) -> Vec<u64> {
        let reminders = self
            .schedules
            .values()
            .filter(|s| !s.reminder_sent)
            .map(ExamSchedule::reminder_at);
        let deadlines = self
            .sessions
            .values()
            .filter(|s| s.state == SessionState::Active)
            .map(|s| s.deadline + 1);
        let set: BTreeSet<u64> = reminders.chain(deadlines).collect();
        set.into_iter().collect()
    }

    /// Course questions in creation order, optionally restricted to a topic.
    pub fn pool(&self, course: &CourseId, topic: Option<&str>) -> Vec<&Question> {
        let mut qs: Vec<&Question> = self
            .questions
            .values()
            .filter(|q| &q.course == course && topic.is_none_or(|t| q.topic == t))
            .collect();
        qs.sort_by_key(|q| q.seq);
        qs
    }

    pub fn is_locked(&self, q: &QuestionId) -> bool {
        self.exams.values().any(|e| e.master_for(q).is_some())
    }

    // ---- administration ----

    /// Inserts an account without an acting administrator. Used to seed the
    /// first administrator and by fixture loading.
    pub fn bootstrap_user(
        &mut self,
        new: NewUser,
        dir: &mut dyn SubscriberDirectory,
    ) -> Result<UserAccount, ExamError> {
        if !is_token(new.id.as_str()) {
            return Err(ExamError::InvalidUser(format!(
                "id {:?} is not a token",
                new.id.as_str()
            )));
        }
        if new.impu.user.is_none() {
            return Err(ExamError::InvalidUser("impu needs a user part".into()));
        }
        if self.users.contains_key(&new.id) {
            return Err(ExamError::DuplicateId(new.id.0));
        }
        if self.user_by_impu(&new.impu).is_some() {
            return Err(ExamError::DuplicateImpu(new.impu));
        }
        let key = new
            .key
            .clone()
            .unwrap_or_else(|| SecretKey::random(&mut self.rng));
        dir.provision(&new.impu, &key)?;
        let account = UserAccount {
            id: new.id,
            role: new.role,
            impu: new.impu.aor(),
            display_name: new.display_name,
            channel: new.channel,
        };
        self.users.insert(account.id.clone(), account.clone());
        Ok(account)
    }

    pub fn create_user(
        &mut self,
        actor: &UserId,
        new: NewUser,
        dir: &mut dyn SubscriberDirectory,
    ) -> Result<UserAccount, ExamError> {
        self.authorize(actor, Operation::CreateUser, Target::none())?;
        self.bootstrap_user(new, dir)
    }

    pub fn create_course(
        &mut self,
        actor: &UserId,
        id: CourseId,
        title: String,
        owners: BTreeSet<UserId>,
    ) -> Result<Course, ExamError> {
        self.authorize(actor, Operation::CreateCourse, Target::none())?;
        if !is_token(id.as_str()) {
            return Err(ExamError::InvalidCourse(format!(
                "id {:?} is not a token",
                id.as_str()
            )));
        }
        if self.courses.contains_key(&id) {
            return Err(ExamError::DuplicateId(id.0));
        }
        if owners.is_empty() {
            return Err(ExamError::InvalidCourse(
                "at least one owner required".into(),
            ));
        }
        for o in &owners {
            match self.users.get(o) {
                Some(u) if u.role == Role::Faculty => {}
                Some(_) => {
                    return Err(ExamError::InvalidCourse(format!(
                        "owner {o} is not faculty"
                    )))
                }
                None => return Err(ExamError::UnknownUser(o.clone())),
            }
        }
        let course = Course { id, title, owners };
        self.courses.insert(course.id.clone(), course.clone());
        Ok(course)
    }

    /// Creates the group or replaces its membership.
    pub fn manage_group(
        &mut self,
        actor: &UserId,
        id: GroupId,
        members: BTreeSet<UserId>,
    ) -> Result<Group, ExamError> {
        self.authorize(actor, Operation::ManageGroup, Target::none())?;
        if !is_token(id.as_str()) {
            return Err(ExamError::InvalidGroup(format!(
                "id {:?} is not a token",
                id.as_str()
            )));
        }
        for m in &members {
            match self.users.get(m) {
                Some(u) if u.role == Role::Student => {}
                Some(_) => {
                    return Err(ExamError::InvalidGroup(format!(
                        "member {m} is not a student"
                    )))
                }
                None => return Err(ExamError::UnknownUser(m.clone())),
            }
        }
        let group = Group { id, members };
        self.groups.insert(group.id.clone(), group.clone());
        Ok(group)
    }

    // ---- question bank ----

    fn owned_course(
        &self,
        actor: &UserId,
        op: Operation,
        course: &CourseId,
    ) -> Result<(), ExamError> {
        let c = self
            .courses
            .get(course)
            .ok_or_else(|| ExamError::UnknownCourse(course.clone()))?;
        self.authorize(actor, op, Target::course(c))
    }

    pub fn add_question(
        &mut self,
        actor: &UserId,
        draft: QuestionDraft,
    ) -> Result<Question, ExamError> {
        self.owned_course(actor, Operation::AddQuestion, &draft.course)?;
        draft.check().map_err(ExamError::InvalidQuestion)?;
        let id = QuestionId(self.next_id("q"));
        let seq = self.counters["q"];
        let q = Question {
            id,
            seq,
            course: draft.course,
            text: draft.text,
            choices: draft.choices,
            correct_choice: draft.correct_choice,
            topic: draft.topic,
            points: draft.points,
        };
        self.questions.insert(q.id.clone(), q.clone());
        Ok(q)
    }

    pub fn edit_question(
        &mut self,
        actor: &UserId,
        id: &QuestionId,
        draft: QuestionDraft,
    ) -> Result<Question, ExamError> {
        let existing = self
            .questions
            .get(id)
            .ok_or_else(|| ExamError::UnknownQuestion(id.clone()))?;
        let course = existing.course.clone();
        self.owned_course(actor, Operation::EditQuestion, &course)?;
        if draft.course != course {
            return Err(ExamError::InvalidQuestion(
                "a question cannot move between courses".into(),
            ));
        }
        draft.check().map_err(ExamError::InvalidQuestion)?;
        if self.is_locked(id) {
            return Err(ExamError::QuestionLocked(id.clone()));
        }
        let q = self.questions.get_mut(id).expect("checked above");
        q.text = draft.text;
        q.choices = draft.choices;
        q.correct_choice = draft.correct_choice;
        q.topic = draft.topic;
        q.points = draft.points;
        Ok(q.clone())
    }

    pub fn view_question_bank(
        &self,
        actor: &UserId,
        course: &CourseId,
    ) -> Result<Vec<Question>, ExamError> {
        self.owned_course(actor, Operation::ViewQuestionBank, course)?;
        Ok(self.pool(course, None).into_iter().cloned().collect())
    }

    // ---- exam creation ----

    pub fn compose_exam(
        &mut self,
        actor: &UserId,
        draft: ExamDraft,
    ) -> Result<Questionnaire, ExamError> {
        self.owned_course(actor, Operation::ComposeExam, &draft.course)?;
        if draft.duration_ms == 0 {
            return Err(ExamError::InvalidQuestionnaire(
                "duration must be positive".into(),
            ));
        }
        let entry = |q: &Question| MasterEntry {
            question: q.id.clone(),
            correct_choice: q.correct_choice,
            points: q.points,
        };
        let master: Vec<MasterEntry> = match &draft.kind {
            ExamKind::Fixed { questions } => {
                if questions.is_empty() {
                    return Err(ExamError::InvalidQuestionnaire(
                        "fixed exam needs questions".into(),
                    ));
                }
                let distinct: BTreeSet<_> = questions.iter().collect();
                if distinct.len() != questions.len() {
                    return Err(ExamError::InvalidQuestionnaire(
                        "duplicate question id".into(),
                    ));
                }
                let mut master = Vec::with_capacity(questions.len());
                for id in questions {
                    match self.questions.get(id) {
                        Some(q) if q.course == draft.course => master.push(entry(q)),
                        _ => return Err(ExamError::UnknownQuestion(id.clone())),
                    }
                }
                master
            }
            ExamKind::Random {
                count,
                topic_filter,
            } => {
                if *count == 0 {
                    return Err(ExamError::InvalidQuestionnaire(
                        "count must be at least 1".into(),
                    ));
                }
                let pool = self.pool(&draft.course, topic_filter.as_deref());
                if *count > pool.len() {
                    return Err(ExamError::PoolTooSmall {
                        needed: *count,
                        available: pool.len(),
                    });
                }
                pool.into_iter().map(entry).collect()
            }
        };
        let seed = self.rng.next_u64();
        let exam = Questionnaire {
            id: ExamId(self.next_id("exam")),
            course: draft.course,
            title: draft.title,
            kind: draft.kind,
            duration_ms: draft.duration_ms,
            master,
            seed,
        };
        self.exams.insert(exam.id.clone(), exam.clone());
        Ok(exam)
    }

    pub fn schedule_exam(
        &mut self,
        actor: &UserId,
        draft: ScheduleDraft,
    ) -> Result<ExamSchedule, ExamError> {
        let exam = self
            .exams
            .get(&draft.exam)
            .ok_or_else(|| ExamError::UnknownExam(draft.exam.clone()))?;
        let course = exam.course.clone();
        self.owned_course(actor, Operation::ScheduleExam, &course)?;
        if !self.groups.contains_key(&draft.group) {
            return Err(ExamError::UnknownGroup(draft.group));
        }
        if draft.window.start >= draft.window.end {
            return Err(ExamError::InvalidWindow);
        }
        let sched = ExamSchedule {
            id: ScheduleId(self.next_id("sched")),
            exam: draft.exam,
            group: draft.group,
            window: draft.window,
            reminder_offset_ms: draft.reminder_offset_ms,
            reminder_sent: false,
        };
        self.schedules.insert(sched.id.clone(), sched.clone());
        Ok(sched)
    }

    /// All schedules for staff; a student sees those of their groups.
    pub fn list_schedules(&self, actor: &UserId) -> Result<Vec<ExamSchedule>, ExamError> {
        self.authorize(actor, Operation::ListSchedules, Target::none())?;
        let account = self.actor(actor)?;
        Ok(self
            .schedules
            .values()
            .filter(|s| {
                account.role != Role::Student
                    || self
                        .groups
                        .get(&s.group)
                        .is_some_and(|g| g.members.contains(actor))
            })
            .cloned()
            .collect())
    }

    // ---- examination ----

    pub fn start_session(
        &mut self,
        actor: &UserId,
        schedule: &ScheduleId,
        now: u64,
        ims_registered: bool,
    ) -> Result<ExamSession, ExamError> {
        self.authorize(actor, Operation::StartSession, Target::subject(actor))?;
        let sched = self
            .schedules
            .get(schedule)
            .ok_or_else(|| ExamError::UnknownSchedule(schedule.clone()))?;
        if !ims_registered {
            return Err(ExamError::NotRegistered);
        }
        let in_group = self
            .groups
            .get(&sched.group)
            .is_some_and(|g| g.members.contains(actor));
        if !in_group {
            return Err(ExamError::NotInGroup);
        }
        if !sched.window.contains(now) {
            return Err(ExamError::OutsideWindow);
        }
        if self.session_for(actor, schedule).is_some() {
            return Err(ExamError::AlreadyTaken);
        }
        let exam = &self.exams[&sched.exam];
        let seed = student_seed(exam.seed, actor.as_str());
        let questions = match &exam.kind {
            ExamKind::Fixed { questions } => {
                let mut qs = questions.clone();
                shuffle(&mut qs, &mut SplitMix64::new(seed));
                qs
            }
            ExamKind::Random { count, .. } => {
                select_random(&exam.pool(), *count, seed).ok_or(ExamError::PoolTooSmall {
                    needed: *count,
                    available: exam.master.len(),
                })?
            }
        };
        let deadline = (now + exam.duration_ms).min(sched.window.end);
        let exam_id = exam.id.clone();
        let mut session = ExamSession {
            id: SessionId(self.next_id("sess")),
            student: actor.clone(),
            schedule: schedule.clone(),
            exam: exam_id,
            questions,
            answers: BTreeMap::new(),
            state: SessionState::Created,
            started_at: now,
            deadline,
            history: vec![(SessionState::Created, now)],
        };
        session.transition(SessionState::Active, now);
        self.sessions.insert(session.id.clone(), session.clone());
        Ok(session)
    }

    fn own_session(
        &self,
        actor: &UserId,
        op: Operation,
        id: &SessionId,
    ) -> Result<&ExamSession, ExamError> {
        let s = self
            .sessions
            .get(id)
            .ok_or_else(|| ExamError::UnknownSession(id.clone()))?;
        self.authorize(actor, op, Target::subject(&s.student))?;
        Ok(s)
    }

    /// Expires and grades an overdue active session. Returns whether it did.
    fn expire_if_overdue(&mut self, id: &SessionId, now: u64) -> bool {
        let s = self.sessions.get_mut(id).expect("known session");
        if s.state != SessionState::Active || now <= s.deadline {
            return false;
        }
        s.transition(SessionState::Expired, now);
        self.auto_grade(id, now).expect("expired session grades");
        true
    }

    pub fn submit_answer(
        &mut self,
        actor: &UserId,
        session: &SessionId,
        question: &QuestionId,
        choice: usize,
        now: u64,
    ) -> Result<(), ExamError> {
        let s = self.own_session(actor, Operation::SubmitAnswer, session)?;
        if s.state != SessionState::Active {
            return Err(ExamError::SessionNotActive);
        }
        if self.expire_if_overdue(session, now) {
            return Err(ExamError::DeadlinePassed);
        }
        let s = &self.sessions[session];
        if !s.questions.contains(question) {
            return Err(ExamError::UnknownQuestion(question.clone()));
        }
        let choices = self.questions[question].choices.len();
        if choice >= choices {
            return Err(ExamError::InvalidChoice { choice, choices });
        }
        let s = self.sessions.get_mut(session).expect("known session");
        s.answers
            .insert(question.clone(), AnswerRecord { choice, at: now });
        Ok(())
    }

    pub fn finish_session(
        &mut self,
        actor: &UserId,
        session: &SessionId,
        now: u64,
    ) -> Result<Report, ExamError> {
        let s = self.own_session(actor, Operation::FinishSession, session)?;
        if s.state != SessionState::Active {
            return Err(ExamError::SessionNotActive);
        }
        if self.expire_if_overdue(session, now) {
            return Err(ExamError::DeadlinePassed);
        }
        self.sessions
            .get_mut(session)
            .expect("known session")
            .transition(SessionState::Submitted, now);
        self.auto_grade(session, now)
    }

    /// Expires every overdue active session; returns their reports.
    pub fn expire_sessions(&mut self, now: u64) -> Vec<Report> {
        let overdue: Vec<SessionId> = self
            .sessions
            .values()
            .filter(|s| s.state == SessionState::Active && now > s.deadline)
            .map(|s| s.id.clone())
            .collect();
        let mut reports = Vec::new();
        for id in overdue {
            if self.expire_if_overdue(&id, now) {
                reports.push(self.reports[&id].clone());
            }
        }
        reports
    }

    // ---- evaluation ----

    /// Grades a submitted or expired session against the exam's master
    /// copy. Grading a graded session returns the stored report unchanged.
    pub fn auto_grade(&mut self, session: &SessionId, now: u64) -> Result<Report, ExamError> {
        let s = self
            .sessions
            .get(session)
            .ok_or_else(|| ExamError::UnknownSession(session.clone()))?;
        match s.state {
            SessionState::Graded => {
                return self
                    .reports
                    .get(session)
                    .cloned()
                    .ok_or_else(|| ExamError::UnknownReport(session.clone()))
            }
            SessionState::Submitted | SessionState::Expired => {}
            SessionState::Created | SessionState::Active => return Err(ExamError::WrongState),
        }
        let exam = &self.exams[&s.exam];
        let per_question: Vec<Award> = s
            .questions
            .iter()
            .map(|q| {
                let m = exam.master_for(q).expect("session question in master");
                let correct = s
                    .answers
                    .get(q)
                    .is_some_and(|a| a.choice == m.correct_choice);
                Award {
                    question: q.clone(),
                    awarded: if correct { m.points } else { 0 },
                    points: m.points,
                }
            })
            .collect();
        let total = per_question.iter().map(|a| a.awarded).sum();
        let max_total = per_question.iter().map(|a| a.points).sum();
        let report = Report {
            session: session.clone(),
            student: s.student.clone(),
            course: exam.course.clone(),
            per_question,
            total,
            max_total,
            grade: self.bands.grade(total, max_total),
            grade_overridden: false,
            comments: String::new(),
            edits: Vec::new(),
        };
        let student = s.student.clone();
        let exam_id = exam.id.clone();
        self.sessions
            .get_mut(session)
            .expect("known session")
            .transition(SessionState::Graded, now);
        self.reports.insert(session.clone(), report.clone());
        let payload = format!(
            "result session={} exam={} total={}/{} grade={}",
            session, exam_id, report.total, report.max_total, report.grade
        );
        self.notify(&student, payload, now);
        Ok(report)
    }

    fn report_target(&self, session: &SessionId) -> Result<(&Report, &Course), ExamError> {
        let r = self
            .reports
            .get(session)
            .ok_or_else(|| ExamError::UnknownReport(session.clone()))?;
        Ok((r, &self.courses[&r.course]))
    }

    pub fn view_report(&self, actor: &UserId, session: &SessionId) -> Result<Report, ExamError> {
        let (r, c) = self.report_target(session)?;
        self.authorize(
            actor,
            Operation::ViewReport,
            Target {
                course: Some(c),
                subject: Some(&r.student),
            },
        )?;
        Ok(r.clone())
    }

    pub fn edit_report(
        &mut self,
        actor: &UserId,
        session: &SessionId,
        field: ReportField,
        now: u64,
    ) -> Result<Report, ExamError> {
        let (r, c) = self.report_target(session)?;
        self.authorize(actor, Operation::EditReport, Target::course(c))?;
        if self.sessions[session].state != SessionState::Graded {
            return Err(ExamError::WrongState);
        }
        let (name, old, new) = match &field {
            ReportField::Award { question, awarded } => {
                let a = r
                    .per_question
                    .iter()
                    .find(|a| &a.question == question)
                    .ok_or_else(|| ExamError::UnknownQuestion(question.clone()))?;
                if *awarded > a.points {
                    return Err(ExamError::InvalidEdit(format!(
                        "award {awarded} exceeds {} points",
                        a.points
                    )));
                }
                (
                    format!("award:{question}"),
                    a.awarded.to_string(),
                    awarded.to_string(),
                )
            }
            ReportField::Comments(text) => {
                ("comments".to_owned(), r.comments.clone(), text.clone())
            }
            ReportField::Grade(g) => {
                if !is_token(g) {
                    return Err(ExamError::InvalidEdit(format!(
                        "grade {g:?} is not a token"
                    )));
                }
                ("grade".to_owned(), r.grade.clone(), g.clone())
            }
        };
        let bands = self.bands.clone();
        let r = self.reports.get_mut(session).expect("checked above");
        match field {
            ReportField::Award { question, awarded } => {
                let a = r
                    .per_question
                    .iter_mut()
                    .find(|a| a.question == question)
                    .expect("checked above");
                a.awarded = awarded;
                r.total = r.per_question.iter().map(|a| a.awarded).sum();
                if !r.grade_overridden {
                    r.grade = bands.grade(r.total, r.max_total);
                }
            }
            ReportField::Comments(text) => r.comments = text,
            ReportField::Grade(g) => {
                r.grade = g;
                r.grade_overridden = true;
            }
        }
        r.edits.push(ReportEdit {
            by: actor.clone(),
            field: name,
            old,
            new,
            at: now,
        });
        Ok(r.clone())
    }

    // ---- notification ----

    fn notify(&mut self, recipient: &UserId, payload: String, at: u64) {
        let channel = self
            .users
            .get(recipient)
            .map(|u| u.channel)
            .unwrap_or_default();
        self.outbox.push(Notification {
            recipient: recipient.clone(),
            channel,
            payload,
            at,
        });
    }

    /// Fires due reminders, expires overdue sessions and releases queued
    /// notifications.
    pub fn tick(&mut self, now: u64) -> TickReport {
        let due: Vec<ScheduleId> = self
            .schedules
            .values()
            .filter(|s| !s.reminder_sent && s.reminder_at() <= now)
            .map(|s| s.id.clone())
            .collect();
        let mut reminders = Vec::new();
        for id in due {
            let s = self.schedules.get_mut(&id).expect("listed above");
            s.reminder_sent = true;
            let s = s.clone();
            let members: Vec<UserId> = self
                .groups
                .get(&s.group)
                .map(|g| g.members.iter().cloned().collect())
                .unwrap_or_default();
            for m in members {
                let payload = format!(
                    "reminder schedule={} exam={} start={} end={}",
                    s.id, s.exam, s.window.start, s.window.end
                );
                self.notify(&m, payload, now);
                reminders.push(self.outbox.last().expect("just queued").clone());
            }
        }
        let expired = self
            .expire_sessions(now)
            .into_iter()
            .map(|r| r.session)
            .collect();
        let flushed = std::mem::take(&mut self.outbox);
        self.delivered.extend(flushed.iter().cloned());
        TickReport {
            reminders,
            expired,
            flushed,
        }
    }

    // ---- persistence ----

    pub fn snapshot(&self) -> String {
        serde_json::to_string_pretty(self).expect("service state serializes")
    }

    pub fn from_snapshot(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
