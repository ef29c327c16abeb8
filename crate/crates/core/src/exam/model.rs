use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::sip::SipUri;

macro_rules! id_type {
    ($($name:ident),* $(,)?) => {$(
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_owned())
            }
        }
    )*};
}

id_type!(UserId, CourseId, QuestionId, ExamId, GroupId, ScheduleId, SessionId);

/// Ids are short tokens: ASCII letters, digits, `-`, `_`, `.`.
pub fn is_token(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 64
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || b"-_.".contains(&b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Administrator,
    Faculty,
    Student,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Administrator, Role::Faculty, Role::Student];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    #[default]
    Sms,
    Email,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub id: UserId,
    pub role: Role,
    pub impu: SipUri,
    pub display_name: String,
    #[serde(default)]
    pub channel: Channel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Course {
    pub id: CourseId,
    pub title: String,
    pub owners: BTreeSet<UserId>,
}

/// Input for adding or replacing a question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionDraft {
    pub course: CourseId,
    pub text: String,
    pub choices: Vec<String>,
    pub correct_choice: usize,
    pub topic: String,
    pub points: u32,
}

impl QuestionDraft {
    pub fn check(&self) -> Result<(), String> {
        if self.choices.len() < 2 {
            return Err("at least two choices required".into());
        }
        if self.correct_choice >= self.choices.len() {
            return Err(format!(
                "correct_choice {} out of range for {} choices",
                self.correct_choice,
                self.choices.len()
            ));
        }
        if self.points == 0 {
            return Err("points must be at least 1".into());
        }
        if !is_token(&self.topic) {
            return Err(format!("topic {:?} is not a token", self.topic));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    /// Creation order; pools are listed in this order.
    pub seq: u64,
    pub course: CourseId,
    pub text: String,
    pub choices: Vec<String>,
    pub correct_choice: usize,
    pub topic: String,
    pub points: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExamKind {
    Fixed {
        questions: Vec<QuestionId>,
    },
    Random {
        count: usize,
        topic_filter: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamDraft {
    pub course: CourseId,
    pub title: String,
    #[serde(flatten)]
    pub kind: ExamKind,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MasterEntry {
    pub question: QuestionId,
    pub correct_choice: usize,
    pub points: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub id: ExamId,
    pub course: CourseId,
    pub title: String,
    pub kind: ExamKind,
    pub duration_ms: u64,
    /// Correct answers as they stood at composition. For random exams this
    /// covers the whole eligible pool, in pool order.
    pub master: Vec<MasterEntry>,
    pub seed: u64,
}

impl Questionnaire {
    pub fn master_for(&self, q: &QuestionId) -> Option<&MasterEntry> {
        self.master.iter().find(|m| &m.question == q)
    }

    pub fn pool(&self) -> Vec<QuestionId> {
        self.master.iter().map(|m| m.question.clone()).collect()
    }

    pub fn question_count(&self) -> usize {
        match &self.kind {
            ExamKind::Fixed { questions } => questions.len(),
            ExamKind::Random { count, .. } => *count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub id: GroupId,
    pub members: BTreeSet<UserId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: u64,
    pub end: u64,
}

impl Window {
    pub fn contains(&self, t: u64) -> bool {
        self.start <= t && t <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleDraft {
    pub exam: ExamId,
    pub group: GroupId,
    pub window: Window,
    pub reminder_offset_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamSchedule {
    pub id: ScheduleId,
    pub exam: ExamId,
    pub group: GroupId,
    pub window: Window,
    pub reminder_offset_ms: u64,
    pub reminder_sent: bool,
}

impl ExamSchedule {
    pub fn reminder_at(&self) -> u64 {
        self.window.start.saturating_sub(self.reminder_offset_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SessionState {
    Created,
    Active,
    Submitted,
    Expired,
    Graded,
}

impl SessionState {
    pub fn can_become(self, next: SessionState) -> bool {
        use SessionState::*;
        matches!(
            (self, next),
            (Created, Active)
                | (Active, Submitted)
                | (Active, Expired)
                | (Submitted, Graded)
                | (Expired, Graded)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub choice: usize,
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamSession {
    pub id: SessionId,
    pub student: UserId,
    pub schedule: ScheduleId,
    pub exam: ExamId,
    pub questions: Vec<QuestionId>,
    pub answers: BTreeMap<QuestionId, AnswerRecord>,
    pub state: SessionState,
    pub started_at: u64,
    pub deadline: u64,
    /// Every state entered, with the time it was entered.
    pub history: Vec<(SessionState, u64)>,
}

impl ExamSession {
    /// Moves to `next`, panicking on an illegal transition; callers check
    /// state first, so a panic here is a bug.
    pub(crate) fn transition(&mut self, next: SessionState, at: u64) {
        assert!(
            self.state.can_become(next),
            "illegal session transition {:?} -> {:?}",
            self.state,
            next
        );
        self.state = next;
        self.history.push((next, at));
    }

    pub fn ended_by_deadline(&self) -> bool {
        self.history
            .iter()
            .any(|(s, _)| *s == SessionState::Expired)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Award {
    pub question: QuestionId,
    pub awarded: u32,
    pub points: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportEdit {
    pub by: UserId,
    pub field: String,
    pub old: String,
    pub new: String,
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub session: SessionId,
    pub student: UserId,
    pub course: CourseId,
    pub per_question: Vec<Award>,
    pub total: u32,
    pub max_total: u32,
    pub grade: String,
    /// Set once faculty overrides the grade; later mark edits keep it.
    pub grade_overridden: bool,
    pub comments: String,
    pub edits: Vec<ReportEdit>,
}

/// A single report change requested by faculty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "field", content = "value", rename_all = "snake_case")]
pub enum ReportField {
    Award { question: QuestionId, awarded: u32 },
    Comments(String),
    Grade(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub recipient: UserId,
    pub channel: Channel,
    pub payload: String,
    pub at: u64,
}

impl Notification {
    /// Sink record: `<t_ms> <recipient> <payload>`.
    pub fn line(&self) -> String {
        format!("{} {} {}", self.at, self.recipient, self.payload)
    }
}

/// Percent thresholds for letter grades, highest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeBands {
    pub bands: Vec<(u32, String)>,
    pub fallback: String,
}

impl Default for GradeBands {
    fn default() -> Self {
        GradeBands {
            bands: [(90, "A"), (80, "B"), (70, "C"), (60, "D")]
                .into_iter()
                .map(|(p, g)| (p, g.to_owned()))
                .collect(),
            fallback: "F".into(),
        }
    }
}

impl GradeBands {
    pub fn grade(&self, total: u32, max_total: u32) -> String {
        // percent * max <= 100 * total, in integers
        let scaled = u64::from(total) * 100;
        self.bands
            .iter()
            .find(|(pct, _)| u64::from(*pct) * u64::from(max_total) <= scaled)
            .map_or_else(|| self.fallback.clone(), |(_, g)| g.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grade_band_edges() {
        let b = GradeBands::default();
        assert_eq!(b.grade(9, 10), "A");
        assert_eq!(b.grade(89, 100), "B");
        assert_eq!(b.grade(8, 10), "B");
        assert_eq!(b.grade(7, 10), "C");
        assert_eq!(b.grade(6, 10), "D");
        assert_eq!(b.grade(59, 100), "F");
        assert_eq!(b.grade(0, 0), "A");
        assert_eq!(b.grade(2, 3), "D");
    }

    #[test]
    fn transitions() {
        use SessionState::*;
        let legal = [
            (Created, Active),
            (Active, Submitted),
            (Active, Expired),
            (Submitted, Graded),
            (Expired, Graded),
        ];
        for a in [Created, Active, Submitted, Expired, Graded] {
            for b in [Created, Active, Submitted, Expired, Graded] {
                assert_eq!(a.can_become(b), legal.contains(&(a, b)), "{a:?}->{b:?}");
            }
        }
    }

    #[test]
    fn question_draft_checks() {
        let d = QuestionDraft {
            course: "c".into(),
            text: "t".into(),
            choices: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            correct_choice: 2,
            topic: "net".into(),
            points: 1,
        };
        assert!(d.check().is_ok());
        assert!(QuestionDraft {
            correct_choice: 4,
            ..d.clone()
        }
        .check()
        .is_err());
        assert!(QuestionDraft {
            choices: vec!["a".into()],
            correct_choice: 0,
            ..d.clone()
        }
        .check()
        .is_err());
        assert!(QuestionDraft { points: 0, ..d }.check().is_err());
    }

    #[test]
    fn reminder_time_saturates() {
        let s = ExamSchedule {
            id: "s".into(),
            exam: "e".into(),
            group: "g".into(),
            window: Window {
                start: 1_000,
                end: 5_000,
            },
            reminder_offset_ms: 200,
            reminder_sent: false,
        };
        assert_eq!(s.reminder_at(), 800);
        assert_eq!(
            ExamSchedule {
                reminder_offset_ms: 5_000,
                ..s
            }
            .reminder_at(),
            0
        );
    }
}
