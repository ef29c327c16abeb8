//! Exam records carried in SIP message bodies. `docs/exam-payloads.md`
//! describes the wire form.

use serde::{Deserialize, Serialize};

use super::model::{Award, ExamSession, Question, QuestionId, Report, ScheduleId, SessionId};

pub const CONTENT_TYPE: &str = "application/momex+json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionItem {
    pub ordinal: usize,
    pub id: QuestionId,
    pub text: String,
    pub choices: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ended {
    Submitted,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExamPayload {
    QuestionSet {
        session: SessionId,
        schedule: ScheduleId,
        deadline: u64,
        questions: Vec<QuestionItem>,
    },
    Answer {
        session: SessionId,
        question: QuestionId,
        choice: usize,
    },
    Finish {
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
}

impl ExamPayload {
    pub fn question_set<'a>(
        session: &ExamSession,
        lookup: impl Fn(&QuestionId) -> &'a Question,
    ) -> Self {
        ExamPayload::QuestionSet {
            session: session.id.clone(),
            schedule: session.schedule.clone(),
            deadline: session.deadline,
            questions: session
                .questions
                .iter()
                .enumerate()
                .map(|(i, id)| {
                    let q = lookup(id);
                    QuestionItem {
                        ordinal: i + 1,
                        id: id.clone(),
                        text: q.text.clone(),
                        choices: q.choices.clone(),
                    }
                })
                .collect(),
        }
    }

    pub fn result(report: &Report, ended: Ended) -> Self {
        ExamPayload::Result {
            session: report.session.clone(),
            ended,
            total: report.total,
            max_total: report.max_total,
            grade: report.grade.clone(),
            per_question: report.per_question.clone(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ExamPayload::QuestionSet { .. } => "question_set",
            ExamPayload::Answer { .. } => "answer",
            ExamPayload::Finish { .. } => "finish",
            ExamPayload::Result { .. } => "result",
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("payload serializes")
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_forms() {
        let a = ExamPayload::Answer {
            session: "sess1".into(),
            question: "q3".into(),
            choice: 2,
        };
        assert_eq!(
            String::from_utf8(a.to_bytes()).unwrap(),
            r#"{"type":"answer","session":"sess1","question":"q3","choice":2}"#
        );
        let f = ExamPayload::Finish {
            session: "sess1".into(),
        };
        assert_eq!(
            String::from_utf8(f.to_bytes()).unwrap(),
            r#"{"type":"finish","session":"sess1"}"#
        );
        assert_eq!(ExamPayload::from_bytes(&a.to_bytes()).unwrap(), a);
    }

    #[test]
    fn rejects_unknown_type_and_fields() {
        assert!(ExamPayload::from_bytes(br#"{"type":"cheat","session":"s"}"#).is_err());
        assert!(ExamPayload::from_bytes(br#"{"type":"finish","session":"s","x":1}"#).is_err());
    }
}
