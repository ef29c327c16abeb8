use serde::Deserialize;

use crate::exam::fixtures::{line_of, FixtureError};
use crate::exam::{QuestionId, QuestionItem};
use crate::ims::SecretKey;
use crate::sip::SipUri;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(tag = "mode", content = "choices", rename_all = "snake_case")]
pub enum AnswerMode {
    /// Every question answered with the master's correct choice.
    AllCorrect,
    /// Every question answered with a choice other than the correct one.
    AllWrong,
    /// One choice per question, in question-set order.
    Scripted(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Register,
    StartExam {
        schedule: String,
    },
    Answer {
        ordinal: usize,
        choice: usize,
    },
    /// Expanded into `Answer` steps once the question set is known.
    Answers {
        #[serde(flatten)]
        mode: AnswerMode,
    },
    Finish,
    WaitResult,
    Delay {
        ms: u64,
    },
}

impl Step {
    pub fn name(&self) -> &'static str {
        match self {
            Step::Register => "register",
            Step::StartExam { .. } => "start_exam",
            Step::Answer { .. } => "answer",
            Step::Answers { .. } => "answers",
            Step::Finish => "finish",
            Step::WaitResult => "wait_result",
            Step::Delay { .. } => "delay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeSection {
    pub impi: String,
    pub impu: SipUri,
    pub key: SecretKey,
    /// Simulator address; defaults to `ue-<user part of impu>`.
    #[serde(default)]
    pub node: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub ue: UeSection,
    #[serde(rename = "step")]
    pub steps: Vec<Step>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, FixtureError> {
        let s: Scenario =
            toml::from_str(text).map_err(|e| crate::exam::fixtures::toml_error(text, &e))?;
        if s.steps.first() != Some(&Step::Register) {
            let line = text.find("[[step]]").map_or(1, |o| line_of(text, o));
            return Err(FixtureError {
                file: None,
                line,
                message: "the first step must be register".into(),
            });
        }
        Ok(s)
    }

    pub fn load(path: &std::path::Path) -> Result<Scenario, FixtureError> {
        let text = std::fs::read_to_string(path).map_err(|e| FixtureError {
            file: Some(path.to_path_buf()),
            line: 0,
            message: e.to_string(),
        })?;
        Scenario::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn node_name(&self) -> String {
        self.ue
            .node
            .clone()
            .unwrap_or_else(|| format!("ue-{}", self.ue.impu.user.as_deref().unwrap_or("anon")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("answer mode covers {given} questions, session has {expected}")]
pub struct ArityMismatch {
    pub expected: usize,
    pub given: usize,
}

/// Expands an answer mode into one `Answer` step per question. `master`
/// gives the correct choice for a question.
pub fn answer_strategy(
    mode: &AnswerMode,
    questions: &[QuestionItem],
    master: impl Fn(&QuestionId) -> Option<usize>,
) -> Result<Vec<Step>, ArityMismatch> {
    let choices: Vec<usize> = match mode {
        AnswerMode::AllCorrect => questions
            .iter()
            .map(|q| master(&q.id).unwrap_or(0))
            .collect(),
        AnswerMode::AllWrong => questions
            .iter()
            .map(|q| {
                let n = q.choices.len().max(1);
                master(&q.id).map_or(0, |c| (c + 1) % n)
            })
            .collect(),
        AnswerMode::Scripted(list) => {
            if list.len() != questions.len() {
                return Err(ArityMismatch {
                    expected: questions.len(),
                    given: list.len(),
                });
            }
            list.clone()
        }
    };
    Ok(choices
        .into_iter()
        .enumerate()
        .map(|(i, choice)| Step::Answer {
            ordinal: i + 1,
            choice,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(n: usize) -> Vec<QuestionItem> {
        (0..n)
            .map(|i| QuestionItem {
                ordinal: i + 1,
                id: QuestionId(format!("q{i}")),
                text: String::new(),
                choices: vec!["a".into(), "b".into(), "c".into()],
            })
            .collect()
    }

    #[test]
    fn all_correct_matches_master() {
        let steps = answer_strategy(&AnswerMode::AllCorrect, &items(5), |_| Some(2)).unwrap();
        assert_eq!(steps.len(), 5);
        assert!(steps
            .iter()
            .all(|s| matches!(s, Step::Answer { choice: 2, .. })));
    }

    #[test]
    fn all_wrong_avoids_master() {
        let steps = answer_strategy(&AnswerMode::AllWrong, &items(4), |_| Some(2)).unwrap();
        assert!(steps
            .iter()
            .all(|s| matches!(s, Step::Answer { choice: 0, .. })));
    }

    #[test]
    fn scripted_arity() {
        assert_eq!(
            answer_strategy(&AnswerMode::Scripted(vec![0, 1]), &items(3), |_| None),
            Err(ArityMismatch {
                expected: 3,
                given: 2
            })
        );
    }

    #[test]
    fn parses_scenario() {
        let text = r#"
[ue]
impi = "alice@open-ims.test"
impu = "sip:alice@open-ims.test"
key = "0101010101010101010101010101010101010101010101010101010101010101"

[[step]]
action = "register"

[[step]]
action = "start_exam"
schedule = "sched1"

[[step]]
action = "answers"
mode = "all_correct"

[[step]]
action = "answers"
mode = "scripted"
choices = [1, 2]

[[step]]
action = "delay"
ms = 250
"#;
        let s = Scenario::parse(text).unwrap();
        assert_eq!(s.node_name(), "ue-alice");
        assert_eq!(
            s.steps[2],
            Step::Answers {
                mode: AnswerMode::AllCorrect
            }
        );
        assert_eq!(
            s.steps[3],
            Step::Answers {
                mode: AnswerMode::Scripted(vec![1, 2])
            }
        );
        assert_eq!(s.steps[4], Step::Delay { ms: 250 });
    }

    #[test]
    fn register_must_come_first() {
        let text = r#"
[ue]
impi = "a"
impu = "sip:a@h"
key = "0101010101010101010101010101010101010101010101010101010101010101"

[[step]]
action = "finish"
"#;
        let e = Scenario::parse(text).unwrap_err();
        assert_eq!(e.line, 7);
    }
}
