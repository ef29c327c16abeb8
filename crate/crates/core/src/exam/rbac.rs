//! Role/operation access matrix. `docs/rbac.md` renders the same table.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::model::{Course, Role, UserAccount, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    CreateUser,
    CreateCourse,
    ManageGroup,
    AddQuestion,
    EditQuestion,
    ViewQuestionBank,
    ComposeExam,
    ScheduleExam,
    StartSession,
    SubmitAnswer,
    FinishSession,
    ViewReport,
    EditReport,
    ListSchedules,
}

impl Operation {
    pub const ALL: [Operation; 14] = [
        Operation::CreateUser,
        Operation::CreateCourse,
        Operation::ManageGroup,
        Operation::AddQuestion,
        Operation::EditQuestion,
        Operation::ViewQuestionBank,
        Operation::ComposeExam,
        Operation::ScheduleExam,
        Operation::StartSession,
        Operation::SubmitAnswer,
        Operation::FinishSession,
        Operation::ViewReport,
        Operation::EditReport,
        Operation::ListSchedules,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Operation::CreateUser => "create_user",
            Operation::CreateCourse => "create_course",
            Operation::ManageGroup => "manage_group",
            Operation::AddQuestion => "add_question",
            Operation::EditQuestion => "edit_question",
            Operation::ViewQuestionBank => "view_question_bank",
            Operation::ComposeExam => "compose_exam",
            Operation::ScheduleExam => "schedule_exam",
            Operation::StartSession => "start_session",
            Operation::SubmitAnswer => "submit_answer",
            Operation::FinishSession => "finish_session",
            Operation::ViewReport => "view_report",
            Operation::EditReport => "edit_report",
            Operation::ListSchedules => "list_schedules",
        }
    }

    pub fn from_token(s: &str) -> Option<Operation> {
        Operation::ALL.into_iter().find(|o| o.token() == s)
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// One matrix cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Allow,
    Deny,
    /// Allowed when the actor owns the target's course.
    OwnCourse,
    /// Allowed when the target belongs to the actor.
    SelfOnly,
}

impl Rule {
    pub fn token(self) -> &'static str {
        match self {
            Rule::Allow => "allow",
            Rule::Deny => "deny",
            Rule::OwnCourse => "own-course",
            Rule::SelfOnly => "self",
        }
    }

    pub fn from_token(s: &str) -> Option<Rule> {
        [Rule::Allow, Rule::Deny, Rule::OwnCourse, Rule::SelfOnly]
            .into_iter()
            .find(|r| r.token() == s)
    }
}

pub fn matrix(role: Role, op: Operation) -> Rule {
    use Operation::*;
    use Role::*;
    match (op, role) {
        (CreateUser | CreateCourse, Administrator) => Rule::Allow,
        (CreateUser | CreateCourse, _) => Rule::Deny,
        (ManageGroup, Administrator | Faculty) => Rule::Allow,
        (ManageGroup, Student) => Rule::Deny,
        (AddQuestion | EditQuestion | ViewQuestionBank | ComposeExam | ScheduleExam, Faculty) => {
            Rule::OwnCourse
        }
        (AddQuestion | EditQuestion | ViewQuestionBank | ComposeExam | ScheduleExam, _) => {
            Rule::Deny
        }
        (StartSession, Student) => Rule::Allow,
        (StartSession, _) => Rule::Deny,
        (SubmitAnswer | FinishSession, Student) => Rule::SelfOnly,
        (SubmitAnswer | FinishSession, _) => Rule::Deny,
        (ViewReport, Administrator) => Rule::Allow,
        (ViewReport, Faculty) => Rule::OwnCourse,
        (ViewReport, Student) => Rule::SelfOnly,
        (EditReport, Faculty) => Rule::OwnCourse,
        (EditReport, _) => Rule::Deny,
        (ListSchedules, _) => Rule::Allow,
    }
}

/// What an operation acts on, as far as access control cares.
#[derive(Debug, Clone, Copy, Default)]
pub struct Target<'a> {
    pub course: Option<&'a Course>,
    pub subject: Option<&'a UserId>,
}

impl<'a> Target<'a> {
    pub fn none() -> Self {
        Target::default()
    }

    pub fn course(course: &'a Course) -> Self {
        Target {
            course: Some(course),
            subject: None,
        }
    }

    pub fn subject(subject: &'a UserId) -> Self {
        Target {
            course: None,
            subject: Some(subject),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny(String),
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        *self == Decision::Allow
    }
}

pub fn access_check(actor: &UserAccount, op: Operation, target: Target<'_>) -> Decision {
    let deny = |why: &str| Decision::Deny(format!("{op} {why} for {:?} {}", actor.role, actor.id));
    match matrix(actor.role, op) {
        Rule::Allow => Decision::Allow,
        Rule::Deny => deny("not permitted"),
        Rule::OwnCourse => match target.course {
            Some(c) if c.owners.contains(&actor.id) => Decision::Allow,
            _ => deny("requires course ownership"),
        },
        Rule::SelfOnly => match target.subject {
            Some(s) if *s == actor.id => Decision::Allow,
            _ => deny("limited to own records"),
        },
    }
}

/// The matrix as a markdown table, one row per operation.
pub fn matrix_markdown() -> String {
    let mut out =
        String::from("| operation | Administrator | Faculty | Student |\n|---|---|---|---|\n");
    for op in Operation::ALL {
        out.push_str(&format!("| {op} |"));
        for role in Role::ALL {
            out.push_str(&format!(" {} |", matrix(role, op).token()));
        }
        out.push('\n');
    }
    out
}
