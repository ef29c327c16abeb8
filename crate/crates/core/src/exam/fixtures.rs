//! University fixture files: users, courses, questions, groups, exams and
//! schedules in one TOML document. `docs/fixtures.md` has the schema.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;

use super::model::*;
use super::service::{ExamError, ExamService, NewUser, SubscriberDirectory};
use crate::ims::SecretKey;
use crate::sip::SipUri;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureError {
    pub file: Option<PathBuf>,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for FixtureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.file {
            Some(p) => write!(f, "{}:{}: {}", p.display(), self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

impl std::error::Error for FixtureError {}

impl FixtureError {
    pub fn in_file(mut self, path: &Path) -> Self {
        self.file = Some(path.to_path_buf());
        self
    }
}

/// 1-based line of a byte offset.
pub fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

pub(crate) fn toml_error(text: &str, e: &toml::de::Error) -> FixtureError {
    let line = e.span().map_or(1, |s| line_of(text, s.start));
    FixtureError {
        file: None,
        line,
        message: e.message().to_owned(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserFixture {
    pub id: String,
    pub role: Role,
    pub impu: SipUri,
    pub display_name: String,
    /// Web login secret for the gateway.
    pub password: String,
    #[serde(default)]
    pub key: Option<SecretKey>,
    #[serde(default)]
    pub channel: Channel,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CourseFixture {
    pub id: String,
    pub title: String,
    pub owners: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionFixture {
    /// Label used by exams in this file.
    pub key: String,
    pub course: String,
    pub text: String,
    pub choices: Vec<String>,
    pub correct_choice: usize,
    pub topic: String,
    #[serde(default = "one")]
    pub points: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupFixture {
    pub id: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExamKindFixture {
    Fixed,
    Random,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExamFixture {
    pub key: String,
    pub course: String,
    pub title: String,
    pub kind: ExamKindFixture,
    #[serde(default)]
    pub questions: Vec<String>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub topic: Option<String>,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFixture {
    pub exam: String,
    pub group: String,
    pub start: u64,
    pub end: u64,
    #[serde(default)]
    pub reminder_offset_ms: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct University {
    #[serde(default, rename = "user")]
    pub users: Vec<Spanned<UserFixture>>,
    #[serde(default, rename = "course")]
    pub courses: Vec<Spanned<CourseFixture>>,
    #[serde(default, rename = "question")]
    pub questions: Vec<Spanned<QuestionFixture>>,
    #[serde(default, rename = "group")]
    pub groups: Vec<Spanned<GroupFixture>>,
    #[serde(default, rename = "exam")]
    pub exams: Vec<Spanned<ExamFixture>>,
    #[serde(default, rename = "schedule")]
    pub schedules: Vec<Spanned<ScheduleFixture>>,
    #[serde(skip)]
    source: String,
}

/// What installing a fixture produced.
#[derive(Debug, Clone, Default)]
pub struct Installed {
    pub passwords: BTreeMap<UserId, String>,
    pub questions: BTreeMap<String, QuestionId>,
    pub exams: BTreeMap<String, ExamId>,
    pub schedules: Vec<ScheduleId>,
}

impl University {
    /// Parses and checks a fixture. Errors carry the line of the offending
    /// table.
    pub fn parse(text: &str) -> Result<University, FixtureError> {
        let mut u: University = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        u.source = text.to_owned();
        u.check()?;
        Ok(u)
    }

    pub fn load(path: &Path) -> Result<University, FixtureError> {
        let text = std::fs::read_to_string(path).map_err(|e| FixtureError {
            file: Some(path.to_path_buf()),
            line: 0,
            message: e.to_string(),
        })?;
        University::parse(&text).map_err(|e| e.in_file(path))
    }

    fn err(&self, span: Range<usize>, message: impl Into<String>) -> FixtureError {
        FixtureError {
            file: None,
            line: line_of(&self.source, span.start),
            message: message.into(),
        }
    }

    fn check(&self) -> Result<(), FixtureError> {
        let mut ids = BTreeSet::new();
        let mut impus = BTreeSet::new();
        let mut roles = BTreeMap::new();
        for u in &self.users {
            let v = u.get_ref();
            if !is_token(&v.id) {
                return Err(self.err(u.span(), format!("user id {:?} is not a token", v.id)));
            }
            if !ids.insert(v.id.clone()) {
                return Err(self.err(u.span(), format!("duplicate user id {}", v.id)));
            }
            if v.impu.user.is_none() {
                return Err(self.err(u.span(), format!("impu {} needs a user part", v.impu)));
            }
            if !impus.insert(v.impu.aor()) {
                return Err(self.err(u.span(), format!("duplicate impu {}", v.impu)));
            }
            if v.password.is_empty() {
                return Err(self.err(u.span(), format!("user {} has an empty password", v.id)));
            }
            roles.insert(v.id.clone(), v.role);
        }
        if !self.users.is_empty() && !roles.values().any(|r| *r == Role::Administrator) {
            return Err(self.err(self.users[0].span(), "fixture needs an Administrator"));
        }
        let mut courses = BTreeSet::new();
        for c in &self.courses {
            let v = c.get_ref();
            if !is_token(&v.id) || !courses.insert(v.id.clone()) {
                return Err(self.err(
                    c.span(),
                    format!("course id {:?} is invalid or duplicated", v.id),
                ));
            }
            if v.owners.is_empty() {
                return Err(self.err(c.span(), format!("course {} has no owners", v.id)));
            }
            for o in &v.owners {
                if roles.get(o) != Some(&Role::Faculty) {
                    return Err(
                        self.err(c.span(), format!("course owner {o} is not a faculty user"))
                    );
                }
            }
        }
        let mut questions = BTreeMap::new();
        for q in &self.questions {
            let v = q.get_ref();
            if !courses.contains(&v.course) {
                return Err(self.err(
                    q.span(),
                    format!("question {} names unknown course {}", v.key, v.course),
                ));
            }
            if questions.insert(v.key.clone(), v.course.clone()).is_some() {
                return Err(self.err(q.span(), format!("duplicate question key {}", v.key)));
            }
            let draft = QuestionDraft {
                course: v.course.as_str().into(),
                text: v.text.clone(),
                choices: v.choices.clone(),
                correct_choice: v.correct_choice,
                topic: v.topic.clone(),
                points: v.points,
            };
            draft
                .check()
                .map_err(|m| self.err(q.span(), format!("question {}: {m}", v.key)))?;
        }
        let mut groups = BTreeSet::new();
        for g in &self.groups {
            let v = g.get_ref();
            if !is_token(&v.id) || !groups.insert(v.id.clone()) {
                return Err(self.err(
                    g.span(),
                    format!("group id {:?} is invalid or duplicated", v.id),
                ));
            }
            for m in &v.members {
                if roles.get(m) != Some(&Role::Student) {
                    return Err(self.err(g.span(), format!("group member {m} is not a student")));
                }
            }
        }
        let mut exams = BTreeSet::new();
        for e in &self.exams {
            let v = e.get_ref();
            if !exams.insert(v.key.clone()) {
                return Err(self.err(e.span(), format!("duplicate exam key {}", v.key)));
            }
            if !courses.contains(&v.course) {
                return Err(self.err(
                    e.span(),
                    format!("exam {} names unknown course {}", v.key, v.course),
                ));
            }
            if v.duration_ms == 0 {
                return Err(self.err(e.span(), format!("exam {} has zero duration", v.key)));
            }
            match v.kind {
                ExamKindFixture::Fixed => {
                    if v.questions.is_empty() || v.count.is_some() {
                        return Err(self.err(
                            e.span(),
                            format!("fixed exam {} needs `questions` and no `count`", v.key),
                        ));
                    }
                    for q in &v.questions {
                        if questions.get(q) != Some(&v.course) {
                            return Err(self.err(
                                e.span(),
                                format!("exam {} uses unknown question {q}", v.key),
                            ));
                        }
                    }
                }
                ExamKindFixture::Random => {
                    if !v.questions.is_empty() || v.count.unwrap_or(0) == 0 {
                        return Err(self.err(
                            e.span(),
                            format!(
                                "random exam {} needs a positive `count` and no `questions`",
                                v.key
                            ),
                        ));
                    }
                }
            }
        }
        for s in &self.schedules {
            let v = s.get_ref();
            if !exams.contains(&v.exam) {
                return Err(self.err(s.span(), format!("schedule names unknown exam {}", v.exam)));
            }
            if !groups.contains(&v.group) {
                return Err(self.err(
                    s.span(),
                    format!("schedule names unknown group {}", v.group),
                ));
            }
            if v.start >= v.end {
                return Err(self.err(s.span(), "schedule start must precede end"));
            }
        }
        Ok(())
    }

    /// Loads the fixture into a service through its public operations.
    pub fn install(
        &self,
        svc: &mut ExamService,
        dir: &mut dyn SubscriberDirectory,
    ) -> Result<Installed, FixtureError> {
        let mut out = Installed::default();
        let wrap = |span: Range<usize>| move |e: ExamError| self.err(span.clone(), e.to_string());
        for u in &self.users {
            let v = u.get_ref();
            svc.bootstrap_user(
                NewUser {
                    id: v.id.as_str().into(),
                    role: v.role,
                    impu: v.impu.clone(),
                    display_name: v.display_name.clone(),
                    channel: v.channel,
                    key: v.key.clone(),
                },
                dir,
            )
            .map_err(wrap(u.span()))?;
            out.passwords
                .insert(v.id.as_str().into(), v.password.clone());
        }
        let admin: Option<UserId> = self
            .users
            .iter()
            .find(|u| u.get_ref().role == Role::Administrator)
            .map(|u| u.get_ref().id.as_str().into());
        let owner_of = |svc: &ExamService, course: &str| -> UserId {
            svc.course(&course.into())
                .and_then(|c| c.owners.iter().next().cloned())
                .expect("checked course")
        };
        for c in &self.courses {
            let v = c.get_ref();
            let admin = admin.as_ref().expect("checked administrator");
            svc.create_course(
                admin,
                v.id.as_str().into(),
                v.title.clone(),
                v.owners.iter().map(|o| o.as_str().into()).collect(),
            )
            .map_err(wrap(c.span()))?;
        }
        for q in &self.questions {
            let v = q.get_ref();
            let owner = owner_of(svc, &v.course);
            let stored = svc
                .add_question(
                    &owner,
                    QuestionDraft {
                        course: v.course.as_str().into(),
                        text: v.text.clone(),
                        choices: v.choices.clone(),
                        correct_choice: v.correct_choice,
                        topic: v.topic.clone(),
                        points: v.points,
                    },
                )
                .map_err(wrap(q.span()))?;
            out.questions.insert(v.key.clone(), stored.id);
        }
        for g in &self.groups {
            let v = g.get_ref();
            let admin = admin.as_ref().expect("checked administrator");
            svc.manage_group(
                admin,
                v.id.as_str().into(),
                v.members.iter().map(|m| m.as_str().into()).collect(),
            )
            .map_err(wrap(g.span()))?;
        }
        for e in &self.exams {
            let v = e.get_ref();
            let owner = owner_of(svc, &v.course);
            let kind = match v.kind {
                ExamKindFixture::Fixed => ExamKind::Fixed {
                    questions: v
                        .questions
                        .iter()
                        .map(|k| out.questions[k].clone())
                        .collect(),
                },
                ExamKindFixture::Random => ExamKind::Random {
                    count: v.count.expect("checked count"),
                    topic_filter: v.topic.clone(),
                },
            };
            let exam = svc
                .compose_exam(
                    &owner,
                    ExamDraft {
                        course: v.course.as_str().into(),
                        title: v.title.clone(),
                        kind,
                        duration_ms: v.duration_ms,
                    },
                )
                .map_err(wrap(e.span()))?;
            out.exams.insert(v.key.clone(), exam.id);
        }
        for s in &self.schedules {
            let v = s.get_ref();
            let exam = out.exams[&v.exam].clone();
            let course = svc.exam(&exam).expect("just composed").course.clone();
            let owner = owner_of(svc, course.as_str());
            let sched = svc
                .schedule_exam(
                    &owner,
                    ScheduleDraft {
                        exam,
                        group: v.group.as_str().into(),
                        window: Window {
                            start: v.start,
                            end: v.end,
                        },
                        reminder_offset_ms: v.reminder_offset_ms,
                    },
                )
                .map_err(wrap(s.span()))?;
            out.schedules.push(sched.id);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exam::service::NullDirectory;

    const GOOD: &str = r#"
[[user]]
id = "admin"
role = "Administrator"
impu = "sip:admin@open-ims.test"
display_name = "Admin"
password = "pw"

[[user]]
id = "fac"
role = "Faculty"
impu = "sip:fac@open-ims.test"
display_name = "Faculty"
password = "pw"

[[user]]
id = "stu"
role = "Student"
impu = "sip:stu@open-ims.test"
display_name = "Student"
password = "pw"
channel = "email"

[[course]]
id = "net"
title = "Networks"
owners = ["fac"]

[[question]]
key = "a"
course = "net"
text = "A?"
choices = ["x", "y"]
correct_choice = 1
topic = "t"

[[question]]
key = "b"
course = "net"
text = "B?"
choices = ["x", "y", "z"]
correct_choice = 2
topic = "t"
points = 3

[[group]]
id = "g"
members = ["stu"]

[[exam]]
key = "fx"
course = "net"
title = "Fixed"
kind = "fixed"
questions = ["b", "a"]
duration_ms = 1000

[[schedule]]
exam = "fx"
group = "g"
start = 0
end = 5000
"#;

    #[test]
    fn installs_good_fixture() {
        let u = University::parse(GOOD).unwrap();
        let mut svc = ExamService::new(1);
        let out = u.install(&mut svc, &mut NullDirectory).unwrap();
        assert_eq!(out.questions["a"], QuestionId::from("q1"));
        let exam = svc.exam(&out.exams["fx"]).unwrap();
        assert_eq!(exam.master[0].question, QuestionId::from("q2"));
        assert_eq!(exam.master[0].points, 3);
        assert_eq!(out.schedules, vec![ScheduleId::from("sched1")]);
        assert_eq!(svc.user(&"stu".into()).unwrap().channel, Channel::Email);
    }

    #[test]
    fn bad_correct_choice_names_line() {
        let bad = GOOD.replace("correct_choice = 2", "correct_choice = 3");
        let e = University::parse(&bad).unwrap_err();
        assert!(e.message.contains("correct_choice 3"), "{e}");
        // the table header line of the offending question
        let line = bad.lines().position(|l| l == "key = \"b\"").unwrap();
        assert_eq!(e.line, line);
        assert_eq!(bad.lines().nth(line - 1), Some("[[question]]"));
    }

    #[test]
    fn syntax_error_has_line() {
        let e = University::parse("[[user]]\nid = \n").unwrap_err();
        assert_eq!(e.line, 2);
    }
}
