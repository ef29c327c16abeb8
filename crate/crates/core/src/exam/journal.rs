//! Command journal: every state-changing call as one JSON line, replayable
//! against a fresh service to rebuild identical state.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::*;
use super::service::{ExamError, ExamService, NewUser, SubscriberDirectory, TickReport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    CreateUser {
        actor: UserId,
        user: NewUser,
    },
    CreateCourse {
        actor: UserId,
        id: CourseId,
        title: String,
        owners: BTreeSet<UserId>,
    },
    ManageGroup {
        actor: UserId,
        id: GroupId,
        members: BTreeSet<UserId>,
    },
    AddQuestion {
        actor: UserId,
        draft: QuestionDraft,
    },
    EditQuestion {
        actor: UserId,
        id: QuestionId,
        draft: QuestionDraft,
    },
    ComposeExam {
        actor: UserId,
        draft: ExamDraft,
    },
    ScheduleExam {
        actor: UserId,
        draft: ScheduleDraft,
    },
    StartSession {
        actor: UserId,
        schedule: ScheduleId,
        ims_registered: bool,
    },
    SubmitAnswer {
        actor: UserId,
        session: SessionId,
        question: QuestionId,
        choice: usize,
    },
    FinishSession {
        actor: UserId,
        session: SessionId,
    },
    EditReport {
        actor: UserId,
        session: SessionId,
        field: ReportField,
    },
    Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub now: u64,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    User(UserAccount),
    Course(Course),
    Group(Group),
    Question(Question),
    Exam(Questionnaire),
    Schedule(ExamSchedule),
    Session(ExamSession),
    Answered,
    Report(Report),
    Tick(TickReport),
}

impl ExamService {
    pub fn execute(
        &mut self,
        now: u64,
        cmd: Command,
        dir: &mut dyn SubscriberDirectory,
    ) -> Result<Outcome, ExamError> {
        Ok(match cmd {
            Command::CreateUser { actor, user } => {
                Outcome::User(self.create_user(&actor, user, dir)?)
            }
            Command::CreateCourse {
                actor,
                id,
                title,
                owners,
            } => Outcome::Course(self.create_course(&actor, id, title, owners)?),
            Command::ManageGroup { actor, id, members } => {
                Outcome::Group(self.manage_group(&actor, id, members)?)
            }
            Command::AddQuestion { actor, draft } => {
                Outcome::Question(self.add_question(&actor, draft)?)
            }
            Command::EditQuestion { actor, id, draft } => {
                Outcome::Question(self.edit_question(&actor, &id, draft)?)
            }
            Command::ComposeExam { actor, draft } => {
                Outcome::Exam(self.compose_exam(&actor, draft)?)
            }
            Command::ScheduleExam { actor, draft } => {
                Outcome::Schedule(self.schedule_exam(&actor, draft)?)
            }
            Command::StartSession {
                actor,
                schedule,
                ims_registered,
            } => Outcome::Session(self.start_session(&actor, &schedule, now, ims_registered)?),
            Command::SubmitAnswer {
                actor,
                session,
                question,
                choice,
            } => {
                self.submit_answer(&actor, &session, &question, choice, now)?;
                Outcome::Answered
            }
            Command::FinishSession { actor, session } => {
                Outcome::Report(self.finish_session(&actor, &session, now)?)
            }
            Command::EditReport {
                actor,
                session,
                field,
            } => Outcome::Report(self.edit_report(&actor, &session, field, now)?),
            Command::Tick => Outcome::Tick(self.tick(now)),
        })
    }
}

/// Append-only journal file.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Journal { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, entry: &Entry) -> io::Result<()> {
        let mut line = serde_json::to_string(entry)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> io::Result<Vec<Entry>> {
        let reader = BufReader::new(File::open(path)?);
        let mut out = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1))
            })?;
            out.push(entry);
        }
        Ok(out)
    }
}

/// Re-executes journal entries in order. Failures are part of the history
/// (a late answer still expires its session), so results are ignored.
pub fn replay(svc: &mut ExamService, entries: &[Entry], dir: &mut dyn SubscriberDirectory) {
    for e in entries {
        let _ = svc.execute(e.now, e.command.clone(), dir);
    }
}
