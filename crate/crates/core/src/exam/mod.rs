//! The exam application server: question bank, exam composition and
//! scheduling, timed sessions, grading, reports and notifications.

pub mod fixtures;
pub mod journal;
pub mod model;
pub mod node;
pub mod notify;
pub mod payload;
pub mod rbac;
pub mod select;
pub mod service;

pub use fixtures::{FixtureError, Installed, University};
pub use journal::{replay, Command, Entry, Journal, Outcome};
pub use model::*;
pub use node::AppServer;
pub use notify::{FileSinks, MemorySink, NotificationSink};
pub use payload::{Ended, ExamPayload, QuestionItem, CONTENT_TYPE};
pub use rbac::{access_check, matrix, matrix_markdown, Decision, Operation, Rule, Target};
pub use select::{select_random, shuffle, student_seed};
pub use service::{
    ExamError, ExamService, NewUser, NullDirectory, SubscriberDirectory, TickReport,
};
