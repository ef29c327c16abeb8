//! Endpoint table. `docs/api.md` lists the same rows; a contract test keeps
//! them in step.

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Health,
    Login,
    Logout,
    Me,
    CreateUser,
    CreateCourse,
    PutGroup,
    AddQuestion,
    EditQuestion,
    QuestionBank,
    ComposeExam,
    ScheduleExam,
    ListSchedules,
    ViewReport,
    EditReport,
    ExamChannel,
}

pub struct Route {
    pub method: &'static str,
    pub pattern: &'static str,
    pub endpoint: Endpoint,
    pub auth: bool,
}

const fn route(
    method: &'static str,
    pattern: &'static str,
    endpoint: Endpoint,
    auth: bool,
) -> Route {
    Route {
        method,
        pattern,
        endpoint,
        auth,
    }
}

pub const ROUTES: &[Route] = &[
    route("GET", "/api/health", Endpoint::Health, false),
    route("POST", "/api/login", Endpoint::Login, false),
    route("POST", "/api/logout", Endpoint::Logout, true),
    route("GET", "/api/me", Endpoint::Me, true),
    route("POST", "/api/users", Endpoint::CreateUser, true),
    route("POST", "/api/courses", Endpoint::CreateCourse, true),
    route("PUT", "/api/groups/{id}", Endpoint::PutGroup, true),
    route("POST", "/api/questions", Endpoint::AddQuestion, true),
    route("PUT", "/api/questions/{id}", Endpoint::EditQuestion, true),
    route(
        "GET",
        "/api/courses/{id}/questions",
        Endpoint::QuestionBank,
        true,
    ),
    route("POST", "/api/exams", Endpoint::ComposeExam, true),
    route("POST", "/api/schedules", Endpoint::ScheduleExam, true),
    route("GET", "/api/schedules", Endpoint::ListSchedules, true),
    route("GET", "/api/reports/{session}", Endpoint::ViewReport, true),
    route(
        "PATCH",
        "/api/reports/{session}",
        Endpoint::EditReport,
        true,
    ),
    route(
        "GET",
        "/api/exam/{schedule}/channel",
        Endpoint::ExamChannel,
        true,
    ),
];

fn segments(path: &str) -> Vec<&str> {
    path.split('?')
        .next()
        .unwrap_or("")
        .split('/')
        .filter(|s| !s.is_empty())
        .collect()
}

/// Matches a request line against the table, returning path parameters in
/// order.
pub fn match_route(method: &str, path: &str) -> Result<(Endpoint, Vec<String>), ApiError> {
    let got = segments(path);
    let mut path_matched = false;
    for r in ROUTES {
        let want = segments(r.pattern);
        if want.len() != got.len() {
            continue;
        }
        let mut params = Vec::new();
        let fits = want.iter().zip(&got).all(|(w, g)| {
            if w.starts_with('{') {
                params.push((*g).to_owned());
                true
            } else {
                w == g
            }
        });
        if !fits {
            continue;
        }
        path_matched = true;
        if r.method == method {
            return Ok((r.endpoint, params));
        }
    }
    Err(if path_matched {
        ApiError::method_not_allowed(method, path)
    } else {
        ApiError::not_found(path)
    })
}
