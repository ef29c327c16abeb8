use serde::{Deserialize, Serialize};

use momex_core::exam::ExamError;

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    /// Offending request field for `Validation` errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default)]
    pub correlation_id: String,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_owned(),
            message: message.into(),
            field: None,
            correlation_id: String::new(),
        }
    }

    pub fn unauthorized() -> Self {
        Self::new(
            401,
            "Unauthorized",
            "missing, unknown or expired session token",
        )
    }

    pub fn bad_credentials() -> Self {
        Self::new(401, "BadCredentials", "unknown user or wrong password")
    }

    pub fn validation(field: &str, message: impl Into<String>) -> Self {
        let mut e = Self::new(400, "Validation", message);
        e.field = Some(field.to_owned());
        e
    }

    pub fn not_found(path: &str) -> Self {
        Self::new(404, "NotFound", format!("no endpoint at {path}"))
    }

    pub fn method_not_allowed(method: &str, path: &str) -> Self {
        Self::new(
            405,
            "MethodNotAllowed",
            format!("{method} not supported on {path}"),
        )
    }

    pub fn duplicate_channel() -> Self {
        Self::new(
            409,
            "DuplicateChannel",
            "an exam channel is already open for this schedule",
        )
    }

    pub fn no_subscription(user: &str) -> Self {
        Self::new(
            403,
            "NoSubscription",
            format!("{user} has no IMS subscription"),
        )
    }
}

/// HTTP status for a service error. Each error keeps its service code.
pub fn status_for(e: &ExamError) -> u16 {
    use ExamError::*;
    match e {
        Forbidden(_) | NotRegistered | NotInGroup => 403,
        UnknownUser(_) | UnknownCourse(_) | UnknownQuestion(_) | UnknownExam(_)
        | UnknownGroup(_) | UnknownSchedule(_) | UnknownSession(_) | UnknownReport(_) => 404,
        DuplicateId(_) | DuplicateImpu(_) | QuestionLocked(_) | AlreadyTaken | OutsideWindow
        | SessionNotActive | DeadlinePassed | WrongState => 409,
        InvalidUser(_)
        | InvalidCourse(_)
        | InvalidGroup(_)
        | InvalidQuestion(_)
        | InvalidQuestionnaire(_)
        | PoolTooSmall { .. }
        | InvalidWindow
        | InvalidChoice { .. }
        | InvalidEdit(_) => 422,
        Provisioning(_) => 502,
    }
}

impl From<ExamError> for ApiError {
    fn from(e: ExamError) -> Self {
        ApiError::new(status_for(&e), e.code(), e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn service_codes_pass_through() {
        let e: ApiError = ExamError::Forbidden("no".into()).into();
        assert_eq!((e.status, e.code.as_str()), (403, "Forbidden"));
        let e: ApiError = ExamError::PoolTooSmall {
            needed: 5,
            available: 2,
        }
        .into();
        assert_eq!((e.status, e.code.as_str()), (422, "PoolTooSmall"));
    }

    #[test]
    fn field_only_serialized_when_set() {
        let v = serde_json::to_value(ApiError::bad_credentials()).unwrap();
        assert!(v.get("field").is_none());
        assert!(v.get("status").is_none());
        let v = serde_json::to_value(ApiError::validation("title", "missing")).unwrap();
        assert_eq!(v["field"], "title");
    }
}
