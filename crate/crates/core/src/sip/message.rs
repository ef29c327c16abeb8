use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::uri::SipUri;

/// Headers every request and response must carry.
pub const MANDATORY_HEADERS: [&str; 5] = ["Via", "From", "To", "Call-ID", "CSeq"];

/// Headers that may appear at most once.
const SINGLETON_HEADERS: [&str; 5] = ["From", "To", "Call-ID", "CSeq", "Content-Length"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Register,
    Invite,
    Ack,
    Message,
    Bye,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Register,
        Method::Invite,
        Method::Ack,
        Method::Message,
        Method::Bye,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Register => "REGISTER",
            Method::Invite => "INVITE",
            Method::Ack => "ACK",
            Method::Message => "MESSAGE",
            Method::Bye => "BYE",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unsupported method `{0}`")]
pub struct UnsupportedMethod(pub String);

impl FromStr for Method {
    type Err = UnsupportedMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnsupportedMethod(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StartLine {
    Request { method: Method, uri: SipUri },
    Response { status: u16, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub name: String,
    pub value: String,
}

impl Header {
    pub fn new(name: impl Into<String>, value: impl Into<String>) -> Self {
        Header {
            name: name.into(),
            value: value.into(),
        }
    }

    pub fn is(&self, name: &str) -> bool {
        self.name.eq_ignore_ascii_case(name)
    }
}

/// A SIP request or response. Headers keep their wire order and duplicates.
/// An empty `body` means the message has no body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SipMessage {
    pub start: StartLine,
    pub headers: Vec<Header>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CSeq {
    pub seq: u32,
    pub method: Method,
}

impl fmt::Display for CSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.seq, self.method)
    }
}

impl FromStr for CSeq {
    type Err = Violation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || Violation::MalformedCSeq(s.to_owned());
        let (num, method) = s.split_once(' ').ok_or_else(malformed)?;
        if num.is_empty() || !num.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed());
        }
        let seq = num.parse().map_err(|_| malformed())?;
        let method = method.parse().map_err(|_| malformed())?;
        Ok(CSeq { seq, method })
    }
}

/// A broken message rule. Produced by [`validate`]; never panics.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("missing mandatory header {0}")]
    MissingMandatoryHeader(&'static str),
    #[error("header {0} appears more than once")]
    DuplicateHeader(&'static str),
    #[error("malformed CSeq `{0}`")]
    MalformedCSeq(String),
    #[error("CSeq method {found} does not match request method {expected}")]
    CSeqMethodMismatch { expected: Method, found: Method },
    #[error("malformed Content-Length `{0}`")]
    MalformedContentLength(String),
    #[error("Content-Length {declared} does not match body length {actual}")]
    ContentLengthMismatch { declared: usize, actual: usize },
    #[error("status code {0} outside 100-699")]
    StatusOutOfRange(u16),
    #[error("reason phrase contains control characters")]
    InvalidReason,
    #[error("invalid header name `{0}`")]
    InvalidHeaderName(String),
    #[error("invalid value for header {0}")]
    InvalidHeaderValue(String),
}

impl Violation {
    /// The header the violation is about, when there is one.
    pub fn header_name(&self) -> Option<&str> {
        match self {
            Violation::MissingMandatoryHeader(n) | Violation::DuplicateHeader(n) => Some(n),
            Violation::MalformedCSeq(_) | Violation::CSeqMethodMismatch { .. } => Some("CSeq"),
            Violation::MalformedContentLength(_) | Violation::ContentLengthMismatch { .. } => {
                Some("Content-Length")
            }
            Violation::InvalidHeaderName(n) | Violation::InvalidHeaderValue(n) => Some(n),
            Violation::StatusOutOfRange(_) | Violation::InvalidReason => None,
        }
    }
}

pub(crate) fn is_token_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || "-.!%*_+`'~".contains(c)
}

pub(crate) fn is_token(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_token_char)
}

fn is_clean_text(s: &str) -> bool {
    !s.chars().any(|c| c == '\r' || c == '\n' || c == '\0')
}

fn is_clean_value(s: &str) -> bool {
    is_clean_text(s) && s.trim_matches([' ', '\t']) == s
}

/// Checks every message invariant and returns the broken ones.
/// An empty list means the message is valid.
pub fn validate(msg: &SipMessage) -> Vec<Violation> {
    let mut out = Vec::new();
    match &msg.start {
        StartLine::Response { status, reason } => {
            if !(100..=699).contains(status) {
                out.push(Violation::StatusOutOfRange(*status));
            }
            if !is_clean_text(reason) {
                out.push(Violation::InvalidReason);
            }
        }
        StartLine::Request { .. } => {}
    }
    for h in &msg.headers {
        if !is_token(&h.name) {
            out.push(Violation::InvalidHeaderName(h.name.clone()));
        } else if !is_clean_value(&h.value) {
            out.push(Violation::InvalidHeaderValue(h.name.clone()));
        }
    }
    for name in MANDATORY_HEADERS {
        if msg.header(name).is_none() {
            out.push(Violation::MissingMandatoryHeader(name));
        }
    }
    for name in SINGLETON_HEADERS {
        if msg.headers.iter().filter(|h| h.is(name)).count() > 1 {
            out.push(Violation::DuplicateHeader(name));
        }
    }
    if let Some(raw) = msg.header("CSeq") {
        match raw.parse::<CSeq>() {
            Ok(cseq) => {
                if let StartLine::Request { method, .. } = &msg.start {
                    if cseq.method != *method {
                        out.push(Violation::CSeqMethodMismatch {
                            expected: *method,
                            found: cseq.method,
                        });
                    }
                }
            }
            Err(v) => out.push(v),
        }
    }
    match msg.header("Content-Length") {
        Some(raw) => match parse_content_length(raw) {
            Some(declared) if declared == msg.body.len() => {}
            Some(declared) => out.push(Violation::ContentLengthMismatch {
                declared,
                actual: msg.body.len(),
            }),
            None => out.push(Violation::MalformedContentLength(raw.to_owned())),
        },
        None if !msg.body.is_empty() => out.push(Violation::ContentLengthMismatch {
            declared: 0,
            actual: msg.body.len(),
        }),
        None => {}
    }
    out
}

pub(crate) fn parse_content_length(raw: &str) -> Option<usize> {
    if raw.is_empty() || raw.len() > 9 || !raw.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    raw.parse().ok()
}

impl SipMessage {
    pub fn request(method: Method, uri: SipUri) -> MessageBuilder {
        MessageBuilder::new(StartLine::Request { method, uri })
    }

    pub fn response(status: u16, reason: &str) -> MessageBuilder {
        MessageBuilder::new(StartLine::Response {
            status,
            reason: reason.to_owned(),
        })
    }

    pub fn is_request(&self) -> bool {
        matches!(self.start, StartLine::Request { .. })
    }

    pub fn method(&self) -> Option<Method> {
        match &self.start {
            StartLine::Request { method, .. } => Some(*method),
            StartLine::Response { .. } => None,
        }
    }

    pub fn request_uri(&self) -> Option<&SipUri> {
        match &self.start {
            StartLine::Request { uri, .. } => Some(uri),
            StartLine::Response { .. } => None,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match &self.start {
            StartLine::Response { status, .. } => Some(*status),
            StartLine::Request { .. } => None,
        }
    }

    /// First value of the named header (case-insensitive).
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|h| h.is(name))
            .map(|h| h.value.as_str())
    }

    pub fn header_values<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.headers
            .iter()
            .filter(move |h| h.is(name))
            .map(|h| h.value.as_str())
    }

    /// Replaces the first header of that name, or appends one.
    pub fn set_header(&mut self, name: &str, value: impl Into<String>) {
        let value = value.into();
        match self.headers.iter_mut().find(|h| h.is(name)) {
            Some(h) => h.value = value,
            None => self.headers.push(Header::new(name, value)),
        }
    }

    pub fn remove_headers(&mut self, name: &str) {
        self.headers.retain(|h| !h.is(name));
    }

    /// Inserts a header in front of the first header with the same name,
    /// or at the top when there is none. Used for Via stacking.
    pub fn push_header_front(&mut self, name: &str, value: impl Into<String>) {
        let at = self.headers.iter().position(|h| h.is(name)).unwrap_or(0);
        self.headers.insert(at, Header::new(name, value));
    }

    /// Removes and returns the first header with that name.
    pub fn pop_header(&mut self, name: &str) -> Option<String> {
        let at = self.headers.iter().position(|h| h.is(name))?;
        Some(self.headers.remove(at).value)
    }

    pub fn call_id(&self) -> Option<&str> {
        self.header("Call-ID")
    }

    pub fn cseq(&self) -> Option<CSeq> {
        self.header("CSeq")?.parse().ok()
    }

    /// Replaces the body and keeps Content-Length in step with it.
    pub fn set_body(&mut self, body: Vec<u8>) {
        self.body = body;
        let len = self.body.len();
        self.set_header("Content-Length", len.to_string());
    }

    /// Bytes of the message exactly as stored, without any invariant check.
    pub fn encode_unchecked(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(128 + self.body.len());
        match &self.start {
            StartLine::Request { method, uri } => {
                out.extend_from_slice(format!("{method} {uri} SIP/2.0\r\n").as_bytes());
            }
            StartLine::Response { status, reason } => {
                out.extend_from_slice(format!("SIP/2.0 {status} {reason}\r\n").as_bytes());
            }
        }
        for h in &self.headers {
            out.extend_from_slice(h.name.as_bytes());
            out.extend_from_slice(b": ");
            out.extend_from_slice(h.value.as_bytes());
            out.extend_from_slice(b"\r\n");
        }
        out.extend_from_slice(b"\r\n");
        out.extend_from_slice(&self.body);
        out
    }
}

/// Builds messages that satisfy the Content-Length invariant by construction.
#[derive(Debug, Clone)]
pub struct MessageBuilder {
    msg: SipMessage,
}

impl MessageBuilder {
    fn new(start: StartLine) -> Self {
        MessageBuilder {
            msg: SipMessage {
                start,
                headers: Vec::new(),
                body: Vec::new(),
            },
        }
    }

    pub fn header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.msg.headers.push(Header::new(name, value));
        self
    }

    pub fn body(mut self, content_type: &str, body: impl Into<Vec<u8>>) -> Self {
        self.msg.set_header("Content-Type", content_type);
        self.msg.body = body.into();
        self
    }

    pub fn build(mut self) -> SipMessage {
        let len = self.msg.body.len();
        self.msg.set_header("Content-Length", len.to_string());
        self.msg
    }
}

/// Raised by [`make_response`] when given a response.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot build a response to a response")]
pub struct NotARequest;

/// Builds a response to `req`, copying Via, From, To, Call-ID and CSeq.
pub fn make_response(
    req: &SipMessage,
    status: u16,
    reason: &str,
) -> Result<SipMessage, NotARequest> {
    if !req.is_request() {
        return Err(NotARequest);
    }
    let mut b = SipMessage::response(status, reason);
    for h in &req.headers {
        if MANDATORY_HEADERS.iter().any(|n| h.is(n)) {
            b = b.header(&h.name, h.value.clone());
        }
    }
    Ok(b.build())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn register() -> SipMessage {
        SipMessage::request(Method::Register, "sip:open-ims.test".parse().unwrap())
            .header("Via", "SIP/2.0/SIM ue-alice;branch=z9hG4bK1")
            .header("From", "<sip:alice@open-ims.test>")
            .header("To", "<sip:alice@open-ims.test>")
            .header("Call-ID", "reg-1@ue-alice")
            .header("CSeq", "1 REGISTER")
            .build()
    }

    #[test]
    fn valid_register_has_no_violations() {
        assert_eq!(validate(&register()), vec![]);
    }

    #[test]
    fn missing_call_id_is_reported() {
        let mut m = register();
        m.remove_headers("Call-ID");
        assert_eq!(
            validate(&m),
            vec![Violation::MissingMandatoryHeader("Call-ID")]
        );
    }

    #[test]
    fn cseq_method_must_match_request() {
        let mut m = register();
        m.set_header("CSeq", "1 INVITE");
        assert_eq!(
            validate(&m),
            vec![Violation::CSeqMethodMismatch {
                expected: Method::Register,
                found: Method::Invite
            }]
        );
    }

    #[test]
    fn content_length_tracks_body() {
        let mut m = register();
        m.set_body(b"hi".to_vec());
        assert_eq!(m.header("Content-Length"), Some("2"));
        assert!(validate(&m).is_empty());
        m.set_header("Content-Length", "4");
        assert_eq!(
            validate(&m),
            vec![Violation::ContentLengthMismatch {
                declared: 4,
                actual: 2
            }]
        );
        m.remove_headers("Content-Length");
        assert_eq!(
            validate(&m),
            vec![Violation::ContentLengthMismatch {
                declared: 0,
                actual: 2
            }]
        );
    }

    #[test]
    fn response_copies_dialog_headers() {
        let req = register();
        let resp = make_response(&req, 401, "Unauthorized").unwrap();
        assert_eq!(resp.call_id(), req.call_id());
        assert_eq!(resp.header("CSeq"), req.header("CSeq"));
        assert_eq!(resp.status(), Some(401));
        assert!(resp.body.is_empty());
        assert!(validate(&resp).is_empty());
        assert_eq!(make_response(&resp, 200, "OK"), Err(NotARequest));
    }

    #[test]
    fn invite_response_carries_invite_cseq() {
        let mut req = register();
        req.start = StartLine::Request {
            method: Method::Invite,
            uri: "sip:exam@open-ims.test".parse().unwrap(),
        };
        req.set_header("CSeq", "7 INVITE");
        let resp = make_response(&req, 200, "OK").unwrap();
        assert_eq!(resp.cseq().unwrap().method, Method::Invite);
    }

    #[test]
    fn via_stacking_keeps_order() {
        let mut m = register();
        m.push_header_front("Via", "SIP/2.0/SIM pcscf;branch=z9hG4bK2");
        let vias: Vec<_> = m.header_values("Via").collect();
        assert_eq!(vias[0], "SIP/2.0/SIM pcscf;branch=z9hG4bK2");
        assert_eq!(
            m.pop_header("Via").unwrap(),
            "SIP/2.0/SIM pcscf;branch=z9hG4bK2"
        );
        assert_eq!(
            m.header("Via"),
            Some("SIP/2.0/SIM ue-alice;branch=z9hG4bK1")
        );
    }

    #[test]
    fn header_values_must_be_single_line() {
        let mut m = register();
        m.set_header("Subject", "a\r\nb");
        assert_eq!(
            validate(&m),
            vec![Violation::InvalidHeaderValue("Subject".into())]
        );
    }
}
