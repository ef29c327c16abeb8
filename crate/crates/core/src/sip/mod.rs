//! SIP message codec for the testbed's method subset
//! (REGISTER, INVITE, ACK, MESSAGE, BYE).
//!
//! The canonical wire form is strict: CRLF line endings, `Name: value`
//! headers in stored order, no folding and no compact header names.

mod auth;
mod message;
mod parse;
mod uri;

use thiserror::Error;

pub use auth::{AuthHeader, AuthHeaderError, AUTH_SCHEME};
pub use message::{
    make_response, validate, CSeq, Header, MessageBuilder, Method, NotARequest, SipMessage,
    StartLine, UnsupportedMethod, Violation, MANDATORY_HEADERS,
};
pub use parse::{parse_message, ParseError, ParseErrorKind};
pub use uri::{extract_uri, SipUri, UriError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("message violates invariants: {0:?}")]
pub struct InvariantViolation(pub Vec<Violation>);

/// Serializes a valid message to its canonical bytes.
pub fn serialize_message(msg: &SipMessage) -> Result<Vec<u8>, InvariantViolation> {
    let violations = validate(msg);
    if !violations.is_empty() {
        return Err(InvariantViolation(violations));
    }
    Ok(msg.encode_unchecked())
}

/// One entry of a Via stack: `SIP/2.0/SIM <node>;branch=<id>`.
///
/// The testbed has no real transport, so the sent-by field carries the
/// simulator node address directly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Via {
    pub node: String,
    pub branch: String,
}

pub const VIA_PROTOCOL: &str = "SIP/2.0/SIM";
pub const BRANCH_COOKIE: &str = "z9hG4bK";

impl Via {
    pub fn new(node: &str, branch: &str) -> Self {
        Via {
            node: node.to_owned(),
            branch: branch.to_owned(),
        }
    }

    pub fn parse(value: &str) -> Option<Via> {
        let rest = value.strip_prefix(VIA_PROTOCOL)?.strip_prefix(' ')?;
        let mut parts = rest.split(';');
        let node = parts.next()?.trim();
        if node.is_empty() {
            return None;
        }
        let branch = parts.find_map(|p| p.trim().strip_prefix("branch="))?;
        Some(Via::new(node, branch))
    }
}

impl std::fmt::Display for Via {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{VIA_PROTOCOL} {};branch={}", self.node, self.branch)
    }
}

impl SipMessage {
    pub fn top_via(&self) -> Option<Via> {
        Via::parse(self.header("Via")?)
    }

    pub fn from_uri(&self) -> Option<SipUri> {
        extract_uri(self.header("From")?).ok()
    }

    pub fn to_uri(&self) -> Option<SipUri> {
        extract_uri(self.header("To")?).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ok_response_ends_with_blank_line() {
        let m = SipMessage::response(200, "OK")
            .header("Via", "SIP/2.0/SIM ue-a;branch=z9hG4bK1")
            .header("From", "<sip:a@h>")
            .header("To", "<sip:a@h>")
            .header("Call-ID", "c1")
            .header("CSeq", "1 REGISTER")
            .build();
        let bytes = serialize_message(&m).unwrap();
        assert!(bytes.starts_with(b"SIP/2.0 200 OK\r\n"));
        assert!(bytes.ends_with(b"\r\n\r\n"));
    }

    #[test]
    fn serialize_refuses_invalid_message() {
        let m = SipMessage::response(200, "OK").build();
        let err = serialize_message(&m).unwrap_err();
        assert!(err.0.contains(&Violation::MissingMandatoryHeader("Via")));
    }

    #[test]
    fn via_round_trip() {
        let v = Via::new("pcscf", "z9hG4bKdeadbeef");
        assert_eq!(Via::parse(&v.to_string()), Some(v));
        assert_eq!(Via::parse("SIP/2.0/UDP host"), None);
    }
}
