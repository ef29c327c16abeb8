use thiserror::Error;

use super::message::{is_token, validate, Header, SipMessage, StartLine, Violation};

/// Single-letter compact header names. Only long forms are accepted.
const COMPACT_FORMS: &[&str] = &["i", "m", "e", "l", "c", "f", "s", "k", "t", "v"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("malformed start line: {0}")]
    MalformedStartLine(&'static str),
    #[error("unsupported method `{0}`")]
    UnsupportedMethod(String),
    #[error("malformed header line: {0}")]
    MalformedHeader(&'static str),
    #[error("missing mandatory header {0}")]
    MissingMandatoryHeader(&'static str),
    #[error("Content-Length {declared} but body has {actual} bytes")]
    BodyLengthMismatch { declared: usize, actual: usize },
    #[error("{0}")]
    InvalidHeader(Violation),
}

/// A parse failure and the 1-based line it was detected on.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
}

fn err<T>(kind: ParseErrorKind, line: usize) -> Result<T, ParseError> {
    Err(ParseError { kind, line })
}

/// Parses one complete message. Lines must end in CRLF; there is no
/// header folding and no compact header names.
pub fn parse_message(raw: &[u8]) -> Result<SipMessage, ParseError> {
    if raw.is_empty() {
        return err(ParseErrorKind::MalformedStartLine("empty input"), 1);
    }
    let (head, body) = match find(raw, b"\r\n\r\n") {
        Some(i) => (&raw[..i + 2], &raw[i + 4..]),
        None => (raw, &[][..]),
    };
    let terminated = head.len() < raw.len();

    let mut lines = Vec::new();
    let mut rest = head;
    while !rest.is_empty() {
        let line_no = lines.len() + 1;
        match find(rest, b"\r\n") {
            Some(i) => {
                lines.push(&rest[..i]);
                rest = &rest[i + 2..];
            }
            None => {
                if line_no == 1 {
                    return err(ParseErrorKind::MalformedStartLine("missing CRLF"), line_no);
                }
                return err(ParseErrorKind::MalformedHeader("missing CRLF"), line_no);
            }
        }
    }
    for (i, line) in lines.iter().enumerate() {
        if line.iter().any(|&b| b == b'\n' || b == b'\r' || b == 0) {
            return if i == 0 {
                err(
                    ParseErrorKind::MalformedStartLine("stray control character"),
                    1,
                )
            } else {
                err(
                    ParseErrorKind::MalformedHeader("stray control character"),
                    i + 1,
                )
            };
        }
    }
    if !terminated {
        return err(
            ParseErrorKind::MalformedHeader("missing blank line"),
            lines.len() + 1,
        );
    }

    let start_text = std::str::from_utf8(lines[0]).map_err(|_| ParseError {
        kind: ParseErrorKind::MalformedStartLine("not UTF-8"),
        line: 1,
    })?;
    let start = parse_start_line(start_text)?;

    let mut headers = Vec::with_capacity(lines.len() - 1);
    for (i, line) in lines.iter().enumerate().skip(1) {
        headers.push(parse_header(line, i + 1)?);
    }

    let msg = SipMessage {
        start,
        headers,
        body: body.to_vec(),
    };
    let blank_line = lines.len() + 1;
    if let Some(v) = validate(&msg).into_iter().next() {
        let line = v
            .header_name()
            .and_then(|n| header_line(&msg, n, &v))
            .unwrap_or(blank_line);
        let kind = match v {
            Violation::MissingMandatoryHeader(n) => {
                return err(ParseErrorKind::MissingMandatoryHeader(n), blank_line)
            }
            Violation::ContentLengthMismatch { declared, actual } => {
                ParseErrorKind::BodyLengthMismatch { declared, actual }
            }
            other => ParseErrorKind::InvalidHeader(other),
        };
        return err(kind, line);
    }
    Ok(msg)
}

fn header_line(msg: &SipMessage, name: &str, v: &Violation) -> Option<usize> {
    let mut positions = msg
        .headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.is(name))
        .map(|(i, _)| i + 2);
    match v {
        Violation::DuplicateHeader(_) => positions.nth(1),
        _ => positions.next(),
    }
}

fn parse_start_line(line: &str) -> Result<StartLine, ParseError> {
    if let Some(rest) = line.strip_prefix("SIP/2.0 ") {
        let (code, reason) = rest.split_once(' ').ok_or(ParseError {
            kind: ParseErrorKind::MalformedStartLine("status line needs a reason phrase"),
            line: 1,
        })?;
        if code.len() != 3 || !code.bytes().all(|b| b.is_ascii_digit()) {
            return err(
                ParseErrorKind::MalformedStartLine("status code must be 3 digits"),
                1,
            );
        }
        let status: u16 = code.parse().expect("three ascii digits");
        if !(100..=699).contains(&status) {
            return err(
                ParseErrorKind::MalformedStartLine("status code out of range"),
                1,
            );
        }
        return Ok(StartLine::Response {
            status,
            reason: reason.to_owned(),
        });
    }
    let mut parts = line.split(' ');
    let (Some(method), Some(uri), Some(version), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return err(
            ParseErrorKind::MalformedStartLine("expected `METHOD URI SIP/2.0`"),
            1,
        );
    };
    if version != "SIP/2.0" {
        return err(
            ParseErrorKind::MalformedStartLine("unsupported SIP version"),
            1,
        );
    }
    if !is_token(method) {
        return err(
            ParseErrorKind::MalformedStartLine("method is not a token"),
            1,
        );
    }
    let method = method.parse().map_err(|_| ParseError {
        kind: ParseErrorKind::UnsupportedMethod(method.to_owned()),
        line: 1,
    })?;
    let uri = uri.parse().map_err(|_| ParseError {
        kind: ParseErrorKind::MalformedStartLine("invalid request URI"),
        line: 1,
    })?;
    Ok(StartLine::Request { method, uri })
}

fn parse_header(line: &[u8], line_no: usize) -> Result<Header, ParseError> {
    let bad = |why| ParseError {
        kind: ParseErrorKind::MalformedHeader(why),
        line: line_no,
    };
    let text = std::str::from_utf8(line).map_err(|_| bad("not UTF-8"))?;
    if text.starts_with([' ', '\t']) {
        return Err(bad("folded continuation line"));
    }
    let (name, value) = text.split_once(':').ok_or_else(|| bad("missing colon"))?;
    let name = name.trim_end_matches([' ', '\t']);
    if !is_token(name) {
        return Err(bad("invalid header name"));
    }
    if COMPACT_FORMS.iter().any(|c| c.eq_ignore_ascii_case(name)) {
        return Err(bad("compact header form"));
    }
    Ok(Header::new(name, value.trim_matches([' ', '\t'])))
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sip::serialize_message;

    const REGISTER: &str = "REGISTER sip:open-ims.test SIP/2.0\r\n\
        Via: SIP/2.0/SIM ue-alice;branch=z9hG4bK1\r\n\
        From: <sip:alice@open-ims.test>\r\n\
        To: <sip:alice@open-ims.test>\r\n\
        Call-ID: abc\r\n\
        CSeq: 1 REGISTER\r\n\
        Content-Length: 0\r\n\r\n";

    #[test]
    fn empty_input_is_malformed_start_line() {
        let e = parse_message(b"").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::MalformedStartLine(_)));
        assert_eq!(e.line, 1);
    }

    #[test]
    fn parses_register() {
        let m = parse_message(REGISTER.as_bytes()).unwrap();
        assert_eq!(m.call_id(), Some("abc"));
        assert_eq!(serialize_message(&m).unwrap(), REGISTER.as_bytes());
    }

    #[test]
    fn canonicalises_header_whitespace() {
        let raw = REGISTER.replace("Call-ID: abc", "Call-ID :   abc  ");
        let m = parse_message(raw.as_bytes()).unwrap();
        assert_eq!(serialize_message(&m).unwrap(), REGISTER.as_bytes());
    }

    #[test]
    fn body_length_mismatch_points_at_content_length() {
        let raw = REGISTER.replace("Content-Length: 0\r\n\r\n", "Content-Length: 4\r\n\r\nhi");
        let e = parse_message(raw.as_bytes()).unwrap_err();
        assert_eq!(
            e.kind,
            ParseErrorKind::BodyLengthMismatch {
                declared: 4,
                actual: 2
            }
        );
        assert_eq!(e.line, 7);
    }

    #[test]
    fn bare_lf_is_rejected() {
        let raw = REGISTER.replace("Call-ID: abc\r\n", "Call-ID: abc\n");
        let e = parse_message(raw.as_bytes()).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::MalformedHeader(_)));
        assert_eq!(e.line, 5);
    }

    #[test]
    fn unknown_method() {
        let raw = REGISTER.replacen("REGISTER sip", "OPTIONS sip", 1);
        let e = parse_message(raw.as_bytes()).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnsupportedMethod("OPTIONS".into()));
    }

    #[test]
    fn missing_header_reports_blank_line() {
        let raw = REGISTER.replace("Call-ID: abc\r\n", "");
        let e = parse_message(raw.as_bytes()).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::MissingMandatoryHeader("Call-ID"));
        assert_eq!(e.line, 7);
    }

    #[test]
    fn compact_and_folded_headers_rejected() {
        let compact = REGISTER.replace("Call-ID: abc", "i: abc");
        assert!(matches!(
            parse_message(compact.as_bytes()).unwrap_err().kind,
            ParseErrorKind::MalformedHeader("compact header form")
        ));
        let folded = REGISTER.replace("Call-ID: abc\r\n", "Call-ID: abc\r\n  def\r\n");
        assert!(matches!(
            parse_message(folded.as_bytes()).unwrap_err().kind,
            ParseErrorKind::MalformedHeader("folded continuation line")
        ));
    }
}
