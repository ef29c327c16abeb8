use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const AUTH_SCHEME: &str = "PseudoAKA";

/// Challenge (WWW-Authenticate) or credentials (Authorization) for the
/// keyed-hash AKA stand-in. `response` is present only in credentials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthHeader {
    pub realm: String,
    pub nonce: String,
    pub response: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthHeaderError {
    #[error("scheme is not {AUTH_SCHEME}")]
    Scheme,
    #[error("malformed parameter list")]
    Syntax,
    #[error("missing parameter {0}")]
    Missing(&'static str),
    #[error("nonce must be 32 lowercase hex characters")]
    Nonce,
    #[error("response must be 64 lowercase hex characters")]
    Response,
}

fn is_lower_hex(s: &str, len: usize) -> bool {
    s.len() == len && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

impl AuthHeader {
    pub fn challenge(realm: &str, nonce: &str) -> Self {
        AuthHeader {
            realm: realm.to_owned(),
            nonce: nonce.to_owned(),
            response: None,
        }
    }

    pub fn credentials(realm: &str, nonce: &str, response: &str) -> Self {
        AuthHeader {
            realm: realm.to_owned(),
            nonce: nonce.to_owned(),
            response: Some(response.to_owned()),
        }
    }

    pub fn check(&self) -> Result<(), AuthHeaderError> {
        if !is_lower_hex(&self.nonce, 32) {
            return Err(AuthHeaderError::Nonce);
        }
        match &self.response {
            Some(r) if !is_lower_hex(r, 64) => Err(AuthHeaderError::Response),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for AuthHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{AUTH_SCHEME} realm=\"{}\", nonce=\"{}\"",
            self.realm, self.nonce
        )?;
        if let Some(r) = &self.response {
            write!(f, ", response=\"{r}\"")?;
        }
        Ok(())
    }
}

impl FromStr for AuthHeader {
    type Err = AuthHeaderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s
            .strip_prefix(AUTH_SCHEME)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or(AuthHeaderError::Scheme)?;
        let (mut realm, mut nonce, mut response) = (None, None, None);
        for part in rest.split(',') {
            let (k, v) = part.trim().split_once('=').ok_or(AuthHeaderError::Syntax)?;
            let v = v
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .ok_or(AuthHeaderError::Syntax)?
                .to_owned();
            let slot = match k {
                "realm" => &mut realm,
                "nonce" => &mut nonce,
                "response" => &mut response,
                _ => return Err(AuthHeaderError::Syntax),
            };
            if slot.replace(v).is_some() {
                return Err(AuthHeaderError::Syntax);
            }
        }
        let header = AuthHeader {
            realm: realm.ok_or(AuthHeaderError::Missing("realm"))?,
            nonce: nonce.ok_or(AuthHeaderError::Missing("nonce"))?,
            response,
        };
        header.check()?;
        Ok(header)
    }
}
