use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UriError {
    #[error("uri must start with `sip:`")]
    Scheme,
    #[error("empty host")]
    EmptyHost,
    #[error("invalid character in {0}")]
    InvalidChar(&'static str),
    #[error("invalid port `{0}`")]
    Port(String),
    #[error("empty user part")]
    EmptyUser,
    #[error("empty parameter name")]
    EmptyParam,
}

/// A `sip:` URI: `sip:[user@]host[:port][;name[=value]]*`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SipUri {
    pub user: Option<String>,
    pub host: String,
    pub port: Option<u16>,
    pub params: Vec<(String, Option<String>)>,
}

pub(crate) fn is_user_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || "-_.!~*'()%+&=$,".contains(c)
}

pub(crate) fn is_param_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || "-_.!~*'()%+".contains(c)
}

pub(crate) fn is_host_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '-' || c == '.'
}

impl SipUri {
    pub fn new(user: Option<&str>, host: &str) -> Self {
        SipUri {
            user: user.map(str::to_owned),
            host: host.to_owned(),
            port: None,
            params: Vec::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: Option<&str>) -> Self {
        self.params.push((key.to_owned(), value.map(str::to_owned)));
        self
    }

    /// Value of the first parameter named `key` (case-insensitive).
    /// `Some(None)` means the parameter is present without a value.
    pub fn param(&self, key: &str) -> Option<Option<&str>> {
        self.params
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .map(|(_, v)| v.as_deref())
    }

    /// Address-of-record form: user and host only.
    pub fn aor(&self) -> SipUri {
        SipUri {
            user: self.user.clone(),
            host: self.host.to_ascii_lowercase(),
            port: None,
            params: Vec::new(),
        }
    }

    pub fn same_aor(&self, other: &SipUri) -> bool {
        self.aor() == other.aor()
    }
}

impl fmt::Display for SipUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("sip:")?;
        if let Some(user) = &self.user {
            write!(f, "{user}@")?;
        }
        f.write_str(&self.host)?;
        if let Some(port) = self.port {
            write!(f, ":{port}")?;
        }
        for (k, v) in &self.params {
            match v {
                Some(v) => write!(f, ";{k}={v}")?,
                None => write!(f, ";{k}")?,
            }
        }
        Ok(())
    }
}

impl FromStr for SipUri {
    type Err = UriError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s.strip_prefix("sip:").ok_or(UriError::Scheme)?;
        let (main, params) = match rest.find(';') {
            Some(i) => (&rest[..i], Some(&rest[i + 1..])),
            None => (rest, None),
        };
        let (user, hostport) = match main.rfind('@') {
            Some(i) => (Some(&main[..i]), &main[i + 1..]),
            None => (None, main),
        };
        if let Some(user) = user {
            if user.is_empty() {
                return Err(UriError::EmptyUser);
            }
            if !user.chars().all(is_user_char) {
                return Err(UriError::InvalidChar("user"));
            }
        }
        let (host, port) = match hostport.find(':') {
            Some(i) => {
                let p = &hostport[i + 1..];
                let port: u16 = p
                    .parse()
                    .ok()
                    .filter(|&p| p != 0)
                    .ok_or_else(|| UriError::Port(p.to_owned()))?;
                if p.starts_with('+') || (p.len() > 1 && p.starts_with('0')) {
                    return Err(UriError::Port(p.to_owned()));
                }
                (&hostport[..i], Some(port))
            }
            None => (hostport, None),
        };
        if host.is_empty() {
            return Err(UriError::EmptyHost);
        }
        if !host.chars().all(is_host_char) {
            return Err(UriError::InvalidChar("host"));
        }
        let mut out = Vec::new();
        if let Some(params) = params {
            for p in params.split(';') {
                let (k, v) = match p.find('=') {
                    Some(i) => (&p[..i], Some(&p[i + 1..])),
                    None => (p, None),
                };
                if k.is_empty() {
                    return Err(UriError::EmptyParam);
                }
                if !k.chars().all(is_param_char) {
                    return Err(UriError::InvalidChar("parameter"));
                }
                if let Some(v) = v {
                    if v.is_empty() || !v.chars().all(is_param_char) {
                        return Err(UriError::InvalidChar("parameter value"));
                    }
                }
                out.push((k.to_owned(), v.map(str::to_owned)));
            }
        }
        Ok(SipUri {
            user: user.map(str::to_owned),
            host: host.to_owned(),
            port,
            params: out,
        })
    }
}

impl Serialize for SipUri {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SipUri {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Pulls the URI out of a name-addr style header value
/// (`"Alice" <sip:alice@host>;tag=1` or a bare `sip:alice@host`).
pub fn extract_uri(value: &str) -> Result<SipUri, UriError> {
    if let Some(start) = value.find('<') {
        let end = value[start..].find('>').ok_or(UriError::Scheme)? + start;
        value[start + 1..end].parse()
    } else {
        let bare = value.split(';').next().unwrap_or(value).trim();
        bare.parse()
    }
}
