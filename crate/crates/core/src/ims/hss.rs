use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::netsim::{NodeAddress, SplitMix64};
use crate::sip::{Method, SipMessage, SipUri};

/// 32-byte key shared between a subscriber's UE and the HSS.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey([u8; 32]);

impl SecretKey {
    pub fn new(bytes: [u8; 32]) -> Self {
        SecretKey(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self, HssError> {
        let bytes = hex::decode(s).map_err(|_| HssError::InvalidProfile("key is not hex"))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| HssError::InvalidProfile("key must be exactly 32 bytes"))?;
        Ok(SecretKey(arr))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// A key drawn from a seeded generator.
    pub fn random(rng: &mut SplitMix64) -> Self {
        let mut b = [0u8; 32];
        rng.fill_bytes(&mut b);
        SecretKey(b)
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

impl Serialize for SecretKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for SecretKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        SecretKey::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Pseudo-AKA response: lowercase hex of SHA-256(key ‖ ":" ‖ nonce-hex).
pub fn aka_response(key: &SecretKey, nonce_hex: &str) -> String {
    let mut h = Sha256::new();
    h.update(key.as_bytes());
    h.update(b":");
    h.update(nonce_hex.as_bytes());
    hex::encode(h.finalize())
}

/// Matches a request against a service trigger. Empty `methods` and absent
/// URI parts match anything.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TriggerRule {
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub uri_user: Option<String>,
    #[serde(default)]
    pub uri_host: Option<String>,
}

impl TriggerRule {
    pub fn matches(&self, msg: &SipMessage) -> bool {
        let (Some(method), Some(uri)) = (msg.method(), msg.request_uri()) else {
            return false;
        };
        (self.methods.is_empty() || self.methods.contains(&method))
            && self
                .uri_user
                .as_ref()
                .is_none_or(|u| uri.user.as_deref() == Some(u.as_str()))
            && self
                .uri_host
                .as_ref()
                .is_none_or(|h| uri.host.eq_ignore_ascii_case(h))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceTrigger {
    #[serde(flatten)]
    pub rule: TriggerRule,
    pub target: NodeAddress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscriberProfile {
    pub impi: String,
    pub impus: Vec<SipUri>,
    #[serde(rename = "key")]
    pub secret_key: SecretKey,
    #[serde(default, rename = "trigger")]
    pub service_triggers: Vec<ServiceTrigger>,
    #[serde(default)]
    pub barred: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthChallenge {
    pub nonce: String,
    pub issued_at: u64,
    pub consumed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HssError {
    #[error("unknown subscriber {0}")]
    UnknownSubscriber(String),
    #[error("unknown or already used nonce")]
    UnknownNonce,
    #[error("private identity {0} already provisioned")]
    DuplicateImpi(String),
    #[error("public identity {0} already provisioned")]
    DuplicateImpu(SipUri),
    #[error("invalid profile: {0}")]
    InvalidProfile(&'static str),
}

/// Home Subscriber Server: profiles, public-identity index and the
/// outstanding authentication challenges.
#[derive(Debug, Default)]
pub struct Hss {
    profiles: BTreeMap<String, SubscriberProfile>,
    impu_index: BTreeMap<SipUri, String>,
    challenges: BTreeMap<String, Vec<AuthChallenge>>,
}

impl Hss {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn provision(&mut self, profile: SubscriberProfile) -> Result<(), HssError> {
        if profile.impus.is_empty() {
            return Err(HssError::InvalidProfile(
                "at least one public identity required",
            ));
        }
        if self.profiles.contains_key(&profile.impi) {
            return Err(HssError::DuplicateImpi(profile.impi));
        }
        for impu in &profile.impus {
            if self.impu_index.contains_key(&impu.aor()) {
                return Err(HssError::DuplicateImpu(impu.clone()));
            }
        }
        for impu in &profile.impus {
            self.impu_index.insert(impu.aor(), profile.impi.clone());
        }
        self.profiles.insert(profile.impi.clone(), profile);
        Ok(())
    }

    pub fn lookup(&self, impi: &str) -> Result<&SubscriberProfile, HssError> {
        self.profiles
            .get(impi)
            .ok_or_else(|| HssError::UnknownSubscriber(impi.to_owned()))
    }

    pub fn impi_for(&self, impu: &SipUri) -> Result<&str, HssError> {
        self.impu_index
            .get(&impu.aor())
            .map(String::as_str)
            .ok_or_else(|| HssError::UnknownSubscriber(impu.to_string()))
    }

    pub fn lookup_by_impu(&self, impu: &SipUri) -> Result<&SubscriberProfile, HssError> {
        let impi = self.impi_for(impu)?;
        self.lookup(impi)
    }

    pub fn contains_impu(&self, impu: &SipUri) -> bool {
        self.impu_index.contains_key(&impu.aor())
    }

    pub fn set_barred(&mut self, impi: &str, barred: bool) -> Result<(), HssError> {
        self.profiles
            .get_mut(impi)
            .map(|p| p.barred = barred)
            .ok_or_else(|| HssError::UnknownSubscriber(impi.to_owned()))
    }

    pub fn profiles(&self) -> impl Iterator<Item = &SubscriberProfile> {
        self.profiles.values()
    }

    /// Issues a fresh 16-byte nonce (hex-encoded) for `impi`.
    pub fn generate_challenge(
        &mut self,
        impi: &str,
        now: u64,
        rng: &mut SplitMix64,
    ) -> Result<AuthChallenge, HssError> {
        self.lookup(impi)?;
        let mut nonce = [0u8; 16];
        rng.fill_bytes(&mut nonce);
        let challenge = AuthChallenge {
            nonce: hex::encode(nonce),
            issued_at: now,
            consumed: false,
        };
        self.challenges
            .entry(impi.to_owned())
            .or_default()
            .push(challenge.clone());
        Ok(challenge)
    }

    /// Checks a response against an outstanding challenge. The challenge is
    /// consumed whatever the outcome.
    pub fn verify(&mut self, impi: &str, nonce: &str, response: &str) -> Result<bool, HssError> {
        let key = self.lookup(impi)?.secret_key.clone();
        let challenge = self
            .challenges
            .get_mut(impi)
            .and_then(|list| list.iter_mut().find(|c| c.nonce == nonce && !c.consumed))
            .ok_or(HssError::UnknownNonce)?;
        challenge.consumed = true;
        Ok(aka_response(&key, nonce) == response)
    }

    pub fn challenges_for(&self, impi: &str) -> &[AuthChallenge] {
        self.challenges.get(impi).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// The I-CSCF's S-CSCF selection. The testbed runs one S-CSCF, so every
/// provisioned identity is assigned to it.
pub fn icscf_assign(
    hss: &Hss,
    impu: &SipUri,
    scscf: &NodeAddress,
) -> Result<NodeAddress, HssError> {
    hss.impi_for(impu)?;
    Ok(scscf.clone())
}

#[derive(Debug, Deserialize)]
struct SubscriberFile {
    #[serde(default, rename = "subscriber")]
    subscribers: Vec<SubscriberProfile>,
}

/// Parses a subscriber provisioning file (TOML, `[[subscriber]]` tables).
pub fn parse_subscribers(text: &str) -> Result<Vec<SubscriberProfile>, toml::de::Error> {
    let file: SubscriberFile = toml::from_str(text)?;
    Ok(file.subscribers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::addr;

    pub(crate) fn alice() -> SubscriberProfile {
        SubscriberProfile {
            impi: "alice@open-ims.test".into(),
            impus: vec!["sip:alice@open-ims.test".parse().unwrap()],
            secret_key: SecretKey::new([7; 32]),
            service_triggers: vec![],
            barred: false,
        }
    }

    #[test]
    fn lookup_known_and_unknown() {
        let mut hss = Hss::new();
        hss.provision(alice()).unwrap();
        assert_eq!(
            hss.lookup("alice@open-ims.test").unwrap().impi,
            "alice@open-ims.test"
        );
        assert_eq!(
            hss.lookup("eve@open-ims.test"),
            Err(HssError::UnknownSubscriber("eve@open-ims.test".into()))
        );
    }

    #[test]
    fn barred_profile_still_returned() {
        let mut hss = Hss::new();
        hss.provision(SubscriberProfile {
            barred: true,
            ..alice()
        })
        .unwrap();
        assert!(hss.lookup("alice@open-ims.test").unwrap().barred);
    }

    #[test]
    fn duplicate_identities_rejected() {
        let mut hss = Hss::new();
        hss.provision(alice()).unwrap();
        assert!(matches!(
            hss.provision(alice()),
            Err(HssError::DuplicateImpi(_))
        ));
        let other = SubscriberProfile {
            impi: "other".into(),
            ..alice()
        };
        assert!(matches!(
            hss.provision(other),
            Err(HssError::DuplicateImpu(_))
        ));
    }

    #[test]
    fn challenges_are_fresh_and_single_use() {
        let mut hss = Hss::new();
        hss.provision(alice()).unwrap();
        let mut rng = SplitMix64::new(3);
        let a = hss
            .generate_challenge("alice@open-ims.test", 0, &mut rng)
            .unwrap();
        let b = hss
            .generate_challenge("alice@open-ims.test", 0, &mut rng)
            .unwrap();
        assert_ne!(a.nonce, b.nonce);
        assert_eq!(a.nonce.len(), 32);

        let good = aka_response(&SecretKey::new([7; 32]), &a.nonce);
        assert_eq!(hss.verify("alice@open-ims.test", &a.nonce, &good), Ok(true));
        assert_eq!(
            hss.verify("alice@open-ims.test", &a.nonce, &good),
            Err(HssError::UnknownNonce)
        );

        let bad = aka_response(&SecretKey::new([8; 32]), &b.nonce);
        assert_eq!(hss.verify("alice@open-ims.test", &b.nonce, &bad), Ok(false));
        assert!(hss
            .challenges_for("alice@open-ims.test")
            .iter()
            .all(|c| c.consumed));
    }

    #[test]
    fn unknown_subscriber_gets_no_challenge() {
        let mut hss = Hss::new();
        let mut rng = SplitMix64::new(0);
        assert!(matches!(
            hss.generate_challenge("nobody", 0, &mut rng),
            Err(HssError::UnknownSubscriber(_))
        ));
    }

    #[test]
    fn icscf_assignment_is_stable() {
        let mut hss = Hss::new();
        hss.provision(alice()).unwrap();
        let impu: SipUri = "sip:alice@open-ims.test".parse().unwrap();
        let s = addr("scscf");
        assert_eq!(icscf_assign(&hss, &impu, &s), Ok(s.clone()));
        assert_eq!(icscf_assign(&hss, &impu, &s), Ok(s.clone()));
        let unknown: SipUri = "sip:eve@open-ims.test".parse().unwrap();
        assert!(icscf_assign(&hss, &unknown, &s).is_err());
    }

    #[test]
    fn parses_subscriber_file() {
        let text = r#"
            [[subscriber]]
            impi = "alice@open-ims.test"
            impus = ["sip:alice@open-ims.test"]
            key = "0707070707070707070707070707070707070707070707070707070707070707"

            [[subscriber.trigger]]
            methods = ["INVITE", "MESSAGE"]
            uri_user = "exam"
            target = "momex-as"
        "#;
        let subs = parse_subscribers(text).unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].secret_key, SecretKey::new([7; 32]));
        assert_eq!(subs[0].service_triggers[0].target, addr("momex-as"));
        assert_eq!(
            subs[0].service_triggers[0].rule.methods,
            [Method::Invite, Method::Message]
        );
    }
}
