use std::collections::BTreeMap;

use serde::Serialize;

use super::hss::{Hss, HssError, ServiceTrigger};
use crate::netsim::{NodeAddress, SplitMix64};
use crate::sip::{extract_uri, make_response, AuthHeader, Method, SipMessage, SipUri};

pub const DEFAULT_REALM: &str = "open-ims.test";
/// Binding lifetime when the UE does not ask for less.
pub const DEFAULT_EXPIRES_SECS: u64 = 3_600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BindingState {
    Unregistered,
    Challenged,
    Registered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegistrationBinding {
    pub impu: SipUri,
    pub contact: SipUri,
    pub via_pcscf: NodeAddress,
    pub state: BindingState,
    pub expires_at: u64,
}

impl RegistrationBinding {
    pub fn is_active(&self, now: u64) -> bool {
        self.state == BindingState::Registered && self.expires_at > now
    }
}

/// Why the S-CSCF refused to route a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteError {
    SenderNotRegistered,
    NoRoute,
}

impl RouteError {
    pub fn status(self) -> (u16, &'static str) {
        match self {
            RouteError::SenderNotRegistered => (403, "Forbidden"),
            RouteError::NoRoute => (404, "Not Found"),
        }
    }
}

/// HSS plus the S-CSCF registrar state. Shared between the S-CSCF,
/// I-CSCF and the application server inside one simulation.
#[derive(Debug, Default)]
pub struct ImsCore {
    pub hss: Hss,
    pub realm: String,
    /// Triggers attached to subscribers provisioned at run time.
    pub default_triggers: Vec<ServiceTrigger>,
    bindings: BTreeMap<SipUri, RegistrationBinding>,
}

fn reply(req: &SipMessage, status: u16, reason: &str) -> SipMessage {
    make_response(req, status, reason).expect("REGISTER is a request")
}

impl ImsCore {
    pub fn new(hss: Hss) -> Self {
        ImsCore {
            hss,
            realm: DEFAULT_REALM.to_owned(),
            default_triggers: Vec::new(),
            bindings: BTreeMap::new(),
        }
    }

    pub fn binding(&self, impu: &SipUri) -> Option<&RegistrationBinding> {
        self.bindings.get(&impu.aor())
    }

    pub fn bindings(&self) -> impl Iterator<Item = &RegistrationBinding> {
        self.bindings.values()
    }

    pub fn is_registered(&self, impu: &SipUri, now: u64) -> bool {
        self.binding(impu).is_some_and(|b| b.is_active(now))
    }

    /// REGISTER handling: challenge, verify, bind.
    pub fn scscf_register(
        &mut self,
        msg: &SipMessage,
        via_pcscf: &NodeAddress,
        now: u64,
        rng: &mut SplitMix64,
    ) -> SipMessage {
        if msg.method() != Some(Method::Register) {
            return reply(msg, 400, "Bad Request");
        }
        let Some(impu) = msg.to_uri().map(|u| u.aor()) else {
            return reply(msg, 400, "Bad Request");
        };
        let impi = match self.hss.impi_for(&impu) {
            Ok(impi) => impi.to_owned(),
            Err(_) => return reply(msg, 404, "Not Found"),
        };
        if self.hss.lookup(&impi).is_ok_and(|p| p.barred) {
            self.bindings.remove(&impu);
            return reply(msg, 403, "Forbidden");
        }
        let contact = msg
            .header("Contact")
            .and_then(|c| extract_uri(c).ok())
            .unwrap_or_else(|| impu.clone());

        let Some(auth) = msg.header("Authorization") else {
            let challenge = match self.hss.generate_challenge(&impi, now, rng) {
                Ok(c) => c,
                Err(_) => return reply(msg, 404, "Not Found"),
            };
            let binding =
                self.bindings
                    .entry(impu.clone())
                    .or_insert_with(|| RegistrationBinding {
                        impu: impu.clone(),
                        contact: contact.clone(),
                        via_pcscf: via_pcscf.clone(),
                        state: BindingState::Unregistered,
                        expires_at: 0,
                    });
            if !binding.is_active(now) {
                binding.state = BindingState::Challenged;
            }
            let mut resp = reply(msg, 401, "Unauthorized");
            resp.set_header(
                "WWW-Authenticate",
                AuthHeader::challenge(&self.realm, &challenge.nonce).to_string(),
            );
            return resp;
        };

        let verified = match auth.parse::<AuthHeader>() {
            Ok(AuthHeader {
                nonce,
                response: Some(response),
                ..
            }) => self.hss.verify(&impi, &nonce, &response),
            _ => Err(HssError::UnknownNonce),
        };
        if verified != Ok(true) {
            self.bindings.remove(&impu);
            return reply(msg, 403, "Forbidden");
        }

        let requested = msg
            .header("Expires")
            .and_then(|e| e.parse::<u64>().ok())
            .unwrap_or(DEFAULT_EXPIRES_SECS)
            .min(DEFAULT_EXPIRES_SECS);
        let mut resp = reply(msg, 200, "OK");
        if requested == 0 {
            self.bindings.remove(&impu);
            resp.set_header("Expires", "0");
            return resp;
        }
        let until = now + requested * 1_000;
        let previous = self
            .bindings
            .get(&impu)
            .filter(|b| b.is_active(now))
            .map_or(0, |b| b.expires_at);
        let expires_at = until.max(previous);
        self.bindings.insert(
            impu.clone(),
            RegistrationBinding {
                impu,
                contact: contact.clone(),
                via_pcscf: via_pcscf.clone(),
                state: BindingState::Registered,
                expires_at,
            },
        );
        resp.set_header("Contact", format!("<{contact}>"));
        resp.set_header("Expires", ((expires_at - now) / 1_000).to_string());
        resp
    }

    /// Originating routing for a request from a UE: the sender must hold an
    /// active binding; the first matching service trigger wins, otherwise a
    /// registered target identity is reached through its P-CSCF.
    pub fn scscf_route(&self, msg: &SipMessage, now: u64) -> Result<NodeAddress, RouteError> {
        let sender = msg.from_uri().ok_or(RouteError::SenderNotRegistered)?;
        if !self.is_registered(&sender, now) {
            return Err(RouteError::SenderNotRegistered);
        }
        let profile = self
            .hss
            .lookup_by_impu(&sender)
            .map_err(|_| RouteError::SenderNotRegistered)?;
        if let Some(t) = profile
            .service_triggers
            .iter()
            .find(|t| t.rule.matches(msg))
        {
            return Ok(t.target.clone());
        }
        self.route_terminating(msg, now)
    }

    /// Terminating routing toward a registered identity.
    pub fn route_terminating(&self, msg: &SipMessage, now: u64) -> Result<NodeAddress, RouteError> {
        let target = msg.request_uri().ok_or(RouteError::NoRoute)?;
        self.binding(target)
            .filter(|b| b.is_active(now))
            .map(|b| b.via_pcscf.clone())
            .ok_or(RouteError::NoRoute)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ims::hss::{
        aka_response, SecretKey, ServiceTrigger, SubscriberProfile, TriggerRule,
    };
    use crate::netsim::addr;

    const ALICE: &str = "sip:alice@open-ims.test";

    fn core() -> ImsCore {
        let mut hss = Hss::new();
        hss.provision(SubscriberProfile {
            impi: "alice@open-ims.test".into(),
            impus: vec![ALICE.parse().unwrap()],
            secret_key: SecretKey::new([1; 32]),
            service_triggers: vec![ServiceTrigger {
                rule: TriggerRule {
                    methods: vec![Method::Invite, Method::Message],
                    uri_user: Some("exam".into()),
                    uri_host: None,
                },
                target: addr("momex-as"),
            }],
            barred: false,
        })
        .unwrap();
        ImsCore::new(hss)
    }

    fn register(cseq: u32, auth: Option<String>) -> SipMessage {
        let mut b = SipMessage::request(Method::Register, "sip:open-ims.test".parse().unwrap())
            .header("Via", "SIP/2.0/SIM pcscf;branch=z9hG4bKa")
            .header("From", format!("<{ALICE}>"))
            .header("To", format!("<{ALICE}>"))
            .header("Call-ID", "reg@ue-alice")
            .header("CSeq", format!("{cseq} REGISTER"))
            .header("Contact", "<sip:alice@ue-alice>");
        if let Some(a) = auth {
            b = b.header("Authorization", a);
        }
        b.build()
    }

    fn answer(challenge: &SipMessage, key: [u8; 32]) -> String {
        let c: AuthHeader = challenge
            .header("WWW-Authenticate")
            .unwrap()
            .parse()
            .unwrap();
        let r = aka_response(&SecretKey::new(key), &c.nonce);
        AuthHeader::credentials(&c.realm, &c.nonce, &r).to_string()
    }

    fn request(method: Method, uri: &str, from: &str) -> SipMessage {
        SipMessage::request(method, uri.parse().unwrap())
            .header("Via", "SIP/2.0/SIM pcscf;branch=z9hG4bKb")
            .header("From", format!("<{from}>"))
            .header("To", format!("<{uri}>"))
            .header("Call-ID", "c")
            .header("CSeq", format!("1 {method}"))
            .build()
    }

    #[test]
    fn challenge_then_register() {
        let mut core = core();
        let mut rng = SplitMix64::new(42);
        let pcscf = addr("pcscf");
        let first = core.scscf_register(&register(1, None), &pcscf, 0, &mut rng);
        assert_eq!(first.status(), Some(401));
        let impu: SipUri = ALICE.parse().unwrap();
        assert_eq!(core.binding(&impu).unwrap().state, BindingState::Challenged);

        let second = core.scscf_register(
            &register(2, Some(answer(&first, [1; 32]))),
            &pcscf,
            100,
            &mut rng,
        );
        assert_eq!(second.status(), Some(200));
        assert_eq!(second.header("Expires"), Some("3600"));
        let b = core.binding(&impu).unwrap();
        assert_eq!(b.state, BindingState::Registered);
        assert_eq!(b.expires_at, 100 + 3_600_000);
        assert_eq!(b.contact.to_string(), "sip:alice@ue-alice");
    }

    #[test]
    fn wrong_key_is_forbidden_without_binding() {
        let mut core = core();
        let mut rng = SplitMix64::new(1);
        let pcscf = addr("pcscf");
        let first = core.scscf_register(&register(1, None), &pcscf, 0, &mut rng);
        let second = core.scscf_register(
            &register(2, Some(answer(&first, [2; 32]))),
            &pcscf,
            0,
            &mut rng,
        );
        assert_eq!(second.status(), Some(403));
        assert_eq!(core.bindings().count(), 0);
    }

    #[test]
    fn unknown_subscriber_gets_404() {
        let mut core = core();
        let mut rng = SplitMix64::new(1);
        let mut msg = register(1, None);
        msg.set_header("To", "<sip:eve@open-ims.test>");
        let resp = core.scscf_register(&msg, &addr("pcscf"), 0, &mut rng);
        assert_eq!(resp.status(), Some(404));
    }

    #[test]
    fn shorter_expiry_honoured_and_reregistration_monotone() {
        let mut core = core();
        let mut rng = SplitMix64::new(1);
        let pcscf = addr("pcscf");
        let impu: SipUri = ALICE.parse().unwrap();
        let mut reg = |core: &mut ImsCore, expires: &str, now: u64| {
            let c = core.scscf_register(&register(1, None), &pcscf, now, &mut rng);
            let mut m = register(2, Some(answer(&c, [1; 32])));
            m.set_header("Expires", expires);
            core.scscf_register(&m, &pcscf, now, &mut rng)
        };
        let r = reg(&mut core, "60", 0);
        assert_eq!(r.header("Expires"), Some("60"));
        assert_eq!(core.binding(&impu).unwrap().expires_at, 60_000);
        reg(&mut core, "3600", 1_000);
        assert_eq!(core.binding(&impu).unwrap().expires_at, 3_601_000);
        reg(&mut core, "10", 2_000);
        assert_eq!(core.binding(&impu).unwrap().expires_at, 3_601_000);
        let r = reg(&mut core, "0", 3_000);
        assert_eq!(r.header("Expires"), Some("0"));
        assert!(core.binding(&impu).is_none());
    }

    #[test]
    fn routing_rules() {
        let mut core = core();
        let mut rng = SplitMix64::new(1);
        let pcscf = addr("pcscf");
        let invite = request(Method::Invite, "sip:exam@open-ims.test", ALICE);
        assert_eq!(
            core.scscf_route(&invite, 0),
            Err(RouteError::SenderNotRegistered)
        );

        let c = core.scscf_register(&register(1, None), &pcscf, 0, &mut rng);
        core.scscf_register(&register(2, Some(answer(&c, [1; 32]))), &pcscf, 0, &mut rng);
        assert_eq!(core.scscf_route(&invite, 10), Ok(addr("momex-as")));

        let unknown = request(Method::Message, "sip:nothing@open-ims.test", ALICE);
        assert_eq!(core.scscf_route(&unknown, 10), Err(RouteError::NoRoute));
        assert_eq!(RouteError::NoRoute.status().0, 404);

        let to_self = request(Method::Message, ALICE, ALICE);
        assert_eq!(core.scscf_route(&to_self, 10), Ok(pcscf.clone()));

        // binding expired
        assert_eq!(
            core.scscf_route(&invite, 3_600_000),
            Err(RouteError::SenderNotRegistered)
        );
    }

    #[test]
    fn barred_subscriber_rejected() {
        let mut core = core();
        core.hss.set_barred("alice@open-ims.test", true).unwrap();
        let mut rng = SplitMix64::new(1);
        let resp = core.scscf_register(&register(1, None), &addr("pcscf"), 0, &mut rng);
        assert_eq!(resp.status(), Some(403));
    }
}
