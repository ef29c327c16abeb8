//! Shared helpers for integration tests: fixture loading, independent
//! oracles and proptest generators.

#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;

use momex_core::exam::{QuestionId, University};
use momex_core::netsim::SimConfig;
use momex_core::sip::{Method, SipMessage, SipUri};
use momex_core::testbed::{Testbed, TestbedConfig};
use momex_core::ue::Scenario;

pub const UNIVERSITY: &str = include_str!("../../../../fixtures/university.toml");
pub const HAPPY: &str = include_str!("../../../../scenarios/happy.toml");
pub const MIXED: &str = include_str!("../../../../scenarios/mixed.toml");

pub fn university() -> University {
    University::parse(UNIVERSITY).expect("sample university parses")
}

pub fn scenario(text: &str) -> Scenario {
    Scenario::parse(text).expect("scenario parses")
}

pub fn config(seed: u64, loss: f64) -> TestbedConfig {
    TestbedConfig {
        sim: SimConfig {
            seed,
            loss_probability: loss,
            ..SimConfig::default()
        },
        ..TestbedConfig::default()
    }
}

pub fn boot(seed: u64, loss: f64) -> Testbed {
    Testbed::boot_with(&config(seed, loss), Some(&university()), &[]).expect("testbed boots")
}

// ---------------------------------------------------------------------------
// Oracles. Written from the algorithm descriptions, sharing no code with the
// crate.

/// Reference SplitMix64 (Steele, Lea, Flood).
pub struct OracleRng(u64);

impl OracleRng {
    pub fn new(seed: u64) -> Self {
        OracleRng(seed)
    }

    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform index below `n`: high 64 bits of the 128-bit product.
    pub fn index(&mut self, n: usize) -> usize {
        let wide = u128::from(self.next()) * n as u128;
        (wide >> 64) as usize
    }

    pub fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 / 9007199254740992.0
    }
}

/// First `count` entries of a Fisher–Yates shuffle, walking from the back.
pub fn oracle_select<T: Clone>(pool: &[T], count: usize, seed: u64) -> Vec<T> {
    let mut rng = OracleRng::new(seed);
    let mut v = pool.to_vec();
    let mut i = v.len();
    while i > 1 {
        i -= 1;
        let j = rng.index(i + 1);
        v.swap(i, j);
    }
    v.into_iter().take(count).collect()
}

/// Expected total: walk the questions and count matching answers, using
/// the correct choices and points straight from the fixture file.
pub fn oracle_total(
    key: &BTreeMap<QuestionId, (usize, u32)>,
    questions: &[QuestionId],
    answers: &BTreeMap<QuestionId, usize>,
) -> u32 {
    let mut total = 0;
    for q in questions {
        let (correct, points) = key[q];
        if answers.get(q) == Some(&correct) {
            total += points;
        }
    }
    total
}

/// Answer key (correct choice, points) by installed question id, read from
/// the raw fixture text rather than the service.
pub fn fixture_answer_key(tb: &Testbed) -> BTreeMap<QuestionId, (usize, u32)> {
    let raw: toml::Value = toml::from_str(UNIVERSITY).unwrap();
    let mut out = BTreeMap::new();
    for q in raw["question"].as_array().unwrap() {
        let label = q["key"].as_str().unwrap();
        let id = tb.installed.questions[label].clone();
        let correct = q["correct_choice"].as_integer().unwrap() as usize;
        let points = q
            .get("points")
            .map_or(1, |p| p.as_integer().unwrap() as u32);
        out.insert(id, (correct, points));
    }
    out
}

// ---------------------------------------------------------------------------
// SIP message generator.

fn token() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9]{0,7}"
}

fn uri() -> impl Strategy<Value = SipUri> {
    (
        proptest::option::of(token()),
        "[a-z][a-z0-9-]{0,6}(\\.[a-z]{2,4})?",
        proptest::option::of(1u16..65535),
        proptest::collection::vec((token(), proptest::option::of(token())), 0..3),
    )
        .prop_map(|(user, host, port, params)| SipUri {
            user,
            host,
            port,
            params,
        })
}

fn header_value() -> impl Strategy<Value = String> {
    // printable, no leading or trailing blanks
    "[!-~]([ -~]{0,30}[!-~])?"
}

fn extra_header() -> impl Strategy<Value = (String, String)> {
    ("X-[A-Za-z][A-Za-z0-9-]{1,10}", header_value())
}

fn method() -> impl Strategy<Value = Method> {
    proptest::sample::select(Method::ALL.to_vec())
}

/// Valid messages: requests and responses with the mandatory headers, one
/// to three Vias in random order, extra headers and an optional body.
pub fn sip_message() -> impl Strategy<Value = SipMessage> {
    (
        prop_oneof![
            (method(), uri()).prop_map(|(m, u)| (Some((m, u)), 0u16, String::new())),
            (method(), 100u16..700, "[A-Za-z][A-Za-z ]{0,15}[A-Za-z]").prop_map(|(m, s, r)| (
                Some((m, SipUri::new(None, "x"))),
                s,
                r
            )),
        ],
        proptest::collection::vec(token(), 1..4),
        uri(),
        uri(),
        "[a-z0-9]{4,16}",
        0u32..100_000,
        proptest::collection::vec(extra_header(), 0..4),
        proptest::option::of(proptest::collection::vec(any::<u8>(), 1..64)),
    )
        .prop_map(|(start, vias, from, to, call_id, seq, extras, body)| {
            let (method, uri) = start.0.clone().unwrap();
            let mut b = if start.1 == 0 {
                SipMessage::request(method, uri)
            } else {
                SipMessage::response(start.1, &start.2)
            };
            for (i, v) in vias.iter().enumerate() {
                b = b.header("Via", format!("SIP/2.0/SIM {v};branch=z9hG4bK{v}{i}"));
            }
            b = b
                .header("From", format!("<{from}>;tag=f{seq}"))
                .header("To", format!("<{to}>"))
                .header("Call-ID", call_id)
                .header("CSeq", format!("{seq} {method}"));
            for (n, v) in extras {
                b = b.header(&n, v);
            }
            if let Some(body) = body {
                b = b.body("application/octet-stream", body);
            }
            b.build()
        })
}
