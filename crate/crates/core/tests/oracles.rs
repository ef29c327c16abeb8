//! Values fixed by independent oracles, then frozen.

mod support;

use std::collections::BTreeMap;

use momex_core::exam::{select_random, ExamPayload, QuestionId};
use momex_core::ims::{Hss, SecretKey, SubscriberProfile};
use momex_core::netsim::{addr, Envelope, Node, SimConfig, Simulation, SplitMix64, TraceKind};
use momex_core::ue::run_scenario;
use support::*;

#[test]
fn select_random_matches_shuffle_oracle() {
    let pool: Vec<String> = (1..=10).map(|i| format!("q{i}")).collect();
    let expected = oracle_select(&pool, 3, 42);
    assert_eq!(expected, ["q9", "q4", "q7"]);
    assert_eq!(select_random(&pool, 3, 42).unwrap(), expected);
}

#[test]
fn select_random_agrees_with_oracle_across_seeds() {
    let pool: Vec<u32> = (0..20).collect();
    for seed in 0..500 {
        let count = (seed % 21) as usize;
        assert_eq!(
            select_random(&pool, count, seed).unwrap(),
            oracle_select(&pool, count, seed)
        );
    }
}

struct Sink;

impl Node for Sink {
    fn on_message(&mut self, _: &mut momex_core::netsim::Context<'_>, _: Envelope) {}
}

#[test]
fn drop_count_at_ten_percent_loss() {
    let mut r = OracleRng::new(42);
    let oracle = (0..1000).filter(|_| r.unit() < 0.1).count();
    assert_eq!(oracle, 110);

    let mut sim = Simulation::new(SimConfig {
        seed: 42,
        loss_probability: 0.1,
        ..SimConfig::default()
    })
    .unwrap();
    let dst = addr("sink");
    sim.register_node(dst.clone(), Box::new(Sink)).unwrap();
    let src = sim.external().clone();
    for i in 0..1000u32 {
        sim.send(&src, &dst, i.to_be_bytes().to_vec());
    }
    let drops = sim
        .trace_events()
        .iter()
        .filter(|e| e.kind == TraceKind::Drop)
        .count();
    assert_eq!(drops, 110);
}

#[test]
fn first_challenge_nonce_for_seed_42() {
    let mut r = OracleRng::new(42);
    let oracle = format!("{:016x}{:016x}", r.next(), r.next());
    assert_eq!(oracle, "bdd732262feb6e9528efe333b266f103");

    let mut hss = Hss::default();
    hss.provision(SubscriberProfile {
        impi: "alice@open-ims.test".into(),
        impus: vec!["sip:alice@open-ims.test".parse().unwrap()],
        secret_key: SecretKey::new([1; 32]),
        service_triggers: Vec::new(),
        barred: false,
    })
    .unwrap();
    let c = hss
        .generate_challenge("alice@open-ims.test", 0, &mut SplitMix64::new(42))
        .unwrap();
    assert_eq!(c.nonce, oracle);
}

/// Runs a scenario and compares the reported total with the oracle over
/// the questions and choices the UE actually sent.
fn run_and_check(text: &str, ue: &str) -> (u32, u32) {
    let mut tb = boot(42, 0.0);
    let s = scenario(text);
    run_scenario(&mut tb, &s).unwrap_or_else(|e| panic!("{e}\n{}", e.transcript));
    let agent = tb.ue(&addr(ue)).unwrap();
    let qs = agent.question_set().unwrap().clone();
    let questions: Vec<QuestionId> = qs.questions.iter().map(|q| q.id.clone()).collect();
    let session = tb.service().session(&qs.session).unwrap();
    let answers: BTreeMap<QuestionId, usize> = session
        .answers
        .iter()
        .map(|(q, a)| (q.clone(), a.choice))
        .collect();
    let key = fixture_answer_key(&tb);
    let expected = oracle_total(&key, &questions, &answers);
    let report = tb.service().report(&qs.session).unwrap();
    assert_eq!(report.total, expected);
    match agent.result().unwrap() {
        ExamPayload::Result { total, .. } => assert_eq!(*total, expected),
        other => panic!("{other:?}"),
    }
    let max: u32 = questions.iter().map(|q| key[q].1).sum();
    (expected, max)
}

#[test]
fn happy_path_total_matches_oracle() {
    assert_eq!(run_and_check(HAPPY, "ue-alice"), (6, 6));
}

#[test]
fn scripted_total_matches_oracle() {
    assert_eq!(run_and_check(MIXED, "ue-bob"), (2, 7));
}
