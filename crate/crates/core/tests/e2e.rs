//! Full UE → P-CSCF → S-CSCF → AS flows over the simulated network.

mod support;

use momex_core::exam::{
    replay, Ended, ExamPayload, ExamService, Journal, NullDirectory, SessionState,
};
use momex_core::netsim::addr;
use momex_core::testbed::{service_seed, Testbed, TestbedConfig};
use momex_core::ue::{run_scenario, Scenario, OUTCOME_RESULT};
use support::*;

fn result_of(tb: &Testbed, ue: &str) -> ExamPayload {
    tb.ue(&addr(ue))
        .unwrap()
        .result()
        .cloned()
        .expect("result received")
}

#[test]
fn happy_path_reaches_result() {
    let mut tb = boot(42, 0.0);
    let t =
        run_scenario(&mut tb, &scenario(HAPPY)).unwrap_or_else(|e| panic!("{e}\n{}", e.transcript));
    assert_eq!(t.outcome.as_deref(), Some(OUTCOME_RESULT));
    assert!(t.received("SIP/2.0 401"), "{t}");
    assert!(t.received("SIP/2.0 200"), "{t}");
    let qs = tb
        .ue(&addr("ue-alice"))
        .unwrap()
        .question_set()
        .unwrap()
        .clone();
    assert_eq!(qs.questions.len(), 5);
    match result_of(&tb, "ue-alice") {
        ExamPayload::Result {
            ended,
            total,
            max_total,
            ..
        } => {
            assert_eq!(ended, Ended::Submitted);
            assert_eq!(total, max_total);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(
        tb.service().session(&qs.session).unwrap().state,
        SessionState::Graded
    );
}

#[test]
fn runs_are_byte_identical() {
    let go = || {
        let mut tb = boot(42, 0.0);
        let t = run_scenario(&mut tb, &scenario(HAPPY)).unwrap();
        (t.to_text(), tb.sim.trace().to_text())
    };
    let (t1, r1) = go();
    let (t2, r2) = go();
    assert_eq!(t1, t2);
    assert_eq!(r1, r2);
    assert!(!r1.is_empty());
}

#[test]
fn wrong_key_fails_at_register_with_403() {
    let text = HAPPY.replace(&"a1".repeat(32), &"00".repeat(32));
    let mut tb = boot(7, 0.0);
    let e = run_scenario(&mut tb, &Scenario::parse(&text).unwrap()).unwrap_err();
    assert_eq!(e.step, 1);
    assert_eq!(e.name, "register");
    assert!(e.transcript.received("SIP/2.0 403"), "{}", e.transcript);
    assert!(tb.core.borrow().bindings().next().is_none());
}

#[test]
fn unregistered_ue_gets_403_for_exam_requests() {
    let mut tb = boot(3, 0.0);
    let ue = addr("ue-alice");
    let id = tb.identity_for(&"alice".into()).unwrap();
    tb.add_ue(&ue, id);
    tb.sim
        .with_node::<momex_core::ue::UeAgent, _>(&ue, |a, ctx| a.begin_start_exam(ctx, "sched1"));
    tb.sim.run_until(tb.sim.now() + 30_000);
    let a = tb.ue(&ue).unwrap();
    let outcome = a.finished().unwrap().clone().unwrap_err();
    assert!(outcome.contains("403"), "{outcome}");
    assert!(tb.service().sessions().next().is_none());
}

#[test]
fn all_wrong_scores_zero() {
    let text = HAPPY.replace("all_correct", "all_wrong");
    let mut tb = boot(5, 0.0);
    run_scenario(&mut tb, &Scenario::parse(&text).unwrap()).unwrap();
    match result_of(&tb, "ue-alice") {
        ExamPayload::Result { total, .. } => assert_eq!(total, 0),
        other => panic!("{other:?}"),
    }
}

#[test]
fn deadline_expiry_pushes_result() {
    let text = HAPPY.replace(
        "mode = \"all_correct\"\n\n[[step]]\naction = \"finish\"",
        "mode = \"all_correct\"\n\n[[step]]\naction = \"delay\"\nms = 700000",
    );
    assert!(text.contains("700000"));
    let mut tb = boot(11, 0.0);
    run_scenario(&mut tb, &Scenario::parse(&text).unwrap())
        .unwrap_or_else(|e| panic!("{e}\n{}", e.transcript));
    match result_of(&tb, "ue-alice") {
        ExamPayload::Result { ended, .. } => assert_eq!(ended, Ended::Expired),
        other => panic!("{other:?}"),
    }
}

#[test]
fn result_reaches_the_file_sink_and_journal_replays() {
    let dir = tempfile::tempdir().unwrap();
    let config = TestbedConfig {
        sink_dir: Some(dir.path().join("out")),
        journal: Some(dir.path().join("journal.jsonl")),
        ..support::config(42, 0.0)
    };
    let u = university();
    let mut tb = Testbed::boot_with(&config, Some(&u), &[]).unwrap();
    run_scenario(&mut tb, &scenario(HAPPY)).unwrap();

    let sms = std::fs::read_to_string(dir.path().join("out/sms.out")).unwrap();
    assert!(
        sms.lines()
            .any(|l| l.contains("alice") && l.contains("result session=")),
        "{sms}"
    );

    let mut fresh = ExamService::new(service_seed(42));
    u.install(&mut fresh, &mut NullDirectory).unwrap();
    let entries = Journal::read(dir.path().join("journal.jsonl")).unwrap();
    assert!(!entries.is_empty());
    replay(&mut fresh, &entries, &mut NullDirectory);
    let live = tb.service();
    let replayed: Vec<_> = fresh.reports().cloned().collect();
    assert_eq!(replayed, live.reports().cloned().collect::<Vec<_>>());
    assert_eq!(
        fresh.sessions().cloned().collect::<Vec<_>>(),
        live.sessions().cloned().collect::<Vec<_>>()
    );
}

#[test]
fn two_students_share_one_simulation() {
    let mut tb = boot(9, 0.0);
    run_scenario(&mut tb, &scenario(HAPPY)).unwrap();
    run_scenario(&mut tb, &scenario(MIXED)).unwrap();
    let a = tb
        .ue(&addr("ue-alice"))
        .unwrap()
        .question_set()
        .unwrap()
        .clone();
    let b = tb
        .ue(&addr("ue-bob"))
        .unwrap()
        .question_set()
        .unwrap()
        .clone();
    assert_ne!(a.session, b.session);
    assert_eq!(tb.service().reports().count(), 2);
}
