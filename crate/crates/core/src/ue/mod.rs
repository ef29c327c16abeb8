//! Scripted user equipment and the scenario runner.

pub mod agent;
pub mod scenario;
pub mod transcript;

use thiserror::Error;

pub use agent::{Action, QuestionSet, UeAgent, UeIdentity};
pub use scenario::{answer_strategy, AnswerMode, ArityMismatch, Scenario, Step};
pub use transcript::{Direction, Transcript, TranscriptEntry};

use crate::exam::AppServer;
use crate::netsim::{addr, NodeAddress};
use crate::testbed::Testbed;

/// Virtual time allowed for a result to arrive.
pub const WAIT_RESULT_MS: u64 = 60_000;
/// Virtual time allowed for any other step before it counts as stalled.
pub const STEP_LIMIT_MS: u64 = 60_000;

pub const OUTCOME_RESULT: &str = "ResultReceived";
pub const OUTCOME_COMPLETED: &str = "Completed";

#[derive(Debug, Clone, Error)]
#[error("scenario failed at step {step} ({name}): {cause}")]
pub struct ScenarioFailed {
    /// 1-based index into the expanded step list.
    pub step: usize,
    pub name: &'static str,
    pub cause: String,
    pub transcript: Transcript,
}

fn agent<'a>(tb: &'a Testbed, ue: &NodeAddress) -> &'a UeAgent {
    tb.sim
        .node::<UeAgent>(ue)
        .expect("UE registered with the simulator")
}

/// Steps the simulation until the UE's current action finishes.
fn await_action(tb: &mut Testbed, ue: &NodeAddress) -> Result<(), String> {
    let limit = tb.sim.now() + STEP_LIMIT_MS;
    let ue2 = ue.clone();
    tb.sim.run_while(limit, |sim| {
        sim.node::<UeAgent>(&ue2)
            .is_some_and(|a| a.finished().is_some())
    });
    match agent(tb, ue).finished() {
        Some(r) => r.clone(),
        None => Err("no progress".into()),
    }
}

fn run_step(
    tb: &mut Testbed,
    ue: &NodeAddress,
    step: &Step,
    queue: &mut Vec<Step>,
) -> Result<(), String> {
    match step {
        Step::Register => {
            tb.sim
                .with_node::<UeAgent, _>(ue, |a, ctx| a.begin_register(ctx));
            await_action(tb, ue)
        }
        Step::StartExam { schedule } => {
            tb.sim
                .with_node::<UeAgent, _>(ue, |a, ctx| a.begin_start_exam(ctx, schedule));
            await_action(tb, ue)
        }
        Step::Answer { ordinal, choice } => {
            tb.sim
                .with_node::<UeAgent, _>(ue, |a, ctx| a.begin_answer(ctx, *ordinal, *choice));
            await_action(tb, ue)
        }
        Step::Answers { mode } => {
            let qs = agent(tb, ue)
                .question_set()
                .cloned()
                .ok_or("no question set received")?;
            let app = tb.app_server();
            let exam = app
                .service
                .session(&qs.session)
                .and_then(|s| app.service.exam(&s.exam))
                .ok_or("session unknown to the application server")?;
            let expanded = answer_strategy(mode, &qs.questions, |q| {
                exam.master_for(q).map(|m| m.correct_choice)
            })
            .map_err(|e| e.to_string())?;
            // expanded steps run next, in order
            for s in expanded.into_iter().rev() {
                queue.push(s);
            }
            Ok(())
        }
        Step::Finish => {
            tb.sim
                .with_node::<UeAgent, _>(ue, |a, ctx| a.begin_finish(ctx));
            await_action(tb, ue)
        }
        Step::WaitResult => {
            let limit = tb.sim.now() + WAIT_RESULT_MS;
            let ue2 = ue.clone();
            let got = tb.sim.run_while(limit, |sim| {
                sim.node::<UeAgent>(&ue2)
                    .is_some_and(|a| a.result().is_some())
            });
            if !got {
                return Err(format!("no result within {WAIT_RESULT_MS} ms"));
            }
            tb.sim
                .with_node::<UeAgent, _>(ue, |a, ctx| a.begin_bye(ctx));
            // a failed BYE does not fail the scenario
            let _ = await_action(tb, ue);
            Ok(())
        }
        Step::Delay { ms } => {
            let until = tb.sim.now() + ms;
            tb.sim.run_until(until);
            Ok(())
        }
    }
}

/// Runs a scenario against a booted testbed, adding the scenario's UE to
/// the simulation if needed.
pub fn run_scenario(tb: &mut Testbed, scenario: &Scenario) -> Result<Transcript, ScenarioFailed> {
    let ue = addr(&scenario.node_name());
    if !tb.sim.is_registered(&ue) {
        let identity = UeIdentity {
            impi: scenario.ue.impi.clone(),
            impu: scenario.ue.impu.clone(),
            key: scenario.ue.key.clone(),
        };
        tb.add_ue(&ue, identity);
    }
    let mut queue: Vec<Step> = scenario.steps.iter().rev().cloned().collect();
    let mut index = 0;
    while let Some(step) = queue.pop() {
        index += 1;
        let result = run_step(tb, &ue, &step, &mut queue);
        let now = tb.sim.now();
        let a = tb.sim.node_mut::<UeAgent>(&ue).expect("UE registered");
        let note = match &result {
            Ok(()) => format!("{index} {} ok", step.name()),
            Err(cause) => format!("{index} {} failed: {cause}", step.name()),
        };
        a.transcript.push(now, Direction::Step, &ue, &ue, note);
        if let Err(cause) = result {
            a.transcript.outcome = Some("ScenarioFailed".into());
            a.transcript
                .push(now, Direction::Outcome, &ue, &ue, "ScenarioFailed".into());
            return Err(ScenarioFailed {
                step: index,
                name: step.name(),
                cause,
                transcript: a.transcript.clone(),
            });
        }
    }
    let now = tb.sim.now();
    let a = tb.sim.node_mut::<UeAgent>(&ue).expect("UE registered");
    let token = if a.result().is_some() {
        OUTCOME_RESULT
    } else {
        OUTCOME_COMPLETED
    };
    a.transcript.outcome = Some(token.into());
    a.transcript
        .push(now, Direction::Outcome, &ue, &ue, token.into());
    Ok(a.transcript.clone())
}

impl Testbed {
    pub fn app_server(&self) -> &AppServer {
        self.sim
            .node::<AppServer>(&self.as_addr)
            .expect("application server node")
    }
}
