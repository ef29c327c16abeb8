//! The bundled sample: one university, one student, one full exam.

use thiserror::Error;

use crate::exam::{Report, University};
use crate::netsim::SimConfig;
use crate::testbed::{Testbed, TestbedConfig, TestbedError};
use crate::ue::{run_scenario, Scenario, ScenarioFailed, Transcript};

pub const SAMPLE_UNIVERSITY: &str = include_str!("../../../fixtures/university.toml");
/// Bob answers the midterm with a fixed pattern.
pub const SAMPLE_SCENARIO: &str = include_str!("../../../scenarios/mixed.toml");

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Boot(#[from] TestbedError),
    #[error(transparent)]
    Scenario(#[from] Box<ScenarioFailed>),
    #[error("no report was produced")]
    NoReport,
}

pub struct DemoRun {
    pub transcript: Transcript,
    pub trace: String,
    pub report: Report,
}

/// Provisions the sample university, runs the sample scenario at `seed`
/// without loss and returns the graded report.
pub fn run_demo(seed: u64) -> Result<DemoRun, DemoError> {
    let university = University::parse(SAMPLE_UNIVERSITY).expect("bundled fixture is valid");
    let scenario = Scenario::parse(SAMPLE_SCENARIO).expect("bundled scenario is valid");
    let config = TestbedConfig {
        sim: SimConfig {
            seed,
            ..SimConfig::default()
        },
        ..TestbedConfig::default()
    };
    let mut tb = Testbed::boot_with(&config, Some(&university), &[])?;
    let transcript = run_scenario(&mut tb, &scenario).map_err(Box::new)?;
    let report = tb
        .service()
        .reports()
        .next()
        .cloned()
        .ok_or(DemoError::NoReport)?;
    Ok(DemoRun {
        transcript,
        trace: tb.sim.trace().to_text(),
        report,
    })
}

impl DemoRun {
    pub fn summary(&self) -> String {
        let r = &self.report;
        let mut out = format!(
            "report session={} student={} course={}\n",
            r.session, r.student, r.course
        );
        for a in &r.per_question {
            out.push_str(&format!("  {} {}/{}\n", a.question, a.awarded, a.points));
        }
        out.push_str(&format!(
            "total {}/{} grade {}\n",
            r.total, r.max_total, r.grade
        ));
        out
    }
}
