use std::fmt;

use crate::netsim::NodeAddress;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Send,
    Recv,
    Step,
    Outcome,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Send => "send",
            Direction::Recv => "deliver",
            Direction::Step => "step",
            Direction::Outcome => "outcome",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub at: u64,
    pub direction: Direction,
    pub src: NodeAddress,
    pub dst: NodeAddress,
    pub summary: String,
}

impl fmt::Display for TranscriptEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.at,
            self.direction.as_str(),
            self.src,
            self.dst,
            self.summary
        )
    }
}

/// What one UE saw and did, in the trace line format.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
    pub outcome: Option<String>,
}

impl Transcript {
    pub fn push(
        &mut self,
        at: u64,
        direction: Direction,
        src: &NodeAddress,
        dst: &NodeAddress,
        summary: String,
    ) {
        self.entries.push(TranscriptEntry {
            at,
            direction,
            src: src.clone(),
            dst: dst.clone(),
            summary,
        });
    }

    pub fn messages(&self) -> impl Iterator<Item = &TranscriptEntry> {
        self.entries
            .iter()
            .filter(|e| matches!(e.direction, Direction::Send | Direction::Recv))
    }

    /// Whether a received message's first line contains `needle`.
    pub fn received(&self, needle: &str) -> bool {
        self.entries
            .iter()
            .any(|e| e.direction == Direction::Recv && e.summary.contains(needle))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
