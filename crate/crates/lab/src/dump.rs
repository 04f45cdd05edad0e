//! CSV logs for offline inspection: per-step signal replay and hyperedge sets.

use std::fmt::Write as _;
use std::path::Path;

use tsc_core::dhg::{DirectedHyperedge, EdgeKind};
use tsc_core::sim::Simulator;

use crate::error::LabError;

pub const REPLAY_FILE: &str = "replay.csv";
pub const HYPERGRAPH_FILE: &str = "hypergraph.csv";

/// Rows of `t, intersection, phase, queue per approach lane`.
#[derive(Clone, Debug, Default)]
pub struct ReplayLog {
    text: String,
}

impl ReplayLog {
    pub fn new() -> Self {
        let mut text = String::from("t,intersection,phase");
        for [a, b] in Simulator::lane_labels() {
            let _ = write!(text, ",q_{a}{b}");
        }
        text.push('\n');
        Self { text }
    }

    /// Appends one row per intersection for the simulator's current state.
    pub fn record(&mut self, sim: &Simulator) -> Result<(), LabError> {
        for agent in 0..sim.agent_count() {
            let name = &sim.network().intersections[agent].name;
            let phase = sim.phase(agent)?.number();
            let _ = write!(self.text, "{},{},{}", sim.time(), name, phase);
            for q in sim.queue_lengths(agent)? {
                let _ = write!(self.text, ",{q}");
            }
            self.text.push('\n');
        }
        Ok(())
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<(), LabError> {
        std::fs::write(path, &self.text).map_err(|e| LabError::io(path, e))
    }
}

/// Rows of `episode, kind, master, tail node:coefficient list, head list`.
///
/// Tail ids at or above the agent count refer to the previous step's nodes.
#[derive(Clone, Debug)]
pub struct HypergraphLog {
    text: String,
}

impl Default for HypergraphLog {
    fn default() -> Self {
        Self { text: String::from("episode,kind,master,tail,head\n") }
    }
}

impl HypergraphLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, episode: usize, edges: &[DirectedHyperedge]) {
        for e in edges {
            let kind = match e.kind {
                EdgeKind::Spatial => "spatial",
                EdgeKind::Temporal => "temporal",
            };
            let tail: Vec<String> = e.tail.iter().map(|t| format!("{}:{}", t.node, t.coef)).collect();
            let head: Vec<String> = e.head.iter().map(usize::to_string).collect();
            let _ = writeln!(self.text, "{episode},{kind},{},{},{}", e.master, tail.join(";"), head.join(";"));
        }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<(), LabError> {
        std::fs::write(path, &self.text).map_err(|e| LabError::io(path, e))
    }
}
