//! Discrete-time queue-based grid traffic simulation.

mod engine;
mod metrics;
mod network;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use engine::{Observation, Placement, SimConfig, Simulator, Vehicle, VehicleStatus};
pub use metrics::MetricsAccumulator;
pub use network::{
    approach_slot, build_grid, grid_intersection_name, grid_road_name, Direction, Endpoint, Intersection, LaneParams,
    Movement, Phase, Road, RoadId, RoadNetwork, Turn, APPROACH_ORDER,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("route error: {0}")]
    Route(String),
    #[error("agent {agent}: action {value} is not a phase in 1..=4")]
    InvalidAction { agent: usize, value: u8 },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("unknown agent {0}")]
    UnknownAgent(usize),
    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),
}

/// One scheduled vehicle with its full route.
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleDemand {
    pub route: Vec<RoadId>,
    pub entry_time: f64,
}

/// Vehicle demand sorted by entry time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowSpec {
    pub demands: Vec<VehicleDemand>,
}

impl FlowSpec {
    pub fn new(mut demands: Vec<VehicleDemand>) -> Self {
        // Stable, so equal entry times keep their input order.
        demands.sort_by(|a, b| a.entry_time.total_cmp(&b.entry_time));
        Self { demands }
    }

    pub fn len(&self) -> usize {
        self.demands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demands.is_empty()
    }

    pub fn validate(&self, net: &RoadNetwork) -> Result<(), SimError> {
        let mut last = 0.0;
        for (i, d) in self.demands.iter().enumerate() {
            if !(d.entry_time >= 0.0 && d.entry_time.is_finite()) {
                return Err(SimError::Config(format!("demand {i}: invalid entry time {}", d.entry_time)));
            }
            if d.entry_time < last {
                return Err(SimError::Config(format!("demand {i}: entry times are not sorted")));
            }
            last = d.entry_time;
            net.validate_route(&d.route).map_err(|e| SimError::Route(format!("demand {i}: {e}")))?;
        }
        Ok(())
    }
}
