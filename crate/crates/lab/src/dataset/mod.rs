//! Traffic datasets: CityFlow-format files and the synthetic demand generators.

mod cityflow;

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tsc_core::sim::{Endpoint, FlowSpec, RoadId, RoadNetwork, SimError, Turn, VehicleDemand};

pub use cityflow::{
    flow_to_json, load_flow, load_roadnet, parse_flow, parse_roadnet, roadnet_to_json, write_flow, write_roadnet,
};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("intersection `{intersection}`: unsupported topology: {reason}")]
    Unsupported { intersection: String, reason: String },
    #[error("{context}: unknown road `{road}`")]
    UnknownRoad { context: String, road: String },
    #[error("invalid dataset parameters: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Probabilities of turning left, going through and turning right.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TurnRatios {
    pub left: f64,
    pub through: f64,
    pub right: f64,
}

impl Default for TurnRatios {
    fn default() -> Self {
        Self { left: 0.1, through: 0.6, right: 0.3 }
    }
}

impl TurnRatios {
    pub fn new(left: f64, through: f64, right: f64) -> Result<Self, DataError> {
        let r = Self { left, through, right };
        let ok = [left, through, right].iter().all(|p| p.is_finite() && *p >= 0.0)
            && (left + through + right - 1.0).abs() <= 1e-9;
        if !ok {
            return Err(DataError::Config(format!("turn ratios must be non-negative and sum to 1, got {r:?}")));
        }
        Ok(r)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Turn {
        let u: f64 = rng.random();
        if u < self.left {
            Turn::Left
        } else if u < self.left + self.through {
            Turn::Through
        } else {
            Turn::Right
        }
    }
}

/// Parameters of the Gaussian-profile demand.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianFlowParams {
    pub total: usize,
    /// Seconds; arrivals are confined to `[0, horizon)`.
    pub horizon: f64,
    pub ratios: TurnRatios,
}

impl Default for GaussianFlowParams {
    fn default() -> Self {
        Self { total: 1473, horizon: 3600.0, ratios: TurnRatios::default() }
    }
}

/// Default horizon of the 6x6 preset; yields 3000 vehicles at the preset rates.
pub const UNIFORM_PRESET_HORIZON: f64 = 2300.0;
/// Arrivals per lane per hour on roads heading east or west.
pub const UNIFORM_WE_RATE: f64 = 300.0;
/// Arrivals per lane per hour on roads heading north or south.
pub const UNIFORM_SN_RATE: f64 = 90.0;

/// Gaussian-in-time demand from uniformly chosen boundary entry roads.
///
/// Entry times follow N(horizon/2, horizon/6) truncated to `[0, horizon)`
/// by resampling. Routes are drawn turn by turn from `ratios`; after
/// `rows + cols` intersections a vehicle only goes straight so every route
/// reaches the boundary.
pub fn gen_gaussian_flow(seed: u64, net: &RoadNetwork, params: &GaussianFlowParams) -> Result<FlowSpec, DataError> {
    if params.total == 0 {
        return Err(DataError::Config("total must be at least 1".into()));
    }
    if !(params.horizon.is_finite() && params.horizon > 0.0) {
        return Err(DataError::Config(format!("horizon must be positive, got {}", params.horizon)));
    }
    TurnRatios::new(params.ratios.left, params.ratios.through, params.ratios.right)?;
    let entries = net.entry_roads();
    if entries.is_empty() {
        return Err(DataError::Config("network has no boundary entry roads".into()));
    }
    let cap = net.grid.map_or(net.intersection_count(), |(r, c)| r + c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let time = Normal::new(params.horizon / 2.0, params.horizon / 6.0).map_err(|e| DataError::Config(e.to_string()))?;
    let mut demands = Vec::with_capacity(params.total);
    for _ in 0..params.total {
        let entry_time = loop {
            let t = time.sample(&mut rng);
            if (0.0..params.horizon).contains(&t) {
                break t;
            }
        };
        let entry = entries[rng.random_range(0..entries.len())];
        let route = sample_route(net, entry, &params.ratios, cap, &mut rng)?;
        demands.push(VehicleDemand { route, entry_time });
    }
    Ok(FlowSpec::new(demands))
}

fn sample_route<R: Rng + ?Sized>(
    net: &RoadNetwork,
    entry: RoadId,
    ratios: &TurnRatios,
    cap: usize,
    rng: &mut R,
) -> Result<Vec<RoadId>, DataError> {
    let mut route = vec![entry];
    let mut current = entry;
    while let Endpoint::Signal(node) = net.road(current).to {
        let inter = &net.intersections[node];
        let heading = net.road(current).heading;
        let forced = route.len() > cap;
        let mut next = None;
        // Draw until the chosen turn has an outgoing road; through is the fallback.
        for _ in 0..16 {
            let turn = if forced { Turn::Through } else { ratios.sample(rng) };
            if let Some(r) = inter.outgoing[turn.apply(heading).index()] {
                next = Some(r);
                break;
            }
        }
        let next = next
            .or_else(|| Turn::ALL.iter().find_map(|t| inter.outgoing[t.apply(heading).index()]))
            .ok_or_else(|| DataError::Unsupported {
                intersection: inter.name.clone(),
                reason: format!("no exit for vehicles arriving on `{}`", net.road(current).name),
            })?;
        route.push(next);
        current = next;
        if route.len() > 4 * cap + 8 {
            return Err(DataError::Config("route sampling did not reach the boundary".into()));
        }
    }
    Ok(route)
}

/// Evenly spaced arrivals on every boundary entry road, with straight routes.
///
/// East- and westbound entries receive [`UNIFORM_WE_RATE`] vehicles per hour,
/// north- and southbound entries [`UNIFORM_SN_RATE`]. Arrivals on a road are
/// at `0, s, 2s, ...` below `horizon` where `s = 3600 / rate`.
pub fn gen_uniform_flow(net: &RoadNetwork, horizon: f64) -> Result<FlowSpec, DataError> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(DataError::Config(format!("horizon must be positive, got {horizon}")));
    }
    let mut demands = Vec::new();
    for entry in net.entry_roads() {
        let heading = net.road(entry).heading;
        let rate = if heading.index().is_multiple_of(2) { UNIFORM_WE_RATE } else { UNIFORM_SN_RATE };
        let spacing = 3600.0 / rate;
        let mut route = vec![entry];
        let mut current = entry;
        while let Endpoint::Signal(node) = net.road(current).to {
            current = net.intersections[node].outgoing[heading.index()].ok_or_else(|| DataError::Unsupported {
                intersection: net.intersections[node].name.clone(),
                reason: "no straight exit".into(),
            })?;
            route.push(current);
        }
        let mut k = 0u32;
        loop {
            let t = f64::from(k) * spacing;
            if t >= horizon {
                break;
            }
            demands.push(VehicleDemand { route: route.clone(), entry_time: t });
            k += 1;
        }
    }
    Ok(FlowSpec::new(demands))
}
