//! Point-queue signal simulation.
//!
//! Each road carries one lane per turn type. A vehicle entering a lane travels
//! for `length / speed` seconds, then joins the lane's FIFO queue at the stop
//! line. Queues discharge at the saturation rate while their movement is
//! green (right turns always), provided the target lane downstream has room.
//! Time advances in fixed sub-steps of `sim_dt` seconds.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::metrics::MetricsAccumulator;
use super::network::{Endpoint, Movement, Phase, RoadId, RoadNetwork, Turn, APPROACH_ORDER};
use super::{FlowSpec, SimError};

const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    /// Decision interval in seconds.
    pub delta_t: f64,
    /// Internal integration step in seconds.
    pub sim_dt: f64,
    /// Seconds after a phase change during which nothing discharges.
    pub yellow: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { delta_t: 10.0, sim_dt: 1.0, yellow: 0.0 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.delta_t > 0.0 && self.sim_dt > 0.0 && self.yellow >= 0.0) {
            return Err(SimError::Config(format!("invalid timing {self:?}")));
        }
        let k = self.delta_t / self.sim_dt;
        if (k - libm::round(k)).abs() > 1e-9 {
            return Err(SimError::Config(format!(
                "delta_t {} is not a multiple of sim_dt {}",
                self.delta_t, self.sim_dt
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VehicleStatus {
    /// Due to enter but the entry lane is full.
    Waiting,
    Traveling,
    Queued,
    Exited,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vehicle {
    pub id: usize,
    pub route: Vec<RoadId>,
    /// Lane (turn type) used on each road of the route.
    pub lanes: Vec<Turn>,
    /// Index into `route` of the current road.
    pub position: usize,
    pub enter_time: f64,
    pub exit_time: Option<f64>,
    pub status: VehicleStatus,
}

impl Vehicle {
    pub fn road(&self) -> RoadId {
        self.route[self.position]
    }

    pub fn lane(&self) -> Turn {
        self.lanes[self.position]
    }
}

/// Where [`Simulator::spawn_vehicle`] puts a vehicle on its first road.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Placement {
    /// At the upstream end, arriving at the stop line after `remaining` seconds.
    Traveling { remaining: f64 },
    /// At the back of the stop-line queue.
    Queued,
}

/// Per-agent observation: one-hot phase plus vehicle counts on the 12
/// approach lanes in order E(L,T,R), S(L,T,R), W(L,T,R), N(L,T,R).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    pub phase: Phase,
    pub counts: [u32; 12],
}

impl Observation {
    pub const DIM: usize = 16;

    pub fn features(&self) -> [f64; Self::DIM] {
        let mut f = [0.0; Self::DIM];
        f[self.phase.index()] = 1.0;
        for (o, &c) in f[4..].iter_mut().zip(&self.counts) {
            *o = f64::from(c);
        }
        f
    }
}

#[derive(Clone, Debug, Default)]
struct Lane {
    moving: VecDeque<(usize, f64)>,
    queue: VecDeque<usize>,
    credit: f64,
}

impl Lane {
    fn occupancy(&self) -> usize {
        self.moving.len() + self.queue.len()
    }
}

#[derive(Clone, Debug)]
pub struct Simulator {
    net: RoadNetwork,
    flow: FlowSpec,
    cfg: SimConfig,
    clock: f64,
    next_demand: usize,
    vehicles: Vec<Vehicle>,
    lanes: Vec<Lane>,
    backlog: Vec<VecDeque<usize>>,
    phases: Vec<Phase>,
    yellow_left: Vec<f64>,
    capacity: Vec<usize>,
    metrics: MetricsAccumulator,
}

fn lane_index(road: RoadId, turn: Turn) -> usize {
    road.0 * 3 + turn.index()
}

impl Simulator {
    pub fn new(net: RoadNetwork, flow: FlowSpec, cfg: SimConfig) -> Result<Self, SimError> {
        net.validate()?;
        cfg.validate()?;
        flow.validate(&net)?;
        let capacity = (0..net.roads.len()).map(|r| net.lane_capacity(RoadId(r))).collect();
        let n = net.intersections.len();
        let roads = net.roads.len();
        Ok(Self {
            net,
            flow,
            cfg,
            clock: 0.0,
            next_demand: 0,
            vehicles: Vec::new(),
            lanes: vec![Lane::default(); roads * 3],
            backlog: vec![VecDeque::new(); roads],
            phases: vec![Phase::ALL[0]; n],
            yellow_left: vec![0.0; n],
            capacity,
            metrics: MetricsAccumulator::new(),
        })
    }

    /// Restores the initial state, keeping network, flow and config.
    pub fn reset(&mut self) {
        self.clock = 0.0;
        self.next_demand = 0;
        self.vehicles.clear();
        self.lanes.iter_mut().for_each(|l| *l = Lane::default());
        self.backlog.iter_mut().for_each(VecDeque::clear);
        self.phases.iter_mut().for_each(|p| *p = Phase::ALL[0]);
        self.yellow_left.iter_mut().for_each(|y| *y = 0.0);
        self.metrics = MetricsAccumulator::new();
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.net
    }

    pub fn flow(&self) -> &FlowSpec {
        &self.flow
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn time(&self) -> f64 {
        self.clock
    }

    pub fn agent_count(&self) -> usize {
        self.phases.len()
    }

    pub fn phase(&self, agent: usize) -> Result<Phase, SimError> {
        self.phases.get(agent).copied().ok_or(SimError::UnknownAgent(agent))
    }

    pub fn metrics(&self) -> &MetricsAccumulator {
        &self.metrics
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    /// Places a vehicle directly on the first road of `route`, entering now.
    pub fn spawn_vehicle(&mut self, route: Vec<RoadId>, placement: Placement) -> Result<usize, SimError> {
        let id = self.create_vehicle(route, self.clock)?;
        let lane = lane_index(self.vehicles[id].road(), self.vehicles[id].lane());
        match placement {
            Placement::Traveling { remaining } => {
                self.lanes[lane].moving.push_back((id, self.clock + remaining));
                self.vehicles[id].status = VehicleStatus::Traveling;
            }
            Placement::Queued => {
                self.lanes[lane].queue.push_back(id);
                self.vehicles[id].status = VehicleStatus::Queued;
            }
        }
        self.metrics.record_entry(id, self.clock);
        Ok(id)
    }

    fn create_vehicle(&mut self, route: Vec<RoadId>, enter_time: f64) -> Result<usize, SimError> {
        self.net.validate_route(&route)?;
        let mut lanes = Vec::with_capacity(route.len());
        for k in 0..route.len() {
            let turn = match route.get(k + 1) {
                Some(&next) => self.net.movement_between(route[k], next)?.1.turn,
                None => Turn::Through,
            };
            lanes.push(turn);
        }
        let id = self.vehicles.len();
        self.vehicles.push(Vehicle {
            id,
            route,
            lanes,
            position: 0,
            enter_time,
            exit_time: None,
            status: VehicleStatus::Waiting,
        });
        Ok(id)
    }

    /// Advances one decision interval (`delta_t`) under the given phases.
    pub fn step(&mut self, actions: &[Phase]) -> Result<(), SimError> {
        self.advance(actions, self.cfg.delta_t)
    }

    /// Like [`Simulator::step`] with 1-based phase numbers.
    pub fn step_numbers(&mut self, actions: &[u8]) -> Result<(), SimError> {
        let phases = actions
            .iter()
            .enumerate()
            .map(|(agent, &a)| Phase::new(a).ok_or(SimError::InvalidAction { agent, value: a }))
            .collect::<Result<Vec<_>, _>>()?;
        self.step(&phases)
    }

    /// Advances `seconds` (rounded to whole sub-steps) under the given phases.
    pub fn advance(&mut self, actions: &[Phase], seconds: f64) -> Result<(), SimError> {
        if actions.len() != self.phases.len() {
            return Err(SimError::ActionCount { expected: self.phases.len(), got: actions.len() });
        }
        if !(seconds > 0.0) {
            return Err(SimError::Config(format!("step duration must be positive, got {seconds}")));
        }
        for (i, &a) in actions.iter().enumerate() {
            if a != self.phases[i] {
                self.yellow_left[i] = self.cfg.yellow;
                self.phases[i] = a;
            }
        }
        let n = libm::round(seconds / self.cfg.sim_dt).max(1.0) as usize;
        for _ in 0..n {
            self.substep();
        }
        Ok(())
    }

    fn substep(&mut self) {
        let dt = self.cfg.sim_dt;
        let t0 = self.clock;
        let t1 = t0 + dt;

        while let Some(d) = self.flow.demands.get(self.next_demand) {
            if d.entry_time >= t1 - EPS {
                break;
            }
            let (route, entry) = (d.route.clone(), d.entry_time);
            self.next_demand += 1;
            // Routes were validated with the flow.
            let id = self.create_vehicle(route, entry).expect("validated route");
            let road = self.vehicles[id].route[0];
            self.backlog[road.0].push_back(id);
            self.metrics.record_entry(id, entry);
        }

        for road in 0..self.backlog.len() {
            while let Some(&id) = self.backlog[road].front() {
                let lane = lane_index(RoadId(road), self.vehicles[id].lane());
                if self.lanes[lane].occupancy() >= self.capacity[road] {
                    break;
                }
                self.backlog[road].pop_front();
                let start = self.vehicles[id].enter_time.max(t0);
                let arrive = start + self.net.roads[road].travel_time();
                self.lanes[lane].moving.push_back((id, arrive));
                self.vehicles[id].status = VehicleStatus::Traveling;
            }
        }

        for li in 0..self.lanes.len() {
            while let Some(&(id, arrive)) = self.lanes[li].moving.front() {
                if arrive > t1 + EPS {
                    break;
                }
                self.lanes[li].moving.pop_front();
                let v = &mut self.vehicles[id];
                let road = &self.net.roads[v.road().0];
                if v.position + 1 == v.route.len() || road.to == Endpoint::Boundary {
                    v.status = VehicleStatus::Exited;
                    v.exit_time = Some(arrive);
                    self.metrics.record_exit(id, arrive);
                } else {
                    v.status = VehicleStatus::Queued;
                    self.lanes[li].queue.push_back(id);
                }
            }
        }

        for agent in 0..self.phases.len() {
            let in_yellow = self.yellow_left[agent] > EPS;
            if in_yellow {
                self.yellow_left[agent] -= dt;
            }
            for slot in 0..12 {
                let m = Movement::from_lane_slot(slot);
                let Some(road) = self.net.intersections[agent].incoming_road(m.approach) else { continue };
                let li = lane_index(road, m.turn);
                if in_yellow || !self.phases[agent].permits(m) || self.lanes[li].queue.is_empty() {
                    self.lanes[li].credit = 0.0;
                    continue;
                }
                self.lanes[li].credit += self.net.lane.saturation_rate * dt;
                while self.lanes[li].credit >= 1.0 - EPS {
                    let Some(&id) = self.lanes[li].queue.front() else { break };
                    let v = &self.vehicles[id];
                    let next_road = v.route[v.position + 1];
                    let target = lane_index(next_road, v.lanes[v.position + 1]);
                    if self.lanes[target].occupancy() >= self.capacity[next_road.0] {
                        break;
                    }
                    self.lanes[li].queue.pop_front();
                    self.lanes[li].credit -= 1.0;
                    let arrive = t1 + self.net.roads[next_road.0].travel_time();
                    self.lanes[target].moving.push_back((id, arrive));
                    let v = &mut self.vehicles[id];
                    v.position += 1;
                    v.status = VehicleStatus::Traveling;
                }
                if self.lanes[li].queue.is_empty() {
                    self.lanes[li].credit = 0.0;
                } else {
                    self.lanes[li].credit = self.lanes[li].credit.min(1.0);
                }
            }
        }

        self.clock = t1;
    }

    fn check_agent(&self, agent: usize) -> Result<(), SimError> {
        if agent < self.phases.len() {
            Ok(())
        } else {
            Err(SimError::UnknownAgent(agent))
        }
    }

    fn approach_lane(&self, agent: usize, slot: usize) -> Option<&Lane> {
        let m = Movement::from_lane_slot(slot);
        self.net.intersections[agent].incoming_road(m.approach).map(|r| &self.lanes[lane_index(r, m.turn)])
    }

    pub fn observe(&self, agent: usize) -> Result<Observation, SimError> {
        self.check_agent(agent)?;
        let mut counts = [0u32; 12];
        for (slot, c) in counts.iter_mut().enumerate() {
            *c = self.approach_lane(agent, slot).map_or(0, |l| l.occupancy() as u32);
        }
        Ok(Observation { phase: self.phases[agent], counts })
    }

    /// Observations of all agents as an `N x 16` row-major buffer.
    pub fn observe_all(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.agent_count() * Observation::DIM);
        for a in 0..self.agent_count() {
            out.extend_from_slice(&self.observe(a).expect("valid agent").features());
        }
        out
    }

    /// Stopped vehicles on each approach lane, in observation lane order.
    pub fn queue_lengths(&self, agent: usize) -> Result<[u32; 12], SimError> {
        self.check_agent(agent)?;
        let mut q = [0u32; 12];
        for (slot, c) in q.iter_mut().enumerate() {
            *c = self.approach_lane(agent, slot).map_or(0, |l| l.queue.len() as u32);
        }
        Ok(q)
    }

    /// Negative total queue over the agent's approach lanes.
    pub fn reward(&self, agent: usize) -> Result<f64, SimError> {
        let q = self.queue_lengths(agent)?;
        Ok(-(q.iter().map(|&x| f64::from(x)).sum::<f64>()))
    }

    /// Stopped vehicles on one lane of any road.
    pub fn lane_queue(&self, road: RoadId, turn: Turn) -> usize {
        self.lanes[lane_index(road, turn)].queue.len()
    }

    /// Sum over the phase's movements of upstream queue minus the mean
    /// queue of the downstream road's lanes.
    pub fn pressure(&self, agent: usize, phase: Phase) -> Result<f64, SimError> {
        self.check_agent(agent)?;
        let inter = &self.net.intersections[agent];
        let mut p = 0.0;
        for m in phase.movements() {
            let Some(up) = inter.incoming_road(m.approach) else { continue };
            let upstream = self.lane_queue(up, m.turn) as f64;
            let downstream = inter
                .target_road(m)
                .map_or(0.0, |d| Turn::ALL.iter().map(|&t| self.lane_queue(d, t) as f64).sum::<f64>() / 3.0);
            p += upstream - downstream;
        }
        Ok(p)
    }

    /// Vehicles waiting outside full entry lanes.
    pub fn waiting_to_enter(&self) -> usize {
        self.backlog.iter().map(VecDeque::len).sum()
    }

    /// Labels of the 12 approach lanes, e.g. `EL`, `ET`, `ER`, `SL`, ...
    pub fn lane_labels() -> [[char; 2]; 12] {
        let mut out = [[' '; 2]; 12];
        for (slot, o) in out.iter_mut().enumerate() {
            let m = Movement::from_lane_slot(slot);
            *o = [m.approach.letter(), m.turn.letter()];
        }
        debug_assert_eq!(APPROACH_ORDER.len() * 3, 12);
        out
    }
}
