use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::SimError;

/// Compass heading. Discriminants increase counter-clockwise so that a left
/// turn is `+1` and a right turn is `-1` modulo 4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    East = 0,
    North = 1,
    West = 2,
    South = 3,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::East, Direction::North, Direction::West, Direction::South];

    pub fn from_index(i: usize) -> Direction {
        Self::ALL[i % 4]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Direction {
        Self::from_index(self.index() + 2)
    }

    pub fn rotate_left(self) -> Direction {
        Self::from_index(self.index() + 1)
    }

    pub fn rotate_right(self) -> Direction {
        Self::from_index(self.index() + 3)
    }

    /// Unit step `(dx, dy)` with `y` pointing north.
    pub fn offset(self) -> (i64, i64) {
        match self {
            Direction::East => (1, 0),
            Direction::North => (0, 1),
            Direction::West => (-1, 0),
            Direction::South => (0, -1),
        }
    }

    /// Nearest compass direction of the vector `(dx, dy)`.
    pub fn from_vector(dx: f64, dy: f64) -> Direction {
        let angle = libm::atan2(dy, dx);
        let quarter = libm::round(angle / core::f64::consts::FRAC_PI_2) as i64;
        Self::from_index(quarter.rem_euclid(4) as usize)
    }

    pub fn letter(self) -> char {
        match self {
            Direction::East => 'E',
            Direction::North => 'N',
            Direction::West => 'W',
            Direction::South => 'S',
        }
    }
}

/// Approach slots in observation order: E, S, W, N.
pub const APPROACH_ORDER: [Direction; 4] = [Direction::East, Direction::South, Direction::West, Direction::North];

/// Position of an approach in [`APPROACH_ORDER`].
pub fn approach_slot(approach: Direction) -> usize {
    match approach {
        Direction::East => 0,
        Direction::South => 1,
        Direction::West => 2,
        Direction::North => 3,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Turn {
    Left = 0,
    Through = 1,
    Right = 2,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Left, Turn::Through, Turn::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Turn taken when changing heading from `from` to `to`; `None` for a U-turn.
    pub fn between(from: Direction, to: Direction) -> Option<Turn> {
        match (to.index() + 4 - from.index()) % 4 {
            0 => Some(Turn::Through),
            1 => Some(Turn::Left),
            3 => Some(Turn::Right),
            _ => None,
        }
    }

    pub fn apply(self, heading: Direction) -> Direction {
        match self {
            Turn::Left => heading.rotate_left(),
            Turn::Through => heading,
            Turn::Right => heading.rotate_right(),
        }
    }

    pub fn letter(self) -> char {
        match self {
            Turn::Left => 'L',
            Turn::Through => 'T',
            Turn::Right => 'R',
        }
    }
}

/// An (approach, turn) pair such as ET: vehicles arriving from the east going straight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Movement {
    pub approach: Direction,
    pub turn: Turn,
}

impl Movement {
    pub const fn new(approach: Direction, turn: Turn) -> Self {
        Self { approach, turn }
    }

    /// Index of this movement's lane in the 12-slot observation order.
    pub fn lane_slot(self) -> usize {
        approach_slot(self.approach) * 3 + self.turn.index()
    }

    pub fn from_lane_slot(slot: usize) -> Movement {
        Movement { approach: APPROACH_ORDER[slot / 3], turn: Turn::ALL[slot % 3] }
    }
}

/// One of the four signal phases. Right turns are permitted under every phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Phase(u8);

impl Phase {
    pub const ALL: [Phase; 4] = [Phase(1), Phase(2), Phase(3), Phase(4)];

    /// Phase from its 1-based number.
    pub fn new(number: u8) -> Option<Phase> {
        (1..=4).contains(&number).then_some(Phase(number))
    }

    pub fn number(self) -> u8 {
        self.0
    }

    /// 0-based index, as used by the policy's action space.
    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }

    pub fn from_index(i: usize) -> Option<Phase> {
        u8::try_from(i + 1).ok().and_then(Phase::new)
    }

    /// The two non-right-turn movements shown green in this phase.
    pub fn movements(self) -> [Movement; 2] {
        use Direction::*;
        use Turn::*;
        match self.0 {
            1 => [Movement::new(East, Through), Movement::new(West, Through)],
            2 => [Movement::new(East, Left), Movement::new(West, Left)],
            3 => [Movement::new(South, Through), Movement::new(North, Through)],
            _ => [Movement::new(North, Left), Movement::new(South, Left)],
        }
    }

    pub fn permits(self, m: Movement) -> bool {
        m.turn == Turn::Right || self.movements().contains(&m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RoadId(pub usize);

/// Either a signalized intersection (by index) or the network boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Signal(usize),
    Boundary,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaneParams {
    /// Metres.
    pub length: f64,
    /// Free-flow speed in m/s.
    pub speed: f64,
    /// Vehicles per second of green per lane.
    pub saturation_rate: f64,
    /// Jam spacing per vehicle in metres; lane capacity is `floor(length / spacing)`.
    pub vehicle_spacing: f64,
}

impl Default for LaneParams {
    fn default() -> Self {
        Self { length: 300.0, speed: 11.11, saturation_rate: 0.5, vehicle_spacing: 7.5 }
    }
}

impl LaneParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.length > 0.0 && self.speed > 0.0 && self.saturation_rate > 0.0 && self.vehicle_spacing > 0.0;
        if !ok || !(self.length.is_finite() && self.speed.is_finite() && self.saturation_rate.is_finite()) {
            return Err(SimError::Config(format!("invalid lane parameters {self:?}")));
        }
        Ok(())
    }
}

/// A directed road with one lane per turn type.
#[derive(Clone, Debug, PartialEq)]
pub struct Road {
    pub name: String,
    pub from: Endpoint,
    pub to: Endpoint,
    pub heading: Direction,
    pub length: f64,
    pub speed: f64,
}

impl Road {
    pub fn travel_time(&self) -> f64 {
        self.length / self.speed
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Intersection {
    pub name: String,
    /// Incoming road per approach, indexed by [`approach_slot`].
    pub incoming: [Option<RoadId>; 4],
    /// Outgoing road per heading, indexed by [`Direction::index`].
    pub outgoing: [Option<RoadId>; 4],
    /// Grid coordinates when built from a grid.
    pub grid_pos: Option<(usize, usize)>,
}

impl Intersection {
    pub fn incoming_road(&self, approach: Direction) -> Option<RoadId> {
        self.incoming[approach_slot(approach)]
    }

    /// Outgoing road a movement discharges into.
    pub fn target_road(&self, m: Movement) -> Option<RoadId> {
        let heading = m.approach.opposite();
        self.outgoing[m.turn.apply(heading).index()]
    }
}

/// Signalized intersections plus directed roads. Intersection ids are
/// indices into `intersections`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoadNetwork {
    pub intersections: Vec<Intersection>,
    pub roads: Vec<Road>,
    pub lane: LaneParams,
    /// `(rows, cols)` for generated grids.
    pub grid: Option<(usize, usize)>,
}

impl RoadNetwork {
    pub fn road(&self, id: RoadId) -> &Road {
        &self.roads[id.0]
    }

    pub fn intersection_count(&self) -> usize {
        self.intersections.len()
    }

    pub fn road_by_name(&self, name: &str) -> Option<RoadId> {
        self.roads.iter().position(|r| r.name == name).map(RoadId)
    }

    /// Per-lane vehicle capacity of a road.
    pub fn lane_capacity(&self, id: RoadId) -> usize {
        let c = libm::floor(self.road(id).length / self.lane.vehicle_spacing) as usize;
        c.max(1)
    }

    /// Roads that start at the boundary.
    pub fn entry_roads(&self) -> Vec<RoadId> {
        (0..self.roads.len()).map(RoadId).filter(|&r| self.roads[r.0].from == Endpoint::Boundary).collect()
    }

    /// Roads that end at the boundary.
    pub fn exit_roads(&self) -> Vec<RoadId> {
        (0..self.roads.len()).map(RoadId).filter(|&r| self.roads[r.0].to == Endpoint::Boundary).collect()
    }

    /// Movement used at the end of `from` when continuing onto `to`.
    pub fn movement_between(&self, from: RoadId, to: RoadId) -> Result<(usize, Movement), SimError> {
        let (a, b) = (self.road(from), self.road(to));
        let node = match (a.to, b.from) {
            (Endpoint::Signal(x), Endpoint::Signal(y)) if x == y => x,
            _ => return Err(SimError::Route(format!("road `{}` does not connect to `{}`", a.name, b.name))),
        };
        let inter = &self.intersections[node];
        let approach = a.heading.opposite();
        if inter.incoming_road(approach) != Some(from) {
            return Err(SimError::Route(format!("road `{}` is not an approach of `{}`", a.name, inter.name)));
        }
        let turn = Turn::between(a.heading, b.heading)
            .ok_or_else(|| SimError::Route(format!("U-turn from `{}` to `{}`", a.name, b.name)))?;
        Ok((node, Movement::new(approach, turn)))
    }

    /// Checks that a route is a connected sequence of roads without U-turns.
    pub fn validate_route(&self, route: &[RoadId]) -> Result<(), SimError> {
        if route.is_empty() {
            return Err(SimError::Route("empty route".into()));
        }
        if let Some(bad) = route.iter().find(|r| r.0 >= self.roads.len()) {
            return Err(SimError::Route(format!("unknown road id {}", bad.0)));
        }
        for w in route.windows(2) {
            self.movement_between(w[0], w[1])?;
        }
        Ok(())
    }

    /// Structural checks: every road endpoint exists and every approach
    /// road ends at the intersection listing it.
    pub fn validate(&self) -> Result<(), SimError> {
        self.lane.validate()?;
        for r in &self.roads {
            for e in [r.from, r.to] {
                if let Endpoint::Signal(i) = e {
                    if i >= self.intersections.len() {
                        return Err(SimError::Config(format!("road `{}` references missing intersection {i}", r.name)));
                    }
                }
            }
        }
        for (i, inter) in self.intersections.iter().enumerate() {
            for (slot, road) in inter.incoming.iter().enumerate() {
                if let Some(id) = road {
                    let r = self.road(*id);
                    if r.to != Endpoint::Signal(i) || approach_slot(r.heading.opposite()) != slot {
                        return Err(SimError::Config(format!(
                            "inconsistent approach road `{}` at `{}`",
                            r.name, inter.name
                        )));
                    }
                }
            }
            for (h, road) in inter.outgoing.iter().enumerate() {
                if let Some(id) = road {
                    let r = self.road(*id);
                    if r.from != Endpoint::Signal(i) || r.heading.index() != h {
                        return Err(SimError::Config(format!(
                            "inconsistent exit road `{}` at `{}`",
                            r.name, inter.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Name of the intersection at 1-based grid coordinates (`x` east, `y` north).
pub fn grid_intersection_name(x: usize, y: usize) -> String {
    format!("intersection_{x}_{y}")
}

/// Name of the road leaving grid node `(x, y)` with the given heading.
pub fn grid_road_name(x: usize, y: usize, heading: Direction) -> String {
    format!("road_{x}_{y}_{}", heading.index())
}

/// Builds a `rows x cols` grid with boundary entry and exit roads on the
/// periphery. Intersection ids are row-major from the north-west corner.
pub fn build_grid(rows: usize, cols: usize, lane: LaneParams) -> Result<RoadNetwork, SimError> {
    if rows == 0 || cols == 0 {
        return Err(SimError::Config(format!("grid dimensions must be positive, got {rows}x{cols}")));
    }
    lane.validate()?;
    // Grid node (x, y): x in 1..=cols west to east, y in 1..=rows south to north.
    // Row-major from the north-west: id = (rows - y) * cols + (x - 1).
    let id_of = |x: i64, y: i64| -> Option<usize> {
        if x >= 1 && x <= cols as i64 && y >= 1 && y <= rows as i64 {
            Some((rows - y as usize) * cols + (x as usize - 1))
        } else {
            None
        }
    };
    let mut intersections: Vec<Intersection> = Vec::with_capacity(rows * cols);
    for id in 0..rows * cols {
        let (r, c) = (id / cols, id % cols);
        let (x, y) = (c + 1, rows - r);
        intersections.push(Intersection {
            name: grid_intersection_name(x, y),
            incoming: [None; 4],
            outgoing: [None; 4],
            grid_pos: Some((r, c)),
        });
    }
    let mut roads = Vec::new();
    let add_road = |roads: &mut Vec<Road>, inters: &mut [Intersection], x: i64, y: i64, heading: Direction| {
        let (dx, dy) = heading.offset();
        let from = id_of(x, y);
        let to = id_of(x + dx, y + dy);
        let id = RoadId(roads.len());
        roads.push(Road {
            name: grid_road_name(x as usize, y as usize, heading),
            from: from.map_or(Endpoint::Boundary, Endpoint::Signal),
            to: to.map_or(Endpoint::Boundary, Endpoint::Signal),
            heading,
            length: lane.length,
            speed: lane.speed,
        });
        if let Some(f) = from {
            inters[f].outgoing[heading.index()] = Some(id);
        }
        if let Some(t) = to {
            inters[t].incoming[approach_slot(heading.opposite())] = Some(id);
        }
    };
    for y in 1..=rows as i64 {
        for x in 1..=cols as i64 {
            for h in Direction::ALL {
                add_road(&mut roads, &mut intersections, x, y, h);
            }
        }
    }
    // Entry roads from the boundary ring.
    for x in 1..=cols as i64 {
        add_road(&mut roads, &mut intersections, x, 0, Direction::North);
        add_road(&mut roads, &mut intersections, x, rows as i64 + 1, Direction::South);
    }
    for y in 1..=rows as i64 {
        add_road(&mut roads, &mut intersections, 0, y, Direction::East);
        add_road(&mut roads, &mut intersections, cols as i64 + 1, y, Direction::West);
    }
    let net = RoadNetwork { intersections, roads, lane, grid: Some((rows, cols)) };
    net.validate()?;
    Ok(net)
}
