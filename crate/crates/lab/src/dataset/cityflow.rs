use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tsc_core::sim::{
    approach_slot, grid_intersection_name, Direction, Endpoint, FlowSpec, Intersection, LaneParams, Movement, Phase,
    Road, RoadId, RoadNetwork, Turn, VehicleDemand, APPROACH_ORDER,
};

use super::DataError;

#[derive(Serialize, Deserialize)]
struct Point {
    x: f64,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct RoadnetFile {
    intersections: Vec<IntersectionRec>,
    roads: Vec<RoadRec>,
}

#[derive(Serialize, Deserialize)]
struct IntersectionRec {
    id: String,
    point: Point,
    #[serde(default)]
    width: f64,
    #[serde(default)]
    roads: Vec<String>,
    #[serde(default, rename = "roadLinks")]
    road_links: Vec<RoadLinkRec>,
    #[serde(default, rename = "trafficLight", skip_serializing_if = "Option::is_none")]
    traffic_light: Option<TrafficLightRec>,
    #[serde(default, rename = "virtual")]
    is_virtual: bool,
}

#[derive(Serialize, Deserialize)]
struct RoadLinkRec {
    #[serde(rename = "type")]
    kind: String,
    #[serde(rename = "startRoad")]
    start_road: String,
    #[serde(rename = "endRoad")]
    end_road: String,
    #[serde(default)]
    direction: i64,
    #[serde(default, rename = "laneLinks")]
    lane_links: Vec<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct TrafficLightRec {
    #[serde(default, rename = "roadLinkIndices")]
    road_link_indices: Vec<usize>,
    #[serde(default)]
    lightphases: Vec<LightPhaseRec>,
}

#[derive(Serialize, Deserialize)]
struct LightPhaseRec {
    #[serde(default)]
    time: f64,
    #[serde(default, rename = "availableRoadLinks")]
    available: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RoadRec {
    id: String,
    #[serde(default)]
    points: Vec<Point>,
    #[serde(default)]
    lanes: Vec<LaneRec>,
    #[serde(rename = "startIntersection")]
    start: String,
    #[serde(rename = "endIntersection")]
    end: String,
}

#[derive(Serialize, Deserialize)]
struct LaneRec {
    #[serde(default)]
    width: f64,
    #[serde(default, rename = "maxSpeed")]
    max_speed: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct FlowRec {
    #[serde(default)]
    vehicle: serde_json::Value,
    route: Vec<String>,
    #[serde(default = "one")]
    interval: f64,
    #[serde(rename = "startTime")]
    start_time: f64,
    #[serde(rename = "endTime")]
    end_time: f64,
}

fn one() -> f64 {
    1.0
}

fn read(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T, DataError> {
    serde_json::from_str(text).map_err(|e| DataError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn load_roadnet(path: &Path) -> Result<RoadNetwork, DataError> {
    parse_roadnet(&read(path)?, path)
}

/// Parses roadnet JSON; `origin` is only used in error messages.
pub fn parse_roadnet(text: &str, origin: &Path) -> Result<RoadNetwork, DataError> {
    let file: RoadnetFile = parse_json(text, origin)?;
    let lane = LaneParams::default();

    let mut endpoint = HashMap::new();
    let mut points = HashMap::new();
    let mut signals = Vec::new();
    for rec in &file.intersections {
        points.insert(rec.id.as_str(), (rec.point.x, rec.point.y));
        if rec.is_virtual {
            endpoint.insert(rec.id.as_str(), Endpoint::Boundary);
        } else {
            endpoint.insert(rec.id.as_str(), Endpoint::Signal(signals.len()));
            signals.push(rec);
        }
    }

    let mut intersections: Vec<Intersection> = signals
        .iter()
        .map(|rec| Intersection { name: rec.id.clone(), incoming: [None; 4], outgoing: [None; 4], grid_pos: None })
        .collect();
    let mut roads = Vec::with_capacity(file.roads.len());
    for rec in &file.roads {
        let ends = [&rec.start, &rec.end].map(|id| {
            endpoint.get(id.as_str()).copied().ok_or_else(|| DataError::Unsupported {
                intersection: id.clone(),
                reason: format!("referenced by road `{}` but not defined", rec.id),
            })
        });
        let [from, to] = ends;
        let (from, to) = (from?, to?);
        let geometry: Vec<(f64, f64)> = if rec.points.len() >= 2 {
            rec.points.iter().map(|p| (p.x, p.y)).collect()
        } else {
            vec![points[rec.start.as_str()], points[rec.end.as_str()]]
        };
        let (first, last) = (geometry[0], geometry[geometry.len() - 1]);
        let length: f64 = geometry.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum();
        if !(length > 0.0) {
            return Err(DataError::Unsupported {
                intersection: rec.start.clone(),
                reason: format!("road `{}` has zero length", rec.id),
            });
        }
        let speed = rec.lanes.iter().find_map(|l| l.max_speed).unwrap_or(lane.speed);
        let heading = Direction::from_vector(last.0 - first.0, last.1 - first.1);
        let id = RoadId(roads.len());
        if let Endpoint::Signal(i) = to {
            let slot = approach_slot(heading.opposite());
            if let Some(prev) = intersections[i].incoming[slot] {
                let prev_name: &str = &file.roads[prev.0].id;
                return Err(DataError::Unsupported {
                    intersection: intersections[i].name.clone(),
                    reason: format!("roads `{prev_name}` and `{}` share an approach", rec.id),
                });
            }
            intersections[i].incoming[slot] = Some(id);
        }
        if let Endpoint::Signal(i) = from {
            let slot = heading.index();
            if let Some(prev) = intersections[i].outgoing[slot] {
                let prev_name: &str = &file.roads[prev.0].id;
                return Err(DataError::Unsupported {
                    intersection: intersections[i].name.clone(),
                    reason: format!("roads `{prev_name}` and `{}` leave in the same direction", rec.id),
                });
            }
            intersections[i].outgoing[slot] = Some(id);
        }
        roads.push(Road { name: rec.id.clone(), from, to, heading, length, speed });
    }

    let net = RoadNetwork { intersections, roads, lane, grid: None };
    net.validate()?;
    for (i, rec) in signals.iter().enumerate() {
        check_phases(&net, i, rec)?;
    }
    Ok(net)
}

/// Every internal phase serving at least one declared road link must match
/// the non-right movement set of some light phase in the file.
fn check_phases(net: &RoadNetwork, node: usize, rec: &IntersectionRec) -> Result<(), DataError> {
    let unsupported = |reason: String| DataError::Unsupported { intersection: rec.id.clone(), reason };
    let mut link_moves = Vec::with_capacity(rec.road_links.len());
    for link in &rec.road_links {
        let ids = [&link.start_road, &link.end_road].map(|n| net.road_by_name(n));
        let (Some(a), Some(b)) = (ids[0], ids[1]) else {
            return Err(DataError::UnknownRoad {
                context: format!("road link at `{}`", rec.id),
                road: link.start_road.clone(),
            });
        };
        let (at, m) = net.movement_between(a, b).map_err(|e| unsupported(e.to_string()))?;
        if at != node {
            return Err(unsupported(format!(
                "road link `{}` -> `{}` belongs elsewhere",
                link.start_road, link.end_road
            )));
        }
        link_moves.push(m);
    }
    let light_sets: Vec<Vec<Movement>> = rec
        .traffic_light
        .iter()
        .flat_map(|t| &t.lightphases)
        .map(|ph| {
            let mut s: Vec<Movement> = ph
                .available
                .iter()
                .filter_map(|&k| link_moves.get(k).copied())
                .filter(|m| m.turn != Turn::Right)
                .collect();
            s.sort_by_key(|m| m.lane_slot());
            s.dedup();
            s
        })
        .collect();
    for phase in Phase::ALL {
        let mut wanted: Vec<Movement> = phase.movements().into_iter().filter(|m| link_moves.contains(m)).collect();
        wanted.sort_by_key(|m| m.lane_slot());
        if !wanted.is_empty() && !light_sets.contains(&wanted) {
            return Err(unsupported(format!("no signal phase serves the movements of phase {}", phase.number())));
        }
    }
    Ok(())
}

/// CityFlow-style roadnet JSON for a network built as a grid.
pub fn roadnet_to_json(net: &RoadNetwork) -> Result<String, DataError> {
    let (rows, _) = net.grid.ok_or_else(|| DataError::Config("roadnet export needs a grid network".into()))?;
    let spacing = net.lane.length;
    let grid_xy = |i: usize| -> Result<(i64, i64), DataError> {
        let (r, c) = net.intersections[i]
            .grid_pos
            .ok_or_else(|| DataError::Config("roadnet export needs grid coordinates".into()))?;
        Ok((c as i64 + 1, (rows - r) as i64))
    };
    let mut recs: Vec<IntersectionRec> = Vec::new();
    for (i, inter) in net.intersections.iter().enumerate() {
        let (x, y) = grid_xy(i)?;
        let mut links = Vec::new();
        let mut by_slot = [[None; 3]; 4];
        for approach in APPROACH_ORDER {
            for turn in Turn::ALL {
                let m = Movement::new(approach, turn);
                if let (Some(a), Some(b)) = (inter.incoming_road(approach), inter.target_road(m)) {
                    by_slot[approach_slot(approach)][turn.index()] = Some(links.len());
                    links.push(RoadLinkRec {
                        kind: match turn {
                            Turn::Left => "turn_left",
                            Turn::Through => "go_straight",
                            Turn::Right => "turn_right",
                        }
                        .into(),
                        start_road: net.road(a).name.clone(),
                        end_road: net.road(b).name.clone(),
                        direction: 0,
                        lane_links: Vec::new(),
                    });
                }
            }
        }
        let rights: Vec<usize> = by_slot.iter().filter_map(|s| s[Turn::Right.index()]).collect();
        let mut lightphases = vec![LightPhaseRec { time: 5.0, available: rights.clone() }];
        for phase in Phase::ALL {
            let mut available: Vec<usize> =
                phase.movements().iter().filter_map(|m| by_slot[approach_slot(m.approach)][m.turn.index()]).collect();
            available.extend(&rights);
            lightphases.push(LightPhaseRec { time: 30.0, available });
        }
        let mut road_names: Vec<String> = Vec::new();
        for r in inter.incoming.iter().chain(&inter.outgoing).flatten() {
            road_names.push(net.road(*r).name.clone());
        }
        recs.push(IntersectionRec {
            id: inter.name.clone(),
            point: Point { x: x as f64 * spacing, y: y as f64 * spacing },
            width: 10.0,
            roads: road_names,
            traffic_light: Some(TrafficLightRec { road_link_indices: (0..links.len()).collect(), lightphases }),
            road_links: links,
            is_virtual: false,
        });
    }

    let mut virtual_nodes: BTreeMap<(i64, i64), Vec<String>> = BTreeMap::new();
    let mut road_recs = Vec::with_capacity(net.roads.len());
    for road in &net.roads {
        let (dx, dy) = road.heading.offset();
        let (from_xy, to_xy) = match (road.from, road.to) {
            (Endpoint::Signal(a), Endpoint::Signal(b)) => (grid_xy(a)?, grid_xy(b)?),
            (Endpoint::Signal(a), Endpoint::Boundary) => {
                let (x, y) = grid_xy(a)?;
                ((x, y), (x + dx, y + dy))
            }
            (Endpoint::Boundary, Endpoint::Signal(b)) => {
                let (x, y) = grid_xy(b)?;
                ((x - dx, y - dy), (x, y))
            }
            (Endpoint::Boundary, Endpoint::Boundary) => {
                return Err(DataError::Config(format!("road `{}` has no signalized end", road.name)))
            }
        };
        for (e, xy) in [(road.from, from_xy), (road.to, to_xy)] {
            if e == Endpoint::Boundary {
                virtual_nodes.entry(xy).or_default().push(road.name.clone());
            }
        }
        let name = |(x, y): (i64, i64)| grid_intersection_name(x as usize, y as usize);
        let pt = |(x, y): (i64, i64)| Point { x: x as f64 * spacing, y: y as f64 * spacing };
        road_recs.push(RoadRec {
            id: road.name.clone(),
            points: vec![pt(from_xy), pt(to_xy)],
            lanes: (0..3).map(|_| LaneRec { width: 3.0, max_speed: Some(road.speed) }).collect(),
            start: name(from_xy),
            end: name(to_xy),
        });
    }
    for ((x, y), roads) in virtual_nodes {
        recs.push(IntersectionRec {
            id: grid_intersection_name(x as usize, y as usize),
            point: Point { x: x as f64 * spacing, y: y as f64 * spacing },
            width: 0.0,
            roads,
            road_links: Vec::new(),
            traffic_light: None,
            is_virtual: true,
        });
    }
    let file = RoadnetFile { intersections: recs, roads: road_recs };
    Ok(serde_json::to_string_pretty(&file).expect("roadnet serialization cannot fail"))
}

pub fn write_roadnet(net: &RoadNetwork, path: &Path) -> Result<(), DataError> {
    let text = roadnet_to_json(net)?;
    std::fs::write(path, text).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

pub fn load_flow(path: &Path, net: &RoadNetwork) -> Result<FlowSpec, DataError> {
    parse_flow(&read(path)?, path, net)
}

/// Expands each record into arrivals at `start, start + interval, ...` up to and including `end`.
pub fn parse_flow(text: &str, origin: &Path, net: &RoadNetwork) -> Result<FlowSpec, DataError> {
    let records: Vec<FlowRec> = parse_json(text, origin)?;
    let names: HashMap<&str, RoadId> =
        net.roads.iter().enumerate().map(|(i, r)| (r.name.as_str(), RoadId(i))).collect();
    let mut demands = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let route = rec
            .route
            .iter()
            .map(|n| {
                names.get(n.as_str()).copied().ok_or_else(|| DataError::UnknownRoad {
                    context: format!("{} flow record {i}", origin.display()),
                    road: n.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        net.validate_route(&route)?;
        let bad_times = !(rec.start_time.is_finite() && rec.end_time.is_finite()) || rec.start_time < 0.0;
        if bad_times || rec.end_time < rec.start_time {
            return Err(DataError::Config(format!("flow record {i}: invalid time window")));
        }
        if rec.end_time > rec.start_time && !(rec.interval > 0.0) {
            return Err(DataError::Config(format!("flow record {i}: interval must be positive")));
        }
        let mut k = 0.0;
        loop {
            let t = rec.start_time + k * rec.interval;
            if t > rec.end_time {
                break;
            }
            demands.push(VehicleDemand { route: route.clone(), entry_time: t });
            if rec.end_time == rec.start_time {
                break;
            }
            k += 1.0;
        }
    }
    Ok(FlowSpec::new(demands))
}

/// One record per demand, with CityFlow's customary vehicle attributes.
pub fn flow_to_json(flow: &FlowSpec, net: &RoadNetwork) -> String {
    let vehicle = serde_json::json!({
        "length": 5.0, "width": 2.0, "maxPosAcc": 2.0, "maxNegAcc": 4.5, "usualPosAcc": 2.0,
        "usualNegAcc": 4.5, "minGap": 2.5, "maxSpeed": net.lane.speed, "headwayTime": 1.5
    });
    let records: Vec<FlowRec> = flow
        .demands
        .iter()
        .map(|d| FlowRec {
            vehicle: vehicle.clone(),
            route: d.route.iter().map(|r| net.road(*r).name.clone()).collect(),
            interval: 1.0,
            start_time: d.entry_time,
            end_time: d.entry_time,
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("flow serialization cannot fail")
}

pub fn write_flow(flow: &FlowSpec, net: &RoadNetwork, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, flow_to_json(flow, net)).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tsc_core::sim::build_grid;

    const ONE: &str = r#"{
      "intersections": [
        {"id": "c", "point": {"x": 0, "y": 0}, "virtual": false,
         "roadLinks": [
           {"type": "go_straight", "startRoad": "w_in", "endRoad": "e_out"},
           {"type": "go_straight", "startRoad": "e_in", "endRoad": "w_out"},
           {"type": "go_straight", "startRoad": "s_in", "endRoad": "n_out"},
           {"type": "go_straight", "startRoad": "n_in", "endRoad": "s_out"}
         ],
         "trafficLight": {"lightphases": [
           {"time": 30, "availableRoadLinks": [0, 1]},
           {"time": 30, "availableRoadLinks": [2, 3]}
         ]}},
        {"id": "e", "point": {"x": 300, "y": 0}, "virtual": true},
        {"id": "w", "point": {"x": -300, "y": 0}, "virtual": true},
        {"id": "n", "point": {"x": 0, "y": 300}, "virtual": true},
        {"id": "s", "point": {"x": 0, "y": -300}, "virtual": true}
      ],
      "roads": [
        {"id": "w_in", "startIntersection": "w", "endIntersection": "c"},
        {"id": "e_out", "startIntersection": "c", "endIntersection": "e"},
        {"id": "e_in", "startIntersection": "e", "endIntersection": "c"},
        {"id": "w_out", "startIntersection": "c", "endIntersection": "w"},
        {"id": "s_in", "startIntersection": "s", "endIntersection": "c"},
        {"id": "n_out", "startIntersection": "c", "endIntersection": "n"},
        {"id": "n_in", "startIntersection": "n", "endIntersection": "c"},
        {"id": "s_out", "startIntersection": "c", "endIntersection": "s"}
      ]
    }"#;

    fn origin() -> &'static Path {
        Path::new("inline.json")
    }

    #[test]
    fn minimal_single_intersection() {
        // Turning links are absent, so phases 2 and 4 have nothing to serve.
        let net = parse_roadnet(ONE, origin()).unwrap();
        assert_eq!(net.intersection_count(), 1);
        assert_eq!(net.entry_roads().len(), 4);
        assert_eq!(net.road(net.road_by_name("w_in").unwrap()).heading, Direction::East);
        assert_eq!(net.road(net.road_by_name("w_in").unwrap()).length, 300.0);
    }

    #[test]
    fn unmatched_phase_is_unsupported() {
        let broken = ONE.replace("\"availableRoadLinks\": [2, 3]", "\"availableRoadLinks\": [2]");
        let err = parse_roadnet(&broken, origin()).unwrap_err();
        assert!(matches!(err, DataError::Unsupported { ref intersection, .. } if intersection == "c"), "{err}");
    }

    #[test]
    fn shared_approach_is_unsupported() {
        let extra = ONE.replace(
            r#"{"id": "w_in", "#,
            r#"{"id": "w_in2", "startIntersection": "w", "endIntersection": "c"}, {"id": "w_in", "#,
        );
        assert!(matches!(parse_roadnet(&extra, origin()), Err(DataError::Unsupported { .. })));
    }

    #[test]
    fn malformed_json_reports_location() {
        let err = parse_roadnet("{\n  \"intersections\": [,]\n}", origin()).unwrap_err();
        match err {
            DataError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn grid_roadnet_round_trips() {
        let grid = build_grid(3, 4, LaneParams::default()).unwrap();
        let loaded = parse_roadnet(&roadnet_to_json(&grid).unwrap(), origin()).unwrap();
        assert_eq!(loaded.intersection_count(), 12);
        assert_eq!(loaded.intersections.len(), grid.intersections.len());
        for (a, b) in loaded.intersections.iter().zip(&grid.intersections) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.incoming, b.incoming);
            assert_eq!(a.outgoing, b.outgoing);
        }
        for (a, b) in loaded.roads.iter().zip(&grid.roads) {
            assert_eq!((&a.name, a.from, a.to, a.heading), (&b.name, b.from, b.to, b.heading));
            assert!((a.length - b.length).abs() < 1e-9);
        }
    }

    #[test]
    fn flow_expansion_and_errors() {
        let net = parse_roadnet(ONE, origin()).unwrap();
        let text = r#"[
          {"vehicle": {}, "route": ["w_in", "e_out"], "interval": 5, "startTime": 0, "endTime": 10},
          {"vehicle": {}, "route": ["s_in"], "interval": 1, "startTime": 7, "endTime": 7}
        ]"#;
        let flow = parse_flow(text, origin(), &net).unwrap();
        let times: Vec<f64> = flow.demands.iter().map(|d| d.entry_time).collect();
        assert_eq!(times, [0.0, 5.0, 7.0, 10.0]);

        let unknown = r#"[{"route": ["nowhere"], "interval": 1, "startTime": 0, "endTime": 0}]"#;
        assert!(matches!(parse_flow(unknown, origin(), &net), Err(DataError::UnknownRoad { .. })));
        let u_turn = r#"[{"route": ["w_in", "w_out"], "interval": 1, "startTime": 0, "endTime": 0}]"#;
        assert!(matches!(parse_flow(u_turn, origin(), &net), Err(DataError::Sim(_))));
    }

    #[test]
    fn flow_round_trips_exactly() {
        let net = build_grid(2, 2, LaneParams::default()).unwrap();
        let flow = super::super::gen_gaussian_flow(5, &net, &Default::default()).unwrap();
        let back = parse_flow(&flow_to_json(&flow, &net), origin(), &net).unwrap();
        assert_eq!(back, flow);
    }
}
