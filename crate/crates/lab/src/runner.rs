//! Seeded experiment runs and parameter sweeps.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use tsc_core::control::max_pressure_all;
use tsc_core::ppo::{Learner, PpoError};
use tsc_core::sim::{build_grid, FlowSpec, LaneParams, Phase, RoadNetwork, Simulator};

use crate::checkpoint;
use crate::config::{ControllerKind, DatasetKind, ExperimentConfig, SweepSpec};
use crate::dataset::{gen_gaussian_flow, gen_uniform_flow, load_flow, load_roadnet};
use crate::dump::{HypergraphLog, ReplayLog, HYPERGRAPH_FILE, REPLAY_FILE};
use crate::error::LabError;
use crate::plot::{emit_plots, BAR_TAIL};
use crate::results::{ResultRow, ResultsTable};

pub const RESULTS_FILE: &str = "results.csv";
pub const CONFIG_FILE: &str = "config_resolved.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint_final.tsck";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";

/// Builds the road network and demand selected by the config.
pub fn build_scenario(cfg: &ExperimentConfig) -> Result<(RoadNetwork, FlowSpec), LabError> {
    match cfg.dataset {
        DatasetKind::Synth4x4 => {
            let net = build_grid(4, 4, LaneParams::default())?;
            let flow = gen_gaussian_flow(cfg.seed, &net, &cfg.synthetic.gaussian()?)?;
            Ok((net, flow))
        }
        DatasetKind::Synth6x6 => {
            let net = build_grid(6, 6, LaneParams::default())?;
            let flow = gen_uniform_flow(&net, cfg.synthetic.uniform_horizon)?;
            Ok((net, flow))
        }
        _ => {
            let (r, f) = cfg.dataset_files()?.expect("file-backed dataset");
            let net = load_roadnet(&r)?;
            let flow = load_flow(&f, &net)?;
            Ok((net, flow))
        }
    }
}

pub fn check_conservation(sim: &Simulator, step: usize) -> Result<(), LabError> {
    let m = sim.metrics();
    if m.is_conserved() {
        Ok(())
    } else {
        Err(LabError::Conservation {
            step,
            entered: m.vehicles_entered(),
            in_network: m.vehicles_in_network(),
            exited: m.vehicles_exited(),
        })
    }
}

/// What one run produced.
#[derive(Debug)]
pub struct RunOutput {
    pub run_id: String,
    pub table: ResultsTable,
    pub out_dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
}

impl RunOutput {
    pub fn tail_mean_att(&self, k: usize) -> f64 {
        self.table.tail_mean_att(&self.run_id, k).expect("every run has at least one row")
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, LabError> {
    run_experiment_with(cfg, |_| {})
}

/// Runs one experiment, calling `on_row` as each results row is produced.
pub fn run_experiment_with<F: FnMut(&ResultRow)>(cfg: &ExperimentConfig, on_row: F) -> Result<RunOutput, LabError> {
    let run_id = cfg.run_id();
    execute(cfg, &run_id, on_row).map_err(|e| e.in_run(&run_id))
}

fn execute<F: FnMut(&ResultRow)>(cfg: &ExperimentConfig, run_id: &str, mut on_row: F) -> Result<RunOutput, LabError> {
    cfg.validate()?;
    let steps = cfg.episode_steps()?;
    let (net, flow) = build_scenario(cfg)?;
    let mut sim = Simulator::new(net, flow, cfg.sim_config())?;
    let out_dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&out_dir).map_err(|e| LabError::io(&out_dir, e))?;

    let mut resolved = cfg.clone();
    resolved.run_id = Some(run_id.to_string());
    let mut artifacts = Vec::new();
    let config_path = out_dir.join(CONFIG_FILE);
    std::fs::write(&config_path, resolved.to_toml()).map_err(|e| LabError::io(&config_path, e))?;
    artifacts.push(config_path);

    let mut table = ResultsTable::new();
    let mut replay = cfg.replay_log.then(ReplayLog::new);
    let row = |episode, att_secs, throughput, mean_reward, losses: Option<(f64, f64)>, wall: f64| ResultRow {
        run_id: run_id.to_string(),
        episode,
        controller: cfg.controller.name().to_string(),
        seed: cfg.seed,
        att_secs,
        throughput,
        mean_reward,
        l_recon: losses.map(|l| l.0),
        l_clip: losses.map(|l| l.1),
        wall_secs: if cfg.record_wall_time { wall } else { 0.0 },
    };

    match cfg.controller {
        ControllerKind::Fixed | ControllerKind::MaxPressure => {
            let start = Instant::now();
            let (att, throughput, reward) = run_baseline(cfg, &mut sim, steps, replay.as_mut())?;
            let r = row(0, att, throughput, reward, None, start.elapsed().as_secs_f64());
            table.push(r.clone())?;
            on_row(&r);
        }
        ControllerKind::DhLight => {
            let hp = cfg.hyperparameters()?;
            let episodes = hp.episodes;
            let mut learner = Learner::new(hp, sim.agent_count(), cfg.seed)?;
            let mut graph_log = cfg.hypergraph_dump.then(HypergraphLog::new);
            for episode in 0..episodes {
                let start = Instant::now();
                let last = episode + 1 == episodes;
                let mut step = 0;
                let mut failure = None;
                let stats = learner.run_episode(&mut sim, |s| {
                    if failure.is_none() {
                        failure = check_conservation(s, step).err();
                        if last {
                            if let Some(log) = replay.as_mut() {
                                if let Err(e) = log.record(s) {
                                    failure = Some(e);
                                }
                            }
                        }
                    }
                    step += 1;
                })?;
                if let Some(e) = failure {
                    return Err(e);
                }
                if !(stats.l_recon.is_finite() && stats.l_clip.is_finite()) {
                    return Err(PpoError::NonFinite("loss").into());
                }
                let r = row(
                    episode,
                    stats.att,
                    stats.throughput,
                    stats.mean_reward,
                    Some((stats.l_recon, stats.l_clip)),
                    start.elapsed().as_secs_f64(),
                );
                table.push(r.clone())?;
                on_row(&r);
                if let Some(log) = graph_log.as_mut() {
                    log.record(episode, &learner.critic.encoder.hyperedges(&learner.store));
                }
            }
            let ckpt = out_dir.join(CHECKPOINT_FILE);
            checkpoint::save(&learner.store, &ckpt)?;
            artifacts.push(ckpt);
            if let Some(log) = graph_log {
                let p = out_dir.join(HYPERGRAPH_FILE);
                log.write(&p)?;
                artifacts.push(p);
            }
        }
    }

    if let Some(log) = replay {
        let p = out_dir.join(REPLAY_FILE);
        log.write(&p)?;
        artifacts.push(p);
    }
    let results = out_dir.join(RESULTS_FILE);
    table.write(&results)?;
    artifacts.push(results);
    artifacts.extend(emit_plots(&table, &out_dir)?);
    Ok(RunOutput { run_id: run_id.to_string(), table, out_dir, artifacts })
}

/// One episode of a classical controller. Returns ATT, throughput and mean reward.
pub fn run_baseline(
    cfg: &ExperimentConfig,
    sim: &mut Simulator,
    steps: usize,
    mut replay: Option<&mut ReplayLog>,
) -> Result<(f64, usize, f64), LabError> {
    let plan = match cfg.controller {
        ControllerKind::Fixed => Some(cfg.fixed_time_plan()?),
        ControllerKind::MaxPressure => None,
        ControllerKind::DhLight => return Err(LabError::Config("dhlight is not a baseline controller".into())),
    };
    sim.reset();
    let n = sim.agent_count();
    let mut reward = 0.0;
    for step in 0..steps {
        let actions: Vec<Phase> = match &plan {
            Some(p) => vec![p.phase_at(sim.time()); n],
            None => max_pressure_all(sim)?,
        };
        sim.step(&actions)?;
        check_conservation(sim, step)?;
        if let Some(log) = replay.as_deref_mut() {
            log.record(sim)?;
        }
        let mut r = 0.0;
        for agent in 0..n {
            r += sim.reward(agent)?;
        }
        reward += r / n as f64;
    }
    let att = sim.metrics().average_travel_time(sim.time())?;
    Ok((att, sim.metrics().throughput(), reward / steps as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub param: String,
    pub value: f64,
    pub run_id: String,
    /// Mean ATT of the last episodes of the sub-run.
    pub att_secs: f64,
    pub throughput: usize,
}

#[derive(Debug)]
pub struct SweepOutput {
    pub table: ResultsTable,
    pub points: Vec<SweepPoint>,
    pub out_dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
}

fn sweep_label(param: &str, value: f64) -> String {
    format!("{param}={value}")
}

/// Sub-run configs of a sweep, one per value, each with its own output directory.
pub fn sweep_configs(cfg: &ExperimentConfig, spec: &SweepSpec) -> Result<Vec<ExperimentConfig>, LabError> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.values.len());
    for &v in &spec.values {
        let mut c = cfg.with_param(&spec.param, v)?;
        let label = sweep_label(&spec.param, v);
        c.sweep = None;
        c.out_dir = cfg.out_dir.join(format!("{}_{v}", spec.param));
        c.run_id = Some(label);
        c.validate()?;
        out.push(c);
    }
    Ok(out)
}

/// Runs every sweep value on its own worker thread and merges the results.
pub fn run_sweep(cfg: &ExperimentConfig, spec: &SweepSpec) -> Result<SweepOutput, LabError> {
    let subs = sweep_configs(cfg, spec)?;
    let outputs: Vec<Result<RunOutput, LabError>> = std::thread::scope(|s| {
        let handles: Vec<_> = subs.iter().map(|c| s.spawn(move || run_experiment(c))).collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|panic| std::panic::resume_unwind(panic))).collect()
    });

    let out_dir = cfg.out_dir.clone();
    let mut table = ResultsTable::new();
    let mut points = Vec::new();
    let mut artifacts = Vec::new();
    for (o, v) in outputs.into_iter().zip(&spec.values) {
        let o = o?;
        points.push(SweepPoint {
            param: spec.param.clone(),
            value: *v,
            run_id: o.run_id.clone(),
            att_secs: o.tail_mean_att(BAR_TAIL),
            throughput: o.table.rows().last().map_or(0, |r| r.throughput),
        });
        artifacts.extend(o.artifacts);
        table.extend(o.table)?;
    }

    let mut resolved = cfg.clone();
    resolved.sweep = Some(spec.clone());
    let p = out_dir.join(CONFIG_FILE);
    std::fs::write(&p, resolved.to_toml()).map_err(|e| LabError::io(&p, e))?;
    artifacts.push(p);
    let p = out_dir.join(RESULTS_FILE);
    table.write(&p)?;
    artifacts.push(p);
    let p = out_dir.join(SWEEP_SUMMARY_FILE);
    write_summary(&points, &p)?;
    artifacts.push(p);
    artifacts.extend(emit_plots(&table, &out_dir)?);
    Ok(SweepOutput { table, points, out_dir, artifacts })
}

fn write_summary(points: &[SweepPoint], path: &Path) -> Result<(), LabError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p).expect("in-memory write");
    }
    let bytes = w.into_inner().expect("in-memory flush");
    std::fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::HyperparameterConfig;

    fn tiny(controller: ControllerKind, dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            controller,
            horizon: 200.0,
            out_dir: dir.to_path_buf(),
            hyperparameters: HyperparameterConfig {
                episodes: 2,
                embed_dim: 8,
                actor_hidden: 8,
                value_hidden: 8,
                batch_size: 10,
                epochs: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        cfg.synthetic.vehicles = 120;
        cfg.synthetic.gaussian_horizon = 200.0;
        cfg
    }

    #[test]
    fn fixed_run_is_one_row_without_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&tiny(ControllerKind::Fixed, dir.path())).unwrap();
        assert_eq!(out.table.len(), 1);
        assert_eq!(out.table.rows()[0].l_recon, None);
        assert!(!dir.path().join(CHECKPOINT_FILE).exists());
        assert!(dir.path().join(RESULTS_FILE).exists());
        let cfg = ExperimentConfig::load(&dir.path().join(CONFIG_FILE)).unwrap();
        assert_eq!(cfg.run_id.as_deref(), Some("fixed-synth4x4-s0"));
    }

    #[test]
    fn dhlight_run_writes_rows_checkpoint_and_dumps() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(ControllerKind::DhLight, dir.path());
        cfg.replay_log = true;
        cfg.hypergraph_dump = true;
        let mut seen = 0;
        let out = run_experiment_with(&cfg, |_| seen += 1).unwrap();
        assert_eq!((out.table.len(), seen), (2, 2));
        let store = checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert!(!store.is_empty());
        let replay = std::fs::read_to_string(dir.path().join(REPLAY_FILE)).unwrap();
        assert_eq!(replay.lines().count(), 1 + 20 * 16);
        let graph = std::fs::read_to_string(dir.path().join(HYPERGRAPH_FILE)).unwrap();
        assert_eq!(graph.lines().count(), 1 + 2 * 32);
        assert_eq!(ResultsTable::read(&dir.path().join(RESULTS_FILE)).unwrap(), out.table);
    }

    #[test]
    fn sweep_merges_sub_runs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(ControllerKind::MaxPressure, dir.path());
        let spec = SweepSpec { param: "seed".into(), values: vec![0.0, 1.0] };
        let out = run_sweep(&cfg, &spec).unwrap();
        assert_eq!(out.table.run_ids(), vec!["seed=0", "seed=1"]);
        assert_eq!(out.points.len(), 2);
        assert!(dir.path().join("seed_1").join(RESULTS_FILE).exists());
        let summary = std::fs::read_to_string(dir.path().join(SWEEP_SUMMARY_FILE)).unwrap();
        assert!(summary.starts_with("param,value,run_id,att_secs,throughput"));
        assert_eq!(summary.lines().count(), 3);
    }

    #[test]
    fn errors_carry_run_context() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(ControllerKind::Fixed, dir.path());
        cfg.fixed_time.splits = [30.0, 30.0, 30.0, 20.0];
        let err = run_experiment(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("fixed-synth4x4-s0"));
    }
}
