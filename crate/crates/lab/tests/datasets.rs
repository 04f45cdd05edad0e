//! File-backed datasets. Real Hangzhou and Jinan files are only exercised
//! when `TSC_HANGZHOU_DIR` or `TSC_JINAN_DIR` points at a directory holding them.

use std::path::PathBuf;

use tsc_core::sim::{build_grid, LaneParams, SimConfig, Simulator};
use tsc_lab::config::{ControllerKind, DataPaths, DatasetKind, ExperimentConfig};
use tsc_lab::dataset::{
    gen_gaussian_flow, gen_uniform_flow, load_flow, load_roadnet, write_flow, write_roadnet, GaussianFlowParams,
};
use tsc_lab::run_experiment;
use tsc_lab::runner::build_scenario;

#[test]
fn exported_grid_runs_like_the_generated_one() {
    let dir = tempfile::tempdir().unwrap();
    let net = build_grid(4, 4, LaneParams::default()).unwrap();
    let flow = gen_gaussian_flow(0, &net, &GaussianFlowParams::default()).unwrap();
    let (r, f) = (dir.path().join("roadnet.json"), dir.path().join("flow.json"));
    write_roadnet(&net, &r).unwrap();
    write_flow(&flow, &net, &f).unwrap();

    let base = ExperimentConfig { controller: ControllerKind::MaxPressure, ..Default::default() };
    let synth = run_experiment(&ExperimentConfig { out_dir: dir.path().join("a"), ..base.clone() }).unwrap();
    let files = run_experiment(&ExperimentConfig {
        dataset: DatasetKind::Files,
        data: DataPaths { roadnet: Some(r), flow: Some(f), dir: None },
        out_dir: dir.path().join("b"),
        ..base
    })
    .unwrap();
    let (a, b) = (&synth.table.rows()[0], &files.table.rows()[0]);
    assert_eq!(a.throughput, b.throughput);
    assert!((a.att_secs - b.att_secs).abs() < 1e-6, "{} vs {}", a.att_secs, b.att_secs);
}

#[test]
fn six_by_six_preset_has_3000_vehicles() {
    let cfg = ExperimentConfig { dataset: DatasetKind::Synth6x6, ..Default::default() };
    let (net, flow) = build_scenario(&cfg).unwrap();
    assert_eq!(net.intersection_count(), 36);
    assert_eq!(flow.len(), 3000);
    assert_eq!(flow, gen_uniform_flow(&net, 2300.0).unwrap());
}

fn real_dir(var: &str) -> Option<PathBuf> {
    match std::env::var_os(var) {
        Some(d) => Some(PathBuf::from(d)),
        None => {
            eprintln!("skipping: {var} is not set");
            None
        }
    }
}

fn check_real(kind: DatasetKind, var: &str, intersections: usize) {
    let Some(dir) = real_dir(var) else { return };
    let cfg = ExperimentConfig {
        dataset: kind,
        controller: ControllerKind::MaxPressure,
        data: DataPaths { dir: Some(dir), ..Default::default() },
        ..Default::default()
    };
    let (r, f) = cfg.dataset_files().unwrap().unwrap();
    let net = load_roadnet(&r).unwrap();
    assert_eq!(net.intersection_count(), intersections);
    let flow = load_flow(&f, &net).unwrap();
    assert!(!flow.is_empty());
    let mut sim = Simulator::new(net, flow, SimConfig::default()).unwrap();
    for _ in 0..360 {
        let a = tsc_core::control::max_pressure_all(&sim).unwrap();
        sim.step(&a).unwrap();
        assert!(sim.metrics().is_conserved());
    }
    assert!(sim.metrics().throughput() > 0);
}

#[test]
fn hangzhou_release_files() {
    check_real(DatasetKind::Hangzhou, "TSC_HANGZHOU_DIR", 16);
}

#[test]
fn jinan_release_files() {
    check_real(DatasetKind::Jinan, "TSC_JINAN_DIR", 12);
}
