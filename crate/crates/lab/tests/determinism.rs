use tsc_lab::config::{ControllerKind, ExperimentConfig, HyperparameterConfig};
use tsc_lab::run_experiment;
use tsc_lab::runner::{CHECKPOINT_FILE, RESULTS_FILE};

fn small(dir: &std::path::Path, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        horizon: 400.0,
        out_dir: dir.to_path_buf(),
        hyperparameters: HyperparameterConfig {
            episodes: 3,
            embed_dim: 8,
            actor_hidden: 16,
            value_hidden: 16,
            batch_size: 20,
            epochs: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.synthetic.vehicles = 300;
    cfg.synthetic.gaussian_horizon = 400.0;
    cfg
}

#[test]
fn same_seed_gives_identical_bytes() {
    let root = tempfile::tempdir().unwrap();
    let read = |sub: &str, file: &str| std::fs::read(root.path().join(sub).join(file)).unwrap();
    for controller in [ControllerKind::Fixed, ControllerKind::MaxPressure, ControllerKind::DhLight] {
        let name = controller.name();
        for run in ["a", "b"] {
            let cfg = ExperimentConfig { controller, ..small(&root.path().join(format!("{name}{run}")), 5) };
            run_experiment(&cfg).unwrap();
        }
        assert_eq!(read(&format!("{name}a"), RESULTS_FILE), read(&format!("{name}b"), RESULTS_FILE), "{name}");
    }
    assert_eq!(read("dhlighta", CHECKPOINT_FILE), read("dhlightb", CHECKPOINT_FILE));
}

#[test]
fn different_seeds_differ() {
    let root = tempfile::tempdir().unwrap();
    let a = run_experiment(&small(&root.path().join("a"), 1)).unwrap();
    let b = run_experiment(&small(&root.path().join("b"), 2)).unwrap();
    assert_ne!(a.table.rows()[0].att_secs, b.table.rows()[0].att_secs);
}
