//! Central-difference checks of every differentiable path used in training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsc_core::dhg::HypergraphConfig;
use tsc_core::matrix::Matrix;
use tsc_core::nn::{finite_diff_check, NnError, ParameterStore, Tape, Var};
use tsc_core::ppo::{clipped_surrogate_loss, Actor, Critic, PpoError};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const AGENTS: usize = 4;
const DIM: usize = 8;

fn cfg(heads: usize, zeta: f64) -> HypergraphConfig {
    HypergraphConfig { obs_dim: 16, embed_dim: DIM, heads, zeta, lambda: 0.001, gamma2: 0.2 }
}

fn nn(e: PpoError) -> NnError {
    match e {
        PpoError::Nn(e) => e,
        _ => NnError::Tape("critic"),
    }
}

fn random(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect())
}

/// Moves the state off non-differentiable points: zero biases sit on ReLU
/// kinks for zero inputs, and coefficients near `zeta` or 0 sit on the
/// tail threshold or the L1 kink.
fn smooth_state(store: &mut ParameterStore, zeta: f64, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.param(id).name.clone();
        let is_bias = name.rsplit('.').next().is_some_and(|s| s.starts_with('b') || s.starts_with("v_b"));
        let is_coef = name.ends_with("p_spa") || name.ends_with("p_tem");
        for x in store.value_mut(id).as_mut_slice() {
            if is_bias {
                *x = rng.random_range(-0.5..0.5);
            } else if is_coef {
                while (*x - zeta).abs() < 0.02 || x.abs() < 0.02 {
                    *x = rng.random_range(0.0..1.0);
                }
            }
        }
    }
}

fn critic(seed: u64, heads: usize, zeta: f64) -> (ParameterStore, Critic, Matrix, Matrix, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    let c = Critic::new(&mut store, "critic", cfg(heads, zeta), AGENTS, DIM, &mut rng).unwrap();
    smooth_state(&mut store, zeta, &mut rng);
    let obs = random(AGENTS, 16, 0.05, 2.0, &mut rng);
    let prev = random(AGENTS, 16, 0.05, 2.0, &mut rng);
    (store, c, obs, prev, rng)
}

#[test]
fn reconstruction_loss_gradients() {
    for seed in 0..3 {
        let (mut store, c, obs, prev, _) = critic(seed, 1, 0.3);
        let err = finite_diff_check(&mut store, STEP, |s, t| {
            let vars = c.record(t, s);
            Ok(c.forward(t, &vars, &obs, &prev).map_err(nn)?.recon)
        })
        .unwrap();
        assert!(err <= TOL, "seed {seed}: {err}");
    }
}

#[test]
fn attention_readout_value_mse_gradients() {
    for (seed, heads) in [(10, 1), (11, 2), (12, 4)] {
        let (mut store, c, obs, prev, mut rng) = critic(seed, heads, 0.3);
        let target = rng.random_range(-2.0..2.0);
        let err = finite_diff_check(&mut store, STEP, |s, t| {
            let vars = c.record(t, s);
            let out = c.forward(t, &vars, &obs, &prev).map_err(nn)?;
            let y = t.constant(Matrix::filled(1, 1, target));
            t.mse(out.value, y)
        })
        .unwrap();
        assert!(err <= TOL, "seed {seed}, {heads} heads: {err}");
    }
}

#[test]
fn combined_critic_loss_gradients() {
    let (mut store, c, obs, prev, _) = critic(21, 1, 0.1);
    let err = finite_diff_check(&mut store, STEP, |s, t| {
        let vars = c.record(t, s);
        let out = c.forward(t, &vars, &obs, &prev).map_err(nn)?;
        let y = t.constant(Matrix::filled(1, 1, 0.7));
        let mse = t.mse(out.value, y)?;
        let a = t.scale(out.recon, 0.3);
        let b = t.scale(mse, 0.7);
        t.add(a, b)
    })
    .unwrap();
    assert!(err <= TOL, "{err}");
}

#[test]
fn clip_loss_gradients_through_actor() {
    let eps = 0.3;
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut store = ParameterStore::new();
        let actor = Actor::new(&mut store, "actor", 16, DIM, &mut rng).unwrap();
        smooth_state(&mut store, 0.3, &mut rng);
        // The zero-initialised output layer would make all logits equal.
        let out_w = actor.layers[2].0;
        for x in store.value_mut(out_w).as_mut_slice() {
            *x = rng.random_range(-1.0..1.0);
        }
        let obs = random(AGENTS, 16, 0.05, 2.0, &mut rng);
        let actions: Vec<usize> = (0..AGENTS).map(|_| rng.random_range(0..4)).collect();
        let probs = actor.probabilities(&store, &obs).unwrap();
        // Ratios in each regime, kept 0.05 away from the clip edges.
        let ratios = [0.5, 0.9, 1.2, 1.5];
        let old: Vec<f64> = (0..AGENTS).map(|r| probs.get(r, actions[r]).ln() - f64::ln(ratios[r])).collect();
        let adv: Vec<f64> = (0..AGENTS).map(|r| if r % 2 == 0 { 1.3 } else { -0.8 }).collect();
        let err = finite_diff_check(&mut store, STEP, |s, t| {
            let o = t.constant(obs.clone());
            let lp = actor.log_probs(t, s, o).map_err(nn)?;
            let chosen = t.pick_cols(lp, &actions)?;
            let old = t.constant(Matrix::from_vec(AGENTS, 1, old.clone()));
            let adv = t.constant(Matrix::from_vec(AGENTS, 1, adv.clone()));
            clipped_surrogate_loss(t, chosen, old, adv, eps).map_err(nn)
        })
        .unwrap();
        assert!(err <= TOL, "seed {seed}: {err}");
    }
}

#[test]
fn clip_loss_gradient_vanishes_when_clipped() {
    // r = 1.6 with positive advantage and r = 0.5 with negative advantage both take the flat branch.
    let mut store = ParameterStore::new();
    let id = store.add("logp", Matrix::column_vector(&[0.0, 0.0])).unwrap();
    let old = [-f64::ln(1.6), -f64::ln(0.5)];
    let mut tape = Tape::new();
    let lp: Var = tape.param(&store, id);
    let old = tape.constant(Matrix::column_vector(&old));
    let adv = tape.constant(Matrix::column_vector(&[1.0, -1.0]));
    let loss = clipped_surrogate_loss(&mut tape, lp, old, adv, 0.3).unwrap();
    tape.backward(loss, &mut store).unwrap();
    assert_eq!(store.grad(id).as_slice(), &[0.0, 0.0]);
}
