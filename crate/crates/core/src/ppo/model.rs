use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::PpoError;
use crate::dhg::{DirectedHyperedge, EncoderVars, HypergraphConfig, HypergraphEncoder};
use crate::matrix::Matrix;
use crate::nn::{NnError, ParamId, ParameterStore, Tape, Var};
use crate::sim::Observation;

/// Builds the `N x 16` network input, scaling the lane counts but not the phase one-hot.
pub fn scale_observations(raw: &[f64], agents: usize, count_scale: f64) -> Matrix {
    let dim = Observation::DIM;
    assert_eq!(raw.len(), agents * dim, "observation buffer length");
    let mut m = Matrix::from_vec(agents, dim, raw.to_vec());
    for r in 0..agents {
        for x in &mut m.row_mut(r)[4..] {
            *x *= count_scale;
        }
    }
    m
}

/// Shared policy MLP `obs -> hidden -> hidden -> 4` with a log-softmax head.
#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    pub obs_dim: usize,
    pub layers: [(ParamId, ParamId); 3],
}

impl Actor {
    /// The output layer starts at zero, so the initial policy is uniform.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        obs_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, PpoError> {
        let l1 = (
            store.add_glorot(&format!("{prefix}.w1"), obs_dim, hidden, rng)?,
            store.add_zeros(&format!("{prefix}.b1"), 1, hidden)?,
        );
        let l2 = (
            store.add_glorot(&format!("{prefix}.w2"), hidden, hidden, rng)?,
            store.add_zeros(&format!("{prefix}.b2"), 1, hidden)?,
        );
        let l3 =
            (store.add_zeros(&format!("{prefix}.w3"), hidden, 4)?, store.add_zeros(&format!("{prefix}.b3"), 1, 4)?);
        Ok(Self { obs_dim, layers: [l1, l2, l3] })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Row-wise log-probabilities over the 4 phases for `obs` (`rows x obs_dim`).
    pub fn log_probs(&self, tape: &mut Tape, store: &ParameterStore, obs: Var) -> Result<Var, PpoError> {
        let cols = tape.value(obs).cols();
        if cols != self.obs_dim {
            return Err(
                NnError::Dimension { op: "actor input", lhs: tape.value(obs).shape(), rhs: (0, self.obs_dim) }.into()
            );
        }
        let mut x = obs;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let (w, b) = (tape.param(store, w), tape.param(store, b));
            x = tape.dense(x, w, b)?;
            if k < 2 {
                x = tape.relu(x);
            }
        }
        Ok(tape.log_softmax_rows(x))
    }

    /// Phase distributions, one row per observation row.
    pub fn probabilities(&self, store: &ParameterStore, obs: &Matrix) -> Result<Matrix, PpoError> {
        let mut tape = Tape::new();
        let o = tape.constant(obs.clone());
        let lp = self.log_probs(&mut tape, store, o)?;
        Ok(tape.value(lp).map(libm::exp))
    }
}

/// Centralised value function: hypergraph encoder, readout, then `d -> hidden -> 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub encoder: HypergraphEncoder,
    pub head: [(ParamId, ParamId); 2],
}

#[derive(Clone, Debug)]
pub struct CriticVars {
    encoder: EncoderVars,
    head: [(Var, Var); 2],
}

#[derive(Clone, Debug)]
pub struct CriticOutput {
    /// `1 x 1` state value.
    pub value: Var,
    /// `1 x 1` reconstruction loss of the state.
    pub recon: Var,
    pub edges: Vec<DirectedHyperedge>,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        cfg: HypergraphConfig,
        agents: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, PpoError> {
        let encoder = HypergraphEncoder::new(store, &format!("{prefix}.graph"), cfg, agents, rng)?;
        let d = cfg.embed_dim;
        let head = [
            (
                store.add_glorot(&format!("{prefix}.v_w1"), d, hidden, rng)?,
                store.add_zeros(&format!("{prefix}.v_b1"), 1, hidden)?,
            ),
            (
                store.add_glorot(&format!("{prefix}.v_w2"), hidden, 1, rng)?,
                store.add_zeros(&format!("{prefix}.v_b2"), 1, 1)?,
            ),
        ];
        Ok(Self { encoder, head })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.param_ids();
        ids.extend(self.head.iter().flat_map(|&(w, b)| [w, b]));
        ids
    }

    pub fn record(&self, tape: &mut Tape, store: &ParameterStore) -> CriticVars {
        CriticVars {
            encoder: self.encoder.record(tape, store),
            head: self.head.map(|(w, b)| (tape.param(store, w), tape.param(store, b))),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &CriticVars,
        obs: &Matrix,
        prev_obs: &Matrix,
    ) -> Result<CriticOutput, PpoError> {
        let out = self.encoder.forward(tape, &vars.encoder, obs, prev_obs)?;
        let [(w1, b1), (w2, b2)] = vars.head;
        let h = tape.dense(out.readout, w1, b1)?;
        let h = tape.relu(h);
        let value = tape.dense(h, w2, b2)?;
        Ok(CriticOutput { value, recon: out.recon_loss, edges: out.edges })
    }

    /// State value and reconstruction loss without keeping the tape.
    pub fn evaluate(&self, store: &ParameterStore, obs: &Matrix, prev_obs: &Matrix) -> Result<(f64, f64), PpoError> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, store);
        let out = self.forward(&mut tape, &vars, obs, prev_obs)?;
        Ok((tape.scalar(out.value), tape.scalar(out.recon)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, 16);
        for r in 0..n {
            m.set(r, rng.random_range(0..4), 1.0);
            for c in 4..16 {
                m.set(r, c, f64::from(rng.random_range(0..20u32)) * 0.1);
            }
        }
        m
    }

    #[test]
    fn fresh_actor_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParameterStore::new();
        let actor = Actor::new(&mut s, "actor", 16, 64, &mut rng).unwrap();
        let p = actor.probabilities(&s, &obs(&mut rng, 3)).unwrap();
        assert!(p.as_slice().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn actor_rows_are_distributions_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParameterStore::new();
        let actor = Actor::new(&mut s, "actor", 16, 64, &mut rng).unwrap();
        let w3 = actor.layers[2].0;
        for x in s.value_mut(w3).as_mut_slice() {
            *x = rng.random_range(-1.0..1.0);
        }
        let o = obs(&mut rng, 5);
        let p = actor.probabilities(&s, &o).unwrap();
        for r in 0..5 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(p.row(r).iter().all(|&x| x > 0.0));
        }
        assert_eq!(p, actor.probabilities(&s, &o).unwrap());
        assert!(actor.probabilities(&s, &Matrix::zeros(2, 15)).is_err());
    }

    #[test]
    fn critic_value_is_finite_and_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParameterStore::new();
        let cfg = HypergraphConfig { embed_dim: 8, heads: 2, ..Default::default() };
        let critic = Critic::new(&mut s, "critic", cfg, 4, 16, &mut rng).unwrap();
        let (o, p) = (obs(&mut rng, 4), obs(&mut rng, 4));
        let (v, l) = critic.evaluate(&s, &o, &p).unwrap();
        assert!(v.is_finite() && l >= 0.0);
        assert_eq!((v, l), critic.evaluate(&s, &o, &p).unwrap());
    }

    #[test]
    fn scaling_leaves_phase_bits() {
        let raw: Vec<f64> = (0..32).map(|i| i as f64).collect();
        let m = scale_observations(&raw, 2, 0.5);
        assert_eq!(&m.row(0)[..4], &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(m.get(1, 4), 10.0);
    }
}
