use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    gae, sample_action, scale_observations, td_error, Actor, AdvantageMode, Critic, Hyperparameters, PpoError,
    RewardAggregation, RolloutBuffer, Transition,
};
use crate::dhg::HypergraphConfig;
use crate::matrix::Matrix;
use crate::nn::{ParameterStore, Tape, Var};
use crate::sim::{Observation, Phase, Simulator};

/// Losses averaged over the minibatches of one or more updates.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub l_recon: f64,
    pub l_clip: f64,
    pub l_value: f64,
    pub minibatches: usize,
}

impl UpdateStats {
    fn absorb(&mut self, other: UpdateStats) {
        let n = self.minibatches + other.minibatches;
        if n == 0 {
            return;
        }
        let w = |a: f64, b: f64| (a * self.minibatches as f64 + b * other.minibatches as f64) / n as f64;
        self.l_recon = w(self.l_recon, other.l_recon);
        self.l_clip = w(self.l_clip, other.l_clip);
        self.l_value = w(self.l_value, other.l_value);
        self.minibatches = n;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStats {
    pub att: f64,
    pub throughput: usize,
    /// Mean over decisions of the mean per-agent reward.
    pub mean_reward: f64,
    pub l_recon: f64,
    pub l_clip: f64,
    pub l_value: f64,
}

struct MinibatchLoss {
    total: Var,
    recon: Var,
    clip: Var,
    value: Var,
}

/// Actor, critic, optimiser state and rollout buffer of one training run.
#[derive(Clone, Debug)]
pub struct Learner {
    pub hp: Hyperparameters,
    pub store: ParameterStore,
    pub actor: Actor,
    pub critic: Critic,
    agents: usize,
    rng: ChaCha8Rng,
    buffer: RolloutBuffer,
}

impl Learner {
    pub fn new(hp: Hyperparameters, agents: usize, seed: u64) -> Result<Self, PpoError> {
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let actor = Actor::new(&mut store, "actor", Observation::DIM, hp.actor_hidden, &mut rng)?;
        let graph = HypergraphConfig {
            obs_dim: Observation::DIM,
            embed_dim: hp.embed_dim,
            heads: hp.heads,
            zeta: hp.zeta,
            lambda: hp.recon_lambda,
            gamma2: hp.gamma2,
        };
        let critic = Critic::new(&mut store, "critic", graph, agents, hp.value_hidden, &mut rng)?;
        let buffer = RolloutBuffer::new(hp.buffer_capacity);
        Ok(Self { hp, store, actor, critic, agents, rng, buffer })
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn buffer(&self) -> &RolloutBuffer {
        &self.buffer
    }

    /// Samples one phase index per agent from the shared policy.
    pub fn act(&mut self, obs: &Matrix) -> Result<(Vec<usize>, Vec<f64>), PpoError> {
        let probs = self.actor.probabilities(&self.store, obs)?;
        let mut actions = Vec::with_capacity(obs.rows());
        let mut log_probs = Vec::with_capacity(obs.rows());
        for r in 0..probs.rows() {
            let (a, lp) = sample_action(probs.row(r), &mut self.rng);
            actions.push(a);
            log_probs.push(lp);
        }
        Ok((actions, log_probs))
    }

    fn aggregate(&self, rewards: &[f64]) -> f64 {
        let sum: f64 = rewards.iter().sum();
        let r = match self.hp.reward_aggregation {
            RewardAggregation::Sum => sum,
            RewardAggregation::Mean => sum / rewards.len().max(1) as f64,
        };
        r * self.hp.reward_scale
    }

    /// Runs one episode from a reset simulator, updating whenever the buffer
    /// fills and once more at the end. `on_step` sees the simulator after
    /// every decision.
    pub fn run_episode<F: FnMut(&Simulator)>(
        &mut self,
        sim: &mut Simulator,
        mut on_step: F,
    ) -> Result<EpisodeStats, PpoError> {
        if sim.agent_count() != self.agents {
            return Err(PpoError::Config(alloc::format!(
                "learner built for {} agents, simulator has {}",
                self.agents,
                sim.agent_count()
            )));
        }
        sim.reset();
        let n = self.agents;
        let scale = self.hp.obs_count_scale;
        let mut stats = UpdateStats::default();
        let mut reward_total = 0.0;
        let mut obs = scale_observations(&sim.observe_all(), n, scale);
        let mut prev = obs.clone();
        for step in 0..self.hp.episode_steps {
            let (value, _) = self.critic.evaluate(&self.store, &obs, &prev)?;
            let (actions, log_probs) = self.act(&obs)?;
            let phases: Vec<Phase> = actions.iter().map(|&a| Phase::ALL[a]).collect();
            sim.step(&phases)?;
            on_step(sim);
            let rewards = (0..n).map(|i| sim.reward(i)).collect::<Result<Vec<_>, _>>()?;
            reward_total += rewards.iter().sum::<f64>() / n as f64;
            let terminal = step + 1 == self.hp.episode_steps;
            let next = scale_observations(&sim.observe_all(), n, scale);
            let t = Transition {
                obs: obs.as_slice().to_vec(),
                prev_obs: prev.as_slice().to_vec(),
                actions,
                log_probs,
                rewards,
                value,
                terminal,
            };
            if self.buffer.push(t).is_err() {
                unreachable!("buffer is drained before it overflows");
            }
            if terminal {
                stats.absorb(self.update(0.0)?);
            } else if self.buffer.is_full() {
                let (bootstrap, _) = self.critic.evaluate(&self.store, &next, &obs)?;
                stats.absorb(self.update(bootstrap)?);
            }
            prev = obs;
            obs = next;
        }
        let att = sim.metrics().average_travel_time(sim.time())?;
        Ok(EpisodeStats {
            att,
            throughput: sim.metrics().throughput(),
            mean_reward: reward_total / self.hp.episode_steps as f64,
            l_recon: stats.l_recon,
            l_clip: stats.l_clip,
            l_value: stats.l_value,
        })
    }

    /// Advantages and value targets of the buffered segment.
    ///
    /// `bootstrap` is the value of the state after the last transition; it
    /// is ignored when that transition is terminal.
    pub fn advantages(&self, bootstrap: f64) -> (Vec<f64>, Vec<f64>) {
        let ts = self.buffer.transitions();
        let deltas: Vec<f64> = ts
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let next = ts.get(k + 1).map_or(bootstrap, |n| n.value);
                td_error(self.aggregate(&t.rewards), t.value, next, self.hp.gamma, t.terminal)
            })
            .collect();
        let adv = gae(&deltas, self.hp.gamma, self.hp.gae_lambda);
        let targets = adv.iter().zip(ts).map(|(a, t)| a + t.value).collect();
        (adv, targets)
    }

    /// Policy-gradient advantages, `T x N` row-major.
    ///
    /// In shared mode every agent receives the joint advantage. In per-agent
    /// mode agent `i` uses its own scaled reward against an equal share of
    /// the joint value, `V / N` for summed rewards and `V` for averaged ones.
    pub fn policy_advantages(&self, bootstrap: f64, joint: &[f64]) -> Vec<f64> {
        let n = self.agents;
        let ts = self.buffer.transitions();
        match self.hp.advantage_mode {
            AdvantageMode::Shared => joint.iter().flat_map(|&a| core::iter::repeat_n(a, n)).collect(),
            AdvantageMode::PerAgent => {
                let share = match self.hp.reward_aggregation {
                    RewardAggregation::Sum => 1.0 / n as f64,
                    RewardAggregation::Mean => 1.0,
                };
                let mut out = vec![0.0; ts.len() * n];
                for i in 0..n {
                    let deltas: Vec<f64> = ts
                        .iter()
                        .enumerate()
                        .map(|(k, t)| {
                            let next = ts.get(k + 1).map_or(bootstrap, |nx| nx.value) * share;
                            let r = t.rewards[i] * self.hp.reward_scale;
                            td_error(r, t.value * share, next, self.hp.gamma, t.terminal)
                        })
                        .collect();
                    for (k, a) in gae(&deltas, self.hp.gamma, self.hp.gae_lambda).into_iter().enumerate() {
                        out[k * n + i] = a;
                    }
                }
                out
            }
        }
    }

    /// Optimises on the buffered segment for `epochs` passes, then empties the buffer.
    pub fn update(&mut self, bootstrap: f64) -> Result<UpdateStats, PpoError> {
        if self.buffer.is_empty() {
            return Ok(UpdateStats::default());
        }
        let (joint, targets) = self.advantages(bootstrap);
        let adv = self.policy_advantages(bootstrap, &joint);
        let mut order: Vec<usize> = (0..self.buffer.len()).collect();
        let mut stats = UpdateStats::default();
        for _ in 0..self.hp.epochs {
            order.shuffle(&mut self.rng);
            for batch in order.chunks(self.hp.batch_size) {
                self.store.zero_grads();
                let mut tape = Tape::new();
                let loss = self.minibatch_loss(&mut tape, batch, &adv, &targets)?;
                let total = tape.scalar(loss.total);
                if !total.is_finite() {
                    return Err(PpoError::NonFinite("loss"));
                }
                tape.backward(loss.total, &mut self.store)?;
                if let Some(max) = self.hp.max_grad_norm {
                    self.store.clip_grad_norm(max);
                }
                self.store.adam_step(self.hp.learning_rate);
                stats.absorb(UpdateStats {
                    l_recon: tape.scalar(loss.recon),
                    l_clip: tape.scalar(loss.clip),
                    l_value: tape.scalar(loss.value),
                    minibatches: 1,
                });
            }
        }
        self.buffer.clear();
        Ok(stats)
    }

    fn minibatch_loss(
        &self,
        tape: &mut Tape,
        batch: &[usize],
        adv: &[f64],
        targets: &[f64],
    ) -> Result<MinibatchLoss, PpoError> {
        let n = self.agents;
        let dim = Observation::DIM;
        let ts = self.buffer.transitions();
        let rows = batch.len() * n;

        let mut batch_adv: Vec<f64> = batch.iter().flat_map(|&k| adv[k * n..(k + 1) * n].iter().copied()).collect();
        if self.hp.normalize_advantages && batch_adv.len() > 1 {
            let m = batch_adv.iter().sum::<f64>() / batch_adv.len() as f64;
            let var = batch_adv.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / batch_adv.len() as f64;
            let sd = libm::sqrt(var) + 1e-8;
            batch_adv.iter_mut().for_each(|a| *a = (*a - m) / sd);
        }

        let mut obs = Vec::with_capacity(rows * dim);
        let mut actions = Vec::with_capacity(rows);
        let mut old = Vec::with_capacity(rows);
        for &k in batch {
            obs.extend_from_slice(&ts[k].obs);
            actions.extend_from_slice(&ts[k].actions);
            old.extend_from_slice(&ts[k].log_probs);
        }
        let obs = tape.constant(Matrix::from_vec(rows, dim, obs));
        let lp = self.actor.log_probs(tape, &self.store, obs)?;
        let chosen = tape.pick_cols(lp, &actions)?;
        let old = tape.constant(Matrix::from_vec(rows, 1, old));
        let advc = tape.constant(Matrix::from_vec(rows, 1, batch_adv));
        let clip = clipped_surrogate_loss(tape, chosen, old, advc, self.hp.clip_eps)?;

        let vars = self.critic.record(tape, &self.store);
        let mut values = Vec::with_capacity(batch.len());
        let mut recons = Vec::with_capacity(batch.len());
        for &k in batch {
            let o = Matrix::from_vec(n, dim, ts[k].obs.clone());
            let p = Matrix::from_vec(n, dim, ts[k].prev_obs.clone());
            let out = self.critic.forward(tape, &vars, &o, &p)?;
            values.push(out.value);
            recons.push(out.recon);
        }
        let values = tape.concat_rows(&values)?;
        let y = tape.constant(Matrix::from_vec(batch.len(), 1, batch.iter().map(|&k| targets[k]).collect()));
        let value = tape.mse(values, y)?;
        let recon = tape.concat_rows(&recons)?;
        let recon = tape.mean(recon)?;
        let lhg_r = tape.scale(recon, self.hp.beta);
        let lhg_v = tape.scale(value, 1.0 - self.hp.beta);
        let lhg = tape.add(lhg_r, lhg_v)?;
        let mut total = tape.add(clip, lhg)?;
        if self.hp.entropy_coef > 0.0 {
            let p = tape.exp(lp);
            let plogp = tape.mul(p, lp)?;
            let neg_entropy = tape.sum(plogp);
            let neg_entropy = tape.scale(neg_entropy, self.hp.entropy_coef / rows as f64);
            total = tape.add(total, neg_entropy)?;
        }
        Ok(MinibatchLoss { total, recon, clip, value })
    }

    /// Runs `episodes` training episodes, reporting each one to `on_episode`.
    pub fn train<F: FnMut(usize, &EpisodeStats)>(
        &mut self,
        sim: &mut Simulator,
        episodes: usize,
        mut on_episode: F,
    ) -> Result<Vec<EpisodeStats>, PpoError> {
        let mut out = Vec::with_capacity(episodes);
        for e in 0..episodes {
            let s = self.run_episode(sim, |_| {})?;
            on_episode(e, &s);
            out.push(s);
        }
        Ok(out)
    }
}

/// Negated mean of `min(r A, clamp(r, 1 - eps, 1 + eps) A)` with `r = exp(logp - old)`.
///
/// All inputs are `rows x 1` columns.
pub fn clipped_surrogate_loss(tape: &mut Tape, logp: Var, old: Var, adv: Var, eps: f64) -> Result<Var, PpoError> {
    let diff = tape.sub(logp, old)?;
    let ratio = tape.exp(diff);
    let s1 = tape.mul(ratio, adv)?;
    let clipped = tape.clamp(ratio, 1.0 - eps, 1.0 + eps);
    let s2 = tape.mul(clipped, adv)?;
    let m = tape.min(s1, s2)?;
    let surr = tape.mean(m)?;
    Ok(tape.scale(surr, -1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_grid, FlowSpec, LaneParams, SimConfig, VehicleDemand};

    fn tiny_sim() -> Simulator {
        let net = build_grid(2, 2, LaneParams::default()).unwrap();
        let entries = net.entry_roads();
        let mut demands = Vec::new();
        for (k, &e) in entries.iter().enumerate() {
            let mut route = vec![e];
            let mut cur = e;
            while let crate::sim::Endpoint::Signal(i) = net.road(cur).to {
                cur = net.intersections[i].outgoing[net.road(cur).heading.index()].unwrap();
                route.push(cur);
            }
            for j in 0..5 {
                demands.push(VehicleDemand { route: route.clone(), entry_time: (k * 3 + j * 17) as f64 });
            }
        }
        Simulator::new(net, FlowSpec::new(demands), SimConfig::default()).unwrap()
    }

    fn small_hp() -> Hyperparameters {
        Hyperparameters {
            embed_dim: 8,
            actor_hidden: 8,
            value_hidden: 8,
            episode_steps: 12,
            batch_size: 5,
            buffer_capacity: 10,
            epochs: 2,
            ..Default::default()
        }
    }

    #[test]
    fn zero_episodes_is_empty() {
        let mut sim = tiny_sim();
        let mut l = Learner::new(small_hp(), 4, 0).unwrap();
        assert!(l.train(&mut sim, 0, |_, _| {}).unwrap().is_empty());
    }

    #[test]
    fn training_is_deterministic_and_drains_buffer() {
        let run = || {
            let mut sim = tiny_sim();
            let mut l = Learner::new(small_hp(), 4, 42).unwrap();
            let stats = l.train(&mut sim, 3, |_, _| {}).unwrap();
            assert!(l.buffer().is_empty());
            (stats, l.store.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>())
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert!(a.iter().all(|s| s.att > 0.0 && s.l_recon >= 0.0));
    }

    #[test]
    fn targets_are_advantage_plus_value() {
        let mut sim = tiny_sim();
        let mut l = Learner::new(small_hp(), 4, 5).unwrap();
        sim.reset();
        let n = 4;
        for k in 0..6 {
            let obs = scale_observations(&sim.observe_all(), n, 0.1);
            let (actions, log_probs) = l.act(&obs).unwrap();
            sim.step(&actions.iter().map(|&a| Phase::ALL[a]).collect::<Vec<_>>()).unwrap();
            let rewards = (0..n).map(|i| sim.reward(i).unwrap()).collect();
            let t = Transition {
                obs: obs.as_slice().to_vec(),
                prev_obs: obs.as_slice().to_vec(),
                actions,
                log_probs,
                rewards,
                value: k as f64 * 0.3 - 0.5,
                terminal: k == 5,
            };
            l.buffer.push(t).unwrap();
        }
        let (adv, y) = l.advantages(7.0);
        for (k, t) in l.buffer.transitions().iter().enumerate() {
            assert!((y[k] - t.value - adv[k]).abs() < 1e-12);
        }
        // Terminal last step ignores the bootstrap.
        let last = &l.buffer.transitions()[5];
        assert!((adv[5] - (l.aggregate(&last.rewards) - last.value)).abs() < 1e-12);
    }

    #[test]
    fn binding_clip_has_zero_gradient() {
        use crate::nn::ParamId;
        let mut store = ParameterStore::new();
        store.add("logp", Matrix::column_vector(&[libm::log(0.9), libm::log(0.1)])).unwrap();
        let mut tape = Tape::new();
        let lp = tape.param(&store, ParamId(0));
        // Ratios 1.8 with A > 0 and 0.2 with A < 0 both bind at eps = 0.3.
        let old = tape.constant(Matrix::column_vector(&[libm::log(0.5), libm::log(0.5)]));
        let adv = tape.constant(Matrix::column_vector(&[1.0, -1.0]));
        let loss = clipped_surrogate_loss(&mut tape, lp, old, adv, 0.3).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(ParamId(0)).as_slice(), &[0.0, 0.0]);
    }
}
