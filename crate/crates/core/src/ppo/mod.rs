//! Multi-agent PPO with a shared actor and a hypergraph critic.

mod buffer;
mod model;
mod trainer;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

pub use buffer::{RolloutBuffer, Transition};
pub use model::{scale_observations, Actor, Critic, CriticOutput};
pub use trainer::{clipped_surrogate_loss, EpisodeStats, Learner, UpdateStats};

use crate::dhg::DhgError;
use crate::nn::NnError;
use crate::sim::SimError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PpoError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Graph(#[from] DhgError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("non-finite {0} during training")]
    NonFinite(&'static str),
}

/// How per-agent rewards become the single reward seen by the critic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardAggregation {
    Sum,
    Mean,
}

/// Which advantage drives each agent's policy gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdvantageMode {
    /// The joint advantage of the aggregated reward, identical for all agents.
    Shared,
    /// Each agent's own reward against its share of the joint value.
    PerAgent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparameters {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub episodes: usize,
    /// Rollout buffer capacity; an update runs whenever it fills.
    pub buffer_capacity: usize,
    pub heads: usize,
    pub recon_lambda: f64,
    pub gamma2: f64,
    /// Weight of the reconstruction loss against the value loss.
    pub beta: f64,
    pub zeta: f64,
    pub embed_dim: usize,
    pub actor_hidden: usize,
    pub value_hidden: usize,
    /// Optimisation passes over the buffer per update.
    pub epochs: usize,
    /// Decisions per episode.
    pub episode_steps: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: Option<f64>,
    /// Multiplier applied to the 12 lane counts of each observation.
    pub obs_count_scale: f64,
    /// Multiplier applied to the aggregated reward.
    pub reward_scale: f64,
    pub reward_aggregation: RewardAggregation,
    pub advantage_mode: AdvantageMode,
    /// Standardise advantages per minibatch before the clipped objective.
    pub normalize_advantages: bool,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            gamma: 0.91,
            gae_lambda: 0.86,
            clip_eps: 0.3,
            learning_rate: 3e-4,
            batch_size: 50,
            episodes: 100,
            buffer_capacity: 1000,
            heads: 1,
            recon_lambda: 0.001,
            gamma2: 0.2,
            beta: 0.3,
            zeta: 0.3,
            embed_dim: 32,
            actor_hidden: 64,
            value_hidden: 64,
            epochs: 4,
            episode_steps: 360,
            entropy_coef: 0.0,
            max_grad_norm: None,
            obs_count_scale: 0.1,
            reward_scale: 0.01,
            reward_aggregation: RewardAggregation::Sum,
            advantage_mode: AdvantageMode::PerAgent,
            normalize_advantages: true,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), PpoError> {
        let err = |m: String| Err(PpoError::Config(m));
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.gamma) {
            return err(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !unit(self.gae_lambda) {
            return err(format!("gae_lambda must be in (0, 1], got {}", self.gae_lambda));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps.is_finite()) {
            return err(format!("clip_eps must be positive, got {}", self.clip_eps));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return err(format!("beta must be in [0, 1], got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.zeta) {
            return err(format!("zeta must be in [0, 1), got {}", self.zeta));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return err(format!(
                "need 0 < batch_size <= buffer_capacity, got {} and {}",
                self.batch_size, self.buffer_capacity
            ));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return err(format!("embed_dim {} is not divisible by {} heads", self.embed_dim, self.heads));
        }
        if self.epochs == 0 || self.episode_steps == 0 || self.actor_hidden == 0 || self.value_hidden == 0 {
            return err("epochs, episode_steps and hidden sizes must be positive".into());
        }
        let nonneg = [self.recon_lambda, self.gamma2, self.entropy_coef, self.obs_count_scale, self.reward_scale];
        if nonneg.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return err("weights and scales must be finite and non-negative".into());
        }
        if let Some(g) = self.max_grad_norm {
            if !(g > 0.0) {
                return err(format!("max_grad_norm must be positive, got {g}"));
            }
        }
        Ok(())
    }
}

/// `r + gamma * v_next * (1 - terminal) - v`.
pub fn td_error(reward: f64, value: f64, next_value: f64, gamma: f64, terminal: bool) -> f64 {
    let bootstrap = if terminal { 0.0 } else { gamma * next_value };
    reward + bootstrap - value
}

/// Discounted sums `A_t = sum_k (gamma * lambda)^k delta_{t+k}` by backward recursion.
pub fn gae(deltas: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let mut out = alloc::vec![0.0; deltas.len()];
    let mut acc = 0.0;
    for t in (0..deltas.len()).rev() {
        acc = deltas[t] + gamma * lambda * acc;
        out[t] = acc;
    }
    out
}

pub fn probability_ratio(logp_new: f64, logp_old: f64) -> f64 {
    libm::exp(logp_new - logp_old)
}

/// Negated mean clipped surrogate.
pub fn ppo_clip_loss(ratios: &[f64], advantages: &[f64], eps: f64) -> Result<f64, PpoError> {
    if ratios.len() != advantages.len() {
        return Err(PpoError::Config(format!("{} ratios but {} advantages", ratios.len(), advantages.len())));
    }
    if ratios.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = ratios.iter().zip(advantages).map(|(&r, &a)| (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a)).sum();
    Ok(-total / ratios.len() as f64)
}

/// `beta * recon + (1 - beta) * mse`.
pub fn critic_loss(mse: f64, recon: f64, beta: f64) -> Result<f64, PpoError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(PpoError::Config(format!("beta must be in [0, 1], got {beta}")));
    }
    Ok(beta * recon + (1.0 - beta) * mse)
}

/// Draws an index from `probs` and returns it with its log-probability.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> (usize, f64) {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = None;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc && p > 0.0 {
            chosen = Some(i);
            break;
        }
    }
    // Rounding can leave `u` just above the total; fall back to the last positive entry.
    let i = chosen.unwrap_or_else(|| probs.iter().rposition(|&p| p > 0.0).unwrap_or(0));
    (i, libm::log(probs[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn td_examples() {
        assert_eq!(td_error(0.0, 0.0, 0.0, 0.91, false), 0.0);
        assert!((td_error(1.0, 1.0, 2.0, 0.91, false) - 1.82).abs() < 1e-12);
        assert_eq!(td_error(1.0, 1.0, 123.0, 0.91, true), 0.0);
    }

    #[test]
    fn gae_examples() {
        let a = gae(&[1.0, 2.0], 0.91, 0.86);
        assert!((a[0] - (1.0 + 0.91 * 0.86 * 2.0)).abs() < 1e-12);
        assert!((a[0] - 2.5652).abs() < 1e-4);
        assert_eq!(a[1], 2.0);
        let d = [0.3, -1.0, 2.5];
        assert_eq!(gae(&d, 0.91, 0.0), d);
        assert!(gae(&[], 0.9, 0.9).is_empty());
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(probability_ratio(-0.7, -0.7), 1.0);
        assert!((probability_ratio(libm::log(2.0), 0.0) - 2.0).abs() < 1e-15);
        let (a, b) = (-0.3f64, -1.9f64);
        assert!((probability_ratio(a, b) - libm::exp(a) / libm::exp(b)).abs() < 1e-12);
    }

    #[test]
    fn clip_examples() {
        assert_eq!(ppo_clip_loss(&[1.0], &[1.7], 0.3).unwrap(), -1.7);
        assert!((ppo_clip_loss(&[1.5], &[2.0], 0.3).unwrap() + 2.6).abs() < 1e-12);
        assert!((ppo_clip_loss(&[0.5], &[-1.0], 0.3).unwrap() - 0.7).abs() < 1e-12);
        assert!(ppo_clip_loss(&[1.0], &[], 0.3).is_err());
    }

    #[test]
    fn critic_loss_examples() {
        assert_eq!(critic_loss(9.0, 2.5, 1.0).unwrap(), 2.5);
        assert_eq!(critic_loss(0.0, 0.0, 0.0).unwrap(), 0.0);
        assert!((critic_loss(4.0, 2.0, 0.3).unwrap() - 3.4).abs() < 1e-12);
        assert!(critic_loss(1.0, 1.0, 1.5).is_err());
        assert!(critic_loss(1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_action(&[1.0, 0.0, 0.0, 0.0], &mut rng), (0, 0.0));
        }
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_action(&[0.25; 4], &mut rng).0] += 1;
        }
        let sd = libm::sqrt(n as f64 * 0.25 * 0.75);
        for c in counts {
            assert!((c as f64 - n as f64 * 0.25).abs() < 3.0 * sd, "{counts:?}");
        }
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = a.clone();
        let p = [0.1, 0.2, 0.3, 0.4];
        for _ in 0..50 {
            assert_eq!(sample_action(&p, &mut a), sample_action(&p, &mut b));
        }
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(Hyperparameters::default().validate().is_ok());
        let bad = [
            Hyperparameters { gamma: 0.0, ..Default::default() },
            Hyperparameters { beta: 1.1, ..Default::default() },
            Hyperparameters { clip_eps: 0.0, ..Default::default() },
            Hyperparameters { buffer_capacity: 10, ..Default::default() },
            Hyperparameters { heads: 3, ..Default::default() },
            Hyperparameters { zeta: 1.0, ..Default::default() },
        ];
        for hp in bad {
            assert!(hp.validate().is_err(), "{hp:?}");
        }
    }
}
