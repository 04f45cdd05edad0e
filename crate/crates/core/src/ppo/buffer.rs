use alloc::vec::Vec;

/// One joint decision step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// Scaled observations, `N x 16` row-major.
    pub obs: Vec<f64>,
    /// Scaled observations of the previous step; equal to `obs` at episode start.
    pub prev_obs: Vec<f64>,
    /// Phase indices in `0..4`, one per agent.
    pub actions: Vec<usize>,
    /// Log-probabilities of `actions` under the acting policy.
    pub log_probs: Vec<f64>,
    /// Raw per-agent rewards.
    pub rewards: Vec<f64>,
    /// Critic value of the state.
    pub value: f64,
    pub terminal: bool,
}

/// Bounded on-policy storage, drained by every update.
#[derive(Clone, Debug)]
pub struct RolloutBuffer {
    items: Vec<Transition>,
    capacity: usize,
}

impl RolloutBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { items: Vec::with_capacity(capacity), capacity }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
    }

    /// Stores `t`, handing it back when the buffer is already full.
    pub fn push(&mut self, t: Transition) -> Result<(), Transition> {
        if self.is_full() {
            return Err(t);
        }
        self.items.push(t);
        Ok(())
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.items
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(v: f64) -> Transition {
        Transition {
            obs: vec![],
            prev_obs: vec![],
            actions: vec![0],
            log_probs: vec![-1.0],
            rewards: vec![0.0],
            value: v,
            terminal: false,
        }
    }

    #[test]
    fn never_exceeds_capacity() {
        let mut b = RolloutBuffer::new(2);
        assert!(b.push(t(1.0)).is_ok());
        assert!(b.push(t(2.0)).is_ok());
        assert!(b.is_full());
        assert_eq!(b.push(t(3.0)).unwrap_err().value, 3.0);
        assert_eq!(b.len(), 2);
        b.clear();
        assert!(b.is_empty());
    }
}
