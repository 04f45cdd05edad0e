use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use super::NnError;
use crate::matrix::Matrix;

/// Handle to a parameter inside a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One trainable tensor with its gradient and Adam moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub first_moment: Matrix,
    pub second_moment: Matrix,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Named parameters, their gradients and Adam state.
///
/// Cloning a store produces an independent snapshot, which is how read-only
/// inference copies are handed to other threads.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    step: u64,
    pub adam: AdamConfig,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter with an explicit initial value.
    pub fn add(&mut self, name: &str, value: Matrix) -> Result<ParamId, NnError> {
        if self.find(name).is_some() {
            return Err(NnError::DuplicateParameter(name.to_string()));
        }
        let (r, c) = value.shape();
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad: Matrix::zeros(r, c),
            first_moment: Matrix::zeros(r, c),
            second_moment: Matrix::zeros(r, c),
        });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Glorot-uniform matrix in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId, NnError> {
        let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Matrix::from_vec(fan_in, fan_out, data))
    }

    /// Uniform in `[lo, hi)`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> Result<ParamId, NnError> {
        let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
        self.add(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId, NnError> {
        self.add(name, Matrix::zeros(rows, cols))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].grad
    }

    /// Number of optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Restores the optimizer step counter (checkpoint loading).
    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// Restores a full parameter record (checkpoint loading).
    pub fn push_parameter(&mut self, p: Parameter) -> Result<ParamId, NnError> {
        if self.find(&p.name).is_some() {
            return Err(NnError::DuplicateParameter(p.name));
        }
        let shape = p.value.shape();
        if p.grad.shape() != shape || p.first_moment.shape() != shape || p.second_moment.shape() != shape {
            return Err(NnError::Dimension { op: "push_parameter", lhs: shape, rhs: p.first_moment.shape() });
        }
        self.params.push(p);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        libm::sqrt(self.params.iter().flat_map(|p| p.grad.as_slice()).map(|g| g * g).sum())
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in &mut self.params {
                p.grad.as_mut_slice().iter_mut().for_each(|g| *g *= s);
            }
        }
    }

    /// One Adam update with bias correction over every parameter.
    /// Gradient buffers are left untouched.
    pub fn adam_step(&mut self, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.adam;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        for p in &mut self.params {
            let g = p.grad.as_slice();
            let m = p.first_moment.as_mut_slice();
            let v = p.second_moment.as_mut_slice();
            let w = p.value.as_mut_slice();
            for i in 0..w.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w[i] -= lr * m_hat / (libm::sqrt(v_hat) + epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_parameter_has_matching_grad_buffer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParameterStore::new();
        s.add_glorot("w", 3, 5, &mut rng).unwrap();
        s.add_zeros("b", 1, 5).unwrap();
        for p in s.params() {
            assert_eq!(p.grad.shape(), p.value.shape());
        }
        assert_eq!(s.parameter_count(), 20);
    }

    #[test]
    fn glorot_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = ParameterStore::new();
        let id = s.add_glorot("w", 16, 64, &mut rng).unwrap();
        let bound = (6.0f64 / 80.0).sqrt();
        assert!(s.value(id).as_slice().iter().all(|x| x.abs() < bound));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParameterStore::new();
        s.add_zeros("w", 1, 1).unwrap();
        assert!(matches!(s.add_zeros("w", 1, 1), Err(NnError::DuplicateParameter(_))));
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut s = ParameterStore::new();
        let id = s.add("w", Matrix::row_vector(&[1.5, -2.0])).unwrap();
        s.adam_step(0.1);
        assert_eq!(s.value(id).as_slice(), &[1.5, -2.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_adam_step_moves_by_lr_against_gradient() {
        // With bias correction, m_hat = g and v_hat = g^2, so the step is
        // lr * g / (|g| + eps).
        let mut s = ParameterStore::new();
        let id = s.add("w", Matrix::row_vector(&[0.0, 0.0])).unwrap();
        s.grad_mut(id).as_mut_slice().copy_from_slice(&[0.5, -3.0]);
        let lr = 3e-4;
        s.adam_step(lr);
        let w = s.value(id).as_slice();
        assert!((w[0] + lr * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
        assert!((w[1] - lr * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(s.grad(id).as_slice(), &[0.5, -3.0], "adam must not touch gradients");
    }

    #[test]
    fn two_steps_reduce_convex_quadratic() {
        // loss = 0.5 * (w - 3)^2
        let mut s = ParameterStore::new();
        let id = s.add("w", Matrix::row_vector(&[0.0])).unwrap();
        let loss = |w: f64| 0.5 * (w - 3.0) * (w - 3.0);
        let before = loss(s.value(id).scalar());
        for _ in 0..2 {
            let w = s.value(id).scalar();
            s.zero_grads();
            s.grad_mut(id).as_mut_slice()[0] = w - 3.0;
            s.adam_step(0.1);
        }
        assert!(loss(s.value(id).scalar()) < before);
        assert_eq!(s.step_count(), 2);
    }

    #[test]
    fn zero_grads_clears_everything() {
        let mut s = ParameterStore::new();
        let id = s.add_zeros("w", 2, 2).unwrap();
        s.grad_mut(id).fill(4.0);
        s.zero_grads();
        assert!(s.grad(id).as_slice().iter().all(|&g| g == 0.0));
    }
}
