//! Client-side state: role, local momentum and a private RNG stream.

use crate::data::{sample_batch, Dataset};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::{self, StreamRng};
use crate::vecmath::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Benign,
    Byzantine,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    id: usize,
    role: Role,
    momentum: ParamVector,
    shard: Vec<usize>,
    experiment_seed: u64,
    rng: StreamRng,
    last_loss: f64,
}

impl ClientState {
    pub fn new(id: usize, role: Role, dim: usize, shard: Vec<usize>, experiment_seed: u64) -> Self {
        Self {
            id,
            role,
            momentum: ParamVector::zeros(dim),
            shard,
            experiment_seed,
            rng: rng::client_stream(experiment_seed, id),
            last_loss: f64::NAN,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn momentum(&self) -> &ParamVector {
        &self.momentum
    }

    pub fn shard(&self) -> &[usize] {
        &self.shard
    }

    /// Mean cross-entropy of the most recent sampled batch.
    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    /// Zeroes the momentum and rewinds the RNG stream.
    pub fn reset(&mut self) {
        self.momentum = ParamVector::zeros(self.momentum.dim());
        self.rng = rng::client_stream(self.experiment_seed, self.id);
        self.last_loss = f64::NAN;
    }

    /// One honest round: sample a batch, take the gradient at
    /// `global_params`, and fold it into the local momentum.
    pub fn local_step(
        &mut self,
        global_params: &ParamVector,
        beta: f64,
        batch_size: usize,
        spec: &ModelSpec,
        ds: &Dataset,
    ) -> Result<ParamVector> {
        if self.role != Role::Benign {
            return Err(Error::WrongRole { id: self.id });
        }
        check_beta(beta)?;
        self.honest_step(global_params, beta, batch_size, spec, ds)
    }

    /// `local_step` without the role check; Byzantine clients that mimic
    /// honest behaviour (no attack, label flip) go through here.
    pub(crate) fn honest_step(
        &mut self,
        global_params: &ParamVector,
        beta: f64,
        batch_size: usize,
        spec: &ModelSpec,
        ds: &Dataset,
    ) -> Result<ParamVector> {
        let g = self.sample_gradient(global_params, batch_size, spec, ds)?;
        Ok(self.fold_gradient(&g, beta))
    }

    pub(crate) fn sample_gradient(
        &mut self,
        global_params: &ParamVector,
        batch_size: usize,
        spec: &ModelSpec,
        ds: &Dataset,
    ) -> Result<ParamVector> {
        if batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if self.shard.is_empty() {
            return Err(Error::invalid(format!("client {} has an empty shard", self.id)));
        }
        let batch = sample_batch(&mut self.rng, &self.shard, batch_size);
        let (loss, g) = spec.loss_and_gradient(global_params, ds, &batch)?;
        self.last_loss = loss;
        Ok(g)
    }

    /// `m <- (1 - beta) g + beta m`, returning the new momentum.
    pub(crate) fn fold_gradient(&mut self, g: &ParamVector, beta: f64) -> ParamVector {
        self.momentum = g.combine(1.0 - beta, &self.momentum, beta);
        self.momentum.clone()
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta must lie in [0, 1), got {beta}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;

    fn setup() -> (ModelSpec, Dataset, ParamVector) {
        let ds = generate_blobs(3, 20, 4, 0.5, 1).unwrap();
        let spec = ModelSpec::mlp(4, 5, 3, 2);
        let params = spec.init_params();
        (spec, ds, params)
    }

    fn client(role: Role) -> ClientState {
        ClientState::new(3, role, ModelSpec::mlp(4, 5, 3, 2).param_count(), (0..60).collect(), 99)
    }

    fn assert_close(a: &ParamVector, b: &ParamVector, tol: f64) {
        for j in 0..a.dim() {
            assert!((a[j] - b[j]).abs() <= tol, "index {j}: {} vs {}", a[j], b[j]);
        }
    }

    // Replays the client's batch draw on a fresh copy to get the raw gradient.
    fn expected_gradient(c: &ClientState, spec: &ModelSpec, ds: &Dataset, p: &ParamVector, batch: usize) -> ParamVector {
        c.clone().sample_gradient(p, batch, spec, ds).unwrap()
    }

    #[test]
    fn zero_beta_returns_gradient() {
        let (spec, ds, p) = setup();
        let mut c = client(Role::Benign);
        let g = expected_gradient(&c, &spec, &ds, &p, 8);
        let m = c.local_step(&p, 0.0, 8, &spec, &ds).unwrap();
        assert_eq!(m, g);
        assert_eq!(c.momentum(), &m);
    }

    #[test]
    fn first_step_scales_by_one_minus_beta() {
        let (spec, ds, p) = setup();
        let mut c = client(Role::Benign);
        let g = expected_gradient(&c, &spec, &ds, &p, 8);
        let m = c.local_step(&p, 0.9, 8, &spec, &ds).unwrap();
        assert_close(&m, &g.scaled(0.1), 1e-15);
    }

    #[test]
    fn two_steps_with_same_gradient_unroll() {
        let mut c = client(Role::Benign);
        let g = ParamVector::new((0..c.momentum().dim()).map(|i| i as f64 - 10.0).collect()).unwrap();
        let beta = 0.9;
        c.fold_gradient(&g, beta);
        let m2 = c.fold_gradient(&g, beta);
        assert_close(&m2, &g.scaled((1.0 - beta) * (1.0 + beta)), 1e-12);
    }

    #[test]
    fn byzantine_cannot_take_honest_step() {
        let (spec, ds, p) = setup();
        let mut c = client(Role::Byzantine);
        assert!(matches!(
            c.local_step(&p, 0.9, 8, &spec, &ds),
            Err(Error::WrongRole { id: 3 })
        ));
    }

    #[test]
    fn reset_restores_initial_state() {
        let (spec, ds, p) = setup();
        let mut c = client(Role::Benign);
        let first = c.local_step(&p, 0.5, 8, &spec, &ds).unwrap();
        c.local_step(&p, 0.5, 8, &spec, &ds).unwrap();
        c.reset();
        assert_eq!(c.momentum(), &ParamVector::zeros(p.dim()));
        let g = expected_gradient(&c, &spec, &ds, &p, 8);
        let mut twice = c.clone();
        twice.reset();
        let m = c.local_step(&p, 0.99, 8, &spec, &ds).unwrap();
        assert_close(&m, &g.scaled(0.01), 1e-15);
        // idempotent reset and replayable sequence
        let mut replay = client(Role::Benign);
        assert_eq!(replay.local_step(&p, 0.5, 8, &spec, &ds).unwrap(), first);
        assert_eq!(twice.local_step(&p, 0.99, 8, &spec, &ds).unwrap(), m);
    }

    #[test]
    fn momentum_bounded_and_converges_for_constant_gradient() {
        let mut c = client(Role::Benign);
        let g = ParamVector::filled(c.momentum().dim(), 0.3);
        let beta: f64 = 0.8;
        for t in 1..=40 {
            let m = c.fold_gradient(&g, beta);
            assert!(m.norm() <= g.norm() * (1.0 + 1e-12));
            let gap = m.sub(&g).norm();
            assert!((gap - beta.powi(t) * g.norm()).abs() <= 1e-9);
        }
    }

    #[test]
    fn tiny_shard_samples_with_replacement() {
        let (spec, ds, p) = setup();
        let mut c = ClientState::new(0, Role::Benign, p.dim(), vec![4, 7], 1);
        assert!(c.local_step(&p, 0.0, 32, &spec, &ds).is_ok());
        assert!(c.last_loss().is_finite());
    }

    #[test]
    fn beta_range() {
        assert!(check_beta(0.0).is_ok());
        assert!(check_beta(0.99).is_ok());
        assert!(check_beta(1.0).is_err());
        assert!(check_beta(-0.1).is_err());
    }
}
