use crate::graph::Gradients;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the group's gradient to at most this global L2 norm.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

/// Moment buffers of one [`Adam`] instance, exposed for checkpointing.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

/// Adam over a fixed group of parameters.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    params: Vec<ParamId>,
    state: AdamState<T>,
}

impl<T: Scalar> Adam<T> {
    /// `params` may contain duplicates (aliased layers); each slot is updated once.
    pub fn new(config: AdamConfig, params: &[ParamId], store: &ParamStore<T>) -> Self {
        let mut ids = params.to_vec();
        ids.sort();
        ids.dedup();
        let zeros: Vec<Tensor<T>> = ids.iter().map(|&id| Tensor::zeros(store.get(id).shape())).collect();
        Self {
            config,
            params: ids,
            state: AdamState {
                step: 0,
                first_moment: zeros.clone(),
                second_moment: zeros,
            },
        }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn state(&self) -> &AdamState<T> {
        &self.state
    }

    pub fn set_state(&mut self, state: AdamState<T>) {
        assert_eq!(state.first_moment.len(), self.params.len());
        assert_eq!(state.second_moment.len(), self.params.len());
        self.state = state;
    }

    /// Applies one update. Parameters without a gradient entry are treated as
    /// having zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) {
        let cfg = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let clip_scale = match cfg.clip_norm {
            Some(max) => {
                let norm = grads.global_norm(&self.params);
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let b1 = T::from_f64_lossy(cfg.beta1);
        let b2 = T::from_f64_lossy(cfg.beta2);
        let one = T::one();
        let bias1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(t));
        let bias2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(t));
        let lr = T::from_f64_lossy(cfg.learning_rate);
        let eps = T::from_f64_lossy(cfg.eps);
        let clip = T::from_f64_lossy(clip_scale);
        for (slot, &id) in self.params.iter().enumerate() {
            let m = self.state.first_moment[slot].data_mut();
            let v = self.state.second_moment[slot].data_mut();
            let p = store.get_mut(id).data_mut();
            match grads.param(id) {
                Some(g) => {
                    for (((pi, mi), vi), &gi) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                        let gi = gi * clip;
                        *mi = b1 * *mi + (one - b1) * gi;
                        *vi = b2 * *vi + (one - b2) * gi * gi;
                        *pi -= lr * (*mi / bias1) / ((*vi / bias2).sqrt() + eps);
                    }
                }
                None => {
                    for ((pi, mi), vi) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi;
                        *vi = b2 * *vi;
                        *pi -= lr * (*mi / bias1) / ((*vi / bias2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", Tensor::new(&[2], vec![1.0, -1.0]));
        let mut g = Graph::new([id]);
        let w = g.param(&store, id);
        let loss = g.sum(w);
        let grads = g.backward(loss).unwrap();
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.1,
                ..Default::default()
            },
            &[id],
            &store,
        );
        adam.step(&mut store, &grads);
        let p = store.get(id).data();
        // mhat/sqrt(vhat) = sign(g) on the first step
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.1).abs() < 1e-6);
    }

    #[test]
    fn duplicate_ids_update_once() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", Tensor::new(&[1], vec![0.0]));
        let mut g = Graph::new([id]);
        let w = g.param(&store, id);
        let loss = g.sum(w);
        let grads = g.backward(loss).unwrap();
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.5,
                ..Default::default()
            },
            &[id, id],
            &store,
        );
        adam.step(&mut store, &grads);
        assert!((store.get(id).data()[0] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", Tensor::new(&[1], vec![0.0]));
        let mut g = Graph::new([id]);
        let w = g.param(&store, id);
        let big = g.scale(w, 1000.0);
        let loss = g.sum(big);
        let grads = g.backward(loss).unwrap();
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 1.0,
                clip_norm: Some(1.0),
                ..Default::default()
            },
            &[id],
            &store,
        );
        adam.step(&mut store, &grads);
        let m = adam.state().first_moment[0].data()[0];
        assert!((m - 0.1).abs() < 1e-9);
    }
}
