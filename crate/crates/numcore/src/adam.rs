use crate::error::{shape_err, Result};
use crate::params::{Gradients, ParamStore};
use crate::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// Adam moments for every tensor of one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    /// Number of steps taken.
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam update at learning rate `lr`. Parameters
    /// outside the gradient support are left untouched, moments included.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(shape_err(
                "adam",
                format!(
                    "{} parameters, {} gradients, {} moments",
                    store.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (id, name, t) in store.iter() {
            let g = grads.get(id);
            if g.shape() != t.shape() || self.m[id.index()].shape() != t.shape() {
                return Err(shape_err(
                    "adam",
                    format!("{name}: parameter {:?}, gradient {:?}", t.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
        let (bc1, bc2) = (T::from_f64(bc1), T::from_f64(bc2));
        let (lr, eps) = (T::from_f64(lr), T::from_f64(eps));
        for id in grads.support() {
            let g = grads.get(id).data();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let p = store.tensor_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Graph;

    fn scalar_store(v: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::new(&[1], vec![v]).unwrap()).unwrap();
        s
    }

    fn grads_of(store: &ParamStore<f32>, value: f32) -> Gradients<f32> {
        let mut g = Gradients::zeros_like(store);
        let id = store.id("p").unwrap();
        g.get_mut(id).data_mut()[0] = value;
        g.mark_reached(id);
        g
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = scalar_store(0.5);
        let grads = grads_of(&store, 0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.step(&mut store, &grads, 1e-3).unwrap();
        assert_eq!(store.get("p").unwrap().data(), &[0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = scalar_store(0.0);
        let grads = grads_of(&store, 1.0);
        let cfg = AdamConfig::default();
        let mut adam = AdamState::new(cfg, &store);
        adam.step(&mut store, &grads, cfg.lr).unwrap();
        let expect = -cfg.lr / (1.0 + cfg.eps);
        assert!((store.get("p").unwrap().data()[0] as f64 - expect).abs() < 1e-9);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn unreached_parameters_keep_their_moments() {
        let mut store = scalar_store(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        let g = grads_of(&store, 1.0);
        adam.step(&mut store, &g, 1e-3).unwrap();
        let before = store.get("p").unwrap().clone();
        let idle = Gradients::zeros_like(&store);
        adam.step(&mut store, &idle, 1e-3).unwrap();
        assert_eq!(store.get("p").unwrap(), &before);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut store = scalar_store(1.0);
        let other = {
            let mut s = ParamStore::<f32>::new();
            s.insert("p", Tensor::zeros(&[2])).unwrap();
            s
        };
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        let grads = Gradients::zeros_like(&other);
        assert!(adam.step(&mut store, &grads, 1e-3).is_err());
    }

    #[test]
    fn identical_inputs_give_identical_updates() {
        let run = || {
            let mut store = ParamStore::<f32>::new();
            let id = store.insert("w", Tensor::from_fn(&[4], |i| i as f32 * 0.1)).unwrap();
            let mut adam = AdamState::new(AdamConfig::default(), &store);
            for _ in 0..3 {
                let mut g = Graph::new(false, 0);
                let w = g.param(&store, id);
                let sq = g.mul(w, w).unwrap();
                let loss = g.sum(sq);
                let grads = g.backward(loss, &store).unwrap();
                adam.step(&mut store, &grads, 1e-3).unwrap();
            }
            store.get("w").unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
