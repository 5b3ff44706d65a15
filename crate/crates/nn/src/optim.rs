use crate::graph::Grads;
use crate::params::{snap, ParamStore};

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
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are rounded to `f32` after every
/// update, like the parameters, so a checkpoint restores state exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Apply one update to every unfrozen parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, g) in grads.param_slots().iter().enumerate() {
            let Some(g) = g else { continue };
            let id = store.ids().nth(i).expect("gradient for unknown parameter");
            let p = store.get_mut(id);
            if p.frozen {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                m[j] = snap(c.beta1 * m[j] + (1.0 - c.beta1) * g[j]);
                v[j] = snap(c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j]);
                let update = c.lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
                p.value[j] = snap(p.value[j] - update);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Graph, Init, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Gradients of Σ (W x - t)² for a single sample.
    fn quad_grads(store: &ParamStore, w: crate::ParamId, x: &[f64], t: &[f64]) -> (f64, Grads) {
        let mut g = Graph::new(store);
        let xv = g.input(Tensor::from_vec([1, x.len(), 1, 1], x.to_vec()));
        let y = g.linear(xv, w, None);
        let r: Vec<f64> = g.value(y).data().iter().zip(t).map(|(a, b)| a - b).collect();
        let loss = r.iter().map(|v| v * v).sum();
        let seed = Tensor::from_vec([1, t.len(), 1, 1], r.iter().map(|v| 2.0 * v).collect());
        (loss, g.backward(&[(y, &seed)]))
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let w = s.add("w", &[2, 3], &Init::Normal { std: 0.5 }, &mut rng);
        let before = s.get(w).value.clone();
        let (_, grads) = quad_grads(&s, w, &[1.0, -2.0, 0.5], &[0.3, -0.7]);
        let g = grads.param(w).unwrap().to_vec();
        let mut adam = Adam::new(AdamConfig { lr: 0.01, ..AdamConfig::default() }, &s);
        adam.step(&mut s, &grads);
        for j in 0..g.len() {
            let moved = before[j] - s.get(w).value[j];
            assert!((moved - 0.01 * g[j].signum()).abs() < 1e-6, "{j}: {moved}");
        }
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = ParamStore::new();
        let w = s.add("w", &[1, 2], &Init::Constant(0.5), &mut rng);
        s.set_frozen("w", true);
        let (_, grads) = quad_grads(&s, w, &[1.0, 1.0], &[3.0]);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.step(&mut s, &grads);
        assert_eq!(s.get(w).value, vec![0.5, 0.5]);
    }

    #[test]
    fn converges_on_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ParamStore::new();
        let w = s.add("w", &[2, 2], &Init::Zeros, &mut rng);
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &s);
        let (x, t) = ([1.0, 2.0], [1.5, -1.0]);
        let first = quad_grads(&s, w, &x, &t).0;
        for _ in 0..400 {
            let (_, grads) = quad_grads(&s, w, &x, &t);
            adam.step(&mut s, &grads);
        }
        let last = quad_grads(&s, w, &x, &t).0;
        assert!(last < 1e-4 * first, "{first} -> {last}");
    }
}
