use crate::params::{ParamGrads, ParamStore};

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update of one tensor at step `t` (1-based).
pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        param[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
}

/// Adam moments for every tensor of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: ParamGrads,
    v: ParamGrads,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            m: ParamGrads::zeros_like(store),
            v: ParamGrads::zeros_like(store),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update; refuses non-finite gradients.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<(), TrainError> {
        if let Some(name) = grads.first_non_finite() {
            return Err(TrainError::NonFiniteGradient(name.to_string()));
        }
        self.t += 1;
        for (name, p) in store.iter_mut() {
            let (Some(g), Some(m), Some(v)) =
                (grads.get(name), self.m.get_mut(name), self.v.get_mut(name))
            else {
                continue;
            };
            adam_step(
                p.data_mut(),
                g.data(),
                m.data_mut(),
                v.data_mut(),
                self.t,
                &self.config,
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_in_sign_direction() {
        let cfg = AdamConfig::default();
        let mut p = [1.0, -2.0, 0.5];
        let g = [0.3, -40.0, 1e-3];
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        adam_step(&mut p, &g, &mut m, &mut v, 1, &cfg);
        let expect = [1.0 - cfg.lr, -2.0 + cfg.lr, 0.5 - cfg.lr];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = [0.7, -0.1];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        for t in 1..5 {
            adam_step(
                &mut p,
                &[0.0, 0.0],
                &mut m,
                &mut v,
                t,
                &AdamConfig::default(),
            );
        }
        assert_eq!(p, [0.7, -0.1]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut x = [1.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        for t in 1..=100 {
            let g = [2.0 * x[0]];
            adam_step(&mut x, &g, &mut m, &mut v, t, &cfg);
        }
        assert!(x[0].abs() < 0.05, "{}", x[0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        use crate::autodiff::Tensor;
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0]));
        let mut grads = ParamGrads::zeros_like(&store);
        grads.get_mut("w").unwrap().data_mut()[0] = f64::NAN;
        let mut adam = Adam::new(&store, AdamConfig::default());
        assert!(matches!(
            adam.step(&mut store, &grads),
            Err(TrainError::NonFiniteGradient(n)) if n == "w"
        ));
        assert_eq!(store.get("w").unwrap().data(), &[1.0]);
    }
}
