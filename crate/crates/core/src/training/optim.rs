use serde::{Deserialize, Serialize};

use crate::autograd::{Scalar, Tensor};
use crate::model::ParameterStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWSettings {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWSettings {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamWSettings {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// AdamW with decoupled weight decay. Parameters without a gradient in a
/// step are left untouched, moments included.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub settings: AdamWSettings,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: ParameterStore<T>,
    pub v: ParameterStore<T>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(settings: AdamWSettings, params: &ParameterStore<T>) -> Self {
        let zeros = || {
            let mut s = ParameterStore::new();
            for (name, p) in params.iter() {
                s.insert(name, Tensor::zeros(p.shape()));
            }
            s
        };
        AdamW {
            settings,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut ParameterStore<T>, grads: &ParameterStore<T>) {
        self.t += 1;
        let s = self.settings;
        let c = |x: f64| T::from_f64_lossy(x);
        let t = self.t as i32;
        let bc1 = c(1.0 - s.beta1.powi(t));
        let bc2 = c(1.0 - s.beta2.powi(t));
        let (lr, decay) = (c(s.learning_rate), c(s.learning_rate * s.weight_decay));
        let (b1, b2, eps) = (c(s.beta1), c(s.beta2), c(s.eps));
        let one = T::one();
        for (name, g) in grads.iter() {
            let p = params.get_mut(name).expect("gradient for unknown parameter");
            let m = self.m.get_mut(name).expect("moment for unknown parameter");
            let v = self.v.get_mut(name).expect("moment for unknown parameter");
            for (((p, m), v), &g) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *p -= decay * *p;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Global L2 norm over all gradient tensors.
pub fn grad_norm<T: Scalar>(grads: &ParameterStore<T>) -> f64 {
    grads.iter().map(|(_, g)| g.sum_squares()).sum::<f64>().sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut ParameterStore<T>, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let k = T::from_f64_lossy(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= k);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::scalar(x));
        s
    }

    #[test]
    fn single_step_by_hand() {
        let (p0, g, lr, wd) = (0.7_f64, -0.3_f64, 0.05, 0.1);
        let mut p = scalar_store(p0);
        let mut opt = AdamW::new(AdamWSettings::new(lr, wd), &p);
        opt.step(&mut p, &scalar_store(g));
        // m_hat = g, v_hat = g^2 after bias correction on step one
        let decayed = p0 - lr * wd * p0;
        let m = 0.1 * g;
        let v = 0.001 * g * g;
        let expected = decayed - lr * (m / 0.1) / ((v / 0.001).sqrt() + 1e-8);
        assert!((p.expect("w").item() - expected).abs() < 1e-12);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn zero_rates_leave_params_bit_identical() {
        let mut p = scalar_store(1.25);
        let mut opt = AdamW::new(AdamWSettings::new(0.0, 0.0), &p);
        opt.step(&mut p, &scalar_store(3.0));
        assert_eq!(p.expect("w").item().to_bits(), 1.25f64.to_bits());
    }

    #[test]
    fn parameters_without_gradients_are_skipped() {
        let mut p = scalar_store(2.0);
        p.insert("u", Tensor::scalar(5.0));
        let mut opt = AdamW::new(AdamWSettings::new(0.1, 0.5), &p);
        opt.step(&mut p, &scalar_store(1.0));
        assert_eq!(p.expect("u").item(), 5.0);
        assert_eq!(opt.m.expect("u").item(), 0.0);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut g = ParameterStore::<f64>::new();
        g.insert("a", Tensor::new(vec![2], vec![3.0, 0.0]));
        g.insert("b", Tensor::scalar(4.0));
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((grad_norm(&g) - 1.0).abs() < 1e-12);
        assert_eq!(clip_grad_norm(&mut g, 2.0), grad_norm(&g));
    }
}
