use serde::{Deserialize, Serialize};

use super::{Parameter, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

/// One bias-corrected Adam update. The gradient is left in place.
pub fn adam_step<T: Real>(p: &mut Parameter<T>, cfg: &AdamConfig) {
    p.step_count += 1;
    let t = p.step_count as i32;
    let b1 = T::from_f64c(cfg.beta1);
    let b2 = T::from_f64c(cfg.beta2);
    let one = T::one();
    let corr1 = T::from_f64c(1.0 - cfg.beta1.powi(t));
    let corr2 = T::from_f64c(1.0 - cfg.beta2.powi(t));
    let lr = T::from_f64c(cfg.learning_rate);
    let eps = T::from_f64c(cfg.epsilon);

    let grad = p.grad.data();
    let m1 = p.m1.data_mut();
    for (m, &g) in m1.iter_mut().zip(grad) {
        *m = b1 * *m + (one - b1) * g;
    }
    let m2 = p.m2.data_mut();
    for (v, &g) in m2.iter_mut().zip(grad) {
        *v = b2 * *v + (one - b2) * g * g;
    }
    let (m1, m2) = (p.m1.data(), p.m2.data());
    for ((w, &m), (&v, &g)) in p.value.data_mut().iter_mut().zip(m1).zip(m2.iter().zip(grad)) {
        // a zero gradient leaves the weight untouched even with live momentum
        if g == T::zero() {
            continue;
        }
        let mhat = m / corr1;
        let vhat = v / corr2;
        *w = *w - lr * mhat / (vhat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Dense2D;

    fn scalar(v: f64, g: f64) -> Parameter<f64> {
        let mut p = Parameter::new("w", Dense2D::from_vec(1, 1, vec![v]).unwrap());
        p.grad.set(0, 0, g);
        p
    }

    #[test]
    fn zero_gradient_keeps_value() {
        let mut p = scalar(0.37, 0.0);
        p.m1.set(0, 0, 0.3);
        p.m2.set(0, 0, 0.1);
        for _ in 0..5 {
            adam_step(&mut p, &AdamConfig::default());
        }
        assert_eq!(p.value.get(0, 0), 0.37);
        assert_eq!(p.step_count, 5);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut p = scalar(1.0, 0.0);
        p.m1.set(0, 0, 0.5);
        p.m2.set(0, 0, 0.25);
        adam_step(&mut p, &AdamConfig::default());
        assert!((p.m1.get(0, 0) - 0.45).abs() < 1e-15);
        assert!((p.m2.get(0, 0) - 0.25 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.5, -0.02] {
            let mut p = scalar(1.0, g);
            adam_step(&mut p, &AdamConfig::default());
            let delta = p.value.get(0, 0) - 1.0;
            assert!((delta.abs() - 1e-3).abs() < 1e-8, "delta {delta}");
            assert_eq!(delta.signum(), -g.signum());
            assert_eq!(p.grad.get(0, 0), g, "grad left intact");
        }
    }

    #[test]
    fn two_constant_steps_match_hand_recurrence() {
        // m_t = b1 m + (1-b1) g ; v_t = b2 v + (1-b2) g^2, evaluated by hand.
        let (b1, b2, lr, eps, g) = (0.9f64, 0.999f64, 1e-3, 1e-8, 0.7f64);
        let (mut m, mut v, mut w) = (0.0, 0.0, 2.0);
        let mut expected = Vec::new();
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let step = lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            w -= step;
            expected.push(step);
        }
        let mut p = scalar(2.0, g);
        let mut prev = 2.0;
        for want in expected {
            adam_step(&mut p, &AdamConfig::default());
            let step = prev - p.value.get(0, 0);
            assert!((step - want).abs() < 1e-12);
            assert!((step - lr).abs() / lr < 0.01);
            prev = p.value.get(0, 0);
        }
        assert!((p.value.get(0, 0) - w).abs() < 1e-12);
    }
}
