use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use super::{DataPoint, LossModel};
use crate::linalg::ParamVector;
use crate::problem::SeededRng;

/// Two-layer ReLU network with softmax cross-entropy.
///
/// Parameters are packed as `W1 (hidden x input, row-major), b1 (hidden),
/// W2 (classes x hidden, row-major), b2 (classes)`. The ReLU subgradient at
/// zero is taken to be zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mlp {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub cap: Option<f64>,
}

struct Forward {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl Mlp {
    pub const DEFAULT_HIDDEN: usize = 32;

    pub fn new(input_dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden,
            classes,
            cap: Some(super::DEFAULT_LOSS_CAP),
        }
    }

    pub fn with_cap(mut self, cap: Option<f64>) -> Self {
        self.cap = cap;
        self
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.input_dim;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.classes * self.hidden;
        (w1, b1, w2)
    }

    /// He-initialized first layer, scaled-normal second layer, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = SeededRng::seed_from_u64(seed);
        let (o_w1, o_b1, o_w2) = self.offsets();
        let mut w = vec![0.0; self.param_dim()];
        let n1 = Normal::new(0.0, (2.0 / self.input_dim as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, (1.0 / self.hidden as f64).sqrt()).unwrap();
        for v in &mut w[..o_w1] {
            *v = n1.sample(&mut rng);
        }
        for v in &mut w[o_b1..o_w2] {
            *v = n2.sample(&mut rng);
        }
        ParamVector::new(w)
    }

    fn forward(&self, w: &[f64], x: &[f64]) -> Forward {
        let (o_w1, o_b1, o_w2) = self.offsets();
        let mut pre = vec![0.0; self.hidden];
        for (h, p) in pre.iter_mut().enumerate() {
            let row = &w[h * self.input_dim..(h + 1) * self.input_dim];
            *p = crate::linalg::dot(row, x) + w[o_w1 + h];
        }
        let hidden: Vec<f64> = pre.iter().map(|&p| p.max(0.0)).collect();
        let mut logits = vec![0.0; self.classes];
        for (k, l) in logits.iter_mut().enumerate() {
            let row = &w[o_b1 + k * self.hidden..o_b1 + (k + 1) * self.hidden];
            *l = crate::linalg::dot(row, &hidden) + w[o_w2 + k];
        }
        Forward {
            pre,
            hidden,
            logits,
        }
    }

    /// Smallest |pre-activation| over hidden units; FD checks stay away
    /// from points where this is tiny.
    pub fn kink_distance(&self, w: &[f64], x: &[f64]) -> f64 {
        self.forward(w, x)
            .pre
            .iter()
            .map(|p| p.abs())
            .fold(f64::INFINITY, f64::min)
    }

    fn cross_entropy(logits: &[f64], class: usize) -> (f64, Vec<f64>) {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        let ce = m + s.ln() - logits[class];
        let probs = exps.into_iter().map(|e| e / s).collect();
        (ce, probs)
    }
}

impl LossModel for Mlp {
    fn param_dim(&self) -> usize {
        self.hidden * self.input_dim + self.hidden + self.classes * self.hidden + self.classes
    }

    fn loss(&self, w: &[f64], z: &DataPoint) -> f64 {
        let f = self.forward(w, &z.x);
        let (ce, _) = Self::cross_entropy(&f.logits, z.class());
        self.cap.map_or(ce, |c| ce.min(c))
    }

    fn loss_grad_into(&self, w: &[f64], z: &DataPoint, grad: &mut [f64]) -> f64 {
        let f = self.forward(w, &z.x);
        let (ce, mut dlogits) = Self::cross_entropy(&f.logits, z.class());
        if let Some(c) = self.cap {
            if ce >= c {
                grad.iter_mut().for_each(|g| *g = 0.0);
                return c;
            }
        }
        dlogits[z.class()] -= 1.0;
        let (o_w1, o_b1, o_w2) = self.offsets();
        let mut dhidden = vec![0.0; self.hidden];
        for (k, &dl) in dlogits.iter().enumerate() {
            let row = o_b1 + k * self.hidden;
            for h in 0..self.hidden {
                grad[row + h] = dl * f.hidden[h];
                dhidden[h] += dl * w[row + h];
            }
            grad[o_w2 + k] = dl;
        }
        for h in 0..self.hidden {
            let dpre = if f.pre[h] > 0.0 { dhidden[h] } else { 0.0 };
            let row = h * self.input_dim;
            for (j, &xj) in z.x.iter().enumerate() {
                grad[row + j] = dpre * xj;
            }
            grad[o_w1 + h] = dpre;
        }
        ce
    }

    fn predict(&self, w: &[f64], x: &[f64]) -> Option<f64> {
        let f = self.forward(w, x);
        let mut best = 0;
        for (k, &l) in f.logits.iter().enumerate() {
            if l > f.logits[best] {
                best = k;
            }
        }
        Some(best as f64)
    }

    fn loss_cap(&self) -> Option<f64> {
        self.cap
    }

    fn name(&self) -> &'static str {
        "mlp"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::test_support::{fd_rel_error, random_vec, rng};

    #[test]
    fn zero_hidden_weights_give_uniform_softmax() {
        let m = Mlp::new(4, 8, 10);
        let w = vec![0.0; m.param_dim()];
        let z = DataPoint::new(vec![1.0, -2.0, 0.5, 3.0], 7.0);
        assert!((m.loss(&w, &z) - 10f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn param_count() {
        let m = Mlp::new(20, 32, 10);
        assert_eq!(m.param_dim(), 20 * 32 + 32 + 32 * 10 + 10);
        assert_eq!(m.init_params(1).dim(), m.param_dim());
    }

    #[test]
    fn gradient_matches_finite_differences_away_from_kinks() {
        let m = Mlp::new(5, 6, 4);
        let mut r = rng(17);
        let mut checked = 0;
        while checked < 20 {
            let w = random_vec(&mut r, m.param_dim(), 1.0);
            let x = random_vec(&mut r, 5, 2.0);
            if m.kink_distance(&w, &x) < 1e-4 {
                continue;
            }
            let z = DataPoint::new(x, (checked % 4) as f64);
            assert!(fd_rel_error(&m, &w, &z, 1e-5) <= 1e-6, "point {checked}");
            checked += 1;
        }
    }

    #[test]
    fn clipped_loss_has_zero_gradient() {
        let m = Mlp::new(1, 1, 2).with_cap(Some(1.0));
        // W1=1, b1=0, W2=(10, -10), b2=0: x=1 strongly predicts class 0
        let w = [1.0, 0.0, 10.0, -10.0, 0.0, 0.0];
        let z = DataPoint::new(vec![1.0], 1.0);
        assert_eq!(m.loss(&w, &z), 1.0);
        assert!(m.grad(&w, &z).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn predicts_argmax() {
        let m = Mlp::new(1, 1, 2);
        let w = [1.0, 0.0, 10.0, -10.0, 0.0, 0.0];
        assert_eq!(m.predict(&w, &[1.0]), Some(0.0));
        assert_eq!(m.predict(&w, &[-1.0]), Some(0.0));
        let w = [1.0, 0.0, -10.0, 10.0, 0.0, 0.0];
        assert_eq!(m.predict(&w, &[1.0]), Some(1.0));
    }
}
