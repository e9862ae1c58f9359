use super::{DataPoint, LossModel};
use crate::linalg::dot;

/// Binary logistic loss `log(1 + exp(-y w.x))` with labels `y in {-1, +1}`,
/// clipped at `cap` when one is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticLoss {
    pub dim: usize,
    pub cap: Option<f64>,
}

impl LogisticLoss {
    pub fn new(dim: usize) -> Self {
        Self { dim, cap: None }
    }

    pub fn with_cap(dim: usize, cap: f64) -> Self {
        Self {
            dim,
            cap: Some(cap),
        }
    }
}

fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

impl LossModel for LogisticLoss {
    fn param_dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, w: &[f64], z: &DataPoint) -> f64 {
        let l = softplus(-z.y * dot(w, &z.x));
        self.cap.map_or(l, |c| l.min(c))
    }

    fn loss_grad_into(&self, w: &[f64], z: &DataPoint, grad: &mut [f64]) -> f64 {
        let margin = z.y * dot(w, &z.x);
        let l = softplus(-margin);
        if let Some(c) = self.cap {
            if l >= c {
                grad.iter_mut().for_each(|g| *g = 0.0);
                return c;
            }
        }
        let coef = -z.y * sigmoid(-margin);
        for (g, x) in grad.iter_mut().zip(&z.x) {
            *g = coef * x;
        }
        l
    }

    fn predict(&self, w: &[f64], x: &[f64]) -> Option<f64> {
        Some(if dot(w, x) >= 0.0 { 1.0 } else { -1.0 })
    }

    fn loss_cap(&self) -> Option<f64> {
        self.cap
    }

    fn is_convex(&self) -> bool {
        // clipping breaks convexity
        self.cap.is_none()
    }

    fn name(&self) -> &'static str {
        "logistic"
    }
}
