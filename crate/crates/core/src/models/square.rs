use super::{DataPoint, LossModel};
use crate::linalg::dot;

/// `(w . x - y)^2`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareLoss {
    pub dim: usize,
}

impl SquareLoss {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl LossModel for SquareLoss {
    fn param_dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, w: &[f64], z: &DataPoint) -> f64 {
        let r = dot(w, &z.x) - z.y;
        r * r
    }

    fn loss_grad_into(&self, w: &[f64], z: &DataPoint, grad: &mut [f64]) -> f64 {
        let r = dot(w, &z.x) - z.y;
        for (g, x) in grad.iter_mut().zip(&z.x) {
            *g = 2.0 * r * x;
        }
        r * r
    }

    fn is_convex(&self) -> bool {
        true
    }

    fn name(&self) -> &'static str {
        "square"
    }
}
