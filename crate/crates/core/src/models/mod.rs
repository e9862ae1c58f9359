//! Loss models with analytic gradients.

mod data;
mod logistic;
mod mlp;
mod square;

use std::fmt::Debug;

pub use data::{
    make_imbalanced_dataset, make_imbalanced_split, make_regression_dataset, DataPoint, Dataset,
    ImbalancedSpec, ImbalancedSplit, RegressionData, RegressionSpec,
};
pub(crate) use data::uniform_index;
pub use logistic::LogisticLoss;
pub use mlp::Mlp;
pub use square::SquareLoss;

/// Default clipping cap for unbounded classification losses.
pub const DEFAULT_LOSS_CAP: f64 = 20.0;

/// A per-example loss `l(w; z)`.
pub trait LossModel: Debug + Send + Sync {
    fn param_dim(&self) -> usize;

    fn loss(&self, w: &[f64], z: &DataPoint) -> f64;

    /// Writes `grad l(w; z)` into `grad` (overwriting it) and returns the loss.
    fn loss_grad_into(&self, w: &[f64], z: &DataPoint, grad: &mut [f64]) -> f64;

    fn grad(&self, w: &[f64], z: &DataPoint) -> Vec<f64> {
        let mut g = vec![0.0; self.param_dim()];
        self.loss_grad_into(w, z, &mut g);
        g
    }

    /// Predicted label, in the same encoding as `DataPoint::y`.
    fn predict(&self, _w: &[f64], _x: &[f64]) -> Option<f64> {
        None
    }

    /// Losses are clipped at this value (gradient zero beyond it).
    fn loss_cap(&self) -> Option<f64> {
        None
    }

    /// Whether `l(., z)` is convex in `w` for every `z`.
    fn is_convex(&self) -> bool {
        false
    }

    fn name(&self) -> &'static str;
}

/// Fraction of points whose predicted label matches.
pub fn accuracy(model: &dyn LossModel, w: &[f64], data: &Dataset) -> Option<f64> {
    if data.is_empty() {
        return None;
    }
    let mut correct = 0usize;
    for p in &data.points {
        if model.predict(w, &p.x)? == p.y {
            correct += 1;
        }
    }
    Some(correct as f64 / data.len() as f64)
}

/// Mean per-class recall; equals accuracy on a balanced set.
pub fn balanced_accuracy(model: &dyn LossModel, w: &[f64], data: &Dataset) -> Option<f64> {
    let k = data.num_classes?;
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for p in &data.points {
        let c = p.class();
        totals[c] += 1;
        if model.predict(w, &p.x)? == p.y {
            hits[c] += 1;
        }
    }
    let present: Vec<f64> = hits
        .iter()
        .zip(&totals)
        .filter(|(_, &t)| t > 0)
        .map(|(&h, &t)| h as f64 / t as f64)
        .collect();
    if present.is_empty() {
        return None;
    }
    Some(present.iter().sum::<f64>() / present.len() as f64)
}

/// Mean loss and mean gradient over a whole dataset.
pub fn mean_loss_grad(model: &dyn LossModel, w: &[f64], data: &Dataset) -> (f64, Vec<f64>) {
    let d = model.param_dim();
    let mut grad = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let mut total = 0.0;
    for p in &data.points {
        total += model.loss_grad_into(w, p, &mut buf);
        crate::linalg::axpy(1.0, &buf, &mut grad);
    }
    let n = data.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (total / n, grad)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::problem::SeededRng;
    use rand::{Rng, SeedableRng};

    /// Central-difference relative error, max over coordinates.
    pub fn fd_rel_error(model: &dyn LossModel, w: &[f64], z: &DataPoint, h: f64) -> f64 {
        let g = model.grad(w, z);
        let mut worst: f64 = 0.0;
        let mut wp = w.to_vec();
        for j in 0..w.len() {
            wp[j] = w[j] + h;
            let fp = model.loss(&wp, z);
            wp[j] = w[j] - h;
            let fm = model.loss(&wp, z);
            wp[j] = w[j];
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((fd - g[j]).abs() / g[j].abs().max(1e-8));
        }
        worst
    }

    pub fn random_vec(rng: &mut SeededRng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    pub fn rng(seed: u64) -> SeededRng {
        SeededRng::seed_from_u64(seed)
    }
}
