use crate::dro::SimplexWeights;
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{axpy, norm_sq};

/// Variance of two unbiased estimators of `sum_i p_i grad_i`:
/// drawing `i` uniformly and returning `n p_i grad_i`, or drawing `i ~ p`
/// and returning `grad_i`. Returns `(var_uniform, var_importance)`.
pub fn variance_comparison(p: &SimplexWeights, grads: &[Vec<f64>]) -> Result<(f64, f64)> {
    ensure_dim("gradient list", p.len(), grads.len())?;
    let d = grads.first().map_or(0, Vec::len);
    if grads.iter().any(|g| g.len() != d) {
        return Err(Error::Argument("gradients must share one dimension".into()));
    }
    let n = p.len() as f64;
    let mut mean = vec![0.0; d];
    let (mut second_u, mut second_i) = (0.0, 0.0);
    for (&pi, g) in p.as_slice().iter().zip(grads) {
        axpy(pi, g, &mut mean);
        let sq = norm_sq(g);
        second_u += n * pi * pi * sq;
        second_i += pi * sq;
    }
    let m = norm_sq(&mean);
    Ok((second_u - m, second_i - m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::SeededRng;
    use rand::{Rng, SeedableRng};

    fn random_case(rng: &mut SeededRng, n: usize, d: usize) -> (SimplexWeights, Vec<Vec<f64>>) {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let p = SimplexWeights::new(raw.iter().map(|x| x / s).collect()).unwrap();
        let grads = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        (p, grads)
    }

    /// `E ||X - E X||^2` over a finite distribution of outcomes.
    fn enumerate(outcomes: &[(f64, Vec<f64>)]) -> f64 {
        let d = outcomes[0].1.len();
        let mut mean = vec![0.0; d];
        for (w, x) in outcomes {
            axpy(*w, x, &mut mean);
        }
        outcomes
            .iter()
            .map(|(w, x)| w * x.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum()
    }

    #[test]
    fn one_hot_extreme() {
        let grads = vec![vec![3.0, 4.0], vec![1.0, 0.0], vec![0.0, 7.0], vec![2.0, 2.0]];
        let p = SimplexWeights::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let (vu, vi) = variance_comparison(&p, &grads).unwrap();
        assert_eq!(vu, 3.0 * 25.0);
        assert_eq!(vi, 0.0);
    }

    #[test]
    fn uniform_weights_coincide() {
        let mut rng = SeededRng::seed_from_u64(1);
        let (_, grads) = random_case(&mut rng, 6, 3);
        let (vu, vi) = variance_comparison(&SimplexWeights::uniform(6), &grads).unwrap();
        assert!((vu - vi).abs() < 1e-12);
    }

    #[test]
    fn matches_exact_enumeration() {
        let mut rng = SeededRng::seed_from_u64(2);
        for _ in 0..20 {
            let (p, grads) = random_case(&mut rng, 5, 3);
            let (vu, vi) = variance_comparison(&p, &grads).unwrap();
            let uniform: Vec<(f64, Vec<f64>)> = p
                .as_slice()
                .iter()
                .zip(&grads)
                .map(|(&pi, g)| (0.2, g.iter().map(|x| 5.0 * pi * x).collect()))
                .collect();
            let importance: Vec<(f64, Vec<f64>)> =
                p.as_slice().iter().zip(&grads).map(|(&pi, g)| (pi, g.clone())).collect();
            let (eu, ei) = (enumerate(&uniform), enumerate(&importance));
            assert!((vu - eu).abs() <= 1e-12 * eu.abs().max(1.0), "{vu} vs {eu}");
            assert!((vi - ei).abs() <= 1e-12 * ei.abs().max(1.0), "{vi} vs {ei}");
        }
    }

    #[test]
    fn importance_never_worse_at_equal_norms() {
        // with equal norms the gap is ||g||^2 (n sum p_i^2 - 1) >= 0
        let mut rng = SeededRng::seed_from_u64(3);
        for _ in 0..1000 {
            let n = rng.random_range(2..12);
            let (p, mut grads) = random_case(&mut rng, n, 4);
            let r = rng.random_range(0.1..3.0);
            for g in &mut grads {
                let s = r / norm_sq(g).sqrt();
                g.iter_mut().for_each(|x| *x *= s);
            }
            let (vu, vi) = variance_comparison(&p, &grads).unwrap();
            assert!(vu >= vi - 1e-12 * vu.abs().max(1.0), "{vu} < {vi}");
        }
    }

    #[test]
    fn importance_can_lose_when_heavy_gradients_are_rare() {
        // large gradient on the low-weight point favors uniform sampling
        let p = SimplexWeights::new(vec![0.1, 0.9]).unwrap();
        let grads = vec![vec![10.0], vec![0.0]];
        let (vu, vi) = variance_comparison(&p, &grads).unwrap();
        assert!((vu - 1.0).abs() < 1e-12 && (vi - 9.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        assert!(variance_comparison(&SimplexWeights::uniform(3), &[vec![1.0]]).is_err());
    }
}
