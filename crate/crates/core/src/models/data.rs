//! Data points, datasets and the synthetic generators used by the benchmarks.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::problem::SeededRng;

/// One training example `z = (x, y)`. For classifiers `y` holds the class
/// index (or `+-1` for the binary logistic model).
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub x: Vec<f64>,
    pub y: f64,
}

impl DataPoint {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }

    pub fn class(&self) -> usize {
        self.y as usize
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub points: Vec<DataPoint>,
    pub num_classes: Option<usize>,
}

impl Dataset {
    pub fn new(points: Vec<DataPoint>) -> Self {
        Self {
            points,
            num_classes: None,
        }
    }

    pub fn with_classes(points: Vec<DataPoint>, num_classes: usize) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if p.y < 0.0 || p.y.fract() != 0.0 || p.class() >= num_classes {
                return Err(Error::Argument(format!(
                    "point {i} has label {} outside 0..{num_classes}",
                    p.y
                )));
            }
        }
        Ok(Self {
            points,
            num_classes: Some(num_classes),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.x.len())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let k = self.num_classes.unwrap_or(0);
        let mut counts = vec![0; k];
        for p in &self.points {
            if p.class() < k {
                counts[p.class()] += 1;
            }
        }
        counts
    }

    /// Writes `class,x0,x1,...` with one row per point.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.feature_dim();
        let mut header = String::from("class");
        for j in 0..d {
            header.push_str(&format!(",x{j}"));
        }
        writeln!(out, "{header}")?;
        for p in &self.points {
            let mut line = format!("{}", p.y);
            for v in &p.x {
                line.push_str(&format!(",{v}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, num_classes: Option<usize>) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Argument("empty dataset csv".into()))?
            .map_err(|e| Error::Argument(e.to_string()))?;
        let width = header.split(',').count();
        if !header.starts_with("class") {
            return Err(Error::Argument(format!("unexpected csv header {header:?}")));
        }
        let mut points = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Argument(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Argument(format!("line {}: {e}", lineno + 2)))?;
            if fields.len() != width {
                return Err(Error::Argument(format!(
                    "line {}: expected {width} fields, got {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            points.push(DataPoint::new(fields[1..].to_vec(), fields[0]));
        }
        match num_classes {
            Some(k) => Dataset::with_classes(points, k),
            None => Ok(Dataset::new(points)),
        }
    }
}

fn normal(rng: &mut SeededRng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_unit(rng: &mut SeededRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        let n = crate::linalg::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Parameters of the Gaussian-mixture classification generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalancedSpec {
    pub num_classes: usize,
    pub per_class_majority: usize,
    pub imratio: f64,
    pub feature_dim: usize,
    pub class_separation: f64,
    pub seed: u64,
}

impl ImbalancedSpec {
    pub fn minority_count(&self) -> usize {
        (self.imratio * self.per_class_majority as f64 - 1e-9).ceil() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.imratio > 0.0 && self.imratio <= 1.0) {
            return Err(Error::Argument(format!(
                "imratio must lie in (0, 1], got {}",
                self.imratio
            )));
        }
        if self.num_classes < 2 || self.feature_dim == 0 {
            return Err(Error::Argument(
                "need at least two classes and one feature".into(),
            ));
        }
        if self.minority_count() == 0 {
            return Err(Error::Argument(
                "imratio leaves the minority classes empty".into(),
            ));
        }
        Ok(())
    }

    /// Target class sizes: the first half of the classes are minorities.
    pub fn class_sizes(&self) -> Vec<usize> {
        let minority = self.minority_count();
        (0..self.num_classes)
            .map(|c| {
                if c < self.num_classes / 2 {
                    minority
                } else {
                    self.per_class_majority
                }
            })
            .collect()
    }
}

/// Train/test pair where the test split is drawn before imbalancing and is
/// therefore balanced.
#[derive(Debug, Clone)]
pub struct ImbalancedSplit {
    pub train: Dataset,
    pub test: Dataset,
}

fn class_means(spec: &ImbalancedSpec, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    (0..spec.num_classes)
        .map(|_| {
            random_unit(rng, spec.feature_dim)
                .into_iter()
                .map(|v| v * spec.class_separation)
                .collect()
        })
        .collect()
}

fn draw_point(mean: &[f64], rng: &mut SeededRng) -> Vec<f64> {
    mean.iter().map(|m| m + normal(rng)).collect()
}

fn imbalance(spec: &ImbalancedSpec, pools: Vec<Vec<Vec<f64>>>) -> Result<Dataset> {
    let sizes = spec.class_sizes();
    let mut points = Vec::with_capacity(sizes.iter().sum());
    for (c, pool) in pools.into_iter().enumerate() {
        // keep the last `sizes[c]` points of each class
        let skip = pool.len() - sizes[c];
        for x in pool.into_iter().skip(skip) {
            points.push(DataPoint::new(x, c as f64));
        }
    }
    Dataset::with_classes(points, spec.num_classes)
}

/// Gaussian-mixture training set where the first half of the classes keep
/// only the last `ceil(imratio * per_class_majority)` of their points.
pub fn make_imbalanced_dataset(spec: &ImbalancedSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = SeededRng::seed_from_u64(spec.seed);
    let means = class_means(spec, &mut rng);
    let pools = means
        .iter()
        .map(|m| {
            (0..spec.per_class_majority)
                .map(|_| draw_point(m, &mut rng))
                .collect()
        })
        .collect();
    imbalance(spec, pools)
}

/// Same generator, with a balanced held-out split taken from every class
/// before the minority classes are thinned.
pub fn make_imbalanced_split(spec: &ImbalancedSpec, test_fraction: f64) -> Result<ImbalancedSplit> {
    spec.validate()?;
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Argument(format!(
            "test fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let total = (spec.per_class_majority as f64 / (1.0 - test_fraction)).round() as usize;
    let per_class_test = total - spec.per_class_majority;
    let mut rng = SeededRng::seed_from_u64(spec.seed);
    let means = class_means(spec, &mut rng);
    let mut test_points = Vec::new();
    let mut pools = Vec::with_capacity(spec.num_classes);
    for (c, m) in means.iter().enumerate() {
        let mut all: Vec<Vec<f64>> = (0..total).map(|_| draw_point(m, &mut rng)).collect();
        let train = all.split_off(per_class_test);
        test_points.extend(all.into_iter().map(|x| DataPoint::new(x, c as f64)));
        pools.push(train);
    }
    Ok(ImbalancedSplit {
        train: imbalance(spec, pools)?,
        test: Dataset::with_classes(test_points, spec.num_classes)?,
    })
}

/// Linear-regression data with unit-norm features scaled by
/// `feature_scale`, targets `w_true . x + noise` clipped to `[-y_clip, y_clip]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSpec {
    pub n: usize,
    pub dim: usize,
    pub feature_scale: f64,
    pub weight_scale: f64,
    pub noise: f64,
    pub y_clip: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RegressionData {
    pub data: Dataset,
    pub w_true: Vec<f64>,
}

pub fn make_regression_dataset(spec: &RegressionSpec) -> Result<RegressionData> {
    if spec.n == 0 || spec.dim == 0 {
        return Err(Error::Argument("regression data needs n, dim > 0".into()));
    }
    let mut rng = SeededRng::seed_from_u64(spec.seed);
    let w_true: Vec<f64> = random_unit(&mut rng, spec.dim)
        .into_iter()
        .map(|v| v * spec.weight_scale)
        .collect();
    let points = (0..spec.n)
        .map(|_| {
            let x: Vec<f64> = random_unit(&mut rng, spec.dim)
                .into_iter()
                .map(|v| v * spec.feature_scale)
                .collect();
            let y = crate::linalg::dot(&w_true, &x) + spec.noise * normal(&mut rng);
            DataPoint::new(x, y.clamp(-spec.y_clip, spec.y_clip))
        })
        .collect();
    Ok(RegressionData {
        data: Dataset::new(points),
        w_true,
    })
}

/// Uniform index in `0..n`.
pub(crate) fn uniform_index(rng: &mut SeededRng, n: usize) -> usize {
    rng.random_range(0..n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(imratio: f64) -> ImbalancedSpec {
        ImbalancedSpec {
            num_classes: 10,
            per_class_majority: 500,
            imratio,
            feature_dim: 4,
            class_separation: 2.0,
            seed: 3,
        }
    }

    #[test]
    fn imratio_one_is_balanced() {
        let d = make_imbalanced_dataset(&spec(1.0)).unwrap();
        assert_eq!(d.class_counts(), vec![500; 10]);
    }

    #[test]
    fn protocol_class_sizes() {
        let d = make_imbalanced_dataset(&spec(0.1)).unwrap();
        let counts = d.class_counts();
        assert_eq!(&counts[..5], &[50; 5]);
        assert_eq!(&counts[5..], &[500; 5]);
        assert_eq!(d.len(), 2750);
    }

    #[test]
    fn generator_is_deterministic() {
        let a = make_imbalanced_dataset(&spec(0.05)).unwrap();
        let b = make_imbalanced_dataset(&spec(0.05)).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn empty_minority_is_rejected() {
        let mut s = spec(0.001);
        s.per_class_majority = 10;
        // the count rounds up, so a tiny ratio still keeps one point
        assert_eq!(make_imbalanced_dataset(&s).unwrap().class_counts()[0], 1);
        s.per_class_majority = 0;
        assert!(make_imbalanced_dataset(&s).is_err());
        assert!(make_imbalanced_dataset(&spec(0.0)).is_err());
        assert!(make_imbalanced_dataset(&spec(1.5)).is_err());
    }

    #[test]
    fn split_keeps_test_balanced() {
        let split = make_imbalanced_split(&spec(0.02), 0.2).unwrap();
        assert_eq!(split.test.class_counts(), vec![125; 10]);
        let counts = split.train.class_counts();
        assert_eq!(&counts[..5], &[10; 5]);
        assert_eq!(&counts[5..], &[500; 5]);
    }

    #[test]
    fn csv_round_trip() {
        let d = make_imbalanced_dataset(&ImbalancedSpec {
            per_class_majority: 6,
            imratio: 0.5,
            ..spec(0.5)
        })
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(&buf[..], Some(10)).unwrap();
        assert_eq!(back, d);
    }
}
