//! Experiment configs: one TOML file per experiment, expanded into cells.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Directory that receives one subdirectory per cell and the manifest.
    pub output: PathBuf,
    pub data: DataConfig,
    pub problem: ProblemConfig,
    #[serde(rename = "algorithm")]
    pub algorithms: Vec<AlgorithmConfig>,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default)]
    pub log: LogConfig,
    #[serde(default)]
    pub matrix: MatrixConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Least-squares data; see `RegressionSpec`.
    Regression {
        n: usize,
        dim: usize,
        feature_scale: f64,
        weight_scale: f64,
        noise: f64,
        y_clip: f64,
        /// Fixed data seed; the run seed is used when absent.
        seed: Option<u64>,
    },
    /// Gaussian-mixture classes with a balanced held-out split.
    Imbalanced {
        num_classes: usize,
        per_class_majority: usize,
        imratio: f64,
        feature_dim: usize,
        class_separation: f64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        seed: Option<u64>,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Square,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub model: ModelKind,
    /// Hidden width of the MLP.
    pub hidden: Option<usize>,
    /// Clip for the MLP cross-entropy; also its loss bound.
    pub loss_cap: Option<f64>,
    pub lambda: f64,
    /// Loss upper bound; derived from the model and regularizer when absent.
    pub loss_max: Option<f64>,
    /// Radius multiplier on the ridge sublevel ball used for the derived bound.
    #[serde(default = "default_sublevel_slack")]
    pub sublevel_slack: f64,
    #[serde(default)]
    pub regularizer: RegularizerConfig,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub constants: ConstantsConfig,
}

fn default_sublevel_slack() -> f64 {
    2.0
}

fn default_batch() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegularizerConfig {
    #[default]
    None,
    Ridge {
        gamma: f64,
    },
    L1 {
        weight: f64,
    },
    /// `|w|_inf <= radius`
    Box {
        radius: f64,
    },
}

/// Smoothness and variance constants. Both `l_agg` and `sigma` given means
/// explicit values; neither means the analytic square-loss bounds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    pub l_agg: Option<f64>,
    pub sigma: Option<f64>,
    /// Defaults to the ridge weight for the square loss, zero otherwise.
    pub mu: Option<f64>,
    /// Defaults to `F(w0) - F*` with `F*` from the full-batch oracle.
    pub delta_f: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnModeConfig {
    #[default]
    Last,
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumConfig {
    #[default]
    Statement,
    Proof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetConfig {
    #[default]
    Cubed,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapVariantConfig {
    #[default]
    Theorem,
    Lemma,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoverScheduleConfig {
    Constant {
        eta: f64,
        a: f64,
    },
    /// `eta(t) = k / (w + sigma^2 t)^(1/3)` from the problem constants.
    Theorem1 {
        #[serde(default = "one")]
        cap_c: f64,
        #[serde(default)]
        momentum: MomentumConfig,
        #[serde(default)]
        offset: OffsetConfig,
    },
}

fn one() -> f64 {
    1.0
}

fn ten() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RecoverScheduleConfig {
    Practical {
        eta0: f64,
        a0: f64,
        #[serde(default = "ten")]
        decay: f64,
        epochs_per_stage: f64,
    },
    /// Stage plan from the problem constants; `c` defaults to `104 L^2`.
    Theoretical {
        c: Option<f64>,
        #[serde(default)]
        variant: GapVariantConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmConfig {
    Cover {
        label: Option<String>,
        iterations: u64,
        #[serde(default)]
        return_mode: ReturnModeConfig,
        schedule: CoverScheduleConfig,
    },
    Recover {
        label: Option<String>,
        num_stages: usize,
        #[serde(default)]
        return_mode: ReturnModeConfig,
        sample_budget: Option<u64>,
        schedule: RecoverScheduleConfig,
    },
    Ascpg {
        label: Option<String>,
        c0: f64,
        a_exp: f64,
        b_exp: f64,
        iterations: u64,
    },
    StocAgda {
        label: Option<String>,
        beta1: f64,
        tau1: f64,
        beta2: f64,
        tau2: f64,
        iterations: u64,
    },
    /// Plain ERM baseline; ignores `lambda`.
    Sgd {
        label: Option<String>,
        eta0: f64,
        #[serde(default)]
        milestones: Vec<f64>,
        #[serde(default = "ten")]
        decay: f64,
        epochs: f64,
    },
}

impl AlgorithmConfig {
    pub fn id(&self) -> &'static str {
        match self {
            AlgorithmConfig::Cover { .. } => "cover",
            AlgorithmConfig::Recover { .. } => "recover",
            AlgorithmConfig::Ascpg { .. } => "ascpg",
            AlgorithmConfig::StocAgda { .. } => "stoc_agda",
            AlgorithmConfig::Sgd { .. } => "sgd",
        }
    }

    pub fn label(&self) -> String {
        let label = match self {
            AlgorithmConfig::Cover { label, .. }
            | AlgorithmConfig::Recover { label, .. }
            | AlgorithmConfig::Ascpg { label, .. }
            | AlgorithmConfig::StocAgda { label, .. }
            | AlgorithmConfig::Sgd { label, .. } => label,
        };
        label.clone().unwrap_or_else(|| self.id().to_string())
    }

    /// Whether the method minimizes the DRO objective rather than the mean loss.
    pub fn is_dro(&self) -> bool {
        !matches!(self, AlgorithmConfig::Sgd { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub max_samples: Option<u64>,
    pub max_wallclock_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogConfig {
    #[serde(default = "default_log_every")]
    pub every: u64,
    /// Fixed step for the gradient mapping; each row's own step when absent.
    pub eval_eta: Option<f64>,
}

fn default_log_every() -> u64 {
    1000
}

impl Default for LogConfig {
    fn default() -> Self {
        Self {
            every: default_log_every(),
            eval_eta: None,
        }
    }
}

/// Values swept across cells; each list replaces the single base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    pub imratio: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
}

/// One algorithm on one fully specified problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub label: String,
    pub data: DataConfig,
    pub problem: ProblemConfig,
    pub algorithm: AlgorithmConfig,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(BenchError::Config(format!("{name} must be positive and finite, got {x}")))
    }
}

fn nonnegative(name: &str, x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(BenchError::Config(format!("{name} must be nonnegative and finite, got {x}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|source| BenchError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// Hex SHA-256 of the canonical JSON form, insensitive to formatting.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("configs serialize");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(BenchError::Config(format!("bad experiment name {:?}", self.name)));
        }
        if self.seeds.is_empty() {
            return Err(BenchError::Config("seeds must not be empty".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(BenchError::Config("seeds must be distinct".into()));
        }
        if self.algorithms.is_empty() {
            return Err(BenchError::Config("at least one [[algorithm]] is required".into()));
        }
        if self.log.every == 0 {
            return Err(BenchError::Config("log.every must be positive".into()));
        }
        if let Some(eta) = self.log.eval_eta {
            positive("log.eval_eta", eta)?;
        }
        if let Some(m) = self.budget.max_samples {
            if m == 0 {
                return Err(BenchError::Config("budget.max_samples must be positive".into()));
            }
        }
        if let Some(s) = self.budget.max_wallclock_s {
            positive("budget.max_wallclock_s", s)?;
        }
        if self.matrix.imratio.is_some() && !matches!(self.data, DataConfig::Imbalanced { .. }) {
            return Err(BenchError::Config("matrix.imratio needs imbalanced data".into()));
        }
        for list in [&self.matrix.imratio, &self.matrix.lambda].into_iter().flatten() {
            if list.is_empty() {
                return Err(BenchError::Config("matrix lists must not be empty".into()));
            }
        }
        let mut labels: Vec<String> = self.algorithms.iter().map(AlgorithmConfig::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(BenchError::Config("algorithm labels must be distinct".into()));
        }
        for cell in self.cells() {
            validate_cell(&cell)?;
        }
        Ok(())
    }

    /// Algorithms crossed with every matrix value, in a fixed order.
    pub fn cells(&self) -> Vec<Cell> {
        let imratios: Vec<Option<f64>> = match &self.matrix.imratio {
            Some(v) => v.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let lambdas: Vec<Option<f64>> = match &self.matrix.lambda {
            Some(v) => v.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let mut cells = Vec::new();
        for &imr in &imratios {
            for &lam in &lambdas {
                for alg in &self.algorithms {
                    let mut data = self.data.clone();
                    let mut problem = self.problem.clone();
                    let mut label = alg.label();
                    if let (Some(v), DataConfig::Imbalanced { imratio, .. }) = (imr, &mut data) {
                        *imratio = v;
                        label.push_str(&format!("_imratio{v}"));
                    }
                    if let Some(v) = lam {
                        problem.lambda = v;
                        label.push_str(&format!("_lambda{v}"));
                    }
                    cells.push(Cell {
                        label,
                        data,
                        problem,
                        algorithm: alg.clone(),
                    });
                }
            }
        }
        cells
    }
}

fn validate_cell(cell: &Cell) -> Result<()> {
    match cell.data {
        DataConfig::Regression {
            n,
            dim,
            feature_scale,
            weight_scale,
            noise,
            y_clip,
            ..
        } => {
            if n == 0 || dim == 0 {
                return Err(BenchError::Config("data.n and data.dim must be positive".into()));
            }
            positive("data.feature_scale", feature_scale)?;
            nonnegative("data.weight_scale", weight_scale)?;
            nonnegative("data.noise", noise)?;
            positive("data.y_clip", y_clip)?;
            if cell.problem.model != ModelKind::Square {
                return Err(BenchError::Config("regression data needs model = \"square\"".into()));
            }
        }
        DataConfig::Imbalanced {
            num_classes,
            per_class_majority,
            imratio,
            feature_dim,
            class_separation,
            test_fraction,
            ..
        } => {
            if num_classes < 2 || per_class_majority == 0 || feature_dim == 0 {
                return Err(BenchError::Config(
                    "imbalanced data needs >= 2 classes, a positive majority size and features".into(),
                ));
            }
            if !(imratio > 0.0 && imratio <= 1.0) {
                return Err(BenchError::Config(format!("imratio must lie in (0, 1], got {imratio}")));
            }
            nonnegative("data.class_separation", class_separation)?;
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(BenchError::Config("data.test_fraction must lie in (0, 1)".into()));
            }
            if cell.problem.model != ModelKind::Mlp {
                return Err(BenchError::Config("imbalanced data needs model = \"mlp\"".into()));
            }
        }
    }
    let p = &cell.problem;
    positive("problem.lambda", p.lambda)?;
    if let Some(m) = p.loss_max {
        positive("problem.loss_max", m)?;
    }
    if let Some(c) = p.loss_cap {
        positive("problem.loss_cap", c)?;
    }
    if p.hidden == Some(0) {
        return Err(BenchError::Config("problem.hidden must be positive".into()));
    }
    positive("problem.sublevel_slack", p.sublevel_slack)?;
    if p.batch_size == 0 {
        return Err(BenchError::Config("problem.batch_size must be positive".into()));
    }
    match p.regularizer {
        RegularizerConfig::None => {}
        RegularizerConfig::Ridge { gamma } => nonnegative("regularizer.gamma", gamma)?,
        RegularizerConfig::L1 { weight } => nonnegative("regularizer.weight", weight)?,
        RegularizerConfig::Box { radius } => positive("regularizer.radius", radius)?,
    }
    let k = &p.constants;
    if k.l_agg.is_some() != k.sigma.is_some() {
        return Err(BenchError::Config("constants.l_agg and constants.sigma go together".into()));
    }
    for (name, x) in [("constants.l_agg", k.l_agg), ("constants.sigma", k.sigma), ("constants.delta_f", k.delta_f)] {
        if let Some(x) = x {
            positive(name, x)?;
        }
    }
    if let Some(mu) = k.mu {
        nonnegative("constants.mu", mu)?;
    }
    validate_algorithm(&cell.algorithm)
}

fn validate_algorithm(alg: &AlgorithmConfig) -> Result<()> {
    let iterations = |t: u64| {
        if t == 0 {
            Err(BenchError::Config(format!("{}: iterations must be positive", alg.label())))
        } else {
            Ok(())
        }
    };
    match *alg {
        AlgorithmConfig::Cover {
            iterations: t,
            schedule,
            ..
        } => {
            iterations(t)?;
            match schedule {
                CoverScheduleConfig::Constant { eta, a } => {
                    positive("schedule.eta", eta)?;
                    unit_interval("schedule.a", a)
                }
                CoverScheduleConfig::Theorem1 { cap_c, .. } => positive("schedule.cap_c", cap_c),
            }
        }
        AlgorithmConfig::Recover {
            num_stages,
            schedule,
            ..
        } => {
            if num_stages == 0 {
                return Err(BenchError::Config("recover: num_stages must be positive".into()));
            }
            match schedule {
                RecoverScheduleConfig::Practical {
                    eta0,
                    a0,
                    decay,
                    epochs_per_stage,
                } => {
                    positive("schedule.eta0", eta0)?;
                    unit_interval("schedule.a0", a0)?;
                    positive("schedule.decay", decay)?;
                    positive("schedule.epochs_per_stage", epochs_per_stage)
                }
                RecoverScheduleConfig::Theoretical { c, .. } => match c {
                    Some(c) => positive("schedule.c", c),
                    None => Ok(()),
                },
            }
        }
        AlgorithmConfig::Ascpg {
            c0,
            a_exp,
            b_exp,
            iterations: t,
            ..
        } => {
            iterations(t)?;
            positive("c0", c0)?;
            open_unit_interval("a_exp", a_exp)?;
            open_unit_interval("b_exp", b_exp)
        }
        AlgorithmConfig::StocAgda {
            beta1,
            tau1,
            beta2,
            tau2,
            iterations: t,
            ..
        } => {
            iterations(t)?;
            positive("beta1", beta1)?;
            positive("beta2", beta2)?;
            nonnegative("tau1", tau1)?;
            nonnegative("tau2", tau2)
        }
        AlgorithmConfig::Sgd {
            eta0,
            ref milestones,
            decay,
            epochs,
            ..
        } => {
            nonnegative("eta0", eta0)?;
            positive("decay", decay)?;
            positive("epochs", epochs)?;
            if milestones.windows(2).any(|w| w[0] > w[1]) {
                return Err(BenchError::Config("sgd: milestones must be sorted".into()));
            }
            Ok(())
        }
    }
}

fn unit_interval(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x <= 1.0 {
        Ok(())
    } else {
        Err(BenchError::Config(format!("{name} must lie in (0, 1], got {x}")))
    }
}

fn open_unit_interval(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(BenchError::Config(format!("{name} must lie in (0, 1), got {x}")))
    }
}
