//! Step-size and momentum schedules.

use crate::error::{Error, Result};
use crate::problem::ProblemConstants;

/// Which form of the constant `c` to use in the polynomial schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentumConstant {
    /// `c = 128 L + sigma^2 / (7 L k^3)`
    #[default]
    Statement,
    /// `c = 104 L^2 + sigma^2 / (7 L k^3)`
    Proof,
}

/// Which first term enters the offset `w` of the polynomial schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OffsetTerm {
    /// `(16 L k)^3`, which guarantees `eta(t) <= 1/(16 L)`.
    #[default]
    Cubed,
    /// `16 L k^3`, as literally stated; does not bound `eta` when `L > 1`.
    Literal,
}

/// `eta(t) = k / (w + sigma^2 t)^(1/3)`, `a(t) = min(1, c eta(t)^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Schedule {
    pub cap_c: f64,
    pub k: f64,
    pub c: f64,
    pub offset_w: f64,
    pub sigma_sq: f64,
    pub l: f64,
}

impl Theorem1Schedule {
    pub fn new(
        constants: &ProblemConstants,
        cap_c: f64,
        momentum: MomentumConstant,
        offset: OffsetTerm,
    ) -> Result<Self> {
        constants.validate()?;
        if !(cap_c > 0.0) || !cap_c.is_finite() {
            return Err(Error::Configuration(format!("C must be positive, got {cap_c}")));
        }
        let l = constants.l_agg;
        let sigma_sq = constants.sigma * constants.sigma;
        let k = cap_c * sigma_sq.cbrt() / l;
        let tail = sigma_sq / (7.0 * l * k.powi(3));
        let c = match momentum {
            MomentumConstant::Statement => 128.0 * l + tail,
            MomentumConstant::Proof => 104.0 * l * l + tail,
        };
        let first = match offset {
            OffsetTerm::Cubed => (16.0 * l * k).powi(3),
            OffsetTerm::Literal => 16.0 * l * k.powi(3),
        };
        let offset_w = first.max(2.0 * sigma_sq).max((c * k / (4.0 * l)).powi(3));
        Ok(Self {
            cap_c,
            k,
            c,
            offset_w,
            sigma_sq,
            l,
        })
    }

    pub fn eta(&self, t: u64) -> f64 {
        self.k / (self.offset_w + self.sigma_sq * t as f64).cbrt()
    }

    pub fn a(&self, t: u64) -> f64 {
        clamp_momentum(self.c * self.eta(t).powi(2))
    }
}

/// `theorem1_schedule` with the default variants.
pub fn theorem1_schedule(constants: &ProblemConstants, cap_c: f64) -> Result<Theorem1Schedule> {
    Theorem1Schedule::new(constants, cap_c, MomentumConstant::default(), OffsetTerm::default())
}

pub(crate) fn clamp_momentum(a: f64) -> f64 {
    a.clamp(f64::MIN_POSITIVE, 1.0)
}

/// Step sizes for a COVER run; step `t` (1-based) uses `eta(t - 1)` and
/// momentum `a(t)` for the estimator it produces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant { eta: f64, a: f64 },
    Theorem1(Theorem1Schedule),
}

impl StepSchedule {
    pub fn eta(&self, step: u64) -> f64 {
        match self {
            StepSchedule::Constant { eta, .. } => *eta,
            StepSchedule::Theorem1(s) => s.eta(step.saturating_sub(1)),
        }
    }

    pub fn a_next(&self, step: u64) -> f64 {
        match self {
            StepSchedule::Constant { a, .. } => *a,
            StepSchedule::Theorem1(s) => s.a(step),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let StepSchedule::Constant { eta, a } = *self {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(Error::Argument(format!("eta must be positive, got {eta}")));
            }
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Argument(format!("a must lie in (0, 1], got {a}")));
            }
        }
        Ok(())
    }
}

/// Which exponent of `L` enters `eps_1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialGapVariant {
    /// `eps_1 = c^2 sigma^2 / (64 mu L^4)`
    #[default]
    Theorem,
    /// `eps_1 = c^2 sigma^2 / (64 mu L^3)`
    Lemma,
}

/// Per-stage hyperparameters of RECOVER.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StagePlan {
    pub stage: usize,
    pub eps: f64,
    pub eta: f64,
    pub t: u64,
    pub a: f64,
}

/// Default `c = 104 L^2` of the stagewise schedule.
pub fn default_stage_c(constants: &ProblemConstants) -> f64 {
    104.0 * constants.l_agg * constants.l_agg
}

/// Stage `k` (1-based) of the theoretical restart schedule.
pub fn stage_plan(
    k: usize,
    constants: &ProblemConstants,
    c: f64,
    variant: InitialGapVariant,
) -> Result<StagePlan> {
    if k == 0 {
        return Err(Error::Argument("stages are numbered from 1".into()));
    }
    constants.validate()?;
    let mu = constants.mu;
    if mu <= 0.0 {
        return Err(Error::Configuration(
            "the theoretical stage plan needs mu > 0; use PracticalSchedule when mu is unknown".into(),
        ));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Configuration(format!("c must be positive, got {c}")));
    }
    let l = constants.l_agg;
    let sigma = constants.sigma;
    let l_pow = match variant {
        InitialGapVariant::Theorem => l.powi(4),
        InitialGapVariant::Lemma => l.powi(3),
    };
    let eps_1 = c * c * sigma * sigma / (64.0 * mu * l_pow);
    let eps = eps_1 / 2f64.powi(k as i32 - 1);
    let eta = ((mu * eps).sqrt() * l / (2.0 * c * sigma)).min(1.0 / (16.0 * l));
    let t_terms = [
        96.0 * c * sigma / (mu.powf(1.5) * eps.sqrt() * l),
        2.0 * c * c * sigma * sigma / (mu * l * l * eps),
        constants.delta_f / (sigma * sigma),
    ];
    let t_real = t_terms.into_iter().fold(1.0, f64::max).ceil();
    if t_real > u64::MAX as f64 / 2.0 {
        return Err(Error::Configuration(format!("stage {k} length {t_real:e} overflows")));
    }
    Ok(StagePlan {
        stage: k,
        eps,
        eta,
        t: t_real as u64,
        a: clamp_momentum(c * eta * eta),
    })
}

/// Hand-tuned stagewise schedule: `eta_k = eta_0 / decay^(k-1)`,
/// `a_k = a_0 (eta_k / eta_0)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PracticalSchedule {
    pub eta0: f64,
    pub a0: f64,
    pub decay: f64,
    pub epochs_per_stage: f64,
}

impl PracticalSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0) || !(self.a0 > 0.0 && self.a0 <= 1.0) {
            return Err(Error::Configuration("need eta0 > 0 and a0 in (0, 1]".into()));
        }
        if !(self.decay > 0.0) || !(self.epochs_per_stage > 0.0) {
            return Err(Error::Configuration("decay and epochs_per_stage must be positive".into()));
        }
        Ok(())
    }

    /// Stage `k` for a dataset of `n` points sampled in batches of `b`.
    pub fn stage(&self, k: usize, n: usize, b: usize) -> StagePlan {
        let eta = self.eta0 / self.decay.powi(k as i32 - 1);
        let ratio = eta / self.eta0;
        let t = (self.epochs_per_stage * n as f64 / b.max(1) as f64).ceil().max(1.0) as u64;
        StagePlan {
            stage: k,
            eps: f64::NAN,
            eta,
            t,
            a: clamp_momentum(self.a0 * ratio * ratio),
        }
    }
}
