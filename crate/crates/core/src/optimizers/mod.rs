//! COVER, its schedules, and the RECOVER restart loop.

mod cover;
mod recover;
mod schedule;

pub use cover::{
    cover_init, cover_memory_words, cover_run, cover_run_recorded, cover_step, CoverConfig,
    CoverState, ReturnMode, Start, DIVERGENCE_NORM,
};
pub use recover::{
    plan_stages, recover_run, recover_run_recorded, RecoverConfig, RecoverOutput,
    RecoverScheduler, StageOutput,
};
pub use schedule::{
    default_stage_c, stage_plan, theorem1_schedule, InitialGapVariant, MomentumConstant,
    OffsetTerm, PracticalSchedule, StagePlan, StepSchedule, Theorem1Schedule,
};
