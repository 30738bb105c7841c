//! Closed-form diffusion mathematics: schedules, forward noising,
//! posterior, reverse-step distribution, losses and strided sampling.

pub mod loss;
pub mod process;
pub mod sample;
pub mod schedule;

pub use process::{
    hybrid_loss, p_mean_variance, predict_x0_from_eps, q_posterior, q_sample, vlb_term,
    ReverseStepDistribution, VLB_LAMBDA,
};
pub use sample::sample_loop;
pub use schedule::{
    make_cosine_schedule, make_linear_schedule, make_strided_schedule, NoiseSchedule,
    ScheduleKind, ScheduleView, StridedSchedule,
};
