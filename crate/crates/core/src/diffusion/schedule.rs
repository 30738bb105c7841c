//! Noise schedules. All per-timestep constants are precomputed in f64.
//!
//! Timesteps are 1-based: `t` in `1..=T`, with `alpha_bar(0) := 1`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScheduleKind::Linear => f.write_str("linear"),
            ScheduleKind::Cosine => f.write_str("cosine"),
        }
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<ScheduleKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::InvalidArgument(format!(
                "unknown schedule kind {other:?} (expected linear|cosine)"
            ))),
        }
    }
}

/// Per-step constants shared by full and strided schedules. Building
/// both through this one function keeps an S = T strided schedule
/// bit-identical to its parent.
#[derive(Clone, Debug)]
pub struct ScheduleTable {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
    log_beta: Vec<f64>,
    /// `ln(beta_tilde)` with the first slot replaced by the second (the
    /// first is `ln 0`), keeping the variance interpolation finite.
    log_beta_tilde_clipped: Vec<f64>,
}

impl ScheduleTable {
    /// `alpha` is passed explicitly: full schedules use `1 - beta`,
    /// strided ones the exact `alpha_bar` ratio (recomputing it from a
    /// beta near 1 would lose all precision).
    fn build(beta: Vec<f64>, alpha: Vec<f64>, alpha_bar: Vec<f64>) -> ScheduleTable {
        let n = beta.len();
        let mut beta_tilde = vec![0.0f64; n];
        for i in 0..n {
            let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
            beta_tilde[i] = (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i];
        }
        let log_beta: Vec<f64> = beta.iter().map(|b| b.ln()).collect();
        let mut log_beta_tilde_clipped: Vec<f64> = beta_tilde.iter().map(|b| b.ln()).collect();
        log_beta_tilde_clipped[0] = if n > 1 { beta_tilde[1].ln() } else { log_beta[0] };
        ScheduleTable { beta, alpha, alpha_bar, beta_tilde, log_beta, log_beta_tilde_clipped }
    }
}

/// Read access to schedule constants at a 1-based index.
pub trait ScheduleView {
    fn table(&self) -> &ScheduleTable;

    /// Number of usable steps (T for a full schedule, S for a strided one).
    fn len(&self) -> usize {
        self.table().beta.len()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parent timestep fed to the denoiser at index `i`.
    fn model_timestep(&self, i: usize) -> usize;

    fn check_index(&self, op: &'static str, i: usize) -> Result<()> {
        if i == 0 || i > self.len() {
            return Err(Error::InvalidArgument(format!(
                "{op}: timestep {i} out of range 1..={}",
                self.len()
            )));
        }
        Ok(())
    }

    fn beta(&self, i: usize) -> f64 {
        self.table().beta[i - 1]
    }

    fn alpha(&self, i: usize) -> f64 {
        self.table().alpha[i - 1]
    }

    fn alpha_bar(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.table().alpha_bar[i - 1]
        }
    }

    fn beta_tilde(&self, i: usize) -> f64 {
        self.table().beta_tilde[i - 1]
    }

    fn log_beta(&self, i: usize) -> f64 {
        self.table().log_beta[i - 1]
    }

    fn log_beta_tilde_clipped(&self, i: usize) -> f64 {
        self.table().log_beta_tilde_clipped[i - 1]
    }
}

/// A full training schedule over `T` steps.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    table: ScheduleTable,
}

impl ScheduleView for NoiseSchedule {
    fn table(&self) -> &ScheduleTable {
        &self.table
    }

    fn model_timestep(&self, i: usize) -> usize {
        i
    }
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.table.beta
    }
}

const COSINE_S: f64 = 0.008;
const BETA_CLIP: f64 = 0.999;

/// Cosine schedule: `alpha_bar(t) = f(t)/f(0)` with
/// `f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2)`, `s = 0.008`, and betas
/// clipped to 0.999. The stored `alpha_bar` is the exact running product
/// of the stored alphas.
pub fn make_cosine_schedule(steps: usize) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::InvalidArgument(format!("schedule needs T >= 1, got {steps}")));
    }
    let f = |t: f64| {
        let x = (t / steps as f64 + COSINE_S) / (1.0 + COSINE_S) * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    let mut beta = Vec::with_capacity(steps);
    for t in 1..=steps {
        let b = 1.0 - f(t as f64) / f(t as f64 - 1.0);
        beta.push(b.min(BETA_CLIP));
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut prod = 1.0f64;
    for &a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    Ok(NoiseSchedule { kind: ScheduleKind::Cosine, table: ScheduleTable::build(beta, alpha, alpha_bar) })
}

/// Linear schedule from `beta_start` to `beta_end` inclusive.
pub fn make_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::InvalidArgument(format!("schedule needs T >= 1, got {steps}")));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let beta: Vec<f64> = if steps == 1 {
        vec![beta_start]
    } else {
        (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect()
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut prod = 1.0f64;
    for &a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    Ok(NoiseSchedule { kind: ScheduleKind::Linear, table: ScheduleTable::build(beta, alpha, alpha_bar) })
}

/// An evenly spaced subsequence of a parent schedule, rebased so that
/// sampling over the S retained steps matches the parent's marginals.
#[derive(Clone, Debug)]
pub struct StridedSchedule {
    tau: Vec<usize>,
    table: ScheduleTable,
}

impl ScheduleView for StridedSchedule {
    fn table(&self) -> &ScheduleTable {
        &self.table
    }

    fn model_timestep(&self, i: usize) -> usize {
        self.tau[i - 1]
    }
}

impl StridedSchedule {
    pub fn tau(&self) -> &[usize] {
        &self.tau
    }
}

/// Retains `tau_i = ceil(i*T/S)` for `i = 1..=S` (strictly increasing,
/// ending at T). The rebased `alpha_bar` entries are exact copies of the
/// parent's; rebased betas come from consecutive alpha_bar ratios, with
/// unit-gap steps copying the parent beta so that `S = T` reproduces the
/// parent schedule bit-exactly.
pub fn make_strided_schedule(parent: &NoiseSchedule, sample_steps: usize) -> Result<StridedSchedule> {
    let t_total = parent.steps();
    if sample_steps < 1 || sample_steps > t_total {
        return Err(Error::InvalidArgument(format!(
            "sample steps must be in 1..={t_total}, got {sample_steps}"
        )));
    }
    let tau: Vec<usize> = (1..=sample_steps)
        .map(|i| (i * t_total).div_ceil(sample_steps))
        .collect();
    debug_assert_eq!(*tau.last().unwrap(), t_total);

    let mut beta = Vec::with_capacity(sample_steps);
    let mut alpha = Vec::with_capacity(sample_steps);
    let mut alpha_bar = Vec::with_capacity(sample_steps);
    let mut prev_tau = 0usize;
    for &t in &tau {
        let ab = parent.alpha_bar(t);
        let ab_prev = parent.alpha_bar(prev_tau);
        let (b, a) = if t == prev_tau + 1 {
            (parent.beta(t), parent.alpha(t))
        } else {
            let ratio = ab / ab_prev;
            (1.0 - ratio, ratio)
        };
        beta.push(b);
        alpha.push(a);
        alpha_bar.push(ab);
        prev_tau = t;
    }
    Ok(StridedSchedule { tau, table: ScheduleTable::build(beta, alpha, alpha_bar) })
}
