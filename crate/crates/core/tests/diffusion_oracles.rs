//! Statistical oracles for the diffusion math: Monte-Carlo moments of
//! the forward marginal and the one-shot/sequential composition
//! property. Deterministic seeds keep the checks reproducible.

use emodiff_core::diffusion::{make_cosine_schedule, q_sample, ScheduleView};
use emodiff_core::rng::stream;
use emodiff_core::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

const DRAWS: usize = 100_000;

/// Bound: a few standard errors, padded 1%.
fn se_bound(se: f64) -> f64 {
    5.0 * se * 1.01
}

#[test]
fn q_sample_moments_match_the_marginal() {
    let sched = make_cosine_schedule(50).unwrap();
    let x0 = Tensor::from_vec(vec![2], vec![0.7f64, -0.4]).unwrap();
    for t in [1usize, 10, 35, 50] {
        let mut rng = stream(100 + t as u64, "mc");
        let mut sums = [0.0f64; 2];
        let mut sq_sums = [0.0f64; 2];
        for _ in 0..DRAWS {
            let eps = Tensor::from_vec(
                vec![2],
                (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            )
            .unwrap();
            let xt = q_sample(&x0, t, &eps, &sched).unwrap();
            for i in 0..2 {
                sums[i] += xt.data()[i];
                sq_sums[i] += xt.data()[i] * xt.data()[i];
            }
        }
        let var_true = 1.0 - sched.alpha_bar(t);
        let sigma = var_true.sqrt();
        for i in 0..2 {
            let mean_true = sched.alpha_bar(t).sqrt() * x0.data()[i];
            let mean_emp = sums[i] / DRAWS as f64;
            let var_emp = sq_sums[i] / DRAWS as f64 - mean_emp * mean_emp;
            let se_mean = sigma / (DRAWS as f64).sqrt();
            let se_var = var_true * (2.0 / (DRAWS as f64 - 1.0)).sqrt();
            assert!(
                (mean_emp - mean_true).abs() <= se_bound(se_mean),
                "t={t} elem {i}: mean {mean_emp:.5} vs {mean_true:.5} (se {se_mean:.2e})"
            );
            assert!(
                (var_emp - var_true).abs() <= se_bound(se_var),
                "t={t} elem {i}: var {var_emp:.5} vs {var_true:.5} (se {se_var:.2e})"
            );
        }
    }
}

#[test]
fn one_shot_noising_matches_sequential_chain_moments() {
    // x_t = sqrt(alpha_t) x_{t-1} + sqrt(beta_t) eps_t applied t times
    // has the same marginal as the one-shot q_sample.
    let sched = make_cosine_schedule(30).unwrap();
    let x0 = 0.63f64;
    let t = 18;

    let mut rng = stream(7, "chain");
    let mut one_shot = Vec::with_capacity(DRAWS);
    let mut chain = Vec::with_capacity(DRAWS);
    for _ in 0..DRAWS {
        let eps: f64 = rng.sample(StandardNormal);
        one_shot.push(sched.alpha_bar(t).sqrt() * x0 + (1.0 - sched.alpha_bar(t)).sqrt() * eps);
        let mut x = x0;
        for step in 1..=t {
            let e: f64 = rng.sample(StandardNormal);
            x = sched.alpha(step).sqrt() * x + sched.beta(step).sqrt() * e;
        }
        chain.push(x);
    }
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    };
    let (m1, v1) = stats(&one_shot);
    let (m2, v2) = stats(&chain);
    let mean_true = sched.alpha_bar(t).sqrt() * x0;
    let var_true = 1.0 - sched.alpha_bar(t);
    // Empirical moments of both routes within 1% of the analytic values
    // (the standard errors at 1e5 draws are comfortably below that).
    for (label, m, v) in [("one-shot", m1, v1), ("chain", m2, v2)] {
        assert!(
            (m - mean_true).abs() <= 0.01_f64.max(0.01 * mean_true.abs()),
            "{label} mean {m:.5} vs {mean_true:.5}"
        );
        assert!(
            (v - var_true).abs() <= 0.01 * var_true,
            "{label} var {v:.5} vs {var_true:.5}"
        );
    }
}
