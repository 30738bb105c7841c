//! Forward noising, posterior, reverse-step distribution and losses
//! (plain tensor math; the differentiable training loss lives in
//! [`crate::diffusion::loss`]).

use crate::diffusion::schedule::{NoiseSchedule, ScheduleView};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weight of the variational term in the hybrid objective.
pub const VLB_LAMBDA: f64 = 0.001;

/// Half the width of one intensity bin of data quantized to 255 levels
/// on `[-1, 1]`, used by the discretized decoder likelihood.
pub const BIN_HALF_WIDTH: f64 = 1.0 / 255.0;

fn same_shape<F: Scalar>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            "shape",
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}

/// Forward marginal draw: `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn q_sample<F: Scalar>(
    x0: &Tensor<F>,
    t: usize,
    eps: &Tensor<F>,
    sched: &NoiseSchedule,
) -> Result<Tensor<F>> {
    sched.check_index("q_sample", t)?;
    same_shape("q_sample", x0, eps)?;
    let a = F::of(sched.alpha_bar(t).sqrt());
    let b = F::of((1.0 - sched.alpha_bar(t)).sqrt());
    x0.zip(eps, |x, e| a * x + b * e)
}

/// Gaussian posterior `q(x_{t-1} | x_t, x_0)`: returns (mean, variance)
/// with variance `beta_tilde_t` (zero at t = 1).
pub fn q_posterior<F: Scalar>(
    x0: &Tensor<F>,
    xt: &Tensor<F>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<(Tensor<F>, f64)> {
    sched.check_index("q_posterior", t)?;
    same_shape("q_posterior", x0, xt)?;
    let (c0, ct) = q_posterior_coefficients(sched, t);
    let mean = x0.zip(xt, |x, y| F::of(c0) * x + F::of(ct) * y)?;
    Ok((mean, sched.beta_tilde(t)))
}

/// Coefficients of the posterior mean on (x0, xt).
pub fn q_posterior_coefficients(view: &impl ScheduleView, i: usize) -> (f64, f64) {
    let ab_prev = view.alpha_bar(i - 1);
    let ab = view.alpha_bar(i);
    let c0 = ab_prev.sqrt() * view.beta(i) / (1.0 - ab);
    let ct = view.alpha(i).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    (c0, ct)
}

/// Inverts the forward marginal for a noise estimate, clamped to the
/// data range: `clamp((xt - sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_bar_t))`.
pub fn predict_x0_from_eps<F: Scalar>(
    xt: &Tensor<F>,
    t: usize,
    eps_hat: &Tensor<F>,
    sched: &NoiseSchedule,
) -> Result<Tensor<F>> {
    sched.check_index("predict_x0_from_eps", t)?;
    same_shape("predict_x0_from_eps", xt, eps_hat)?;
    let inv = F::of(1.0 / sched.alpha_bar(t).sqrt());
    let b = F::of((1.0 - sched.alpha_bar(t)).sqrt());
    Ok(xt
        .zip(eps_hat, |x, e| (x - b * e) * inv)?
        .clamp(-F::one(), F::one()))
}

/// The learned reverse-step Gaussian.
#[derive(Clone, Debug)]
pub struct ReverseStepDistribution<F: Scalar> {
    pub mean: Tensor<F>,
    pub log_variance: Tensor<F>,
}

/// Reverse-step distribution from the model outputs at schedule index
/// `i`: mean per the epsilon parameterization, log variance
/// interpolated between `log beta_tilde` and `log beta` by `v` in [0,1].
pub fn p_mean_variance<F: Scalar>(
    eps_hat: &Tensor<F>,
    v: &Tensor<F>,
    xt: &Tensor<F>,
    view: &impl ScheduleView,
    i: usize,
) -> Result<ReverseStepDistribution<F>> {
    view.check_index("p_mean_variance", i)?;
    same_shape("p_mean_variance", xt, eps_hat)?;
    same_shape("p_mean_variance", xt, v)?;
    let inv_sqrt_alpha = F::of(1.0 / view.alpha(i).sqrt());
    let coef = F::of(view.beta(i) / (1.0 - view.alpha_bar(i)).sqrt());
    let mean = xt.zip(eps_hat, |x, e| inv_sqrt_alpha * (x - coef * e))?;
    let log_lo = F::of(view.log_beta_tilde_clipped(i));
    let log_hi = F::of(view.log_beta(i));
    let log_variance = v.map(|vv| vv * log_hi + (F::one() - vv) * log_lo);
    Ok(ReverseStepDistribution { mean, log_variance })
}

/// IDDPM's tanh approximation of the standard normal CDF.
pub fn approx_std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (z + 0.044715 * z.powi(3))).tanh())
}

/// Per-dimension negative log-likelihood of `x0` under a discretized
/// Gaussian with the given mean and log variance (bin width 2/255,
/// open-ended edge bins beyond +-0.999).
pub fn discretized_gaussian_nll<F: Scalar>(
    x0: &Tensor<F>,
    mean: &Tensor<F>,
    log_variance: &Tensor<F>,
) -> Result<f64> {
    same_shape("discretized_gaussian_nll", x0, mean)?;
    same_shape("discretized_gaussian_nll", x0, log_variance)?;
    let n = x0.numel() as f64;
    let mut total = 0.0f64;
    for idx in 0..x0.numel() {
        let x = x0.data()[idx].f64();
        let mu = mean.data()[idx].f64();
        let inv_std = (-0.5 * log_variance.data()[idx].f64()).exp();
        let centered = x - mu;
        let cdf_plus = approx_std_normal_cdf(inv_std * (centered + BIN_HALF_WIDTH));
        let cdf_min = approx_std_normal_cdf(inv_std * (centered - BIN_HALF_WIDTH));
        let log_prob = if x < -0.999 {
            cdf_plus.max(1e-12).ln()
        } else if x > 0.999 {
            (1.0 - cdf_min).max(1e-12).ln()
        } else {
            (cdf_plus - cdf_min).max(1e-12).ln()
        };
        total += log_prob;
    }
    Ok(-total / n)
}

/// One variational-bound term in nats per dimension: the KL between the
/// true posterior and the model distribution for `t >= 2`, or the
/// discretized decoder NLL at `t = 1`.
pub fn vlb_term<F: Scalar>(
    model_dist: &ReverseStepDistribution<F>,
    x0: &Tensor<F>,
    xt: &Tensor<F>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<f64> {
    sched.check_index("vlb_term", t)?;
    if t == 1 {
        return discretized_gaussian_nll(x0, &model_dist.mean, &model_dist.log_variance);
    }
    let (q_mean, q_var) = q_posterior(x0, xt, t, sched)?;
    let log_q = q_var.ln();
    let n = x0.numel() as f64;
    let mut total = 0.0f64;
    for idx in 0..x0.numel() {
        let mu_q = q_mean.data()[idx].f64();
        let mu_p = model_dist.mean.data()[idx].f64();
        let log_p = model_dist.log_variance.data()[idx].f64();
        total += 0.5
            * (log_p - log_q + (log_q - log_p).exp()
                + (mu_q - mu_p).powi(2) * (-log_p).exp()
                - 1.0);
    }
    Ok(total / n)
}

/// The hybrid training objective:
/// `mean((eps - eps_hat)^2) + lambda * vlb_term`, lambda = 0.001.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_loss<F: Scalar>(
    eps_hat: &Tensor<F>,
    v: &Tensor<F>,
    eps: &Tensor<F>,
    x0: &Tensor<F>,
    xt: &Tensor<F>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<f64> {
    same_shape("hybrid_loss", eps, eps_hat)?;
    let n = eps.numel() as f64;
    let l_simple: f64 = eps
        .data()
        .iter()
        .zip(eps_hat.data().iter())
        .map(|(&a, &b)| (a.f64() - b.f64()).powi(2))
        .sum::<f64>()
        / n;
    let dist = p_mean_variance(eps_hat, v, xt, sched, t)?;
    let l_vlb = vlb_term(&dist, x0, xt, t, sched)?;
    Ok(l_simple + VLB_LAMBDA * l_vlb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::make_cosine_schedule;
    use crate::rng::stream;
    use rand::Rng;

    fn rand_tensor(seed: u64, tag: &str, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
        let mut rng = stream(seed, tag);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn q_sample_with_zero_noise_scales_x0() {
        let sched = make_cosine_schedule(50).unwrap();
        let x0 = rand_tensor(1, "x0", vec![3, 4], -1.0, 1.0);
        let eps = Tensor::zeros(vec![3, 4]);
        let t = 17;
        let xt = q_sample(&x0, t, &eps, &sched).unwrap();
        let a = sched.alpha_bar(t).sqrt();
        for (o, x) in xt.data().iter().zip(x0.data().iter()) {
            assert!((o - a * x).abs() < 1e-15);
        }
    }

    #[test]
    fn q_sample_rejects_out_of_range_t() {
        let sched = make_cosine_schedule(10).unwrap();
        let x0 = Tensor::<f64>::zeros(vec![2]);
        let eps = Tensor::zeros(vec![2]);
        assert!(q_sample(&x0, 0, &eps, &sched).is_err());
        assert!(q_sample(&x0, 11, &eps, &sched).is_err());
    }

    #[test]
    fn near_degenerate_schedule_keeps_x0() {
        // beta -> 0 means alpha_bar stays ~1 and q_sample returns ~x0.
        let sched = crate::diffusion::schedule::make_linear_schedule(5, 1e-12, 1e-12).unwrap();
        let x0 = rand_tensor(2, "x0", vec![4], -1.0, 1.0);
        let eps = rand_tensor(2, "eps", vec![4], -1.0, 1.0);
        let xt = q_sample(&x0, 5, &eps, &sched).unwrap();
        for (o, x) in xt.data().iter().zip(x0.data().iter()) {
            assert!((o - x).abs() < 1e-5);
        }
    }

    #[test]
    fn q_posterior_at_t1_returns_x0_with_zero_variance() {
        let sched = make_cosine_schedule(30).unwrap();
        let x0 = rand_tensor(3, "x0", vec![5], -1.0, 1.0);
        let xt = rand_tensor(3, "xt", vec![5], -1.0, 1.0);
        let (mean, var) = q_posterior(&x0, &xt, 1, &sched).unwrap();
        assert_eq!(var, 0.0);
        for (m, x) in mean.data().iter().zip(x0.data().iter()) {
            assert!((m - x).abs() < 1e-12);
        }
    }

    #[test]
    fn q_posterior_matches_scalar_bayes_oracle() {
        // Direct Bayes combination of the two Gaussian factors:
        // q(x_{t-1}|x_t, x_0) has precision 1/beta_tilde and the mean of
        // the product of N(x_t; sqrt(alpha_t) x_{t-1}, beta_t) and
        // N(x_{t-1}; sqrt(alpha_bar_{t-1}) x_0, 1 - alpha_bar_{t-1}).
        let sched = make_cosine_schedule(40).unwrap();
        for t in [2usize, 7, 23, 40] {
            let x0v = 0.37;
            let xtv = -0.52;
            let a_t = sched.alpha(t);
            let b_t = sched.beta(t);
            let ab_prev = sched.alpha_bar(t - 1);
            // Product of Gaussians in x_{t-1}: precision and mean.
            let prec = a_t / b_t + 1.0 / (1.0 - ab_prev);
            let mean_oracle =
                (a_t.sqrt() * xtv / b_t + ab_prev.sqrt() * x0v / (1.0 - ab_prev)) / prec;
            let var_oracle = 1.0 / prec;

            let x0 = Tensor::scalar(x0v);
            let xt = Tensor::scalar(xtv);
            let (mean, var) = q_posterior(&x0, &xt, t, &sched).unwrap();
            let rel_m = (mean.item().unwrap() - mean_oracle).abs() / mean_oracle.abs();
            let rel_v = (var - var_oracle).abs() / var_oracle;
            assert!(rel_m < 1e-10, "t={t} rel_m={rel_m:.2e}");
            assert!(rel_v < 1e-10, "t={t} rel_v={rel_v:.2e}");
        }
    }

    #[test]
    fn q_posterior_coefficients_sum_to_one_for_constant_unit_inputs() {
        // With x0 = xt = 1 on a constant schedule the coefficient sum is
        // 1 up to O(beta^2) (exactly 2 sqrt(1-b)/(2-b) at t = 2), so a
        // small beta makes it 1 to within 1e-7.
        let sched = crate::diffusion::schedule::make_linear_schedule(20, 1e-4, 1e-4).unwrap();
        for t in 1..=20 {
            let (c0, ct) = q_posterior_coefficients(&sched, t);
            let x0 = Tensor::scalar(1.0f64);
            let xt = Tensor::scalar(1.0f64);
            let (mean, _) = q_posterior(&x0, &xt, t, &sched).unwrap();
            assert!((c0 + ct - 1.0).abs() < 1e-7, "t={t}: {}", c0 + ct);
            assert!((mean.item().unwrap() - 1.0).abs() < 1e-7, "t={t}");
        }
    }

    #[test]
    fn predict_x0_inverts_q_sample_exactly() {
        let sched = make_cosine_schedule(60).unwrap();
        let x0 = rand_tensor(4, "x0", vec![8, 8], -0.99, 0.99);
        let eps = rand_tensor(4, "eps", vec![8, 8], -2.0, 2.0);
        for t in [1usize, 13, 60] {
            let xt = q_sample(&x0, t, &eps, &sched).unwrap();
            let back = predict_x0_from_eps(&xt, t, &eps, &sched).unwrap();
            for (b, x) in back.data().iter().zip(x0.data().iter()) {
                assert!((b - x).abs() < 1e-10, "t={t}");
            }
        }
    }

    #[test]
    fn predict_x0_formula_matches_independent_evaluation() {
        let sched = make_cosine_schedule(33).unwrap();
        let xt = rand_tensor(5, "xt", vec![8, 8], -1.5, 1.5);
        let eps_hat = rand_tensor(5, "eh", vec![8, 8], -1.0, 1.0);
        let t = 9;
        let out = predict_x0_from_eps(&xt, t, &eps_hat, &sched).unwrap();
        let ab = sched.alpha_bar(t);
        for i in 0..xt.numel() {
            let expect =
                ((xt.data()[i] - (1.0 - ab).sqrt() * eps_hat.data()[i]) / ab.sqrt()).clamp(-1.0, 1.0);
            assert!((out.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn eps_hat_zero_gives_scaled_clamped_xt() {
        let sched = make_cosine_schedule(20).unwrap();
        let xt = rand_tensor(6, "xt", vec![6], -0.1, 0.1);
        let zero = Tensor::zeros(vec![6]);
        let t = 3;
        let out = predict_x0_from_eps(&xt, t, &zero, &sched).unwrap();
        let inv = 1.0 / sched.alpha_bar(t).sqrt();
        for (o, x) in out.data().iter().zip(xt.data().iter()) {
            assert!((o - (x * inv).clamp(-1.0, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_interpolation_hits_both_endpoints() {
        let sched = make_cosine_schedule(25).unwrap();
        let shape = vec![3, 3];
        let xt = rand_tensor(7, "xt", shape.clone(), -1.0, 1.0);
        let eps_hat = rand_tensor(7, "eh", shape.clone(), -1.0, 1.0);
        for t in [2usize, 14, 25] {
            let v0 = Tensor::zeros(shape.clone());
            let d0 = p_mean_variance(&eps_hat, &v0, &xt, &sched, t).unwrap();
            for &lv in d0.log_variance.data() {
                assert!((lv.exp() - sched.beta_tilde(t)).abs() < 1e-15, "t={t}");
            }
            let v1 = Tensor::filled(shape.clone(), 1.0);
            let d1 = p_mean_variance(&eps_hat, &v1, &xt, &sched, t).unwrap();
            for &lv in d1.log_variance.data() {
                assert!((lv.exp() - sched.beta(t)).abs() < 1e-15, "t={t}");
            }
        }
    }

    #[test]
    fn p_mean_with_true_eps_reproduces_posterior_mean() {
        let sched = make_cosine_schedule(50).unwrap();
        let x0 = rand_tensor(8, "x0", vec![4, 4], -1.0, 1.0);
        let eps = rand_tensor(8, "eps", vec![4, 4], -2.0, 2.0);
        let v = rand_tensor(8, "v", vec![4, 4], 0.0, 1.0);
        for t in 1..=50 {
            let xt = q_sample(&x0, t, &eps, &sched).unwrap();
            let dist = p_mean_variance(&eps, &v, &xt, &sched, t).unwrap();
            let (q_mean, _) = q_posterior(&x0, &xt, t, &sched).unwrap();
            for (a, b) in dist.mean.data().iter().zip(q_mean.data().iter()) {
                assert!((a - b).abs() < 1e-10, "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn vlb_of_exact_posterior_model_is_zero() {
        let sched = make_cosine_schedule(30).unwrap();
        let x0 = rand_tensor(9, "x0", vec![5], -1.0, 1.0);
        let eps = rand_tensor(9, "eps", vec![5], -1.0, 1.0);
        for t in 2..=30 {
            let xt = q_sample(&x0, t, &eps, &sched).unwrap();
            let (q_mean, q_var) = q_posterior(&x0, &xt, t, &sched).unwrap();
            let dist = ReverseStepDistribution {
                mean: q_mean,
                log_variance: Tensor::filled(vec![5], q_var.ln()),
            };
            let kl = vlb_term(&dist, &x0, &xt, t, &sched).unwrap();
            assert!(kl.abs() < 1e-12, "t={t}: {kl}");
        }
    }

    #[test]
    fn scalar_kl_matches_closed_form() {
        // KL(N(0,1) || N(0,e^2)) = (e^-2 - 1 + 2) / 2 = 0.5676676416...
        let x0 = Tensor::scalar(0.0f64);
        let sched = make_cosine_schedule(5).unwrap();
        // Build the comparison directly through the same formula by
        // constructing a posterior with variance 1 — instead verify the
        // inner formula on raw numbers.
        let _ = (&x0, &sched);
        let (log_q, log_p) = (0.0f64, 2.0f64);
        let kl = 0.5 * (log_p - log_q + (log_q - log_p).exp() + 0.0 - 1.0);
        let expected = (f64::exp(-2.0) - 1.0 + 2.0) / 2.0;
        assert!((kl - expected).abs() < 1e-15);
        assert!((expected - 0.5676676416183064).abs() < 1e-15);
    }

    #[test]
    fn kl_is_nonnegative_on_randomized_instances() {
        let sched = make_cosine_schedule(40).unwrap();
        let mut rng = stream(10, "klnonneg");
        for trial in 0..1000 {
            let t = rng.gen_range(2..=40);
            let x0 = rand_tensor(11 + trial, "x0", vec![3], -1.0, 1.0);
            let eps = rand_tensor(11 + trial, "eps", vec![3], -1.5, 1.5);
            let xt = q_sample(&x0, t, &eps, &sched).unwrap();
            let eps_hat = rand_tensor(11 + trial, "eh", vec![3], -1.5, 1.5);
            let v = rand_tensor(11 + trial, "v", vec![3], 0.0, 1.0);
            let dist = p_mean_variance(&eps_hat, &v, &xt, &sched, t).unwrap();
            let kl = vlb_term(&dist, &x0, &xt, t, &sched).unwrap();
            assert!(kl >= -1e-12, "trial {trial}: {kl}");
        }
    }

    #[test]
    fn decoder_nll_is_finite_and_small_for_tight_fit() {
        // Mean exactly on x0 with tiny variance: each bin captures all
        // the mass, so the NLL approaches zero.
        let x0 = rand_tensor(12, "x0", vec![7], -0.9, 0.9);
        let mean = x0.clone();
        let log_var = Tensor::filled(vec![7], (1e-6f64).ln());
        let nll = discretized_gaussian_nll(&x0, &mean, &log_var).unwrap();
        // The tanh-approximate CDF saturates a little slower than the
        // true normal CDF, which bounds how small the NLL can get.
        assert!(nll >= 0.0 && nll < 1e-3, "{nll}");
    }

    #[test]
    fn hybrid_loss_is_zero_for_perfect_model() {
        let sched = make_cosine_schedule(20).unwrap();
        let x0 = rand_tensor(13, "x0", vec![4], -1.0, 1.0);
        let eps = rand_tensor(13, "eps", vec![4], -1.0, 1.0);
        for t in 2..=20 {
            let xt = q_sample(&x0, t, &eps, &sched).unwrap();
            // v chosen so the interpolated variance equals beta_tilde.
            let v = Tensor::zeros(vec![4]);
            let loss = hybrid_loss(&eps, &v, &eps, &x0, &xt, t, &sched).unwrap();
            assert!(loss.abs() < 1e-12, "t={t}: {loss}");
        }
    }

    #[test]
    fn constant_offset_gives_unit_simple_loss() {
        let sched = make_cosine_schedule(20).unwrap();
        let x0 = rand_tensor(14, "x0", vec![6], -1.0, 1.0);
        let eps = rand_tensor(14, "eps", vec![6], -1.0, 1.0);
        let t = 9;
        let xt = q_sample(&x0, t, &eps, &sched).unwrap();
        let eps_hat = eps.map(|e| e + 1.0);
        let v = Tensor::zeros(vec![6]);
        let loss = hybrid_loss(&eps_hat, &v, &eps, &x0, &xt, t, &sched).unwrap();
        let dist = p_mean_variance(&eps_hat, &v, &xt, &sched, t).unwrap();
        let vlb = vlb_term(&dist, &x0, &xt, t, &sched).unwrap();
        assert!((loss - VLB_LAMBDA * vlb - 1.0).abs() < 1e-12);
    }
}
