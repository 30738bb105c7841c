//! The differentiable hybrid objective, built from graph primitives so
//! gradients come from the tape.

use crate::diffusion::process::{BIN_HALF_WIDTH, VLB_LAMBDA};
use crate::diffusion::schedule::ScheduleView;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Handles into the loss graph: the total plus its two parts (values
/// readable for logging).
pub struct HybridLossNodes {
    pub total: NodeId,
    pub simple: NodeId,
    pub vlb: NodeId,
}

/// Records `mean((eps - eps_hat)^2) + lambda * vlb` on the graph.
///
/// `eps_hat` and `v` are live graph nodes (v already logistic-squashed
/// into [0,1]); `eps`, `x0` and `xt` enter as constants. When
/// `detach_mean` is set, the variational term sees a stop-gradient copy
/// of `eps_hat`, so only the variance head learns from it (the training
/// configuration); finite-difference checks use `detach_mean = false`
/// because forward perturbation cannot see the detachment.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_loss_graph<F: Scalar>(
    g: &mut Graph<F>,
    eps_hat: NodeId,
    v: NodeId,
    eps: &Tensor<F>,
    x0: &Tensor<F>,
    xt: &Tensor<F>,
    view: &impl ScheduleView,
    i: usize,
    detach_mean: bool,
) -> Result<HybridLossNodes> {
    view.check_index("hybrid_loss_graph", i)?;
    let eps_c = g.constant(eps.clone());
    let xt_c = g.constant(xt.clone());

    // L_simple
    let diff = g.sub(eps_c, eps_hat)?;
    let sq = g.mul(diff, diff)?;
    let simple = g.mean_all(sq);

    // Reverse-step mean from (possibly detached) eps_hat.
    let eps_for_mean = if detach_mean { g.stop_grad(eps_hat) } else { eps_hat };
    let coef = F::of(view.beta(i) / (1.0 - view.alpha_bar(i)).sqrt());
    let scaled_eps = g.scale(eps_for_mean, coef);
    let centered = g.sub(xt_c, scaled_eps)?;
    let mean_p = g.scale(centered, F::of(1.0 / view.alpha(i).sqrt()));

    // log variance: interpolate between log beta_tilde and log beta.
    let log_lo = view.log_beta_tilde_clipped(i);
    let log_hi = view.log_beta(i);
    let spread = g.scale(v, F::of(log_hi - log_lo));
    let log_var_p = g.add_scalar(spread, F::of(log_lo));

    let vlb = if i >= 2 {
        kl_vs_posterior(g, mean_p, log_var_p, x0, xt, view, i)?
    } else {
        decoder_nll(g, mean_p, log_var_p, x0)?
    };

    let weighted = g.scale(vlb, F::of(VLB_LAMBDA));
    let total = g.add(simple, weighted)?;
    Ok(HybridLossNodes { total, simple, vlb })
}

/// `KL(q(x_{t-1} | x_t, x_0) || p)` in nats per dimension. The posterior
/// side is constant.
fn kl_vs_posterior<F: Scalar>(
    g: &mut Graph<F>,
    mean_p: NodeId,
    log_var_p: NodeId,
    x0: &Tensor<F>,
    xt: &Tensor<F>,
    view: &impl ScheduleView,
    i: usize,
) -> Result<NodeId> {
    let (c0, ct) = crate::diffusion::process::q_posterior_coefficients(view, i);
    let q_mean = x0.zip(xt, |x, y| F::of(c0) * x + F::of(ct) * y)?;
    let log_q = view.beta_tilde(i).ln();

    let q_mean_c = g.constant(q_mean);
    // a = log_var_p - log_q
    let a = g.add_scalar(log_var_p, F::of(-log_q));
    // b = exp(-a)
    let neg_a = g.neg(a);
    let b = g.exp(neg_a);
    // c = (mu_q - mu_p)^2 * exp(-log_var_p)
    let md = g.sub(q_mean_c, mean_p)?;
    let md2 = g.mul(md, md)?;
    let neg_logvar = g.neg(log_var_p);
    let inv_var = g.exp(neg_logvar);
    let c = g.mul(md2, inv_var)?;

    let ab = g.add(a, b)?;
    let abc = g.add(ab, c)?;
    let m = g.mean_all(abc);
    let m1 = g.add_scalar(m, -F::one());
    Ok(g.scale(m1, F::of(0.5)))
}

/// Discretized Gaussian decoder NLL at t = 1, composed from primitives
/// (tanh-approximate normal CDF). Branch selection by data-dependent
/// constant masks.
fn decoder_nll<F: Scalar>(
    g: &mut Graph<F>,
    mean_p: NodeId,
    log_var_p: NodeId,
    x0: &Tensor<F>,
) -> Result<NodeId> {
    let bin = F::of(BIN_HALF_WIDTH);
    let x_plus = g.constant(x0.map(|x| x + bin));
    let x_minus = g.constant(x0.map(|x| x - bin));

    // inv_std = exp(-0.5 log_var)
    let half_neg = g.scale(log_var_p, F::of(-0.5));
    let inv_std = g.exp(half_neg);

    let cdf_plus = approx_cdf_graph(g, x_plus, mean_p, inv_std)?;
    let cdf_min = approx_cdf_graph(g, x_minus, mean_p, inv_std)?;

    let tiny = F::of(1e-12);
    // log(cdf_plus)
    let cp_safe = g.max_scalar(cdf_plus, tiny);
    let log_cdf_plus = g.ln(cp_safe);
    // log(1 - cdf_min)
    let neg_min = g.neg(cdf_min);
    let one_minus = g.add_scalar(neg_min, F::one());
    let om_safe = g.max_scalar(one_minus, tiny);
    let log_one_minus = g.ln(om_safe);
    // log(cdf_plus - cdf_min)
    let delta = g.sub(cdf_plus, cdf_min)?;
    let delta_safe = g.max_scalar(delta, tiny);
    let log_delta = g.ln(delta_safe);

    let lo_mask = x0.map(|x| if x < F::of(-0.999) { F::one() } else { F::zero() });
    let hi_mask = x0.map(|x| if x > F::of(0.999) { F::one() } else { F::zero() });
    let mid_mask = lo_mask.zip(&hi_mask, |a, b| F::one() - a - b)?;

    let lo_c = g.constant(lo_mask);
    let hi_c = g.constant(hi_mask);
    let mid_c = g.constant(mid_mask);

    let term_lo = g.mul(lo_c, log_cdf_plus)?;
    let term_hi = g.mul(hi_c, log_one_minus)?;
    let term_mid = g.mul(mid_c, log_delta)?;
    let s1 = g.add(term_lo, term_hi)?;
    let log_probs = g.add(s1, term_mid)?;
    let mean_lp = g.mean_all(log_probs);
    Ok(g.scale(mean_lp, -F::one()))
}

/// `0.5 (1 + tanh(sqrt(2/pi) (z + 0.044715 z^3)))` with
/// `z = (x - mean) * inv_std`, on the graph.
fn approx_cdf_graph<F: Scalar>(
    g: &mut Graph<F>,
    x_const: NodeId,
    mean: NodeId,
    inv_std: NodeId,
) -> Result<NodeId> {
    let centered = g.sub(x_const, mean)?;
    let z = g.mul(centered, inv_std)?;
    let z2 = g.mul(z, z)?;
    let z3 = g.mul(z2, z)?;
    let cubic = g.scale(z3, F::of(0.044715));
    let inner = g.add(z, cubic)?;
    let scaled = g.scale(inner, F::of((2.0 / std::f64::consts::PI).sqrt()));
    let t = g.tanh_of(scaled);
    let shifted = g.add_scalar(t, F::one());
    Ok(g.scale(shifted, F::of(0.5)))
}
