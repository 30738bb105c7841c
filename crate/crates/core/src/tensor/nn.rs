//! Network building blocks composed from graph primitives.
//!
//! Everything here records onto a [`Graph`], so gradients come from the
//! tape; there are no hand-written backward rules in this module.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::graph::{Graph, NodeId};

/// `w[out, in] . x[in, cols] + b[out]`, bias broadcast across columns.
pub fn linear<F: Scalar>(
    g: &mut Graph<F>,
    w: NodeId,
    b: NodeId,
    x: NodeId,
) -> Result<NodeId> {
    let wx = g.matmul(w, x)?;
    g.add_row_vec(wx, b)
}

/// Single-head scaled dot-product self-attention over the column axis
/// with a residual connection:
///
/// `out = proj_out . (V . softmax(K^T Q / sqrt(C))) + input`
///
/// where `Q = proj_q . input` etc. All projections must be square `C x C`
/// for an input of shape `[C, L]`.
pub fn self_attention<F: Scalar>(
    g: &mut Graph<F>,
    input: NodeId,
    proj_q: NodeId,
    proj_k: NodeId,
    proj_v: NodeId,
    proj_out: NodeId,
) -> Result<NodeId> {
    let shape = g.value(input).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("self_attention", "input rank", 2, shape.len()));
    }
    let ch = shape[0];
    for (name, p) in [("proj_q", proj_q), ("proj_k", proj_k), ("proj_v", proj_v), ("proj_out", proj_out)] {
        let s = g.value(p).shape();
        if s != [ch, ch] {
            return Err(Error::shape("self_attention", name, format!("[{ch}, {ch}]"), format!("{s:?}")));
        }
    }
    let q = g.matmul(proj_q, input)?;
    let k = g.matmul(proj_k, input)?;
    let v = g.matmul(proj_v, input)?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(kt, q)?;
    let scaled = g.scale(scores, F::of(1.0 / (ch as f64).sqrt()));
    let attn = g.softmax_cols(scaled)?;
    let mixed = g.matmul(v, attn)?;
    let projected = g.matmul(proj_out, mixed)?;
    g.add(projected, input)
}

/// Weights of one LSTM cell. Gate order in the stacked matrices is
/// (input, forget, candidate, output).
#[derive(Clone, Copy)]
pub struct LstmWeights {
    /// `[4H, D]`
    pub w_ih: NodeId,
    /// `[4H, H]`
    pub w_hh: NodeId,
    /// `[4H]`
    pub bias: NodeId,
}

/// One step of a standard gated LSTM cell on column-batched inputs:
/// `x: [D, B]`, `h_prev`/`c_prev`: `[H, B]`. Returns `(h, c)`.
pub fn lstm_cell<F: Scalar>(
    g: &mut Graph<F>,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    w: LstmWeights,
) -> Result<(NodeId, NodeId)> {
    let h = g.value(h_prev).shape()[0];
    let four_h = g.value(w.w_ih).shape()[0];
    if four_h != 4 * h {
        return Err(Error::shape("lstm_cell", "stacked gate rows", 4 * h, four_h));
    }
    let xi = g.matmul(w.w_ih, x)?;
    let hh = g.matmul(w.w_hh, h_prev)?;
    let pre = g.add(xi, hh)?;
    let pre = g.add_row_vec(pre, w.bias)?;

    let i_gate = g.slice_rows(pre, 0, h)?;
    let f_gate = g.slice_rows(pre, h, 2 * h)?;
    let g_cand = g.slice_rows(pre, 2 * h, 3 * h)?;
    let o_gate = g.slice_rows(pre, 3 * h, 4 * h)?;

    let i_gate = g.logistic(i_gate);
    let f_gate = g.logistic(f_gate);
    let g_cand = g.tanh_of(g_cand);
    let o_gate = g.logistic(o_gate);

    let keep = g.mul(f_gate, c_prev)?;
    let write = g.mul(i_gate, g_cand)?;
    let c = g.add(keep, write)?;
    let c_act = g.tanh_of(c);
    let h_out = g.mul(o_gate, c_act)?;
    Ok((h_out, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn attention_with_zero_out_projection_is_identity() {
        let mut g = Graph::<f64>::new();
        // Identical column repeated at every position.
        let x = g.constant(
            Tensor::from_vec(vec![2, 3], vec![0.5, 0.5, 0.5, -1.0, -1.0, -1.0]).unwrap(),
        );
        let wq = g.constant(Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let wk = g.constant(Tensor::from_vec(vec![2, 2], vec![0.3, -0.2, 0.1, 0.9]).unwrap());
        let wv = g.constant(Tensor::from_vec(vec![2, 2], vec![2.0, 1.0, -1.0, 0.5]).unwrap());
        let wo = g.constant(Tensor::zeros(vec![2, 2]));
        let out = self_attention(&mut g, x, wq, wk, wv, wo).unwrap();
        assert_eq!(g.value(out).data(), g.value(x).data());
    }

    #[test]
    fn attention_single_position_ignores_query_and_key() {
        // With L=1 the softmax weight is exactly 1, so the output is
        // proj_out . proj_v . x + x regardless of proj_q / proj_k.
        let x_data = vec![0.7, -0.3];
        let build = |wq_scale: f64| {
            let mut g = Graph::<f64>::new();
            let x = g.constant(Tensor::from_vec(vec![2, 1], x_data.clone()).unwrap());
            let wq = g.constant(Tensor::from_vec(vec![2, 2], vec![wq_scale, 0.0, 0.0, wq_scale]).unwrap());
            let wk = g.constant(Tensor::from_vec(vec![2, 2], vec![0.2, 0.4, -0.6, 0.8]).unwrap());
            let wv = g.constant(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
            let wo = g.constant(Tensor::from_vec(vec![2, 2], vec![0.5, -0.5, 0.25, 0.75]).unwrap());
            let out = self_attention(&mut g, x, wq, wk, wv, wo).unwrap();
            g.value(out).data().to_vec()
        };
        assert_eq!(build(1.0), build(-42.0));
    }

    #[test]
    fn attention_rejects_non_square_projection() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![2, 3]));
        let square = g.constant(Tensor::zeros(vec![2, 2]));
        let bad = g.constant(Tensor::zeros(vec![2, 3]));
        assert!(self_attention(&mut g, x, bad, square, square, square).is_err());
    }

    #[test]
    fn lstm_zero_weights_halve_cell_state() {
        let (d, h, b) = (3, 4, 1);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(vec![d, b], vec![1.0, -2.0, 0.5]).unwrap());
        let c_prev_data = vec![0.8, -0.4, 0.0, 1.2];
        let h_prev = g.constant(Tensor::zeros(vec![h, b]));
        let c_prev = g.constant(Tensor::from_vec(vec![h, b], c_prev_data.clone()).unwrap());
        let w = LstmWeights {
            w_ih: g.constant(Tensor::zeros(vec![4 * h, d])),
            w_hh: g.constant(Tensor::zeros(vec![4 * h, h])),
            bias: g.constant(Tensor::zeros(vec![4 * h])),
        };
        let (h_out, c_out) = lstm_cell(&mut g, x, h_prev, c_prev, w).unwrap();
        // logistic(0) = 0.5 and tanh(0) = 0, so c = 0.5 * c_prev and
        // h = 0.5 * tanh(0.5 * c_prev).
        for i in 0..h {
            let c_expect = 0.5 * c_prev_data[i];
            assert!((g.value(c_out).data()[i] - c_expect).abs() < 1e-15);
            let h_expect = 0.5 * c_expect.tanh();
            assert!((g.value(h_out).data()[i] - h_expect).abs() < 1e-15);
        }
    }

    #[test]
    fn lstm_zero_cell_and_zero_candidate_give_zero_h() {
        let (d, h, b) = (2, 3, 2);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(vec![d, b], vec![0.3, 1.0, -0.7, 0.2]).unwrap());
        let h_prev = g.constant(Tensor::zeros(vec![h, b]));
        let c_prev = g.constant(Tensor::zeros(vec![h, b]));
        // Candidate rows (2H..3H) zero; other gates arbitrary.
        let mut w_ih = vec![0.37; 4 * h * d];
        for r in 2 * h..3 * h {
            for c in 0..d {
                w_ih[r * d + c] = 0.0;
            }
        }
        let w = LstmWeights {
            w_ih: g.constant(Tensor::from_vec(vec![4 * h, d], w_ih).unwrap()),
            w_hh: g.constant(Tensor::zeros(vec![4 * h, h])),
            bias: g.constant(Tensor::zeros(vec![4 * h])),
        };
        let (h_out, _) = lstm_cell(&mut g, x, h_prev, c_prev, w).unwrap();
        assert!(g.value(h_out).data().iter().all(|&v| v == 0.0));
    }
}
