//! Boundary-model pointer network: query-aware initial state, start/end
//! distributions over passage positions, a GRU state update between the two
//! predictions, and the span loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Tape leaves for the decoder. `w_q`, `w_p`, `w_h` are `2h x 2h` and are
/// applied as right-multiplications of row-major sequences; `s` and `c` are
/// `2h x 1` scoring vectors; `b_q` is a `1 x 2h` bias row. GRU weights follow
/// gate order r, z with a separate candidate block.
#[derive(Debug, Clone, Copy)]
pub struct PointerVars {
    pub s: Var,
    pub w_q: Var,
    pub b_q: Var,
    pub c: Var,
    pub w_p: Var,
    pub w_h: Var,
    /// `2 * 2h x 2h` input map and `2 * 2h x 2h` state map for the r/z gates.
    pub gru_wx: Var,
    pub gru_wh: Var,
    pub gru_b: Var,
    /// Candidate block: `2h x 2h` input and state maps plus `2h x 1` bias.
    pub gru_cx: Var,
    pub gru_ch: Var,
    pub gru_cb: Var,
}

/// One answer span with its boundary distributions. Indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    /// Product of the selected start and end probabilities.
    pub confidence: f64,
    pub start_dist: Vec<f64>,
    pub end_dist: Vec<f64>,
}

/// Query-aware initial state: `z_j = s . tanh(W_Q r_Q_j + b_Q)`,
/// `a = softmax(z)`, `l0 = sum_i a_i r_Q_i`. Returns `(l0: 2h x 1, a: m x 1)`.
pub fn init_pointer_state(tape: &Tape, vars: &PointerVars, r_q: Var) -> Result<(Var, Var)> {
    let (m, _) = tape.shape(r_q);
    if m == 0 {
        return Err(Error::Shape("init_pointer_state: empty query".into()));
    }
    let t = tape.tanh(tape.add(tape.matmul(r_q, vars.w_q)?, tape.tile_rows(vars.b_q, m)?)?);
    let z = tape.matmul(t, vars.s)?;
    let a = tape.softmax(z, 0)?;
    let l0 = tape.matmul(tape.transpose(r_q), a)?;
    Ok((l0, a))
}

/// Boundary scores `z_j = c . tanh(W_P O_j + W_h l)` softmaxed over passage
/// positions. Returns the distribution and the lowest argmax index (0-based).
pub fn predict_boundary(tape: &Tape, vars: &PointerVars, o: Var, l: Var) -> Result<(Var, usize)> {
    let (n, _) = tape.shape(o);
    let lh = tape.transpose(tape.matmul(vars.w_h, l)?);
    let t = tape.tanh(tape.add(tape.matmul(o, vars.w_p)?, tape.tile_rows(lh, n)?)?);
    let z = tape.matmul(t, vars.c)?;
    let dist = tape.softmax(z, 0)?;
    let values = tape.value(dist);
    let mut best = 0usize;
    for (i, &v) in values.data().iter().enumerate().skip(1) {
        if v > values.data()[best] {
            best = i;
        }
    }
    Ok((dist, best))
}

/// One GRU step with input `v = sum_i dist_i O_i` and previous state `l`.
pub fn update_pointer_state(tape: &Tape, vars: &PointerVars, o: Var, dist: Var, l_prev: Var) -> Result<Var> {
    let v = tape.matmul(tape.transpose(o), dist)?;
    gru_step(tape, vars, v, l_prev)
}

/// Standard GRU: `r`/`z` gates then candidate `n = tanh(Wc x + r * (Uc h) + bc)`,
/// `h' = z * h + (1 - z) * n`.
pub fn gru_step(tape: &Tape, vars: &PointerVars, x: Var, h: Var) -> Result<Var> {
    let (dim, _) = tape.shape(h);
    let pre = tape.add(
        tape.add(tape.matmul(vars.gru_wx, x)?, tape.matmul(vars.gru_wh, h)?)?,
        vars.gru_b,
    )?;
    let r = tape.sigmoid(tape.slice_rows(pre, 0, dim)?);
    let z = tape.sigmoid(tape.slice_rows(pre, dim, 2 * dim)?);
    let cand = tape.tanh(tape.add(
        tape.add(tape.matmul(vars.gru_cx, x)?, tape.mul(r, tape.matmul(vars.gru_ch, h)?)?)?,
        vars.gru_cb,
    )?);
    let keep = tape.mul(z, h)?;
    let ones = tape.constant(Tensor::from_vec(dim, 1, vec![1.0; dim])?);
    let one_minus_z = tape.add(ones, tape.scale(z, -1.0))?;
    tape.add(keep, tape.mul(one_minus_z, cand)?)
}

/// Outcome of a full boundary decode, with the distributions still on tape
/// so a loss can be attached.
pub struct DecodedSpan {
    pub span: SpanPrediction,
    pub start_dist: Var,
    pub end_dist: Var,
}

/// Start from the query-aware state, then one GRU update, then the end
/// boundary. With `enforce_end_ge_start` the end argmax is restricted to
/// positions at or after the chosen start (inference-time option only).
pub fn decode_span(
    tape: &Tape,
    vars: &PointerVars,
    o: Var,
    r_q: Var,
    enforce_end_ge_start: bool,
) -> Result<DecodedSpan> {
    let (l0, _) = init_pointer_state(tape, vars, r_q)?;
    let (start_dist, start) = predict_boundary(tape, vars, o, l0)?;
    let l1 = update_pointer_state(tape, vars, o, start_dist, l0)?;
    let (end_dist, mut end) = predict_boundary(tape, vars, o, l1)?;
    if enforce_end_ge_start && end < start {
        let values = tape.value(end_dist);
        end = start;
        for (i, &v) in values.data().iter().enumerate().skip(start + 1) {
            if v > values.data()[end] {
                end = i;
            }
        }
    }
    let sd = tape.value(start_dist);
    let ed = tape.value(end_dist);
    let confidence = sd.data()[start] * ed.data()[end];
    Ok(DecodedSpan {
        span: SpanPrediction {
            start: start + 1,
            end: end + 1,
            confidence,
            start_dist: sd.data().to_vec(),
            end_dist: ed.data().to_vec(),
        },
        start_dist,
        end_dist,
    })
}

/// `loss = -log a1[gold_start] - log a2[gold_end]`, gold indices 1-based.
pub fn span_loss(
    tape: &Tape,
    start_dist: Var,
    end_dist: Var,
    gold_start: usize,
    gold_end: usize,
) -> Result<Var> {
    let (n, _) = tape.shape(start_dist);
    if gold_start < 1 || gold_end < 1 || gold_start > n || gold_end > n {
        return Err(Error::InvalidArg(format!(
            "span_loss: gold span [{gold_start}, {gold_end}] out of range for {n} positions"
        )));
    }
    let ls = tape.log(tape.get(start_dist, gold_start - 1, 0)?);
    let le = tape.log(tape.get(end_dist, gold_end - 1, 0)?);
    Ok(tape.scale(tape.add(ls, le)?, -1.0))
}

/// Fresh random decoder tensors, named for the parameter table.
pub fn init_pointer_tensors<R: rand::Rng>(hidden: usize, rng: &mut R) -> Vec<(String, Tensor)> {
    let h2 = 2 * hidden;
    vec![
        ("s".to_string(), Tensor::uniform_init(h2, 1, h2, rng)),
        ("wq".to_string(), Tensor::uniform_init(h2, h2, h2, rng)),
        ("bq".to_string(), Tensor::zeros(1, h2)),
        ("c".to_string(), Tensor::uniform_init(h2, 1, h2, rng)),
        ("wp".to_string(), Tensor::uniform_init(h2, h2, h2, rng)),
        ("wh".to_string(), Tensor::uniform_init(h2, h2, h2, rng)),
        ("gru_wx".to_string(), Tensor::uniform_init(2 * h2, h2, h2, rng)),
        ("gru_wh".to_string(), Tensor::uniform_init(2 * h2, h2, h2, rng)),
        ("gru_b".to_string(), Tensor::zeros(2 * h2, 1)),
        ("gru_cx".to_string(), Tensor::uniform_init(h2, h2, h2, rng)),
        ("gru_ch".to_string(), Tensor::uniform_init(h2, h2, h2, rng)),
        ("gru_cb".to_string(), Tensor::zeros(h2, 1)),
    ]
}
