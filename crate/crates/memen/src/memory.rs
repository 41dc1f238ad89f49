//! Multi-hop full-orientation matching: integral query matching, query-based
//! and context-based similarity matching, linear fusion, gate, and the hop
//! BiLSTM producing memory-aware representations O.

use crate::encoder::LstmVars;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Which matching blocks and the gate are active. All true by default; the
/// ablation harness switches individual pieces off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MatchingSwitches {
    pub integral: bool,
    pub query_sim: bool,
    pub context_sim: bool,
    pub gate: bool,
}

impl Default for MatchingSwitches {
    fn default() -> Self {
        MatchingSwitches { integral: true, query_sim: true, context_sim: true, gate: true }
    }
}

impl MatchingSwitches {
    pub fn active_blocks(&self) -> usize {
        self.integral as usize + self.query_sim as usize + self.context_sim as usize
    }

    /// Query-based and context-based matching both need the alignment matrix.
    pub fn needs_alignment(&self) -> bool {
        self.query_sim || self.context_sim
    }
}

/// Tape leaves for one hop.
#[derive(Debug, Clone, Copy)]
pub struct HopVars {
    /// Alignment weight, `6h x 1`.
    pub w1: Var,
    /// Fusion map applied rowwise, `(2h * active_blocks) x 2h`.
    pub w_f: Var,
    /// Gate weight `2h x 2h` and bias row `1 x 2h`.
    pub w_g: Var,
    pub b_g: Var,
    pub bilstm_fwd: LstmVars,
    pub bilstm_bwd: LstmVars,
    /// Projection of the previous hop's output into the next hop's input,
    /// `2h x 2h`. Absent on the first hop.
    pub w_r: Option<Var>,
}

/// Whole-query attention over passage tokens: `c = softmax(<u_Q, r_P_t>)`,
/// `m1 = sum_t c_t r_P_t`. Returns `(c: n x 1, m1: 2h x 1)`.
pub fn integral_query_match(tape: &Tape, r_p: Var, u_q: Var) -> Result<(Var, Var)> {
    let (n, _) = tape.shape(r_p);
    if n == 0 {
        return Err(Error::Shape("integral_query_match: empty passage".into()));
    }
    let scores = tape.matmul(r_p, u_q)?;
    let c = tape.softmax(scores, 0)?;
    let m1 = tape.matmul(tape.transpose(r_p), c)?;
    Ok((c, m1))
}

/// Pairwise alignment scores `A[i][j] = w1 . [r_P_i ; r_Q_j ; r_P_i * r_Q_j]`.
pub fn alignment_matrix(tape: &Tape, w1: Var, r_p: Var, r_q: Var) -> Result<Var> {
    tape.alignment(w1, r_p, r_q)
}

/// Row-softmax the alignment matrix and mix query rows:
/// `B = softmax_row(A)`, row i of `M2 = B . R_Q`. Returns `(B, M2)`.
pub fn query_based_match(tape: &Tape, a: Var, r_q: Var) -> Result<(Var, Var)> {
    let b = tape.softmax(a, 1)?;
    let m2 = tape.matmul(b, r_q)?;
    Ok((b, m2))
}

/// Most-representative-query-word attention: `e = max_row(A)`,
/// `d = softmax(e)`, `m3 = sum_t d_t r_P_t`. Returns `(d: n x 1, m3: 2h x 1)`.
pub fn context_based_match(tape: &Tape, a: Var, r_p: Var) -> Result<(Var, Var)> {
    let e = tape.row_max(a);
    let d = tape.softmax(e, 0)?;
    let m3 = tape.matmul(tape.transpose(r_p), d)?;
    Ok((d, m3))
}

/// Fuse the active matching blocks with the linear map `w_f` and apply the
/// sigmoid gate: `M = [blocks] . W_f`, `g = sigmoid(M W_g + b)`, `M* = g * M`.
pub fn fuse_and_gate(
    tape: &Tape,
    hop: &HopVars,
    switches: &MatchingSwitches,
    blocks: &[Var],
) -> Result<Var> {
    if blocks.is_empty() {
        return Err(Error::InvalidArg(
            "fuse_and_gate: all matching modules ablated, nothing to fuse".into(),
        ));
    }
    let cat = if blocks.len() == 1 { blocks[0] } else { tape.concat(blocks, 1)? };
    let m = tape.matmul(cat, hop.w_f)?;
    if !switches.gate {
        return Ok(m);
    }
    let (n, _) = tape.shape(m);
    let g = tape.sigmoid(tape.add(tape.matmul(m, hop.w_g)?, tape.tile_rows(hop.b_g, n)?)?);
    tape.mul(g, m)
}

/// One hop's output plus the attention distributions kept for inspection.
pub struct HopOutput {
    /// `n x 2h` memory-aware representations.
    pub o: Var,
    pub c: Option<Var>,
    pub b: Option<Var>,
    pub d: Option<Var>,
}

/// Run the three matching modules, fusion, gate, and the hop BiLSTM.
pub fn memory_hop(
    tape: &Tape,
    hop: &HopVars,
    switches: &MatchingSwitches,
    r_p: Var,
    r_q: Var,
    u_q: Var,
    hidden: usize,
) -> Result<HopOutput> {
    let (n, _) = tape.shape(r_p);
    let mut blocks = Vec::new();
    let mut c_attn = None;
    let mut b_attn = None;
    let mut d_attn = None;

    if switches.integral {
        let (c, m1) = integral_query_match(tape, r_p, u_q)?;
        c_attn = Some(c);
        blocks.push(tape.tile_rows(tape.transpose(m1), n)?);
    }
    if switches.needs_alignment() {
        let a = alignment_matrix(tape, hop.w1, r_p, r_q)?;
        if switches.query_sim {
            let (b, m2) = query_based_match(tape, a, r_q)?;
            b_attn = Some(b);
            blocks.push(m2);
        }
        if switches.context_sim {
            let (d, m3) = context_based_match(tape, a, r_p)?;
            d_attn = Some(d);
            blocks.push(tape.tile_rows(tape.transpose(m3), n)?);
        }
    }
    let m_star = fuse_and_gate(tape, hop, switches, &blocks)?;

    // hop BiLSTM over the gated rows
    let inputs: Vec<Var> = (0..n)
        .map(|t| Ok(tape.transpose(tape.slice_rows(m_star, t, t + 1)?)))
        .collect::<Result<_>>()?;
    let seq = crate::encoder::encode_sequence(tape, &hop.bilstm_fwd, &hop.bilstm_bwd, &inputs, hidden)?;
    Ok(HopOutput { o: seq.reps, c: c_attn, b: b_attn, d: d_attn })
}

/// Stack hops: hop k > 1 reads `W_r`-projected output of hop k-1 as its
/// passage representation; the query side is reused unchanged.
pub fn run_memory_network(
    tape: &Tape,
    hops: &[HopVars],
    switches: &MatchingSwitches,
    r_p: Var,
    r_q: Var,
    u_q: Var,
    hidden: usize,
) -> Result<Vec<HopOutput>> {
    if hops.is_empty() {
        return Err(Error::InvalidArg("run_memory_network: hops must be >= 1".into()));
    }
    let mut outputs = Vec::with_capacity(hops.len());
    let mut current = r_p;
    for (k, hop) in hops.iter().enumerate() {
        if k > 0 {
            let w_r = hop
                .w_r
                .ok_or_else(|| Error::InvalidArg(format!("hop {k}: missing reduction W_r")))?;
            current = tape.matmul(current, w_r)?;
        }
        let out = memory_hop(tape, hop, switches, current, r_q, u_q, hidden)?;
        current = out.o;
        outputs.push(out);
    }
    Ok(outputs)
}

/// Build one hop's tensors with fresh random values; used by the model
/// constructor and tests.
pub fn init_hop_tensors<R: rand::Rng>(
    hidden: usize,
    blocks: usize,
    with_reduction: bool,
    rng: &mut R,
) -> Vec<(String, Tensor)> {
    let h2 = 2 * hidden;
    let mut out = vec![
        ("w1".to_string(), Tensor::uniform_init(3 * h2, 1, 3 * h2, rng)),
        ("wf".to_string(), Tensor::uniform_init(blocks * h2, h2, blocks * h2, rng)),
        ("wg".to_string(), Tensor::uniform_init(h2, h2, h2, rng)),
        ("bg".to_string(), Tensor::zeros(1, h2)),
        ("fwd_wx".to_string(), Tensor::uniform_init(4 * hidden, h2, h2, rng)),
        ("fwd_wh".to_string(), Tensor::uniform_init(4 * hidden, hidden, hidden, rng)),
        ("fwd_b".to_string(), forget_bias(hidden)),
        ("bwd_wx".to_string(), Tensor::uniform_init(4 * hidden, h2, h2, rng)),
        ("bwd_wh".to_string(), Tensor::uniform_init(4 * hidden, hidden, hidden, rng)),
        ("bwd_b".to_string(), forget_bias(hidden)),
    ];
    if with_reduction {
        out.push(("wr".to_string(), Tensor::uniform_init(h2, h2, h2, rng)));
    }
    out
}

/// LSTM bias with the forget gate initialized to 1.
pub fn forget_bias(hidden: usize) -> Tensor {
    let mut b = Tensor::zeros(4 * hidden, 1);
    for i in hidden..2 * hidden {
        b.data_mut()[i] = 1.0;
    }
    b
}
