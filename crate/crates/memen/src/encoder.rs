//! Token embedding (word / char-CNN / tag) and the shared BiLSTM encoder.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Word, character, POS, and NER symbol tables. Index 0 of each table is the
/// reserved OOV / pad / unknown-tag row, so every lookup is total.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabularies {
    pub words: Vec<String>,
    pub chars: Vec<char>,
    pub pos: Vec<String>,
    pub ner: Vec<String>,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
    #[serde(skip)]
    char_index: HashMap<char, usize>,
    #[serde(skip)]
    pos_index: HashMap<String, usize>,
    #[serde(skip)]
    ner_index: HashMap<String, usize>,
}

pub const OOV: &str = "<oov>";
pub const PAD_CHAR: char = '\u{0}';
pub const UNK_TAG: &str = "<unk>";

fn index_of<T: Clone + std::hash::Hash + Eq>(items: &[T]) -> HashMap<T, usize> {
    items.iter().cloned().enumerate().map(|(i, x)| (x, i)).collect()
}

impl Vocabularies {
    pub fn new(
        mut words: Vec<String>,
        mut chars: Vec<char>,
        mut pos: Vec<String>,
        mut ner: Vec<String>,
    ) -> Self {
        words.insert(0, OOV.to_string());
        chars.insert(0, PAD_CHAR);
        pos.insert(0, UNK_TAG.to_string());
        ner.insert(0, UNK_TAG.to_string());
        let mut v = Vocabularies {
            word_index: index_of(&words),
            char_index: index_of(&chars),
            pos_index: index_of(&pos),
            ner_index: index_of(&ner),
            words,
            chars,
            pos,
            ner,
        };
        v.rebuild_indices();
        v
    }

    /// Re-derive the lookup maps (needed after deserialization).
    pub fn rebuild_indices(&mut self) {
        self.word_index = index_of(&self.words);
        self.char_index = index_of(&self.chars);
        self.pos_index = index_of(&self.pos);
        self.ner_index = index_of(&self.ner);
    }

    pub fn from_dataset(dataset: &crate::data::Dataset) -> Self {
        let mut words = Vec::new();
        let mut wset = HashMap::new();
        let mut chars = Vec::new();
        let mut cset = HashMap::new();
        let mut pos = Vec::new();
        let mut pset = HashMap::new();
        let mut ner = Vec::new();
        let mut nset = HashMap::new();
        for ex in &dataset.examples {
            for tok in ex.passage.iter().chain(&ex.question) {
                if !wset.contains_key(tok.word()) {
                    wset.insert(tok.word().to_string(), words.len());
                    words.push(tok.word().to_string());
                }
                for ch in tok.word().chars() {
                    if !cset.contains_key(&ch) {
                        cset.insert(ch, chars.len());
                        chars.push(ch);
                    }
                }
                if !pset.contains_key(tok.pos()) {
                    pset.insert(tok.pos().to_string(), pos.len());
                    pos.push(tok.pos().to_string());
                }
                if !nset.contains_key(tok.ner()) {
                    nset.insert(tok.ner().to_string(), ner.len());
                    ner.push(tok.ner().to_string());
                }
            }
        }
        Self::new(words, chars, pos, ner)
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.word_index.get(word).copied().unwrap_or(0)
    }

    pub fn char_ids(&self, word: &str) -> Vec<usize> {
        word.chars().map(|c| self.char_index.get(&c).copied().unwrap_or(0)).collect()
    }

    pub fn pos_id(&self, tag: &str) -> usize {
        self.pos_index.get(tag).copied().unwrap_or(0)
    }

    pub fn ner_id(&self, tag: &str) -> usize {
        self.ner_index.get(tag).copied().unwrap_or(0)
    }
}

/// Tape leaves for one LSTM direction: `wx` is `4h x d_in`, `wh` is `4h x h`,
/// `b` is `4h x 1`, gate order i, f, o, g.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

/// One LSTM step on column vectors.
pub fn lstm_step(
    tape: &Tape,
    w: &LstmVars,
    x: Var,
    h: Var,
    c: Var,
    hidden: usize,
) -> Result<(Var, Var)> {
    let pre = tape.add(tape.add(tape.matmul(w.wx, x)?, tape.matmul(w.wh, h)?)?, w.b)?;
    let i = tape.sigmoid(tape.slice_rows(pre, 0, hidden)?);
    let f = tape.sigmoid(tape.slice_rows(pre, hidden, 2 * hidden)?);
    let o = tape.sigmoid(tape.slice_rows(pre, 2 * hidden, 3 * hidden)?);
    let g = tape.tanh(tape.slice_rows(pre, 3 * hidden, 4 * hidden)?);
    let c_next = tape.add(tape.mul(f, c)?, tape.mul(i, g)?)?;
    let h_next = tape.mul(o, tape.tanh(c_next))?;
    Ok((h_next, c_next))
}

/// Character CNN: tanh of width-`width` filter responses, max-pooled over all
/// windows of the (padded) character sequence. Returns `filters x 1`.
pub fn char_cnn_embed(
    tape: &Tape,
    cnn_w: Var,
    cnn_b: Var,
    char_table: Var,
    char_ids: &[usize],
    width: usize,
) -> Result<Var> {
    let mut ids = char_ids.to_vec();
    while ids.len() < width {
        ids.push(0); // pad character
    }
    let emb = tape.lookup(char_table, &ids)?;
    let (_, dc) = tape.shape(emb);
    let n_windows = ids.len() - width + 1;
    let mut cols = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let win = tape.reshape(tape.slice_rows(emb, w, w + width)?, width * dc, 1)?;
        let z = tape.tanh(tape.add(tape.matmul(cnn_w, win)?, cnn_b)?);
        cols.push(z);
    }
    let stacked = tape.concat(&cols, 1)?;
    Ok(tape.row_max(stacked))
}

/// Tape leaves for the whole encoder.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub word_table: Var,
    pub char_table: Var,
    pub cnn_w: Var,
    pub cnn_b: Var,
    /// None when the POS block is ablated.
    pub pos_table: Option<Var>,
    pub ner_table: Option<Var>,
    pub fwd: LstmVars,
    pub bwd: LstmVars,
}

/// Concatenated `[word ; char-CNN ; pos ; ner]` embedding as a column vector.
pub fn embed_token(
    tape: &Tape,
    vars: &EncoderVars,
    word_id: usize,
    char_ids: &[usize],
    pos_id: usize,
    ner_id: usize,
    char_width: usize,
) -> Result<Var> {
    let word = tape.transpose(tape.lookup(vars.word_table, &[word_id])?);
    let chars = char_cnn_embed(tape, vars.cnn_w, vars.cnn_b, vars.char_table, char_ids, char_width)?;
    let mut parts = vec![word, chars];
    if let Some(pt) = vars.pos_table {
        parts.push(tape.transpose(tape.lookup(pt, &[pos_id])?));
    }
    if let Some(nt) = vars.ner_table {
        parts.push(tape.transpose(tape.lookup(nt, &[ner_id])?));
    }
    tape.concat(&parts, 0)
}

/// Per-token forward/backward states plus the concatenated final states.
pub struct EncodedSequence {
    /// `n x 2h`.
    pub reps: Var,
    /// `2h x 1`: `[forward final ; backward final]`.
    pub last_state: Var,
}

/// Run both LSTM directions over a token embedding sequence.
pub fn encode_sequence(
    tape: &Tape,
    fwd: &LstmVars,
    bwd: &LstmVars,
    inputs: &[Var],
    hidden: usize,
) -> Result<EncodedSequence> {
    let n = inputs.len();
    if n == 0 {
        return Err(Error::InvalidArg("encode_sequence: empty input sequence".into()));
    }
    let zeros = || tape.constant(crate::tensor::Tensor::zeros(hidden, 1));

    let mut fwd_states = Vec::with_capacity(n);
    let (mut h, mut c) = (zeros(), zeros());
    for &x in inputs {
        let (h2, c2) = lstm_step(tape, fwd, x, h, c, hidden)?;
        h = h2;
        c = c2;
        fwd_states.push(h);
    }
    let fwd_last = h;

    let mut bwd_states = vec![fwd_last; n]; // placeholder, overwritten below
    let (mut h, mut c) = (zeros(), zeros());
    for (t, &x) in inputs.iter().enumerate().rev() {
        let (h2, c2) = lstm_step(tape, bwd, x, h, c, hidden)?;
        h = h2;
        c = c2;
        bwd_states[t] = h;
    }
    let bwd_last = h;

    let rows: Vec<Var> = (0..n)
        .map(|t| {
            let both = tape.concat(&[fwd_states[t], bwd_states[t]], 0)?;
            Ok(tape.transpose(both))
        })
        .collect::<Result<_>>()?;
    let reps = tape.concat(&rows, 0)?;
    let last_state = tape.concat(&[fwd_last, bwd_last], 0)?;
    Ok(EncodedSequence { reps, last_state })
}
