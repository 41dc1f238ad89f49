//! The assembled reader: multi-layer token embedding, shared BiLSTM encoder,
//! multi-hop matching memory, and the pointer decoder, wired over one
//! parameter table.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::TaggedExample;
use crate::encoder::{embed_token, encode_sequence, EncoderVars, LstmVars, Vocabularies};
use crate::error::{Error, Result};
use crate::memory::{
    forget_bias, init_hop_tensors, run_memory_network, HopVars, MatchingSwitches,
};
use crate::params::ParamSet;
use crate::pointer::{decode_span, init_pointer_tensors, span_loss, PointerVars, SpanPrediction};
use crate::tensor::{Tape, Tensor, Var};

/// Architecture sizes and switches. Training hyperparameters live in
/// [`crate::trainer::TrainConfig`], which embeds one of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_width: usize,
    pub tag_dim: usize,
    pub hops: usize,
    pub dropout: f64,
    pub matching: MatchingSwitches,
    pub use_pos: bool,
    pub use_ner: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 100,
            word_dim: 50,
            char_dim: 16,
            char_filters: 100,
            char_width: 5,
            tag_dim: 20,
            hops: 3,
            dropout: 0.2,
            matching: MatchingSwitches::default(),
            use_pos: true,
            use_ner: true,
        }
    }
}

impl ModelConfig {
    /// Width of one token's concatenated embedding column.
    pub fn input_dim(&self) -> usize {
        self.word_dim
            + self.char_filters
            + if self.use_pos { self.tag_dim } else { 0 }
            + if self.use_ner { self.tag_dim } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.word_dim == 0 || self.char_dim == 0 || self.char_filters == 0 {
            return Err(Error::InvalidArg("model dimensions must be positive".into()));
        }
        if self.char_width == 0 {
            return Err(Error::InvalidArg("char filter width must be positive".into()));
        }
        if self.hops == 0 {
            return Err(Error::InvalidArg("hops must be >= 1".into()));
        }
        if (self.use_pos || self.use_ner) && self.tag_dim == 0 {
            return Err(Error::InvalidArg("tag_dim must be positive when tag blocks are on".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArg(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.matching.active_blocks() == 0 {
            return Err(Error::InvalidArg(
                "all matching modules ablated, nothing to fuse".into(),
            ));
        }
        Ok(())
    }
}

/// The model: config, symbol tables, and named parameters.
#[derive(Debug, Clone)]
pub struct MemenModel {
    pub config: ModelConfig,
    pub vocabs: Vocabularies,
    pub params: ParamSet,
}

/// One example's forward pass results, still attached to the tape.
pub struct ForwardPass {
    pub loss: Var,
    pub decoded: SpanPrediction,
}

impl MemenModel {
    /// Fresh random parameters. Word / POS / NER tables can be overwritten
    /// afterwards with [`MemenModel::set_param`].
    pub fn new(config: ModelConfig, vocabs: Vocabularies, seed: u64) -> Result<Self> {
        config.validate()?;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let c = &config;
        let d_in = c.input_dim();
        let h = c.hidden;

        params.add(
            "enc.word",
            Tensor::uniform_init(vocabs.words.len(), c.word_dim, c.word_dim, &mut rng),
            true,
        );
        params.add(
            "enc.char",
            Tensor::uniform_init(vocabs.chars.len(), c.char_dim, c.char_dim, &mut rng),
            true,
        );
        let win = c.char_width * c.char_dim;
        params.add("enc.cnn_w", Tensor::uniform_init(c.char_filters, win, win, &mut rng), true);
        params.add("enc.cnn_b", Tensor::zeros(c.char_filters, 1), true);
        if c.use_pos {
            params.add(
                "enc.pos",
                Tensor::uniform_init(vocabs.pos.len(), c.tag_dim, c.tag_dim, &mut rng),
                true,
            );
        }
        if c.use_ner {
            params.add(
                "enc.ner",
                Tensor::uniform_init(vocabs.ner.len(), c.tag_dim, c.tag_dim, &mut rng),
                true,
            );
        }
        for dir in ["fwd", "bwd"] {
            params.add(
                &format!("enc.{dir}_wx"),
                Tensor::uniform_init(4 * h, d_in, d_in, &mut rng),
                true,
            );
            params.add(
                &format!("enc.{dir}_wh"),
                Tensor::uniform_init(4 * h, h, h, &mut rng),
                true,
            );
            params.add(&format!("enc.{dir}_b"), forget_bias(h), true);
        }
        let blocks = c.matching.active_blocks();
        for k in 0..c.hops {
            for (name, t) in init_hop_tensors(h, blocks, k > 0, &mut rng) {
                params.add(&format!("hop{k}.{name}"), t, true);
            }
        }
        for (name, t) in init_pointer_tensors(h, &mut rng) {
            params.add(&format!("ptr.{name}"), t, true);
        }
        Ok(MemenModel { config, vocabs, params })
    }

    /// Replace a parameter's value in place; shapes must agree.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.params.id(name)?;
        let p = self.params.by_id_mut(id);
        if p.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "set_param {name}: expected {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    fn encoder_vars(&self, vars: &[Var]) -> Result<EncoderVars> {
        let v = |name: &str| -> Result<Var> { Ok(vars[self.params.id(name)?]) };
        Ok(EncoderVars {
            word_table: v("enc.word")?,
            char_table: v("enc.char")?,
            cnn_w: v("enc.cnn_w")?,
            cnn_b: v("enc.cnn_b")?,
            pos_table: if self.config.use_pos { Some(v("enc.pos")?) } else { None },
            ner_table: if self.config.use_ner { Some(v("enc.ner")?) } else { None },
            fwd: LstmVars { wx: v("enc.fwd_wx")?, wh: v("enc.fwd_wh")?, b: v("enc.fwd_b")? },
            bwd: LstmVars { wx: v("enc.bwd_wx")?, wh: v("enc.bwd_wh")?, b: v("enc.bwd_b")? },
        })
    }

    fn hop_vars(&self, vars: &[Var], k: usize) -> Result<HopVars> {
        let v = |name: &str| -> Result<Var> { Ok(vars[self.params.id(&format!("hop{k}.{name}"))?]) };
        Ok(HopVars {
            w1: v("w1")?,
            w_f: v("wf")?,
            w_g: v("wg")?,
            b_g: v("bg")?,
            bilstm_fwd: LstmVars { wx: v("fwd_wx")?, wh: v("fwd_wh")?, b: v("fwd_b")? },
            bilstm_bwd: LstmVars { wx: v("bwd_wx")?, wh: v("bwd_wh")?, b: v("bwd_b")? },
            w_r: if k > 0 { Some(v("wr")?) } else { None },
        })
    }

    fn pointer_vars(&self, vars: &[Var]) -> Result<PointerVars> {
        let v = |name: &str| -> Result<Var> { Ok(vars[self.params.id(&format!("ptr.{name}"))?]) };
        Ok(PointerVars {
            s: v("s")?,
            w_q: v("wq")?,
            b_q: v("bq")?,
            c: v("c")?,
            w_p: v("wp")?,
            w_h: v("wh")?,
            gru_wx: v("gru_wx")?,
            gru_wh: v("gru_wh")?,
            gru_b: v("gru_b")?,
            gru_cx: v("gru_cx")?,
            gru_ch: v("gru_ch")?,
            gru_cb: v("gru_cb")?,
        })
    }

    fn embed_sequence<R: Rng>(
        &self,
        tape: &Tape,
        enc: &EncoderVars,
        tokens: &[crate::data::Token],
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        tokens
            .iter()
            .map(|tok| {
                let e = embed_token(
                    tape,
                    enc,
                    self.vocabs.word_id(tok.word()),
                    &self.vocabs.char_ids(tok.word()),
                    self.vocabs.pos_id(tok.pos()),
                    self.vocabs.ner_id(tok.ner()),
                    self.config.char_width,
                )?;
                tape.dropout(e, self.config.dropout, training, rng)
            })
            .collect()
    }

    /// Build the whole graph for one example on `vars` (tape leaves in
    /// parameter order) and return the decoded span plus the span loss.
    pub fn forward_on_vars<R: Rng>(
        &self,
        tape: &Tape,
        vars: &[Var],
        ex: &TaggedExample,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardPass> {
        ex.validate()?;
        let c = &self.config;
        let enc = self.encoder_vars(vars)?;
        let p_inputs = self.embed_sequence(tape, &enc, &ex.passage, training, rng)?;
        let q_inputs = self.embed_sequence(tape, &enc, &ex.question, training, rng)?;
        let p_seq = encode_sequence(tape, &enc.fwd, &enc.bwd, &p_inputs, c.hidden)?;
        let q_seq = encode_sequence(tape, &enc.fwd, &enc.bwd, &q_inputs, c.hidden)?;

        let hops: Vec<HopVars> =
            (0..c.hops).map(|k| self.hop_vars(vars, k)).collect::<Result<_>>()?;
        let outputs = run_memory_network(
            tape,
            &hops,
            &c.matching,
            p_seq.reps,
            q_seq.reps,
            q_seq.last_state,
            c.hidden,
        )?;
        let o_last = outputs.last().expect("hops >= 1").o;
        let o_last = tape.dropout(o_last, c.dropout, training, rng)?;

        let ptr = self.pointer_vars(vars)?;
        let decoded = decode_span(tape, &ptr, o_last, q_seq.reps, !training)?;
        let loss =
            span_loss(tape, decoded.start_dist, decoded.end_dist, ex.answer_start, ex.answer_end)?;
        Ok(ForwardPass { loss, decoded: decoded.span })
    }

    /// Forward pass with parameters freshly bound onto `tape`. Returns the
    /// bound view (for gradient extraction) alongside the pass.
    pub fn forward<'t, R: Rng>(
        &self,
        tape: &'t Tape,
        ex: &TaggedExample,
        training: bool,
        rng: &mut R,
    ) -> Result<(crate::params::Bound<'t>, ForwardPass)> {
        let bound = self.params.bind(tape, training);
        let vars: Vec<Var> = (0..self.params.len()).map(|i| bound.var_by_id(i)).collect();
        let pass = self.forward_on_vars(tape, &vars, ex, training, rng)?;
        Ok((bound, pass))
    }

    /// Inference on one example (no dropout, end >= start enforced).
    pub fn predict(&self, ex: &TaggedExample) -> Result<SpanPrediction> {
        use rand::SeedableRng;
        let tape = Tape::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let (_, pass) = self.forward(&tape, ex, false, &mut rng)?;
        Ok(pass.decoded)
    }
}

/// Words of `ex.passage` covered by `span`, joined with spaces.
pub fn span_text(ex: &TaggedExample, span: &SpanPrediction) -> String {
    ex.passage[span.start - 1..span.end]
        .iter()
        .map(|t| t.word())
        .collect::<Vec<_>>()
        .join(" ")
}
