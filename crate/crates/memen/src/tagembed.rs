//! Skip-gram embeddings for POS and NER tag sequences.
//!
//! The tag vocabulary is tiny, so the exact softmax denominator is cheap and
//! training uses full-batch gradient ascent on the average log probability
//! of context tags given center tags.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// Minimum sentence length retained when building a tag corpus.
pub const MIN_SENTENCE_LEN: usize = 9;

/// Gradient ascent step size for tag training.
pub const SKIPGRAM_STEP: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct TagCorpus {
    pub sentences: Vec<Vec<usize>>,
    pub vocab: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagCorpus {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn tag_id(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }
}

/// Screen out sentences shorter than [`MIN_SENTENCE_LEN`] tags and build the
/// vocabulary over what remains.
pub fn build_corpus(tagged_sentences: &[Vec<String>]) -> Result<TagCorpus> {
    if tagged_sentences.is_empty() {
        return Err(Error::InvalidArg("build_corpus: no input sentences".into()));
    }
    let retained: Vec<&Vec<String>> =
        tagged_sentences.iter().filter(|s| s.len() >= MIN_SENTENCE_LEN).collect();
    if retained.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut vocab = Vec::new();
    let mut index = HashMap::new();
    let mut sentences = Vec::with_capacity(retained.len());
    for sent in retained {
        let mut ids = Vec::with_capacity(sent.len());
        for tag in sent {
            let id = *index.entry(tag.clone()).or_insert_with(|| {
                vocab.push(tag.clone());
                vocab.len() - 1
            });
            ids.push(id);
        }
        sentences.push(ids);
    }
    Ok(TagCorpus { sentences, vocab, index })
}

#[derive(Debug, Clone)]
pub struct TagEmbeddingTable {
    /// Input vectors, `V x d`; these are the embeddings served to the encoder.
    pub input: Tensor,
    /// Output (context) vectors, `V x d`.
    pub output: Tensor,
}

impl TagEmbeddingTable {
    pub fn dim(&self) -> usize {
        self.input.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.input.rows()
    }

    pub fn lookup(&self, tag_id: usize) -> &[f64] {
        let d = self.dim();
        &self.input.data()[tag_id * d..(tag_id + 1) * d]
    }
}

/// Exact softmax probability of context tag `w_o` given center tag `w_i`.
pub fn skipgram_prob(table: &TagEmbeddingTable, w_i: usize, w_o: usize) -> Result<f64> {
    let v = table.vocab_size();
    if w_i >= v || w_o >= v {
        return Err(Error::InvalidArg(format!("tag id out of range (V = {v})")));
    }
    let d = table.dim();
    let vin = &table.input.data()[w_i * d..(w_i + 1) * d];
    let mut denom = 0.0;
    let mut num = 0.0;
    for w in 0..v {
        let vout = &table.output.data()[w * d..(w + 1) * d];
        let dot: f64 = vin.iter().zip(vout).map(|(a, b)| a * b).sum();
        let e = dot.exp();
        denom += e;
        if w == w_o {
            num = e;
        }
    }
    Ok(num / denom)
}

/// `(center, context)` pairs for one sentence with window `c`, clipped at the
/// sentence boundaries.
pub fn context_pairs(sentence: &[usize], window: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let n = sentence.len();
    for t in 0..n {
        let lo = t.saturating_sub(window);
        let hi = (t + window).min(n - 1);
        for u in lo..=hi {
            if u != t {
                pairs.push((sentence[t], sentence[u]));
            }
        }
    }
    pairs
}

/// Co-occurrence counts `C[center][context]` over the whole corpus, plus the
/// total number of pairs.
fn pair_counts(corpus: &TagCorpus, window: usize) -> (Tensor, f64) {
    let v = corpus.vocab_size();
    let mut counts = Tensor::zeros(v, v);
    let mut total = 0.0;
    for sent in &corpus.sentences {
        for (c, o) in context_pairs(sent, window) {
            counts.data_mut()[c * v + o] += 1.0;
            total += 1.0;
        }
    }
    (counts, total)
}

pub struct SkipgramTraining {
    pub table: TagEmbeddingTable,
    /// Average log probability after initialization and after each epoch.
    pub objective: Vec<f64>,
}

/// Average log probability of the corpus under the current table, and the
/// gradients of that objective if requested.
fn objective_pass(
    input: &Tensor,
    output: &Tensor,
    counts: &Tensor,
    total: f64,
    with_grads: bool,
) -> Result<(f64, Option<(Tensor, Tensor)>)> {
    let tape = Tape::new();
    let vin = tape.leaf(input.clone(), with_grads);
    let vout = tape.leaf(output.clone(), with_grads);
    let logits = tape.matmul(vin, tape.transpose(vout))?;
    let probs = tape.softmax(logits, 1)?;
    let logp = tape.log(probs);
    let weighted = tape.mul(logp, tape.constant(counts.clone()))?;
    let obj = tape.scale(tape.sum_all(weighted), 1.0 / total);
    let value = tape.value(obj).data()[0];
    if with_grads {
        tape.backward(obj)?;
        let gi = tape.grad(vin).unwrap();
        let go = tape.grad(vout).unwrap();
        Ok((value, Some((gi, go))))
    } else {
        Ok((value, None))
    }
}

/// Train input/output tag vectors by full-batch gradient ascent.
pub fn train_skipgram(
    corpus: &TagCorpus,
    dim: usize,
    window: usize,
    epochs: usize,
    seed: u64,
) -> Result<SkipgramTraining> {
    if dim < 1 {
        return Err(Error::InvalidArg("skip-gram dim must be >= 1".into()));
    }
    if window < 1 {
        return Err(Error::InvalidArg("skip-gram window must be >= 1".into()));
    }
    if epochs < 1 {
        return Err(Error::InvalidArg("skip-gram epochs must be >= 1".into()));
    }
    if corpus.sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let v = corpus.vocab_size();
    let (counts, total) = pair_counts(corpus, window);
    if total == 0.0 {
        return Err(Error::EmptyCorpus);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input = Tensor::uniform_init(v, dim, dim, &mut rng);
    let mut output = Tensor::uniform_init(v, dim, dim, &mut rng);

    let (init_obj, _) = objective_pass(&input, &output, &counts, total, false)?;
    let mut objective = vec![init_obj];
    for _ in 0..epochs {
        let (_, grads) = objective_pass(&input, &output, &counts, total, true)?;
        let (gi, go) = grads.unwrap();
        for (x, g) in input.data_mut().iter_mut().zip(gi.data()) {
            *x += SKIPGRAM_STEP * g;
        }
        for (x, g) in output.data_mut().iter_mut().zip(go.data()) {
            *x += SKIPGRAM_STEP * g;
        }
        let (obj, _) = objective_pass(&input, &output, &counts, total, false)?;
        objective.push(obj);
    }
    Ok(SkipgramTraining { table: TagEmbeddingTable { input, output }, objective })
}
