//! Dataset ingestion and generation.
//!
//! Datasets are UTF-8 JSON-lines, one example per line:
//! `{"id":..., "passage":[["word","pos","ner"],...], "question":[...],
//!   "answer_start":1, "answer_end":2, "answer_text":"..."}`.
//! Answer indices are 1-based token positions into the passage.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `(word, pos, ner)` triple; serializes as a 3-element JSON array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token(pub String, pub String, pub String);

impl Token {
    pub fn word(&self) -> &str {
        &self.0
    }
    pub fn pos(&self) -> &str {
        &self.1
    }
    pub fn ner(&self) -> &str {
        &self.2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedExample {
    pub id: String,
    pub passage: Vec<Token>,
    pub question: Vec<Token>,
    /// 1-based, inclusive.
    pub answer_start: usize,
    /// 1-based, inclusive.
    pub answer_end: usize,
    pub answer_text: String,
}

impl TaggedExample {
    pub fn validate(&self) -> Result<()> {
        let n = self.passage.len();
        if self.answer_start < 1 || self.answer_start > self.answer_end || self.answer_end > n {
            return Err(Error::BadExample {
                id: self.id.clone(),
                msg: format!(
                    "answer span [{}, {}] out of range for {n}-token passage",
                    self.answer_start, self.answer_end
                ),
            });
        }
        for tok in self.passage.iter().chain(&self.question) {
            if tok.word().is_empty() || tok.pos().is_empty() {
                return Err(Error::BadExample {
                    id: self.id.clone(),
                    msg: "token with empty word or pos tag".into(),
                });
            }
        }
        Ok(())
    }

    /// Gold answer tokens, as indexed by the span.
    pub fn span_tokens(&self) -> Vec<&str> {
        self.passage[self.answer_start - 1..self.answer_end]
            .iter()
            .map(|t| t.word())
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub examples: Vec<TaggedExample>,
    pub split: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: TaggedExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        ex.validate()?;
        if !seen.insert(ex.id.clone()) {
            return Err(Error::BadExample { id: ex.id.clone(), msg: "duplicate example id".into() });
        }
        examples.push(ex);
    }
    Ok(Dataset { examples, split: "train".into() })
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for ex in &dataset.examples {
        serde_json::to_writer(&mut w, ex)
            .map_err(|e| Error::InvalidArg(format!("serialize {}: {e}", ex.id)))?;
        writeln!(w).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

const POS_SET: [&str; 12] =
    ["NN", "NNP", "VB", "DT", "IN", "JJ", "RB", "PRP", "CC", "CD", "WP", "TO"];
const NER_SET: [&str; 5] = ["O", "ENT", "PER", "LOC", "NUM"];

fn filler_pos(i: usize) -> &'static str {
    // cycle through the non-reserved POS tags
    const CYCLE: [&str; 8] = ["VB", "DT", "IN", "JJ", "RB", "PRP", "CC", "CD"];
    CYCLE[i % CYCLE.len()]
}

fn filler_ner(i: usize) -> &'static str {
    match i % 7 {
        3 => "PER",
        5 => "LOC",
        6 => "NUM",
        _ => "O",
    }
}

/// Key-value reading task: the passage hides one `key value...` segment among
/// filler words, the question names the key, and the gold span is the value
/// segment. Value tokens are the only ones tagged `ENT`, so a rule-based
/// reader can recover every answer.
pub fn generate_synthetic(
    seed: u64,
    n_examples: usize,
    vocab_size: usize,
    passage_len_range: (usize, usize),
) -> Result<Dataset> {
    if vocab_size < 10 {
        return Err(Error::InvalidArg(format!("vocab_size {vocab_size} must be >= 10")));
    }
    let (lo, hi) = passage_len_range;
    if lo < 5 || hi < lo {
        return Err(Error::InvalidArg(format!("bad passage length range {lo}..={hi}")));
    }
    let n_keys = (vocab_size / 4).max(3);
    let n_vals = (vocab_size / 4).max(3);
    let n_fill = vocab_size - n_keys - n_vals;
    let keys: Vec<String> = (0..n_keys).map(|i| format!("key{i}")).collect();
    let vals: Vec<String> = (0..n_vals).map(|i| format!("val{i}")).collect();
    let fills: Vec<String> = (0..n_fill).map(|i| format!("word{i}")).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(n_examples);
    for idx in 0..n_examples {
        let len = rng.gen_range(lo..=hi);
        let vlen = 1 + rng.gen_range(0..2usize).min(len.saturating_sub(4));
        let key = rng.gen_range(0..n_keys);
        let pos = rng.gen_range(0..len - vlen); // key position, 0-based
        let mut passage = Vec::with_capacity(len);
        for t in 0..len {
            if t == pos {
                passage.push(Token(keys[key].clone(), "NN".into(), "O".into()));
            } else if t > pos && t <= pos + vlen {
                let v = rng.gen_range(0..n_vals);
                passage.push(Token(vals[v].clone(), "NNP".into(), "ENT".into()));
            } else {
                let f = rng.gen_range(0..n_fill);
                passage.push(Token(fills[f].clone(), filler_pos(f).into(), filler_ner(f).into()));
            }
        }
        let question = vec![
            Token("what".into(), "WP".into(), "O".into()),
            Token(keys[key].clone(), "NN".into(), "O".into()),
            Token("to".into(), "TO".into(), "O".into()),
        ];
        let answer_start = pos + 2; // 1-based, first value token
        let answer_end = pos + vlen + 1;
        let answer_text = passage[answer_start - 1..answer_end]
            .iter()
            .map(|t| t.word())
            .collect::<Vec<_>>()
            .join(" ");
        let ex = TaggedExample {
            id: format!("syn-{idx:05}"),
            passage,
            question,
            answer_start,
            answer_end,
            answer_text,
        };
        ex.validate()?;
        examples.push(ex);
    }
    Ok(Dataset { examples, split: "train".into() })
}

pub fn synthetic_pos_set() -> Vec<String> {
    POS_SET.iter().map(|s| s.to_string()).collect()
}

pub fn synthetic_ner_set() -> Vec<String> {
    NER_SET.iter().map(|s| s.to_string()).collect()
}

/// Word table loaded against a fixed vocabulary.
#[derive(Debug)]
pub struct LoadedEmbeddings {
    pub table: Tensor,
    pub dim: usize,
    /// Fraction of vocabulary words found in the file.
    pub coverage: f64,
}

/// Read a text embedding file (`"<count> <dim>"` header, then
/// `token v1 .. vdim` lines) against `vocab`. Missing words get seeded
/// random rows.
pub fn load_embeddings(path: impl AsRef<Path>, vocab: &[String], seed: u64) -> Result<LoadedEmbeddings> {
    let path = path.as_ref();
    let pd = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(pd.clone(), e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { path: pd.clone(), line: 1, msg: "empty file".into() })?;
    let header = header.map_err(|e| Error::io(pd.clone(), e))?;
    let mut it = header.split_whitespace();
    let _count: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse { path: pd.clone(), line: 1, msg: "bad count".into() })?;
    let dim: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse { path: pd.clone(), line: 1, msg: "bad dim".into() })?;

    let mut file_rows = std::collections::HashMap::new();
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(pd.clone(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tok = parts.next().unwrap().to_string();
        let row: std::result::Result<Vec<f64>, _> = parts.map(|p| p.parse::<f64>()).collect();
        let row = row.map_err(|e| Error::Parse {
            path: pd.clone(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        if row.len() != dim {
            return Err(Error::Parse {
                path: pd.clone(),
                line: lineno + 1,
                msg: format!("expected {dim} floats, got {}", row.len()),
            });
        }
        file_rows.insert(tok, row);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(vocab.len() * dim);
    let mut found = 0usize;
    for word in vocab {
        if let Some(row) = file_rows.get(word) {
            found += 1;
            data.extend_from_slice(row);
        } else {
            let bound = 1.0 / (dim as f64).sqrt();
            data.extend((0..dim).map(|_| rng.gen_range(-bound..bound)));
        }
    }
    let coverage = if vocab.is_empty() { 0.0 } else { found as f64 / vocab.len() as f64 };
    Ok(LoadedEmbeddings { table: Tensor::from_vec(vocab.len(), dim, data)?, dim, coverage })
}

/// Write the shared embedding text format.
pub fn save_embeddings(path: impl AsRef<Path>, names: &[String], table: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let pd = path.display().to_string();
    assert_eq!(names.len(), table.rows());
    let file = File::create(path).map_err(|e| Error::io(pd.clone(), e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{} {}", table.rows(), table.cols()).map_err(|e| Error::io(pd.clone(), e))?;
    for (i, name) in names.iter().enumerate() {
        write!(w, "{name}").map_err(|e| Error::io(pd.clone(), e))?;
        for j in 0..table.cols() {
            write!(w, " {}", table.at(i, j)).map_err(|e| Error::io(pd.clone(), e))?;
        }
        writeln!(w).map_err(|e| Error::io(pd.clone(), e))?;
    }
    Ok(())
}
