//! AdaDelta training loop, EM/F1 evaluation, hop and ablation sweeps,
//! ensemble sampling and voting, and binary checkpoints.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoder::Vocabularies;
use crate::error::{Error, Result};
use crate::memory::MatchingSwitches;
use crate::model::{span_text, MemenModel, ModelConfig};
use crate::params::ParamSet;
use crate::pointer::SpanPrediction;
use crate::tagembed::{build_corpus, train_skipgram};
use crate::tensor::{Tape, Tensor};

pub const ENSEMBLE_LR_MEAN: f64 = 0.001;
/// Variance 0.0001, so sigma = 0.01.
pub const ENSEMBLE_LR_SIGMA: f64 = 0.01;
pub const ENSEMBLE_DROPOUT_MEAN: f64 = 0.2;
/// Variance 0.05, so sigma = sqrt(0.05).
pub const ENSEMBLE_DROPOUT_SIGMA: f64 = 0.223_606_797_749_979;

/// Everything the training loop needs; architecture sizes plus optimizer
/// hyperparameters and ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hops: usize,
    pub hidden: usize,
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_width: usize,
    pub tag_dim: usize,
    pub dropout: f64,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub matching: MatchingSwitches,
    pub pos_tags: bool,
    pub ner_tags: bool,
    /// Skip-gram epochs for the POS/NER tables before the main loop;
    /// 0 leaves the tag tables at their random initialization.
    pub tag_pretrain_epochs: usize,
    /// Skip-gram context window for tag pretraining.
    pub tag_window: usize,
    /// Stop once train EM reaches this value, if set.
    pub early_stop_em: Option<f64>,
    /// Stop after the first epoch that ends past this wall-clock budget,
    /// if set. Completed epochs are always logged.
    pub time_budget_secs: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hops: 3,
            hidden: 100,
            word_dim: 50,
            char_dim: 16,
            char_filters: 100,
            char_width: 5,
            tag_dim: 20,
            dropout: 0.2,
            lr: 0.001,
            rho: 0.95,
            eps: 1e-6,
            epochs: 10,
            batch: 16,
            seed: 42,
            matching: MatchingSwitches::default(),
            pos_tags: true,
            ner_tags: true,
            tag_pretrain_epochs: 20,
            tag_window: 2,
            early_stop_em: None,
            time_budget_secs: None,
        }
    }
}

impl TrainConfig {
    pub fn to_model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            word_dim: self.word_dim,
            char_dim: self.char_dim,
            char_filters: self.char_filters,
            char_width: self.char_width,
            tag_dim: self.tag_dim,
            hops: self.hops,
            dropout: self.dropout,
            matching: self.matching,
            use_pos: self.pos_tags,
            use_ner: self.ner_tags,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidArg("batch size must be >= 1".into()));
        }
        if self.lr < 0.0 || !(0.0..1.0).contains(&self.rho) || self.eps <= 0.0 {
            return Err(Error::InvalidArg("bad optimizer hyperparameters".into()));
        }
        self.to_model_config().validate()
    }
}

/// Per-parameter running averages of squared gradients and squared updates.
#[derive(Debug, Clone)]
pub struct AdaDeltaState {
    pub eg2: Vec<Tensor>,
    pub edx2: Vec<Tensor>,
}

impl AdaDeltaState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> =
            params.iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
        AdaDeltaState { eg2: zeros.clone(), edx2: zeros }
    }
}

/// One AdaDelta update: `E[g2] <- rho E[g2] + (1-rho) g2`,
/// `dx = -sqrt(E[dx2]+eps)/sqrt(E[g2]+eps) * g`, parameters shift by `lr * dx`,
/// and `E[dx2]` accumulates the unscaled `dx`.
pub fn adadelta_step(
    state: &mut AdaDeltaState,
    params: &mut ParamSet,
    grads: &[Tensor],
    lr: f64,
    rho: f64,
    eps: f64,
) -> Result<()> {
    if grads.len() != state.eg2.len() {
        return Err(Error::InvalidArg("adadelta_step: gradient count mismatch".into()));
    }
    for (i, p) in params.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let g = &grads[i];
        if g.shape() != p.value.shape() {
            return Err(Error::Shape(format!(
                "adadelta_step: gradient shape {:?} for {} (expected {:?})",
                g.shape(),
                p.name,
                p.value.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NanGradient { name: p.name.clone() });
        }
        let eg2 = state.eg2[i].data_mut();
        let edx2 = state.edx2[i].data_mut();
        let value = p.value.data_mut();
        for j in 0..value.len() {
            let gj = g.data()[j];
            eg2[j] = rho * eg2[j] + (1.0 - rho) * gj * gj;
            let dx = -((edx2[j] + eps).sqrt() / (eg2[j] + eps).sqrt()) * gj;
            edx2[j] = rho * edx2[j] + (1.0 - rho) * dx * dx;
            value[j] += lr * dx;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub em: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,em,f1\n");
        for r in &self.records {
            out.push_str(&format!("{},{:.6},{:.4},{:.4}\n", r.epoch, r.loss, r.em, r.f1));
        }
        out
    }
}

/// Lowercase and collapse whitespace.
pub fn normalize_text(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn bag_f1<T: std::hash::Hash + Eq>(pred: &[T], gold: &[T]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(&t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred.len() as f64;
    let r = overlap as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

fn pair_f1(pred: &str, gold: &str, char_level: bool) -> f64 {
    if char_level {
        let pc: Vec<char> = pred.chars().filter(|c| !c.is_whitespace()).collect();
        let gc: Vec<char> = gold.chars().filter(|c| !c.is_whitespace()).collect();
        bag_f1(&pc, &gc)
    } else {
        let pt: Vec<&str> = pred.split_whitespace().collect();
        let gt: Vec<&str> = gold.split_whitespace().collect();
        bag_f1(&pt, &gt)
    }
}

/// EM and mean F1 over `(id, text)` pairs aligned by id. Token-level F1 by
/// default; `char_level` switches to character bags.
pub fn evaluate(
    predictions: &[(String, String)],
    golds: &[(String, String)],
    char_level: bool,
) -> Result<(f64, f64)> {
    if predictions.len() != golds.len() {
        return Err(Error::InvalidArg(format!(
            "evaluate: {} predictions vs {} golds",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArg("evaluate: empty prediction set".into()));
    }
    let by_id: HashMap<&str, &str> =
        golds.iter().map(|(id, t)| (id.as_str(), t.as_str())).collect();
    let mut em = 0.0;
    let mut f1 = 0.0;
    for (id, text) in predictions {
        let gold = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::InvalidArg(format!("evaluate: no gold for id {id}")))?;
        let p = normalize_text(text);
        let g = normalize_text(gold);
        if p == g {
            em += 1.0;
        }
        f1 += pair_f1(&p, &g, char_level);
    }
    let n = predictions.len() as f64;
    Ok((em / n, f1 / n))
}

/// Predict every example and score against the gold answer texts.
pub fn evaluate_model(model: &MemenModel, dataset: &Dataset, char_level: bool) -> Result<(f64, f64)> {
    let preds = predict_dataset(model, dataset)?;
    let pairs: Vec<(String, String)> = dataset
        .examples
        .iter()
        .zip(&preds)
        .map(|(ex, p)| (ex.id.clone(), span_text(ex, p)))
        .collect();
    let golds: Vec<(String, String)> =
        dataset.examples.iter().map(|ex| (ex.id.clone(), ex.answer_text.clone())).collect();
    evaluate(&pairs, &golds, char_level)
}

pub fn predict_dataset(model: &MemenModel, dataset: &Dataset) -> Result<Vec<SpanPrediction>> {
    dataset.examples.iter().map(|ex| model.predict(ex)).collect()
}

/// Skip-gram pretrain the POS and NER tables from the dataset's passages and
/// write them into the model's embedding parameters.
pub fn pretrain_tag_tables(model: &mut MemenModel, dataset: &Dataset, config: &TrainConfig) -> Result<()> {
    if config.tag_pretrain_epochs == 0 {
        return Ok(());
    }
    let jobs: [(&str, bool, fn(&crate::data::Token) -> &str); 2] =
        [("enc.pos", config.pos_tags, |t| t.pos()), ("enc.ner", config.ner_tags, |t| t.ner())];
    for (param, active, pick) in jobs {
        if !active {
            continue;
        }
        let sentences: Vec<Vec<String>> = dataset
            .examples
            .iter()
            .map(|ex| ex.passage.iter().map(|t| pick(t).to_string()).collect())
            .collect();
        let corpus = build_corpus(&sentences)?;
        let trained = train_skipgram(
            &corpus,
            config.tag_dim,
            config.tag_window,
            config.tag_pretrain_epochs,
            config.seed,
        )?;
        // map corpus rows into the model's tag vocabulary order
        let mut table = model.params.get(param)?.value.clone();
        let names: Vec<String> =
            if param == "enc.pos" { model.vocabs.pos.clone() } else { model.vocabs.ner.clone() };
        for (row, name) in names.iter().enumerate() {
            if let Some(tid) = corpus.tag_id(name) {
                let src = trained.table.lookup(tid);
                let d = config.tag_dim;
                table.data_mut()[row * d..(row + 1) * d].copy_from_slice(src);
            }
        }
        model.set_param(param, table)?;
    }
    Ok(())
}

/// Run the AdaDelta loop over `dataset`, mutating `model` in place. Gradients
/// are averaged over each shuffled batch; train EM/F1 is measured after every
/// epoch so early stopping can watch it.
pub fn train(model: &mut MemenModel, dataset: &Dataset, config: &TrainConfig) -> Result<TrainingLog> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArg("train: empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdaDeltaState::new(&model.params);
    let mut log = TrainingLog::default();
    let n = dataset.len();
    let started = std::time::Instant::now();
    let mut acc: Vec<Tensor> =
        model.params.iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (bi, chunk) in order.chunks(config.batch).enumerate() {
            for a in &mut acc {
                a.data_mut().fill(0.0);
            }
            for &i in chunk {
                let ex = &dataset.examples[i];
                let tape = Tape::new();
                let (bound, pass) = model.forward(&tape, ex, true, &mut rng)?;
                let lv = tape.value(pass.loss).data()[0];
                if !lv.is_finite() {
                    return Err(Error::Diverged { epoch, batch: bi + 1 });
                }
                epoch_loss += lv;
                tape.backward(pass.loss)?;
                bound.accumulate_grads(&mut acc);
            }
            let scale = 1.0 / chunk.len() as f64;
            for a in &mut acc {
                for x in a.data_mut() {
                    *x *= scale;
                }
            }
            adadelta_step(&mut opt, &mut model.params, &acc, config.lr, config.rho, config.eps)?;
        }
        let (em, f1) = evaluate_model(model, dataset, false)?;
        log.records.push(EpochRecord { epoch, loss: epoch_loss / n as f64, em, f1 });
        if config.early_stop_em.is_some_and(|t| em >= t) {
            break;
        }
        if config.time_budget_secs.is_some_and(|b| started.elapsed().as_secs_f64() >= b) {
            break;
        }
    }
    Ok(log)
}

/// Build vocabularies, initialize a model, pretrain tag tables, and train.
pub fn train_from_scratch(config: &TrainConfig, dataset: &Dataset) -> Result<(MemenModel, TrainingLog)> {
    let vocabs = Vocabularies::from_dataset(dataset);
    let mut model = MemenModel::new(config.to_model_config(), vocabs, config.seed)?;
    pretrain_tag_tables(&mut model, dataset, config)?;
    let log = train(&mut model, dataset, config)?;
    Ok((model, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub hops: usize,
    pub em: f64,
    pub f1: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("label,hops,em,f1\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.4},{:.4}\n", r.label, r.hops, r.em, r.f1));
    }
    out
}

/// Train one model per hop count with a shared seed and report final train
/// EM/F1 for each.
pub fn hop_sweep(config: &TrainConfig, dataset: &Dataset, hop_list: &[usize]) -> Result<Vec<SweepRow>> {
    if hop_list.is_empty() {
        return Err(Error::InvalidArg("hop_sweep: empty hop list".into()));
    }
    let mut rows = Vec::with_capacity(hop_list.len());
    for &hops in hop_list {
        let cfg = TrainConfig { hops, ..config.clone() };
        let (model, _) = train_from_scratch(&cfg, dataset)?;
        let (em, f1) = evaluate_model(&model, dataset, false)?;
        rows.push(SweepRow { label: format!("hops-{hops}"), hops, em, f1 });
    }
    Ok(rows)
}

/// Baseline plus one training per ablation switch: no-integral, no-query-sim,
/// no-context-sim, no-gate, no-pos, no-ner.
pub fn ablation_sweep(config: &TrainConfig, dataset: &Dataset) -> Result<Vec<SweepRow>> {
    let variants: Vec<(String, TrainConfig)> = vec![
        ("full".into(), config.clone()),
        (
            "no-integral".into(),
            TrainConfig {
                matching: MatchingSwitches { integral: false, ..config.matching },
                ..config.clone()
            },
        ),
        (
            "no-query-sim".into(),
            TrainConfig {
                matching: MatchingSwitches { query_sim: false, ..config.matching },
                ..config.clone()
            },
        ),
        (
            "no-context-sim".into(),
            TrainConfig {
                matching: MatchingSwitches { context_sim: false, ..config.matching },
                ..config.clone()
            },
        ),
        (
            "no-gate".into(),
            TrainConfig {
                matching: MatchingSwitches { gate: false, ..config.matching },
                ..config.clone()
            },
        ),
        ("no-pos".into(), TrainConfig { pos_tags: false, ..config.clone() }),
        ("no-ner".into(), TrainConfig { ner_tags: false, ..config.clone() }),
    ];
    let mut rows = Vec::with_capacity(variants.len());
    for (label, cfg) in variants {
        cfg.validate()?; // all three matchings off -> nothing to fuse
        let (model, _) = train_from_scratch(&cfg, dataset)?;
        let (em, f1) = evaluate_model(&model, dataset, false)?;
        rows.push(SweepRow { label, hops: cfg.hops, em, f1 });
    }
    Ok(rows)
}

/// Two independent standard-normal draws (Box-Muller).
fn standard_normal_pair<R: Rng>(rng: &mut R) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let t = 2.0 * std::f64::consts::PI * u2;
    (r * t.cos(), r * t.sin())
}

/// Raw (unclamped) Gaussian draws for one ensemble member:
/// `lr ~ N(0.001, 0.0001)` and `dropout ~ N(0.2, 0.05)`, variances as given.
pub fn ensemble_raw_draws(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (z0, z1) = standard_normal_pair(&mut rng);
    (
        ENSEMBLE_LR_MEAN + ENSEMBLE_LR_SIGMA * z0,
        ENSEMBLE_DROPOUT_MEAN + ENSEMBLE_DROPOUT_SIGMA * z1,
    )
}

/// Perturb `base` for one ensemble member: Gaussian lr and dropout, clamped
/// to lr > 0 and dropout in [0, 0.5]; everything else copied, the member
/// seed replacing the base seed.
pub fn sample_ensemble_config(base: &TrainConfig, seed: u64) -> TrainConfig {
    let (lr, dropout) = ensemble_raw_draws(seed);
    TrainConfig {
        lr: lr.max(1e-8),
        dropout: dropout.clamp(0.0, 0.5),
        seed,
        ..base.clone()
    }
}

/// Sum-of-confidence voting: each member nominates its argmax span; every
/// nominated span is scored by the sum over members of that member's own
/// probability for it. Ties break to the lowest (start, end). The reported
/// confidence is the winning sum divided by the member count, and the
/// returned distributions are the element-wise member means.
pub fn ensemble_predict(models: &[MemenModel], ex: &crate::data::TaggedExample) -> Result<SpanPrediction> {
    if models.is_empty() {
        return Err(Error::InvalidArg("ensemble_predict: no members".into()));
    }
    let preds: Vec<SpanPrediction> =
        models.iter().map(|m| m.predict(ex)).collect::<Result<_>>()?;
    let mut candidates: Vec<(usize, usize)> = preds.iter().map(|p| (p.start, p.end)).collect();
    candidates.sort_unstable();
    candidates.dedup();
    let score = |&(s, e): &(usize, usize)| -> f64 {
        preds.iter().map(|p| p.start_dist[s - 1] * p.end_dist[e - 1]).sum()
    };
    let mut best = candidates[0];
    let mut best_score = score(&best);
    for cand in &candidates[1..] {
        let sc = score(cand);
        if sc > best_score {
            best = *cand;
            best_score = sc;
        }
    }
    let n = preds[0].start_dist.len();
    let k = preds.len() as f64;
    let mean = |pick: fn(&SpanPrediction) -> &Vec<f64>| -> Vec<f64> {
        (0..n).map(|i| preds.iter().map(|p| pick(p)[i]).sum::<f64>() / k).collect()
    };
    Ok(SpanPrediction {
        start: best.0,
        end: best.1,
        confidence: best_score / k,
        start_dist: mean(|p| &p.start_dist),
        end_dist: mean(|p| &p.end_dist),
    })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MEMENCK1";

/// Write config, vocabularies, and all parameters as a single binary file.
/// Byte-for-byte deterministic for a given model.
pub fn save_checkpoint(model: &MemenModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let pd = path.display().to_string();
    let ioerr = |e| Error::io(pd.clone(), e);
    let file = File::create(path).map_err(ioerr)?;
    let mut w = BufWriter::new(file);
    w.write_all(CHECKPOINT_MAGIC).map_err(ioerr)?;
    let config = serde_json::to_vec(&model.config)
        .map_err(|e| Error::Checkpoint(format!("serialize config: {e}")))?;
    let vocabs = serde_json::to_vec(&model.vocabs)
        .map_err(|e| Error::Checkpoint(format!("serialize vocabularies: {e}")))?;
    w.write_u64::<LittleEndian>(config.len() as u64).map_err(ioerr)?;
    w.write_all(&config).map_err(ioerr)?;
    w.write_u64::<LittleEndian>(vocabs.len() as u64).map_err(ioerr)?;
    w.write_all(&vocabs).map_err(ioerr)?;
    w.write_u64::<LittleEndian>(model.params.len() as u64).map_err(ioerr)?;
    for p in model.params.iter() {
        let name = p.name.as_bytes();
        w.write_u64::<LittleEndian>(name.len() as u64).map_err(ioerr)?;
        w.write_all(name).map_err(ioerr)?;
        w.write_u64::<LittleEndian>(p.value.rows() as u64).map_err(ioerr)?;
        w.write_u64::<LittleEndian>(p.value.cols() as u64).map_err(ioerr)?;
        for &x in p.value.data() {
            w.write_f64::<LittleEndian>(x).map_err(ioerr)?;
        }
    }
    w.flush().map_err(ioerr)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MemenModel> {
    let path = path.as_ref();
    let pd = path.display().to_string();
    let ioerr = |e| Error::io(pd.clone(), e);
    let file = File::open(path).map_err(ioerr)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(ioerr)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{pd}: not a checkpoint file")));
    }
    let read_blob = |r: &mut BufReader<File>| -> Result<Vec<u8>> {
        let len = r.read_u64::<LittleEndian>().map_err(|e| Error::io(pd.clone(), e))? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(|e| Error::io(pd.clone(), e))?;
        Ok(buf)
    };
    let config: ModelConfig = serde_json::from_slice(&read_blob(&mut r)?)
        .map_err(|e| Error::Checkpoint(format!("{pd}: bad config block: {e}")))?;
    let mut vocabs: Vocabularies = serde_json::from_slice(&read_blob(&mut r)?)
        .map_err(|e| Error::Checkpoint(format!("{pd}: bad vocabulary block: {e}")))?;
    vocabs.rebuild_indices();
    let count = r.read_u64::<LittleEndian>().map_err(ioerr)? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = String::from_utf8(read_blob(&mut r)?)
            .map_err(|e| Error::Checkpoint(format!("{pd}: bad parameter name: {e}")))?;
        let rows = r.read_u64::<LittleEndian>().map_err(ioerr)? as usize;
        let cols = r.read_u64::<LittleEndian>().map_err(ioerr)? as usize;
        let mut data = vec![0.0; rows * cols];
        for x in &mut data {
            *x = r.read_f64::<LittleEndian>().map_err(ioerr)?;
        }
        params.add(&name, Tensor::from_vec(rows, cols, data)?, true);
    }
    config.validate()?;
    Ok(MemenModel { config, vocabs, params })
}
