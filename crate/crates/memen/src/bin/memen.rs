//! Batch experiment driver: data generation, tag-embedding pretraining,
//! training, evaluation, prediction, sweeps, and ensembles.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags or
//! missing input paths).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use memen::data::{generate_synthetic, load_dataset, save_dataset, save_embeddings, Dataset};
use memen::memory::MatchingSwitches;
use memen::model::{span_text, MemenModel};
use memen::tagembed::{build_corpus, train_skipgram};
use memen::trainer::{
    ablation_sweep, ensemble_predict, evaluate, evaluate_model, hop_sweep, load_checkpoint,
    predict_dataset, sample_ensemble_config, save_checkpoint, sweep_csv, train_from_scratch,
    TrainConfig,
};

#[derive(Parser)]
#[command(name = "memen", about = "Train and run the MEMEN span reader", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TagKind {
    Pos,
    Ner,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Ablation {
    Integral,
    QuerySim,
    ContextSim,
    Gate,
    PosTags,
    NerTags,
}

/// Training flags shared by train, hop-sweep, ablate, and ensemble. Names
/// mirror the TrainConfig fields.
#[derive(Args, Debug, Clone)]
struct TrainFlags {
    #[arg(long, default_value_t = 3)]
    hops: usize,
    #[arg(long, default_value_t = 100)]
    hidden: usize,
    #[arg(long, default_value_t = 50)]
    word_dim: usize,
    #[arg(long, default_value_t = 16)]
    char_dim: usize,
    #[arg(long, default_value_t = 100)]
    char_filters: usize,
    #[arg(long, default_value_t = 5)]
    char_width: usize,
    #[arg(long, default_value_t = 20)]
    tag_dim: usize,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.95)]
    rho: f64,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Skip-gram epochs for POS/NER tables before training (0 = skip).
    #[arg(long, default_value_t = 20)]
    tag_pretrain_epochs: usize,
    #[arg(long, default_value_t = 2)]
    tag_window: usize,
    /// Stop once train EM reaches this value.
    #[arg(long)]
    early_stop_em: Option<f64>,
    /// Stop after the first epoch that ends past this wall-clock budget.
    #[arg(long)]
    time_budget_secs: Option<f64>,
    /// Switch off a component; repeatable.
    #[arg(long, value_enum)]
    ablate: Vec<Ablation>,
}

impl TrainFlags {
    fn to_config(&self) -> TrainConfig {
        let mut matching = MatchingSwitches::default();
        let mut pos_tags = true;
        let mut ner_tags = true;
        for a in &self.ablate {
            match a {
                Ablation::Integral => matching.integral = false,
                Ablation::QuerySim => matching.query_sim = false,
                Ablation::ContextSim => matching.context_sim = false,
                Ablation::Gate => matching.gate = false,
                Ablation::PosTags => pos_tags = false,
                Ablation::NerTags => ner_tags = false,
            }
        }
        TrainConfig {
            hops: self.hops,
            hidden: self.hidden,
            word_dim: self.word_dim,
            char_dim: self.char_dim,
            char_filters: self.char_filters,
            char_width: self.char_width,
            tag_dim: self.tag_dim,
            dropout: self.dropout,
            lr: self.lr,
            rho: self.rho,
            eps: self.eps,
            epochs: self.epochs,
            batch: self.batch,
            seed: self.seed,
            matching,
            pos_tags,
            ner_tags,
            tag_pretrain_epochs: self.tag_pretrain_epochs,
            tag_window: self.tag_window,
            early_stop_em: self.early_stop_em,
            time_budget_secs: self.time_budget_secs,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic key-value dataset (JSON lines).
    GenData {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        vocab: usize,
        #[arg(long, default_value_t = 9)]
        min_len: usize,
        #[arg(long, default_value_t = 12)]
        max_len: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train skip-gram tag embeddings from a dataset's passages.
    TrainTags {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "pos")]
        tag: TagKind,
        #[arg(long, default_value_t = 20)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        window: usize,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train a model; writes checkpoint and training log under --out-dir.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Evaluate a checkpoint on a dataset; prints "EM x.xxxx F1 x.xxxx".
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Character-level F1 instead of token-level.
        #[arg(long)]
        char_f1: bool,
    },
    /// Predict spans; writes JSON lines under --out-dir.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train one model per hop count; writes a CSV comparison.
    HopSweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated hop counts.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        hops_list: Vec<usize>,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Train the full model plus one ablation per switch; writes a CSV.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Train k members with Gaussian-perturbed configs and vote.
    Ensemble {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 3)]
        members: usize,
        #[command(flatten)]
        flags: TrainFlags,
    },
}

enum AppError {
    Usage(String),
    Runtime(String),
}

impl From<memen::Error> for AppError {
    fn from(e: memen::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}

fn require_file(path: &Path) -> Result<(), AppError> {
    if !path.is_file() {
        return Err(AppError::Usage(format!("input file not found: {}", path.display())));
    }
    Ok(())
}

fn ensure_out_dir(dir: &Path) -> Result<(), AppError> {
    fs::create_dir_all(dir)
        .map_err(|e| AppError::Usage(format!("cannot create --out-dir {}: {e}", dir.display())))
}

fn load(path: &Path) -> Result<Dataset, AppError> {
    require_file(path)?;
    Ok(load_dataset(path)?)
}

fn write_predictions(
    path: &Path,
    dataset: &Dataset,
    preds: &[memen::pointer::SpanPrediction],
) -> Result<(), AppError> {
    let mut out = String::new();
    for (ex, p) in dataset.examples.iter().zip(preds) {
        let rec = serde_json::json!({
            "id": ex.id,
            "answer_text": span_text(ex, p),
            "start": p.start,
            "end": p.end,
            "confidence": p.confidence,
        });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::GenData { out_dir, n, vocab, min_len, max_len, seed } => {
            ensure_out_dir(&out_dir)?;
            let ds = generate_synthetic(seed, n, vocab, (min_len, max_len))?;
            let path = out_dir.join("data.jsonl");
            save_dataset(&ds, &path)?;
            println!("wrote {} examples to {}", ds.len(), path.display());
        }
        Command::TrainTags { data, out_dir, tag, dim, window, epochs, seed } => {
            let ds = load(&data)?;
            ensure_out_dir(&out_dir)?;
            let pick: fn(&memen::data::Token) -> &str = match tag {
                TagKind::Pos => |t| t.pos(),
                TagKind::Ner => |t| t.ner(),
            };
            let sentences: Vec<Vec<String>> = ds
                .examples
                .iter()
                .map(|ex| ex.passage.iter().map(|t| pick(t).to_string()).collect())
                .collect();
            let corpus = build_corpus(&sentences)?;
            let trained = train_skipgram(&corpus, dim, window, epochs, seed)?;
            let name = match tag {
                TagKind::Pos => "pos_embeddings.txt",
                TagKind::Ner => "ner_embeddings.txt",
            };
            let path = out_dir.join(name);
            save_embeddings(&path, &corpus.vocab, &trained.table.input)?;
            println!(
                "wrote {} ({} tags, dim {})",
                path.display(),
                corpus.vocab_size(),
                dim
            );
            println!(
                "final average log probability: {:.6}",
                trained.objective.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Train { data, out_dir, flags } => {
            let ds = load(&data)?;
            ensure_out_dir(&out_dir)?;
            let config = flags.to_config();
            let (model, log) = train_from_scratch(&config, &ds)?;
            save_checkpoint(&model, out_dir.join("model.ckpt"))?;
            fs::write(out_dir.join("train_log.csv"), log.to_csv())?;
            if let Some(last) = log.records.last() {
                println!(
                    "trained {} epochs, final loss {:.6} EM {:.4} F1 {:.4}",
                    last.epoch, last.loss, last.em, last.f1
                );
            }
        }
        Command::Eval { data, checkpoint, char_f1 } => {
            let ds = load(&data)?;
            require_file(&checkpoint)?;
            let model = load_checkpoint(&checkpoint)?;
            let (em, f1) = evaluate_model(&model, &ds, char_f1)?;
            println!("EM {em:.4} F1 {f1:.4}");
        }
        Command::Predict { data, checkpoint, out_dir } => {
            let ds = load(&data)?;
            require_file(&checkpoint)?;
            ensure_out_dir(&out_dir)?;
            let model = load_checkpoint(&checkpoint)?;
            let preds = predict_dataset(&model, &ds)?;
            let path = out_dir.join("predictions.jsonl");
            write_predictions(&path, &ds, &preds)?;
            println!("wrote {} predictions to {}", preds.len(), path.display());
        }
        Command::HopSweep { data, out_dir, hops_list, flags } => {
            let ds = load(&data)?;
            ensure_out_dir(&out_dir)?;
            let rows = hop_sweep(&flags.to_config(), &ds, &hops_list)?;
            let csv = sweep_csv(&rows);
            fs::write(out_dir.join("hop_sweep.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Ablate { data, out_dir, flags } => {
            let ds = load(&data)?;
            ensure_out_dir(&out_dir)?;
            let rows = ablation_sweep(&flags.to_config(), &ds)?;
            let csv = sweep_csv(&rows);
            fs::write(out_dir.join("ablation.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Ensemble { data, out_dir, members, flags } => {
            if members == 0 {
                return Err(AppError::Usage("--members must be >= 1".into()));
            }
            let ds = load(&data)?;
            ensure_out_dir(&out_dir)?;
            let base = flags.to_config();
            let mut models: Vec<MemenModel> = Vec::with_capacity(members);
            for k in 0..members {
                let cfg = sample_ensemble_config(&base, base.seed + 1 + k as u64);
                println!(
                    "member {}: lr {:.6} dropout {:.4} seed {}",
                    k + 1,
                    cfg.lr,
                    cfg.dropout,
                    cfg.seed
                );
                let (model, _) = train_from_scratch(&cfg, &ds)?;
                save_checkpoint(&model, out_dir.join(format!("member_{}.ckpt", k + 1)))?;
                models.push(model);
            }
            let preds: Vec<_> = ds
                .examples
                .iter()
                .map(|ex| ensemble_predict(&models, ex))
                .collect::<memen::Result<_>>()?;
            write_predictions(&out_dir.join("ensemble_predictions.jsonl"), &ds, &preds)?;
            let pairs: Vec<(String, String)> = ds
                .examples
                .iter()
                .zip(&preds)
                .map(|(ex, p)| (ex.id.clone(), span_text(ex, p)))
                .collect();
            let golds: Vec<(String, String)> =
                ds.examples.iter().map(|ex| (ex.id.clone(), ex.answer_text.clone())).collect();
            let (em, f1) = evaluate(&pairs, &golds, false)?;
            println!("ensemble of {members}: EM {em:.4} F1 {f1:.4}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // clap exits with code 2 on usage errors
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
