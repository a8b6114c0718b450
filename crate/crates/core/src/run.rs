//! End-to-end commands over a run directory.
//!
//! ```text
//! <out>/config.json      resolved config (vocab size filled in)
//! <out>/checkpoint.bin   model + vocabulary
//! <out>/cache.defc       exported embedding cache
//! <out>/metrics.jsonl    one record per epoch
//! <out>/maps/            correlation maps, <stage>.csv and <stage>.pgm
//! ```
//!
//! Everything written to the run directory is a pure function of the config
//! and the corpus, so reruns are byte-identical. Wall-clock time only goes
//! to the caller's epoch callback.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{self, correlation_map, GradCheckOptions, GradCheckReport, Stage};
use crate::cache::{export_cache, EmbeddingCache};
use crate::checkpoint;
use crate::config::RunConfig;
use crate::corpus::{batchify, build_vocab, read_text, Batch, Vocab};
use crate::embedder::{DefineUnit, ExpansionVariant};
use crate::error::{Error, Result};
use crate::lm::{evaluate, model_param_count, train, EmbedSource, EpochMetrics, LanguageModel, ModelConfig};
use crate::params::ParamStore;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CACHE_FILE: &str = "cache.defc";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MAPS_DIR: &str = "maps";

/// Tokenized training data.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub vocab: Vocab,
    pub train: Vec<usize>,
    pub valid: Option<Vec<usize>>,
}

impl Corpus {
    /// Builds the vocabulary from `train_text` only.
    pub fn from_text(train_text: &str, valid_text: Option<&str>, min_count: u64) -> Result<Self> {
        let vocab = build_vocab(train_text, min_count)?;
        let train = vocab.encode(train_text);
        let valid = valid_text.map(|t| vocab.encode(t));
        Ok(Corpus { vocab, train, valid })
    }

    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let train_path = cfg
            .data
            .train
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig(vec!["data.train must be set".into()]))?;
        let train_text = read_text(train_path)?;
        let valid_text = cfg.data.valid.as_ref().map(read_text).transpose()?;
        Corpus::from_text(&train_text, valid_text.as_deref(), cfg.data.min_count)
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.out
        .clone()
        .ok_or_else(|| Error::InvalidConfig(vec!["run.out must be set (or pass --out)".into()]))
}

/// `cfg` with `model.vocab_size` taken from `vocab`.
pub fn resolve(cfg: &RunConfig, vocab: &Vocab) -> RunConfig {
    let mut out = cfg.clone();
    out.model.define.vocab_size = vocab.len();
    out
}

/// The run-directory form of an epoch record: everything except the time.
pub fn metrics_line(m: &EpochMetrics) -> String {
    #[derive(Serialize)]
    struct Record {
        epoch: usize,
        train_ppl: f64,
        val_ppl: Option<f64>,
        lr: f64,
    }
    serde_json::to_string(&Record {
        epoch: m.epoch,
        train_ppl: m.train_ppl,
        val_ppl: m.val_ppl,
        lr: m.lr,
    })
    .expect("serializable")
}

/// The stdout form, including `seconds`.
pub fn metrics_line_timed(m: &EpochMetrics) -> String {
    serde_json::to_string(m).expect("serializable")
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: LanguageModel,
    pub vocab: Vocab,
    pub metrics: Vec<EpochMetrics>,
    pub dir: PathBuf,
}

/// Trains on `corpus` and fills the run directory.
pub fn train_corpus(
    cfg: &RunConfig,
    corpus: &Corpus,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    let cfg = resolve(cfg, &corpus.vocab);
    cfg.validate()?;
    let dir = out_dir(&cfg)?;
    let train_stream = batchify(&corpus.train, cfg.train.batch_size, cfg.train.bptt)?;
    let valid_stream = corpus
        .valid
        .as_ref()
        .map(|ids| batchify(ids, cfg.data.eval_batch_size, cfg.train.bptt))
        .transpose()?;

    std::fs::create_dir_all(dir.join(MAPS_DIR))?;
    cfg.save(dir.join(CONFIG_FILE))?;
    let mut model = LanguageModel::new(cfg.model.clone())?;
    let metrics = train(&mut model, &train_stream, valid_stream.as_ref(), &cfg.train, on_epoch)?;

    let mut lines = String::new();
    for m in &metrics {
        lines.push_str(&metrics_line(m));
        lines.push('\n');
    }
    std::fs::write(dir.join(METRICS_FILE), lines)?;
    checkpoint::save(dir.join(CHECKPOINT_FILE), &model, &corpus.vocab)?;
    export_cache(&model.unit, &model.store)?.save(dir.join(CACHE_FILE))?;
    for stage in analysis::stages(&model.unit) {
        write_corr_map(&model, stage, &dir.join(MAPS_DIR))?;
    }
    Ok(TrainOutcome {
        model,
        vocab: corpus.vocab.clone(),
        metrics,
        dir,
    })
}

pub fn train_run(cfg: &RunConfig, on_epoch: impl FnMut(&EpochMetrics)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let corpus = Corpus::load(cfg)?;
    train_corpus(cfg, &corpus, on_epoch)
}

/// Writes an untrained model (and its cache) for the configured corpus.
pub fn init_run(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let corpus = Corpus::load(cfg)?;
    let cfg = resolve(cfg, &corpus.vocab);
    cfg.validate()?;
    let dir = out_dir(&cfg)?;
    std::fs::create_dir_all(&dir)?;
    cfg.save(dir.join(CONFIG_FILE))?;
    let model = LanguageModel::new(cfg.model.clone())?;
    checkpoint::save(dir.join(CHECKPOINT_FILE), &model, &corpus.vocab)?;
    export_cache(&model.unit, &model.store)?.save(dir.join(CACHE_FILE))?;
    Ok(dir)
}

/// Perplexity of `model` on `text`. The batch size shrinks if the text is
/// too short to give every stream at least two tokens.
pub fn eval_text(
    model: &LanguageModel,
    vocab: &Vocab,
    text: &str,
    batch_size: usize,
    bptt: usize,
    cache: Option<&EmbeddingCache>,
) -> Result<f64> {
    let ids = vocab.encode(text);
    let b = batch_size.min(ids.len() / 2).max(1);
    let stream = batchify(&ids, b, bptt)?;
    let source = match cache {
        Some(c) => {
            if c.vocab_size() != model.vocab_size() || c.dim() != model.unit.output_dim() {
                return Err(Error::Contract(format!(
                    "cache is {}x{}, model expects {}x{}",
                    c.vocab_size(),
                    c.dim(),
                    model.vocab_size(),
                    model.unit.output_dim()
                )));
            }
            EmbedSource::Cache(c)
        }
        None => EmbedSource::Live,
    };
    evaluate(model, &stream, source)
}

pub fn export_cache_file(checkpoint_path: &Path, out: &Path) -> Result<EmbeddingCache> {
    let (model, _) = checkpoint::load(checkpoint_path)?;
    let cache = export_cache(&model.unit, &model.store)?;
    cache.save(out)?;
    Ok(cache)
}

/// Writes `<dir>/<stage>.csv` and `<dir>/<stage>.pgm`.
pub fn write_corr_map(model: &LanguageModel, stage: Stage, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let table = analysis::effective_embedding_table(&model.unit, &model.store, stage)?;
    let map = correlation_map(&table);
    std::fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{stage}.csv"));
    let pgm = dir.join(format!("{stage}.pgm"));
    std::fs::write(&csv, map.to_csv())?;
    std::fs::write(&pgm, map.to_pgm())?;
    Ok((csv, pgm))
}

/// Parameter distribution for each variant, one row per variant.
pub fn param_count_table(cfg: &ModelConfig, variants: &[ExpansionVariant]) -> Result<String> {
    let mut rows = Vec::with_capacity(variants.len());
    let mut problems = Vec::new();
    for &v in variants {
        let mut c = cfg.clone();
        c.define.variant = v;
        match model_param_count(&c) {
            Ok(p) => rows.push((v, p)),
            Err(Error::InvalidConfig(list)) => problems.extend(list.into_iter().map(|s| format!("{v}: {s}"))),
            Err(e) => problems.push(format!("{v}: {e}")),
        }
    }
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems));
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "variant", "map", "expansion", "reduce", "embedding", "context", "classifier", "total"
    );
    for (v, p) in rows {
        let _ = writeln!(
            out,
            "{:<16} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            v.name(),
            p.map,
            p.expansion,
            p.reduce,
            p.embedding,
            p.context,
            p.classifier,
            p.total
        );
    }
    Ok(out)
}

/// Fixed linear read-out used to reduce unit outputs to a scalar.
fn readout(rows: usize, cols: usize, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(vec![rows, cols], 1.0, &mut rng)
}

/// Gradient check of `unit` under the loss `Σ unit(ids) ⊙ R` for a fixed
/// random `R`.
pub fn grad_check_unit(
    unit: &DefineUnit,
    store: &mut ParamStore,
    ids: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let r = readout(ids.len(), unit.output_dim(), opts.seed ^ 0x5eed)?;
    analysis::grad_check(
        store,
        |tape: &mut Tape, bound| {
            let y = unit.forward_embed(tape, bound, ids)?;
            let rv = tape.leaf(&r);
            let prod = tape.mul(y, rv)?;
            Ok(tape.sum(prod))
        },
        opts,
    )
}

/// Gradient check of the language-model loss over one window.
pub fn grad_check_model(model: &LanguageModel, batch: &Batch, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut store = model.store.clone();
    let state = model.zero_state(batch.batch_size());
    analysis::grad_check(
        &mut store,
        |tape: &mut Tape, bound| {
            Ok(model
                .forward_window(tape, bound, batch, &state, EmbedSource::Live, None)?
                .loss)
        },
        opts,
    )
}

/// A random `B × T` window over `vocab_size` tokens.
pub fn random_batch(vocab_size: usize, batch_size: usize, bptt: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<Vec<usize>> {
        (0..batch_size)
            .map(|_| (0..bptt).map(|_| rng.gen_range(0..vocab_size)).collect())
            .collect()
    };
    let inputs = draw();
    let targets = draw();
    Batch { inputs, targets }
}

/// Half-width of the random test point used by [`grad_check_config`].
pub const TEST_POINT_BOUND: f64 = 0.5;

/// Redraws every parameter uniformly in `±bound`. At the default
/// initialization some gradients are around 1e-9, below what a central
/// difference with a 1e-5 step can resolve, so checks run at a random
/// point where every gradient is measurable.
pub fn randomize_params(store: &mut ParamStore, bound: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in store.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-bound..=bound));
    }
}

/// Checks the unit alone and the full model at the configured sizes, with
/// a `2 × 3` window, at a random test point seeded by `train.seed`. Large
/// models are sampled.
pub fn grad_check_config(cfg: &RunConfig, opts: &GradCheckOptions) -> Result<Vec<(String, GradCheckReport)>> {
    cfg.model.validate()?;
    let mut model = LanguageModel::new(cfg.model.clone())?;
    randomize_params(&mut model.store, TEST_POINT_BOUND, cfg.train.seed);
    let batch = random_batch(model.vocab_size(), 2, 3, cfg.train.seed);
    let ids = batch.inputs_time_major();
    let mut unit_store = model.store.clone();
    let unit = grad_check_unit(&model.unit, &mut unit_store, &ids, opts)?;
    let full = grad_check_model(&model, &batch, opts)?;
    Ok(vec![("unit".into(), unit), ("model".into(), full)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_lists_every_requested_variant() {
        let mut cfg = ModelConfig::default();
        cfg.define.vocab_size = 10;
        cfg.define.n = 4;
        cfg.define.k = 16;
        cfg.define.m = 4;
        cfg.define.depth = 2;
        cfg.define.g_max = 2;
        cfg.define.dims = Some(vec![4, 8, 16]);
        let table = param_count_table(&cfg, &[ExpansionVariant::Hgt, ExpansionVariant::Define]).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("HGT") && lines[1].split_whitespace().nth(4) == Some("248"));
        assert!(lines[2].starts_with("DEFINE") && lines[2].split_whitespace().nth(4) == Some("312"));
    }

    #[test]
    fn metrics_file_lines_have_no_time() {
        let m = EpochMetrics {
            epoch: 1,
            train_ppl: 3.5,
            val_ppl: None,
            lr: 1.0,
            seconds: 0.25,
        };
        assert_eq!(metrics_line(&m), r#"{"epoch":1,"train_ppl":3.5,"val_ppl":null,"lr":1.0}"#);
        assert!(metrics_line_timed(&m).contains("\"seconds\":0.25"));
    }

    #[test]
    fn tiny_model_gradients_agree_to_roundoff() {
        let mut cfg = RunConfig::default();
        let d = &mut cfg.model.define;
        d.vocab_size = 8;
        d.n = 4;
        d.k = 8;
        d.m = 4;
        d.depth = 2;
        d.g_max = 2;
        cfg.model.hidden = 8;
        let reports = grad_check_config(&cfg, &GradCheckOptions::default()).unwrap();
        let (unit, model) = (&reports[0].1, &reports[1].1);
        assert!(unit.passed() && unit.exhaustive, "{unit}");
        assert!(model.exhaustive);
        // Some LSTM gradients are far below the finite-difference resolution,
        // so relative error is not meaningful everywhere; the absolute gap
        // stays at loss roundoff (eps * |L| / h) for every coordinate.
        for e in &model.entries {
            assert!((e.analytic - e.numeric).abs() < 1e-9, "{e:?}");
        }
    }
}
