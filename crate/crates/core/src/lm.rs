//! Desk-scale LSTM language model on top of a factorized embedding unit.
//!
//! The classifier is tied to the unit's map table: hidden states are
//! projected to the map width `n` and scored against every map row, so the
//! output layer owns only the `h × n` projection.

use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::EmbeddingCache;
use crate::corpus::{Batch, BatchStream};
use crate::embedder::{define_param_count, DefineConfig, DefineUnit};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub define: DefineConfig,
    pub hidden: usize,
    pub lstm_layers: usize,
    /// Start with an all-zero output projection (uniform predictions).
    pub zero_projection: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            define: DefineConfig::default(),
            hidden: 128,
            lstm_layers: 1,
            zero_projection: false,
        }
    }
}

impl ModelConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.define.violations();
        if self.hidden == 0 {
            out.push("model.hidden must be >= 1".into());
        }
        if self.lstm_layers == 0 {
            out.push("model.lstm_layers must be >= 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

/// Parameter distribution of a full model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelParams {
    pub map: usize,
    pub expansion: usize,
    pub reduce: usize,
    /// Sum of the three above.
    pub embedding: usize,
    /// LSTM weights and biases.
    pub context: usize,
    /// Output projection `h × n`; the `V × n` scoring matrix is the map table.
    pub classifier: usize,
    pub total: usize,
}

/// Closed-form counts for `cfg`.
pub fn model_param_count(cfg: &ModelConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let unit = define_param_count(&cfg.define)?;
    let h = cfg.hidden;
    let context: usize = (0..cfg.lstm_layers)
        .map(|l| {
            let input = if l == 0 { cfg.define.output_dim() } else { h };
            4 * (input * h + h * h + h)
        })
        .sum();
    let classifier = h * cfg.define.n;
    Ok(ModelParams {
        map: unit.map,
        expansion: unit.expansion,
        reduce: unit.reduce,
        embedding: unit.total,
        context,
        classifier,
        total: unit.total + context + classifier,
    })
}

/// Output-layer weights an untied `h → V` classifier would need.
pub fn untied_classifier_params(vocab_size: usize, hidden: usize) -> usize {
    hidden * vocab_size
}

/// One LSTM layer; gates are packed `[input, forget, cell, output]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `[input_dim × 4h]`
    pub w_x: ParamId,
    /// `[h × 4h]`
    pub w_h: ParamId,
    /// `[4h]`, forget block initialised to 1.
    pub bias: ParamId,
}

impl LstmLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let h = hidden_dim;
        let bound = 1.0 / (h as f64).sqrt();
        let w_x = store.add(
            format!("{name}.w_x"),
            Tensor::uniform(vec![input_dim, 4 * h], bound, rng)?,
        );
        let w_h = store.add(
            format!("{name}.w_h"),
            Tensor::uniform(vec![h, 4 * h], bound, rng)?,
        );
        let mut b = vec![0.0; 4 * h];
        b[h..2 * h].fill(1.0);
        let bias = store.add(format!("{name}.b"), Tensor::vector(b));
        Ok(LstmLayer {
            input_dim,
            hidden_dim,
            w_x,
            w_h,
            bias,
        })
    }

    pub fn param_count(&self) -> usize {
        let (m, h) = (self.input_dim, self.hidden_dim);
        4 * (m * h + h * h + h)
    }

    /// `c_t = f⊙c + i⊙g`, `h_t = o⊙tanh(c_t)`.
    pub fn step(
        &self,
        tape: &mut Tape,
        bound: &Bindings,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let xw = tape.matmul(x, bound.var(self.w_x))?;
        let hw = tape.matmul(h, bound.var(self.w_h))?;
        let pre = tape.add(xw, hw)?;
        let pre = tape.add_row(pre, bound.var(self.bias))?;
        let gates = tape.split(pre, 4)?;
        let i = tape.sigmoid(gates[0]);
        let f = tape.sigmoid(gates[1]);
        let g = tape.tanh(gates[2]);
        let o = tape.sigmoid(gates[3]);
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        let c_next = tape.add(keep, write)?;
        let squashed = tape.tanh(c_next);
        let h_next = tape.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}

/// Recurrent state carried between windows, one `[B×h]` pair per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl LstmState {
    pub fn zeros(layers: usize, batch: usize, hidden: usize) -> Self {
        LstmState {
            h: vec![vec![0.0; batch * hidden]; layers],
            c: vec![vec![0.0; batch * hidden]; layers],
        }
    }
}

/// Where input embeddings come from.
#[derive(Clone, Copy, Debug)]
pub enum EmbedSource<'a> {
    /// Run the unit.
    Live,
    /// Look rows up in an exported cache.
    Cache(&'a EmbeddingCache),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub unit: DefineUnit,
    pub lstm: Vec<LstmLayer>,
    /// `[h × n]`
    pub projection: ParamId,
}

/// Output of one forward window.
pub struct WindowOutput {
    pub loss: Var,
    pub targets: usize,
    pub state: LstmState,
}

impl LanguageModel {
    /// Allocates every parameter from `config.define.seed`, in the order
    /// map, expansion, reduce, LSTM layers, projection.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.define.seed);
        let mut store = ParamStore::new();
        let unit = DefineUnit::new(config.define.clone(), &mut store, &mut rng)?;
        let h = config.hidden;
        let lstm = (0..config.lstm_layers)
            .map(|l| {
                let input = if l == 0 { unit.output_dim() } else { h };
                LstmLayer::new(&mut store, &format!("lstm{l}"), input, h, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let bound = if config.zero_projection {
            0.0
        } else {
            1.0 / (h as f64).sqrt()
        };
        let projection = store.add(
            "projection",
            Tensor::uniform(vec![h, config.define.n], bound, &mut rng)?,
        );
        Ok(LanguageModel {
            config,
            store,
            unit,
            lstm,
            projection,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.config.define.vocab_size
    }

    pub fn param_counts(&self) -> ModelParams {
        let unit = self.unit.allocated(&self.store);
        let context = self
            .lstm
            .iter()
            .flat_map(|l| [l.w_x, l.w_h, l.bias])
            .map(|id| self.store.get(id).len())
            .sum();
        let classifier = self.store.get(self.projection).len();
        ModelParams {
            map: unit.map,
            expansion: unit.expansion,
            reduce: unit.reduce,
            embedding: unit.total,
            context,
            classifier,
            total: unit.total + context + classifier,
        }
    }

    pub fn zero_state(&self, batch: usize) -> LstmState {
        LstmState::zeros(self.lstm.len(), batch, self.config.hidden)
    }

    /// Tied logits `(h · P) · mapᵀ` for hidden states `[R×h]`.
    pub fn logits(&self, tape: &mut Tape, bound: &Bindings, hidden: Var) -> Result<Var> {
        let projected = tape.matmul(hidden, bound.var(self.projection))?;
        tape.matmul_bt(projected, bound.var(self.unit.map_table))
    }

    /// Mean next-token loss of one window, starting from `state`.
    pub fn forward_window(
        &self,
        tape: &mut Tape,
        bound: &Bindings,
        batch: &Batch,
        state: &LstmState,
        source: EmbedSource<'_>,
        dropout: Option<(&mut ChaCha8Rng, f64)>,
    ) -> Result<WindowOutput> {
        let b = batch.batch_size();
        let steps = batch.len();
        let h = self.config.hidden;
        let ids = batch.inputs_time_major();
        let mut emb = match source {
            EmbedSource::Live => self.unit.forward_embed(tape, bound, &ids)?,
            EmbedSource::Cache(cache) => {
                let t = cache.cached_embed(&ids)?;
                tape.leaf(&t)
            }
        };
        let mut dropout = dropout.filter(|(_, p)| *p > 0.0);
        if let Some((rng, p)) = dropout.as_mut() {
            emb = apply_dropout(tape, emb, rng, *p)?;
        }

        let mut hs = Vec::with_capacity(self.lstm.len());
        let mut cs = Vec::with_capacity(self.lstm.len());
        for l in 0..self.lstm.len() {
            hs.push(tape.constant(vec![b, h], state.h[l].clone())?);
            cs.push(tape.constant(vec![b, h], state.c[l].clone())?);
        }
        let mut tops = Vec::with_capacity(steps);
        for t in 0..steps {
            let rows: Vec<usize> = (t * b..(t + 1) * b).collect();
            let mut x = tape.embedding_lookup(emb, &rows)?;
            for (l, layer) in self.lstm.iter().enumerate() {
                let (hn, cn) = layer.step(tape, bound, x, hs[l], cs[l])?;
                hs[l] = hn;
                cs[l] = cn;
                x = hn;
            }
            tops.push(x);
        }
        let mut hidden = tape.concat_rows(&tops)?;
        if let Some((rng, p)) = dropout.as_mut() {
            hidden = apply_dropout(tape, hidden, rng, *p)?;
        }
        let logits = self.logits(tape, bound, hidden)?;
        let targets = batch.targets_time_major();
        let loss = tape.softmax_cross_entropy(logits, &targets)?;
        let state = LstmState {
            h: hs.iter().map(|&v| tape.value(v).to_vec()).collect(),
            c: cs.iter().map(|&v| tape.value(v).to_vec()).collect(),
        };
        Ok(WindowOutput {
            loss,
            targets: targets.len(),
            state,
        })
    }

    /// Scalar loss of one window from a zero state, with gradients
    /// accumulated into the store. Used by gradient checks.
    pub fn loss_and_grads(&mut self, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let state = self.zero_state(batch.batch_size());
        let out = self.forward_window(&mut tape, &bound, batch, &state, EmbedSource::Live, None)?;
        tape.backward(out.loss)?;
        self.store.accumulate_grads(&tape, &bound);
        Ok(tape.scalar(out.loss))
    }

    /// Scalar loss of one window from a zero state, no gradients.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let state = self.zero_state(batch.batch_size());
        let out = self.forward_window(&mut tape, &bound, batch, &state, EmbedSource::Live, None)?;
        Ok(tape.scalar(out.loss))
    }
}

fn apply_dropout(tape: &mut Tape, x: Var, rng: &mut ChaCha8Rng, p: f64) -> Result<Var> {
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..tape.value(x).len())
        .map(|_| if rng.gen_bool(p) { 0.0 } else { keep })
        .collect();
    let m = tape.constant(tape.shape(x).to_vec(), mask)?;
    tape.mul(x, m)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
    SgdMomentum,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "sgd_momentum" | "sgd+momentum" => Ok(Optimizer::SgdMomentum),
            _ => Err(Error::Contract(format!("unknown optimizer {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Global gradient-norm clip.
    pub clip: f64,
    pub batch_size: usize,
    pub bptt: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub dropout: f64,
    /// Learning rate multiplier applied after an epoch whose validation
    /// perplexity did not improve. 1 disables it.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            lr: 1.0,
            clip: 0.25,
            batch_size: 16,
            bptt: 35,
            seed: 0,
            optimizer: Optimizer::Sgd,
            momentum: 0.9,
            dropout: 0.0,
            lr_decay: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("train.epochs", self.epochs),
            ("train.batch_size", self.batch_size),
            ("train.bptt", self.bptt),
        ] {
            if v == 0 {
                out.push(format!("{name} must be >= 1"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            out.push(format!("train.lr must be positive, got {}", self.lr));
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            out.push(format!("train.clip must be positive, got {}", self.clip));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            out.push(format!("train.momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            out.push(format!("train.dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            out.push(format!("train.lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        out
    }
}

/// One line of training metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_ppl: f64,
    pub val_ppl: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

/// Perplexity of `model` over `stream`; the state is carried across windows
/// and starts at zero. Does not touch the model.
pub fn evaluate(model: &LanguageModel, stream: &BatchStream, source: EmbedSource<'_>) -> Result<f64> {
    let mut state = model.zero_state(stream.batch_size());
    let mut nll = 0.0;
    let mut count = 0usize;
    for batch in stream.batches() {
        let mut tape = Tape::new();
        let bound = model.store.bind_frozen(&mut tape);
        let out = model.forward_window(&mut tape, &bound, &batch, &state, source, None)?;
        nll += tape.scalar(out.loss) * out.targets as f64;
        count += out.targets;
        state = out.state;
    }
    Ok((nll / count as f64).exp())
}

/// Global L2 norm of every parameter gradient.
pub fn grad_norm(store: &ParamStore) -> f64 {
    store
        .tensors()
        .iter()
        .filter_map(Tensor::grad)
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

struct Sgd {
    lr: f64,
    momentum: Option<f64>,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    fn step(&mut self, store: &mut ParamStore) {
        if self.velocity.is_empty() && self.momentum.is_some() {
            self.velocity = store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        }
        for (i, t) in store.tensors_mut().iter_mut().enumerate() {
            let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            match self.momentum {
                None => {
                    for (w, gi) in t.data_mut().iter_mut().zip(&g) {
                        *w -= self.lr * gi;
                    }
                }
                Some(mu) => {
                    let v = &mut self.velocity[i];
                    for ((w, gi), vi) in t.data_mut().iter_mut().zip(&g).zip(v.iter_mut()) {
                        *vi = mu * *vi + gi;
                        *w -= self.lr * *vi;
                    }
                }
            }
        }
    }
}

/// Truncated-BPTT training. The recurrent state is detached between
/// windows, gradients are clipped to `cfg.clip` in global norm, and
/// `on_epoch` sees every epoch's metrics as they are produced.
pub fn train(
    model: &mut LanguageModel,
    train_stream: &BatchStream,
    valid_stream: Option<&BatchStream>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    let problems = cfg.violations();
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd {
        lr: cfg.lr,
        momentum: (cfg.optimizer == Optimizer::SgdMomentum).then_some(cfg.momentum),
        velocity: Vec::new(),
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::INFINITY;
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut state = model.zero_state(train_stream.batch_size());
        let (mut nll, mut count) = (0.0, 0usize);
        for batch in train_stream.batches() {
            step += 1;
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape);
            let out = model.forward_window(
                &mut tape,
                &bound,
                &batch,
                &state,
                EmbedSource::Live,
                Some((&mut rng, cfg.dropout)),
            )?;
            let loss = tape.scalar(out.loss);
            if !loss.is_finite() {
                return Err(Error::NonFinite { step, lr: opt.lr });
            }
            tape.backward(out.loss)?;
            model.store.zero_grads();
            model.store.accumulate_grads(&tape, &bound);
            let norm = grad_norm(&model.store);
            if norm > cfg.clip {
                let scale = cfg.clip / norm;
                for t in model.store.tensors_mut() {
                    if let Some(g) = t.grad_mut() {
                        g.iter_mut().for_each(|x| *x *= scale);
                    }
                }
            }
            opt.step(&mut model.store);
            nll += loss * out.targets as f64;
            count += out.targets;
            state = out.state;
        }
        model.store.zero_grads();
        let val_ppl = valid_stream
            .map(|v| evaluate(model, v, EmbedSource::Live))
            .transpose()?;
        let metrics = EpochMetrics {
            epoch,
            train_ppl: (nll / count as f64).exp(),
            val_ppl,
            lr: opt.lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&metrics);
        history.push(metrics);
        if let Some(v) = val_ppl {
            if v >= best_val {
                opt.lr *= cfg.lr_decay;
            }
            best_val = best_val.min(v);
        }
    }
    Ok(history)
}
