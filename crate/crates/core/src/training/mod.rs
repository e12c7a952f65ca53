//! Teacher-forced training with Adam, early stopping, checkpoints and
//! fine-tuning.

mod adam;
mod checkpoint;

pub use adam::{adam_step, Adam, AdamConfig};
pub use checkpoint::Checkpoint;

use std::io::{self, Write};
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::data::{DataError, Example, Vocabulary};
use crate::decoder::{decode_step, generate, initial_state, GenerateOptions};
use crate::encoder::{encode, InfoboxIds};
use crate::error::ModelError;
use crate::layers::load_pretrained;
use crate::metrics::{evaluate, EvalPair, MetricError, Scores};
use crate::model::{
    FieldRepr, GammaMode, GateMacroInput, GatingVariant, Model, ModelConfig, ModelVars,
};
use crate::params::ParamGrads;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("batch has no non-padding target tokens")]
    EmptyBatch,
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("non-finite gradient for `{0}`")]
    NonFiniteGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl TrainError {
    /// Numerical failures, as opposed to configuration or data problems.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::Diverged { .. }
                | TrainError::NonFiniteGradient(_)
                | TrainError::Model(ModelError::Autodiff(_))
        )
    }
}

/// Every tunable of training and generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub embed: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub top_k: usize,
    pub bifocal: bool,
    pub gating: bool,
    pub gating_variant: GatingVariant,
    pub gamma_mode: GammaMode,
    pub field_repr: FieldRepr,
    pub gate_macro_input: GateMacroInput,
    pub beam: usize,
    pub max_len: usize,
    pub copy: bool,
    pub embeddings: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 256,
            embed: 300,
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 20,
            patience: 5,
            batch_size: 32,
            seed: 0,
            clip_norm: 5.0,
            top_k: 20_000,
            bifocal: true,
            gating: true,
            gating_variant: GatingVariant::Gru,
            gamma_mode: GammaMode::StateDependent,
            field_repr: FieldRepr::Concat,
            gate_macro_input: GateMacroInput::Orthogonalized,
            beam: 1,
            max_len: crate::decoder::DEFAULT_MAX_LEN,
            copy: true,
            embeddings: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("hidden", self.hidden),
            ("embed", self.embed),
            ("epochs", self.epochs),
            ("patience", self.patience),
            ("batch_size", self.batch_size),
            ("beam", self.beam),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TrainError::Config(format!("{name} must be positive")));
            }
        }
        if self.top_k < Vocabulary::NUM_SPECIAL {
            return Err(TrainError::Config("top_k must be at least 4".into()));
        }
        if self.patience > self.epochs {
            return Err(TrainError::Config("patience exceeds max epochs".into()));
        }
        if !(self.lr > 0.0 && self.clip_norm > 0.0 && self.adam_eps > 0.0) {
            return Err(TrainError::Config(
                "lr, clip_norm and adam_eps must be positive".into(),
            ));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(TrainError::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Architecture for `vocab`. Gating needs macro attention, so disabling
    /// bifocal attention disables gating as well.
    pub fn model_config(&self, vocab: &Vocabulary) -> ModelConfig {
        let mut m = ModelConfig::new(vocab, self.embed, self.hidden);
        m.bifocal = self.bifocal;
        m.gating = self.gating && self.bifocal;
        m.gating_variant = self.gating_variant;
        m.gamma_mode = self.gamma_mode;
        m.field_repr = self.field_repr;
        m.gate_macro_input = self.gate_macro_input;
        m
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn generate_options(&self) -> GenerateOptions {
        GenerateOptions {
            beam: self.beam,
            max_len: self.max_len,
            copy: self.copy,
        }
    }
}

/// An example mapped to ids; the target ends with `</s>` and may carry
/// trailing `<pad>` entries, which are masked out of the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub ids: InfoboxIds,
    pub target: Vec<usize>,
}

pub fn prepare(examples: &[Example], vocab: &Vocabulary) -> Result<Vec<Prepared>, TrainError> {
    examples
        .iter()
        .map(|ex| {
            Ok(Prepared {
                ids: InfoboxIds::new(&ex.infobox, vocab)?,
                target: vocab.encode_target(&ex.description),
            })
        })
        .collect()
}

/// Summed negative log-likelihood of one target under teacher forcing, and
/// the number of scored tokens.
pub fn sequence_nll(
    tape: &mut Tape,
    vars: &ModelVars,
    cfg: &ModelConfig,
    ex: &Prepared,
) -> Result<(Option<Var>, usize), ModelError> {
    let enc = encode(tape, vars, cfg, &ex.ids)?;
    let mut state = initial_state(tape, vars, cfg, &enc)?;
    let mut picks = Vec::with_capacity(ex.target.len());
    for &y in &ex.target {
        let out = decode_step(tape, vars, cfg, &enc, &state)?;
        if y != Vocabulary::PAD {
            picks.push(tape.gather(out.logprobs, &[y])?);
        }
        state = out.state.advance(y);
    }
    if picks.is_empty() {
        return Ok((None, 0));
    }
    let all = tape.concat(&picks)?;
    let total = tape.sum(all);
    Ok((Some(tape.affine(total, -1.0, 0.0)), picks.len()))
}

fn batch_nll(
    tape: &mut Tape,
    vars: &ModelVars,
    cfg: &ModelConfig,
    batch: &[&Prepared],
) -> Result<(Option<Var>, usize), ModelError> {
    let mut total: Option<Var> = None;
    let mut tokens = 0;
    for ex in batch {
        let (nll, n) = sequence_nll(tape, vars, cfg, ex)?;
        tokens += n;
        if let Some(nll) = nll {
            total = Some(match total {
                None => nll,
                Some(t) => tape.add(t, nll)?,
            });
        }
    }
    Ok((total, tokens))
}

/// Mean per-token negative log-likelihood.
pub fn loss(model: &Model, batch: &[Prepared]) -> Result<f64, TrainError> {
    let (sum, tokens) = nll_sum(model, batch)?;
    if tokens == 0 {
        return Err(TrainError::EmptyBatch);
    }
    Ok(sum / tokens as f64)
}

/// Summed negative log-likelihood and token count over `examples`.
pub fn nll_sum(model: &Model, examples: &[Prepared]) -> Result<(f64, usize), TrainError> {
    let (mut sum, mut tokens) = (0.0, 0);
    for ex in examples {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false)?;
        let (nll, n) = sequence_nll(&mut tape, &vars, &model.config, ex)?;
        if let Some(v) = nll {
            sum += tape.value(v).item();
        }
        tokens += n;
    }
    Ok((sum, tokens))
}

/// Gradient of the mean per-token loss over `batch`; also returns the
/// summed loss and token count. The `<pad>` embedding rows get no gradient.
pub fn batch_gradients(
    model: &Model,
    batch: &[&Prepared],
) -> Result<(ParamGrads, f64, usize), TrainError> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true)?;
    let (total, tokens) = batch_nll(&mut tape, &vars, &model.config, batch)?;
    let total = total.ok_or(TrainError::EmptyBatch)?;
    let sum = tape.value(total).item();
    let mean = tape.affine(total, 1.0 / tokens as f64, 0.0);
    let mut grads = tape.backward(mean).map_err(ModelError::from)?;
    let mut pg = vars.bound.collect(&model.params, &mut grads);
    for name in ["embed.words", "embed.fields"] {
        if let Some(g) = pg.get_mut(name) {
            g.row_mut(Vocabulary::PAD).fill(0.0);
        }
    }
    Ok((pg, sum, tokens))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub seconds: f64,
}

/// TSV with header `epoch train_loss valid_loss seconds`.
pub fn write_epoch_log<W: Write>(mut w: W, log: &[EpochRecord]) -> io::Result<()> {
    writeln!(w, "epoch\ttrain_loss\tvalid_loss\tseconds")?;
    for r in log {
        writeln!(
            w,
            "{}\t{:.6}\t{:.6}\t{:.3}",
            r.epoch, r.train_loss, r.valid_loss, r.seconds
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a new best loss.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    bad: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            bad: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, loss: f64) -> Verdict {
        if self.best.is_none_or(|b| loss < b) {
            self.best = Some(loss);
            self.bad = 0;
            Verdict::Improved
        } else {
            self.bad += 1;
            if self.bad >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Continue
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Best checkpoint is written here after every improvement.
    pub checkpoint_path: Option<PathBuf>,
    /// Epoch log is rewritten here after every epoch.
    pub log_path: Option<PathBuf>,
    /// Record wall-clock seconds; when false the column is zero, which makes
    /// logs of identical runs byte-identical.
    pub timing: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Builds a vocabulary from `train` and trains a fresh model.
pub fn train(
    cfg: &TrainConfig,
    train: &[Example],
    valid: &[Example],
    opts: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    let vocab = Vocabulary::build(train, cfg.top_k);
    train_with_vocab(cfg, vocab, train, valid, opts)
}

/// Trains a fresh model over a given vocabulary.
pub fn train_with_vocab(
    cfg: &TrainConfig,
    vocab: Vocabulary,
    train: &[Example],
    valid: &[Example],
    opts: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut model = Model::new(cfg.model_config(&vocab), cfg.seed)?;
    if let Some(path) = &cfg.embeddings {
        let table = model
            .params
            .get_mut("embed.words")
            .ok_or_else(|| ModelError::MissingParam("embed.words".into()))?;
        let n = load_pretrained(path, &vocab, table)?;
        log::info!("loaded {n} pretrained embedding rows");
        model.zero_pad_rows();
    }
    fit(cfg, model, vocab, train, valid, opts)
}

/// Epoch loop with early stopping on validation loss.
pub fn fit(
    cfg: &TrainConfig,
    mut model: Model,
    vocab: Vocabulary,
    train: &[Example],
    valid: &[Example],
    opts: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if valid.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let train_set = prepare(train, &vocab)?;
    let valid_set = prepare(valid, &vocab)?;
    let mut adam = Adam::new(&model.params, cfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best = Checkpoint {
        config: cfg.clone(),
        model: model.clone(),
        vocab: vocab.clone(),
        epoch: 0,
        best_valid_loss: None,
    };
    let mut log = Vec::new();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut sum, mut tokens) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (mut grads, s, n) = match batch_gradients(&model, &batch) {
                Err(TrainError::EmptyBatch) => continue,
                other => other?,
            };
            if !s.is_finite() {
                return Err(TrainError::Diverged { epoch, loss: s });
            }
            let norm = grads.global_norm();
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            adam.step(&mut model.params, &grads)?;
            sum += s;
            tokens += n;
        }
        if tokens == 0 {
            return Err(TrainError::EmptyBatch);
        }
        let train_loss = sum / tokens as f64;
        let valid_loss = loss(&model, &valid_set)?;
        if !valid_loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                loss: valid_loss,
            });
        }
        let seconds = if opts.timing {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        log.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
            seconds,
        });
        log::info!("epoch {epoch}: train {train_loss:.4} valid {valid_loss:.4} ({seconds:.1}s)");
        if let Some(path) = &opts.log_path {
            let f = std::fs::File::create(path).map_err(|e| TrainError::Io(e.to_string()))?;
            write_epoch_log(io::BufWriter::new(f), &log)
                .map_err(|e| TrainError::Io(e.to_string()))?;
        }

        match stopper.observe(valid_loss) {
            Verdict::Improved => {
                best.model = model.clone();
                best.epoch = epoch;
                best.best_valid_loss = Some(valid_loss);
                if let Some(path) = &opts.checkpoint_path {
                    best.save(path)?;
                }
            }
            Verdict::Continue => {}
            Verdict::Stop => {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        checkpoint: best,
        log,
        stopped_early,
    })
}

/// Continues training `ckpt` on new data with fresh Adam moments.
///
/// Architecture comes from the checkpoint; `cfg` supplies the optimization
/// settings and must agree on `hidden` and `embed`. With `extend_vocab`,
/// unseen words and field names get new randomly initialized rows; otherwise
/// they map to `<unk>`. An empty `train` returns the checkpoint unchanged.
pub fn fine_tune(
    ckpt: &Checkpoint,
    cfg: &TrainConfig,
    train: &[Example],
    valid: &[Example],
    extend_vocab: bool,
    opts: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    let mc = &ckpt.model.config;
    if cfg.hidden != mc.hidden || cfg.embed != mc.embed {
        return Err(TrainError::Incompatible(format!(
            "checkpoint has hidden {} / embed {}, configuration asks for {} / {}",
            mc.hidden, mc.embed, cfg.hidden, cfg.embed
        )));
    }
    if train.is_empty() {
        log::warn!("fine-tuning stream is empty; checkpoint unchanged");
        return Ok(TrainOutcome {
            checkpoint: ckpt.clone(),
            log: Vec::new(),
            stopped_early: false,
        });
    }
    let mut cfg = cfg.clone();
    cfg.bifocal = mc.bifocal;
    cfg.gating = mc.gating;
    cfg.gating_variant = mc.gating_variant;
    cfg.gamma_mode = mc.gamma_mode;
    cfg.field_repr = mc.field_repr;
    cfg.gate_macro_input = mc.gate_macro_input;

    let mut vocab = ckpt.vocab.clone();
    let mut model = ckpt.model.clone();
    if extend_vocab {
        let (nw, nf) = vocab.extend(train);
        model.extend_vocab(nw, nf, cfg.seed);
        log::info!("vocabulary extended by {nw} words and {nf} fields");
    }
    let mut out = fit(&cfg, model, vocab, train, valid, opts)?;
    out.checkpoint.config = cfg;
    Ok(out)
}

/// Generates for every example and scores against its description.
pub fn evaluate_model(
    model: &Model,
    vocab: &Vocabulary,
    examples: &[Example],
    opts: &GenerateOptions,
) -> Result<(Scores, Vec<Vec<String>>), TrainError> {
    let mut outputs = Vec::with_capacity(examples.len());
    let mut pairs = Vec::with_capacity(examples.len());
    for ex in examples {
        let g = generate(model, vocab, &ex.infobox, opts)?;
        pairs.push(EvalPair::new(g.words.clone(), vec![ex.description.clone()]));
        outputs.push(g.words);
    }
    Ok((evaluate(&pairs)?, outputs))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelGradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares the analytic gradient of the mean per-token loss on `ex` with
/// central differences at `coords` random parameter coordinates (a random
/// tensor, then a random entry of it).
pub fn gradcheck_model(
    model: &Model,
    ex: &Prepared,
    coords: usize,
    eps: f64,
    seed: u64,
) -> Result<ModelGradCheck, TrainError> {
    let (grads, _, _) = batch_gradients(model, &[ex])?;
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let single = std::slice::from_ref(ex);
    for _ in 0..coords {
        let name = &names[rng.gen_range(0..names.len())];
        let len = model.params.get(name).expect("listed").len();
        let i = rng.gen_range(0..len);
        let mut probe = model.clone();
        let orig = probe.params.get(name).expect("listed").data()[i];
        probe.params.get_mut(name).expect("listed").data_mut()[i] = orig + eps;
        let up = loss(&probe, single)?;
        probe.params.get_mut(name).expect("listed").data_mut()[i] = orig - eps;
        let down = loss(&probe, single)?;
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grads.get(name).expect("same names").data()[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(ModelGradCheck {
        max_rel_error: worst,
        checked: coords,
    })
}
