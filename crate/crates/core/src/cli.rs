//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure. Diagnostics go to standard error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::data::{
    import_wikibio, parse_examples, parse_infoboxes, parse_line, split_examples, synth_generate,
    write_examples, DataError, DomainMix, NameStyle, SynthConfig,
};
use crate::decoder::{
    argmax_fields, beta_matrix, field_mass_matrix, generate, stay_on_stats, write_pgm,
    write_trace_tsv, GenerateOptions, StayOnStats,
};
use crate::metrics::{evaluate, rouge4_detailed, EvalPair, MetricError};
use crate::model::{FieldRepr, GammaMode, GateMacroInput, GatingVariant};
use crate::training::{
    fine_tune, train, write_epoch_log, Checkpoint, TrainConfig, TrainError, TrainOptions,
};
use crate::ModelError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Train(TrainError::Config(_)) => 1,
            CliError::Train(e) if e.is_numeric() => 3,
            CliError::Model(ModelError::Autodiff(_)) => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Parser, Debug)]
#[command(name = "bifocal", version, about = "Infobox-to-description generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes the best checkpoint and an epoch log.
    Train(TrainCmd),
    /// Describe every infobox of an input file, one line each.
    Generate(GenerateCmd),
    /// Score hypotheses against references (BLEU-4, NIST-4, ROUGE-4).
    Evaluate(EvaluateCmd),
    /// Convert WikiBio `.box` and sentence files to the canonical format.
    ImportWikibio(ImportCmd),
    /// Write a synthetic dataset.
    Synth(SynthCmd),
    /// Dump per-step attention traces and stay-on statistics.
    InspectAttention(InspectCmd),
    /// Continue training a checkpoint on new data.
    Finetune(FinetuneCmd),
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unrecognized value `{s}`"))
}

/// Flags that mirror [`TrainConfig`]; unset flags keep the config file's
/// value, or the default.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    /// TOML file with any TrainConfig field.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, value_parser = parse_enum::<GatingVariant>, value_name = "prev|gru")]
    gating_variant: Option<GatingVariant>,
    #[arg(long, value_parser = parse_enum::<GammaMode>, value_name = "state_dependent|constant")]
    gamma_mode: Option<GammaMode>,
    #[arg(long, value_parser = parse_enum::<FieldRepr>, value_name = "concat|name_only|values_only")]
    field_repr: Option<FieldRepr>,
    #[arg(long, value_parser = parse_enum::<GateMacroInput>, value_name = "orthogonalized|raw")]
    gate_macro_input: Option<GateMacroInput>,
    /// Basic sequence-to-sequence model: no field-level attention, no gating.
    #[arg(long)]
    ablate_bifocal: bool,
    /// Keep fused attention, drop the gated orthogonalization.
    #[arg(long)]
    ablate_gating: bool,
    /// Pretrained word vectors, one `word v1 v2 ...` per line.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    gen: GenFlags,
}

#[derive(Args, Debug, Default)]
struct GenFlags {
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Leave `<unk>` tokens in the output.
    #[arg(long)]
    no_copy: bool,
}

impl GenFlags {
    fn apply(&self, opts: &mut GenerateOptions) {
        if let Some(b) = self.beam {
            opts.beam = b;
        }
        if let Some(m) = self.max_len {
            opts.max_len = m;
        }
        if self.no_copy {
            opts.copy = false;
        }
    }
}

impl ConfigFlags {
    fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(io_err(path))?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f.clone() { cfg.$f = v; })*};
        }
        set!(
            hidden,
            embed,
            lr,
            beta1,
            beta2,
            adam_eps,
            epochs,
            patience,
            batch_size,
            seed,
            clip_norm,
            top_k,
            gating_variant,
            gamma_mode,
            field_repr,
            gate_macro_input
        );
        if self.embeddings.is_some() {
            cfg.embeddings = self.embeddings.clone();
        }
        if self.ablate_bifocal {
            cfg.bifocal = false;
            cfg.gating = false;
        }
        if self.ablate_gating {
            cfg.gating = false;
        }
        let mut gen = cfg.generate_options();
        self.gen.apply(&mut gen);
        cfg.beam = gen.beam;
        cfg.max_len = gen.max_len;
        cfg.copy = gen.copy;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainCmd {
    /// Canonical training file. Without --valid it is split 80/10/10 and
    /// the train and valid parts are used.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long, short)]
    out: PathBuf,
    /// Epoch log (TSV).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Record wall-clock seconds in the log.
    #[arg(long)]
    timing: bool,
    /// Abort on the first malformed line.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args, Debug)]
struct FinetuneCmd {
    /// Checkpoint to start from.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
    /// Add unseen words and field names to the vocabulary.
    #[arg(long)]
    extend_vocab: bool,
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args, Debug)]
struct GenerateCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Infoboxes, one per line; a trailing description is ignored.
    #[arg(long)]
    input: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    gen: GenFlags,
}

#[derive(Args, Debug)]
struct EvaluateCmd {
    /// Generated descriptions, one per line.
    #[arg(long)]
    hyp: PathBuf,
    /// References: plain lines or canonical example lines.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Report ROUGE-4 as F1 instead of recall.
    #[arg(long)]
    rouge_f1: bool,
}

#[derive(Args, Debug)]
struct ImportCmd {
    #[arg(long = "box")]
    box_file: PathBuf,
    /// Sentence file (all sentences, or first sentences when --nb is absent).
    #[arg(long)]
    sent: PathBuf,
    /// Per-article sentence counts.
    #[arg(long)]
    nb: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthCmd {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, value_parser = parse_enum::<DomainMix>, default_value = "mixed", value_name = "sports|arts|mixed")]
    domain: DomainMix,
    #[arg(long, default_value_t = 3)]
    distractors: usize,
    #[arg(long, default_value_t = 3)]
    max_occupations: usize,
    /// Draw names from the held-out syllable set.
    #[arg(long)]
    heldout_names: bool,
    /// Keep field order fixed.
    #[arg(long)]
    no_shuffle: bool,
    /// Birth years span 1940 to 1940 + this.
    #[arg(long, default_value_t = 50)]
    year_span: usize,
    /// Draw names from a fixed pool of this many tokens.
    #[arg(long)]
    name_pool: Option<usize>,
    /// With a name pool, chance of a fresh name token instead.
    #[arg(long, default_value_t = 0.0)]
    rare_name_rate: f64,
    /// Also write `<out>.train`, `<out>.valid` and `<out>.test`.
    #[arg(long)]
    split: bool,
}

#[derive(Args, Debug)]
struct InspectCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Directory for `trace_<i>.tsv`, `heatmap_<i>.pgm` and `stats.tsv`.
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write PGM heatmaps of the macro weights.
    #[arg(long)]
    heatmaps: bool,
    /// Inspect at most this many examples.
    #[arg(long)]
    limit: Option<usize>,
    #[command(flatten)]
    gen: GenFlags,
}

/// Parses `argv` (program name first) and runs one subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train(c) => cmd_train(c),
        Command::Finetune(c) => cmd_finetune(c),
        Command::Generate(c) => cmd_generate(c),
        Command::Evaluate(c) => cmd_evaluate(c),
        Command::ImportWikibio(c) => cmd_import(c),
        Command::Synth(c) => cmd_synth(c),
        Command::InspectAttention(c) => cmd_inspect(c),
    }
}

fn load_splits(
    train: &Path,
    valid: Option<&Path>,
    strict: bool,
) -> Result<(Vec<crate::data::Example>, Vec<crate::data::Example>), CliError> {
    let all = parse_examples(train, strict)?;
    Ok(match valid {
        Some(v) => (all, parse_examples(v, strict)?),
        None => {
            let (tr, va, _) = split_examples(all);
            (tr, va)
        }
    })
}

fn train_options(out: &Path, log: Option<&PathBuf>, timing: bool) -> TrainOptions {
    TrainOptions {
        checkpoint_path: Some(out.to_path_buf()),
        log_path: log.cloned(),
        timing,
    }
}

fn report(outcome: &crate::training::TrainOutcome, out: &Path) -> Result<(), CliError> {
    let ck = &outcome.checkpoint;
    // Written even when no epoch improved, so the output always exists.
    ck.save(out)?;
    let mut stdout = io::stdout().lock();
    write_epoch_log(&mut stdout, &outcome.log).map_err(io_err(Path::new("<stdout>")))?;
    eprintln!(
        "best epoch {} (valid loss {}){}; checkpoint {}",
        ck.epoch,
        ck.best_valid_loss.map_or("-".into(), |l| format!("{l:.4}")),
        if outcome.stopped_early {
            ", stopped early"
        } else {
            ""
        },
        out.display()
    );
    Ok(())
}

fn cmd_train(c: TrainCmd) -> Result<(), CliError> {
    let cfg = c.flags.resolve()?;
    let (tr, va) = load_splits(&c.train, c.valid.as_deref(), c.strict)?;
    let outcome = train(
        &cfg,
        &tr,
        &va,
        &train_options(&c.out, c.log.as_ref(), c.timing),
    )?;
    report(&outcome, &c.out)
}

fn cmd_finetune(c: FinetuneCmd) -> Result<(), CliError> {
    let ck = Checkpoint::load(&c.checkpoint)?;
    let mut cfg = c.flags.resolve()?;
    // Architecture sizes come from the checkpoint unless given explicitly.
    if c.flags.hidden.is_none() {
        cfg.hidden = ck.model.config.hidden;
    }
    if c.flags.embed.is_none() {
        cfg.embed = ck.model.config.embed;
    }
    let (tr, va) = load_splits(&c.train, c.valid.as_deref(), c.strict)?;
    let opts = train_options(&c.out, c.log.as_ref(), c.timing);
    let outcome = fine_tune(&ck, &cfg, &tr, &va, c.extend_vocab, &opts)?;
    report(&outcome, &c.out)
}

fn cmd_generate(c: GenerateCmd) -> Result<(), CliError> {
    let ck = Checkpoint::load(&c.checkpoint)?;
    let mut opts = ck.config.generate_options();
    c.gen.apply(&mut opts);
    let boxes = parse_infoboxes(&c.input)?;
    let mut w: Box<dyn Write> = match &c.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_err(p))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let out_name = c.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    for ib in &boxes {
        let g = generate(&ck.model, &ck.vocab, ib, &opts)?;
        writeln!(w, "{}", g.words.join(" ")).map_err(io_err(&out_name))?;
    }
    w.flush().map_err(io_err(&out_name))
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let f = File::open(path).map_err(io_err(path))?;
    BufReader::new(f)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(path))
}

fn reference_tokens(line: &str, lineno: usize) -> Result<Vec<String>, CliError> {
    if line.contains(crate::data::DESCRIPTION_MARKER) && line.contains('\t') {
        let ex = parse_line(line).map_err(|reason| DataError::Malformed {
            line: lineno,
            reason,
        })?;
        Ok(ex.description)
    } else {
        Ok(line.split_whitespace().map(str::to_lowercase).collect())
    }
}

fn cmd_evaluate(c: EvaluateCmd) -> Result<(), CliError> {
    let hyps = read_lines(&c.hyp)?;
    let refs: Vec<String> = read_lines(&c.reference)?
        .into_iter()
        .filter(|l| !l.trim().is_empty())
        .collect();
    if hyps.len() != refs.len() {
        return Err(DataError::Misaligned(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        ))
        .into());
    }
    let mut pairs = Vec::with_capacity(hyps.len());
    for (i, (h, r)) in hyps.iter().zip(&refs).enumerate() {
        let hyp = h.split_whitespace().map(str::to_lowercase).collect();
        pairs.push(EvalPair::new(hyp, vec![reference_tokens(r, i + 1)?]));
    }
    let mut scores = evaluate(&pairs)?;
    if c.rouge_f1 {
        scores.rouge = match rouge4_detailed(&pairs, true) {
            Ok(r) => r.score,
            Err(MetricError::NoScorableReferences) => 0.0,
            Err(e) => return Err(e.into()),
        };
    }
    println!("{scores}");
    Ok(())
}

fn cmd_import(c: ImportCmd) -> Result<(), CliError> {
    let r = import_wikibio(&c.box_file, &c.sent, c.nb.as_deref(), &c.out)?;
    eprintln!(
        "imported {} examples ({} skipped, {} warnings) to {}",
        r.examples,
        r.skipped,
        r.warnings.len(),
        c.out.display()
    );
    Ok(())
}

fn cmd_synth(c: SynthCmd) -> Result<(), CliError> {
    if c.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    if c.distractors > 6 {
        return Err(CliError::Usage("--distractors is at most 6".into()));
    }
    if c.max_occupations == 0 {
        return Err(CliError::Usage("--max-occupations must be positive".into()));
    }
    let cfg = SynthConfig {
        domain: c.domain,
        distractor_fields: c.distractors,
        max_occupations: c.max_occupations,
        name_style: if c.heldout_names {
            NameStyle::Heldout
        } else {
            NameStyle::Common
        },
        shuffle_fields: !c.no_shuffle,
        year_span: c.year_span,
        name_pool: c.name_pool,
        rare_name_rate: c.rare_name_rate,
    };
    let examples = synth_generate(c.seed, c.n, &cfg);
    write_examples(&c.out, &examples)?;
    if c.split {
        let (tr, va, te) = split_examples(examples);
        for (suffix, part) in [("train", tr), ("valid", va), ("test", te)] {
            let mut p = c.out.clone().into_os_string();
            p.push(format!(".{suffix}"));
            write_examples(Path::new(&p), &part)?;
        }
    }
    Ok(())
}

fn cmd_inspect(c: InspectCmd) -> Result<(), CliError> {
    let ck = Checkpoint::load(&c.checkpoint)?;
    let mut opts = ck.config.generate_options();
    c.gen.apply(&mut opts);
    let mut boxes = parse_infoboxes(&c.input)?;
    if let Some(n) = c.limit {
        boxes.truncate(n);
    }
    fs::create_dir_all(&c.out_dir).map_err(io_err(&c.out_dir))?;
    let stats_path = c.out_dir.join("stats.tsv");
    let mut stats_w = BufWriter::new(File::create(&stats_path).map_err(io_err(&stats_path))?);
    writeln!(
        stats_w,
        "example\tsteps\tmean_run_length\trevisit_fraction\toutput"
    )
    .map_err(io_err(&stats_path))?;

    let mut all = Vec::with_capacity(boxes.len());
    for (i, ib) in boxes.iter().enumerate() {
        let g = generate(&ck.model, &ck.vocab, ib, &opts)?;
        let trace_path = c.out_dir.join(format!("trace_{i}.tsv"));
        let f = File::create(&trace_path).map_err(io_err(&trace_path))?;
        write_trace_tsv(BufWriter::new(f), &g.traces, &ck.vocab).map_err(io_err(&trace_path))?;

        // Without macro attention, field mass of the fused weights stands in.
        let matrix = if ck.model.config.bifocal {
            beta_matrix(&g.traces)
        } else {
            field_mass_matrix(&g.traces, &g.field_of, g.num_fields)
        };
        if c.heatmaps {
            let pgm = c.out_dir.join(format!("heatmap_{i}.pgm"));
            let f = File::create(&pgm).map_err(io_err(&pgm))?;
            write_pgm(BufWriter::new(f), &matrix).map_err(io_err(&pgm))?;
        }
        let s = stay_on_stats(&argmax_fields(&matrix));
        writeln!(
            stats_w,
            "{i}\t{}\t{:.4}\t{:.4}\t{}",
            matrix.len(),
            s.mean_run_length,
            s.revisit_fraction,
            g.words.join(" ")
        )
        .map_err(io_err(&stats_path))?;
        all.push(s);
    }
    stats_w.flush().map_err(io_err(&stats_path))?;
    let mean = mean_stats(&all);
    println!(
        "examples {} mean_run_length {:.4} revisit_fraction {:.4}",
        all.len(),
        mean.mean_run_length,
        mean.revisit_fraction
    );
    Ok(())
}

fn mean_stats(all: &[StayOnStats]) -> StayOnStats {
    let n = all.len().max(1) as f64;
    StayOnStats {
        mean_run_length: all.iter().map(|s| s.mean_run_length).sum::<f64>() / n,
        revisit_fraction: all.iter().map(|s| s.revisit_fraction).sum::<f64>() / n,
    }
}
