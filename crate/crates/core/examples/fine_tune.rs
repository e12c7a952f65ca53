//! Out-of-domain pretraining, then fine-tuning on a small in-domain set,
//! compared with training from scratch on that set alone.
//!
//! `cargo run --release --example fine_tune -- [epochs]`

use bifocal::data::{synth_generate, DomainMix, SynthConfig, Vocabulary};
use bifocal::decoder::GenerateOptions;
use bifocal::training::{evaluate_model, fine_tune, train_with_vocab, TrainConfig, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let epochs = std::env::args().nth(1).map_or(Ok(15), |s| s.parse())?;
    let base = SynthConfig {
        name_pool: Some(40),
        year_span: 20,
        ..Default::default()
    };
    let arts = SynthConfig {
        domain: DomainMix::Arts,
        ..base.clone()
    };
    let sports = SynthConfig {
        domain: DomainMix::Sports,
        ..base
    };

    let source = synth_generate(10, 400, &arts);
    let target = synth_generate(11, 150, &sports);
    let target_valid = synth_generate(12, 30, &sports);
    let target_test = synth_generate(13, 80, &sports);
    let vocab = Vocabulary::build(source.iter().chain(&target), usize::MAX);
    let cfg = TrainConfig {
        hidden: 32,
        embed: 16,
        lr: 0.005,
        batch_size: 4,
        epochs,
        patience: epochs,
        ..Default::default()
    };
    let opts = TrainOptions::default();
    let gen = GenerateOptions::default();

    let pre = train_with_vocab(&cfg, vocab.clone(), &source, &source[..40], &opts)?.checkpoint;
    let frozen = evaluate_model(&pre.model, &vocab, &target_test, &gen)?.0;
    let tuned = fine_tune(&pre, &cfg, &target, &target_valid, false, &opts)?.checkpoint;
    let tuned_scores = evaluate_model(&tuned.model, &vocab, &target_test, &gen)?.0;
    let scratch = train_with_vocab(&cfg, vocab.clone(), &target, &target_valid, &opts)?.checkpoint;
    let scratch_scores = evaluate_model(&scratch.model, &vocab, &target_test, &gen)?.0;

    println!("arts model on sports:  {frozen}");
    println!("fine-tuned on sports:  {tuned_scores}");
    println!("sports from scratch:   {scratch_scores}");
    Ok(())
}
