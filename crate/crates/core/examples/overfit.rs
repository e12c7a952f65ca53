//! Memorize 200 synthetic biographies and report training-set BLEU.
//!
//! `cargo run --release --example overfit -- [epochs] [lr] [batch]`

use std::time::Instant;

use bifocal::data::{synth_generate, SynthConfig};
use bifocal::decoder::GenerateOptions;
use bifocal::training::{evaluate_model, train, TrainConfig, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(Ok(80), |s| s.parse())?;
    let lr = args.next().map_or(Ok(0.005), |s| s.parse())?;
    let batch = args.next().map_or(Ok(4), |s| s.parse())?;

    let synth = SynthConfig {
        name_pool: Some(40),
        year_span: 20,
        ..Default::default()
    };
    let data = synth_generate(7, 200, &synth);
    let cfg = TrainConfig {
        hidden: 64,
        embed: 32,
        lr,
        batch_size: batch,
        epochs,
        patience: epochs,
        top_k: 330,
        seed: 1,
        ..Default::default()
    };
    let started = Instant::now();
    let opts = TrainOptions {
        timing: true,
        ..Default::default()
    };
    let out = train(&cfg, &data, &data[..20], &opts)?;
    let ck = out.checkpoint;
    println!(
        "vocabulary {} words, best epoch {}",
        ck.vocab.len(),
        ck.epoch
    );
    let (scores, outputs) =
        evaluate_model(&ck.model, &ck.vocab, &data, &GenerateOptions::default())?;
    for (ex, hyp) in data.iter().zip(&outputs).take(3) {
        println!("ref: {}\nhyp: {}", ex.description.join(" "), hyp.join(" "));
    }
    println!("{scores}  ({:.0}s)", started.elapsed().as_secs_f64());
    Ok(())
}
