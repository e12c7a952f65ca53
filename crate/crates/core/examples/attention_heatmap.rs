//! Per-step macro attention of a trained model: TSV trace, PGM heatmap, and
//! the stay-on statistics of the attended field sequence.
//!
//! `cargo run --release --example attention_heatmap -- [out_dir] [epochs]`

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use bifocal::data::{synth_generate, SynthConfig};
use bifocal::decoder::{
    argmax_fields, beta_matrix, generate, stay_on_stats, write_pgm, write_trace_tsv,
    GenerateOptions,
};
use bifocal::training::{train, TrainConfig, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out_dir = PathBuf::from(args.next().unwrap_or_else(|| "attention_out".into()));
    let epochs = args.next().map_or(Ok(20), |s| s.parse())?;
    fs::create_dir_all(&out_dir)?;

    let synth = SynthConfig {
        name_pool: Some(40),
        year_span: 20,
        ..Default::default()
    };
    let data = synth_generate(3, 300, &synth);
    let cfg = TrainConfig {
        hidden: 32,
        embed: 16,
        lr: 0.005,
        batch_size: 4,
        epochs,
        patience: epochs,
        top_k: 1000,
        ..Default::default()
    };
    let ck = train(&cfg, &data[30..], &data[..30], &TrainOptions::default())?.checkpoint;

    let ex = &synth_generate(4, 1, &synth)[0];
    let g = generate(
        &ck.model,
        &ck.vocab,
        &ex.infobox,
        &GenerateOptions::default(),
    )?;
    println!("{}", g.words.join(" "));

    write_trace_tsv(
        BufWriter::new(File::create(out_dir.join("trace.tsv"))?),
        &g.traces,
        &ck.vocab,
    )?;
    let beta = beta_matrix(&g.traces);
    write_pgm(
        BufWriter::new(File::create(out_dir.join("heatmap.pgm"))?),
        &beta,
    )?;

    let names: Vec<&str> = ex.infobox.fields.iter().map(|f| f.name.as_str()).collect();
    let focus = argmax_fields(&beta);
    for (tr, &f) in g.traces.iter().zip(&focus) {
        println!(
            "{:>3} {:<14} {:<12} f {}",
            tr.t,
            ck.vocab.word(tr.token),
            names.get(f).copied().unwrap_or("?"),
            tr.f_mean.map_or("-".into(), |v| format!("{v:.3}")),
        );
    }
    let stats = stay_on_stats(&focus);
    println!(
        "mean run length {:.2}, revisit fraction {:.3}; files in {}",
        stats.mean_run_length,
        stats.revisit_fraction,
        out_dir.display()
    );
    Ok(())
}
