//! Generation with unseen names: greedy vs beam, with and without copying.
//!
//! `cargo run --release --example copy_generation -- [epochs]`

use bifocal::data::{synth_generate, NameStyle, SynthConfig, Vocabulary};
use bifocal::decoder::{generate, GenerateOptions};
use bifocal::training::{train, TrainConfig, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs = std::env::args().nth(1).map_or(Ok(40), |s| s.parse())?;
    let synth = SynthConfig {
        name_pool: Some(40),
        rare_name_rate: 0.3,
        year_span: 20,
        ..Default::default()
    };
    let data = synth_generate(1, 1000, &synth);
    // Keep words seen three times or more; one-off names fall out.
    let all = Vocabulary::build(&data, usize::MAX);
    let top_k = (0..all.len())
        .filter(|&i| i < Vocabulary::NUM_SPECIAL || all.freq(i) >= 3)
        .count();
    let cfg = TrainConfig {
        hidden: 32,
        embed: 16,
        lr: 0.005,
        batch_size: 4,
        epochs,
        patience: epochs,
        top_k,
        ..Default::default()
    };
    let ck = train(&cfg, &data[50..], &data[..50], &TrainOptions::default())?.checkpoint;

    let unseen = SynthConfig {
        name_style: NameStyle::Heldout,
        ..synth
    };
    for ex in synth_generate(2, 3, &unseen) {
        let name = ex
            .infobox
            .field("name")
            .map_or(String::new(), |f| f.values.join(" "));
        println!(
            "name: {name}  (in vocabulary: {})",
            ck.vocab.word_id(&name).is_some()
        );
        println!("  reference   {}", ex.description.join(" "));
        for (label, opts) in [
            (
                "no copy",
                GenerateOptions {
                    copy: false,
                    ..Default::default()
                },
            ),
            ("greedy", GenerateOptions::default()),
            (
                "beam 5",
                GenerateOptions {
                    beam: 5,
                    ..Default::default()
                },
            ),
        ] {
            let g = generate(&ck.model, &ck.vocab, &ex.infobox, &opts)?;
            println!(
                "  {label:<11} {}  (score {:.3})",
                g.words.join(" "),
                g.score
            );
        }
    }
    Ok(())
}
