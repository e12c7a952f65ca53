//! Synthetic infobox/description pairs, the line format, and vocabularies.
//!
//! `cargo run --example synth_corpus -- [n] [seed]`

use bifocal::data::{
    parse_examples, synth_generate, write_examples, DomainMix, NameStyle, SynthConfig, Vocabulary,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(500), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;

    for domain in [DomainMix::Sports, DomainMix::Arts] {
        let cfg = SynthConfig {
            domain,
            ..Default::default()
        };
        let ex = &synth_generate(seed, 1, &cfg)[0];
        println!("{domain:?}:");
        for f in &ex.infobox.fields {
            println!("  {:<14} {}", f.name, f.values.join(" "));
        }
        println!("  -> {}", ex.description.join(" "));
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("corpus.txt");
    let data = synth_generate(seed, n, &SynthConfig::default());
    write_examples(&path, &data)?;
    let back = parse_examples(&path, true)?;
    assert_eq!(back.len(), data.len());
    println!("\nfirst line of {}:", path.display());
    println!(
        "{}",
        std::fs::read_to_string(&path)?.lines().next().unwrap_or("")
    );

    // Fresh names make most name tokens singletons; a shared pool keeps
    // them frequent enough for a top-k vocabulary.
    for (label, cfg) in [
        ("fresh names", SynthConfig::default()),
        (
            "40-name pool",
            SynthConfig {
                name_pool: Some(40),
                ..Default::default()
            },
        ),
    ] {
        let data = synth_generate(seed, n, &cfg);
        let vocab = Vocabulary::build(&data, usize::MAX);
        let rare = (Vocabulary::NUM_SPECIAL..vocab.len())
            .filter(|&i| vocab.freq(i) < 3)
            .count();
        println!(
            "{label}: {} word types, {rare} seen fewer than 3 times",
            vocab.len()
        );
    }

    let held = synth_generate(
        seed,
        3,
        &SynthConfig {
            name_style: NameStyle::Heldout,
            ..Default::default()
        },
    );
    for ex in &held {
        println!(
            "held-out name: {}",
            ex.infobox
                .field("name")
                .map_or(String::new(), |f| f.values.join(" "))
        );
    }
    Ok(())
}
