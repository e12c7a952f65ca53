//! Corpus BLEU-4, NIST-4 and ROUGE-4 on a few hand-written pairs.

use bifocal::metrics::{bleu4, evaluate, nist4, rouge4, EvalPair};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tok = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let pairs = vec![
        EvalPair::from_text(
            "ann lee ( born 1961 ) is an american poet .",
            "ann lee ( born 1961 ) is an american poet and novelist .",
        ),
        // Two references for one hypothesis.
        EvalPair::new(
            tok("tom vance is a retired english footballer ."),
            vec![
                tok("tom vance ( born 1970 ) is an english former footballer ."),
                tok("tom vance is a retired english football player ."),
            ],
        ),
        EvalPair::from_text(
            "maria ruiz was a spanish painter .",
            "maria ruiz was a spanish painter .",
        ),
    ];
    for p in &pairs {
        let single = std::slice::from_ref(p);
        println!(
            "{:<45} BLEU {:6.2}  NIST {:5.2}  ROUGE {:6.2}",
            p.hypothesis.join(" "),
            bleu4(single)?,
            nist4(single)?,
            rouge4(single).unwrap_or(0.0),
        );
    }
    println!("corpus: {}", evaluate(&pairs)?);
    Ok(())
}
