//! Converts a WikiBio-style `.box` / `.sent` / `.nb` triple to the line format.

use std::fs;

use bifocal::data::{import_wikibio, parse_examples};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let boxes = dir.path().join("train.box");
    let sents = dir.path().join("train.sent");
    let nb = dir.path().join("train.nb");
    fs::write(
        &boxes,
        "name_1:walter\tname_2:extra\tbirth_date_1:1930\timage:<none>\toccupation_1:cricketer\n\
         name_1:ada\tname_2:lovelace\toccupation_1:mathematician\toccupation_2:writer\n",
    )?;
    fs::write(
        &sents,
        "walter extra ( born 1930 ) is a former cricketer .\n\
         he played for two counties .\n\
         ada lovelace was an english mathematician and writer .\n",
    )?;
    fs::write(&nb, "2\n1\n")?;

    let out = dir.path().join("train.txt");
    let report = import_wikibio(&boxes, &sents, Some(&nb), &out)?;
    println!(
        "imported {} examples, skipped {}",
        report.examples, report.skipped
    );
    for w in &report.warnings {
        println!("warning: {w}");
    }
    print!("{}", fs::read_to_string(&out)?);
    for ex in parse_examples(&out, true)? {
        let fields: Vec<&str> = ex.infobox.fields.iter().map(|f| f.name.as_str()).collect();
        println!(
            "fields {fields:?}, {} description tokens",
            ex.description.len()
        );
    }
    Ok(())
}
