//! Conversion from the WikiBio release layout to the canonical line format.
//!
//! A `.box` line lists `fieldname_i:token` entries separated by tabs, where
//! `i` is the token's 1-based position inside the field; empty fields appear
//! as `fieldname:<none>`. Sentences come one per line, and an optional `.nb`
//! file gives the number of sentences of each article so the first one can
//! be picked out.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{write_examples, DataError, Example, Field, Infobox};

pub const NONE_TOKEN: &str = "<none>";

/// Splits `birth_date_2` into `("birth_date", Some(2))`.
fn split_key(key: &str) -> (&str, Option<usize>) {
    if let Some((name, idx)) = key.rsplit_once('_') {
        if let Ok(i) = idx.parse::<usize>() {
            return (name, Some(i));
        }
    }
    (key, None)
}

/// Rebuilds the ordered infobox of one `.box` line.
///
/// Fields keep the order of their first appearance; values inside a field are
/// sorted by position. Returns the infobox and any warnings (index gaps).
pub fn parse_box_line(line: &str) -> (Infobox, Vec<String>) {
    let mut groups: Vec<(String, Vec<(usize, String)>)> = Vec::new();
    for entry in line.split('\t').flat_map(|e| e.split(' ')) {
        if entry.is_empty() {
            continue;
        }
        let Some((key, token)) = entry.split_once(':') else {
            continue;
        };
        let (name, idx) = split_key(key);
        let name = name.to_lowercase();
        let pos = match groups.iter().position(|(n, _)| *n == name) {
            Some(p) => p,
            None => {
                groups.push((name, Vec::new()));
                groups.len() - 1
            }
        };
        if token == NONE_TOKEN || token.is_empty() {
            continue;
        }
        let slot = &mut groups[pos].1;
        let idx = idx.unwrap_or(slot.len() + 1);
        slot.push((idx, token.to_lowercase()));
    }

    let mut warnings = Vec::new();
    let mut fields = Vec::new();
    for (name, mut values) in groups {
        if values.is_empty() {
            continue;
        }
        values.sort_by_key(|(i, _)| *i);
        let contiguous = values.iter().enumerate().all(|(k, (i, _))| *i == k + 1);
        if !contiguous {
            warnings.push(format!("field `{name}` has gaps in its token indices"));
        }
        fields.push(Field {
            name,
            values: values.into_iter().map(|(_, t)| t).collect(),
        });
    }
    (Infobox { fields }, warnings)
}

fn read_lines(path: &Path) -> Result<Vec<String>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| DataError::io(path, e))
}

#[derive(Clone, Debug, Default)]
pub struct ImportReport {
    pub examples: usize,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

/// Pairs each infobox with the first sentence of its article.
pub fn import_examples(
    box_path: &Path,
    sentence_path: &Path,
    nb_path: Option<&Path>,
) -> Result<(Vec<Example>, ImportReport), DataError> {
    let boxes = read_lines(box_path)?;
    let sentences = read_lines(sentence_path)?;

    let firsts: Vec<&str> = match nb_path {
        Some(nb) => {
            let counts = read_lines(nb)?
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    l.trim().parse::<usize>().map_err(|_| DataError::Malformed {
                        line: i + 1,
                        reason: format!("bad sentence count `{l}`"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let total: usize = counts.iter().sum();
            if total != sentences.len() {
                return Err(DataError::Misaligned(format!(
                    "sentence counts sum to {total} but {} sentences were read",
                    sentences.len()
                )));
            }
            let mut offset = 0;
            let mut out = Vec::with_capacity(counts.len());
            for c in counts {
                out.push(if c > 0 {
                    sentences[offset].as_str()
                } else {
                    ""
                });
                offset += c;
            }
            out
        }
        None => sentences.iter().map(String::as_str).collect(),
    };
    if firsts.len() != boxes.len() {
        return Err(DataError::Misaligned(format!(
            "{} infoboxes but {} articles",
            boxes.len(),
            firsts.len()
        )));
    }

    let mut report = ImportReport::default();
    let mut examples = Vec::with_capacity(boxes.len());
    for (i, (b, s)) in boxes.iter().zip(firsts).enumerate() {
        let (infobox, warnings) = parse_box_line(b);
        for w in warnings {
            log::warn!("box line {}: {w}", i + 1);
            report.warnings.push(format!("line {}: {w}", i + 1));
        }
        let description: Vec<String> = s.split_whitespace().map(str::to_lowercase).collect();
        if infobox.fields.is_empty() || description.is_empty() {
            report.skipped += 1;
            continue;
        }
        examples.push(Example {
            infobox,
            description,
            domain: None,
        });
    }
    report.examples = examples.len();
    Ok((examples, report))
}

/// [`import_examples`] followed by writing the canonical file.
pub fn import_wikibio(
    box_path: &Path,
    sentence_path: &Path,
    nb_path: Option<&Path>,
    out_path: &Path,
) -> Result<ImportReport, DataError> {
    let (examples, report) = import_examples(box_path, sentence_path, nb_path)?;
    write_examples(out_path, &examples)?;
    Ok(report)
}
