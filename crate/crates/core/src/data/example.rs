use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

/// Separates the infobox part of a canonical line from its description.
pub const DESCRIPTION_MARKER: &str = "###";

/// One infobox property: a field name and its value tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Field {
    pub name: String,
    pub values: Vec<String>,
}

impl Field {
    pub fn new(name: impl Into<String>, values: &[&str]) -> Self {
        Field {
            name: name.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
        }
    }
}

/// Ordered `(field, values)` pairs describing one entity.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Infobox {
    pub fields: Vec<Field>,
}

impl Infobox {
    pub fn new(fields: Vec<Field>) -> Self {
        Infobox { fields }
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    /// Total number of values across all fields.
    pub fn num_values(&self) -> usize {
        self.fields.iter().map(|f| f.values.len()).sum()
    }

    pub fn field(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Drops fields whose value list is empty, logging each one.
    pub fn drop_empty_fields(&mut self) {
        self.fields.retain(|f| {
            if f.values.is_empty() {
                log::warn!("dropping field `{}` with no values", f.name);
                false
            } else {
                true
            }
        });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Sports,
    Arts,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Sports => write!(f, "sports"),
            Domain::Arts => write!(f, "arts"),
        }
    }
}

/// An infobox paired with its reference description.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub infobox: Infobox,
    pub description: Vec<String>,
    /// Not part of the line format; set by the synthetic generator.
    pub domain: Option<Domain>,
}

fn normalize_field_name(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
        .to_lowercase()
}

fn tokens(raw: &str) -> Vec<String> {
    raw.split_whitespace().map(str::to_lowercase).collect()
}

/// Parses the infobox part of a line: `field|v1 v2<TAB>field|v1...`.
/// Anything from the description marker on is ignored.
pub fn parse_infobox(line: &str) -> Result<Infobox, String> {
    let mut fields = Vec::new();
    for part in line.split('\t') {
        if part == DESCRIPTION_MARKER {
            break;
        }
        if part.trim().is_empty() {
            continue;
        }
        let (name, values) = part
            .split_once('|')
            .ok_or_else(|| format!("field `{part}` has no `|` separator"))?;
        let name = normalize_field_name(name);
        if name.is_empty() {
            return Err(format!("empty field name in `{part}`"));
        }
        fields.push(Field {
            name,
            values: tokens(values),
        });
    }
    let mut infobox = Infobox { fields };
    infobox.drop_empty_fields();
    if infobox.fields.is_empty() {
        return Err("no fields with values".into());
    }
    Ok(infobox)
}

/// Parses one canonical line:
/// `field1|v1 v2<TAB>field2|v1<TAB>...<TAB>###<TAB>description tokens`.
pub fn parse_line(line: &str) -> Result<Example, String> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let parts: Vec<&str> = line.split('\t').collect();
    let marker = parts
        .iter()
        .position(|p| *p == DESCRIPTION_MARKER)
        .ok_or("missing description")?;
    let description = tokens(&parts[marker + 1..].join(" "));
    if description.is_empty() {
        return Err("missing description".into());
    }
    let infobox = parse_infobox(&parts[..marker].join("\t"))?;
    Ok(Example {
        infobox,
        description,
        domain: None,
    })
}

pub fn serialize_example(example: &Example) -> String {
    let mut out = String::new();
    for field in &example.infobox.fields {
        out.push_str(&field.name);
        out.push('|');
        out.push_str(&field.values.join(" "));
        out.push('\t');
    }
    out.push_str(DESCRIPTION_MARKER);
    out.push('\t');
    out.push_str(&example.description.join(" "));
    out
}

/// Streams examples from canonical lines.
///
/// Malformed lines are logged with their line number and skipped; in strict
/// mode the first one ends the stream with an error.
pub struct ExampleReader<R> {
    lines: std::io::Lines<R>,
    lineno: usize,
    strict: bool,
    skipped: usize,
}

impl<R: BufRead> ExampleReader<R> {
    pub fn new(reader: R, strict: bool) -> Self {
        ExampleReader {
            lines: reader.lines(),
            lineno: 0,
            strict,
            skipped: 0,
        }
    }

    /// Number of malformed lines skipped so far.
    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl<R: BufRead> Iterator for ExampleReader<R> {
    type Item = Result<Example, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(DataError::Read(e.to_string()))),
            };
            self.lineno += 1;
            if line.trim().is_empty() {
                continue;
            }
            match parse_line(&line) {
                Ok(ex) => return Some(Ok(ex)),
                Err(reason) => {
                    if self.strict {
                        return Some(Err(DataError::Malformed {
                            line: self.lineno,
                            reason,
                        }));
                    }
                    log::warn!("line {}: {reason}; skipped", self.lineno);
                    self.skipped += 1;
                }
            }
        }
    }
}

pub fn open_examples(
    path: &Path,
    strict: bool,
) -> Result<ExampleReader<BufReader<File>>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    Ok(ExampleReader::new(BufReader::new(file), strict))
}

/// Reads every example of a canonical file; an empty result is an error.
pub fn parse_examples(path: &Path, strict: bool) -> Result<Vec<Example>, DataError> {
    let mut reader = open_examples(path, strict)?;
    let examples = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    if reader.skipped() > 0 {
        log::warn!(
            "{}: skipped {} malformed lines",
            path.display(),
            reader.skipped()
        );
    }
    if examples.is_empty() {
        return Err(DataError::NoExamples(path.display().to_string()));
    }
    Ok(examples)
}

/// Reads infoboxes for generation; the description part is optional.
pub fn parse_infoboxes(path: &Path) -> Result<Vec<Infobox>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::Read(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let infobox = parse_infobox(&line).map_err(|reason| DataError::Malformed {
            line: i + 1,
            reason,
        })?;
        out.push(infobox);
    }
    if out.is_empty() {
        return Err(DataError::NoExamples(path.display().to_string()));
    }
    Ok(out)
}

pub fn write_examples(path: &Path, examples: &[Example]) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        writeln!(w, "{}", serialize_example(ex)).map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}
