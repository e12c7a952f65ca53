use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::Example;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

/// Token ↔ id maps for words and, separately, for field names.
///
/// Word ids 0..4 are `<pad> <unk> <s> </s>`; field ids 0..2 are
/// `<pad> <unk>`. Remaining words are ordered by descending frequency, ties
/// broken lexicographically, so ids are stable for identical input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    words: Vec<String>,
    freqs: Vec<u64>,
    fields: Vec<String>,
    word_index: HashMap<String, usize>,
    field_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    words: Vec<String>,
    freqs: Vec<u64>,
    fields: Vec<String>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Vocabulary::assemble(r.words, r.freqs, r.fields)
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            words: v.words,
            freqs: v.freqs,
            fields: v.fields,
        }
    }
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const BOS: usize = 2;
    pub const EOS: usize = 3;
    pub const NUM_SPECIAL: usize = 4;
    pub const FIELD_PAD: usize = 0;
    pub const FIELD_UNK: usize = 1;

    fn assemble(words: Vec<String>, freqs: Vec<u64>, fields: Vec<String>) -> Self {
        let word_index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let field_index = fields
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary {
            words,
            freqs,
            fields,
            word_index,
            field_index,
        }
    }

    /// Builds a vocabulary from explicit (non-special) words and field names.
    pub fn from_parts(words: Vec<String>, fields: Vec<String>) -> Self {
        let mut all: Vec<String> = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        all.extend(words);
        let freqs = vec![0; all.len()];
        let mut f: Vec<String> = vec![PAD_TOKEN.into(), UNK_TOKEN.into()];
        f.extend(fields);
        Self::assemble(all, freqs, f)
    }

    /// Counts tokens over infobox values and descriptions and keeps the
    /// `top_k` most frequent entries, the four special tokens included.
    /// Every field name is kept.
    ///
    /// Panics if `top_k < 4`.
    pub fn build<'a, I>(examples: I, top_k: usize) -> Self
    where
        I: IntoIterator<Item = &'a Example>,
    {
        assert!(top_k >= Self::NUM_SPECIAL, "top_k must be at least 4");
        let mut counts: HashMap<&'a str, u64> = HashMap::new();
        let mut field_names: BTreeSet<&'a str> = BTreeSet::new();
        for ex in examples {
            for field in &ex.infobox.fields {
                field_names.insert(&field.name);
                for v in &field.values {
                    *counts.entry(v).or_default() += 1;
                }
            }
            for w in &ex.description {
                *counts.entry(w).or_default() += 1;
            }
        }
        let specials = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];
        let mut ranked: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(w, _)| !specials.contains(w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(top_k - Self::NUM_SPECIAL);

        let mut words: Vec<String> = specials.iter().map(|s| s.to_string()).collect();
        let mut freqs = vec![0; Self::NUM_SPECIAL];
        for (w, c) in ranked {
            words.push(w.to_string());
            freqs.push(c);
        }
        let mut fields: Vec<String> = vec![PAD_TOKEN.into(), UNK_TOKEN.into()];
        fields.extend(field_names.into_iter().map(String::from));
        Self::assemble(words, freqs, fields)
    }

    /// Number of words, specials included.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn word_id(&self, word: &str) -> Option<usize> {
        self.word_index.get(word).copied()
    }

    pub fn word_id_or_unk(&self, word: &str) -> usize {
        self.word_id(word).unwrap_or(Self::UNK)
    }

    pub fn field_id(&self, name: &str) -> Option<usize> {
        self.field_index.get(name).copied()
    }

    pub fn field_id_or_unk(&self, name: &str) -> usize {
        self.field_id(name).unwrap_or(Self::FIELD_UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn field(&self, id: usize) -> &str {
        &self.fields[id]
    }

    /// Training-corpus count of a kept word (0 for specials).
    pub fn freq(&self, id: usize) -> u64 {
        self.freqs[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Appends unseen words and field names; returns how many of each were added.
    pub fn extend<'a, I>(&mut self, examples: I) -> (usize, usize)
    where
        I: IntoIterator<Item = &'a Example>,
    {
        let (mut nw, mut nf) = (0, 0);
        for ex in examples {
            for field in &ex.infobox.fields {
                if !self.field_index.contains_key(&field.name) {
                    self.field_index
                        .insert(field.name.clone(), self.fields.len());
                    self.fields.push(field.name.clone());
                    nf += 1;
                }
            }
            let tokens = ex
                .infobox
                .fields
                .iter()
                .flat_map(|f| f.values.iter())
                .chain(ex.description.iter());
            for w in tokens {
                if !self.word_index.contains_key(w) {
                    self.word_index.insert(w.clone(), self.words.len());
                    self.words.push(w.clone());
                    self.freqs.push(0);
                    nw += 1;
                }
            }
        }
        (nw, nf)
    }

    /// Description ids followed by `</s>`.
    pub fn encode_target(&self, description: &[String]) -> Vec<usize> {
        description
            .iter()
            .map(|w| self.word_id_or_unk(w))
            .chain(std::iter::once(Self::EOS))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.word(i).to_string()).collect()
    }
}
