//! Infobox encoding: value representations from per-field bi-GRUs, field
//! representations from a bi-GRU across fields, and the flat layout used by
//! the plain sequence-to-sequence model.

use std::ops::Range;

use crate::attention::AttentionMemory;
use crate::autodiff::{Tape, Var};
use crate::data::{Infobox, Vocabulary};
use crate::error::ModelError;
use crate::layers::{bigru_run, embed, GruParams};
use crate::model::{FieldRepr, ModelConfig, ModelVars};

/// Vocabulary ids of an infobox, with the original value strings.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoboxIds {
    pub fields: Vec<usize>,
    pub values: Vec<Vec<usize>>,
    /// Value surface strings in flattened order.
    pub surfaces: Vec<String>,
}

impl InfoboxIds {
    pub fn new(infobox: &Infobox, vocab: &Vocabulary) -> Result<Self, ModelError> {
        if infobox.fields.is_empty() {
            return Err(ModelError::EmptySequence("infobox"));
        }
        let mut ids = InfoboxIds {
            fields: Vec::with_capacity(infobox.fields.len()),
            values: Vec::with_capacity(infobox.fields.len()),
            surfaces: Vec::with_capacity(infobox.num_values()),
        };
        for f in &infobox.fields {
            if f.values.is_empty() {
                return Err(ModelError::EmptySequence("field values"));
            }
            ids.fields.push(vocab.field_id_or_unk(&f.name));
            ids.values
                .push(f.values.iter().map(|v| vocab.word_id_or_unk(v)).collect());
            ids.surfaces.extend(f.values.iter().cloned());
        }
        Ok(ids)
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlatToken {
    /// Field-name delimiter (field vocabulary id).
    Field(usize),
    /// Value token (word vocabulary id).
    Value(usize),
}

/// `[field] v1 v2 ... [field] ...`
#[derive(Clone, Debug, PartialEq)]
pub struct FlatSequence {
    pub tokens: Vec<FlatToken>,
    /// Surface string of each value token; `None` at delimiters.
    pub surfaces: Vec<Option<String>>,
    /// Index of the field each position belongs to.
    pub field_of: Vec<usize>,
}

impl FlatSequence {
    pub fn from_ids(ids: &InfoboxIds) -> Self {
        let n = ids.num_fields() + ids.num_values();
        let mut seq = FlatSequence {
            tokens: Vec::with_capacity(n),
            surfaces: Vec::with_capacity(n),
            field_of: Vec::with_capacity(n),
        };
        let mut surfaces = ids.surfaces.iter();
        for (i, (&f, values)) in ids.fields.iter().zip(&ids.values).enumerate() {
            seq.tokens.push(FlatToken::Field(f));
            seq.surfaces.push(None);
            seq.field_of.push(i);
            for &v in values {
                seq.tokens.push(FlatToken::Value(v));
                seq.surfaces.push(surfaces.next().cloned());
                seq.field_of.push(i);
            }
        }
        seq
    }

    /// Readable form with delimiters shown as `⟨name⟩`.
    pub fn labels(&self, vocab: &Vocabulary) -> Vec<String> {
        self.tokens
            .iter()
            .zip(&self.surfaces)
            .map(|(t, s)| match (t, s) {
                (FlatToken::Field(f), _) => format!("⟨{}⟩", vocab.field(*f)),
                (FlatToken::Value(_), Some(s)) => s.clone(),
                (FlatToken::Value(v), None) => vocab.word(*v).to_string(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn flatten(infobox: &Infobox, vocab: &Vocabulary) -> Result<FlatSequence, ModelError> {
    Ok(FlatSequence::from_ids(&InfoboxIds::new(infobox, vocab)?))
}

/// Output of [`encode_values`].
#[derive(Clone, Debug)]
pub struct ValueEncoding {
    pub reps: Vec<Var>,
    pub field_of: Vec<usize>,
    pub field_spans: Vec<Range<usize>>,
    /// `[fwd_last; bwd_first]` of each field's run.
    pub finals: Vec<Var>,
}

/// One bi-GRU per field over its value embeddings, results laid end to end.
pub fn encode_values(
    tape: &mut Tape,
    word_emb: Var,
    fwd: &GruParams,
    bwd: &GruParams,
    values: &[Vec<usize>],
) -> Result<ValueEncoding, ModelError> {
    if values.is_empty() {
        return Err(ModelError::EmptySequence("encode_values"));
    }
    let total = values.iter().map(Vec::len).sum();
    let mut enc = ValueEncoding {
        reps: Vec::with_capacity(total),
        field_of: Vec::with_capacity(total),
        field_spans: Vec::with_capacity(values.len()),
        finals: Vec::with_capacity(values.len()),
    };
    for (i, ids) in values.iter().enumerate() {
        let xs = embed(tape, word_emb, ids)?;
        let out = bigru_run(tape, fwd, bwd, &xs)?;
        let start = enc.reps.len();
        enc.reps.extend(out.states);
        enc.field_of.extend(std::iter::repeat_n(i, ids.len()));
        enc.field_spans.push(start..enc.reps.len());
        enc.finals.push(out.final_state);
    }
    Ok(enc)
}

/// Contextual field representations from a bi-GRU across the fields.
pub fn encode_fields(
    tape: &mut Tape,
    field_emb: Var,
    field_ids: &[usize],
    finals: &[Var],
    fwd: &GruParams,
    bwd: &GruParams,
    mode: FieldRepr,
) -> Result<Vec<Var>, ModelError> {
    let names = embed(tape, field_emb, field_ids)?;
    let inputs = match mode {
        FieldRepr::Concat => names
            .iter()
            .zip(finals)
            .map(|(&n, &v)| tape.concat(&[n, v]))
            .collect::<Result<Vec<_>, _>>()?,
        FieldRepr::NameOnly => names,
        FieldRepr::ValuesOnly => finals.to_vec(),
    };
    Ok(bigru_run(tape, fwd, bwd, &inputs)?.states)
}

/// Everything the decoder reads from one infobox.
#[derive(Clone, Debug)]
pub struct EncodedInfobox {
    /// `h^g_i`; empty for the flat layout.
    pub field_reps: Vec<Var>,
    /// Attendable positions: values, or every flat token.
    pub value_reps: Vec<Var>,
    pub value_matrix: Var,
    pub field_of: Vec<usize>,
    pub field_spans: Vec<Range<usize>>,
    /// Copyable string per position; `None` at flat delimiters.
    pub surfaces: Vec<Option<String>>,
    pub num_fields: usize,
    /// Mean representation the decoder state starts from.
    pub summary: Var,
    pub field_memory: Option<AttentionMemory>,
    pub value_memory: AttentionMemory,
}

impl EncodedInfobox {
    pub fn num_positions(&self) -> usize {
        self.value_reps.len()
    }
}

/// Encodes `ids` according to `cfg` (bifocal or flat layout).
pub fn encode(
    tape: &mut Tape,
    vars: &ModelVars,
    cfg: &ModelConfig,
    ids: &InfoboxIds,
) -> Result<EncodedInfobox, ModelError> {
    if cfg.bifocal {
        let values = encode_values(
            tape,
            vars.word_emb,
            &vars.value_fwd,
            &vars.value_bwd,
            &ids.values,
        )?;
        let (ffwd, fbwd) = match (&vars.field_fwd, &vars.field_bwd) {
            (Some(f), Some(b)) => (f, b),
            _ => return Err(ModelError::MissingParam("enc.field".into())),
        };
        let macro_params = vars
            .macro_
            .as_ref()
            .ok_or_else(|| ModelError::MissingParam("attn.macro".into()))?;
        let field_reps = encode_fields(
            tape,
            vars.field_emb,
            &ids.fields,
            &values.finals,
            ffwd,
            fbwd,
            cfg.field_repr,
        )?;
        let field_matrix = tape.stack(&field_reps)?;
        let value_matrix = tape.stack(&values.reps)?;
        let summary = tape.mean_rows(field_matrix)?;
        let field_memory = AttentionMemory::new(tape, field_matrix, macro_params)?;
        let value_memory = AttentionMemory::new(tape, value_matrix, &vars.micro)?;
        Ok(EncodedInfobox {
            field_reps,
            value_reps: values.reps,
            value_matrix,
            field_of: values.field_of,
            field_spans: values.field_spans,
            surfaces: ids.surfaces.iter().cloned().map(Some).collect(),
            num_fields: ids.num_fields(),
            summary,
            field_memory: Some(field_memory),
            value_memory,
        })
    } else {
        let flat = FlatSequence::from_ids(ids);
        let mut xs = Vec::with_capacity(flat.len());
        for t in &flat.tokens {
            xs.push(match *t {
                FlatToken::Field(f) => embed(tape, vars.field_emb, &[f])?[0],
                FlatToken::Value(v) => embed(tape, vars.word_emb, &[v])?[0],
            });
        }
        let states = bigru_run(tape, &vars.value_fwd, &vars.value_bwd, &xs)?.states;
        let value_matrix = tape.stack(&states)?;
        let summary = tape.mean_rows(value_matrix)?;
        let value_memory = AttentionMemory::new(tape, value_matrix, &vars.micro)?;
        let mut field_spans = Vec::with_capacity(ids.num_fields());
        let mut start = 0;
        for values in &ids.values {
            field_spans.push(start..start + values.len() + 1);
            start += values.len() + 1;
        }
        Ok(EncodedInfobox {
            field_reps: Vec::new(),
            value_reps: states,
            value_matrix,
            field_of: flat.field_of,
            field_spans,
            surfaces: flat.surfaces,
            num_fields: ids.num_fields(),
            summary,
            field_memory: None,
            value_memory,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Example, Field};
    use crate::model::Model;

    fn vocab() -> Vocabulary {
        Vocabulary::from_parts(
            ["john", "doe", "x", "y", "z", "particle", "physics"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            vec!["name".into(), "job".into(), "fields".into()],
        )
    }

    fn model(cfg_edit: impl FnOnce(&mut ModelConfig)) -> Model {
        let mut cfg = ModelConfig::new(&vocab(), 4, 3);
        cfg_edit(&mut cfg);
        Model::new(cfg, 11).unwrap()
    }

    fn values_of(tape: &Tape, vs: &[Var]) -> Vec<Vec<f64>> {
        vs.iter().map(|&v| tape.value(v).data().to_vec()).collect()
    }

    #[test]
    fn flatten_single_field() {
        let ib = Infobox::new(vec![Field::new("name", &["john", "doe"])]);
        let v = vocab();
        let flat = flatten(&ib, &v).unwrap();
        assert_eq!(flat.labels(&v), ["⟨name⟩", "john", "doe"]);
        assert_eq!(
            flat.tokens[0],
            FlatToken::Field(v.field_id("name").unwrap())
        );
    }

    #[test]
    fn flatten_keeps_field_order_and_surfaces() {
        let ib = Infobox::new(vec![
            Field::new("job", &["x"]),
            Field::new("name", &["unseen", "doe"]),
        ]);
        let v = vocab();
        let flat = flatten(&ib, &v).unwrap();
        assert_eq!(flat.labels(&v), ["⟨job⟩", "x", "⟨name⟩", "unseen", "doe"]);
        assert_eq!(flat.tokens[3], FlatToken::Value(Vocabulary::UNK));
        assert_eq!(flat.surfaces[3].as_deref(), Some("unseen"));
        assert_eq!(flat.field_of, [0, 0, 1, 1, 1]);
    }

    #[test]
    fn flatten_multiword_field() {
        let ib = Infobox::new(vec![Field::new(
            "fields",
            &["particle", "physics", ",", "many-body", "theory"],
        )]);
        let flat = flatten(&ib, &vocab()).unwrap();
        assert_eq!(flat.len(), 6);
        assert_eq!(
            flat.labels(&vocab())[..3],
            ["⟨fields⟩", "particle", "physics"]
        );
    }

    fn encode_box(m: &Model, ib: &Infobox) -> (Tape, EncodedInfobox) {
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape, true).unwrap();
        let ids = InfoboxIds::new(ib, &vocab()).unwrap();
        let enc = encode(&mut tape, &vars, &m.config, &ids).unwrap();
        (tape, enc)
    }

    #[test]
    fn value_bookkeeping() {
        let m = model(|_| {});
        let ib = Infobox::new(vec![
            Field::new("name", &["john", "doe"]),
            Field::new("job", &["x", "y", "z"]),
        ]);
        let (tape, enc) = encode_box(&m, &ib);
        assert_eq!(enc.value_reps.len(), 5);
        assert_eq!(enc.field_of, [0, 0, 1, 1, 1]);
        assert_eq!(enc.field_spans, vec![0..2, 2..5]);
        assert_eq!(enc.field_reps.len(), 2);
        for &r in enc.value_reps.iter().chain(&enc.field_reps) {
            assert_eq!(tape.value(r).len(), 6);
        }
    }

    #[test]
    fn single_field_single_value() {
        let m = model(|_| {});
        let ib = Infobox::new(vec![Field::new("name", &["john"])]);
        let (tape, enc) = encode_box(&m, &ib);
        assert_eq!(enc.value_reps.len(), 1);
        assert!(tape.value(enc.field_reps[0]).is_finite());
    }

    #[test]
    fn same_values_in_different_contexts_differ() {
        let m = model(|_| {});
        let ib = Infobox::new(vec![
            Field::new("name", &["x", "y"]),
            Field::new("job", &["z", "x", "y"]),
        ]);
        let (tape, enc) = encode_box(&m, &ib);
        let r = values_of(&tape, &enc.value_reps);
        assert_ne!(r[0], r[3]);
    }

    #[test]
    fn field_reps_depend_on_neighbours() {
        let m = model(|_| {});
        let a = Field::new("name", &["john"]);
        let b = Field::new("job", &["x"]);
        let (t1, e1) = encode_box(&m, &Infobox::new(vec![a.clone(), b.clone()]));
        let (t2, e2) = encode_box(&m, &Infobox::new(vec![b, a.clone()]));
        assert_ne!(
            values_of(&t1, &e1.field_reps)[0],
            values_of(&t2, &e2.field_reps)[1]
        );

        let (t3, e3) = encode_box(&m, &Infobox::new(vec![a.clone(), a]));
        let reps = values_of(&t3, &e3.field_reps);
        assert_ne!(reps[0], reps[1]);
    }

    #[test]
    fn field_rep_gradient_reaches_its_value_embeddings() {
        let m = model(|_| {});
        let ib = Infobox::new(vec![
            Field::new("name", &["john", "doe"]),
            Field::new("job", &["x"]),
        ]);
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape, true).unwrap();
        let ids = InfoboxIds::new(&ib, &vocab()).unwrap();
        let enc = encode(&mut tape, &vars, &m.config, &ids).unwrap();
        let loss = tape.sum(enc.field_reps[1]);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(vars.word_emb).unwrap();
        let x = vocab().word_id("x").unwrap();
        assert!(g.row(x).iter().any(|v| v.abs() > 1e-12));
    }

    #[test]
    fn encoding_is_deterministic() {
        let m = model(|_| {});
        let ib = Infobox::new(vec![Field::new("name", &["john", "doe"])]);
        let (t1, e1) = encode_box(&m, &ib);
        let (t2, e2) = encode_box(&m, &ib);
        assert_eq!(
            values_of(&t1, &e1.value_reps),
            values_of(&t2, &e2.value_reps)
        );
        assert_eq!(
            values_of(&t1, &e1.field_reps),
            values_of(&t2, &e2.field_reps)
        );
    }

    #[test]
    fn flat_layout_for_plain_model() {
        let m = model(|c| {
            c.bifocal = false;
            c.gating = false;
        });
        let ib = Infobox::new(vec![
            Field::new("name", &["john", "doe"]),
            Field::new("job", &["x"]),
        ]);
        let (_, enc) = encode_box(&m, &ib);
        assert_eq!(enc.num_positions(), 5);
        assert!(enc.field_reps.is_empty());
        assert_eq!(enc.field_spans, vec![0..3, 3..5]);
        assert!(enc.surfaces[0].is_none() && enc.surfaces[3].is_none());
        assert_eq!(enc.surfaces[2].as_deref(), Some("doe"));
    }

    #[test]
    fn field_repr_modes_build() {
        for mode in [FieldRepr::NameOnly, FieldRepr::ValuesOnly] {
            let m = model(|c| c.field_repr = mode);
            let ib = Infobox::new(vec![Field::new("name", &["john"])]);
            let (_, enc) = encode_box(&m, &ib);
            assert_eq!(enc.field_reps.len(), 1);
        }
    }

    #[test]
    fn empty_infobox_is_rejected() {
        let ex = Example {
            infobox: Infobox::default(),
            description: vec!["a".into()],
            domain: None,
        };
        assert!(InfoboxIds::new(&ex.infobox, &vocab()).is_err());
    }
}
