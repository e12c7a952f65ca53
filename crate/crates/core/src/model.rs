//! Model configuration, parameter layout and binding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionParams;
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::Vocabulary;
use crate::error::ModelError;
use crate::gating::{GammaParams, GateParams};
use crate::layers::GruParams;
use crate::params::{BoundParams, ParamStore};

/// Uniform init bound for every parameter.
pub const INIT_BOUND: f64 = 0.08;

/// Reference vector for the orthogonalization step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatingVariant {
    /// Previous combined context `c_{t-1}`.
    Prev,
    /// State of a GRU run over all past combined contexts.
    Gru,
}

/// How the orthogonalization strength is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// `σ(W s_{t-1} + b)`, per dimension.
    StateDependent,
    /// `σ(θ)` for a learned vector `θ`.
    Constant,
}

/// Input of the field-level bi-GRU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRepr {
    /// Field-name embedding ⊕ final state of the field's value bi-GRU.
    Concat,
    NameOnly,
    ValuesOnly,
}

/// Which previous macro context feeds the forget gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMacroInput {
    Orthogonalized,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub field_vocab_size: usize,
    pub embed: usize,
    pub hidden: usize,
    /// Macro attention over fields fused with micro attention over values.
    /// Off: one flat attention over the flattened infobox.
    pub bifocal: bool,
    /// Forget gate plus orthogonalization on the macro context.
    pub gating: bool,
    pub gating_variant: GatingVariant,
    pub gamma_mode: GammaMode,
    pub field_repr: FieldRepr,
    pub gate_macro_input: GateMacroInput,
}

impl ModelConfig {
    pub fn new(vocab: &Vocabulary, embed: usize, hidden: usize) -> Self {
        ModelConfig {
            vocab_size: vocab.len(),
            field_vocab_size: vocab.num_fields(),
            embed,
            hidden,
            bifocal: true,
            gating: true,
            gating_variant: GatingVariant::Gru,
            gamma_mode: GammaMode::StateDependent,
            field_repr: FieldRepr::Concat,
            gate_macro_input: GateMacroInput::Orthogonalized,
        }
    }

    /// Size of value and field representations (two GRU directions).
    pub fn rep_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn decoder_input_dim(&self) -> usize {
        if self.bifocal {
            self.embed + 2 * self.rep_dim()
        } else {
            self.embed + self.rep_dim()
        }
    }

    fn field_gru_input(&self) -> usize {
        match self.field_repr {
            FieldRepr::Concat => self.embed + self.rep_dim(),
            FieldRepr::NameOnly => self.embed,
            FieldRepr::ValuesOnly => self.rep_dim(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed == 0 || self.hidden == 0 {
            return Err(ModelError::Config(
                "embed and hidden must be positive".into(),
            ));
        }
        if self.vocab_size < Vocabulary::NUM_SPECIAL {
            return Err(ModelError::Config("vocabulary lacks special tokens".into()));
        }
        if self.gating && !self.bifocal {
            return Err(ModelError::Config(
                "gating acts on the macro context and requires bifocal attention".into(),
            ));
        }
        Ok(())
    }

    /// Canonical `(name, shape)` of every parameter.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (e, h, r) = (self.embed, self.hidden, self.rep_dim());
        let mut s: Vec<(String, Vec<usize>)> = vec![
            ("embed.words".into(), vec![self.vocab_size, e]),
            ("embed.fields".into(), vec![self.field_vocab_size, e]),
        ];
        s.extend(GruParams::shapes("enc.value.fwd", e, h));
        s.extend(GruParams::shapes("enc.value.bwd", e, h));
        s.extend(AttentionParams::shapes("attn.micro", h, r, h));
        if self.bifocal {
            let fin = self.field_gru_input();
            s.extend(GruParams::shapes("enc.field.fwd", fin, h));
            s.extend(GruParams::shapes("enc.field.bwd", fin, h));
            s.extend(AttentionParams::shapes("attn.macro", h, r, h));
        }
        if self.gating {
            s.push(("gate.forget.macro".into(), vec![r, r]));
            s.push(("gate.forget.context".into(), vec![r, r]));
            s.push(("gate.forget.bias".into(), vec![r]));
            match self.gamma_mode {
                GammaMode::StateDependent => {
                    s.push(("gate.gamma.state".into(), vec![r, h]));
                    s.push(("gate.gamma.bias".into(), vec![r]));
                }
                GammaMode::Constant => s.push(("gate.gamma.logit".into(), vec![r])),
            }
            if self.gating_variant == GatingVariant::Gru {
                s.extend(GruParams::shapes("gate.history", r, r));
            }
        }
        s.push(("dec.init.w".into(), vec![h, r]));
        s.push(("dec.init.b".into(), vec![h]));
        s.extend(GruParams::shapes("dec.gru", self.decoder_input_dim(), h));
        s.push(("dec.out.w".into(), vec![self.vocab_size, h]));
        s.push(("dec.out.b".into(), vec![self.vocab_size]));
        s
    }
}

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Fresh parameters, uniform in `(-0.08, 0.08)`; the `<pad>` embedding
    /// rows start (and stay) at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParamStore::init_uniform(&config.param_shapes(), INIT_BOUND, &mut rng);
        let mut model = Model { config, params };
        model.zero_pad_rows();
        Ok(model)
    }

    pub fn zero_pad_rows(&mut self) {
        for name in ["embed.words", "embed.fields"] {
            if let Some(t) = self.params.get_mut(name) {
                t.row_mut(Vocabulary::PAD).fill(0.0);
            }
        }
    }

    /// Records parameters on `tape`, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<ModelVars, ModelError> {
        let bound = if trainable {
            self.params.bind(tape)
        } else {
            self.params.bind_frozen(tape)
        };
        ModelVars::new(tape, &self.config, bound)
    }

    /// Grows the word vocabulary to `new_size` rows; new embedding and
    /// output rows are drawn uniformly.
    pub fn extend_vocab(&mut self, new_words: usize, new_fields: usize, seed: u64) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grow = |store: &mut ParamStore, name: &str, extra: usize| {
            if extra == 0 {
                return;
            }
            let Some(t) = store.get(name) else { return };
            let (rows, cols) = if t.is_matrix() {
                (t.rows(), t.cols())
            } else {
                (t.len(), 1)
            };
            let mut data = t.data().to_vec();
            data.extend((0..extra * cols).map(|_| rng.gen_range(-INIT_BOUND..INIT_BOUND)));
            let shape = if t.is_matrix() {
                vec![rows + extra, cols]
            } else {
                vec![rows + extra]
            };
            store.insert(name, Tensor::new(shape, data).expect("consistent growth"));
        };
        grow(&mut self.params, "embed.words", new_words);
        grow(&mut self.params, "dec.out.w", new_words);
        grow(&mut self.params, "dec.out.b", new_words);
        grow(&mut self.params, "embed.fields", new_fields);
        self.config.vocab_size += new_words;
        self.config.field_vocab_size += new_fields;
    }
}

/// Tape handles of every parameter group.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub bound: BoundParams,
    pub word_emb: Var,
    pub field_emb: Var,
    pub value_fwd: GruParams,
    pub value_bwd: GruParams,
    pub field_fwd: Option<GruParams>,
    pub field_bwd: Option<GruParams>,
    pub micro: AttentionParams,
    pub macro_: Option<AttentionParams>,
    pub gate: Option<GateParams>,
    pub init_w: Var,
    pub init_b: Var,
    pub decoder: GruParams,
    pub out_w: Var,
    pub out_b: Var,
}

impl ModelVars {
    fn new(tape: &Tape, cfg: &ModelConfig, bound: BoundParams) -> Result<Self, ModelError> {
        let gru = |p: &str| GruParams::bind(tape, &bound, p);
        let field_fwd = if cfg.bifocal {
            Some(gru("enc.field.fwd")?)
        } else {
            None
        };
        let field_bwd = if cfg.bifocal {
            Some(gru("enc.field.bwd")?)
        } else {
            None
        };
        let macro_ = if cfg.bifocal {
            Some(AttentionParams::bind(&bound, "attn.macro")?)
        } else {
            None
        };
        let gate = if cfg.gating {
            let gamma = match cfg.gamma_mode {
                GammaMode::StateDependent => GammaParams::StateDependent {
                    w: bound.get("gate.gamma.state")?,
                    b: bound.get("gate.gamma.bias")?,
                },
                GammaMode::Constant => GammaParams::Constant {
                    logit: bound.get("gate.gamma.logit")?,
                },
            };
            let history = match cfg.gating_variant {
                GatingVariant::Gru => Some(gru("gate.history")?),
                GatingVariant::Prev => None,
            };
            Some(GateParams {
                forget_macro: bound.get("gate.forget.macro")?,
                forget_context: bound.get("gate.forget.context")?,
                forget_bias: bound.get("gate.forget.bias")?,
                gamma,
                history,
            })
        } else {
            None
        };
        Ok(ModelVars {
            word_emb: bound.get("embed.words")?,
            field_emb: bound.get("embed.fields")?,
            value_fwd: gru("enc.value.fwd")?,
            value_bwd: gru("enc.value.bwd")?,
            field_fwd,
            field_bwd,
            micro: AttentionParams::bind(&bound, "attn.micro")?,
            macro_,
            gate,
            init_w: bound.get("dec.init.w")?,
            init_b: bound.get("dec.init.b")?,
            decoder: gru("dec.gru")?,
            out_w: bound.get("dec.out.w")?,
            out_b: bound.get("dec.out.b")?,
            bound,
        })
    }
}
