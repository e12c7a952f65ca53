//! GRU decoder over fused contexts, search procedures, UNK copying and
//! attention traces.

mod copy;
mod search;
mod trace;

pub use copy::copy_postprocess;
pub use search::{beam_decode, greedy_decode, Hypothesis, StepModel};
pub use trace::{
    argmax_fields, beta_matrix, field_mass_matrix, stay_on_stats, write_pgm, write_trace_tsv,
    StayOnStats,
};

use serde::Serialize;

use crate::attention::{fuse_attention, macro_attention, micro_attention, StepAttention};
use crate::autodiff::{Tape, Var};
use crate::data::{Infobox, Vocabulary};
use crate::encoder::{encode, EncodedInfobox, InfoboxIds};
use crate::error::ModelError;
use crate::gating::{gate_step, GatedState};
use crate::layers::{embed, gru_step};
use crate::model::{Model, ModelConfig, ModelVars};

pub const DEFAULT_MAX_LEN: usize = 60;

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub s: Var,
    /// Token consumed by the next step.
    pub prev_token: usize,
    pub gated: Option<GatedState>,
    pub t: usize,
}

impl DecoderState {
    /// Sets the token the next step consumes.
    pub fn advance(mut self, token: usize) -> Self {
        self.prev_token = token;
        self
    }
}

/// `s_0 = tanh(W mean(reps) + b)`, `<s>` as the first input, zero contexts.
pub fn initial_state(
    tape: &mut Tape,
    vars: &ModelVars,
    cfg: &ModelConfig,
    enc: &EncodedInfobox,
) -> Result<DecoderState, ModelError> {
    let ws = tape.matvec(vars.init_w, enc.summary)?;
    let pre = tape.add(ws, vars.init_b)?;
    let s = tape.tanh(pre);
    let gated = vars
        .gate
        .as_ref()
        .map(|g| GatedState::initial(tape, cfg.rep_dim(), g));
    Ok(DecoderState {
        s,
        prev_token: Vocabulary::BOS,
        gated,
        t: 0,
    })
}

/// Tape handles produced by one step.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub beta: Option<Var>,
    pub alpha: Var,
    pub alpha_fused: Var,
    pub c_g: Option<Var>,
    pub c_w: Var,
    pub c_t: Option<Var>,
    pub f: Option<Var>,
    pub gamma: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    /// State after the step; call [`DecoderState::advance`] before reuse.
    pub state: DecoderState,
    pub logprobs: Var,
    pub vars: StepVars,
}

/// One decoder step: attention, gating, GRU update and output distribution.
pub fn decode_step(
    tape: &mut Tape,
    vars: &ModelVars,
    cfg: &ModelConfig,
    enc: &EncodedInfobox,
    state: &DecoderState,
) -> Result<StepOutput, ModelError> {
    let s_prev = state.s;
    let emb = embed(tape, vars.word_emb, &[state.prev_token])?[0];
    let alpha = micro_attention(tape, &enc.value_memory, s_prev, &vars.micro)?;

    let mut sv = StepVars {
        beta: None,
        alpha,
        alpha_fused: alpha,
        c_g: None,
        c_w: alpha,
        c_t: None,
        f: None,
        gamma: None,
    };
    let mut gated = state.gated;
    let input = if cfg.bifocal {
        let (fm, mp) = match (&enc.field_memory, &vars.macro_) {
            (Some(m), Some(p)) => (m, p),
            _ => return Err(ModelError::MissingParam("attn.macro".into())),
        };
        let (beta, c_g_raw) = macro_attention(tape, fm, s_prev, mp)?;
        let c_t = match (&vars.gate, &state.gated) {
            (Some(params), Some(gs)) => {
                let out = gate_step(tape, c_g_raw, s_prev, gs, params, cfg.gate_macro_input)?;
                sv.c_g = Some(out.c_g);
                sv.f = Some(out.f);
                sv.gamma = Some(out.gamma);
                gated = Some(out.next);
                out.c_t
            }
            _ => {
                sv.c_g = Some(c_g_raw);
                c_g_raw
            }
        };
        let (fused, c_w) = fuse_attention(tape, alpha, beta, &enc.field_of, enc.value_matrix)?;
        sv.beta = Some(beta);
        sv.alpha_fused = fused;
        sv.c_w = c_w;
        sv.c_t = Some(c_t);
        tape.concat(&[emb, c_t, c_w])?
    } else {
        let c_w = tape.vecmat(alpha, enc.value_matrix)?;
        sv.c_w = c_w;
        tape.concat(&[emb, c_w])?
    };

    let s = gru_step(tape, &vars.decoder, input, s_prev)?;
    let logits = tape.matvec(vars.out_w, s)?;
    let logits = tape.add(logits, vars.out_b)?;
    let logprobs = tape.log_softmax(logits);
    Ok(StepOutput {
        state: DecoderState {
            s,
            prev_token: state.prev_token,
            gated,
            t: state.t + 1,
        },
        logprobs,
        vars: sv,
    })
}

/// Numbers recorded for one step, before the token is chosen.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepInfo {
    pub attention: StepAttention,
    pub f_mean: Option<f64>,
    pub gamma_mean: Option<f64>,
}

impl StepInfo {
    pub fn from_vars(tape: &Tape, v: &StepVars) -> Self {
        let data = |x: Var| tape.value(x).data().to_vec();
        let mean = |x: Var| {
            let d = tape.value(x).data();
            d.iter().sum::<f64>() / d.len() as f64
        };
        StepInfo {
            attention: StepAttention {
                beta: v.beta.map(data).unwrap_or_default(),
                alpha: data(v.alpha),
                alpha_fused: data(v.alpha_fused),
                c_g: v.c_g.map(data).unwrap_or_default(),
                c_w: data(v.c_w),
            },
            f_mean: v.f.map(mean),
            gamma_mean: v.gamma.map(mean),
        }
    }
}

/// Per emitted token: step index, token, its log-probability and the
/// attention that produced it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecoderStepTrace {
    pub t: usize,
    pub token: usize,
    pub logprob: f64,
    pub attention: StepAttention,
    pub f_mean: Option<f64>,
    pub gamma_mean: Option<f64>,
}

/// Inference session: one infobox encoded once on a frozen tape.
pub struct Session<'m> {
    model: &'m Model,
    tape: Tape,
    vars: ModelVars,
    encoded: EncodedInfobox,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m Model, ids: &InfoboxIds) -> Result<Self, ModelError> {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false)?;
        let encoded = encode(&mut tape, &vars, &model.config, ids)?;
        Ok(Session {
            model,
            tape,
            vars,
            encoded,
        })
    }

    pub fn encoded(&self) -> &EncodedInfobox {
        &self.encoded
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }
}

impl StepModel for Session<'_> {
    type State = DecoderState;
    type Info = StepInfo;

    fn start(&mut self) -> Result<DecoderState, ModelError> {
        initial_state(
            &mut self.tape,
            &self.vars,
            &self.model.config,
            &self.encoded,
        )
    }

    fn step(
        &mut self,
        state: &DecoderState,
        prev: usize,
    ) -> Result<(DecoderState, Vec<f64>, StepInfo), ModelError> {
        let out = decode_step(
            &mut self.tape,
            &self.vars,
            &self.model.config,
            &self.encoded,
            &state.advance(prev),
        )?;
        let info = StepInfo::from_vars(&self.tape, &out.vars);
        Ok((
            out.state,
            self.tape.value(out.logprobs).data().to_vec(),
            info,
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenerateOptions {
    pub beam: usize,
    pub max_len: usize,
    pub copy: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            beam: 1,
            max_len: DEFAULT_MAX_LEN,
            copy: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Generation {
    /// Output words, `</s>` excluded, after optional copying.
    pub words: Vec<String>,
    /// Raw token ids, `</s>` excluded.
    pub tokens: Vec<usize>,
    /// One entry per emitted token, the final `</s>` included when produced.
    pub traces: Vec<DecoderStepTrace>,
    pub score: f64,
    /// Attention positions: value surfaces (or `None` at flat delimiters).
    pub surfaces: Vec<Option<String>>,
    pub field_of: Vec<usize>,
    pub num_fields: usize,
}

/// Encodes `infobox`, searches, and optionally replaces `<unk>` by copying.
pub fn generate(
    model: &Model,
    vocab: &Vocabulary,
    infobox: &Infobox,
    opts: &GenerateOptions,
) -> Result<Generation, ModelError> {
    let ids = InfoboxIds::new(infobox, vocab)?;
    let mut session = Session::new(model, &ids)?;
    let hyp = if opts.beam <= 1 {
        greedy_decode(&mut session, opts.max_len)?
    } else {
        beam_decode(&mut session, opts.beam, opts.max_len)?
    };
    let score = hyp.score();
    let traces: Vec<DecoderStepTrace> = hyp
        .tokens
        .iter()
        .zip(&hyp.logprobs)
        .zip(hyp.infos)
        .enumerate()
        .map(|(t, ((&token, &logprob), info))| DecoderStepTrace {
            t: t + 1,
            token,
            logprob,
            attention: info.attention,
            f_mean: info.f_mean,
            gamma_mean: info.gamma_mean,
        })
        .collect();
    let mut tokens = hyp.tokens;
    if tokens.last() == Some(&Vocabulary::EOS) {
        tokens.pop();
    }
    let enc = session.encoded();
    let words = if opts.copy {
        copy_postprocess(&tokens, &traces, &enc.surfaces, vocab)
    } else {
        vocab.decode(&tokens)
    };
    Ok(Generation {
        words,
        tokens,
        traces,
        score,
        surfaces: enc.surfaces.clone(),
        field_of: enc.field_of.clone(),
        num_fields: enc.num_fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Field;

    fn vocab() -> Vocabulary {
        Vocabulary::from_parts(
            ["ann", "lee", "poet", "is", "a", "."]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            vec!["name".into(), "job".into()],
        )
    }

    fn infobox() -> Infobox {
        Infobox::new(vec![
            Field::new("name", &["ann", "lee"]),
            Field::new("job", &["poet"]),
        ])
    }

    fn configs() -> Vec<ModelConfig> {
        let base = ModelConfig::new(&vocab(), 4, 5);
        let mut prev = base.clone();
        prev.gating_variant = crate::model::GatingVariant::Prev;
        let mut bif = base.clone();
        bif.gating = false;
        let mut basic = bif.clone();
        basic.bifocal = false;
        vec![base, prev, bif, basic]
    }

    fn one_step(model: &Model, ib: &Infobox) -> (Vec<f64>, StepInfo) {
        let ids = InfoboxIds::new(ib, &vocab()).unwrap();
        let mut s = Session::new(model, &ids).unwrap();
        let st = s.start().unwrap();
        let (_, lp, info) = s.step(&st, Vocabulary::BOS).unwrap();
        (lp, info)
    }

    #[test]
    fn step_distribution_is_normalized_and_deterministic() {
        for cfg in configs() {
            let m = Model::new(cfg, 3).unwrap();
            let (lp, info) = one_step(&m, &infobox());
            let z: f64 = lp.iter().map(|x| x.exp()).sum();
            assert!((z - 1.0).abs() < 1e-9);
            assert_eq!(one_step(&m, &infobox()), (lp, info.clone()));
            let fused: f64 = info.attention.alpha_fused.iter().sum();
            assert!((fused - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn singleton_infobox_has_unit_attention() {
        let m = Model::new(configs().remove(0), 3).unwrap();
        let ib = Infobox::new(vec![Field::new("name", &["ann"])]);
        let (_, info) = one_step(&m, &ib);
        assert_eq!(info.attention.beta, vec![1.0]);
        assert_eq!(info.attention.alpha_fused, vec![1.0]);
        assert!(info.f_mean.is_some() && info.gamma_mean.is_some());
    }

    #[test]
    fn plain_model_attends_over_flat_tokens() {
        let m = Model::new(configs().pop().unwrap(), 3).unwrap();
        let (_, info) = one_step(&m, &infobox());
        assert!(info.attention.beta.is_empty());
        assert_eq!(info.attention.alpha.len(), 5);
    }

    #[test]
    fn max_len_bounds_output() {
        let m = Model::new(configs().remove(0), 3).unwrap();
        let opts = GenerateOptions {
            beam: 1,
            max_len: 1,
            copy: false,
        };
        let g = generate(&m, &vocab(), &infobox(), &opts).unwrap();
        assert_eq!(g.traces.len(), 1);
        assert!(g.tokens.len() <= 1);
    }

    #[test]
    fn immediate_eos_gives_empty_description() {
        let mut m = Model::new(configs().remove(0), 3).unwrap();
        m.params.get_mut("dec.out.b").unwrap().data_mut()[Vocabulary::EOS] = 50.0;
        let g = generate(&m, &vocab(), &infobox(), &GenerateOptions::default()).unwrap();
        assert!(g.words.is_empty());
        assert_eq!(g.traces.len(), 1);
        assert_eq!(g.traces[0].token, Vocabulary::EOS);
    }

    #[test]
    fn copy_removes_every_unk() {
        let mut m = Model::new(configs().remove(0), 3).unwrap();
        m.params.get_mut("dec.out.b").unwrap().data_mut()[Vocabulary::UNK] = 5.0;
        let opts = GenerateOptions {
            beam: 1,
            max_len: 6,
            copy: true,
        };
        let g = generate(&m, &vocab(), &infobox(), &opts).unwrap();
        assert!(g.tokens.contains(&Vocabulary::UNK));
        assert!(g.words.iter().all(|w| w != "<unk>"));
    }

    #[test]
    fn beam_one_is_greedy_and_wider_beams_score_no_worse() {
        for cfg in configs() {
            let m = Model::new(cfg, 5).unwrap();
            let run = |beam| {
                let opts = GenerateOptions {
                    beam,
                    max_len: 8,
                    copy: false,
                };
                generate(&m, &vocab(), &infobox(), &opts).unwrap()
            };
            let greedy = run(1);
            let ids = InfoboxIds::new(&infobox(), &vocab()).unwrap();
            let mut s = Session::new(&m, &ids).unwrap();
            let b1 = beam_decode(&mut s, 1, 8).unwrap();
            assert_eq!(
                b1.tokens.iter().filter(|&&t| t != Vocabulary::EOS).count(),
                greedy.tokens.len()
            );
            assert!((b1.score() - greedy.score).abs() < 1e-12);
            assert!(run(3).score >= greedy.score - 1e-12);
        }
    }
}
