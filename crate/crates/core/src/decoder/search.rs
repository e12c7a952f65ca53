use std::cmp::Ordering;

use crate::data::Vocabulary;
use crate::error::ModelError;

/// Next state, log-probabilities over the vocabulary, and step info.
pub type StepResult<S, I> = Result<(S, Vec<f64>, I), ModelError>;

/// Anything that yields next-token log-probabilities from a state.
pub trait StepModel {
    type State: Clone;
    type Info: Clone;

    fn start(&mut self) -> Result<Self::State, ModelError>;

    /// Consumes `prev` in `state`; returns the new state, log-probabilities
    /// over the vocabulary and per-step information.
    fn step(&mut self, state: &Self::State, prev: usize) -> StepResult<Self::State, Self::Info>;

    fn bos(&self) -> usize {
        Vocabulary::BOS
    }

    fn eos(&self) -> usize {
        Vocabulary::EOS
    }
}

/// A decoded sequence. `tokens` ends with `</s>` when `finished`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis<I> {
    pub tokens: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub infos: Vec<I>,
    pub finished: bool,
}

impl<I> Hypothesis<I> {
    fn empty() -> Self {
        Hypothesis {
            tokens: Vec::new(),
            logprobs: Vec::new(),
            infos: Vec::new(),
            finished: false,
        }
    }

    pub fn total(&self) -> f64 {
        self.logprobs.iter().sum()
    }

    /// Mean log-probability per scored token.
    pub fn score(&self) -> f64 {
        if self.logprobs.is_empty() {
            return f64::NEG_INFINITY;
        }
        self.total() / self.logprobs.len() as f64
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Highest log-probability token at every step (lowest id on ties), until
/// `</s>` or `max_len` tokens.
pub fn greedy_decode<M: StepModel>(
    model: &mut M,
    max_len: usize,
) -> Result<Hypothesis<M::Info>, ModelError> {
    let eos = model.eos();
    let mut state = model.start()?;
    let mut prev = model.bos();
    let mut hyp = Hypothesis::empty();
    for _ in 0..max_len.max(1) {
        let (next, lp, info) = model.step(&state, prev)?;
        let tok = argmax(&lp);
        hyp.tokens.push(tok);
        hyp.logprobs.push(lp[tok]);
        hyp.infos.push(info);
        if tok == eos {
            hyp.finished = true;
            break;
        }
        state = next;
        prev = tok;
    }
    Ok(hyp)
}

/// Indices of the `k` largest entries, ties to the lower index.
fn top_k(xs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| {
        xs[b]
            .partial_cmp(&xs[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Beam search ranked by length-normalized log-probability.
///
/// Hypotheses leave the beam when they emit `</s>`; the surviving ones are
/// added unfinished after `max_len` steps. The greedy path is always part of
/// the final pool, so the result never scores below it.
pub fn beam_decode<M: StepModel>(
    model: &mut M,
    width: usize,
    max_len: usize,
) -> Result<Hypothesis<M::Info>, ModelError> {
    let width = width.max(1);
    let max_len = max_len.max(1);
    let eos = model.eos();
    let start = model.start()?;
    let mut beams: Vec<(Hypothesis<M::Info>, M::State, usize)> =
        vec![(Hypothesis::empty(), start, model.bos())];
    let mut pool: Vec<Hypothesis<M::Info>> = Vec::new();

    for _ in 0..max_len {
        struct Cand<S, I> {
            beam: usize,
            token: usize,
            total: f64,
            lp: f64,
            state: S,
            info: I,
        }
        let mut cands = Vec::new();
        for (b, (hyp, state, prev)) in beams.iter().enumerate() {
            let (next, lp, info) = model.step(state, *prev)?;
            let base = hyp.total();
            for tok in top_k(&lp, width) {
                cands.push(Cand {
                    beam: b,
                    token: tok,
                    total: base + lp[tok],
                    lp: lp[tok],
                    state: next.clone(),
                    info: info.clone(),
                });
            }
        }
        cands.sort_by(|a, b| {
            b.total
                .partial_cmp(&a.total)
                .unwrap_or(Ordering::Equal)
                .then(a.beam.cmp(&b.beam))
                .then(a.token.cmp(&b.token))
        });
        cands.truncate(width);

        let mut next_beams = Vec::with_capacity(width);
        for c in cands {
            let mut hyp = beams[c.beam].0.clone();
            hyp.tokens.push(c.token);
            hyp.logprobs.push(c.lp);
            hyp.infos.push(c.info);
            if c.token == eos {
                hyp.finished = true;
                pool.push(hyp);
            } else {
                next_beams.push((hyp, c.state, c.token));
            }
        }
        beams = next_beams;
        if beams.is_empty() {
            break;
        }
    }
    pool.extend(beams.into_iter().map(|(h, _, _)| h));
    pool.push(greedy_decode(model, max_len)?);

    let mut best = 0;
    for (i, h) in pool.iter().enumerate() {
        if h.score() > pool[best].score() {
            best = i;
        }
    }
    Ok(pool.swap_remove(best))
}
