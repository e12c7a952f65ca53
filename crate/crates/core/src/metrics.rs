//! Corpus-level BLEU-4, NIST-4 and ROUGE-4.

use std::collections::HashMap;

use thiserror::Error;

pub const MAX_N: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("no hypotheses to score")]
    EmptyCorpus,
    #[error("pair {0} has no references")]
    NoReferences(usize),
    #[error("no scorable references (all shorter than {MAX_N} tokens)")]
    NoScorableReferences,
}

/// A hypothesis with one or more references.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pub hypothesis: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn new(hypothesis: Vec<String>, references: Vec<Vec<String>>) -> Self {
        EvalPair {
            hypothesis,
            references,
        }
    }

    /// Whitespace-tokenizes a hypothesis and a single reference.
    pub fn from_text(hypothesis: &str, reference: &str) -> Self {
        let tok = |s: &str| s.split_whitespace().map(String::from).collect();
        EvalPair::new(tok(hypothesis), vec![tok(reference)])
    }
}

fn validate(pairs: &[EvalPair]) -> Result<(), MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if let Some(i) = pairs.iter().position(|p| p.references.is_empty()) {
        return Err(MetricError::NoReferences(i));
    }
    Ok(())
}

type Counts<'a> = HashMap<&'a [String], usize>;

fn ngrams(tokens: &[String], n: usize) -> Counts<'_> {
    let mut c = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *c.entry(w).or_insert(0) += 1;
        }
    }
    c
}

/// Per-n-gram maximum count over the references.
fn max_ref_counts(refs: &[Vec<String>], n: usize) -> Counts<'_> {
    let mut out: Counts = HashMap::new();
    for r in refs {
        for (g, c) in ngrams(r, n) {
            let e = out.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    out
}

fn clipped_matches(hyp: &Counts, refs: &Counts) -> usize {
    hyp.iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum()
}

/// Reference length closest to `c`, shorter on ties.
fn closest_ref_len(c: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

/// Corpus BLEU-4 in `[0, 100]`, no smoothing.
pub fn bleu4(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    validate(pairs)?;
    let mut matches = [0usize; MAX_N];
    let mut totals = [0usize; MAX_N];
    let (mut c, mut r) = (0usize, 0usize);
    for p in pairs {
        c += p.hypothesis.len();
        r += closest_ref_len(p.hypothesis.len(), &p.references);
        for n in 1..=MAX_N {
            let hyp = ngrams(&p.hypothesis, n);
            matches[n - 1] += clipped_matches(&hyp, &max_ref_counts(&p.references, n));
            totals[n - 1] += p.hypothesis.len().saturating_sub(n - 1);
        }
    }
    if (0..MAX_N).any(|i| totals[i] == 0 || matches[i] == 0) {
        return Ok(0.0);
    }
    let log_mean = (0..MAX_N)
        .map(|i| (matches[i] as f64 / totals[i] as f64).ln())
        .sum::<f64>()
        / MAX_N as f64;
    let bp = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * bp * log_mean.exp())
}

/// `β` such that the brevity factor is 1/2 at a length ratio of 2/3.
pub fn nist_beta() -> f64 {
    0.5f64.ln() / 1.5f64.ln().powi(2)
}

/// Corpus NIST-4.
///
/// An n-gram's information weight is `log2(count(prefix) / count(ngram))`
/// over all references (the prefix of a unigram is the empty string, whose
/// count is the number of reference words). Matched hypothesis n-grams,
/// clipped by their maximum reference count, contribute their weight;
/// each order is normalized by the number of hypothesis n-grams. The brevity
/// factor uses the mean reference length per segment.
pub fn nist4(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    validate(pairs)?;
    let mut ref_counts: Vec<Counts> = vec![HashMap::new(); MAX_N];
    let mut ref_words = 0usize;
    for p in pairs {
        for r in &p.references {
            ref_words += r.len();
            for n in 1..=MAX_N {
                for (g, c) in ngrams(r, n) {
                    *ref_counts[n - 1].entry(g).or_insert(0) += c;
                }
            }
        }
    }
    let info = |g: &[String]| -> f64 {
        let n = g.len();
        let count = ref_counts[n - 1].get(g).copied().unwrap_or(0);
        if count == 0 {
            return 0.0;
        }
        let prefix = if n == 1 {
            ref_words
        } else {
            ref_counts[n - 2].get(&g[..n - 1]).copied().unwrap_or(0)
        };
        (prefix as f64 / count as f64).log2()
    };

    let mut gain = [0.0f64; MAX_N];
    let mut hyp_total = [0usize; MAX_N];
    let (mut c, mut r) = (0.0f64, 0.0f64);
    for p in pairs {
        c += p.hypothesis.len() as f64;
        r += p.references.iter().map(Vec::len).sum::<usize>() as f64 / p.references.len() as f64;
        for n in 1..=MAX_N {
            let refs = max_ref_counts(&p.references, n);
            for (g, hc) in ngrams(&p.hypothesis, n) {
                let m = hc.min(refs.get(g).copied().unwrap_or(0));
                if m > 0 {
                    gain[n - 1] += m as f64 * info(g);
                }
            }
            hyp_total[n - 1] += p.hypothesis.len().saturating_sub(n - 1);
        }
    }
    let score: f64 = (0..MAX_N)
        .filter(|&i| hyp_total[i] > 0)
        .map(|i| gain[i] / hyp_total[i] as f64)
        .sum();
    let ratio = if r > 0.0 { (c / r).min(1.0) } else { 1.0 };
    let bp = if ratio <= 0.0 {
        0.0
    } else {
        (nist_beta() * ratio.ln().powi(2)).exp()
    };
    Ok(score * bp)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RougeScore {
    /// Recall (or F1) in `[0, 100]`.
    pub score: f64,
    /// References skipped for having fewer than four tokens.
    pub skipped: usize,
}

/// Corpus ROUGE-4: clipped 4-gram hits over all reference 4-grams,
/// micro-averaged. With `f1`, the harmonic mean with the matching precision.
pub fn rouge4_detailed(pairs: &[EvalPair], f1: bool) -> Result<RougeScore, MetricError> {
    validate(pairs)?;
    let (mut hits, mut ref_total, mut hyp_total, mut skipped) = (0usize, 0usize, 0usize, 0usize);
    for p in pairs {
        let hyp = ngrams(&p.hypothesis, MAX_N);
        let hyp_len = p.hypothesis.len().saturating_sub(MAX_N - 1);
        for r in &p.references {
            if r.len() < MAX_N {
                skipped += 1;
                continue;
            }
            let refs = ngrams(r, MAX_N);
            hits += clipped_matches(&hyp, &refs);
            ref_total += r.len() - (MAX_N - 1);
            hyp_total += hyp_len;
        }
    }
    if skipped > 0 {
        log::warn!("rouge-4: skipped {skipped} references shorter than {MAX_N} tokens");
    }
    if ref_total == 0 {
        return Err(MetricError::NoScorableReferences);
    }
    let recall = hits as f64 / ref_total as f64;
    let score = if f1 {
        let precision = if hyp_total == 0 {
            0.0
        } else {
            hits as f64 / hyp_total as f64
        };
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    } else {
        recall
    };
    Ok(RougeScore {
        score: 100.0 * score,
        skipped,
    })
}

/// ROUGE-4 recall.
pub fn rouge4(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    rouge4_detailed(pairs, false).map(|r| r.score)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub bleu: f64,
    pub nist: f64,
    pub rouge: f64,
}

impl std::fmt::Display for Scores {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "BLEU-4 {:.2} NIST-4 {:.2} ROUGE-4 {:.2}",
            self.bleu, self.nist, self.rouge
        )
    }
}

/// All three metrics; ROUGE-4 is reported as 0 when no reference is long
/// enough to score.
pub fn evaluate(pairs: &[EvalPair]) -> Result<Scores, MetricError> {
    let rouge = match rouge4(pairs) {
        Ok(r) => r,
        Err(MetricError::NoScorableReferences) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(Scores {
        bleu: bleu4(pairs)?,
        nist: nist4(pairs)?,
        rouge,
    })
}
