use crate::data::{Vocabulary, UNK_TOKEN};

use super::DecoderStepTrace;

/// Replaces each `<unk>` with the input string that received the largest
/// fused attention at that step (lowest position on ties). Positions without
/// a surface string are never copied.
pub fn copy_postprocess(
    tokens: &[usize],
    traces: &[DecoderStepTrace],
    surfaces: &[Option<String>],
    vocab: &Vocabulary,
) -> Vec<String> {
    tokens
        .iter()
        .enumerate()
        .map(|(t, &tok)| {
            if tok != Vocabulary::UNK {
                return vocab.word(tok).to_string();
            }
            let Some(trace) = traces.get(t) else {
                return UNK_TOKEN.to_string();
            };
            let mut best: Option<(usize, f64)> = None;
            for (j, (&w, s)) in trace.attention.alpha_fused.iter().zip(surfaces).enumerate() {
                if s.is_some() && best.is_none_or(|(_, bw)| w > bw) {
                    best = Some((j, w));
                }
            }
            match best {
                Some((j, _)) => surfaces[j].clone().expect("checked above"),
                None => UNK_TOKEN.to_string(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::StepAttention;

    fn trace(alpha_fused: Vec<f64>) -> DecoderStepTrace {
        DecoderStepTrace {
            t: 0,
            token: 0,
            logprob: 0.0,
            attention: StepAttention {
                alpha_fused,
                ..Default::default()
            },
            f_mean: None,
            gamma_mean: None,
        }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_parts(vec!["v.".into(), "(".into()], vec![])
    }

    fn surfaces(words: &[&str]) -> Vec<Option<String>> {
        words.iter().map(|w| Some(w.to_string())).collect()
    }

    #[test]
    fn known_tokens_are_untouched() {
        let v = vocab();
        let toks = [4, 5];
        let out = copy_postprocess(
            &toks,
            &[trace(vec![1.0]), trace(vec![1.0])],
            &surfaces(&["x"]),
            &v,
        );
        assert_eq!(out, ["v.", "("]);
    }

    #[test]
    fn unk_takes_the_peak_value() {
        let v = vocab();
        let s = surfaces(&["v.", "balakrishnan", "1943"]);
        let out = copy_postprocess(
            &[4, Vocabulary::UNK],
            &[trace(vec![0.9, 0.05, 0.05]), trace(vec![0.1, 0.8, 0.1])],
            &s,
            &v,
        );
        assert_eq!(out, ["v.", "balakrishnan"]);
    }

    #[test]
    fn each_unk_is_resolved_independently() {
        let v = vocab();
        let s = surfaces(&["ann", "lee", "poet"]);
        let traces = [trace(vec![0.7, 0.2, 0.1]), trace(vec![0.1, 0.6, 0.3])];
        let out = copy_postprocess(&[Vocabulary::UNK, Vocabulary::UNK], &traces, &s, &v);
        assert_eq!(out, ["ann", "lee"]);
    }

    #[test]
    fn ties_and_delimiters() {
        let v = vocab();
        let s = vec![None, Some("a".to_string()), Some("b".to_string())];
        let out = copy_postprocess(&[Vocabulary::UNK], &[trace(vec![0.5, 0.25, 0.25])], &s, &v);
        assert_eq!(out, ["a"]);
    }
}
