use std::collections::HashSet;
use std::io::{self, Write};

use serde::Serialize;

use crate::data::Vocabulary;

use super::DecoderStepTrace;

fn join(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:.6}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

/// Tab-separated trace, one row per step:
/// `t token logprob beta alpha_fused f_mean gamma_mean`, with the weight
/// vectors comma-separated.
pub fn write_trace_tsv<W: Write>(
    mut w: W,
    traces: &[DecoderStepTrace],
    vocab: &Vocabulary,
) -> io::Result<()> {
    writeln!(
        w,
        "t\ttoken\tlogprob\tbeta\talpha_fused\tf_mean\tgamma_mean"
    )?;
    for tr in traces {
        writeln!(
            w,
            "{}\t{}\t{:.6}\t{}\t{}\t{}\t{}",
            tr.t,
            vocab.word(tr.token),
            tr.logprob,
            join(&tr.attention.beta),
            join(&tr.attention.alpha_fused),
            opt(tr.f_mean),
            opt(tr.gamma_mean),
        )?;
    }
    Ok(())
}

/// Steps × fields matrix of macro weights.
pub fn beta_matrix(traces: &[DecoderStepTrace]) -> Vec<Vec<f64>> {
    traces.iter().map(|t| t.attention.beta.clone()).collect()
}

/// Steps × fields matrix of fused weights summed within each field.
pub fn field_mass_matrix(
    traces: &[DecoderStepTrace],
    field_of: &[usize],
    num_fields: usize,
) -> Vec<Vec<f64>> {
    traces
        .iter()
        .map(|t| t.attention.field_mass(field_of, num_fields))
        .collect()
}

/// Binary grayscale heatmap; rows are steps, columns fields, 255 = weight 1.
pub fn write_pgm<W: Write>(mut w: W, matrix: &[Vec<f64>]) -> io::Result<()> {
    let height = matrix.len();
    let width = matrix.first().map_or(0, Vec::len);
    write!(w, "P5\n{width} {height}\n255\n")?;
    let mut bytes = Vec::with_capacity(width * height);
    for row in matrix {
        for &v in row {
            bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    w.write_all(&bytes)
}

/// Index of the largest entry of each row (first on ties).
pub fn argmax_fields(matrix: &[Vec<f64>]) -> Vec<usize> {
    matrix
        .iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StayOnStats {
    /// Mean length of runs of consecutive steps with the same argmax field.
    pub mean_run_length: f64,
    /// Share of attended fields that become argmax again after being left.
    pub revisit_fraction: f64,
}

pub fn stay_on_stats(argmax: &[usize]) -> StayOnStats {
    if argmax.is_empty() {
        return StayOnStats::default();
    }
    let mut runs: Vec<usize> = Vec::new();
    for (i, &f) in argmax.iter().enumerate() {
        if i == 0 || argmax[i - 1] != f {
            runs.push(f);
        }
    }
    let mut seen = HashSet::new();
    let mut revisited = HashSet::new();
    for &f in &runs {
        if !seen.insert(f) {
            revisited.insert(f);
        }
    }
    StayOnStats {
        mean_run_length: argmax.len() as f64 / runs.len() as f64,
        revisit_fraction: revisited.len() as f64 / seen.len() as f64,
    }
}
