//! GRU cells, bidirectional runs and embedding lookup on top of the tape.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::Vocabulary;
use crate::error::ModelError;
use crate::params::BoundParams;

/// Tape handles for one GRU cell.
///
/// Gate weights are stacked as `[reset; update; candidate]`:
/// `w_x: [3h, d_in]`, `w_h: [3h, h]`, `b_x, b_h: [3h]`.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub w_x: Var,
    pub w_h: Var,
    pub b_x: Var,
    pub b_h: Var,
    pub hidden: usize,
}

impl GruParams {
    pub fn shapes(prefix: &str, d_in: usize, hidden: usize) -> Vec<(String, Vec<usize>)> {
        vec![
            (format!("{prefix}.w_x"), vec![3 * hidden, d_in]),
            (format!("{prefix}.w_h"), vec![3 * hidden, hidden]),
            (format!("{prefix}.b_x"), vec![3 * hidden]),
            (format!("{prefix}.b_h"), vec![3 * hidden]),
        ]
    }

    pub fn bind(tape: &Tape, bound: &BoundParams, prefix: &str) -> Result<Self, ModelError> {
        let w_h = bound.get(&format!("{prefix}.w_h"))?;
        Ok(GruParams {
            w_x: bound.get(&format!("{prefix}.w_x"))?,
            w_h,
            b_x: bound.get(&format!("{prefix}.b_x"))?,
            b_h: bound.get(&format!("{prefix}.b_h"))?,
            hidden: tape.value(w_h).cols(),
        })
    }
}

/// One GRU step:
///
/// ```text
/// r = σ(W_r x + b_r + U_r h + c_r)
/// z = σ(W_z x + b_z + U_z h + c_z)
/// n = tanh(W_n x + b_n + r ⊙ (U_n h + c_n))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
pub fn gru_step(tape: &mut Tape, p: &GruParams, x: Var, h: Var) -> Result<Var, ModelError> {
    let d = p.hidden;
    let wx = tape.matvec(p.w_x, x)?;
    let gx = tape.add(wx, p.b_x)?;
    let wh = tape.matvec(p.w_h, h)?;
    let gh = tape.add(wh, p.b_h)?;

    let (xr, hr) = (tape.slice(gx, 0, d)?, tape.slice(gh, 0, d)?);
    let r_pre = tape.add(xr, hr)?;
    let r = tape.sigmoid(r_pre);

    let (xz, hz) = (tape.slice(gx, d, d)?, tape.slice(gh, d, d)?);
    let z_pre = tape.add(xz, hz)?;
    let z = tape.sigmoid(z_pre);

    let (xn, hn) = (tape.slice(gx, 2 * d, d)?, tape.slice(gh, 2 * d, d)?);
    let gated = tape.mul(r, hn)?;
    let n_pre = tape.add(xn, gated)?;
    let n = tape.tanh(n_pre);

    let keep = tape.one_minus(z);
    let fresh = tape.mul(keep, n)?;
    let carried = tape.mul(z, h)?;
    Ok(tape.add(fresh, carried)?)
}

/// Runs `p` over `xs` from a zero state; returns every state.
pub fn gru_run(tape: &mut Tape, p: &GruParams, xs: &[Var]) -> Result<Vec<Var>, ModelError> {
    if xs.is_empty() {
        return Err(ModelError::EmptySequence("gru_run"));
    }
    let mut h = tape.constant(Tensor::zeros(&[p.hidden]));
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        h = gru_step(tape, p, x, h)?;
        out.push(h);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct BiGruOutput {
    /// `[fwd_i; bwd_i]` for each position, size `2h`.
    pub states: Vec<Var>,
    /// `[fwd_last; bwd_first]`: both directions after consuming the whole sequence.
    pub final_state: Var,
}

/// Bidirectional run; the backward direction reads `xs` right to left.
pub fn bigru_run(
    tape: &mut Tape,
    fwd: &GruParams,
    bwd: &GruParams,
    xs: &[Var],
) -> Result<BiGruOutput, ModelError> {
    if xs.is_empty() {
        return Err(ModelError::EmptySequence("bigru_run"));
    }
    let forward = gru_run(tape, fwd, xs)?;
    let reversed: Vec<Var> = xs.iter().rev().copied().collect();
    let mut backward = gru_run(tape, bwd, &reversed)?;
    backward.reverse();

    let states = forward
        .iter()
        .zip(&backward)
        .map(|(&f, &b)| tape.concat(&[f, b]))
        .collect::<Result<Vec<_>, _>>()?;
    let final_state = tape.concat(&[*forward.last().expect("nonempty"), backward[0]])?;
    Ok(BiGruOutput {
        states,
        final_state,
    })
}

/// Looks up one row of `table` per id.
pub fn embed(tape: &mut Tape, table: Var, ids: &[usize]) -> Result<Vec<Var>, ModelError> {
    let size = tape.value(table).rows();
    ids.iter()
        .map(|&id| {
            if id >= size {
                Err(ModelError::TokenOutOfRange { id, size })
            } else {
                Ok(tape.row(table, id)?)
            }
        })
        .collect()
}

/// Overwrites rows of `table` with vectors from a whitespace-separated text
/// file (`word v1 v2 ... v_d` per line). Words missing from `vocab` are
/// ignored. Returns the number of rows written.
pub fn load_pretrained(
    path: &Path,
    vocab: &Vocabulary,
    table: &mut Tensor,
) -> Result<usize, ModelError> {
    let file =
        File::open(path).map_err(|e| ModelError::Embeddings(format!("{}: {e}", path.display())))?;
    let dim = table.cols();
    let mut written = 0;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ModelError::Embeddings(e.to_string()))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values = parts
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ModelError::Embeddings(format!("line {}: {e}", lineno + 1)))?;
        if values.len() != dim {
            return Err(ModelError::Embeddings(format!(
                "line {}: expected {dim} values, found {}",
                lineno + 1,
                values.len()
            )));
        }
        if let Some(id) = vocab.word_id(word) {
            if id == Vocabulary::PAD {
                continue;
            }
            table.row_mut(id).copy_from_slice(&values);
            written += 1;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check_many;
    use crate::params::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar-loop GRU written straight from the recurrence.
    fn gru_oracle(store: &ParamStore, prefix: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
        let wx = store.get(&format!("{prefix}.w_x")).unwrap();
        let wh = store.get(&format!("{prefix}.w_h")).unwrap();
        let bx = store.get(&format!("{prefix}.b_x")).unwrap().data();
        let bh = store.get(&format!("{prefix}.b_h")).unwrap().data();
        let d = h.len();
        let lin = |m: &Tensor, v: &[f64], row: usize| -> f64 {
            let mut s = 0.0;
            for (k, vk) in v.iter().enumerate() {
                s += m.row(row)[k] * vk;
            }
            s
        };
        let mut out = vec![0.0; d];
        for i in 0..d {
            let r = sig(lin(wx, x, i) + bx[i] + lin(wh, h, i) + bh[i]);
            let z = sig(lin(wx, x, d + i) + bx[d + i] + lin(wh, h, d + i) + bh[d + i]);
            let n = (lin(wx, x, 2 * d + i)
                + bx[2 * d + i]
                + r * (lin(wh, h, 2 * d + i) + bh[2 * d + i]))
                .tanh();
            out[i] = (1.0 - z) * n + z * h[i];
        }
        out
    }

    fn random_store(seed: u64, d_in: usize, d_h: usize) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shapes = GruParams::shapes("f", d_in, d_h);
        shapes.extend(GruParams::shapes("b", d_in, d_h));
        ParamStore::init_uniform(&shapes, 0.5, &mut rng)
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let mut store = ParamStore::new();
        for (n, s) in GruParams::shapes("g", 3, 2) {
            store.insert(n, Tensor::zeros(&s));
        }
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let p = GruParams::bind(&tape, &bound, "g").unwrap();
        let x = tape.constant(Tensor::vector(vec![0.7, -2.0, 1.0]));
        let h = tape.constant(Tensor::zeros(&[2]));
        let out = gru_step(&mut tape, &p, x, h).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_update_gate_copies_state() {
        let mut store = random_store(1, 3, 2);
        // update-gate bias rows are [d, 2d)
        let b = store.get_mut("f.b_x").unwrap();
        b.data_mut()[2] = 60.0;
        b.data_mut()[3] = 60.0;
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let p = GruParams::bind(&tape, &bound, "f").unwrap();
        let x = tape.constant(Tensor::vector(vec![0.3, 0.1, -0.2]));
        let h = tape.constant(Tensor::vector(vec![0.4, -0.9]));
        let out = gru_step(&mut tape, &p, x, h).unwrap();
        assert_eq!(tape.value(out).data(), &[0.4, -0.9]);
    }

    #[test]
    fn step_matches_scalar_oracle() {
        let store = random_store(2, 4, 4);
        let x = [0.1, -0.5, 0.9, 0.3];
        let h = [0.2, -0.1, 0.05, -0.7];
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let p = GruParams::bind(&tape, &bound, "f").unwrap();
        let xv = tape.constant(Tensor::vector(x.to_vec()));
        let hv = tape.constant(Tensor::vector(h.to_vec()));
        let out = gru_step(&mut tape, &p, xv, hv).unwrap();
        let expect = gru_oracle(&store, "f", &x, &h);
        for (a, b) in tape.value(out).data().iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            assert!(a.abs() < 1.0);
        }
    }

    #[test]
    fn step_gradients_match_finite_differences() {
        let store = random_store(3, 3, 2);
        let mut points: Vec<Tensor> = ["f.w_x", "f.w_h", "f.b_x", "f.b_h"]
            .iter()
            .map(|n| store.get(n).unwrap().clone())
            .collect();
        points.push(Tensor::vector(vec![0.2, -0.4, 0.8]));
        points.push(Tensor::vector(vec![-0.3, 0.6]));
        let report = finite_diff_check_many(
            |tape, v| {
                let p = GruParams {
                    w_x: v[0],
                    w_h: v[1],
                    b_x: v[2],
                    b_h: v[3],
                    hidden: 2,
                };
                let h = gru_step(tape, &p, v[4], v[5]).map_err(|e| match e {
                    ModelError::Autodiff(a) => a,
                    other => panic!("{other}"),
                })?;
                let w = tape.constant(Tensor::vector(vec![0.7, -1.3]));
                tape.dot(h, w)
            },
            &points,
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    fn run_bigru(store: &ParamStore, fwd: &str, bwd: &str, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let f = GruParams::bind(&tape, &bound, fwd).unwrap();
        let b = GruParams::bind(&tape, &bound, bwd).unwrap();
        let vars: Vec<Var> = xs
            .iter()
            .map(|x| tape.constant(Tensor::vector(x.clone())))
            .collect();
        let out = bigru_run(&mut tape, &f, &b, &vars).unwrap();
        out.states
            .iter()
            .map(|&s| tape.value(s).data().to_vec())
            .collect()
    }

    fn unidirectional(store: &ParamStore, prefix: &str, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut h = vec![0.0; 3];
        xs.iter()
            .map(|x| {
                h = gru_oracle(store, prefix, x, &h);
                h.clone()
            })
            .collect()
    }

    #[test]
    fn bigru_is_two_unidirectional_runs() {
        let store = random_store(4, 2, 3);
        let xs = vec![vec![0.1, 0.2], vec![-0.4, 0.9], vec![0.5, -0.5]];
        let out = run_bigru(&store, "f", "b", &xs);
        let fwd = unidirectional(&store, "f", &xs);
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let mut bwd = unidirectional(&store, "b", &rev);
        bwd.reverse();
        for i in 0..3 {
            let expect: Vec<f64> = fwd[i].iter().chain(&bwd[i]).copied().collect();
            for (a, b) in out[i].iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn bigru_single_element() {
        let store = random_store(5, 2, 3);
        let xs = vec![vec![0.3, -0.3]];
        let out = run_bigru(&store, "f", "b", &xs);
        let f = gru_oracle(&store, "f", &xs[0], &[0.0; 3]);
        let b = gru_oracle(&store, "b", &xs[0], &[0.0; 3]);
        assert_eq!(out.len(), 1);
        for (a, e) in out[0].iter().zip(f.iter().chain(&b)) {
            assert!((a - e).abs() <= 1e-12);
        }
    }

    fn half_swap(v: &[f64]) -> Vec<f64> {
        let h = v.len() / 2;
        v[h..].iter().chain(&v[..h]).copied().collect()
    }

    #[test]
    fn palindrome_with_shared_params_is_reverse_symmetric() {
        let store = random_store(6, 2, 3);
        let xs = vec![vec![0.1, 0.2], vec![-0.4, 0.9], vec![0.1, 0.2]];
        let out = run_bigru(&store, "f", "f", &xs);
        let n = out.len();
        for i in 0..n {
            let mirrored = half_swap(&out[n - 1 - i]);
            for (a, b) in out[i].iter().zip(&mirrored) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn reversed_input_with_swapped_directions() {
        let store = random_store(7, 2, 3);
        let xs = vec![
            vec![0.1, 0.2],
            vec![-0.4, 0.9],
            vec![0.7, -0.1],
            vec![0.0, 0.3],
        ];
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let a = run_bigru(&store, "f", "b", &xs);
        let b = run_bigru(&store, "b", "f", &rev);
        let n = a.len();
        for i in 0..n {
            let mirrored = half_swap(&b[n - 1 - i]);
            for (x, y) in a[i].iter().zip(&mirrored) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let store = random_store(8, 2, 3);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let f = GruParams::bind(&tape, &bound, "f").unwrap();
        assert!(matches!(
            bigru_run(&mut tape, &f, &f, &[]),
            Err(ModelError::EmptySequence(_))
        ));
    }

    #[test]
    fn embedding_gradient_accumulates_repeated_ids() {
        let mut tape = Tape::new();
        let table = tape.leaf(Tensor::matrix(3, 2, vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]).unwrap());
        let rows = embed(&mut tape, table, &[1, 1, 2]).unwrap();
        let s0 = tape.sum(rows[0]);
        let s1 = tape.sum(rows[1]);
        let s2 = tape.sum(rows[2]);
        let a = tape.add(s0, s1).unwrap();
        let loss = tape.add(a, s2).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(
            grads.get(table).unwrap().data(),
            &[0.0, 0.0, 2.0, 2.0, 1.0, 1.0]
        );
        assert_eq!(tape.value(rows[0]).data(), &[1.0, 2.0]);
    }

    #[test]
    fn pad_row_reads_zero_and_out_of_range_fails() {
        let mut tape = Tape::new();
        let table = tape.leaf(Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap());
        let rows = embed(&mut tape, table, &[Vocabulary::PAD]).unwrap();
        assert_eq!(tape.value(rows[0]).data(), &[0.0, 0.0]);
        assert!(matches!(
            embed(&mut tape, table, &[2]),
            Err(ModelError::TokenOutOfRange { id: 2, size: 2 })
        ));
    }

    #[test]
    fn pretrained_rows_come_from_file() {
        let vocab = Vocabulary::from_parts(vec!["john".into(), "doe".into()], vec!["name".into()]);
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "doe 0.5 -0.25 1").unwrap();
        writeln!(file, "unseen 9 9 9").unwrap();
        let mut table = Tensor::zeros(&[vocab.len(), 3]);
        let n = load_pretrained(file.path(), &vocab, &mut table).unwrap();
        assert_eq!(n, 1);
        let id = vocab.word_id("doe").unwrap();
        assert_eq!(table.row(id), &[0.5, -0.25, 1.0]);

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "doe 0.5").unwrap();
        assert!(load_pretrained(bad.path(), &vocab, &mut table).is_err());
    }
}
