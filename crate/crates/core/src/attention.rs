//! Additive attention at field (macro) and value (micro) level, and the
//! fusion of the two.

use serde::Serialize;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::error::ModelError;
use crate::params::BoundParams;

/// Denominator floor for fusion.
pub const FUSION_FLOOR: f64 = 1e-30;

/// `score_j = vᵀ tanh(U s + V h_j)` parameters for one level.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    /// `U: [a, d_s]`
    pub state: Var,
    /// `V: [a, d_h]`
    pub key: Var,
    /// `v: [a]`
    pub score: Var,
}

impl AttentionParams {
    pub fn shapes(
        prefix: &str,
        attn_dim: usize,
        rep_dim: usize,
        state_dim: usize,
    ) -> Vec<(String, Vec<usize>)> {
        vec![
            (format!("{prefix}.state"), vec![attn_dim, state_dim]),
            (format!("{prefix}.key"), vec![attn_dim, rep_dim]),
            (format!("{prefix}.score"), vec![attn_dim]),
        ]
    }

    pub fn bind(bound: &BoundParams, prefix: &str) -> Result<Self, ModelError> {
        Ok(AttentionParams {
            state: bound.get(&format!("{prefix}.state"))?,
            key: bound.get(&format!("{prefix}.key"))?,
            score: bound.get(&format!("{prefix}.score"))?,
        })
    }
}

/// Representations to attend over, with their projections `V h_j`
/// computed once per input.
#[derive(Clone, Copy, Debug)]
pub struct AttentionMemory {
    /// `[n, d_h]`
    pub reps: Var,
    /// `[n, a]`
    pub keys: Var,
}

impl AttentionMemory {
    pub fn new(tape: &mut Tape, reps: Var, params: &AttentionParams) -> Result<Self, ModelError> {
        let keys = tape.matmul_nt(reps, params.key)?;
        Ok(AttentionMemory { reps, keys })
    }

    pub fn len(&self, tape: &Tape) -> usize {
        tape.value(self.reps).rows()
    }
}

/// Softmax-normalized scores over `memory`.
pub fn attention_weights(
    tape: &mut Tape,
    memory: &AttentionMemory,
    s_prev: Var,
    params: &AttentionParams,
) -> Result<Var, ModelError> {
    let query = tape.matvec(params.state, s_prev)?;
    let pre = tape.add_row(memory.keys, query)?;
    let act = tape.tanh(pre);
    let scores = tape.matvec(act, params.score)?;
    Ok(tape.softmax(scores))
}

/// Field weights `β` and macro context `c^g = Σ β_i h^g_i`.
pub fn macro_attention(
    tape: &mut Tape,
    fields: &AttentionMemory,
    s_prev: Var,
    params: &AttentionParams,
) -> Result<(Var, Var), ModelError> {
    let beta = attention_weights(tape, fields, s_prev, params)?;
    let context = tape.vecmat(beta, fields.reps)?;
    Ok((beta, context))
}

/// Value weights `α`, normalized jointly over every value of every field.
pub fn micro_attention(
    tape: &mut Tape,
    values: &AttentionMemory,
    s_prev: Var,
    params: &AttentionParams,
) -> Result<Var, ModelError> {
    attention_weights(tape, values, s_prev, params)
}

/// `α'_j = α_j β_F(j) / Σ_l α_l β_F(l)` and `c^w = Σ α'_j h^w_j`.
pub fn fuse_attention(
    tape: &mut Tape,
    alpha: Var,
    beta: Var,
    field_of: &[usize],
    value_reps: Var,
) -> Result<(Var, Var), ModelError> {
    let spread = tape.gather(beta, field_of)?;
    let joint = tape.mul(alpha, spread)?;
    let total = tape.sum(joint);
    let z = tape.value(total).item();
    if z.is_nan() || z < FUSION_FLOOR {
        return Err(AutodiffError::DegenerateAttention(z).into());
    }
    let fused = tape.div_scalar(joint, total)?;
    let context = tape.vecmat(fused, value_reps)?;
    Ok((fused, context))
}

/// Attention weights and contexts of one decoder step, as plain numbers.
///
/// `beta` and `c_g` are empty when macro attention is disabled.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepAttention {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_fused: Vec<f64>,
    pub c_g: Vec<f64>,
    pub c_w: Vec<f64>,
}

impl StepAttention {
    /// `α'` summed within each field.
    pub fn field_mass(&self, field_of: &[usize], num_fields: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_fields];
        for (&a, &f) in self.alpha_fused.iter().zip(field_of) {
            out[f] += a;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check_many, Tensor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Raw {
        u: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        w: Vec<f64>,
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Vec<Vec<f64>> {
        (0..r)
            .map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    fn flat(m: &[Vec<f64>]) -> Tensor {
        Tensor::matrix(m.len(), m[0].len(), m.concat()).unwrap()
    }

    /// Scalar-loop additive attention.
    fn oracle_weights(raw: &Raw, s: &[f64], reps: &[Vec<f64>]) -> Vec<f64> {
        let scores: Vec<f64> = reps
            .iter()
            .map(|h| {
                let mut total = 0.0;
                for k in 0..raw.w.len() {
                    let mut pre = 0.0;
                    for (i, si) in s.iter().enumerate() {
                        pre += raw.u[k][i] * si;
                    }
                    for (i, hi) in h.iter().enumerate() {
                        pre += raw.v[k][i] * hi;
                    }
                    total += raw.w[k] * pre.tanh();
                }
                total
            })
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }

    fn oracle_fuse(alpha: &[f64], beta: &[f64], field_of: &[usize]) -> Vec<f64> {
        let mut joint = Vec::new();
        for j in 0..alpha.len() {
            joint.push(alpha[j] * beta[field_of[j]]);
        }
        let mut z = 0.0;
        for x in &joint {
            z += x;
        }
        joint.into_iter().map(|x| x / z).collect()
    }

    fn setup(
        tape: &mut Tape,
        raw: &Raw,
        reps: &[Vec<f64>],
        s: &[f64],
    ) -> (AttentionParams, AttentionMemory, Var) {
        let params = AttentionParams {
            state: tape.leaf(flat(&raw.u)),
            key: tape.leaf(flat(&raw.v)),
            score: tape.leaf(Tensor::vector(raw.w.clone())),
        };
        let reps = tape.leaf(flat(reps));
        let mem = AttentionMemory::new(tape, reps, &params).unwrap();
        let s = tape.leaf(Tensor::vector(s.to_vec()));
        (params, mem, s)
    }

    fn random_case(seed: u64, n: usize) -> (Raw, Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, d, ds) = (3, 4, 2);
        let raw = Raw {
            u: random_matrix(&mut rng, a, ds),
            v: random_matrix(&mut rng, a, d),
            w: (0..a).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let reps = random_matrix(&mut rng, n, d);
        let s = (0..ds).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (raw, reps, s)
    }

    #[test]
    fn macro_attention_matches_scalar_oracle() {
        let (raw, reps, s) = random_case(3, 3);
        let mut tape = Tape::new();
        let (p, mem, sv) = setup(&mut tape, &raw, &reps, &s);
        let (beta, ctx) = macro_attention(&mut tape, &mem, sv, &p).unwrap();
        let expected = oracle_weights(&raw, &s, &reps);
        for (a, b) in tape.value(beta).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        for k in 0..4 {
            let c: f64 = (0..3).map(|i| expected[i] * reps[i][k]).sum();
            assert!((tape.value(ctx).data()[k] - c).abs() < 1e-12);
        }
    }

    #[test]
    fn micro_attention_matches_scalar_oracle() {
        let (raw, reps, s) = random_case(4, 6);
        let mut tape = Tape::new();
        let (p, mem, sv) = setup(&mut tape, &raw, &reps, &s);
        let alpha = micro_attention(&mut tape, &mem, sv, &p).unwrap();
        let expected = oracle_weights(&raw, &s, &reps);
        for (a, b) in tape.value(alpha).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_and_identical_inputs() {
        let (raw, reps, s) = random_case(5, 1);
        let mut tape = Tape::new();
        let (p, mem, sv) = setup(&mut tape, &raw, &reps, &s);
        let (beta, ctx) = macro_attention(&mut tape, &mem, sv, &p).unwrap();
        assert_eq!(tape.value(beta).data(), &[1.0]);
        assert_eq!(tape.value(ctx).data(), reps[0].as_slice());

        let same = vec![reps[0].clone(); 4];
        let mut tape = Tape::new();
        let (p, mem, sv) = setup(&mut tape, &raw, &same, &s);
        let alpha = micro_attention(&mut tape, &mem, sv, &p).unwrap();
        for &a in tape.value(alpha).data() {
            assert!((a - 0.25).abs() < 1e-15);
        }
    }

    fn fuse_values(alpha: &[f64], beta: &[f64], field_of: &[usize]) -> Vec<f64> {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(alpha.to_vec()));
        let b = tape.constant(Tensor::vector(beta.to_vec()));
        let reps = tape.constant(Tensor::filled(&[alpha.len(), 2], 1.0));
        let (f, _) = fuse_attention(&mut tape, a, b, field_of, reps).unwrap();
        tape.value(f).data().to_vec()
    }

    #[test]
    fn hand_evaluated_fusion() {
        let f = fuse_values(&[0.25; 4], &[0.8, 0.2], &[0, 0, 1, 1]);
        for (a, b) in f.iter().zip([0.4, 0.4, 0.1, 0.1]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_or_single_macro_leaves_alpha() {
        let alpha = [0.1, 0.2, 0.3, 0.4];
        for (a, b) in fuse_values(&alpha, &[0.5, 0.5], &[0, 1, 1, 0])
            .iter()
            .zip(&alpha)
        {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in fuse_values(&alpha, &[1.0], &[0, 0, 0, 0])
            .iter()
            .zip(&alpha)
        {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_macro_weight_silences_field() {
        let f = fuse_values(&[0.3, 0.3, 0.4], &[0.0, 1.0], &[0, 0, 1]);
        assert_eq!(&f[..2], &[0.0, 0.0]);
        assert!((f[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_fusion_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        let b = tape.constant(Tensor::vector(vec![0.0, 1.0]));
        let reps = tape.constant(Tensor::zeros(&[2, 2]));
        let err = fuse_attention(&mut tape, a, b, &[0, 0], reps).unwrap_err();
        assert!(matches!(
            err,
            ModelError::Autodiff(AutodiffError::DegenerateAttention(_))
        ));
    }

    #[test]
    fn fused_context_gradients() {
        let (raw, reps, s) = random_case(9, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let freps = random_matrix(&mut rng, 2, 4);
        let probe: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let points = vec![
            flat(&raw.u),
            flat(&raw.v),
            Tensor::vector(raw.w.clone()),
            flat(&reps),
            Tensor::vector(s.clone()),
            flat(&freps),
        ];
        let report = finite_diff_check_many(
            |tape, v| {
                let p = AttentionParams {
                    state: v[0],
                    key: v[1],
                    score: v[2],
                };
                let vm = AttentionMemory::new(tape, v[3], &p).map_err(to_ad)?;
                let fm = AttentionMemory::new(tape, v[5], &p).map_err(to_ad)?;
                let alpha = micro_attention(tape, &vm, v[4], &p).map_err(to_ad)?;
                let (beta, _) = macro_attention(tape, &fm, v[4], &p).map_err(to_ad)?;
                let (_, cw) =
                    fuse_attention(tape, alpha, beta, &[0, 0, 1, 1], v[3]).map_err(to_ad)?;
                let w = tape.constant(Tensor::vector(probe.clone()));
                tape.dot(cw, w)
            },
            &points,
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    fn to_ad(e: ModelError) -> AutodiffError {
        match e {
            ModelError::Autodiff(a) => a,
            other => panic!("{other}"),
        }
    }

    proptest! {
        #[test]
        fn fused_weights_are_a_distribution(
            alpha in prop::collection::vec(1e-6f64..1.0, 1..12),
            beta in prop::collection::vec(1e-6f64..1.0, 1..5),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = beta.len();
            let mut field_of: Vec<usize> = (0..alpha.len()).map(|_| rng.gen_range(0..m)).collect();
            field_of.sort();
            let za: f64 = alpha.iter().sum();
            let zb: f64 = beta.iter().sum();
            let alpha: Vec<f64> = alpha.iter().map(|a| a / za).collect();
            let beta: Vec<f64> = beta.iter().map(|b| b / zb).collect();
            let fused = fuse_values(&alpha, &beta, &field_of);
            prop_assert!((fused.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(fused.iter().all(|&x| x >= 0.0));
            for (a, b) in fused.iter().zip(oracle_fuse(&alpha, &beta, &field_of)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn raising_macro_weight_never_lowers_its_values(
            alpha in prop::collection::vec(0.01f64..1.0, 4),
            beta in prop::collection::vec(0.01f64..1.0, 2),
            bump in 0.0f64..2.0,
        ) {
            let field_of = [0, 0, 1, 1];
            let before = fuse_values(&alpha, &beta, &field_of);
            let raised = [beta[0] + bump, beta[1]];
            let after = fuse_values(&alpha, &raised, &field_of);
            prop_assert!(after[0] >= before[0] - 1e-15);
            prop_assert!(after[1] >= before[1] - 1e-15);
        }
    }
}
