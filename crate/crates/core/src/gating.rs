//! Forget gate and soft orthogonalization over macro contexts.
//!
//! Per decoder step:
//!
//! ```text
//! γ_t  = σ(W_γ s_{t-1} + b_γ)
//! c^g  ← c^g − γ_t ⊙ (⟨r, c^g⟩ / ⟨r, r⟩) r        r = c_{t-1} or history state
//! f_t  = σ(W_ft c^g_{t-1} + W_fg c_{t-1} + b_f)
//! c_t  = (1 − f_t) ⊙ c^g + f_t ⊙ c_{t-1}
//! ```

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::ModelError;
use crate::layers::{gru_step, GruParams};
use crate::model::GateMacroInput;

/// Below this squared norm the reference is treated as zero.
pub const ORTHO_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub enum GammaParams {
    StateDependent { w: Var, b: Var },
    Constant { logit: Var },
}

#[derive(Clone, Copy, Debug)]
pub struct GateParams {
    pub forget_macro: Var,
    pub forget_context: Var,
    pub forget_bias: Var,
    pub gamma: GammaParams,
    /// Present for the history-GRU variant.
    pub history: Option<GruParams>,
}

/// Gating state carried between decoder steps.
#[derive(Clone, Copy, Debug)]
pub struct GatedState {
    /// `c_{t-1}`
    pub c_prev: Var,
    /// Macro context of the previous step, fed to the forget gate.
    pub macro_prev: Var,
    pub history: Option<Var>,
    /// `γ` of the most recent step.
    pub gamma: Option<Var>,
}

impl GatedState {
    /// All-zero state of width `dim`.
    pub fn initial(tape: &mut Tape, dim: usize, params: &GateParams) -> Self {
        let zero = tape.constant(Tensor::zeros(&[dim]));
        GatedState {
            c_prev: zero,
            macro_prev: zero,
            history: params.history.map(|_| zero),
            gamma: None,
        }
    }
}

/// Removes a `γ`-scaled share of the component of `c` along `reference`.
pub fn orthogonalize(
    tape: &mut Tape,
    c: Var,
    reference: Var,
    gamma: Var,
) -> Result<Var, ModelError> {
    let rr = tape.dot(reference, reference)?;
    if tape.value(rr).item() < ORTHO_EPS {
        return Ok(c);
    }
    let rc = tape.dot(reference, c)?;
    let scaled = tape.mul_scalar(reference, rc)?;
    let proj = tape.div_scalar(scaled, rr)?;
    let removed = tape.mul(gamma, proj)?;
    Ok(tape.sub(c, removed)?)
}

pub fn gamma_of(tape: &mut Tape, s_prev: Var, params: &GammaParams) -> Result<Var, ModelError> {
    Ok(match *params {
        GammaParams::StateDependent { w, b } => {
            let ws = tape.matvec(w, s_prev)?;
            let pre = tape.add(ws, b)?;
            tape.sigmoid(pre)
        }
        GammaParams::Constant { logit } => tape.sigmoid(logit),
    })
}

/// `f_t = σ(W_ft c^g_{t-1} + W_fg c_{t-1} + b_f)`.
pub fn forget_gate(
    tape: &mut Tape,
    macro_prev: Var,
    c_prev: Var,
    params: &GateParams,
) -> Result<Var, ModelError> {
    let a = tape.matvec(params.forget_macro, macro_prev)?;
    let b = tape.matvec(params.forget_context, c_prev)?;
    let ab = tape.add(a, b)?;
    let pre = tape.add(ab, params.forget_bias)?;
    Ok(tape.sigmoid(pre))
}

/// `(1 − f) ⊙ c_g + f ⊙ c_prev`.
pub fn combine(tape: &mut Tape, f: Var, c_g: Var, c_prev: Var) -> Result<Var, ModelError> {
    let keep = tape.one_minus(f);
    let fresh = tape.mul(keep, c_g)?;
    let stay = tape.mul(f, c_prev)?;
    Ok(tape.add(fresh, stay)?)
}

/// Forget gate followed by [`combine`]; returns `(f_t, c_t)`.
pub fn forget_gate_combine(
    tape: &mut Tape,
    c_g: Var,
    state: &GatedState,
    params: &GateParams,
) -> Result<(Var, Var), ModelError> {
    let f = forget_gate(tape, state.macro_prev, state.c_prev, params)?;
    let c = combine(tape, f, c_g, state.c_prev)?;
    Ok((f, c))
}

/// Feeds `c_t` to the history GRU.
pub fn update_history(
    tape: &mut Tape,
    history: Option<Var>,
    c_t: Var,
    params: &GateParams,
) -> Result<Var, ModelError> {
    match (params.history.as_ref(), history) {
        (Some(gru), Some(h)) => gru_step(tape, gru, c_t, h),
        _ => Err(ModelError::NoHistory),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GateOutput {
    pub c_t: Var,
    /// Macro context after orthogonalization.
    pub c_g: Var,
    pub f: Var,
    pub gamma: Var,
    pub next: GatedState,
}

/// Orthogonalize, gate and (for the history variant) advance the history.
pub fn gate_step(
    tape: &mut Tape,
    c_g_raw: Var,
    s_prev: Var,
    state: &GatedState,
    params: &GateParams,
    macro_input: GateMacroInput,
) -> Result<GateOutput, ModelError> {
    let reference = state.history.unwrap_or(state.c_prev);
    let gamma = gamma_of(tape, s_prev, &params.gamma)?;
    let c_g = orthogonalize(tape, c_g_raw, reference, gamma)?;
    let (f, c_t) = forget_gate_combine(tape, c_g, state, params)?;
    let history = match state.history {
        Some(_) => Some(update_history(tape, state.history, c_t, params)?),
        None => None,
    };
    let macro_prev = match macro_input {
        GateMacroInput::Orthogonalized => c_g,
        GateMacroInput::Raw => c_g_raw,
    };
    Ok(GateOutput {
        c_t,
        c_g,
        f,
        gamma,
        next: GatedState {
            c_prev: c_t,
            macro_prev,
            history,
            gamma: Some(gamma),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check_many, AutodiffError};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vals(tape: &Tape, v: Var) -> Vec<f64> {
        tape.value(v).data().to_vec()
    }

    fn ortho(c: &[f64], r: &[f64], g: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(c.to_vec()));
        let r = tape.constant(Tensor::vector(r.to_vec()));
        let g = tape.constant(Tensor::vector(g.to_vec()));
        let out = orthogonalize(&mut tape, c, r, g).unwrap();
        vals(&tape, out)
    }

    #[test]
    fn full_gram_schmidt_step() {
        assert_eq!(ortho(&[1.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn zero_gamma_and_zero_reference_are_identity() {
        let c = [0.3, -1.7, 2.5];
        assert_eq!(ortho(&c, &[0.4, 0.1, -0.9], &[0.0; 3]), c.to_vec());
        assert_eq!(ortho(&c, &[0.0; 3], &[1.0; 3]), c.to_vec());
    }

    fn random_gate(
        rng: &mut ChaCha8Rng,
        tape: &mut Tape,
        d: usize,
        ds: usize,
        history: bool,
    ) -> GateParams {
        let mut m =
            |r: usize, c: usize, tape: &mut Tape| tape.leaf(Tensor::uniform(&[r, c], 0.5, rng));
        let forget_macro = m(d, d, tape);
        let forget_context = m(d, d, tape);
        let w = m(d, ds, tape);
        let hist = if history {
            Some(GruParams {
                w_x: m(3 * d, d, tape),
                w_h: m(3 * d, d, tape),
                b_x: tape.leaf(Tensor::zeros(&[3 * d])),
                b_h: tape.leaf(Tensor::zeros(&[3 * d])),
                hidden: d,
            })
        } else {
            None
        };
        GateParams {
            forget_macro,
            forget_context,
            forget_bias: tape.leaf(Tensor::zeros(&[d])),
            gamma: GammaParams::StateDependent {
                w,
                b: tape.leaf(Tensor::zeros(&[d])),
            },
            history: hist,
        }
    }

    #[test]
    fn forced_gate_endpoints_are_exact() {
        let mut tape = Tape::new();
        let cg = tape.constant(Tensor::vector(vec![0.1, -0.7, 3.0]));
        let cp = tape.constant(Tensor::vector(vec![-2.0, 0.4, 0.9]));
        let one = tape.constant(Tensor::filled(&[3], 1.0));
        let zero = tape.constant(Tensor::zeros(&[3]));
        let stay = combine(&mut tape, one, cg, cp).unwrap();
        let move_on = combine(&mut tape, zero, cg, cp).unwrap();
        assert_eq!(vals(&tape, stay), vals(&tape, cp));
        assert_eq!(vals(&tape, move_on), vals(&tape, cg));
    }

    #[test]
    fn zero_gate_weights_give_midpoint() {
        let mut tape = Tape::new();
        let z = |t: &mut Tape, s: &[usize]| t.constant(Tensor::zeros(s));
        let params = GateParams {
            forget_macro: z(&mut tape, &[2, 2]),
            forget_context: z(&mut tape, &[2, 2]),
            forget_bias: z(&mut tape, &[2]),
            gamma: GammaParams::Constant {
                logit: z(&mut tape, &[2]),
            },
            history: None,
        };
        let cg = tape.constant(Tensor::vector(vec![1.0, 3.0]));
        let prev = tape.constant(Tensor::vector(vec![-1.0, 1.0]));
        let state = GatedState {
            c_prev: prev,
            macro_prev: prev,
            history: None,
            gamma: None,
        };
        let (f, c) = forget_gate_combine(&mut tape, cg, &state, &params).unwrap();
        assert_eq!(vals(&tape, f), vec![0.5, 0.5]);
        assert_eq!(vals(&tape, c), vec![0.0, 2.0]);
    }

    #[test]
    fn gamma_limits() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::vector(vec![0.3, -0.2]));
        let w = tape.constant(Tensor::zeros(&[3, 2]));
        let b = tape.constant(Tensor::zeros(&[3]));
        let g = gamma_of(&mut tape, s, &GammaParams::StateDependent { w, b }).unwrap();
        assert_eq!(vals(&tape, g), vec![0.5; 3]);
        let big = tape.constant(Tensor::filled(&[3], 40.0));
        let g = gamma_of(&mut tape, s, &GammaParams::StateDependent { w, b: big }).unwrap();
        assert!(vals(&tape, g).iter().all(|&x| 1.0 - x < 1e-15));
    }

    #[test]
    fn gamma_weight_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let points = vec![
            Tensor::uniform(&[3, 2], 1.0, &mut rng),
            Tensor::uniform(&[3], 1.0, &mut rng),
            Tensor::uniform(&[2], 1.0, &mut rng),
        ];
        let probe = Tensor::uniform(&[3], 1.0, &mut rng);
        let report = finite_diff_check_many(
            |tape, v| {
                let p = GammaParams::StateDependent { w: v[0], b: v[1] };
                let g = gamma_of(tape, v[2], &p).map_err(to_ad)?;
                let w = tape.constant(probe.clone());
                tape.dot(g, w)
            },
            &points,
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn history_requires_the_gru_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let params = random_gate(&mut rng, &mut tape, 3, 2, false);
        let c = tape.constant(Tensor::zeros(&[3]));
        assert!(matches!(
            update_history(&mut tape, Some(c), c, &params),
            Err(ModelError::NoHistory)
        ));
    }

    #[test]
    fn history_update_is_a_gru_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tape = Tape::new();
        let params = random_gate(&mut rng, &mut tape, 3, 2, true);
        let h = tape.constant(Tensor::uniform(&[3], 0.5, &mut rng));
        let c = tape.constant(Tensor::uniform(&[3], 0.5, &mut rng));
        let a = update_history(&mut tape, Some(h), c, &params).unwrap();
        let b = gru_step(&mut tape, params.history.as_ref().unwrap(), c, h).unwrap();
        assert_eq!(vals(&tape, a), vals(&tape, b));
    }

    #[test]
    fn constant_input_history_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut tape = Tape::new();
        let params = random_gate(&mut rng, &mut tape, 4, 2, true);
        let c = tape.constant(Tensor::uniform(&[4], 1.0, &mut rng));
        let mut h = tape.constant(Tensor::zeros(&[4]));
        let mut prev_diff = f64::INFINITY;
        for _ in 0..20 {
            let next = update_history(&mut tape, Some(h), c, &params).unwrap();
            let diff: f64 = vals(&tape, next)
                .iter()
                .zip(vals(&tape, h))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(diff <= prev_diff + 1e-15, "{diff} > {prev_diff}");
            prev_diff = diff;
            h = next;
        }
        assert!(prev_diff < 1e-3);
    }

    fn to_ad(e: ModelError) -> AutodiffError {
        match e {
            ModelError::Autodiff(a) => a,
            other => panic!("{other}"),
        }
    }

    #[test]
    fn two_step_unroll_gradients() {
        for history in [false, true] {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let (d, ds) = (3, 2);
            let mut points = vec![
                Tensor::uniform(&[d, d], 0.5, &mut rng),
                Tensor::uniform(&[d, d], 0.5, &mut rng),
                Tensor::uniform(&[d], 0.5, &mut rng),
                Tensor::uniform(&[d, ds], 0.5, &mut rng),
                Tensor::uniform(&[d], 0.5, &mut rng),
                Tensor::uniform(&[d], 1.0, &mut rng),
                Tensor::uniform(&[d], 1.0, &mut rng),
                Tensor::uniform(&[ds], 1.0, &mut rng),
                Tensor::uniform(&[ds], 1.0, &mut rng),
                Tensor::uniform(&[d], 1.0, &mut rng),
            ];
            if history {
                points.push(Tensor::uniform(&[3 * d, d], 0.5, &mut rng));
                points.push(Tensor::uniform(&[3 * d, d], 0.5, &mut rng));
                points.push(Tensor::uniform(&[3 * d], 0.5, &mut rng));
                points.push(Tensor::uniform(&[3 * d], 0.5, &mut rng));
            }
            let probe = Tensor::uniform(&[d], 1.0, &mut rng);
            let report = finite_diff_check_many(
                |tape, v| {
                    let params = GateParams {
                        forget_macro: v[0],
                        forget_context: v[1],
                        forget_bias: v[2],
                        gamma: GammaParams::StateDependent { w: v[3], b: v[4] },
                        history: history.then(|| GruParams {
                            w_x: v[10],
                            w_h: v[11],
                            b_x: v[12],
                            b_h: v[13],
                            hidden: d,
                        }),
                    };
                    let mut state = GatedState {
                        c_prev: v[9],
                        macro_prev: v[9],
                        history: history.then_some(v[9]),
                        gamma: None,
                    };
                    let mut total = None;
                    for (cg, s) in [(v[5], v[7]), (v[6], v[8])] {
                        let out =
                            gate_step(tape, cg, s, &state, &params, GateMacroInput::Orthogonalized)
                                .map_err(to_ad)?;
                        let w = tape.constant(probe.clone());
                        let term = tape.dot(out.c_t, w)?;
                        total = Some(match total {
                            None => term,
                            Some(t) => tape.add(t, term)?,
                        });
                        state = out.next;
                    }
                    Ok(total.unwrap())
                },
                &points,
                1e-4,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "history={history}: {report:?}");
        }
    }

    proptest! {
        #[test]
        fn full_strength_output_is_orthogonal(
            c in prop::collection::vec(-5.0f64..5.0, 6),
            r in prop::collection::vec(-5.0f64..5.0, 6),
        ) {
            let out = ortho(&c, &r, &[1.0; 6]);
            let dot: f64 = r.iter().zip(&out).map(|(a, b)| a * b).sum();
            let nr = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            let no = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(dot.abs() <= 1e-9 * nr * no + 1e-300);
        }

        #[test]
        fn combine_is_elementwise_convex(
            f in prop::collection::vec(0.0f64..1.0, 4),
            cg in prop::collection::vec(-3.0f64..3.0, 4),
            cp in prop::collection::vec(-3.0f64..3.0, 4),
        ) {
            let mut tape = Tape::new();
            let fv = tape.constant(Tensor::vector(f));
            let a = tape.constant(Tensor::vector(cg.clone()));
            let b = tape.constant(Tensor::vector(cp.clone()));
            let c = combine(&mut tape, fv, a, b).unwrap();
            for (i, x) in vals(&tape, c).into_iter().enumerate() {
                prop_assert!(x >= cg[i].min(cp[i]) - 1e-12 && x <= cg[i].max(cp[i]) + 1e-12);
            }
        }
    }
}
