use super::{AutodiffError, Tape, Tensor, Var};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, coordinate)` at which the maximum occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Maximum relative error between the tape's gradient of `f` at `point` and a
/// central difference with step `eps`.
///
/// The error per coordinate is `|a - n| / max(|a|, |n|, 1e-8)`. Functions
/// with kinks (e.g. `|x|` at 0) are not a supported input class: the two
/// one-sided slopes disagree and the reported error is meaningless.
pub fn finite_diff_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    let report = finite_diff_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        eps,
    )?;
    Ok(report.max_rel_error)
}

/// Multi-input form of [`finite_diff_check`]; checks every coordinate of
/// every input.
pub fn finite_diff_check_many<F>(
    f: F,
    points: &[Tensor],
    eps: f64,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(AutodiffError::StepSize(eps));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_scalar() {
        return Err(AutodiffError::NonScalarLoss {
            shape: tape.value(out).shape().to_vec(),
        });
    }
    let grads = tape.backward(out)?;

    let eval = |pts: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut t = Tape::new();
        let vs: Vec<Var> = pts.iter().map(|p| t.constant(p.clone())).collect();
        let o = f(&mut t, &vs)?;
        let v = t.value(o).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(AutodiffError::NonFinite)
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut pts = points.to_vec();
    for (input, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(points[input].shape()));
        for k in 0..points[input].len() {
            let orig = pts[input].data()[k];
            pts[input].data_mut()[k] = orig + eps;
            let plus = eval(&pts)?;
            pts[input].data_mut()[k] = orig - eps;
            let minus = eval(&pts)?;
            pts[input].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if err > report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: err,
                    worst: (input, k),
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
