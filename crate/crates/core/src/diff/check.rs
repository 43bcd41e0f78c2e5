use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Denominator floor for relative errors.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(param index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub entries_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn evaluate<F>(f: &F, params: &[Matrix]) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.shape() != (1, 1) {
        return Err(Error::shape("grad_check", "forward function must return a 1x1 value"));
    }
    if !value.data()[0].is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check probe".into(),
        });
    }
    Ok((tape, vars, out))
}

/// Compares reverse-mode gradients of `f` against central differences
/// `(f(θ+h·e) − f(θ−h·e)) / 2h` for every entry of every parameter.
pub fn grad_check<F>(f: F, params: &[Matrix], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let (tape, vars, out) = evaluate(&f, params)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Matrix> = vars.iter().map(|&v| grads.get(v)).collect();

    let mut probe = params.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for (p, grad) in analytic.iter().enumerate() {
        for k in 0..params[p].len() {
            let original = params[p].data()[k];
            probe[p].data_mut()[k] = original + step;
            let (t_plus, _, o_plus) = evaluate(&f, &probe)?;
            probe[p].data_mut()[k] = original - step;
            let (t_minus, _, o_minus) = evaluate(&f, &probe)?;
            probe[p].data_mut()[k] = original;

            let numeric = (t_plus.value(o_plus).data()[0] - t_minus.value(o_minus).data()[0]) / (2.0 * step);
            let err = relative_error(grad.data()[k], numeric);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst = Some((p, k));
            }
        }
    }
    Ok(report)
}
