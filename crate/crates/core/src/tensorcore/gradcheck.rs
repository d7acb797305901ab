use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Outcome of comparing tape gradients with central finite differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over elements of |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_rel_error: f64,
    /// (parameter index, flat element index) where the maximum occurred
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

const REL_FLOOR: f64 = 1e-8;

fn eval<T, F>(f: &F, params: &[Tensor<T>]) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::without_grad();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
    let out = f(&mut tape, &vars)?;
    match tape.value(out) {
        [v] => Ok(v.to_f64_lossy()),
        other => Err(Error::Usage(format!(
            "grad_check needs a scalar function, got {} elements",
            other.len()
        ))),
    }
}

/// Checks the tape adjoints of scalar function `f` at `params` against central
/// differences with the given `step`.
///
/// `f` is evaluated twice at the base point first; any difference between the
/// two values is reported as a verification error.
pub fn grad_check<T, F>(f: F, params: &[Tensor<T>], step: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("grad_check step must be positive, got {step}")));
    }
    let tracked: Vec<Tensor<T>> = params.iter().map(|p| p.clone().with_grad()).collect();
    let (base, analytic) = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tracked.iter().map(|p| tape.leaf(p)).collect();
        let out = f(&mut tape, &vars)?;
        let base = match tape.value(out) {
            [v] => v.to_f64_lossy(),
            other => {
                return Err(Error::Usage(format!(
                    "grad_check needs a scalar function, got {} elements",
                    other.len()
                )))
            }
        };
        let grads = tape.backward(out)?;
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .zip(&tracked)
            .map(|(&v, p)| match grads.get(v) {
                Some(g) => g.iter().map(|x| x.to_f64_lossy()).collect(),
                None => vec![0.0; p.len()],
            })
            .collect();
        (base, analytic)
    };

    for _ in 0..2 {
        let again = eval(&f, params)?;
        if again.to_bits() != base.to_bits() {
            return Err(Error::Verification(format!(
                "function is not deterministic: {base} then {again}"
            )));
        }
    }

    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for pi in 0..work.len() {
        for j in 0..work[pi].len() {
            let orig = work[pi].data()[j];
            let h = T::of(step);
            work[pi].update(|d| d[j] = orig + h)?;
            let plus = eval(&f, &work)?;
            work[pi].update(|d| d[j] = orig - h)?;
            let minus = eval(&f, &work)?;
            work[pi].update(|d| d[j] = orig)?;
            // use the step actually representable in T
            let eff = (orig + h).to_f64_lossy() - (orig - h).to_f64_lossy();
            let numeric = (plus - minus) / eff;
            let a = analytic[pi][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((pi, j));
            }
        }
    }
    Ok(report)
}
