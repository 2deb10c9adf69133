use crate::{DiffError, Tape, Tensor, Var};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (input index, flat element index) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks the gradient of a scalar function of one tensor.
pub fn finite_diff_check<F, E>(f: F, x: &Tensor, step: f64, tol: f64) -> Result<FdReport, E>
where
    F: Fn(&mut Tape, Var) -> Result<Var, E>,
    E: From<DiffError>,
{
    finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step, tol)
}

/// Checks the gradient of a scalar function with respect to every element of
/// every input.
///
/// The relative error is floored at a denominator of 1, so entries whose
/// gradient is below unit scale are held to an absolute bound instead.
pub fn finite_diff_check_many<F, E>(f: F, inputs: &[Tensor], step: f64, tol: f64) -> Result<FdReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<DiffError>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(DiffError::Invalid(format!("finite-difference step must be positive, got {step}")).into());
    }
    let eval = |point: &[Tensor]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = point.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out).map_err(E::from)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let first = scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;
    let second = eval(inputs)?;
    if first.to_bits() != second.to_bits() {
        return Err(DiffError::NonDeterministic { first, second }.into());
    }

    let mut report = FdReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        checked: 0,
        tolerance: tol,
        passed: true,
    };
    let mut point = inputs.to_vec();
    for (t, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var)?.clone();
        for k in 0..point[t].len() {
            let orig = point[t].data()[k];
            point[t].data_mut()[k] = orig + step;
            let plus = eval(&point)?;
            point[t].data_mut()[k] = orig - step;
            let minus = eval(&point)?;
            point[t].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[k];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1.0);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst = (t, k);
            }
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}

fn scalar_of(tape: &Tape, out: Var) -> Result<f64, DiffError> {
    let t = tape.value(out)?;
    t.item().ok_or_else(|| DiffError::NonScalarLoss(t.shape().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn sum_has_zero_error() {
        let x = Tensor::from_rows(&[[0.3, -1.0], [2.5, 4.0]]).unwrap();
        let report = finite_diff_check(|tape: &mut Tape, x| tape.sum(x), &x, 1e-3, 1e-4).unwrap();
        assert!(report.passed);
        assert!(report.max_rel_error < 1e-10);
        assert_eq!(report.checked, 4);
    }

    #[test]
    fn detects_non_determinism() {
        let calls = Cell::new(0.0);
        let x = Tensor::vector(vec![1.0]);
        let err = finite_diff_check(
            |tape: &mut Tape, x| {
                calls.set(calls.get() + 1.0);
                let y = tape.affine(x, 1.0, calls.get())?;
                tape.sum(y)
            },
            &x,
            1e-3,
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, DiffError::NonDeterministic { .. }));
    }

    #[test]
    fn flags_a_wrong_gradient() {
        // clamp reports zero gradient outside the interval; the numeric
        // derivative straddling the edge disagrees.
        let x = Tensor::vector(vec![1.0]);
        let report = finite_diff_check(
            |tape: &mut Tape, x| {
                let c = tape.clamp(x, 0.0, 1.0)?;
                tape.sum(c)
            },
            &x,
            1e-3,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed);
    }
}
