//! Central-difference verification of tape gradients.

use super::dense::Matrix;
use super::tape::{Tape, Var};
use crate::error::{invalid, Error, Result};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero are judged on absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
    pub worst_coordinate: usize,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

fn evaluate<F>(f: &F, point: &[f64]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.param(&Matrix::from_vec(point.len(), 1, point.to_vec())?);
    let y = f(&mut tape, x)?;
    if tape.value(y).shape() != (1, 1) {
        return Err(invalid!("grad_check function must return a scalar"));
    }
    Ok(tape.scalar(y))
}

/// Compares the reverse-mode gradient of `f` at `point` against central
/// differences with step `eps`. `f` receives the point as a column leaf.
pub fn grad_check<F>(f: F, point: &[f64], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(invalid!("eps must lie in (0, 1e-2], got {eps}"));
    }
    if point.is_empty() {
        return Err(invalid!("grad_check needs at least one coordinate"));
    }

    let mut tape = Tape::new();
    let x = tape.param(&Matrix::from_vec(point.len(), 1, point.to_vec())?);
    let y = f(&mut tape, x)?;
    let analytic = tape.backward(y)?.get(x).into_data();

    let mut numeric = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + eps;
        let plus = evaluate(&f, &probe);
        probe[i] = point[i] - eps;
        let minus = evaluate(&f, &probe);
        probe[i] = point[i];
        let (plus, minus) = match (plus, minus) {
            (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => (p, m),
            (Ok(_), Ok(_)) | (Err(Error::NonFinite(_)), _) | (_, Err(Error::NonFinite(_))) => {
                return Err(Error::NonFinite(format!("function value at probe of coordinate {i}")))
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        numeric.push((plus - minus) / (2.0 * eps));
    }

    let (worst_coordinate, max_rel_err) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });

    Ok(GradCheckReport { analytic, numeric, max_rel_err, worst_coordinate, tol, passed: max_rel_err <= tol })
}
