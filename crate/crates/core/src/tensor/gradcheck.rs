use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(param index, flat element index, analytic, numeric)` of the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
    /// Elements re-estimated with a smaller step because central differences
    /// at `eps` and `eps / 2` disagreed (a kink inside the stencil).
    pub refined: usize,
    /// Every compared element as `(param index, flat element index, analytic, numeric)`.
    pub entries: Vec<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    /// Maximum relative error recomputed with denominator `max(|a|, |n|, floor)`.
    pub fn max_rel_error_with_floor(&self, floor: f64) -> f64 {
        self.entries
            .iter()
            .map(|&(_, _, a, n)| relative_error_with_floor(a, n, floor))
            .fold(0.0, f64::max)
    }
}

const MAX_REFINEMENTS: usize = 3;

/// Whether central differences at `step` and `step / 2` agree: within 1e-5
/// relative, or within the roundoff of the quotient (objective noise of about
/// 1e-14 divided by the step).
fn consistent(a: f64, b: f64, step: f64) -> bool {
    (a - b).abs() <= (1e-5 * a.abs().max(b.abs())).max(1e-9).max(1e-14 / step)
}

/// Denominator floor of [`relative_error`].
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Relative error with denominator `max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, REL_ERROR_FLOOR)
}

pub fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks every element of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.numel()).map(move |i| (p, i)))
        .collect();
    check_coords(&f, params, eps, &coords)
}

/// Checks `per_param` randomly chosen elements of each parameter (all of them
/// when the parameter is smaller).
pub fn grad_check_sampled<F>(
    f: F,
    params: &[Tensor],
    eps: f64,
    per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for (p, t) in params.iter().enumerate() {
        let n = t.numel();
        if n <= per_param {
            coords.extend((0..n).map(|i| (p, i)));
        } else {
            let mut picked = sample(&mut rng, n, per_param).into_vec();
            picked.sort_unstable();
            coords.extend(picked.into_iter().map(|i| (p, i)));
        }
    }
    check_coords(&f, params, eps, &coords)
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::shape("grad_check", "function must return a scalar"));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    Ok(v)
}

fn check_coords<F>(
    f: &F,
    params: &[Tensor],
    eps: f64,
    coords: &[(usize, usize)],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    if !tape.value(loss).item().is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        refined: 0,
        entries: Vec::with_capacity(coords.len()),
    };
    let central = |work: &mut Vec<Tensor>, p: usize, i: usize, step: f64| -> Result<f64> {
        let orig = work[p].data()[i];
        work[p].data_mut()[i] = orig + step;
        let plus = evaluate(f, work)?;
        work[p].data_mut()[i] = orig - step;
        let minus = evaluate(f, work)?;
        work[p].data_mut()[i] = orig;
        Ok((plus - minus) / (2.0 * step))
    };
    for &(p, i) in coords {
        let mut step = eps;
        let mut numeric = central(&mut work, p, i, step)?;
        for round in 0..MAX_REFINEMENTS {
            let half = central(&mut work, p, i, step / 2.0)?;
            if consistent(numeric, half, step / 2.0) {
                break;
            }
            if round == 0 {
                report.refined += 1;
            }
            step /= 10.0;
            numeric = central(&mut work, p, i, step)?;
        }
        let a = analytic[p].data()[i];
        let rel = relative_error(a, numeric);
        report.checked += 1;
        report.entries.push((p, i, a, numeric));
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((p, i, a, numeric));
        }
    }
    Ok(report)
}
