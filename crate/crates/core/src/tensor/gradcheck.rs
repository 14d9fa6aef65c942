use super::{Tape, Tensor, Var};
use crate::error::Result;
use crate::rng::Rng;

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_rel_error: f64,
    /// Flat index of the coordinate with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Set when the function itself failed or produced a non-finite value.
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.failure.is_none() && self.max_rel_error <= tol
    }

    fn failed(msg: String) -> Self {
        Self {
            max_rel_error: f64::INFINITY,
            worst_index: 0,
            analytic: f64::NAN,
            numeric: f64::NAN,
            checked: 0,
            failure: Some(msg),
        }
    }
}

fn eval<F>(f: &F, point: &Tensor) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let x = tape.leaf(point.clone());
    Ok(f(&tape, x)?.value().data()[0])
}

fn analytic<F>(f: &F, point: &Tensor) -> Result<Tensor>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let x = tape.param(point.clone());
    let loss = f(&tape, x)?;
    tape.backward(loss)?;
    Ok(tape.grad(x).expect("backward populates every trainable leaf"))
}

/// Compares `backward` with `(f(x+eps) - f(x-eps)) / (2 eps)` at every coordinate of `point`.
pub fn finite_diff_check<F>(f: F, point: &Tensor, eps: f64) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let coords: Vec<usize> = (0..point.numel()).collect();
    check_coords(&f, point, eps, &coords)
}

/// Like [`finite_diff_check`] but only at `samples` coordinates drawn from a seeded generator.
pub fn finite_diff_check_sampled<F>(f: F, point: &Tensor, eps: f64, samples: usize, seed: u64) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let n = point.numel();
    let coords: Vec<usize> = if samples >= n {
        (0..n).collect()
    } else {
        let mut rng = Rng::seed_from_u64(seed);
        (0..samples).map(|_| rng.below(n as u64) as usize).collect()
    };
    check_coords(&f, point, eps, &coords)
}

fn check_coords<F>(f: &F, point: &Tensor, eps: f64, coords: &[usize]) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let grad = match analytic(f, point) {
        Ok(g) => g,
        Err(e) => return GradCheckReport::failed(format!("backward failed: {e}")),
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        failure: None,
    };
    let mut probe = point.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(f, &probe);
        probe.data_mut()[i] = orig - eps;
        let minus = eval(f, &probe);
        probe.data_mut()[i] = orig;
        let (plus, minus) = match (plus, minus) {
            (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => (p, m),
            (Err(e), _) | (_, Err(e)) => return GradCheckReport::failed(format!("evaluation failed: {e}")),
            _ => return GradCheckReport::failed(format!("non-finite value near coordinate {i}")),
        };
        let numeric = (plus - minus) / (2.0 * eps);
        let a = grad.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        if !rel.is_finite() {
            return GradCheckReport::failed(format!("non-finite gradient at coordinate {i}"));
        }
        if rel > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    report
}
