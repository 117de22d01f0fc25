//! Central finite-difference checking of tape gradients in `f64`.
//!
//! A case is a closure that builds a scalar on a fresh tape from a list of
//! input tensors. The analytic gradient comes from [`Tape::backward`]; the
//! numeric one from `(f(x+h) - f(x-h)) / 2h` per sampled coordinate.
//! Coordinates whose two probes fall on different linear pieces of a
//! leaky-ReLU network are skipped, since finite differences are meaningless
//! across a kink.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::tensor::Tensor;

use super::tape::{Tape, Var};

pub type BuildFn<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates probed per input tensor (all of them when smaller).
    pub coords_per_input: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            tolerance: 1e-4,
            coords_per_input: 24,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    /// Largest relative error over inputs: `‖a − n‖ / max(‖a‖, ‖n‖)` on the
    /// probed coordinates.
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub checked: usize,
    pub skipped: usize,
}

impl CheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    /// Keeps the worse of two reports for the same case.
    pub fn merge(self, other: CheckReport) -> CheckReport {
        let (checked, skipped) = (self.checked + other.checked, self.skipped + other.skipped);
        let worst = if other.max_rel_error > self.max_rel_error {
            other
        } else {
            self
        };
        CheckReport {
            checked,
            skipped,
            ..worst
        }
    }
}

fn evaluate(inputs: &[Tensor<f64>], build: &BuildFn) -> Result<(f64, Vec<bool>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    Ok((tape.value(out).data()[0], tape.activation_pattern()))
}

/// Analytic gradients of the case with respect to each input.
pub fn analytic_gradients(inputs: &[Tensor<f64>], build: &BuildFn) -> Result<Vec<Tensor<f64>>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars.iter().map(|&v| grads.wrt(v)).collect())
}

/// Compares `analytic` against central differences of `build`.
pub fn compare<R: Rng + ?Sized>(
    name: &str,
    inputs: &[Tensor<f64>],
    build: &BuildFn,
    analytic: &[Tensor<f64>],
    opts: &GradCheckOptions,
    rng: &mut R,
) -> Result<CheckReport> {
    let mut report = CheckReport {
        name: name.to_string(),
        max_rel_error: 0.0,
        worst_input: 0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = if input.len() <= opts.coords_per_input {
            (0..input.len()).collect()
        } else {
            sample(rng, input.len(), opts.coords_per_input).into_vec()
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for c in coords {
            let orig = input.data()[c];
            probe[i].data_mut()[c] = orig + opts.step;
            let (plus, pattern_plus) = evaluate(&probe, build)?;
            probe[i].data_mut()[c] = orig - opts.step;
            let (minus, pattern_minus) = evaluate(&probe, build)?;
            probe[i].data_mut()[c] = orig;
            if pattern_plus != pattern_minus {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[i].data()[c];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            report.checked += 1;
        }
        let denom = a2.sqrt().max(n2.sqrt()).max(1e-8);
        let rel = diff2.sqrt() / denom;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_input = i;
        }
    }
    Ok(report)
}

/// Full check: tape gradients against finite differences.
pub fn check<R: Rng + ?Sized>(
    name: &str,
    inputs: &[Tensor<f64>],
    build: &BuildFn,
    opts: &GradCheckOptions,
    rng: &mut R,
) -> Result<CheckReport> {
    let analytic = analytic_gradients(inputs, build)?;
    compare(name, inputs, build, &analytic, opts, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn corrupted_gradient_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::uniform(&[3, 4], 1.0, &mut rng);
        let build = |t: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
            let s = t.sigmoid(v[0]);
            Ok(t.sum(s))
        };
        let opts = GradCheckOptions::default();
        let good = check("sigmoid", &[x.clone()], &build, &opts, &mut rng).unwrap();
        assert!(good.passed(opts.tolerance), "{good:?}");

        let mut bad = analytic_gradients(&[x.clone()], &build).unwrap();
        bad[0] = bad[0].map(|g| g * 1.01);
        let report = compare("sigmoid", &[x], &build, &bad, &opts, &mut rng).unwrap();
        assert!(!report.passed(opts.tolerance));
        assert!(report.max_rel_error > 5e-3);
    }
}
