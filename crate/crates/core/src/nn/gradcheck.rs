//! Finite-difference verification of backward rules.

use rand_distr::{Distribution, StandardNormal};

use super::ops::dot_const;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCoordinate {
    /// Index of the input tensor.
    pub input: usize,
    /// Flat index inside that tensor.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst: Option<GradCoordinate>,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Checks every input coordinate of `f` against central differences of a
/// random projection `Σ R ⊙ f(inputs)`.
pub fn grad_check<F>(op: &str, inputs: &[Tensor], h: f64, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let mut rng = rng_from_seed(seed);
    let proj = Tensor::from_fn(out.shape(), |_| StandardNormal.sample(&mut rng));
    let loss = dot_const(out, &proj)?;
    let grads = tape.backward(loss)?;

    let eval = |values: &[Tensor]| -> Result<f64> {
        let tape = Tape::inference();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let y = f(&tape, &vars)?;
        let v = y.value();
        Ok(v.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum())
    };

    let mut report = GradCheckReport {
        op: op.to_string(),
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let mut values = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape().to_vec()));
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            values[i].data_mut()[j] = x0 + h;
            let plus = eval(&values)?;
            values[i].data_mut()[j] = x0 - h;
            let minus = eval(&values)?;
            values[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[j];
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(GradCoordinate {
                    input: i,
                    index: j,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
