//! Central finite-difference verification of tape gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so exact zeros compare absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct Coordinate {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Builds the op on a fresh tape and reduces a non-scalar output with a fixed
/// random projection, so every output coordinate contributes to the loss.
fn scalar_loss<F>(f: &F, inputs: &[Tensor<f64>], tracked: bool) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            if tracked {
                tape.leaf_with_grad(t.clone())
            } else {
                tape.leaf(t.clone())
            }
        })
        .collect();
    let out = f(&mut tape, &vars)?;
    let loss = if tape.value(out).len() == 1 {
        out
    } else {
        let shape = tape.value(out).shape().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_9a1d);
        let proj = tape.leaf(Tensor::uniform(shape, -1.0, 1.0, &mut rng));
        let prod = tape.mul(out, proj)?;
        tape.sum(prod)?
    };
    Ok((tape, vars, loss))
}

/// Compares autograd against `(f(x+eps) - f(x-eps)) / 2eps` for every
/// coordinate of every input. Fails with the worst coordinate when the
/// relative error exceeds `tol`.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, vars, loss) = scalar_loss(&f, inputs, true)?;
    let grads = tape.backward(loss)?;
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let (t, _, l) = scalar_loss(&f, xs, false)?;
        Ok(t.value(l).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[k].shape().to_vec());
        let analytic = grads.get(*var).unwrap_or(&zeros).clone();
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            probe[k].data_mut()[i] = x0 + eps;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = x0 - eps;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[i];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some(Coordinate {
                    input: k,
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    if report.max_rel_error > tol {
        let w = report.worst.as_ref().expect("at least one coordinate");
        return Err(Error::Numeric(format!(
            "gradient check failed: rel error {:.3e} > {tol:.1e} at input {} index {} (analytic {:.6e}, numeric {:.6e})",
            report.max_rel_error, w.input, w.index, w.analytic, w.numeric
        )));
    }
    Ok(report)
}
