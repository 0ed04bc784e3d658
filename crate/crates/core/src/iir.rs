//! All-pole recursion `s[n] = e[n] - sum_i a[i] s[n - i]` and its adjoints.
//!
//! Both vector-Jacobian products reuse the forward recursion:
//!
//! * input: filter the output gradient with the same coefficients, running
//!   backwards in time;
//! * coefficients: filter `-s[n - 1]` once to get the sensitivity to `a[1]`;
//!   the sensitivity to `a[i]` is the same sequence delayed by `i - 1`.
//!
//! Initial conditions are zero throughout. Recursions run sequentially per
//! sequence; batches spread whole sequences over workers.

use crate::error::{check_len, Error, Result};
use crate::par::Exec;

/// Direct-form denominator `1 + a[0] z^-1 + ... + a[M-1] z^-M`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AllPoleFilter {
    pub a: Vec<f64>,
}

impl AllPoleFilter {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if let Some(i) = a.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "filter coefficients",
                index: i,
            });
        }
        Ok(Self { a })
    }

    pub fn order(&self) -> usize {
        self.a.len()
    }

    pub fn filter(&self, e: &[f64]) -> Result<Vec<f64>> {
        lfilter_allpole(e, &self.a)
    }

    /// Gradients with respect to the input and the coefficients, given the
    /// forward output `s`.
    pub fn vjp(&self, grad_s: &[f64], s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((vjp_input(grad_s, &self.a)?, vjp_coeffs(grad_s, s, &self.a)?))
    }
}

/// Run the recursion with zero initial state.
///
/// Fails with the index of the first non-finite output sample.
pub fn lfilter_allpole(e: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    let mut s = vec![0.0; e.len()];
    lfilter_into(e, a, &mut s)?;
    Ok(s)
}

pub(crate) fn lfilter_into(e: &[f64], a: &[f64], s: &mut [f64]) -> Result<()> {
    debug_assert_eq!(e.len(), s.len());
    let m = a.len();
    let head = m.min(e.len());
    for n in 0..head {
        let mut acc = e[n];
        for i in 1..=n {
            acc -= a[i - 1] * s[n - i];
        }
        s[n] = acc;
    }
    for n in head..e.len() {
        let past = &s[n - m..n];
        // a[i-1] pairs with s[n-i], i.e. past reversed
        let mut acc = e[n];
        for (ai, si) in a.iter().zip(past.iter().rev()) {
            acc -= ai * si;
        }
        s[n] = acc;
        if !acc.is_finite() {
            return Err(Error::NonFinite {
                what: "filter output",
                index: n,
            });
        }
    }
    if let Some(i) = s[..head].iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "filter output",
            index: i,
        });
    }
    Ok(())
}

/// Gradient with respect to the filter input: the output gradient filtered
/// backwards in time by the same all-pole filter.
pub fn vjp_input(grad_s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    let reversed: Vec<f64> = grad_s.iter().rev().copied().collect();
    let mut out = lfilter_allpole(&reversed, a)?;
    out.reverse();
    Ok(out)
}

/// Gradient with respect to the coefficients `a[0..M]`.
pub fn vjp_coeffs(grad_s: &[f64], s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    check_len("forward output", grad_s.len(), s.len())?;
    let n = s.len();
    let mut delayed = vec![0.0; n];
    for i in 1..n {
        delayed[i] = -s[i - 1];
    }
    // sensitivity of s to a[0]; a[i] sees the same sequence delayed by i
    let sens = lfilter_allpole(&delayed, a)?;
    Ok((0..a.len())
        .map(|i| {
            if i >= n {
                return 0.0;
            }
            grad_s[i..]
                .iter()
                .zip(&sens[..n - i])
                .map(|(g, d)| g * d)
                .sum()
        })
        .collect())
}

/// Several sequences of equal length, each with its own coefficients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterBatch {
    pub inputs: Vec<Vec<f64>>,
    pub coeffs: Vec<Vec<f64>>,
}

impl FilterBatch {
    fn validate(&self) -> Result<()> {
        check_len("batch coefficients", self.inputs.len(), self.coeffs.len())?;
        if let Some(first) = self.inputs.first() {
            for x in &self.inputs {
                check_len("batch sequence", first.len(), x.len())?;
            }
        }
        Ok(())
    }
}

/// Forward outputs of a batch; they double as the saved state for
/// [`vjp_batch`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchOutput {
    pub outputs: Vec<Vec<f64>>,
}

pub fn filter_batch(batch: &FilterBatch) -> Result<BatchOutput> {
    filter_batch_with(batch, Exec::default())
}

/// One worker per sequence at most; results do not depend on `exec`.
pub fn filter_batch_with(batch: &FilterBatch, exec: Exec) -> Result<BatchOutput> {
    batch.validate()?;
    let outputs = exec.try_map(batch.inputs.len(), |b| {
        lfilter_allpole(&batch.inputs[b], &batch.coeffs[b])
    })?;
    Ok(BatchOutput { outputs })
}

/// Per-sequence `(grad_input, grad_coeffs)`.
pub fn vjp_batch(
    batch: &FilterBatch,
    forward: &BatchOutput,
    grads: &[Vec<f64>],
    exec: Exec,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    batch.validate()?;
    check_len("batch outputs", batch.inputs.len(), forward.outputs.len())?;
    check_len("batch gradients", batch.inputs.len(), grads.len())?;
    exec.try_map(grads.len(), |b| {
        let a = &batch.coeffs[b];
        Ok((
            vjp_input(&grads[b], a)?,
            vjp_coeffs(&grads[b], &forward.outputs[b], a)?,
        ))
    })
}
