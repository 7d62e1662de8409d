//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::network::Network;
use super::Tensor;

/// Finite-difference step for 64-bit checks.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates whose ±h probes crossed a ReLU or max-pool switch; the
    /// function is not differentiable across them.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn merge(mut self, other: GradCheckReport, index_offset: usize) -> GradCheckReport {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst_index = other.worst_index.map(|i| i + index_offset);
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
        self
    }
}

/// Compares `analytic` with central differences of `f` at `x`.
///
/// `f` returns the scalar value and an activation signature; a coordinate
/// whose perturbed evaluations change the signature is skipped.
pub fn check_gradient(
    x: &[f64],
    analytic: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> (f64, u64),
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let (_, base_sig) = f(x);
    let mut report = GradCheckReport::default();
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let (fp, sp) = f(&probe);
        probe[i] = x[i] - h;
        let (fm, sm) = f(&probe);
        probe[i] = x[i];
        if sp != base_sig || sm != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let err = relative_error(analytic[i], numeric, RELATIVE_FLOOR);
        report.checked += 1;
        if report.worst_index.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    report
}

/// Random projection weights turning a network output into a scalar.
pub fn projection(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn scalarize(net: &mut Network<f64>, input: &Tensor<f64>, weights: &[f64]) -> Result<(f64, u64)> {
    let (y, tape) = net.forward_train(input)?;
    let value = y.data().iter().zip(weights).map(|(a, b)| a * b).sum();
    Ok((value, tape.activation_signature()))
}

/// Checks input and trainable-parameter gradients of a training-mode
/// network pass, projected to a scalar with fixed random weights.
pub fn gradient_check(net: &Network<f64>, input: &Tensor<f64>, h: f64, seed: u64) -> Result<GradCheckReport> {
    let mut work = net.clone();
    let (y, tape) = work.forward_train(input)?;
    let weights = projection(y.len(), seed);
    work.zero_grad();
    let grad_in = work.backward(tape, Tensor::from_vec(y.shape(), weights.clone())?)?;

    let mut report = {
        let mut probe_net = net.clone();
        check_gradient(input.data(), grad_in.data(), h, |x| {
            let t = Tensor::from_vec(input.shape(), x.to_vec()).expect("same shape");
            scalarize(&mut probe_net, &t, &weights).expect("forward succeeded once")
        })
    };
    let mut offset = input.len();
    for (pi, p) in work.params().iter().enumerate() {
        if !p.trainable {
            continue;
        }
        let analytic = p.tensor.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.tensor.len()]);
        let mut probe_net = net.clone();
        let sub = check_gradient(p.tensor.data(), &analytic, h, |x| {
            probe_net.params_mut()[pi].tensor.data_mut().copy_from_slice(x);
            scalarize(&mut probe_net, input, &weights).expect("forward succeeded once")
        });
        report = report.merge(sub, offset);
        offset += p.tensor.len();
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_quadratic() {
        let x = [0.3, -1.2, 2.0];
        let analytic: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = check_gradient(&x, &analytic, DEFAULT_STEP, |v| (v.iter().map(|a| a * a).sum(), 0));
        assert!(r.max_rel_error < 1e-9);
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn detects_wrong_gradient() {
        let x = [0.5, 0.5];
        let r = check_gradient(&x, &[1.0, 0.0], DEFAULT_STEP, |v| (v[0] * v[1], 0));
        // errors are 0.5 at index 0 and 1.0 at index 1
        assert!((r.max_rel_error - 1.0).abs() < 1e-6);
        assert_eq!(r.worst_index, Some(1));
    }

    #[test]
    fn skips_signature_changes() {
        let x = [DEFAULT_STEP / 2.0];
        let r = check_gradient(&x, &[1.0], DEFAULT_STEP, |v| (v[0].abs(), u64::from(v[0] > 0.0)));
        assert_eq!((r.checked, r.skipped), (0, 1));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(2.0, 1.0, 1e-3), 0.5);
        assert!((relative_error(1e-6, 0.0, 1e-3) - 1e-3).abs() < 1e-15);
    }
}
