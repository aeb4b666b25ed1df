//! Central finite-difference verification of analytic gradients.
//!
//! The function under test maps leaf tensors to an output tensor inside a
//! fresh [`Graph`]. Non-scalar outputs are reduced with a fixed random
//! projection `Σ out ⊙ R`, so every output element contributes to the check.
//! For each probed coordinate the analytic gradient is compared with
//! `(f(x + ε) − f(x − ε)) / 2ε`. The relative error is
//! `|a − n| / max(|a|, |n|, floor)`.
//!
//! Probes where the forward and backward one-sided differences disagree by
//! more than `kink_tol` straddle a non-differentiable point (ReLU at zero,
//! `|x|` at zero, clamp edges). They are reported as excluded, not failed.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug)]
pub struct FdConfig {
    pub eps: f64,
    /// Coordinates probed per input (all coordinates when the input is smaller).
    pub probes: usize,
    pub tol: f64,
    pub denom_floor: f64,
    pub kink_tol: f64,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig { eps: 1e-4, probes: 100, tol: 1e-4, denom_floor: 1e-3, kink_tol: 1e-2, seed: 0x5eed }
    }
}

#[derive(Clone, Debug, Default)]
pub struct InputReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub probed: usize,
    /// Flat indices skipped because they sit on a non-differentiable point.
    pub excluded: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub inputs: Vec<InputReport>,
    pub tol: f64,
}

impl FdReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }

    pub fn excluded(&self) -> usize {
        self.inputs.iter().map(|r| r.excluded.len()).sum()
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>], projection: &mut Option<Tensor<f64>>, seed: u64) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &leaves)?;
    let root = if g.shape(out) == Shape::scalar() {
        out
    } else {
        let r = projection
            .get_or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
                Tensor::randn(g.shape(out), 1.0, &mut rng)
            })
            .clone();
        let r = g.constant(r);
        let weighted = g.mul(out, r)?;
        g.sum(weighted)
    };
    Ok((g, leaves, root))
}

fn scalar_at<F>(f: &F, inputs: &[Tensor<f64>], projection: &mut Option<Tensor<f64>>, seed: u64, probe: usize) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (g, _, root) = evaluate(f, inputs, projection, seed)?;
    let v = g.value(root).data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite { index: probe, context: "objective under finite-difference perturbation".into() });
    }
    Ok(v)
}

/// Compares analytic and central-difference gradients for every input.
pub fn fd_check<F>(f: F, inputs: &[Tensor<f64>], cfg: &FdConfig) -> Result<FdReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut projection = None;
    let (mut g, leaves, root) = evaluate(&f, inputs, &mut projection, cfg.seed)?;
    if let Some(i) = g.value(root).data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: i, context: "objective at the unperturbed point".into() });
    }
    g.backward(root)?;
    for (k, &leaf) in leaves.iter().enumerate() {
        if let Some(gr) = g.grad(leaf) {
            gr.check_finite(&format!("analytic gradient of input {k}"))?;
        }
    }
    let analytic: Vec<Tensor<f64>> = leaves.iter().map(|&l| g.grad_or_zeros(l)).collect();
    let f0 = g.value(root).data()[0];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = FdReport { inputs: Vec::with_capacity(inputs.len()), tol: cfg.tol };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let probes: Vec<usize> =
            if n <= cfg.probes { (0..n).collect() } else { index::sample(&mut rng, n, cfg.probes).into_vec() };
        let mut rep = InputReport { probed: probes.len(), ..Default::default() };
        for idx in probes {
            let orig = input.data()[idx];
            work[k].data_mut()[idx] = orig + cfg.eps;
            let fp = scalar_at(&f, &work, &mut projection, cfg.seed, idx)?;
            work[k].data_mut()[idx] = orig - cfg.eps;
            let fm = scalar_at(&f, &work, &mut projection, cfg.seed, idx)?;
            work[k].data_mut()[idx] = orig;

            let forward = (fp - f0) / cfg.eps;
            let backward = (f0 - fm) / cfg.eps;
            let central = (fp - fm) / (2.0 * cfg.eps);
            if (forward - backward).abs() > cfg.kink_tol * central.abs().max(1.0) {
                rep.excluded.push(idx);
                continue;
            }
            let a = analytic[k].data()[idx];
            let rel = (a - central).abs() / a.abs().max(central.abs()).max(cfg.denom_floor);
            if rel > rep.max_rel_error {
                rep.max_rel_error = rel;
                rep.worst_index = Some(idx);
            }
        }
        report.inputs.push(rep);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Axis;

    #[test]
    fn matmul_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::randn(Shape::matrix(4, 4), 1.0, &mut rng);
        let b = Tensor::randn(Shape::matrix(4, 4), 1.0, &mut rng);
        let rep = fd_check(|g, v| g.matmul(v[0], v[1]), &[a, b], &FdConfig::default()).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn softmax_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(Shape::new(1, 1, 1, 10), 1.0, &mut rng);
        let rep = fd_check(|g, v| Ok(g.softmax(v[0], Axis::W)), &[x], &FdConfig::default()).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn relu_at_zero_is_excluded_not_failed() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.0, 0.5, -0.5]).unwrap();
        let rep = fd_check(|g, v| Ok(g.relu(v[0])), &[x], &FdConfig::default()).unwrap();
        assert_eq!(rep.inputs[0].excluded, vec![0]);
        assert!(rep.passed());
    }

    #[test]
    fn missing_gradient_path_is_caught() {
        // The output is recorded as a constant, so the analytic gradient is 0 while the numeric one is 3.
        let x = Tensor::from_vec(Shape::scalar(), vec![2.0]).unwrap();
        let rep = fd_check(|g, v| Ok(g.constant(g.value(v[0]).map(|t| 3.0 * t))), &[x], &FdConfig::default()).unwrap();
        assert!(!rep.passed());
    }

    #[test]
    fn non_finite_objective_is_diagnosed() {
        let x = Tensor::from_vec(Shape::scalar(), vec![0.0]).unwrap();
        let err = fd_check(|g, v| Ok(g.mul_scalar(v[0], f64::INFINITY)), &[x], &FdConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
