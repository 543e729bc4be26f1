//! Central finite-difference gradient checking.
//!
//! Only evaluates the forward graph; it shares no code with the backward pass.
//! When the stencil `x ± h` crosses a non-differentiable point (a leaky-ReLU
//! kink, a clamp boundary, the zero of an absolute value) the central
//! difference does not estimate the derivative at `x`. Such elements are
//! retried with the step divided by 10, down to [`MIN_STEP`]; elements that
//! never get a kink-free stencil are skipped. Both counts are reported.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::graph::{Graph, Var};
use crate::nn::params::ParamSet;
use crate::nn::tensor::Tensor;

/// Smallest step tried when refining around a kink.
pub const MIN_STEP: f64 = 1e-6;

/// Error summary for one differentiable leaf.
#[derive(Debug, Clone)]
pub struct LeafCheck {
    pub leaf: usize,
    pub checked: usize,
    pub refined: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Relative error with an absolute floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn scalar_of(g: &Graph, v: Var) -> f64 {
    g.value(v).data()[0]
}

/// Compares analytic gradients of the scalar built by `build` against central
/// differences with step `h`.
///
/// `max_per_leaf` limits how many evenly spaced elements of each leaf are
/// perturbed. `floor` is the denominator floor for [`relative_error`].
pub fn check<F>(leaves: &[Tensor], build: F, h: f64, max_per_leaf: Option<usize>, floor: f64) -> Result<Vec<LeafCheck>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::with_branch_tracking();
    let vars: Vec<Var> = leaves.iter().map(|t| g.leaf(t.clone())).collect();
    let root = build(&mut g, &vars)?;
    let base_branches = g.branches().unwrap_or_default().to_vec();
    let grads = g.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(leaves)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<(f64, bool)> {
        let mut g = Graph::with_branch_tracking();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.input(t.clone())).collect();
        let root = build(&mut g, &vars)?;
        let smooth = g.branches().unwrap_or_default() == base_branches.as_slice();
        Ok((scalar_of(&g, root), smooth))
    };

    let mut work: Vec<Tensor> = leaves.to_vec();
    let mut out = Vec::with_capacity(leaves.len());
    for (li, leaf) in leaves.iter().enumerate() {
        let n = leaf.len();
        let indices: Vec<usize> = match max_per_leaf {
            Some(m) if m < n => (0..m).map(|k| k * n / m).collect(),
            _ => (0..n).collect(),
        };
        let mut report = LeafCheck { leaf: li, checked: 0, refined: 0, skipped: 0, max_rel_err: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
        for &i in &indices {
            let orig = leaf.data()[i];
            let mut step = h;
            let numeric = loop {
                work[li].data_mut()[i] = orig + step;
                let (plus, smooth_plus) = eval(&work)?;
                work[li].data_mut()[i] = orig - step;
                let (minus, smooth_minus) = eval(&work)?;
                work[li].data_mut()[i] = orig;
                if smooth_plus && smooth_minus {
                    break Some((plus - minus) / (2.0 * step));
                }
                step /= 10.0;
                if step < MIN_STEP * 0.5 {
                    break None;
                }
            };
            let Some(numeric) = numeric else {
                report.skipped += 1;
                continue;
            };
            report.checked += 1;
            if step < h {
                report.refined += 1;
            }
            let a = analytic[li].data()[i];
            let err = relative_error(a, numeric, floor);
            if err > report.max_rel_err {
                report = LeafCheck { max_rel_err: err, worst_index: i, analytic: a, numeric, ..report };
            }
        }
        out.push(report);
    }
    Ok(out)
}

/// `params` with `U(-scale, scale)` noise added to every element, so that
/// zero-initialized tensors do not pin activations exactly onto kinks.
pub fn generic_point(params: &ParamSet, scale: f64, seed: u64) -> Result<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    params.map(|_, t| {
        let data = t.data().iter().map(|v| v + rng.random_range(-scale..scale)).collect();
        Tensor::new(t.shape().to_vec(), data).expect("shape taken from an existing tensor")
    })
}
