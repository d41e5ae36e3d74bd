//! Central finite-difference gradient checking at 64-bit precision.
//!
//! The numeric side only ever runs forward passes, so it is independent of
//! every backward rule it is compared against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FD_STEP: f64 = 1e-4;

/// Gradients smaller than this in both estimates are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckOutcome {
    pub max_rel_error: f64,
    pub checked: usize,
}

impl CheckOutcome {
    fn merge(self, other: CheckOutcome) -> CheckOutcome {
        CheckOutcome {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            checked: self.checked + other.checked,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, ABS_FLOOR)
}

fn relative_error_floored(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Multiple of the difference-quotient resolution `eps * |f| / step` below
/// which gradients are compared absolutely.
pub const RESOLUTION_FLOOR: f64 = 1e5;

fn pick_entries(len: usize, limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match limit {
        Some(k) if k < len => (0..k).map(|_| rng.random_range(0..len)).collect(),
        _ => (0..len).collect(),
    }
}

fn scalar_of(graph: &Graph<f64>, v: Var) -> Result<f64> {
    let t = graph.value(v);
    if t.numel() != 1 {
        return Err(Error::InvalidArgument(format!(
            "gradient check needs a scalar output, got {:?}",
            t.shape()
        )));
    }
    Ok(t.item())
}

/// Compare backward against central differences for every input tensor.
/// `limit` caps the number of sampled entries per input.
pub fn check_inputs<F>(
    inputs: &[Tensor<f64>],
    mut build: F,
    step: f64,
    limit: Option<usize>,
    seed: u64,
) -> Result<CheckOutcome>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    scalar_of(&g, out)?;
    let grads = g.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outcome = CheckOutcome {
        max_rel_error: 0.0,
        checked: 0,
    };
    let mut eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        scalar_of(&g, out)
    };
    for (k, v) in vars.iter().enumerate() {
        let zeros;
        let analytic = match grads.get(*v) {
            Some(a) => a,
            None => {
                zeros = vec![0.0; inputs[k].numel()];
                &zeros
            }
        };
        for idx in pick_entries(inputs[k].numel(), limit, &mut rng) {
            let mut work = inputs.to_vec();
            work[k].data_mut()[idx] += step;
            let plus = eval(&work)?;
            work[k].data_mut()[idx] -= 2.0 * step;
            let minus = eval(&work)?;
            let numeric = (plus - minus) / (2.0 * step);
            outcome = outcome.merge(CheckOutcome {
                max_rel_error: relative_error(analytic[idx], numeric),
                checked: 1,
            });
        }
    }
    Ok(outcome)
}

/// One checked parameter entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamCheck {
    pub param: ParamId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// The left and right one-sided differences disagree by more than
    /// [`KINK_SCREEN`]: the step crossed a non-differentiable point and the
    /// central difference is meaningless there.
    pub kink: bool,
}

/// Relative disagreement between one-sided differences that marks a kink.
/// A single crossed kink shifts the central difference by half that
/// disagreement, so unflagged entries carry at most half this error from
/// kinks.
pub const KINK_SCREEN: f64 = 1e-3;

/// Compare parameter gradients of a model-level scalar against central
/// differences on the listed `(parameter, flat index)` entries.
pub fn check_params<M, S, F>(
    model: &mut M,
    store: S,
    mut build: F,
    entries: &[(ParamId, usize)],
    step: f64,
) -> Result<Vec<ParamCheck>>
where
    S: Fn(&mut M) -> &mut ParamStore<f64>,
    F: FnMut(&mut M, &mut Graph<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = build(model, &mut g)?;
    let centre = scalar_of(&g, out)?;
    let grads = g.backward(out)?;
    let mut rows = Vec::with_capacity(entries.len());
    for &(param, index) in entries {
        let analytic = grads.param(param).map(|a| a[index]).unwrap_or(0.0);
        let original = store(model).get(param).tensor.data()[index];
        let mut eval = |model: &mut M, value: f64| -> Result<f64> {
            store(model).get_mut(param).tensor.data_mut()[index] = value;
            let mut g = Graph::new();
            let v = build(model, &mut g)?;
            scalar_of(&g, v)
        };
        let plus = eval(model, original + step);
        let minus = eval(model, original - step);
        store(model).get_mut(param).tensor.data_mut()[index] = original;
        let (plus, minus) = (plus?, minus?);
        let numeric = (plus - minus) / (2.0 * step);
        let right = (plus - centre) / step;
        let left = (centre - minus) / step;
        let resolution = f64::EPSILON * centre.abs().max(plus.abs()).max(minus.abs()) / step;
        let floor = ABS_FLOOR.max(RESOLUTION_FLOOR * resolution);
        rows.push(ParamCheck {
            param,
            index,
            analytic,
            numeric,
            rel_error: relative_error_floored(analytic, numeric, floor),
            kink: relative_error_floored(left, right, floor) > KINK_SCREEN,
        });
    }
    Ok(rows)
}

/// Scalar projection `sum(w * x)` with fixed pseudo-random weights, used to
/// turn tensor-valued operators into checkable scalars.
pub fn random_projection(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(x).to_vec();
    let w = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
    let w = g.constant(w);
    let p = g.hadamard(x, w)?;
    Ok(g.sum(p))
}
