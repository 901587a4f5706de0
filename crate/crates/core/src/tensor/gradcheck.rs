//! Central-difference verification of the reverse sweep.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Largest elementwise relative error between `backward` and central
/// differences of `f` at `params`.
///
/// `f` receives a fresh graph plus one leaf per entry of `params` and must
/// return a one-element loss. The relative error of each component uses the
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::contract(format!("finite difference step must be positive, got {eps}")));
    }

    let mut graph = Graph::new();
    let leaves: Vec<Var> = params.iter().map(|p| graph.leaf(p.clone(), true)).collect();
    let loss = f(&mut graph, &leaves)?;
    let grads = graph.backward(loss)?;

    let evaluate = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|p| g.leaf(p.clone(), false)).collect();
        let out = f(&mut g, &vars)?;
        g.value(out)
            .item()
            .ok_or_else(|| Error::contract("loss must have exactly one element"))
    };

    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for (which, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt(*leaf);
        for i in 0..params[which].len() {
            let original = params[which].data()[i];
            probe[which].data_mut()[i] = original + eps;
            let plus = evaluate(&probe)?;
            probe[which].data_mut()[i] = original - eps;
            let minus = evaluate(&probe)?;
            probe[which].data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
