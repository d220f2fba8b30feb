//! Central finite-difference oracle for graph gradients.
//!
//! The checker only ever calls the forward closure; analytic gradients come
//! from [`Graph::backward`] on a separate graph. Stop-gradient values are
//! frozen at their unperturbed values via [`Graph::replaying`], which is what
//! the analytic pass assumes.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Entries whose `|analytic| + |numeric|` falls below this are not compared.
pub const SKIP_BELOW: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    /// `(input, element)` of the worst entry.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Compares analytic gradients of `f` against central differences with step `h`
/// for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.leaf(t.clone())).collect();
    let loss = f(&mut graph, &vars)?;
    let grads = graph.backward(loss)?;
    let frozen = graph.detached_values().to_vec();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::replaying(frozen.clone());
        let vars: Vec<Var> = perturbed.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaf gradient").clone();
        for e in 0..inputs[i].len() {
            let base = inputs[i].data()[e];
            work[i].data_mut()[e] = base + h;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = base - h;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = base;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[e];
            if a.abs() + numeric.abs() < SKIP_BELOW {
                report.skipped += 1;
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((i, e));
            }
        }
    }
    Ok(report)
}
