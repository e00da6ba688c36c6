//! Central finite-difference checks of reverse-mode gradients.

use alloc::vec::Vec;

use crate::graph::{Graph, Var};
use crate::nn::ParamStore;
use crate::tensor::Tensor;
use crate::Result;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// Magnitude floor in the relative-error denominator. Coordinates whose true
/// gradient is below this are compared in absolute terms, where central
/// differences are limited by round-off rather than truncation.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Number of coordinates compared.
    pub checked: usize,
}

impl GradCheck {
    fn record(&mut self, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        self.max_abs_err = self.max_abs_err.max(abs);
        self.max_rel_err = self.max_rel_err.max(relative_error(analytic, numeric));
        self.checked += 1;
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares the gradient of scalar `f` with respect to each of `inputs`
/// against central differences with step [`STEP`].
pub fn grad_check<F>(inputs: &[Tensor], f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut report = GradCheck::default();
    let mut work = inputs.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        for j in 0..a.numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + STEP;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - STEP;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            report.record(a.data()[j], (plus - minus) / (2.0 * STEP));
        }
    }
    Ok(report)
}

/// Like [`grad_check`], with every parameter of `store` as the inputs.
pub fn grad_check_params<F>(store: &ParamStore, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let grads = g.backward(out)?;

    let mut report = GradCheck::default();
    let mut work = store.clone();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let zeros = Tensor::zeros(store.value(id).shape());
        let analytic = grads.param(id).unwrap_or(&zeros).clone();
        for j in 0..analytic.numel() {
            let orig = work.value(id).data()[j];
            work.value_mut(id).data_mut()[j] = orig + STEP;
            let plus = {
                let mut g = Graph::new();
                let o = f(&mut g, &work)?;
                g.value(o).item()
            };
            work.value_mut(id).data_mut()[j] = orig - STEP;
            let minus = {
                let mut g = Graph::new();
                let o = f(&mut g, &work)?;
                g.value(o).item()
            };
            work.value_mut(id).data_mut()[j] = orig;
            report.record(analytic.data()[j], (plus - minus) / (2.0 * STEP));
        }
    }
    Ok(report)
}
