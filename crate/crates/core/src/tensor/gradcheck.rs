//! Central finite-difference verification of graph gradients.

use std::collections::BTreeMap;

use super::{Graph, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckFailure {
    /// Parameter name, or empty for single-input checks.
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_error: f64,
    pub checked: usize,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64, tol: f64) {
        let error = (analytic - numeric).abs() / analytic.abs().max(1.0);
        self.checked += 1;
        if error > self.max_error || error.is_nan() {
            self.max_error = error;
        }
        if error.is_nan() || error > tol {
            self.failures.push(GradCheckFailure {
                name: name.to_string(),
                index,
                analytic,
                numeric,
                error,
            });
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.max_error = self.max_error.max(other.max_error);
        self.checked += other.checked;
        self.failures.extend(other.failures);
    }
}

/// Compares the autodiff gradient of scalar `f(x)` against central
/// differences with step `h`. Error is `|analytic − numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let root = f(&mut g, xv)?;
    let analytic = g.backward(root)?.get(xv);

    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.param(t);
        let r = f(&mut g, v)?;
        Ok(g.value(r).item())
    };
    let mut report = GradCheckReport::default();
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        report.record("", i, analytic.data()[i], numeric, tol);
    }
    Ok(report)
}

/// Like [`grad_check`] over every tensor of a named parameter set.
///
/// `f` receives the graph and one bound variable per parameter name.
pub fn grad_check_params<F>(f: F, params: &BTreeMap<String, Tensor>, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &BTreeMap<String, Var>) -> Result<Var>,
{
    let bind = |g: &mut Graph, p: &BTreeMap<String, Tensor>| -> BTreeMap<String, Var> {
        p.iter().map(|(k, t)| (k.clone(), g.param(t.clone()))).collect()
    };
    let mut g = Graph::new();
    let vars = bind(&mut g, params);
    let root = f(&mut g, &vars)?;
    let grads = g.backward(root)?;

    let eval = |p: &BTreeMap<String, Tensor>| -> Result<f64> {
        let mut g = Graph::new();
        let vars = bind(&mut g, p);
        let r = f(&mut g, &vars)?;
        Ok(g.value(r).item())
    };
    let mut report = GradCheckReport::default();
    let mut work = params.clone();
    for (name, var) in &vars {
        let analytic = grads.get(*var);
        for i in 0..analytic.numel() {
            let orig = params[name].data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            report.record(name, i, analytic.data()[i], (up - down) / (2.0 * h), tol);
        }
    }
    Ok(report)
}
