//! Finite-difference verification of backward rules.
//!
//! The comparison is analytic (tape) gradient against central differences,
//! per coordinate, with relative errors whose denominator is clamped at
//! `1e-8`.

use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare the tape gradient of a scalar-valued function at `point` against
/// central finite differences with the given `step`.
///
/// `f` must build the same computation every call; it receives a fresh graph
/// and the leaf registered for the (possibly perturbed) point.
pub fn check_gradients<F>(f: F, point: &Tensor, step: f64) -> GradCheckReport
where
    F: Fn(&mut Graph, Var) -> Var,
{
    let mut p = point.clone();
    p.requires_grad = true;

    let mut g = Graph::new();
    let x = g.leaf(&p);
    let loss = f(&mut g, x);
    g.backward(loss);
    let analytic = g.grad(x).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; p.len()]);

    let eval = |t: &Tensor| -> f64 {
        let mut g = Graph::new();
        let x = g.leaf(t);
        let loss = f(&mut g, x);
        g.scalar_value(loss)
    };

    let mut frozen = point.clone();
    frozen.requires_grad = false;
    let mut numeric = vec![0.0; frozen.len()];
    for i in 0..frozen.len() {
        let orig = frozen.values[i];
        frozen.values[i] = orig + step;
        let plus = eval(&frozen);
        frozen.values[i] = orig - step;
        let minus = eval(&frozen);
        frozen.values[i] = orig;
        numeric[i] = (plus - minus) / (2.0 * step);
    }

    let max_rel_err = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max);

    GradCheckReport { analytic, numeric, max_rel_err }
}

/// Central finite difference of an arbitrary scalar function of a flat
/// coordinate vector. Used to audit multi-tensor models coordinate by
/// coordinate, independent of the tape.
pub fn central_difference<F>(f: &mut F, coords: &mut [f64], i: usize, step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = coords[i];
    coords[i] = orig + step;
    let plus = f(coords);
    coords[i] = orig - step;
    let minus = f(coords);
    coords[i] = orig;
    (plus - minus) / (2.0 * step)
}
