//! Central finite-difference gradient checks.

use super::{Graph, Tensor, TensorError, Var};

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compare reverse-mode gradients of the scalar built by `f` against
/// central differences with step `h`, for every element of every input.
///
/// `graph` must return an equivalent fresh graph on every call (same mode
/// and dropout seed), so perturbed evaluations see the same function.
pub fn check_gradients<F, E>(
    inputs: &[Tensor],
    h: f64,
    graph: impl Fn() -> Graph,
    f: F,
) -> Result<GradCheck, E>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let eval = |xs: &[Tensor]| -> Result<f64, E> {
        let mut g = graph();
        let vars: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = graph();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut xs = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + h;
            let plus = eval(&xs)?;
            xs[i].data_mut()[j] = orig - h;
            let minus = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            let err = relative_error(a, (plus - minus) / (2.0 * h));
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
