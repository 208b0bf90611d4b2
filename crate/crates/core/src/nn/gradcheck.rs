use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradReport {
    /// Largest per-coordinate relative error. Each coordinate's error is
    /// normalized by `max(|analytic|, |numeric|, 1e-2 · G)`, where `G` is the
    /// largest gradient magnitude among the probed coordinates.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub probes: usize,
}

/// Checks `d f / d input` for a scalar-valued graph builder `f` at `input`.
///
/// `probes` restricts the check to a subset of coordinates (all when `None`).
pub fn finite_difference_check<F>(
    input: &Tensor<f64>,
    step: f64,
    probes: Option<&[usize]>,
    f: F,
) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let eval = |t: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.leaf(t);
        let y = f(&mut g, x)?;
        Ok(g.scalar(y))
    };

    let mut g = Graph::new();
    let x = g.leaf(input.clone());
    let y = f(&mut g, x)?;
    if g.value(y).len() != 1 {
        return Err(Error::Shape("gradient check needs a scalar output".into()));
    }
    let grads = g.backward(y);
    let analytic = grads
        .of(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));

    let all: Vec<usize>;
    let idx = match probes {
        Some(p) => p,
        None => {
            all = (0..input.len()).collect();
            &all
        }
    };
    let mut pairs = Vec::with_capacity(idx.len());
    for &i in idx {
        let mut plus = input.clone();
        plus.data_mut()[i] += step;
        let mut minus = input.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        pairs.push((i, analytic.data()[i], numeric));
    }
    let scale = pairs
        .iter()
        .map(|&(_, a, n)| a.abs().max(n.abs()))
        .fold(0.0, f64::max);
    let floor = (1e-2 * scale).max(1e-12);
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        probes: pairs.len(),
    };
    for (i, a, n) in pairs {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if rel >= report.max_rel_error {
            report = GradReport {
                max_rel_error: rel,
                worst_index: i,
                analytic: a,
                numeric: n,
                ..report
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::new(vec![5], vec![0.3, -1.2, 2.0, 0.7, -0.1]);
        let r = finite_difference_check(&x, 1e-3, None, |g, v| {
            let sq = g.mul(v, v)?;
            let m = g.mean(sq);
            Ok(g.scale(m, 5.0))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
