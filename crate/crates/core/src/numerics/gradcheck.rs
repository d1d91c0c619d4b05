use super::{Graph, Tensor2, Var};
use crate::error::{Error, Result};

/// Compares the reverse-mode gradient of a scalar function against central
/// finite differences, entry by entry.
///
/// Returns the largest relative error, where each entry's error is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor2, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(format!(
            "grad_check eps must be > 0, got {eps}"
        )));
    }
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let out = f(&mut g, xv)?;
    check_finite(g.value(out), "grad_check forward")?;
    g.backward(out)?;
    let analytic = g
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor2::zeros(x.rows(), x.cols()));
    check_finite(&analytic, "grad_check analytic gradient")?;

    let eval = |probe: Tensor2| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(probe);
        let out = f(&mut g, v)?;
        let y = g.scalar(out);
        if !y.is_finite() {
            return Err(Error::NonFinite("grad_check probe".into()));
        }
        Ok(y)
    };

    let mut worst = 0.0f64;
    for i in 0..x.data().len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

fn check_finite(t: &Tensor2, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
