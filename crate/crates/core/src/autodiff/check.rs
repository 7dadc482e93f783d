use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compares the tape gradient of a scalar function against central
/// differences.
///
/// `f` receives a fresh tape and the leaf holding `x`, and must return a
/// scalar node. Returns `max_i |fd_i - grad_i| / (|grad_i| + 1e-8)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let root = f(&mut tape, leaf)?;
    tape.backward(root)?;
    let analytic = match tape.grad(leaf) {
        Some(g) => g.data().to_vec(),
        None => vec![0.0; x.len()],
    };

    let eval = |point: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(point);
        let r = f(&mut t, v)?;
        let out = t.value(r);
        if out.len() != 1 {
            return Err(Error::Contract("finite_diff_check needs a scalar".into()));
        }
        Ok(out.data()[0])
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let err = (fd - analytic[i]).abs() / (analytic[i].abs() + 1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
