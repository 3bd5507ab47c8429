//! Central finite-difference oracle for checking analytic gradients.

use super::{AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};

fn check_step(h: f64) -> Result<(), AutodiffError> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(AutodiffError::Contract(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }
    Ok(())
}

fn scalar_out(tape: &Tape, out: Var) -> Result<f64, AutodiffError> {
    if tape.value(out).len() != 1 {
        return Err(AutodiffError::Contract(format!(
            "finite-difference check needs a scalar function, got shape {:?}",
            tape.shape(out)
        )));
    }
    Ok(tape.scalar(out))
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Max over coordinates of `|analytic − central difference| / max(1, |analytic|)`
/// for the scalar function `f` at `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    check_step(h)?;
    let mut tape = Tape::new();
    let xv = tape.leaf(&x.clone().with_requires_grad(true));
    let out = f(&mut tape, xv)?;
    scalar_out(&tape, out)?;
    let grads = tape.backward(out)?;
    let analytic = grads.wrt(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |data: Vec<f64>| -> Result<f64, AutodiffError> {
        let mut t = Tape::new();
        let v = t.leaf(&Tensor::from_vec(x.shape(), data)?);
        let o = f(&mut t, v)?;
        scalar_out(&t, o)
    };
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.data().to_vec();
        let mut minus = plus.clone();
        plus[i] += h;
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    Ok(worst)
}

/// Finite-difference check of a loss over stored parameters. At most
/// `max_coords` evenly spaced coordinates of each listed parameter are probed.
pub fn param_grad_check<F>(
    store: &ParamStore,
    ids: &[ParamId],
    f: F,
    h: f64,
    max_coords: usize,
) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, AutodiffError>,
{
    check_step(h)?;
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    scalar_out(&tape, out)?;
    let grads = tape.backward(out)?;
    let mut with_grads = store.clone();
    with_grads.zero_grad();
    grads.accumulate_into(&mut with_grads);

    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for &id in ids {
        let n = store.get(id).numel();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        let analytic = with_grads.get(id).grad().expect("zeroed above").to_vec();
        for i in (0..n).step_by(stride) {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + h;
            let mut t = Tape::new();
            let o = f(&mut t, &probe)?;
            let up = scalar_out(&t, o)?;
            probe.get_mut(id).data_mut()[i] = orig - h;
            let mut t = Tape::new();
            let o = f(&mut t, &probe)?;
            let down = scalar_out(&t, o)?;
            probe.get_mut(id).data_mut()[i] = orig;
            worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h)));
        }
    }
    Ok(worst)
}
