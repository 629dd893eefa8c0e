//! Central finite-difference gradient checking.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    pub passed: bool,
}

/// Relative error `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks an analytic gradient of a plain function of a flat vector.
pub fn grad_check_fn<T: Scalar>(f: impl Fn(&[T]) -> T, analytic: &[T], x: &[T], step: T, floor: f64) -> f64 {
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        probe[k] = x[k] + step;
        let up = f(&probe);
        probe[k] = x[k] - step;
        let down = f(&probe);
        probe[k] = x[k];
        let fd = ((up - down) / (step + step)).to_f64_lossy();
        worst = worst.max(relative_error(analytic[k].to_f64_lossy(), fd, floor));
    }
    worst
}

/// Checks every scalar parameter of `store` against central differences of
/// the scalar loss recorded by `loss`.
pub fn grad_check<T, F>(store: &mut ParamStore<T>, loss: F, step: T, tolerance: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let out = loss(&mut tape)?;
        let grads = tape.backward(out)?;
        let mut flat = Vec::with_capacity(store.numel());
        for id in store.ids() {
            match grads.param(id) {
                Some(g) => flat.extend_from_slice(g.data()),
                None => flat.extend(std::iter::repeat_n(T::zero(), store.value(id).len())),
            }
        }
        flat
    };
    let eval = |s: &ParamStore<T>| -> Result<T> {
        let mut tape = Tape::new(s);
        let out = loss(&mut tape)?;
        Ok(tape.value(out).data()[0])
    };
    let mut worst = 0.0f64;
    for k in 0..analytic.len() {
        let (id, off) = store.locate(k);
        let orig = store.value(id).data()[off];
        store.value_mut(id).data_mut()[off] = orig + step;
        let up = eval(store)?;
        store.value_mut(id).data_mut()[off] = orig - step;
        let down = eval(store)?;
        store.value_mut(id).data_mut()[off] = orig;
        let fd = ((up - down) / (step + step)).to_f64_lossy();
        worst = worst.max(relative_error(analytic[k].to_f64_lossy(), fd, DEFAULT_FLOOR));
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        checked: analytic.len(),
        passed: worst <= tolerance,
    })
}

/// Denominator floor so that entries whose true gradient is zero compare in
/// absolute terms.
pub const DEFAULT_FLOOR: f64 = 1e-6;
