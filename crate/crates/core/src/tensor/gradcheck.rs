use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Compares the tape gradient of scalar `f` at `x` with central differences.
///
/// Returns the largest `|autodiff - fd| / max(1, |fd|)` over all coordinates.
/// `f` must be deterministic; it is evaluated twice at `x` and any bitwise
/// difference is reported as [`Error::NonDeterministic`].
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, h: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let id = store.add("x", x.clone());
    grad_check_store(|tape, s| {
        let v = tape.param(s, id);
        f(tape, v)
    }, &mut store, h, None, 0)
}

/// Finite-difference check over every parameter of `store`.
///
/// With `max_coords = Some(k)`, at most `k` coordinates per parameter are
/// probed, chosen with `seed`.
pub fn grad_check_store<T, F>(
    f: F,
    store: &mut ParamStore<T>,
    h: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &ParamStore<T>) -> Result<Var>,
{
    let eval = |s: &ParamStore<T>| -> Result<f64> {
        let mut tape = Tape::no_grad();
        let out = f(&mut tape, s)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        Ok(v.item().widen())
    };

    let base = eval(store)?;
    if eval(store)?.to_bits() != base.to_bits() {
        return Err(Error::NonDeterministic);
    }

    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    store.accumulate(&grads);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = store.iter().map(|(id, _, _)| id).collect();
    let mut worst = 0f64;
    for id in ids {
        let n = store.get(id).len();
        let analytic: Vec<f64> = match store.get(id).grad() {
            Some(g) => g.iter().map(|v| v.widen()).collect(),
            None => vec![0.0; n],
        };
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = store.get(id).data()[i];
            let plus = T::narrow(orig.widen() + h);
            let minus = T::narrow(orig.widen() - h);
            store.get_mut(id).data_mut()[i] = plus;
            let fp = eval(store)?;
            store.get_mut(id).data_mut()[i] = minus;
            let fm = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;
            let step = plus.widen() - minus.widen();
            let fd = (fp - fm) / step;
            let err = (analytic[i] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    store.zero_grad();
    Ok(worst)
}
