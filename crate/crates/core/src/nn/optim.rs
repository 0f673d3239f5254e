use super::{Gradients, ParamStore};
use crate::error::{Error, Result};

/// Plain gradient descent: `p <- p - alpha * grad` for every parameter in `grads`.
///
/// Rejects the whole step, leaving `store` untouched, if any gradient entry is
/// not finite.
pub fn sgd_step(store: &mut ParamStore, grads: &Gradients, alpha: f64) -> Result<()> {
    for (id, g) in grads.iter() {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of `{}` is not finite",
                store.name(id)
            )));
        }
        if g.shape() != store.get(id).shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} for `{}` of shape {:?}",
                g.shape(),
                store.name(id),
                store.get(id).shape()
            )));
        }
    }
    if alpha == 0.0 {
        return Ok(());
    }
    for (id, g) in grads.iter() {
        for (p, d) in store.get_mut(id).data_mut().iter_mut().zip(g.data()) {
            *p -= alpha * d;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Graph, Tensor};

    fn one_param(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(v));
        s
    }

    fn quadratic_grad(store: &ParamStore) -> Gradients {
        // loss = (w - 3)^2
        let id = store.ids().next().unwrap();
        let mut g = Graph::new();
        let w = g.param(store, id);
        let d = g.offset(w, -3.0);
        let sq = g.mul(d, d).unwrap();
        let loss = g.sum(sq);
        g.backward_scalar(loss).unwrap()
    }

    #[test]
    fn zero_alpha_is_noop() {
        let mut s = one_param(1.0);
        let grads = quadratic_grad(&s);
        sgd_step(&mut s, &grads, 0.0).unwrap();
        assert_eq!(s.tensors()[0].data(), &[1.0]);
    }

    #[test]
    fn single_step_arithmetic() {
        let mut s = one_param(1.0);
        let mut grads = Gradients::default();
        let id = s.ids().next().unwrap();
        grads.accumulate(id, &[1, 1], &[2.0]);
        sgd_step(&mut s, &grads, 0.1).unwrap();
        assert!((s.get(id).data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn quadratic_converges() {
        let mut s = one_param(0.0);
        for _ in 0..200 {
            let grads = quadratic_grad(&s);
            sgd_step(&mut s, &grads, 0.1).unwrap();
        }
        // error after n steps is 3 * 0.8^n
        assert!((s.tensors()[0].data()[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut s = one_param(1.0);
        let id = s.ids().next().unwrap();
        let mut grads = Gradients::default();
        grads.accumulate(id, &[1, 1], &[f64::NAN]);
        let err = sgd_step(&mut s, &grads, 0.1).unwrap_err();
        assert!(err.is_numerical());
        assert_eq!(s.get(id).data(), &[1.0]);
    }
}
