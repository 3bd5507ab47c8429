use super::{AutodiffError, ParamId, ParamStore};

/// Adagrad with a per-coordinate squared-gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Adagrad {
    pub lr: f64,
    pub eps: f64,
    accumulators: Vec<Vec<f64>>,
    /// Per-parameter multiplier on `lr`.
    lr_scale: Vec<f64>,
}

impl Adagrad {
    pub fn new(store: &ParamStore, lr: f64, eps: f64) -> Result<Self, AutodiffError> {
        if !(lr > 0.0 && lr.is_finite()) || !(eps > 0.0 && eps.is_finite()) {
            return Err(AutodiffError::Domain { op: "adagrad", detail: format!("lr={lr}, eps={eps}") });
        }
        let accumulators = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        let lr_scale = vec![1.0; store.len()];
        Ok(Self { lr, eps, accumulators, lr_scale })
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accumulators
    }

    /// Scales the learning rate of one parameter.
    pub fn set_lr_scale(&mut self, id: ParamId, scale: f64) -> Result<(), AutodiffError> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(AutodiffError::Domain { op: "adagrad", detail: format!("lr scale {scale}") });
        }
        let slot = self.lr_scale.get_mut(id.index()).ok_or_else(|| AutodiffError::Contract("unknown parameter".into()))?;
        *slot = scale;
        Ok(())
    }

    /// Replaces accumulator state, e.g. when restoring a checkpoint.
    pub fn set_accumulators(&mut self, acc: Vec<Vec<f64>>) -> Result<(), AutodiffError> {
        let ok = acc.len() == self.accumulators.len()
            && acc.iter().zip(&self.accumulators).all(|(a, b)| a.len() == b.len());
        if !ok {
            return Err(AutodiffError::ShapeMismatch { op: "adagrad-restore", detail: "accumulator layout differs".into() });
        }
        self.accumulators = acc;
        Ok(())
    }

    /// `acc += g²; p -= lr·g/(√acc + eps)` for every trainable parameter,
    /// then clears the gradients. Every trainable parameter must carry a
    /// gradient buffer (call `ParamStore::zero_grad` before backward).
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), AutodiffError> {
        if self.accumulators.len() != store.len() {
            return Err(AutodiffError::Contract("optimizer built for a different parameter store".into()));
        }
        if let Some((_, name, _)) = store.iter().find(|(_, _, t)| t.requires_grad() && t.grad().is_none()) {
            return Err(AutodiffError::MissingGradient(name.to_string()));
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let t = store.get_mut(id);
            if !t.requires_grad() {
                continue;
            }
            let g = t.take_grad().expect("checked above");
            let acc = &mut self.accumulators[id.index()];
            let lr = self.lr * self.lr_scale[id.index()];
            for ((p, a), gi) in t.data_mut().iter_mut().zip(acc.iter_mut()).zip(&g) {
                *a += gi * gi;
                *p -= lr * gi / (a.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
