use super::Scalar;
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment buffers for one group of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(param_lens: &[usize], hyper: AdamHyper) -> Self {
        Self {
            m: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
            hyper,
        }
    }
}

/// One Adam update with bias correction over a group of parameter buffers.
/// `grads[i]` may be `None` when a parameter received no gradient this step.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[Option<&[T]>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return Err(CoreError::InvalidArg {
            ctx: "adam_step",
            msg: format!(
                "parameter group size mismatch: {} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let h = state.hyper;
    let (b1, b2) = (T::from_f64(h.beta1), T::from_f64(h.beta2));
    let lr = T::from_f64(h.lr);
    let eps = T::from_f64(h.epsilon);
    let bc1 = T::from_f64(1.0 - h.beta1.powi(t));
    let bc2 = T::from_f64(1.0 - h.beta2.powi(t));

    for (i, p) in params.iter_mut().enumerate() {
        if p.len() != state.m[i].len() {
            return Err(CoreError::ShapeMismatch {
                ctx: "adam_step",
                expected: format!("{} elements in moment buffer {}", p.len(), i),
                got: format!("{}", state.m[i].len()),
            });
        }
        let zero = T::zero();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for (j, w) in p.iter_mut().enumerate() {
            let g = grads[i].map_or(zero, |gs| gs[j]);
            m[j] = b1 * m[j] + (T::one() - b1) * g;
            v[j] = b2 * v[j] + (T::one() - b2) * g * g;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w = *w - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
