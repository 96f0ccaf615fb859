use super::{NumError, ParamStore, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments, one pair per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect();
        Self { first_moment: zeros.clone(), second_moment: zeros, step: 0 }
    }
}

/// One bias-corrected Adam update with decoupled weight decay:
/// `p ← p·(1 − lr·wd) − lr·m̂/(√v̂ + ε)`. Parameters flagged `decay = false`
/// skip the decay term.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<(), NumError> {
    let n = params.len();
    if grads.len() != n || state.first_moment.len() != n || state.second_moment.len() != n {
        return Err(NumError::ShapeMismatch {
            op: "adam_step",
            detail: format!(
                "{n} params, {} grads, {}/{} moments",
                grads.len(),
                state.first_moment.len(),
                state.second_moment.len()
            ),
        });
    }
    for (entry, (g, (m, v))) in params
        .entries()
        .iter()
        .zip(grads.iter().zip(state.first_moment.iter().zip(&state.second_moment)))
    {
        if g.shape() != entry.value.shape() || m.shape() != entry.value.shape() || v.shape() != entry.value.shape() {
            return Err(NumError::ShapeMismatch { op: "adam_step", detail: format!("parameter {}", entry.name) });
        }
        if !g.is_finite() {
            return Err(NumError::NonFinite(format!("gradient of parameter {}", entry.name)));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (i, entry) in params.entries_mut().iter_mut().enumerate() {
        let decay = if entry.decay { 1.0 - lr * weight_decay } else { 1.0 };
        let p = entry.value.data_mut();
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (j, &gj) in grads[i].data().iter().enumerate() {
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] = p[j] * decay - lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}
