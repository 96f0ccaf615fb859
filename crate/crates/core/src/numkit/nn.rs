//! Small layers composed from graph primitives.

use super::{Graph, Var};

/// `x · w + b` with `w: [in, out]`, `b: [out]`.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Var {
    let y = g.matmul(x, w);
    g.add_bias(y, b)
}

/// Single-head `softmax(q·kᵀ/√d + bias)·v`. `bias`, when given, is added to
/// the logits before the softmax.
pub fn scaled_dot_attention(g: &mut Graph, q: Var, k: Var, v: Var, bias: Option<Var>) -> Var {
    let d = g.shape(q)[1];
    let logits = g.matmul_bt(q, k);
    let mut logits = g.scale(logits, 1.0 / (d as f64).sqrt());
    if let Some(b) = bias {
        logits = g.add(logits, b);
    }
    let probs = g.softmax(logits);
    g.matmul(probs, v)
}
