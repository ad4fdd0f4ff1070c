use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

pub struct AttentionOutput {
    /// `[N_q, C]`, heads concatenated in order.
    pub output: Var,
    /// One `[N_q, N_kv]` probability matrix per head.
    pub probs: Vec<Var>,
}

/// Scaled dot-product attention split over `heads` equal channel groups.
///
/// `q` is `[N_q, C]`; `k` and `v` are `[N_kv, C]`.
pub fn multi_head_attention(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize) -> Result<AttentionOutput> {
    let c = g.shape(q)[1];
    if heads == 0 || !c.is_multiple_of(heads) {
        return Err(Error::Config(format!("{heads} heads do not divide width {c}")));
    }
    if g.shape(k) != g.shape(v) || g.shape(k)[1] != c {
        return Err(Error::dim("attention", format!("q {:?}, k {:?}, v {:?}", g.shape(q), g.shape(k), g.shape(v))));
    }
    let d_k = c / heads;
    let temperature = 1.0 / (d_k as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (g.narrow(q, 1, h * d_k, d_k)?, g.narrow(k, 1, h * d_k, d_k)?, g.narrow(v, 1, h * d_k, d_k)?)
        };
        let scores = g.matmul(qh, kh, true)?;
        let scores = g.scale(scores, temperature);
        let p = g.softmax_rows(scores)?;
        outs.push(g.matmul(p, vh, false)?);
        probs.push(p);
    }
    let output = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
    Ok(AttentionOutput { output, probs })
}
