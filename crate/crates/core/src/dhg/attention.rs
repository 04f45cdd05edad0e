use alloc::vec::Vec;

use super::DhgError;
use crate::nn::{NnError, Tape, Var};

/// Per-head attention result.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// `N x 2`: column 0 is the spatial weight, column 1 the temporal weight.
    pub weights: Var,
    pub key_spa: Var,
    pub key_tem: Var,
}

/// Weighted mean of node features per edge: `E(e) = sum_v M(v,e) H(v) / sum_v M(v,e)`.
pub fn hyperedge_embedding(tape: &mut Tape, m: Var, h: Var) -> Result<Var, DhgError> {
    let mt = tape.transpose(m);
    let num = tape.matmul(mt, h)?;
    let sums = tape.row_sums(mt);
    if tape.value(sums).as_slice().iter().any(|&s| s == 0.0 || !s.is_finite()) {
        return Err(DhgError::Degenerate("hyperedge with zero incidence mass"));
    }
    Ok(tape.div_col(num, sums)?)
}

/// Spatial/temporal attention weights of one head.
///
/// `params` holds `[query, key_spa, key_tem, att_spa, att_tem]`; scores are
/// scaled by `1/sqrt(model_dim)`.
pub fn hyperedge_attention(
    tape: &mut Tape,
    h: Var,
    e_spa: Var,
    e_tem: Var,
    params: [Var; 5],
    model_dim: usize,
) -> Result<HeadOutput, DhgError> {
    let [query, key_spa, key_tem, att_spa, att_tem] = params;
    if tape.value(e_spa).shape() != tape.value(e_tem).shape() {
        return Err(NnError::Dimension {
            op: "hyperedge_attention",
            lhs: tape.value(e_spa).shape(),
            rhs: tape.value(e_tem).shape(),
        }
        .into());
    }
    let scale = 1.0 / libm::sqrt(model_dim as f64);
    let q = tape.matmul(h, query)?;
    let ks = tape.matmul(e_spa, key_spa)?;
    let kt = tape.matmul(e_tem, key_tem)?;
    let score = |tape: &mut Tape, theta: Var, k: Var| -> Result<Var, NnError> {
        let qa = tape.matmul(q, theta)?;
        let prod = tape.mul(qa, k)?;
        let s = tape.row_sums(prod);
        Ok(tape.scale(s, scale))
    };
    let a_s = score(tape, att_spa, ks)?;
    let a_t = score(tape, att_tem, kt)?;
    let scores = tape.concat_cols(&[a_s, a_t])?;
    let weights = tape.softmax_rows(scores);
    Ok(HeadOutput { weights, key_spa: ks, key_tem: kt })
}

/// Concatenates `w_spa * K_spa + w_tem * K_tem` over heads.
pub fn node_update(tape: &mut Tape, heads: &[HeadOutput]) -> Result<Var, DhgError> {
    if heads.is_empty() {
        return Err(NnError::Empty("node_update").into());
    }
    let mut parts = Vec::with_capacity(heads.len());
    for h in heads {
        let ws = tape.slice_cols(h.weights, 0, 1)?;
        let wt = tape.slice_cols(h.weights, 1, 1)?;
        let s = tape.mul_col(h.key_spa, ws)?;
        let t = tape.mul_col(h.key_tem, wt)?;
        parts.push(tape.add(s, t)?);
    }
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    Ok(tape.concat_cols(&parts)?)
}

/// Mean of node rows, as a `1 x d` row.
pub fn graph_readout(tape: &mut Tape, nodes: Var) -> Result<Var, DhgError> {
    if tape.value(nodes).rows() == 0 {
        return Err(DhgError::Degenerate("readout of an empty graph"));
    }
    Ok(tape.col_means(nodes)?)
}
