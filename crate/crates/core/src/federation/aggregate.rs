use std::cmp::Ordering;

use super::FederationError;
use crate::model::{lora_a_id, lora_b_id, weight_id, ModelConfig};
use crate::numerics::{matmul, ParamId, ParamStore, Tensor};

/// One client's upload: its trainable parameters and labeled-set size `n_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientParams {
    pub params: ParamStore,
    pub n_k: usize,
}

fn check_updates(updates: &[ClientParams]) -> Result<(), FederationError> {
    let first = updates.first().ok_or(FederationError::NoUpdates)?;
    for (i, u) in updates.iter().enumerate() {
        if u.n_k == 0 {
            return Err(FederationError::ZeroWeight { index: i });
        }
        if u.params.len() != first.params.len() {
            return Err(FederationError::ParamMismatch(format!(
                "update {i} has {} tensors, update 0 has {}",
                u.params.len(),
                first.params.len()
            )));
        }
        for (id, t) in first.params.iter() {
            match u.params.get(id) {
                Some(other) if other.shape() == t.shape() => {}
                Some(other) => {
                    return Err(FederationError::ParamMismatch(format!(
                        "{id}: shape {:?} vs {:?}",
                        other.shape(),
                        t.shape()
                    )))
                }
                None => return Err(FederationError::ParamMismatch(format!("{id} missing from update {i}"))),
            }
        }
    }
    Ok(())
}

/// Total order on uploads: by `n_k`, then by tensor values in id order.
fn canonical_cmp(a: &ClientParams, b: &ClientParams) -> Ordering {
    a.n_k.cmp(&b.n_k).then_with(|| {
        for ((_, ta), (_, tb)) in a.params.iter().zip(b.params.iter()) {
            for (x, y) in ta.data().iter().zip(tb.data()) {
                match x.total_cmp(y) {
                    Ordering::Equal => {}
                    o => return o,
                }
            }
        }
        Ordering::Equal
    })
}

/// Weighted average `Σ_k (n_k / n) · w_k`, applied to every tensor
/// independently (LoRA factors A and B are averaged separately).
///
/// Summation runs in a canonical client order, so the result is bitwise
/// independent of the order of `updates`. A tensor on which all clients agree
/// is returned unchanged.
pub fn fedavg(updates: &[ClientParams]) -> Result<ParamStore, FederationError> {
    check_updates(updates)?;
    let mut order: Vec<&ClientParams> = updates.iter().collect();
    order.sort_by(|a, b| canonical_cmp(a, b));
    let n: usize = updates.iter().map(|u| u.n_k).sum();
    let weights: Vec<f64> = order.iter().map(|u| u.n_k as f64 / n as f64).collect();
    let mut out = ParamStore::new();
    for (id, first) in order[0].params.iter() {
        let tensors: Vec<&Tensor> = order
            .iter()
            .map(|u| u.params.get(id).expect("checked").as_ref())
            .collect();
        if tensors.iter().all(|t| t.data() == first.data()) {
            out.insert(id.clone(), (**first).clone());
            continue;
        }
        let mut acc = vec![0.0; first.len()];
        for (t, &w) in tensors.iter().zip(&weights) {
            for (a, x) in acc.iter_mut().zip(t.data()) {
                *a += w * x;
            }
        }
        out.insert(id.clone(), Tensor::new(first.shape().to_vec(), acc)?);
    }
    Ok(out)
}

/// Plain elementwise `Σ_k n_k · w_k / n` in the given order. A reference
/// implementation for cross-checking [`fedavg`].
pub fn fedavg_reference(updates: &[ClientParams]) -> Result<ParamStore, FederationError> {
    check_updates(updates)?;
    let n: f64 = updates.iter().map(|u| u.n_k as f64).sum();
    let mut out = ParamStore::new();
    for (id, t0) in updates[0].params.iter() {
        let data = (0..t0.len())
            .map(|i| {
                updates
                    .iter()
                    .map(|u| u.n_k as f64 * u.params.get(id).expect("checked").data()[i])
                    .sum::<f64>()
                    / n
            })
            .collect();
        out.insert(id.clone(), Tensor::new(t0.shape().to_vec(), data)?);
    }
    Ok(out)
}

/// Weighted average of the reconstructed updates `Σ_k (n_k / n) · B_k·A_k`
/// for every adapted matrix, keyed by the matrix's weight id. A diagnostic
/// to compare with the product of the averaged factors.
pub fn product_average(
    updates: &[ClientParams],
    config: &ModelConfig,
) -> Result<Vec<(ParamId, Tensor)>, FederationError> {
    check_updates(updates)?;
    let n: usize = updates.iter().map(|u| u.n_k).sum();
    let mut out = Vec::new();
    for (layer, role, d, k) in config.adapted_matrices() {
        let (a_id, b_id) = (lora_a_id(layer, role), lora_b_id(layer, role));
        let mut acc = vec![0.0; d * k];
        for u in updates {
            let get = |id: &ParamId| {
                u.params
                    .get(id)
                    .ok_or_else(|| FederationError::ParamMismatch(format!("{id} missing")))
            };
            let delta = matmul(get(&b_id)?, get(&a_id)?)?;
            let w = u.n_k as f64 / n as f64;
            for (a, x) in acc.iter_mut().zip(delta.data()) {
                *a += w * x;
            }
        }
        out.push((weight_id(layer, role), Tensor::new(vec![d, k], acc)?));
    }
    Ok(out)
}
