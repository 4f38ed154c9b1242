//! Server-side combination rules.

use ccnet_tensor::{ParamSet, Tensor};

use crate::error::{FedError, Result};

/// Weighted mean `Σ nᵢ·wᵢ / Σ nᵢ`, summed in the order given (callers pass
/// clients sorted by id).
pub fn aggregate_fedavg(clients: &[(&ParamSet, usize)]) -> Result<ParamSet> {
    let (first, _) = clients
        .first()
        .ok_or_else(|| FedError::Config("aggregate_fedavg: no client results".into()))?;
    for (p, _) in clients {
        first.ensure_layout(p)?;
    }
    let total: usize = clients.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(FedError::Config("aggregate_fedavg: zero total samples".into()));
    }
    if clients.len() == 1 {
        return Ok((*first).clone());
    }
    let mut out = first.zeros_like();
    for (p, n) in clients {
        let n = *n as f64;
        for (dst, src) in out.tensors_mut().zip(p.tensors()) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += n * s;
            }
        }
    }
    let total = total as f64;
    for t in out.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v /= total);
    }
    Ok(out)
}

/// Scaffold's corrected gradient `g − cᵢ + c`, tensor by tensor.
pub fn scaffold_correct(grads: &mut [Tensor], c: &ParamSet, c_i: &ParamSet) -> Result<()> {
    if grads.len() != c.len() || grads.len() != c_i.len() {
        return Err(FedError::Shape("scaffold: control variates do not match the gradient".into()));
    }
    for ((g, c), ci) in grads.iter_mut().zip(c.tensors()).zip(c_i.tensors()) {
        if g.shape() != c.shape() || g.shape() != ci.shape() {
            return Err(FedError::Shape(format!(
                "scaffold: gradient {:?} vs control {:?}",
                g.shape(),
                c.shape()
            )));
        }
        for ((g, &c), &ci) in g.data_mut().iter_mut().zip(c.data()).zip(ci.data()) {
            // c − cᵢ first, so equal controls add an exact zero
            *g += c - ci;
        }
    }
    Ok(())
}

/// New client control `cᵢ⁺ = cᵢ − c + (w_global − wᵢ)/(K·lr)`; returns
/// `(cᵢ⁺, cᵢ⁺ − cᵢ)`.
pub fn scaffold_client_update(
    c_i: &ParamSet,
    c: &ParamSet,
    global: &ParamSet,
    local: &ParamSet,
    steps: usize,
    lr: f64,
) -> Result<(ParamSet, ParamSet)> {
    c_i.ensure_layout(c)?;
    c_i.ensure_layout(global)?;
    c_i.ensure_layout(local)?;
    if steps == 0 {
        return Ok((c_i.clone(), c_i.zeros_like()));
    }
    let scale = 1.0 / (steps as f64 * lr);
    let mut next = c_i.clone();
    let mut delta = c_i.zeros_like();
    for k in 0..c_i.len() {
        let (ci, cc, wg, wl) = (c_i.get(k).data(), c.get(k).data(), global.get(k).data(), local.get(k).data());
        let n = next.get_mut(k).data_mut();
        for j in 0..n.len() {
            n[j] = ci[j] - cc[j] + (wg[j] - wl[j]) * scale;
        }
        let nn = next.get(k).data().to_vec();
        for (d, (a, b)) in delta.get_mut(k).data_mut().iter_mut().zip(nn.iter().zip(ci)) {
            *d = a - b;
        }
    }
    Ok((next, delta))
}

/// Server control `c ← c + mean(Δcᵢ)`.
pub fn scaffold_server_update(c: &mut ParamSet, deltas: &[&ParamSet]) -> Result<()> {
    if deltas.is_empty() {
        return Ok(());
    }
    let inv = 1.0 / deltas.len() as f64;
    for d in deltas {
        c.ensure_layout(d)?;
    }
    for k in 0..c.len() {
        let n = c.get(k).numel();
        for j in 0..n {
            let s: f64 = deltas.iter().map(|d| d.get(k).data()[j]).sum();
            c.get_mut(k).data_mut()[j] += s * inv;
        }
    }
    Ok(())
}
