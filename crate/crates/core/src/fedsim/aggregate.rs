use crate::error::{Error, Result};
use crate::nn::{ParamSet, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate<T = f32> {
    pub client_id: u16,
    pub params: ParamSet<T>,
    /// n_k, the client's train-set size.
    pub weight: usize,
}

/// `Σ (n_k / n) w_k`, accumulated in f64 in ascending `client_id` order so
/// the result does not depend on the order of `updates`. Returns the
/// aggregate and the weights used, in `client_id` order.
pub fn aggregate<T: Scalar>(updates: &[ClientUpdate<T>]) -> Result<(ParamSet<T>, Vec<f64>)> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Empty("aggregation input".into()))?;
    let fp = first.params.fingerprint();
    for u in updates {
        if u.params.fingerprint() != fp {
            return Err(Error::Incompatible(format!(
                "client {} has a different architecture",
                u.client_id
            )));
        }
        if u.weight == 0 {
            return Err(Error::InvalidArgument(format!(
                "client {} has no training samples",
                u.client_id
            )));
        }
    }
    let mut sorted: Vec<&ClientUpdate<T>> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    if sorted.windows(2).any(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::InvalidArgument("duplicate client id".into()));
    }
    let total: usize = sorted.iter().map(|u| u.weight).sum();
    let weights: Vec<f64> = sorted
        .iter()
        .map(|u| u.weight as f64 / total as f64)
        .collect();

    let mut entries = Vec::with_capacity(first.params.len());
    for (t, (name, proto)) in first.params.iter().enumerate() {
        let mut acc = vec![0.0f64; proto.len()];
        for (u, &w) in sorted.iter().zip(&weights) {
            let src = u.params.tensors().nth(t).expect("same fingerprint");
            for (a, &v) in acc.iter_mut().zip(src.data()) {
                *a += w * v.as_f64();
            }
        }
        let data = acc.into_iter().map(T::from_f64).collect();
        entries.push((name.to_string(), Tensor::new(proto.shape().to_vec(), data)?));
    }
    Ok((ParamSet::new(entries)?, weights))
}
