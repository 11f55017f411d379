//! Client shards.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Indices owned by one client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shard {
    pub owner: usize,
    pub indices: Vec<usize>,
    /// Common label of a label-pure shard.
    pub label: Option<usize>,
}

/// `k` label-pure shards of `per_client` samples each. Shard `k` takes the
/// `k mod C`-th smallest label present; samples of a label are handed out
/// from one shuffled queue, so shards never overlap.
pub fn partition_noniid<S: Scalar>(
    ds: &Dataset<S>,
    k: usize,
    per_client: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Shard>> {
    if k == 0 || per_client == 0 {
        return Err(Error::Config("client count and shard size must be positive".into()));
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let mut queues = ds.indices_by_label(&all);
    for (_, q) in &mut queues {
        q.shuffle(rng);
    }
    let mut taken = vec![0usize; queues.len()];
    let mut shards = Vec::with_capacity(k);
    for owner in 0..k {
        let c = owner % queues.len();
        let (label, q) = &queues[c];
        let start = taken[c];
        if q.len() - start < per_client {
            return Err(Error::InsufficientSamples {
                label: *label,
                needed: per_client,
                available: q.len() - start,
            });
        }
        let mut indices = q[start..start + per_client].to_vec();
        indices.sort_unstable();
        taken[c] += per_client;
        shards.push(Shard {
            owner,
            indices,
            label: Some(*label),
        });
    }
    Ok(shards)
}

/// `k` shards of `per_client` samples drawn uniformly without replacement.
pub fn partition_uniform<S: Scalar>(
    ds: &Dataset<S>,
    k: usize,
    per_client: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Shard>> {
    if k * per_client > ds.len() {
        return Err(Error::TooFewSamples {
            needed: k * per_client,
            got: ds.len(),
        });
    }
    let mut all: Vec<usize> = (0..ds.len()).collect();
    all.shuffle(rng);
    Ok(all
        .chunks(per_client)
        .take(k)
        .enumerate()
        .map(|(owner, c)| {
            let mut indices = c.to_vec();
            indices.sort_unstable();
            Shard {
                owner,
                indices,
                label: None,
            }
        })
        .collect())
}

/// One `client_id,sample_index,label` row per assigned sample.
pub fn write_shards_csv<S: Scalar>(shards: &[Shard], ds: &Dataset<S>, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["client_id", "sample_index", "label"])?;
    for s in shards {
        for &i in &s.indices {
            w.serialize((s.owner, i, ds.label(i)))?;
        }
    }
    w.flush()?;
    Ok(())
}
