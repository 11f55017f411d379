//! Batch sampling without replacement within an epoch.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Draws same-label batches from a fixed pool of indices.
///
/// Each label keeps a shuffled queue. A draw picks a label uniformly among
/// those with at least `batch` queued samples and pops `batch` of them; when
/// none is left the queues are refilled and reshuffled. If no label owns
/// `batch` samples at all, a draw takes every queued sample of one label
/// instead, and a warning is logged once.
#[derive(Clone, Debug)]
pub struct SameLabelSampler {
    groups: Vec<Vec<usize>>,
    queues: Vec<Vec<usize>>,
    batch: usize,
    shrink: bool,
    warned: bool,
    rng: ChaCha8Rng,
}

impl SameLabelSampler {
    pub fn new<S: Scalar>(ds: &Dataset<S>, indices: &[usize], batch: usize, rng: ChaCha8Rng) -> Result<Self> {
        if indices.is_empty() || batch == 0 {
            return Err(Error::EmptyBatch);
        }
        let groups: Vec<Vec<usize>> = ds.indices_by_label(indices).into_iter().map(|(_, g)| g).collect();
        let shrink = groups.iter().all(|g| g.len() < batch);
        let mut s = SameLabelSampler {
            queues: vec![Vec::new(); groups.len()],
            groups,
            batch,
            shrink,
            warned: false,
            rng,
        };
        s.refill();
        Ok(s)
    }

    fn refill(&mut self) {
        for (q, g) in self.queues.iter_mut().zip(&self.groups) {
            q.clone_from(g);
            q.shuffle(&mut self.rng);
        }
    }

    /// Whether batches are smaller than requested because no label has enough samples.
    pub fn is_shrunk(&self) -> bool {
        self.shrink
    }

    /// Draws in one pass over the pool: full batches per label, or one per
    /// label when shrunk.
    pub fn steps_per_pass(&self) -> usize {
        if self.shrink {
            self.groups.len()
        } else {
            self.groups.iter().map(|g| g.len() / self.batch).sum()
        }
    }

    pub fn next_batch<S: Scalar>(&mut self, ds: &Dataset<S>) -> Batch {
        let need = if self.shrink { 1 } else { self.batch };
        let eligible = |qs: &[Vec<usize>]| -> Vec<usize> { (0..qs.len()).filter(|&c| qs[c].len() >= need).collect() };
        let mut pick = eligible(&self.queues);
        if pick.is_empty() {
            self.refill();
            pick = eligible(&self.queues);
        }
        let c = pick[self.rng.gen_range(0..pick.len())];
        let q = &mut self.queues[c];
        let members = if self.shrink {
            if !self.warned {
                log::warn!(
                    "no label has {} samples; using a smaller batch of all remaining samples",
                    self.batch
                );
                self.warned = true;
            }
            std::mem::take(q)
        } else {
            q.split_off(q.len() - self.batch)
        };
        Batch::new(ds, members).expect("queues are never empty when picked")
    }
}

/// Shuffled mini-batches over `indices`; the last one may be partial.
pub fn epoch_batches(indices: &[usize], batch: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}
