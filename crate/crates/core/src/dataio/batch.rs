//! Mini-batch assembly for mixed labeled/unlabeled training.
//!
//! Batches hold indices into the caller's sample tables. Each batch carries
//! `labeled_per_batch` labeled samples and fills the rest from the unlabeled
//! universe; one epoch is a single pass over that universe while the labeled
//! pool is recycled, reshuffled on every wrap. When a batch is all labeled,
//! the epoch still spans as many samples as the universe holds.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream, streams};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Indices into the labeled pool.
    pub labeled: Vec<usize>,
    /// Indices into the unlabeled universe.
    pub unlabeled: Vec<usize>,
    /// Contrastive partner of every batch slot (labeled slots first).
    pub negatives: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A uniformly random permutation of `0..n` without fixed points.
pub fn random_derangement(n: usize, rng: &mut impl rand::Rng) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("no derangement of {n} element(s)")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &k)| i != k) {
            return Ok(perm);
        }
    }
}

pub fn is_derangement(map: &[usize]) -> bool {
    let mut seen = vec![false; map.len()];
    map.iter().enumerate().all(|(i, &k)| {
        let ok = k < map.len() && k != i && !seen[k];
        if ok {
            seen[k] = true;
        }
        ok
    })
}

/// Deterministic batch plan for one run.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    pub n_labeled: usize,
    pub n_universe: usize,
    pub batch_size: usize,
    pub labeled_per_batch: usize,
    pub seed: u64,
}

impl BatchPlan {
    pub fn new(
        n_labeled: usize,
        n_universe: usize,
        batch_size: usize,
        labeled_per_batch: usize,
        seed: u64,
    ) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size {batch_size} leaves no room for a negative partner"
            )));
        }
        if labeled_per_batch > batch_size {
            return Err(Error::Config(format!(
                "labeled_per_batch {labeled_per_batch} exceeds batch size {batch_size}"
            )));
        }
        if n_labeled == 0 && labeled_per_batch > 0 {
            return Err(Error::Config("labeled pool is empty".into()));
        }
        if labeled_per_batch < batch_size && n_universe == 0 {
            return Err(Error::Config("mixed batches need a non-empty unlabeled universe".into()));
        }
        Ok(Self {
            n_labeled,
            n_universe,
            batch_size,
            labeled_per_batch,
            seed,
        })
    }

    fn unlabeled_per_batch(&self) -> usize {
        self.batch_size - self.labeled_per_batch
    }

    /// Samples covered by one epoch.
    fn epoch_span(&self) -> usize {
        self.n_universe.max(self.n_labeled)
    }

    pub fn batches_per_epoch(&self) -> usize {
        let per = match self.unlabeled_per_batch() {
            0 => self.batch_size,
            u => u,
        };
        self.epoch_span().div_ceil(per)
    }

    pub fn epoch(&self, epoch: usize) -> Vec<Batch> {
        let e = epoch as u64;
        let mut labeled_rng = stream(self.seed, &[streams::LABELED_ORDER, e]);
        let mut unlabeled_rng = stream(self.seed, &[streams::UNLABELED_ORDER, e]);
        let mut negatives_rng = stream(self.seed, &[streams::NEGATIVES, e]);

        let mut labeled_pool: Vec<usize> = Vec::new();
        let mut next_labeled = |count: usize| -> Vec<usize> {
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                if labeled_pool.is_empty() {
                    labeled_pool = (0..self.n_labeled).collect();
                    labeled_pool.shuffle(&mut labeled_rng);
                    labeled_pool.reverse();
                }
                out.push(labeled_pool.pop().expect("refilled"));
            }
            out
        };

        let u_per = self.unlabeled_per_batch();
        let mut batches = Vec::new();
        if u_per == 0 {
            let mut remaining = self.epoch_span();
            while remaining > 0 {
                let take = remaining.min(self.batch_size);
                remaining -= take;
                batches.push((next_labeled(take), Vec::new()));
            }
        } else {
            let mut order: Vec<usize> = (0..self.n_universe).collect();
            order.shuffle(&mut unlabeled_rng);
            for chunk in order.chunks(u_per) {
                batches.push((next_labeled(self.labeled_per_batch), chunk.to_vec()));
            }
        }
        batches
            .into_iter()
            .filter(|(l, u)| l.len() + u.len() >= 2)
            .map(|(labeled, unlabeled)| {
                let negatives = random_derangement(labeled.len() + unlabeled.len(), &mut negatives_rng)
                    .expect("batch holds at least two samples");
                Batch {
                    labeled,
                    unlabeled,
                    negatives,
                }
            })
            .collect()
    }
}

/// One epoch of batches; see [`BatchPlan`].
pub fn make_batches(
    n_labeled: usize,
    n_universe: usize,
    batch_size: usize,
    labeled_per_batch: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Batch>> {
    Ok(BatchPlan::new(n_labeled, n_universe, batch_size, labeled_per_batch, seed)?.epoch(epoch))
}

/// `max(1, round(p · batch_size))`, capped at the batch size.
pub fn default_labeled_per_batch(label_fraction: f64, batch_size: usize) -> usize {
    ((label_fraction * batch_size as f64).round() as usize).clamp(1, batch_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_two_derangement_is_swap() {
        let mut rng = stream(0, &[]);
        for _ in 0..10 {
            assert_eq!(random_derangement(2, &mut rng).unwrap(), vec![1, 0]);
        }
        assert!(random_derangement(1, &mut rng).is_err());
    }

    #[test]
    fn batch_of_one_rejected() {
        assert!(BatchPlan::new(4, 4, 1, 1, 0).is_err());
        assert!(BatchPlan::new(4, 4, 4, 5, 0).is_err());
        assert!(BatchPlan::new(0, 4, 4, 1, 0).is_err());
    }

    #[test]
    fn mixed_epoch_covers_universe_once() {
        let plan = BatchPlan::new(5, 100, 16, 2, 9).unwrap();
        let batches = plan.epoch(0);
        assert_eq!(batches.len(), plan.batches_per_epoch());
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.unlabeled.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
        assert!(batches.iter().all(|b| b.labeled.len() == 2));
    }

    #[test]
    fn labeled_pool_cycles_without_repeats_within_a_cycle() {
        let plan = BatchPlan::new(7, 70, 8, 7, 1).unwrap();
        let b = plan.epoch(3);
        for batch in &b {
            let mut l = batch.labeled.clone();
            l.sort_unstable();
            assert_eq!(l, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn pure_supervised_spans_universe() {
        let plan = BatchPlan::new(10, 100, 16, 16, 2).unwrap();
        let b = plan.epoch(0);
        assert_eq!(b.iter().map(Batch::len).sum::<usize>(), 100);
        assert!(b.iter().all(|x| x.unlabeled.is_empty()));
    }

    #[test]
    fn epochs_reshuffle() {
        let plan = BatchPlan::new(10, 50, 10, 2, 5).unwrap();
        assert_ne!(plan.epoch(0), plan.epoch(1));
        assert_eq!(plan.epoch(1), plan.epoch(1));
    }

    #[test]
    fn default_mix_follows_label_fraction() {
        assert_eq!(default_labeled_per_batch(0.1, 64), 6);
        assert_eq!(default_labeled_per_batch(1.0, 64), 64);
        assert_eq!(default_labeled_per_batch(0.001, 64), 1);
    }
}
