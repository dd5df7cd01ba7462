//! Group-based selection of the labeled training subset.
//!
//! Tiles from one annotated region (one `group_id`) look alike, so labels are
//! drawn from whole groups rather than from random tiles. Distinct group ids
//! are dealt into `n_groups` buckets in a fixed hashed order; one bucket,
//! picked by the run seed, supplies the labeled tiles. The unlabeled universe
//! is the whole training split, labeled tiles included.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::dataio::manifest::{Split, TileRecord};
use crate::error::{Error, Result};
use crate::rng::{splitmix64, stream, streams};

#[derive(Clone, Debug)]
pub struct LabeledSplit {
    pub labeled: Vec<TileRecord>,
    /// Every training record (`L ∪ U`).
    pub unlabeled: Vec<TileRecord>,
    /// Group ids per bucket.
    pub buckets: Vec<Vec<u32>>,
    pub labeled_bucket: usize,
}

impl LabeledSplit {
    pub fn labeled_fraction(&self) -> f64 {
        self.labeled.len() as f64 / self.unlabeled.len() as f64
    }

    /// Fails if any labeled group id also occurs in another bucket, or if a
    /// labeled record is missing from the unlabeled universe.
    pub fn check_group_leakage(&self) -> Result<()> {
        let labeled_groups: BTreeSet<u32> = self.labeled.iter().map(|r| r.group_id).collect();
        for (i, bucket) in self.buckets.iter().enumerate() {
            if i == self.labeled_bucket {
                continue;
            }
            if let Some(g) = bucket.iter().find(|g| labeled_groups.contains(g)) {
                return Err(Error::InvalidInput(format!(
                    "group {g} is labeled but also belongs to bucket {i}"
                )));
            }
        }
        let universe: BTreeSet<&str> = self.unlabeled.iter().map(|r| r.tile_id.as_str()).collect();
        if let Some(r) = self.labeled.iter().find(|r| !universe.contains(r.tile_id.as_str())) {
            return Err(Error::InvalidInput(format!(
                "labeled tile {} missing from the unlabeled universe",
                r.tile_id
            )));
        }
        Ok(())
    }
}

/// Deterministic assignment of distinct group ids to `n_groups` buckets.
pub fn partition_groups(group_ids: impl IntoIterator<Item = u32>, n_groups: usize) -> Vec<Vec<u32>> {
    let mut distinct: Vec<u32> = group_ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    distinct.sort_by_key(|&g| (splitmix64(u64::from(g)), g));
    let mut buckets = vec![Vec::new(); n_groups];
    for (i, g) in distinct.into_iter().enumerate() {
        buckets[i % n_groups].push(g);
    }
    for b in &mut buckets {
        b.sort_unstable();
    }
    buckets
}

pub fn select_labeled_subset(records: &[TileRecord], n_groups: usize, seed: u64) -> Result<LabeledSplit> {
    if n_groups == 0 {
        return Err(Error::Config("n_groups must be at least 1".into()));
    }
    if let Some(r) = records.iter().find(|r| r.split != Split::Train) {
        return Err(Error::InvalidInput(format!(
            "tile {} is in the {} split, labeled subsets come from train only",
            r.tile_id, r.split
        )));
    }
    let distinct: BTreeSet<u32> = records.iter().map(|r| r.group_id).collect();
    if distinct.len() < n_groups {
        return Err(Error::Config(format!(
            "{} distinct group ids cannot fill {n_groups} buckets",
            distinct.len()
        )));
    }
    let buckets = partition_groups(distinct, n_groups);
    let labeled_bucket = stream(seed, &[streams::SUBSET]).random_range(0..n_groups);
    let chosen: BTreeSet<u32> = buckets[labeled_bucket].iter().copied().collect();
    let labeled = records
        .iter()
        .filter(|r| r.label.is_some() && chosen.contains(&r.group_id))
        .cloned()
        .collect();
    Ok(LabeledSplit {
        labeled,
        unlabeled: records.to_vec(),
        buckets,
        labeled_bucket,
    })
}

/// Records of one split, in manifest order.
pub fn records_in(records: &[TileRecord], split: Split) -> Vec<TileRecord> {
    records.iter().filter(|r| r.split == split).cloned().collect()
}

/// Tiles per group id, for diagnostics.
pub fn group_sizes(records: &[TileRecord]) -> BTreeMap<u32, usize> {
    let mut sizes = BTreeMap::new();
    for r in records {
        *sizes.entry(r.group_id).or_insert(0) += 1;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train(n: usize, groups: u32) -> Vec<TileRecord> {
        (0..n)
            .map(|i| TileRecord {
                tile_id: format!("t{i}"),
                locator: format!("t{i}.png"),
                label: Some((i % 2) as u8),
                group_id: i as u32 % groups,
                split: Split::Train,
            })
            .collect()
    }

    #[test]
    fn single_bucket_labels_everything() {
        let recs = train(50, 5);
        let s = select_labeled_subset(&recs, 1, 3).unwrap();
        assert_eq!(s.labeled.len(), 50);
        assert_eq!(s.unlabeled.len(), 50);
    }

    #[test]
    fn too_few_groups_is_config_error() {
        let err = select_labeled_subset(&train(20, 4), 10, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn buckets_are_balanced_and_disjoint() {
        let b = partition_groups(0..103, 10);
        let sizes: Vec<_> = b.iter().map(Vec::len).collect();
        assert!(sizes.iter().all(|&s| s == 10 || s == 11), "{sizes:?}");
        let all: BTreeSet<u32> = b.iter().flatten().copied().collect();
        assert_eq!(all.len(), 103);
    }

    #[test]
    fn non_train_records_rejected() {
        let mut recs = train(10, 10);
        recs[3].split = Split::Val;
        assert!(select_labeled_subset(&recs, 2, 0).is_err());
    }

    #[test]
    fn unlabeled_train_tiles_stay_out_of_labeled_set() {
        let mut recs = train(40, 4);
        for r in recs.iter_mut().step_by(3) {
            r.label = None;
        }
        let s = select_labeled_subset(&recs, 1, 0).unwrap();
        assert!(s.labeled.iter().all(|r| r.label.is_some()));
        assert_eq!(s.unlabeled.len(), 40);
    }
}
