use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Positions into the labeled and unlabeled lists of a split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Number of steps in one epoch. The unlabeled set is consumed once with the
/// remainder dropped; without enough unlabeled data the labeled set sets the
/// pace instead.
pub fn steps_per_epoch(n_labeled: usize, n_unlabeled: usize, batch: usize) -> usize {
    if n_unlabeled >= batch {
        n_unlabeled / batch
    } else {
        n_labeled.div_ceil(batch).max(1)
    }
}

/// One epoch of paired batches, deterministic in `(seed, epoch)`.
///
/// The unlabeled set is shuffled once and consumed in order. Labeled batches
/// always hold `batch` examples, cycling through the labeled set and
/// reshuffling at the start of every cycle.
#[derive(Debug)]
pub struct BatchIter {
    labeled_order: Vec<usize>,
    labeled_pos: usize,
    unlabeled_order: Vec<usize>,
    batch: usize,
    step: usize,
    steps: usize,
    rng: rand_chacha::ChaCha8Rng,
}

pub fn batch_iterator(
    n_labeled: usize,
    n_unlabeled: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
) -> Result<BatchIter> {
    if batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if n_labeled == 0 && n_unlabeled == 0 {
        return Err(Error::invalid("cannot batch an empty split"));
    }
    let mut rng = rng::stream(seed, rng::BATCHES + epoch);
    let mut unlabeled_order: Vec<usize> = (0..n_unlabeled).collect();
    unlabeled_order.shuffle(&mut rng);
    let mut labeled_order: Vec<usize> = (0..n_labeled).collect();
    labeled_order.shuffle(&mut rng);
    Ok(BatchIter {
        labeled_order,
        labeled_pos: 0,
        unlabeled_order,
        batch,
        step: 0,
        steps: steps_per_epoch(n_labeled, n_unlabeled, batch),
        rng,
    })
}

impl Iterator for BatchIter {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.step >= self.steps {
            return None;
        }
        let unlabeled = if self.unlabeled_order.len() >= self.batch {
            self.unlabeled_order[self.step * self.batch..(self.step + 1) * self.batch].to_vec()
        } else {
            Vec::new()
        };
        let mut labeled = Vec::with_capacity(self.batch);
        if !self.labeled_order.is_empty() {
            while labeled.len() < self.batch {
                if self.labeled_pos == self.labeled_order.len() {
                    self.labeled_order.shuffle(&mut self.rng);
                    self.labeled_pos = 0;
                }
                labeled.push(self.labeled_order[self.labeled_pos]);
                self.labeled_pos += 1;
            }
        }
        self.step += 1;
        Some(Batch { labeled, unlabeled })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.steps - self.step;
        (left, Some(left))
    }
}

impl ExactSizeIterator for BatchIter {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_count() {
        assert_eq!(batch_iterator(40, 4000, 32, 0, 0).unwrap().count(), 125);
    }

    #[test]
    fn deterministic_in_seed_and_epoch() {
        let a: Vec<Batch> = batch_iterator(40, 4000, 32, 3, 2).unwrap().collect();
        let b: Vec<Batch> = batch_iterator(40, 4000, 32, 3, 2).unwrap().collect();
        let c: Vec<Batch> = batch_iterator(40, 4000, 32, 3, 3).unwrap().collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn unlabeled_epoch_covers_split_minus_remainder() {
        let n = 1000;
        let mut seen: Vec<usize> = batch_iterator(10, n, 32, 1, 0)
            .unwrap()
            .flat_map(|b| b.unlabeled)
            .collect();
        assert_eq!(seen.len(), n - n % 32);
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), n - n % 32);
    }

    #[test]
    fn labeled_cycles_with_full_batches() {
        let batches: Vec<Batch> = batch_iterator(10, 320, 32, 1, 0).unwrap().collect();
        assert_eq!(batches.len(), 10);
        let all: Vec<usize> = batches.iter().flat_map(|b| b.labeled.clone()).collect();
        assert!(batches.iter().all(|b| b.labeled.len() == 32));
        // every complete cycle of 10 is a permutation
        for cycle in all.chunks(10) {
            let mut c = cycle.to_vec();
            c.sort_unstable();
            assert_eq!(c, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn small_unlabeled_set() {
        let batches: Vec<Batch> = batch_iterator(40, 0, 32, 0, 0).unwrap().collect();
        assert_eq!(batches.len(), 2);
        assert!(batches.iter().all(|b| b.unlabeled.is_empty()));
    }

    #[test]
    fn empty_split_rejected() {
        assert!(batch_iterator(0, 0, 32, 0, 0).is_err());
        assert!(batch_iterator(1, 1, 0, 0, 0).is_err());
    }
}
