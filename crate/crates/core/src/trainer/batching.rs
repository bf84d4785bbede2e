use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Item indices of one batch and its padded size (`len × longest`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub items: Vec<usize>,
    pub padded: usize,
}

/// Length-bucketed batches under a padded-size budget. Items are sorted by
/// length (ties by index) and packed greedily; an item longer than the
/// budget is skipped. Batch order is shuffled with `seed`. Returns the
/// batches and the skipped indices.
pub fn make_batches(lengths: &[usize], budget: usize, seed: u64) -> (Vec<Batch>, Vec<usize>) {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    let mut batches = Vec::new();
    let mut skipped = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut longest = 0;
    for i in order {
        let len = lengths[i];
        if len > budget {
            skipped.push(i);
            continue;
        }
        let grown = longest.max(len);
        if !current.is_empty() && (current.len() + 1) * grown > budget {
            batches.push(Batch {
                padded: current.len() * longest,
                items: std::mem::take(&mut current),
            });
            longest = 0;
        }
        longest = longest.max(len);
        current.push(i);
    }
    if !current.is_empty() {
        batches.push(Batch {
            padded: current.len() * longest,
            items: current,
        });
    }
    batches.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (batches, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packs_within_budget() {
        let (b, skipped) = make_batches(&[3, 10, 4, 4, 2, 11], 10, 0);
        assert_eq!(skipped, vec![5]);
        let mut all: Vec<usize> = b.iter().flat_map(|x| x.items.clone()).collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        assert!(b.iter().all(|x| x.padded <= 10));
    }

    #[test]
    fn empty_input() {
        assert_eq!(make_batches(&[], 5, 1), (vec![], vec![]));
    }
}
