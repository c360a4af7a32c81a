use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Sample, Vocabulary};
use crate::model::ItemKey;

/// Emits, after each positive, one negative with the same history and a
/// target drawn uniformly from items outside that history (and distinct
/// from the positive target).
pub fn negative_sample(
    samples: &[Sample],
    vocab: &Vocabulary,
    seed: u64,
) -> Result<Vec<Sample>, DataError> {
    let n_items = vocab.n_items() as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples.len() * 2);
    for s in samples {
        let excluded: HashSet<u32> = s
            .history
            .iter()
            .map(|k| k.item)
            .chain(std::iter::once(s.target.item))
            .filter(|&i| i != 0 && i < n_items)
            .collect();
        let eligible = (n_items as usize).saturating_sub(1 + excluded.len());
        if eligible == 0 {
            return Err(DataError::VocabularyExhausted {
                user: s.user.clone(),
            });
        }
        let item = if eligible * 4 >= n_items as usize {
            loop {
                let c = rng.random_range(1..n_items);
                if !excluded.contains(&c) {
                    break c;
                }
            }
        } else {
            let pick = rng.random_range(0..eligible);
            (1..n_items)
                .filter(|i| !excluded.contains(i))
                .nth(pick)
                .expect("eligible count")
        };
        out.push(s.clone());
        out.push(Sample {
            user: s.user.clone(),
            history: s.history.clone(),
            target: ItemKey {
                item,
                category: vocab.category_of(item),
            },
            label: 0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize) -> Vocabulary {
        let mut v = Vocabulary::new();
        for i in 0..n {
            v.insert(&format!("i{i}"), &format!("c{}", i % 3));
        }
        v
    }

    fn positive(user: &str, history: &[u32], target: u32, v: &Vocabulary) -> Sample {
        Sample {
            user: user.into(),
            history: history
                .iter()
                .map(|&i| ItemKey::new(i, v.category_of(i)))
                .collect(),
            target: ItemKey::new(target, v.category_of(target)),
            label: 1,
        }
    }

    #[test]
    fn single_item_vocabulary_is_exhausted() {
        let v = vocab(1);
        let s = positive("u", &[1], 1, &v);
        assert!(matches!(
            negative_sample(&[s], &v, 0),
            Err(DataError::VocabularyExhausted { .. })
        ));
    }

    #[test]
    fn one_negative_per_positive_outside_history() {
        let v = vocab(30);
        let pos: Vec<Sample> = (0..10)
            .map(|u| positive(&format!("u{u}"), &[1, 2, 3, (u % 20) + 4], 25, &v))
            .collect();
        let out = negative_sample(&pos, &v, 7).unwrap();
        assert_eq!(out.len(), 20);
        for pair in out.chunks(2) {
            assert_eq!(pair[0].label, 1);
            assert_eq!(pair[1].label, 0);
            assert_eq!(pair[0].history, pair[1].history);
            let neg = pair[1].target.item;
            assert!(neg != 0 && neg != 25);
            assert!(pair[1].history.iter().all(|k| k.item != neg));
            assert_eq!(pair[1].target.category, v.category_of(neg));
        }
        assert_eq!(out, negative_sample(&pos, &v, 7).unwrap());
    }

    #[test]
    fn dense_exclusion_still_finds_the_free_item() {
        let v = vocab(10);
        let s = positive("u", &[1, 2, 3, 4, 5, 6, 7, 8], 9, &v);
        let out = negative_sample(&[s], &v, 3).unwrap();
        assert_eq!(out[1].target.item, 10);
    }
}
