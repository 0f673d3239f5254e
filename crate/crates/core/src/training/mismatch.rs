use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// For each position `i`, a partner `p[i] != i` with `answers[p[i]] != answers[i]`;
/// `p` is a permutation, so every tuple is reused exactly once.
///
/// Positions are grouped by answer (largest group first, each group
/// shuffled) and laid out in a ring; pairing each slot with the one `m`
/// further on, `m` the largest group, never lands inside its own group.
/// No answer-distinct permutation exists when `m > B / 2`.
pub fn sample_mismatched<R: Rng + ?Sized>(answers: &[usize], rng: &mut R) -> Result<Vec<usize>> {
    let b = answers.len();
    if b < 2 {
        return Err(Error::NoMismatch(format!("batch of {b}")));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &a) in answers.iter().enumerate() {
        groups.entry(a).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    let m = groups.iter().map(Vec::len).max().unwrap_or(0);
    if 2 * m > b {
        return Err(Error::NoMismatch(format!(
            "{m} of {b} records share one answer"
        )));
    }
    groups.shuffle(rng);
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
    let mut ring = Vec::with_capacity(b);
    for mut g in groups {
        g.shuffle(rng);
        ring.extend(g);
    }
    let mut partner = vec![0; b];
    for k in 0..b {
        partner[ring[k]] = ring[(k + m) % b];
    }
    Ok(partner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn valid(answers: &[usize], p: &[usize]) -> bool {
        let mut sorted = p.to_vec();
        sorted.sort_unstable();
        sorted == (0..answers.len()).collect::<Vec<_>>()
            && p.iter().enumerate().all(|(i, &j)| i != j && answers[i] != answers[j])
    }

    #[test]
    fn pair_swaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_mismatched(&[3, 7], &mut rng).unwrap(), vec![1, 0]);
    }

    #[test]
    fn five_seeded() {
        let answers = [1, 1, 2, 3, 2];
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = sample_mismatched(&answers, &mut rng).unwrap();
            assert!(valid(&answers, &p), "{p:?}");
        }
    }

    #[test]
    fn all_equal_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_mismatched(&[4, 4, 4], &mut rng), Err(Error::NoMismatch(_))));
        assert!(matches!(sample_mismatched(&[4], &mut rng), Err(Error::NoMismatch(_))));
        // a majority answer leaves no valid permutation either
        assert!(sample_mismatched(&[4, 4, 4, 1, 2], &mut rng).is_err());
        assert!(sample_mismatched(&[4, 4, 1, 2], &mut rng).is_ok());
    }
}
