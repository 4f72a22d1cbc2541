use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Shuffles `ids` with `seed` and deals them into `k` contiguous folds whose
/// sizes differ by at most one (the larger folds come first).
pub fn kfold_split<S: Clone>(ids: &[S], k: usize, seed: u64) -> Result<Vec<Vec<S>>> {
    if k == 0 || k > ids.len() {
        return Err(Error::InvalidK { k, n: ids.len() });
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = ids.len() / k;
    let extra = ids.len() % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(
            order[start..start + size]
                .iter()
                .map(|&i| ids[i].clone())
                .collect(),
        );
        start += size;
    }
    Ok(folds)
}

/// Holds out `round(fraction * n)` whole scans (at least one when `n >= 2`,
/// never all of them) as a validation set. Returns `(train, validation)`.
pub fn split_validation<S: Clone>(ids: &[S], fraction: f64, seed: u64) -> Result<(Vec<S>, Vec<S>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "validation fraction {fraction} outside (0, 1)"
        )));
    }
    if ids.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = ids.len();
    let n_val = if n < 2 {
        0
    } else {
        ((fraction * n as f64).round() as usize).clamp(1, n - 1)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = order[..n_val].iter().map(|&i| ids[i].clone()).collect();
    let train = order[n_val..].iter().map(|&i| ids[i].clone()).collect();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn table_two_scan_count() {
        let ids: Vec<usize> = (0..879).collect();
        let folds = kfold_split(&ids, 10, 7).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().filter(|&&s| s == 88).count(), 9);
        assert_eq!(sizes.iter().filter(|&&s| s == 87).count(), 1);
        let all: HashSet<usize> = folds.iter().flatten().copied().collect();
        assert_eq!(all.len(), 879);
    }

    #[test]
    fn singleton_folds_and_determinism() {
        let ids: Vec<u32> = (0..10).collect();
        let folds = kfold_split(&ids, 10, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 1));
        assert_eq!(folds, kfold_split(&ids, 10, 1).unwrap());
        assert_ne!(
            kfold_split(&ids, 2, 1).unwrap(),
            kfold_split(&ids, 2, 2).unwrap()
        );
    }

    #[test]
    fn invalid_k() {
        assert!(matches!(
            kfold_split(&[1, 2], 3, 0),
            Err(Error::InvalidK { k: 3, n: 2 })
        ));
        assert!(kfold_split(&[1, 2], 0, 0).is_err());
    }

    #[test]
    fn validation_split_is_by_id() {
        let ids: Vec<usize> = (0..20).collect();
        let (train, val) = split_validation(&ids, 0.1, 3).unwrap();
        assert_eq!(val.len(), 2);
        assert_eq!(train.len(), 18);
        let t: HashSet<_> = train.iter().collect();
        assert!(val.iter().all(|v| !t.contains(v)));
        let (train, val) = split_validation(&[1, 2, 3], 0.1, 3).unwrap();
        assert_eq!((train.len(), val.len()), (2, 1));
        assert!(split_validation(&ids, 1.0, 0).is_err());
    }
}
