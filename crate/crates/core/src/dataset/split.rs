use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subject ids of one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

/// Subject-wise fold assignment over the sorted distinct ids.
///
/// With ten subjects, fold `f` in `0..5` tests subjects at positions
/// `2f, 2f+1`, validates on `(2f+2) mod 10` and trains on the other seven.
/// Any other count falls back to a 20% test / 10% validation rotation with a
/// warning.
pub fn split_loocv(subject_ids: &[u32], fold: usize) -> Result<Split> {
    let ids: Vec<u32> = subject_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let n = ids.len();
    if n < 3 {
        return Err(Error::Config(format!("need at least 3 subjects to split, got {n}")));
    }
    let (n_test, n_val) = if n == 10 {
        (2, 1)
    } else {
        let n_test = ((0.2 * n as f64).round() as usize).max(1);
        let n_val = ((0.1 * n as f64).round() as usize).max(1);
        log::warn!(
            "{n} subjects instead of 10; using a proportional split ({} train / {n_val} val / {n_test} test)",
            n - n_test - n_val
        );
        (n_test, n_val)
    };
    let folds = n.div_ceil(n_test);
    if fold >= folds {
        return Err(Error::Config(format!("fold {fold} out of range 0..{folds} for {n} subjects")));
    }
    let start = fold * n_test;
    let pick = |offset: usize, count: usize| -> Vec<u32> {
        let mut v: Vec<u32> = (offset..offset + count).map(|i| ids[i % n]).collect();
        v.sort_unstable();
        v
    };
    let test = pick(start, n_test);
    let val = pick(start + n_test, n_val);
    let train = ids
        .iter()
        .copied()
        .filter(|s| !test.contains(s) && !val.contains(s))
        .collect();
    Ok(Split { train, val, test })
}
