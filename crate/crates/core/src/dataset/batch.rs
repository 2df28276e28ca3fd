use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::store::StrideDataset;
use crate::error::{Error, Result};
use crate::types::StrideSample;

/// Sample indices grouped into batches; the final batch may be short.
/// With `shuffle` the order is a permutation drawn from stream `epoch` of
/// `seed`.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: u64, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Contract("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub fn batch_iter<'a>(
    ds: &'a StrideDataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    shuffle: bool,
) -> Result<impl Iterator<Item = Vec<&'a StrideSample>> + 'a> {
    let batches = batch_indices(ds.len(), batch_size, seed, epoch, shuffle)?;
    Ok(batches
        .into_iter()
        .map(move |b| b.into_iter().map(|i| &ds.samples[i]).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_order() {
        let b = batch_indices(100, 32, 0, 0, true).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![32, 32, 32, 4]);
        assert_eq!(b, batch_indices(100, 32, 0, 0, true).unwrap());
        assert_ne!(b, batch_indices(100, 32, 0, 1, true).unwrap());
        let plain = batch_indices(5, 2, 9, 0, false).unwrap();
        assert_eq!(plain, vec![vec![0, 1], vec![2, 3], vec![4]]);
        let mut seen: Vec<usize> = b.concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
        assert!(batch_indices(0, 32, 0, 0, true).is_err());
    }
}
