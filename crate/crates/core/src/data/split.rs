use super::Dataset;
use crate::error::{Error, Result};

/// Stable sort by timestamp, then contiguous 8:1:1 train / valid / test.
pub fn chronological_split(dataset: &Dataset) -> Result<(Dataset, Dataset, Dataset)> {
    let n = dataset.len();
    if n < 10 {
        return Err(Error::Dataset(format!(
            "chronological split needs at least 10 samples, got {n}"
        )));
    }
    let mut sorted = dataset.samples.clone();
    sorted.sort_by_key(|s| s.timestamp);
    let n_train = n * 8 / 10;
    let n_valid = n / 10;
    let test = sorted.split_off(n_train + n_valid);
    let valid = sorted.split_off(n_train);
    Ok((dataset.subset(sorted), dataset.subset(valid), dataset.subset(test)))
}
