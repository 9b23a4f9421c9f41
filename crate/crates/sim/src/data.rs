//! Loading the train and test sets a config asks for.

use std::path::Path;

use ocdfl_core::datagen::{dataset_from_idx, Dataset};
use ocdfl_core::engine::synthetic_data;

use crate::config::{DataSection, DataSource};
use crate::error::SimError;

/// Train and test sets for `data`, seeded from `seed` when synthetic.
pub fn load(data: &DataSection, seed: u64) -> Result<(Dataset, Dataset), SimError> {
    match data.source {
        DataSource::Synthetic => Ok(synthetic_data(&data.synthetic_spec(), seed)?),
        DataSource::Idx => {
            let (images, labels) = match (&data.idx_images, &data.idx_labels) {
                (Some(i), Some(l)) => (i, l),
                _ => {
                    return Err(SimError::Validation(
                        "idx data needs both --idx-images and --idx-labels".into(),
                    ))
                }
            };
            let all = load_idx(images, labels, data.max_samples)?;
            split_for_test(all, data.test_fraction)
        }
    }
}

/// Reads an IDX image/label file pair, keeping at most `max_samples`.
pub fn load_idx(images: &Path, labels: &Path, max_samples: usize) -> Result<Dataset, SimError> {
    let img = std::fs::read(images).map_err(|e| SimError::io(images, e))?;
    let lbl = std::fs::read(labels).map_err(|e| SimError::io(labels, e))?;
    dataset_from_idx(
        &img,
        &lbl,
        max_samples,
        &images.display().to_string(),
        &labels.display().to_string(),
    )
    .map_err(|e| SimError::Validation(e.to_string()))
}

/// Holds out the last `fraction` of `all` (at least one sample) as the test set.
pub fn split_for_test(all: Dataset, fraction: f64) -> Result<(Dataset, Dataset), SimError> {
    let n = all.len();
    let test = ((n as f64 * fraction).round() as usize).max(1);
    if n < 2 || test >= n {
        return Err(SimError::Validation(format!(
            "{n} samples are too few to split off a test set"
        )));
    }
    Ok(all.split_tail(test))
}
