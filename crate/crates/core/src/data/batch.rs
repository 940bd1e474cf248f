use std::path::Path;

use rand::seq::SliceRandom;

use super::image::decode_and_prepare;
use super::manifest::{DatasetManifest, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::nn::Dataset;
use crate::rng::seeded_stream;
use crate::tensor::Tensor;

/// Permutation of `0..n` for one epoch; a pure function of `(seed, epoch)`.
pub fn shuffled_indices(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_stream(seed, epoch));
    order
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, size, size, 3]`
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
    pub paths: Vec<String>,
}

/// Yields every record of `split` exactly once, in a per-epoch shuffled
/// order, decoding images lazily. The last batch may be short.
pub fn batch_iterator<'a>(
    manifest: &'a DatasetManifest,
    root: &'a Path,
    split: Split,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    image_size: usize,
) -> Result<impl Iterator<Item = Result<Batch>> + 'a> {
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    let records: Vec<&SampleRecord> = manifest.split(split);
    if records.is_empty() {
        return Err(Error::domain(format!("split {split} is empty")));
    }
    let order = shuffled_indices(records.len(), seed, epoch);
    let chunks: Vec<Vec<&'a SampleRecord>> = order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| records[i]).collect())
        .collect();
    Ok(chunks.into_iter().map(move |chunk| {
        let mut images = Vec::with_capacity(chunk.len());
        for r in &chunk {
            images.push(decode_and_prepare(root.join(&r.path), image_size)?);
        }
        let refs: Vec<&Tensor<f32>> = images.iter().collect();
        Ok(Batch {
            images: Tensor::stack(&refs)?,
            labels: chunk.iter().map(|r| r.label).collect(),
            paths: chunk.iter().map(|r| r.path.clone()).collect(),
        })
    }))
}

/// Decodes a whole split into memory, in manifest order. Every unreadable
/// file is reported, not just the first.
pub fn load_split(
    manifest: &DatasetManifest,
    root: &Path,
    split: Split,
    image_size: usize,
) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut failures = Vec::new();
    for r in manifest.split(split) {
        match decode_and_prepare(root.join(&r.path), image_size) {
            Ok(t) => {
                images.push(t);
                labels.push(r.label);
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Unreadable(failures));
    }
    Dataset::new(images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::SampleRecord;
    use crate::data::synth::generate_synthetic;

    #[test]
    fn permutation_is_deterministic() {
        let a = shuffled_indices(50, 3, 1);
        assert_eq!(a, shuffled_indices(50, 3, 1));
        assert_ne!(a, shuffled_indices(50, 3, 2));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn batches_cover_split_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = generate_synthetic(dir.path(), 50, 8, 1).unwrap();
        for r in &mut records {
            r.split = Split::Train;
        }
        let manifest = DatasetManifest { records };
        let batches: Vec<Batch> = batch_iterator(&manifest, dir.path(), Split::Train, 32, 7, 0, 4)
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.labels.len()).collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
        assert_eq!(batches[0].images.shape(), &[32, 4, 4, 3]);

        let mut seen: Vec<String> = batches.iter().flat_map(|b| b.paths.clone()).collect();
        seen.sort();
        let mut expected: Vec<String> = manifest.records.iter().map(|r| r.path.clone()).collect();
        expected.sort();
        assert_eq!(seen, expected);
        let ones: usize = batches
            .iter()
            .flat_map(|b| &b.labels)
            .filter(|&&l| l == 1)
            .count();
        assert_eq!(ones, 50);

        let again: Vec<Vec<String>> =
            batch_iterator(&manifest, dir.path(), Split::Train, 32, 7, 0, 4)
                .unwrap()
                .map(|b| b.unwrap().paths)
                .collect();
        assert_eq!(
            again,
            batches.iter().map(|b| b.paths.clone()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn empty_split_is_rejected() {
        let manifest = DatasetManifest {
            records: vec![SampleRecord::new("a.png", 0)],
        };
        assert!(matches!(
            batch_iterator(&manifest, Path::new("."), Split::Test, 4, 0, 0, 8).map(|_| ()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn load_split_lists_all_failures() {
        let mut manifest = DatasetManifest {
            records: vec![SampleRecord::new("x.png", 0), SampleRecord::new("y.png", 1)],
        };
        for r in &mut manifest.records {
            r.split = Split::Train;
        }
        let dir = tempfile::tempdir().unwrap();
        match load_split(&manifest, dir.path(), Split::Train, 8) {
            Err(Error::Unreadable(list)) => {
                assert_eq!(list.len(), 2);
                assert!(list[0].contains("x.png") && list[1].contains("y.png"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
