use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use ndarray::{Array4, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::augment::AugmentationPolicy;
use super::image::{imagenet_normalize, load_and_resize, ImageTensor, IMAGE_SIDE};
use super::manifest::{Manifest, ManifestRecord};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Where decoded, resized (unnormalized) images come from.
pub trait ImageSource: Send + Sync {
    fn load(&self, record: &ManifestRecord) -> Result<Arc<ImageTensor>>;
}

/// Reads images from disk, optionally memoizing decoded tensors.
pub struct DiskSource {
    side: usize,
    cache: Option<RwLock<HashMap<String, Arc<ImageTensor>>>>,
}

impl DiskSource {
    pub fn new(side: usize) -> Self {
        Self { side, cache: None }
    }

    pub fn cached(side: usize) -> Self {
        Self {
            side,
            cache: Some(RwLock::new(HashMap::new())),
        }
    }
}

impl Default for DiskSource {
    fn default() -> Self {
        Self::new(IMAGE_SIDE)
    }
}

impl ImageSource for DiskSource {
    fn load(&self, record: &ManifestRecord) -> Result<Arc<ImageTensor>> {
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.read().expect("cache poisoned").get(&record.image_id) {
                return Ok(hit.clone());
            }
        }
        let img = Arc::new(load_and_resize(&record.image_path, self.side)?);
        if let Some(cache) = &self.cache {
            cache
                .write()
                .expect("cache poisoned")
                .insert(record.image_id.clone(), img.clone());
        }
        Ok(img)
    }
}

/// In-memory source keyed by image id.
#[derive(Default)]
pub struct MemorySource {
    images: HashMap<String, Arc<ImageTensor>>,
}

impl MemorySource {
    pub fn insert(&mut self, id: impl Into<String>, img: ImageTensor) {
        self.images.insert(id.into(), Arc::new(img));
    }
}

impl ImageSource for MemorySource {
    fn load(&self, record: &ManifestRecord) -> Result<Arc<ImageTensor>> {
        self.images
            .get(&record.image_id)
            .cloned()
            .ok_or_else(|| Error::MissingImages(vec![record.image_id.clone()]))
    }
}

/// A stacked, normalized mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Array4<f64>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
    pub normalized: bool,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn from_images(images: &[ImageTensor], labels: Vec<usize>, ids: Vec<String>) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Empty("batch has no images".into()))?;
        let normalized = first.normalized;
        if images.iter().any(|i| i.normalized != normalized || i.data.dim() != first.data.dim()) {
            return Err(Error::Contract("batch images disagree in shape or normalization".into()));
        }
        let (c, h, w) = first.data.dim();
        let mut stacked = Array4::zeros((images.len(), c, h, w));
        for (mut dst, img) in stacked.axis_iter_mut(Axis(0)).zip(images) {
            dst.assign(&img.data);
        }
        Ok(Self {
            images: stacked,
            labels,
            ids,
            normalized,
        })
    }
}

/// Record order for one epoch; a pure function of (seed, epoch).
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Shuffle, &[epoch as u64]));
    order
}

/// Batch index lists for one epoch; the final partial batch is kept.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::Empty("manifest has no records".into()));
    }
    Ok(epoch_order(n, seed, epoch)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Augmentation settings for training batches. Each record's draw is keyed
/// by (seed, epoch, record index) so results do not depend on worker count.
#[derive(Debug, Clone, Copy)]
pub struct AugmentSpec<'a> {
    pub policy: &'a AugmentationPolicy,
    pub seed: u64,
    pub epoch: usize,
}

/// Loads, optionally augments, and normalizes the given records.
pub fn load_batch(
    manifest: &Manifest,
    indices: &[usize],
    source: &dyn ImageSource,
    augment: Option<AugmentSpec<'_>>,
) -> Result<Batch> {
    let loaded: Vec<Result<ImageTensor>> = indices
        .par_iter()
        .map(|&i| {
            let record = &manifest.records[i];
            let img = source.load(record)?;
            let img = match augment {
                Some(spec) => {
                    let mut rng =
                        stream_rng(spec.seed, Stream::Augment, &[spec.epoch as u64, i as u64]);
                    spec.policy.sample(&mut rng).apply(&img)
                }
                None => (*img).clone(),
            };
            imagenet_normalize(&img)
        })
        .collect();
    let images = loaded.into_iter().collect::<Result<Vec<_>>>()?;
    let labels = indices.iter().map(|&i| manifest.records[i].label).collect();
    let ids = indices
        .iter()
        .map(|&i| manifest.records[i].image_id.clone())
        .collect();
    Batch::from_images(&images, labels, ids)
}

/// Materializes every batch of one epoch. Augmentation is applied only when
/// `augmenting` is set (training).
pub fn make_batches(
    manifest: &Manifest,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    augmenting: Option<&AugmentationPolicy>,
    source: &dyn ImageSource,
) -> Result<Vec<Batch>> {
    epoch_batches(manifest.len(), batch_size, seed, epoch)?
        .iter()
        .map(|idx| {
            let aug = augmenting.map(|policy| AugmentSpec {
                policy,
                seed,
                epoch,
            });
            load_batch(manifest, idx, source, aug)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::manifest::{ManifestRecord, Split};
    use ndarray::Array3;
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn toy(n: usize) -> (Manifest, MemorySource) {
        let mut src = MemorySource::default();
        let records = (0..n)
            .map(|i| {
                let id = format!("img{i}");
                src.insert(
                    id.clone(),
                    ImageTensor::new(Array3::from_elem((3, 8, 8), i as f64 / n as f64)),
                );
                ManifestRecord {
                    image_id: id,
                    image_path: PathBuf::new(),
                    label: i % 7,
                    split: Split::Train,
                }
            })
            .collect();
        (Manifest::new(Split::Train, records).unwrap(), src)
    }

    #[test]
    fn batch_counts() {
        let b = epoch_batches(10015, 32, 0, 0).unwrap();
        assert_eq!(b.len(), 313);
        assert_eq!(b.last().unwrap().len(), 31);
        assert_eq!(steps_per_epoch(10015, 32), 313);

        let b = epoch_batches(10, 32, 0, 0).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 10);
    }

    #[test]
    fn errors() {
        assert!(matches!(epoch_batches(0, 4, 0, 0), Err(Error::Empty(_))));
        assert!(epoch_batches(5, 0, 0, 0).is_err());
    }

    #[test]
    fn same_seed_same_order_and_reshuffle_per_epoch() {
        assert_eq!(epoch_order(50, 9, 0), epoch_order(50, 9, 0));
        assert_ne!(epoch_order(50, 9, 0), epoch_order(50, 9, 1));
        assert_ne!(epoch_order(50, 9, 0), epoch_order(50, 10, 0));
    }

    #[test]
    fn materialized_batches_are_normalized_and_cover_records() {
        let (m, src) = toy(10);
        let policy = AugmentationPolicy::default();
        let batches = make_batches(&m, 4, 1, 0, Some(&policy), &src).unwrap();
        assert_eq!(batches.iter().map(Batch::len).collect::<Vec<_>>(), [4, 4, 2]);
        assert!(batches.iter().all(|b| b.normalized));
        assert_eq!(batches[0].images.dim(), (4, 3, 8, 8));
        let mut ids: Vec<_> = batches.iter().flat_map(|b| b.ids.clone()).collect();
        ids.sort();
        let mut expect: Vec<_> = m.records.iter().map(|r| r.image_id.clone()).collect();
        expect.sort();
        assert_eq!(ids, expect);
    }

    #[test]
    fn evaluation_batches_are_not_augmented() {
        let (m, src) = toy(3);
        let batches = make_batches(&m, 3, 1, 0, None, &src).unwrap();
        let first = m
            .records
            .iter()
            .find(|r| r.image_id == batches[0].ids[0])
            .unwrap();
        let direct = imagenet_normalize(&src.load(first).unwrap()).unwrap();
        let row = batches[0].images.index_axis(Axis(0), 0).to_owned();
        assert_eq!(row, direct.data);
    }

    proptest! {
        #[test]
        fn epoch_coverage(n in 1usize..200, bs in 1usize..40, seed in any::<u64>(), epoch in 0usize..5) {
            let batches = epoch_batches(n, bs, seed, epoch).unwrap();
            let mut all: Vec<usize> = batches.concat();
            prop_assert_eq!(batches.len(), n.div_ceil(bs));
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
