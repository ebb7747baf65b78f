//! Ground-truth ingestion, image preprocessing, augmentation and batching.

pub mod augment;
pub mod batch;
pub mod image;
pub mod manifest;

pub use augment::{augment, AugmentDraw, AugmentationPolicy};
pub use batch::{
    epoch_batches, epoch_order, load_batch, make_batches, steps_per_epoch, AugmentSpec, Batch,
    DiskSource, ImageSource, MemorySource,
};
pub use image::{
    denormalize, imagenet_normalize, load_and_resize, normalize, ImageTensor, IMAGENET_MEAN,
    IMAGENET_STD, IMAGE_SIDE,
};
pub use manifest::{parse_manifest, Manifest, ManifestRecord, Split, GROUND_TRUTH_HEADER};
