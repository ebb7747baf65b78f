//! Synthetic dermoscopy-like fixtures for tests and quick end-to-end runs.
//!
//! Each category gets its own palette and lesion geometry, jittered per
//! image, so a small network can tell them apart.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::Rng;

use crate::config::{RunConfig, SplitPaths};
use crate::dataset::manifest::image_path_for;
use crate::dataset::{Manifest, ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::model::{BackboneSpec, HeadSpec};
use crate::rng::{stream_rng, Stream};
use crate::taxonomy::Category;
use crate::trainer::{PhaseConfig, TrainConfig};

/// Files written by [`write_fixture`].
#[derive(Debug, Clone)]
pub struct Fixture {
    pub image_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
}

const SKIN: [[f64; 3]; 7] = [
    [205.0, 160.0, 140.0],
    [220.0, 180.0, 150.0],
    [200.0, 150.0, 150.0],
    [215.0, 170.0, 160.0],
    [190.0, 160.0, 130.0],
    [225.0, 190.0, 170.0],
    [210.0, 165.0, 150.0],
];

const LESION: [[f64; 3]; 7] = [
    [40.0, 20.0, 20.0],
    [120.0, 70.0, 40.0],
    [230.0, 200.0, 210.0],
    [170.0, 60.0, 50.0],
    [150.0, 120.0, 70.0],
    [100.0, 60.0, 80.0],
    [180.0, 20.0, 60.0],
];

fn render<R: Rng>(category: Category, width: u32, height: u32, rng: &mut R) -> RgbImage {
    let k = category.index();
    let cx = width as f64 * rng.random_range(0.4..0.6);
    let cy = height as f64 * rng.random_range(0.4..0.6);
    let radius = width.min(height) as f64 * (0.18 + 0.04 * k as f64) * rng.random_range(0.9..1.1);
    // Odd categories get striped lesions, even ones solid blobs.
    let stripes = k % 2 == 1;
    let period = 4.0 + k as f64;
    let shade: f64 = rng.random_range(-12.0..12.0);
    RgbImage::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let d = (dx * dx + dy * dy).sqrt() / radius;
        let inside = if stripes {
            d < 1.0 && ((x as f64 + y as f64) / period).floor() as i64 % 2 == 0
        } else {
            d < 1.0
        };
        let base = if inside { LESION[k] } else { SKIN[k] };
        let px = base.map(|c| (c + shade).clamp(0.0, 255.0) as u8);
        Rgb(px)
    })
}

/// Writes `per_category` JPEGs for each listed category plus a one-hot
/// ground-truth CSV named `<split>.csv` in `dir`.
pub fn write_fixture(
    dir: &Path,
    split: Split,
    categories: &[Category],
    per_category: usize,
    seed: u64,
) -> Result<Fixture> {
    let image_dir = dir.join("images");
    std::fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let mut records = Vec::new();
    for &cat in categories {
        for i in 0..per_category {
            let id = format!("TOY_{}_{}_{i:02}", split, cat.code());
            let mut rng = stream_rng(seed, Stream::Init, &[cat.index() as u64, i as u64]);
            let (w, h) = (rng.random_range(96..160), rng.random_range(72..120));
            let img = render(cat, w, h, &mut rng);
            let path = image_path_for(&image_dir, &id);
            img.save(&path).map_err(|e| Error::ImageLoad {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            records.push(ManifestRecord {
                image_id: id,
                image_path: path,
                label: cat.index(),
                split,
            });
        }
    }
    let manifest = Manifest::new(split, records)?;
    let manifest_path = dir.join(format!("{split}.csv"));
    std::fs::write(&manifest_path, manifest.to_csv()).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(Fixture {
        image_dir,
        manifest_path,
        manifest,
    })
}

/// Two images of every category for each split.
pub fn write_toy_dataset(dir: &Path, seed: u64) -> Result<[Fixture; 3]> {
    let mk = |split: Split, salt: u64| write_fixture(dir, split, &Category::ALL, 2, seed ^ salt);
    Ok([mk(Split::Train, 0)?, mk(Split::Val, 1)?, mk(Split::Test, 2)?])
}

/// A small run over the toy fixture: miniature backbone, one one-epoch
/// cycle per phase, images cached in memory.
pub fn toy_config(dir: &Path, fixtures: &[Fixture]) -> RunConfig {
    let mut cfg = RunConfig::default();
    let image_root = fixtures
        .first()
        .map(|f| f.image_dir.clone())
        .unwrap_or_else(|| dir.join("images"));
    cfg.data.image_root = image_root;
    cfg.data.cache_images = true;
    for f in fixtures {
        let paths = Some(SplitPaths {
            manifest: f.manifest_path.clone(),
            images: None,
        });
        match f.manifest.split {
            Split::Train => cfg.data.train = paths,
            Split::Val => cfg.data.val = paths,
            Split::Test => cfg.data.test = paths,
        }
    }
    cfg.model.backbone = BackboneSpec::toy();
    cfg.model.head = HeadSpec {
        hidden_widths: vec![32, 32],
        ..HeadSpec::default()
    };
    let one = |frozen: Vec<usize>| PhaseConfig {
        n_cycles: 1,
        first_cycle_epochs: 1,
        cycle_mult: 1,
        group_divisors: [9.0, 3.0, 1.0],
        frozen_groups: frozen,
    };
    cfg.train = TrainConfig {
        batch_size: 4,
        phases: vec![one(vec![0, 1]), one(vec![])],
        ..TrainConfig::default()
    };
    cfg.eval.batch_size = 4;
    cfg.output.dir = dir.join("run");
    cfg
}
