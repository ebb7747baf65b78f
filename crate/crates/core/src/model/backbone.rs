use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Layer, MaxPool2d, Relu, Residual, Sequential};

/// Which feature extractor to build and where its pretrained weights live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub name: String,
    pub feature_channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained_weights: Option<PathBuf>,
    /// Hex SHA-256 of the weights file; verified on load when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_sha256: Option<String>,
    /// Layer group of each backbone stage, overriding the built-in table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_split: Option<Vec<usize>>,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self::resnet50()
    }
}

impl BackboneSpec {
    pub fn resnet50() -> Self {
        Self {
            name: "resnet50".into(),
            feature_channels: 2048,
            pretrained_weights: None,
            weights_sha256: None,
            group_split: None,
        }
    }

    pub fn toy() -> Self {
        Self {
            name: "toy".into(),
            feature_channels: TOY_CHANNELS[2],
            pretrained_weights: None,
            weights_sha256: None,
            group_split: None,
        }
    }
}

/// A contiguous slice of the backbone assigned to one layer group.
pub struct Stage {
    pub name: String,
    pub layer: Box<dyn Layer>,
    pub group: usize,
}

pub struct Backbone {
    pub stages: Vec<Stage>,
    pub out_channels: usize,
}

/// Built-in stage-to-group tables.
pub fn declared_split(name: &str) -> Option<Vec<usize>> {
    match name {
        // stem, layer1, layer2 | layer3, layer4
        "resnet50" => Some(vec![0, 0, 0, 1, 1]),
        // one stage per group
        "toy" => Some(vec![0, 1, 2]),
        _ => None,
    }
}

pub fn build_backbone<R: Rng + ?Sized>(spec: &BackboneSpec, rng: &mut R) -> Result<Backbone> {
    let (stages, out_channels) = match spec.name.as_str() {
        "resnet50" => resnet50(rng),
        "toy" => toy(rng),
        other => {
            return Err(Error::Config(format!(
                "unsupported backbone `{other}`; supported: resnet50, toy"
            )))
        }
    };
    let split = match &spec.group_split {
        Some(s) => s.clone(),
        None => declared_split(&spec.name).ok_or_else(|| {
            Error::Config(format!("backbone `{}` has no declared layer-group split", spec.name))
        })?,
    };
    if split.len() != stages.len() {
        return Err(Error::Config(format!(
            "group split lists {} stages but backbone `{}` has {}",
            split.len(),
            spec.name,
            stages.len()
        )));
    }
    if split.iter().any(|&g| g > 2) || split.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config(format!(
            "group split {split:?} must be non-decreasing with groups in 0..=2"
        )));
    }
    let stages = stages
        .into_iter()
        .zip(split)
        .map(|((name, layer), group)| Stage { name, layer, group })
        .collect();
    Ok(Backbone {
        stages,
        out_channels,
    })
}

fn conv_bn<R: Rng + ?Sized>(
    seq: Sequential,
    idx: usize,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    rng: &mut R,
) -> Sequential {
    seq.push(format!("conv{idx}"), Conv2d::new(cin, cout, k, stride, k / 2, rng))
        .push(format!("bn{idx}"), BatchNorm2d::new(cout))
}

fn downsample<R: Rng + ?Sized>(cin: usize, cout: usize, stride: usize, rng: &mut R) -> Sequential {
    Sequential::new()
        .push("0", Conv2d::new(cin, cout, 1, stride, 0, rng))
        .push("1", BatchNorm2d::new(cout))
}

/// Bottleneck block with the stride on the 3x3 convolution.
fn bottleneck<R: Rng + ?Sized>(cin: usize, width: usize, stride: usize, rng: &mut R) -> Residual {
    let cout = width * 4;
    let mut body = conv_bn(Sequential::new(), 1, cin, width, 1, 1, rng).push("relu1", Relu::new());
    body = conv_bn(body, 2, width, width, 3, stride, rng).push("relu2", Relu::new());
    body = conv_bn(body, 3, width, cout, 1, 1, rng);
    let shortcut = (stride != 1 || cin != cout).then(|| downsample(cin, cout, stride, rng));
    Residual::new(body, shortcut)
}

fn basic_block<R: Rng + ?Sized>(cin: usize, cout: usize, stride: usize, rng: &mut R) -> Residual {
    let mut body = conv_bn(Sequential::new(), 1, cin, cout, 3, stride, rng).push("relu1", Relu::new());
    body = conv_bn(body, 2, cout, cout, 3, 1, rng);
    let shortcut = (stride != 1 || cin != cout).then(|| downsample(cin, cout, stride, rng));
    Residual::new(body, shortcut)
}

type StageList = Vec<(String, Box<dyn Layer>)>;

fn resnet50<R: Rng + ?Sized>(rng: &mut R) -> (StageList, usize) {
    let stem = Sequential::new()
        .push("conv1", Conv2d::new(3, 64, 7, 2, 3, rng))
        .push("bn1", BatchNorm2d::new(64))
        .push("relu", Relu::new())
        .push("maxpool", MaxPool2d::new(3, 2, 1));
    let mut stages: StageList = vec![(String::new(), Box::new(stem))];
    let mut cin = 64;
    for (i, (blocks, width, stride)) in [(3, 64, 1), (4, 128, 2), (6, 256, 2), (3, 512, 2)]
        .into_iter()
        .enumerate()
    {
        let mut layer = Sequential::new();
        for b in 0..blocks {
            let s = if b == 0 { stride } else { 1 };
            layer.push_boxed(b.to_string(), Box::new(bottleneck(cin, width, s, rng)));
            cin = width * 4;
        }
        stages.push((format!("layer{}", i + 1), Box::new(layer)));
    }
    (stages, cin)
}

const TOY_CHANNELS: [usize; 3] = [8, 16, 16];

/// Three-stage miniature residual network for tests: 224 -> 28 -> 14 -> 7.
fn toy<R: Rng + ?Sized>(rng: &mut R) -> (StageList, usize) {
    let stem = Sequential::new()
        .push("conv1", Conv2d::new(3, TOY_CHANNELS[0], 3, 4, 1, rng))
        .push("bn1", BatchNorm2d::new(TOY_CHANNELS[0]))
        .push("relu", Relu::new())
        .push("maxpool", MaxPool2d::new(3, 2, 1));
    let l1 = Sequential::new().push("0", basic_block(TOY_CHANNELS[0], TOY_CHANNELS[1], 2, rng));
    let l2 = Sequential::new().push("0", basic_block(TOY_CHANNELS[1], TOY_CHANNELS[2], 2, rng));
    (
        vec![
            (String::new(), Box::new(stem)),
            ("layer1".into(), Box::new(l1)),
            ("layer2".into(), Box::new(l2)),
        ],
        TOY_CHANNELS[2],
    )
}
