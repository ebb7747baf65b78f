//! Classifier assembly: pretrained backbone, concat-pool head, and the
//! three-way layer-group partition used for freezing and per-group learning
//! rates.

mod backbone;
mod head;
pub mod weights;

pub use backbone::{build_backbone, declared_split, Backbone, BackboneSpec, Stage};
pub use head::{Head, HeadSpec};

use std::collections::BTreeMap;

use ndarray::{Array2, Array4, ArrayD};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{join, ConcatPool, EntryMut, Param, TensorKind};
use crate::rng::{stream_rng, Stream};
use crate::taxonomy::N_CATEGORIES;

/// Callback receiving a tensor's name, layer group, kind and value.
pub type GroupVisitFn<'a> = dyn FnMut(&str, usize, TensorKind, &ArrayD<f64>) + 'a;

pub const N_GROUPS: usize = 3;
pub const HEAD_GROUP: usize = 2;
pub const HEAD_PREFIX: &str = "head";

pub struct ModelAssembly {
    stages: Vec<Stage>,
    pool: ConcatPool,
    head: Head,
    frozen: [bool; N_GROUPS],
    backbone_spec: BackboneSpec,
    head_spec: HeadSpec,
    /// Lowest stage whose forward pass cached activations for backward.
    cached_from: Option<usize>,
}

/// Builds the classifier. Backbone weights come from the pretrained artifact
/// when one is configured; otherwise (and always for the head) parameters are
/// freshly initialized from the `Init` stream of `seed`.
pub fn build_model(backbone: &BackboneSpec, head: &HeadSpec, seed: u64) -> Result<ModelAssembly> {
    head.validate()?;
    let mut rng = stream_rng(seed, Stream::Init, &[]);
    let bb = build_backbone(backbone, &mut rng)?;
    if bb.out_channels != backbone.feature_channels {
        return Err(Error::Assembly(format!(
            "backbone `{}` produces {} channels but the spec declares {}",
            backbone.name, bb.out_channels, backbone.feature_channels
        )));
    }
    let head_model = Head::new(2 * bb.out_channels, head, &mut rng)?;
    if head_model.in_features() != 2 * bb.out_channels {
        return Err(Error::Assembly("head input width mismatch".into()));
    }
    let mut model = ModelAssembly {
        stages: bb.stages,
        pool: ConcatPool::new(),
        head: head_model,
        frozen: [false; N_GROUPS],
        backbone_spec: backbone.clone(),
        head_spec: head.clone(),
        cached_from: None,
    };
    if let Some(path) = &backbone.pretrained_weights {
        weights::load_backbone(&mut model, path, backbone.weights_sha256.as_deref())?;
    }
    Ok(model)
}

impl ModelAssembly {
    pub fn backbone_spec(&self) -> &BackboneSpec {
        &self.backbone_spec
    }

    pub fn head_spec(&self) -> &HeadSpec {
        &self.head_spec
    }

    pub fn feature_channels(&self) -> usize {
        self.backbone_spec.feature_channels
    }

    pub fn head_in_features(&self) -> usize {
        self.head.in_features()
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Head {
        &mut self.head
    }

    pub fn stage_groups(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.group).collect()
    }

    pub fn frozen(&self) -> [bool; N_GROUPS] {
        self.frozen
    }

    pub fn set_frozen(&mut self, groups: &[usize], frozen: bool) -> Result<()> {
        if let Some(g) = groups.iter().find(|&&g| g >= N_GROUPS) {
            return Err(Error::Config(format!("layer group {g} out of range")));
        }
        for &g in groups {
            self.frozen[g] = frozen;
        }
        for s in &mut self.stages {
            s.layer.set_frozen(self.frozen[s.group]);
        }
        self.head.set_frozen(self.frozen[HEAD_GROUP]);
        Ok(())
    }

    pub fn has_trainable(&self) -> bool {
        self.frozen.iter().any(|f| !f)
    }

    /// Evaluation-mode forward pass: dropout off, batch-norm running statistics.
    pub fn infer(&self, images: &Array4<f64>, normalized: bool) -> Result<Array2<f64>> {
        check_input(images, normalized)?;
        let mut x = images.clone();
        for s in &self.stages {
            x = s.layer.infer(&x);
        }
        let logits = self.head.infer(&self.pool.infer(&x));
        check_logits(&logits)?;
        Ok(logits)
    }

    /// Training-mode forward pass. Frozen groups run in evaluation mode; only
    /// stages at or above the lowest trainable stage cache activations.
    pub fn forward_train<R: Rng + ?Sized>(
        &mut self,
        images: &Array4<f64>,
        normalized: bool,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        check_input(images, normalized)?;
        let lowest = self.stages.iter().position(|s| !self.frozen[s.group]);
        let mut x = images.clone();
        for (i, s) in self.stages.iter_mut().enumerate() {
            x = match lowest {
                Some(l) if i >= l => s.layer.forward(x),
                _ => s.layer.infer(&x),
            };
        }
        self.cached_from = lowest;
        let feats = self.pool.forward(&x);
        let logits = self.head.forward(feats, rng);
        Ok(logits)
    }

    /// Backpropagates `dlogits` (gradient of the loss w.r.t. the logits of the
    /// last `forward_train`) into parameter gradients of trainable groups.
    pub fn backward(&mut self, dlogits: &Array2<f64>) {
        let dfeat = self.head.backward(dlogits);
        let mut g = self.pool.backward(&dfeat);
        if let Some(lowest) = self.cached_from.take() {
            for s in self.stages[lowest..].iter_mut().rev() {
                g = s.layer.backward(g);
            }
        }
    }

    pub fn clear_cache(&mut self) {
        for s in &mut self.stages {
            s.layer.clear_cache();
        }
        self.pool.clear_cache();
        self.head.clear_cache();
        self.cached_from = None;
    }

    /// Visits every parameter and buffer with its name and layer group.
    pub fn visit(&self, f: &mut GroupVisitFn<'_>) {
        for s in &self.stages {
            let g = s.group;
            s.layer.visit(&s.name, &mut |n, k, a| f(n, g, k, a));
        }
        self.head
            .visit(HEAD_PREFIX, &mut |n, k, a| f(n, HEAD_GROUP, k, a));
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, usize, EntryMut<'_>)) {
        for s in &mut self.stages {
            let g = s.group;
            s.layer.visit_mut(&s.name, &mut |n, e| f(n, g, e));
        }
        self.head
            .visit_mut(HEAD_PREFIX, &mut |n, e| f(n, HEAD_GROUP, e));
    }

    /// Parameters of trainable (unfrozen) groups, with name and group.
    pub fn for_each_trainable(&mut self, f: &mut dyn FnMut(&str, usize, &mut Param)) {
        let frozen = self.frozen;
        self.visit_mut(&mut |n, g, e| {
            if let EntryMut::Param(p) = e {
                if !frozen[g] {
                    f(n, g, p);
                }
            }
        });
    }

    pub fn zero_grad(&mut self) {
        self.visit_mut(&mut |_, _, e| {
            if let EntryMut::Param(p) = e {
                p.zero_grad();
            }
        });
    }

    /// Parameter names per layer group, bottom to top.
    pub fn split_layer_groups(&self) -> [Vec<String>; N_GROUPS] {
        let mut groups: [Vec<String>; N_GROUPS] = Default::default();
        self.visit(&mut |n, g, k, _| {
            if k == TensorKind::Param {
                groups[g].push(n.to_string());
            }
        });
        groups
    }

    pub fn param_counts(&self) -> [usize; N_GROUPS] {
        let mut counts = [0; N_GROUPS];
        self.visit(&mut |_, g, k, a| {
            if k == TensorKind::Param {
                counts[g] += a.len();
            }
        });
        counts
    }

    /// SHA-256 over each group's parameters and buffers (names, shapes, bits).
    pub fn group_checksums(&self) -> [String; N_GROUPS] {
        let mut hashers: [Sha256; N_GROUPS] = Default::default();
        self.visit(&mut |n, g, _, a| {
            let h = &mut hashers[g];
            h.update(n.as_bytes());
            for d in a.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in a.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        });
        hashers.map(|h| hex(&h.finalize()))
    }

    /// Named copies of every parameter and buffer.
    pub fn state_dict(&self) -> BTreeMap<String, ArrayD<f64>> {
        let mut out = BTreeMap::new();
        self.visit(&mut |n, _, _, a| {
            out.insert(n.to_string(), a.clone());
        });
        out
    }

    /// Overwrites parameters and buffers by name. Every entry of the model
    /// selected by `filter` must be present with a matching shape.
    pub fn load_state<F>(&mut self, state: &BTreeMap<String, ArrayD<f64>>, filter: F) -> Result<usize>
    where
        F: Fn(&str) -> bool,
    {
        let mut err = None;
        let mut loaded = 0;
        self.visit_mut(&mut |n, _, e| {
            if err.is_some() || !filter(n) {
                return;
            }
            let target = match e {
                EntryMut::Param(p) => &mut p.value,
                EntryMut::Buffer(b) => b,
            };
            match state.get(n) {
                None => err = Some(format!("missing tensor `{n}`")),
                Some(src) if src.shape() != target.shape() => {
                    err = Some(format!(
                        "shape mismatch for `{n}`: expected {:?}, found {:?}",
                        target.shape(),
                        src.shape()
                    ))
                }
                Some(src) => {
                    target.assign(src);
                    loaded += 1;
                }
            }
        });
        match err {
            Some(e) => Err(Error::Weights(e)),
            None => Ok(loaded),
        }
    }
}

pub fn is_backbone_entry(name: &str) -> bool {
    name != HEAD_PREFIX && !name.starts_with(&join(HEAD_PREFIX, ""))
}

fn check_input(images: &Array4<f64>, normalized: bool) -> Result<()> {
    if !normalized {
        return Err(Error::Contract("model input must be normalized".into()));
    }
    if images.dim().1 != 3 {
        return Err(Error::Contract(format!(
            "expected 3 input channels, found {}",
            images.dim().1
        )));
    }
    Ok(())
}

fn check_logits(logits: &Array2<f64>) -> Result<()> {
    debug_assert_eq!(logits.dim().1, N_CATEGORIES);
    if logits.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric("non-finite logits".into()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logits {logits:?}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_head(p: f64) -> HeadSpec {
        HeadSpec {
            hidden_widths: vec![12, 10],
            dropout_ps: vec![p, p, p],
            n_outputs: 7,
        }
    }

    fn toy_input(n: usize) -> Array4<f64> {
        Array4::from_shape_fn((n, 3, 224, 224), |(b, c, y, x)| {
            (((b * 31 + c * 17 + y * 7 + x * 3) % 23) as f64 / 23.0 - 0.5) * 2.0
        })
    }

    #[test]
    fn concat_pool_doubles_feature_width() {
        let m = build_model(&BackboneSpec::toy(), &toy_head(0.0), 0).unwrap();
        assert_eq!(m.feature_channels(), 16);
        assert_eq!(m.head_in_features(), 32);
    }

    #[test]
    fn channel_mismatch_is_an_assembly_error() {
        let mut spec = BackboneSpec::toy();
        spec.feature_channels = 9;
        assert!(matches!(build_model(&spec, &toy_head(0.0), 0), Err(Error::Assembly(_))));
    }

    #[test]
    fn unknown_backbone_is_a_config_error() {
        let spec = BackboneSpec {
            name: "vgg16".into(),
            ..BackboneSpec::toy()
        };
        assert!(matches!(build_model(&spec, &toy_head(0.0), 0), Err(Error::Config(_))));
    }

    #[test]
    fn missing_weights_file_is_a_load_error() {
        let spec = BackboneSpec {
            pretrained_weights: Some("/nonexistent/weights.safetensors".into()),
            ..BackboneSpec::toy()
        };
        assert!(matches!(build_model(&spec, &toy_head(0.0), 0), Err(Error::Weights(_))));
    }

    #[test]
    fn head_spec_validation() {
        let mut h = HeadSpec::default();
        assert!(h.validate().is_ok());
        h.hidden_widths = vec![512];
        assert!(h.validate().is_err());
        let h = HeadSpec {
            n_outputs: 5,
            ..HeadSpec::default()
        };
        assert!(h.validate().is_err());
        let h = HeadSpec {
            dropout_ps: vec![0.1, 1.0, 0.2],
            ..HeadSpec::default()
        };
        assert!(h.validate().is_err());
    }

    #[test]
    fn groups_partition_parameters() {
        let m = build_model(&BackboneSpec::toy(), &toy_head(0.0), 0).unwrap();
        let groups = m.split_layer_groups();
        assert!(groups.iter().all(|g| !g.is_empty()));
        let mut all: Vec<_> = groups.iter().flatten().cloned().collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n, "groups overlap");
        assert!(groups[2].iter().any(|n| n.starts_with("head.")));
        assert!(groups[0].iter().chain(&groups[1]).all(|n| !n.starts_with("head")));
        let total: usize = m.param_counts().iter().sum();
        let mut direct = 0;
        m.visit(&mut |_, _, k, a| {
            if k == TensorKind::Param {
                direct += a.len()
            }
        });
        assert_eq!(total, direct);
        assert_eq!(m.stage_groups(), [0, 1, 2]);
    }

    #[test]
    fn unnormalized_input_is_rejected() {
        let m = build_model(&BackboneSpec::toy(), &toy_head(0.0), 0).unwrap();
        assert!(matches!(m.infer(&toy_input(1), false), Err(Error::Contract(_))));
    }

    #[test]
    fn eval_forward_is_deterministic_and_row_independent() {
        let m = build_model(&BackboneSpec::toy(), &toy_head(0.5), 3).unwrap();
        let mut x = toy_input(3);
        let first = x.index_axis(ndarray::Axis(0), 0).to_owned();
        x.index_axis_mut(ndarray::Axis(0), 2).assign(&first);
        let a = m.infer(&x, true).unwrap();
        let b = m.infer(&x, true).unwrap();
        assert_eq!(a.dim(), (3, 7));
        assert_eq!(a, b);
        assert_eq!(a.row(0), a.row(2));
        let single = m.infer(&x.slice(ndarray::s![0..1, .., .., ..]).to_owned(), true).unwrap();
        assert_eq!(single.row(0), a.row(0));
    }

    #[test]
    fn dropout_makes_training_forward_stochastic() {
        let mut m = build_model(&BackboneSpec::toy(), &toy_head(0.5), 3).unwrap();
        let x = toy_input(4);
        let a = m
            .forward_train(&x, true, &mut stream_rng(0, Stream::Dropout, &[1]))
            .unwrap();
        m.clear_cache();
        let b = m
            .forward_train(&x, true, &mut stream_rng(0, Stream::Dropout, &[2]))
            .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&[0.3; 7]).unwrap();
        assert!(u.iter().all(|&p| (p - 1.0 / 7.0).abs() < 1e-15));
        let p = softmax(&[2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        // e^2 / (e^2 + 6), evaluated independently.
        let e2 = std::f64::consts::E * std::f64::consts::E;
        assert!((p[0] - e2 / (e2 + 6.0)).abs() < 1e-15);
        assert!((p[0] - 0.551_872_816_450_503_6).abs() < 1e-12);
        assert!(softmax(&[1.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_shift_invariant_and_normalized(
            logits in proptest::collection::vec(-20.0f64..20.0, 7),
            c in -50.0f64..50.0,
        ) {
            let p = softmax(&logits).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
            let q = softmax(&shifted).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| v > 0.0));
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
