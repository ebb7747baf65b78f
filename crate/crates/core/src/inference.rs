//! Per-image predictions, test-time augmentation, and split evaluation.

use std::io::Write;
use std::path::Path;

use ndarray::{Array4, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{imagenet_normalize, AugmentationPolicy, ImageSource, ImageTensor, Manifest};
use crate::error::{Error, Result};
use crate::metrics::{balanced_accuracy, confusion_matrix, ConfusionMatrix};
use crate::model::{softmax, ModelAssembly};
use crate::rng::{key_of, stream_rng, Stream};
use crate::taxonomy::{Category, N_CATEGORIES};

/// Category probabilities in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionVector {
    pub probs: [f64; N_CATEGORIES],
}

impl PredictionVector {
    pub fn new(probs: [f64; N_CATEGORIES]) -> Result<Self> {
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Numeric(format!("invalid probabilities {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.len() != N_CATEGORIES {
            return Err(Error::Contract(format!(
                "expected {N_CATEGORIES} logits, found {}",
                logits.len()
            )));
        }
        let p = softmax(logits)?;
        Ok(Self {
            probs: p.try_into().expect("length checked"),
        })
    }

    pub fn label(&self) -> usize {
        argmax_label(&self.probs)
    }

    pub fn category(&self) -> Category {
        Category::ALL[self.label()]
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_label(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn stack(images: &[ImageTensor]) -> Result<Array4<f64>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Empty("no images to predict".into()))?;
    if images.iter().any(|i| !i.normalized) {
        return Err(Error::Contract("prediction input must be normalized".into()));
    }
    let (c, h, w) = first.data.dim();
    let mut x = Array4::zeros((images.len(), c, h, w));
    for (mut dst, img) in x.axis_iter_mut(Axis(0)).zip(images) {
        if img.data.dim() != (c, h, w) {
            return Err(Error::Contract("images in one prediction call differ in shape".into()));
        }
        dst.assign(&img.data);
    }
    Ok(x)
}

/// Evaluation-mode predictions for normalized images. Each row is computed
/// independently, so batching never changes a result.
pub fn predict_many(model: &ModelAssembly, images: &[ImageTensor]) -> Result<Vec<PredictionVector>> {
    let logits = model.infer(&stack(images)?, true)?;
    logits
        .rows()
        .into_iter()
        .map(|r| PredictionVector::from_logits(r.as_slice().expect("row-major logits")))
        .collect()
}

pub fn predict(model: &ModelAssembly, img: &ImageTensor) -> Result<PredictionVector> {
    Ok(predict_many(model, std::slice::from_ref(img))?[0])
}

/// Mean of the member predictions, accumulated as deviations from the first
/// member so identical members reproduce it bit for bit.
pub fn average_predictions(members: &[PredictionVector]) -> Result<PredictionVector> {
    let (first, rest) = members
        .split_first()
        .ok_or_else(|| Error::Empty("no predictions to average".into()))?;
    let n = members.len() as f64;
    let mut out = first.probs;
    for (c, o) in out.iter_mut().enumerate() {
        let dev: f64 = rest.iter().map(|m| m.probs[c] - first.probs[c]).sum();
        *o += dev / n;
    }
    Ok(PredictionVector { probs: out })
}

/// The original image followed by `n_aug` augmented copies, each ready for
/// the model. Unnormalized input is normalized after augmentation.
pub fn tta_inputs<R: Rng + ?Sized>(
    img: &ImageTensor,
    n_aug: usize,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<Vec<ImageTensor>> {
    let prepare = |x: ImageTensor| if x.normalized { Ok(x) } else { imagenet_normalize(&x) };
    let mut out = Vec::with_capacity(n_aug + 1);
    out.push(prepare(img.clone())?);
    for _ in 0..n_aug {
        out.push(prepare(policy.sample(rng).apply(img))?);
    }
    Ok(out)
}

pub fn tta_members<R: Rng + ?Sized>(
    model: &ModelAssembly,
    img: &ImageTensor,
    n_aug: usize,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<Vec<PredictionVector>> {
    predict_many(model, &tta_inputs(img, n_aug, policy, rng)?)
}

pub fn tta_predict<R: Rng + ?Sized>(
    model: &ModelAssembly,
    img: &ImageTensor,
    n_aug: usize,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<PredictionVector> {
    average_predictions(&tta_members(model, img, n_aug, policy, rng)?)
}

/// TTA random stream for one record, keyed by its id.
pub fn tta_rng(seed: u64, image_id: &str) -> crate::rng::StreamRng {
    stream_rng(seed, Stream::Tta, &[key_of(image_id)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub use_tta: bool,
    pub n_aug: usize,
    pub policy: AugmentationPolicy,
    pub seed: u64,
    /// Records per forward pass.
    pub batch_size: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            use_tta: false,
            n_aug: 4,
            policy: AugmentationPolicy::default(),
            seed: 0,
            batch_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_records: usize,
    pub confusion: ConfusionMatrix,
    /// `null` for categories absent from the split.
    pub per_category_recall: [Option<f64>; N_CATEGORIES],
    pub balanced_accuracy: f64,
    pub tta: bool,
    pub n_aug: usize,
    pub seed: u64,
}

impl EvaluationReport {
    pub fn from_labels(preds: &[usize], truths: &[usize], settings: &EvalSettings) -> Result<Self> {
        let confusion = confusion_matrix(preds, truths)?;
        Ok(Self {
            n_records: preds.len(),
            per_category_recall: confusion.recalls(),
            balanced_accuracy: balanced_accuracy(&confusion)?,
            confusion,
            tta: settings.use_tta,
            n_aug: if settings.use_tta { settings.n_aug } else { 0 },
            seed: settings.seed,
        })
    }

    /// Whether the stored scalars follow from the stored confusion matrix.
    pub fn is_consistent(&self) -> bool {
        self.confusion.total() == self.n_records as u64
            && self.confusion.recalls() == self.per_category_recall
            && balanced_accuracy(&self.confusion).ok() == Some(self.balanced_accuracy)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub predictions: Vec<(String, PredictionVector)>,
}

/// Predicts every record of `manifest` and scores the result.
pub fn evaluate(
    model: &ModelAssembly,
    manifest: &Manifest,
    source: &dyn ImageSource,
    settings: &EvalSettings,
) -> Result<Evaluation> {
    if manifest.is_empty() {
        return Err(Error::Empty("evaluation manifest has no records".into()));
    }
    let loaded: Vec<_> = manifest
        .records
        .par_iter()
        .map(|r| source.load(r))
        .collect();
    let missing: Vec<String> = loaded
        .iter()
        .zip(&manifest.records)
        .filter(|(l, _)| l.is_err())
        .map(|(_, r)| r.image_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingImages(missing));
    }
    let images: Vec<_> = loaded.into_iter().map(|l| l.expect("checked")).collect();

    let n_aug = if settings.use_tta { settings.n_aug } else { 0 };
    let per_record = n_aug + 1;
    let mut predictions = Vec::with_capacity(manifest.len());
    let chunk = settings.batch_size.max(1);
    for (records, imgs) in manifest.records.chunks(chunk).zip(images.chunks(chunk)) {
        let inputs = records
            .par_iter()
            .zip(imgs)
            .map(|(r, img)| {
                let mut rng = tta_rng(settings.seed, &r.image_id);
                tta_inputs(img, n_aug, &settings.policy, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?
            .concat();
        let members = predict_many(model, &inputs)?;
        for (r, group) in records.iter().zip(members.chunks(per_record)) {
            predictions.push((r.image_id.clone(), average_predictions(group)?));
        }
    }
    let preds: Vec<usize> = predictions.iter().map(|(_, p)| p.label()).collect();
    let report = EvaluationReport::from_labels(&preds, &manifest.labels(), settings)?;
    Ok(Evaluation {
        report,
        predictions,
    })
}

/// `image,MEL,NV,BCC,AKIEC,BKL,DF,VASC,predicted`
pub fn write_predictions_csv<W: Write>(rows: &[(String, PredictionVector)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    let mut header = vec!["image"];
    header.extend(Category::ALL.iter().map(|c| c.code()));
    header.push("predicted");
    w.write_record(&header).map_err(fmt)?;
    for (id, p) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(p.probs.iter().map(|v| v.to_string()));
        rec.push(p.category().code().to_string());
        w.write_record(&rec).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn write_predictions_file(rows: &[(String, PredictionVector)], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_predictions_csv(rows, std::io::BufWriter::new(f))
}
