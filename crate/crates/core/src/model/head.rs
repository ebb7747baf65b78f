use ndarray::{Array2, Ix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, BatchNorm, Dropout, Linear, Relu, VisitFn, VisitMutFn};
use crate::taxonomy::N_CATEGORIES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSpec {
    pub hidden_widths: Vec<usize>,
    /// One rate per block: after pooling, after each hidden layer.
    pub dropout_ps: Vec<f64>,
    pub n_outputs: usize,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self {
            hidden_widths: vec![512, 512],
            dropout_ps: vec![0.25, 0.25, 0.5],
            n_outputs: N_CATEGORIES,
        }
    }
}

impl HeadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.len() != 2 || self.hidden_widths.contains(&0) {
            return Err(Error::Config(format!(
                "head needs exactly two non-empty hidden layers, got {:?}",
                self.hidden_widths
            )));
        }
        if self.dropout_ps.len() != self.hidden_widths.len() + 1 {
            return Err(Error::Config(format!(
                "head needs {} dropout rates, got {}",
                self.hidden_widths.len() + 1,
                self.dropout_ps.len()
            )));
        }
        if let Some(p) = self.dropout_ps.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if self.n_outputs != N_CATEGORIES {
            return Err(Error::Config(format!(
                "head must have {N_CATEGORIES} outputs, got {}",
                self.n_outputs
            )));
        }
        Ok(())
    }
}

/// One `batch-norm -> dropout -> linear [-> relu]` unit.
struct HeadBlock {
    bn: BatchNorm,
    drop: Dropout,
    fc: Linear,
    relu: Option<Relu<Ix2>>,
}

/// Classifier head over concat-pooled features:
/// `[BN, Dropout, FC, ReLU] x hidden, then BN, Dropout, FC(logits)`.
pub struct Head {
    blocks: Vec<HeadBlock>,
}

impl Head {
    pub fn new<R: Rng + ?Sized>(in_features: usize, spec: &HeadSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut widths = vec![in_features];
        widths.extend(&spec.hidden_widths);
        widths.push(spec.n_outputs);
        let last = widths.len() - 2;
        let blocks = (0..=last)
            .map(|i| HeadBlock {
                bn: BatchNorm::new(widths[i]),
                drop: Dropout::new(spec.dropout_ps[i]),
                fc: Linear::new(widths[i], widths[i + 1], rng),
                relu: (i < last).then(Relu::new),
            })
            .collect();
        Ok(Self { blocks })
    }

    pub fn in_features(&self) -> usize {
        self.blocks[0].fc.in_features()
    }

    /// The layer producing the logits.
    pub fn output_layer(&self) -> &Linear {
        &self.blocks.last().expect("head has blocks").fc
    }

    pub fn output_layer_mut(&mut self) -> &mut Linear {
        &mut self.blocks.last_mut().expect("head has blocks").fc
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, mut x: Array2<f64>, rng: &mut R) -> Array2<f64> {
        for b in &mut self.blocks {
            x = b.bn.forward2(&x);
            x = b.drop.forward(x, rng);
            x = b.fc.forward(x);
            if let Some(r) = &mut b.relu {
                x = r.forward_nd(x);
            }
        }
        x
    }

    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut x = x.clone();
        for b in &self.blocks {
            x = b.fc.infer(&b.bn.infer2(&x));
            if b.relu.is_some() {
                x = Relu::apply(&x);
            }
        }
        x
    }

    pub fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let mut g = grad.clone();
        for b in self.blocks.iter_mut().rev() {
            if let Some(r) = &mut b.relu {
                g = r.backward_nd(g);
            }
            g = b.fc.backward(&g);
            g = b.drop.backward(g);
            g = b.bn.backward2(&g);
        }
        g
    }

    pub fn visit(&self, prefix: &str, f: &mut VisitFn<'_>) {
        for (i, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &i.to_string());
            b.bn.visit(&join(&p, "bn"), f);
            b.fc.visit(&join(&p, "fc"), f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMutFn<'_>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &i.to_string());
            b.bn.visit_mut(&join(&p, "bn"), f);
            b.fc.visit_mut(&join(&p, "fc"), f);
        }
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for b in &mut self.blocks {
            b.bn.set_frozen(frozen);
            b.drop.set_frozen(frozen);
            b.fc.set_frozen(frozen);
        }
    }

    pub fn clear_cache(&mut self) {
        for b in &mut self.blocks {
            b.bn.clear_cache();
            b.fc.clear_cache();
            b.drop.clear_cache();
            if let Some(r) = &mut b.relu {
                r.clear();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use crate::trainer::cross_entropy;

    fn head_loss(head: &mut Head, x: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
        // Reseeded so every call draws the same dropout masks.
        let mut rng = stream_rng(3, Stream::Dropout, &[0]);
        let logits = head.forward(x.clone(), &mut rng);
        cross_entropy(&logits, labels).unwrap()
    }

    #[test]
    fn output_weight_gradient_matches_central_differences() {
        let spec = HeadSpec {
            hidden_widths: vec![12, 10],
            ..HeadSpec::default()
        };
        let mut rng = stream_rng(8, Stream::Init, &[]);
        let mut head = Head::new(24, &spec, &mut rng).unwrap();
        let x = Array2::from_shape_fn((2, 24), |_| rng.random_range(-3.0..3.0));
        let labels = [2, 6];

        let (_, dlogits) = head_loss(&mut head, &x, &labels);
        head.backward(&dlogits);
        let analytic = head.output_layer().weight.grad.clone();

        let h = 1e-4;
        for i in 0..analytic.len() {
            let mut at = |delta: f64, head: &mut Head| {
                head.output_layer_mut().weight.value.as_slice_mut().unwrap()[i] += delta;
            };
            at(h, &mut head);
            let (up, _) = head_loss(&mut head, &x, &labels);
            at(-2.0 * h, &mut head);
            let (down, _) = head_loss(&mut head, &x, &labels);
            at(h, &mut head);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[i];
            let scale = a.abs().max(numeric.abs());
            if scale > 1e-8 {
                assert!((a - numeric).abs() / scale < 1e-3, "entry {i}: {a} vs {numeric}");
            }
        }
        head.clear_cache();
    }
}
