use ndarray::{Array2, ArrayD, Axis, Ix1, Ix2};
use rand::Rng;

use super::{join, kaiming_uniform, EntryMut, Param, TensorKind, VisitFn, VisitMutFn};

/// Fully connected layer, `y = x W^T + b` with `W: (out, in)`.
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    frozen: bool,
    input: Option<Array2<f64>>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(kaiming_uniform(&[out_features, in_features], in_features, rng)),
            bias: Param::new(ArrayD::zeros(vec![out_features])),
            frozen: false,
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn w(&self) -> ndarray::ArrayView2<'_, f64> {
        self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight")
    }

    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        let b = self.bias.value.view().into_dimensionality::<Ix1>().expect("1-d bias");
        x.dot(&self.w().t()) + b
    }

    pub fn forward(&mut self, x: Array2<f64>) -> Array2<f64> {
        let y = self.infer(&x);
        self.input = Some(x);
        y
    }

    pub fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let x = self.input.take().expect("linear backward without forward");
        if !self.frozen {
            let dw = grad.t().dot(&x);
            self.weight.grad += &dw.into_dyn();
            self.bias.grad += &grad.sum_axis(Axis(0)).into_dyn();
        }
        grad.dot(&self.w())
    }

    pub fn visit(&self, prefix: &str, f: &mut VisitFn<'_>) {
        f(&join(prefix, "weight"), TensorKind::Param, &self.weight.value);
        f(&join(prefix, "bias"), TensorKind::Param, &self.bias.value);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMutFn<'_>) {
        f(&join(prefix, "weight"), EntryMut::Param(&mut self.weight));
        f(&join(prefix, "bias"), EntryMut::Param(&mut self.bias));
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}
