use ndarray::{Array1, Array2, Array3, Array4, ArrayD, Axis, Ix1};

use super::{join, EntryMut, Layer, Param, TensorKind, VisitFn, VisitMutFn};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

struct BnCache {
    xhat: Array3<f64>,
    inv_std: Array1<f64>,
    batch_stats: bool,
}

/// Batch normalization over axis 1 of an `(N, C, L)` view. Shared by the
/// spatial (`L = H*W`) and flat (`L = 1`) variants.
pub struct BatchNorm {
    pub weight: Param,
    pub bias: Param,
    pub running_mean: ArrayD<f64>,
    pub running_var: ArrayD<f64>,
    frozen: bool,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            weight: Param::new(ArrayD::ones(vec![channels])),
            bias: Param::new(ArrayD::zeros(vec![channels])),
            running_mean: ArrayD::zeros(vec![channels]),
            running_var: ArrayD::ones(vec![channels]),
            frozen: false,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.len()
    }

    fn vec(a: &ArrayD<f64>) -> ndarray::ArrayView1<'_, f64> {
        a.view().into_dimensionality::<Ix1>().expect("1-d bn tensor")
    }

    fn apply(&self, x: &Array3<f64>, mean: &Array1<f64>, inv_std: &Array1<f64>) -> (Array3<f64>, Array3<f64>) {
        let gamma = Self::vec(&self.weight.value);
        let beta = Self::vec(&self.bias.value);
        let mut xhat = x.clone();
        let mut y = x.clone();
        for c in 0..x.dim().1 {
            let (m, s, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
            let mut xc = xhat.index_axis_mut(Axis(1), c);
            xc.mapv_inplace(|v| (v - m) * s);
            let mut yc = y.index_axis_mut(Axis(1), c);
            yc.zip_mut_with(&xc, |yv, &xv| *yv = xv * g + b);
        }
        (xhat, y)
    }

    fn running_inv_std(&self) -> Array1<f64> {
        Self::vec(&self.running_var).mapv(|v| 1.0 / (v + BN_EPS).sqrt())
    }

    pub fn infer3(&self, x: &Array3<f64>) -> Array3<f64> {
        let mean = Self::vec(&self.running_mean).to_owned();
        self.apply(x, &mean, &self.running_inv_std()).1
    }

    pub fn forward3(&mut self, x: &Array3<f64>) -> Array3<f64> {
        if self.frozen {
            let mean = Self::vec(&self.running_mean).to_owned();
            let inv_std = self.running_inv_std();
            let (xhat, y) = self.apply(x, &mean, &inv_std);
            self.cache = Some(BnCache {
                xhat,
                inv_std,
                batch_stats: false,
            });
            return y;
        }
        let (n, c, l) = x.dim();
        let count = (n * l) as f64;
        let mut mean = Array1::<f64>::zeros(c);
        let mut var = Array1::<f64>::zeros(c);
        for ch in 0..c {
            let xc = x.index_axis(Axis(1), ch);
            let m = xc.sum() / count;
            mean[ch] = m;
            var[ch] = xc.fold(0.0, |acc, &v| acc + (v - m) * (v - m)) / count;
        }
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let (xhat, y) = self.apply(x, &mean, &inv_std);

        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        self.running_mean
            .zip_mut_with(&mean.into_dyn(), |r, &m| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m);
        self.running_var.zip_mut_with(&var.into_dyn(), |r, &v| {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias
        });
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            batch_stats: true,
        });
        y
    }

    pub fn backward3(&mut self, grad: &Array3<f64>) -> Array3<f64> {
        let cache = self.cache.take().expect("batch-norm backward without forward");
        let gamma = Self::vec(&self.weight.value).to_owned();
        let (n, c, l) = grad.dim();
        let count = (n * l) as f64;
        let mut dx = Array3::<f64>::zeros(grad.raw_dim());
        let mut dgamma = Array1::<f64>::zeros(c);
        let mut dbeta = Array1::<f64>::zeros(c);
        for ch in 0..c {
            let g = grad.index_axis(Axis(1), ch);
            let xh = cache.xhat.index_axis(Axis(1), ch);
            let sum_g = g.sum();
            let sum_gx = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
            dgamma[ch] = sum_gx;
            dbeta[ch] = sum_g;
            let scale = gamma[ch] * cache.inv_std[ch];
            let mut d = dx.index_axis_mut(Axis(1), ch);
            if cache.batch_stats {
                let mg = sum_g / count;
                let mgx = sum_gx / count;
                ndarray::Zip::from(&mut d)
                    .and(&g)
                    .and(&xh)
                    .for_each(|d, &gv, &xv| *d = scale * (gv - mg - xv * mgx));
            } else {
                ndarray::Zip::from(&mut d).and(&g).for_each(|d, &gv| *d = scale * gv);
            }
        }
        if !self.frozen {
            self.weight.grad += &dgamma.into_dyn();
            self.bias.grad += &dbeta.into_dyn();
        }
        dx
    }

    pub fn visit(&self, prefix: &str, f: &mut VisitFn<'_>) {
        f(&join(prefix, "weight"), TensorKind::Param, &self.weight.value);
        f(&join(prefix, "bias"), TensorKind::Param, &self.bias.value);
        f(&join(prefix, "running_mean"), TensorKind::Buffer, &self.running_mean);
        f(&join(prefix, "running_var"), TensorKind::Buffer, &self.running_var);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMutFn<'_>) {
        f(&join(prefix, "weight"), EntryMut::Param(&mut self.weight));
        f(&join(prefix, "bias"), EntryMut::Param(&mut self.bias));
        f(&join(prefix, "running_mean"), EntryMut::Buffer(&mut self.running_mean));
        f(&join(prefix, "running_var"), EntryMut::Buffer(&mut self.running_var));
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    // Flat (N, F) helpers for the classifier head.

    pub fn forward2(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let y = self.forward3(&as3(x));
        from3(y)
    }

    pub fn infer2(&self, x: &Array2<f64>) -> Array2<f64> {
        from3(self.infer3(&as3(x)))
    }

    pub fn backward2(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        from3(self.backward3(&as3(grad)))
    }
}

fn as3(x: &Array2<f64>) -> Array3<f64> {
    x.clone().insert_axis(Axis(2))
}

fn from3(x: Array3<f64>) -> Array2<f64> {
    x.index_axis_move(Axis(2), 0)
}

/// Spatial batch normalization, `(N, C, H, W)`.
pub struct BatchNorm2d(pub BatchNorm);

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self(BatchNorm::new(channels))
    }

    fn flatten(x: &Array4<f64>) -> Array3<f64> {
        let (n, c, h, w) = x.dim();
        x.as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, c, h * w))
            .expect("bn flatten")
    }

    fn unflatten(y: Array3<f64>, dims: (usize, usize, usize, usize)) -> Array4<f64> {
        y.into_shape_with_order(dims).expect("bn unflatten")
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: Array4<f64>) -> Array4<f64> {
        let dims = x.dim();
        Self::unflatten(self.0.forward3(&Self::flatten(&x)), dims)
    }

    fn infer(&self, x: &Array4<f64>) -> Array4<f64> {
        Self::unflatten(self.0.infer3(&Self::flatten(x)), x.dim())
    }

    fn backward(&mut self, grad: Array4<f64>) -> Array4<f64> {
        let dims = grad.dim();
        Self::unflatten(self.0.backward3(&Self::flatten(&grad)), dims)
    }

    fn visit(&self, prefix: &str, f: &mut VisitFn<'_>) {
        self.0.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMutFn<'_>) {
        self.0.visit_mut(prefix, f);
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.0.set_frozen(frozen);
    }

    fn clear_cache(&mut self) {
        self.0.clear_cache();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Array2<f64> {
        Array2::from_shape_fn((4, 3), |(i, j)| ((i * 3 + j) as f64).sin() * 2.0 + j as f64)
    }

    #[test]
    fn training_output_is_standardized() {
        let mut bn = BatchNorm::new(3);
        let y = bn.forward2(&sample());
        for c in 0..3 {
            let col = y.column(c);
            let mean = col.sum() / 4.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn constant_channel_stays_finite() {
        let mut bn = BatchNorm::new(2);
        let x = Array2::from_shape_vec((3, 2), vec![5.0, 1.0, 5.0, 2.0, 5.0, 3.0]).unwrap();
        assert!(bn.forward2(&x).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn running_statistics_update_unless_frozen() {
        let mut bn = BatchNorm::new(3);
        bn.forward2(&sample());
        assert!(bn.running_mean.iter().any(|&m| m != 0.0));

        let mut frozen = BatchNorm::new(3);
        frozen.set_frozen(true);
        frozen.forward2(&sample());
        assert!(frozen.running_mean.iter().all(|&m| m == 0.0));
        assert!(frozen.running_var.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = sample();
        let r = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - 1.5) * (j as f64 + 0.5));
        let loss = |bn: &mut BatchNorm, x: &Array2<f64>| (bn.forward2(x) * &r).sum();

        let mut bn = BatchNorm::new(3);
        bn.weight.value = ArrayD::from_shape_vec(vec![3], vec![1.3, 0.7, -0.4]).unwrap();
        bn.forward2(&x);
        let dx = bn.backward2(&r);
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let mut b = BatchNorm::new(3);
                b.weight.value = bn.weight.value.clone();
                let fd = (loss(&mut b, &xp) - loss(&mut b, &xm)) / (2.0 * h);
                assert!((fd - dx[[i, j]]).abs() < 1e-5, "{fd} vs {}", dx[[i, j]]);
            }
        }
        let fd_gamma0 = {
            let mut b = BatchNorm::new(3);
            b.weight.value = bn.weight.value.clone();
            b.weight.value[[0]] += h;
            let lp = loss(&mut b, &x);
            b.weight.value[[0]] -= 2.0 * h;
            let lm = loss(&mut b, &x);
            (lp - lm) / (2.0 * h)
        };
        assert!((fd_gamma0 - bn.weight.grad[[0]]).abs() < 1e-6);
    }
}
