use ndarray::{Array, Array2, Array4, Dimension, Zip};
use rand::Rng;

use super::{Layer, VisitFn, VisitMutFn};

/// Rectified linear unit for any activation rank.
#[derive(Default)]
pub struct Relu<D: Dimension> {
    mask: Option<Array<bool, D>>,
}

impl<D: Dimension> Relu<D> {
    pub fn new() -> Self {
        Self { mask: None }
    }

    pub fn clear(&mut self) {
        self.mask = None;
    }

    pub fn apply(x: &Array<f64, D>) -> Array<f64, D> {
        x.mapv(|v| v.max(0.0))
    }

    pub fn forward_nd(&mut self, x: Array<f64, D>) -> Array<f64, D> {
        self.mask = Some(x.mapv(|v| v > 0.0));
        x.mapv_into(|v| v.max(0.0))
    }

    pub fn backward_nd(&mut self, mut grad: Array<f64, D>) -> Array<f64, D> {
        let mask = self.mask.take().expect("relu backward without forward");
        Zip::from(&mut grad).and(&mask).for_each(|g, &m| {
            if !m {
                *g = 0.0
            }
        });
        grad
    }
}

impl Layer for Relu<ndarray::Ix4> {
    fn forward(&mut self, x: Array4<f64>) -> Array4<f64> {
        self.forward_nd(x)
    }

    fn infer(&self, x: &Array4<f64>) -> Array4<f64> {
        Self::apply(x)
    }

    fn backward(&mut self, grad: Array4<f64>) -> Array4<f64> {
        self.backward_nd(grad)
    }

    fn visit(&self, _: &str, _: &mut VisitFn<'_>) {}

    fn visit_mut(&mut self, _: &str, _: &mut VisitMutFn<'_>) {}

    fn set_frozen(&mut self, _: bool) {}

    fn clear_cache(&mut self) {
        self.mask = None;
    }
}

/// `(N, C, H, W)` of a cached input.
type Shape4 = (usize, usize, usize, usize);

/// Max pooling with implicit `-inf` padding.
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Option<(Shape4, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    fn out_len(&self, n: usize) -> usize {
        (n + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Output plus the flat input index of each selected maximum.
    fn run(&self, x: &Array4<f64>) -> (Array4<f64>, Vec<usize>) {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = (self.out_len(h), self.out_len(w));
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut y = Array4::<f64>::zeros((n, c, oh, ow));
        let mut arg = Vec::with_capacity(n * c * oh * ow);
        let ys = y.as_slice_mut().expect("fresh array");
        let mut o = 0;
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_i = usize::MAX;
                        for ky in 0..self.kernel {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..self.kernel {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let idx = base + iy as usize * w + ix as usize;
                                if xs[idx] > best || best_i == usize::MAX {
                                    best = xs[idx];
                                    best_i = idx;
                                }
                            }
                        }
                        ys[o] = best;
                        arg.push(best_i);
                        o += 1;
                    }
                }
            }
        }
        (y, arg)
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: Array4<f64>) -> Array4<f64> {
        let (y, arg) = self.run(&x);
        self.cache = Some((x.dim(), arg));
        y
    }

    fn infer(&self, x: &Array4<f64>) -> Array4<f64> {
        self.run(x).0
    }

    fn backward(&mut self, grad: Array4<f64>) -> Array4<f64> {
        let (dims, arg) = self.cache.take().expect("maxpool backward without forward");
        let mut dx = Array4::<f64>::zeros(dims);
        let d = dx.as_slice_mut().expect("fresh array");
        let g = grad.as_standard_layout();
        for (gv, &i) in g.iter().zip(&arg) {
            d[i] += gv;
        }
        dx
    }

    fn visit(&self, _: &str, _: &mut VisitFn<'_>) {}

    fn visit_mut(&mut self, _: &str, _: &mut VisitMutFn<'_>) {}

    fn set_frozen(&mut self, _: bool) {}

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Global max pool and global average pool, concatenated as `[max, avg]`:
/// `(N, C, H, W) -> (N, 2C)`.
#[derive(Default)]
pub struct ConcatPool {
    cache: Option<(Shape4, Vec<usize>)>,
}

impl ConcatPool {
    pub fn new() -> Self {
        Self::default()
    }

    fn run(x: &Array4<f64>) -> (Array2<f64>, Vec<usize>) {
        let (n, c, h, w) = x.dim();
        let hw = h * w;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut y = Array2::<f64>::zeros((n, 2 * c));
        let mut arg = Vec::with_capacity(n * c);
        for b in 0..n {
            for ch in 0..c {
                let plane = &xs[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                let mut best_i = 0;
                for (i, &v) in plane.iter().enumerate() {
                    if v > plane[best_i] {
                        best_i = i;
                    }
                }
                y[[b, ch]] = plane[best_i];
                y[[b, c + ch]] = plane.iter().sum::<f64>() / hw as f64;
                arg.push(best_i);
            }
        }
        (y, arg)
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array2<f64> {
        let (y, arg) = Self::run(x);
        self.cache = Some((x.dim(), arg));
        y
    }

    pub fn infer(&self, x: &Array4<f64>) -> Array2<f64> {
        Self::run(x).0
    }

    pub fn backward(&mut self, grad: &Array2<f64>) -> Array4<f64> {
        let ((n, c, h, w), arg) = self.cache.take().expect("pool backward without forward");
        let hw = h * w;
        let mut dx = Array4::<f64>::zeros((n, c, h, w));
        let d = dx.as_slice_mut().expect("fresh array");
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                let avg = grad[[b, c + ch]] / hw as f64;
                for v in &mut d[base..base + hw] {
                    *v = avg;
                }
                d[base + arg[b * c + ch]] += grad[[b, ch]];
            }
        }
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Inverted dropout on `(N, F)` activations.
pub struct Dropout {
    pub p: f64,
    frozen: bool,
    mask: Option<Array2<f64>>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        Self {
            p,
            frozen: false,
            mask: None,
        }
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, x: Array2<f64>, rng: &mut R) -> Array2<f64> {
        if self.frozen || self.p == 0.0 {
            self.mask = None;
            return x;
        }
        let keep = 1.0 - self.p;
        let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let y = &x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, grad: Array2<f64>) -> Array2<f64> {
        match self.mask.take() {
            Some(m) => grad * &m,
            None => grad,
        }
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn clear_cache(&mut self) {
        self.mask = None;
    }
}
