use ndarray::{s, Array2, Array3, Array4, ArrayD, ArrayView3, Axis};
use rand::Rng;
use rayon::prelude::*;

use super::{join, kaiming_uniform, EntryMut, Layer, Param, TensorKind, VisitFn, VisitMutFn};

/// 2-D convolution without bias, square kernel, symmetric zero padding.
pub struct Conv2d {
    pub weight: Param,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    frozen: bool,
    input: Option<Array4<f64>>,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::new(kaiming_uniform(
                &[out_channels, in_channels, kernel, kernel],
                fan_in,
                rng,
            )),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            frozen: false,
            input: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn out_len(&self, n: usize) -> usize {
        (n + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.padding == 0
    }

    fn weight_matrix(&self) -> Array2<f64> {
        let k = self.in_channels * self.kernel * self.kernel;
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_channels, k))
            .expect("conv weight shape")
            .to_owned()
    }

    /// Unfolds one sample into a `(C*k*k, OH*OW)` patch matrix.
    fn im2col(&self, x: ArrayView3<f64>) -> Array2<f64> {
        let (c, h, w) = x.dim();
        let (oh, ow) = (self.out_len(h), self.out_len(w));
        let k = self.kernel;
        let mut cols = Array2::<f64>::zeros((c * k * k, oh * ow));
        let p = self.padding as isize;
        let st = self.stride as isize;
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ch * k + ky) * k + kx;
                    let mut dst = cols.row_mut(row);
                    let dst = dst.as_slice_mut().expect("contiguous row");
                    for oy in 0..oh {
                        let iy = oy as isize * st + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = ox as isize * st + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * ow + ox] = x[[ch, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f64>, h: usize, w: usize) -> Array3<f64> {
        let c = self.in_channels;
        let (oh, ow) = (self.out_len(h), self.out_len(w));
        let k = self.kernel;
        let mut x = Array3::<f64>::zeros((c, h, w));
        let p = self.padding as isize;
        let st = self.stride as isize;
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ch * k + ky) * k + kx;
                    let src = cols.row(row);
                    for oy in 0..oh {
                        let iy = oy as isize * st + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = ox as isize * st + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                x[[ch, iy as usize, ix as usize]] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// Input as a `(C, OH*OW)` matrix for pointwise kernels.
    fn pointwise_input(&self, x: ArrayView3<f64>) -> Array2<f64> {
        let sub = x.slice(s![.., ..;self.stride, ..;self.stride]);
        let (c, oh, ow) = sub.dim();
        sub.as_standard_layout()
            .into_owned()
            .into_shape_with_order((c, oh * ow))
            .expect("pointwise reshape")
    }

    fn forward_sample(&self, w: &Array2<f64>, x: ArrayView3<f64>) -> Array3<f64> {
        let (_, h, wd) = x.dim();
        let (oh, ow) = (self.out_len(h), self.out_len(wd));
        let cols = if self.is_pointwise() {
            self.pointwise_input(x)
        } else {
            self.im2col(x)
        };
        w.dot(&cols)
            .into_shape_with_order((self.out_channels, oh, ow))
            .expect("conv output reshape")
    }

    fn run(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, wd) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channel mismatch");
        let w = self.weight_matrix();
        let outs: Vec<Array3<f64>> = (0..n)
            .into_par_iter()
            .map(|i| self.forward_sample(&w, x.index_axis(Axis(0), i)))
            .collect();
        let mut y = Array4::zeros((n, self.out_channels, self.out_len(h), self.out_len(wd)));
        for (mut dst, o) in y.axis_iter_mut(Axis(0)).zip(outs) {
            dst.assign(&o);
        }
        y
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: Array4<f64>) -> Array4<f64> {
        let y = self.run(&x);
        self.input = Some(x);
        y
    }

    fn infer(&self, x: &Array4<f64>) -> Array4<f64> {
        self.run(x)
    }

    fn backward(&mut self, grad: Array4<f64>) -> Array4<f64> {
        let x = self.input.take().expect("conv backward without forward");
        let (n, _, h, wd) = x.dim();
        let (_, oc, oh, ow) = grad.dim();
        let w = self.weight_matrix();
        let want_dw = !self.frozen;
        let this = &*self;
        let per_sample: Vec<(Option<Array2<f64>>, Array3<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let g = grad
                    .index_axis(Axis(0), i)
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((oc, oh * ow))
                    .expect("grad reshape");
                let xi = x.index_axis(Axis(0), i);
                let dcols = w.t().dot(&g);
                if this.is_pointwise() {
                    let dw = want_dw.then(|| g.dot(&this.pointwise_input(xi).t()));
                    let mut dx = Array3::<f64>::zeros((this.in_channels, h, wd));
                    let dsub = dcols
                        .into_shape_with_order((this.in_channels, oh, ow))
                        .expect("pointwise grad reshape");
                    dx.slice_mut(s![.., ..;this.stride, ..;this.stride]).assign(&dsub);
                    (dw, dx)
                } else {
                    let dw = want_dw.then(|| g.dot(&this.im2col(xi).t()));
                    (dw, this.col2im(&dcols, h, wd))
                }
            })
            .collect();

        let mut dx = Array4::zeros(x.raw_dim());
        let mut dw_total = Array2::<f64>::zeros(w.raw_dim());
        for (i, (dw, dxi)) in per_sample.into_iter().enumerate() {
            if let Some(dw) = dw {
                dw_total += &dw;
            }
            dx.index_axis_mut(Axis(0), i).assign(&dxi);
        }
        if want_dw {
            let dw: ArrayD<f64> = dw_total
                .into_shape_with_order(self.weight.value.shape())
                .expect("dw reshape")
                .into_dyn();
            self.weight.grad += &dw;
        }
        dx
    }

    fn visit(&self, prefix: &str, f: &mut VisitFn<'_>) {
        f(&join(prefix, "weight"), TensorKind::Param, &self.weight.value);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMutFn<'_>) {
        f(&join(prefix, "weight"), EntryMut::Param(&mut self.weight));
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    fn clear_cache(&mut self) {
        self.input = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use ndarray::Array4;

    /// Direct 7-loop convolution.
    fn naive(x: &Array4<f64>, w: &ArrayD<f64>, stride: usize, pad: usize) -> Array4<f64> {
        let (n, c, h, wd) = x.dim();
        let (oc, k) = (w.shape()[0], w.shape()[2]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        Array4::from_shape_fn((n, oc, oh, ow), |(b, o, y, xx)| {
            let mut acc = 0.0;
            for ch in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        let ix = (xx * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            acc += x[[b, ch, iy as usize, ix as usize]] * w[[o, ch, ky, kx]];
                        }
                    }
                }
            }
            acc
        })
    }

    fn input(n: usize, c: usize, h: usize, w: usize) -> Array4<f64> {
        Array4::from_shape_fn((n, c, h, w), |(a, b, y, x)| {
            ((a * 7 + b * 5 + y * 3 + x) % 11) as f64 / 11.0 - 0.4
        })
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = stream_rng(0, Stream::Init, &[]);
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (1, 2, 0), (7, 2, 3)] {
            let conv = Conv2d::new(3, 4, k, s, p, &mut rng);
            let x = input(2, 3, 9, 10);
            let got = conv.infer(&x);
            let want = naive(&x, &conv.weight.value, s, p);
            assert_eq!(got.dim(), want.dim());
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = stream_rng(1, Stream::Init, &[]);
        for (k, s, p) in [(3, 2, 1), (1, 2, 0)] {
            let mut conv = Conv2d::new(2, 3, k, s, p, &mut rng);
            let x = input(2, 2, 5, 6);
            // loss = sum(y * r) for a fixed r
            let y = conv.forward(x.clone());
            let r = Array4::from_shape_fn(y.raw_dim(), |(a, b, c, d)| {
                ((a + 2 * b + 3 * c + d) % 5) as f64 - 2.0
            });
            let dx = conv.backward(r.clone());
            let loss = |c: &Conv2d, x: &Array4<f64>| (c.infer(x) * &r).sum();
            let h = 1e-6;
            for idx in [[0usize, 0, 0, 0], [1, 1, 3, 2], [0, 1, 4, 5]] {
                let mut xp = x.clone();
                xp[idx] += h;
                let mut xm = x.clone();
                xm[idx] -= h;
                let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h);
                assert!((fd - dx[idx]).abs() < 1e-6, "dx {idx:?}: {fd} vs {}", dx[idx]);
            }
            for flat in [0usize, 5, conv.weight.value.len() - 1] {
                let mut cp = conv_like(&conv);
                cp.weight.value.as_slice_mut().unwrap()[flat] += h;
                let lp = loss(&cp, &x);
                cp.weight.value.as_slice_mut().unwrap()[flat] -= 2.0 * h;
                let lm = loss(&cp, &x);
                let fd = (lp - lm) / (2.0 * h);
                let an = conv.weight.grad.as_slice().unwrap()[flat];
                assert!((fd - an).abs() < 1e-6, "dw[{flat}]: {fd} vs {an}");
            }
        }
    }

    fn conv_like(c: &Conv2d) -> Conv2d {
        Conv2d {
            weight: c.weight.clone(),
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            kernel: c.kernel,
            stride: c.stride,
            padding: c.padding,
            frozen: false,
            input: None,
        }
    }

    #[test]
    fn frozen_conv_accumulates_no_weight_grad() {
        let mut rng = stream_rng(2, Stream::Init, &[]);
        let mut conv = Conv2d::new(2, 2, 3, 1, 1, &mut rng);
        conv.set_frozen(true);
        let y = conv.forward(input(1, 2, 4, 4));
        let dx = conv.backward(Array4::ones(y.raw_dim()));
        assert!(conv.weight.grad.iter().all(|&g| g == 0.0));
        assert!(dx.iter().any(|&g| g != 0.0));
    }
}
