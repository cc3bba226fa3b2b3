use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{col2im, gemm, im2col, ConvGeom};
use super::tensor::Tensor;

/// Trainable parameter with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    pub fn normal(len: usize, mean: f32, std: f32, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(mean, std).expect("valid std");
        Self::new((0..len).map(|_| dist.sample(rng)).collect())
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// 2-D convolution, weight laid out `[out, in * k * k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub geom: ConvGeom,
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, geom: ConvGeom, init_std: f32, rng: &mut impl Rng) -> Self {
        let kk = geom.kernel * geom.kernel;
        Self {
            in_ch,
            out_ch,
            geom,
            weight: Param::normal(out_ch * in_ch * kk, 0.0, init_std, rng),
            bias: Param::new(vec![0.0; out_ch]),
        }
    }

    fn patch_rows(&self) -> usize {
        self.in_ch * self.geom.kernel * self.geom.kernel
    }

    pub fn forward(&self, x: &Tensor, with_bias: bool) -> Tensor {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let (ho, wo) = (self.geom.out_size(x.h), self.geom.out_size(x.w));
        let hw = ho * wo;
        let mut y = Tensor::zeros(x.n, self.out_ch, ho, wo);
        let mut cols = vec![0.0; self.patch_rows() * hw];
        for i in 0..x.n {
            im2col(x.sample(i), x.c, x.h, x.w, self.geom, &mut cols);
            let out = y.sample_mut(i);
            gemm(self.out_ch, self.patch_rows(), hw, 1.0, &self.weight.value, false, &cols, false, 0.0, out);
            if with_bias {
                for (o, b) in out.chunks_mut(hw).zip(&self.bias.value) {
                    o.iter_mut().for_each(|v| *v += b);
                }
            }
        }
        y
    }

    /// Accumulates weight (and optionally bias) gradients for input `x`.
    pub fn backward_params(&mut self, x: &Tensor, dy: &Tensor, with_bias: bool) {
        let hw = dy.h * dy.w;
        let rows = self.patch_rows();
        let mut cols = vec![0.0; rows * hw];
        for i in 0..x.n {
            let g = dy.sample(i);
            im2col(x.sample(i), x.c, x.h, x.w, self.geom, &mut cols);
            gemm(self.out_ch, hw, rows, 1.0, g, false, &cols, true, 1.0, &mut self.weight.grad);
            if with_bias {
                for (b, o) in self.bias.grad.iter_mut().zip(g.chunks(hw)) {
                    *b += o.iter().sum::<f32>();
                }
            }
        }
    }

    /// Gradient with respect to an input of spatial size `h x w`.
    pub fn backward_input(&self, h: usize, w: usize, dy: &Tensor) -> Tensor {
        let hw = dy.h * dy.w;
        let rows = self.patch_rows();
        let mut cols = vec![0.0; rows * hw];
        let mut dx = Tensor::zeros(dy.n, self.in_ch, h, w);
        for i in 0..dy.n {
            gemm(rows, self.out_ch, hw, 1.0, &self.weight.value, true, dy.sample(i), false, 0.0, &mut cols);
            col2im(&cols, self.in_ch, h, w, self.geom, dx.sample_mut(i));
        }
        dx
    }
}

/// Transposed convolution, weight laid out `[in, out * k * k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub geom: ConvGeom,
    pub weight: Param,
    pub bias: Param,
}

impl ConvTranspose2d {
    pub fn new(in_ch: usize, out_ch: usize, geom: ConvGeom, init_std: f32, rng: &mut impl Rng) -> Self {
        let kk = geom.kernel * geom.kernel;
        Self {
            in_ch,
            out_ch,
            geom,
            weight: Param::normal(in_ch * out_ch * kk, 0.0, init_std, rng),
            bias: Param::new(vec![0.0; out_ch]),
        }
    }

    fn patch_rows(&self) -> usize {
        self.out_ch * self.geom.kernel * self.geom.kernel
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_ch, "transposed conv input channels");
        let (ho, wo) = (self.geom.transposed_out_size(x.h), self.geom.transposed_out_size(x.w));
        let hw_in = x.h * x.w;
        let rows = self.patch_rows();
        let mut y = Tensor::zeros(x.n, self.out_ch, ho, wo);
        let mut cols = vec![0.0; rows * hw_in];
        for i in 0..x.n {
            gemm(rows, self.in_ch, hw_in, 1.0, &self.weight.value, true, x.sample(i), false, 0.0, &mut cols);
            let out = y.sample_mut(i);
            col2im(&cols, self.out_ch, ho, wo, self.geom, out);
            for (o, b) in out.chunks_mut(ho * wo).zip(&self.bias.value) {
                o.iter_mut().for_each(|v| *v += b);
            }
        }
        y
    }

    pub fn backward_params(&mut self, x: &Tensor, dy: &Tensor) {
        let hw_in = x.h * x.w;
        let rows = self.patch_rows();
        let mut cols = vec![0.0; rows * hw_in];
        for i in 0..x.n {
            let g = dy.sample(i);
            for (b, o) in self.bias.grad.iter_mut().zip(g.chunks(dy.h * dy.w)) {
                *b += o.iter().sum::<f32>();
            }
            im2col(g, dy.c, dy.h, dy.w, self.geom, &mut cols);
            gemm(self.in_ch, hw_in, rows, 1.0, x.sample(i), false, &cols, true, 1.0, &mut self.weight.grad);
        }
    }

    pub fn backward_input(&self, dy: &Tensor) -> Tensor {
        let (h, w) = (self.geom.out_size(dy.h), self.geom.out_size(dy.w));
        let rows = self.patch_rows();
        let mut cols = vec![0.0; rows * h * w];
        let mut dx = Tensor::zeros(dy.n, self.in_ch, h, w);
        for i in 0..dy.n {
            im2col(dy.sample(i), dy.c, dy.h, dy.w, self.geom, &mut cols);
            gemm(self.in_ch, rows, h * w, 1.0, &self.weight.value, false, &cols, false, 0.0, dx.sample_mut(i));
        }
        dx
    }
}

/// Batch normalization over (N, H, W) per channel, with running statistics
/// for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
    mean: Vec<f32>,
    unbiased_var: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            channels,
            gamma: Param::normal(channels, 1.0, 0.02, rng),
            beta: Param::new(vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Normalizes with batch statistics. Running statistics are updated
    /// separately through [`BatchNorm2d::update_running`].
    pub fn forward_train(&self, x: &Tensor) -> (Tensor, BatchNormCache) {
        let hw = x.h * x.w;
        let m = (x.n * hw) as f32;
        let mut y = x.zeros_like();
        let mut xhat = x.zeros_like();
        let mut inv_std = vec![0.0; self.channels];
        let mut means = vec![0.0; self.channels];
        let mut vars = vec![0.0; self.channels];
        for ch in 0..self.channels {
            let plane = |i: usize| &x.sample(i)[ch * hw..(ch + 1) * hw];
            let mean = (0..x.n).map(|i| plane(i).iter().map(|&v| v as f64).sum::<f64>()).sum::<f64>() / m as f64;
            let var = (0..x.n).map(|i| plane(i).iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>()).sum::<f64>()
                / m as f64;
            let istd = 1.0 / (var as f32 + self.eps).sqrt();
            inv_std[ch] = istd;
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            for i in 0..x.n {
                let src = &x.sample(i)[ch * hw..(ch + 1) * hw];
                let xh = &mut xhat.sample_mut(i)[ch * hw..(ch + 1) * hw];
                for (d, &s) in xh.iter_mut().zip(src) {
                    *d = (s - mean as f32) * istd;
                }
                let dst = &mut y.sample_mut(i)[ch * hw..(ch + 1) * hw];
                for (d, &s) in dst.iter_mut().zip(&xhat.sample(i)[ch * hw..(ch + 1) * hw]) {
                    *d = g * s + b;
                }
            }
            means[ch] = mean as f32;
            vars[ch] = if m > 1.0 { var as f32 * m / (m - 1.0) } else { var as f32 };
        }
        (y, BatchNormCache { xhat, inv_std, mean: means, unbiased_var: vars })
    }

    pub fn update_running(&mut self, cache: &BatchNormCache) {
        let mo = self.momentum;
        for ch in 0..self.channels {
            self.running_mean[ch] = (1.0 - mo) * self.running_mean[ch] + mo * cache.mean[ch];
            self.running_var[ch] = (1.0 - mo) * self.running_var[ch] + mo * cache.unbiased_var[ch];
        }
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        let hw = x.h * x.w;
        let mut y = x.clone();
        for i in 0..x.n {
            for (ch, plane) in y.sample_mut(i).chunks_mut(hw).enumerate() {
                let istd = 1.0 / (self.running_var[ch] + self.eps).sqrt();
                let (g, b, mu) = (self.gamma.value[ch], self.beta.value[ch], self.running_mean[ch]);
                plane.iter_mut().for_each(|v| *v = g * (*v - mu) * istd + b);
            }
        }
        y
    }

    pub fn backward(&mut self, cache: &BatchNormCache, dy: &Tensor) -> Tensor {
        let hw = dy.h * dy.w;
        let m = (dy.n * hw) as f32;
        let mut dx = dy.zeros_like();
        for ch in 0..self.channels {
            let (mut sum_dy, mut sum_dy_xhat) = (0.0f64, 0.0f64);
            for i in 0..dy.n {
                let g = &dy.sample(i)[ch * hw..(ch + 1) * hw];
                let xh = &cache.xhat.sample(i)[ch * hw..(ch + 1) * hw];
                for (&a, &b) in g.iter().zip(xh) {
                    sum_dy += a as f64;
                    sum_dy_xhat += (a * b) as f64;
                }
            }
            self.beta.grad[ch] += sum_dy as f32;
            self.gamma.grad[ch] += sum_dy_xhat as f32;
            let k = self.gamma.value[ch] * cache.inv_std[ch] / m;
            let (sdy, sdx) = (sum_dy as f32, sum_dy_xhat as f32);
            for i in 0..dy.n {
                let g = &dy.sample(i)[ch * hw..(ch + 1) * hw];
                let xh = &cache.xhat.sample(i)[ch * hw..(ch + 1) * hw];
                let out = &mut dx.sample_mut(i)[ch * hw..(ch + 1) * hw];
                for ((o, &a), &b) in out.iter_mut().zip(g).zip(xh) {
                    *o = k * (m * a - sdy - b * sdx);
                }
            }
        }
        dx
    }
}

/// Fully connected layer on flattened samples, weight `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, init_std: f32, rng: &mut impl Rng) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::normal(in_features * out_features, 0.0, init_std, rng),
            bias: Param::new(vec![0.0; out_features]),
        }
    }

    /// `x` is `[n, in_features]` (any NCHW tensor with matching sample length).
    pub fn forward(&self, x: &Tensor, with_bias: bool) -> Vec<f32> {
        assert_eq!(x.sample_len(), self.in_features);
        let mut y = vec![0.0; x.n * self.out_features];
        gemm(x.n, self.in_features, self.out_features, 1.0, &x.data, false, &self.weight.value, true, 0.0, &mut y);
        if with_bias {
            for row in y.chunks_mut(self.out_features) {
                row.iter_mut().zip(&self.bias.value).for_each(|(v, b)| *v += b);
            }
        }
        y
    }

    pub fn backward_params(&mut self, x: &Tensor, dy: &[f32], with_bias: bool) {
        gemm(self.out_features, x.n, self.in_features, 1.0, dy, true, &x.data, false, 1.0, &mut self.weight.grad);
        if with_bias {
            for row in dy.chunks(self.out_features) {
                self.bias.grad.iter_mut().zip(row).for_each(|(b, g)| *b += g);
            }
        }
    }

    /// Input gradient shaped like `like`.
    pub fn backward_input(&self, like: &Tensor, dy: &[f32]) -> Tensor {
        let mut dx = like.zeros_like();
        gemm(like.n, self.out_features, self.in_features, 1.0, dy, false, &self.weight.value, false, 0.0, &mut dx.data);
        dx
    }
}

pub fn leaky_relu(x: &Tensor, slope: f32) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

/// Gradient through leaky ReLU given the pre-activation input.
pub fn leaky_relu_backward(pre: &Tensor, dy: &Tensor, slope: f32) -> Tensor {
    let mut dx = dy.clone();
    for (d, &p) in dx.data.iter_mut().zip(&pre.data) {
        if p <= 0.0 {
            *d *= slope;
        }
    }
    dx
}

pub fn relu(x: &Tensor) -> Tensor {
    leaky_relu(x, 0.0)
}

pub fn relu_backward(pre: &Tensor, dy: &Tensor) -> Tensor {
    leaky_relu_backward(pre, dy, 0.0)
}
