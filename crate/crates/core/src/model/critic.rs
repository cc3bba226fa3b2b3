use rand::Rng;

use super::{DiscriminatorSpec, INIT_STD, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::nn::layers::{leaky_relu, leaky_relu_backward};
use crate::nn::{Conv2d, ConvGeom, Linear, Param, Tensor};

/// Anything that scores samples and exposes the gradient of its score with
/// respect to the input.
pub trait Critic {
    fn scores(&self, x: &Tensor) -> Vec<f32>;
    /// Per-sample gradient of the score with respect to that sample.
    fn input_gradients(&self, x: &Tensor) -> Tensor;
}

/// Strided conv stack with LeakyReLU and a linear head producing one
/// unbounded score per sample. No normalization, so the score is piecewise
/// linear in its input.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    convs: Vec<Conv2d>,
    head: Linear,
}

#[derive(Debug, Clone)]
pub struct CriticCache {
    /// `acts[l]` is the input of conv `l`; the last entry feeds the head.
    acts: Vec<Tensor>,
    /// Conv outputs before the activation.
    pre: Vec<Tensor>,
}

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::with_capacity(spec.depth);
        for l in 0..spec.depth {
            let cin = if l == 0 { spec.input_channels() } else { spec.features(l - 1) };
            convs.push(Conv2d::new(cin, spec.features(l), ConvGeom::DOWN2, INIT_STD, rng));
        }
        let flat = spec.features(spec.depth - 1) * (spec.width >> spec.depth) * (spec.height >> spec.depth);
        let head = Linear::new(flat, 1, INIT_STD, rng);
        Self { spec, convs, head }
    }

    /// Checked entry point: rejects inputs whose channel count does not match
    /// the critic's mode.
    pub fn score(&self, x: &Tensor) -> Result<Vec<f32>> {
        if x.c != self.spec.input_channels() {
            return Err(Error::Usage(format!(
                "critic expects {} input channel(s), got {}{}",
                self.spec.input_channels(),
                x.c,
                if self.spec.conditional_full_image {
                    ""
                } else {
                    " (full-image input requires the baseline ablation)"
                }
            )));
        }
        if (x.w, x.h) != (self.spec.width, self.spec.height) {
            return Err(Error::Usage(format!(
                "critic expects {}x{} input, got {}x{}",
                self.spec.width, self.spec.height, x.w, x.h
            )));
        }
        Ok(self.forward(x).0)
    }

    pub fn forward(&self, x: &Tensor) -> (Vec<f32>, CriticCache) {
        assert_eq!(x.c, self.spec.input_channels(), "critic input channels");
        let mut acts = vec![x.clone()];
        let mut pre = Vec::with_capacity(self.convs.len());
        for (l, conv) in self.convs.iter().enumerate() {
            let z = conv.forward(&acts[l], true);
            acts.push(leaky_relu(&z, LEAKY_SLOPE));
            pre.push(z);
        }
        let scores = self.head.forward(acts.last().expect("non-empty"), true);
        (scores, CriticCache { acts, pre })
    }

    /// Gradient of `sum_b dscore_b * score_b` at each conv's pre-activation,
    /// using the slopes recorded in `pre` and the activations in `acts`.
    fn signals(
        &self,
        acts: &[Tensor],
        pre: &[Tensor],
        dscore: &[f32],
        want_input: bool,
    ) -> (Vec<Tensor>, Option<Tensor>) {
        let depth = self.convs.len();
        let mut dz = vec![Tensor::zeros(0, 0, 0, 0); depth];
        let mut da = self.head.backward_input(&acts[depth], dscore);
        for l in (0..depth).rev() {
            dz[l] = leaky_relu_backward(&pre[l], &da, LEAKY_SLOPE);
            if l > 0 || want_input {
                da = self.convs[l].backward_input(acts[l].h, acts[l].w, &dz[l]);
            }
        }
        let dx = want_input.then_some(da);
        (dz, dx)
    }

    fn accumulate(&mut self, acts: &[Tensor], dz: &[Tensor], dscore: &[f32], with_bias: bool) {
        let depth = self.convs.len();
        self.head.backward_params(&acts[depth], dscore, with_bias);
        for (l, conv) in self.convs.iter_mut().enumerate() {
            conv.backward_params(&acts[l], &dz[l], with_bias);
        }
    }

    /// Accumulates parameter gradients of `sum_b dscore_b * score_b`.
    pub fn backward(&mut self, cache: &CriticCache, dscore: &[f32]) {
        let (dz, _) = self.signals(&cache.acts, &cache.pre, dscore, false);
        self.accumulate(&cache.acts, &dz, dscore, true);
    }

    /// Gradient of `sum_b dscore_b * score_b` with respect to the input.
    pub fn input_gradient(&self, cache: &CriticCache, dscore: &[f32]) -> Tensor {
        self.signals(&cache.acts, &cache.pre, dscore, true).1.expect("input gradient requested")
    }

    /// Accumulates `weight * d(penalty)/d(params)`.
    ///
    /// The critic is piecewise linear, so its input gradient `g` is the
    /// transpose of a linear map whose activation slopes are fixed by the
    /// primal pass. With `v = g` held constant, `d|g|/dθ = d(g·v)/dθ / |g|`,
    /// and `g·v` is the output of the bias-free "tangent" network fed with
    /// `v`. Backpropagating through that network gives the exact parameter
    /// gradient without second-order differentiation.
    pub fn accumulate_penalty_grads(&mut self, penalty: &Penalty, weight: f32) {
        let b = penalty.norms.len();
        if b == 0 || weight == 0.0 {
            return;
        }
        let (_, primal) = self.forward(&penalty.interpolated);
        let coeff: Vec<f32> = penalty
            .norms
            .iter()
            .map(|&nrm| if nrm > 0.0 { (weight as f64 * 2.0 * (nrm - 1.0) / nrm / b as f64) as f32 } else { 0.0 })
            .collect();

        let mut tangent = vec![penalty.grads.clone()];
        for (l, conv) in self.convs.iter().enumerate() {
            let y = conv.forward(&tangent[l], false);
            tangent.push(leaky_relu_backward(&primal.pre[l], &y, LEAKY_SLOPE));
        }
        let (dz, _) = self.signals(&tangent, &primal.pre, &coeff, false);
        self.accumulate(&tangent, &dz, &coeff, false);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn slots_mut(&mut self) -> Vec<(String, &mut Vec<f32>)> {
        let mut out = Vec::new();
        for (l, c) in self.convs.iter_mut().enumerate() {
            out.push((format!("conv.{l}.weight"), &mut c.weight.value));
            out.push((format!("conv.{l}.bias"), &mut c.bias.value));
        }
        out.push(("head.weight".into(), &mut self.head.weight.value));
        out.push(("head.bias".into(), &mut self.head.bias.value));
        out
    }
}

impl Critic for Discriminator {
    fn scores(&self, x: &Tensor) -> Vec<f32> {
        self.forward(x).0
    }

    fn input_gradients(&self, x: &Tensor) -> Tensor {
        let (_, cache) = self.forward(x);
        self.input_gradient(&cache, &vec![1.0; x.n])
    }
}

/// Gradient-penalty evaluation at the interpolated points.
#[derive(Debug, Clone)]
pub struct Penalty {
    /// `mean_b (|g_b| - 1)^2`, unweighted.
    pub value: f32,
    pub interpolated: Tensor,
    pub grads: Tensor,
    pub norms: Vec<f64>,
}

/// `mean_b (|∇D(x̂_b)| - 1)^2` at `x̂_b = eps_b * real_b + (1 - eps_b) * fake_b`.
pub fn gradient_penalty<C: Critic + ?Sized>(critic: &C, real: &Tensor, fake: &Tensor, eps: &[f32]) -> Penalty {
    assert_eq!(real.shape(), fake.shape(), "penalty inputs must share a shape");
    assert_eq!(eps.len(), real.n, "one interpolation weight per sample");
    let mut interpolated = real.zeros_like();
    for (b, &e) in eps.iter().enumerate() {
        let dst = interpolated.sample_mut(b);
        for ((d, &r), &f) in dst.iter_mut().zip(real.sample(b)).zip(fake.sample(b)) {
            *d = e * r + (1.0 - e) * f;
        }
    }
    let grads = critic.input_gradients(&interpolated);
    let norms: Vec<f64> =
        (0..grads.n).map(|b| grads.sample(b).iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt()).collect();
    let value = norms.iter().map(|n| (n - 1.0) * (n - 1.0)).sum::<f64>() / norms.len().max(1) as f64;
    Penalty { value: value as f32, interpolated, grads, norms }
}
