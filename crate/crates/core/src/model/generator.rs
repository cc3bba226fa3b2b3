use rand::Rng;

use super::{GeneratorSpec, INIT_STD, LEAKY_SLOPE};
use crate::nn::layers::{leaky_relu, leaky_relu_backward, relu, relu_backward, BatchNormCache};
use crate::nn::{BatchNorm2d, Conv2d, ConvGeom, ConvTranspose2d, Param, Tensor};

/// U-Net over class channels. Encoder level `i` halves the resolution;
/// decoder level `j` mirrors it and receives encoder level `j`'s features
/// through a skip connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub spec: GeneratorSpec,
    down: Vec<Conv2d>,
    down_norm: Vec<Option<BatchNorm2d>>,
    up: Vec<ConvTranspose2d>,
    up_norm: Vec<Option<BatchNorm2d>>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct GeneratorCache {
    /// Input to each encoder conv.
    a: Vec<Tensor>,
    /// Encoder outputs after normalization.
    n: Vec<Tensor>,
    down_bn: Vec<Option<BatchNormCache>>,
    /// Decoder inputs before and after ReLU.
    s: Vec<Tensor>,
    r: Vec<Tensor>,
    up_bn: Vec<Option<BatchNormCache>>,
}

fn norm_forward(norm: &Option<BatchNorm2d>, z: Tensor, train: bool) -> (Tensor, Option<BatchNormCache>) {
    match norm {
        None => (z, None),
        Some(bn) if train => {
            let (y, c) = bn.forward_train(&z);
            (y, Some(c))
        }
        Some(bn) => (bn.forward_eval(&z), None),
    }
}

impl Generator {
    pub fn new(spec: GeneratorSpec, rng: &mut impl Rng) -> Self {
        let d = spec.depth;
        let bn = spec.batch_norm();
        let mut down = Vec::with_capacity(d);
        let mut down_norm = Vec::with_capacity(d);
        for i in 0..d {
            let cin = if i == 0 { spec.in_channels } else { spec.features(i - 1) };
            down.push(Conv2d::new(cin, spec.features(i), ConvGeom::DOWN2, INIT_STD, rng));
            down_norm.push((bn && i >= 1 && i + 1 < d).then(|| BatchNorm2d::new(spec.features(i), rng)));
        }
        let mut up = Vec::with_capacity(d);
        let mut up_norm = Vec::with_capacity(d);
        for j in 0..d {
            let cin = if j + 1 == d { spec.features(j) } else { 2 * spec.features(j) };
            let cout = if j == 0 { spec.out_channels } else { spec.features(j - 1) };
            up.push(ConvTranspose2d::new(cin, cout, ConvGeom::DOWN2, INIT_STD, rng));
            up_norm.push((bn && j > 0).then(|| BatchNorm2d::new(cout, rng)));
        }
        Self { spec, down, down_norm, up, up_norm }
    }

    /// Class logits `[N, 3, H, W]`. In training mode batch statistics are
    /// used; call [`Generator::commit_running_stats`] afterwards.
    pub fn forward(&self, x: &Tensor, train: bool) -> (Tensor, GeneratorCache) {
        assert_eq!(x.c, self.spec.in_channels, "generator input channels");
        assert!(
            x.h.is_multiple_of(1 << self.spec.depth) && x.w.is_multiple_of(1 << self.spec.depth),
            "generator input {}x{} not divisible by 2^{}",
            x.w,
            x.h,
            self.spec.depth
        );
        let d = self.spec.depth;
        let mut a = vec![x.clone()];
        let mut n = Vec::with_capacity(d);
        let mut down_bn = Vec::with_capacity(d);
        for i in 0..d {
            let z = self.down[i].forward(&a[i], self.down_norm[i].is_none());
            let (ni, c) = norm_forward(&self.down_norm[i], z, train);
            if i + 1 < d {
                a.push(leaky_relu(&ni, LEAKY_SLOPE));
            }
            n.push(ni);
            down_bn.push(c);
        }

        let mut s = vec![Tensor::zeros(0, 0, 0, 0); d];
        let mut r = s.clone();
        let mut up_bn = vec![None; d];
        let mut m_next: Option<Tensor> = None;
        let mut out = None;
        for j in (0..d).rev() {
            let sj = match m_next.take() {
                None => n[j].clone(),
                Some(m) => Tensor::concat_channels(&n[j], &m),
            };
            let rj = relu(&sj);
            let u = self.up[j].forward(&rj);
            if j > 0 {
                let (mj, c) = norm_forward(&self.up_norm[j], u, train);
                m_next = Some(mj);
                up_bn[j] = c;
            } else {
                out = Some(u);
            }
            s[j] = sj;
            r[j] = rj;
        }
        (out.expect("depth >= 1"), GeneratorCache { a, n, down_bn, s, r, up_bn })
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        self.forward(x, false).0
    }

    /// Folds the batch statistics of a training-mode pass into the running
    /// averages used at inference.
    pub fn commit_running_stats(&mut self, cache: &GeneratorCache) {
        let pairs = self.down_norm.iter_mut().zip(&cache.down_bn).chain(self.up_norm.iter_mut().zip(&cache.up_bn));
        for (bn, c) in pairs {
            if let (Some(bn), Some(c)) = (bn, c) {
                bn.update_running(c);
            }
        }
    }

    /// Accumulates parameter gradients for `dlogits` (gradient of the loss
    /// with respect to the returned logits).
    pub fn backward(&mut self, cache: &GeneratorCache, dlogits: &Tensor) {
        let d = self.spec.depth;
        let mut skip: Vec<Option<Tensor>> = vec![None; d];
        let mut du = dlogits.clone();
        for j in 0..d {
            let dconv = match (&mut self.up_norm[j], &cache.up_bn[j]) {
                (Some(bn), Some(c)) => bn.backward(c, &du),
                (None, _) => du,
                (Some(_), None) => panic!("backward needs a training-mode forward pass"),
            };
            self.up[j].backward_params(&cache.r[j], &dconv);
            let dr = self.up[j].backward_input(&dconv);
            let ds = relu_backward(&cache.s[j], &dr);
            if j + 1 == d {
                skip[j] = Some(ds);
                break;
            }
            let (dn, dm) = ds.split_channels(self.spec.features(j));
            skip[j] = Some(dn);
            du = dm;
        }

        let mut dn = skip[d - 1].take().expect("innermost gradient");
        for i in (0..d).rev() {
            let dz = match (&mut self.down_norm[i], &cache.down_bn[i]) {
                (Some(bn), Some(c)) => bn.backward(c, &dn),
                (None, _) => dn,
                (Some(_), None) => panic!("backward needs a training-mode forward pass"),
            };
            let with_bias = self.down_norm[i].is_none();
            self.down[i].backward_params(&cache.a[i], &dz, with_bias);
            if i == 0 {
                break;
            }
            let da = self.down[i].backward_input(cache.a[i].h, cache.a[i].w, &dz);
            let mut g = leaky_relu_backward(&cache.n[i - 1], &da, LEAKY_SLOPE);
            g.add_assign(skip[i - 1].as_ref().expect("skip gradient"));
            dn = g;
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        for c in &mut self.down {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for bn in self.down_norm.iter_mut().flatten() {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        for c in &mut self.up {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for bn in self.up_norm.iter_mut().flatten() {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Every persistent buffer (parameters and running statistics) by name.
    pub fn slots_mut(&mut self) -> Vec<(String, &mut Vec<f32>)> {
        let mut out = Vec::new();
        for (i, c) in self.down.iter_mut().enumerate() {
            out.push((format!("down.{i}.weight"), &mut c.weight.value));
            out.push((format!("down.{i}.bias"), &mut c.bias.value));
        }
        for (i, bn) in self.down_norm.iter_mut().enumerate() {
            if let Some(bn) = bn {
                out.push((format!("down.{i}.bn.gamma"), &mut bn.gamma.value));
                out.push((format!("down.{i}.bn.beta"), &mut bn.beta.value));
                out.push((format!("down.{i}.bn.running_mean"), &mut bn.running_mean));
                out.push((format!("down.{i}.bn.running_var"), &mut bn.running_var));
            }
        }
        for (j, c) in self.up.iter_mut().enumerate() {
            out.push((format!("up.{j}.weight"), &mut c.weight.value));
            out.push((format!("up.{j}.bias"), &mut c.bias.value));
        }
        for (j, bn) in self.up_norm.iter_mut().enumerate() {
            if let Some(bn) = bn {
                out.push((format!("up.{j}.bn.gamma"), &mut bn.gamma.value));
                out.push((format!("up.{j}.bn.beta"), &mut bn.beta.value));
                out.push((format!("up.{j}.bn.running_mean"), &mut bn.running_mean));
                out.push((format!("up.{j}.bn.running_var"), &mut bn.running_var));
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.clone().params_mut().iter().map(|p| p.len()).sum()
    }
}
