use super::{AdvMode, LossConfig, SupMode};
use crate::codec::{label_intensity, ClassLogits};
use crate::error::{Error, Result};
use crate::grid::{ClassRaster, Label};
use crate::nn::Tensor;

/// Per-class rendered intensity in [0, 1] (FREE, BLOCKED, PATH).
fn class_intensities() -> [f32; 3] {
    [label_intensity(Label::Free), label_intensity(Label::Blocked), label_intensity(Label::Path)]
}

/// Softmax over the channel axis.
pub fn softmax_channels(logits: &Tensor) -> Tensor {
    let hw = logits.h * logits.w;
    let mut out = logits.zeros_like();
    for b in 0..logits.n {
        let src = logits.sample(b);
        let dst = out.sample_mut(b);
        for p in 0..hw {
            let m = (0..logits.c).map(|k| src[k * hw + p]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0;
            for k in 0..logits.c {
                let e = (src[k * hw + p] - m).exp();
                dst[k * hw + p] = e;
                sum += e;
            }
            for k in 0..logits.c {
                dst[k * hw + p] /= sum;
            }
        }
    }
    out
}

/// Pulls a gradient on softmax probabilities back to the logits.
pub fn softmax_backward(probs: &Tensor, dprobs: &Tensor) -> Tensor {
    let hw = probs.h * probs.w;
    let mut out = probs.zeros_like();
    for b in 0..probs.n {
        let (p, dp) = (probs.sample(b), dprobs.sample(b));
        let dst = out.sample_mut(b);
        for i in 0..hw {
            let dot: f32 = (0..probs.c).map(|k| p[k * hw + i] * dp[k * hw + i]).sum();
            for k in 0..probs.c {
                dst[k * hw + i] = p[k * hw + i] * (dp[k * hw + i] - dot);
            }
        }
    }
    out
}

/// Loss value with its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct SupLoss {
    pub value: f32,
    pub grad: Tensor,
}

/// Supervised term over a batch of logits `[N, 3, H, W]` against per-pixel
/// targets laid out sample-major, row-major.
///
/// Cross-entropy: mean over pixels of `-ln softmax(z)[target]`.
/// L1: mean over pixels of `|sum_k p_k v_k - v_target|` with `v` the
/// normalized rendered intensity of each class.
pub fn supervised_loss(logits: &Tensor, targets: &[Label], mode: SupMode) -> SupLoss {
    assert_eq!(logits.c, 3, "three class channels");
    let hw = logits.h * logits.w;
    assert_eq!(targets.len(), logits.n * hw, "one target per pixel");
    let count = targets.len() as f64;
    let probs = softmax_channels(logits);
    let mut grad = logits.zeros_like();
    let mut total = 0.0f64;
    let v = class_intensities();
    for b in 0..logits.n {
        let (z, p) = (logits.sample(b), probs.sample(b));
        let tgt = &targets[b * hw..(b + 1) * hw];
        match mode {
            SupMode::CrossEntropy => {
                let g = grad.sample_mut(b);
                for (i, &t) in tgt.iter().enumerate() {
                    let zs = [z[i], z[hw + i], z[2 * hw + i]];
                    let m = zs[0].max(zs[1]).max(zs[2]) as f64;
                    let lse = m + zs.iter().map(|&x| (x as f64 - m).exp()).sum::<f64>().ln();
                    total += lse - zs[t.index()] as f64;
                    for k in 0..3 {
                        let onehot = if k == t.index() { 1.0 } else { 0.0 };
                        g[k * hw + i] = ((p[k * hw + i] - onehot) as f64 / count) as f32;
                    }
                }
            }
            SupMode::L1 => {
                let mut dprobs = vec![0.0f32; 3 * hw];
                for (i, &t) in tgt.iter().enumerate() {
                    let intensity: f64 = (0..3).map(|k| p[k * hw + i] as f64 * v[k] as f64).sum();
                    let diff = intensity - v[t.index()] as f64;
                    total += diff.abs();
                    let s = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    for k in 0..3 {
                        dprobs[k * hw + i] = (s * v[k] as f64 / count) as f32;
                    }
                }
                let pb = Tensor::from_vec(1, 3, logits.h, logits.w, p.to_vec());
                let db = Tensor::from_vec(1, 3, logits.h, logits.w, dprobs);
                grad.sample_mut(b).copy_from_slice(&softmax_backward(&pb, &db).data);
            }
        }
    }
    SupLoss { value: (total / count) as f32, grad }
}

/// Single-instance form of [`supervised_loss`].
pub fn supervised_loss_raster(logits: &ClassLogits, target: &ClassRaster, mode: SupMode) -> Result<f32> {
    if !target.same_dims(logits.width, logits.height) {
        return Err(Error::Usage("logits and target dimensions differ".into()));
    }
    let t = Tensor::from_vec(1, 3, logits.height, logits.width, logits.data.clone());
    Ok(supervised_loss(&t, target.labels(), mode).value)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mean(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64).sum::<f64>() / v.len().max(1) as f64
}

/// Generator-side adversarial term and its gradient per fake score.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvLoss {
    pub value: f32,
    pub grad: Vec<f32>,
}

/// WGAN: `-mean(fake)`. Vanilla (non-saturating): `mean(-ln sigmoid(fake))`.
pub fn adversarial_generator_loss(fake: &[f32], mode: AdvMode) -> AdvLoss {
    let n = fake.len().max(1) as f64;
    match mode {
        AdvMode::WganGp => AdvLoss { value: -mean(fake) as f32, grad: vec![(-1.0 / n) as f32; fake.len()] },
        AdvMode::Vanilla => AdvLoss {
            value: (fake.iter().map(|&f| softplus(-(f as f64))).sum::<f64>() / n) as f32,
            grad: fake.iter().map(|&f| (-sigmoid(-(f as f64)) / n) as f32).collect(),
        },
    }
}

/// Critic objective and its gradient per score. The penalty's own parameter
/// gradient is applied separately.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscLoss {
    pub value: f32,
    pub d_real: Vec<f32>,
    pub d_fake: Vec<f32>,
}

/// WGAN: `mean(fake) - mean(real) + lambda_gp * gp`.
/// Vanilla: `mean(-ln sigmoid(real)) + mean(-ln(1 - sigmoid(fake)))`; `gp`
/// is ignored.
pub fn discriminator_loss(real: &[f32], fake: &[f32], gp: f32, cfg: &LossConfig) -> DiscLoss {
    let (nr, nf) = (real.len().max(1) as f64, fake.len().max(1) as f64);
    match cfg.adv_mode {
        AdvMode::WganGp => DiscLoss {
            value: (mean(fake) - mean(real) + cfg.lambda_gp as f64 * gp as f64) as f32,
            d_real: vec![(-1.0 / nr) as f32; real.len()],
            d_fake: vec![(1.0 / nf) as f32; fake.len()],
        },
        AdvMode::Vanilla => {
            let lr: f64 = real.iter().map(|&r| softplus(-(r as f64))).sum::<f64>() / nr;
            let lf: f64 = fake.iter().map(|&f| softplus(f as f64)).sum::<f64>() / nf;
            DiscLoss {
                value: (lr + lf) as f32,
                d_real: real.iter().map(|&r| (-sigmoid(-(r as f64)) / nr) as f32).collect(),
                d_fake: fake.iter().map(|&f| (sigmoid(f as f64) / nf) as f32).collect(),
            }
        }
    }
}

/// `lambda_ce * supervised + adversarial`.
pub fn total_generator_loss(supervised: f32, adversarial: f32, cfg: &LossConfig) -> f32 {
    (cfg.lambda_ce as f64 * supervised as f64 + adversarial as f64) as f32
}

/// Critic input built from class probabilities (or one-hot ground truth):
/// the PATH channel alone, or the condition followed by all three classes in
/// conditional mode.
pub fn critic_input(classes: &Tensor, condition: &Tensor, conditional: bool) -> Tensor {
    if conditional {
        Tensor::concat_channels(condition, classes)
    } else {
        classes.split_channels(2).1
    }
}

/// Maps the critic's input gradient back to generator logits.
pub fn logits_grad_from_critic(dinput: &Tensor, probs: &Tensor, conditional: bool) -> Tensor {
    let dprobs = if conditional {
        dinput.split_channels(dinput.c - 3).1
    } else {
        let zeros = Tensor::zeros(dinput.n, 2, dinput.h, dinput.w);
        Tensor::concat_channels(&zeros, dinput)
    };
    softmax_backward(probs, &dprobs)
}
