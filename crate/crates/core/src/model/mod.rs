//! Generator and critic networks, their losses, and the presets that select
//! between the path-mask critic and the conditional baseline.

mod critic;
mod generator;
mod loss;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{to_model_input, ClassLogits};
use crate::error::{Error, Result};
use crate::grid::ClassRaster;
use crate::nn::Tensor;

pub use critic::{gradient_penalty, Critic, CriticCache, Discriminator, Penalty};
pub use generator::{Generator, GeneratorCache};
pub use loss::{
    adversarial_generator_loss, critic_input, discriminator_loss, logits_grad_from_critic, softmax_backward,
    softmax_channels, supervised_loss, supervised_loss_raster, total_generator_loss, AdvLoss, DiscLoss, SupLoss,
};

pub const LEAKY_SLOPE: f32 = 0.2;
pub const INIT_STD: f32 = 0.02;
const DEFAULT_FEATURES: usize = 64;
const MAX_FEATURES: usize = 512;

/// Largest `d` with `2^d <= min(W, H)`, minus one (bottleneck of 2x2 for
/// square power-of-two maps).
pub fn default_depth(width: usize, height: usize) -> usize {
    let m = width.min(height).max(1);
    m.ilog2().saturating_sub(1) as usize
}

fn check_dims(width: usize, height: usize, depth: usize, what: &str) -> Result<()> {
    if depth < 2 {
        return Err(Error::Config(format!("{what} depth must be at least 2, got {depth}")));
    }
    let f = 1usize << depth;
    if !width.is_multiple_of(f) || !height.is_multiple_of(f) {
        return Err(Error::Config(format!("{what}: {width}x{height} is not divisible by 2^{depth}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub width: usize,
    pub height: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub depth: usize,
    pub base_features: usize,
    pub max_features: usize,
    /// "batch" or "none".
    pub norm: String,
    pub down_activation: String,
    pub up_activation: String,
}

impl GeneratorSpec {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            in_channels: 3,
            out_channels: 3,
            depth: default_depth(width, height),
            base_features: DEFAULT_FEATURES,
            max_features: MAX_FEATURES,
            norm: "batch".into(),
            down_activation: format!("leaky_relu({LEAKY_SLOPE})"),
            up_activation: "relu".into(),
        }
    }

    /// Channels produced by encoder level `i`.
    pub fn features(&self, i: usize) -> usize {
        (self.base_features << i).min(self.max_features)
    }

    pub fn batch_norm(&self) -> bool {
        self.norm == "batch"
    }

    pub fn validate(&self) -> Result<()> {
        check_dims(self.width, self.height, self.depth, "generator")?;
        if self.in_channels != 3 || self.out_channels != 3 {
            return Err(Error::Config("generator maps 3 one-hot channels to 3 class logits".into()));
        }
        if self.base_features == 0 || self.max_features < self.base_features {
            return Err(Error::Config("generator feature widths must be positive".into()));
        }
        if self.norm != "batch" && self.norm != "none" {
            return Err(Error::Config(format!("unsupported generator norm {:?}", self.norm)));
        }
        if self.down_activation != format!("leaky_relu({LEAKY_SLOPE})") || self.up_activation != "relu" {
            return Err(Error::Config("unsupported generator activations".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub width: usize,
    pub height: usize,
    /// Baseline mode: the critic sees the one-hot input next to the generated
    /// class probabilities instead of the path mask alone.
    pub conditional_full_image: bool,
    pub depth: usize,
    pub base_features: usize,
    pub max_features: usize,
    pub activation: String,
}

impl DiscriminatorSpec {
    pub fn new(width: usize, height: usize, conditional_full_image: bool) -> Self {
        Self {
            width,
            height,
            conditional_full_image,
            depth: default_depth(width, height),
            base_features: DEFAULT_FEATURES,
            max_features: MAX_FEATURES,
            activation: format!("leaky_relu({LEAKY_SLOPE})"),
        }
    }

    pub fn input_channels(&self) -> usize {
        if self.conditional_full_image {
            6
        } else {
            1
        }
    }

    pub fn features(&self, l: usize) -> usize {
        (self.base_features << l).min(self.max_features)
    }

    pub fn validate(&self) -> Result<()> {
        check_dims(self.width, self.height, self.depth, "discriminator")?;
        if self.base_features == 0 || self.max_features < self.base_features {
            return Err(Error::Config("discriminator feature widths must be positive".into()));
        }
        if self.activation != format!("leaky_relu({LEAKY_SLOPE})") {
            return Err(Error::Config("unsupported discriminator activation".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvMode {
    WganGp,
    Vanilla,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupMode {
    CrossEntropy,
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the supervised term (cross-entropy, or L1 in the baseline).
    pub lambda_ce: f32,
    pub lambda_gp: f32,
    pub adv_mode: AdvMode,
    pub sup_mode: SupMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_ce: 100.0, lambda_gp: 10.0, adv_mode: AdvMode::WganGp, sup_mode: SupMode::CrossEntropy }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ce >= 0.0 && self.lambda_gp >= 0.0)
            || !self.lambda_ce.is_finite()
            || !self.lambda_gp.is_finite()
        {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Ganfinder,
    Pix2pixBaseline,
}

impl Ablation {
    pub fn loss_config(self) -> LossConfig {
        match self {
            Ablation::Ganfinder => LossConfig::default(),
            Ablation::Pix2pixBaseline => {
                LossConfig { lambda_ce: 100.0, lambda_gp: 0.0, adv_mode: AdvMode::Vanilla, sup_mode: SupMode::L1 }
            }
        }
    }

    pub fn conditional_critic(self) -> bool {
        matches!(self, Ablation::Pix2pixBaseline)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Ganfinder => "ganfinder",
            Ablation::Pix2pixBaseline => "pix2pix-baseline",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ganfinder" => Ok(Ablation::Ganfinder),
            "pix2pix-baseline" | "pix2pix" => Ok(Ablation::Pix2pixBaseline),
            _ => Err(Error::Usage(format!("unknown ablation {s:?} (expected ganfinder or pix2pix-baseline)"))),
        }
    }
}

/// Both networks plus the hyperparameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub loss: LossConfig,
}

impl ModelBundle {
    pub fn new(g: GeneratorSpec, d: DiscriminatorSpec, loss: LossConfig, seed: u64) -> Result<Self> {
        g.validate()?;
        d.validate()?;
        loss.validate()?;
        if (g.width, g.height) != (d.width, d.height) {
            return Err(Error::Config("generator and discriminator disagree on map size".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(seed, &[crate::seed::INIT]));
        let generator = Generator::new(g, &mut rng);
        let discriminator = Discriminator::new(d, &mut rng);
        Ok(Self { generator, discriminator, loss })
    }

    pub fn preset(ablation: Ablation, width: usize, height: usize, seed: u64) -> Result<Self> {
        Self::new(
            GeneratorSpec::new(width, height),
            DiscriminatorSpec::new(width, height, ablation.conditional_critic()),
            ablation.loss_config(),
            seed,
        )
    }

    /// Inference-mode logits for a batch of input rasters.
    pub fn infer(&self, inputs: &[&ClassRaster]) -> Result<Vec<ClassLogits>> {
        let spec = &self.generator.spec;
        for r in inputs {
            if !r.same_dims(spec.width, spec.height) {
                return Err(Error::Usage(format!(
                    "input is {}x{} but the model expects {}x{}",
                    r.width(),
                    r.height(),
                    spec.width,
                    spec.height
                )));
            }
        }
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let x = onehot_batch(inputs);
        let y = self.generator.forward_eval(&x);
        (0..y.n).map(|i| ClassLogits::new(y.w, y.h, y.sample(i).to_vec())).collect()
    }
}

pub fn onehot_batch(rasters: &[&ClassRaster]) -> Tensor {
    let (w, h) = (rasters[0].width(), rasters[0].height());
    let samples: Vec<Vec<f32>> = rasters.iter().map(|r| to_model_input(r)).collect();
    Tensor::stack(&samples, 3, h, w)
}
