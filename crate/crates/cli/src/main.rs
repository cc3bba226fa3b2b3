use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ganfinder::checkpoint::Checkpoint;
use ganfinder::codec::{decode_classes, grid_from_input_raster, logits_to_raster, render_raster, GrayImage};
use ganfinder::mapgen::{build_dataset, DatasetManifest, LoadedInstance, MapGenConfig, Split};
use ganfinder::metrics::{evaluate_dataset, evaluate_raster, Source};
use ganfinder::model::Ablation;
use ganfinder::trainer::{train, TrainConfig};
use ganfinder::Error;

#[derive(Parser)]
#[command(name = "ganfinder", version, about = "Grid path finding as conditional image generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of maps with A* ground-truth paths.
    GenData(GenDataArgs),
    /// Train a generator/critic pair on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the ground truth itself) on a dataset split.
    Eval(EvalArgs),
    /// Run one input PNG through a checkpoint and post-processing.
    Infer(InferArgs),
    /// Write upscaled panels (input, ground truth, generated, post-processed).
    Render(RenderArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Rect,
    Random,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Square map side length.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long)]
    count: usize,
    /// Target blocked fraction (rect family).
    #[arg(long)]
    density: Option<f64>,
    /// Per-map density interval `lo,hi` (random family).
    #[arg(long, value_parser = parse_range)]
    density_range: Option<(f64, f64)>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Key-value settings file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    g_features: Option<usize>,
    #[arg(long)]
    d_features: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Random horizontal/vertical flips of training pairs.
    #[arg(long)]
    augment: bool,
    /// Log mean validation loss per epoch to val.csv.
    #[arg(long)]
    validate: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Substitute ground-truth rasters for model output.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value = "test")]
    split: String,
    /// Directory for report.json / report.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Post-processed PNG.
    #[arg(long)]
    out: PathBuf,
    /// Raw generated PNG (default: next to --out with a `.generated` suffix).
    #[arg(long)]
    generated: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    data: PathBuf,
    /// Instance id from the manifest, e.g. 000042.
    #[arg(long)]
    instance: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    scale: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(e.downcast_ref::<Error>(), Some(Error::Usage(_) | Error::Config(_)))
                || e.downcast_ref::<UsageError>().is_some();
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Render(a) => render_cmd(a),
    }
}

fn gen_data(a: GenDataArgs) -> anyhow::Result<()> {
    let mut cfg = match a.family {
        FamilyArg::Rect => {
            if a.density_range.is_some() {
                return Err(usage("--density-range applies to the random family; use --density with rect"));
            }
            MapGenConfig::rect(a.size, a.density.unwrap_or(0.2), a.count, a.seed)
        }
        FamilyArg::Random => {
            if a.density.is_some() {
                return Err(usage("--density applies to the rect family; use --density-range with random"));
            }
            MapGenConfig::random_shapes(a.size, a.count, a.seed)
        }
    };
    if let Some(r) = a.density_range {
        cfg.density_range = Some(r);
    }
    cfg.validate()?;
    let m = build_dataset(&cfg, &a.out)?;
    println!(
        "wrote {} instances to {} (train {}, test {}, validation {})",
        m.instances.len(),
        a.out.display(),
        m.counts.train,
        m.counts.test,
        m.counts.validation
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = TrainConfig::new(&a.data, &a.out, Ablation::Ganfinder);
    if let Some(path) = &a.config {
        cfg.apply_file(path)?;
        cfg.data = a.data.clone();
        cfg.out = a.out.clone();
    }
    if let Some(ab) = &a.ablation {
        cfg.set("ablation", ab)?;
    }
    macro_rules! set {
        ($field:ident, $key:literal) => {
            if let Some(v) = a.$field {
                cfg.set($key, &v.to_string())?;
            }
        };
    }
    set!(epochs, "epochs");
    set!(batch_size, "batch_size");
    set!(seed, "seed");
    set!(lr, "lr");
    set!(g_features, "g_features");
    set!(d_features, "d_features");
    set!(max_steps, "max_steps");
    set!(checkpoint_every, "checkpoint_every");
    if let Some(r) = &a.resume {
        cfg.resume = Some(r.clone());
    }
    if a.validate {
        cfg.validate = true;
    }
    if a.augment {
        cfg.augment = true;
    }
    if !ganfinder::mapgen::manifest_path(&cfg.data).exists() {
        bail!("no dataset manifest in {}", cfg.data.display());
    }
    let res = train(&cfg)?;
    for (epoch, sup) in res.log.epoch_sup_means() {
        println!("epoch {epoch}: mean supervised loss {sup:.5}");
    }
    println!("checkpoint: {}", res.checkpoint.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> anyhow::Result<()> {
    let split: Split = a.split.parse()?;
    let manifest = DatasetManifest::load(&a.data)?;
    let (report, default_out) = match &a.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let report = evaluate_dataset(Source::Model(&ck.bundle), &a.data, &manifest, split)?;
            let dir = path.parent().unwrap_or(Path::new(".")).join(format!("eval-{}", split.as_str()));
            (report, dir)
        }
        None => {
            let report = evaluate_dataset(Source::GroundTruth, &a.data, &manifest, split)?;
            (report, a.data.join(format!("eval-oracle-{}", split.as_str())))
        }
    };
    let out = a.out.unwrap_or(default_out);
    report.save(&out)?;
    print!("{}", report.summary());
    println!("report: {}", out.display());
    Ok(())
}

fn infer_cmd(a: InferArgs) -> anyhow::Result<()> {
    let img = GrayImage::read_png(&a.input)?;
    img.check_palette(&a.input.display().to_string())?;
    let input = decode_classes(&img);
    let grid = grid_from_input_raster(&input)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let logits = ck.bundle.infer(&[&input])?;
    let generated = logits_to_raster(&logits[0]);
    // No ground truth here: MSE is reported against the input itself.
    let e = evaluate_raster("input", &grid, &input, generated)?;
    let gen_path = a.generated.clone().unwrap_or_else(|| a.out.with_extension("generated.png"));
    render_raster(&e.generated).write_png(&gen_path)?;
    render_raster(&e.postprocessed).write_png(&a.out)?;
    println!("generated: {}", gen_path.display());
    println!("post-processed: {}", a.out.display());
    println!("gaps: {}", e.eval.gaps);
    println!("success: {}", e.eval.success);
    Ok(())
}

/// Places images side by side with a white gutter of `gap` pixels.
fn strip(panels: &[GrayImage], gap: usize) -> anyhow::Result<GrayImage> {
    let h = panels[0].height();
    let w: usize = panels.iter().map(|p| p.width()).sum::<usize>() + gap * (panels.len() - 1);
    let mut px = vec![255u8; w * h];
    let mut x0 = 0;
    for p in panels {
        for r in 0..h {
            for c in 0..p.width() {
                px[r * w + x0 + c] = p.get(r, c);
            }
        }
        x0 += p.width() + gap;
    }
    Ok(GrayImage::new(w, h, px)?)
}

fn render_cmd(a: RenderArgs) -> anyhow::Result<()> {
    if a.scale == 0 {
        return Err(usage("--scale must be at least 1"));
    }
    let manifest = DatasetManifest::load(&a.data)?;
    let record = manifest
        .instances
        .iter()
        .find(|r| r.id == a.instance)
        .ok_or_else(|| usage(format!("instance {} not in manifest", a.instance)))?;
    let inst = LoadedInstance::load(&a.data, record)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut panels = vec![("input", render_raster(&inst.input)), ("gt", render_raster(&inst.gt))];
    if let Some(path) = &a.checkpoint {
        let ck = Checkpoint::load(path)?;
        let logits = ck.bundle.infer(&[&inst.input])?;
        let e = evaluate_raster(&inst.id, &inst.grid, &inst.gt, logits_to_raster(&logits[0]))?;
        panels.push(("generated", render_raster(&e.generated)));
        panels.push(("postprocessed", render_raster(&e.postprocessed)));
        println!("gaps {} success {} mse {:.4}", e.eval.gaps, e.eval.success, e.eval.mse);
    }
    let mut scaled = Vec::new();
    for (name, img) in &panels {
        let big = img.upscale(a.scale);
        let path = a.out.join(format!("{}_{name}.png", inst.id));
        big.write_png(&path)?;
        println!("{}", path.display());
        scaled.push(big);
    }
    let path = a.out.join(format!("{}_panels.png", inst.id));
    strip(&scaled, a.scale)?.write_png(&path)?;
    println!("{}", path.display());
    Ok(())
}
