//! MSE / gaps / success metrics and the dataset evaluation harness.

use std::fmt::Write as _;
use std::fs;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::astar::reachable_within;
use crate::codec::{logits_to_raster, render_raster, GrayImage};
use crate::error::{Error, Result};
use crate::grid::{label_components, Cell, ClassRaster, Grid, Label};
use crate::mapgen::{load_split, DatasetManifest, Family, LoadedInstance, Split};
use crate::model::ModelBundle;
use crate::postproc::{fill_gaps, transfer_obstacles};
use crate::trainer::write_csv;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

const INFER_BATCH: usize = 64;

/// Mean squared difference of intensities normalized to [0, 1].
pub fn mse(generated: &GrayImage, gt: &GrayImage) -> Result<f64> {
    if (generated.width(), generated.height()) != (gt.width(), gt.height()) {
        return Err(Error::Usage(format!(
            "image sizes differ: {}x{} vs {}x{}",
            generated.width(),
            generated.height(),
            gt.width(),
            gt.height()
        )));
    }
    let sum: f64 = generated
        .pixels()
        .iter()
        .zip(gt.pixels())
        .map(|(&a, &b)| {
            let d = (a as f64 - b as f64) / 255.0;
            d * d
        })
        .sum();
    Ok(sum / generated.pixels().len().max(1) as f64)
}

/// 8-connected components of `PATH ∪ {start, goal}`, minus one.
pub fn count_gaps(raster: &ClassRaster, start: Cell, goal: Cell) -> usize {
    let w = raster.width();
    let mut mask = raster.mask_of(Label::Path);
    mask[start.row * w + start.col] = true;
    mask[goal.row * w + goal.col] = true;
    let labels = label_components(&mask, w, raster.height());
    let n = labels.iter().flatten().max().map_or(0, |&m| m + 1);
    n.saturating_sub(1)
}

/// Whether `goal` is reachable from `start` through PATH cells only, under the
/// grid's traversal rules (no corner cutting).
pub fn success(postprocessed: &ClassRaster, grid: &Grid, start: Cell, goal: Cell) -> bool {
    let allowed = postprocessed.mask_of(Label::Path);
    reachable_within(grid.occupancy(), &allowed, start, goal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEval {
    pub id: String,
    pub mse: f64,
    pub gaps: usize,
    pub success: bool,
    /// PATH pixels in the raw generated raster.
    pub generated_path_pixels: usize,
    /// PATH pixels after post-processing.
    pub postprocessed_path_pixels: usize,
}

/// Per-instance evaluation plus the intermediate rasters.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub eval: InstanceEval,
    pub generated: ClassRaster,
    pub transferred: ClassRaster,
    pub postprocessed: ClassRaster,
}

/// Runs the post-processing pipeline on one generated raster and scores it.
pub fn evaluate_raster(id: &str, grid: &Grid, gt: &ClassRaster, generated: ClassRaster) -> Result<Evaluated> {
    let mse = mse(&render_raster(&generated), &render_raster(gt))?;
    let transferred = transfer_obstacles(grid, &generated);
    let gaps = count_gaps(&transferred, grid.start(), grid.goal());
    let postprocessed = fill_gaps(grid, &transferred, grid.start(), grid.goal());
    let ok = success(&postprocessed, grid, grid.start(), grid.goal());
    Ok(Evaluated {
        eval: InstanceEval {
            id: id.to_string(),
            mse,
            gaps,
            success: ok,
            generated_path_pixels: generated.count(Label::Path),
            postprocessed_path_pixels: postprocessed.count(Label::Path),
        },
        generated,
        transferred,
        postprocessed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub count: usize,
    pub mean_mse: f64,
    pub mean_gaps: f64,
    /// Percent of instances with `success`.
    pub success_rate: f64,
}

impl Aggregates {
    pub fn from_instances(list: &[InstanceEval]) -> Self {
        let n = list.len();
        let denom = n.max(1) as f64;
        Self {
            count: n,
            mean_mse: list.iter().map(|e| e.mse).sum::<f64>() / denom,
            mean_gaps: list.iter().map(|e| e.gaps as f64).sum::<f64>() / denom,
            success_rate: 100.0 * list.iter().filter(|e| e.success).count() as f64 / denom,
        }
    }
}

/// Where generated rasters come from.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    Model(&'a ModelBundle),
    /// Ground-truth rasters stand in for model output (self-test).
    GroundTruth,
}

impl Source<'_> {
    pub fn name(&self) -> String {
        match self {
            Source::Model(b) => {
                if b.discriminator.spec.conditional_full_image {
                    "pix2pix-baseline".into()
                } else {
                    "ganfinder".into()
                }
            }
            Source::GroundTruth => "ground-truth".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Dataset family description, e.g. `rect 20% 16x16`.
    pub family: String,
    pub split: Split,
    pub source: String,
    pub aggregates: Aggregates,
    pub instances: Vec<InstanceEval>,
}

pub fn family_label(manifest: &DatasetManifest) -> String {
    let c = &manifest.config;
    match c.family {
        Family::Rect => format!("rect {:.0}% {}x{}", 100.0 * c.target_density.unwrap_or(0.0), c.width, c.height),
        Family::RandomShapes => {
            let (lo, hi) = c.density_range.unwrap_or((0.0, 0.0));
            format!("random-shapes {lo}-{hi} {}x{}", c.width, c.height)
        }
    }
}

impl EvalReport {
    pub fn new(family: String, split: Split, source: String, instances: Vec<InstanceEval>) -> Self {
        Self { family, split, source, aggregates: Aggregates::from_instances(&instances), instances }
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn save(&self, dir: &FsPath) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(REPORT_JSON);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        write_csv(&dir.join(REPORT_CSV), &self.instances)
    }

    pub fn load(dir: &FsPath) -> Result<Self> {
        let path = dir.join(REPORT_JSON);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
    }

    /// Table-style summary: one row with MSE, gaps and success rate.
    pub fn summary(&self) -> String {
        let a = &self.aggregates;
        let mut s = String::new();
        let _ = writeln!(s, "Data: {} ({} split, {} instances)", self.family, self.split.as_str(), a.count);
        let _ = writeln!(s, "{:<20} {:>10} {:>10} {:>10}", "Model", "MSE", "Gaps", "Success,%");
        let _ = writeln!(s, "{:<20} {:>10.4} {:>10.4} {:>10.1}", self.source, a.mean_mse, a.mean_gaps, a.success_rate);
        s
    }
}

/// Evaluates already-loaded instances.
pub fn evaluate_instances(source: Source<'_>, instances: &[LoadedInstance]) -> Result<Vec<Evaluated>> {
    let mut out = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(INFER_BATCH) {
        let generated: Vec<ClassRaster> = match source {
            Source::GroundTruth => chunk.iter().map(|i| i.gt.clone()).collect(),
            Source::Model(bundle) => {
                let inputs: Vec<&ClassRaster> = chunk.iter().map(|i| &i.input).collect();
                bundle.infer(&inputs)?.iter().map(logits_to_raster).collect()
            }
        };
        for (inst, g) in chunk.iter().zip(generated) {
            out.push(evaluate_raster(&inst.id, &inst.grid, &inst.gt, g)?);
        }
    }
    Ok(out)
}

/// Loads one split of a dataset directory and evaluates it.
pub fn evaluate_dataset(
    source: Source<'_>,
    dir: &FsPath,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<EvalReport> {
    let instances = load_split(dir, manifest, split)?;
    if instances.is_empty() {
        return Err(Error::Usage(format!("split {} is empty", split.as_str())));
    }
    let evals = evaluate_instances(source, &instances)?;
    Ok(EvalReport::new(family_label(manifest), split, source.name(), evals.into_iter().map(|e| e.eval).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Occupancy;
    use crate::mapgen::{build_dataset, MapGenConfig};

    fn img(w: usize, h: usize, v: u8) -> GrayImage {
        GrayImage::new(w, h, vec![v; w * h]).unwrap()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&img(4, 4, 255), &img(4, 4, 255)).unwrap(), 0.0);
        assert_eq!(mse(&img(4, 4, 255), &img(4, 4, 0)).unwrap(), 1.0);
        let mut px = vec![255u8; 16];
        px[5] = 0;
        let one = GrayImage::new(4, 4, px).unwrap();
        assert_eq!(mse(&one, &img(4, 4, 255)).unwrap(), 1.0 / 16.0);
        assert_eq!(mse(&img(4, 4, 255), &one).unwrap(), mse(&one, &img(4, 4, 255)).unwrap());
        assert!(mse(&img(4, 4, 0), &img(3, 4, 0)).is_err());
    }

    fn raster(rows: &[&str]) -> (Grid, ClassRaster) {
        let (h, w) = (rows.len(), rows[0].len());
        let mut occ = Occupancy::new(w, h).unwrap();
        let mut labels = Vec::new();
        let (mut s, mut g) = (None, None);
        for (r, row) in rows.iter().enumerate() {
            for (c, ch) in row.chars().enumerate() {
                let cell = Cell::new(r, c);
                labels.push(match ch {
                    '#' => {
                        occ.set_blocked(cell, true);
                        Label::Blocked
                    }
                    '*' => Label::Path,
                    'S' => {
                        s = Some(cell);
                        Label::Path
                    }
                    'G' => {
                        g = Some(cell);
                        Label::Path
                    }
                    's' => {
                        s = Some(cell);
                        Label::Free
                    }
                    'g' => {
                        g = Some(cell);
                        Label::Free
                    }
                    _ => Label::Free,
                });
            }
        }
        let grid = Grid::new(occ, s.unwrap(), g.unwrap()).unwrap();
        (grid, ClassRaster::from_labels(w, h, labels).unwrap())
    }

    #[test]
    fn gaps_examples() {
        let (g, r) = raster(&["S***G"]);
        assert_eq!(count_gaps(&r, g.start(), g.goal()), 0);
        // Nothing generated: start and goal are two singletons.
        let (g, r) = raster(&["s...g"]);
        assert_eq!(count_gaps(&r, g.start(), g.goal()), 1);
        let (g, r) = raster(&["S*.**.*G"]);
        assert_eq!(count_gaps(&r, g.start(), g.goal()), 2);
        // Diagonal touch is one component.
        let (g, r) = raster(&["S...", ".*..", "..*G"]);
        assert_eq!(count_gaps(&r, g.start(), g.goal()), 0);
    }

    #[test]
    fn success_examples() {
        let (g, r) = raster(&["S***G"]);
        assert!(success(&r, &g, g.start(), g.goal()));
        let (g, r) = raster(&["S*.*G"]);
        assert!(!success(&r, &g, g.start(), g.goal()));
        // Corridor squeezing diagonally between two blocked cells.
        let (g, r) = raster(&["S#.", "#*.", "..G"]);
        assert_eq!(count_gaps(&r, g.start(), g.goal()), 0);
        assert!(!success(&r, &g, g.start(), g.goal()));
    }

    #[test]
    fn success_implies_no_gaps_after_postprocessing() {
        let (g, r) = raster(&["S*..*G", "......"]);
        let e = evaluate_raster("x", &g, &r, r.clone()).unwrap();
        assert_eq!(e.eval.gaps, 1);
        assert!(e.eval.success);
        assert_eq!(count_gaps(&e.postprocessed, g.start(), g.goal()), 0);
    }

    #[test]
    fn ground_truth_self_evaluation_is_perfect() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = build_dataset(&MapGenConfig::rect20(16, 20, 11), dir.path()).unwrap();
        for split in [Split::Train, Split::Test, Split::Validation] {
            let rep = evaluate_dataset(Source::GroundTruth, dir.path(), &manifest, split).unwrap();
            assert_eq!(rep.aggregates.success_rate, 100.0);
            assert_eq!(rep.aggregates.mean_gaps, 0.0);
            assert_eq!(rep.aggregates.mean_mse, 0.0);
        }
    }

    #[test]
    fn report_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let instances = vec![
            InstanceEval {
                id: "000001".into(),
                mse: 0.1 + 0.2,
                gaps: 3,
                success: false,
                generated_path_pixels: 4,
                postprocessed_path_pixels: 9,
            },
            InstanceEval {
                id: "000002".into(),
                mse: 1.0 / 3.0,
                gaps: 0,
                success: true,
                generated_path_pixels: 7,
                postprocessed_path_pixels: 7,
            },
        ];
        let rep = EvalReport::new("rect 20% 16x16".into(), Split::Test, "ganfinder".into(), instances);
        assert_eq!(rep.aggregates.success_rate, 50.0);
        assert_eq!(rep.aggregates.mean_gaps, 1.5);
        rep.save(dir.path()).unwrap();
        assert_eq!(EvalReport::load(dir.path()).unwrap(), rep);
        let csv = fs::read_to_string(dir.path().join(REPORT_CSV)).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(rep.summary().contains("Success,%"));
    }
}
