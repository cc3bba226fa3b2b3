//! Procedural obstacle maps, start/goal placement and dataset assembly.
//!
//! Two generator families are provided. `Rect` drops rectangles of random
//! size, either axis-aligned or rotated by 45 degrees, until the blocked
//! fraction reaches a fixed target. `RandomShapes` samples a per-map target
//! from a density range and mixes rectangles, diamonds and circles.
//!
//! A dataset directory holds `manifest.json` plus `{id}_input.png` and
//! `{id}_gt.png` for each instance.

use std::fs;
use std::path::{Path as FsPath, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::astar::{astar, Cost};
use crate::codec::{decode_classes, encode_input, ground_truth_raster, render_raster, GrayImage};
use crate::error::{Error, Result};
use crate::grid::{Cell, ClassRaster, Grid, Occupancy, Path};
use crate::seed;

const PLACEMENT_ATTEMPTS: usize = 64;
const REGENERATION_ATTEMPTS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Rect,
    RandomShapes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Validation => "validation",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "validation" | "val" => Ok(Split::Validation),
            other => Err(Error::Usage(format!("unknown split `{other}` (train, test, validation)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapGenConfig {
    pub width: usize,
    pub height: usize,
    pub family: Family,
    /// Fixed blocked fraction for `Rect`.
    pub target_density: Option<f64>,
    /// Per-map density interval for `RandomShapes`.
    pub density_range: Option<(f64, f64)>,
    pub seed: u64,
    pub count: usize,
    /// Train / test / validation fractions.
    pub split_fractions: [f64; 3],
}

impl MapGenConfig {
    pub fn rect(size: usize, density: f64, count: usize, seed: u64) -> Self {
        Self {
            width: size,
            height: size,
            family: Family::Rect,
            target_density: Some(density),
            density_range: None,
            seed,
            count,
            split_fractions: [0.75, 0.15, 0.10],
        }
    }

    pub fn rect20(size: usize, count: usize, seed: u64) -> Self {
        Self::rect(size, 0.2, count, seed)
    }

    pub fn rect30(size: usize, count: usize, seed: u64) -> Self {
        Self::rect(size, 0.3, count, seed)
    }

    pub fn random_shapes(size: usize, count: usize, seed: u64) -> Self {
        Self {
            family: Family::RandomShapes,
            target_density: None,
            density_range: Some((0.05, 0.5)),
            ..Self::rect(size, 0.2, count, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width < 2 || self.height < 2 {
            return bad(format!("grid must be at least 2x2, got {}x{}", self.width, self.height));
        }
        match (self.family, self.target_density, self.density_range) {
            (Family::Rect, Some(d), None) => {
                if !(d > 0.0 && d < 1.0) {
                    return bad(format!("density must be in (0, 1), got {d}"));
                }
            }
            (Family::Rect, _, _) => return bad("rect family takes a single target density and no density range".into()),
            (Family::RandomShapes, None, Some((lo, hi))) => {
                if !(lo > 0.0 && lo <= hi && hi < 1.0) {
                    return bad(format!("density range must satisfy 0 < lo <= hi < 1, got [{lo}, {hi}]"));
                }
            }
            (Family::RandomShapes, _, _) => {
                return bad("random-shapes family takes a density range and no fixed density".into())
            }
        }
        if self.count == 0 {
            return bad("count must be positive".into());
        }
        let sum: f64 = self.split_fractions.iter().sum();
        if self.split_fractions.iter().any(|&f| f < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions must be non-negative and sum to 1, got {:?}", self.split_fractions));
        }
        Ok(())
    }

    fn rect_max_side(&self) -> (usize, usize) {
        (self.width.div_ceil(4).max(2), self.height.div_ceil(4).max(2))
    }

    fn max_radius(&self) -> usize {
        self.width.min(self.height).div_ceil(8).max(1)
    }

    /// Largest number of cells a single shape placement can block.
    pub fn max_shape_cells(&self) -> usize {
        let (mw, mh) = self.rect_max_side();
        let mut best = 0;
        for w in 2..=mw {
            for h in 2..=mh {
                best = best.max(Shape::Rect { w, h, rotated: false }.offsets().len());
                best = best.max(Shape::Rect { w, h, rotated: true }.offsets().len());
            }
        }
        if self.family == Family::RandomShapes {
            let r = self.max_radius();
            best = best.max(Shape::Diamond { radius: r }.offsets().len());
            best = best.max(Shape::Circle { radius: r }.offsets().len());
        }
        best
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { w: usize, h: usize, rotated: bool },
    Diamond { radius: usize },
    Circle { radius: usize },
}

impl Shape {
    /// Cell offsets relative to the anchor cell.
    fn offsets(self) -> Vec<(isize, isize)> {
        let mut out = Vec::new();
        match self {
            Shape::Rect { w, h, rotated: false } => {
                let (r0, c0) = (-((h / 2) as isize), -((w / 2) as isize));
                for dr in 0..h as isize {
                    for dc in 0..w as isize {
                        out.push((r0 + dr, c0 + dc));
                    }
                }
            }
            Shape::Rect { w, h, rotated: true } => {
                // Rectangle rotated by 45 degrees about the anchor cell center,
                // rasterized by cell-center inclusion: |u| < w/2, |v| < h/2 with
                // u = (dc + dr)/sqrt2, v = (dc - dr)/sqrt2.
                let reach = (w.max(h) + 1) as isize;
                let (hw, hh) = (w as f64 / 2.0, h as f64 / 2.0);
                for dr in -reach..=reach {
                    for dc in -reach..=reach {
                        let u = (dc + dr) as f64 / std::f64::consts::SQRT_2;
                        let v = (dc - dr) as f64 / std::f64::consts::SQRT_2;
                        if u.abs() < hw && v.abs() < hh {
                            out.push((dr, dc));
                        }
                    }
                }
            }
            Shape::Diamond { radius } => {
                let r = radius as isize;
                for dr in -r..=r {
                    for dc in -r..=r {
                        if dr.abs() + dc.abs() <= r {
                            out.push((dr, dc));
                        }
                    }
                }
            }
            Shape::Circle { radius } => {
                let r = radius as isize;
                for dr in -r..=r {
                    for dc in -r..=r {
                        if dr * dr + dc * dc <= r * r {
                            out.push((dr, dc));
                        }
                    }
                }
            }
        }
        out
    }
}

fn sample_rect(cfg: &MapGenConfig, rng: &mut ChaCha8Rng) -> Shape {
    let (mw, mh) = cfg.rect_max_side();
    Shape::Rect { w: rng.random_range(2..=mw), h: rng.random_range(2..=mh), rotated: rng.random_bool(0.5) }
}

fn sample_shape(cfg: &MapGenConfig, rng: &mut ChaCha8Rng) -> Shape {
    match cfg.family {
        Family::Rect => sample_rect(cfg, rng),
        Family::RandomShapes => match rng.random_range(0..3) {
            0 => sample_rect(cfg, rng),
            1 => Shape::Diamond { radius: rng.random_range(1..=cfg.max_radius()) },
            _ => Shape::Circle { radius: rng.random_range(1..=cfg.max_radius()) },
        },
    }
}

/// Obstacle map for one instance seed. Shapes are dropped (overlaps
/// allowed, clipped at the border) until the blocked fraction first meets
/// or exceeds the target.
pub fn gen_map(cfg: &MapGenConfig, instance_seed: u64) -> Result<Occupancy> {
    cfg.validate()?;
    let mut rng = seed::rng(instance_seed, &[seed::MAP]);
    let target = match (cfg.target_density, cfg.density_range) {
        (Some(d), _) => d,
        (None, Some((lo, hi))) => rng.random_range(lo..=hi),
        (None, None) => unreachable!("validated"),
    };
    let mut occ = Occupancy::new(cfg.width, cfg.height)?;
    let total = cfg.width * cfg.height;
    let needed = (target * total as f64).ceil() as usize;
    let cap = 50 * total;
    let mut blocked = 0;
    for _ in 0..cap {
        if blocked >= needed {
            return Ok(occ);
        }
        let shape = sample_shape(cfg, &mut rng);
        let anchor = Cell::new(rng.random_range(0..cfg.height), rng.random_range(0..cfg.width));
        for (dr, dc) in shape.offsets() {
            if let Some(c) = occ.offset(anchor, dr, dc) {
                if !occ.is_blocked(c) {
                    occ.set_blocked(c, true);
                    blocked += 1;
                }
            }
        }
    }
    if blocked >= needed {
        return Ok(occ);
    }
    Err(Error::Generation(format!("density {target:.3} not reached after {cap} placements (got {:.3})", occ.density())))
}

/// Width of the start and goal column bands.
pub fn border_band(width: usize) -> usize {
    width.div_ceil(10)
}

/// Samples start from the free cells of the leftmost band and goal from the
/// rightmost band until A* connects them.
pub fn place_start_goal(occ: &Occupancy, instance_seed: u64) -> Result<Grid> {
    let band = border_band(occ.width());
    let free_in = |cols: std::ops::Range<usize>| -> Vec<Cell> {
        (0..occ.height())
            .flat_map(|r| cols.clone().map(move |c| Cell::new(r, c)))
            .filter(|&c| !occ.is_blocked(c))
            .collect()
    };
    let left = free_in(0..band);
    let right = free_in(occ.width() - band..occ.width());
    if left.is_empty() || right.is_empty() {
        return Err(Error::Unsolvable { attempts: 0 });
    }
    let mut rng = seed::rng(instance_seed, &[seed::PLACEMENT]);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let s = left[rng.random_range(0..left.len())];
        let g = right[rng.random_range(0..right.len())];
        if s == g {
            continue;
        }
        let grid = Grid::new(occ.clone(), s, g)?;
        if astar(&grid).found() {
            return Ok(grid);
        }
    }
    Err(Error::Unsolvable { attempts: PLACEMENT_ATTEMPTS })
}

/// A solved instance held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub index: usize,
    pub seed: u64,
    pub grid: Grid,
    pub path: Path,
    pub cost: Cost,
}

impl Instance {
    pub fn input_raster(&self) -> ClassRaster {
        ClassRaster::from_grid(&self.grid)
    }

    pub fn gt_raster(&self) -> ClassRaster {
        ground_truth_raster(&self.grid, &self.path).expect("A* path is valid")
    }
}

/// Generates instance `index`, regenerating with the next derived seed
/// whenever the map or the start/goal placement fails.
pub fn generate_instance(cfg: &MapGenConfig, index: usize) -> Result<Instance> {
    cfg.validate()?;
    let base = seed::derive(cfg.seed, &[seed::INSTANCE, index as u64]);
    let mut last_err = None;
    for attempt in 0..REGENERATION_ATTEMPTS {
        let s = base.wrapping_add(attempt);
        let grid = match gen_map(cfg, s).and_then(|occ| place_start_goal(&occ, s)) {
            Ok(g) => g,
            Err(e @ (Error::Generation(_) | Error::Unsolvable { .. })) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let result = astar(&grid);
        let (Some(path), Some(cost)) = (result.path, result.cost) else {
            unreachable!("placement guarantees a path");
        };
        return Ok(Instance { index, seed: s, grid, path, cost });
    }
    Err(Error::Generation(format!(
        "instance {index}: no valid instance after {REGENERATION_ATTEMPTS} seeds (last: {})",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Largest-remainder apportionment of `count` items by `fractions`; ties on
/// the remainder go to the earlier split.
pub fn split_counts(count: usize, fractions: [f64; 3]) -> [usize; 3] {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * count as f64).collect();
    let mut counts: [usize; 3] = [0; 3];
    for i in 0..3 {
        counts[i] = quotas[i].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut left = count - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Split tag per instance index: a seeded permutation of the indices is cut
/// into train / test / validation blocks of the apportioned sizes.
pub fn assign_splits(cfg: &MapGenConfig) -> Vec<Split> {
    let counts = split_counts(cfg.count, cfg.split_fractions);
    let mut order: Vec<usize> = (0..cfg.count).collect();
    order.shuffle(&mut seed::rng(cfg.seed, &[seed::SPLIT]));
    let mut out = vec![Split::Train; cfg.count];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = if pos < counts[0] {
            Split::Train
        } else if pos < counts[0] + counts[1] {
            Split::Test
        } else {
            Split::Validation
        };
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub seed: u64,
    pub density: f64,
    pub start: Cell,
    pub goal: Cell,
    pub split: Split,
    pub input: String,
    pub gt: String,
    pub path_cells: usize,
    pub path_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub validation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: MapGenConfig,
    pub counts: SplitCounts,
    pub instances: Vec<InstanceRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn load(dir: &FsPath) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
    }

    pub fn save(&self, dir: &FsPath) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &InstanceRecord> {
        self.instances.iter().filter(move |r| r.split == split)
    }
}

/// Instance as read back from a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedInstance {
    pub id: String,
    pub grid: Grid,
    pub input: ClassRaster,
    pub gt: ClassRaster,
}

impl LoadedInstance {
    pub fn load(dir: &FsPath, record: &InstanceRecord) -> Result<Self> {
        let read = |name: &str| -> Result<ClassRaster> {
            let p = dir.join(name);
            let img = GrayImage::read_png(&p)?;
            img.check_palette(&p.display().to_string())?;
            Ok(decode_classes(&img))
        };
        let input = read(&record.input)?;
        let gt = read(&record.gt)?;
        let mut occ = Occupancy::new(input.width(), input.height())?;
        for (i, l) in input.labels().iter().enumerate() {
            if *l == crate::grid::Label::Blocked {
                occ.set_blocked(occ.cell(i), true);
            }
        }
        let grid = Grid::new(occ, record.start, record.goal)?;
        Ok(Self { id: record.id.clone(), grid, input, gt })
    }
}

/// Reads every instance of one split, in manifest order.
pub fn load_split(dir: &FsPath, manifest: &DatasetManifest, split: Split) -> Result<Vec<LoadedInstance>> {
    manifest.split(split).map(|r| LoadedInstance::load(dir, r)).collect()
}

pub fn instance_id(index: usize) -> String {
    format!("{index:06}")
}

/// Generates all instances, writes their PNGs and `manifest.json` into
/// `out_dir`. Output is a pure function of the config.
pub fn build_dataset(cfg: &MapGenConfig, out_dir: &FsPath) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let splits = assign_splits(cfg);
    let mut instances = Vec::with_capacity(cfg.count);
    for (index, &split) in splits.iter().enumerate() {
        let inst = generate_instance(cfg, index)?;
        let id = instance_id(index);
        let input_name = format!("{id}_input.png");
        let gt_name = format!("{id}_gt.png");
        encode_input(&inst.grid).write_png(&out_dir.join(&input_name))?;
        render_raster(&inst.gt_raster()).write_png(&out_dir.join(&gt_name))?;
        instances.push(InstanceRecord {
            id,
            seed: inst.seed,
            density: inst.grid.density(),
            start: inst.grid.start(),
            goal: inst.grid.goal(),
            split,
            input: input_name,
            gt: gt_name,
            path_cells: inst.path.len(),
            path_cost: inst.cost.value(),
        });
    }
    let c = split_counts(cfg.count, cfg.split_fractions);
    let manifest = DatasetManifest {
        format_version: 1,
        config: cfg.clone(),
        counts: SplitCounts { train: c[0], test: c[1], validation: c[2] },
        instances,
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}

pub fn manifest_path(dir: &FsPath) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_counts() {
        assert_eq!(split_counts(8, [0.75, 0.15, 0.10]), [6, 1, 1]);
        assert_eq!(split_counts(100, [0.75, 0.15, 0.10]), [75, 15, 10]);
        assert_eq!(split_counts(5000, [0.75, 0.15, 0.10]), [3750, 750, 500]);
        assert_eq!(split_counts(1, [0.75, 0.15, 0.10]), [1, 0, 0]);
        for n in 1..200 {
            assert_eq!(split_counts(n, [0.75, 0.15, 0.10]).iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn rect20_density_band() {
        let cfg = MapGenConfig::rect20(64, 1, 3);
        let max = cfg.max_shape_cells();
        for s in 0..20 {
            let d = gen_map(&cfg, s).unwrap().density();
            assert!(d >= 0.20 && d <= 0.20 + max as f64 / 4096.0, "density {d}");
        }
    }

    #[test]
    fn rotated_rect_cell_count_tracks_area() {
        for w in 4..=16 {
            for h in 4..=16 {
                let n = Shape::Rect { w, h, rotated: true }.offsets().len() as f64;
                let area = (w * h) as f64;
                assert!((n - area).abs() <= 0.25 * area, "{w}x{h} rotated covers {n} cells");
            }
        }
    }

    #[test]
    fn random_shapes_density_within_one_shape() {
        let cfg = MapGenConfig::random_shapes(32, 1, 9);
        let slack = cfg.max_shape_cells() as f64 / (32.0 * 32.0);
        for s in 0..20 {
            let d = gen_map(&cfg, s).unwrap().density();
            assert!((0.05..=0.5 + slack).contains(&d), "density {d}");
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = MapGenConfig::rect20(16, 10, 0);
        cfg.target_density = Some(0.0);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = MapGenConfig::rect20(16, 10, 0);
        cfg.density_range = Some((0.1, 0.2));
        assert!(cfg.validate().is_err());
        let mut cfg = MapGenConfig::rect20(16, 10, 0);
        cfg.split_fractions = [0.5, 0.3, 0.3];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn gen_map_is_deterministic() {
        let cfg = MapGenConfig::rect20(32, 1, 0);
        assert_eq!(gen_map(&cfg, 42).unwrap(), gen_map(&cfg, 42).unwrap());
        assert_ne!(gen_map(&cfg, 42).unwrap(), gen_map(&cfg, 43).unwrap());
    }

    #[test]
    fn placement_on_empty_and_walled_grids() {
        let occ = Occupancy::new(20, 10).unwrap();
        let g = place_start_goal(&occ, 5).unwrap();
        assert!(g.start().col < 2 && g.goal().col >= 18);
        assert_eq!(place_start_goal(&occ, 5).unwrap(), g);

        let mut walled = Occupancy::new(20, 10).unwrap();
        for r in 0..10 {
            walled.set_blocked(Cell::new(r, 10), true);
        }
        assert!(matches!(place_start_goal(&walled, 5), Err(Error::Unsolvable { .. })));
    }

    #[test]
    fn splits_are_deterministic_and_sized() {
        let cfg = MapGenConfig::rect20(16, 8, 1);
        let s = assign_splits(&cfg);
        assert_eq!(s, assign_splits(&cfg));
        assert_eq!(s.iter().filter(|&&x| x == Split::Train).count(), 6);
        assert_eq!(s.iter().filter(|&&x| x == Split::Test).count(), 1);
        assert_eq!(s.iter().filter(|&&x| x == Split::Validation).count(), 1);
    }

    #[test]
    fn instances_are_solvable_and_banded() {
        let cfg = MapGenConfig::rect30(16, 30, 2);
        for i in 0..30 {
            let inst = generate_instance(&cfg, i).unwrap();
            assert!(inst.grid.start().col < 2);
            assert!(inst.grid.goal().col >= 14);
            assert!(crate::grid::validate_path(&inst.grid, &inst.path).ok());
            assert!(inst.grid.density() >= 0.3);
        }
    }
}
