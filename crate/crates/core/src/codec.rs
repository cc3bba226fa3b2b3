//! Grid-to-image layer: grayscale rendering of grids and paths, the 3-class
//! palette, PNG I/O and the one-hot / logit tensors consumed and produced by
//! the networks.

use std::path::Path as FsPath;

use crate::error::{Error, Result};
use crate::grid::{validate_path, Cell, ClassRaster, Grid, Label, Path};

pub const FREE_PIXEL: u8 = 255;
pub const BLOCKED_PIXEL: u8 = 128;
pub const PATH_PIXEL: u8 = 0;

pub fn label_pixel(label: Label) -> u8 {
    match label {
        Label::Free => FREE_PIXEL,
        Label::Blocked => BLOCKED_PIXEL,
        Label::Path => PATH_PIXEL,
    }
}

/// Intensity of a label normalized to [0, 1].
pub fn label_intensity(label: Label) -> f32 {
    label_pixel(label) as f32 / 255.0
}

/// Nearest palette label; a value equidistant from two palette entries goes
/// to the darker one.
pub fn nearest_label(value: u8) -> Label {
    let candidates = [(PATH_PIXEL, Label::Path), (BLOCKED_PIXEL, Label::Blocked), (FREE_PIXEL, Label::Free)];
    let mut best = candidates[0];
    for cand in &candidates[1..] {
        if value.abs_diff(cand.0) < value.abs_diff(best.0) {
            best = *cand;
        }
    }
    best.1
}

/// 8-bit single-channel image, one pixel per grid cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Usage(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// First pixel outside {0, 128, 255}, if any.
    pub fn first_off_palette(&self) -> Option<(usize, usize, u8)> {
        self.pixels
            .iter()
            .position(|&p| p != FREE_PIXEL && p != BLOCKED_PIXEL && p != PATH_PIXEL)
            .map(|i| (i / self.width, i % self.width, self.pixels[i]))
    }

    /// Rejects off-palette images, naming the first offending pixel.
    pub fn check_palette(&self, source: &str) -> Result<()> {
        match self.first_off_palette() {
            None => Ok(()),
            Some((row, col, value)) => Err(Error::Palette { path: source.to_string(), row, col, value }),
        }
    }

    /// Nearest-neighbor upscale by an integer factor.
    pub fn upscale(&self, factor: usize) -> GrayImage {
        let factor = factor.max(1);
        let (w, h) = (self.width * factor, self.height * factor);
        let mut pixels = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                pixels.push(self.get(r / factor, c / factor));
            }
        }
        GrayImage { width: w, height: h, pixels }
    }

    pub fn write_png(&self, path: &FsPath) -> Result<()> {
        image::save_buffer(path, &self.pixels, self.width as u32, self.height as u32, image::ExtendedColorType::L8)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }

    /// Reads any PNG as 8-bit luma. Palette conformance is not checked here.
    pub fn read_png(path: &FsPath) -> Result<GrayImage> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
        let luma = img.into_luma8();
        let (w, h) = luma.dimensions();
        GrayImage::new(w as usize, h as usize, luma.into_raw())
    }
}

/// Renders a raster with the grayscale palette.
pub fn render_raster(raster: &ClassRaster) -> GrayImage {
    GrayImage {
        width: raster.width(),
        height: raster.height(),
        pixels: raster.labels().iter().map(|&l| label_pixel(l)).collect(),
    }
}

/// Input image: obstacles gray, start and goal black, everything else white.
pub fn encode_input(grid: &Grid) -> GrayImage {
    render_raster(&ClassRaster::from_grid(grid))
}

/// Ground-truth raster: the input raster with every path cell labeled PATH.
pub fn ground_truth_raster(grid: &Grid, path: &Path) -> Result<ClassRaster> {
    let report = validate_path(grid, path);
    if let Some((v, i)) = report.violation {
        return Err(Error::Usage(format!("invalid path: {} at index {i}", v.as_str())));
    }
    let mut raster = ClassRaster::from_grid(grid);
    for &c in &path.cells {
        raster.set(c, Label::Path);
    }
    Ok(raster)
}

pub fn encode_ground_truth(grid: &Grid, path: &Path) -> Result<GrayImage> {
    Ok(render_raster(&ground_truth_raster(grid, path)?))
}

/// Maps pixels back to classes. Off-palette values snap to the nearest
/// palette entry with a logged warning.
pub fn decode_classes(img: &GrayImage) -> ClassRaster {
    if let Some((r, c, v)) = img.first_off_palette() {
        log::warn!("off-palette pixel {v} at ({r}, {c}); snapping to nearest palette value");
    }
    let labels = img.pixels.iter().map(|&p| nearest_label(p)).collect();
    ClassRaster::from_labels(img.width, img.height, labels).expect("dimensions match")
}

/// Recovers a grid from an input image: gray cells are blocked and the PATH
/// cells are start and goal. With exactly two PATH cells the leftmost one
/// (then topmost) is the start.
pub fn grid_from_input_raster(raster: &ClassRaster) -> Result<Grid> {
    let mut occ = crate::grid::Occupancy::new(raster.width(), raster.height())?;
    let mut endpoints = Vec::new();
    for (i, &l) in raster.labels().iter().enumerate() {
        let c = occ.cell(i);
        match l {
            Label::Blocked => occ.set_blocked(c, true),
            Label::Path => endpoints.push(c),
            Label::Free => {}
        }
    }
    if endpoints.len() != 2 {
        return Err(Error::Usage(format!(
            "input image must contain exactly two path pixels (start and goal), found {}",
            endpoints.len()
        )));
    }
    endpoints.sort_by_key(|c| (c.col, c.row));
    Grid::new(occ, endpoints[0], endpoints[1])
}

/// Per-pixel class scores, channel-major: `data[k * H * W + r * W + c]` for
/// class index `k` (FREE, BLOCKED, PATH).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassLogits {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ClassLogits {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::Usage(format!("logits for {width}x{height} need {} values", 3 * width * height)));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Usage("logits must be finite".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let hw = self.width * self.height;
        let i = row * self.width + col;
        [self.data[i], self.data[hw + i], self.data[2 * hw + i]]
    }
}

/// One-hot class channels (3 x H x W, channel-major).
pub fn to_model_input(raster: &ClassRaster) -> Vec<f32> {
    let hw = raster.width() * raster.height();
    let mut out = vec![0.0; 3 * hw];
    for (i, &l) in raster.labels().iter().enumerate() {
        out[l.index() * hw + i] = 1.0;
    }
    out
}

/// Argmax per pixel; ties resolve to the lower class index.
pub fn logits_to_raster(logits: &ClassLogits) -> ClassRaster {
    let labels = (0..logits.width * logits.height)
        .map(|i| {
            let v = logits.pixel(i / logits.width, i % logits.width);
            let mut best = 0;
            for k in 1..3 {
                if v[k] > v[best] {
                    best = k;
                }
            }
            Label::from_index(best)
        })
        .collect();
    ClassRaster::from_labels(logits.width, logits.height, labels).expect("dimensions match")
}

pub fn softmax3(v: [f32; 3]) -> [f32; 3] {
    let m = v[0].max(v[1]).max(v[2]);
    let e = [(v[0] - m).exp(), (v[1] - m).exp(), (v[2] - m).exp()];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

/// Binary {0, 1} mask of PATH cells.
pub fn path_mask_from_raster(raster: &ClassRaster) -> Vec<f32> {
    raster.labels().iter().map(|&l| if l == Label::Path { 1.0 } else { 0.0 }).collect()
}

/// Soft mask: softmax probability of the PATH class per pixel.
pub fn path_mask_from_logits(logits: &ClassLogits) -> Vec<f32> {
    (0..logits.width * logits.height).map(|i| softmax3(logits.pixel(i / logits.width, i % logits.width))[2]).collect()
}

/// PATH cells of a raster as a cell list (row-major).
pub fn path_cells(raster: &ClassRaster) -> Vec<Cell> {
    raster
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == Label::Path)
        .map(|(i, _)| Cell::new(i / raster.width(), i % raster.width()))
        .collect()
}
