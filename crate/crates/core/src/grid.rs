//! Grid model: cells, obstacle grids, paths, 3-class rasters and the
//! 8-connected adjacency rules shared by the solver, post-processing and
//! metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A grid cell addressed as (row, col), origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// True if `other` is one of the 8 surrounding cells (not the cell itself).
    pub fn is_adjacent8(self, other: Cell) -> bool {
        let dr = self.row.abs_diff(other.row);
        let dc = self.col.abs_diff(other.col);
        dr <= 1 && dc <= 1 && (dr + dc) > 0
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// The 8 neighbor offsets in row-major order.
pub(crate) const OFFSETS8: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Dense blocked/free occupancy without start and goal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occupancy {
    width: usize,
    height: usize,
    blocked: Vec<bool>,
}

impl Occupancy {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Usage(format!("grid dimensions must be positive, got {width}x{height}")));
        }
        Ok(Self { width, height, blocked: vec![false; width * height] })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.row < self.height && c.col < self.width
    }

    pub fn index(&self, c: Cell) -> usize {
        c.row * self.width + c.col
    }

    pub fn cell(&self, index: usize) -> Cell {
        Cell::new(index / self.width, index % self.width)
    }

    pub fn is_blocked(&self, c: Cell) -> bool {
        self.blocked[self.index(c)]
    }

    pub fn set_blocked(&mut self, c: Cell, blocked: bool) {
        let i = self.index(c);
        self.blocked[i] = blocked;
    }

    pub fn blocked_mask(&self) -> &[bool] {
        &self.blocked
    }

    pub fn blocked_count(&self) -> usize {
        self.blocked.iter().filter(|&&b| b).count()
    }

    pub fn density(&self) -> f64 {
        self.blocked_count() as f64 / (self.width * self.height) as f64
    }

    /// Free cells of `c`'s 8-neighborhood. A diagonal step is only allowed
    /// when both flanking cardinal cells are free (no corner cutting).
    pub fn neighbors(&self, c: Cell) -> Result<Vec<Cell>> {
        if !self.in_bounds(c) {
            return Err(Error::Usage(format!("cell {c} outside {}x{} grid", self.width, self.height)));
        }
        let mut out = Vec::with_capacity(8);
        self.for_each_neighbor(c, |n| out.push(n));
        Ok(out)
    }

    /// Unchecked variant of [`Occupancy::neighbors`] for hot loops.
    pub(crate) fn for_each_neighbor(&self, c: Cell, mut f: impl FnMut(Cell)) {
        for (dr, dc) in OFFSETS8 {
            let Some(n) = self.offset(c, dr, dc) else { continue };
            if self.is_blocked(n) {
                continue;
            }
            if dr != 0 && dc != 0 && !self.diagonal_clear(c, n) {
                continue;
            }
            f(n);
        }
    }

    /// For a diagonal step `a -> b`, both flanking cardinal cells must be free.
    pub fn diagonal_clear(&self, a: Cell, b: Cell) -> bool {
        !self.is_blocked(Cell::new(a.row, b.col)) && !self.is_blocked(Cell::new(b.row, a.col))
    }

    /// True if `a -> b` is a legal single move: 8-adjacent, `b` free and no
    /// corner cut. `a` itself is not checked.
    pub fn is_legal_step(&self, a: Cell, b: Cell) -> bool {
        if !a.is_adjacent8(b) || !self.in_bounds(a) || !self.in_bounds(b) || self.is_blocked(b) {
            return false;
        }
        a.row == b.row || a.col == b.col || self.diagonal_clear(a, b)
    }

    pub(crate) fn offset(&self, c: Cell, dr: isize, dc: isize) -> Option<Cell> {
        let r = c.row.checked_add_signed(dr)?;
        let col = c.col.checked_add_signed(dc)?;
        (r < self.height && col < self.width).then_some(Cell::new(r, col))
    }
}

/// A path-finding instance: occupancy plus distinct, free start and goal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    occupancy: Occupancy,
    start: Cell,
    goal: Cell,
}

impl Grid {
    pub fn new(occupancy: Occupancy, start: Cell, goal: Cell) -> Result<Self> {
        for (name, c) in [("start", start), ("goal", goal)] {
            if !occupancy.in_bounds(c) {
                return Err(Error::Usage(format!("{name} {c} out of bounds")));
            }
            if occupancy.is_blocked(c) {
                return Err(Error::Usage(format!("{name} {c} is blocked")));
            }
        }
        if start == goal {
            return Err(Error::Usage(format!("start and goal coincide at {start}")));
        }
        Ok(Self { occupancy, start, goal })
    }

    /// Like [`Grid::new`] but permits `start == goal`, the degenerate
    /// single-cell instance.
    pub fn new_allow_degenerate(occupancy: Occupancy, start: Cell, goal: Cell) -> Result<Self> {
        if start == goal {
            if !occupancy.in_bounds(start) || occupancy.is_blocked(start) {
                return Err(Error::Usage(format!("start {start} invalid")));
            }
            return Ok(Self { occupancy, start, goal });
        }
        Self::new(occupancy, start, goal)
    }

    pub fn empty(width: usize, height: usize, start: Cell, goal: Cell) -> Result<Self> {
        Self::new(Occupancy::new(width, height)?, start, goal)
    }

    pub fn occupancy(&self) -> &Occupancy {
        &self.occupancy
    }

    pub fn width(&self) -> usize {
        self.occupancy.width
    }

    pub fn height(&self) -> usize {
        self.occupancy.height
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn is_blocked(&self, c: Cell) -> bool {
        self.occupancy.is_blocked(c)
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        self.occupancy.in_bounds(c)
    }

    pub fn density(&self) -> f64 {
        self.occupancy.density()
    }

    pub fn neighbors(&self, c: Cell) -> Result<Vec<Cell>> {
        self.occupancy.neighbors(c)
    }
}

/// Ordered cell sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    pub cells: Vec<Cell>,
}

impl Path {
    pub fn new(cells: Vec<Cell>) -> Self {
        Self { cells }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    Empty,
    OutOfBounds,
    WrongStart,
    WrongGoal,
    BlockedCell,
    /// Consecutive cells not 8-adjacent.
    Gap,
    CornerCut,
    RepeatedCell,
}

impl Violation {
    pub fn as_str(self) -> &'static str {
        match self {
            Violation::Empty => "empty",
            Violation::OutOfBounds => "out-of-bounds",
            Violation::WrongStart => "wrong-start",
            Violation::WrongGoal => "wrong-goal",
            Violation::BlockedCell => "blocked-cell",
            Violation::Gap => "gap",
            Violation::CornerCut => "corner-cut",
            Violation::RepeatedCell => "repeated-cell",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidityReport {
    /// First violation found and the index in the path where it occurs.
    pub violation: Option<(Violation, usize)>,
}

impl ValidityReport {
    pub fn ok(&self) -> bool {
        self.violation.is_none()
    }
}

/// Checks that `path` is a start-to-goal sequence of distinct, free,
/// legally stepped cells. Violations are reported, never raised.
pub fn validate_path(grid: &Grid, path: &Path) -> ValidityReport {
    let fail = |v, i| ValidityReport { violation: Some((v, i)) };
    let occ = grid.occupancy();
    let Some(&first) = path.cells.first() else {
        return fail(Violation::Empty, 0);
    };
    let mut seen = vec![false; occ.width() * occ.height()];
    for (i, &c) in path.cells.iter().enumerate() {
        if !occ.in_bounds(c) {
            return fail(Violation::OutOfBounds, i);
        }
        if occ.is_blocked(c) {
            return fail(Violation::BlockedCell, i);
        }
        let idx = occ.index(c);
        if seen[idx] {
            return fail(Violation::RepeatedCell, i);
        }
        seen[idx] = true;
        if i > 0 {
            let prev = path.cells[i - 1];
            if !prev.is_adjacent8(c) {
                return fail(Violation::Gap, i);
            }
            if !occ.is_legal_step(prev, c) {
                return fail(Violation::CornerCut, i);
            }
        }
    }
    if first != grid.start() {
        return fail(Violation::WrongStart, 0);
    }
    if *path.cells.last().unwrap() != grid.goal() {
        return fail(Violation::WrongGoal, path.cells.len() - 1);
    }
    ValidityReport { violation: None }
}

/// Partitions `mask` (row-major, `width * height`) into maximal components
/// under plain 8-adjacency. Corner cutting is irrelevant here: this is pixel
/// connectivity, not traversability. Components come out ordered by their
/// first cell in row-major order, cells sorted row-major.
pub fn connected_components(mask: &[bool], width: usize, height: usize) -> Vec<Vec<Cell>> {
    let labels = label_components(mask, width, height);
    let count = labels.iter().flatten().map(|&l| l + 1).max().unwrap_or(0);
    let mut comps = vec![Vec::new(); count];
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            comps[*l].push(Cell::new(i / width, i % width));
        }
    }
    comps
}

/// Per-pixel component label; labels are assigned in row-major order of
/// each component's first pixel.
pub fn label_components(mask: &[bool], width: usize, height: usize) -> Vec<Option<usize>> {
    assert_eq!(mask.len(), width * height, "mask size mismatch");
    let mut labels = vec![None; mask.len()];
    let mut next = 0;
    let mut stack = Vec::new();
    for seed in 0..mask.len() {
        if !mask[seed] || labels[seed].is_some() {
            continue;
        }
        labels[seed] = Some(next);
        stack.push(seed);
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / width) as isize, (i % width) as isize);
            for (dr, dc) in OFFSETS8 {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
                    continue;
                }
                let j = nr as usize * width + nc as usize;
                if mask[j] && labels[j].is_none() {
                    labels[j] = Some(next);
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    labels
}

/// Label of a raster cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Free = 0,
    Blocked = 1,
    Path = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Free, Label::Blocked, Label::Path];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Label {
        Label::ALL[i]
    }
}

/// Per-cell 3-class label map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRaster {
    width: usize,
    height: usize,
    labels: Vec<Label>,
}

impl ClassRaster {
    pub fn filled(width: usize, height: usize, label: Label) -> Self {
        Self { width, height, labels: vec![label; width * height] }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Usage(format!(
                "raster of {width}x{height} needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        Ok(Self { width, height, labels })
    }

    /// Input rendering: blocked cells BLOCKED, start and goal PATH.
    pub fn from_grid(grid: &Grid) -> Self {
        let occ = grid.occupancy();
        let labels = occ.blocked_mask().iter().map(|&b| if b { Label::Blocked } else { Label::Free }).collect();
        let mut r = Self { width: occ.width(), height: occ.height(), labels };
        r.set(grid.start(), Label::Path);
        r.set(grid.goal(), Label::Path);
        r
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn get(&self, c: Cell) -> Label {
        self.labels[c.row * self.width + c.col]
    }

    pub fn set(&mut self, c: Cell, label: Label) {
        self.labels[c.row * self.width + c.col] = label;
    }

    pub fn mask_of(&self, label: Label) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn same_dims(&self, width: usize, height: usize) -> bool {
        self.width == width && self.height == height
    }

    /// Mirror image: left-right when `horizontal`, top-bottom when `vertical`.
    pub fn flipped(&self, horizontal: bool, vertical: bool) -> Self {
        let (w, h) = (self.width, self.height);
        let labels = (0..w * h)
            .map(|i| {
                let (r, c) = (i / w, i % w);
                let r = if vertical { h - 1 - r } else { r };
                let c = if horizontal { w - 1 - c } else { c };
                self.labels[r * w + c]
            })
            .collect();
        Self { width: w, height: h, labels }
    }
}
