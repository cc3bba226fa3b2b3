//! A* ground-truth solver with an octile heuristic, plus a plain Dijkstra
//! reference used as its test oracle.
//!
//! Costs are carried as exact `(straight, diagonal)` step counts so that
//! optimality comparisons never depend on floating-point rounding.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::grid::{Cell, Grid, Path};

/// Path cost `straight + diagonal * sqrt(2)`, compared exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Cost {
    pub straight: u32,
    pub diagonal: u32,
}

impl Cost {
    pub const ZERO: Cost = Cost { straight: 0, diagonal: 0 };
    pub const STRAIGHT: Cost = Cost { straight: 1, diagonal: 0 };
    pub const DIAGONAL: Cost = Cost { straight: 0, diagonal: 1 };

    pub fn value(self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * std::f64::consts::SQRT_2
    }

    pub fn step(a: Cell, b: Cell) -> Cost {
        if a.row != b.row && a.col != b.col {
            Cost::DIAGONAL
        } else {
            Cost::STRAIGHT
        }
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, rhs: Cost) -> Cost {
        Cost { straight: self.straight + rhs.straight, diagonal: self.diagonal + rhs.diagonal }
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        // sign of x + y*sqrt(2)
        let x = self.straight as i64 - other.straight as i64;
        let y = self.diagonal as i64 - other.diagonal as i64;
        match (x.signum(), y.signum()) {
            (0, 0) => Ordering::Equal,
            (sx, sy) if sx >= 0 && sy >= 0 => Ordering::Greater,
            (sx, sy) if sx <= 0 && sy <= 0 => Ordering::Less,
            (1, _) => (x * x).cmp(&(2 * y * y)),
            _ => (2 * y * y).cmp(&(x * x)),
        }
    }
}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Octile distance as an exact cost.
pub fn octile_cost(a: Cell, b: Cell) -> Cost {
    let dr = a.row.abs_diff(b.row) as u32;
    let dc = a.col.abs_diff(b.col) as u32;
    let (lo, hi) = if dr < dc { (dr, dc) } else { (dc, dr) };
    Cost { straight: hi - lo, diagonal: lo }
}

/// `sqrt(2) * min(|dr|, |dc|) + (max - min)`.
pub fn octile(a: Cell, b: Cell) -> f64 {
    octile_cost(a, b).value()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// `None` when the goal is unreachable.
    pub path: Option<Path>,
    pub cost: Option<Cost>,
    pub expanded: usize,
}

impl SearchResult {
    pub fn found(&self) -> bool {
        self.path.is_some()
    }

    pub fn cost_value(&self) -> Option<f64> {
        self.cost.map(Cost::value)
    }
}

#[derive(PartialEq, Eq)]
struct OpenEntry {
    f: Cost,
    g: Cost,
    index: usize,
}

impl Ord for OpenEntry {
    // BinaryHeap is a max-heap: invert so the smallest f pops first, then the
    // largest g, then the smallest row-major index.
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.cmp(&self.f).then_with(|| self.g.cmp(&other.g)).then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Optimal 8-connected path (no corner cutting) from `grid.start()` to
/// `grid.goal()`. Deterministic: ties on f go to the deeper node, then to the
/// lower row-major index.
pub fn astar(grid: &Grid) -> SearchResult {
    let occ = grid.occupancy();
    let n = occ.width() * occ.height();
    let (start, goal) = (grid.start(), grid.goal());
    let mut g_score: Vec<Option<Cost>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();

    let s = occ.index(start);
    g_score[s] = Some(Cost::ZERO);
    open.push(OpenEntry { f: octile_cost(start, goal), g: Cost::ZERO, index: s });
    let mut expanded = 0;

    while let Some(OpenEntry { g, index, .. }) = open.pop() {
        if closed[index] || g_score[index] != Some(g) {
            continue;
        }
        closed[index] = true;
        expanded += 1;
        let cell = occ.cell(index);
        if cell == goal {
            return SearchResult { path: Some(reconstruct(occ.width(), &parent, s, index)), cost: Some(g), expanded };
        }
        occ.for_each_neighbor(cell, |nb| {
            let j = occ.index(nb);
            if closed[j] {
                return;
            }
            let tentative = g + Cost::step(cell, nb);
            if g_score[j].is_none_or(|old| tentative < old) {
                g_score[j] = Some(tentative);
                parent[j] = index;
                open.push(OpenEntry { f: tentative + octile_cost(nb, goal), g: tentative, index: j });
            }
        });
    }
    SearchResult { path: None, cost: None, expanded }
}

/// Uniform-cost search by repeated linear scans. Slow and simple on purpose:
/// it shares no code path with [`astar`] beyond adjacency.
pub fn dijkstra_reference(grid: &Grid) -> SearchResult {
    let occ = grid.occupancy();
    let n = occ.width() * occ.height();
    let mut dist: Vec<Option<Cost>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let s = occ.index(grid.start());
    let t = occ.index(grid.goal());
    dist[s] = Some(Cost::ZERO);
    let mut expanded = 0;
    loop {
        let mut best: Option<(Cost, usize)> = None;
        for i in 0..n {
            if let (false, Some(d)) = (done[i], dist[i]) {
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
        }
        let Some((d, u)) = best else {
            return SearchResult { path: None, cost: None, expanded };
        };
        done[u] = true;
        expanded += 1;
        if u == t {
            return SearchResult { path: Some(reconstruct(occ.width(), &parent, s, u)), cost: Some(d), expanded };
        }
        let cu = occ.cell(u);
        for nb in occ.neighbors(cu).expect("in-bounds cell") {
            let v = occ.index(nb);
            let nd = d + Cost::step(cu, nb);
            if !done[v] && dist[v].is_none_or(|old| nd < old) {
                dist[v] = Some(nd);
                parent[v] = u;
            }
        }
    }
}

fn reconstruct(width: usize, parent: &[usize], source: usize, mut at: usize) -> Path {
    let mut cells = vec![Cell::new(at / width, at % width)];
    while at != source {
        at = parent[at];
        cells.push(Cell::new(at / width, at % width));
    }
    cells.reverse();
    Path::new(cells)
}

/// Whether `goal` is reachable from `start` moving only through cells for
/// which `allowed` is true, under the traversal rules of `occ`.
pub fn reachable_within(occ: &crate::grid::Occupancy, allowed: &[bool], start: Cell, goal: Cell) -> bool {
    let si = occ.index(start);
    if !allowed[si] || !allowed[occ.index(goal)] || occ.is_blocked(start) {
        return false;
    }
    let mut seen = vec![false; allowed.len()];
    seen[si] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        if c == goal {
            return true;
        }
        occ.for_each_neighbor(c, |nb| {
            let j = occ.index(nb);
            if allowed[j] && !seen[j] {
                seen[j] = true;
                queue.push_back(nb);
            }
        });
    }
    false
}
