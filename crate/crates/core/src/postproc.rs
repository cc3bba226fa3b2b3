//! Post-processing of generated rasters: obstacle transfer and greedy
//! Bresenham gap-filling.

use crate::grid::{label_components, Cell, ClassRaster, Grid, Label, Occupancy};

/// Forces the raster's BLOCKED set to equal the grid's obstacles: PATH or
/// FREE on an obstacle becomes BLOCKED, BLOCKED on a free cell becomes FREE.
pub fn transfer_obstacles(grid: &Grid, generated: &ClassRaster) -> ClassRaster {
    assert!(
        generated.same_dims(grid.width(), grid.height()),
        "raster {}x{} does not match grid {}x{}",
        generated.width(),
        generated.height(),
        grid.width(),
        grid.height()
    );
    let occ = grid.occupancy();
    let labels = generated
        .labels()
        .iter()
        .zip(occ.blocked_mask())
        .map(|(&l, &blocked)| match (blocked, l) {
            (true, _) => Label::Blocked,
            (false, Label::Blocked) => Label::Free,
            (false, l) => l,
        })
        .collect();
    ClassRaster::from_labels(grid.width(), grid.height(), labels).expect("same dims")
}

/// Integer Bresenham rasterization from `a` to `b` inclusive. Along the
/// major axis every step advances by one; the minor coordinate is the
/// nearest integer to the ideal line, halves rounding back toward `a`.
pub fn bresenham(a: Cell, b: Cell) -> Vec<Cell> {
    let (r0, c0) = (a.row as i64, a.col as i64);
    let (dr, dc) = (b.row as i64 - r0, b.col as i64 - c0);
    let (sr, sc) = (dr.signum(), dc.signum());
    let (adr, adc) = (dr.abs(), dc.abs());
    let steps = adr.max(adc);
    let mut out = Vec::with_capacity(steps as usize + 1);
    let (mut r, mut c) = (r0, c0);
    out.push(a);
    let mut err = 0;
    for _ in 0..steps {
        if adc >= adr {
            c += sc;
            err += adr;
            if 2 * err > adc {
                r += sr;
                err -= adc;
            }
        } else {
            r += sr;
            err += adc;
            if 2 * err > adr {
                c += sc;
                err -= adr;
            }
        }
        out.push(Cell::new(r as usize, c as usize));
    }
    out
}

/// A drawn segment is usable only if none of its cells is blocked and
/// every diagonal step keeps both flanking cells free.
fn segment_traversable(occ: &Occupancy, seg: &[Cell]) -> bool {
    seg.iter().all(|&c| !occ.is_blocked(c)) && seg.windows(2).all(|w| occ.is_legal_step(w[0], w[1]))
}

fn dist2(a: Cell, b: Cell) -> usize {
    let dr = a.row.abs_diff(b.row);
    let dc = a.col.abs_diff(b.col);
    dr * dr + dc * dc
}

/// Greedy gap-filling. Starting from the PATH component that holds `start`,
/// candidate connections to every other component are ranked by the
/// Euclidean distance of their closest cell pair (ties by row-major order of
/// the pair). The nearest connection whose Bresenham segment is traversable
/// is drawn and the components are recomputed; components whose segment
/// would cross an obstacle are skipped. Stops when no connection can be drawn.
///
/// `start` and `goal` are labeled PATH first. Existing PATH cells are never
/// removed and BLOCKED cells are never overwritten.
pub fn fill_gaps(grid: &Grid, raster: &ClassRaster, start: Cell, goal: Cell) -> ClassRaster {
    let occ = grid.occupancy();
    let (w, h) = (raster.width(), raster.height());
    let mut out = raster.clone();
    for c in [start, goal] {
        if out.get(c) != Label::Blocked {
            out.set(c, Label::Path);
        }
    }
    loop {
        let mask = out.mask_of(Label::Path);
        let labels = label_components(&mask, w, h);
        let Some(root) = labels[start.row * w + start.col] else { break };
        let ncomp = labels.iter().flatten().max().map_or(0, |&m| m + 1);
        if ncomp <= 1 {
            break;
        }
        let mut root_cells = Vec::new();
        let mut others: Vec<Vec<Cell>> = vec![Vec::new(); ncomp];
        for (i, l) in labels.iter().enumerate() {
            if let Some(l) = *l {
                let c = Cell::new(i / w, i % w);
                if l == root {
                    root_cells.push(c);
                } else {
                    others[l].push(c);
                }
            }
        }
        // Closest pair per component; cells are in row-major order so the
        // first strict improvement wins ties.
        let mut candidates: Vec<(usize, usize, usize, Cell, Cell)> = others
            .iter()
            .filter(|cells| !cells.is_empty())
            .map(|cells| {
                let mut best = (usize::MAX, root_cells[0], cells[0]);
                for &a in &root_cells {
                    for &b in cells {
                        let d = dist2(a, b);
                        if d < best.0 {
                            best = (d, a, b);
                        }
                    }
                }
                (best.0, occ.index(best.1), occ.index(best.2), best.1, best.2)
            })
            .collect();
        candidates.sort_unstable_by_key(|&(d, ia, ib, _, _)| (d, ia, ib));

        let drawn = candidates.iter().find_map(|&(_, _, _, a, b)| {
            let seg = bresenham(a, b);
            segment_traversable(occ, &seg).then_some(seg)
        });
        match drawn {
            Some(seg) => {
                for c in seg {
                    out.set(c, Label::Path);
                }
            }
            None => break,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::connected_components;

    fn raster_from(rows: &[&str]) -> (Grid, ClassRaster) {
        // '#' blocked, '*' path, 'S'/'G' endpoints (path), '.' free
        let h = rows.len();
        let w = rows[0].len();
        let mut occ = Occupancy::new(w, h).unwrap();
        let mut labels = Vec::new();
        let (mut s, mut g) = (Cell::new(0, 0), Cell::new(0, 0));
        for (r, row) in rows.iter().enumerate() {
            for (c, ch) in row.chars().enumerate() {
                labels.push(match ch {
                    '#' => {
                        occ.set_blocked(Cell::new(r, c), true);
                        Label::Blocked
                    }
                    '*' => Label::Path,
                    'S' => {
                        s = Cell::new(r, c);
                        Label::Path
                    }
                    'G' => {
                        g = Cell::new(r, c);
                        Label::Path
                    }
                    _ => Label::Free,
                });
            }
        }
        (Grid::new(occ, s, g).unwrap(), ClassRaster::from_labels(w, h, labels).unwrap())
    }

    fn components(r: &ClassRaster) -> usize {
        connected_components(&r.mask_of(Label::Path), r.width(), r.height()).len()
    }

    #[test]
    fn transfer_overwrites_path_through_obstacle() {
        let (grid, _) = raster_from(&["S.#.G"]);
        let generated =
            ClassRaster::from_labels(5, 1, vec![Label::Path, Label::Blocked, Label::Path, Label::Path, Label::Path])
                .unwrap();
        let t = transfer_obstacles(&grid, &generated);
        assert_eq!(t.labels(), &[Label::Path, Label::Free, Label::Blocked, Label::Path, Label::Path]);
    }

    #[test]
    fn transfer_keeps_ground_truth() {
        let (grid, gt) = raster_from(&["S**", "#.*", "..G"]);
        assert_eq!(transfer_obstacles(&grid, &gt), gt);
    }

    #[test]
    fn bresenham_basic() {
        assert_eq!(bresenham(Cell::new(2, 3), Cell::new(2, 3)), vec![Cell::new(2, 3)]);
        let row: Vec<Cell> = (0..5).map(|c| Cell::new(0, c)).collect();
        assert_eq!(bresenham(Cell::new(0, 0), Cell::new(0, 4)), row);
        assert_eq!(
            bresenham(Cell::new(0, 0), Cell::new(2, 5)),
            vec![Cell::new(0, 0), Cell::new(0, 1), Cell::new(1, 2), Cell::new(1, 3), Cell::new(2, 4), Cell::new(2, 5)]
        );
    }

    #[test]
    fn fills_gap_across_free_cells() {
        let (grid, r) = raster_from(&["S*....*G"]);
        assert_eq!(components(&r), 2);
        let f = fill_gaps(&grid, &r, grid.start(), grid.goal());
        assert_eq!(components(&f), 1);
        assert!(f.labels().iter().all(|&l| l == Label::Path));
    }

    #[test]
    fn wall_keeps_gap() {
        let (grid, r) = raster_from(&["S*.#.*G", "...#...", "...#..."]);
        let f = fill_gaps(&grid, &r, grid.start(), grid.goal());
        assert_eq!(f, r);
        assert_eq!(components(&f), 2);
    }

    #[test]
    fn diagonal_segment_through_pinch_is_rejected() {
        // The segment (2,0) -> (1,1) -> (0,2) squeezes between the blocked
        // (0,1) and (1,2) on its last step.
        let (grid, r) = raster_from(&[".#G", "..#", "S.."]);
        let f = fill_gaps(&grid, &r, grid.start(), grid.goal());
        assert_eq!(components(&f), 2);
    }

    #[test]
    fn connected_path_is_fixpoint() {
        let (grid, r) = raster_from(&["S**.", "#..*", "...G"]);
        assert_eq!(fill_gaps(&grid, &r, grid.start(), grid.goal()), r);
    }

    #[test]
    fn skipped_component_does_not_block_other_merges() {
        // Nearest component (behind the wall) is unreachable; the farther one
        // across free space still gets connected.
        let (grid, r) = raster_from(&["S.#*....", "..#.....", "........", "........", "*......G"]);
        let f = fill_gaps(&grid, &r, grid.start(), grid.goal());
        let labels = label_components(&f.mask_of(Label::Path), 8, 5);
        let s = labels[0];
        assert_eq!(labels[4 * 8], s);
        assert_eq!(labels[4 * 8 + 7], s);
    }
}
