//! 8-connected component labelling of boolean masks.

use crate::grid::Grid;

/// Pixel coordinate `(row, col)`.
pub type Pixel = (usize, usize);

/// Groups the `true` pixels of `mask` into 8-connected components.
///
/// Components are ordered by their first pixel in raster order, and the
/// pixels inside each component are sorted in raster order.
pub fn connected_components(mask: &Grid<bool>) -> Vec<Vec<Pixel>> {
    let (rows, cols) = (mask.rows(), mask.cols());
    let mut seen = Grid::filled(rows, cols, false);
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if !mask.at(r, c) || seen.at(r, c) {
                continue;
            }
            let mut comp = Vec::new();
            *seen.get_mut(r, c) = true;
            stack.push((r, c));
            while let Some((pr, pc)) = stack.pop() {
                comp.push((pr, pc));
                for nr in pr.saturating_sub(1)..=(pr + 1).min(rows - 1) {
                    for nc in pc.saturating_sub(1)..=(pc + 1).min(cols - 1) {
                        if mask.at(nr, nc) && !seen.at(nr, nc) {
                            *seen.get_mut(nr, nc) = true;
                            stack.push((nr, nc));
                        }
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&str]) -> Grid<bool> {
        Grid::from_rows(
            rows.iter()
                .map(|r| r.chars().map(|c| c == '#').collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn diagonal_pixels_join() {
        let m = mask(&["#..", ".#.", "..#"]);
        let c = connected_components(&m);
        assert_eq!(c, vec![vec![(0, 0), (1, 1), (2, 2)]]);
    }

    #[test]
    fn separate_components_in_raster_order() {
        let m = mask(&["#.#", "...", ".##"]);
        let c = connected_components(&m);
        assert_eq!(c.len(), 3);
        assert_eq!(c[0], vec![(0, 0)]);
        assert_eq!(c[1], vec![(0, 2)]);
        assert_eq!(c[2], vec![(2, 1), (2, 2)]);
    }

    #[test]
    fn u_shape_is_one_component() {
        let m = mask(&["#...#", "#...#", "#####"]);
        assert_eq!(connected_components(&m).len(), 1);
    }

    #[test]
    fn empty_mask() {
        let m = Grid::filled(4, 4, false);
        assert!(connected_components(&m).is_empty());
    }
}
