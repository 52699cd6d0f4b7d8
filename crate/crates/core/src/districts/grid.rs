use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;

/// Square tiling of a homogeneous hierarchy whose branching factors are all
/// perfect squares: each level-`l` unit is covered by its `n_l` children in a
/// `sqrt(n_l) x sqrt(n_l)` grid, in row-major child order.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneGrid {
    side: usize,
    /// `(row, col)` of each leaf, by leaf position.
    cells: Vec<(usize, usize)>,
    /// Leaf position of each cell, row-major.
    leaf_at: Vec<usize>,
}

fn exact_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

impl PlaneGrid {
    pub fn square_tiling(h: &Hierarchy) -> Result<Self> {
        let branching = h
            .branching()
            .ok_or_else(|| Error::input("square tiling needs a homogeneous hierarchy"))?;
        let sides = branching
            .iter()
            .map(|&n| exact_sqrt(n))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| {
                Error::input(format!(
                    "square tiling needs perfect-square branching factors, got {branching:?}"
                ))
            })?;
        let mut pos = vec![(0usize, 0usize); h.len()];
        for l in 1..h.depth() {
            let s = sides[l - 1];
            for &node in h.nodes_at_level(l) {
                let (r, c) = pos[node];
                for (i, &child) in h.children(node).iter().enumerate() {
                    pos[child] = (r * s + i / s, c * s + i % s);
                }
            }
        }
        let side: usize = sides.iter().product();
        let cells: Vec<(usize, usize)> = h.leaves().iter().map(|&leaf| pos[leaf]).collect();
        let mut leaf_at = vec![0; side * side];
        for (i, &(r, c)) in cells.iter().enumerate() {
            leaf_at[r * side + c] = i;
        }
        Ok(PlaneGrid {
            side,
            cells,
            leaf_at,
        })
    }

    /// Side length `S_d` of the region, in blocks.
    pub fn side(&self) -> usize {
        self.side
    }

    /// `(row, col)` of the leaf at position `leaf_index`.
    pub fn cell(&self, leaf_index: usize) -> (usize, usize) {
        self.cells[leaf_index]
    }

    /// Leaf position at `(row, col)`.
    pub fn leaf_at(&self, row: usize, col: usize) -> usize {
        self.leaf_at[row * self.side + col]
    }

    /// Rook adjacency between leaf positions.
    pub fn adjacency(&self) -> Vec<(usize, usize)> {
        grid_edges(self.side, self.side)
            .into_iter()
            .map(|(a, b)| (self.leaf_at[a], self.leaf_at[b]))
            .collect()
    }
}

/// Rook-adjacent cell pairs of a `rows x cols` grid, cells numbered row-major.
/// There are `2 rows cols - rows - cols` of them.
pub fn grid_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                edges.push((v, v + 1));
            }
            if r + 1 < rows {
                edges.push((v, v + cols));
            }
        }
    }
    edges
}
