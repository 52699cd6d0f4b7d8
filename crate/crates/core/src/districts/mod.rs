//! District generators and fragmentation bounds.

mod grid;
mod recom;

pub use grid::{grid_edges, PlaneGrid};
pub use recom::{random_partition, recom_step, Graph, Partition, DEFAULT_MAX_TREES};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hierarchy::{District, Hierarchy, NodeId};

/// Default population tolerance for `disconn`.
pub const DEFAULT_DISCONN_TOLERANCE: f64 = 0.02;

/// Assembles a district of `floor(|leaves| / k)` leaves from the largest whole
/// subtrees available, descending into one partially used unit per level.
///
/// At each unit the walk starts at a random child small enough to fit and
/// takes children in cyclic child order while they fit; the next child after
/// the last one taken becomes the partially used unit.
pub fn greedy<R: Rng + ?Sized>(h: &Hierarchy, k: usize, rng: &mut R) -> Result<District> {
    let n_leaves = h.leaf_count(h.root());
    if k == 0 || k > n_leaves {
        return Err(Error::input(format!("k = {k} outside 1..={n_leaves}")));
    }
    let mut mask = vec![false; n_leaves];
    if k == 1 {
        mask.fill(true);
        return District::from_leaf_mask(h, &mask);
    }
    let mut need = n_leaves / k;
    let mut unit = h.root();
    while need > 0 {
        let children = h.children(unit);
        let eligible: Vec<usize> = (0..children.len())
            .filter(|&i| h.leaf_count(children[i]) <= need)
            .collect();
        let mut taken = vec![false; children.len()];
        let mut next = None;
        if let Some(&start) = eligible.choose(rng) {
            let mut last = start;
            for step in 0..children.len() {
                let i = (start + step) % children.len();
                let size = h.leaf_count(children[i]);
                if size <= need {
                    for j in h.leaf_range(children[i]) {
                        mask[j] = true;
                    }
                    need -= size;
                    taken[i] = true;
                    last = i;
                    if need == 0 {
                        break;
                    }
                }
            }
            next = (1..children.len())
                .map(|s| (last + s) % children.len())
                .find(|&i| !taken[i]);
        }
        if need == 0 {
            break;
        }
        let i = match next {
            Some(i) => i,
            None => *(0..children.len())
                .filter(|&i| !taken[i])
                .collect::<Vec<_>>()
                .as_slice()
                .choose(rng)
                .ok_or_else(|| Error::Generation("greedy ran out of units".into()))?,
        };
        unit = children[i];
    }
    District::from_leaf_mask(h, &mask)
}

/// A uniformly placed `s x s` square of blocks, where `s^2 = |leaves| / k`.
pub fn square<R: Rng + ?Sized>(
    h: &Hierarchy,
    grid: &PlaneGrid,
    k: usize,
    rng: &mut R,
) -> Result<District> {
    let s = square_side(grid, k)?;
    let span = grid.side() - s + 1;
    let row = rng.random_range(0..span);
    let col = rng.random_range(0..span);
    square_at(h, grid, s, row, col)
}

/// Side of the square district for `k` districts on `grid`.
pub fn square_side(grid: &PlaneGrid, k: usize) -> Result<usize> {
    let cells = grid.side() * grid.side();
    if k == 0 || !cells.is_multiple_of(k) {
        return Err(Error::input(format!("{cells} blocks do not split into {k} districts")));
    }
    let size = cells / k;
    let s = (size as f64).sqrt().round() as usize;
    if s * s != size {
        return Err(Error::input(format!("district size {size} is not a perfect square")));
    }
    Ok(s)
}

/// The `s x s` square with top-left corner `(row, col)`.
pub fn square_at(h: &Hierarchy, grid: &PlaneGrid, s: usize, row: usize, col: usize) -> Result<District> {
    if row + s > grid.side() || col + s > grid.side() {
        return Err(Error::input("square extends past the grid"));
    }
    let mut mask = vec![false; grid.side() * grid.side()];
    for r in row..row + s {
        for c in col..col + s {
            mask[grid.leaf_at(r, c)] = true;
        }
    }
    District::from_leaf_mask(h, &mask)
}

/// Accumulates whole units in random order, skipping any that would overshoot
/// `target (1 + tol)`, until the total lands in `[target (1 - tol), target (1 + tol)]`.
/// Returns the chosen unit ids.
pub fn disconn<R: Rng + ?Sized>(
    units: &[(NodeId, f64)],
    target: f64,
    tol: f64,
    rng: &mut R,
) -> Result<Vec<NodeId>> {
    if !(target > 0.0) || !(tol >= 0.0) {
        return Err(Error::input(format!("bad target {target} or tolerance {tol}")));
    }
    let available: f64 = units.iter().map(|u| u.1).sum();
    if available < target * (1.0 - tol) {
        return Err(Error::input(format!(
            "units hold {available} people, below target {target}"
        )));
    }
    let (lo, hi) = (target * (1.0 - tol), target * (1.0 + tol));
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.shuffle(rng);
    let mut chosen = Vec::new();
    let mut pop = 0.0;
    for i in order {
        let (id, p) = units[i];
        if pop + p > hi {
            continue;
        }
        pop += p;
        chosen.push(id);
        if pop >= lo {
            return Ok(chosen);
        }
    }
    Err(Error::Generation(format!(
        "no subset reached [{lo}, {hi}]; best total {pop}"
    )))
}

/// Expected-fragmentation bounds for Greedy (upper) and Square (lower)
/// districts on a homogeneous hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FragBounds {
    pub greedy_upper: f64,
    pub square_lower: f64,
    /// Smallest `L` with `n_1 ... n_L >= k`.
    pub level: usize,
    /// Whether `n_1 ... n_{d-2} >= k`, the hypothesis under which the bounds
    /// are proven.
    pub hypothesis_holds: bool,
}

/// Evaluates the bounds for branching factors `n_1..n_{d-1}` and `k` districts.
pub fn frag_bounds(branching: &[usize], k: usize) -> Result<FragBounds> {
    if k < 2 {
        return Err(Error::input(format!("k = {k}, need at least 2")));
    }
    if branching.is_empty() || branching.contains(&0) {
        return Err(Error::input(format!("bad branching {branching:?}")));
    }
    let mut prod = 1.0f64;
    let mut level = None;
    for (i, &n) in branching.iter().enumerate() {
        prod *= n as f64;
        if level.is_none() && prod >= k as f64 {
            level = Some(i + 1);
        }
    }
    let level = level.ok_or_else(|| {
        Error::input(format!("{prod} blocks cannot hold {k} districts"))
    })?;
    let kf = k as f64;
    let head: f64 = branching[..level].iter().map(|&n| n as f64).sum();
    let tail: f64 = branching[level..].iter().map(|&n| n as f64).sum();
    let greedy_upper = (kf - 1.0) / (kf * kf) * head + 0.25 * tail;
    let last = *branching.last().unwrap() as f64;
    let square_lower = 2.0 / 3.0 * (prod.sqrt() / kf.sqrt() - 5.5) * last.sqrt();
    let upper_prod: f64 = branching[..branching.len() - 1].iter().map(|&n| n as f64).product();
    Ok(FragBounds {
        greedy_upper,
        square_lower,
        level,
        hypothesis_holds: branching.len() >= 2 && upper_prod >= kf,
    })
}
