//! Recombination (ReCom) moves on a unit adjacency graph.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Units with populations and symmetric adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pops: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph; edges are deduplicated and self-loops dropped.
    pub fn new(pops: Vec<f64>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let n = pops.len();
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::input(format!("edge ({a}, {b}) references a unit outside 0..{n}")));
            }
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &set {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        Ok(Graph {
            pops,
            neighbors,
            edges: set.into_iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.pops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pops.is_empty()
    }

    pub fn pops(&self) -> &[f64] {
        &self.pops
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn total_pop(&self) -> f64 {
        self.pops.iter().sum()
    }

    /// Merges units by `unit_of[v]`: populations add and an edge joins two
    /// units whenever any of their members are adjacent.
    pub fn contract(&self, unit_of: &[usize], n_units: usize) -> Result<Graph> {
        if unit_of.len() != self.len() {
            return Err(Error::input("contraction map does not cover every vertex"));
        }
        let mut pops = vec![0.0; n_units];
        for (v, &u) in unit_of.iter().enumerate() {
            if u >= n_units {
                return Err(Error::input(format!("unit {u} out of range")));
            }
            pops[u] += self.pops[v];
        }
        Graph::new(pops, self.edges.iter().map(|&(a, b)| (unit_of[a], unit_of[b])))
    }

    /// Whether `nodes` induce a connected subgraph (empty sets are not).
    pub fn is_connected(&self, nodes: &[usize]) -> bool {
        let Some(&start) = nodes.first() else {
            return false;
        };
        let mut inside = vec![false; self.len()];
        for &v in nodes {
            inside[v] = true;
        }
        let mut seen = vec![false; self.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &u in &self.neighbors[v] {
                if inside[u] && !seen[u] {
                    seen[u] = true;
                    count += 1;
                    queue.push_back(u);
                }
            }
        }
        count == nodes.len()
    }
}

/// Assignment of every unit to one of `k` districts (numbered `0..k`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    k: usize,
}

impl Partition {
    pub fn new(assignment: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&d) = assignment.iter().find(|&&d| d >= k) {
            return Err(Error::input(format!("district {d} out of range for k = {k}")));
        }
        Ok(Partition { assignment, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn district_of(&self, v: usize) -> usize {
        self.assignment[v]
    }

    /// Units of district `d`, ascending.
    pub fn members(&self, d: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&v| self.assignment[v] == d)
            .collect()
    }

    pub fn district_pops(&self, graph: &Graph) -> Vec<f64> {
        let mut pops = vec![0.0; self.k];
        for (v, &d) in self.assignment.iter().enumerate() {
            pops[d] += graph.pops[v];
        }
        pops
    }

    /// Checks coverage, non-empty districts, connectivity and population
    /// balance within `tol` of the ideal.
    pub fn validate(&self, graph: &Graph, tol: f64) -> Result<()> {
        if self.assignment.len() != graph.len() {
            return Err(Error::input(format!(
                "partition covers {} of {} units",
                self.assignment.len(),
                graph.len()
            )));
        }
        let ideal = graph.total_pop() / self.k as f64;
        for (d, pop) in self.district_pops(graph).into_iter().enumerate() {
            let members = self.members(d);
            if !graph.is_connected(&members) {
                return Err(Error::input(format!("district {d} is empty or disconnected")));
            }
            if !within(pop, ideal, tol) {
                return Err(Error::input(format!(
                    "district {d} population {pop} outside {tol} of ideal {ideal}"
                )));
            }
        }
        Ok(())
    }
}

fn within(pop: f64, ideal: f64, tol: f64) -> bool {
    (pop - ideal).abs() <= tol * ideal + 1e-9 * ideal.abs().max(1.0)
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

/// A spanning tree over `nodes` (which must be connected) from random edge
/// weights and Kruskal's algorithm, returned as a BFS order plus parent links.
fn random_spanning_tree<R: Rng + ?Sized>(
    graph: &Graph,
    nodes: &[usize],
    rng: &mut R,
) -> Option<(Vec<usize>, Vec<usize>)> {
    let n = graph.len();
    let mut local = vec![usize::MAX; n];
    for (i, &v) in nodes.iter().enumerate() {
        local[v] = i;
    }
    let mut weighted: Vec<(f64, usize, usize)> = graph
        .edges
        .iter()
        .filter(|&&(a, b)| local[a] != usize::MAX && local[b] != usize::MAX)
        .map(|&(a, b)| (rng.random::<f64>(), a, b))
        .collect();
    weighted.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut uf = UnionFind((0..nodes.len()).collect());
    let mut tree_adj = vec![Vec::new(); nodes.len()];
    let mut used = 0;
    for (_, a, b) in weighted {
        if uf.union(local[a], local[b]) {
            tree_adj[local[a]].push(local[b]);
            tree_adj[local[b]].push(local[a]);
            used += 1;
        }
    }
    if used + 1 != nodes.len() {
        return None;
    }
    let mut order = vec![0usize];
    let mut parent = vec![usize::MAX; nodes.len()];
    parent[0] = 0;
    let mut head = 0;
    while head < order.len() {
        let v = order[head];
        head += 1;
        for &u in &tree_adj[v] {
            if parent[u] == usize::MAX {
                parent[u] = v;
                order.push(u);
            }
        }
    }
    Some((order, parent))
}

/// Finds a random tree edge whose removal leaves one side with population
/// within `tol` of `ideal` and the other within `tol * ideal` of
/// `rest_target`. Returns the local ids on the `ideal` side.
fn balanced_cut<R: Rng + ?Sized>(
    graph: &Graph,
    nodes: &[usize],
    ideal: f64,
    rest_target: f64,
    tol: f64,
    max_trees: usize,
    rng: &mut R,
) -> Option<Vec<usize>> {
    let total: f64 = nodes.iter().map(|&v| graph.pops[v]).sum();
    for _ in 0..max_trees {
        let (order, parent) = random_spanning_tree(graph, nodes, rng)?;
        let mut sub = vec![0.0; nodes.len()];
        for &v in order.iter().rev() {
            sub[v] += graph.pops[nodes[v]];
            if v != 0 {
                let p = parent[v];
                sub[p] += sub[v];
            }
        }
        // (local vertex, true if the subtree below it is the ideal side)
        let mut cuts = Vec::new();
        for &v in order.iter().skip(1) {
            let below = sub[v];
            let above = total - below;
            if within(below, ideal, tol) && (above - rest_target).abs() <= tol * ideal + 1e-9 {
                cuts.push((v, true));
            }
            if within(above, ideal, tol) && (below - rest_target).abs() <= tol * ideal + 1e-9 {
                cuts.push((v, false));
            }
        }
        let Some(&(v, below_is_ideal)) = cuts.choose(rng) else {
            continue;
        };
        let mut in_subtree = vec![false; nodes.len()];
        for &u in &order {
            in_subtree[u] = u == v || (u != 0 && in_subtree[parent[u]]);
        }
        return Some(
            (0..nodes.len())
                .filter(|&u| in_subtree[u] == below_is_ideal)
                .collect(),
        );
    }
    None
}

/// Default number of spanning trees tried before a ReCom step is rejected.
pub const DEFAULT_MAX_TREES: usize = 100;

/// One ReCom move: merge a random pair of adjacent districts, draw a random
/// spanning tree of the union and cut an edge that leaves both halves within
/// `tol` of the ideal population.
///
/// Returns `Ok(false)` and leaves the partition untouched when no balanced cut
/// turns up in `max_trees` trees. The half containing the lowest-numbered
/// unit keeps the lower district label.
pub fn recom_step<R: Rng + ?Sized>(
    graph: &Graph,
    partition: &mut Partition,
    tol: f64,
    max_trees: usize,
    rng: &mut R,
) -> Result<bool> {
    let pairs: BTreeSet<(usize, usize)> = graph
        .edges
        .iter()
        .filter_map(|&(a, b)| {
            let (da, db) = (partition.assignment[a], partition.assignment[b]);
            (da != db).then(|| (da.min(db), da.max(db)))
        })
        .collect();
    let pairs: Vec<_> = pairs.into_iter().collect();
    let &(da, db) = pairs
        .choose(rng)
        .ok_or_else(|| Error::input("no pair of adjacent districts to recombine"))?;
    let nodes: Vec<usize> = (0..graph.len())
        .filter(|&v| {
            let d = partition.assignment[v];
            d == da || d == db
        })
        .collect();
    let ideal = graph.total_pop() / partition.k as f64;
    let Some(side) = balanced_cut(graph, &nodes, ideal, ideal, tol, max_trees, rng) else {
        return Ok(false);
    };
    let mut first = vec![false; nodes.len()];
    for &i in &side {
        first[i] = true;
    }
    // nodes[0] is the lowest unit id of the merged pair.
    let flip = !first[0];
    for (i, &v) in nodes.iter().enumerate() {
        partition.assignment[v] = if first[i] != flip { da } else { db };
    }
    Ok(true)
}

/// A random starting partition into `k` connected districts within `tol`, by
/// repeatedly splitting one ideal-population district off a spanning tree of
/// the unassigned units.
pub fn random_partition<R: Rng + ?Sized>(
    graph: &Graph,
    k: usize,
    tol: f64,
    max_trees: usize,
    rng: &mut R,
) -> Result<Partition> {
    if k == 0 || k > graph.len() {
        return Err(Error::input(format!("cannot split {} units into {k} districts", graph.len())));
    }
    if !graph.is_connected(&(0..graph.len()).collect::<Vec<_>>()) {
        return Err(Error::input("unit graph is not connected"));
    }
    let ideal = graph.total_pop() / k as f64;
    let mut assignment = vec![k - 1; graph.len()];
    let mut remaining: Vec<usize> = (0..graph.len()).collect();
    for d in 0..k - 1 {
        let rest_target = ideal * (k - d - 1) as f64;
        let side = balanced_cut(graph, &remaining, ideal, rest_target, tol, max_trees, rng)
            .ok_or_else(|| Error::Generation(format!("no balanced split for district {d}")))?;
        let mut taken = vec![false; remaining.len()];
        for &i in &side {
            taken[i] = true;
            assignment[remaining[i]] = d;
        }
        remaining = remaining
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(&v, _)| v)
            .collect();
    }
    Partition::new(assignment, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::districts::grid::grid_edges;
    use crate::mechanisms::Seed;

    fn grid(r: usize, c: usize) -> Graph {
        Graph::new(vec![1.0; r * c], grid_edges(r, c)).unwrap()
    }

    #[test]
    fn two_cell_grid_is_unchanged() {
        let g = grid(2, 1);
        let mut p = Partition::new(vec![0, 1], 2).unwrap();
        let mut rng = Seed(1).rng();
        assert!(recom_step(&g, &mut p, 0.0, DEFAULT_MAX_TREES, &mut rng).unwrap());
        assert_eq!(p.assignment(), &[0, 1]);
    }

    #[test]
    fn four_by_four_halves_stay_exact() {
        let g = grid(4, 4);
        let mut p = Partition::new((0..16).map(|v| usize::from(v >= 8)).collect(), 2).unwrap();
        let mut rng = Seed(2).rng();
        let mut accepted = 0;
        for _ in 0..300 {
            if recom_step(&g, &mut p, 0.0, DEFAULT_MAX_TREES, &mut rng).unwrap() {
                accepted += 1;
            }
            assert_eq!(p.members(0).len(), 8);
            assert_eq!(p.members(1).len(), 8);
            p.validate(&g, 0.0).unwrap();
        }
        assert!(accepted > 0);
    }

    #[test]
    fn no_adjacent_pair_is_an_error() {
        let g = Graph::new(vec![1.0, 1.0], []).unwrap();
        let mut p = Partition::new(vec![0, 1], 2).unwrap();
        let mut rng = Seed(3).rng();
        assert!(recom_step(&g, &mut p, 0.1, 10, &mut rng).is_err());
    }

    #[test]
    fn impossible_balance_rejects_and_keeps_partition() {
        // Path 0-1-2 with pops 1, 1, 4: no cut of {1, 2} gives two halves of 2.
        let g = Graph::new(vec![1.0, 1.0, 4.0], [(0, 1), (1, 2)]).unwrap();
        let mut p = Partition::new(vec![0, 1, 1], 2).unwrap();
        let before = p.clone();
        let mut rng = Seed(4).rng();
        assert!(!recom_step(&g, &mut p, 0.0, 5, &mut rng).unwrap());
        assert_eq!(p, before);
    }

    #[test]
    fn random_partition_is_valid() {
        let g = grid(10, 10);
        let mut rng = Seed(5).rng();
        let p = random_partition(&g, 4, 0.05, 1000, &mut rng).unwrap();
        p.validate(&g, 0.05).unwrap();
    }

    #[test]
    fn contraction_sums_population_and_keeps_adjacency() {
        let g = grid(2, 4);
        // Two 2x2 units side by side.
        let unit_of = [0, 0, 1, 1, 0, 0, 1, 1];
        let c = g.contract(&unit_of, 2).unwrap();
        assert_eq!(c.pops(), &[4.0, 4.0]);
        assert_eq!(c.edges(), &[(0, 1)]);
    }

    #[test]
    fn graph_dedups_edges() {
        let g = Graph::new(vec![1.0; 3], [(0, 1), (1, 0), (0, 1), (2, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert!(Graph::new(vec![1.0], [(0, 3)]).is_err());
    }
}
