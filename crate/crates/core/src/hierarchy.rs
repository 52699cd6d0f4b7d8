//! Geographic hierarchies, per-type count tables and district weights.
//!
//! Node ids are dense and assigned in breadth-first order with the root at
//! id 0. Child order is the construction order and is part of the contract:
//! the Greedy district generator walks siblings in this order.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// A rooted tree of uniform depth. Levels are numbered `1..=depth`; the root
/// is the only node on level 1 and every leaf sits on level `depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    labels: Vec<String>,
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    level: Vec<usize>,
    levels: Vec<Vec<NodeId>>,
    leaf_count: Vec<usize>,
    leaf_pos: Vec<Option<usize>>,
    branching: Option<Vec<usize>>,
}

/// Incremental constructor for general (non-homogeneous) hierarchies.
///
/// Nodes may be added in any order; [`HierarchyBuilder::build`] renumbers them
/// breadth-first while keeping each node's children in insertion order.
#[derive(Debug, Clone)]
pub struct HierarchyBuilder {
    labels: Vec<String>,
    children: Vec<Vec<usize>>,
}

impl HierarchyBuilder {
    pub fn new(root_label: impl Into<String>) -> Self {
        HierarchyBuilder {
            labels: vec![root_label.into()],
            children: vec![Vec::new()],
        }
    }

    pub fn root(&self) -> usize {
        0
    }

    /// Appends a child to `parent` and returns the builder-local id.
    pub fn add_child(&mut self, parent: usize, label: impl Into<String>) -> Result<usize> {
        if parent >= self.labels.len() {
            return Err(Error::input(format!("unknown parent {parent}")));
        }
        let id = self.labels.len();
        self.labels.push(label.into());
        self.children.push(Vec::new());
        self.children[parent].push(id);
        Ok(id)
    }

    pub fn build(self) -> Result<Hierarchy> {
        let n = self.labels.len();
        let mut order = Vec::with_capacity(n);
        let mut new_id = vec![usize::MAX; n];
        order.push(0usize);
        new_id[0] = 0;
        let mut head = 0;
        while head < order.len() {
            let old = order[head];
            head += 1;
            for &c in &self.children[old] {
                new_id[c] = order.len();
                order.push(c);
            }
        }
        let labels = order.iter().map(|&o| self.labels[o].clone()).collect();
        let children = order
            .iter()
            .map(|&o| self.children[o].iter().map(|&c| new_id[c]).collect())
            .collect();
        Hierarchy::from_parts(labels, children)
    }
}

impl Hierarchy {
    /// Builds from breadth-first labels and child lists (ids already in BFS order).
    fn from_parts(labels: Vec<String>, children: Vec<Vec<NodeId>>) -> Result<Self> {
        let n = labels.len();
        let mut parent = vec![None; n];
        let mut level = vec![0usize; n];
        level[0] = 1;
        for h in 0..n {
            for &c in &children[h] {
                parent[c] = Some(h);
                level[c] = level[h] + 1;
            }
        }
        let depth = level.iter().copied().max().unwrap_or(1);
        let mut levels = vec![Vec::new(); depth];
        for h in 0..n {
            levels[level[h] - 1].push(h);
            if children[h].is_empty() && level[h] != depth {
                return Err(Error::input(format!(
                    "leaf `{}` is on level {} but the hierarchy has depth {depth}; only uniform depth is supported",
                    labels[h], level[h]
                )));
            }
        }
        let mut leaf_count = vec![0usize; n];
        for h in (0..n).rev() {
            leaf_count[h] = if children[h].is_empty() {
                1
            } else {
                children[h].iter().map(|&c| leaf_count[c]).sum()
            };
        }
        let mut leaf_pos = vec![None; n];
        for (i, &leaf) in levels[depth - 1].iter().enumerate() {
            leaf_pos[leaf] = Some(i);
        }
        let branching = (0..depth - 1)
            .map(|l| {
                let first = children[levels[l][0]].len();
                levels[l]
                    .iter()
                    .all(|&h| children[h].len() == first)
                    .then_some(first)
            })
            .collect::<Option<Vec<_>>>();
        Ok(Hierarchy {
            labels,
            parent,
            children,
            level,
            levels,
            leaf_count,
            leaf_pos,
            branching,
        })
    }

    /// Builds a hierarchy from per-level fan-outs: `fanouts[l][i]` is the child
    /// count of the `i`-th node (breadth-first) on level `l + 1`. The last level
    /// listed produces the leaves, so `fanouts.len() == depth - 1`.
    ///
    /// `[[3], [2, 4, 2]]` is a root with three children that have 2, 4 and 2
    /// leaves respectively.
    pub fn from_fanouts(fanouts: &[Vec<usize>]) -> Result<Self> {
        let mut labels = vec!["R".to_string()];
        let mut children: Vec<Vec<NodeId>> = vec![Vec::new()];
        let mut frontier = vec![0usize];
        for (l, counts) in fanouts.iter().enumerate() {
            if counts.len() != frontier.len() {
                return Err(Error::input(format!(
                    "level {} lists {} fan-outs for {} nodes",
                    l + 1,
                    counts.len(),
                    frontier.len()
                )));
            }
            let mut next = Vec::new();
            for (&h, &m) in frontier.iter().zip(counts) {
                if m == 0 {
                    return Err(Error::input(format!(
                        "node on level {} has no children",
                        l + 1
                    )));
                }
                for i in 0..m {
                    let id = labels.len();
                    labels.push(i.to_string());
                    children.push(Vec::new());
                    children[h].push(id);
                    next.push(id);
                }
            }
            frontier = next;
        }
        Self::from_parts(labels, children)
    }

    /// A homogeneous hierarchy where every node on level `l` has `branching[l-1]` children.
    pub fn homogeneous(branching: &[usize]) -> Result<Self> {
        if let Some(bad) = branching.iter().position(|&n| n == 0) {
            return Err(Error::input(format!(
                "branching factor n_{} must be at least 1",
                bad + 1
            )));
        }
        let mut fanouts = Vec::with_capacity(branching.len());
        let mut width = 1usize;
        for &n in branching {
            fanouts.push(vec![n; width]);
            width *= n;
        }
        Self::from_fanouts(&fanouts)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, h: NodeId) -> usize {
        self.level[h]
    }

    pub fn parent(&self, h: NodeId) -> Option<NodeId> {
        self.parent[h]
    }

    pub fn children(&self, h: NodeId) -> &[NodeId] {
        &self.children[h]
    }

    pub fn is_leaf(&self, h: NodeId) -> bool {
        self.children[h].is_empty()
    }

    /// Nodes on level `l` (1-based) in breadth-first order.
    pub fn nodes_at_level(&self, l: usize) -> &[NodeId] {
        &self.levels[l - 1]
    }

    pub fn leaves(&self) -> &[NodeId] {
        self.levels.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Position of `h` within [`Hierarchy::leaves`], if it is a leaf.
    pub fn leaf_index(&self, h: NodeId) -> Option<usize> {
        self.leaf_pos.get(h).copied().flatten()
    }

    /// Number of leaves descended from `h` (1 for a leaf).
    pub fn leaf_count(&self, h: NodeId) -> usize {
        self.leaf_count[h]
    }

    /// Contiguous range of leaf positions under `h`. Breadth-first numbering
    /// keeps every subtree's leaves contiguous.
    pub fn leaf_range(&self, h: NodeId) -> std::ops::Range<usize> {
        let mut first = h;
        while let Some(&c) = self.children[first].first() {
            first = c;
        }
        let start = self.leaf_pos[first].expect("descent ends at a leaf");
        start..start + self.leaf_count[h]
    }

    /// Per-level branching factors `n_1..n_{d-1}` if the hierarchy is homogeneous.
    pub fn branching(&self) -> Option<&[usize]> {
        self.branching.as_deref()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.branching.is_some()
    }

    pub fn label(&self, h: NodeId) -> &str {
        &self.labels[h]
    }

    /// Slash-separated labels from the root down to `h`.
    pub fn path(&self, h: NodeId) -> String {
        let mut parts = vec![self.labels[h].as_str()];
        let mut cur = h;
        while let Some(p) = self.parent[cur] {
            parts.push(&self.labels[p]);
            cur = p;
        }
        parts.reverse();
        parts.join("/")
    }

    /// Index from [`Hierarchy::path`] strings to node ids.
    pub fn path_index(&self) -> HashMap<String, NodeId> {
        (0..self.len()).map(|h| (self.path(h), h)).collect()
    }
}

/// Ordered, unique type labels (the columns of a count table).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeSchema {
    types: Vec<String>,
}

impl TypeSchema {
    pub fn new<S: Into<String>>(types: impl IntoIterator<Item = S>) -> Result<Self> {
        let types: Vec<String> = types.into_iter().map(Into::into).collect();
        if types.is_empty() {
            return Err(Error::input("type schema must not be empty"));
        }
        let unique: BTreeSet<&String> = types.iter().collect();
        if unique.len() != types.len() {
            return Err(Error::input("type labels must be unique"));
        }
        Ok(TypeSchema { types })
    }

    /// The one-type schema used by single-attribute runs.
    pub fn total() -> Self {
        TypeSchema {
            types: vec!["total".into()],
        }
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.types
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.types.iter().position(|t| t == label)
    }
}

/// Real-valued counts for every (node, type) pair of a hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    hierarchy: Arc<Hierarchy>,
    schema: TypeSchema,
    values: Vec<f64>,
    consistent: bool,
}

impl CountTable {
    pub fn zeros(hierarchy: Arc<Hierarchy>, schema: TypeSchema) -> Self {
        let values = vec![0.0; hierarchy.len() * schema.len()];
        CountTable {
            hierarchy,
            schema,
            values,
            consistent: true,
        }
    }

    /// Wraps node-major values (`values[h * |T| + t]`) without checking consistency.
    pub fn from_values(
        hierarchy: Arc<Hierarchy>,
        schema: TypeSchema,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != hierarchy.len() * schema.len() {
            return Err(Error::input(format!(
                "expected {} values for {} nodes x {} types, got {}",
                hierarchy.len() * schema.len(),
                hierarchy.len(),
                schema.len(),
                values.len()
            )));
        }
        Ok(CountTable {
            hierarchy,
            schema,
            values,
            consistent: false,
        })
    }

    pub fn hierarchy(&self) -> &Arc<Hierarchy> {
        &self.hierarchy
    }

    pub fn schema(&self) -> &TypeSchema {
        &self.schema
    }

    pub fn n_types(&self) -> usize {
        self.schema.len()
    }

    pub fn get(&self, h: NodeId, t: usize) -> f64 {
        self.values[h * self.schema.len() + t]
    }

    pub fn set(&mut self, h: NodeId, t: usize, v: f64) {
        let w = self.schema.len();
        self.values[h * w + t] = v;
        self.consistent = false;
    }

    pub fn row(&self, h: NodeId) -> &[f64] {
        let w = self.schema.len();
        &self.values[h * w..(h + 1) * w]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sum over types at `h`.
    pub fn total(&self, h: NodeId) -> f64 {
        self.row(h).iter().sum()
    }

    /// Per-node totals over all types.
    pub fn node_totals(&self) -> Vec<f64> {
        (0..self.hierarchy.len()).map(|h| self.total(h)).collect()
    }

    /// Values of type `t` for every node.
    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.hierarchy.len()).map(|h| self.get(h, t)).collect()
    }

    /// Collapses all types into a single `total` column.
    pub fn totals_table(&self) -> CountTable {
        CountTable {
            hierarchy: self.hierarchy.clone(),
            schema: TypeSchema::total(),
            values: self.node_totals(),
            consistent: self.consistent,
        }
    }

    /// Keeps only type `t`, as a one-type table labelled with that type.
    pub fn type_table(&self, t: usize) -> CountTable {
        CountTable {
            hierarchy: self.hierarchy.clone(),
            schema: TypeSchema {
                types: vec![self.schema.types[t].clone()],
            },
            values: self.column(t),
            consistent: self.consistent,
        }
    }

    /// Whether the table was produced by aggregation or consistent post-processing.
    pub fn is_marked_consistent(&self) -> bool {
        self.consistent
    }

    pub(crate) fn mark_consistent(mut self) -> Self {
        self.consistent = true;
        self
    }

    /// Same hierarchy (by structure) and same schema.
    pub fn is_compatible(&self, other: &CountTable) -> bool {
        self.schema == other.schema
            && (Arc::ptr_eq(&self.hierarchy, &other.hierarchy) || self.hierarchy == other.hierarchy)
    }
}

/// Leaf populations for [`build_homogeneous`].
#[derive(Debug, Clone)]
pub enum LeafPopulations {
    /// The same per-type counts at every leaf.
    Constant(Vec<f64>),
    /// Per-type counts for each leaf, in leaf order.
    PerLeaf(Vec<Vec<f64>>),
}

/// Builds a homogeneous hierarchy and its aggregated count table.
pub fn build_homogeneous(
    branching: &[usize],
    schema: TypeSchema,
    leaves: LeafPopulations,
) -> Result<CountTable> {
    let h = Arc::new(Hierarchy::homogeneous(branching)?);
    let n_leaves = h.leaves().len();
    let leaf_values = match leaves {
        LeafPopulations::Constant(row) => vec![row; n_leaves],
        LeafPopulations::PerLeaf(rows) => {
            if rows.len() != n_leaves {
                return Err(Error::input(format!(
                    "branching {:?} has {} leaves but {} leaf populations were given",
                    branching,
                    n_leaves,
                    rows.len()
                )));
            }
            rows
        }
    };
    aggregate(h, schema, &leaf_values)
}

/// Fills every internal node with the sum of its descendants' leaf values.
///
/// `leaf_values[i]` holds the per-type counts of the `i`-th leaf.
pub fn aggregate(
    hierarchy: Arc<Hierarchy>,
    schema: TypeSchema,
    leaf_values: &[Vec<f64>],
) -> Result<CountTable> {
    let leaves = hierarchy.leaves();
    if leaf_values.len() != leaves.len() {
        return Err(Error::input(format!(
            "missing leaf values: {} leaves, {} rows",
            leaves.len(),
            leaf_values.len()
        )));
    }
    let w = schema.len();
    let mut table = CountTable::zeros(hierarchy.clone(), schema);
    for (&leaf, row) in leaves.iter().zip(leaf_values) {
        if row.len() != w {
            return Err(Error::input(format!(
                "leaf `{}` has {} values for {} types",
                hierarchy.path(leaf),
                row.len(),
                w
            )));
        }
        table.values[leaf * w..(leaf + 1) * w].copy_from_slice(row);
    }
    fill_internal_sums(&mut table);
    Ok(table.mark_consistent())
}

fn fill_internal_sums(table: &mut CountTable) {
    let h = table.hierarchy.clone();
    let w = table.schema.len();
    for l in (1..h.depth()).rev() {
        for &node in h.nodes_at_level(l) {
            for t in 0..w {
                let s = h.children(node).iter().map(|&c| table.values[c * w + t]).sum();
                table.values[node * w + t] = s;
            }
        }
    }
}

/// A parent whose value disagrees with the sum of its children.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub node: NodeId,
    pub type_index: usize,
    pub value: f64,
    pub child_sum: f64,
}

/// Lists every (non-leaf node, type) where `|value - child sum| > tol * max(1, |value|, |sum|)`.
pub fn check_consistency(table: &CountTable, tol: f64) -> Vec<Violation> {
    let h = &table.hierarchy;
    let w = table.schema.len();
    let mut out = Vec::new();
    for node in 0..h.len() {
        if h.is_leaf(node) {
            continue;
        }
        for t in 0..w {
            let value = table.get(node, t);
            let child_sum: f64 = h.children(node).iter().map(|&c| table.get(c, t)).sum();
            let scale = 1f64.max(value.abs()).max(child_sum.abs());
            if !((value - child_sum).abs() <= tol * scale) {
                out.push(Violation {
                    node,
                    type_index: t,
                    value,
                    child_sum,
                });
            }
        }
    }
    out
}

/// A set of leaves together with the node weights it induces: a leaf weighs 1
/// if it belongs to the district and 0 otherwise, and every internal node
/// weighs the mean of its children.
#[derive(Debug, Clone, PartialEq)]
pub struct District {
    leaves: BTreeSet<NodeId>,
    weights: Vec<f64>,
}

impl District {
    pub fn leaves(&self) -> &BTreeSet<NodeId> {
        &self.leaves
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, h: NodeId) -> f64 {
        self.weights[h]
    }

    /// Root weight `w_1`.
    pub fn root_weight(&self) -> f64 {
        self.weights[0]
    }

    pub fn size(&self) -> usize {
        self.leaves.len()
    }

    pub fn contains(&self, leaf: NodeId) -> bool {
        self.leaves.contains(&leaf)
    }

    /// Builds a district from a membership mask indexed by leaf position.
    pub fn from_leaf_mask(h: &Hierarchy, mask: &[bool]) -> Result<Self> {
        let leaves = h.leaves();
        if mask.len() != leaves.len() {
            return Err(Error::input(format!(
                "mask has {} entries for {} leaves",
                mask.len(),
                leaves.len()
            )));
        }
        let mut weights = vec![0.0; h.len()];
        let mut set = BTreeSet::new();
        for (&leaf, &inside) in leaves.iter().zip(mask) {
            if inside {
                weights[leaf] = 1.0;
                set.insert(leaf);
            }
        }
        for l in (1..h.depth()).rev() {
            for &node in h.nodes_at_level(l) {
                let ch = h.children(node);
                weights[node] = ch.iter().map(|&c| weights[c]).sum::<f64>() / ch.len() as f64;
            }
        }
        Ok(District {
            leaves: set,
            weights,
        })
    }

    /// The district made of every leaf below the given units.
    pub fn from_units(h: &Hierarchy, units: &[NodeId]) -> Result<Self> {
        let mut mask = vec![false; h.leaves().len()];
        for &u in units {
            if u >= h.len() {
                return Err(Error::input(format!("unknown node {u}")));
            }
            for i in h.leaf_range(u) {
                mask[i] = true;
            }
        }
        Self::from_leaf_mask(h, &mask)
    }
}

/// Computes district weights for a set of leaves.
pub fn district_weights(
    h: &Hierarchy,
    leaves: impl IntoIterator<Item = NodeId>,
) -> Result<District> {
    let mut mask = vec![false; h.leaves().len()];
    for leaf in leaves {
        match h.leaf_pos.get(leaf).copied().flatten() {
            Some(i) => mask[i] = true,
            None => return Err(Error::input(format!("node {leaf} is not a leaf"))),
        }
    }
    District::from_leaf_mask(h, &mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Figure-1 style tree: root with children of 2, 4 and 2 leaves.
    fn fig1() -> Hierarchy {
        Hierarchy::from_fanouts(&[vec![3], vec![2, 4, 2]]).unwrap()
    }

    fn fig1_members(h: &Hierarchy) -> Vec<NodeId> {
        // leaf membership 0 1 | 0 0 0 1 | 1 1
        let mask = [false, true, false, false, false, true, true, true];
        h.leaves()
            .iter()
            .zip(mask)
            .filter(|(_, m)| *m)
            .map(|(&l, _)| l)
            .collect()
    }

    #[test]
    fn homogeneous_ten_by_ten() {
        let t = build_homogeneous(&[10, 10], TypeSchema::total(), LeafPopulations::Constant(vec![1.0]))
            .unwrap();
        let h = t.hierarchy();
        assert_eq!(h.len(), 111);
        assert_eq!(h.depth(), 3);
        assert_eq!(t.get(0, 0), 100.0);
        assert_eq!(h.branching(), Some(&[10usize, 10][..]));
        assert!(check_consistency(&t, 1e-9).is_empty());
    }

    #[test]
    fn dallas_like_leaf_count() {
        let h = Hierarchy::homogeneous(&[484, 4, 25]).unwrap();
        assert_eq!(h.leaves().len(), 48_400);
        assert_eq!(h.depth(), 4);
    }

    #[test]
    fn fig1_shape() {
        let h = fig1();
        assert_eq!(h.len(), 12);
        assert_eq!(h.depth(), 3);
        assert_eq!(h.children(0).len(), 3);
        let sizes: Vec<_> = h.children(0).iter().map(|&c| h.children(c).len()).collect();
        assert_eq!(sizes, vec![2, 4, 2]);
        assert!(!h.is_homogeneous());
    }

    #[test]
    fn population_length_mismatch_is_rejected() {
        let err = build_homogeneous(
            &[2, 2],
            TypeSchema::total(),
            LeafPopulations::PerLeaf(vec![vec![1.0]; 3]),
        );
        assert!(matches!(err, Err(Error::Input(_))));
        assert!(Hierarchy::homogeneous(&[3, 0]).is_err());
    }

    #[test]
    fn ragged_builder_is_rejected() {
        let mut b = HierarchyBuilder::new("R");
        let a = b.add_child(0, "a").unwrap();
        b.add_child(0, "b").unwrap();
        b.add_child(a, "a1").unwrap();
        assert!(b.build().is_err());
    }

    #[test]
    fn builder_renumbers_breadth_first() {
        let mut b = HierarchyBuilder::new("R");
        let a = b.add_child(0, "a").unwrap();
        b.add_child(a, "a1").unwrap();
        let c = b.add_child(0, "b").unwrap();
        b.add_child(c, "b1").unwrap();
        let h = b.build().unwrap();
        let labels: Vec<_> = (0..h.len()).map(|i| h.label(i)).collect();
        assert_eq!(labels, ["R", "a", "b", "a1", "b1"]);
        assert_eq!(h.path(4), "R/b/b1");
        assert_eq!(h.leaf_range(2), 1..2);
    }

    #[test]
    fn aggregate_zero_and_fig1() {
        let h = Arc::new(fig1());
        let zero = aggregate(h.clone(), TypeSchema::total(), &vec![vec![0.0]; 8]).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));

        let vals: Vec<Vec<f64>> = [0., 1., 0., 0., 0., 1., 1., 1.].iter().map(|&v| vec![v]).collect();
        let t = aggregate(h.clone(), TypeSchema::total(), &vals).unwrap();
        assert_eq!(t.get(0, 0), 4.0);
        assert!(t.is_marked_consistent());
    }

    #[test]
    fn aggregate_is_per_type() {
        let h = Arc::new(Hierarchy::homogeneous(&[3]).unwrap());
        let schema = TypeSchema::new(["a", "b"]).unwrap();
        let t = aggregate(h, schema, &[vec![1., 10.], vec![2., 20.], vec![3., 30.]]).unwrap();
        assert_eq!(t.row(0), &[6.0, 60.0]);
    }

    #[test]
    fn aggregate_missing_leaf() {
        let h = Arc::new(Hierarchy::homogeneous(&[3]).unwrap());
        assert!(aggregate(h.clone(), TypeSchema::total(), &[vec![1.], vec![2.]]).is_err());
        assert!(aggregate(h, TypeSchema::total(), &[vec![1.], vec![2.], vec![]]).is_err());
    }

    #[test]
    fn perturbed_root_is_the_only_violation() {
        let mut t =
            build_homogeneous(&[3, 4], TypeSchema::total(), LeafPopulations::Constant(vec![2.0]))
                .unwrap();
        t.set(0, 0, t.get(0, 0) + 1.0);
        let v = check_consistency(&t, 1e-9);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].node, 0);
        assert_eq!(v[0].child_sum, 24.0);
    }

    #[test]
    fn fig1_weights() {
        let h = fig1();
        let d = district_weights(&h, fig1_members(&h)).unwrap();
        let w = d.weights();
        assert!((w[0] - 7.0 / 12.0).abs() < 1e-12);
        assert!((w[1] - 0.5).abs() < 1e-12);
        assert!((w[2] - 0.25).abs() < 1e-12);
        assert!((w[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_full_districts() {
        let h = fig1();
        let empty = district_weights(&h, []).unwrap();
        assert!(empty.weights().iter().all(|&w| w == 0.0));
        let full = district_weights(&h, h.leaves().to_vec()).unwrap();
        assert!(full.weights().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn non_leaf_district_member_is_rejected() {
        let h = fig1();
        assert!(matches!(district_weights(&h, [1]), Err(Error::Input(_))));
    }

    #[test]
    fn from_units_expands_subtrees() {
        let h = fig1();
        let d = District::from_units(&h, &[2]).unwrap();
        assert_eq!(d.size(), 4);
        assert!((d.root_weight() - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn branching() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..5, 1..4)
    }

    proptest! {
        #[test]
        fn root_weight_is_district_fraction(b in branching(), seed in any::<u64>()) {
            let h = Hierarchy::homogeneous(&b).unwrap();
            let n = h.leaves().len();
            let mask: Vec<bool> = (0..n).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            let d = District::from_leaf_mask(&h, &mask).unwrap();
            let frac = mask.iter().filter(|&&m| m).count() as f64 / n as f64;
            prop_assert!((d.root_weight() - frac).abs() < 1e-12);
        }

        #[test]
        fn aggregate_is_always_consistent(b in branching(), vals in prop::collection::vec(0u32..1000, 64)) {
            let h = Arc::new(Hierarchy::homogeneous(&b).unwrap());
            let rows: Vec<Vec<f64>> = (0..h.leaves().len()).map(|i| vec![vals[i % 64] as f64]).collect();
            let t = aggregate(h, TypeSchema::total(), &rows).unwrap();
            prop_assert!(check_consistency(&t, 1e-12).is_empty());
        }

        #[test]
        fn adding_a_leaf_never_lowers_weights(b in branching(), seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
            let h = Hierarchy::homogeneous(&b).unwrap();
            let n = h.leaves().len();
            let mut mask: Vec<bool> = (0..n).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            let before = District::from_leaf_mask(&h, &mask).unwrap();
            mask[pick.index(n)] = true;
            let after = District::from_leaf_mask(&h, &mask).unwrap();
            for (a, b) in after.weights().iter().zip(before.weights()) {
                prop_assert!(a + 1e-15 >= *b);
            }
        }
    }
}
