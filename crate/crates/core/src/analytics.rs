//! Closed-form ToyDown error analysis.
//!
//! All variance expressions are built from [`laplace_noise_variance`], the
//! variance `8 / epsilon^2` of the noise added at a level with budget
//! `epsilon`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{CountTable, District, Hierarchy, NodeId};
use crate::mechanisms::{laplace_noise_variance, BudgetAllocation, NoiseLedger};

/// Per-node errors `E_h` of the unconstrained sweep predicted from the noise
/// draws alone:
///
/// `E_root = L_root`, and for each child `c` of `p`,
/// `E_c = L_c + (E_p - sum_j L_{p_j}) / n(p)`.
pub fn error_recursion(ledger: &NoiseLedger, h: &Hierarchy) -> Result<Vec<f64>> {
    if ledger.width() != 1 {
        return Err(Error::input(format!(
            "error recursion needs a single-attribute ledger, got {} columns",
            ledger.width()
        )));
    }
    if ledger.n_nodes() != h.len() {
        return Err(Error::input(format!(
            "ledger has draws for {} nodes, hierarchy has {}",
            ledger.n_nodes(),
            h.len()
        )));
    }
    Ok(error_recursion_draws(ledger.draws(), h))
}

pub(crate) fn error_recursion_draws(draws: &[f64], h: &Hierarchy) -> Vec<f64> {
    let mut err = vec![0.0; h.len()];
    err[h.root()] = draws[h.root()];
    for l in 1..h.depth() {
        for &p in h.nodes_at_level(l) {
            let ch = h.children(p);
            let sum: f64 = ch.iter().map(|&c| draws[c]).sum();
            let spill = (err[p] - sum) / ch.len() as f64;
            for &c in ch {
                err[c] = draws[c] + spill;
            }
        }
    }
    err
}

/// District error written directly in the draws:
/// `E_D = w_root L_root + sum_{h != root} (w_h - w_parent(h)) L_h`.
pub fn district_error_closed_form(h: &Hierarchy, district: &District, draws: &[f64]) -> f64 {
    let w = district.weights();
    let mut e = w[h.root()] * draws[h.root()];
    for node in 1..h.len() {
        let p = h.parent(node).expect("non-root node has a parent");
        e += (w[node] - w[p]) * draws[node];
    }
    e
}

/// Total error `sum_{leaf in D} sum_t (adjusted - original)` over a district.
pub fn district_error(district: &District, original: &CountTable, adjusted: &CountTable) -> f64 {
    district
        .leaves()
        .iter()
        .map(|&leaf| adjusted.total(leaf) - original.total(leaf))
        .sum()
}

/// District error variance split by level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// Contribution of level `l` at index `l - 1`.
    pub per_level_contributions: Vec<f64>,
    pub total_variance: f64,
}

/// `Var(E_D) = 8 w_1^2 / eps_1^2 + sum_l (8 / eps_l^2) sum_{h in H_l} (w_h - w_parent)^2`.
pub fn district_error_variance(
    h: &Hierarchy,
    district: &District,
    alloc: &BudgetAllocation,
) -> Result<VarianceReport> {
    alloc.check_depth(h)?;
    let frag = fragmentation(h, district);
    let w1 = district.root_weight();
    let per_level_contributions: Vec<f64> = (1..=h.depth())
        .map(|l| {
            let squared = if l == 1 { w1 * w1 } else { frag.per_level_terms[l - 1] };
            laplace_noise_variance(alloc.level(l)) * squared
        })
        .collect();
    let total_variance = per_level_contributions.iter().sum();
    Ok(VarianceReport {
        per_level_contributions,
        total_variance,
    })
}

/// Coefficients `a_l` with `Var(E_block) = sum_l a_l / eps_l^2` for a single
/// block of a homogeneous hierarchy with branching `n_1..n_{d-1}`:
/// `a_1 = 8 / (n_1..n_{d-1})^2` and
/// `a_l = 8 n_{l-1} (n_{l-1} - 1) / (n_{l-1}..n_{d-1})^2`.
pub fn homogeneous_block_coefficients(branching: &[usize]) -> Vec<f64> {
    let c = laplace_noise_variance(1.0);
    let d = branching.len() + 1;
    let tail_product = |from: usize| -> f64 { branching[from..].iter().map(|&n| n as f64).product() };
    let mut coeffs = Vec::with_capacity(d);
    coeffs.push(c / tail_product(0).powi(2));
    for l in 2..=d {
        let n = branching[l - 2] as f64;
        coeffs.push(c * n * (n - 1.0) / tail_product(l - 2).powi(2));
    }
    coeffs
}

/// Error variance of a single block in a homogeneous hierarchy.
pub fn block_variance_homogeneous(branching: &[usize], alloc: &BudgetAllocation) -> Result<f64> {
    if alloc.depth() != branching.len() + 1 {
        return Err(Error::input(format!(
            "branching {:?} implies depth {}, allocation has {} levels",
            branching,
            branching.len() + 1,
            alloc.depth()
        )));
    }
    if branching.contains(&0) {
        return Err(Error::input("branching factors must be at least 1"));
    }
    Ok(allocation_objective(
        &homogeneous_block_coefficients(branching),
        alloc.per_level(),
    ))
}

/// `sum_l a_l / x_l^2`.
pub fn allocation_objective(coeffs: &[f64], x: &[f64]) -> f64 {
    coeffs.iter().zip(x).map(|(a, x)| a / (x * x)).sum()
}

/// Minimizer of `sum_l a_l / x_l^2` subject to `sum_l x_l = epsilon`:
/// `x_l = epsilon a_l^{1/3} / sum_i a_i^{1/3}`.
///
/// A zero coefficient would receive zero budget, which is not a valid
/// allocation, so all coefficients must be positive.
pub fn optimal_allocation(coeffs: &[f64], epsilon: f64) -> Result<BudgetAllocation> {
    if !(epsilon > 0.0) {
        return Err(Error::input(format!("epsilon must be positive, got {epsilon}")));
    }
    if coeffs.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::input("coefficients must be non-negative"));
    }
    if coeffs.iter().all(|&a| a == 0.0) {
        return Err(Error::input("coefficients are all zero"));
    }
    if let Some(l) = coeffs.iter().position(|&a| a == 0.0) {
        return Err(Error::input(format!(
            "level {} has a zero coefficient and would receive no budget",
            l + 1
        )));
    }
    let roots: Vec<f64> = coeffs.iter().map(|a| a.cbrt()).collect();
    let sum: f64 = roots.iter().sum();
    BudgetAllocation::new(roots.iter().map(|r| epsilon * r / sum).collect())
}

/// Fragmentation score with its per-level breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragReport {
    pub score: f64,
    /// `sum_{h in H_l} (w_h - w_parent)^2` at index `l - 1` (zero for the root level).
    pub per_level_terms: Vec<f64>,
}

/// `Frag(D) = sum_{h != root} (w_h - w_parent(h))^2`.
pub fn fragmentation(h: &Hierarchy, district: &District) -> FragReport {
    let w = district.weights();
    let mut per_level_terms = vec![0.0; h.depth()];
    for node in 1..h.len() {
        let p: NodeId = h.parent(node).expect("non-root node has a parent");
        per_level_terms[h.level(node) - 1] += (w[node] - w[p]).powi(2);
    }
    FragReport {
        score: per_level_terms.iter().sum(),
        per_level_terms,
    }
}

/// Right-hand side of `Var(E_D) = (8 d^2 / eps^2) (w_1^2 + Frag(D))`, valid
/// when every one of the `d` levels receives `eps / d`.
pub fn var_frag_identity(h: &Hierarchy, district: &District, epsilon: f64) -> f64 {
    let d = h.depth() as f64;
    let w1 = district.root_weight();
    laplace_noise_variance(epsilon) * d * d * (w1 * w1 + fragmentation(h, district).score)
}

/// Sum of absolute leaf-level changes over every type, divided by twice the
/// original total population.
pub fn l1_error(original: &CountTable, noised: &CountTable) -> Result<f64> {
    if !original.is_compatible(noised) {
        return Err(Error::input("tables differ in hierarchy or type schema"));
    }
    let h = original.hierarchy();
    let mut abs = 0.0;
    let mut pop = 0.0;
    for &leaf in h.leaves() {
        for (a, b) in original.row(leaf).iter().zip(noised.row(leaf)) {
            abs += (a - b).abs();
            pop += a;
        }
    }
    if !(pop > 0.0) {
        return Err(Error::input("original table has no population"));
    }
    Ok(abs / (2.0 * pop))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{build_homogeneous, district_weights, LeafPopulations, TypeSchema};
    use std::sync::Arc;

    fn fig1() -> (Hierarchy, District) {
        let h = Hierarchy::from_fanouts(&[vec![3], vec![2, 4, 2]]).unwrap();
        let leaves = h.leaves().to_vec();
        let members = [1usize, 5, 6, 7].map(|i| leaves[i]);
        let d = district_weights(&h, members).unwrap();
        (h, d)
    }

    #[test]
    fn recursion_zero_ledger() {
        let h = Hierarchy::homogeneous(&[3, 3]).unwrap();
        let l = NoiseLedger::from_draws(vec![0.0; h.len()], crate::Seed(0));
        assert!(error_recursion(&l, &h).unwrap().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn recursion_single_child_inherits_parent_error() {
        let h = Hierarchy::homogeneous(&[1, 1]).unwrap();
        let l = NoiseLedger::from_draws(vec![2.5, -7.0, 11.0], crate::Seed(0));
        let e = error_recursion(&l, &h).unwrap();
        assert_eq!(e, vec![2.5, 2.5, 2.5]);
    }

    #[test]
    fn recursion_rejects_short_ledger() {
        let h = Hierarchy::homogeneous(&[2]).unwrap();
        let l = NoiseLedger::from_draws(vec![0.0; 2], crate::Seed(0));
        assert!(error_recursion(&l, &h).is_err());
    }

    #[test]
    fn fig1_fragmentation_and_variance() {
        let (h, d) = fig1();
        let f = fragmentation(&h, &d);
        assert!((f.per_level_terms[1] - 7.0 / 24.0).abs() < 1e-12);
        assert!((f.per_level_terms[2] - 1.25).abs() < 1e-12);
        assert!((f.score - (7.0 / 24.0 + 0.5 + 0.75)).abs() < 1e-12);

        let alloc = BudgetAllocation::equal(1.0, 3).unwrap();
        let v = district_error_variance(&h, &d, &alloc).unwrap();
        let want = 72.0 * ((7.0f64 / 12.0).powi(2) + f.score);
        assert!((v.total_variance - want).abs() < 1e-9 * want);
        assert!((v.total_variance - 135.5).abs() < 0.05);
        let sum: f64 = v.per_level_contributions.iter().sum();
        assert!((sum - v.total_variance).abs() <= 1e-12 * sum);
        let identity = var_frag_identity(&h, &d, 1.0);
        assert!((identity - v.total_variance).abs() < 1e-9 * identity);
    }

    #[test]
    fn full_and_empty_districts() {
        let (h, _) = fig1();
        let full = district_weights(&h, h.leaves().to_vec()).unwrap();
        let empty = district_weights(&h, []).unwrap();
        assert_eq!(fragmentation(&h, &full).score, 0.0);
        assert_eq!(fragmentation(&h, &empty).score, 0.0);
        let alloc = BudgetAllocation::new(vec![0.3, 0.2, 0.5]).unwrap();
        let v = district_error_variance(&h, &full, &alloc).unwrap();
        assert!((v.total_variance - 8.0 / 0.09).abs() < 1e-9);
        assert!((var_frag_identity(&h, &full, 1.0) - 72.0).abs() < 1e-9);
    }

    #[test]
    fn identity_scales_inverse_square() {
        let (h, d) = fig1();
        let a = var_frag_identity(&h, &d, 1.0);
        let b = var_frag_identity(&h, &d, 2.0);
        assert!((a / b - 4.0).abs() < 1e-12);
    }

    #[test]
    fn block_variance_at_cube_root_split() {
        let alloc = BudgetAllocation::new(vec![0.038, 0.171, 0.791]).unwrap();
        let v = block_variance_homogeneous(&[10, 10], &alloc).unwrap();
        assert!((v - 14.52).abs() < 0.01, "{v}");
    }

    #[test]
    fn block_variance_root_only() {
        let alloc = BudgetAllocation::new(vec![0.5]).unwrap();
        assert!((block_variance_homogeneous(&[], &alloc).unwrap() - 32.0).abs() < 1e-12);
    }

    #[test]
    fn block_variance_agrees_with_district_formula() {
        for b in [vec![10, 10], vec![2, 3, 4], vec![5], vec![1, 4]] {
            let h = Hierarchy::homogeneous(&b).unwrap();
            let alloc = BudgetAllocation::new((1..=h.depth()).map(|l| 0.1 * l as f64).collect()).unwrap();
            let leaf = h.leaves()[h.leaves().len() / 2];
            let d = district_weights(&h, [leaf]).unwrap();
            let a = district_error_variance(&h, &d, &alloc).unwrap().total_variance;
            let c = block_variance_homogeneous(&b, &alloc).unwrap();
            assert!((a - c).abs() <= 1e-9 * a, "{b:?}: {a} vs {c}");
        }
    }

    #[test]
    fn cube_root_allocation_example() {
        let coeffs = homogeneous_block_coefficients(&[10, 10]);
        let alloc = optimal_allocation(&coeffs, 1.0).unwrap();
        for (x, want) in alloc.per_level().iter().zip([0.038, 0.171, 0.791]) {
            assert!((x - want).abs() <= 1e-3, "{x} vs {want}");
        }
        assert!((alloc.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_coefficients_split_equally() {
        let alloc = optimal_allocation(&[2.0; 4], 2.0).unwrap();
        for &x in alloc.per_level() {
            assert!((x - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn allocation_errors() {
        assert!(optimal_allocation(&[0.0, 0.0], 1.0).is_err());
        assert!(optimal_allocation(&[1.0, 0.0], 1.0).is_err());
        assert!(optimal_allocation(&[1.0, 1.0], 0.0).is_err());
        assert!(optimal_allocation(&[-1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn l1_examples() {
        let t = build_homogeneous(&[4], TypeSchema::total(), LeafPopulations::Constant(vec![25.0])).unwrap();
        assert_eq!(l1_error(&t, &t).unwrap(), 0.0);
        let mut n = t.clone();
        n.set(1, 0, 28.0);
        n.set(2, 0, 22.0);
        assert!((l1_error(&t, &n).unwrap() - 0.03).abs() < 1e-15);
        let other = build_homogeneous(&[4], TypeSchema::total(), LeafPopulations::Constant(vec![20.0])).unwrap();
        assert_eq!(l1_error(&t, &other).unwrap(), l1_error(&t, &other).unwrap());
        let two = build_homogeneous(
            &[4],
            TypeSchema::new(["a", "b"]).unwrap(),
            LeafPopulations::Constant(vec![1.0, 1.0]),
        )
        .unwrap();
        assert!(l1_error(&t, &two).is_err());
    }

    #[test]
    fn l1_is_symmetric_for_equal_populations() {
        let h = Arc::new(Hierarchy::homogeneous(&[3]).unwrap());
        let a = crate::hierarchy::aggregate(h.clone(), TypeSchema::total(), &[vec![1.], vec![5.], vec![4.]]).unwrap();
        let b = crate::hierarchy::aggregate(h, TypeSchema::total(), &[vec![3.], vec![2.], vec![5.]]).unwrap();
        assert_eq!(l1_error(&a, &b).unwrap(), l1_error(&b, &a).unwrap());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use crate::hierarchy::Hierarchy;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn fragmentation_invariant_under_sibling_permutation(seed in any::<u64>(), rot in 1usize..4) {
            // Rotating the children of every level-2 node permutes siblings.
            let h = Hierarchy::homogeneous(&[3, 4, 2]).unwrap();
            let n = h.leaves().len();
            let mask: Vec<bool> = (0..n).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            let mut permuted = mask.clone();
            let block = 8; // leaves under each level-2 node
            for (g, chunk) in mask.chunks(block).enumerate() {
                for (i, &m) in chunk.iter().enumerate() {
                    permuted[g * block + (i + rot * 2) % block] = m;
                }
            }
            let a = fragmentation(&h, &District::from_leaf_mask(&h, &mask).unwrap()).score;
            let b = fragmentation(&h, &District::from_leaf_mask(&h, &permuted).unwrap()).score;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn fragmentation_is_bounded(seed in any::<u64>()) {
            let h = Hierarchy::homogeneous(&[2, 3, 2]).unwrap();
            let mask: Vec<bool> = (0..h.leaves().len()).map(|i| (seed >> i) & 1 == 1).collect();
            let f = fragmentation(&h, &District::from_leaf_mask(&h, &mask).unwrap()).score;
            prop_assert!(f >= 0.0 && f < h.len() as f64);
        }
    }
}
