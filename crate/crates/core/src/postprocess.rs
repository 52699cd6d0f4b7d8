//! Top-down least-squares post-processing.
//!
//! Consistency at level `l` only couples siblings through their parent's
//! (already fixed) value, so each level decomposes into independent
//! per-family problems that are solved in closed form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::CountTable;
use crate::mechanisms::{workload_noise, BudgetAllocation, NoiseLedger, Seed, Workload, WorkloadEstimates};

/// Constraints imposed on the adjusted counts besides consistency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Unconstrained,
    #[serde(rename = "nonneg")]
    NonNeg,
    #[serde(rename = "integer")]
    NonNegInteger,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unconstrained" => Ok(Mode::Unconstrained),
            "nonneg" => Ok(Mode::NonNeg),
            "integer" => Ok(Mode::NonNegInteger),
            other => Err(Error::input(format!(
                "unknown mode `{other}` (expected unconstrained, nonneg or integer)"
            ))),
        }
    }
}

/// Hierarchically consistent output of [`topdown_sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedTable {
    table: CountTable,
    mode: Mode,
}

impl AdjustedTable {
    pub fn table(&self) -> &CountTable {
        &self.table
    }

    pub fn into_table(self) -> CountTable {
        self.table
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// Least-squares adjustment of `child_estimates` to sum to `parent_value`:
/// every child moves by the same amount `(parent - sum) / n`.
pub fn project_children_unconstrained(parent_value: f64, child_estimates: &[f64]) -> Vec<f64> {
    let n = child_estimates.len() as f64;
    let shift = (parent_value - child_estimates.iter().sum::<f64>()) / n;
    child_estimates.iter().map(|&v| v + shift).collect()
}

/// Euclidean projection of `v` onto `{x >= 0, sum x = total}` by sorting and
/// thresholding.
pub fn project_simplex(v: &[f64], total: f64) -> Result<Vec<f64>> {
    if !(total >= 0.0) {
        return Err(Error::input(format!("simplex total must be non-negative, got {total}")));
    }
    if v.is_empty() {
        return Err(Error::input("cannot project an empty family"));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    let mut theta = None;
    for (j, &u) in sorted.iter().enumerate() {
        prefix += u;
        let t = (prefix - total) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = Some(t);
        }
    }
    // No positive support only when total == 0.
    let Some(theta) = theta else {
        return Ok(vec![0.0; v.len()]);
    };
    Ok(v.iter().map(|&x| (x - theta).max(0.0)).collect())
}

/// Largest-remainder rounding of non-negative `values` to integers summing to
/// `total`. Ties in the fractional part go to the lower index.
pub fn integerize(values: &[f64], total: i64) -> Result<Vec<i64>> {
    if let Some(v) = values.iter().find(|v| !(**v >= -1e-9)) {
        return Err(Error::input(format!("cannot integerize negative value {v}")));
    }
    let sum: f64 = values.iter().sum();
    if (sum - total as f64).abs() > 1e-6 * (1.0f64).max(total.abs() as f64) {
        return Err(Error::input(format!(
            "values sum to {sum}, expected integer total {total}"
        )));
    }
    let mut out: Vec<i64> = values.iter().map(|v| v.max(0.0).floor() as i64).collect();
    let remainder = total - out.iter().sum::<i64>();
    let mut order: Vec<usize> = (0..values.len()).collect();
    let frac = |i: usize| values[i].max(0.0) - values[i].max(0.0).floor();
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    for &i in order.iter().take(remainder.max(0) as usize) {
        out[i] += 1;
    }
    Ok(out)
}

/// Makes a noisy table hierarchically consistent, level by level from the
/// root, independently per type.
///
/// The root keeps its noisy value (clamped at zero in the non-negative modes,
/// and rounded in integer mode). Each family is then fitted to its parent's
/// adjusted value by [`project_children_unconstrained`] or
/// [`project_simplex`]; integer mode rounds each family with [`integerize`].
pub fn topdown_sweep(noisy: &CountTable, mode: Mode) -> Result<AdjustedTable> {
    if let Some(v) = noisy.values().iter().find(|v| !v.is_finite()) {
        return Err(Error::input(format!("noisy table contains non-finite value {v}")));
    }
    let h = noisy.hierarchy().clone();
    let w = noisy.n_types();
    let mut values = noisy.values().to_vec();
    let root = h.root();
    for t in 0..w {
        let r = &mut values[root * w + t];
        *r = match mode {
            Mode::Unconstrained => *r,
            Mode::NonNeg => r.max(0.0),
            Mode::NonNegInteger => r.max(0.0).round(),
        };
    }
    let mut est = Vec::new();
    for l in 1..h.depth() {
        for &parent in h.nodes_at_level(l) {
            let children = h.children(parent);
            for t in 0..w {
                let target = values[parent * w + t];
                est.clear();
                est.extend(children.iter().map(|&c| noisy.get(c, t)));
                let fitted = match mode {
                    Mode::Unconstrained => project_children_unconstrained(target, &est),
                    Mode::NonNeg => project_simplex(&est, target)?,
                    Mode::NonNegInteger => {
                        let proj = project_simplex(&est, target)?;
                        integerize(&proj, target as i64)?
                            .into_iter()
                            .map(|v| v as f64)
                            .collect()
                    }
                };
                for (&c, v) in children.iter().zip(fitted) {
                    values[c * w + t] = v;
                }
            }
        }
    }
    let table = CountTable::from_values(h, noisy.schema().clone(), values)?.mark_consistent();
    Ok(AdjustedTable { table, mode })
}

/// Per-node least-squares estimate of the detailed counts from noisy
/// workload answers: minimizes `sum_q (q(alpha_h) - a_hat_{h,q})^2` through
/// the normal equations.
pub fn reconcile_workload(estimates: &WorkloadEstimates, schema: crate::TypeSchema) -> Result<CountTable> {
    let wl = &estimates.workload;
    let n_types = wl.n_types();
    if schema.len() != n_types {
        return Err(Error::input(format!(
            "schema has {} types, workload {}",
            schema.len(),
            n_types
        )));
    }
    let cols: Vec<&[usize]> = wl.columns().map(|(_, b)| b).collect();
    let mut design = DMatrix::<f64>::zeros(cols.len(), n_types);
    for (r, bin) in cols.iter().enumerate() {
        for &t in *bin {
            design[(r, t)] = 1.0;
        }
    }
    let gram = design.transpose() * &design;
    let chol = gram.cholesky().ok_or_else(|| {
        Error::config("workload normal equations are singular; include a histogram that identifies every type")
    })?;
    let h = estimates.hierarchy.clone();
    let mut values = Vec::with_capacity(h.len() * n_types);
    for node in 0..h.len() {
        let rhs = design.transpose() * DVector::from_column_slice(estimates.row(node));
        values.extend(chol.solve(&rhs).iter());
    }
    CountTable::from_values(h, schema, values)
}

/// MiniTopDown: geometric workload noise, per-node reconciliation to
/// detailed counts, then the top-down sweep in `mode`.
pub fn minitopdown(
    counts: &CountTable,
    workload: &Workload,
    alloc: &BudgetAllocation,
    mode: Mode,
    seed: Seed,
) -> Result<(AdjustedTable, NoiseLedger)> {
    let (estimates, ledger) = workload_noise(counts, workload, alloc, seed)?;
    let detailed = reconcile_workload(&estimates, counts.schema().clone())?;
    Ok((topdown_sweep(&detailed, mode)?, ledger))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{build_homogeneous, check_consistency, Hierarchy, LeafPopulations, TypeSchema};
    use crate::mechanisms::toydown_noise;
    use std::sync::Arc;

    /// Independent oracle: minimize sum (x - v)^2 subject to sum x = total by
    /// solving the KKT system [2I 1; 1^T 0] [x; mu] = [2v; total].
    fn kkt_oracle(v: &[f64], total: f64) -> Vec<f64> {
        let n = v.len();
        let mut m = DMatrix::<f64>::zeros(n + 1, n + 1);
        let mut b = DVector::<f64>::zeros(n + 1);
        for i in 0..n {
            m[(i, i)] = 2.0;
            m[(i, n)] = 1.0;
            m[(n, i)] = 1.0;
            b[i] = 2.0 * v[i];
        }
        b[n] = total;
        let x = m.lu().solve(&b).unwrap();
        x.iter().take(n).copied().collect()
    }

    #[test]
    fn unconstrained_family_examples() {
        assert_eq!(project_children_unconstrained(12.0, &[3.0, 4.0, 5.0]), vec![3.0, 4.0, 5.0]);
        assert_eq!(project_children_unconstrained(0.0, &[1.0, -1.0]), vec![1.0, -1.0]);
        let got = project_children_unconstrained(10.0, &[3.0, 4.0, 5.0]);
        let want = kkt_oracle(&[3.0, 4.0, 5.0], 10.0);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
        assert!((got[0] - 7.0 / 3.0).abs() < 1e-12);
        assert!((got[2] - 13.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_examples() {
        assert_eq!(project_simplex(&[1.0, 2.0, 3.0], 6.0).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(project_simplex(&[5.0, -1.0], 6.0).unwrap(), vec![6.0, 0.0]);
        assert_eq!(project_simplex(&[-3.0, 1.0], 2.0).unwrap(), vec![0.0, 2.0]);
        assert_eq!(project_simplex(&[-3.0, 1.0], 0.0).unwrap(), vec![0.0, 0.0]);
        assert!(project_simplex(&[1.0], -1.0).is_err());
    }

    #[test]
    fn integerize_examples() {
        assert_eq!(integerize(&[2.4, 3.6], 6).unwrap(), vec![2, 4]);
        assert_eq!(integerize(&[2.5, 3.5], 6).unwrap(), vec![3, 3]);
        assert_eq!(integerize(&[1.0, 0.0, 7.0], 8).unwrap(), vec![1, 0, 7]);
        assert!(integerize(&[-1.0, 3.0], 2).is_err());
        assert!(integerize(&[1.0, 3.0], 5).is_err());
    }

    #[test]
    fn reconcile_detailed_plus_total() {
        let h = Arc::new(Hierarchy::homogeneous(&[1]).unwrap());
        let wl = Workload::new(
            2,
            vec![Workload::detailed_histogram(2, 0.5), Workload::total_histogram(2, 0.5)],
        )
        .unwrap();
        let est = WorkloadEstimates {
            hierarchy: h,
            workload: wl,
            values: vec![3.0, 5.0, 10.0, 3.0, 5.0, 8.0],
        };
        let t = reconcile_workload(&est, TypeSchema::new(["a", "b"]).unwrap()).unwrap();
        assert!((t.get(0, 0) - 11.0 / 3.0).abs() < 1e-12);
        assert!((t.get(0, 1) - 17.0 / 3.0).abs() < 1e-12);
        // Already consistent: unchanged.
        assert!((t.get(1, 0) - 3.0).abs() < 1e-12);
        assert!((t.get(1, 1) - 5.0).abs() < 1e-12);
        // Stationarity: A^T (A x - b) = 0 with residuals (2/3, 2/3, -2/3).
        let r: [f64; 3] = [t.get(0, 0) - 3.0, t.get(0, 1) - 5.0, t.get(0, 0) + t.get(0, 1) - 10.0];
        assert!((r[0] + r[2]).abs() < 1e-12 && (r[1] + r[2]).abs() < 1e-12);
    }

    #[test]
    fn reconcile_detailed_only_is_identity() {
        let h = Arc::new(Hierarchy::homogeneous(&[1]).unwrap());
        let wl = Workload::new(3, vec![Workload::detailed_histogram(3, 1.0)]).unwrap();
        let vals = vec![1.5, -2.0, 7.0, 0.0, 4.0, 9.0];
        let est = WorkloadEstimates {
            hierarchy: h,
            workload: wl,
            values: vals.clone(),
        };
        let t = reconcile_workload(&est, TypeSchema::new(["a", "b", "c"]).unwrap()).unwrap();
        for (a, b) in t.values().iter().zip(&vals) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reconcile_singular_workload() {
        let h = Arc::new(Hierarchy::homogeneous(&[1]).unwrap());
        let wl = Workload::new(2, vec![Workload::total_histogram(2, 1.0)]).unwrap();
        let est = WorkloadEstimates {
            hierarchy: h,
            workload: wl,
            values: vec![3.0, 3.0],
        };
        assert!(matches!(
            reconcile_workload(&est, TypeSchema::new(["a", "b"]).unwrap()),
            Err(Error::Config(_))
        ));
    }

    fn noisy_fixture(mode_seed: u64) -> (CountTable, CountTable) {
        let schema = TypeSchema::new(["a", "b"]).unwrap();
        let t = build_homogeneous(&[3, 4, 2], schema, LeafPopulations::Constant(vec![1.0, 3.0])).unwrap();
        let alloc = BudgetAllocation::equal(0.5, 4).unwrap();
        let (noisy, _) = toydown_noise(&t, &alloc, true, Seed(mode_seed)).unwrap();
        (t, noisy)
    }

    #[test]
    fn every_mode_is_consistent() {
        let (_, noisy) = noisy_fixture(1);
        for mode in [Mode::Unconstrained, Mode::NonNeg, Mode::NonNegInteger] {
            let adj = topdown_sweep(&noisy, mode).unwrap();
            assert!(check_consistency(adj.table(), 1e-6).is_empty(), "{mode:?}");
            if mode != Mode::Unconstrained {
                assert!(adj.table().values().iter().all(|&v| v >= -1e-9));
            }
            if mode == Mode::NonNegInteger {
                assert!(adj.table().values().iter().all(|v| v.fract() == 0.0));
            }
        }
    }

    #[test]
    fn zero_noise_returns_raw_counts() {
        let (t, _) = noisy_fixture(1);
        for mode in [Mode::Unconstrained, Mode::NonNeg, Mode::NonNegInteger] {
            let adj = topdown_sweep(&t, mode).unwrap();
            assert_eq!(adj.table().values(), t.values());
        }
    }

    #[test]
    fn unconstrained_sweep_is_idempotent() {
        let (_, noisy) = noisy_fixture(2);
        let once = topdown_sweep(&noisy, Mode::Unconstrained).unwrap();
        let twice = topdown_sweep(once.table(), Mode::Unconstrained).unwrap();
        let max = once
            .table()
            .values()
            .iter()
            .zip(twice.table().values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max < 1e-9);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let (_, mut noisy) = noisy_fixture(3);
        noisy.set(2, 0, f64::NAN);
        assert!(topdown_sweep(&noisy, Mode::NonNeg).is_err());
    }

    #[test]
    fn minitopdown_is_consistent_nonneg_integer() {
        let schema = TypeSchema::new(["a", "b", "c"]).unwrap();
        let t = build_homogeneous(&[4, 5], schema, LeafPopulations::Constant(vec![2.0, 0.0, 9.0])).unwrap();
        let wl = Workload::new(
            3,
            vec![Workload::detailed_histogram(3, 0.1), Workload::total_histogram(3, 0.9)],
        )
        .unwrap();
        let alloc = BudgetAllocation::equal(1.0, 3).unwrap();
        let (adj, ledger) = minitopdown(&t, &wl, &alloc, Mode::NonNegInteger, Seed(5)).unwrap();
        assert!(check_consistency(adj.table(), 1e-6).is_empty());
        assert!(adj.table().values().iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
        for l in 1..=3 {
            assert!((ledger.level_budget()[l - 1] - alloc.level(l)).abs() < 1e-12);
        }
    }
}
