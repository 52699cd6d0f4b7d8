//! Noise primitives and the noising stages of ToyDown and MiniTopDown.
//!
//! Every noised quantity draws from its own stream, derived from the run seed
//! and the quantity's (column, node) coordinates, so a run is reproducible
//! regardless of iteration order or thread count.

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{check_consistency, CountTable, Hierarchy, NodeId};

/// Global sensitivity of a histogram under bounded DP (one record changes
/// type, so two bins move by one each).
pub const SENSITIVITY: f64 = 2.0;

/// Variance of the Laplace noise added at a level with budget `epsilon`:
/// `2 * (SENSITIVITY / epsilon)^2 = 8 / epsilon^2`.
pub fn laplace_noise_variance(epsilon: f64) -> f64 {
    2.0 * (SENSITIVITY / epsilon).powi(2)
}

/// A 64-bit seed that can be split into independent child seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, used to key streams by label so they do not depend on column order.
fn label_key(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl Seed {
    pub fn child(self, index: u64) -> Seed {
        Seed(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    pub fn child_str(self, label: &str) -> Seed {
        self.child(label_key(label))
    }

    /// Seed for replicate `r` of an experiment.
    pub fn replicate(self, r: usize) -> Seed {
        self.child_str("replicate").child(r as u64)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Uniform draw on the open interval (0, 1) from 53 random bits.
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Inverse CDF of `Lap(b)`.
pub fn laplace_inverse_cdf(u: f64, b: f64) -> f64 {
    let c = u - 0.5;
    if c == 0.0 {
        return 0.0;
    }
    -b * c.signum() * (1.0 - 2.0 * c.abs()).ln()
}

/// One draw from the Laplace distribution with scale `b` (variance `2b^2`).
pub fn sample_laplace<R: RngCore + ?Sized>(b: f64, rng: &mut R) -> Result<f64> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::input(format!("Laplace scale must be positive, got {b}")));
    }
    Ok(laplace_inverse_cdf(open_unit(rng), b))
}

fn one_sided_geometric<R: RngCore + ?Sized>(ln_beta: f64, rng: &mut R) -> i64 {
    // Pr[G >= k] = beta^k
    (open_unit(rng).ln() / ln_beta).floor() as i64
}

/// One draw from the two-sided geometric distribution,
/// `Pr[k] = (1-beta)/(1+beta) * beta^|k|`, as the difference of two one-sided
/// geometric variables.
pub fn sample_two_sided_geometric<R: RngCore + ?Sized>(beta: f64, rng: &mut R) -> Result<i64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::input(format!(
            "geometric parameter must lie in (0, 1), got {beta}"
        )));
    }
    let ln_beta = beta.ln();
    Ok(one_sided_geometric(ln_beta, rng) - one_sided_geometric(ln_beta, rng))
}

/// Variance `2 beta / (1 - beta)^2` of the two-sided geometric distribution.
pub fn geometric_variance(beta: f64) -> f64 {
    2.0 * beta / (1.0 - beta).powi(2)
}

/// Per-level privacy budgets `epsilon_1..epsilon_d`, root first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetAllocation {
    per_level: Vec<f64>,
}

impl BudgetAllocation {
    pub fn new(per_level: Vec<f64>) -> Result<Self> {
        if per_level.is_empty() {
            return Err(Error::input("budget allocation needs at least one level"));
        }
        if let Some((l, e)) = per_level
            .iter()
            .enumerate()
            .find(|(_, e)| !(**e > 0.0) || !e.is_finite())
        {
            return Err(Error::input(format!(
                "level {} budget must be positive and finite, got {e}",
                l + 1
            )));
        }
        Ok(BudgetAllocation { per_level })
    }

    /// `epsilon / d` at each of `d` levels.
    pub fn equal(epsilon: f64, depth: usize) -> Result<Self> {
        Self::new(vec![epsilon / depth as f64; depth])
    }

    pub fn depth(&self) -> usize {
        self.per_level.len()
    }

    /// Budget of level `l` (1-based).
    pub fn level(&self, l: usize) -> f64 {
        self.per_level[l - 1]
    }

    pub fn per_level(&self) -> &[f64] {
        &self.per_level
    }

    pub fn total(&self) -> f64 {
        self.per_level.iter().sum()
    }

    pub(crate) fn check_depth(&self, h: &Hierarchy) -> Result<()> {
        if self.depth() != h.depth() {
            return Err(Error::input(format!(
                "allocation has {} levels but the hierarchy has depth {}",
                self.depth(),
                h.depth()
            )));
        }
        Ok(())
    }
}

/// One histogram of a workload: a partition of the type indices into bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub name: String,
    pub bins: Vec<Vec<usize>>,
    /// Fraction `B(Q)` of each level's budget spent on this histogram.
    pub share: f64,
}

/// A budget-weighted collection of histograms over the same type universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    n_types: usize,
    histograms: Vec<Histogram>,
}

impl Workload {
    pub fn new(n_types: usize, histograms: Vec<Histogram>) -> Result<Self> {
        if histograms.is_empty() {
            return Err(Error::input("workload has no histograms"));
        }
        for q in &histograms {
            let mut seen = vec![false; n_types];
            for &t in q.bins.iter().flatten() {
                if t >= n_types || std::mem::replace(&mut seen[t], true) {
                    return Err(Error::input(format!(
                        "histogram `{}` does not partition the {n_types} types",
                        q.name
                    )));
                }
            }
            if seen.iter().any(|s| !s) || q.bins.iter().any(Vec::is_empty) {
                return Err(Error::input(format!(
                    "histogram `{}` does not partition the {n_types} types",
                    q.name
                )));
            }
            if !(q.share >= 0.0 && q.share <= 1.0) {
                return Err(Error::input(format!(
                    "histogram `{}` share {} outside [0, 1]",
                    q.name, q.share
                )));
            }
        }
        let total: f64 = histograms.iter().map(|q| q.share).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!("histogram shares sum to {total}, not 1")));
        }
        Ok(Workload {
            n_types,
            histograms,
        })
    }

    /// The detailed histogram: one bin per type.
    pub fn detailed_histogram(n_types: usize, share: f64) -> Histogram {
        Histogram {
            name: "detailed".into(),
            bins: (0..n_types).map(|t| vec![t]).collect(),
            share,
        }
    }

    /// A one-bin histogram counting the total population.
    pub fn total_histogram(n_types: usize, share: f64) -> Histogram {
        Histogram {
            name: "total".into(),
            bins: vec![(0..n_types).collect()],
            share,
        }
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn histograms(&self) -> &[Histogram] {
        &self.histograms
    }

    /// Number of bins over all histograms (the width of the estimate table).
    pub fn n_bins(&self) -> usize {
        self.histograms.iter().map(|q| q.bins.len()).sum()
    }

    /// `(histogram index, bin)` for every flattened bin column.
    pub fn columns(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.histograms
            .iter()
            .enumerate()
            .flat_map(|(i, q)| q.bins.iter().map(move |b| (i, b.as_slice())))
    }

    fn column_labels(&self) -> Vec<String> {
        self.histograms
            .iter()
            .flat_map(|q| (0..q.bins.len()).map(move |b| format!("{}:{b}", q.name)))
            .collect()
    }
}

/// Every noise value drawn in one noising run, keyed by (node, column).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLedger {
    seed: Seed,
    columns: Vec<String>,
    draws: Vec<f64>,
    level_budget: Vec<f64>,
}

impl NoiseLedger {
    /// An all-zero ledger (no noise) for `n_nodes` nodes.
    pub fn zeros(n_nodes: usize, columns: Vec<String>, seed: Seed) -> Self {
        let draws = vec![0.0; n_nodes * columns.len()];
        NoiseLedger {
            seed,
            columns,
            draws,
            level_budget: Vec::new(),
        }
    }

    /// Builds a single-column ledger from explicit per-node draws.
    pub fn from_draws(draws: Vec<f64>, seed: Seed) -> Self {
        NoiseLedger {
            seed,
            columns: vec!["total".into()],
            draws,
            level_budget: Vec::new(),
        }
    }

    pub fn seed(&self) -> Seed {
        self.seed
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn n_nodes(&self) -> usize {
        self.draws.len() / self.columns.len().max(1)
    }

    pub fn get(&self, h: NodeId, column: usize) -> f64 {
        self.draws[h * self.columns.len() + column]
    }

    /// Draws of one column, indexed by node.
    pub fn column(&self, column: usize) -> Vec<f64> {
        (0..self.n_nodes()).map(|h| self.get(h, column)).collect()
    }

    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    /// Privacy budget spent at each level (1-based index `l` at position `l-1`),
    /// summed over the histograms released at that level.
    pub fn level_budget(&self) -> &[f64] {
        &self.level_budget
    }
}

/// Adds `Lap(2 / epsilon_l)` to every count.
///
/// With `multi = false` the types are first collapsed into one `total` column
/// and only totals are noised. Column `t` of node `h` draws from the stream
/// `seed / type-label / h`, so a one-type run on `counts.type_table(t)` with
/// the same seed reproduces the multi-attribute draws for type `t` exactly.
pub fn toydown_noise(
    counts: &CountTable,
    alloc: &BudgetAllocation,
    multi: bool,
    seed: Seed,
) -> Result<(CountTable, NoiseLedger)> {
    let h = counts.hierarchy().clone();
    alloc.check_depth(&h)?;
    if !counts.is_marked_consistent() && !check_consistency(counts, 1e-9).is_empty() {
        return Err(Error::input("ToyDown input counts are not hierarchically consistent"));
    }
    let base = if multi {
        counts.clone()
    } else {
        counts.totals_table()
    };
    let columns = base.schema().labels().to_vec();
    let w = columns.len();
    let col_seeds: Vec<Seed> = columns.iter().map(|c| seed.child_str(c)).collect();
    let mut draws = vec![0.0; h.len() * w];
    let mut values = base.values().to_vec();
    for node in 0..h.len() {
        let scale = SENSITIVITY / alloc.level(h.level(node));
        for t in 0..w {
            let mut rng = col_seeds[t].child(node as u64).rng();
            let noise = laplace_inverse_cdf(open_unit(&mut rng), scale);
            draws[node * w + t] = noise;
            values[node * w + t] += noise;
        }
    }
    let noisy = CountTable::from_values(h, base.schema().clone(), values)?;
    let ledger = NoiseLedger {
        seed,
        columns,
        draws,
        level_budget: alloc.per_level().to_vec(),
    };
    Ok((noisy, ledger))
}

/// Noisy answers to every workload bin at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadEstimates {
    pub hierarchy: Arc<Hierarchy>,
    pub workload: Workload,
    /// Node-major: `values[h * n_bins + column]`.
    pub values: Vec<f64>,
}

impl WorkloadEstimates {
    pub fn row(&self, h: NodeId) -> &[f64] {
        let w = self.workload.n_bins();
        &self.values[h * w..(h + 1) * w]
    }
}

/// Answers every bin `q` of every histogram `Q` at every node `h` with the
/// geometric mechanism: `q(a_h) + Geom(exp(-B(Q) * epsilon_l / 2))`.
pub fn workload_noise(
    counts: &CountTable,
    workload: &Workload,
    alloc: &BudgetAllocation,
    seed: Seed,
) -> Result<(WorkloadEstimates, NoiseLedger)> {
    let h = counts.hierarchy().clone();
    alloc.check_depth(&h)?;
    if workload.n_types() != counts.n_types() {
        return Err(Error::input(format!(
            "workload covers {} types, table has {}",
            workload.n_types(),
            counts.n_types()
        )));
    }
    if let Some(q) = workload.histograms().iter().find(|q| q.share <= 0.0) {
        return Err(Error::config(format!(
            "histogram `{}` has zero budget share and cannot be released",
            q.name
        )));
    }
    let labels = workload.column_labels();
    let cols: Vec<(usize, &[usize])> = workload.columns().collect();
    let w = cols.len();
    let col_seeds: Vec<Seed> = labels
        .iter()
        .map(|l| seed.child_str("workload").child_str(l))
        .collect();
    let mut draws = vec![0.0; h.len() * w];
    let mut values = vec![0.0; h.len() * w];
    for node in 0..h.len() {
        let eps = alloc.level(h.level(node));
        let row = counts.row(node);
        for (c, &(qi, bin)) in cols.iter().enumerate() {
            let share = workload.histograms()[qi].share;
            let truth: f64 = bin.iter().map(|&t| row[t]).sum();
            let beta = (-share * eps / SENSITIVITY).exp();
            let mut rng = col_seeds[c].child(node as u64).rng();
            let noise = sample_two_sided_geometric(beta, &mut rng)? as f64;
            draws[node * w + c] = noise;
            values[node * w + c] = truth + noise;
        }
    }
    let level_budget = (1..=h.depth())
        .map(|l| workload.histograms().iter().map(|q| q.share).sum::<f64>() * alloc.level(l))
        .collect();
    let ledger = NoiseLedger {
        seed,
        columns: labels,
        draws,
        level_budget,
    };
    Ok((
        WorkloadEstimates {
            hierarchy: h,
            workload: workload.clone(),
            values,
        },
        ledger,
    ))
}
