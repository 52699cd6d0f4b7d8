//! Ecological regression of vote share on a demographic share, with and
//! without noised demographics.

use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::hierarchy::{aggregate, CountTable, HierarchyBuilder, TypeSchema};
use crate::mechanisms::{toydown_noise, BudgetAllocation, Seed};
use crate::postprocess::{topdown_sweep, Mode};

/// Default vote threshold for the filtered mode.
pub const DEFAULT_MIN_VOTES: u64 = 10;

/// One precinct: demographic counts, turnout and the candidate's vote share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecinctRecord {
    pub id: String,
    /// Voting-age population of the group of interest.
    pub group_vap: f64,
    pub total_vap: f64,
    pub votes_cast: u64,
    /// Candidate vote share, 0 when no votes were cast.
    pub y: f64,
}

impl PrecinctRecord {
    pub fn new(id: impl Into<String>, group_vap: f64, total_vap: f64, votes_cast: u64, candidate_votes: u64) -> Result<Self> {
        let id = id.into();
        if !(group_vap >= 0.0 && total_vap >= group_vap) {
            return Err(Error::input(format!("precinct {id}: need 0 <= group <= total VAP")));
        }
        if candidate_votes > votes_cast {
            return Err(Error::input(format!("precinct {id}: candidate votes exceed votes cast")));
        }
        let y = if votes_cast == 0 {
            0.0
        } else {
            candidate_votes as f64 / votes_cast as f64
        };
        Ok(PrecinctRecord {
            id,
            group_vap,
            total_vap,
            votes_cast,
            y,
        })
    }

    /// Group share of VAP, 0 for an empty precinct.
    pub fn x(&self) -> f64 {
        if self.total_vap > 0.0 {
            self.group_vap / self.total_vap
        } else {
            0.0
        }
    }
}

/// Which precincts enter the fit and how they are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErMode {
    All,
    /// Precincts with at least `min_votes` votes cast.
    Filtered { min_votes: u64 },
    /// Every precinct, weighted by votes cast.
    Weighted,
}

impl FromStr for ErMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ErMode::All),
            "filtered" => Ok(ErMode::Filtered {
                min_votes: DEFAULT_MIN_VOTES,
            }),
            "weighted" => Ok(ErMode::Weighted),
            _ => Err(Error::config(format!("unknown ER mode `{s}` (all, filtered, weighted)"))),
        }
    }
}

impl ErMode {
    pub fn name(&self) -> &'static str {
        match self {
            ErMode::All => "all",
            ErMode::Filtered { .. } => "filtered",
            ErMode::Weighted => "weighted",
        }
    }
}

/// A fitted line `y = intercept + slope x` read off at `x = 1` and `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub support_group: f64,
    pub support_complement: f64,
    pub n_points: usize,
    pub mode: ErMode,
}

/// Weighted least squares line through `(x, y)` points. Without weights every
/// point counts once.
pub fn fit_line(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || weights.is_some_and(|w| w.len() != xs.len()) {
        return Err(Error::input("x, y and weight lengths differ"));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    let mut positive = 0;
    for i in 0..xs.len() {
        let wi = w(i);
        if wi < 0.0 || !wi.is_finite() {
            return Err(Error::input(format!("bad weight {wi}")));
        }
        if wi > 0.0 {
            positive += 1;
        }
        sw += wi;
        sx += wi * xs[i];
        sy += wi * ys[i];
    }
    if positive < 2 {
        return Err(Error::Fit(format!("{positive} points with positive weight")));
    }
    let (mx, my) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for i in 0..xs.len() {
        let dx = xs[i] - mx;
        sxx += w(i) * dx * dx;
        sxy += w(i) * dx * (ys[i] - my);
    }
    if !(sxx > 1e-12 * sw) {
        return Err(Error::Fit("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

fn result(slope: f64, intercept: f64, n_points: usize, mode: ErMode) -> RegressionResult {
    RegressionResult {
        slope,
        intercept,
        support_group: intercept + slope,
        support_complement: intercept,
        n_points,
        mode,
    }
}

/// Least squares fit of `y` on `x` over the records, optionally weighted.
pub fn fit_ols(records: &[PrecinctRecord], weights: Option<&[f64]>) -> Result<RegressionResult> {
    let xs: Vec<f64> = records.iter().map(PrecinctRecord::x).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.y).collect();
    let (slope, intercept) = fit_line(&xs, &ys, weights)?;
    let mode = if weights.is_some() {
        ErMode::Weighted
    } else {
        ErMode::All
    };
    Ok(result(slope, intercept, records.len(), mode))
}

/// Records with at least `min_votes` votes cast.
pub fn filter_precincts(records: &[PrecinctRecord], min_votes: u64) -> Vec<PrecinctRecord> {
    records
        .iter()
        .filter(|r| r.votes_cast >= min_votes)
        .cloned()
        .collect()
}

/// Fit under a mode: filter, weight by votes cast, or neither.
pub fn fit_mode(records: &[PrecinctRecord], mode: ErMode) -> Result<RegressionResult> {
    let fit = match mode {
        ErMode::All => fit_ols(records, None)?,
        ErMode::Filtered { min_votes } => fit_ols(&filter_precincts(records, min_votes), None)?,
        ErMode::Weighted => {
            let w: Vec<f64> = records.iter().map(|r| r.votes_cast as f64).collect();
            fit_ols(records, Some(&w))?
        }
    };
    Ok(RegressionResult { mode, ..fit })
}

/// Standard deviation of per-entry Gaussian noise whose expected total absolute
/// error over `b * c` entries is `e_avg`.
pub fn gaussian_sigma(e_avg: f64, b: usize, c: usize) -> Result<f64> {
    if b * c == 0 || !(e_avg >= 0.0) {
        return Err(Error::input(format!("need b*c > 0 and E_avg >= 0, got {b}, {c}, {e_avg}")));
    }
    Ok(e_avg * std::f64::consts::PI.sqrt() / (b as f64 * c as f64 * std::f64::consts::SQRT_2))
}

/// How demographic counts are perturbed in each replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Noiser {
    /// No noise.
    Exact,
    /// Laplace noise on a county/precinct hierarchy followed by the top-down
    /// sweep.
    ToyDown { alloc: BudgetAllocation, mode: Mode },
    /// Independent `N(0, sigma^2)` on every precinct count.
    Gaussian { sigma: f64 },
}

/// County-to-precinct table with types `group` and `other`.
pub fn precinct_table(records: &[PrecinctRecord]) -> Result<CountTable> {
    if records.is_empty() {
        return Err(Error::input("no precincts"));
    }
    let mut b = HierarchyBuilder::new("county");
    for r in records {
        b.add_child(0, r.id.clone())?;
    }
    let h = Arc::new(b.build()?);
    let leaves: Vec<Vec<f64>> = records
        .iter()
        .map(|r| vec![r.group_vap, r.total_vap - r.group_vap])
        .collect();
    aggregate(h, TypeSchema::new(["group", "other"])?, &leaves)
}

/// Noised `(group, other)` counts per precinct.
pub fn noise_precincts(records: &[PrecinctRecord], noiser: &Noiser, seed: Seed) -> Result<Vec<[f64; 2]>> {
    match noiser {
        Noiser::Exact => Ok(records
            .iter()
            .map(|r| [r.group_vap, r.total_vap - r.group_vap])
            .collect()),
        Noiser::Gaussian { sigma } => {
            let normal = Normal::new(0.0, *sigma)
                .map_err(|e| Error::config(format!("bad sigma {sigma}: {e}")))?;
            Ok(records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let mut rng = seed.child_str("gaussian").child(i as u64).rng();
                    [
                        r.group_vap + normal.sample(&mut rng),
                        r.total_vap - r.group_vap + normal.sample(&mut rng),
                    ]
                })
                .collect())
        }
        Noiser::ToyDown { alloc, mode } => {
            let table = precinct_table(records)?;
            let (noisy, _) = toydown_noise(&table, alloc, true, seed)?;
            let adjusted = topdown_sweep(&noisy, *mode)?;
            let t = adjusted.table();
            Ok(t.hierarchy()
                .leaves()
                .iter()
                .map(|&leaf| [t.get(leaf, 0), t.get(leaf, 1)])
                .collect())
        }
    }
}

/// Total absolute error of noised precinct counts.
pub fn precinct_l1(records: &[PrecinctRecord], noised: &[[f64; 2]]) -> f64 {
    records
        .iter()
        .zip(noised)
        .map(|(r, n)| (n[0] - r.group_vap).abs() + (n[1] - (r.total_vap - r.group_vap)).abs())
        .sum()
}

/// One noised replicate of the regression.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFit {
    pub replicate: usize,
    pub fit: Option<RegressionResult>,
    pub error: Option<String>,
    /// Precincts dropped because their noised total was not positive.
    pub dropped: usize,
    /// Total absolute error of the noised counts.
    pub l1: f64,
    /// `(x, y)` points that entered the fit.
    pub points: Vec<(f64, f64)>,
}

/// Estimates across replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErSummary {
    pub mode: ErMode,
    pub exact: RegressionResult,
    pub replicates: Vec<ReplicateFit>,
    pub mean_group: f64,
    pub mean_complement: f64,
    /// Sample variance (divisor `n - 1`; 0 for a single fit).
    pub var_group: f64,
    pub var_complement: f64,
    pub failures: usize,
}

impl ErSummary {
    pub fn fits(&self) -> impl Iterator<Item = &RegressionResult> {
        self.replicates.iter().filter_map(|r| r.fit.as_ref())
    }

    /// Mean total absolute error of the noised counts.
    pub fn mean_l1(&self) -> f64 {
        self.replicates.iter().map(|r| r.l1).sum::<f64>() / self.replicates.len() as f64
    }
}

/// A variance in units of `1e-8`, to two significant digits.
pub fn format_variance_e8(v: f64) -> String {
    let scaled = v / 1e-8;
    if scaled == 0.0 || !scaled.is_finite() {
        return format!("{scaled}");
    }
    let digits = 1 - scaled.abs().log10().floor() as i32;
    if digits > 0 {
        format!("{:.*}", digits as usize, scaled)
    } else {
        let unit = 10f64.powi(-digits);
        format!("{}", (scaled / unit).round() * unit)
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

fn replicate_fit(
    records: &[PrecinctRecord],
    noiser: &Noiser,
    mode: ErMode,
    r: usize,
    seed: Seed,
) -> Result<ReplicateFit> {
    let noised = noise_precincts(records, noiser, seed)?;
    let l1 = precinct_l1(records, &noised);
    let mut kept = Vec::with_capacity(records.len());
    let mut dropped = 0;
    for (rec, n) in records.iter().zip(&noised) {
        let total = n[0] + n[1];
        if total > 0.0 {
            kept.push(PrecinctRecord {
                group_vap: n[0],
                total_vap: total,
                ..rec.clone()
            });
        } else {
            dropped += 1;
        }
    }
    let included: Vec<&PrecinctRecord> = match mode {
        ErMode::Filtered { min_votes } => kept.iter().filter(|p| p.votes_cast >= min_votes).collect(),
        _ => kept.iter().collect(),
    };
    let points = included.iter().map(|p| (p.x(), p.y)).collect();
    let (fit, error) = match fit_mode(&kept, mode) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(ReplicateFit {
        replicate: r,
        fit,
        error,
        dropped,
        l1,
        points,
    })
}

/// Noises the demographics `replicates` times, refits each time and
/// summarizes the estimates. Votes and vote shares are never noised; `x` is
/// recomputed from the noised counts without clipping.
pub fn noisy_er_experiment(
    records: &[PrecinctRecord],
    noiser: &Noiser,
    mode: ErMode,
    replicates: usize,
    seed: Seed,
    exec: Execution,
) -> Result<ErSummary> {
    if replicates == 0 {
        return Err(Error::config("replicates must be at least 1"));
    }
    let exact = fit_mode(records, mode)?;
    let runs: Vec<ReplicateFit> = exec
        .map(replicates, |r| replicate_fit(records, noiser, mode, r, seed.replicate(r)))
        .into_iter()
        .collect::<Result<_>>()?;
    let g: Vec<f64> = runs.iter().filter_map(|r| r.fit.map(|f| f.support_group)).collect();
    let c: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.fit.map(|f| f.support_complement))
        .collect();
    let (mean_group, var_group) = mean_var(&g);
    let (mean_complement, var_complement) = mean_var(&c);
    Ok(ErSummary {
        mode,
        exact,
        failures: runs.len() - g.len(),
        replicates: runs,
        mean_group,
        mean_complement,
        var_group,
        var_complement,
    })
}

/// Gaussian `sigma` matching the mean total L1 error that `toydown` noise
/// produces on these precincts over `replicates` runs.
pub fn calibrate_gaussian(
    records: &[PrecinctRecord],
    toydown: &Noiser,
    replicates: usize,
    seed: Seed,
    exec: Execution,
) -> Result<f64> {
    if replicates == 0 {
        return Err(Error::config("replicates must be at least 1"));
    }
    let l1: Vec<f64> = exec
        .map(replicates, |r| {
            noise_precincts(records, toydown, seed.replicate(r)).map(|n| precinct_l1(records, &n))
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let e_avg = l1.iter().sum::<f64>() / replicates as f64;
    gaussian_sigma(e_avg, records.len(), 2)
}

/// Parameters of the synthetic polarized county.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CountyParams {
    pub precincts: usize,
    /// Share of precincts with fewer than 10 votes cast.
    pub tiny_fraction: f64,
    pub group_support: f64,
    pub complement_support: f64,
}

impl Default for CountyParams {
    fn default() -> Self {
        CountyParams {
            precincts: 800,
            tiny_fraction: 0.25,
            group_support: 0.87,
            complement_support: 0.48,
        }
    }
}

/// A county whose precinct vote shares follow the planted supports:
/// candidate votes are binomial with probability
/// `x * group_support + (1 - x) * complement_support`, with turnout drawn
/// independently of `x`. Tiny precincts have 1 to 30 residents and 0 to 9
/// votes; the others have 800 to 3000 residents and at least 240 votes.
pub fn synthetic_county(params: &CountyParams, seed: Seed) -> Result<Vec<PrecinctRecord>> {
    let p = params;
    if p.precincts < 2 || !(0.0..=1.0).contains(&p.tiny_fraction) {
        return Err(Error::config("need at least 2 precincts and a tiny fraction in [0, 1]"));
    }
    for s in [p.group_support, p.complement_support] {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::config(format!("support {s} outside [0, 1]")));
        }
    }
    let n_tiny = (p.tiny_fraction * p.precincts as f64).round() as usize;
    let mut rng = seed.child_str("county").rng();
    let mut out = Vec::with_capacity(p.precincts);
    for i in 0..p.precincts {
        let tiny = i < n_tiny;
        let total: u64 = if tiny {
            rng.random_range(1..=30)
        } else {
            rng.random_range(800..=3000)
        };
        let group = (rng.random::<f64>() * total as f64).round();
        let votes = if tiny {
            rng.random_range(0..=9u64.min(total))
        } else {
            (rng.random_range(0.3..0.5) * total as f64).round() as u64
        };
        let x = group / total as f64;
        let share = x * p.group_support + (1.0 - x) * p.complement_support;
        let cand = Binomial::new(votes, share)
            .map_err(|e| Error::Generation(e.to_string()))?
            .sample(&mut rng);
        out.push(PrecinctRecord::new(format!("P{i:04}"), group, total as f64, votes, cand)?);
    }
    Ok(out)
}
