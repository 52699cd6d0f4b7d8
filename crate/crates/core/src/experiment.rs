//! Experiment configuration, orchestration and report output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analytics::{
    block_variance_homogeneous, district_error, district_error_variance, fragmentation, l1_error,
};
use crate::districts::{
    disconn, greedy, random_partition, recom_step, square, Graph, PlaneGrid, DEFAULT_DISCONN_TOLERANCE,
    DEFAULT_MAX_TREES,
};
use crate::er::{self, CountyParams, ErMode, Noiser};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::hierarchy::{build_homogeneous, CountTable, District, Hierarchy, LeafPopulations, TypeSchema};
use crate::io;
use crate::mechanisms::{toydown_noise, BudgetAllocation, Seed, Workload};
use crate::postprocess::{minitopdown, topdown_sweep, Mode};

/// Named splits of the sub-national budget over the five levels below the
/// nation (state, county, tract, block group, block), as fractions of it.
pub const SPLIT_PRESETS: [(&str, [f64; 5]); 5] = [
    ("equal", [0.2, 0.2, 0.2, 0.2, 0.2]),
    ("state-heavy", [1.0 / 2.0, 1.0 / 4.0, 1.0 / 12.0, 1.0 / 12.0, 1.0 / 12.0]),
    ("tract-heavy", [1.0 / 12.0, 1.0 / 6.0, 1.0 / 2.0, 1.0 / 6.0, 1.0 / 12.0]),
    ("bg-heavy", [1.0 / 12.0, 1.0 / 12.0, 1.0 / 6.0, 1.0 / 2.0, 1.0 / 6.0]),
    ("block-heavy", [1.0 / 12.0, 1.0 / 12.0, 1.0 / 12.0, 1.0 / 4.0, 1.0 / 2.0]),
];

/// Nation-level budget used with the presets unless configured.
pub const DEFAULT_NATION_BUDGET: f64 = 9.0;

/// Per-level budget for a named split or an explicit vector.
///
/// On a six-level hierarchy every preset spreads `epsilon` over levels 2..6
/// and the nation gets `nation`. On other depths only `equal` is accepted and
/// gives every level `epsilon / d`.
pub fn resolve_split(split: &str, epsilon: f64, depth: usize, nation: f64) -> Result<BudgetAllocation> {
    let name = split.to_ascii_lowercase();
    let Some((_, fractions)) = SPLIT_PRESETS.iter().find(|(n, _)| *n == name) else {
        let names: Vec<&str> = SPLIT_PRESETS.iter().map(|p| p.0).collect();
        return Err(Error::config(format!("unknown split `{split}` (one of {names:?})")));
    };
    if depth == 6 {
        let mut per_level = vec![nation];
        per_level.extend(fractions.iter().map(|f| f * epsilon));
        BudgetAllocation::new(per_level)
    } else if name == "equal" {
        BudgetAllocation::equal(epsilon, depth)
    } else {
        Err(Error::config(format!(
            "split `{split}` needs a six-level hierarchy, this one has {depth} levels"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyConfig {
    /// Branching factors `n_1..n_{d-1}` of a synthetic homogeneous hierarchy.
    pub branching: Option<Vec<usize>>,
    /// Counts CSV to load instead.
    pub counts_file: Option<PathBuf>,
    /// Type labels of the synthetic counts.
    #[serde(default = "default_types")]
    pub types: Vec<String>,
    /// Count of each type in every synthetic leaf.
    #[serde(default = "default_leaf_counts")]
    pub leaf_counts: Vec<f64>,
}

fn default_types() -> Vec<String> {
    vec!["total".into()]
}

fn default_leaf_counts() -> Vec<f64> {
    vec![100.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub epsilon: Option<f64>,
    pub split: Option<String>,
    pub per_level: Option<Vec<f64>>,
    #[serde(default = "default_nation")]
    pub nation: f64,
}

fn default_nation() -> f64 {
    DEFAULT_NATION_BUDGET
}

impl BudgetConfig {
    pub fn resolve(&self, depth: usize) -> Result<BudgetAllocation> {
        match (&self.per_level, &self.split) {
            (Some(_), Some(_)) => Err(Error::config("give either `split` or `per_level`, not both")),
            (Some(v), None) => {
                let alloc = BudgetAllocation::new(v.clone())?;
                if let Some(eps) = self.epsilon {
                    if (alloc.total() - eps).abs() > 1e-9 * eps.max(1.0) {
                        return Err(Error::config(format!(
                            "per-level budgets sum to {}, not epsilon {eps}",
                            alloc.total()
                        )));
                    }
                }
                Ok(alloc)
            }
            (None, split) => {
                let eps = self
                    .epsilon
                    .ok_or_else(|| Error::config("a named split needs `epsilon`"))?;
                resolve_split(split.as_deref().unwrap_or("equal"), eps, depth, self.nation)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    ToyDown,
    MiniTopDown,
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toydown" => Ok(Mechanism::ToyDown),
            "minitopdown" => Ok(Mechanism::MiniTopDown),
            _ => Err(Error::config(format!("unknown mechanism `{s}` (toydown, minitopdown)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "default_mechanism")]
    pub mechanism: Mechanism,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Noise every type (otherwise only totals).
    #[serde(default = "default_true")]
    pub multi: bool,
    /// Share of the budget spent on the total-population query in the
    /// MiniTopDown workload; the rest goes to the detailed histogram.
    #[serde(default)]
    pub total_share: f64,
}

fn default_mechanism() -> Mechanism {
    Mechanism::ToyDown
}

fn default_mode() -> Mode {
    Mode::Unconstrained
}

fn default_true() -> bool {
    true
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            mechanism: default_mechanism(),
            mode: default_mode(),
            multi: true,
            total_share: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistrictMethod {
    Greedy,
    Square,
    Disconn,
    Recom,
}

impl FromStr for DistrictMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(DistrictMethod::Greedy),
            "square" => Ok(DistrictMethod::Square),
            "disconn" => Ok(DistrictMethod::Disconn),
            "recom" => Ok(DistrictMethod::Recom),
            _ => Err(Error::config(format!(
                "unknown district method `{s}` (greedy, square, disconn, recom)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistrictConfig {
    pub method: DistrictMethod,
    pub k: usize,
    /// Districts drawn for greedy, square and disconn; recom yields all `k`.
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Level whose nodes are the building units for disconn and recom
    /// (default: leaves).
    pub unit_level: Option<usize>,
    #[serde(default = "default_recom_steps")]
    pub recom_steps: usize,
    /// Leaf adjacency CSV for recom; square-tiled hierarchies derive it.
    pub adjacency_file: Option<PathBuf>,
}

fn default_count() -> usize {
    1
}

fn default_tolerance() -> f64 {
    DEFAULT_DISCONN_TOLERANCE
}

fn default_recom_steps() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErNoise {
    Exact,
    ToyDown,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErConfig {
    /// Election CSV; a synthetic county is generated when absent.
    pub elections_file: Option<PathBuf>,
    #[serde(default)]
    pub county: CountyParams,
    #[serde(default = "default_er_mode")]
    pub mode: String,
    #[serde(default = "default_min_votes")]
    pub min_votes: u64,
    #[serde(default = "default_er_noise")]
    pub noise: ErNoise,
    /// Budget of the county/precinct ToyDown run, split equally.
    #[serde(default = "default_er_epsilon")]
    pub epsilon: f64,
    /// Post-processing of the ToyDown counts.
    #[serde(default = "default_er_postprocess")]
    pub postprocess: Mode,
    /// Gaussian standard deviation; calibrated to ToyDown's L1 error when absent.
    pub sigma: Option<f64>,
}

fn default_er_mode() -> String {
    "all".into()
}

fn default_min_votes() -> u64 {
    er::DEFAULT_MIN_VOTES
}

fn default_er_noise() -> ErNoise {
    ErNoise::ToyDown
}

fn default_er_epsilon() -> f64 {
    1.0
}

fn default_er_postprocess() -> Mode {
    Mode::NonNeg
}

impl ErConfig {
    pub fn er_mode(&self) -> Result<ErMode> {
        Ok(match ErMode::from_str(&self.mode)? {
            ErMode::Filtered { .. } => ErMode::Filtered {
                min_votes: self.min_votes,
            },
            m => m,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    /// Grid spacing of the budget fractions.
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

/// A full experiment, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replicates: usize,
    pub hierarchy: HierarchyConfig,
    pub budget: BudgetConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub districts: Option<DistrictConfig>,
    pub er: Option<ErConfig>,
    pub variance_curve: Option<CurveConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistrictInfo {
    pub district: usize,
    pub leaves: usize,
    pub population: f64,
    pub root_weight: f64,
    pub frag: f64,
    /// Closed-form error variance; only for unconstrained ToyDown.
    pub predicted_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub l1: f64,
    pub district_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistrictStats {
    pub district: usize,
    pub mean_error: f64,
    pub mean_abs_error: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub split: Vec<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErReport {
    pub noiser: Noiser,
    pub summary: er::ErSummary,
    pub var_group_e8: String,
    pub var_complement_e8: String,
}

/// Everything a run produced, plus the configuration that reproduces it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub budget: Vec<f64>,
    pub districts: Vec<DistrictInfo>,
    pub replicates: Vec<ReplicateRecord>,
    pub district_stats: Vec<DistrictStats>,
    pub mean_l1: f64,
    pub er: Option<ErReport>,
    pub variance_curve: Option<Vec<CurvePoint>>,
}

fn build_counts(cfg: &HierarchyConfig) -> Result<CountTable> {
    match (&cfg.branching, &cfg.counts_file) {
        (Some(_), Some(_)) => Err(Error::config("give either `branching` or `counts_file`")),
        (None, None) => Err(Error::config("the hierarchy needs `branching` or `counts_file`")),
        (None, Some(path)) => io::load_counts(path),
        (Some(b), None) => {
            if cfg.types.len() != cfg.leaf_counts.len() {
                return Err(Error::config("`types` and `leaf_counts` differ in length"));
            }
            build_homogeneous(
                b,
                TypeSchema::new(cfg.types.clone())?,
                LeafPopulations::Constant(cfg.leaf_counts.clone()),
            )
        }
    }
}

fn leaf_graph(h: &Hierarchy, counts: &CountTable, cfg: &DistrictConfig) -> Result<Graph> {
    let edges = match &cfg.adjacency_file {
        Some(path) => io::load_adjacency(path, h)?,
        None => PlaneGrid::square_tiling(h)
            .map_err(|e| Error::config(format!("recom needs `adjacency_file` or a square tiling: {e}")))?
            .adjacency(),
    };
    let pops = h.leaves().iter().map(|&l| counts.total(l)).collect();
    Graph::new(pops, edges)
}

fn draw_districts(
    h: &Arc<Hierarchy>,
    counts: &CountTable,
    cfg: &DistrictConfig,
    seed: Seed,
) -> Result<Vec<District>> {
    let unit_level = cfg.unit_level.unwrap_or(h.depth());
    if unit_level == 0 || unit_level > h.depth() {
        return Err(Error::config(format!("unit level {unit_level} outside 1..={}", h.depth())));
    }
    let units = h.nodes_at_level(unit_level);
    let mut out = Vec::new();
    match cfg.method {
        DistrictMethod::Greedy | DistrictMethod::Square | DistrictMethod::Disconn => {
            let grid = if cfg.method == DistrictMethod::Square {
                Some(PlaneGrid::square_tiling(h)?)
            } else {
                None
            };
            for i in 0..cfg.count {
                let mut rng = seed.child(i as u64).rng();
                let d = match cfg.method {
                    DistrictMethod::Greedy => greedy(h, cfg.k, &mut rng)?,
                    DistrictMethod::Square => square(h, grid.as_ref().expect("built above"), cfg.k, &mut rng)?,
                    _ => {
                        let pool: Vec<_> = units.iter().map(|&u| (u, counts.total(u))).collect();
                        let target = counts.total(h.root()) / cfg.k as f64;
                        District::from_units(h, &disconn(&pool, target, cfg.tolerance, &mut rng)?)?
                    }
                };
                out.push(d);
            }
        }
        DistrictMethod::Recom => {
            let leaves = leaf_graph(h, counts, cfg)?;
            let mut unit_of = vec![0; leaves.len()];
            for (u, &node) in units.iter().enumerate() {
                for i in h.leaf_range(node) {
                    unit_of[i] = u;
                }
            }
            let graph = leaves.contract(&unit_of, units.len())?;
            let mut rng = seed.rng();
            let mut p = random_partition(&graph, cfg.k, cfg.tolerance, 10 * DEFAULT_MAX_TREES, &mut rng)?;
            for _ in 0..cfg.recom_steps {
                recom_step(&graph, &mut p, cfg.tolerance, DEFAULT_MAX_TREES, &mut rng)?;
            }
            for d in 0..cfg.k {
                let members: Vec<_> = p.members(d).into_iter().map(|u| units[u]).collect();
                out.push(District::from_units(h, &members)?);
            }
        }
    }
    Ok(out)
}

fn mean_var(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = if n > 1.0 {
        v.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Grid of splits of `epsilon = 1` over `d` levels with spacing `step`,
/// excluding zero budgets, with the block-variance of each.
fn variance_curve(branching: &[usize], step: f64) -> Result<Vec<CurvePoint>> {
    if !(step > 0.0 && step < 1.0) {
        return Err(Error::config(format!("curve step {step} outside (0, 1)")));
    }
    let d = branching.len() + 1;
    let m = (1.0 / step).round() as usize;
    let mut out = Vec::new();
    let mut parts = vec![1usize; d];
    fn rec(
        i: usize,
        left: usize,
        m: usize,
        parts: &mut Vec<usize>,
        branching: &[usize],
        out: &mut Vec<CurvePoint>,
    ) -> Result<()> {
        let d = parts.len();
        if i == d - 1 {
            parts[i] = left;
            let split: Vec<f64> = parts.iter().map(|&p| p as f64 / m as f64).collect();
            let variance = block_variance_homogeneous(branching, &BudgetAllocation::new(split.clone())?)?;
            out.push(CurvePoint { split, variance });
            return Ok(());
        }
        for p in 1..=left.saturating_sub(d - 1 - i) {
            parts[i] = p;
            rec(i + 1, left - p, m, parts, branching, out)?;
        }
        Ok(())
    }
    if m < d {
        return Err(Error::config("curve step too coarse for this depth"));
    }
    rec(0, m, m, &mut parts, branching, &mut out)?;
    Ok(out)
}

fn run_er(cfg: &ErConfig, replicates: usize, seed: Seed, exec: Execution) -> Result<ErReport> {
    let records = match &cfg.elections_file {
        Some(path) => io::load_elections(path)?,
        None => er::synthetic_county(&cfg.county, seed.child_str("county"))?,
    };
    let toydown = Noiser::ToyDown {
        alloc: BudgetAllocation::equal(cfg.epsilon, 2)?,
        mode: cfg.postprocess,
    };
    let noiser = match cfg.noise {
        ErNoise::Exact => Noiser::Exact,
        ErNoise::ToyDown => toydown,
        ErNoise::Gaussian => Noiser::Gaussian {
            sigma: match cfg.sigma {
                Some(s) => s,
                None => er::calibrate_gaussian(&records, &toydown, replicates, seed.child_str("calibrate"), exec)?,
            },
        },
    };
    let summary = er::noisy_er_experiment(&records, &noiser, cfg.er_mode()?, replicates, seed.child_str("noise"), exec)?;
    Ok(ErReport {
        noiser,
        var_group_e8: er::format_variance_e8(summary.var_group),
        var_complement_e8: er::format_variance_e8(summary.var_complement),
        summary,
    })
}

/// Runs `run_experiment_with` on the default execution.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    run_experiment_with(config, Execution::default())
}

/// Builds the counts, draws districts, noises and post-processes the counts
/// `replicates` times and collects errors; then the optional ER and
/// variance-curve stages. The report depends only on the configuration.
pub fn run_experiment_with(config: &ExperimentConfig, exec: Execution) -> Result<RunReport> {
    if config.replicates == 0 {
        return Err(Error::config("replicates must be at least 1").in_stage("config"));
    }
    let seed = Seed(config.seed);
    let counts = build_counts(&config.hierarchy).map_err(|e| e.in_stage("counts"))?;
    let h = counts.hierarchy().clone();
    let alloc = config.budget.resolve(h.depth()).map_err(|e| e.in_stage("budget"))?;
    let noise = &config.noise;

    let districts = match &config.districts {
        Some(dc) => draw_districts(&h, &counts, dc, seed.child_str("districts")).map_err(|e| e.in_stage("districts"))?,
        None => Vec::new(),
    };
    let columns = if noise.multi { counts.n_types() } else { 1 } as f64;
    let theory = noise.mechanism == Mechanism::ToyDown && noise.mode == Mode::Unconstrained;
    let district_info = districts
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let predicted = if theory {
                Some(district_error_variance(&h, d, &alloc)?.total_variance * columns)
            } else {
                None
            };
            Ok(DistrictInfo {
                district: i,
                leaves: d.size(),
                population: d.leaves().iter().map(|&l| counts.total(l)).sum(),
                root_weight: d.root_weight(),
                frag: fragmentation(&h, d).score,
                predicted_variance: predicted,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("districts"))?;

    let workload = if noise.mechanism == Mechanism::MiniTopDown {
        let t = counts.n_types();
        let mut hists = vec![Workload::detailed_histogram(t, 1.0 - noise.total_share)];
        if noise.total_share > 0.0 {
            hists.push(Workload::total_histogram(t, noise.total_share));
        }
        Some(Workload::new(t, hists).map_err(|e| e.in_stage("noise"))?)
    } else {
        None
    };
    let original = if noise.multi || noise.mechanism == Mechanism::MiniTopDown {
        counts.clone()
    } else {
        counts.totals_table()
    };
    let noise_seed = seed.child_str("noise");
    let replicates: Vec<ReplicateRecord> = exec
        .map(config.replicates, |r| -> Result<ReplicateRecord> {
            let s = noise_seed.replicate(r);
            let adjusted = match &workload {
                Some(w) => minitopdown(&counts, w, &alloc, noise.mode, s).map_err(|e| e.in_stage("noise"))?.0,
                None => {
                    let (noisy, _) = toydown_noise(&counts, &alloc, noise.multi, s).map_err(|e| e.in_stage("noise"))?;
                    topdown_sweep(&noisy, noise.mode).map_err(|e| e.in_stage("postprocess"))?
                }
            };
            let t = adjusted.table();
            Ok(ReplicateRecord {
                replicate: r,
                l1: l1_error(&original, t).map_err(|e| e.in_stage("metrics"))?,
                district_errors: districts.iter().map(|d| district_error(d, &original, t)).collect(),
            })
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let district_stats = (0..districts.len())
        .map(|i| {
            let errs = replicates.iter().map(move |r| r.district_errors[i]);
            let (mean_error, variance) = mean_var(errs.clone());
            DistrictStats {
                district: i,
                mean_error,
                mean_abs_error: errs.map(f64::abs).sum::<f64>() / replicates.len() as f64,
                variance,
            }
        })
        .collect();
    let mean_l1 = replicates.iter().map(|r| r.l1).sum::<f64>() / replicates.len() as f64;

    let er = match &config.er {
        Some(ec) => Some(run_er(ec, config.replicates, seed.child_str("er"), exec).map_err(|e| e.in_stage("er"))?),
        None => None,
    };
    let variance_curve = match &config.variance_curve {
        Some(c) => {
            let branching = h
                .branching()
                .ok_or_else(|| Error::config("the variance curve needs a homogeneous hierarchy"))
                .and_then(|b| variance_curve(b, c.step))
                .map_err(|e| e.in_stage("variance-curve"))?;
            Some(branching)
        }
        None => None,
    };

    let report = RunReport {
        config: config.clone(),
        seed: config.seed,
        budget: alloc.per_level().to_vec(),
        districts: district_info,
        replicates,
        district_stats,
        mean_l1,
        er,
        variance_curve,
    };
    if let Some(dir) = &config.output.dir {
        write_report(&report, dir).map_err(|e| e.in_stage("output"))?;
    }
    Ok(report)
}

/// Plot-ready projections of a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    /// `district,mean_abs_error`
    ErrorHist,
    /// `eps_1,..,eps_d,variance`
    VarianceCurve,
    /// `replicate,x,y`
    ErScatter,
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error-hist" => Ok(PlotKind::ErrorHist),
            "variance-curve" => Ok(PlotKind::VarianceCurve),
            "er-scatter" => Ok(PlotKind::ErScatter),
            _ => Err(Error::config(format!(
                "unknown plot kind `{s}` (error-hist, variance-curve, er-scatter)"
            ))),
        }
    }
}

/// CSV text for one plot kind.
pub fn emit_plotdata(report: &RunReport, kind: PlotKind) -> Result<String> {
    let mut out = String::new();
    match kind {
        PlotKind::ErrorHist => {
            if report.district_stats.is_empty() {
                return Err(Error::Report("the report has no districts".into()));
            }
            out.push_str("district,mean_abs_error\n");
            for s in &report.district_stats {
                writeln!(out, "{},{}", s.district, s.mean_abs_error).expect("string write");
            }
        }
        PlotKind::VarianceCurve => {
            let curve = report
                .variance_curve
                .as_ref()
                .ok_or_else(|| Error::Report("the report has no variance curve".into()))?;
            let d = curve.first().map_or(0, |p| p.split.len());
            let header: Vec<String> = (1..=d).map(|l| format!("eps_{l}")).collect();
            writeln!(out, "{},variance", header.join(",")).expect("string write");
            for p in curve {
                let split: Vec<String> = p.split.iter().map(|x| x.to_string()).collect();
                writeln!(out, "{},{}", split.join(","), p.variance).expect("string write");
            }
        }
        PlotKind::ErScatter => {
            let er = report
                .er
                .as_ref()
                .ok_or_else(|| Error::Report("the report has no regression results".into()))?;
            out.push_str("replicate,x,y\n");
            for r in &er.summary.replicates {
                let mut pts = r.points.clone();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
                for (x, y) in pts {
                    writeln!(out, "{},{x},{y}", r.replicate).expect("string write");
                }
            }
        }
    }
    Ok(out)
}

/// Writes `report.json`, `replicates.csv`, `districts.csv` and every plot
/// the report supports into `dir`.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Report(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json + "\n")?;

    let mut w = csv::Writer::from_path(dir.join("replicates.csv"))?;
    w.write_record(["replicate", "l1", "district", "error"])?;
    for r in &report.replicates {
        if r.district_errors.is_empty() {
            w.write_record([r.replicate.to_string(), r.l1.to_string(), String::new(), String::new()])?;
        }
        for (d, e) in r.district_errors.iter().enumerate() {
            w.write_record([r.replicate.to_string(), r.l1.to_string(), d.to_string(), e.to_string()])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("districts.csv"))?;
    w.write_record(["district", "leaves", "population", "root_weight", "frag", "predicted_variance", "empirical_variance", "mean_abs_error"])?;
    for (info, stats) in report.districts.iter().zip(&report.district_stats) {
        w.write_record([
            info.district.to_string(),
            info.leaves.to_string(),
            info.population.to_string(),
            info.root_weight.to_string(),
            info.frag.to_string(),
            info.predicted_variance.map_or(String::new(), |v| v.to_string()),
            stats.variance.to_string(),
            stats.mean_abs_error.to_string(),
        ])?;
    }
    w.flush()?;

    for (kind, name) in [
        (PlotKind::ErrorHist, "error_hist.csv"),
        (PlotKind::VarianceCurve, "variance_curve.csv"),
        (PlotKind::ErScatter, "er_scatter.csv"),
    ] {
        if let Ok(csv) = emit_plotdata(report, kind) {
            std::fs::write(dir.join(name), csv)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
seed = 7
replicates = 8

[hierarchy]
branching = [4, 4]

[budget]
epsilon = 1.0
split = "equal"

[districts]
method = "greedy"
k = 2
count = 3
"#;

    #[test]
    fn presets_sum_to_epsilon() {
        for (name, _) in SPLIT_PRESETS {
            let a = resolve_split(name, 1.0, 6, 9.0).unwrap();
            assert_eq!(a.depth(), 6);
            assert_eq!(a.level(1), 9.0);
            assert!((a.total() - 10.0).abs() < 1e-12, "{name}");
        }
        let a = resolve_split("equal", 1.0, 3, 9.0).unwrap();
        assert_eq!(a.per_level(), &[1.0 / 3.0; 3]);
        assert!(resolve_split("tract-heavy", 1.0, 3, 9.0).is_err());
        assert!(resolve_split("nope", 1.0, 6, 9.0).is_err());
    }

    #[test]
    fn explicit_vector_must_sum_to_epsilon() {
        let b = BudgetConfig {
            epsilon: Some(1.0),
            split: None,
            per_level: Some(vec![0.5, 0.6]),
            nation: 9.0,
        };
        assert!(b.resolve(2).is_err());
        let b = BudgetConfig {
            per_level: Some(vec![0.5, 0.5]),
            ..b
        };
        assert_eq!(b.resolve(2).unwrap().per_level(), &[0.5, 0.5]);
    }

    #[test]
    fn zero_replicates_is_a_config_error() {
        let mut c = ExperimentConfig::from_toml(BASIC).unwrap();
        c.replicates = 0;
        match run_experiment(&c) {
            Err(Error::Stage { stage: "config", source }) => assert!(matches!(*source, Error::Config(_))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn runs_are_deterministic_across_executions() {
        let c = ExperimentConfig::from_toml(BASIC).unwrap();
        let a = run_experiment_with(&c, Execution::Sequential).unwrap();
        let b = run_experiment_with(&c, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.replicates.len(), 8);
        assert_eq!(a.districts.len(), 3);
        assert!(a.districts.iter().all(|d| d.frag == 1.0));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = ExperimentConfig::from_toml(BASIC).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        assert!(ExperimentConfig::from_toml("seed = 1\nreplicates = 2\nbogus = 3").is_err());
    }

    #[test]
    fn plotdata_requires_metrics() {
        let c = ExperimentConfig::from_toml(BASIC).unwrap();
        let r = run_experiment(&c).unwrap();
        let hist = emit_plotdata(&r, PlotKind::ErrorHist).unwrap();
        assert_eq!(hist.lines().count(), 4);
        assert!(matches!(emit_plotdata(&r, PlotKind::VarianceCurve), Err(Error::Report(_))));
        assert!(matches!(emit_plotdata(&r, PlotKind::ErScatter), Err(Error::Report(_))));
    }

    #[test]
    fn variance_curve_columns() {
        let pts = variance_curve(&[10, 10], 0.1).unwrap();
        // Compositions of 10 into 3 positive parts.
        assert_eq!(pts.len(), 36);
        assert!(pts.iter().all(|p| (p.split.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        let best = pts.iter().map(|p| p.variance).fold(f64::INFINITY, f64::min);
        assert!(best >= 14.52);
    }

    #[test]
    fn stage_names_failures() {
        let mut c = ExperimentConfig::from_toml(BASIC).unwrap();
        c.budget.split = Some("block-heavy".into());
        assert!(matches!(run_experiment(&c), Err(Error::Stage { stage: "budget", .. })));
        let mut c = ExperimentConfig::from_toml(BASIC).unwrap();
        c.districts.as_mut().unwrap().method = DistrictMethod::Square;
        c.districts.as_mut().unwrap().k = 2;
        assert!(matches!(run_experiment(&c), Err(Error::Stage { stage: "districts", .. })));
    }
}
