use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use toydown::analytics::{
    allocation_objective, block_variance_homogeneous, district_error_variance, fragmentation,
    homogeneous_block_coefficients, optimal_allocation,
};
use toydown::districts::{frag_bounds, greedy, square, PlaneGrid};
use toydown::er::{self, CountyParams, ErMode, Noiser};
use toydown::exec::Execution;
use toydown::experiment::{self, ExperimentConfig, Mechanism};
use toydown::hierarchy::{build_homogeneous, LeafPopulations};
use toydown::mechanisms::{toydown_noise, Workload};
use toydown::postprocess::{minitopdown, topdown_sweep};
use toydown::{io, BudgetAllocation, District, Error, Hierarchy, Mode, Result, Seed, TypeSchema};

/// Hierarchical differentially private noising, error analytics and
/// district experiments.
#[derive(Parser)]
#[command(name = "toydown", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic inputs.
    #[command(subcommand)]
    Gen(Gen),
    /// Noise and post-process a counts file.
    Noise(NoiseArgs),
    /// Closed-form error variance of a block or district.
    Variance(VarianceArgs),
    /// Variance-minimizing budget split for a homogeneous hierarchy.
    Allocate(AllocateArgs),
    /// Draw Greedy or Square districts.
    Districts(DistrictArgs),
    /// Fragmentation bounds, optionally with sampled means.
    Frag(FragArgs),
    /// Ecological regression under noised demographics.
    Er(ErArgs),
    /// Run a full experiment from a TOML config.
    Run(RunArgs),
}

#[derive(Subcommand)]
enum Gen {
    /// Homogeneous hierarchy with constant leaf counts.
    Hierarchy {
        #[arg(long, value_delimiter = ',', required = true)]
        branching: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "total")]
        types: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "100")]
        leaf_counts: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write rook adjacency of the square tiling.
        #[arg(long)]
        adjacency: Option<PathBuf>,
    },
    /// Synthetic polarized county election file.
    County {
        #[arg(long, default_value_t = 800)]
        precincts: usize,
        #[arg(long, default_value_t = 0.25)]
        tiny_fraction: f64,
        #[arg(long, default_value_t = 0.87)]
        group_support: f64,
        #[arg(long, default_value_t = 0.48)]
        complement_support: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct BudgetArgs {
    /// Total budget (with a named split).
    #[arg(long)]
    epsilon: Option<f64>,
    /// equal, state-heavy, tract-heavy, bg-heavy or block-heavy.
    #[arg(long)]
    split: Option<String>,
    /// Explicit per-level budgets, root first.
    #[arg(long, value_delimiter = ',')]
    per_level: Option<Vec<f64>>,
    /// Nation budget for named splits on six-level hierarchies.
    #[arg(long, default_value_t = experiment::DEFAULT_NATION_BUDGET)]
    nation: f64,
}

impl BudgetArgs {
    fn resolve(&self, depth: usize) -> Result<BudgetAllocation> {
        experiment::BudgetConfig {
            epsilon: self.epsilon,
            split: self.split.clone(),
            per_level: self.per_level.clone(),
            nation: self.nation,
        }
        .resolve(depth)
    }
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long)]
    counts: PathBuf,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long, default_value = "toydown")]
    mechanism: String,
    /// unconstrained, nonneg or integer.
    #[arg(long, default_value = "unconstrained")]
    mode: String,
    /// Noise only totals.
    #[arg(long)]
    single: bool,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VarianceArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    branching: Vec<usize>,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Leaf positions forming a district; a single block when omitted.
    #[arg(long, value_delimiter = ',')]
    leaves: Option<Vec<usize>>,
}

#[derive(Args)]
struct AllocateArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    branching: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
}

#[derive(Args)]
struct DistrictArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    branching: Vec<usize>,
    /// greedy or square.
    #[arg(long)]
    method: String,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    seed: u64,
    /// CSV of `district,leaf_path` rows.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FragArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    branching: Vec<usize>,
    #[arg(long)]
    k: usize,
    /// Also sample this many Greedy and Square districts.
    #[arg(long, default_value_t = 0)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ErArgs {
    /// Election CSV; a synthetic county when omitted.
    #[arg(long)]
    elections: Option<PathBuf>,
    /// all, filtered or weighted.
    #[arg(long, default_value = "all")]
    mode: String,
    #[arg(long, default_value_t = er::DEFAULT_MIN_VOTES)]
    min_votes: u64,
    /// exact, toydown or gaussian.
    #[arg(long, default_value = "toydown")]
    noise: String,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Post-processing for toydown noise.
    #[arg(long, default_value = "nonneg")]
    postprocess: String,
    /// Gaussian sigma; calibrated to toydown when omitted.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 16)]
    replicates: usize,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    replicates: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T> {
    s.parse()
}

fn gen(cmd: Gen) -> Result<()> {
    match cmd {
        Gen::Hierarchy {
            branching,
            types,
            leaf_counts,
            out,
            adjacency,
        } => {
            let table = build_homogeneous(&branching, TypeSchema::new(types)?, LeafPopulations::Constant(leaf_counts))?;
            io::save_counts(&table, &out)?;
            if let Some(path) = adjacency {
                let h = table.hierarchy();
                let grid = PlaneGrid::square_tiling(h)?;
                io::write_adjacency(h, &grid.adjacency(), File::create(path)?)?;
            }
            println!("wrote {} nodes, {} leaves", table.hierarchy().len(), table.hierarchy().leaves().len());
        }
        Gen::County {
            precincts,
            tiny_fraction,
            group_support,
            complement_support,
            seed,
            out,
        } => {
            let params = CountyParams {
                precincts,
                tiny_fraction,
                group_support,
                complement_support,
            };
            let records = er::synthetic_county(&params, Seed(seed))?;
            io::write_elections(&records, File::create(out)?)?;
            println!("wrote {} precincts", records.len());
        }
    }
    Ok(())
}

fn noise(a: NoiseArgs) -> Result<()> {
    let counts = io::load_counts(&a.counts).map_err(|e| e.in_stage("counts"))?;
    let alloc = a
        .budget
        .resolve(counts.hierarchy().depth())
        .map_err(|e| e.in_stage("budget"))?;
    let mode: Mode = parse(&a.mode).map_err(|e| e.in_stage("config"))?;
    let mechanism: Mechanism = parse(&a.mechanism).map_err(|e| e.in_stage("config"))?;
    let seed = Seed(a.seed);
    let adjusted = match mechanism {
        Mechanism::ToyDown => {
            let (noisy, _) = toydown_noise(&counts, &alloc, !a.single, seed).map_err(|e| e.in_stage("noise"))?;
            topdown_sweep(&noisy, mode).map_err(|e| e.in_stage("postprocess"))?
        }
        Mechanism::MiniTopDown => {
            let t = counts.n_types();
            let w = Workload::new(t, vec![Workload::detailed_histogram(t, 1.0)]).map_err(|e| e.in_stage("noise"))?;
            minitopdown(&counts, &w, &alloc, mode, seed)
                .map_err(|e| e.in_stage("postprocess"))?
                .0
        }
    };
    io::save_counts(adjusted.table(), &a.out).map_err(|e| e.in_stage("output"))?;
    let original = if adjusted.table().n_types() == counts.n_types() {
        counts
    } else {
        counts.totals_table()
    };
    let l1 = toydown::analytics::l1_error(&original, adjusted.table()).map_err(|e| e.in_stage("metrics"))?;
    println!("L1 error {l1}");
    Ok(())
}

fn variance(a: VarianceArgs) -> Result<()> {
    let h = Hierarchy::homogeneous(&a.branching)?;
    let alloc = a.budget.resolve(h.depth())?;
    match a.leaves {
        None => println!("block variance {}", block_variance_homogeneous(&a.branching, &alloc)?),
        Some(leaves) => {
            let mut mask = vec![false; h.leaves().len()];
            for i in leaves {
                *mask
                    .get_mut(i)
                    .ok_or_else(|| Error::Input(format!("leaf position {i} out of range")))? = true;
            }
            let d = District::from_leaf_mask(&h, &mask)?;
            let r = district_error_variance(&h, &d, &alloc)?;
            println!("district variance {}", r.total_variance);
            for (l, v) in r.per_level_contributions.iter().enumerate() {
                println!("  level {} contributes {v}", l + 1);
            }
        }
    }
    Ok(())
}

fn allocate(a: AllocateArgs) -> Result<()> {
    let coeffs = homogeneous_block_coefficients(&a.branching);
    let alloc = optimal_allocation(&coeffs, a.epsilon)?;
    let split: Vec<String> = alloc.per_level().iter().map(|x| format!("{x:.4}")).collect();
    println!("split ({})", split.join(", "));
    println!("variance {:.4}", allocation_objective(&coeffs, alloc.per_level()));
    Ok(())
}

fn districts(a: DistrictArgs) -> Result<()> {
    let h = Arc::new(Hierarchy::homogeneous(&a.branching)?);
    let grid = if a.method == "square" {
        Some(PlaneGrid::square_tiling(&h)?)
    } else if a.method == "greedy" {
        None
    } else {
        return Err(Error::Config(format!("unknown method `{}` (greedy, square)", a.method)));
    };
    let mut rows = Vec::new();
    for i in 0..a.count {
        let mut rng = Seed(a.seed).child(i as u64).rng();
        let d = match &grid {
            Some(g) => square(&h, g, a.k, &mut rng)?,
            None => greedy(&h, a.k, &mut rng)?,
        };
        println!("district {i}: {} leaves, Frag {}", d.size(), fragmentation(&h, &d).score);
        rows.push(d);
    }
    if let Some(path) = a.out {
        let mut f = File::create(path)?;
        writeln!(f, "district,leaf_path")?;
        for (i, d) in rows.iter().enumerate() {
            for &leaf in d.leaves() {
                writeln!(f, "{i},{}", h.path(leaf))?;
            }
        }
    }
    Ok(())
}

fn frag(a: FragArgs) -> Result<()> {
    let b = frag_bounds(&a.branching, a.k)?;
    println!("greedy_upper {}", b.greedy_upper);
    println!("square_lower {}", b.square_lower);
    if !b.hypothesis_holds {
        println!("note: n_1..n_(d-2) < k, outside the bounds' hypothesis");
    }
    if a.draws > 0 {
        let h = Hierarchy::homogeneous(&a.branching)?;
        let mean = |f: &(dyn Fn(usize) -> Result<District> + Sync)| -> Result<f64> {
            let v = Execution::Parallel
                .map(a.draws, |i| f(i).map(|d| fragmentation(&h, &d).score))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            Ok(v.iter().sum::<f64>() / v.len() as f64)
        };
        let g = mean(&|i| greedy(&h, a.k, &mut Seed(a.seed).child_str("greedy").child(i as u64).rng()))?;
        println!("mean Frag(Greedy) over {} draws {g}", a.draws);
        match PlaneGrid::square_tiling(&h) {
            Ok(grid) => {
                let s = mean(&|i| square(&h, &grid, a.k, &mut Seed(a.seed).child_str("square").child(i as u64).rng()))?;
                println!("mean Frag(Square) over {} draws {s}", a.draws);
            }
            Err(e) => println!("no Square draws: {e}"),
        }
    }
    Ok(())
}

fn er_cmd(a: ErArgs) -> Result<()> {
    let seed = Seed(a.seed);
    let records = match &a.elections {
        Some(p) => io::load_elections(p)?,
        None => er::synthetic_county(&CountyParams::default(), seed.child_str("county"))?,
    };
    let mode = match parse::<ErMode>(&a.mode)? {
        ErMode::Filtered { .. } => ErMode::Filtered { min_votes: a.min_votes },
        m => m,
    };
    let toydown = Noiser::ToyDown {
        alloc: BudgetAllocation::equal(a.epsilon, 2)?,
        mode: parse(&a.postprocess)?,
    };
    let noiser = match a.noise.as_str() {
        "exact" => Noiser::Exact,
        "toydown" => toydown,
        "gaussian" => Noiser::Gaussian {
            sigma: match a.sigma {
                Some(s) => s,
                None => er::calibrate_gaussian(&records, &toydown, a.replicates, seed.child_str("calibrate"), Execution::Parallel)?,
            },
        },
        other => return Err(Error::Config(format!("unknown noise `{other}` (exact, toydown, gaussian)"))),
    };
    let s = er::noisy_er_experiment(&records, &noiser, mode, a.replicates, seed.child_str("noise"), Execution::Parallel)?;
    println!("precincts {}, mode {}", records.len(), mode.name());
    println!("exact: group {:.4}, complement {:.4}", s.exact.support_group, s.exact.support_complement);
    println!(
        "noised mean: group {:.4}, complement {:.4} over {} fits ({} failed)",
        s.mean_group,
        s.mean_complement,
        s.replicates.len() - s.failures,
        s.failures
    );
    println!(
        "variance (1e-8): group {}, complement {}",
        er::format_variance_e8(s.var_group),
        er::format_variance_e8(s.var_complement)
    );
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config).map_err(|e| e.in_stage("config"))?;
    cfg.seed = a.seed;
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if a.out.is_some() {
        cfg.output.dir = a.out;
    }
    let exec = if a.sequential { Execution::Sequential } else { Execution::Parallel };
    let report = experiment::run_experiment_with(&cfg, exec)?;
    println!("replicates {}, mean L1 {}", report.replicates.len(), report.mean_l1);
    for (info, stats) in report.districts.iter().zip(&report.district_stats) {
        println!(
            "district {}: Frag {:.4}, variance {:.4} (predicted {}), mean |error| {:.4}",
            info.district,
            info.frag,
            stats.variance,
            info.predicted_variance.map_or("-".into(), |v| format!("{v:.4}")),
            stats.mean_abs_error
        );
    }
    if let Some(er) = &report.er {
        println!(
            "ER {}: group {:.4}, complement {:.4}, variance (1e-8) {} / {}",
            er.summary.mode.name(),
            er.summary.mean_group,
            er.summary.mean_complement,
            er.var_group_e8,
            er.var_complement_e8
        );
    }
    if let Some(dir) = &cfg.output.dir {
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, result) = match cli.command {
        Command::Gen(g) => ("gen", gen(g)),
        Command::Noise(a) => ("noise", noise(a)),
        Command::Variance(a) => ("variance", variance(a)),
        Command::Allocate(a) => ("allocate", allocate(a)),
        Command::Districts(a) => ("districts", districts(a)),
        Command::Frag(a) => ("frag", frag(a)),
        Command::Er(a) => ("er", er_cmd(a)),
        Command::Run(a) => ("run", run(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Stage { stage, source }) => {
            eprintln!("toydown {name}: stage `{stage}` failed: {source}");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("toydown {name}: stage `{name}` failed: {e}");
            ExitCode::FAILURE
        }
    }
}
