use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use slicesim_core::allocator::{build_instance, solve, validate_solution, InfeasibleReason, SolveStatus};
use slicesim_core::digest::derive_seed;
use slicesim_core::experiment::{run_grid, CellStatus, ExperimentConfig, ExperimentResult};
use slicesim_core::slice::{generate_slice, SliceRequest};
use slicesim_core::topology::{
    generate_topology, load_topology, save_topology, NetworkGraph, TopologyDefaults, DEFAULT_FANOUTS,
    DEFAULT_SERVER_COUNT,
};

const EXIT_USAGE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_CELL_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "slicesim", version, about = "Network slice embedding and co-residency experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a tree topology and write it as JSON.
    GenTopology(GenTopologyArgs),
    /// Solve a single slice allocation on an empty topology.
    Allocate(AllocateArgs),
    /// Run an experiment grid and write CSV, table, report and manifest.
    Run(RunArgs),
}

#[derive(Args)]
struct GenTopologyArgs {
    #[arg(long, default_value_t = DEFAULT_SERVER_COUNT)]
    servers: usize,
    /// Switch fanout per tier below the core, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_FANOUTS)]
    fanouts: Vec<usize>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AllocateArgs {
    #[arg(long)]
    topology: PathBuf,
    /// Slice request as JSON.
    #[arg(long, conflicts_with = "seed", required_unless_present = "seed")]
    slice: Option<PathBuf>,
    /// Generate the slice from this seed with default parameters.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides both planes' isolation level.
    #[arg(long)]
    k_rel: Option<u32>,
    /// Overrides the slice's delay budget (ms).
    #[arg(long)]
    delay_budget: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, env = "SLICESIM_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Cells run concurrently; defaults to the number of CPUs.
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict the grid to one isolation level.
    #[arg(long)]
    k_rel: Option<u32>,
    /// Restrict the grid to one ACU target.
    #[arg(long)]
    acu: Option<f64>,
    /// Topology JSON replacing the generated one.
    #[arg(long)]
    topology: Option<PathBuf>,
}

/// Exit status chosen by a subcommand.
struct Outcome(u8);

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::GenTopology(args) => gen_topology(args),
        Command::Allocate(args) => allocate(args),
        Command::Run(args) => run(args),
    };
    match result {
        Ok(Outcome(code)) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                eprintln!("\nFor more information, try '--help'.");
            }
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn gen_topology(args: GenTopologyArgs) -> anyhow::Result<Outcome> {
    if args.servers == 0 {
        return Err(usage("--servers must be at least 1"));
    }
    if args.fanouts.is_empty() || args.fanouts.contains(&0) {
        return Err(usage("--fanouts must list positive integers"));
    }
    let graph = generate_topology(args.servers, &args.fanouts, &TopologyDefaults::default())
        .map_err(|e| usage(e.to_string()))?;
    let text = save_topology(&graph);
    match args.out {
        Some(path) => {
            write(&path, &text)?;
            eprintln!(
                "wrote {} ({} servers, {} links, digest {})",
                path.display(),
                graph.servers().len(),
                graph.links().len(),
                graph.digest()
            );
        }
        None => println!("{text}"),
    }
    Ok(Outcome(0))
}

fn load_graph(path: &Path) -> anyhow::Result<NetworkGraph> {
    load_topology(&read(path)?).with_context(|| format!("loading topology {}", path.display()))
}

fn allocate(args: AllocateArgs) -> anyhow::Result<Outcome> {
    let graph = load_graph(&args.topology)?;
    let mut slice = match (&args.slice, args.seed) {
        (Some(path), _) => SliceRequest::from_json(&read(path)?).with_context(|| format!("loading slice {}", path.display()))?,
        (None, Some(seed)) => {
            let params = ExperimentConfig::default().slice;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["allocate"]));
            generate_slice(&mut rng, &params, 0)?
        }
        (None, None) => return Err(usage("one of --slice or --seed is required")),
    };
    if let Some(k) = args.k_rel {
        if k == 0 {
            return Err(usage("--k-rel must be at least 1"));
        }
        slice = slice.with_k_rel(k);
    }
    if let Some(b) = args.delay_budget {
        if !(b > 0.0 && b.is_finite()) {
            return Err(usage("--delay-budget must be positive"));
        }
        slice.delay_budget = b;
    }

    let inst = build_instance(&graph, &slice)?;
    let sol = solve(&inst, &Default::default())?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "slice {}: {} VNFs, {} virtual links, K_rel control={} data={}, delay budget {} ms",
        slice.id,
        slice.vnfs.len(),
        slice.vlinks.len(),
        slice.k_rel_control,
        slice.k_rel_data,
        slice.delay_budget
    );
    match sol.status {
        SolveStatus::Infeasible(reason) => {
            let why = match reason {
                InfeasibleReason::SystemCpuBudget => "system CPU budget",
                InfeasibleReason::NoFeasibleEmbedding => "no feasible embedding",
            };
            let _ = writeln!(out, "infeasible: {why}");
            print!("{out}");
            return Ok(Outcome(EXIT_INFEASIBLE));
        }
        SolveStatus::Optimal => {}
    }

    out.push_str("placement:\n");
    for (v, host) in slice.vnfs.iter().zip(sol.placement_ids(&inst)) {
        let _ = writeln!(out, "  vnf {} ({:?}) -> {host}", v.id, v.plane);
    }
    out.push_str("flows:\n");
    for (l, arcs) in slice.vlinks.iter().zip(&sol.flows) {
        let _ = write!(out, "  {} -> {}:", l.src, l.dst);
        if arcs.is_empty() {
            out.push_str(" co-located");
        }
        for f in arcs {
            let (a, b) = inst.arc_endpoints(f.arc);
            let _ = write!(out, " {}->{}", inst.node_ids[a], inst.node_ids[b]);
            if (f.amount - 1.0).abs() > 1e-9 {
                let _ = write!(out, "({:.4})", f.amount);
            }
        }
        out.push('\n');
    }
    let _ = writeln!(out, "objective: {:.6}", sol.objective_value);
    let _ = writeln!(out, "realized delay: {:.6} ms", sol.realized_delay);
    let report = validate_solution(&inst, &sol);
    if report.all_pass() {
        out.push_str("constraints: all pass\n");
    } else {
        for f in report.failures() {
            let _ = writeln!(out, "constraint violated: {f:?}");
        }
    }
    print!("{out}");
    if !report.all_pass() {
        bail!("solution failed validation");
    }
    Ok(Outcome(0))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    run_digest: &'a str,
    config_digest: &'a str,
    topology_digest: &'a str,
    seed: u64,
    tool_version: &'a str,
    cells: Vec<ManifestCell<'a>>,
}

#[derive(Serialize)]
struct ManifestCell<'a> {
    k_rel: u32,
    acu_target: f64,
    status: &'a CellStatus,
    runtime_s: f64,
}

fn manifest(result: &ExperimentResult) -> String {
    let m = RunManifest {
        run_digest: &result.run_digest,
        config_digest: &result.config_digest,
        topology_digest: &result.topology_digest,
        seed: result.config.seed,
        tool_version: &result.tool_version,
        cells: result
            .cells
            .iter()
            .map(|c| ManifestCell {
                k_rel: c.k_rel,
                acu_target: c.acu_target,
                status: &c.status,
                runtime_s: c.runtime_s,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&m).expect("manifest serializes")
}

fn run(args: RunArgs) -> anyhow::Result<Outcome> {
    let mut config: ExperimentConfig = match &args.config {
        Some(path) => toml::from_str(&read(path)?).with_context(|| format!("parsing config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(k) = args.k_rel {
        config.k_rel_values = vec![k];
    }
    if let Some(a) = args.acu {
        config.acu_targets = vec![a];
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    if args.parallelism == Some(0) {
        return Err(usage("--parallelism must be at least 1"));
    }
    let graph = match &args.topology {
        Some(path) => load_graph(path)?,
        None => config.topology.build()?,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.parallelism.unwrap_or(0))
        .build()
        .context("starting worker pool")?;
    let result = pool.install(|| run_grid(&config, &graph))?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write(&args.out.join("results.csv"), &result.to_csv())?;
    write(&args.out.join("success_by_acu.tsv"), &result.to_table())?;
    write(&args.out.join("report.json"), &result.to_json())?;
    write(&args.out.join("manifest.json"), &manifest(&result))?;

    print!("{}", result.to_table());
    let aborted: Vec<_> = result.aborted().collect();
    for c in &aborted {
        if let CellStatus::Aborted { reason } = &c.status {
            eprintln!("cell k_rel={} acu={} aborted: {reason}", c.k_rel, c.acu_target);
        }
    }
    Ok(Outcome(if aborted.is_empty() { 0 } else { EXIT_CELL_FAILURE }))
}
