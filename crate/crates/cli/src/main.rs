use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use taco::bench::{
    generate_dataset, load_instances, named, run_bench, run_dynamic, run_sweep, run_train,
    select_lambda_shrink, sweep_csv, write_training, GenerateSpec, Mode, RunConfig,
};
use taco::gnn::ParameterSet;
use taco::graph::{import_labeled, load_graph, load_graph_dir, load_stream};
use taco::objectives::{McPenalty, ProblemKind};
use taco::oracle::{solve_exact, DEFAULT_NODE_BUDGET};

#[derive(Parser)]
#[command(
    name = "taco",
    version,
    about = "Unsupervised GNN solvers for MVC / MC with test-time adaptation"
)]
struct Cli {
    /// Worker threads for parallel runs (defaults to all cores).
    #[arg(long, env = "TACO_WORKERS", global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test edge-list files and a manifest from a JSON spec.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a backbone and write a checkpoint plus `<checkpoint>.log.json`.
    Train(RunArgs),
    /// Run a mode on every test graph and score it against exact optima.
    Bench(RunArgs),
    /// Run a mode across the snapshots of a dynamic stream, in order.
    Dynamic(RunArgs),
    /// TACO over a grid of shrink/perturb coefficients; writes `sweep.csv`.
    Sweep(RunArgs),
    /// Solve a single edge-list graph exactly and print the result as JSON.
    SolveExact {
        #[arg(long)]
        problem: ProblemKind,
        graph: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
        budget: u64,
    },
    /// Convert an edge list with arbitrary node labels into the edge-list format.
    Import { input: PathBuf, output: PathBuf },
}

/// JSON config plus flag overrides (flags win).
#[derive(Args, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<ProblemKind>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    beta_train: Option<f64>,
    #[arg(long)]
    beta_tune: Option<f64>,
    /// Max-clique penalty over all pairs (default) or non-edges only.
    #[arg(long)]
    non_edge_penalty: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    train_lr: Option<f64>,
    #[arg(long)]
    inner_steps: Option<usize>,
    #[arg(long)]
    inner_lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    tune_lr: Option<f64>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    lambda_shrink: Option<f64>,
    #[arg(long)]
    lambda_perturb: Option<f64>,
    #[arg(long)]
    lambda_shrink_online: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Pick lambda_shrink from the sweep grid by validation ApR.
    #[arg(long)]
    select_shrink: bool,
    #[arg(long)]
    node_budget: Option<u64>,
    /// Run seeds and instances on the worker pool.
    #[arg(long)]
    parallel: bool,
    /// Record zero seconds everywhere (byte-reproducible outputs).
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    train_dir: Option<PathBuf>,
    #[arg(long)]
    val_dir: Option<PathBuf>,
    #[arg(long)]
    test_dir: Option<PathBuf>,
    #[arg(long)]
    snapshot_dir: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag { $field = v; })*
            };
        }
        set! {
            problem => cfg.problem,
            mode => cfg.mode,
            master_seed => cfg.master_seed,
            beta_tune => cfg.beta_tune,
            epochs => cfg.train_epochs,
            train_lr => cfg.train_lr,
            inner_steps => cfg.meta.inner_steps,
            inner_lr => cfg.meta.inner_lr,
            steps => cfg.tune_steps,
            seeds => cfg.seeds,
            lambda_perturb => cfg.lambda_perturb,
            sigma => cfg.sigma,
            node_budget => cfg.node_budget,
        }
        if self.beta_train.is_some() {
            cfg.beta_train = self.beta_train;
        }
        if self.tune_lr.is_some() {
            cfg.tune_lr = self.tune_lr;
        }
        if self.lambda_shrink.is_some() {
            cfg.lambda_shrink = self.lambda_shrink;
        }
        if self.lambda_shrink_online.is_some() {
            cfg.lambda_shrink_online = self.lambda_shrink_online;
        }
        if self.non_edge_penalty {
            cfg.mc_penalty = McPenalty::NonEdges;
        }
        if self.select_shrink {
            cfg.select_shrink = true;
        }
        if self.parallel {
            cfg.parallel = true;
        }
        if self.no_timing {
            cfg.timing = false;
        }
        for (flag, field) in [
            (self.train_dir, &mut cfg.train_dir),
            (self.val_dir, &mut cfg.val_dir),
            (self.test_dir, &mut cfg.test_dir),
            (self.snapshot_dir, &mut cfg.snapshot_dir),
            (self.checkpoint, &mut cfg.checkpoint),
            (self.out, &mut cfg.out_dir),
        ] {
            if flag.is_some() {
                *field = flag;
            }
        }
        Ok(cfg)
    }
}

fn required<'a>(path: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    path.as_deref().with_context(|| {
        format!(
            "missing {name} (config field or --{})",
            name.replace('_', "-")
        )
    })
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Option<ParameterSet>> {
    if !cfg.mode.needs_checkpoint() {
        return Ok(None);
    }
    let path = required(&cfg.checkpoint, "checkpoint")?;
    let params = ParameterSet::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Some(params))
}

/// Applies validation-based shrink selection when requested.
fn with_selected_shrink(mut cfg: RunConfig, theta: Option<&ParameterSet>) -> Result<RunConfig> {
    let (true, Some(theta)) = (cfg.select_shrink, theta) else {
        return Ok(cfg);
    };
    let val = load_instances(required(&cfg.val_dir, "val_dir")?)?;
    let (chosen, tried) = select_lambda_shrink(&cfg, theta, &val, &cfg.sweep_shrink)?;
    for (shrink, apr) in tried {
        eprintln!("validation lambda_shrink {shrink}: mean ApR {apr}");
    }
    eprintln!("selected lambda_shrink {chosen}");
    cfg.lambda_shrink = Some(chosen);
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("worker count must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::Generate { spec, out } => {
            let text =
                fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec: GenerateSpec = serde_json::from_str(&text)?;
            let files = generate_dataset(&spec, &out)?;
            println!("wrote {} graphs to {}", files.len(), out.display());
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            cfg.validate()?;
            let train = load_graph_dir(required(&cfg.train_dir, "train_dir")?)?;
            let val = match &cfg.val_dir {
                Some(dir) => load_graph_dir(dir)?,
                None => Vec::new(),
            };
            let outcome = run_train(&cfg, &train, &val)?;
            let ckpt = cfg
                .checkpoint
                .clone()
                .unwrap_or_else(|| out_dir(&cfg).join("model.json"));
            let log = write_training(&outcome, &ckpt)?;
            if let Some(last) = outcome.log.last() {
                println!("epoch {} mean loss {}", last.epoch, last.mean_loss);
            }
            println!("checkpoint {} log {}", ckpt.display(), log.display());
        }
        Command::Bench(args) => {
            let cfg = args.resolve()?;
            cfg.validate()?;
            let theta = load_checkpoint(&cfg)?;
            let cfg = with_selected_shrink(cfg, theta.as_ref())?;
            let instances = load_instances(required(&cfg.test_dir, "test_dir")?)?;
            let report = run_bench(&cfg, theta.as_ref(), &instances)?;
            report.write(out_dir(&cfg))?;
            print!("{}", report.summary_markdown());
        }
        Command::Dynamic(args) => {
            let cfg = args.resolve()?;
            cfg.validate()?;
            let theta = load_checkpoint(&cfg)?;
            let cfg = with_selected_shrink(cfg, theta.as_ref())?;
            let stream = load_stream(required(&cfg.snapshot_dir, "snapshot_dir")?)?;
            let snapshots = named(stream.snapshots().to_vec());
            let report = run_dynamic(&cfg, theta.as_ref(), &snapshots)?;
            report.write(out_dir(&cfg))?;
            print!("{}", report.summary_markdown());
        }
        Command::Sweep(args) => {
            let cfg = args.resolve()?;
            cfg.validate()?;
            let Some(theta) = load_checkpoint(&cfg)? else {
                bail!("sweep needs a checkpoint-based mode, got {}", cfg.mode);
            };
            let instances = load_instances(required(&cfg.test_dir, "test_dir")?)?;
            let cells = run_sweep(&cfg, &theta, &instances)?;
            let dir = out_dir(&cfg);
            fs::create_dir_all(&dir)?;
            let path = dir.join("sweep.csv");
            fs::write(&path, sweep_csv(&cells))?;
            println!("wrote {} cells to {}", cells.len(), path.display());
        }
        Command::SolveExact {
            problem,
            graph,
            budget,
        } => {
            let g = load_graph(&graph)?;
            let res = solve_exact(problem, &g, budget);
            let selected: Vec<usize> = (0..g.n()).filter(|&i| res.witness[i]).collect();
            println!(
                "{}",
                serde_json::json!({
                    "problem": problem.name(),
                    "n": g.n(),
                    "optimum": res.optimum,
                    "exact": !res.timed_out,
                    "nodes_explored": res.nodes_explored,
                    "witness": selected,
                })
            );
        }
        Command::Import { input, output } => {
            let labeled = import_labeled(&input, &output)?;
            println!(
                "imported {} nodes, {} edges",
                labeled.graph.n(),
                labeled.graph.edge_count()
            );
        }
    }
    Ok(())
}
