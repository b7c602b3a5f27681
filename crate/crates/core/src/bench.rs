//! Experiment harness: run configuration, dataset generation, training,
//! benchmarking against exact optima, dynamic streams and SP sweeps.
//!
//! # Output files
//!
//! `rows.csv`, one line per instance:
//!
//! ```text
//! instance,mode,best_objective,optimum,apr,timed_out,seconds
//! ```
//!
//! `optimum` and `apr` are empty when the oracle ran out of budget; such rows
//! are left out of every mean. `seconds` is the summed wall-clock time of all
//! seeds on that instance (adaptation plus decoding), `0` when timing is off.
//!
//! `trajectory.csv`: `step,mean_apr`, the mean over instances of the
//! best-so-far approximation ratio after each update step.
//!
//! `summary.md`: a one-row Markdown table
//! `| mode | mean ApR | std | seconds/graph | instances | timed out |`.
//!
//! `sweep.csv`: `lambda_shrink,lambda_perturb,mean_apr,std_apr`.
//!
//! Floats are written in shortest round-trip form, so identical runs with
//! timing disabled produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{
    fine_tune, taco_adapt, taco_online, train_egn, train_meta, AdaptReport, EpochLog, MetaConfig,
    SpParams, TrainConfig, TrainOutcome, TuneConfig,
};
use crate::error::{Error, Result};
use crate::gnn::{ModelConfig, ParameterSet};
use crate::graph::{
    generate_dynamic, generate_er, generate_rb, list_graph_files, load_graph, save_graph,
    save_stream, Graph, RbParams,
};
use crate::objectives::{approximation_ratio, McPenalty, Problem, ProblemKind};
use crate::oracle::{greedy, solve_exact, OracleResult, DEFAULT_NODE_BUDGET};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backbone {
    Egn,
    MetaEgn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Inference,
    FineTune,
    RandomFineTune,
    Taco,
    TacoOnline,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "EGN")]
    Egn,
    #[serde(rename = "EGN-FT")]
    EgnFt,
    #[serde(rename = "EGN-rand-FT")]
    EgnRandFt,
    #[serde(rename = "EGN-TACO")]
    EgnTaco,
    #[serde(rename = "EGN-TACO-Online")]
    EgnTacoOnline,
    #[serde(rename = "MetaEGN")]
    MetaEgn,
    #[serde(rename = "MetaEGN-FT")]
    MetaEgnFt,
    #[serde(rename = "MetaEGN-TACO")]
    MetaEgnTaco,
    #[serde(rename = "MetaEGN-TACO-Online")]
    MetaEgnTacoOnline,
    #[serde(rename = "Greedy")]
    Greedy,
}

impl Mode {
    pub const ALL: [Mode; 10] = [
        Mode::Egn,
        Mode::EgnFt,
        Mode::EgnRandFt,
        Mode::EgnTaco,
        Mode::EgnTacoOnline,
        Mode::MetaEgn,
        Mode::MetaEgnFt,
        Mode::MetaEgnTaco,
        Mode::MetaEgnTacoOnline,
        Mode::Greedy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Egn => "EGN",
            Mode::EgnFt => "EGN-FT",
            Mode::EgnRandFt => "EGN-rand-FT",
            Mode::EgnTaco => "EGN-TACO",
            Mode::EgnTacoOnline => "EGN-TACO-Online",
            Mode::MetaEgn => "MetaEGN",
            Mode::MetaEgnFt => "MetaEGN-FT",
            Mode::MetaEgnTaco => "MetaEGN-TACO",
            Mode::MetaEgnTacoOnline => "MetaEGN-TACO-Online",
            Mode::Greedy => "Greedy",
        }
    }

    pub fn backbone(self) -> Backbone {
        match self {
            Mode::MetaEgn | Mode::MetaEgnFt | Mode::MetaEgnTaco | Mode::MetaEgnTacoOnline => {
                Backbone::MetaEgn
            }
            _ => Backbone::Egn,
        }
    }

    pub fn method(self) -> Method {
        match self {
            Mode::Egn | Mode::MetaEgn => Method::Inference,
            Mode::EgnFt | Mode::MetaEgnFt => Method::FineTune,
            Mode::EgnRandFt => Method::RandomFineTune,
            Mode::EgnTaco | Mode::MetaEgnTaco => Method::Taco,
            Mode::EgnTacoOnline | Mode::MetaEgnTacoOnline => Method::TacoOnline,
            Mode::Greedy => Method::Greedy,
        }
    }

    /// Whether the mode starts from a trained checkpoint.
    pub fn needs_checkpoint(self) -> bool {
        !matches!(self.method(), Method::RandomFineTune | Method::Greedy)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown mode {s:?}")))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Every hyperparameter of one experiment. Optional fields fall back to
/// problem- and mode-dependent defaults (see the `resolved_*` methods).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub mode: Mode,
    /// Defaults to 0.5 for MVC and 4 for MC.
    pub beta_train: Option<f64>,
    pub beta_tune: f64,
    pub mc_penalty: McPenalty,
    pub model: ModelConfig,
    pub train_epochs: usize,
    pub train_lr: f64,
    pub meta: MetaConfig,
    pub tune_steps: usize,
    /// Defaults to 1e-4 for EGN on MVC and 1e-3 otherwise.
    pub tune_lr: Option<f64>,
    pub seeds: usize,
    /// Defaults to 0.3 (EGN) / 0.7 (Meta-EGN) on static runs, 0.5 on dynamic runs.
    pub lambda_shrink: Option<f64>,
    pub lambda_perturb: f64,
    /// Defaults to 0.99 (EGN) / 0.9 (Meta-EGN) on static runs, 1 on dynamic runs.
    pub lambda_shrink_online: Option<f64>,
    pub sigma: f64,
    /// Choose `lambda_shrink` from `sweep_shrink` by validation ApR before a
    /// TACO run (needs `val_dir`); overrides `lambda_shrink`.
    pub select_shrink: bool,
    pub master_seed: u64,
    pub node_budget: u64,
    pub parallel: bool,
    pub timing: bool,
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub snapshot_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub sweep_shrink: Vec<f64>,
    pub sweep_perturb: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Mvc,
            mode: Mode::EgnTaco,
            beta_train: None,
            beta_tune: 0.5,
            mc_penalty: McPenalty::AllPairs,
            model: ModelConfig::default(),
            train_epochs: 20,
            train_lr: 1e-3,
            meta: MetaConfig::default(),
            tune_steps: 30,
            tune_lr: None,
            seeds: 4,
            lambda_shrink: None,
            lambda_perturb: 0.001,
            lambda_shrink_online: None,
            sigma: 1.0,
            select_shrink: false,
            master_seed: 0,
            node_budget: DEFAULT_NODE_BUDGET,
            parallel: false,
            timing: true,
            train_dir: None,
            val_dir: None,
            test_dir: None,
            snapshot_dir: None,
            checkpoint: None,
            out_dir: None,
            sweep_shrink: vec![0.1, 0.3, 0.5, 0.7, 0.9, 1.0],
            sweep_perturb: vec![0.0, 0.0001, 0.001, 0.01],
        }
    }
}

// Stream labels for seed derivation from the master seed.
const STREAM_TRAIN: u64 = 1;
const STREAM_INPUT: u64 = 2;
const STREAM_SP: u64 = 3;
const STREAM_SP_ONLINE: u64 = 4;
const STREAM_RAND_INIT: u64 = 5;
const STREAM_VAL_INPUT: u64 = 6;

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks seeds, SP coefficients and that every dataset path exists. The
    /// checkpoint is checked when loaded, since `train` creates it.
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::InvalidParameter("seeds must be >= 1".into()));
        }
        for (name, path) in [
            ("train_dir", &self.train_dir),
            ("val_dir", &self.val_dir),
            ("test_dir", &self.test_dir),
            ("snapshot_dir", &self.snapshot_dir),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(Error::InvalidParameter(format!(
                        "{name} {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        self.sp(false)?;
        self.sp_online(false)?;
        Ok(())
    }

    pub fn resolved_beta_train(&self) -> f64 {
        self.beta_train.unwrap_or(match self.problem {
            ProblemKind::Mvc => 0.5,
            ProblemKind::Mc => 4.0,
        })
    }

    pub fn resolved_tune_lr(&self) -> f64 {
        self.tune_lr
            .unwrap_or(match (self.mode.backbone(), self.problem) {
                (Backbone::Egn, ProblemKind::Mvc) => 1e-4,
                _ => 1e-3,
            })
    }

    pub fn resolved_lambda_shrink(&self, dynamic: bool) -> f64 {
        self.lambda_shrink
            .unwrap_or(match (dynamic, self.mode.backbone()) {
                (true, _) => 0.5,
                (false, Backbone::Egn) => 0.3,
                (false, Backbone::MetaEgn) => 0.7,
            })
    }

    pub fn resolved_lambda_shrink_online(&self, dynamic: bool) -> f64 {
        self.lambda_shrink_online
            .unwrap_or(match (dynamic, self.mode.backbone()) {
                (true, _) => 1.0,
                (false, Backbone::Egn) => 0.99,
                (false, Backbone::MetaEgn) => 0.9,
            })
    }

    fn problem_with_beta(&self, beta: f64) -> Result<Problem> {
        Ok(Problem::new(self.problem, beta)?.with_mc_penalty(self.mc_penalty))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            problem: self.problem_with_beta(self.resolved_beta_train())?,
            model: self.model,
            epochs: self.train_epochs,
            lr: self.train_lr,
            seed: seed::derive(self.master_seed, &[STREAM_TRAIN]),
            val_input_seed: seed::derive(self.master_seed, &[STREAM_VAL_INPUT]),
        })
    }

    pub fn tune_config(&self) -> Result<TuneConfig> {
        Ok(TuneConfig {
            problem: self.problem_with_beta(self.beta_tune)?,
            steps: self.tune_steps,
            lr: self.resolved_tune_lr(),
            seeds: self.seeds,
            input_seed: seed::derive(self.master_seed, &[STREAM_INPUT]),
            parallel: self.parallel,
            timing: self.timing,
        })
    }

    /// Warm-start SP coefficients; noise streams are keyed per instance by the caller.
    pub fn sp(&self, dynamic: bool) -> Result<SpParams> {
        let sp = SpParams {
            lambda_shrink: self.resolved_lambda_shrink(dynamic),
            lambda_perturb: self.lambda_perturb,
            sigma: self.sigma,
            rng_seed: seed::derive(self.master_seed, &[STREAM_SP]),
        };
        sp.validate()?;
        Ok(sp)
    }

    pub fn sp_online(&self, dynamic: bool) -> Result<SpParams> {
        let sp = SpParams {
            lambda_shrink: self.resolved_lambda_shrink_online(dynamic),
            lambda_perturb: self.lambda_perturb,
            sigma: self.sigma,
            rng_seed: seed::derive(self.master_seed, &[STREAM_SP_ONLINE]),
        };
        sp.validate()?;
        Ok(sp)
    }
}

/// A graph with a display name (usually its file stem).
#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    pub graph: Graph,
}

pub fn load_instances(dir: impl AsRef<Path>) -> Result<Vec<Instance>> {
    list_graph_files(dir)?
        .into_iter()
        .map(|path| {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(Instance {
                name,
                graph: load_graph(&path)?,
            })
        })
        .collect()
}

pub fn named(graphs: impl IntoIterator<Item = Graph>) -> Vec<Instance> {
    graphs
        .into_iter()
        .enumerate()
        .map(|(i, graph)| Instance {
            name: format!("{i:03}"),
            graph,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub instance: String,
    pub mode: String,
    pub best_objective: f64,
    pub optimum: Option<usize>,
    pub apr: Option<f64>,
    pub timed_out: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub problem: ProblemKind,
    pub mode: String,
    pub rows: Vec<BenchRow>,
    /// Mean best-so-far ApR per update step over instances with exact optima.
    pub trajectory: Vec<f64>,
    pub mean_apr: f64,
    pub std_apr: f64,
    pub mean_seconds: f64,
    pub timed_out: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl BenchReport {
    fn assemble(
        problem: ProblemKind,
        mode: Mode,
        instances: &[Instance],
        optima: &[OracleResult],
        outcomes: Vec<InstanceOutcome>,
    ) -> Self {
        let rows: Vec<BenchRow> = instances
            .iter()
            .zip(optima)
            .zip(&outcomes)
            .map(|((inst, opt), out)| {
                let exact = !opt.timed_out;
                BenchRow {
                    instance: inst.name.clone(),
                    mode: mode.name().into(),
                    best_objective: out.best_objective,
                    optimum: exact.then_some(opt.optimum),
                    apr: exact.then(|| approximation_ratio(out.best_objective, opt.optimum as f64)),
                    timed_out: opt.timed_out,
                    seconds: out.seconds,
                }
            })
            .collect();
        let steps = outcomes
            .iter()
            .map(|o| o.best_so_far.len())
            .max()
            .unwrap_or(1);
        let trajectory = (0..steps)
            .map(|s| {
                let ratios: Vec<f64> = outcomes
                    .iter()
                    .zip(optima)
                    .filter(|(_, opt)| !opt.timed_out)
                    .map(|(o, opt)| {
                        let v = o.best_so_far[s.min(o.best_so_far.len() - 1)];
                        approximation_ratio(v, opt.optimum as f64)
                    })
                    .collect();
                mean_std(&ratios).0
            })
            .collect();
        let aprs: Vec<f64> = rows.iter().filter_map(|r| r.apr).collect();
        let (mean_apr, std_apr) = mean_std(&aprs);
        let secs: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
        Self {
            problem,
            mode: mode.name().into(),
            timed_out: rows.iter().filter(|r| r.timed_out).count(),
            rows,
            trajectory,
            mean_apr,
            std_apr,
            mean_seconds: mean_std(&secs).0,
        }
    }

    pub fn rows_csv(&self) -> String {
        let mut out = String::from("instance,mode,best_objective,optimum,apr,timed_out,seconds\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.instance,
                r.mode,
                r.best_objective,
                r.optimum.map(|o| o.to_string()).unwrap_or_default(),
                r.apr.map(|a| a.to_string()).unwrap_or_default(),
                r.timed_out,
                r.seconds
            );
        }
        out
    }

    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("step,mean_apr\n");
        for (s, v) in self.trajectory.iter().enumerate() {
            let _ = writeln!(out, "{s},{v}");
        }
        out
    }

    pub fn summary_markdown(&self) -> String {
        let arrow = if self.problem.minimizes() {
            "↓"
        } else {
            "↑"
        };
        format!(
            "| mode | mean ApR ({arrow}) | std | seconds/graph | instances | timed out |\n\
             |---|---|---|---|---|---|\n\
             | {} | {:.5} | {:.5} | {:.3} | {} | {} |\n",
            self.mode,
            self.mean_apr,
            self.std_apr,
            self.mean_seconds,
            self.rows.len(),
            self.timed_out
        )
    }

    /// Writes `rows.csv`, `trajectory.csv` and `summary.md` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("rows.csv", self.rows_csv()),
            ("trajectory.csv", self.trajectory_csv()),
            ("summary.md", self.summary_markdown()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Per-instance result of a mode run before ApR bookkeeping.
#[derive(Debug, Clone)]
pub struct InstanceOutcome {
    pub best_objective: f64,
    pub best_so_far: Vec<f64>,
    pub seconds: f64,
    pub report: Option<AdaptReport>,
}

impl InstanceOutcome {
    fn from_report(report: AdaptReport) -> Self {
        let seconds = report
            .seeds
            .iter()
            .map(|s| s.records.last().map_or(0.0, |r| r.millis))
            .sum::<f64>()
            / 1e3;
        Self {
            best_objective: report.best.objective,
            best_so_far: report.best_so_far(),
            seconds,
            report: Some(report),
        }
    }
}

/// Exact optima for every instance (in parallel when `cfg.parallel`).
pub fn solve_optima(cfg: &RunConfig, instances: &[Instance]) -> Vec<OracleResult> {
    let solve = |inst: &Instance| solve_exact(cfg.problem, &inst.graph, cfg.node_budget);
    if cfg.parallel {
        instances.par_iter().map(solve).collect()
    } else {
        instances.iter().map(solve).collect()
    }
}

/// Runs `cfg.mode` on every instance. `theta` is required unless the mode is
/// random-init fine-tuning or greedy. Online modes chain across `instances` in order.
pub fn run_mode(
    cfg: &RunConfig,
    theta: Option<&ParameterSet>,
    instances: &[Instance],
    dynamic: bool,
) -> Result<Vec<InstanceOutcome>> {
    let tune = cfg.tune_config()?;
    let method = cfg.mode.method();
    let theta = match (method, theta) {
        (Method::RandomFineTune | Method::Greedy, _) => None,
        (_, Some(t)) => Some(t),
        (_, None) => {
            return Err(Error::InvalidParameter(format!(
                "mode {} needs a trained checkpoint",
                cfg.mode
            )))
        }
    };
    let run_one = |(idx, inst): (usize, &Instance)| -> Result<InstanceOutcome> {
        let g = &inst.graph;
        let report = match method {
            Method::Greedy => {
                let clock = std::time::Instant::now();
                let sol = greedy(cfg.problem, g);
                let seconds = if cfg.timing {
                    clock.elapsed().as_secs_f64()
                } else {
                    0.0
                };
                return Ok(InstanceOutcome {
                    best_objective: sol.objective,
                    best_so_far: vec![sol.objective],
                    seconds,
                    report: None,
                });
            }
            Method::Inference => {
                fine_tune(theta.expect("checked"), g, &TuneConfig { steps: 0, ..tune })?
            }
            Method::FineTune => fine_tune(theta.expect("checked"), g, &tune)?,
            Method::RandomFineTune => {
                let init = ParameterSet::init(
                    cfg.model,
                    seed::derive(cfg.master_seed, &[STREAM_RAND_INIT, idx as u64]),
                )?;
                fine_tune(&init, g, &tune)?
            }
            Method::Taco => {
                let mut sp = cfg.sp(dynamic)?;
                sp.rng_seed = seed::derive(sp.rng_seed, &[idx as u64]);
                taco_adapt(theta.expect("checked"), g, &sp, &tune)?
            }
            Method::TacoOnline => unreachable!("handled below"),
        };
        Ok(InstanceOutcome::from_report(report))
    };
    if method == Method::TacoOnline {
        let graphs: Vec<Graph> = instances.iter().map(|i| i.graph.clone()).collect();
        // first instance keys its SP noise exactly like the static mode's instance 0
        let mut first = cfg.sp(dynamic)?;
        first.rng_seed = seed::derive(first.rng_seed, &[0]);
        let reports = taco_online(
            theta.expect("checked"),
            &graphs,
            &first,
            &cfg.sp_online(dynamic)?,
            &tune,
        )?;
        return Ok(reports
            .into_iter()
            .map(InstanceOutcome::from_report)
            .collect());
    }
    if cfg.parallel {
        instances.par_iter().enumerate().map(run_one).collect()
    } else {
        instances.iter().enumerate().map(run_one).collect()
    }
}

/// Runs the configured mode and scores it against precomputed optima.
pub fn bench_with_optima(
    cfg: &RunConfig,
    theta: Option<&ParameterSet>,
    instances: &[Instance],
    optima: &[OracleResult],
    dynamic: bool,
) -> Result<BenchReport> {
    if optima.len() != instances.len() {
        return Err(Error::LengthMismatch {
            expected: instances.len(),
            actual: optima.len(),
        });
    }
    let outcomes = run_mode(cfg, theta, instances, dynamic)?;
    Ok(BenchReport::assemble(
        cfg.problem,
        cfg.mode,
        instances,
        optima,
        outcomes,
    ))
}

pub fn run_bench(
    cfg: &RunConfig,
    theta: Option<&ParameterSet>,
    instances: &[Instance],
) -> Result<BenchReport> {
    let optima = solve_optima(cfg, instances);
    bench_with_optima(cfg, theta, instances, &optima, false)
}

/// Like [`run_bench`] over snapshots of a dynamic stream, with the dynamic
/// shrink defaults.
pub fn run_dynamic(
    cfg: &RunConfig,
    theta: Option<&ParameterSet>,
    snapshots: &[Instance],
) -> Result<BenchReport> {
    if snapshots.is_empty() {
        return Err(Error::InvalidParameter("snapshot stream is empty".into()));
    }
    let optima = solve_optima(cfg, snapshots);
    bench_with_optima(cfg, theta, snapshots, &optima, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda_shrink: f64,
    pub lambda_perturb: f64,
    pub mean_apr: f64,
    pub std_apr: f64,
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("lambda_shrink,lambda_perturb,mean_apr,std_apr\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            c.lambda_shrink, c.lambda_perturb, c.mean_apr, c.std_apr
        );
    }
    out
}

/// TACO over the `sweep_shrink × sweep_perturb` grid (shrink-major order).
pub fn run_sweep(
    cfg: &RunConfig,
    theta: &ParameterSet,
    instances: &[Instance],
) -> Result<Vec<SweepCell>> {
    let optima = solve_optima(cfg, instances);
    let mode = match cfg.mode.backbone() {
        Backbone::Egn => Mode::EgnTaco,
        Backbone::MetaEgn => Mode::MetaEgnTaco,
    };
    let mut cells = Vec::new();
    for &shrink in &cfg.sweep_shrink {
        for &perturb in &cfg.sweep_perturb {
            let cell_cfg = RunConfig {
                mode,
                lambda_shrink: Some(shrink),
                lambda_perturb: perturb,
                ..cfg.clone()
            };
            let report = bench_with_optima(&cell_cfg, Some(theta), instances, &optima, false)?;
            cells.push(SweepCell {
                lambda_shrink: shrink,
                lambda_perturb: perturb,
                mean_apr: report.mean_apr,
                std_apr: report.std_apr,
            });
        }
    }
    Ok(cells)
}

/// Picks `lambda_shrink` for the TACO variant of `cfg.mode`'s backbone by mean
/// ApR on `val` (ties: earliest grid value). Returns the choice and every
/// `(lambda_shrink, mean_apr)` pair tried.
pub fn select_lambda_shrink(
    cfg: &RunConfig,
    theta: &ParameterSet,
    val: &[Instance],
    grid: &[f64],
) -> Result<(f64, Vec<(f64, f64)>)> {
    if grid.is_empty() || val.is_empty() {
        return Err(Error::InvalidParameter(
            "shrink selection needs a grid and validation graphs".into(),
        ));
    }
    let optima = solve_optima(cfg, val);
    let mode = match cfg.mode.backbone() {
        Backbone::Egn => Mode::EgnTaco,
        Backbone::MetaEgn => Mode::MetaEgnTaco,
    };
    let mut tried = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &shrink in grid {
        let c = RunConfig {
            mode,
            lambda_shrink: Some(shrink),
            ..cfg.clone()
        };
        let apr = bench_with_optima(&c, Some(theta), val, &optima, false)?.mean_apr;
        tried.push((shrink, apr));
        if best.is_none_or(|(_, b)| cfg.problem.better(apr, b)) {
            best = Some((shrink, apr));
        }
    }
    Ok((best.expect("non-empty grid").0, tried))
}

/// Trains the backbone named by `cfg.mode`.
pub fn run_train(cfg: &RunConfig, train: &[Graph], val: &[Graph]) -> Result<TrainOutcome> {
    let tc = cfg.train_config()?;
    match cfg.mode.backbone() {
        Backbone::Egn => train_egn(train, val, &tc),
        Backbone::MetaEgn => train_meta(train, val, &tc, &cfg.meta),
    }
}

/// Writes the checkpoint to `checkpoint` and the epoch log next to it as
/// `<checkpoint stem>.log.json`. With a validation set the best-on-validation
/// parameters are stored.
pub fn write_training(outcome: &TrainOutcome, checkpoint: impl AsRef<Path>) -> Result<PathBuf> {
    let checkpoint = checkpoint.as_ref();
    if let Some(parent) = checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    outcome
        .best_on_validation
        .as_ref()
        .unwrap_or(&outcome.params)
        .save(checkpoint)?;
    let log_path = checkpoint.with_extension("log.json");
    let log: &[EpochLog] = &outcome.log;
    fs::write(&log_path, serde_json::to_string_pretty(log)?)
        .map_err(|e| Error::io(&log_path, e))?;
    Ok(log_path)
}

/// Instance family for dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "lowercase")]
pub enum GeneratorSpec {
    /// RB model; training/validation `p` is drawn uniformly from `p_train`,
    /// test graphs use `p_test`.
    Rb {
        k: usize,
        a: f64,
        p_train: [f64; 2],
        p_test: f64,
    },
    Er {
        n: usize,
        edge_prob: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub steps: usize,
    pub flip_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSpec {
    #[serde(flatten)]
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub train: usize,
    #[serde(default)]
    pub val: usize,
    #[serde(default)]
    pub test: usize,
    #[serde(default)]
    pub seed: u64,
    /// Also write a dynamic stream (`stream/`) grown from one test-distribution graph.
    #[serde(default)]
    pub stream: Option<StreamSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    spec: GenerateSpec,
    graphs: Vec<ManifestEntry>,
}

/// Planned graph: split directory, file index and generator call.
struct Planned {
    split: &'static str,
    index: usize,
    seed: u64,
    rb: Option<RbParams>,
}

fn plan(spec: &GenerateSpec) -> Vec<Planned> {
    let mut out = Vec::new();
    for (split_id, (split, count)) in [
        ("train", spec.train),
        ("val", spec.val),
        ("test", spec.test),
    ]
    .into_iter()
    .enumerate()
    {
        let mut rng = seed::rng(seed::derive(spec.seed, &[split_id as u64]));
        for index in 0..count {
            let seed = rng.random::<u64>();
            let rb = match &spec.generator {
                GeneratorSpec::Rb {
                    k,
                    a,
                    p_train,
                    p_test,
                } => {
                    let p = if split == "test" {
                        *p_test
                    } else if p_train[0] == p_train[1] {
                        p_train[0]
                    } else {
                        rng.random_range(p_train[0]..p_train[1])
                    };
                    Some(RbParams {
                        k: *k,
                        a: *a,
                        p,
                        rng_seed: seed,
                    })
                }
                GeneratorSpec::Er { .. } => None,
            };
            out.push(Planned {
                split,
                index,
                seed,
                rb,
            });
        }
    }
    out
}

fn validate_generator(spec: &GenerateSpec) -> Result<()> {
    match &spec.generator {
        GeneratorSpec::Rb {
            k,
            a,
            p_train,
            p_test,
        } => {
            for p in [p_train[0], p_train[1], *p_test] {
                RbParams {
                    k: *k,
                    a: *a,
                    p,
                    rng_seed: 0,
                }
                .validate()?;
            }
            if p_train[0] > p_train[1] {
                return Err(Error::InvalidParameter(
                    "p_train must be an interval [lo, hi]".into(),
                ));
            }
        }
        GeneratorSpec::Er { n, edge_prob } => {
            if *n == 0 || !(0.0..=1.0).contains(edge_prob) {
                return Err(Error::InvalidParameter(format!(
                    "invalid ER parameters n={n}, p={edge_prob}"
                )));
            }
        }
    }
    if let Some(s) = &spec.stream {
        if s.steps == 0 || !(0.0..=1.0).contains(&s.flip_rate) {
            return Err(Error::InvalidParameter(format!(
                "invalid stream spec {s:?}"
            )));
        }
    }
    Ok(())
}

/// Writes `train/`, `val/`, `test/` (and optionally `stream/`) edge-list files
/// plus `manifest.json` under `dir`. Parameters are validated before anything
/// is written. Returns the paths of all graph files.
pub fn generate_dataset(spec: &GenerateSpec, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    validate_generator(spec)?;
    let dir = dir.as_ref();
    let planned = plan(spec);
    let graphs = planned
        .iter()
        .map(|p| match (&spec.generator, &p.rb) {
            (_, Some(rb)) => generate_rb(rb),
            (GeneratorSpec::Er { n, edge_prob }, None) => generate_er(*n, *edge_prob, p.seed),
            _ => unreachable!("rb plans carry parameters"),
        })
        .collect::<Result<Vec<_>>>()?;

    let mut files = Vec::new();
    let mut entries = Vec::new();
    for (p, g) in planned.iter().zip(&graphs) {
        let split_dir = dir.join(p.split);
        fs::create_dir_all(&split_dir).map_err(|e| Error::io(&split_dir, e))?;
        let rel = format!("{}/{:03}.el", p.split, p.index);
        let path = dir.join(&rel);
        save_graph(g, &path)?;
        files.push(path);
        entries.push(ManifestEntry {
            file: rel,
            seed: p.seed,
            p: p.rb.map(|r| r.p),
        });
    }
    if let Some(stream) = &spec.stream {
        let base_seed = seed::derive(spec.seed, &[10]);
        let base = match &spec.generator {
            GeneratorSpec::Rb { k, a, p_test, .. } => generate_rb(&RbParams {
                k: *k,
                a: *a,
                p: *p_test,
                rng_seed: base_seed,
            })?,
            GeneratorSpec::Er { n, edge_prob } => generate_er(*n, *edge_prob, base_seed)?,
        };
        let s = generate_dynamic(
            &base,
            stream.steps,
            stream.flip_rate,
            seed::derive(spec.seed, &[11]),
        )?;
        let paths = save_stream(&s, dir.join("stream"))?;
        for (i, path) in paths.iter().enumerate() {
            entries.push(ManifestEntry {
                file: format!(
                    "stream/{}",
                    path.file_name().unwrap_or_default().to_string_lossy()
                ),
                seed: if i == 0 {
                    base_seed
                } else {
                    seed::derive(spec.seed, &[11])
                },
                p: None,
            });
        }
        files.extend(paths);
    }
    let manifest = Manifest {
        spec: spec.clone(),
        graphs: entries,
    };
    let mpath = dir.join("manifest.json");
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&mpath, e))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_roundtrip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<Mode>(&json).unwrap(), m);
        }
        assert!("EGN-XYZ".parse::<Mode>().is_err());
    }

    #[test]
    fn paper_defaults() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.resolved_beta_train(), 0.5);
        assert_eq!(cfg.resolved_tune_lr(), 1e-4);
        assert_eq!(cfg.resolved_lambda_shrink(false), 0.3);
        assert_eq!(cfg.resolved_lambda_shrink_online(false), 0.99);
        assert_eq!(cfg.resolved_lambda_shrink(true), 0.5);
        assert_eq!(cfg.resolved_lambda_shrink_online(true), 1.0);
        assert_eq!(cfg.lambda_perturb, 0.001);
        cfg.problem = ProblemKind::Mc;
        assert_eq!(cfg.resolved_beta_train(), 4.0);
        assert_eq!(cfg.resolved_tune_lr(), 1e-3);
        cfg.mode = Mode::MetaEgnTacoOnline;
        assert_eq!(cfg.resolved_lambda_shrink(false), 0.7);
        assert_eq!(cfg.resolved_lambda_shrink_online(false), 0.9);
    }

    #[test]
    fn config_json_uses_defaults_and_rejects_typos() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"problem": "mc", "mode": "EGN-FT"}"#).unwrap();
        assert_eq!(cfg.problem, ProblemKind::Mc);
        assert_eq!(cfg.mode, Mode::EgnFt);
        assert_eq!(cfg.seeds, 4);
        assert!(serde_json::from_str::<RunConfig>(r#"{"seedz": 3}"#).is_err());
    }

    #[test]
    fn missing_paths_fail_validation() {
        let cfg = RunConfig {
            test_dir: Some("/definitely/not/here".into()),
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(RunConfig {
            seeds: 0,
            ..RunConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn sweep_csv_rows() {
        let cells = vec![SweepCell {
            lambda_shrink: 1.0,
            lambda_perturb: 0.0,
            mean_apr: 1.25,
            std_apr: 0.5,
        }];
        assert_eq!(
            sweep_csv(&cells),
            "lambda_shrink,lambda_perturb,mean_apr,std_apr\n1,0,1.25,0.5\n"
        );
    }
}
