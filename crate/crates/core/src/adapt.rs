//! Parameter-space optimization: Adam, distribution-level training (plain and
//! first-order meta-learning), per-instance fine-tuning, shrink-and-perturb warm
//! starts and online chaining across instance sequences.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::decode;
use crate::error::{Error, Result};
use crate::gnn::{forward, make_input, ModelConfig, NodeProbabilities, ParameterSet};
use crate::graph::Graph;
use crate::objectives::{Problem, ProblemKind, Solution};
use crate::seed;
use crate::tensor::{Tape, Tensor};

/// Moment estimates of Adam, aligned with a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParameterSet, lr: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.tensors().len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam",
                format!(
                    "{} gradients for {} parameters ({} moments)",
                    grads.len(),
                    params.tensors().len(),
                    self.m.len()
                ),
            ));
        }
        for ((g, p), m) in grads.iter().zip(params.tensors()).zip(&self.m) {
            if g.shape() != p.shape() || m.shape() != p.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("gradient {:?} for parameter {:?}", g.shape(), p.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite("adam gradient"));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        if !params.tensors().iter().all(Tensor::is_finite) {
            return Err(Error::NonFinite("adam update"));
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`]: returns the updated copy.
pub fn adam_step(
    params: &ParameterSet,
    grads: &[Tensor],
    state: &mut AdamState,
) -> Result<ParameterSet> {
    let mut out = params.clone();
    state.step(&mut out, grads)?;
    Ok(out)
}

/// Shrink-and-perturb coefficients: `theta* = shrink * theta + perturb * eps`,
/// `eps ~ N(0, sigma^2)` i.i.d. per scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpParams {
    pub lambda_shrink: f64,
    pub lambda_perturb: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_sigma() -> f64 {
    1.0
}

impl SpParams {
    pub fn new(lambda_shrink: f64, lambda_perturb: f64, rng_seed: u64) -> Result<Self> {
        let sp = Self {
            lambda_shrink,
            lambda_perturb,
            sigma: 1.0,
            rng_seed,
        };
        sp.validate()?;
        Ok(sp)
    }

    /// `(1, 0)`: leaves parameters untouched.
    pub fn identity() -> Self {
        Self {
            lambda_shrink: 1.0,
            lambda_perturb: 0.0,
            sigma: 1.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_shrink) {
            return Err(Error::InvalidParameter(format!(
                "lambda_shrink must lie in [0, 1], got {}",
                self.lambda_shrink
            )));
        }
        if !(0.0..1.0).contains(&self.lambda_perturb) {
            return Err(Error::InvalidParameter(format!(
                "lambda_perturb must lie in [0, 1), got {}",
                self.lambda_perturb
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Same coefficients with the noise seed of stream `(instance, seed_index)`.
    pub fn for_stream(&self, instance: usize, seed_index: usize) -> Self {
        Self {
            rng_seed: seed::derive(self.rng_seed, &[instance as u64, seed_index as u64]),
            ..*self
        }
    }
}

pub fn shrink_perturb(theta: &ParameterSet, sp: &SpParams) -> Result<ParameterSet> {
    sp.validate()?;
    let mut out = theta.clone();
    if sp.lambda_perturb == 0.0 {
        for t in out.tensors_mut() {
            for v in t.data_mut() {
                *v *= sp.lambda_shrink;
            }
        }
        return Ok(out);
    }
    let mut rng = seed::rng(sp.rng_seed);
    let scale = sp.lambda_perturb * sp.sigma;
    for t in out.tensors_mut() {
        for v in t.data_mut() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *v = sp.lambda_shrink * *v + scale * eps;
        }
    }
    Ok(out)
}

/// Loss, parameter gradients and probabilities of one instance.
pub struct InstanceEval {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    pub probs: NodeProbabilities,
}

pub fn evaluate_instance(
    params: &ParameterSet,
    g: &Graph,
    input: &Tensor,
    problem: &Problem,
    with_grads: bool,
) -> Result<InstanceEval> {
    let mut tape = Tape::new();
    let fp = forward(params, g, input, &mut tape)?;
    let loss = problem.loss(&mut tape, g, fp.probs)?;
    let value = tape.value(loss).item().expect("scalar loss");
    let grads = if with_grads {
        let grads = tape.backward(loss)?;
        fp.param_grads(&grads, params)
    } else {
        Vec::new()
    };
    Ok(InstanceEval {
        loss: value,
        grads,
        probs: fp.probabilities(&tape),
    })
}

/// First-order meta-learning settings: `inner_steps` plain gradient steps with
/// `inner_lr` on each task before taking the outer gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub inner_steps: usize,
    pub inner_lr: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner_steps: 1,
            inner_lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub problem: Problem,
    pub model: ModelConfig,
    pub epochs: usize,
    pub lr: f64,
    /// Seeds parameter initialization, instance order and input draws.
    pub seed: u64,
    /// Fixed input seed for validation passes.
    pub val_input_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParameterSet,
    /// Parameters after the epoch with the lowest mean validation loss.
    pub best_on_validation: Option<ParameterSet>,
    pub log: Vec<EpochLog>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, count) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn train_impl(
    train_set: &[Graph],
    validation: &[Graph],
    cfg: &TrainConfig,
    meta: Option<MetaConfig>,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let d_in = cfg.model.d_in;
    let mut params = ParameterSet::init(cfg.model, seed::derive(cfg.seed, &[0]))?;
    let mut adam = AdamState::new(&params, cfg.lr);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ParameterSet)> = None;
    let val_inputs = validation
        .iter()
        .map(|g| make_input(g, cfg.val_input_seed, d_in))
        .collect::<Result<Vec<_>>>()?;

    for epoch in 0..cfg.epochs {
        let mut rng = seed::rng(seed::derive(cfg.seed, &[1, epoch as u64]));
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(order.len());
        for idx in order {
            let g = &train_set[idx];
            let input = make_input(g, rng.random(), d_in)?;
            let eval = evaluate_instance(&params, g, &input, &cfg.problem, true)?;
            losses.push(eval.loss);
            let outer = match meta {
                Some(m) if m.inner_steps > 0 => {
                    let mut fast = params.clone();
                    let mut grads = eval.grads;
                    for _ in 0..m.inner_steps {
                        for (t, gr) in fast.tensors_mut().iter_mut().zip(&grads) {
                            for (v, &d) in t.data_mut().iter_mut().zip(gr.data()) {
                                *v -= m.inner_lr * d;
                            }
                        }
                        grads = evaluate_instance(&fast, g, &input, &cfg.problem, true)?.grads;
                    }
                    grads
                }
                _ => eval.grads,
            };
            adam.step(&mut params, &outer)?;
        }
        let val_loss = if validation.is_empty() {
            None
        } else {
            let losses = validation
                .iter()
                .zip(&val_inputs)
                .map(|(g, x)| evaluate_instance(&params, g, x, &cfg.problem, false).map(|e| e.loss))
                .collect::<Result<Vec<_>>>()?;
            let v = mean(losses);
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, params.clone()));
            }
            Some(v)
        };
        log.push(EpochLog {
            epoch,
            mean_loss: mean(losses),
            val_loss,
        });
    }
    Ok(TrainOutcome {
        params,
        best_on_validation: best.map(|(_, p)| p),
        log,
    })
}

/// Distribution-level training: one Adam step per instance per epoch.
pub fn train_egn(
    train_set: &[Graph],
    validation: &[Graph],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_impl(train_set, validation, cfg, None)
}

/// First-order MAML. With `inner_steps = 0` the update sequence is exactly
/// that of [`train_egn`]. The input seed stays fixed within a task's inner loop.
pub fn train_meta(
    train_set: &[Graph],
    validation: &[Graph],
    cfg: &TrainConfig,
    meta: &MetaConfig,
) -> Result<TrainOutcome> {
    train_impl(train_set, validation, cfg, Some(*meta))
}

/// Test-time optimization settings shared by fine-tuning and TACO.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub problem: Problem,
    pub steps: usize,
    pub lr: f64,
    /// Number of random one-hot inputs; seed index `s` uses input seed
    /// `derive(input_seed, [s])`.
    pub seeds: usize,
    pub input_seed: u64,
    /// Run seeds on the rayon pool. Results are identical either way.
    pub parallel: bool,
    /// Record wall-clock milliseconds; when false they are reported as 0.
    pub timing: bool,
}

impl TuneConfig {
    fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::InvalidParameter(
                "at least one input seed is required".into(),
            ));
        }
        Ok(())
    }

    pub fn seed_for(&self, seed_index: usize) -> u64 {
        seed::derive(self.input_seed, &[seed_index as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub objective: f64,
    pub feasible: bool,
    pub millis: f64,
}

/// Optimization trajectory of one input seed.
#[derive(Debug, Clone)]
pub struct SeedTrace {
    pub input_seed: u64,
    /// `steps + 1` records: step 0 is the starting point.
    pub records: Vec<StepRecord>,
    pub best: Solution,
    pub best_step: usize,
    pub start_params: ParameterSet,
    pub final_params: ParameterSet,
}

#[derive(Debug, Clone)]
pub struct AdaptReport {
    pub kind: ProblemKind,
    pub seeds: Vec<SeedTrace>,
    pub best: Solution,
    pub best_seed: usize,
    pub best_step: usize,
}

impl AdaptReport {
    fn from_traces(kind: ProblemKind, seeds: Vec<SeedTrace>) -> Self {
        let mut best_seed = 0;
        for (s, tr) in seeds.iter().enumerate() {
            let cur = &seeds[best_seed];
            if kind.better(tr.best.objective, cur.best.objective)
                || (tr.best.objective == cur.best.objective && tr.best_step < cur.best_step)
            {
                best_seed = s;
            }
        }
        Self {
            kind,
            best: seeds[best_seed].best.clone(),
            best_step: seeds[best_seed].best_step,
            best_seed,
            seeds,
        }
    }

    pub fn steps(&self) -> usize {
        self.seeds[0].records.len() - 1
    }

    /// Best objective found by any seed at or before each step.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::with_capacity(self.steps() + 1);
        for step in 0..=self.steps() {
            let at_step = self
                .seeds
                .iter()
                .map(|s| &s.records[step])
                .filter(|r| r.feasible)
                .map(|r| r.objective)
                .reduce(|a, b| if self.kind.better(b, a) { b } else { a });
            let prev = out.last().copied();
            let next = match (prev, at_step) {
                (Some(p), Some(c)) if self.kind.better(c, p) => c,
                (Some(p), _) => p,
                (None, Some(c)) => c,
                (None, None) => f64::NAN,
            };
            out.push(next);
        }
        out
    }

    /// JSON array of `{seed, step, loss, objective, feasible, millis}` records.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row<'a> {
            seed: usize,
            #[serde(flatten)]
            record: &'a StepRecord,
        }
        let rows: Vec<Row> = self
            .seeds
            .iter()
            .enumerate()
            .flat_map(|(s, tr)| tr.records.iter().map(move |record| Row { seed: s, record }))
            .collect();
        Ok(serde_json::to_string(&rows)?)
    }
}

fn adapt_seed(
    start: ParameterSet,
    g: &Graph,
    cfg: &TuneConfig,
    seed_index: usize,
) -> Result<SeedTrace> {
    let clock = Instant::now();
    let elapsed = || {
        if cfg.timing {
            clock.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    };
    let input_seed = cfg.seed_for(seed_index);
    let input = make_input(g, input_seed, start.config().d_in)?;
    let mut params = start.clone();
    let mut adam = AdamState::new(&params, cfg.lr);
    let mut records = Vec::with_capacity(cfg.steps + 1);
    let mut best: Option<(Solution, usize)> = None;
    for step in 0..=cfg.steps {
        let with_grads = step < cfg.steps;
        let eval = evaluate_instance(&params, g, &input, &cfg.problem, with_grads)?;
        let sol = decode(&cfg.problem, g, &eval.probs)?;
        let improves = match &best {
            None => true,
            Some((b, _)) => {
                sol.feasible && (!b.feasible || cfg.problem.kind.better(sol.objective, b.objective))
            }
        };
        records.push(StepRecord {
            step,
            loss: eval.loss,
            objective: sol.objective,
            feasible: sol.feasible,
            millis: elapsed(),
        });
        if improves {
            best = Some((sol, step));
        }
        if with_grads {
            adam.step(&mut params, &eval.grads)?;
        }
    }
    let (best, best_step) = best.expect("at least one step");
    Ok(SeedTrace {
        input_seed,
        records,
        best,
        best_step,
        start_params: start,
        final_params: params,
    })
}

fn map_seeds<T: Send>(
    cfg: &TuneConfig,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if cfg.parallel {
        (0..cfg.seeds).into_par_iter().map(f).collect()
    } else {
        (0..cfg.seeds).map(f).collect()
    }
}

/// Plain per-instance fine-tuning from `theta0` for every input seed.
pub fn fine_tune(theta0: &ParameterSet, g: &Graph, cfg: &TuneConfig) -> Result<AdaptReport> {
    cfg.validate()?;
    let traces = map_seeds(cfg, |s| adapt_seed(theta0.clone(), g, cfg, s))?;
    Ok(AdaptReport::from_traces(cfg.problem.kind, traces))
}

/// Shrink-and-perturb warm start (fresh noise per seed) followed by fine-tuning.
pub fn taco_adapt(
    theta: &ParameterSet,
    g: &Graph,
    sp: &SpParams,
    cfg: &TuneConfig,
) -> Result<AdaptReport> {
    cfg.validate()?;
    sp.validate()?;
    let traces = map_seeds(cfg, |s| {
        let start = shrink_perturb(theta, &sp.for_stream(0, s))?;
        adapt_seed(start, g, cfg, s)
    })?;
    Ok(AdaptReport::from_traces(cfg.problem.kind, traces))
}

/// Online TACO over a sequence of instances. Each seed keeps its own chain: the
/// first instance starts from `SP(theta, sp_first)`, instance `i + 1` from
/// `SP(final parameters on instance i, sp_online)`.
pub fn taco_online(
    theta: &ParameterSet,
    stream: &[Graph],
    sp_first: &SpParams,
    sp_online: &SpParams,
    cfg: &TuneConfig,
) -> Result<Vec<AdaptReport>> {
    if stream.is_empty() {
        return Err(Error::InvalidParameter(
            "online adaptation needs a non-empty stream".into(),
        ));
    }
    cfg.validate()?;
    sp_first.validate()?;
    sp_online.validate()?;
    let chains = map_seeds(cfg, |s| {
        let mut traces = Vec::with_capacity(stream.len());
        let mut start = shrink_perturb(theta, &sp_first.for_stream(0, s))?;
        for (i, g) in stream.iter().enumerate() {
            let trace = adapt_seed(start, g, cfg, s)?;
            start = shrink_perturb(&trace.final_params, &sp_online.for_stream(i + 1, s))?;
            traces.push(trace);
        }
        Ok(traces)
    })?;
    let mut per_instance: Vec<Vec<SeedTrace>> = (0..stream.len()).map(|_| Vec::new()).collect();
    for chain in chains {
        for (i, trace) in chain.into_iter().enumerate() {
            per_instance[i].push(trace);
        }
    }
    Ok(per_instance
        .into_iter()
        .map(|traces| AdaptReport::from_traces(cfg.problem.kind, traces))
        .collect())
}
