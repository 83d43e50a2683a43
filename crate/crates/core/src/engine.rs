//! The simulation loop.
//!
//! Each iteration: draw compute delays, let the scheduler pick active sets,
//! take a local SGD step on every worker that participates, mix the results
//! with the Metropolis matrix of the active sets, and record metrics. After
//! the gradient phase the workers keep mixing with zero gradients until they
//! agree.

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::consensus::{build_metropolis, MixingMatrix};
use crate::error::{Error, Result};
use crate::learning::{self, model, Dataset, LearningRateSchedule, ParamVector, Shard};
use crate::rng::batch_stream;
use crate::scheduler::{ParticipationPlan, Scheduler, StrategyConfig};
use crate::straggler::{self, DelayDraw, DelayKind, DelayModel};
use crate::topology::{coverage_path, CoveragePath, Graph};

#[derive(Clone, Debug)]
pub struct WorkerState<'a> {
    pub index: usize,
    pub params: ParamVector,
    pub shard: &'a Shard,
}

/// Metrics of one gradient iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub global_loss: f64,
    pub test_error: f64,
    /// `max_j ||w_j - w_bar||_2`
    pub consensus_disagreement: f64,
    pub duration: f64,
    pub backup_counts: Vec<usize>,
    pub theta: Option<f64>,
    /// Mean squared distance of participating workers' stochastic gradients
    /// from their average.
    pub gradient_spread: f64,
}

impl IterationRecord {
    pub fn mean_backup(&self) -> f64 {
        self.backup_counts.iter().sum::<usize>() as f64 / self.backup_counts.len() as f64
    }

    pub fn max_backup(&self) -> usize {
        self.backup_counts.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub seed: u64,
    pub strategy: String,
    pub records: Vec<IterationRecord>,
    /// Parameters after the consensus phase.
    pub final_params: Vec<ParamVector>,
    /// Sum of gradient-phase iteration durations.
    pub total_sim_time: f64,
    pub consensus_phase_iters: usize,
    pub consensus_phase_converged: bool,
    pub disagreement_after_phase: f64,
    /// First iteration whose global loss reached the configured target.
    pub iterations_to_target: Option<usize>,
    pub time_to_target: Option<f64>,
    pub coverage_path_len: Option<usize>,
}

impl RunResult {
    pub fn mean_duration(&self) -> Option<f64> {
        let d: Vec<f64> = self.records.iter().map(|r| r.duration).collect();
        straggler::mean_duration(&d).ok()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.global_loss)
    }
}

/// What the observer sees after each gradient iteration.
pub struct StepTrace<'a> {
    pub k: usize,
    pub draw: &'a DelayDraw,
    pub plan: &'a ParticipationPlan,
    pub matrix: &'a MixingMatrix,
    pub tilde: &'a [ParamVector],
    pub params: &'a [ParamVector],
    pub record: &'a IterationRecord,
}

pub trait Observer {
    fn on_step(&mut self, _step: &StepTrace<'_>) {}

    /// Test hook: lets a harness tamper with a plan before it is used.
    fn adjust_plan(&mut self, _plan: &mut ParticipationPlan) {}
}

pub struct NoObserver;

impl Observer for NoObserver {}

impl<F: FnMut(&StepTrace<'_>)> Observer for F {
    fn on_step(&mut self, step: &StepTrace<'_>) {
        self(step)
    }
}

/// Everything one replication needs, fully materialized.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub graph: Graph,
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub shards: Vec<Shard>,
    pub strategy: StrategyConfig,
    pub path: Option<CoveragePath>,
    pub delay: DelayModel,
    pub k: usize,
    pub batch: usize,
    pub eta: LearningRateSchedule,
    pub phase_tol: f64,
    pub phase_max_iters: usize,
    pub epsilon_target: Option<f64>,
    pub stop_at_target: bool,
    pub straggler_applies_local: bool,
    pub seed: u64,
}

impl Simulation {
    pub fn from_config(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let graph = cfg.graph.build()?;
        let (train, test) = cfg.dataset.load(cfg.base_dir.as_deref())?;
        let shards = learning::partition(&train, graph.n(), cfg.partition, seed)?;
        let strategy = cfg.strategy_config(&graph)?;
        Self::new(
            graph,
            train,
            test,
            shards,
            strategy,
            DelayModel::new(cfg.delay.clone(), seed)?,
            seed,
        )
        .map(|s| Self {
            k: cfg.k,
            batch: cfg.batch,
            eta: cfg.eta,
            phase_tol: cfg.consensus_phase.tol,
            phase_max_iters: cfg.consensus_phase.max_iters,
            epsilon_target: cfg.epsilon_target,
            stop_at_target: cfg.stop_at_target,
            straggler_applies_local: cfg.straggler_applies_local,
            ..s
        })
    }

    /// Defaults for everything but the problem itself.
    pub fn new(
        graph: Graph,
        train: Dataset,
        test: Option<Dataset>,
        shards: Vec<Shard>,
        strategy: StrategyConfig,
        delay: DelayModel,
        seed: u64,
    ) -> Result<Self> {
        if graph.n() < 2 {
            return Err(Error::Graph("need at least 2 workers".into()));
        }
        if shards.len() != graph.n() {
            return Err(Error::Dimension {
                expected: graph.n(),
                got: shards.len(),
            });
        }
        strategy.validate(&graph)?;
        let path = Some(coverage_path(&graph)?);
        Ok(Self {
            graph,
            train,
            test,
            shards,
            strategy,
            path,
            delay,
            k: 500,
            batch: 32,
            eta: LearningRateSchedule::default(),
            phase_tol: 1e-6,
            phase_max_iters: 500,
            epsilon_target: None,
            stop_at_target: false,
            straggler_applies_local: false,
            seed,
        })
    }

    pub fn with_strategy(&self, strategy: StrategyConfig) -> Result<Self> {
        strategy.validate(&self.graph)?;
        Ok(Self {
            strategy,
            ..self.clone()
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn run(&self) -> Result<RunResult> {
        self.run_observed(&mut NoObserver)
    }

    pub fn run_observed(&self, observer: &mut dyn Observer) -> Result<RunResult> {
        let n = self.n();
        let dim = self.train.param_len();
        let mut params = vec![ParamVector::zeros(dim); n];
        let mut scheduler = Scheduler::new(&self.graph, self.strategy.clone(), self.path.clone())?;
        let eval_set = self.test.as_ref().unwrap_or(&self.train);

        let mut records = Vec::with_capacity(self.k);
        let mut total_time = 0.0;
        let mut hit: Option<(usize, f64)> = None;

        for k in 1..=self.k {
            let draw = straggler::draw(&self.delay, k, n)?;
            let mut plan = scheduler.next_plan(&self.graph, &draw)?;
            observer.adjust_plan(&mut plan);

            let eta = self.eta.eta_at(k);
            let mut tilde = Vec::with_capacity(n);
            let mut grads = Vec::new();
            for (j, w) in params.iter().enumerate() {
                if plan.is_idle(j) && !self.straggler_applies_local {
                    tilde.push(w.clone());
                    continue;
                }
                let ws = WorkerState {
                    index: j,
                    params: w.clone(),
                    shard: &self.shards[j],
                };
                let g = self.stochastic_gradient(&ws, k)?;
                let next = local_update(&ws, eta, &g);
                if !next.is_finite() {
                    return Err(Error::Divergence {
                        iteration: k,
                        worker: j,
                    });
                }
                tilde.push(next);
                grads.push(g);
            }

            let matrix = build_metropolis(&self.graph, &plan.active_sets, k)?;
            params = consensus_update(&tilde, &matrix)?;

            let duration = match self.strategy {
                StrategyConfig::Full => straggler::duration_full(&draw),
                _ => straggler::duration_partial(&draw, &plan)?,
            };
            total_time += duration;

            let mean = ParamVector::mean(&params);
            let global_loss = model::global_loss(&self.train, &self.shards, &mean)?;
            let (_, test_error) = model::evaluate(&mean, eval_set)?;
            let record = IterationRecord {
                k,
                global_loss,
                test_error,
                consensus_disagreement: disagreement(&params),
                duration,
                backup_counts: plan.backup_counts(&self.graph),
                theta: plan.theta,
                gradient_spread: spread(&grads),
            };
            observer.on_step(&StepTrace {
                k,
                draw: &draw,
                plan: &plan,
                matrix: &matrix,
                tilde: &tilde,
                params: &params,
                record: &record,
            });
            records.push(record);

            if hit.is_none() && self.epsilon_target.is_some_and(|eps| global_loss <= eps) {
                hit = Some((k, total_time));
                if self.stop_at_target {
                    break;
                }
            }
        }

        let (final_params, phase_iters, converged) =
            consensus_phase(&params, &self.graph, self.phase_tol, self.phase_max_iters)?;
        Ok(RunResult {
            seed: self.seed,
            strategy: self.strategy.kind().name().to_string(),
            records,
            disagreement_after_phase: disagreement(&final_params),
            final_params,
            total_sim_time: total_time,
            consensus_phase_iters: phase_iters,
            consensus_phase_converged: converged,
            iterations_to_target: hit.map(|h| h.0),
            time_to_target: hit.map(|h| h.1),
            coverage_path_len: self.path.as_ref().map(CoveragePath::len),
        })
    }

    /// Worker `j`'s mini-batch gradient at iteration `k`, drawn from the
    /// stream keyed by `(seed, j, k)`.
    pub fn stochastic_gradient(&self, ws: &WorkerState<'_>, k: usize) -> Result<Vec<f64>> {
        let mut rng = batch_stream(self.seed, ws.index, k);
        model::minibatch_gradient(&self.train, ws.shard, &ws.params, self.batch, &mut rng)
    }
}

/// `w - eta * g`
pub fn local_update(ws: &WorkerState<'_>, eta: f64, gradient: &[f64]) -> ParamVector {
    ws.params.step(eta, gradient)
}

/// `w_j = sum_i P[i][j] * w~_i`
pub fn consensus_update(tilde: &[ParamVector], p: &MixingMatrix) -> Result<Vec<ParamVector>> {
    let n = p.n();
    if tilde.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: tilde.len(),
        });
    }
    let dim = tilde[0].len();
    if let Some(bad) = tilde.iter().find(|w| w.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: bad.len(),
        });
    }
    let mut out = vec![vec![0.0; dim]; n];
    for (i, wi) in tilde.iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            let pij = p.get(i, j);
            if pij == 0.0 {
                continue;
            }
            for (x, y) in o.iter_mut().zip(&wi.0) {
                *x += pij * y;
            }
        }
    }
    Ok(out.into_iter().map(ParamVector).collect())
}

/// `max_j ||w_j - w_bar||_2`
pub fn disagreement(params: &[ParamVector]) -> f64 {
    let mean = ParamVector::mean(params);
    params.iter().map(|w| w.distance(&mean)).fold(0.0, f64::max)
}

fn spread(grads: &[Vec<f64>]) -> f64 {
    if grads.len() < 2 {
        return 0.0;
    }
    let vs: Vec<ParamVector> = grads.iter().cloned().map(ParamVector).collect();
    let mean = ParamVector::mean(&vs);
    vs.iter().map(|g| g.distance(&mean).powi(2)).sum::<f64>() / vs.len() as f64
}

/// Gradient-free mixing with full participation until the disagreement is
/// at most `tol`. Returns the parameters, the iterations used, and whether
/// `tol` was reached.
pub fn consensus_phase(
    states: &[ParamVector],
    g: &Graph,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<ParamVector>, usize, bool)> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Config("consensus tolerance must be positive".into()));
    }
    let p = MixingMatrix::full(g, 0);
    let mut params = states.to_vec();
    let mut iters = 0;
    while disagreement(&params) > tol {
        if iters == max_iters {
            return Ok((params, iters, false));
        }
        params = consensus_update(&params, &p)?;
        iters += 1;
    }
    Ok((params, iters, true))
}

/// Mini-batch SGD on the pooled data: the single-machine reference. Loss is
/// measured the same way as in [`Simulation::run`].
pub fn centralized_sgd(
    train: &Dataset,
    shards: &[Shard],
    batch: usize,
    eta: &LearningRateSchedule,
    k: usize,
    seed: u64,
) -> Result<(ParamVector, Vec<f64>)> {
    let owner = usize::MAX;
    let pooled = Shard::new(0, train.all_indices(), train.len())?;
    let mut w = ParamVector::zeros(train.param_len());
    let mut losses = Vec::with_capacity(k);
    for step in 1..=k {
        let mut rng = batch_stream(seed, owner, step);
        let g = model::minibatch_gradient(train, &pooled, &w, batch, &mut rng)?;
        w = w.step(eta.eta_at(step), &g);
        if !w.is_finite() {
            return Err(Error::Divergence {
                iteration: step,
                worker: 0,
            });
        }
        losses.push(model::global_loss(train, shards, &w)?);
    }
    Ok((w, losses))
}

/// Delay model with one slow worker, used by the timing scenarios.
pub fn one_slow_worker(n: usize, slow: f64) -> DelayKind {
    let mut means = vec![1.0; n];
    means[n - 1] = slow;
    DelayKind::FixedHeterogeneous { means, jitter: 0.0 }
}
