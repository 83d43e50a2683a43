//! Orchestration behind the command-line verbs: replicated runs, paired
//! strategy comparisons, the assumption checks, and the output files.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::consensus::{consensus_deviation, mixing_bound, multiply_chain, ProductChain, SINGLE_TOL};
use crate::engine::{Observer, RunResult, Simulation, StepTrace};
use crate::error::{Error, Result};
use crate::scheduler::{edge_set_of, ParticipationPlan, StrategyConfig};
use crate::topology::{check_b_connectivity, Edge, EdgeSetSequence};

/// Optional extra outputs of a run.
#[derive(Clone, Copy, Debug, Default)]
pub struct OutputOptions {
    pub log_delays: bool,
    pub log_plans: bool,
    pub dump_matrices: bool,
}

pub const RECORD_COLUMNS: [&str; 8] = [
    "k",
    "loss",
    "test_error",
    "disagreement",
    "duration",
    "theta",
    "mean_backup",
    "max_backup",
];

/// Shortest round-trip decimal, never in exponent form.
fn num(x: f64) -> String {
    format!("{x}")
}

pub fn write_records_csv<W: Write>(result: &RunResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_COLUMNS)?;
    for r in &result.records {
        w.write_record([
            r.k.to_string(),
            num(r.global_loss),
            num(r.test_error),
            num(r.consensus_disagreement),
            num(r.duration),
            r.theta.map(num).unwrap_or_default(),
            num(r.mean_backup()),
            r.max_backup().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub strategy: String,
    pub iterations: usize,
    pub final_loss: Option<f64>,
    pub final_test_error: Option<f64>,
    pub final_disagreement: Option<f64>,
    pub total_sim_time: f64,
    pub mean_duration: Option<f64>,
    pub k_eps: Option<usize>,
    pub time_to_target: Option<f64>,
    pub consensus_phase_iters: usize,
    pub consensus_phase_converged: bool,
    pub disagreement_after_phase: f64,
    pub coverage_path_len: Option<usize>,
}

impl Summary {
    pub fn of(result: &RunResult) -> Self {
        let last = result.records.last();
        Self {
            seed: result.seed,
            strategy: result.strategy.clone(),
            iterations: result.records.len(),
            final_loss: last.map(|r| r.global_loss),
            final_test_error: last.map(|r| r.test_error),
            final_disagreement: last.map(|r| r.consensus_disagreement),
            total_sim_time: result.total_sim_time,
            mean_duration: result.mean_duration(),
            k_eps: result.iterations_to_target,
            time_to_target: result.time_to_target,
            consensus_phase_iters: result.consensus_phase_iters,
            consensus_phase_converged: result.consensus_phase_converged,
            disagreement_after_phase: result.disagreement_after_phase,
            coverage_path_len: result.coverage_path_len,
        }
    }
}

/// Collects the optional per-iteration logs while a run progresses.
#[derive(Default)]
struct Logs {
    opts: OutputOptions,
    delays: Vec<(usize, usize, f64)>,
    plans: Vec<String>,
    matrices: Vec<u8>,
    error: Option<Error>,
}

impl Observer for Logs {
    fn on_step(&mut self, step: &StepTrace<'_>) {
        if self.opts.log_delays {
            for (j, &t) in step.draw.times.iter().enumerate() {
                self.delays.push((step.k, j, t));
            }
        }
        if self.opts.log_plans {
            self.plans
                .push(serde_json::to_string(step.plan).expect("plan serializes"));
        }
        if self.opts.dump_matrices && self.error.is_none() {
            if let Err(e) = step.matrix.entries().write_csv(&mut self.matrices) {
                self.error = Some(e);
            }
        }
    }
}

pub fn write_delays_csv<W: Write>(rows: &[(usize, usize, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "j", "t"])?;
    for (k, j, t) in rows {
        w.write_record([k.to_string(), j.to_string(), num(*t)])?;
    }
    w.flush()?;
    Ok(())
}

/// One replication: run and write `records_<seed>.csv`, `summary_<seed>.json`
/// and any requested logs into `dir`.
pub fn simulate_one(sim: &Simulation, dir: &Path, opts: OutputOptions) -> Result<Summary> {
    let mut logs = Logs {
        opts,
        ..Default::default()
    };
    let result = sim.run_observed(&mut logs)?;
    if let Some(e) = logs.error {
        return Err(e);
    }
    let seed = sim.seed;
    fs::create_dir_all(dir)?;
    write_records_csv(
        &result,
        BufWriter::new(File::create(dir.join(format!("records_{seed}.csv")))?),
    )?;
    let summary = Summary::of(&result);
    write_json(&dir.join(format!("summary_{seed}.json")), &summary)?;
    if opts.log_delays {
        write_delays_csv(
            &logs.delays,
            BufWriter::new(File::create(dir.join(format!("delays_{seed}.csv")))?),
        )?;
    }
    if opts.log_plans {
        let mut f = BufWriter::new(File::create(dir.join(format!("plans_{seed}.jsonl")))?);
        for line in &logs.plans {
            writeln!(f, "{line}")?;
        }
        f.flush()?;
    }
    if opts.dump_matrices {
        fs::write(dir.join(format!("matrices_{seed}.csv")), &logs.matrices)?;
    }
    Ok(summary)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Runs `f` once per replication seed on at most `jobs` threads; results come
/// back in seed order.
pub fn per_replication<T, F>(cfg: &ExperimentConfig, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let seeds = cfg.replication_seeds();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| seeds.par_iter().map(|&s| f(s)).collect())
}

pub fn simulate(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize, opts: OutputOptions) -> Result<Vec<Summary>> {
    per_replication(cfg, jobs, |seed| {
        let sim = Simulation::from_config(cfg, seed)?;
        simulate_one(&sim, out_dir, opts)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategyReport {
    pub strategy: String,
    pub mean_duration: f64,
    /// `mean_duration / full.mean_duration`
    pub duration_ratio_vs_full: f64,
    pub final_loss: Option<f64>,
    pub final_disagreement: Option<f64>,
    pub iterations_to_target: Option<usize>,
    pub time_to_target: Option<f64>,
    pub total_sim_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub seed: u64,
    pub epsilon_target: Option<f64>,
    pub full: StrategyReport,
    pub static_p: StrategyReport,
    pub dtur: StrategyReport,
}

/// Full, static-p and DTUR on one replication, all consuming the same delay
/// realizations and mini-batch streams.
pub fn compare_one(sim: &Simulation, static_p: Option<Vec<usize>>) -> Result<(Comparison, [RunResult; 3])> {
    let p = static_p.unwrap_or_else(|| StrategyConfig::default_static_p(&sim.graph));
    let full = sim.with_strategy(StrategyConfig::Full)?.run()?;
    let stat = sim.with_strategy(StrategyConfig::StaticP { p })?.run()?;
    let dtur = sim.with_strategy(StrategyConfig::Dtur)?.run()?;
    let base = full.mean_duration().ok_or(Error::Empty("gradient iterations"))?;
    let report = |r: &RunResult| -> StrategyReport {
        let md = r.mean_duration().unwrap_or(f64::NAN);
        StrategyReport {
            strategy: r.strategy.clone(),
            mean_duration: md,
            duration_ratio_vs_full: md / base,
            final_loss: r.final_loss(),
            final_disagreement: r.records.last().map(|x| x.consensus_disagreement),
            iterations_to_target: r.iterations_to_target,
            time_to_target: r.time_to_target,
            total_sim_time: r.total_sim_time,
        }
    };
    let cmp = Comparison {
        seed: sim.seed,
        epsilon_target: sim.epsilon_target,
        full: report(&full),
        static_p: report(&stat),
        dtur: report(&dtur),
    };
    Ok((cmp, [full, stat, dtur]))
}

pub fn compare(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize, opts: OutputOptions) -> Result<Vec<Comparison>> {
    let static_p = cfg.static_p.clone();
    per_replication(cfg, jobs, |seed| {
        let sim = Simulation::from_config(cfg, seed)?;
        let (cmp, runs) = compare_one(&sim, static_p.clone())?;
        fs::create_dir_all(out_dir)?;
        for r in &runs {
            let f = File::create(out_dir.join(format!("records_{}_{seed}.csv", r.strategy)))?;
            write_records_csv(r, BufWriter::new(f))?;
        }
        if opts.log_delays {
            // the three runs share one delay model; log the realizations each consumed
            for strat in [
                StrategyConfig::Full,
                StrategyConfig::StaticP {
                    p: static_p
                        .clone()
                        .unwrap_or_else(|| StrategyConfig::default_static_p(&sim.graph)),
                },
                StrategyConfig::Dtur,
            ] {
                let name = strat.kind().name();
                let mut logs = Logs {
                    opts: OutputOptions {
                        log_delays: true,
                        ..Default::default()
                    },
                    ..Default::default()
                };
                sim.with_strategy(strat)?.run_observed(&mut logs)?;
                let f = File::create(out_dir.join(format!("delays_{name}_{seed}.csv")))?;
                write_delays_csv(&logs.delays, BufWriter::new(f))?;
            }
        }
        write_json(&out_dir.join(format!("compare_{seed}.json")), &cmp)?;
        Ok(cmp)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub seed: u64,
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&format!(
                "{:<width$}  {}  {}\n",
                r.name,
                if r.passed { "PASS" } else { "FAIL" },
                r.detail
            ));
        }
        s
    }
}

/// Iteration count used by the check verb.
pub const CHECK_ITERATIONS: usize = 50;

/// Per-step measurements gathered for the assumption checks.
#[derive(Default)]
pub struct CheckObserver {
    pub inject_asymmetry: bool,
    pub worst_row_col_error: f64,
    pub asymmetric_matrices: usize,
    pub matrices: usize,
    pub edge_sets: EdgeSetSequence,
    pub established: Vec<Option<Edge>>,
    /// `Phi_{k:s}` for every start `s` seen so far.
    pub chains: Vec<ProductChain>,
    pub bound_violations: usize,
    pub bound_checks: usize,
    pub bound_window: usize,
    pub n: usize,
    pub deviations_from_one: Vec<f64>,
}

impl CheckObserver {
    pub fn new(n: usize, bound_window: usize) -> Self {
        Self {
            n,
            bound_window,
            ..Default::default()
        }
    }
}

impl Observer for CheckObserver {
    fn adjust_plan(&mut self, plan: &mut ParticipationPlan) {
        if self.inject_asymmetry && plan.iteration == 1 {
            if let Some((j, i)) = plan
                .active_sets
                .iter()
                .enumerate()
                .find_map(|(j, s)| s.iter().next().map(|&i| (j, i)))
            {
                plan.active_sets[j].remove(&i);
            }
        }
    }

    fn on_step(&mut self, step: &StepTrace<'_>) {
        let m = step.matrix.entries();
        self.matrices += 1;
        self.worst_row_col_error = self
            .worst_row_col_error
            .max(m.max_row_sum_error())
            .max(m.max_col_sum_error());
        if !m.is_symmetric() || m.rows().concat().iter().any(|&x| x < 0.0) {
            self.asymmetric_matrices += 1;
        }
        self.edge_sets.push(edge_set_of(step.plan));
        self.established.push(step.plan.established_edge);

        self.chains.push(ProductChain::identity(self.n, step.k));
        for chain in &mut self.chains {
            *chain = multiply_chain(chain, step.matrix).expect("consecutive iterations");
            if let Ok(bound) = mixing_bound(chain, self.n, self.bound_window) {
                self.bound_checks += 1;
                if consensus_deviation(chain) > bound {
                    self.bound_violations += 1;
                }
            }
        }
        self.deviations_from_one.push(consensus_deviation(&self.chains[0]));
    }
}

/// Checks that `established` covers the coverage path once per full epoch.
pub fn epoch_coverage_violations(established: &[Option<Edge>], path: &[Edge]) -> (usize, usize) {
    let d = path.len();
    let want: BTreeSet<Edge> = path.iter().copied().collect();
    let mut bad = 0;
    let mut epochs = 0;
    for epoch in established.chunks_exact(d) {
        epochs += 1;
        let got: Vec<Edge> = epoch.iter().flatten().copied().collect();
        let got_set: BTreeSet<Edge> = got.iter().copied().collect();
        if got.len() != d || got_set != want {
            bad += 1;
        }
    }
    (epochs, bad)
}

/// Short DTUR run verifying the mixing and connectivity assumptions.
pub fn check(cfg: &ExperimentConfig, seed: u64, inject_asymmetry: bool) -> Result<CheckReport> {
    let mut sim = Simulation::from_config(cfg, seed)?.with_strategy(StrategyConfig::Dtur)?;
    sim.k = CHECK_ITERATIONS;
    let path = sim.path.clone().expect("simulation always has a coverage path");
    let b = cfg.connectivity_window.unwrap_or(path.len());
    let mut obs = CheckObserver::new(sim.n(), b);
    obs.inject_asymmetry = inject_asymmetry;
    let outcome = sim.run_observed(&mut obs);

    let mut rows = Vec::new();
    if let Err(e) = outcome {
        rows.push(CheckRow {
            name: "mixing matrices doubly stochastic".into(),
            passed: false,
            detail: e.to_string(),
        });
        return Ok(CheckReport { seed, rows });
    }
    rows.push(CheckRow {
        name: "mixing matrices doubly stochastic".into(),
        passed: obs.worst_row_col_error <= SINGLE_TOL && obs.asymmetric_matrices == 0,
        detail: format!(
            "{} matrices, worst row/col error {:e}, {} asymmetric",
            obs.matrices, obs.worst_row_col_error, obs.asymmetric_matrices
        ),
    });
    let (epochs, bad) = epoch_coverage_violations(&obs.established, path.links());
    rows.push(CheckRow {
        name: "DTUR epochs cover the path".into(),
        passed: bad == 0,
        detail: format!("{epochs} epochs of d = {}, {bad} violations", path.len()),
    });
    let connected = check_b_connectivity(&sim.graph, &obs.edge_sets, b)?;
    rows.push(CheckRow {
        name: format!("B-connectivity (B = {b})"),
        passed: connected,
        detail: format!("{} edge sets", obs.edge_sets.len()),
    });
    rows.push(CheckRow {
        name: "geometric consensus bound".into(),
        passed: obs.bound_violations == 0,
        detail: format!("{} (s, k) pairs, {} violations", obs.bound_checks, obs.bound_violations),
    });
    Ok(CheckReport { seed, rows })
}

pub fn default_out_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| match &cfg.base_dir {
        Some(b) if cfg.output_dir.is_relative() => b.join(&cfg.output_dir),
        _ => cfg.output_dir.clone(),
    })
}
