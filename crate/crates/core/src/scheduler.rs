//! Per-iteration participation: who waits for whom.
//!
//! Three strategies produce a [`ParticipationPlan`] from the graph and the
//! iteration's delay draw:
//!
//! * `full` waits for every neighbor;
//! * `static_p` waits for the `p_j` fastest neighbors, then keeps only the
//!   mutual choices so that the mixing matrix stays symmetric;
//! * `dtur` runs the threshold rule. Each iteration ends as soon as the
//!   first not-yet-established coverage-path link has both endpoints done;
//!   that moment is `theta(k)`, and every worker finished by then exchanges
//!   with every neighbor also finished by then. After `d` iterations the
//!   whole path has been re-established and the epoch restarts.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::straggler::DelayDraw;
use crate::topology::{edge, CoveragePath, Edge, Graph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticipationPlan {
    pub iteration: usize,
    pub active_sets: Vec<BTreeSet<usize>>,
    pub theta: Option<f64>,
    pub established_edge: Option<Edge>,
}

impl ParticipationPlan {
    pub fn is_mutually_consistent(&self) -> bool {
        self.active_sets.iter().enumerate().all(|(j, s)| {
            s.iter()
                .all(|&i| i != j && self.active_sets.get(i).is_some_and(|t| t.contains(&j)))
        })
    }

    /// `b_j(k) = |N_j| - |S_j(k)|` per worker.
    pub fn backup_counts(&self, g: &Graph) -> Vec<usize> {
        self.active_sets
            .iter()
            .enumerate()
            .map(|(j, s)| g.degree(j) - s.len())
            .collect()
    }

    pub fn is_idle(&self, j: usize) -> bool {
        self.active_sets[j].is_empty()
    }
}

/// `{(i, j) : i in S_j, i < j}`
pub fn edge_set_of(plan: &ParticipationPlan) -> BTreeSet<Edge> {
    plan.active_sets
        .iter()
        .enumerate()
        .flat_map(|(j, s)| s.range(..j).map(move |&i| (i, j)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Full,
    StaticP,
    #[default]
    Dtur,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Full => "full",
            StrategyKind::StaticP => "static_p",
            StrategyKind::Dtur => "dtur",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StrategyConfig {
    Full,
    StaticP { p: Vec<usize> },
    Dtur,
}

impl StrategyConfig {
    pub fn kind(&self) -> StrategyKind {
        match self {
            StrategyConfig::Full => StrategyKind::Full,
            StrategyConfig::StaticP { .. } => StrategyKind::StaticP,
            StrategyConfig::Dtur => StrategyKind::Dtur,
        }
    }

    /// Half-neighborhood default: `p_j = ceil(|N_j| / 2)`.
    pub fn default_static_p(g: &Graph) -> Vec<usize> {
        (0..g.n()).map(|j| g.degree(j).div_ceil(2)).collect()
    }

    pub fn validate(&self, g: &Graph) -> Result<()> {
        if let StrategyConfig::StaticP { p } = self {
            check_static_p(g, p)?;
        }
        Ok(())
    }
}

fn check_static_p(g: &Graph, p: &[usize]) -> Result<()> {
    if p.len() != g.n() {
        return Err(Error::Strategy(format!(
            "static_p needs {} entries, got {}",
            g.n(),
            p.len()
        )));
    }
    for (j, &pj) in p.iter().enumerate() {
        if pj < 1 || pj > g.degree(j) {
            return Err(Error::Strategy(format!("p[{j}] = {pj} outside [1, {}]", g.degree(j))));
        }
    }
    Ok(())
}

pub fn plan_full(g: &Graph, k: usize) -> ParticipationPlan {
    ParticipationPlan {
        iteration: k,
        active_sets: (0..g.n())
            .map(|j| g.neighbor_slice(j).iter().copied().collect())
            .collect(),
        theta: None,
        established_edge: None,
    }
}

pub fn plan_static_p(g: &Graph, d: &DelayDraw, p: &[usize]) -> Result<ParticipationPlan> {
    check_static_p(g, p)?;
    if d.times.len() != g.n() {
        return Err(Error::Dimension {
            expected: g.n(),
            got: d.times.len(),
        });
    }
    let chosen: Vec<BTreeSet<usize>> = (0..g.n())
        .map(|j| {
            let mut nb = g.neighbor_slice(j).to_vec();
            nb.sort_by(|&a, &b| d.times[a].total_cmp(&d.times[b]).then(a.cmp(&b)));
            nb.into_iter().take(p[j]).collect()
        })
        .collect();
    let active_sets = chosen
        .iter()
        .enumerate()
        .map(|(j, s)| s.iter().copied().filter(|&i| chosen[i].contains(&j)).collect())
        .collect();
    Ok(ParticipationPlan {
        iteration: d.iteration,
        active_sets,
        theta: None,
        established_edge: None,
    })
}

/// Progress through the current DTUR epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct EpochState {
    /// Epoch index `m`, from 0.
    pub epoch: usize,
    /// Links established so far this epoch.
    pub covered: BTreeSet<Edge>,
    /// Position `l` in the epoch, 1-based.
    pub step: usize,
}

impl EpochState {
    pub fn new() -> Self {
        Self {
            epoch: 0,
            covered: BTreeSet::new(),
            step: 1,
        }
    }
}

pub fn plan_dtur(
    g: &Graph,
    path: &CoveragePath,
    state: &EpochState,
    d: &DelayDraw,
) -> Result<(ParticipationPlan, EpochState)> {
    if path.is_empty() {
        return Err(Error::Strategy("coverage path is empty".into()));
    }
    if state.covered.len() >= path.len() {
        return Err(Error::Strategy("epoch already covers the whole path".into()));
    }
    if d.times.len() != g.n() {
        return Err(Error::Dimension {
            expected: g.n(),
            got: d.times.len(),
        });
    }
    let t = &d.times;
    let (theta, established) = path
        .links()
        .iter()
        .filter(|e| !state.covered.contains(e))
        .map(|&(i, j)| (t[i].max(t[j]), (i, j)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("at least one uncovered link");

    let active_sets = (0..g.n())
        .map(|j| {
            if t[j] > theta {
                BTreeSet::new()
            } else {
                g.neighbor_slice(j).iter().copied().filter(|&i| t[i] <= theta).collect()
            }
        })
        .collect();

    let mut next = state.clone();
    next.covered.insert(edge(established.0, established.1));
    next.step += 1;
    if next.step > path.len() {
        next = EpochState {
            epoch: state.epoch + 1,
            covered: BTreeSet::new(),
            step: 1,
        };
    }
    Ok((
        ParticipationPlan {
            iteration: d.iteration,
            active_sets,
            theta: Some(theta),
            established_edge: Some(established),
        },
        next,
    ))
}

/// Stateful wrapper that produces one plan per iteration.
#[derive(Clone, Debug)]
pub struct Scheduler {
    strategy: StrategyConfig,
    path: Option<CoveragePath>,
    state: EpochState,
}

impl Scheduler {
    pub fn new(g: &Graph, strategy: StrategyConfig, path: Option<CoveragePath>) -> Result<Self> {
        strategy.validate(g)?;
        if strategy == StrategyConfig::Dtur && path.is_none() {
            return Err(Error::Strategy("dtur needs a coverage path".into()));
        }
        Ok(Self {
            strategy,
            path,
            state: EpochState::new(),
        })
    }

    pub fn strategy(&self) -> &StrategyConfig {
        &self.strategy
    }

    pub fn path(&self) -> Option<&CoveragePath> {
        self.path.as_ref()
    }

    pub fn epoch_state(&self) -> &EpochState {
        &self.state
    }

    pub fn next_plan(&mut self, g: &Graph, d: &DelayDraw) -> Result<ParticipationPlan> {
        match &self.strategy {
            StrategyConfig::Full => Ok(plan_full(g, d.iteration)),
            StrategyConfig::StaticP { p } => plan_static_p(g, d, p),
            StrategyConfig::Dtur => {
                let path = self.path.as_ref().expect("checked in new");
                let (plan, next) = plan_dtur(g, path, &self.state, d)?;
                self.state = next;
                Ok(plan)
            }
        }
    }
}
