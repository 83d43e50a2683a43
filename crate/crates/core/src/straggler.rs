//! Per-worker compute delays `t_j(k)` and iteration durations.
//!
//! Each delay is drawn from its own stream addressed by `(seed, k, j)`, so a
//! full-participation run and a threshold run under the same seed see the
//! same realizations even though they consume them differently.

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::scheduler::ParticipationPlan;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayKind {
    Exponential {
        rate: f64,
    },
    ShiftedExponential {
        shift: f64,
        rate: f64,
    },
    Lognormal {
        mu: f64,
        sigma: f64,
    },
    /// Persistent per-worker means with multiplicative uniform jitter:
    /// `t_j = mean_j * (1 + jitter * u)`, `u ~ U[-1, 1)`.
    FixedHeterogeneous {
        means: Vec<f64>,
        jitter: f64,
    },
}

impl Default for DelayKind {
    fn default() -> Self {
        DelayKind::ShiftedExponential { shift: 0.5, rate: 2.0 }
    }
}

impl DelayKind {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::DelayModel(m));
        match self {
            DelayKind::Exponential { rate } if !(*rate > 0.0 && rate.is_finite()) => {
                bad(format!("rate must be positive, got {rate}"))
            }
            DelayKind::ShiftedExponential { shift, rate } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    bad(format!("rate must be positive, got {rate}"))
                } else if !(*shift >= 0.0 && shift.is_finite()) {
                    bad(format!("shift must be non-negative, got {shift}"))
                } else {
                    Ok(())
                }
            }
            DelayKind::Lognormal { mu, sigma } => {
                if !(*sigma > 0.0 && sigma.is_finite()) || !mu.is_finite() {
                    bad(format!(
                        "lognormal needs finite mu and positive sigma, got ({mu}, {sigma})"
                    ))
                } else {
                    Ok(())
                }
            }
            DelayKind::FixedHeterogeneous { means, jitter } => {
                if means.is_empty() {
                    bad("fixed_heterogeneous needs one mean per worker".into())
                } else if let Some(m) = means.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
                    bad(format!("means must be positive, got {m}"))
                } else if !(0.0..1.0).contains(jitter) {
                    bad(format!("jitter must lie in [0, 1), got {jitter}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Analytic mean of one worker's delay.
    pub fn mean(&self, worker: usize) -> f64 {
        match self {
            DelayKind::Exponential { rate } => 1.0 / rate,
            DelayKind::ShiftedExponential { shift, rate } => shift + 1.0 / rate,
            DelayKind::Lognormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
            DelayKind::FixedHeterogeneous { means, .. } => means[worker],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub kind: DelayKind,
    pub seed: u64,
}

impl DelayModel {
    pub fn new(kind: DelayKind, seed: u64) -> Result<Self> {
        kind.validate()?;
        Ok(Self { kind, seed })
    }
}

/// Realized delays of one iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DelayDraw {
    pub iteration: usize,
    pub times: Vec<f64>,
}

impl DelayDraw {
    pub fn new(iteration: usize, times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Empty("delay times"));
        }
        if let Some(t) = times.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::DelayModel(format!(
                "delays must be positive and finite, got {t}"
            )));
        }
        Ok(Self { iteration, times })
    }
}

fn draw_one(kind: &DelayKind, rng: &mut impl Rng, j: usize) -> f64 {
    let t = match kind {
        DelayKind::Exponential { rate } => Exp::new(*rate).expect("validated").sample(rng),
        DelayKind::ShiftedExponential { shift, rate } => shift + Exp::new(*rate).expect("validated").sample(rng),
        DelayKind::Lognormal { mu, sigma } => LogNormal::new(*mu, *sigma).expect("validated").sample(rng),
        DelayKind::FixedHeterogeneous { means, jitter } => {
            if *jitter == 0.0 {
                means[j]
            } else {
                means[j] * (1.0 + jitter * rng.random_range(-1.0..1.0))
            }
        }
    };
    // an exponential draw of exactly zero would break positivity
    t.max(f64::MIN_POSITIVE)
}

pub fn draw(model: &DelayModel, k: usize, n: usize) -> Result<DelayDraw> {
    if n == 0 {
        return Err(Error::DelayModel("worker count must be at least 1".into()));
    }
    model.kind.validate()?;
    if let DelayKind::FixedHeterogeneous { means, .. } = &model.kind {
        if means.len() != n {
            return Err(Error::DelayModel(format!(
                "fixed_heterogeneous has {} means for {n} workers",
                means.len()
            )));
        }
    }
    let times = (0..n)
        .map(|j| {
            let mut rng = rng::stream(model.seed, Domain::Delay, k as u64, j as u64);
            draw_one(&model.kind, &mut rng, j)
        })
        .collect();
    DelayDraw::new(k, times)
}

/// Everyone waits for everyone: `max_j t_j(k)`.
pub fn duration_full(d: &DelayDraw) -> f64 {
    d.times.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Iteration length under partial participation.
///
/// A worker with a non-empty active set finishes at
/// `T_j = max{t_i : i in S_j ∪ {j}}`; the iteration ends when the last such
/// worker finishes. If nobody exchanged anything the iteration lasts until
/// every worker has finished its own computation.
pub fn duration_partial(d: &DelayDraw, plan: &ParticipationPlan) -> Result<f64> {
    if plan.iteration != d.iteration {
        return Err(Error::IterationMismatch {
            expected: d.iteration,
            got: plan.iteration,
        });
    }
    if plan.active_sets.len() != d.times.len() {
        return Err(Error::Dimension {
            expected: d.times.len(),
            got: plan.active_sets.len(),
        });
    }
    let t = &d.times;
    let finish = plan
        .active_sets
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_empty())
        .map(|(j, s)| s.iter().map(|&i| t[i]).fold(t[j], f64::max))
        .fold(None, |acc: Option<f64>, tj| Some(acc.map_or(tj, |a| a.max(tj))));
    Ok(finish.unwrap_or_else(|| duration_full(d)))
}

/// Sample mean, the constant estimate of `T(k)` with least squared error.
pub fn mean_duration(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("duration samples"));
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}
