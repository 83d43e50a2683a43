//! Multinomial logistic regression: cross-entropy loss and its gradient.
//!
//! Parameters are flattened class-major, `w[c * dim + f]`, no bias term.

use rand::seq::index;
use rand::Rng;

use super::data::{Dataset, Shard};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// `self - eta * g`
    pub fn step(&self, eta: f64, g: &[f64]) -> Self {
        Self(self.0.iter().zip(g).map(|(w, g)| w - eta * g).collect())
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Coordinate-wise mean of a non-empty set of vectors.
    pub fn mean(params: &[ParamVector]) -> ParamVector {
        let n = params.len() as f64;
        let mut out = vec![0.0; params[0].len()];
        for p in params {
            for (o, x) in out.iter_mut().zip(&p.0) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= n;
        }
        ParamVector(out)
    }
}

fn check_dim(ds: &Dataset, w: &ParamVector) -> Result<()> {
    if w.len() != ds.param_len() {
        return Err(Error::Dimension {
            expected: ds.param_len(),
            got: w.len(),
        });
    }
    Ok(())
}

/// Fills `logits` with `W x_l` and returns the log-sum-exp.
fn logits_into(ds: &Dataset, w: &ParamVector, l: usize, logits: &mut [f64]) -> f64 {
    let d = ds.dim();
    let x = ds.x(l);
    for (c, z) in logits.iter_mut().enumerate() {
        *z = w.0[c * d..(c + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum();
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy over `indices`.
pub fn loss(ds: &Dataset, indices: &[usize], w: &ParamVector) -> Result<f64> {
    check_dim(ds, w)?;
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut logits = vec![0.0; ds.n_classes()];
    let total: f64 = indices
        .iter()
        .map(|&l| {
            let lse = logits_into(ds, w, l, &mut logits);
            lse - logits[ds.y(l)]
        })
        .sum();
    Ok((total / indices.len() as f64).max(0.0))
}

/// Global objective: unweighted mean of the per-shard mean losses.
pub fn global_loss(ds: &Dataset, shards: &[Shard], w: &ParamVector) -> Result<f64> {
    let mut sum = 0.0;
    for s in shards {
        sum += loss(ds, s.indices(), w)?;
    }
    Ok(sum / shards.len() as f64)
}

/// Mean cross-entropy gradient over `indices` (duplicates count twice).
pub fn gradient(ds: &Dataset, indices: &[usize], w: &ParamVector) -> Result<Vec<f64>> {
    check_dim(ds, w)?;
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = ds.dim();
    let mut grad = vec![0.0; ds.param_len()];
    let mut logits = vec![0.0; ds.n_classes()];
    for &l in indices {
        let lse = logits_into(ds, w, l, &mut logits);
        let x = ds.x(l);
        let y = ds.y(l);
        for (c, z) in logits.iter().enumerate() {
            let coef = (z - lse).exp() - if c == y { 1.0 } else { 0.0 };
            for (g, xf) in grad[c * d..(c + 1) * d].iter_mut().zip(x) {
                *g += coef * xf;
            }
        }
    }
    let scale = 1.0 / indices.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(grad)
}

/// Draws a mini-batch from the shard: without replacement when it fits,
/// with replacement otherwise. Returned indices are sorted, so a batch the
/// size of the shard is exactly the shard.
pub fn sample_batch<R: Rng + ?Sized>(shard: &Shard, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
    if shard.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if batch == 0 {
        return Err(Error::Dataset("batch size must be at least 1".into()));
    }
    let idx = shard.indices();
    let mut picked: Vec<usize> = if batch <= idx.len() {
        index::sample(rng, idx.len(), batch)
            .into_iter()
            .map(|p| idx[p])
            .collect()
    } else {
        (0..batch).map(|_| idx[rng.random_range(0..idx.len())]).collect()
    };
    picked.sort_unstable();
    Ok(picked)
}

pub fn minibatch_gradient<R: Rng + ?Sized>(
    ds: &Dataset,
    shard: &Shard,
    w: &ParamVector,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let picked = sample_batch(shard, batch, rng)?;
    gradient(ds, &picked, w)
}

/// Cross-entropy and top-1 error rate; ties in the argmax go to the lowest
/// class index.
pub fn evaluate(w: &ParamVector, test: &Dataset) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dim(test, w)?;
    let mut logits = vec![0.0; test.n_classes()];
    let mut total = 0.0;
    let mut wrong = 0usize;
    for l in 0..test.len() {
        let lse = logits_into(test, w, l, &mut logits);
        total += lse - logits[test.y(l)];
        let pred = logits
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |best, (c, &z)| if z > best.1 { (c, z) } else { best },
            )
            .0;
        wrong += usize::from(pred != test.y(l));
    }
    let n = test.len() as f64;
    Ok((total / n, wrong as f64 / n))
}
