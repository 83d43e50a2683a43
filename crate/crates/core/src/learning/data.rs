use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Feature matrix (row per example, row-major) plus class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, n_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if dim == 0 {
            return Err(Error::Dataset("feature dimension must be positive".into()));
        }
        if n_classes < 2 {
            return Err(Error::Dataset(format!("need at least 2 classes, got {n_classes}")));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Dimension {
                expected: labels.len() * dim,
                got: features.len(),
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::Dataset(format!("label {y} outside [0, {n_classes})")));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Dataset("non-finite feature".into()));
        }
        Ok(Self {
            features,
            labels,
            dim,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Length of a parameter vector for this dataset: `dim * n_classes`.
    pub fn param_len(&self) -> usize {
        self.dim * self.n_classes
    }

    #[inline]
    pub fn x(&self, l: usize) -> &[f64] {
        &self.features[l * self.dim..(l + 1) * self.dim]
    }

    #[inline]
    pub fn y(&self, l: usize) -> usize {
        self.labels[l]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    /// Copy of the examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &l in indices {
            features.extend_from_slice(self.x(l));
            labels.push(self.y(l));
        }
        Self::new(features, labels, self.dim, self.n_classes)
    }
}

/// Class-conditional Gaussian clusters: `C` centers of norm 3 in random
/// directions, unit-variance noise. Labels are assigned round-robin and the
/// examples shuffled, so every class appears and class counts differ by at
/// most one.
pub fn synth_classification(n_examples: usize, dim: usize, n_classes: usize, seed: u64) -> Result<Dataset> {
    if n_classes < 2 || n_examples < n_classes || dim == 0 {
        return Err(Error::Dataset(format!(
            "need n_examples >= n_classes >= 2 and dim >= 1, got ({n_examples}, {dim}, {n_classes})"
        )));
    }
    let mut rng = rng::stream(seed, Domain::Data, 0, 0);
    let mut centers = Vec::with_capacity(n_classes * dim);
    for _ in 0..n_classes {
        let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        centers.extend(dir.iter().map(|v| 3.0 * v / norm));
    }
    let mut labels: Vec<usize> = (0..n_examples).map(|l| l % n_classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n_examples * dim);
    for &y in &labels {
        for f in 0..dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features.push(centers[y * dim + f] + noise);
        }
    }
    Dataset::new(features, labels, dim, n_classes)
}

/// Draws `n_train + n_test` examples from one generator and splits them, so
/// both parts share cluster centers.
pub fn synth_train_test(
    n_train: usize,
    n_test: usize,
    dim: usize,
    n_classes: usize,
    seed: u64,
) -> Result<(Dataset, Option<Dataset>)> {
    let all = synth_classification(n_train + n_test, dim, n_classes, seed)?;
    if n_test == 0 {
        return Ok((all, None));
    }
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..n_train + n_test).collect();
    Ok((all.subset(&train)?, Some(all.subset(&test)?)))
}

/// A worker's local dataset, as sorted unique indices into the parent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Shard {
    owner: usize,
    indices: Vec<usize>,
}

impl Shard {
    pub fn new(owner: usize, mut indices: Vec<usize>, dataset_len: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Dataset(format!("shard of worker {owner} is empty")));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Dataset(format!("shard of worker {owner} has duplicate indices")));
        }
        if *indices.last().expect("non-empty") >= dataset_len {
            return Err(Error::Dataset(format!(
                "shard of worker {owner} indexes past the dataset"
            )));
        }
        Ok(Self { owner, indices })
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionMode {
    Iid,
    /// Each worker is assigned `s` classes round-robin and receives the
    /// examples of those classes; unassigned classes are spread iid.
    LabelSkew {
        s: usize,
    },
}

pub fn partition(ds: &Dataset, n_workers: usize, mode: PartitionMode, seed: u64) -> Result<Vec<Shard>> {
    if n_workers == 0 {
        return Err(Error::Dataset("need at least one worker".into()));
    }
    if ds.len() < n_workers {
        return Err(Error::Dataset(format!(
            "{} examples cannot cover {n_workers} workers",
            ds.len()
        )));
    }
    let mut rng = rng::stream(seed, Domain::Partition, n_workers as u64, 0);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n_workers];
    match mode {
        PartitionMode::Iid => {
            let mut perm = ds.all_indices();
            perm.shuffle(&mut rng);
            split_even(&perm, &mut buckets, 0);
        }
        PartitionMode::LabelSkew { s } => {
            let c = ds.n_classes();
            if s == 0 || s > c {
                return Err(Error::Dataset(format!("label_skew s must lie in [1, {c}], got {s}")));
            }
            let mut owners: Vec<Vec<usize>> = vec![Vec::new(); c];
            for j in 0..n_workers {
                for t in 0..s {
                    let class = (j * s + t) % c;
                    if !owners[class].contains(&j) {
                        owners[class].push(j);
                    }
                }
            }
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
            for l in 0..ds.len() {
                by_class[ds.y(l)].push(l);
            }
            let mut leftover = Vec::new();
            for (class, mut members) in by_class.into_iter().enumerate() {
                members.shuffle(&mut rng);
                if owners[class].is_empty() {
                    leftover.extend(members);
                    continue;
                }
                let k = owners[class].len();
                for (pos, l) in members.into_iter().enumerate() {
                    buckets[owners[class][pos % k]].push(l);
                }
            }
            leftover.shuffle(&mut rng);
            let offset = rng.random_range(0..n_workers);
            split_even(&leftover, &mut buckets, offset);
            // a worker whose classes were all too small to reach it borrows
            // one example from the largest shard
            while let Some(empty) = buckets.iter().position(Vec::is_empty) {
                let donor = (0..n_workers)
                    .max_by_key(|&j| (buckets[j].len(), std::cmp::Reverse(j)))
                    .expect("n_workers > 0");
                let moved = buckets[donor].pop().expect("L >= N leaves a donor");
                buckets[empty].push(moved);
            }
        }
    }
    buckets
        .into_iter()
        .enumerate()
        .map(|(j, idx)| Shard::new(j, idx, ds.len()))
        .collect()
}

/// Deals `items` into near-equal contiguous runs, larger runs first starting
/// at bucket `offset`.
fn split_even(items: &[usize], buckets: &mut [Vec<usize>], offset: usize) {
    let n = buckets.len();
    let base = items.len() / n;
    let extra = items.len() % n;
    let mut pos = 0;
    for r in 0..n {
        let j = (r + offset) % n;
        let take = base + usize::from(r < extra);
        buckets[j].extend_from_slice(&items[pos..pos + take]);
        pos += take;
    }
}

/// Fraction of a shard's examples that fall in its `s` most frequent labels.
pub fn top_label_mass(ds: &Dataset, shard: &Shard, s: usize) -> f64 {
    let mut counts = vec![0usize; ds.n_classes()];
    for &l in shard.indices() {
        counts[ds.y(l)] += 1;
    }
    counts.sort_unstable_by(|a, b| b.cmp(a));
    counts.iter().take(s).sum::<usize>() as f64 / shard.len() as f64
}

pub fn label_support(ds: &Dataset, shard: &Shard) -> BTreeSet<usize> {
    shard.indices().iter().map(|&l| ds.y(l)).collect()
}
