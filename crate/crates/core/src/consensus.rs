//! Metropolis mixing matrices over the active sets of one iteration, products
//! of consecutive matrices, and the geometric consensus bound they satisfy.

use std::collections::BTreeSet;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::topology::Graph;

/// Row and column sums of a single matrix must be within this of 1.
pub const SINGLE_TOL: f64 = 1e-12;
/// Looser tolerance for long products, which accumulate rounding.
pub const PRODUCT_TOL: f64 = 1e-10;

/// Dense row-major N x N matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dense {
    n: usize,
    data: Vec<f64>,
}

impl Dense {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn matmul(&self, rhs: &Dense) -> Dense {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for l in 0..n {
                let a = self.data[i * n + l];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * rhs.data[l * n + j];
                }
            }
        }
        Dense { n, data: out }
    }

    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.n)
            .map(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_col_sum_error(&self) -> f64 {
        (0..self.n)
            .map(|j| ((0..self.n).map(|i| self.get(i, j)).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        self.data.iter().all(|&x| x >= 0.0) && self.max_row_sum_error() <= tol && self.max_col_sum_error() <= tol
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Smallest strictly positive entry.
    pub fn min_positive(&self) -> Option<f64> {
        self.data.iter().copied().filter(|&x| x > 0.0).min_by(f64::total_cmp)
    }

    /// Writes `n` rows of `n` comma-separated values, no header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for i in 0..self.n {
            w.write_record(self.row(i).iter().map(|x| format!("{x:?}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One iteration's mixing matrix `P(k)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixingMatrix {
    iteration: usize,
    entries: Dense,
}

impl MixingMatrix {
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn entries(&self) -> &Dense {
        &self.entries
    }

    pub fn n(&self) -> usize {
        self.entries.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }

    /// Full participation matrix for `g`, as used by the consensus phase.
    pub fn full(g: &Graph, iteration: usize) -> Self {
        let sets: Vec<BTreeSet<usize>> = (0..g.n())
            .map(|j| g.neighbor_slice(j).iter().copied().collect())
            .collect();
        build_metropolis(g, &sets, iteration).expect("full neighbor sets are consistent")
    }
}

/// Metropolis weights for the active sets `S_j(k)`.
///
/// `P[i][j] = 1 / (1 + max(p_i, p_j))` for `j` in `S_i`, with `p_i = |S_i|`
/// not counting `i` itself; the diagonal takes the residual mass.
pub fn build_metropolis(g: &Graph, active_sets: &[BTreeSet<usize>], iteration: usize) -> Result<MixingMatrix> {
    let n = g.n();
    if active_sets.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: active_sets.len(),
        });
    }
    for (j, s) in active_sets.iter().enumerate() {
        for &i in s {
            if i >= n || i == j || !g.has_edge(i, j) {
                return Err(Error::ActiveSets(format!(
                    "worker {j} lists {i}, which is not a neighbor"
                )));
            }
            if !active_sets[i].contains(&j) {
                return Err(Error::ActiveSets(format!(
                    "worker {j} waits for {i} but {i} does not wait for {j}"
                )));
            }
        }
    }

    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let p_i = active_sets[i].len();
        for &j in active_sets[i].range(i + 1..) {
            let w = 1.0 / (1 + p_i.max(active_sets[j].len())) as f64;
            data[i * n + j] = w;
            data[j * n + i] = w;
        }
    }
    for i in 0..n {
        let off: f64 = active_sets[i].iter().map(|&j| data[i * n + j]).sum();
        data[i * n + i] = 1.0 - off;
    }
    Ok(MixingMatrix {
        iteration,
        entries: Dense { n, data },
    })
}

/// Running product `Phi_{k:s} = P(s) P(s+1) ... P(k)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProductChain {
    phi: Dense,
    start: usize,
    factors: usize,
    beta: Option<f64>,
}

impl ProductChain {
    /// Empty product starting at iteration `start`.
    pub fn identity(n: usize, start: usize) -> Self {
        Self {
            phi: Dense::identity(n),
            start,
            factors: 0,
            beta: None,
        }
    }

    pub fn phi(&self) -> &Dense {
        &self.phi
    }

    pub fn start_s(&self) -> usize {
        self.start
    }

    /// Index of the last factor; `None` for the empty product.
    pub fn end_k(&self) -> Option<usize> {
        (self.factors > 0).then(|| self.start + self.factors - 1)
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    /// Smallest positive entry seen across all factors.
    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    pub fn next_iteration(&self) -> usize {
        self.start + self.factors
    }
}

pub fn multiply_chain(chain: &ProductChain, next: &MixingMatrix) -> Result<ProductChain> {
    if next.iteration != chain.next_iteration() {
        return Err(Error::IterationMismatch {
            expected: chain.next_iteration(),
            got: next.iteration,
        });
    }
    if next.n() != chain.phi.n {
        return Err(Error::Dimension {
            expected: chain.phi.n,
            got: next.n(),
        });
    }
    let beta = match (chain.beta, next.entries.min_positive()) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    Ok(ProductChain {
        phi: chain.phi.matmul(&next.entries),
        start: chain.start,
        factors: chain.factors + 1,
        beta,
    })
}

/// `max_{i,j} |phi[i][j] - 1/N|`.
pub fn consensus_deviation(chain: &ProductChain) -> f64 {
    let target = 1.0 / chain.phi.n as f64;
    chain.phi.data.iter().map(|x| (x - target).abs()).fold(0.0, f64::max)
}

/// Geometric envelope on `|1/N - Phi_{k,s}(i,j)|` for a `b`-connected
/// sequence of `n`-worker matrices whose smallest positive weight is `beta`:
/// `2 (1 + beta^{-nb}) / (1 - beta^{nb}) * (1 - beta^{nb})^{(k - s) / nb}`.
pub fn mixing_bound_value(beta: f64, n: usize, b: usize, span: usize) -> f64 {
    let nb = (n * b) as f64;
    let q = beta.powf(nb);
    let lead = 2.0 * (1.0 + beta.powf(-nb)) / (1.0 - q);
    lead * (1.0 - q).powf(span as f64 / nb)
}

pub fn mixing_bound(chain: &ProductChain, n: usize, b: usize) -> Result<f64> {
    let beta = chain.beta.ok_or(Error::BetaUndefined)?;
    if b == 0 {
        return Err(Error::Graph("connectivity window must be at least 1".into()));
    }
    let end = chain.end_k().ok_or(Error::BetaUndefined)?;
    if !(beta > 0.0 && beta < 1.0) {
        // a chain of identities: no mixing, nothing to bound
        return Err(Error::BetaUndefined);
    }
    Ok(mixing_bound_value(beta, n, b, end - chain.start))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Graph {
        Graph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    fn path3() -> Graph {
        Graph::new(3, [(0, 1), (1, 2)]).unwrap()
    }

    fn sets(v: &[&[usize]]) -> Vec<BTreeSet<usize>> {
        v.iter().map(|s| s.iter().copied().collect()).collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-15
    }

    #[test]
    fn k3_is_uniform() {
        let p = build_metropolis(&triangle(), &sets(&[&[1, 2], &[0, 2], &[0, 1]]), 1).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(close(p.get(i, j), 1.0 / 3.0));
            }
        }
    }

    #[test]
    fn path_full_participation() {
        let p = build_metropolis(&path3(), &sets(&[&[1], &[0, 2], &[1]]), 1).unwrap();
        assert!(close(p.get(0, 1), 1.0 / 3.0));
        assert!(close(p.get(0, 0), 2.0 / 3.0));
        assert!(close(p.get(1, 1), 1.0 / 3.0));
        assert!(close(p.get(2, 2), 2.0 / 3.0));
        assert!(p.entries().is_symmetric());
        assert!(p.entries().is_doubly_stochastic(SINGLE_TOL));
    }

    #[test]
    fn idle_worker_gets_unit_row() {
        let p = build_metropolis(&path3(), &sets(&[&[1], &[0], &[]]), 1).unwrap();
        assert_eq!(p.entries().row(2), &[0.0, 0.0, 1.0]);
        assert_eq!(p.get(0, 2), 0.0);
        assert!(close(p.get(0, 1), 0.5));
        assert!(close(p.get(0, 0), 0.5));
    }

    #[test]
    fn rejects_inconsistent_sets() {
        let g = path3();
        assert!(matches!(
            build_metropolis(&g, &sets(&[&[1], &[], &[]]), 1),
            Err(Error::ActiveSets(_))
        ));
        assert!(matches!(
            build_metropolis(&g, &sets(&[&[2], &[], &[0]]), 1),
            Err(Error::ActiveSets(_))
        ));
    }

    #[test]
    fn chain_identity_then_one_factor() {
        let g = path3();
        let p = build_metropolis(&g, &sets(&[&[1], &[0, 2], &[1]]), 1).unwrap();
        let chain = multiply_chain(&ProductChain::identity(3, 1), &p).unwrap();
        assert_eq!(chain.phi(), p.entries());
        assert_eq!(chain.end_k(), Some(1));
        assert_eq!(chain.beta(), Some(1.0 / 3.0));
    }

    #[test]
    fn chain_rejects_wrong_iteration() {
        let p = MixingMatrix::full(&path3(), 5);
        assert!(matches!(
            multiply_chain(&ProductChain::identity(3, 1), &p),
            Err(Error::IterationMismatch { expected: 1, got: 5 })
        ));
    }

    #[test]
    fn k3_chain_is_a_fixed_point() {
        let g = triangle();
        let mut chain = ProductChain::identity(3, 1);
        for k in 1..=2 {
            chain = multiply_chain(&chain, &MixingMatrix::full(&g, k)).unwrap();
        }
        assert!(consensus_deviation(&chain) < 1e-15);
        for x in chain.phi().rows().concat() {
            assert!(close(x, 1.0 / 3.0));
        }
    }

    #[test]
    fn path_square_matches_hand_multiplication() {
        // P = [[2/3,1/3,0],[1/3,1/3,1/3],[0,1/3,2/3]]
        // P^2 = 1/9 * [[5,3,1],[3,3,3],[1,3,5]]
        let g = path3();
        let mut chain = ProductChain::identity(3, 1);
        for k in 1..=2 {
            chain = multiply_chain(&chain, &MixingMatrix::full(&g, k)).unwrap();
        }
        let expect = [[5.0, 3.0, 1.0], [3.0, 3.0, 3.0], [1.0, 3.0, 5.0]];
        for (i, row) in expect.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                assert!((chain.phi().get(i, j) - e / 9.0).abs() < 1e-15);
            }
        }
        assert!(chain.phi().is_doubly_stochastic(PRODUCT_TOL));
    }

    #[test]
    fn deviation_of_identity() {
        assert_eq!(consensus_deviation(&ProductChain::identity(2, 1)), 0.5);
    }

    #[test]
    fn bound_is_vacuous_for_one_factor() {
        let g = path3();
        let chain = multiply_chain(&ProductChain::identity(3, 1), &MixingMatrix::full(&g, 1)).unwrap();
        let bound = mixing_bound(&chain, 3, 2).unwrap();
        let beta: f64 = 1.0 / 3.0;
        let q = beta.powi(6);
        assert!((bound - 2.0 * (1.0 + 1.0 / q) / (1.0 - q)).abs() / bound < 1e-12);
        assert!(bound > 1.0);
    }

    #[test]
    fn bound_needs_beta() {
        assert!(matches!(
            mixing_bound(&ProductChain::identity(3, 1), 3, 2),
            Err(Error::BetaUndefined)
        ));
    }

    #[test]
    fn csv_dump_has_n_columns() {
        let mut buf = Vec::new();
        MixingMatrix::full(&path3(), 1).entries().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.split(',').count() == 3));
    }
}
