//! Node-to-class mapping, clustering accuracy, NMI and class-count estimation.

use crate::error::{Error, Result};
use crate::model::Mlp;

/// `K × C` count matrix: `n[k][c]` samples landed on output node `k` with true class `c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    classes: usize,
}

impl ContingencyTable {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let classes = counts.first().map_or(0, Vec::len);
        if counts.is_empty() || classes == 0 {
            return Err(Error::contract("contingency table needs at least one row and column"));
        }
        if counts.iter().any(|r| r.len() != classes) {
            return Err(Error::contract("ragged contingency table"));
        }
        Ok(Self { counts, classes })
    }

    pub fn from_labels(nodes: &[usize], num_nodes: usize, labels: &[usize], num_classes: usize) -> Result<Self> {
        if nodes.len() != labels.len() {
            return Err(Error::contract("one predicted node per label expected"));
        }
        if num_nodes == 0 || num_classes == 0 {
            return Err(Error::contract("node and class counts must be positive"));
        }
        let mut counts = vec![vec![0u64; num_classes]; num_nodes];
        for (&k, &c) in nodes.iter().zip(labels) {
            if k >= num_nodes || c >= num_classes {
                return Err(Error::contract(format!("entry ({k}, {c}) outside {num_nodes}×{num_classes}")));
            }
            counts[k][c] += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn num_nodes(&self) -> usize {
        self.counts.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn node_sizes(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn class_sizes(&self) -> Vec<u64> {
        (0..self.classes).map(|c| self.counts.iter().map(|r| r[c]).sum()).collect()
    }
}

/// Partial injective map from rows to columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    map: Vec<Option<usize>>,
    cols: usize,
    cost: f64,
}

impl Assignment {
    pub fn column_of(&self, row: usize) -> Option<usize> {
        self.map[row]
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.map
    }

    pub fn num_columns(&self) -> usize {
        self.cols
    }

    /// Matched `(row, column)` pairs in row order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.map
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (r, c)))
            .collect()
    }

    /// Sum of matched costs, accumulated in row order.
    pub fn total_cost(&self) -> f64 {
        self.cost
    }
}

/// Minimum-cost assignment for `rows <= cols` (potential-based Kuhn–Munkres).
/// Returns the column of each row.
fn solve_square_or_wide(cost: &[&[f64]], cols: &[usize]) -> Vec<usize> {
    let n = cost.len();
    let m = cols.len();
    debug_assert!(n <= m);
    let at = |i: usize, j: usize| cost[i][cols[j]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = cols[j - 1];
        }
    }
    out
}

/// Optimal cost of matching `min(rows, cols)` pairs inside a sub-matrix.
fn sub_optimum(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    if rows.len() <= cols.len() {
        let sub: Vec<&[f64]> = rows.iter().map(|&r| cost[r].as_slice()).collect();
        let assign = solve_square_or_wide(&sub, cols);
        rows.iter().zip(&assign).map(|(&r, &c)| cost[r][c]).sum()
    } else {
        let transposed: Vec<Vec<f64>> = cols.iter().map(|&c| rows.iter().map(|&r| cost[r][c]).collect()).collect();
        let sub: Vec<&[f64]> = transposed.iter().map(Vec::as_slice).collect();
        let local: Vec<usize> = (0..rows.len()).collect();
        let assign = solve_square_or_wide(&sub, &local);
        cols.iter().zip(&assign).map(|(&c, &r)| cost[rows[r]][c]).sum()
    }
}

/// Globally optimal assignment of `min(K, C)` row/column matches minimizing total cost.
///
/// Among optimal assignments the lexicographically smallest list of `(row, column)` pairs is
/// returned, so the result does not depend on solver internals.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::contract("assignment over an empty cost matrix"));
    }
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::contract("ragged cost matrix"));
    }
    if cost.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::contract("cost matrix contains a non-finite entry"));
    }
    let all_rows: Vec<usize> = (0..rows).collect();
    let all_cols: Vec<usize> = (0..cols).collect();
    let target = sub_optimum(cost, &all_rows, &all_cols);
    let scale = cost.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-10 * scale * rows.min(cols) as f64;

    let mut map = vec![None; rows];
    let mut free_cols = all_cols;
    let mut fixed = 0.0;
    let mut remaining = rows.min(cols);
    for r in 0..rows {
        if remaining == 0 {
            break;
        }
        let later: Vec<usize> = (r + 1..rows).collect();
        let mut chosen = None;
        if later.len() + 1 >= remaining {
            for (pos, &c) in free_cols.iter().enumerate() {
                let mut rest_cols = free_cols.clone();
                rest_cols.remove(pos);
                if later.len().min(rest_cols.len()) < remaining - 1 {
                    continue;
                }
                let rest = sub_optimum(cost, &later, &rest_cols);
                if (fixed + cost[r][c] + rest - target).abs() <= tol {
                    chosen = Some(pos);
                    break;
                }
            }
        }
        match chosen {
            Some(pos) => {
                let c = free_cols.remove(pos);
                map[r] = Some(c);
                fixed += cost[r][c];
                remaining -= 1;
            }
            None if later.len() >= remaining => {}
            None => {
                return Err(Error::domain("assignment refinement lost optimality (ill-conditioned costs)"));
            }
        }
    }
    let total = map
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| cost[r][c]))
        .sum();
    Ok(Assignment { map, cols, cost: total })
}

/// Optimal node→class map maximizing matched counts.
pub fn node_class_mapping(table: &ContingencyTable) -> Assignment {
    let cost: Vec<Vec<f64>> = table
        .counts
        .iter()
        .map(|r| r.iter().map(|n| -(*n as f64)).collect())
        .collect();
    hungarian(&cost).expect("contingency costs are finite and non-empty")
}

/// Fraction of samples on a node mapped to their own class; samples on unmapped nodes are errors.
pub fn clustering_accuracy(table: &ContingencyTable) -> f64 {
    let total = table.total();
    if total == 0 {
        return 0.0;
    }
    let assignment = node_class_mapping(table);
    let matched: u64 = assignment.pairs().iter().map(|&(k, c)| table.counts[k][c]).sum();
    matched as f64 / total as f64
}

fn entropy(marginal: &[u64], total: f64) -> f64 {
    -marginal
        .iter()
        .filter(|n| **n > 0)
        .map(|&n| {
            let p = n as f64 / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// `I(U; V) / sqrt(H(U) H(V))` with natural logs.
///
/// When either partition has zero entropy the result is 1 if both do (a single shared cluster)
/// and 0 otherwise.
pub fn nmi(table: &ContingencyTable) -> f64 {
    let total = table.total();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let rows = table.node_sizes();
    let cols = table.class_sizes();
    let (hu, hv) = (entropy(&rows, n), entropy(&cols, n));
    if hu == 0.0 || hv == 0.0 {
        return if hu == 0.0 && hv == 0.0 { 1.0 } else { 0.0 };
    }
    let mut mi = 0.0;
    for (k, row) in table.counts.iter().enumerate() {
        for (c, &nkc) in row.iter().enumerate() {
            if nkc == 0 {
                continue;
            }
            let ratio = (n * nkc as f64) / (rows[k] as f64 * cols[c] as f64);
            mi += nkc as f64 / n * ratio.ln();
        }
    }
    (mi / (hu * hv).sqrt()).clamp(0.0, 1.0)
}

/// Number of clusters at least as large as the mean cluster size `N / K`.
pub fn ndc(cluster_sizes: &[u64], total: u64, num_clusters: usize) -> Result<usize> {
    if cluster_sizes.len() != num_clusters {
        return Err(Error::contract(format!(
            "{} cluster sizes for K = {num_clusters}",
            cluster_sizes.len()
        )));
    }
    if cluster_sizes.iter().sum::<u64>() != total {
        return Err(Error::contract("cluster sizes do not sum to N"));
    }
    let k = num_clusters as u128;
    Ok(cluster_sizes
        .iter()
        .filter(|&&s| s as u128 * k >= total as u128)
        .count())
}

/// Mean absolute difference between estimated and true class counts.
pub fn adif(estimates: &[usize], truths: &[usize]) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::contract("estimates and truths differ in length"));
    }
    if estimates.is_empty() {
        return Err(Error::contract("ADif over an empty list"));
    }
    let total: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (*e as f64 - *t as f64).abs())
        .sum();
    Ok(total / estimates.len() as f64)
}

pub fn cluster_sizes(nodes: &[usize], num_nodes: usize) -> Vec<u64> {
    let mut sizes = vec![0u64; num_nodes];
    for &k in nodes {
        sizes[k] += 1;
    }
    sizes
}

/// Accuracy, NMI and cluster statistics of a model on labeled data.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub nmi: f64,
    pub ndc: usize,
    pub cluster_sizes: Vec<u64>,
    pub mapping: Vec<Option<usize>>,
}

pub fn evaluate_model(model: &Mlp, features: &[f64], labels: &[usize], num_classes: usize) -> Result<Evaluation> {
    let k = model.num_outputs();
    let nodes = model.predict_nodes(features)?;
    let classes = num_classes.max(labels.iter().max().map_or(1, |m| m + 1));
    let table = ContingencyTable::from_labels(&nodes, k, labels, classes)?;
    let sizes = cluster_sizes(&nodes, k);
    Ok(Evaluation {
        accuracy: clustering_accuracy(&table),
        nmi: nmi(&table),
        ndc: ndc(&sizes, nodes.len() as u64, k)?,
        cluster_sizes: sizes,
        mapping: node_class_mapping(&table).as_slice().to_vec(),
    })
}
