//! Graph composition.
//!
//! The node graph is fixed once, before training: same-sector pairs are
//! always connected, and a thresholded correlation matrix (Pearson on
//! training-range returns, or Spearman on fundamental ratios) adds the rest.
//! Convolutions consume the symmetric-normalized operator
//! `D^{-1/2} (A + I) D^{-1/2}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::SectorTable;
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrelationMode {
    PearsonReturns,
    SpearmanRatios,
}

impl CorrelationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CorrelationMode::PearsonReturns => "returns",
            CorrelationMode::SpearmanRatios => "ratios",
        }
    }
}

/// Whether the edge threshold applies to |corr| or to the signed value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdRule {
    Absolute,
    Signed,
}

/// Symmetric correlation matrix with a zeroed diagonal.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    pub values: Tensor2,
    pub mode: CorrelationMode,
}

/// Same-sector adjacency: `A[i][j] = 1` iff the sector strings are exactly
/// identical and `i != j`.
pub fn sector_adjacency(sectors: &SectorTable, order: &[String]) -> Result<Tensor2> {
    let labels: Vec<&str> = order
        .iter()
        .map(|t| sectors.sector_of(t).ok_or_else(|| Error::MissingTicker(t.clone())))
        .collect::<Result<_>>()?;
    let n = order.len();
    Ok(Tensor2::from_fn(n, n, |i, j| {
        if i != j && labels[i] == labels[j] {
            1.0
        } else {
            0.0
        }
    }))
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateSeries("zero variance in correlation input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of aligned return series; diagonal zeroed.
pub fn pearson_returns_correlation(series: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    let n = series.len();
    if n == 0 {
        return Err(Error::EmptyInput("no return series".into()));
    }
    let len = series[0].len();
    if len < 3 {
        return Err(Error::InsufficientHistory(format!(
            "correlation needs at least 3 observations, got {len}"
        )));
    }
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::ShapeError("return series lengths differ".into()));
    }
    let mut values = Tensor2::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let r = pearson(&series[i], &series[j])?;
            values.set(i, j, r);
            values.set(j, i, r);
        }
    }
    Ok(CorrelationMatrix { values, mode: CorrelationMode::PearsonReturns })
}

/// Average ranks (ties share the mean of their positions, 1-based).
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation between the tickers' ratio vectors: each vector is
/// average-ranked within itself, then Pearson is applied to the rank vectors.
/// `rows` holds one normalized length-28 ratio vector per ticker.
pub fn spearman_ratio_correlation(rows: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::EmptyInput("no ratio vectors".into()));
    }
    let ranked: Vec<Vec<f64>> = rows.iter().map(|r| average_ranks(r)).collect();
    for (i, r) in ranked.iter().enumerate() {
        if r.iter().all(|v| *v == r[0]) {
            return Err(Error::DegenerateSeries(format!(
                "constant ratio vector at index {i}"
            )));
        }
    }
    let mut values = Tensor2::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let r = pearson(&ranked[i], &ranked[j])?;
            values.set(i, j, r);
            values.set(j, i, r);
        }
    }
    Ok(CorrelationMatrix { values, mode: CorrelationMode::SpearmanRatios })
}

/// The composed graph and its normalized convolution operator. Immutable
/// after construction; [`ComposedGraph::verify_unchanged`] re-derives the
/// content hash taken here.
#[derive(Debug, Clone)]
pub struct ComposedGraph {
    pub adjacency: Tensor2,
    pub normalized: Tensor2,
    pub threshold_used: f64,
    pub mode: CorrelationMode,
    pub rule: ThresholdRule,
    hash: [u8; 32],
}

impl ComposedGraph {
    pub fn n_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn content_hash(&self) -> [u8; 32] {
        self.hash
    }

    pub fn content_hash_hex(&self) -> String {
        self.hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn verify_unchanged(&self) -> bool {
        compute_hash(&self.adjacency, &self.normalized, self.threshold_used, self.mode) == self.hash
    }

    /// Undirected edges as index pairs, `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n_nodes();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.adjacency.get(i, j) != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

fn compute_hash(
    adjacency: &Tensor2,
    normalized: &Tensor2,
    threshold: f64,
    mode: CorrelationMode,
) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(mode.as_str().as_bytes());
    hasher.update(threshold.to_le_bytes());
    for v in adjacency.data() {
        hasher.update(v.to_le_bytes());
    }
    for v in normalized.data() {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().into()
}

/// Unions the sector adjacency with the thresholded correlation graph and
/// normalizes. Isolated nodes are allowed; they keep only their self-loop in
/// the normalized operator.
pub fn compose(
    sector: &Tensor2,
    corr: &CorrelationMatrix,
    threshold: f64,
    rule: ThresholdRule,
) -> Result<ComposedGraph> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let n = sector.rows();
    if sector.shape() != (n, n) || corr.values.shape() != (n, n) {
        return Err(Error::ShapeError(format!(
            "sector {:?} vs correlation {:?}",
            sector.shape(),
            corr.values.shape()
        )));
    }
    let adjacency = Tensor2::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        let c = corr.values.get(i, j);
        let hit = match rule {
            ThresholdRule::Absolute => c.abs() >= threshold,
            ThresholdRule::Signed => c >= threshold,
        };
        if sector.get(i, j) != 0.0 || hit {
            1.0
        } else {
            0.0
        }
    });
    let degrees: Vec<f64> = (0..n)
        .map(|i| 1.0 + adjacency.row(i).iter().sum::<f64>())
        .collect();
    let normalized = Tensor2::from_fn(n, n, |i, j| {
        let a = if i == j { 1.0 } else { adjacency.get(i, j) };
        if a == 0.0 {
            0.0
        } else {
            a / (degrees[i] * degrees[j]).sqrt()
        }
    });
    let hash = compute_hash(&adjacency, &normalized, threshold, corr.mode);
    Ok(ComposedGraph {
        adjacency,
        normalized,
        threshold_used: threshold,
        mode: corr.mode,
        rule,
        hash,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDiagnostics {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub unconnected_nodes: Vec<String>,
    /// degree -> node count.
    pub degree_histogram: BTreeMap<usize, usize>,
}

pub fn diagnostics(graph: &ComposedGraph, order: &[String]) -> GraphDiagnostics {
    let n = graph.n_nodes();
    let mut unconnected = Vec::new();
    let mut histogram = BTreeMap::new();
    for i in 0..n {
        let degree = graph.adjacency.row(i).iter().filter(|v| **v != 0.0).count();
        *histogram.entry(degree).or_insert(0) += 1;
        if degree == 0 {
            unconnected.push(order.get(i).cloned().unwrap_or_else(|| i.to_string()));
        }
    }
    GraphDiagnostics {
        n_nodes: n,
        n_edges: graph.edges().len(),
        unconnected_nodes: unconnected,
        degree_histogram: histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{SectorRow, SectorTable};
    use proptest::prelude::*;

    fn sector_table(pairs: &[(&str, &str)]) -> SectorTable {
        SectorTable::new(
            pairs
                .iter()
                .map(|(t, s)| SectorRow {
                    ticker: t.to_string(),
                    company_name: String::new(),
                    sector: s.to_string(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn order(tickers: &[&str]) -> Vec<String> {
        tickers.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn sector_adjacency_exact_match_rule() {
        let table = sector_table(&[("A", "Banks"), ("B", "Banks"), ("C", "Mining")]);
        let adj = sector_adjacency(&table, &order(&["A", "B", "C"])).unwrap();
        assert_eq!(adj.get(0, 1), 1.0);
        assert_eq!(adj.get(1, 0), 1.0);
        assert_eq!(adj.get(0, 2), 0.0);
        assert_eq!(adj.get(1, 2), 0.0);
        assert_eq!(adj.get(0, 0), 0.0);
    }

    #[test]
    fn sector_adjacency_all_distinct_is_zero() {
        let table = sector_table(&[("A", "Banks"), ("B", "Mining"), ("C", "Media")]);
        let adj = sector_adjacency(&table, &order(&["A", "B", "C"])).unwrap();
        assert!(adj.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sector_adjacency_banks_clique() {
        // Five banks in a wider universe form a 5-clique.
        let table = sector_table(&[
            ("BARC.L", "Banks"),
            ("HSBA.L", "Banks"),
            ("LLOY.L", "Banks"),
            ("NWG.L", "Banks"),
            ("STAN.L", "Banks"),
            ("RIO.L", "Mining"),
            ("WPP.L", "Media"),
        ]);
        let tickers = order(&["BARC.L", "HSBA.L", "LLOY.L", "NWG.L", "STAN.L", "RIO.L", "WPP.L"]);
        let adj = sector_adjacency(&table, &tickers).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(adj.get(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
        let edge_count: f64 = adj.data().iter().sum::<f64>() / 2.0;
        assert_eq!(edge_count, 10.0); // C(5,2)
    }

    #[test]
    fn sector_adjacency_unknown_ticker() {
        let table = sector_table(&[("A", "Banks")]);
        assert!(matches!(
            sector_adjacency(&table, &order(&["A", "Z"])),
            Err(Error::MissingTicker(t)) if t == "Z"
        ));
    }

    #[test]
    fn pearson_perfect_linear() {
        let x: Vec<f64> = (0..20).map(|t| t as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let m = pearson_returns_correlation(&[x.clone(), y, neg]).unwrap();
        assert!((m.values.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((m.values.get(0, 2) + 1.0).abs() < 1e-12);
        assert_eq!(m.values.get(0, 0), 0.0); // self-correlation removed
    }

    #[test]
    fn pearson_zero_variance_errors() {
        let x = vec![1.0, 2.0, 3.0];
        let flat = vec![5.0, 5.0, 5.0];
        assert!(matches!(
            pearson_returns_correlation(&[x, flat]),
            Err(Error::DegenerateSeries(_))
        ));
    }

    /// Direct covariance / (sigma * sigma) oracle.
    fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
        let vx = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
        let vy = y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n;
        cov / (vx.sqrt() * vy.sqrt())
    }

    #[test]
    fn pearson_matches_oracle_on_random_walks() {
        for seed in 0..20u64 {
            let walk = |s: u64| -> Vec<f64> {
                let mut state = s.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
                let mut v = 0.0;
                (0..20)
                    .map(|_| {
                        state = state
                            .wrapping_mul(2862933555777941757)
                            .wrapping_add(3037000493);
                        v += ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
                        v
                    })
                    .collect()
            };
            let a = walk(seed * 2 + 1);
            let b = walk(seed * 2 + 2);
            let got = pearson_returns_correlation(&[a.clone(), b.clone()]).unwrap();
            assert!((got.values.get(0, 1) - pearson_oracle(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn spearman_monotone_orderings() {
        let a: Vec<f64> = vec![1.0, 5.0, 3.0, 9.0, 2.0];
        let b: Vec<f64> = a.iter().map(|v| v.exp()).collect(); // same ordering
        let c: Vec<f64> = a.iter().map(|v| -v).collect(); // reversed ordering
        let m = spearman_ratio_correlation(&[a, b, c]).unwrap();
        assert!((m.values.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((m.values.get(0, 2) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_constant_vector_errors() {
        assert!(matches!(
            spearman_ratio_correlation(&[vec![1.0, 2.0, 3.0], vec![4.0, 4.0, 4.0]]),
            Err(Error::DegenerateSeries(_))
        ));
    }

    /// Rank-transform oracle that enumerates average ranks explicitly.
    fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|a| {
                    let below = v.iter().filter(|b| **b < *a).count() as f64;
                    let equal = v.iter().filter(|b| **b == *a).count() as f64;
                    below + (equal + 1.0) / 2.0
                })
                .collect()
        };
        pearson_oracle(&rank(x), &rank(y))
    }

    #[test]
    fn spearman_ties_match_rank_oracle() {
        let a = vec![1.0, 2.0, 2.0, 3.0, 4.0, 4.0, 4.0, 7.0];
        let b = vec![2.0, 1.0, 4.0, 4.0, 5.0, 5.0, 8.0, 6.0];
        let m = spearman_ratio_correlation(&[a.clone(), b.clone()]).unwrap();
        assert!((m.values.get(0, 1) - spearman_oracle(&a, &b)).abs() < 1e-12);
    }

    fn toy_corr(n: usize, f: impl Fn(usize, usize) -> f64) -> CorrelationMatrix {
        let values = Tensor2::from_fn(n, n, |i, j| if i == j { 0.0 } else { f(i.min(j), i.max(j)) });
        CorrelationMatrix { values, mode: CorrelationMode::PearsonReturns }
    }

    #[test]
    fn compose_single_node() {
        let sector = Tensor2::zeros(1, 1);
        let corr = toy_corr(1, |_, _| 0.0);
        let g = compose(&sector, &corr, 0.5, ThresholdRule::Absolute).unwrap();
        assert_eq!(g.normalized.get(0, 0), 1.0);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn compose_path_graph_matches_hand_calculation() {
        // Path 0-1-2: degrees with self-loops are (2, 3, 2).
        let sector = Tensor2::from_vec(
            3,
            3,
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        let corr = toy_corr(3, |_, _| 0.0);
        let g = compose(&sector, &corr, 0.5, ThresholdRule::Absolute).unwrap();
        let s6 = 1.0 / 6.0f64.sqrt();
        assert!((g.normalized.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((g.normalized.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((g.normalized.get(2, 2) - 0.5).abs() < 1e-15);
        assert!((g.normalized.get(0, 1) - s6).abs() < 1e-15);
        assert!((g.normalized.get(1, 2) - s6).abs() < 1e-15);
        assert_eq!(g.normalized.get(0, 2), 0.0);
    }

    #[test]
    fn compose_threshold_applies_to_magnitude() {
        let sector = Tensor2::zeros(2, 2);
        let corr = toy_corr(2, |_, _| -0.8);
        let g = compose(&sector, &corr, 0.5, ThresholdRule::Absolute).unwrap();
        assert_eq!(g.edges(), vec![(0, 1)]);
        let g = compose(&sector, &corr, 0.5, ThresholdRule::Signed).unwrap();
        assert!(g.edges().is_empty());
    }

    #[test]
    fn compose_rejects_out_of_range_threshold() {
        let sector = Tensor2::zeros(2, 2);
        let corr = toy_corr(2, |_, _| 0.3);
        assert!(compose(&sector, &corr, 0.0, ThresholdRule::Absolute).is_err());
        assert!(compose(&sector, &corr, 1.0, ThresholdRule::Absolute).is_err());
    }

    #[test]
    fn normalized_reconstruction_recovers_self_loop_adjacency() {
        // normalized[i][j] * sqrt(d_i * d_j) must rebuild A + I exactly.
        let sector = Tensor2::from_vec(
            3,
            3,
            vec![0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        )
        .unwrap();
        let corr = toy_corr(3, |_, _| 0.0);
        let g = compose(&sector, &corr, 0.5, ThresholdRule::Absolute).unwrap();
        let degrees: Vec<f64> = (0..3)
            .map(|i| 1.0 + g.adjacency.row(i).iter().sum::<f64>())
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                let rebuilt = g.normalized.get(i, j) * (degrees[i] * degrees[j]).sqrt();
                let expected = if i == j { 1.0 } else { g.adjacency.get(i, j) };
                assert!((rebuilt - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diagnostics_cases() {
        let tickers = order(&["A", "B", "C"]);
        let sector = Tensor2::zeros(3, 3);
        let corr = toy_corr(3, |_, _| 0.1);
        let g = compose(&sector, &corr, 0.9, ThresholdRule::Absolute).unwrap();
        let d = diagnostics(&g, &tickers);
        assert_eq!(d.n_edges, 0);
        assert_eq!(d.unconnected_nodes, vec!["A", "B", "C"]);

        let corr = toy_corr(3, |_, _| 0.95);
        let g = compose(&sector, &corr, 0.9, ThresholdRule::Absolute).unwrap();
        let d = diagnostics(&g, &tickers);
        assert_eq!(d.n_edges, 3); // K3
        assert!(d.unconnected_nodes.is_empty());
        assert_eq!(d.degree_histogram.get(&2), Some(&3));
    }

    #[test]
    fn diagnostics_lists_isolate_by_ticker() {
        let tickers = order(&["A", "B", "C"]);
        let sector = Tensor2::zeros(3, 3);
        // Only the (0,1) pair correlates strongly; C stays isolated.
        let corr = toy_corr(3, |i, j| if (i, j) == (0, 1) { 0.9 } else { 0.1 });
        let g = compose(&sector, &corr, 0.8, ThresholdRule::Absolute).unwrap();
        let d = diagnostics(&g, &tickers);
        assert_eq!(d.unconnected_nodes, vec!["C"]);
        assert_eq!(d.n_edges, 1);
    }

    #[test]
    fn content_hash_detects_mutation() {
        let sector = Tensor2::zeros(2, 2);
        let corr = toy_corr(2, |_, _| 0.9);
        let mut g = compose(&sector, &corr, 0.5, ThresholdRule::Absolute).unwrap();
        assert!(g.verify_unchanged());
        g.normalized.set(0, 0, 0.123);
        assert!(!g.verify_unchanged());
    }

    proptest! {
        /// Raising the threshold never adds an edge.
        #[test]
        fn threshold_monotonicity(seed in 0u64..300) {
            let n = 6;
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(99);
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            };
            let mut vals = Tensor2::zeros(n, n);
            for i in 0..n {
                for j in i + 1..n {
                    let v = next();
                    vals.set(i, j, v);
                    vals.set(j, i, v);
                }
            }
            let corr = CorrelationMatrix { values: vals, mode: CorrelationMode::PearsonReturns };
            let sector = Tensor2::zeros(n, n);
            let lo = compose(&sector, &corr, 0.3, ThresholdRule::Absolute).unwrap();
            let hi = compose(&sector, &corr, 0.7, ThresholdRule::Absolute).unwrap();
            for (l, h) in lo.adjacency.data().iter().zip(hi.adjacency.data()) {
                prop_assert!(h <= l);
            }
        }

        /// The normalized operator equals its transpose exactly.
        #[test]
        fn normalized_operator_symmetry(seed in 0u64..300) {
            let n = 5;
            let mut state = seed.wrapping_mul(2862933555777941757).wrapping_add(7);
            let mut next = || {
                state = state.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
                (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            };
            let mut vals = Tensor2::zeros(n, n);
            for i in 0..n {
                for j in i + 1..n {
                    let v = next();
                    vals.set(i, j, v);
                    vals.set(j, i, v);
                }
            }
            let corr = CorrelationMatrix { values: vals, mode: CorrelationMode::PearsonReturns };
            let sector = Tensor2::zeros(n, n);
            let g = compose(&sector, &corr, 0.4, ThresholdRule::Absolute).unwrap();
            prop_assert_eq!(g.normalized.transpose(), g.normalized.clone());
            prop_assert_eq!(g.adjacency.transpose(), g.adjacency.clone());
        }
    }
}
