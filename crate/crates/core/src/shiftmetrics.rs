//! Diagnostics for distribution shift between two periods of a signal
//! series: a neighborhood rank-agreement statistic for spatial-relation
//! shift, and dynamic time warping for temporal-profile shift.
//!
//! The rank statistic for node v with neighbor set N(v) over two aligned
//! m-step periods x and y is
//!
//! ```text
//! tau_v = (1/|N(v)|) * sum_{u in N(v)} 2/(m(m-1)) *
//!         sum_{i<j} sign(x_v(i) - x_u(i)) * sign(y_v(j) - y_u(j))
//! ```
//!
//! with sign(0) = 0. It is +1 when the order between v and each neighbor is
//! persistent across both periods, -1 when every ordering flips, and lands
//! in [-1,1] always. Note the cross-index pairing: step i is drawn from the
//! first period and step j > i from the second, so the statistic reads as
//! ordering persistence rather than same-step concordance.

use rayon::prelude::*;

use crate::dataio::{RoadGraph, SignalSeries};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct MetricError(pub String);

fn sign(d: f64) -> i64 {
    if d > 0.0 {
        1
    } else if d < 0.0 {
        -1
    } else {
        0
    }
}

/// Integer cross-index sum sum_{i<j} sign(xv_i - xu_i) * sign(yv_j - yu_j),
/// computed in O(m) with a running prefix of the first-period signs.
fn pair_sum_fast(x_v: &[f64], x_u: &[f64], y_v: &[f64], y_u: &[f64]) -> i64 {
    let mut prefix: i64 = 0;
    let mut total: i64 = 0;
    for j in 0..x_v.len() {
        if j > 0 {
            prefix += sign(x_v[j - 1] - x_u[j - 1]);
        }
        total += sign(y_v[j] - y_u[j]) * prefix;
    }
    total
}

fn tau_from_pair_sums(sums: &[i64], m: usize) -> f64 {
    let denom = (m * (m - 1)) as f64;
    let mut acc = 0.0;
    for &s in sums {
        acc += 2.0 * s as f64 / denom;
    }
    acc / sums.len() as f64
}

fn check_windows(
    x_v: &[f64],
    x_neighbors: &[Vec<f64>],
    y_v: &[f64],
    y_neighbors: &[Vec<f64>],
) -> Result<usize, MetricError> {
    let m = x_v.len();
    if m < 2 {
        return Err(MetricError(format!("need at least 2 steps, got {m}")));
    }
    if y_v.len() != m {
        return Err(MetricError(format!(
            "period lengths differ: {m} vs {}",
            y_v.len()
        )));
    }
    if x_neighbors.len() != y_neighbors.len() {
        return Err(MetricError(format!(
            "neighbor counts differ: {} vs {}",
            x_neighbors.len(),
            y_neighbors.len()
        )));
    }
    for s in x_neighbors.iter().chain(y_neighbors) {
        if s.len() != m {
            return Err(MetricError(format!(
                "neighbor series length {} does not match {m}",
                s.len()
            )));
        }
    }
    Ok(m)
}

/// Rank-agreement statistic for one node given its own series and its
/// neighbors' series over two aligned periods. Returns `None` for an
/// isolated node (no neighbors), for which the statistic is undefined.
pub fn kendall_tau_node(
    x_v: &[f64],
    x_neighbors: &[Vec<f64>],
    y_v: &[f64],
    y_neighbors: &[Vec<f64>],
) -> Result<Option<f64>, MetricError> {
    let m = check_windows(x_v, x_neighbors, y_v, y_neighbors)?;
    if x_neighbors.is_empty() {
        return Ok(None);
    }
    let sums: Vec<i64> = x_neighbors
        .iter()
        .zip(y_neighbors)
        .map(|(xu, yu)| pair_sum_fast(x_v, xu, y_v, yu))
        .collect();
    Ok(Some(tau_from_pair_sums(&sums, m)))
}

/// Reference implementation of [`kendall_tau_node`] that enumerates every
/// (neighbor, i<j) term directly. Quadratic in the period length; used by
/// the test suite as an exact oracle.
pub fn kendall_tau_node_reference(
    x_v: &[f64],
    x_neighbors: &[Vec<f64>],
    y_v: &[f64],
    y_neighbors: &[Vec<f64>],
) -> Result<Option<f64>, MetricError> {
    let m = check_windows(x_v, x_neighbors, y_v, y_neighbors)?;
    if x_neighbors.is_empty() {
        return Ok(None);
    }
    let mut sums = Vec::with_capacity(x_neighbors.len());
    for (xu, yu) in x_neighbors.iter().zip(y_neighbors) {
        let mut s: i64 = 0;
        for i in 0..m {
            for j in i + 1..m {
                s += sign(x_v[i] - xu[i]) * sign(y_v[j] - yu[j]);
            }
        }
        sums.push(s);
    }
    Ok(Some(tau_from_pair_sums(&sums, m)))
}

/// Per-node rank agreement between two aligned series over a shared graph.
/// Isolated nodes get `None`. Nodes are processed independently on the
/// global worker pool; output order is fixed by node index.
pub fn kendall_tau_graph(
    series1: &SignalSeries,
    series2: &SignalSeries,
    graph: &RoadGraph,
    channel: usize,
) -> Result<Vec<Option<f64>>, MetricError> {
    if series1.nodes() != graph.n_nodes() || series2.nodes() != graph.n_nodes() {
        return Err(MetricError(format!(
            "node counts differ: series {} / {}, graph {}",
            series1.nodes(),
            series2.nodes(),
            graph.n_nodes()
        )));
    }
    if series1.steps() != series2.steps() {
        return Err(MetricError(format!(
            "period lengths differ: {} vs {}",
            series1.steps(),
            series2.steps()
        )));
    }
    if channel >= series1.channels() || channel >= series2.channels() {
        return Err(MetricError(format!("channel {channel} out of range")));
    }
    let neighbors = graph.neighbor_sets();
    (0..graph.n_nodes())
        .into_par_iter()
        .map(|v| {
            let x_v = series1.node_series(v, channel);
            let y_v = series2.node_series(v, channel);
            let x_n: Vec<Vec<f64>> = neighbors[v]
                .iter()
                .map(|&u| series1.node_series(u, channel))
                .collect();
            let y_n: Vec<Vec<f64>> = neighbors[v]
                .iter()
                .map(|&u| series2.node_series(u, channel))
                .collect();
            kendall_tau_node(&x_v, &x_n, &y_v, &y_n)
        })
        .collect()
}

/// Dynamic-time-warping distance with cost |a_i - b_j| and steps
/// down/right/diagonal. `band` restricts the alignment to |i - j| <= band
/// (Sakoe-Chiba); `None` computes the exact unconstrained distance.
pub fn dtw(a: &[f64], b: &[f64], band: Option<usize>) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError("dtw inputs must be non-empty".into()));
    }
    if let Some(w) = band {
        if w < a.len().abs_diff(b.len()) {
            return Err(MetricError(format!(
                "band {w} too narrow for lengths {} and {}: corners unreachable",
                a.len(),
                b.len()
            )));
        }
    }
    let (n, m) = (a.len(), b.len());
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for i in 0..n {
        cur.iter_mut().for_each(|v| *v = f64::INFINITY);
        let (j_lo, j_hi) = match band {
            Some(w) => (i.saturating_sub(w), (i + w).min(m - 1)),
            None => (0, m - 1),
        };
        for j in j_lo..=j_hi {
            let cost = (a[i] - b[j]).abs();
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut v = f64::INFINITY;
                if i > 0 {
                    v = v.min(prev[j]);
                }
                if j > 0 {
                    v = v.min(cur[j - 1]);
                }
                if i > 0 && j > 0 {
                    v = v.min(prev[j - 1]);
                }
                v
            };
            cur[j] = best + cost;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Reference implementation of [`dtw`] that enumerates every monotone
/// alignment path on the grid and takes the cheapest, accumulating costs
/// in path order so results match the dynamic program bit for bit.
/// Exponential; only usable for short series.
pub fn dtw_reference(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError("dtw inputs must be non-empty".into()));
    }
    fn go(a: &[f64], b: &[f64], i: usize, j: usize, sum: f64, best: &mut f64) {
        let sum = sum + (a[i] - b[j]).abs();
        if i == a.len() - 1 && j == b.len() - 1 {
            if sum < *best {
                *best = sum;
            }
            return;
        }
        if i + 1 < a.len() {
            go(a, b, i + 1, j, sum, best);
        }
        if j + 1 < b.len() {
            go(a, b, i, j + 1, sum, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            go(a, b, i + 1, j + 1, sum, best);
        }
    }
    let mut best = f64::INFINITY;
    go(a, b, 0, 0, 0.0, &mut best);
    Ok(best)
}

/// Mean/median/quartiles of a non-empty sample. Quartiles use linear
/// interpolation between order statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl SummaryStats {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: quantile(&sorted, 0.5),
            q1: quantile(&sorted, 0.25),
            q3: quantile(&sorted, 0.75),
        })
    }
}

/// 20 equal-width bins over [lo, hi]; a value equal to `hi` lands in the
/// last bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: [usize; 20],
}

impl Histogram {
    fn of(values: &[f64], lo: f64, hi: f64) -> Self {
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut counts = [0usize; 20];
        for &v in values {
            let idx = (((v - lo) / span) * 20.0).floor() as isize;
            counts[idx.clamp(0, 19) as usize] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn bin_edges(&self, bin: usize) -> (f64, f64) {
        let span = if self.hi > self.lo { self.hi - self.lo } else { 1.0 };
        let w = span / 20.0;
        (self.lo + bin as f64 * w, self.lo + (bin + 1) as f64 * w)
    }
}

/// Per-node shift diagnostics between two aligned periods.
#[derive(Debug, Clone)]
pub struct ShiftReport {
    /// Rank agreement per node; `None` for isolated nodes.
    pub per_node_tau: Vec<Option<f64>>,
    /// Warping distance between each node's own series across the periods.
    pub per_node_dtw: Vec<f64>,
    /// Tau histogram over the fixed range [-1, 1], defined nodes only.
    pub tau_hist: Histogram,
    /// Distance histogram over [0, max observed].
    pub dtw_hist: Histogram,
    /// `None` when every node is isolated.
    pub tau_summary: Option<SummaryStats>,
    pub dtw_summary: SummaryStats,
}

fn znorm(series: &[f64]) -> Vec<f64> {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let std = if std < 1e-8 { 1.0 } else { std };
    series.iter().map(|v| (v - mean) / std).collect()
}

/// Full two-period diagnostic: per-node rank agreement plus per-node
/// warping distance, with 20-bin histograms and summary statistics.
///
/// By default each node's series is standardized within its period before
/// warping, so level drift does not swamp shape comparison; `raw_dtw`
/// switches to raw values.
pub fn shift_report(
    period1: &SignalSeries,
    period2: &SignalSeries,
    graph: &RoadGraph,
    channel: usize,
    raw_dtw: bool,
) -> Result<ShiftReport, MetricError> {
    let per_node_tau = kendall_tau_graph(period1, period2, graph, channel)?;
    let per_node_dtw: Vec<f64> = (0..graph.n_nodes())
        .into_par_iter()
        .map(|v| {
            let a = period1.node_series(v, channel);
            let b = period2.node_series(v, channel);
            if raw_dtw {
                dtw(&a, &b, None)
            } else {
                dtw(&znorm(&a), &znorm(&b), None)
            }
        })
        .collect::<Result<_, _>>()?;

    let defined: Vec<f64> = per_node_tau.iter().flatten().copied().collect();
    let dtw_max = per_node_dtw.iter().cloned().fold(0.0, f64::max);
    Ok(ShiftReport {
        tau_hist: Histogram::of(&defined, -1.0, 1.0),
        dtw_hist: Histogram::of(&per_node_dtw, 0.0, dtw_max),
        tau_summary: SummaryStats::of(&defined),
        dtw_summary: SummaryStats::of(&per_node_dtw).expect("graph has at least one node"),
        per_node_tau,
        per_node_dtw,
    })
}

/// Mean of the defined per-node tau entries, if any.
pub fn mean_tau(per_node_tau: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = per_node_tau.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Tab-separated rendering: one `node tau dtw` row per node (isolated nodes
/// print `undefined`), a blank line, `summary` rows, and with
/// `include_histogram` one `hist metric lo hi count` row per bin.
pub fn render_tsv(report: &ShiftReport, include_histogram: bool) -> String {
    let mut out = String::from("node\ttau\tdtw\n");
    for (v, (tau, d)) in report
        .per_node_tau
        .iter()
        .zip(&report.per_node_dtw)
        .enumerate()
    {
        match tau {
            Some(t) => out.push_str(&format!("{v}\t{t}\t{d}\n")),
            None => out.push_str(&format!("{v}\tundefined\t{d}\n")),
        }
    }
    out.push('\n');
    out.push_str("summary\tmetric\tmean\tmedian\tq1\tq3\n");
    match &report.tau_summary {
        Some(s) => out.push_str(&format!(
            "summary\ttau\t{}\t{}\t{}\t{}\n",
            s.mean, s.median, s.q1, s.q3
        )),
        None => out.push_str("summary\ttau\tundefined\tundefined\tundefined\tundefined\n"),
    }
    let s = &report.dtw_summary;
    out.push_str(&format!(
        "summary\tdtw\t{}\t{}\t{}\t{}\n",
        s.mean, s.median, s.q1, s.q3
    ));
    if include_histogram {
        for (name, hist) in [("tau", &report.tau_hist), ("dtw", &report.dtw_hist)] {
            for bin in 0..20 {
                let (lo, hi) = hist.bin_edges(bin);
                out.push_str(&format!("hist\t{name}\t{lo}\t{hi}\t{}\n", hist.counts[bin]));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn tau_persistent_ordering_is_one() {
        // v above u at every step in both periods
        let x_v = vec![3.0, 4.0, 5.0, 3.5];
        let x_u = vec![1.0, 2.0, 1.5, 0.5];
        let tau = kendall_tau_node(&x_v, &[x_u.clone()], &x_v, &[x_u]).unwrap();
        assert_eq!(tau, Some(1.0));
    }

    #[test]
    fn tau_reversed_ordering_is_minus_one() {
        let x_v = vec![3.0, 4.0, 5.0];
        let x_u = vec![1.0, 2.0, 1.5];
        // second period flips every ordering
        let tau = kendall_tau_node(&x_v, &[x_u.clone()], &x_u, &[x_v.clone()]).unwrap();
        assert_eq!(tau, Some(-1.0));
    }

    #[test]
    fn tau_three_step_oracle() {
        // first-period sign pattern [+,-,+], second-period [+,+,-]:
        // pairs (0,1): +*+ = 1, (0,2): +*- = -1, (1,2): -*- = 1 -> sum 1
        // tau = 2/(3*2) * 1 = 1/3
        let x_v = vec![1.0, 0.0, 1.0];
        let x_u = vec![0.0, 1.0, 0.0];
        let y_v = vec![1.0, 1.0, 0.0];
        let y_u = vec![0.0, 0.0, 1.0];
        let tau = kendall_tau_node(&x_v, &[x_u], &y_v, &[y_u]).unwrap().unwrap();
        assert!((tau - 1.0 / 3.0).abs() < 1e-15, "{tau}");
    }

    #[test]
    fn tau_isolated_node_is_undefined() {
        let x_v = vec![1.0, 2.0];
        assert_eq!(kendall_tau_node(&x_v, &[], &x_v, &[]).unwrap(), None);
    }

    #[test]
    fn tau_short_period_is_error() {
        let x_v = vec![1.0];
        let x_u = vec![0.0];
        assert!(kendall_tau_node(&x_v, &[x_u.clone()], &x_v, &[x_u]).is_err());
    }

    #[test]
    fn tau_matches_reference_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..300 {
            let m = rng.random_range(2..=6);
            let n_neigh = rng.random_range(1..=3);
            let gen = |rng: &mut ChaCha20Rng| -> Vec<f64> {
                // small integer grid makes sign ties common
                (0..m).map(|_| rng.random_range(-2..=2) as f64).collect()
            };
            let x_v = gen(&mut rng);
            let y_v = gen(&mut rng);
            let x_n: Vec<Vec<f64>> = (0..n_neigh).map(|_| gen(&mut rng)).collect();
            let y_n: Vec<Vec<f64>> = (0..n_neigh).map(|_| gen(&mut rng)).collect();
            let fast = kendall_tau_node(&x_v, &x_n, &y_v, &y_n).unwrap().unwrap();
            let slow = kendall_tau_node_reference(&x_v, &x_n, &y_v, &y_n)
                .unwrap()
                .unwrap();
            assert_eq!(fast.to_bits(), slow.to_bits(), "fast {fast} vs slow {slow}");
            assert!((-1.0..=1.0).contains(&fast));
        }
    }

    fn series_from_cols(cols: Vec<Vec<f64>>) -> SignalSeries {
        let t = cols[0].len();
        let n = cols.len();
        let mut data = Vec::with_capacity(t * n);
        for step in 0..t {
            for col in &cols {
                data.push(col[step]);
            }
        }
        SignalSeries::new(Tensor::new(vec![t, n, 1], data).unwrap(), 288, 0).unwrap()
    }

    #[test]
    fn tau_graph_line_graph_matches_reference() {
        // 4-node line graph, both directions
        let graph = RoadGraph::new(
            4,
            vec![
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 2, 1.0),
                (2, 1, 1.0),
                (2, 3, 1.0),
                (3, 2, 1.0),
            ],
        )
        .unwrap();
        let s1 = series_from_cols(vec![
            vec![1.0, 2.0, 0.0],
            vec![2.0, 1.0, 1.0],
            vec![0.0, 3.0, 2.0],
            vec![1.0, 1.0, 1.0],
        ]);
        let s2 = series_from_cols(vec![
            vec![2.0, 0.0, 1.0],
            vec![1.0, 1.0, 2.0],
            vec![3.0, 2.0, 0.0],
            vec![0.0, 2.0, 2.0],
        ]);
        let got = kendall_tau_graph(&s1, &s2, &graph, 0).unwrap();
        let neighbors = graph.neighbor_sets();
        for v in 0..4 {
            let x_v = s1.node_series(v, 0);
            let y_v = s2.node_series(v, 0);
            let x_n: Vec<Vec<f64>> = neighbors[v].iter().map(|&u| s1.node_series(u, 0)).collect();
            let y_n: Vec<Vec<f64>> = neighbors[v].iter().map(|&u| s2.node_series(u, 0)).collect();
            let want = kendall_tau_node_reference(&x_v, &x_n, &y_v, &y_n).unwrap();
            assert_eq!(got[v], want);
        }
    }

    #[test]
    fn tau_graph_empty_edges_all_undefined() {
        let graph = RoadGraph::new(3, vec![]).unwrap();
        let s = series_from_cols(vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![0.0, 3.0]]);
        let got = kendall_tau_graph(&s, &s, &graph, 0).unwrap();
        assert_eq!(got, vec![None, None, None]);
        assert_eq!(mean_tau(&got), None);
    }

    #[test]
    fn tau_graph_node_count_mismatch_is_error() {
        let graph = RoadGraph::new(5, vec![(0, 1, 1.0)]).unwrap();
        let s = series_from_cols(vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(kendall_tau_graph(&s, &s, &graph, 0).is_err());
    }

    #[test]
    fn dtw_identity_and_pinned_value() {
        let a = vec![0.3, -1.2, 4.5, 0.0];
        assert_eq!(dtw(&a, &a, None).unwrap(), 0.0);
        assert_eq!(dtw(&[0.0, 1.0, 2.0], &[0.0, 2.0], None).unwrap(), 1.0);
    }

    #[test]
    fn dtw_symmetric_and_matches_reference() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..300 {
            let n = rng.random_range(1..=6);
            let m = rng.random_range(1..=6);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
            let d = dtw(&a, &b, None).unwrap();
            assert_eq!(d.to_bits(), dtw(&b, &a, None).unwrap().to_bits());
            assert_eq!(d.to_bits(), dtw_reference(&a, &b).unwrap().to_bits());
            assert!(d >= 0.0);
        }
    }

    #[test]
    fn dtw_band_errors_and_agreement() {
        // band narrower than the length gap cannot reach the corner
        assert!(dtw(&[1.0, 2.0, 3.0, 4.0], &[1.0], Some(1)).is_err());
        // a generous band equals the exact distance
        let a = vec![0.0, 1.0, 3.0, 2.0, 0.5];
        let b = vec![0.2, 0.9, 2.8, 1.9, 0.4];
        let exact = dtw(&a, &b, None).unwrap();
        assert_eq!(exact.to_bits(), dtw(&a, &b, Some(4)).unwrap().to_bits());
    }

    #[test]
    fn dtw_empty_is_error() {
        assert!(dtw(&[], &[1.0], None).is_err());
    }

    #[test]
    fn report_identical_periods_with_persistent_ordering() {
        // node levels stay strictly ordered at every step, so comparing a
        // period with itself yields tau exactly 1 everywhere
        let graph = RoadGraph::new(
            3,
            vec![(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)],
        )
        .unwrap();
        let s = series_from_cols(vec![
            vec![10.0, 11.0, 10.5, 10.2],
            vec![20.0, 21.0, 20.5, 20.2],
            vec![30.0, 31.0, 30.5, 30.2],
        ]);
        let report = shift_report(&s, &s, &graph, 0, false).unwrap();
        assert!(report.per_node_tau.iter().all(|t| *t == Some(1.0)));
        assert!(report.per_node_dtw.iter().all(|d| *d == 0.0));
        let taus = report.tau_summary.unwrap();
        assert_eq!(taus.mean, 1.0);
        assert_eq!(report.dtw_summary.mean, 0.0);
    }

    #[test]
    fn report_histogram_counts_sum_to_defined_nodes() {
        let graph = RoadGraph::new(4, vec![(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let s1 = series_from_cols(vec![
            vec![1.0, 2.0, 3.0],
            vec![2.0, 1.0, 4.0],
            vec![0.0, 5.0, 1.0],
            vec![3.0, 3.0, 3.0],
        ]);
        let s2 = series_from_cols(vec![
            vec![2.0, 1.0, 0.0],
            vec![1.0, 3.0, 2.0],
            vec![4.0, 0.0, 5.0],
            vec![2.0, 2.0, 2.0],
        ]);
        let report = shift_report(&s1, &s2, &graph, 0, false).unwrap();
        let undefined = report.per_node_tau.iter().filter(|t| t.is_none()).count();
        assert_eq!(undefined, 2);
        let tau_total: usize = report.tau_hist.counts.iter().sum();
        assert_eq!(tau_total, 4 - undefined);
        let dtw_total: usize = report.dtw_hist.counts.iter().sum();
        assert_eq!(dtw_total, 4);
    }

    #[test]
    fn tsv_rendering_lists_nodes_and_summary() {
        let graph = RoadGraph::new(2, vec![(0, 1, 1.0)]).unwrap();
        let s = series_from_cols(vec![vec![2.0, 3.0], vec![1.0, 2.0]]);
        let report = shift_report(&s, &s, &graph, 0, false).unwrap();
        let tsv = render_tsv(&report, true);
        assert!(tsv.starts_with("node\ttau\tdtw\n0\t1\t0\n1\tundefined\t0\n"), "{tsv}");
        assert!(tsv.contains("summary\ttau\t1\t1\t1\t1"));
        assert!(tsv.lines().filter(|l| l.starts_with("hist\t")).count() == 40);
    }

    proptest::proptest! {
        #[test]
        fn tau_always_in_unit_interval(
            vals in proptest::collection::vec(-50.0f64..50.0, 8..=24),
        ) {
            let m = vals.len() / 4;
            let x_v = vals[0..m].to_vec();
            let x_u = vals[m..2 * m].to_vec();
            let y_v = vals[2 * m..3 * m].to_vec();
            let y_u = vals[3 * m..4 * m].to_vec();
            let tau = kendall_tau_node(&x_v, &[x_u], &y_v, &[y_u]).unwrap().unwrap();
            proptest::prop_assert!((-1.0..=1.0).contains(&tau));
        }

        #[test]
        fn dtw_nonnegative_symmetric(
            a in proptest::collection::vec(-10.0f64..10.0, 1..=12),
            b in proptest::collection::vec(-10.0f64..10.0, 1..=12),
        ) {
            let d1 = dtw(&a, &b, None).unwrap();
            let d2 = dtw(&b, &a, None).unwrap();
            proptest::prop_assert!(d1 >= 0.0);
            proptest::prop_assert_eq!(d1.to_bits(), d2.to_bits());
        }
    }
}
