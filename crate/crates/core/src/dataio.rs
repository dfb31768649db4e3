//! Signal series and road graph containers, file formats, normalization,
//! windowing, and chronological splits.
//!
//! A signal series is a T x N x C block of readings: T time steps at a fixed
//! sampling interval, N sensor nodes, C channels per node. The series knows
//! its daily cycle (`slots_per_day`) and which slot of the day row 0 falls on
//! (`start_slot`); everything downstream that reasons about time-of-day uses
//! those two fields rather than wall-clock timestamps.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: byte {offset}: {msg}")]
    Binary {
        path: String,
        offset: usize,
        msg: String,
    },
    #[error("{0}")]
    Contract(String),
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// T x N x C readings plus the daily clock.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    values: Tensor,
    pub slots_per_day: usize,
    pub start_slot: usize,
}

impl SignalSeries {
    pub fn new(values: Tensor, slots_per_day: usize, start_slot: usize) -> Result<Self, DataError> {
        if values.shape().len() != 3 {
            return Err(DataError::Contract(format!(
                "signal values must be T x N x C, got shape {:?}",
                values.shape()
            )));
        }
        if slots_per_day == 0 {
            return Err(DataError::Contract("slots_per_day must be positive".into()));
        }
        if start_slot >= slots_per_day {
            return Err(DataError::Contract(format!(
                "start_slot {start_slot} not below slots_per_day {slots_per_day}"
            )));
        }
        Ok(Self {
            values,
            slots_per_day,
            start_slot,
        })
    }

    pub fn steps(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn nodes(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn get(&self, t: usize, n: usize, c: usize) -> f64 {
        self.values.data()[(t * self.nodes() + n) * self.channels() + c]
    }

    pub fn set(&mut self, t: usize, n: usize, c: usize, v: f64) {
        let (nn, cc) = (self.nodes(), self.channels());
        self.values.data_mut()[(t * nn + n) * cc + c] = v;
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// Slot-of-day of row `t`.
    pub fn slot_of(&self, t: usize) -> usize {
        (self.start_slot + t) % self.slots_per_day
    }

    /// Copy of rows `range` with the clock advanced accordingly.
    pub fn slice_steps(&self, range: std::ops::Range<usize>) -> Result<Self, DataError> {
        if range.end > self.steps() || range.start >= range.end {
            return Err(DataError::Contract(format!(
                "step range {range:?} out of bounds for {} steps",
                self.steps()
            )));
        }
        let (n, c) = (self.nodes(), self.channels());
        let t = range.end - range.start;
        let data = self.values.data()[range.start * n * c..range.end * n * c].to_vec();
        Ok(Self {
            values: Tensor::new(vec![t, n, c], data).unwrap(),
            slots_per_day: self.slots_per_day,
            start_slot: self.slot_of(range.start),
        })
    }

    /// One node's single-channel trace.
    pub fn node_series(&self, node: usize, channel: usize) -> Vec<f64> {
        (0..self.steps()).map(|t| self.get(t, node, channel)).collect()
    }
}

/// Directed weighted edge list over `n_nodes` sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadGraph {
    n_nodes: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl RoadGraph {
    pub fn new(n_nodes: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self, DataError> {
        let mut seen = std::collections::HashSet::new();
        for &(from, to, w) in &edges {
            if from >= n_nodes || to >= n_nodes {
                return Err(DataError::Contract(format!(
                    "edge ({from},{to}) references a node outside 0..{n_nodes}"
                )));
            }
            if from == to {
                return Err(DataError::Contract(format!("self-loop on node {from}")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(DataError::Contract(format!(
                    "edge ({from},{to}) has invalid weight {w}"
                )));
            }
            if !seen.insert((from, to)) {
                return Err(DataError::Contract(format!("duplicate edge ({from},{to})")));
            }
        }
        Ok(Self { n_nodes, edges })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Out-neighbors of every node, each list sorted ascending.
    pub fn neighbor_sets(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_nodes];
        for &(from, to, _) in &self.edges {
            out[from].push(to);
        }
        for l in &mut out {
            l.sort_unstable();
        }
        out
    }
}

/// One training/evaluation sample: `l1` input steps, `l2` target steps.
#[derive(Debug, Clone)]
pub struct WindowSample {
    /// l1 x N x C input block.
    pub x: Tensor,
    /// l2 x N x C target block.
    pub y: Tensor,
    /// Row offset of the window inside its source series.
    pub offset: usize,
    /// Slot-of-day of the first target step.
    pub slot: usize,
    /// Expert domain, filled in once a day partition is chosen.
    pub domain: Option<usize>,
}

/// Chronological train/validation/test windows.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<WindowSample>,
    pub validation: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

/// Per-channel normalization statistics (population standard deviation).
#[derive(Debug, Clone, PartialEq)]
pub struct Zscore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Zscore {
    /// Fit over rows `0..t_end` of the series, per channel, across all times
    /// and nodes. A standard deviation below 1e-8 is clamped to 1.
    pub fn fit(series: &SignalSeries, t_end: usize) -> Result<Self, DataError> {
        if t_end == 0 || t_end > series.steps() {
            return Err(DataError::Contract(format!(
                "zscore fit range 0..{t_end} invalid for {} steps",
                series.steps()
            )));
        }
        let c = series.channels();
        let count = (t_end * series.nodes()) as f64;
        let mut mean = vec![0.0; c];
        for t in 0..t_end {
            for n in 0..series.nodes() {
                for ch in 0..c {
                    mean[ch] += series.get(t, n, ch);
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; c];
        for t in 0..t_end {
            for n in 0..series.nodes() {
                for ch in 0..c {
                    let d = series.get(t, n, ch) - mean[ch];
                    var[ch] += d * d;
                }
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / count).sqrt();
                if s < 1e-8 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, v: f64, channel: usize) -> f64 {
        (v - self.mean[channel]) / self.std[channel]
    }

    pub fn denormalize(&self, v: f64, channel: usize) -> f64 {
        v * self.std[channel] + self.mean[channel]
    }
}

/// Sliding windows over a series. The window at offset `o` takes rows
/// `[o, o+l1)` as input and `[o+l1, o+l1+l2)` as target; its `slot` is the
/// slot-of-day of the first target row. Yields
/// `floor((T - l1 - l2) / stride) + 1` windows.
pub fn make_windows(
    series: &SignalSeries,
    l1: usize,
    l2: usize,
    stride: usize,
) -> Result<Vec<WindowSample>, DataError> {
    if l1 == 0 || l2 == 0 || stride == 0 {
        return Err(DataError::Contract(
            "window lengths and stride must be positive".into(),
        ));
    }
    let t = series.steps();
    if t < l1 + l2 {
        return Err(DataError::Contract(format!(
            "series has {t} steps, too short for l1={l1} + l2={l2}"
        )));
    }
    let (n, c) = (series.nodes(), series.channels());
    let mut out = Vec::with_capacity((t - l1 - l2) / stride + 1);
    let mut o = 0;
    while o + l1 + l2 <= t {
        let x = series.values.data()[o * n * c..(o + l1) * n * c].to_vec();
        let y = series.values.data()[(o + l1) * n * c..(o + l1 + l2) * n * c].to_vec();
        out.push(WindowSample {
            x: Tensor::new(vec![l1, n, c], x).unwrap(),
            y: Tensor::new(vec![l2, n, c], y).unwrap(),
            offset: o,
            slot: (series.start_slot + o + l1) % series.slots_per_day,
            domain: None,
        });
        o += stride;
    }
    Ok(out)
}

/// 60% train / 20% validation / remainder test, in order. Windows keep their
/// chronological order, so every train target precedes every validation
/// target and those precede every test target.
pub fn chronological_split(windows: Vec<WindowSample>) -> Result<DatasetSplit, DataError> {
    let n = windows.len();
    if n < 5 {
        return Err(DataError::Contract(format!(
            "need at least 5 windows to split 6:2:2, got {n}"
        )));
    }
    let n_train = n * 6 / 10;
    let n_val = n * 2 / 10;
    let mut windows = windows;
    let test = windows.split_off(n_train + n_val);
    let validation = windows.split_off(n_train);
    Ok(DatasetSplit {
        train: windows,
        validation,
        test,
    })
}

/// Node-major flattening of an l x N x C window block into N x (l*C), the
/// per-node feature layout the models consume (column = step * C + channel).
pub fn flatten_window(block: &Tensor) -> Tensor {
    let (l, n, c) = (block.shape()[0], block.shape()[1], block.shape()[2]);
    let mut data = vec![0.0; n * l * c];
    for t in 0..l {
        for node in 0..n {
            for ch in 0..c {
                data[node * (l * c) + t * c + ch] = block.data()[(t * n + node) * c + ch];
            }
        }
    }
    Tensor::matrix(n, l * c, data).unwrap()
}

/// Inverse of [`flatten_window`]: an N x (l*C) matrix back to l x N x C.
pub fn unflatten_window(flat: &Tensor, l: usize, c: usize) -> Tensor {
    let n = flat.rows();
    let mut data = vec![0.0; l * n * c];
    for node in 0..n {
        for t in 0..l {
            for ch in 0..c {
                data[(t * n + node) * c + ch] = flat.data()[node * (l * c) + t * c + ch];
            }
        }
    }
    Tensor::new(vec![l, n, c], data).unwrap()
}

const SIGNAL_MAGIC: &[u8; 4] = b"STSG";
const SIGNAL_VERSION: u32 = 1;

/// On-disk format selector for signal series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalFormat {
    /// Self-describing text format with the clock in a comment header.
    Csv,
    /// `STSG` binary. The layout carries no clock, so the caller supplies it.
    Binary {
        slots_per_day: usize,
        start_slot: usize,
    },
}

pub fn load_signals(path: &Path, format: SignalFormat) -> Result<SignalSeries, DataError> {
    match format {
        SignalFormat::Csv => load_signals_csv(path),
        SignalFormat::Binary {
            slots_per_day,
            start_slot,
        } => load_signals_binary(path, slots_per_day, start_slot),
    }
}

pub fn save_signals(series: &SignalSeries, path: &Path, format: SignalFormat) -> Result<(), DataError> {
    match format {
        SignalFormat::Csv => save_signals_csv(series, path),
        SignalFormat::Binary { .. } => save_signals_binary(series, path),
    }
}

fn parse_header_field(
    path: &Path,
    line: &str,
    key: &str,
) -> Result<usize, DataError> {
    let tag = format!("{key}=");
    line.split_whitespace()
        .find_map(|tok| tok.strip_prefix(&tag))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| DataError::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: format!("missing or malformed `{key}=<int>` in header"),
        })
}

fn load_signals_csv(path: &Path) -> Result<SignalSeries, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let perr = |line: usize, msg: String| DataError::Parse {
        path: path.display().to_string(),
        line: line + 1,
        msg,
    };

    let (i0, header) = lines
        .next()
        .ok_or_else(|| perr(0, "empty file".into()))?;
    if !header.starts_with('#') {
        return Err(perr(i0, "first line must start with `#` and carry the clock".into()));
    }
    let slots_per_day = parse_header_field(path, header, "slots_per_day")?;
    let start_slot = parse_header_field(path, header, "start_slot")?;
    let channels = parse_header_field(path, header, "channels")?;

    let (i1, columns) = lines
        .next()
        .ok_or_else(|| perr(1, "missing column header".into()))?;
    let n_cols = columns.split(',').count();
    if n_cols < 2 || (n_cols - 1) % channels != 0 {
        return Err(perr(
            i1,
            format!("{} value columns not divisible by {channels} channels", n_cols - 1),
        ));
    }
    let n_nodes = (n_cols - 1) / channels;

    let mut data = Vec::new();
    let mut t_expected = 0usize;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let t: usize = fields
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|e| perr(i, format!("bad time index: {e}")))?;
        if t != t_expected {
            return Err(perr(i, format!("expected time index {t_expected}, got {t}")));
        }
        let mut count = 0;
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|e| perr(i, format!("bad value {f:?}: {e}")))?;
            data.push(v);
            count += 1;
        }
        if count != n_cols - 1 {
            return Err(perr(
                i,
                format!("expected {} values, got {count}", n_cols - 1),
            ));
        }
        t_expected += 1;
    }
    if t_expected == 0 {
        return Err(perr(2, "no data rows".into()));
    }
    SignalSeries::new(
        Tensor::new(vec![t_expected, n_nodes, channels], data)
            .map_err(|e| DataError::Contract(e.to_string()))?,
        slots_per_day,
        start_slot,
    )
}

fn save_signals_csv(series: &SignalSeries, path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    out.push_str(&format!(
        "# slots_per_day={} start_slot={} channels={}\n",
        series.slots_per_day, series.start_slot, series.channels()
    ));
    out.push('t');
    for n in 0..series.nodes() {
        for c in 0..series.channels() {
            out.push_str(&format!(",node{n}_c{c}"));
        }
    }
    out.push('\n');
    for t in 0..series.steps() {
        out.push_str(&t.to_string());
        for n in 0..series.nodes() {
            for c in 0..series.channels() {
                // `{}` prints the shortest representation that parses back to
                // the same f64, so the text format round-trips exactly
                out.push_str(&format!(",{}", series.get(t, n, c)));
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

fn load_signals_binary(
    path: &Path,
    slots_per_day: usize,
    start_slot: usize,
) -> Result<SignalSeries, DataError> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
    let berr = |offset: usize, msg: String| DataError::Binary {
        path: path.display().to_string(),
        offset,
        msg,
    };

    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8], DataError> {
        if *off + n > bytes.len() {
            return Err(berr(*off, format!("truncated: needed {n} more bytes")));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };

    let magic = take(&mut off, 4)?;
    if magic != SIGNAL_MAGIC {
        return Err(berr(0, format!("bad magic {magic:?}, expected {SIGNAL_MAGIC:?}")));
    }
    let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if version != SIGNAL_VERSION {
        return Err(berr(4, format!("unsupported version {version}")));
    }
    let mut dims = [0u64; 3];
    for d in &mut dims {
        *d = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
    }
    let (t, n, c) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let count = t
        .checked_mul(n)
        .and_then(|x| x.checked_mul(c))
        .ok_or_else(|| berr(8, "dimension overflow".into()))?;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let v = f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
        data.push(v);
    }
    if off != bytes.len() {
        return Err(berr(off, format!("{} trailing bytes", bytes.len() - off)));
    }
    SignalSeries::new(
        Tensor::new(vec![t, n, c], data).map_err(|e| DataError::Contract(e.to_string()))?,
        slots_per_day,
        start_slot,
    )
}

fn save_signals_binary(series: &SignalSeries, path: &Path) -> Result<(), DataError> {
    let mut out = Vec::new();
    out.extend_from_slice(SIGNAL_MAGIC);
    out.extend_from_slice(&SIGNAL_VERSION.to_le_bytes());
    for d in [series.steps(), series.nodes(), series.channels()] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in series.values.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&out).map_err(|e| io_err(path, e))
}

/// Graph CSV: header `from,to,weight`, one directed edge per row.
pub fn load_graph(path: &Path) -> Result<RoadGraph, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let perr = |line: usize, msg: String| DataError::Parse {
        path: path.display().to_string(),
        line: line + 1,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| perr(0, "empty file".into()))?;
    if header.trim() != "from,to,weight" {
        return Err(perr(0, format!("expected header `from,to,weight`, got {header:?}")));
    }
    let mut edges = Vec::new();
    let mut max_node = 0usize;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(perr(i, format!("expected 3 fields, got {}", parts.len())));
        }
        let from: usize = parts[0].trim().parse().map_err(|e| perr(i, format!("bad from: {e}")))?;
        let to: usize = parts[1].trim().parse().map_err(|e| perr(i, format!("bad to: {e}")))?;
        let w: f64 = parts[2].trim().parse().map_err(|e| perr(i, format!("bad weight: {e}")))?;
        max_node = max_node.max(from).max(to);
        edges.push((from, to, w));
    }
    RoadGraph::new(max_node + 1, edges)
}

pub fn save_graph(graph: &RoadGraph, path: &Path) -> Result<(), DataError> {
    let mut out = String::from("from,to,weight\n");
    for &(from, to, w) in graph.edges() {
        out.push_str(&format!("{from},{to},{w}\n"));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_linear(t: usize, n: usize, c: usize, slots: usize, start: usize) -> SignalSeries {
        let data: Vec<f64> = (0..t * n * c).map(|i| i as f64 * 0.5 - 3.0).collect();
        SignalSeries::new(Tensor::new(vec![t, n, c], data).unwrap(), slots, start).unwrap()
    }

    #[test]
    fn zscore_oracle() {
        // [1,2,3]: mean 2, population std sqrt(2/3)
        let s = SignalSeries::new(
            Tensor::new(vec![3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap(),
            288,
            0,
        )
        .unwrap();
        let z = Zscore::fit(&s, 3).unwrap();
        assert!((z.mean[0] - 2.0).abs() < 1e-15);
        assert!((z.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let got: Vec<f64> = (0..3).map(|t| z.normalize(s.get(t, 0, 0), 0)).collect();
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
        // round trip
        for t in 0..3 {
            let v = s.get(t, 0, 0);
            assert!((z.denormalize(z.normalize(v, 0), 0) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_constant_channel_clamps_std() {
        let s = SignalSeries::new(
            Tensor::new(vec![4, 1, 1], vec![7.0; 4]).unwrap(),
            288,
            0,
        )
        .unwrap();
        let z = Zscore::fit(&s, 4).unwrap();
        assert_eq!(z.std[0], 1.0);
        assert_eq!(z.normalize(7.0, 0), 0.0);
    }

    #[test]
    fn window_count_oracle() {
        // T=26, l1=l2=12, stride 1 -> 3 windows
        let s = series_linear(26, 2, 1, 288, 0);
        let w = make_windows(&s, 12, 12, 1).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[0].offset, 0);
        assert_eq!(w[2].offset, 2);
    }

    #[test]
    fn window_slot_formula() {
        let s = series_linear(30, 1, 1, 24, 20);
        let w = make_windows(&s, 12, 12, 2).unwrap();
        for win in &w {
            assert_eq!(win.slot, (20 + win.offset + 12) % 24);
            assert!(win.domain.is_none());
        }
    }

    #[test]
    fn windows_too_short_is_error() {
        let s = series_linear(20, 1, 1, 288, 0);
        assert!(make_windows(&s, 12, 12, 1).is_err());
    }

    #[test]
    fn split_counts() {
        let s = series_linear(33, 1, 1, 288, 0);
        let w = make_windows(&s, 12, 12, 1).unwrap();
        assert_eq!(w.len(), 10);
        let split = chronological_split(w).unwrap();
        assert_eq!(split.train.len(), 6);
        assert_eq!(split.validation.len(), 2);
        assert_eq!(split.test.len(), 2);

        let s = series_linear(34, 1, 1, 288, 0);
        let w = make_windows(&s, 12, 12, 1).unwrap();
        assert_eq!(w.len(), 11);
        let split = chronological_split(w).unwrap();
        assert_eq!(
            (split.train.len(), split.validation.len(), split.test.len()),
            (6, 2, 3)
        );
    }

    #[test]
    fn split_too_small_is_error() {
        let s = series_linear(27, 1, 1, 288, 0);
        let w = make_windows(&s, 12, 12, 1).unwrap();
        assert_eq!(w.len(), 4);
        assert!(chronological_split(w).is_err());
    }

    #[test]
    fn split_is_chronological() {
        let s = series_linear(60, 1, 1, 288, 0);
        let w = make_windows(&s, 12, 12, 1).unwrap();
        let split = chronological_split(w).unwrap();
        let max_train = split.train.iter().map(|w| w.offset).max().unwrap();
        let min_val = split.validation.iter().map(|w| w.offset).min().unwrap();
        let max_val = split.validation.iter().map(|w| w.offset).max().unwrap();
        let min_test = split.test.iter().map(|w| w.offset).min().unwrap();
        assert!(max_train < min_val);
        assert!(max_val < min_test);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = series_linear(7, 3, 2, 96, 5);
        save_signals(&s, &path, SignalFormat::Csv).unwrap();
        let back = load_signals(&path, SignalFormat::Csv).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn binary_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.bin");
        let p2 = dir.path().join("b.bin");
        let s = series_linear(11, 4, 1, 288, 17);
        save_signals(&s, &p1, SignalFormat::Binary { slots_per_day: 0, start_slot: 0 }).unwrap();
        let back = load_signals(
            &p1,
            SignalFormat::Binary {
                slots_per_day: 288,
                start_slot: 17,
            },
        )
        .unwrap();
        assert_eq!(s, back);
        save_signals(&back, &p2, SignalFormat::Binary { slots_per_day: 0, start_slot: 0 }).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn binary_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, b"NOPE").unwrap();
        let err = load_signals(
            &path,
            SignalFormat::Binary { slots_per_day: 288, start_slot: 0 },
        )
        .unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");

        let s = series_linear(3, 2, 1, 288, 0);
        let good = dir.path().join("good.bin");
        save_signals(&s, &good, SignalFormat::Binary { slots_per_day: 0, start_slot: 0 }).unwrap();
        let mut bytes = fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&good, &bytes).unwrap();
        let err = load_signals(
            &good,
            SignalFormat::Binary { slots_per_day: 288, start_slot: 0 },
        )
        .unwrap_err();
        match err {
            DataError::Binary { offset, .. } => assert!(offset > 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_parse_error_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(
            &path,
            "# slots_per_day=96 start_slot=0 channels=1\nt,node0_c0\n0,1.5\n1,oops\n",
        )
        .unwrap();
        let err = load_signals(&path, SignalFormat::Csv).unwrap_err();
        match &err {
            DataError::Parse { line, .. } => assert_eq!(*line, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains(":4:"), "{err}");
    }

    #[test]
    fn graph_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let g = RoadGraph::new(3, vec![(0, 1, 1.0), (1, 0, 1.0), (1, 2, 0.5)]).unwrap();
        save_graph(&g, &path).unwrap();
        let back = load_graph(&path).unwrap();
        assert_eq!(g, back);
        assert_eq!(back.neighbor_sets()[1], vec![0, 2]);

        assert!(RoadGraph::new(2, vec![(0, 0, 1.0)]).is_err());
        assert!(RoadGraph::new(2, vec![(0, 1, 1.0), (0, 1, 2.0)]).is_err());
        assert!(RoadGraph::new(2, vec![(0, 5, 1.0)]).is_err());
        assert!(RoadGraph::new(2, vec![(0, 1, f64::NAN)]).is_err());
    }

    #[test]
    fn flatten_window_layout() {
        // 2 steps, 2 nodes, 2 channels
        let block = Tensor::new(
            vec![2, 2, 2],
            vec![
                1.0, 2.0, // t0 n0
                3.0, 4.0, // t0 n1
                5.0, 6.0, // t1 n0
                7.0, 8.0, // t1 n1
            ],
        )
        .unwrap();
        let flat = flatten_window(&block);
        assert_eq!(flat.shape(), &[2, 4]);
        assert_eq!(flat.data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
        assert_eq!(unflatten_window(&flat, 2, 2), block);
    }

    #[test]
    fn slice_steps_advances_clock() {
        let s = series_linear(10, 1, 1, 4, 2);
        let sliced = s.slice_steps(3..7).unwrap();
        assert_eq!(sliced.steps(), 4);
        assert_eq!(sliced.start_slot, (2 + 3) % 4);
        assert_eq!(sliced.get(0, 0, 0), s.get(3, 0, 0));
    }
}
