//! Online loop-closure detection.
//!
//! Each query frame is explained as a sparse combination of the noise basis
//! and every earlier frame. The solution is scaled to a unit vector `α̂`, and a
//! past frame `j` is a loop-closure hypothesis for query `i` when its
//! normalized coefficient exceeds `τ` and `|i − j|` exceeds the temporal gate.
//! Because `α̂` has unit length, at most one coefficient can exceed `1/√2`, so
//! thresholds above that value make hypotheses globally unique.
//!
//! Detection is split into two stages so that parameter sweeps never re-solve:
//! [`Detector`] runs the solver and records a [`QueryTrace`] per frame, and
//! [`DecisionStage`] turns traces into [`LoopHypothesis`] values. Replaying
//! recorded traces through a fresh `DecisionStage` gives exactly the
//! hypotheses a fresh detector run would have produced.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::homotopy::{self, SolverConfig};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub lambda: f64,
    /// Acceptance threshold on normalized coefficients, in `(0.5, 1]`.
    pub tau: f64,
    /// Matches closer than this in time are ignored.
    pub t_g_seconds: f64,
    /// Converts seconds to frame gaps.
    pub fps: f64,
    /// Defaults to `t_g_seconds` when unset.
    pub consistency_window_seconds: Option<f64>,
    /// Only hypotheses confirmed by a nearby second hypothesis are accepted.
    pub consistency_required: bool,
    /// Sum scores over groups of frames already known to show one place.
    pub joint_contribution: bool,
    pub max_breakpoints: Option<usize>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            tau: 0.99,
            t_g_seconds: 10.0,
            fps: 1.0,
            consistency_window_seconds: None,
            consistency_required: true,
            joint_contribution: false,
            max_breakpoints: None,
        }
    }
}

/// `seconds · fps` rounded up, tolerating float noise on exact products.
fn seconds_to_frames(seconds: f64, fps: f64) -> usize {
    let x = seconds * fps;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.tau > 0.5 && self.tau <= 1.0) {
            return bad(format!("tau must be in (0.5, 1], got {}", self.tau));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        let window = self.consistency_window_seconds.unwrap_or(self.t_g_seconds);
        for (name, v) in [("t_g_seconds", self.t_g_seconds), ("consistency window", window)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        self.solver_config().validate()
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            max_breakpoints: self.max_breakpoints,
            ..SolverConfig::with_lambda(self.lambda)
        }
    }

    pub fn gate_frames(&self) -> usize {
        seconds_to_frames(self.t_g_seconds, self.fps)
    }

    pub fn consistency_window_frames(&self) -> usize {
        seconds_to_frames(
            self.consistency_window_seconds.unwrap_or(self.t_g_seconds),
            self.fps,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopHypothesis {
    pub query_index: usize,
    pub match_index: usize,
    /// Normalized coefficient of the match (a group sum under joint scoring).
    pub score: f64,
    pub accepted: bool,
}

/// One nonzero coefficient of a query's solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Column in `[I_n | B]`.
    pub column: usize,
    /// Frame shown by an image column; `None` for noise columns.
    pub frame: Option<usize>,
    pub alpha: f64,
    pub alpha_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub query_index: usize,
    pub timestamp: f64,
    /// Dictionary width `n + m` the query was solved against.
    pub width: usize,
    /// Set for queries that were not solved (empty image block).
    pub skipped: bool,
    /// Set when the dictionary was frozen, which disables the temporal gate.
    pub frozen: bool,
    pub entries: Vec<TraceEntry>,
    pub nnz: usize,
    pub solve_time: f64,
    pub lambda_max: f64,
    /// Hypotheses emitted for this query, with acceptance as of emission.
    /// Later queries can still confirm them; see [`Detector::hypotheses`].
    pub hypotheses: Vec<LoopHypothesis>,
}

impl QueryTrace {
    /// The dense normalized solution, noise block included.
    pub fn alpha_hat_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.width];
        for e in &self.entries {
            out[e.column] = e.alpha_hat;
        }
        out
    }

    /// Image column with the largest normalized coefficient, ignoring the gate.
    pub fn best_match(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for e in &self.entries {
            if let Some(j) = e.frame {
                if e.alpha_hat > 0.0 && best.map_or(true, |(_, s)| e.alpha_hat > s) {
                    best = Some((j, e.alpha_hat));
                }
            }
        }
        best
    }
}

/// Union-find over frame indices, tracking the earliest frame per group.
#[derive(Debug, Clone, Default)]
pub struct LoopGraph {
    parent: Vec<usize>,
    earliest: Vec<usize>,
}

impl LoopGraph {
    fn grow(&mut self, k: usize) {
        while self.parent.len() <= k {
            let i = self.parent.len();
            self.parent.push(i);
            self.earliest.push(i);
        }
    }

    pub fn find(&self, mut k: usize) -> usize {
        if k >= self.parent.len() {
            return k;
        }
        while self.parent[k] != k {
            k = self.parent[k];
        }
        k
    }

    pub fn connect(&mut self, a: usize, b: usize) {
        self.grow(a.max(b));
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
            self.earliest[lo] = self.earliest[lo].min(self.earliest[hi]);
        }
    }

    /// Earliest frame in `k`'s group.
    pub fn earliest(&self, k: usize) -> usize {
        let r = self.find(k);
        self.earliest.get(r).copied().unwrap_or(k)
    }
}

/// Picks the hypothesis for one query, before any consistency filtering.
///
/// Only image entries more than `gate` frames from the query count. With a
/// loop graph, entries in one group are summed and the group is reported by
/// its earliest frame. The maximum score wins, lowest frame on exact ties, and
/// is emitted only if it exceeds `tau`.
pub fn select_hypothesis(
    query_index: usize,
    entries: &[TraceEntry],
    tau: f64,
    gate: Option<usize>,
    graph: Option<&LoopGraph>,
) -> Option<(usize, f64)> {
    let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
    for e in entries {
        let Some(j) = e.frame else { continue };
        if gate.is_some_and(|g| query_index.abs_diff(j) <= g) {
            continue;
        }
        let key = graph.map_or(j, |g| g.earliest(j));
        *scores.entry(key).or_insert(0.0) += e.alpha_hat;
    }
    let mut best: Option<(usize, f64)> = None;
    for (j, s) in scores {
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    best.filter(|&(_, s)| s > tau)
}

/// Marks each hypothesis accepted iff another hypothesis lies within
/// `window` frames of it on both the query and the match index.
pub fn consistency_filter(hyps: &mut [LoopHypothesis], window: usize) {
    let flags: Vec<bool> = (0..hyps.len())
        .map(|a| {
            hyps.iter().enumerate().any(|(b, h)| {
                b != a
                    && h.query_index.abs_diff(hyps[a].query_index) <= window
                    && h.match_index.abs_diff(hyps[a].match_index) <= window
            })
        })
        .collect();
    for (h, f) in hyps.iter_mut().zip(flags) {
        h.accepted = f;
    }
}

/// Turns traces into hypotheses, one query at a time.
#[derive(Debug, Clone)]
pub struct DecisionStage {
    tau: f64,
    gate: usize,
    window: usize,
    consistency_required: bool,
    joint: bool,
    log: Vec<LoopHypothesis>,
    graph: LoopGraph,
}

impl DecisionStage {
    pub fn new(cfg: &DetectorConfig) -> Self {
        Self::with_tau(cfg, cfg.tau)
    }

    /// Like [`new`](Self::new) with another threshold. `tau` is not range
    /// checked, so sweeps may go past 1.
    pub fn with_tau(cfg: &DetectorConfig, tau: f64) -> Self {
        Self {
            tau,
            gate: cfg.gate_frames(),
            window: cfg.consistency_window_frames(),
            consistency_required: cfg.consistency_required,
            joint: cfg.joint_contribution,
            log: Vec::new(),
            graph: LoopGraph::default(),
        }
    }

    /// Decides one query and returns the hypotheses it emitted.
    pub fn decide(&mut self, trace: &QueryTrace) -> Vec<LoopHypothesis> {
        let gate = (!trace.frozen).then_some(self.gate);
        let graph = self.joint.then_some(&self.graph);
        let Some((match_index, score)) =
            select_hypothesis(trace.query_index, &trace.entries, self.tau, gate, graph)
        else {
            return Vec::new();
        };
        let mut h = LoopHypothesis {
            query_index: trace.query_index,
            match_index,
            score,
            accepted: !self.consistency_required,
        };
        if self.consistency_required {
            let mut confirmed = Vec::new();
            for (k, prev) in self.log.iter().enumerate().rev() {
                if h.query_index.abs_diff(prev.query_index) > self.window {
                    break;
                }
                if h.match_index.abs_diff(prev.match_index) <= self.window {
                    confirmed.push(k);
                }
            }
            h.accepted = !confirmed.is_empty();
            for k in confirmed {
                if !self.log[k].accepted {
                    self.log[k].accepted = true;
                    let p = self.log[k];
                    self.graph.connect(p.query_index, p.match_index);
                }
            }
        }
        if h.accepted {
            self.graph.connect(h.query_index, h.match_index);
        }
        self.log.push(h);
        vec![h]
    }

    /// Every emitted hypothesis with its final acceptance.
    pub fn hypotheses(&self) -> &[LoopHypothesis] {
        &self.log
    }

    pub fn detections(&self) -> Vec<LoopHypothesis> {
        self.log.iter().copied().filter(|h| h.accepted).collect()
    }

    pub fn loop_graph(&self) -> &LoopGraph {
        &self.graph
    }
}

/// Replays recorded traces through a fresh decision stage at threshold `tau`.
pub fn replay(traces: &[QueryTrace], cfg: &DetectorConfig, tau: f64) -> DecisionStage {
    let mut stage = DecisionStage::with_tau(cfg, tau);
    for t in traces {
        stage.decide(t);
    }
    stage
}

/// Streams frames through the solver and the decision stage.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    solver: SolverConfig,
    dict: Dictionary,
    stage: DecisionStage,
    next_frame: usize,
    last_timestamp: Option<f64>,
    frozen: bool,
}

impl Detector {
    pub fn new(cfg: DetectorConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            solver: cfg.solver_config(),
            dict: Dictionary::new(dim)?,
            stage: DecisionStage::new(&cfg),
            cfg,
            next_frame: 0,
            last_timestamp: None,
            frozen: false,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn hypotheses(&self) -> &[LoopHypothesis] {
        self.stage.hypotheses()
    }

    pub fn detections(&self) -> Vec<LoopHypothesis> {
        self.stage.detections()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Stops dictionary growth; later queries are matched without the gate.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    fn admit(&mut self, f: &FeatureVector, timestamp: Option<f64>) -> Result<(usize, f64)> {
        if f.dim() != self.dict.n() {
            return Err(Error::DimensionMismatch {
                expected: self.dict.n(),
                found: f.dim(),
            });
        }
        let idx = self.next_frame;
        let ts = timestamp.unwrap_or(idx as f64 / self.cfg.fps);
        if let Some(prev) = self.last_timestamp {
            if ts < prev {
                return Err(Error::NonMonotonicTimestamp { previous: prev, current: ts });
            }
        }
        self.next_frame += 1;
        self.last_timestamp = Some(ts);
        Ok((idx, ts))
    }

    /// Adds a frame to the dictionary without querying it.
    pub fn memorize(&mut self, f: &FeatureVector, timestamp: Option<f64>) -> Result<usize> {
        if self.frozen {
            return Err(Error::InvalidConfig("dictionary is frozen".into()));
        }
        let (idx, ts) = self.admit(f, timestamp)?;
        self.dict.append(f, idx, ts)
    }

    /// Queries `f` against everything seen so far, then appends it unless the
    /// dictionary is frozen. `timestamp` defaults to `frame_index / fps`.
    pub fn process_frame(&mut self, f: &FeatureVector, timestamp: Option<f64>) -> Result<QueryTrace> {
        let (idx, ts) = self.admit(f, timestamp)?;
        let mut trace = QueryTrace {
            query_index: idx,
            timestamp: ts,
            width: self.dict.width(),
            skipped: self.dict.is_empty(),
            frozen: self.frozen,
            entries: Vec::new(),
            nnz: 0,
            solve_time: 0.0,
            lambda_max: 0.0,
            hypotheses: Vec::new(),
        };
        if !trace.skipped {
            let start = Instant::now();
            let sol = homotopy::solve(&self.dict, f, &self.solver)?;
            trace.solve_time = start.elapsed().as_secs_f64();
            trace.lambda_max = sol.lambda_max;
            trace.nnz = sol.coeffs.iter().filter(|(_, v)| v.abs() > 1e-12).count();
            let norm = sol.l2_norm();
            trace.entries = sol
                .coeffs
                .iter()
                .map(|&(c, v)| TraceEntry {
                    column: c.raw(),
                    frame: c.image_index().map(|k| self.dict.meta()[k].frame_index),
                    alpha: v,
                    alpha_hat: if norm > 0.0 { v / norm } else { 0.0 },
                })
                .collect();
            trace.hypotheses = self.stage.decide(&trace);
        }
        if !self.frozen {
            self.dict.append(f, idx, ts)?;
        }
        Ok(trace)
    }
}

/// Traces and final hypotheses of one pass over a frame sequence.
#[derive(Debug, Clone)]
pub struct Run {
    pub traces: Vec<QueryTrace>,
    pub hypotheses: Vec<LoopHypothesis>,
    pub dictionary_width: usize,
}

impl Run {
    pub fn detections(&self) -> Vec<LoopHypothesis> {
        self.hypotheses.iter().copied().filter(|h| h.accepted).collect()
    }
}

/// Processes `frames` in order with default timestamps. With `memory =
/// Some(k)` the first `k` frames only populate the dictionary, which is then
/// frozen for the remaining queries.
pub fn run_sequence(cfg: &DetectorConfig, frames: &[FeatureVector], memory: Option<usize>) -> Result<Run> {
    let dim = frames.first().ok_or(Error::EmptyInput)?.dim();
    let mut det = Detector::new(cfg.clone(), dim)?;
    let mut traces = Vec::with_capacity(frames.len());
    for (k, f) in frames.iter().enumerate() {
        match memory {
            Some(m) if k < m => {
                det.memorize(f, None)?;
            }
            Some(m) if k == m => {
                det.freeze();
                traces.push(det.process_frame(f, None)?);
            }
            _ => traces.push(det.process_frame(f, None)?),
        }
    }
    Ok(Run {
        traces,
        hypotheses: det.hypotheses().to_vec(),
        dictionary_width: det.dictionary().width(),
    })
}

/// Coordinate list of normalized coefficients above a threshold. Rows are
/// frame indices of image columns (noise entries are left out), columns are
/// query indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SparsityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize)>,
}

pub fn sparsity_matrix(traces: &[QueryTrace], tau: f64) -> SparsityMatrix {
    let mut m = SparsityMatrix::default();
    for t in traces {
        m.cols = m.cols.max(t.query_index + 1);
        m.rows = m.rows.max(t.query_index + 1);
        for e in &t.entries {
            if let Some(j) = e.frame {
                if e.alpha_hat > tau {
                    m.entries.push((j, t.query_index));
                }
            }
        }
    }
    m
}

impl SparsityMatrix {
    /// Writes `# shape: RxC`, a `row,col` header, then one line per entry.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::io::Write;
        let path = path.as_ref();
        let mut body = format!("# shape: {}x{}\nrow,col\n", self.rows, self.cols);
        for (r, c) in &self.entries {
            body.push_str(&format!("{r},{c}\n"));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn write_hypotheses_csv(path: impl AsRef<Path>, hyps: &[LoopHypothesis]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for h in hyps {
        w.serialize(h)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_hypotheses_csv(path: impl AsRef<Path>) -> Result<Vec<LoopHypothesis>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize()
        .enumerate()
        .map(|(record, h)| {
            h.map_err(|e| Error::Parse {
                record,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Largest entry count in any trace above `tau`, for uniqueness checks.
pub fn max_super_threshold(trace: &QueryTrace, tau: f64) -> usize {
    trace
        .entries
        .iter()
        .filter(|e| e.frame.is_some() && e.alpha_hat > tau)
        .count()
}

/// `‖α̂‖₂` of a trace; 1 for solved queries with a nonzero solution.
pub fn alpha_hat_norm(trace: &QueryTrace) -> f64 {
    linalg::norm2(&trace.entries.iter().map(|e| e.alpha_hat).collect::<Vec<_>>())
}
