//! Scoring against ground truth, parameter sweeps, and baselines.
//!
//! A hypothesis `(i, j)` is correct when some ground-truth pair lies within
//! `tolerance_frames` of it on both indices. Each truth pair can be credited
//! once: true positives are the size of a maximum matching between correct
//! hypotheses and truth pairs, so `tp + fn` always equals the number of truth
//! pairs. Extra correct hypotheses on an already credited pair count as
//! neither true nor false positives.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{self, DetectorConfig, LoopHypothesis, QueryTrace};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::linalg;
use crate::oracles;

pub const DEFAULT_TOLERANCE_FRAMES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    /// Canonical pairs `(i, j)` with `i > j`, sorted and deduplicated.
    pairs: Vec<(usize, usize)>,
    pub tolerance_frames: usize,
}

impl GroundTruth {
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>, tolerance_frames: usize) -> Result<Self> {
        let mut out = Vec::new();
        for (a, b) in pairs {
            if a == b {
                return Err(Error::InvalidConfig(format!("truth pair ({a}, {b}) is not a loop")));
            }
            out.push((a.max(b), a.min(b)));
        }
        out.sort_unstable();
        out.dedup();
        Ok(Self {
            pairs: out,
            tolerance_frames,
        })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Reads `i,j` lines. A first line that does not parse as two integers is
    /// taken as a header.
    pub fn load(path: impl AsRef<Path>, tolerance_frames: usize) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => Error::Parse { record: 0, message: format!("{other:?}") },
            })?;
        let mut pairs = Vec::new();
        for (record_idx, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                record: record_idx,
                message: e.to_string(),
            })?;
            let parsed: Option<(usize, usize)> = match (rec.get(0), rec.get(1), rec.len()) {
                (Some(a), Some(b), 2) => a.parse().ok().zip(b.parse().ok()),
                _ => None,
            };
            match parsed {
                Some(p) => pairs.push(p),
                None if record_idx == 0 => continue,
                None => {
                    return Err(Error::Parse {
                        record: record_idx,
                        message: "expected two frame indices".into(),
                    })
                }
            }
        }
        Self::new(pairs, tolerance_frames)
    }

    /// Writes an `i,j` header followed by the canonical pairs.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["i", "j"])?;
        for (i, j) in &self.pairs {
            w.write_record([i.to_string(), j.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }

    fn near(&self, t: (usize, usize), h: (usize, usize)) -> bool {
        t.0.abs_diff(h.0) <= self.tolerance_frames && t.1.abs_diff(h.1) <= self.tolerance_frames
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub parameter: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl PrPoint {
    pub fn new(parameter: f64, c: Counts) -> Self {
        let precision = if c.tp + c.fp == 0 {
            1.0
        } else {
            c.tp as f64 / (c.tp + c.fp) as f64
        };
        let recall = if c.tp + c.fn_ == 0 {
            1.0
        } else {
            c.tp as f64 / (c.tp + c.fn_) as f64
        };
        Self {
            parameter,
            precision,
            recall,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
        }
    }
}

/// Scores `(query, match)` pairs. Pair order does not matter.
pub fn score_pairs(hyps: &[(usize, usize)], truth: &GroundTruth) -> Counts {
    let hyps: Vec<(usize, usize)> = hyps.iter().map(|&(a, b)| (a.max(b), a.min(b))).collect();
    let adj: Vec<Vec<usize>> = hyps
        .iter()
        .map(|&h| (0..truth.len()).filter(|&t| truth.near(truth.pairs[t], h)).collect())
        .collect();
    let fp = adj.iter().filter(|a| a.is_empty()).count();
    let tp = max_matching(&adj, truth.len());
    Counts {
        tp,
        fp,
        fn_: truth.len() - tp,
    }
}

pub fn score_run(hyps: &[LoopHypothesis], truth: &GroundTruth) -> Counts {
    let pairs: Vec<(usize, usize)> = hyps.iter().map(|h| (h.query_index, h.match_index)).collect();
    score_pairs(&pairs, truth)
}

/// Augmenting-path bipartite matching from left vertices to `right` slots.
fn max_matching(adj: &[Vec<usize>], right: usize) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                if owner[v].map_or(true, |w| augment(w, adj, seen, owner)) {
                    owner[v] = Some(u);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; right];
    let mut size = 0;
    for u in 0..adj.len() {
        let mut seen = vec![false; right];
        if augment(u, adj, &mut seen, &mut owner) {
            size += 1;
        }
    }
    size
}

/// Re-thresholds recorded traces at each `tau`; nothing is re-solved.
pub fn sweep_tau(traces: &[QueryTrace], cfg: &DetectorConfig, taus: &[f64], truth: &GroundTruth) -> Vec<PrPoint> {
    taus.iter()
        .map(|&tau| {
            let stage = detector::replay(traces, cfg, tau);
            PrPoint::new(tau, score_run(&stage.detections(), truth))
        })
        .collect()
}

/// Summary of per-query nonzero percentages at one `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnzStats {
    pub lambda: f64,
    pub queries: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub std: f64,
}

/// `(min, mean, max, population std)`; all zero for an empty slice.
fn summarize(xs: &[f64]) -> (f64, f64, f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, mean.clamp(min, max), max, var.sqrt())
}

/// Nonzeros (`|α| > 1e-12`) as a percentage of dictionary width, over solved
/// queries.
pub fn nnz_stats(traces: &[QueryTrace], lambda: f64) -> NnzStats {
    let pct: Vec<f64> = traces
        .iter()
        .filter(|t| !t.skipped)
        .map(|t| 100.0 * t.nnz as f64 / t.width as f64)
        .collect();
    let (min, mean, max, std) = summarize(&pct);
    NnzStats {
        lambda,
        queries: pct.len(),
        min,
        mean,
        max,
        std,
    }
}

/// Re-runs detection per `λ`, which means re-solving every query.
pub fn sweep_lambda(
    frames: &[FeatureVector],
    cfg: &DetectorConfig,
    lambdas: &[f64],
    memory: Option<usize>,
    truth: Option<&GroundTruth>,
) -> Result<Vec<(NnzStats, Option<PrPoint>)>> {
    lambdas
        .iter()
        .map(|&lambda| {
            log::warn!("lambda sweep: re-solving {} queries at lambda = {lambda}", frames.len());
            let c = DetectorConfig { lambda, ..cfg.clone() };
            let run = detector::run_sequence(&c, frames, memory)?;
            let pr = truth.map(|t| PrPoint::new(lambda, score_run(&run.detections(), t)));
            Ok((nnz_stats(&run.traces, lambda), pr))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub queries: usize,
    pub min_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
    pub std_ms: f64,
    pub dictionary_width: usize,
}

/// Per-query solve times of solved queries, in milliseconds.
pub fn timing_report(traces: &[QueryTrace]) -> TimingStats {
    let ms: Vec<f64> = traces
        .iter()
        .filter(|t| !t.skipped)
        .map(|t| t.solve_time * 1e3)
        .collect();
    let (min_ms, mean_ms, max_ms, std_ms) = summarize(&ms);
    TimingStats {
        queries: ms.len(),
        min_ms,
        mean_ms,
        max_ms,
        std_ms,
        dictionary_width: traces.iter().map(|t| t.width).max().unwrap_or(0),
    }
}

/// Best baseline match of one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineMatch {
    pub query_index: usize,
    pub match_index: usize,
    pub score: f64,
}

/// Exhaustive nearest neighbour of every frame among earlier frames outside
/// the gate, scored `1 − distance`. With `memory = Some(k)` live frames are
/// matched against the first `k` frames only, without a gate.
pub fn nn_baseline(frames: &[FeatureVector], gate_frames: usize, memory: Option<usize>) -> Result<Vec<BaselineMatch>> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let mut dict = Dictionary::new(first.dim())?;
    let mut out = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        let frozen = memory.is_some_and(|m| i >= m);
        let gate = if frozen { 0 } else { gate_frames };
        match oracles::nn_match(&dict, f.values(), gate, if frozen { usize::MAX } else { i }) {
            Ok(m) => out.push(BaselineMatch {
                query_index: i,
                match_index: m.frame_index,
                score: 1.0 - m.distance,
            }),
            Err(Error::NoEligibleColumns) => {}
            Err(e) => return Err(e),
        }
        if !frozen {
            dict.append(f, i, i as f64)?;
        }
    }
    Ok(out)
}

/// Minimum-norm least-squares coefficients per query, normalized like `α̂`;
/// the best gated image entry is the match. Dense SVD per query, so only
/// suitable for small runs.
pub fn lsq_baseline(frames: &[FeatureVector], gate_frames: usize) -> Result<Vec<BaselineMatch>> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let n = first.dim();
    let mut dict = Dictionary::new(n)?;
    let mut out = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        if !dict.is_empty() {
            let x = oracles::lsq_min_norm(&dict, f.values());
            let norm = linalg::norm2(&x);
            let mut best: Option<BaselineMatch> = None;
            for (k, meta) in dict.meta().iter().enumerate() {
                if i.abs_diff(meta.frame_index) <= gate_frames {
                    continue;
                }
                let score = x[n + k] / norm;
                if best.map_or(true, |b| score > b.score) {
                    best = Some(BaselineMatch {
                        query_index: i,
                        match_index: meta.frame_index,
                        score,
                    });
                }
            }
            out.extend(best);
        }
        dict.append(f, i, i as f64)?;
    }
    Ok(out)
}

/// PR points for a baseline: a match is emitted when its score exceeds the
/// threshold.
pub fn baseline_pr(matches: &[BaselineMatch], thresholds: &[f64], truth: &GroundTruth) -> Vec<PrPoint> {
    thresholds
        .iter()
        .map(|&th| {
            let pairs: Vec<(usize, usize)> = matches
                .iter()
                .filter(|m| m.score > th)
                .map(|m| (m.query_index, m.match_index))
                .collect();
            PrPoint::new(th, score_pairs(&pairs, truth))
        })
        .collect()
}

pub fn write_pr_csv(path: impl AsRef<Path>, points: &[PrPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_pr_csv(path: impl AsRef<Path>) -> Result<Vec<PrPoint>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize()
        .enumerate()
        .map(|(record, p)| {
            p.map_err(|e| Error::Parse {
                record,
                message: e.to_string(),
            })
        })
        .collect()
}
