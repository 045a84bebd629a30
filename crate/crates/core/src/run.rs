//! End-to-end pipelines behind the command-line tool: loading a frame stream,
//! running detection into an archive directory, evaluating an archive, and
//! generating planted-loop synthetic data.
//!
//! An archive directory holds:
//!
//! | file | content |
//! |------|---------|
//! | `config.json` | the [`RunConfig`] used |
//! | `features.lcdf` | the processed unit feature stream |
//! | `frames.csv` | `frame_index,timestamp,source` per frame |
//! | `traces.jsonl` | one [`QueryTrace`] per solved or skipped query |
//! | `hypotheses.csv` | every emitted hypothesis with final acceptance |
//! | `sparsity.csv` | coefficients above `τ` as a coordinate list |
//! | `timing.json` | [`TimingStats`] |
//! | `best_matches.csv` | two-phase runs only: best memory frame per live frame |

use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::detector::{self, DetectorConfig, QueryTrace, Run};
use crate::error::{Error, Result};
use crate::evaluation::{self, BaselineMatch, GroundTruth, NnzStats, PrPoint, TimingStats};
use crate::features::{self, DescriptorFormat, FeatureVector};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InputSource {
    /// A directory of PGM/PPM files, processed in file-name order.
    Images(PathBuf),
    /// A CSV or LCDF descriptor file, picked by extension.
    Descriptors(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureSpec {
    /// Block-average each image to `rows × cols`.
    Downsample { rows: usize, cols: usize },
    /// Concatenate several down-sampled resolutions.
    Stack(Vec<(usize, usize)>),
    /// Use descriptor vectors as they are.
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: InputSource,
    pub features: FeatureSpec,
    pub detector: DetectorConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Keep every `stride`-th input frame.
    pub stride: usize,
    /// Two-phase mode: this many leading frames form the memory.
    pub memory_frames: Option<usize>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidConfig("stride must be at least 1".into()));
        }
        match (&self.input, &self.features) {
            (InputSource::Descriptors(_), FeatureSpec::Passthrough) => {}
            (InputSource::Descriptors(_), _) => {
                return Err(Error::InvalidConfig(
                    "descriptor input takes no image size options".into(),
                ))
            }
            (InputSource::Images(_), FeatureSpec::Passthrough) => {
                return Err(Error::InvalidConfig("image input needs a target size".into()))
            }
            (InputSource::Images(_), FeatureSpec::Stack(s)) if s.is_empty() => {
                return Err(Error::InvalidConfig("empty stack list".into()))
            }
            _ => {}
        }
        self.detector.validate()
    }

    /// The detector settings seen by the subsampled stream: `fps` is divided
    /// by the stride so that time gates keep their meaning in seconds.
    pub fn effective_detector(&self) -> DetectorConfig {
        DetectorConfig {
            fps: self.detector.fps / self.stride as f64,
            ..self.detector.clone()
        }
    }
}

/// One frame of the processed stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub feature: FeatureVector,
    pub source: String,
}

fn image_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("pgm" | "ppm" | "pnm")) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Loads, featurizes and subsamples the input stream.
pub fn load_frames(cfg: &RunConfig) -> Result<Vec<Frame>> {
    cfg.validate()?;
    let frames: Vec<Frame> = match &cfg.input {
        InputSource::Descriptors(path) => features::load_descriptors(path, DescriptorFormat::from_path(path))?
            .into_iter()
            .step_by(cfg.stride)
            .enumerate()
            .map(|(k, feature)| Frame {
                feature,
                source: format!("record{}", k * cfg.stride),
            })
            .collect(),
        InputSource::Images(dir) => {
            let sizes = match &cfg.features {
                FeatureSpec::Downsample { rows, cols } => vec![(*rows, *cols)],
                FeatureSpec::Stack(s) => s.clone(),
                FeatureSpec::Passthrough => unreachable!("rejected by validate"),
            };
            image_paths(dir)?
                .into_iter()
                .step_by(cfg.stride)
                .map(|p| {
                    let img = features::read_pnm(&p)?;
                    let parts = sizes
                        .iter()
                        .map(|&(r, c)| features::image_to_feature(&img, r, c))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(Frame {
                        feature: features::stack_features(&parts)?,
                        source: p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    if frames.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(frames)
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_traces(path: &Path, traces: &[QueryTrace]) -> Result<()> {
    let mut w = create(path)?;
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_traces(path: &Path) -> Result<Vec<QueryTrace>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (record, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            record,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_baseline_csv(path: &Path, matches: &[BaselineMatch]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for m in matches {
        w.serialize(m)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs detection over the configured input and writes the archive.
pub fn run_detect(cfg: &RunConfig) -> Result<Run> {
    let frames = load_frames(cfg)?;
    let det_cfg = cfg.effective_detector();
    let feats: Vec<FeatureVector> = frames.iter().map(|f| f.feature.clone()).collect();
    if let Some(m) = cfg.memory_frames {
        if m == 0 || m >= feats.len() {
            return Err(Error::InvalidConfig(format!(
                "memory size {m} must leave at least one live frame of {}",
                feats.len()
            )));
        }
    }
    let run = detector::run_sequence(&det_cfg, &feats, cfg.memory_frames)?;

    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("config.json"), cfg)?;
    features::save_lcdf(out.join("features.lcdf"), &feats)?;
    {
        let path = out.join("frames.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["frame_index", "timestamp", "source"])?;
        for (k, f) in frames.iter().enumerate() {
            let ts = k as f64 / det_cfg.fps;
            w.write_record([k.to_string(), ts.to_string(), f.source.clone()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    write_traces(&out.join("traces.jsonl"), &run.traces)?;
    detector::write_hypotheses_csv(out.join("hypotheses.csv"), &run.hypotheses)?;
    detector::sparsity_matrix(&run.traces, det_cfg.tau).write_csv(out.join("sparsity.csv"))?;
    write_json(&out.join("timing.json"), &evaluation::timing_report(&run.traces))?;
    if cfg.memory_frames.is_some() {
        let best: Vec<BaselineMatch> = run
            .traces
            .iter()
            .filter_map(|t| {
                t.best_match().map(|(j, s)| BaselineMatch {
                    query_index: t.query_index,
                    match_index: j,
                    score: s,
                })
            })
            .collect();
        write_baseline_csv(&out.join("best_matches.csv"), &best)?;
    }
    Ok(run)
}

/// A detection archive read back from disk.
#[derive(Debug, Clone)]
pub struct Archive {
    pub config: RunConfig,
    pub features: Vec<FeatureVector>,
    pub traces: Vec<QueryTrace>,
}

impl Archive {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let config: RunConfig = read_json(&dir.join("config.json"))?;
        let path = dir.join("features.lcdf");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        // Stored vectors are already unit; renormalizing could move their bits.
        let features = features::descriptors::parse_lcdf(&bytes)?
            .into_iter()
            .map(|v| FeatureVector::from_unit(v, "archive"))
            .collect::<Result<Vec<_>>>()?;
        let traces = read_traces(&dir.join("traces.jsonl"))?;
        let expected = features.len() - config.memory_frames.unwrap_or(0);
        if traces.len() != expected {
            return Err(Error::Parse {
                record: traces.len(),
                message: format!("{expected} frames need traces, archive has {}", traces.len()),
            });
        }
        Ok(Self {
            config,
            features,
            traces,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub taus: Vec<f64>,
    /// Each value re-solves the whole stream.
    pub lambdas: Vec<f64>,
    pub tolerance_frames: usize,
    pub lsq_baseline: bool,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            taus: vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            lambdas: Vec::new(),
            tolerance_frames: evaluation::DEFAULT_TOLERANCE_FRAMES,
            lsq_baseline: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tau_sweep: Vec<PrPoint>,
    pub nn: Vec<PrPoint>,
    pub lsq: Vec<PrPoint>,
    pub lambda_sweep: Vec<PrPoint>,
    /// Recorded run first, then one entry per swept `λ`.
    pub nnz: Vec<NnzStats>,
    pub timing: TimingStats,
}

/// Evaluates an archive against ground truth and writes `pr_tau.csv`,
/// `pr_nn.csv`, `nnz.csv`, and when requested `pr_lambda.csv` and
/// `pr_lsq.csv` into `out_dir`.
pub fn run_eval(archive_dir: &Path, truth_path: &Path, spec: &EvalSpec, out_dir: &Path) -> Result<EvalReport> {
    let archive = Archive::load(archive_dir)?;
    let truth = GroundTruth::load(truth_path, spec.tolerance_frames)?;
    let cfg = archive.config.effective_detector();
    let memory = archive.config.memory_frames;

    let tau_sweep = evaluation::sweep_tau(&archive.traces, &cfg, &spec.taus, &truth);
    let nn_matches = evaluation::nn_baseline(&archive.features, cfg.gate_frames(), memory)?;
    let nn = evaluation::baseline_pr(&nn_matches, &spec.taus, &truth);
    let lsq = if spec.lsq_baseline {
        let m = evaluation::lsq_baseline(&archive.features, cfg.gate_frames())?;
        evaluation::baseline_pr(&m, &spec.taus, &truth)
    } else {
        Vec::new()
    };
    let mut nnz = vec![evaluation::nnz_stats(&archive.traces, cfg.lambda)];
    let mut lambda_sweep = Vec::new();
    for (stats, pr) in evaluation::sweep_lambda(&archive.features, &cfg, &spec.lambdas, memory, Some(&truth))? {
        nnz.push(stats);
        lambda_sweep.extend(pr);
    }

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    evaluation::write_pr_csv(out_dir.join("pr_tau.csv"), &tau_sweep)?;
    evaluation::write_pr_csv(out_dir.join("pr_nn.csv"), &nn)?;
    if spec.lsq_baseline {
        evaluation::write_pr_csv(out_dir.join("pr_lsq.csv"), &lsq)?;
    }
    if !spec.lambdas.is_empty() {
        evaluation::write_pr_csv(out_dir.join("pr_lambda.csv"), &lambda_sweep)?;
    }
    {
        let path = out_dir.join("nnz.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for s in &nnz {
            w.serialize(s)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(EvalReport {
        tau_sweep,
        nn,
        lsq,
        lambda_sweep,
        nnz,
        timing: evaluation::timing_report(&archive.traces),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_frames: usize,
    pub n_loops: usize,
    pub dim: usize,
    /// Norm of the perturbation added to a revisited unit vector, in `[0, 1)`.
    pub noise_level: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_frames: 200,
            n_loops: 20,
            dim: 128,
            noise_level: 0.05,
        }
    }
}

/// Revisits come in runs of this many consecutive frames.
pub const SYNTH_SEGMENT: usize = 5;
/// Minimum index distance between a revisit and the frame it repeats.
pub const SYNTH_MIN_GAP: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub frames: Vec<FeatureVector>,
    /// `(revisit, original)` stream indices.
    pub truth: Vec<(usize, usize)>,
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = linalg::norm2(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random unit "places" with planted revisits.
///
/// `n_frames − n_loops` distinct places are shown once each. The `n_loops`
/// revisits are split into runs of [`SYNTH_SEGMENT`] consecutive frames
/// inserted at even spacing through the second half of the stream; each run
/// repeats a random run of earlier places at least [`SYNTH_MIN_GAP`] frames
/// back. A revisit is the original plus a Gaussian direction scaled to
/// `noise_level`, renormalized; with zero noise it is an exact copy.
pub fn synth(spec: &SynthSpec) -> Result<SynthData> {
    if spec.dim == 0 || spec.n_frames == 0 {
        return Err(Error::InvalidConfig("n_frames and dim must be positive".into()));
    }
    if !(0.0..1.0).contains(&spec.noise_level) {
        return Err(Error::InvalidConfig(format!(
            "noise level must be in [0, 1), got {}",
            spec.noise_level
        )));
    }
    let n_new = spec.n_frames.checked_sub(spec.n_loops).unwrap_or(0);
    let segments = spec.n_loops.div_ceil(SYNTH_SEGMENT);
    if spec.n_loops > 0 && n_new / 2 < SYNTH_SEGMENT + SYNTH_MIN_GAP {
        return Err(Error::InvalidConfig(format!(
            "{} loops do not fit in {} frames",
            spec.n_loops, spec.n_frames
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let places: Vec<Vec<f64>> = (0..n_new).map(|_| gaussian_unit(&mut rng, spec.dim)).collect();

    // Insertion point (in places shown so far) and length of each run.
    let runs: Vec<(usize, usize)> = (0..segments)
        .map(|q| {
            let at = n_new / 2 + q * (n_new - n_new / 2) / segments;
            (at, SYNTH_SEGMENT.min(spec.n_loops - q * SYNTH_SEGMENT))
        })
        .collect();

    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut stream_of_place = Vec::with_capacity(n_new);
    let mut truth = Vec::with_capacity(spec.n_loops);
    let mut next_run = 0;
    for p in 0..=n_new {
        while next_run < runs.len() && runs[next_run].0 == p {
            let (_, len) = runs[next_run];
            // Latest start that keeps the whole run SYNTH_MIN_GAP places back.
            let hi = p - len - SYNTH_MIN_GAP;
            let start = rand::Rng::gen_range(&mut rng, 0..=hi);
            for k in start..start + len {
                let orig = &places[k];
                let f = if spec.noise_level == 0.0 {
                    FeatureVector::from_unit(orig.clone(), "synth")?
                } else {
                    let dir = gaussian_unit(&mut rng, spec.dim);
                    let v = orig.iter().zip(&dir).map(|(o, d)| o + spec.noise_level * d).collect();
                    FeatureVector::normalized(v, "synth")?
                };
                truth.push((frames.len(), stream_of_place[k]));
                frames.push(f);
            }
            next_run += 1;
        }
        if p < n_new {
            stream_of_place.push(frames.len());
            frames.push(FeatureVector::from_unit(places[p].clone(), "synth")?);
        }
    }
    Ok(SynthData { frames, truth })
}

/// Writes `descriptors.lcdf` and `truth.csv` into `out_dir`.
pub fn write_synth(data: &SynthData, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    features::save_lcdf(out_dir.join("descriptors.lcdf"), &data.frames)?;
    GroundTruth::new(data.truth.iter().copied(), 0)?.save(out_dir.join("truth.csv"))
}
