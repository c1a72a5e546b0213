//! End-to-end orchestration: proposals → clusters → track-and-fill → masks,
//! and evaluation of written masks against ground truth.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{
    apply_labels, auto_bandwidth, cluster_masks, l2_normalize, mean_shift, select_foreground, ClusterAssignment,
    ClusterSizeRule, DEFAULT_BANDWIDTH_FACTOR, DEFAULT_MAX_ITER, DEFAULT_MIN_FRAC, DEFAULT_TOL,
};
use crate::error::{Error, Result};
use crate::ingest::{
    frame_stem, load_masks, load_sequence_data, read_binary_mask, write_binary_mask, SequenceData, FRAMES_DIR, GT_DIR,
};
use crate::metrics::{jaccard, EvalReport, RecallMode, ReportDocument, SequenceScores, DEFAULT_RECALL_TAU};
use crate::premask::{preliminary_mask, SegmentRecord, DEFAULT_BINARIZE_TAU, DEFAULT_TOP_K};
use crate::raster::BinaryMask;
use crate::track::{NccTracker, TrackerParams};
use crate::transfer::{fill_undetected, GrabCutParams};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Proposals kept per frame.
    pub k: usize,
    pub tau_binarize: f64,
    pub min_frac: f64,
    pub cluster_size_rule: ClusterSizeRule,
    /// Mean-shift bandwidth; `None` derives it from the descriptors.
    pub bandwidth: Option<f64>,
    /// Multiplier on the median pairwise distance for the derived bandwidth.
    pub bandwidth_factor: f64,
    pub grabcut: GrabCutParams,
    pub tracker: TrackerParams,
    pub seed: u64,
    pub recall_mode: RecallMode,
    pub tau_recall: f64,
    /// Leave the first and last frame of each sequence out of evaluation.
    pub exclude_endpoints: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: DEFAULT_TOP_K,
            tau_binarize: DEFAULT_BINARIZE_TAU,
            min_frac: DEFAULT_MIN_FRAC,
            cluster_size_rule: ClusterSizeRule::default(),
            bandwidth: None,
            bandwidth_factor: DEFAULT_BANDWIDTH_FACTOR,
            grabcut: GrabCutParams::default(),
            tracker: TrackerParams::default(),
            seed: 0,
            recall_mode: RecallMode::default(),
            tau_recall: DEFAULT_RECALL_TAU,
            exclude_endpoints: false,
        }
    }
}

impl PipelineConfig {
    /// Reads a `.toml` file, or JSON for any other extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: PipelineConfig = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.tau_binarize > 0.0 && self.tau_binarize < 1.0) {
            return Err(Error::Config(format!("tau_binarize {} outside (0,1)", self.tau_binarize)));
        }
        if !(self.min_frac > 0.0 && self.min_frac <= 1.0) {
            return Err(Error::Config(format!("min_frac {} outside (0,1]", self.min_frac)));
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("bandwidth {h} must be positive")));
            }
        }
        if !(self.bandwidth_factor > 0.0 && self.bandwidth_factor.is_finite()) {
            return Err(Error::Config(format!("bandwidth_factor {} must be positive", self.bandwidth_factor)));
        }
        if !(self.tau_recall > 0.0 && self.tau_recall < 1.0) {
            return Err(Error::Config(format!("tau_recall {} outside (0,1)", self.tau_recall)));
        }
        self.grabcut.validate()?;
        self.tracker.validate()
    }
}

/// Sequence roots under `input`: `input` itself when it holds `frames/`,
/// otherwise each subdirectory that does, sorted by name.
pub fn sequence_roots(input: &Path) -> Result<Vec<PathBuf>> {
    if input.join(FRAMES_DIR).is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let entries = fs::read_dir(input).map_err(|e| Error::ingest(input, e))?;
    let mut roots = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::ingest(input, e))?.path();
        if path.join(FRAMES_DIR).is_dir() {
            roots.push(path);
        }
    }
    if roots.is_empty() {
        return Err(Error::ingest(input, "no sequence directories (none contain frames/)"));
    }
    roots.sort();
    Ok(roots)
}

fn sequence_name(root: &Path) -> String {
    root.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into())
}

/// Machine-readable failure record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub error: String,
    pub frame: Option<usize>,
    pub message: String,
}

impl From<&Error> for Diagnostic {
    fn from(e: &Error) -> Self {
        Diagnostic {
            error: e.code().into(),
            frame: e.frame(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub records: usize,
    pub bandwidth: f64,
    pub num_clusters: usize,
    /// Members per cluster, indexed by cluster id.
    pub sizes: Vec<usize>,
    pub foreground: Option<usize>,
    /// Frames with at least one foreground-cluster segment.
    pub foreground_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSummary {
    pub name: String,
    pub status: Status,
    pub frames: usize,
    /// Frames whose mask came from track-and-fill, ascending.
    pub filled_frames: Vec<usize>,
    pub cluster: Option<ClusterStats>,
    pub error: Option<Diagnostic>,
}

/// Wall-clock seconds per frame for each stage of one sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub ingest: f64,
    pub premask: f64,
    pub cluster: f64,
    pub fill: f64,
    pub write: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: PipelineConfig,
    pub sequences: Vec<SequenceSummary>,
    /// Kept apart from everything else so runs can be compared with this
    /// one key removed.
    pub timings: BTreeMap<String, StageTimings>,
}

impl RunSummary {
    pub fn failures(&self) -> impl Iterator<Item = &SequenceSummary> {
        self.sequences.iter().filter(|s| s.status == Status::Failed)
    }
}

struct Clustered {
    records: Vec<SegmentRecord<f64>>,
    assignment: ClusterAssignment<f64>,
}

fn cluster_records(cfg: &PipelineConfig, mut records: Vec<SegmentRecord<f64>>) -> Result<Clustered> {
    if records.is_empty() {
        return Err(Error::NoForegroundCluster);
    }
    let points = records
        .iter()
        .map(|r| l2_normalize(&r.descriptor))
        .collect::<Result<Vec<_>>>()?;
    let h = match cfg.bandwidth {
        Some(h) => h,
        None => auto_bandwidth(&points, cfg.bandwidth_factor),
    };
    let assignment = mean_shift(&points, h, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    apply_labels(&mut records, &assignment);
    Ok(Clustered { records, assignment })
}

fn premask(cfg: &PipelineConfig, data: &SequenceData<f64>) -> Result<Vec<SegmentRecord<f64>>> {
    let dims = data.sequence.dims();
    let per_frame = data
        .proposals
        .par_iter()
        .zip(&data.descriptors)
        .map(|(ps, ds)| preliminary_mask(ps, ds, dims, cfg.k, cfg.tau_binarize).map(|(_, r)| r))
        .collect::<Vec<_>>();
    let mut records = Vec::new();
    for r in per_frame {
        records.extend(r?);
    }
    Ok(records)
}

/// Per-record cluster labels of one sequence, for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDump {
    pub sequence: String,
    pub bandwidth: f64,
    pub num_clusters: usize,
    pub sizes: Vec<usize>,
    pub foreground: Option<usize>,
    pub records: Vec<DumpRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpRecord {
    pub frame: usize,
    pub proposal: usize,
    pub cluster: usize,
    pub area: usize,
}

/// Runs the pipeline up to clustering and reports every record's label.
pub fn cluster_dump(cfg: &PipelineConfig, root: &Path) -> Result<ClusterDump> {
    cfg.validate()?;
    let data = load_sequence_data::<f64>(root)?;
    let c = cluster_records(cfg, premask(cfg, &data)?)?;
    let fg = select_foreground(
        &c.assignment,
        &c.records,
        data.sequence.len(),
        cfg.min_frac,
        cfg.cluster_size_rule,
    );
    Ok(ClusterDump {
        sequence: sequence_name(root),
        bandwidth: c.assignment.bandwidth,
        num_clusters: c.assignment.num_clusters(),
        sizes: c.assignment.sizes(),
        foreground: fg,
        records: c
            .records
            .iter()
            .zip(&c.assignment.labels)
            .map(|(r, &l)| DumpRecord {
                frame: r.frame_index,
                proposal: r.proposal_index,
                cluster: l,
                area: r.mask.area(),
            })
            .collect(),
    })
}

struct SequenceOutcome {
    summary: SequenceSummary,
    timings: StageTimings,
}

fn run_sequence(cfg: &PipelineConfig, root: &Path, out_root: &Path) -> SequenceOutcome {
    let name = sequence_name(root);
    let mut summary = SequenceSummary {
        name: name.clone(),
        status: Status::Ok,
        frames: 0,
        filled_frames: Vec::new(),
        cluster: None,
        error: None,
    };
    let mut timings = StageTimings::default();
    if let Err(e) = process_sequence(cfg, root, &out_root.join(&name), &mut summary, &mut timings) {
        warn!("sequence {name} failed: {e}");
        summary.status = Status::Failed;
        summary.error = Some(Diagnostic::from(&e));
    }
    SequenceOutcome { summary, timings }
}

fn process_sequence(
    cfg: &PipelineConfig,
    root: &Path,
    out_dir: &Path,
    summary: &mut SequenceSummary,
    timings: &mut StageTimings,
) -> Result<()> {
    let t = Instant::now();
    let data = load_sequence_data::<f64>(root)?;
    let n = data.sequence.len();
    summary.frames = n;
    let per_frame = |s: f64| s / n.max(1) as f64;
    timings.ingest = per_frame(t.elapsed().as_secs_f64());

    let t = Instant::now();
    let records = premask(cfg, &data)?;
    timings.premask = per_frame(t.elapsed().as_secs_f64());

    let t = Instant::now();
    let c = cluster_records(cfg, records)?;
    let fg = select_foreground(&c.assignment, &c.records, n, cfg.min_frac, cfg.cluster_size_rule);
    let masks = match fg {
        Some(f) => cluster_masks(&c.records, f, n)?,
        None => Vec::new(),
    };
    summary.cluster = Some(ClusterStats {
        records: c.records.len(),
        bandwidth: c.assignment.bandwidth,
        num_clusters: c.assignment.num_clusters(),
        sizes: c.assignment.sizes(),
        foreground: fg,
        foreground_frames: masks.iter().filter(|m| m.as_ref().is_some_and(|m| !m.is_empty())).count(),
    });
    let fg = fg.ok_or(Error::NoForegroundCluster)?;
    info!("{}: foreground cluster {fg} of {}", summary.name, c.assignment.num_clusters());
    timings.cluster = per_frame(t.elapsed().as_secs_f64());

    let t = Instant::now();
    let tracker = NccTracker::new(cfg.tracker);
    let filled = fill_undetected(&data.sequence, &masks, &tracker, &cfg.grabcut, cfg.seed)?;
    timings.fill = per_frame(t.elapsed().as_secs_f64());

    let t = Instant::now();
    let mut out: Vec<Option<BinaryMask>> = masks.into_iter().map(|m| m.filter(|m| !m.is_empty())).collect();
    let mut filled_frames = Vec::with_capacity(filled.len());
    for f in filled {
        filled_frames.push(f.frame);
        out[f.frame] = Some(f.mask);
    }
    filled_frames.sort_unstable();
    summary.filled_frames = filled_frames;
    fs::create_dir_all(out_dir).map_err(|e| Error::write(out_dir, e))?;
    for (i, m) in out.iter().enumerate() {
        let m = m.as_ref().expect("every frame is detected or filled");
        write_binary_mask(m, &out_dir.join(format!("{}.png", frame_stem(i))))?;
    }
    timings.write = per_frame(t.elapsed().as_secs_f64());
    Ok(())
}

fn with_pool<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match jobs {
        None => Ok(f()),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs every sequence under `input` and writes `<output>/<name>/NNNNN.png`
/// masks plus `<output>/summary.json`. A failing sequence is recorded in the
/// summary and does not stop the others. `jobs` bounds the worker threads
/// (`None` uses rayon's default); the output does not depend on it.
pub fn run_pipeline(cfg: &PipelineConfig, input: &Path, output: &Path, jobs: Option<usize>) -> Result<RunSummary> {
    cfg.validate()?;
    let roots = sequence_roots(input)?;
    fs::create_dir_all(output).map_err(|e| Error::write(output, e))?;
    let outcomes: Vec<SequenceOutcome> =
        with_pool(jobs, || roots.par_iter().map(|r| run_sequence(cfg, r, output)).collect())?;
    let mut timings = BTreeMap::new();
    let mut sequences = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        timings.insert(o.summary.name.clone(), o.timings);
        sequences.push(o.summary);
    }
    let summary = RunSummary {
        config: cfg.clone(),
        sequences,
        timings,
    };
    let path = output.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::write(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::write(&path, e))?;
    Ok(summary)
}

/// Scores `<pred>/<name>/NNNNN.png` against each sequence's `gt/` masks.
/// A missing prediction is scored as an empty mask.
pub fn evaluate(cfg: &PipelineConfig, pred: &Path, gt: &Path) -> Result<ReportDocument> {
    cfg.validate()?;
    let mut sequences = Vec::new();
    for root in sequence_roots(gt)? {
        let name = sequence_name(&root);
        let truth = load_masks(&root.join(GT_DIR))?;
        let mut js = Vec::with_capacity(truth.len());
        for (pos, (n, g)) in truth.iter().enumerate() {
            if cfg.exclude_endpoints && (pos == 0 || pos + 1 == truth.len()) {
                continue;
            }
            let p = pred.join(&name).join(format!("{}.png", frame_stem(*n as usize)));
            let m = if p.is_file() {
                read_binary_mask(&p)?
            } else {
                warn!("missing prediction {}; scoring it as empty", p.display());
                BinaryMask::new(g.width(), g.height())
            };
            js.push(jaccard(&m, g)?);
        }
        if js.is_empty() {
            return Err(Error::ingest(root.join(GT_DIR), "no ground-truth frames to evaluate"));
        }
        sequences.push(SequenceScores { name, per_frame_j: js });
    }
    ReportDocument::build(&EvalReport::new(sequences)?, cfg.tau_recall, cfg.recall_mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic_case, write_synthetic_case, SynthConfig};

    fn small_case(dir: &Path, name: &str, drop: f64, seed: u64) -> Vec<usize> {
        let cfg = SynthConfig {
            frames: 10,
            width: 64,
            height: 64,
            drop_fraction: drop,
            descriptor_dim: 32,
            ..Default::default()
        };
        let case = generate_synthetic_case::<f64>(&cfg, seed).unwrap();
        write_synthetic_case(&case, &cfg, seed, &dir.join(name)).unwrap();
        case.dropped_frames
    }

    #[test]
    fn no_drops_means_no_fills() {
        let dir = tempfile::tempdir().unwrap();
        small_case(dir.path(), "a", 0.0, 1);
        let out = dir.path().join("out");
        let s = run_pipeline(&PipelineConfig::default(), &dir.path().join("a"), &out, Some(1)).unwrap();
        assert_eq!(s.sequences[0].status, Status::Ok, "{:?}", s.sequences[0].error);
        assert!(s.sequences[0].filled_frames.is_empty());
        assert!(out.join("a").join("00009.png").is_file());
    }

    #[test]
    fn dropped_frames_are_filled_and_scored() {
        let dir = tempfile::tempdir().unwrap();
        let dropped = small_case(dir.path(), "b", 0.2, 2);
        let out = dir.path().join("out");
        let s = run_pipeline(&PipelineConfig::default(), &dir.path().join("b"), &out, Some(2)).unwrap();
        assert_eq!(s.sequences[0].filled_frames, dropped);
        let report = evaluate(&PipelineConfig::default(), &out, &dir.path().join("b")).unwrap();
        assert!(report.j_mean > 0.8, "{}", report.j_mean);
    }

    #[test]
    fn batch_isolates_failures() {
        let dir = tempfile::tempdir().unwrap();
        let batch = dir.path().join("batch");
        small_case(&batch, "good", 0.1, 3);
        fs::create_dir_all(batch.join("bad").join(FRAMES_DIR)).unwrap();
        let s = run_pipeline(&PipelineConfig::default(), &batch, &dir.path().join("out"), Some(2)).unwrap();
        let names: Vec<&str> = s.sequences.iter().map(|q| q.name.as_str()).collect();
        assert_eq!(names, ["bad", "good"]);
        assert_eq!(s.sequences[0].status, Status::Failed);
        assert_eq!(s.sequences[0].error.as_ref().unwrap().error, "ingest");
        assert_eq!(s.sequences[1].status, Status::Ok);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let dir = tempfile::tempdir().unwrap();
        small_case(dir.path(), "c", 0.0, 4);
        let root = dir.path().join("c");
        let cfg = PipelineConfig::default();
        let r = evaluate(&cfg, &root.join("nothing-here"), &root).unwrap();
        assert_eq!(r.j_mean, 0.0);
        // ground truth copied as the prediction
        let pred = dir.path().join("pred");
        fs::create_dir_all(pred.join("c")).unwrap();
        for (n, m) in load_masks(&root.join(GT_DIR)).unwrap() {
            write_binary_mask(&m, &pred.join("c").join(format!("{}.png", frame_stem(n as usize)))).unwrap();
        }
        let r = evaluate(&cfg, &pred, &root).unwrap();
        assert_eq!(r.j_mean, 1.0);
        assert_eq!(r.j_decay, Some(0.0));
        let r = evaluate(&PipelineConfig { exclude_endpoints: true, ..cfg }, &pred, &root).unwrap();
        assert_eq!(r.sequences[0].per_frame_j.len(), 8);
    }

    #[test]
    fn config_files_parse() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        fs::write(&t, "k = 3\nseed = 9\n[grabcut]\ngamma = 20.0\nK = 4\n").unwrap();
        let c = PipelineConfig::from_path(&t).unwrap();
        assert_eq!((c.k, c.seed, c.grabcut.gamma, c.grabcut.k), (3, 9, 20.0, 4));
        let j = dir.path().join("c.json");
        fs::write(&j, r#"{"min_frac": 0.5, "recall_mode": "sequence"}"#).unwrap();
        let c = PipelineConfig::from_path(&j).unwrap();
        assert_eq!((c.min_frac, c.recall_mode), (0.5, RecallMode::Sequence));
        fs::write(&j, r#"{"min_frac": 2.0}"#).unwrap();
        assert!(matches!(PipelineConfig::from_path(&j), Err(Error::Config(_))));
        fs::write(&j, r#"{"unknown": 1}"#).unwrap();
        assert!(PipelineConfig::from_path(&j).is_err());
    }
}
