//! End-to-end processing: per-session classification, featurization and
//! labelling, followed by cross-validated training and evaluation of every
//! (target, feature mode) pair.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    classify_trace, optimize_threshold_hist, ClassifyCounts, ClassifyError, PtMap, SizeHistogram, ThresholdReport,
    DEFAULT_THRESHOLD,
};
use crate::eval::{per_condition_report, write_report, EvalError, EvalReport, PredictionSet};
use crate::features::{featurize_session, FeatureError, FeatureMode, SlotFeatures};
use crate::ground_truth::{build_labels, CaptureEvent, FrameScore, GroundTruthError, SlotLabels};
use crate::ingest::PacketRecord;
use crate::model::{build_dataset, grid_search, stratified_folds, FoldAssignment, Grid, GridPoint, Hyperparams, ModelError, Target};
use crate::session::SessionMeta;
use crate::stats::{linear_fit, pearson, LinearFit};
use crate::synth::{generate_session, ConditionProfile, SynthCalibration, SynthError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub slot_seconds: f64,
    pub threshold: u32,
    pub folds: usize,
    pub seed: u64,
    pub grid: Grid,
    pub targets: Vec<Target>,
    pub modes: Vec<FeatureMode>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            slot_seconds: 1.0,
            threshold: DEFAULT_THRESHOLD,
            folds: 5,
            seed: 0,
            grid: Grid {
                n_trees: vec![25],
                max_depth: vec![None],
                min_samples_leaf: vec![5],
                features_per_split: None,
            },
            targets: Target::ALL.to_vec(),
            modes: vec![FeatureMode::Rtp, FeatureMode::Udp],
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.slot_seconds.is_finite() && self.slot_seconds > 0.0) {
            return Err(PipelineError::Config(format!("slot_seconds must be > 0, got {}", self.slot_seconds)));
        }
        if self.folds < 2 {
            return Err(PipelineError::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        for hp in self.grid.points() {
            hp.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("featurizing session {session}")]
    Features { session: String, source: FeatureError },
    #[error(transparent)]
    GroundTruth(#[from] GroundTruthError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("training {target} ({mode})")]
    Model { target: Target, mode: FeatureMode, source: ModelError },
    #[error(transparent)]
    ModelConfig(#[from] ModelError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything kept from one session once its packets are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedSession {
    pub meta: SessionMeta,
    pub features: Vec<SlotFeatures>,
    pub labels: Vec<SlotLabels>,
    /// Payload sizes of packets whose RTP payload type identifies them.
    pub size_hist: SizeHistogram,
    pub counts: ClassifyCounts,
    /// Per-slot utilized bandwidth in kBps, when known.
    pub bandwidth: Option<Vec<f64>>,
}

pub fn process_trace(
    meta: SessionMeta,
    packets: Vec<PacketRecord>,
    captures: &[CaptureEvent],
    scores: &[FrameScore],
    cfg: &PipelineConfig,
) -> Result<ProcessedSession, PipelineError> {
    let size_hist = SizeHistogram::from_labeled(&packets, &PtMap::default());
    let classified = classify_trace(packets, cfg.threshold);
    // RTP columns only when every video packet carries a parsed header
    let mode = if classified.video.iter().all(|p| p.rtp.is_some()) {
        FeatureMode::Rtp
    } else {
        FeatureMode::Udp
    };
    let features = featurize_session(&meta.session_id, &classified.video, meta.duration, cfg.slot_seconds, mode)
        .map_err(|source| PipelineError::Features {
            session: meta.session_id.clone(),
            source,
        })?;
    let labels = build_labels(&meta.session_id, captures, scores, meta.duration, cfg.slot_seconds)?;
    Ok(ProcessedSession {
        meta,
        features,
        labels,
        size_hist,
        counts: classified.counts,
        bandwidth: None,
    })
}

pub fn process_synthetic(
    profile: &ConditionProfile,
    calib: &SynthCalibration,
    cfg: &PipelineConfig,
) -> Result<ProcessedSession, PipelineError> {
    let s = generate_session(profile, calib)?;
    let mut out = process_trace(s.meta, s.packets, &s.captures, &s.scores, cfg)?;
    out.bandwidth = Some(s.bandwidth);
    Ok(out)
}

/// Generates and processes each profile; at most one trace per worker is
/// alive at a time. Output order follows `profiles`.
pub fn process_synthetic_corpus(
    profiles: &[ConditionProfile],
    calib: &SynthCalibration,
    cfg: &PipelineConfig,
) -> Result<Vec<ProcessedSession>, PipelineError> {
    profiles.par_iter().map(|p| process_synthetic(p, calib, cfg)).collect()
}

/// Packet-level relationships between utilized bandwidth and traffic shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficSummary {
    pub slots: usize,
    /// Pearson r of per-slot video packet count against bandwidth.
    pub count_bandwidth_r: f64,
    /// Slot mean packet size against `ln(bandwidth)`.
    pub size_log_bandwidth_fit: LinearFit<f64>,
    /// Share of non-empty slots with a mean packet size in [900, 1150] bytes.
    pub size_mean_in_band: f64,
}

pub const SIZE_BAND: (f64, f64) = (900.0, 1150.0);

pub fn traffic_summary(sessions: &[ProcessedSession]) -> Option<TrafficSummary> {
    let (mut bw, mut count, mut size) = (Vec::new(), Vec::new(), Vec::new());
    for s in sessions {
        let Some(b) = &s.bandwidth else { continue };
        for (f, &kbps) in s.features.iter().zip(b) {
            if f.pkt_count() > 0.0 && kbps > 0.0 {
                bw.push(kbps);
                count.push(f.pkt_count());
                size.push(f.size_mean());
            }
        }
    }
    let r = pearson(&bw, &count)?;
    let log_bw: Vec<f64> = bw.iter().map(|b| b.ln()).collect();
    let fit = linear_fit(&log_bw, &size)?;
    let in_band = size.iter().filter(|&&s| (SIZE_BAND.0..=SIZE_BAND.1).contains(&s)).count();
    Some(TrafficSummary {
        slots: bw.len(),
        count_bandwidth_r: r,
        size_log_bandwidth_fit: fit,
        size_mean_in_band: in_band as f64 / size.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub target: Target,
    pub mode: FeatureMode,
    pub best: Hyperparams,
    pub best_score: f64,
    pub table: Vec<GridPoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub threshold: Option<ThresholdReport>,
    pub folds: FoldAssignment,
    pub runs: Vec<ModelRun>,
    pub predictions: Vec<PredictionSet>,
    pub report: EvalReport,
    pub traffic: Option<TrafficSummary>,
}

/// Grid search per (mode, target) with session-level stratified folds; the
/// selected point's out-of-fold predictions feed the report.
pub fn train_and_evaluate(sessions: &[ProcessedSession], cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let metas: Vec<SessionMeta> = sessions.iter().map(|s| s.meta.clone()).collect();
    let features: Vec<SlotFeatures> = sessions.iter().flat_map(|s| s.features.iter().cloned()).collect();
    let labels: Vec<SlotLabels> = sessions.iter().flat_map(|s| s.labels.iter().cloned()).collect();
    let folds = stratified_folds(&metas, cfg.folds, cfg.seed);

    let mut hist = SizeHistogram::default();
    for s in sessions {
        hist.merge(&s.size_hist);
    }
    let threshold = optimize_threshold_hist(&hist).ok();

    let mut runs = Vec::new();
    let mut predictions = Vec::new();
    for &mode in &cfg.modes {
        for &target in &cfg.targets {
            let wrap = |source| PipelineError::Model { target, mode, source };
            let ds = build_dataset::<f64>(&features, &labels, mode, target).map_err(wrap)?;
            let gr = grid_search(&ds, &folds, &cfg.grid, target, cfg.seed).map_err(wrap)?;
            log::info!("{target} ({mode}): best {:?} score {:.4}", gr.best, gr.best_score);
            runs.push(ModelRun {
                target,
                mode,
                best: gr.best,
                best_score: gr.best_score,
                table: gr.table,
            });
            predictions.push(PredictionSet {
                target,
                mode,
                keys: ds.keys,
                values: gr.predictions,
            });
        }
    }
    let report = per_condition_report(&predictions, &labels, &metas)?;
    Ok(PipelineOutput {
        threshold,
        folds,
        runs,
        predictions,
        report,
        traffic: traffic_summary(sessions),
    })
}

/// Writes the report tables plus `threshold_table.csv`, `grid.json`,
/// `folds.json` and `traffic.json` into `dir`; returns the file names.
pub fn write_pipeline_output(out: &PipelineOutput, dir: &Path) -> Result<Vec<String>, PipelineError> {
    let mut written = write_report(&out.report, dir)?;
    let mut put = |name: &str, bytes: &[u8]| -> std::io::Result<()> {
        fs::write(dir.join(name), bytes)?;
        written.push(name.to_string());
        Ok(())
    };
    if let Some(t) = &out.threshold {
        let mut buf = Vec::new();
        t.write_table_csv(&mut buf)?;
        put("threshold_table.csv", &buf)?;
        put("threshold.json", to_json(t).as_bytes())?;
    }
    put("grid.json", to_json(&out.runs).as_bytes())?;
    put("folds.json", to_json(&out.folds).as_bytes())?;
    if let Some(t) = &out.traffic {
        put("traffic.json", to_json(t).as_bytes())?;
    }
    Ok(written)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::CorpusSpec;

    fn tiny_corpus() -> Vec<ConditionProfile> {
        let js = r#"{"duration": 20, "groups": [
            {"kind": "bandwidth_limit", "kbps": 250, "count": 2},
            {"kind": "bandwidth_limit", "kbps": 30, "count": 2},
            {"kind": "packet_loss", "pct": 10, "count": 2}]}"#;
        let spec: CorpusSpec = serde_json::from_str(js).unwrap();
        spec.expand(3, &SynthCalibration::default()).unwrap()
    }

    #[test]
    fn processed_session_conserves_packets() {
        let cfg = PipelineConfig::default();
        let p = &tiny_corpus()[0];
        let s = generate_session(p, &SynthCalibration::default()).unwrap();
        let total = s.packets.len() as u64;
        let out = process_synthetic(p, &SynthCalibration::default(), &cfg).unwrap();
        assert_eq!(out.counts.video + out.counts.nonvideo, total);
        let slot_sum: f64 = out.features.iter().map(|f| f.pkt_count()).sum();
        assert_eq!(slot_sum as u64, out.counts.video);
        assert_eq!(out.features.len(), 20);
        assert_eq!(out.labels.len(), 20);
        assert!(out.features.iter().all(|f| f.rtp.is_some()));
    }

    #[test]
    fn small_end_to_end_run() {
        let cfg = PipelineConfig {
            folds: 2,
            grid: Grid::single(Hyperparams {
                n_trees: 10,
                ..Hyperparams::default()
            }),
            ..PipelineConfig::default()
        };
        let sessions = process_synthetic_corpus(&tiny_corpus(), &SynthCalibration::default(), &cfg).unwrap();
        let out = train_and_evaluate(&sessions, &cfg).unwrap();
        assert_eq!(out.runs.len(), 10);
        assert_eq!(out.report.conditions.len(), 2);
        let t = out.threshold.as_ref().unwrap();
        assert!(t.accuracy > 0.99);
        assert!(out.traffic.as_ref().unwrap().count_bandwidth_r > 0.9);
        let dir = tempfile::tempdir().unwrap();
        write_pipeline_output(&out, dir.path()).unwrap();
        for f in ["report.json", "table3_mae.csv", "threshold_table.csv", "grid.json", "folds.json", "traffic.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = PipelineConfig {
            slot_seconds: 0.0,
            ..PipelineConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    }
}
