use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qoe_lens::classify::{classify_trace, optimize_threshold_hist, size_cdf_by_payload_type, PtMap, SizeHistogram};
use qoe_lens::eval::{per_condition_report, read_predictions_csv, write_predictions_csv, write_report, PredictionSet};
use qoe_lens::features::{featurize_session, read_features_csv, write_features_csv, FeatureMode, SlotFeatures};
use qoe_lens::ground_truth::{
    build_labels, read_captures_csv, read_labels_csv, read_scores_csv, write_captures_csv, write_labels_csv,
    write_scores_csv, SlotLabels,
};
use qoe_lens::ingest::{parse_packet_csv, parse_pcap, write_packet_csv, write_pcap, PacketRecord, StreamFilter, TraceStub};
use qoe_lens::model::{build_dataset, fit_forest, ModelError, RandomForest};
use qoe_lens::pipeline::{
    process_synthetic_corpus, process_trace, train_and_evaluate, write_pipeline_output, ProcessedSession,
};
use qoe_lens::session::SessionMeta;
use qoe_lens::synth::{generate_session, ConditionProfile, CorpusSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::AppConfig;
use crate::manifest::write_manifest;

/// Fixed capture start for generated pcaps (2024-01-01T00:00:00Z), keeping
/// output byte-identical across runs.
const SYNTH_PCAP_EPOCH_US: u64 = 1_704_067_200_000_000;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn names(files: &[&str]) -> Vec<String> {
    files.iter().map(|f| f.to_string()).collect()
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "session".into(), |s| s.to_string_lossy().into_owned())
}

fn read_packets(path: &Path) -> Result<Vec<PacketRecord>> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        Ok(parse_packet_csv(path)?)
    } else {
        Ok(parse_pcap(path, None)?.packets)
    }
}

fn parse_pair<T: std::str::FromStr>(s: &str, what: &str) -> Result<(T, T)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => bail!("cannot parse {what} pair `{s}`"),
        },
        _ => bail!("{what} filter must be two comma-separated values, got `{s}`"),
    }
}

/// Session id and duration from `--meta`, explicit flags, or the data.
pub struct SessionArgs {
    pub meta: Option<PathBuf>,
    pub session_id: Option<String>,
    pub duration: Option<f64>,
}

impl SessionArgs {
    fn resolve(&self, fallback_id: &str, fallback_duration: f64) -> Result<(String, f64)> {
        let meta: Option<SessionMeta> = self.meta.as_deref().map(read_json).transpose()?;
        let id = self
            .session_id
            .clone()
            .or_else(|| meta.as_ref().map(|m| m.session_id.clone()))
            .unwrap_or_else(|| fallback_id.to_string());
        let duration = self.duration.or(meta.map(|m| m.duration)).unwrap_or(fallback_duration);
        Ok((id, duration))
    }

    fn inputs(&self) -> Vec<PathBuf> {
        self.meta.iter().cloned().collect()
    }
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    stub: &'a TraceStub,
    packets: usize,
    summary: Option<&'a qoe_lens::ingest::ParseSummary>,
}

pub fn ingest(
    cfg: &AppConfig,
    out: &Path,
    input: &Path,
    session_id: Option<String>,
    ips: Option<&str>,
    ports: Option<&str>,
) -> Result<()> {
    let filter = StreamFilter {
        ips: ips.map(|s| parse_pair::<IpAddr>(s, "ip")).transpose()?,
        ports: ports.map(|s| parse_pair::<u16>(s, "port")).transpose()?,
    };
    let is_csv = input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let id = session_id.unwrap_or_else(|| stem(input));
    let (packets, stub, summary) = if is_csv {
        let packets: Vec<PacketRecord> = parse_packet_csv(input)?
            .into_iter()
            .filter(|p| filter.matches(p.src_ip, p.dst_ip, p.src_port, p.dst_port))
            .collect();
        let stub = TraceStub {
            session_id: id,
            start_epoch: 0.0,
            duration: packets.last().map_or(0.0, |p| p.ts),
        };
        (packets, stub, None)
    } else {
        let mut t = parse_pcap(input, Some(&filter))?;
        t.stub.session_id = id;
        (t.packets, t.stub, Some(t.summary))
    };
    fs::create_dir_all(out)?;
    write_packet_csv(create(&out.join("packets.csv"))?, &packets)?;
    write_json(
        &out.join("ingest.json"),
        &IngestSummary {
            stub: &stub,
            packets: packets.len(),
            summary: summary.as_ref(),
        },
    )?;
    log::info!("ingested {} packets from {}", packets.len(), input.display());
    write_manifest(out, "ingest", cfg, &[input.to_path_buf()], &names(&["packets.csv", "ingest.json"]))
}

pub fn classify(cfg: &AppConfig, out: &Path, packets_path: &Path) -> Result<()> {
    let packets = read_packets(packets_path)?;
    let hist = SizeHistogram::from_labeled(&packets, &PtMap::default());
    let cdfs = size_cdf_by_payload_type(&packets);
    let trace = classify_trace(packets, cfg.threshold);
    fs::create_dir_all(out)?;
    write_packet_csv(create(&out.join("video.csv"))?, &trace.video)?;
    write_packet_csv(create(&out.join("nonvideo.csv"))?, &trace.nonvideo)?;
    write_json(
        &out.join("classify.json"),
        &serde_json::json!({ "threshold": cfg.threshold, "counts": trace.counts }),
    )?;
    let mut written = names(&["video.csv", "nonvideo.csv", "classify.json"]);
    // Payload-type labels, when present, let us score the size rule.
    match optimize_threshold_hist(&hist) {
        Ok(report) => {
            write_json(&out.join("threshold.json"), &report)?;
            report.write_table_csv(create(&out.join("threshold_table.csv"))?)?;
            written.extend(names(&["threshold.json", "threshold_table.csv"]));
            for (pt, cdf) in cdfs {
                let name = format!("size_cdf_pt{pt}.csv");
                let mut w = create(&out.join(&name))?;
                written.push(name);
                writeln!(w, "payload_len,cdf")?;
                for (x, y) in cdf {
                    writeln!(w, "{x},{y}")?;
                }
            }
        }
        Err(e) => log::info!("no threshold report: {e}"),
    }
    write_manifest(out, "classify", cfg, &[packets_path.to_path_buf()], &written)
}

pub fn featurize(cfg: &AppConfig, out: &Path, packets_path: &Path, session: &SessionArgs) -> Result<()> {
    let packets = read_packets(packets_path)?;
    let last_ts = packets.iter().map(|p| p.ts).fold(0.0, f64::max);
    let (id, duration) = session.resolve(&stem(packets_path), last_ts)?;
    let rows = featurize_session(&id, &packets, duration, cfg.slot_seconds, cfg.mode)?;
    fs::create_dir_all(out)?;
    write_features_csv(create(&out.join("features.csv"))?, &rows, cfg.mode)?;
    let mut inputs = vec![packets_path.to_path_buf()];
    inputs.extend(session.inputs());
    write_manifest(out, "featurize", cfg, &inputs, &names(&["features.csv"]))
}

pub fn label(cfg: &AppConfig, out: &Path, captures: &Path, scores: Option<&Path>, session: &SessionArgs) -> Result<()> {
    let caps = read_captures_csv(open(captures)?)?;
    let scs = match scores {
        Some(p) => read_scores_csv(open(p)?)?,
        None => Vec::new(),
    };
    let last_ts = caps.iter().map(|c| c.ts).fold(0.0, f64::max);
    let (id, duration) = session.resolve(&stem(captures), last_ts)?;
    let labels = build_labels(&id, &caps, &scs, duration, cfg.slot_seconds)?;
    fs::create_dir_all(out)?;
    write_labels_csv(create(&out.join("labels.csv"))?, &labels)?;
    let mut inputs = vec![captures.to_path_buf()];
    inputs.extend(scores.map(Path::to_path_buf));
    inputs.extend(session.inputs());
    write_manifest(out, "label", cfg, &inputs, &names(&["labels.csv"]))
}

const SESSION_FILES: [&str; 7] = [
    "meta.json",
    "profile.json",
    "packets.csv",
    "captures.csv",
    "scores.csv",
    "labels.csv",
    "bandwidth.csv",
];

fn write_session_dir(dir: &Path, profile: &ConditionProfile, cfg: &AppConfig, pcap: bool) -> Result<SessionMeta> {
    let s = generate_session(profile, &cfg.calibration)?;
    let sdir = dir.join(&s.meta.session_id);
    fs::create_dir_all(&sdir)?;
    write_json(&sdir.join("meta.json"), &s.meta)?;
    write_json(&sdir.join("profile.json"), profile)?;
    write_packet_csv(create(&sdir.join("packets.csv"))?, &s.packets)?;
    if pcap {
        let mut w = create(&sdir.join("trace.pcap"))?;
        write_pcap(&mut w, SYNTH_PCAP_EPOCH_US, &s.packets)?;
        w.flush()?;
    }
    write_captures_csv(create(&sdir.join("captures.csv"))?, &s.captures)?;
    write_scores_csv(create(&sdir.join("scores.csv"))?, &s.scores)?;
    write_labels_csv(create(&sdir.join("labels.csv"))?, &s.labels)?;
    let mut w = create(&sdir.join("bandwidth.csv"))?;
    writeln!(w, "slot_end,kbps")?;
    for (i, b) in s.bandwidth.iter().enumerate() {
        writeln!(w, "{},{b}", i + 1)?;
    }
    w.flush()?;
    Ok(s.meta)
}

/// Profiles from `--profile`, `--corpus`, or the 107-session reference mix.
fn resolve_profiles(
    cfg: &AppConfig,
    corpus: Option<&Path>,
    profile: Option<&Path>,
    seed_flag: Option<u64>,
) -> Result<Vec<ConditionProfile>> {
    match (corpus, profile) {
        (Some(_), Some(_)) => bail!("--corpus and --profile are mutually exclusive"),
        (None, Some(p)) => {
            let mut prof: ConditionProfile = read_json(p)?;
            if let Some(seed) = seed_flag {
                prof.seed = seed;
            }
            prof.validate(&cfg.calibration)?;
            Ok(vec![prof])
        }
        (Some(c), None) => Ok(read_json::<CorpusSpec>(c)?.expand(cfg.seed, &cfg.calibration)?),
        (None, None) => Ok(CorpusSpec::reference_mix().expand(cfg.seed, &cfg.calibration)?),
    }
}

pub fn synth(
    cfg: &AppConfig,
    out: &Path,
    corpus: Option<&Path>,
    profile: Option<&Path>,
    seed_flag: Option<u64>,
    pcap: bool,
) -> Result<()> {
    let profiles = resolve_profiles(cfg, corpus, profile, seed_flag)?;
    fs::create_dir_all(out)?;
    let metas: Vec<SessionMeta> = profiles
        .par_iter()
        .map(|p| write_session_dir(out, p, cfg, pcap))
        .collect::<Result<_>>()?;
    write_json(&out.join("sessions.json"), &metas)?;
    log::info!("generated {} sessions into {}", metas.len(), out.display());
    let mut written = names(&["sessions.json"]);
    for m in &metas {
        let files = SESSION_FILES.iter().copied().chain(pcap.then_some("trace.pcap"));
        written.extend(files.map(|f| format!("{}/{f}", m.session_id)));
    }
    let inputs: Vec<PathBuf> = corpus.into_iter().chain(profile).map(Path::to_path_buf).collect();
    write_manifest(out, "synth", cfg, &inputs, &written)
}

fn read_all_features(paths: &[PathBuf]) -> Result<Vec<SlotFeatures>> {
    let mut rows = Vec::new();
    for p in paths {
        let (_, mut r) = read_features_csv(open(p)?).with_context(|| format!("reading {}", p.display()))?;
        rows.append(&mut r);
    }
    Ok(rows)
}

fn read_all_labels(paths: &[PathBuf]) -> Result<Vec<SlotLabels>> {
    let mut rows = Vec::new();
    for p in paths {
        rows.append(&mut read_labels_csv(open(p)?)?);
    }
    Ok(rows)
}

pub fn model_file_name(target: qoe_lens::model::Target, mode: FeatureMode) -> String {
    format!("model_{}_{}.json", target.as_str().replace('-', "_"), mode.as_str())
}

pub fn train(cfg: &AppConfig, out: &Path, features: &[PathBuf], labels: &[PathBuf]) -> Result<()> {
    let feats = read_all_features(features)?;
    let labs = read_all_labels(labels)?;
    let ds = build_dataset::<f64>(&feats, &labs, cfg.mode, cfg.target)?;
    log::info!("training {} ({}) on {} slots", cfg.target, cfg.mode, ds.len());
    let model = fit_forest(&ds.rows, &ds.y, &ds.schema, cfg.target, &cfg.hyperparams, cfg.seed)?;
    fs::create_dir_all(out)?;
    let name = model_file_name(cfg.target, cfg.mode);
    fs::write(out.join(&name), model.to_json())?;
    let inputs: Vec<PathBuf> = features.iter().chain(labels).cloned().collect();
    write_manifest(out, "train", cfg, &inputs, &[name])
}

pub fn predict(cfg: &AppConfig, out: &Path, model_path: &Path, features: &[PathBuf]) -> Result<()> {
    let text = fs::read_to_string(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let model: RandomForest<f64> = RandomForest::from_json(&text)?;
    let mode = [FeatureMode::Udp, FeatureMode::Rtp]
        .into_iter()
        .find(|m| m.schema() == model.feature_schema)
        .ok_or_else(|| ModelError::Format("model schema is neither the UDP nor the RTP feature set".into()))?;
    let feats = read_all_features(features)?;
    let mut rows = Vec::with_capacity(feats.len());
    for f in &feats {
        match f.vector(mode) {
            Some(v) => rows.push(v),
            None => {
                return Err(ModelError::SchemaMismatch {
                    missing: mode.schema()[FeatureMode::Udp.schema().len()..].to_vec(),
                    unexpected: Vec::new(),
                }
                .into())
            }
        }
    }
    let values = model.predict(&model.feature_schema, &rows)?;
    let set = PredictionSet {
        target: model.target,
        mode,
        keys: feats.into_iter().map(|f| f.key).collect(),
        values,
    };
    fs::create_dir_all(out)?;
    write_predictions_csv(create(&out.join("predictions.csv"))?, &[set])?;
    let mut inputs = vec![model_path.to_path_buf()];
    inputs.extend(features.iter().cloned());
    write_manifest(out, "predict", cfg, &inputs, &names(&["predictions.csv"]))
}

pub fn evaluate(cfg: &AppConfig, out: &Path, predictions: &[PathBuf], labels: &[PathBuf], sessions: &Path) -> Result<()> {
    let mut sets = Vec::new();
    for p in predictions {
        sets.append(&mut read_predictions_csv(open(p)?).with_context(|| format!("reading {}", p.display()))?);
    }
    let labs = read_all_labels(labels)?;
    let metas: Vec<SessionMeta> = read_json(sessions)?;
    let report = per_condition_report(&sets, &labs, &metas)?;
    let written = write_report(&report, out)?;
    let mut inputs: Vec<PathBuf> = predictions.iter().chain(labels).cloned().collect();
    inputs.push(sessions.to_path_buf());
    write_manifest(out, "evaluate", cfg, &inputs, &written)
}

/// `slot_end,kbps` rows, in slot order.
fn read_bandwidth_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, line)| {
            let v = line.split(',').nth(1).and_then(|v| v.trim().parse().ok());
            v.with_context(|| format!("{} line {}: expected `slot_end,kbps`", path.display(), i + 2))
        })
        .collect()
}

/// Loads a directory of session folders as written by `synth` (a folder
/// needs `meta.json`, `trace.pcap` or `packets.csv`, `captures.csv`, and
/// optionally `scores.csv` and `bandwidth.csv`).
fn load_data_dir(cfg: &AppConfig, dir: &Path) -> Result<(Vec<ProcessedSession>, Vec<PathBuf>)> {
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").is_file())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        bail!("no session folders with meta.json under {}", dir.display());
    }
    let pcfg = cfg.pipeline();
    let loaded: Vec<(ProcessedSession, Vec<PathBuf>)> = subdirs
        .par_iter()
        .map(|d| -> Result<_> {
            let meta: SessionMeta = read_json(&d.join("meta.json"))?;
            meta.validate()?;
            let trace = [d.join("trace.pcap"), d.join("packets.csv")]
                .into_iter()
                .find(|p| p.is_file())
                .with_context(|| format!("{} has neither trace.pcap nor packets.csv", d.display()))?;
            let captures = d.join("captures.csv");
            let scores = d.join("scores.csv");
            let caps = read_captures_csv(open(&captures)?)?;
            let mut inputs = vec![d.join("meta.json"), trace.clone(), captures];
            let scs = if scores.is_file() {
                inputs.push(scores.clone());
                read_scores_csv(open(&scores)?)?
            } else {
                Vec::new()
            };
            let mut s = process_trace(meta, read_packets(&trace)?, &caps, &scs, &pcfg)?;
            let bandwidth = d.join("bandwidth.csv");
            if bandwidth.is_file() {
                s.bandwidth = Some(read_bandwidth_csv(&bandwidth)?);
                inputs.push(bandwidth);
            }
            Ok((s, inputs))
        })
        .collect::<Result<_>>()?;
    let (sessions, inputs): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();
    Ok((sessions, inputs.into_iter().flatten().collect()))
}

pub fn pipeline(cfg: &AppConfig, out: &Path, corpus: Option<&Path>, data: Option<&Path>) -> Result<()> {
    let pcfg = cfg.pipeline();
    let (mut sessions, inputs) = match (corpus, data) {
        (Some(_), Some(_)) => bail!("--corpus and --data are mutually exclusive"),
        (_, Some(d)) => load_data_dir(cfg, d)?,
        (c, None) => {
            let profiles = resolve_profiles(cfg, c, None, None)?;
            log::info!("generating and featurizing {} synthetic sessions", profiles.len());
            let s = process_synthetic_corpus(&profiles, &cfg.calibration, &pcfg)?;
            (s, c.into_iter().map(Path::to_path_buf).collect())
        }
    };
    // canonical order, so a corpus and its on-disk copy give identical results
    sessions.sort_by(|a, b| a.meta.session_id.cmp(&b.meta.session_id));
    let result = train_and_evaluate(&sessions, &pcfg)?;
    fs::create_dir_all(out)?;
    let mut written = write_pipeline_output(&result, out)?;
    let metas: Vec<&SessionMeta> = sessions.iter().map(|s| &s.meta).collect();
    write_json(&out.join("sessions.json"), &metas)?;
    let labels: Vec<SlotLabels> = sessions.iter().flat_map(|s| s.labels.iter().cloned()).collect();
    write_labels_csv(create(&out.join("labels.csv"))?, &labels)?;
    let feats: Vec<SlotFeatures> = sessions.iter().flat_map(|s| s.features.iter().cloned()).collect();
    let mode = if feats.iter().all(|f| f.rtp.is_some()) {
        FeatureMode::Rtp
    } else {
        FeatureMode::Udp
    };
    write_features_csv(create(&out.join("features.csv"))?, &feats, mode)?;
    write_predictions_csv(create(&out.join("predictions.csv"))?, &result.predictions)?;
    if !result.report.sanity_violations.is_empty() {
        log::error!("report failed its consistency check; see report.json");
    }
    written.extend(names(&["sessions.json", "labels.csv", "features.csv", "predictions.csv"]));
    write_manifest(out, "pipeline", cfg, &inputs, &written)
}
