//! Video / non-video separation by UDP payload size, with payload-type
//! ground truth and an exhaustive threshold search.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::ingest::PacketRecord;

/// Default size threshold in bytes; packets strictly larger are video.
pub const DEFAULT_THRESHOLD: u32 = 275;
pub const PT_VIDEO: u8 = 97;
pub const PT_VIDEO_RETX: u8 = 103;
pub const PT_AUDIO: u8 = 120;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MediaClass {
    NonVideo,
    Video,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelSource {
    PayloadType,
    SizeThreshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaLabel {
    pub value: MediaClass,
    pub source: LabelSource,
}

/// Ties (`payload_len == threshold`) are non-video.
pub fn classify_packet(payload_len: u32, threshold: u32) -> MediaLabel {
    let value = if payload_len > threshold {
        MediaClass::Video
    } else {
        MediaClass::NonVideo
    };
    MediaLabel {
        value,
        source: LabelSource::SizeThreshold,
    }
}

/// RTP payload type to media class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PtMap(pub BTreeMap<u8, MediaClass>);

impl Default for PtMap {
    fn default() -> Self {
        PtMap(BTreeMap::from([
            (PT_VIDEO, MediaClass::Video),
            (PT_VIDEO_RETX, MediaClass::Video),
            (PT_AUDIO, MediaClass::NonVideo),
        ]))
    }
}

pub fn label_by_payload_type(pkt: &PacketRecord, pt_map: &PtMap) -> Option<MediaLabel> {
    let rtp = pkt.rtp.as_ref()?;
    pt_map.0.get(&rtp.payload_type).map(|&value| MediaLabel {
        value,
        source: LabelSource::PayloadType,
    })
}

/// Per-class payload-size counts. Lets the threshold search run over a whole
/// corpus without keeping packets in memory.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeHistogram {
    pub video: BTreeMap<u32, u64>,
    pub nonvideo: BTreeMap<u32, u64>,
}

impl SizeHistogram {
    pub fn add(&mut self, len: u32, class: MediaClass) {
        let map = match class {
            MediaClass::Video => &mut self.video,
            MediaClass::NonVideo => &mut self.nonvideo,
        };
        *map.entry(len).or_default() += 1;
    }

    pub fn merge(&mut self, other: &SizeHistogram) {
        for (&k, &v) in &other.video {
            *self.video.entry(k).or_default() += v;
        }
        for (&k, &v) in &other.nonvideo {
            *self.nonvideo.entry(k).or_default() += v;
        }
    }

    /// Histogram of packets that have a payload-type label under `pt_map`.
    pub fn from_labeled(packets: &[PacketRecord], pt_map: &PtMap) -> Self {
        let mut h = SizeHistogram::default();
        for p in packets {
            if let Some(l) = label_by_payload_type(p, pt_map) {
                h.add(p.payload_len, l.value);
            }
        }
        h
    }

    fn total(map: &BTreeMap<u32, u64>) -> u64 {
        map.values().sum()
    }

    fn mean(map: &BTreeMap<u32, u64>) -> f64 {
        let n = Self::total(map);
        if n == 0 {
            return 0.0;
        }
        let s: f64 = map.iter().map(|(&k, &v)| f64::from(k) * v as f64).sum();
        s / n as f64
    }
}

/// 2x2 confusion, rows = actual `[NonVideo, Video]`, columns = classified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryConfusion {
    pub counts: [[u64; 2]; 2],
    pub rates: [[f64; 2]; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    /// Bytes; may be -1 when the sweep starts below a zero-length packet.
    pub threshold: i64,
    pub accuracy: f64,
    pub confusion: BinaryConfusion,
    pub mean_size_video: f64,
    pub mean_size_nonvideo: f64,
    /// Maximal run of consecutive thresholds tied with the chosen one.
    /// For separable classes this is the perfect-separation interval.
    pub optimal_interval: (i64, i64),
}

impl ThresholdReport {
    pub fn video_recall(&self) -> f64 {
        self.confusion.rates[1][1]
    }

    /// Table-I-style CSV: actual class x classified class, with counts and mean sizes.
    pub fn write_table_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "actual,classified_nonvideo_pct,classified_video_pct,packet_count,avg_packet_size")?;
        let rows = [("Non-video", 0, self.mean_size_nonvideo), ("Video", 1, self.mean_size_video)];
        for (name, i, mean) in rows {
            let c = self.confusion.counts[i];
            writeln!(
                w,
                "{name},{:.2},{:.2},{},{:.0}",
                self.confusion.rates[i][0] * 100.0,
                self.confusion.rates[i][1] * 100.0,
                c[0] + c[1],
                mean
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("threshold search needs both classes; only {0:?} present")]
    SingleClass(Option<MediaClass>),
}

pub fn confusion_at(hist: &SizeHistogram, threshold: i64) -> BinaryConfusion {
    let mut counts = [[0u64; 2]; 2];
    for (row, map) in [(0usize, &hist.nonvideo), (1, &hist.video)] {
        for (&len, &n) in map {
            let col = usize::from(i64::from(len) > threshold);
            counts[row][col] += n;
        }
    }
    let mut rates = [[0.0; 2]; 2];
    for r in 0..2 {
        let tot = counts[r][0] + counts[r][1];
        if tot > 0 {
            rates[r][0] = counts[r][0] as f64 / tot as f64;
            rates[r][1] = 1.0 - rates[r][0];
        }
    }
    BinaryConfusion { counts, rates }
}

/// Sweeps every integer threshold in `[min_len - 1, max_len]` and keeps the
/// most accurate, smallest on ties.
pub fn optimize_threshold(packets: &[(u32, MediaClass)]) -> Result<ThresholdReport, ClassifyError> {
    let mut h = SizeHistogram::default();
    for &(len, class) in packets {
        h.add(len, class);
    }
    optimize_threshold_hist(&h)
}

pub fn optimize_threshold_hist(hist: &SizeHistogram) -> Result<ThresholdReport, ClassifyError> {
    let (nv_total, v_total) = (SizeHistogram::total(&hist.nonvideo), SizeHistogram::total(&hist.video));
    if nv_total == 0 || v_total == 0 {
        let present = if v_total > 0 {
            Some(MediaClass::Video)
        } else if nv_total > 0 {
            Some(MediaClass::NonVideo)
        } else {
            None
        };
        return Err(ClassifyError::SingleClass(present));
    }
    let min_len = hist.video.keys().chain(hist.nonvideo.keys()).min().copied().unwrap_or(0);
    let max_len = hist.video.keys().chain(hist.nonvideo.keys()).max().copied().unwrap_or(0);
    let width = (max_len - min_len) as usize + 1;
    let mut nv_at = vec![0u64; width];
    let mut v_at = vec![0u64; width];
    for (&k, &n) in &hist.nonvideo {
        nv_at[(k - min_len) as usize] += n;
    }
    for (&k, &n) in &hist.video {
        v_at[(k - min_len) as usize] += n;
    }

    // correct(t) = #nonvideo <= t + #video > t; at t = min_len - 1 all are video.
    let mut correct = v_total;
    let mut best = (correct, i64::from(min_len) - 1);
    let mut run_end = best.1;
    let mut in_run = true;
    for i in 0..width {
        correct = correct + nv_at[i] - v_at[i];
        let t = i64::from(min_len) + i as i64;
        if correct > best.0 {
            best = (correct, t);
            run_end = t;
            in_run = true;
        } else if correct == best.0 && in_run {
            run_end = t;
        } else {
            in_run = false;
        }
    }
    let total = nv_total + v_total;
    Ok(ThresholdReport {
        threshold: best.1,
        accuracy: best.0 as f64 / total as f64,
        confusion: confusion_at(hist, best.1),
        mean_size_video: SizeHistogram::mean(&hist.video),
        mean_size_nonvideo: SizeHistogram::mean(&hist.nonvideo),
        optimal_interval: (best.1, run_end),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifyCounts {
    pub video: u64,
    pub nonvideo: u64,
}

#[derive(Clone, Debug, Default)]
pub struct ClassifiedTrace {
    pub video: Vec<PacketRecord>,
    pub nonvideo: Vec<PacketRecord>,
    pub counts: ClassifyCounts,
}

/// Order-preserving partition of a trace by the size rule.
pub fn classify_trace(packets: Vec<PacketRecord>, threshold: u32) -> ClassifiedTrace {
    let (video, nonvideo): (Vec<_>, Vec<_>) = packets
        .into_iter()
        .partition(|p| classify_packet(p.payload_len, threshold).value == MediaClass::Video);
    let counts = ClassifyCounts {
        video: video.len() as u64,
        nonvideo: nonvideo.len() as u64,
    };
    ClassifiedTrace {
        video,
        nonvideo,
        counts,
    }
}

/// Empirical CDF of payload sizes per RTP payload type (packets without RTP
/// fields are skipped).
pub fn size_cdf_by_payload_type(packets: &[PacketRecord]) -> BTreeMap<u8, Vec<(f64, f64)>> {
    let mut by_pt: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for p in packets {
        if let Some(r) = &p.rtp {
            by_pt.entry(r.payload_type).or_default().push(f64::from(p.payload_len));
        }
    }
    by_pt
        .into_iter()
        .map(|(pt, v)| (pt, crate::eval::empirical_cdf(&v)))
        .collect()
}
