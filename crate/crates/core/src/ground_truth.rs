//! Per-slot ground truth: frame rate recovered from focus-window capture
//! logs, slot-averaged BRISQUE/PIQE scores, and their rating classes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufWriter, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::features::{slot_index, SlotKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rating {
    Excellent,
    Good,
    Fair,
    Poor,
    Bad,
}

impl Rating {
    pub const ALL: [Rating; 5] = [Rating::Excellent, Rating::Good, Rating::Fair, Rating::Poor, Rating::Bad];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Rating> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Rating::Excellent => "Excellent",
            Rating::Good => "Good",
            Rating::Fair => "Fair",
            Rating::Poor => "Poor",
            Rating::Bad => "Bad",
        }
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rating {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "excellent" => Ok(Rating::Excellent),
            "good" => Ok(Rating::Good),
            // some write-ups call the middle class "average"
            "fair" | "average" => Ok(Rating::Fair),
            "poor" => Ok(Rating::Poor),
            "bad" => Ok(Rating::Bad),
            other => Err(format!("unknown rating `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scale {
    Piqe,
    Brisque,
}

impl Scale {
    /// Inclusive upper bounds of Excellent, Good, Fair and Poor; Bad above.
    pub fn upper_bounds(self) -> [f64; 4] {
        match self {
            Scale::Piqe => [20.0, 35.0, 50.0, 80.0],
            Scale::Brisque => [20.0, 40.0, 60.0, 80.0],
        }
    }
}

/// Maps a 0..100 score onto the five-class rating scale. Intervals are
/// half-open on the left: `(20, 35]` is Good on the PIQE scale.
pub fn map_rating(score: f64, scale: Scale) -> Rating {
    let s = clamp_score(score);
    scale
        .upper_bounds()
        .iter()
        .position(|&ub| s <= ub)
        .and_then(Rating::from_index)
        .unwrap_or(Rating::Bad)
}

fn clamp_score(score: f64) -> f64 {
    if !(0.0..=100.0).contains(&score) {
        log::warn!("quality score {score} outside [0, 100]; clamping");
    }
    score.clamp(0.0, 100.0)
}

/// Parameters of the changing-sign display behind the frame-rate method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignScheduleParams {
    /// Sign changes per second (`V`); also the receiver's capture rate.
    pub sign_rate: f64,
    pub slot_seconds: f64,
    /// Number of distinct signs (`S`).
    pub signs: u32,
}

impl Default for SignScheduleParams {
    fn default() -> Self {
        SignScheduleParams {
            sign_rate: 60.0,
            slot_seconds: 1.0,
            signs: 120,
        }
    }
}

impl SignScheduleParams {
    /// Checks `S >= V*T` and that `V` exceeds the application's frame rate.
    pub fn validate(&self, max_app_fps: f64) -> Result<(), GroundTruthError> {
        if f64::from(self.signs) < self.sign_rate * self.slot_seconds {
            return Err(GroundTruthError::SignSchedule(format!(
                "{} signs cannot cover {} changes per {}s slot",
                self.signs, self.sign_rate, self.slot_seconds
            )));
        }
        if self.sign_rate <= max_app_fps {
            return Err(GroundTruthError::SignSchedule(format!(
                "sign rate {} must exceed the application frame rate {max_app_fps}",
                self.sign_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureEvent {
    pub ts: f64,
    /// Opaque digest of the focus-window image.
    pub frame_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub ts: f64,
    pub brisque: f64,
    pub piqe: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotLabels {
    pub key: SlotKey,
    pub fps: f64,
    pub brisque: Option<f64>,
    pub piqe: Option<f64>,
    pub brisque_rating: Option<Rating>,
    pub piqe_rating: Option<Rating>,
}

impl SlotLabels {
    pub fn scores_missing(&self) -> bool {
        self.brisque.is_none() || self.piqe.is_none()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GroundTruthError {
    #[error("session {0} has no capture log")]
    MissingGroundTruth(String),
    #[error("sign schedule: {0}")]
    SignSchedule(String),
    #[error("{file} line {line}: {msg}")]
    Row { file: &'static str, line: u64, msg: String },
    #[error("{file} header: {msg}")]
    Schema { file: &'static str, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Drops every capture whose image equals the one right before it.
pub fn dedup_captures(captures: &[CaptureEvent]) -> Vec<CaptureEvent> {
    let mut out = captures.to_vec();
    out.dedup_by(|cur, prev| cur.frame_id == prev.frame_id);
    out
}

/// Frames per second for each slot: unique captures bucketed by the slot
/// containing their timestamp, divided by the slot length. Slots listed in
/// `end_time_slots` start at zero; a capture outside them adds its own slot.
pub fn frame_rate_per_slot(captures: &[CaptureEvent], end_time_slots: &[u32], slot_seconds: f64) -> BTreeMap<u32, f64> {
    let mut counts: BTreeMap<u32, u64> = end_time_slots.iter().map(|&s| (s, 0)).collect();
    for c in dedup_captures(captures) {
        *counts.entry(slot_index(c.ts, slot_seconds)).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(slot, n)| (slot, n as f64 / slot_seconds))
        .collect()
}

/// Mean (brisque, piqe) per slot; slots without any score are absent.
pub fn avg_scores_per_slot(scores: &[FrameScore], slot_seconds: f64) -> BTreeMap<u32, (f64, f64)> {
    let mut acc: BTreeMap<u32, (f64, f64, u32)> = BTreeMap::new();
    for s in scores {
        let e = acc.entry(slot_index(s.ts, slot_seconds)).or_default();
        e.0 += s.brisque;
        e.1 += s.piqe;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(slot, (b, p, n))| (slot, (b / f64::from(n), p / f64::from(n))))
        .collect()
}

pub fn build_labels(
    session_id: &str,
    captures: &[CaptureEvent],
    scores: &[FrameScore],
    duration: f64,
    slot_seconds: f64,
) -> Result<Vec<SlotLabels>, GroundTruthError> {
    if captures.is_empty() {
        return Err(GroundTruthError::MissingGroundTruth(session_id.to_string()));
    }
    let n_slots = slot_index(duration.max(0.0), slot_seconds);
    let slots: Vec<u32> = (1..=n_slots).collect();
    let fps = frame_rate_per_slot(captures, &slots, slot_seconds);
    let avg = avg_scores_per_slot(scores, slot_seconds);
    Ok(slots
        .iter()
        .map(|&slot| {
            let sc = avg.get(&slot).map(|&(b, p)| (clamp_score(b), clamp_score(p)));
            SlotLabels {
                key: SlotKey::new(session_id, slot),
                fps: fps.get(&slot).copied().unwrap_or(0.0),
                brisque: sc.map(|s| s.0),
                piqe: sc.map(|s| s.1),
                brisque_rating: sc.map(|s| map_rating(s.0, Scale::Brisque)),
                piqe_rating: sc.map(|s| map_rating(s.1, Scale::Piqe)),
            }
        })
        .collect())
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, file: &'static str, want: &[&str]) -> Result<(), GroundTruthError> {
    let h = rdr.headers().map_err(|e| GroundTruthError::Schema {
        file,
        msg: e.to_string(),
    })?;
    if h.iter().collect::<Vec<_>>() != want {
        return Err(GroundTruthError::Schema {
            file,
            msg: format!("expected `{}`, found `{}`", want.join(","), h.iter().collect::<Vec<_>>().join(",")),
        });
    }
    Ok(())
}

fn read_rows<R: Read, T: serde::de::DeserializeOwned>(
    reader: R,
    file: &'static str,
    header: &[&str],
) -> Result<Vec<T>, GroundTruthError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(&mut rdr, file, header)?;
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| GroundTruthError::Row {
                file,
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Capture log CSV `ts,frame_id`. Rows are stably sorted by `ts`.
pub fn read_captures_csv<R: Read>(reader: R) -> Result<Vec<CaptureEvent>, GroundTruthError> {
    let mut rows: Vec<CaptureEvent> = read_rows(reader, "capture log", &["ts", "frame_id"])?;
    rows.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    Ok(rows)
}

pub fn write_captures_csv<W: Write>(out: W, captures: &[CaptureEvent]) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "ts,frame_id")?;
    for c in captures {
        writeln!(w, "{},{}", c.ts, c.frame_id)?;
    }
    w.flush()
}

/// Frame-score CSV `ts,brisque,piqe`.
pub fn read_scores_csv<R: Read>(reader: R) -> Result<Vec<FrameScore>, GroundTruthError> {
    read_rows(reader, "frame scores", &["ts", "brisque", "piqe"])
}

pub fn write_scores_csv<W: Write>(out: W, scores: &[FrameScore]) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "ts,brisque,piqe")?;
    for s in scores {
        writeln!(w, "{},{},{}", s.ts, s.brisque, s.piqe)?;
    }
    w.flush()
}

const LABEL_HEADER: [&str; 8] = [
    "session_id",
    "slot_end",
    "fps",
    "brisque",
    "piqe",
    "brisque_rating",
    "piqe_rating",
    "scores_missing",
];

pub fn write_labels_csv<W: Write>(out: W, labels: &[SlotLabels]) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{}", LABEL_HEADER.join(","))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let optr = |v: Option<Rating>| v.map(|x| x.to_string()).unwrap_or_default();
    for l in labels {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            l.key.session_id,
            l.key.slot_end,
            l.fps,
            opt(l.brisque),
            opt(l.piqe),
            optr(l.brisque_rating),
            optr(l.piqe_rating),
            l.scores_missing()
        )?;
    }
    w.flush()
}

#[derive(Deserialize)]
struct LabelRow {
    session_id: String,
    slot_end: u32,
    fps: f64,
    brisque: Option<f64>,
    piqe: Option<f64>,
    brisque_rating: Option<String>,
    piqe_rating: Option<String>,
    #[allow(dead_code)]
    scores_missing: bool,
}

pub fn read_labels_csv<R: Read>(reader: R) -> Result<Vec<SlotLabels>, GroundTruthError> {
    let rows: Vec<LabelRow> = read_rows(reader, "labels", &LABEL_HEADER)?;
    let parse = |s: Option<String>| -> Result<Option<Rating>, GroundTruthError> {
        match s.filter(|s| !s.is_empty()) {
            None => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|msg| GroundTruthError::Row {
                file: "labels",
                line: 0,
                msg,
            }),
        }
    };
    rows.into_iter()
        .map(|r| {
            Ok(SlotLabels {
                key: SlotKey::new(r.session_id, r.slot_end),
                fps: r.fps,
                brisque: r.brisque,
                piqe: r.piqe,
                brisque_rating: parse(r.brisque_rating)?,
                piqe_rating: parse(r.piqe_rating)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn caps(ids: &[&str]) -> Vec<CaptureEvent> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| CaptureEvent {
                ts: 0.1 * (i + 1) as f64,
                frame_id: id.to_string(),
            })
            .collect()
    }

    fn ids(c: &[CaptureEvent]) -> Vec<&str> {
        c.iter().map(|c| c.frame_id.as_str()).collect()
    }

    #[test]
    fn dedup_consecutive_only() {
        let d = dedup_captures(&caps(&["A", "A", "B", "B", "C"]));
        assert_eq!(ids(&d), ["A", "B", "C"]);
        assert_eq!(d[1].ts, 0.1 * 3.0);
        assert_eq!(ids(&dedup_captures(&caps(&["A", "B", "A"]))), ["A", "B", "A"]);
        assert!(dedup_captures(&[]).is_empty());
    }

    #[test]
    fn twenty_unique_captures_over_two_slots() {
        let c: Vec<CaptureEvent> = (1..=20)
            .map(|i| CaptureEvent {
                ts: f64::from(i) / 10.0,
                frame_id: format!("f{i}"),
            })
            .collect();
        let fps = frame_rate_per_slot(&c, &[1, 2], 1.0);
        assert_eq!(fps[&1], 10.0);
        assert_eq!(fps[&2], 10.0);
    }

    #[test]
    fn one_frame_session() {
        let c: Vec<CaptureEvent> = (0..30)
            .map(|i| CaptureEvent {
                ts: 0.5 + f64::from(i) / 10.0,
                frame_id: "same".into(),
            })
            .collect();
        let fps = frame_rate_per_slot(&c, &[1, 2, 3, 4], 1.0);
        assert_eq!(fps.values().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn score_averaging() {
        let s = [
            FrameScore { ts: 0.5, brisque: 30.0, piqe: 25.0 },
            FrameScore { ts: 1.2, brisque: 40.0, piqe: 20.0 },
            FrameScore { ts: 1.8, brisque: 50.0, piqe: 30.0 },
        ];
        let a = avg_scores_per_slot(&s, 1.0);
        assert_eq!(a[&1], (30.0, 25.0));
        assert_eq!(a[&2], (45.0, 25.0));
        assert!(!a.contains_key(&4));
    }

    #[test]
    fn rating_table_boundaries() {
        use Rating::*;
        let piqe = [(0.0, Excellent), (15.0, Excellent), (20.0, Excellent), (20.5, Good), (35.0, Good), (36.0, Fair), (50.0, Fair), (50.001, Poor), (80.0, Poor), (81.0, Bad), (100.0, Bad)];
        for (s, r) in piqe {
            assert_eq!(map_rating(s, Scale::Piqe), r, "piqe {s}");
        }
        let brisque = [(20.0, Excellent), (21.0, Good), (40.0, Good), (41.0, Fair), (45.0, Fair), (60.0, Fair), (61.0, Poor), (80.0, Poor), (81.0, Bad), (100.0, Bad)];
        for (s, r) in brisque {
            assert_eq!(map_rating(s, Scale::Brisque), r, "brisque {s}");
        }
        assert_eq!(map_rating(-3.0, Scale::Piqe), Excellent);
        assert_eq!(map_rating(130.0, Scale::Brisque), Bad);
    }

    #[test]
    fn average_is_an_alias_for_fair() {
        assert_eq!("average".parse::<Rating>().unwrap(), Rating::Fair);
    }

    #[test]
    fn sign_schedule_constraint() {
        assert!(SignScheduleParams::default().validate(30.0).is_ok());
        let p = SignScheduleParams { signs: 59, ..Default::default() };
        assert!(p.validate(30.0).is_err());
        assert!(SignScheduleParams::default().validate(60.0).is_err());
    }

    #[test]
    fn labels_for_full_session() {
        let c = caps(&["A", "B"]);
        let s = [FrameScore { ts: 0.5, brisque: 45.0, piqe: 25.0 }];
        let l = build_labels("s", &c, &s, 240.0, 1.0).unwrap();
        assert_eq!(l.len(), 240);
        assert_eq!(l[0].fps, 2.0);
        assert_eq!(l[0].piqe_rating, Some(Rating::Good));
        assert_eq!(l[0].brisque_rating, Some(Rating::Fair));
        assert!(l[3].scores_missing());
        assert_eq!(build_labels("s", &c, &s, 240.0, 1.0).unwrap(), l);
        assert!(matches!(build_labels("s", &[], &s, 240.0, 1.0), Err(GroundTruthError::MissingGroundTruth(_))));
    }

    #[test]
    fn label_csv_round_trip() {
        let c = caps(&["A", "B", "C"]);
        let s = [FrameScore { ts: 0.5, brisque: 45.5, piqe: 51.25 }];
        let l = build_labels("sess", &c, &s, 3.0, 1.0).unwrap();
        let mut buf = Vec::new();
        write_labels_csv(&mut buf, &l).unwrap();
        assert_eq!(read_labels_csv(buf.as_slice()).unwrap(), l);
    }

    #[test]
    fn capture_and_score_csv() {
        let c = caps(&["a1", "b2"]);
        let mut buf = Vec::new();
        write_captures_csv(&mut buf, &c).unwrap();
        assert_eq!(read_captures_csv(buf.as_slice()).unwrap(), c);
        assert!(read_captures_csv("time,id\n".as_bytes()).is_err());
        let s = vec![FrameScore { ts: 0.25, brisque: 1.5, piqe: 2.5 }];
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &s).unwrap();
        assert_eq!(read_scores_csv(buf.as_slice()).unwrap(), s);
    }

    /// Independent count: walk the raw sequence and count positions whose
    /// frame differs from the immediately preceding capture.
    fn brute_force(c: &[CaptureEvent], n_slots: u32) -> Vec<f64> {
        let mut out = vec![0.0; n_slots as usize];
        for i in 0..c.len() {
            if i == 0 || c[i].frame_id != c[i - 1].frame_id {
                let slot = (c[i].ts.ceil() as usize).max(1);
                out[slot - 1] += 1.0;
            }
        }
        out
    }

    proptest! {
        #[test]
        fn matches_brute_force(raw in proptest::collection::vec((0u32..5_000_000, 0u8..8), 0..200)) {
            let mut raw = raw;
            raw.sort();
            let c: Vec<CaptureEvent> = raw.iter().map(|&(us, id)| CaptureEvent { ts: f64::from(us) / 1e6, frame_id: id.to_string() }).collect();
            let slots: Vec<u32> = (1..=5).collect();
            let fps = frame_rate_per_slot(&c, &slots, 1.0);
            prop_assert_eq!(fps.values().copied().collect::<Vec<_>>(), brute_force(&c, 5));
            let d = dedup_captures(&c);
            prop_assert!(d.len() <= c.len());
            prop_assert!(d.windows(2).all(|w| w[0].frame_id != w[1].frame_id));
            let total: f64 = fps.values().sum();
            prop_assert_eq!(total as usize, d.len());
        }

        #[test]
        fn rating_monotone(a in -10.0f64..110.0, b in -10.0f64..110.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for scale in [Scale::Piqe, Scale::Brisque] {
                prop_assert!(map_rating(lo, scale) <= map_rating(hi, scale));
            }
        }
    }
}
