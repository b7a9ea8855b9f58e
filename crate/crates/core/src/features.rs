//! Time-slot featurization of the video packet stream.
//!
//! Each session is cut into `T`-second slots labeled by their end time, and
//! every slot gets 18 UDP-level features (sizes and inter-arrival times) and,
//! when RTP headers are readable, 11 more from timestamps, markers and
//! sequence numbers.

use std::io::{BufWriter, Read, Write};

use serde::{Deserialize, Serialize};

use crate::classify::PT_VIDEO_RETX;
use crate::ingest::PacketRecord;
use crate::stats;

pub const UDP_FEATURES: [&str; 18] = [
    "pkt_count",
    "total_bytes",
    "size_mean",
    "size_std",
    "size_min",
    "size_max",
    "size_median",
    "size_p10",
    "size_p90",
    "iat_mean",
    "iat_std",
    "iat_min",
    "iat_max",
    "iat_median",
    "iat_p10",
    "iat_p90",
    "burst_count",
    "active_fraction",
];

pub const RTP_FEATURES: [&str; 11] = [
    "unique_rtp_ts_count",
    "marker_count",
    "pkts_per_rtp_ts_mean",
    "pkts_per_rtp_ts_std",
    "seq_gap_count",
    "seq_gap_max",
    "out_of_order_count",
    "duplicate_seq_count",
    "rtp_ts_delta_mean",
    "rtp_ts_delta_std",
    "retx_pkt_count",
];

/// Inter-arrival gap below which a packet counts toward `burst_count`.
pub const BURST_GAP_SECONDS: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Udp,
    Rtp,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Udp => "udp",
            FeatureMode::Rtp => "rtp",
        }
    }

    /// Ordered column names of the feature vector this mode produces.
    pub fn schema(self) -> Vec<String> {
        let mut cols: Vec<String> = UDP_FEATURES.iter().map(|s| s.to_string()).collect();
        if self == FeatureMode::Rtp {
            cols.extend(RTP_FEATURES.iter().map(|s| s.to_string()));
        }
        cols
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "udp" => Ok(FeatureMode::Udp),
            "rtp" => Ok(FeatureMode::Rtp),
            other => Err(format!("unknown feature mode `{other}`")),
        }
    }
}

/// Slot `i` covers `((i-1)T, iT]` and is labeled by its end.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotKey {
    pub session_id: String,
    pub slot_end: u32,
}

impl SlotKey {
    pub fn new(session_id: impl Into<String>, slot_end: u32) -> Self {
        SlotKey {
            session_id: session_id.into(),
            slot_end,
        }
    }
}

impl std::fmt::Display for SlotKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.session_id, self.slot_end)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotFeatures {
    pub key: SlotKey,
    pub udp: [f64; 18],
    pub rtp: Option<[f64; 11]>,
}

impl SlotFeatures {
    /// Feature vector in schema order for `mode`; `None` if RTP columns are
    /// requested but absent.
    pub fn vector(&self, mode: FeatureMode) -> Option<Vec<f64>> {
        let mut v = self.udp.to_vec();
        if mode == FeatureMode::Rtp {
            v.extend_from_slice(self.rtp.as_ref()?);
        }
        Some(v)
    }

    pub fn pkt_count(&self) -> f64 {
        self.udp[0]
    }

    pub fn total_bytes(&self) -> f64 {
        self.udp[1]
    }

    pub fn size_mean(&self) -> f64 {
        self.udp[2]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("packet at ts {ts} has no RTP fields; RTP features need parsed headers on every video packet")]
    MissingRtp { ts: f64 },
    #[error("feature CSV schema error: {0}")]
    Schema(String),
    #[error("feature CSV line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `ceil(ts / T)`, with `ts = 0` mapped to slot 1.
pub fn slot_index(ts: f64, slot_seconds: f64) -> u32 {
    let idx = (ts / slot_seconds).ceil();
    if idx < 1.0 {
        1
    } else {
        idx as u32
    }
}

pub fn extract_udp_features(packets: &[PacketRecord], slot_seconds: f64) -> [f64; 18] {
    let mut out = [0.0; 18];
    if packets.is_empty() {
        return out;
    }
    let sizes: Vec<f64> = packets.iter().map(|p| f64::from(p.payload_len)).collect();
    let sorted_sizes = stats::sorted(&sizes);
    out[0] = packets.len() as f64;
    out[1] = stats::sum(&sizes);
    out[2] = stats::mean(&sizes);
    out[3] = stats::std_dev(&sizes);
    out[4] = sorted_sizes[0];
    out[5] = sorted_sizes[sorted_sizes.len() - 1];
    out[6] = stats::nearest_rank(&sorted_sizes, 50.0);
    out[7] = stats::nearest_rank(&sorted_sizes, 10.0);
    out[8] = stats::nearest_rank(&sorted_sizes, 90.0);

    if packets.len() >= 2 {
        let iats: Vec<f64> = packets.windows(2).map(|w| w[1].ts - w[0].ts).collect();
        let sorted_iats = stats::sorted(&iats);
        out[9] = stats::mean(&iats);
        out[10] = stats::std_dev(&iats);
        out[11] = sorted_iats[0];
        out[12] = sorted_iats[sorted_iats.len() - 1];
        out[13] = stats::nearest_rank(&sorted_iats, 50.0);
        out[14] = stats::nearest_rank(&sorted_iats, 10.0);
        out[15] = stats::nearest_rank(&sorted_iats, 90.0);
        out[16] = iats.iter().filter(|&&g| g < BURST_GAP_SECONDS).count() as f64;
        let span = packets[packets.len() - 1].ts - packets[0].ts;
        out[17] = (span / slot_seconds).clamp(0.0, 1.0);
    }
    out
}

/// Unwraps a modular counter in arrival order, choosing the nearest
/// representative relative to the previous value.
fn unwrap_seq(values: impl Iterator<Item = u16>) -> Vec<i64> {
    let mut out = Vec::new();
    let mut prev: Option<(u16, i64)> = None;
    for v in values {
        let u = match prev {
            None => i64::from(v),
            Some((raw, unwrapped)) => unwrapped + i64::from(v.wrapping_sub(raw) as i16),
        };
        prev = Some((v, u));
        out.push(u);
    }
    out
}

fn unwrap_ts(values: impl Iterator<Item = u32>) -> Vec<i64> {
    let mut out = Vec::new();
    let mut prev: Option<(u32, i64)> = None;
    for v in values {
        let u = match prev {
            None => i64::from(v),
            Some((raw, unwrapped)) => unwrapped + i64::from(v.wrapping_sub(raw) as i32),
        };
        prev = Some((v, u));
        out.push(u);
    }
    out
}

/// RTP features over one slot. Sequence and timestamp statistics use the
/// primary stream only; retransmissions (PT 103) live in their own sequence
/// space and are reported through `retx_pkt_count`.
pub fn extract_rtp_features(packets: &[PacketRecord]) -> Result<[f64; 11], FeatureError> {
    let mut rtps = Vec::with_capacity(packets.len());
    for p in packets {
        rtps.push(p.rtp.ok_or(FeatureError::MissingRtp { ts: p.ts })?);
    }
    let mut out = [0.0; 11];
    out[10] = rtps.iter().filter(|r| r.payload_type == PT_VIDEO_RETX).count() as f64;
    let primary: Vec<_> = rtps.iter().filter(|r| r.payload_type != PT_VIDEO_RETX).collect();
    if primary.is_empty() {
        return Ok(out);
    }

    let ts = unwrap_ts(primary.iter().map(|r| r.timestamp));
    let mut per_ts: std::collections::BTreeMap<i64, usize> = Default::default();
    for &t in &ts {
        *per_ts.entry(t).or_default() += 1;
    }
    let counts: Vec<f64> = per_ts.values().map(|&c| c as f64).collect();
    out[0] = per_ts.len() as f64;
    out[1] = primary.iter().filter(|r| r.marker).count() as f64;
    out[2] = stats::mean(&counts);
    out[3] = stats::std_dev(&counts);

    let seqs = unwrap_seq(primary.iter().map(|r| r.seq));
    let mut seen = std::collections::BTreeSet::new();
    let mut max_seen = i64::MIN;
    let (mut ooo, mut dup) = (0usize, 0usize);
    for &s in &seqs {
        if !seen.insert(s) {
            dup += 1;
        } else if s < max_seen {
            ooo += 1;
        }
        max_seen = max_seen.max(s);
    }
    let uniq: Vec<i64> = seen.into_iter().collect();
    let gaps: Vec<i64> = uniq.windows(2).map(|w| w[1] - w[0] - 1).filter(|&g| g > 0).collect();
    out[4] = gaps.len() as f64;
    out[5] = gaps.iter().copied().max().unwrap_or(0) as f64;
    out[6] = ooo as f64;
    out[7] = dup as f64;

    let uniq_ts: Vec<i64> = per_ts.keys().copied().collect();
    let deltas: Vec<f64> = uniq_ts.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    out[8] = stats::mean(&deltas);
    out[9] = stats::std_dev(&deltas);
    Ok(out)
}

/// Features for every slot `1..=ceil(duration/T)` (extended if packets run
/// past `duration`), including empty slots.
pub fn featurize_session(
    session_id: &str,
    video: &[PacketRecord],
    duration: f64,
    slot_seconds: f64,
    mode: FeatureMode,
) -> Result<Vec<SlotFeatures>, FeatureError> {
    let mut sorted: Vec<&PacketRecord> = video.iter().collect();
    // (ts, seq) ordering; the remaining keys only break exact ties.
    let rtp_key = |p: &PacketRecord| p.rtp.map(|r| (r.seq, r.timestamp, r.payload_type, r.marker, r.ssrc));
    sorted.sort_by(|a, b| {
        a.ts.total_cmp(&b.ts)
            .then_with(|| rtp_key(a).cmp(&rtp_key(b)))
            .then_with(|| a.payload_len.cmp(&b.payload_len))
    });
    let last_slot = sorted.last().map_or(0, |p| slot_index(p.ts, slot_seconds));
    let n_slots = slot_index(duration.max(0.0), slot_seconds).max(last_slot);
    if duration <= 0.0 && sorted.is_empty() {
        return Ok(Vec::new());
    }

    let mut out = Vec::with_capacity(n_slots as usize);
    let mut i = 0;
    let mut buf: Vec<PacketRecord> = Vec::new();
    for slot in 1..=n_slots {
        buf.clear();
        while i < sorted.len() && slot_index(sorted[i].ts, slot_seconds) == slot {
            buf.push(sorted[i].clone());
            i += 1;
        }
        let rtp = match mode {
            FeatureMode::Rtp => Some(extract_rtp_features(&buf)?),
            FeatureMode::Udp => None,
        };
        out.push(SlotFeatures {
            key: SlotKey::new(session_id, slot),
            udp: extract_udp_features(&buf, slot_seconds),
            rtp,
        });
    }
    Ok(out)
}

pub fn write_features_csv<W: Write>(out: W, rows: &[SlotFeatures], mode: FeatureMode) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(out);
    writeln!(w, "session_id,slot_end,{}", mode.schema().join(","))?;
    for r in rows {
        write!(w, "{},{}", r.key.session_id, r.key.slot_end)?;
        for v in &r.udp {
            write!(w, ",{v}")?;
        }
        if mode == FeatureMode::Rtp {
            let rtp = r.rtp.as_ref().ok_or(FeatureError::MissingRtp { ts: f64::NAN })?;
            for v in rtp {
                write!(w, ",{v}")?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a feature CSV; the mode is inferred from the header.
pub fn read_features_csv<R: Read>(reader: R) -> Result<(FeatureMode, Vec<SlotFeatures>), FeatureError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| FeatureError::Schema(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mode = [FeatureMode::Udp, FeatureMode::Rtp]
        .into_iter()
        .find(|m| {
            let mut want = vec!["session_id".to_string(), "slot_end".to_string()];
            want.extend(m.schema());
            want == header
        })
        .ok_or_else(|| FeatureError::Schema(format!("unexpected header `{}`", header.join(","))))?;

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| FeatureError::Row {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| FeatureError::Row { line, msg };
        let slot_end: u32 = rec[1].parse().map_err(|_| bad(format!("bad slot_end `{}`", &rec[1])))?;
        let mut vals = Vec::with_capacity(rec.len() - 2);
        for (i, f) in rec.iter().enumerate().skip(2) {
            vals.push(
                f.parse::<f64>()
                    .map_err(|_| bad(format!("bad value `{f}` in column {}", header[i])))?,
            );
        }
        let udp: [f64; 18] = vals[..18].try_into().expect("schema checked");
        let rtp = (mode == FeatureMode::Rtp).then(|| <[f64; 11]>::try_from(&vals[18..]).expect("schema checked"));
        rows.push(SlotFeatures {
            key: SlotKey::new(&rec[0], slot_end),
            udp,
            rtp,
        });
    }
    Ok((mode, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::RtpFields;
    use proptest::prelude::*;

    fn pkt(ts: f64, len: u32) -> PacketRecord {
        PacketRecord {
            ts,
            src_ip: "10.0.0.1".parse().unwrap(),
            dst_ip: "10.0.0.2".parse().unwrap(),
            src_port: 5004,
            dst_port: 5004,
            payload_len: len,
            rtp: None,
        }
    }

    fn rtp_pkt(ts: f64, seq: u16, rtp_ts: u32, marker: bool, pt: u8) -> PacketRecord {
        let mut p = pkt(ts, 1000);
        p.rtp = Some(RtpFields {
            payload_type: pt,
            seq,
            timestamp: rtp_ts,
            marker,
            ssrc: 1,
        });
        p
    }

    #[test]
    fn slot_index_conventions() {
        assert_eq!(slot_index(0.5, 1.0), 1);
        assert_eq!(slot_index(2.0, 1.0), 2);
        assert_eq!(slot_index(0.0, 1.0), 1);
        assert_eq!(slot_index(2.000001, 1.0), 3);
        assert_eq!(slot_index(1.0, 0.5), 2);
    }

    #[test]
    fn two_packet_slot() {
        let f = extract_udp_features(&[pkt(0.1, 1000), pkt(0.6, 1100)], 1.0);
        assert_eq!(f[0], 2.0);
        assert_eq!(f[1], 2100.0);
        assert_eq!(f[2], 1050.0);
        assert!((f[9] - 0.5).abs() < 1e-12);
        assert_eq!(f[16], 0.0);
        assert!((f[17] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_and_single_packet_slots() {
        assert_eq!(extract_udp_features(&[], 1.0), [0.0; 18]);
        let f = extract_udp_features(&[pkt(0.3, 900)], 1.0);
        assert_eq!((f[2], f[4], f[5]), (900.0, 900.0, 900.0));
        assert!(f[9..17].iter().all(|&v| v == 0.0));
        assert_eq!(f[17], 0.0);
    }

    #[test]
    fn bursts_count_sub_millisecond_gaps() {
        let f = extract_udp_features(&[pkt(0.1, 1), pkt(0.1002, 1), pkt(0.1004, 1), pkt(0.2, 1)], 1.0);
        assert_eq!(f[16], 2.0);
    }

    #[test]
    fn rtp_gap_marker_and_ts() {
        let p: Vec<_> = [1u16, 2, 3, 5]
            .iter()
            .enumerate()
            .map(|(i, &s)| rtp_pkt(0.1 * i as f64, s, 9000, i == 3, 97))
            .collect();
        let f = extract_rtp_features(&p).unwrap();
        assert_eq!(f[4], 1.0);
        assert_eq!(f[5], 1.0);
        assert_eq!(f[0], 1.0);
        assert_eq!(f[1], 1.0);
        assert_eq!(f[2], 4.0);
        assert_eq!(f[8], 0.0);
    }

    #[test]
    fn rtp_wraparound_and_duplicates() {
        let p: Vec<_> = [65534u16, 65535, 0, 1]
            .iter()
            .enumerate()
            .map(|(i, &s)| rtp_pkt(0.1 * i as f64, s, 0, false, 97))
            .collect();
        let f = extract_rtp_features(&p).unwrap();
        assert_eq!(f[4], 0.0);
        assert_eq!(f[6], 0.0);

        let p: Vec<_> = [1u16, 2, 2, 3]
            .iter()
            .enumerate()
            .map(|(i, &s)| rtp_pkt(0.1 * i as f64, s, 0, false, 97))
            .collect();
        let f = extract_rtp_features(&p).unwrap();
        assert_eq!(f[7], 1.0);
        assert_eq!(f[4], 0.0);
    }

    #[test]
    fn rtp_reorder_retx_and_ts_deltas() {
        let p = vec![
            rtp_pkt(0.0, 10, 3000, false, 97),
            rtp_pkt(0.1, 12, 6000, true, 97),
            rtp_pkt(0.2, 11, 3000, true, 97),
            rtp_pkt(0.3, 500, 3000, false, PT_VIDEO_RETX),
            rtp_pkt(0.4, 13, 12000, true, 97),
        ];
        let f = extract_rtp_features(&p).unwrap();
        assert_eq!(f[0], 3.0);
        assert_eq!(f[6], 1.0);
        assert_eq!(f[10], 1.0);
        assert_eq!(f[4], 0.0);
        // unique ts 3000, 6000, 12000 -> deltas 3000, 6000
        assert_eq!(f[8], 4500.0);
        assert_eq!(f[9], 1500.0);
    }

    #[test]
    fn rtp_requires_headers() {
        assert!(matches!(
            extract_rtp_features(&[pkt(0.0, 1)]),
            Err(FeatureError::MissingRtp { .. })
        ));
    }

    #[test]
    fn session_emits_empty_slots() {
        let video = vec![pkt(2.2, 1000), pkt(2.7, 1000)];
        let rows = featurize_session("s", &video, 5.0, 1.0, FeatureMode::Udp).unwrap();
        assert_eq!(rows.len(), 5);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.key.slot_end, i as u32 + 1);
            if i == 2 {
                assert_eq!(r.pkt_count(), 2.0);
            } else {
                assert_eq!(r.udp, [0.0; 18]);
            }
        }
    }

    #[test]
    fn full_session_slot_count() {
        let rows = featurize_session("s", &[pkt(0.0, 500)], 240.0, 1.0, FeatureMode::Udp).unwrap();
        assert_eq!(rows.len(), 240);
    }

    #[test]
    fn csv_round_trip_both_modes() {
        let video = vec![
            rtp_pkt(0.25, 1, 0, false, 97),
            rtp_pkt(0.5, 2, 3000, true, 97),
            rtp_pkt(1.5, 4, 6000, true, 97),
        ];
        for mode in [FeatureMode::Udp, FeatureMode::Rtp] {
            let rows = featurize_session("sess-1", &video, 3.0, 1.0, mode).unwrap();
            let mut buf = Vec::new();
            write_features_csv(&mut buf, &rows, mode).unwrap();
            let (m, back) = read_features_csv(buf.as_slice()).unwrap();
            assert_eq!(m, mode);
            assert_eq!(back, rows);
        }
    }

    fn arb_session() -> impl Strategy<Value = Vec<PacketRecord>> {
        proptest::collection::vec((0u32..10_000_000, 0u32..1500, any::<u16>(), any::<u32>(), any::<bool>()), 0..200).prop_map(|v| {
            let mut p: Vec<PacketRecord> = v
                .into_iter()
                .map(|(us, len, seq, ts, m)| {
                    let mut r = rtp_pkt(f64::from(us) / 1e6, seq, ts, m, 97);
                    r.payload_len = len;
                    r
                })
                .collect();
            p.sort_by(|a, b| a.ts.total_cmp(&b.ts));
            p
        })
    }

    proptest! {
        #[test]
        fn conservation_and_ranges(video in arb_session()) {
            let rows = featurize_session("s", &video, 10.0, 1.0, FeatureMode::Rtp).unwrap();
            let n: f64 = rows.iter().map(|r| r.pkt_count()).sum();
            let bytes: f64 = rows.iter().map(|r| r.total_bytes()).sum();
            prop_assert_eq!(n as usize, video.len());
            prop_assert_eq!(bytes, video.iter().map(|p| f64::from(p.payload_len)).sum::<f64>());
            for r in &rows {
                let f = r.udp;
                if f[0] > 0.0 {
                    for v in [f[2], f[6], f[7], f[8]] {
                        prop_assert!(v >= f[4] && v <= f[5]);
                    }
                }
                prop_assert!((0.0..=1.0).contains(&f[17]));
            }
        }

        #[test]
        fn equal_timestamp_permutation_invariance(seed in any::<u64>(), video in arb_session()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let a = featurize_session("s", &video, 10.0, 1.0, FeatureMode::Rtp).unwrap();
            // shuffle within runs of equal timestamps
            let mut shuffled = video.clone();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut i = 0;
            while i < shuffled.len() {
                let mut j = i;
                while j < shuffled.len() && shuffled[j].ts == shuffled[i].ts { j += 1; }
                shuffled[i..j].shuffle(&mut rng);
                i = j;
            }
            let b = featurize_session("s", &shuffled, 10.0, 1.0, FeatureMode::Rtp).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
