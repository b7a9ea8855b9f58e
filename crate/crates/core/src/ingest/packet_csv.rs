//! Packet-log CSV: `ts,src_ip,dst_ip,src_port,dst_port,payload_len` with an
//! optional all-or-nothing block `rtp_pt,rtp_seq,rtp_ts,rtp_marker,rtp_ssrc`.

use std::io::{BufWriter, Read, Write};
use std::net::IpAddr;
use std::path::Path;
use std::str::FromStr;

use super::{quantize_us, IngestError, PacketRecord, RtpFields};

pub const PACKET_CSV_BASE: [&str; 6] = ["ts", "src_ip", "dst_ip", "src_port", "dst_port", "payload_len"];
pub const PACKET_CSV_RTP: [&str; 5] = ["rtp_pt", "rtp_seq", "rtp_ts", "rtp_marker", "rtp_ssrc"];

pub fn parse_packet_csv(path: &Path) -> Result<Vec<PacketRecord>, IngestError> {
    let file = std::fs::File::open(path).map_err(|e| IngestError::io(path, e))?;
    read_packet_csv(std::io::BufReader::new(file))
}

pub fn read_packet_csv<R: Read>(reader: R) -> Result<Vec<PacketRecord>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| IngestError::Schema(e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    let with_rtp = if names == PACKET_CSV_BASE {
        false
    } else if names.len() == 11 && names[..6] == PACKET_CSV_BASE && names[6..] == PACKET_CSV_RTP {
        true
    } else {
        return Err(IngestError::Schema(format!(
            "unexpected header `{}`",
            names.join(",")
        )));
    };
    let width = if with_rtp { 11 } else { 6 };

    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut prev_ts = f64::NEG_INFINITY;
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| IngestError::Row {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        let row_err = |msg: String| IngestError::Row { line, msg };
        if record.len() != width {
            return Err(row_err(format!("expected {width} fields, found {}", record.len())));
        }
        let ts: f64 = field(&record, 0, "ts").map_err(row_err)?;
        if !ts.is_finite() || ts < 0.0 {
            return Err(row_err(format!("invalid timestamp {ts}")));
        }
        if ts < prev_ts {
            return Err(row_err(format!("timestamp {ts} decreases (previous {prev_ts})")));
        }
        prev_ts = ts;
        let payload_len: i64 = field(&record, 5, "payload_len").map_err(row_err)?;
        if payload_len < 0 || payload_len > i64::from(u16::MAX) - 8 {
            return Err(row_err(format!("payload_len {payload_len} out of range")));
        }
        let rtp = if with_rtp {
            parse_rtp_cols(&record).map_err(row_err)?
        } else {
            None
        };
        out.push(PacketRecord {
            ts,
            src_ip: field::<IpAddr>(&record, 1, "src_ip").map_err(row_err)?,
            dst_ip: field::<IpAddr>(&record, 2, "dst_ip").map_err(row_err)?,
            src_port: field(&record, 3, "src_port").map_err(row_err)?,
            dst_port: field(&record, 4, "dst_port").map_err(row_err)?,
            payload_len: payload_len as u32,
            rtp,
        });
    }

    if let Some(first) = out.first().map(|p| p.ts) {
        if first != 0.0 {
            for p in &mut out {
                p.ts = quantize_us(p.ts - first);
            }
        }
    }
    Ok(out)
}

fn field<T: FromStr>(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T, String> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse()
        .map_err(|_| format!("cannot parse {name} from `{raw}`"))
}

fn parse_rtp_cols(rec: &csv::StringRecord) -> Result<Option<RtpFields>, String> {
    let cols: Vec<&str> = (6..11).map(|i| rec.get(i).unwrap_or("").trim()).collect();
    if cols.iter().all(|c| c.is_empty()) {
        return Ok(None);
    }
    if cols.iter().any(|c| c.is_empty()) {
        return Err("RTP fields must be all present or all empty".into());
    }
    let payload_type: u8 = field(rec, 6, "rtp_pt")?;
    if payload_type > 127 {
        return Err(format!("rtp_pt {payload_type} exceeds 7 bits"));
    }
    let marker = match cols[3] {
        "1" | "true" => true,
        "0" | "false" => false,
        other => return Err(format!("cannot parse rtp_marker from `{other}`")),
    };
    Ok(Some(RtpFields {
        payload_type,
        seq: field(rec, 7, "rtp_seq")?,
        timestamp: field(rec, 8, "rtp_ts")?,
        marker,
        ssrc: field(rec, 10, "rtp_ssrc")?,
    }))
}

/// Writes the packet CSV. RTP columns are emitted iff any packet carries RTP
/// fields; packets without them get empty cells.
pub fn write_packet_csv<W: Write>(out: W, packets: &[PacketRecord]) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    let with_rtp = packets.iter().any(|p| p.rtp.is_some());
    let mut header = PACKET_CSV_BASE.join(",");
    if with_rtp {
        header.push(',');
        header.push_str(&PACKET_CSV_RTP.join(","));
    }
    writeln!(w, "{header}")?;
    for p in packets {
        write!(
            w,
            "{},{},{},{},{},{}",
            p.ts, p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.payload_len
        )?;
        if with_rtp {
            match &p.rtp {
                Some(r) => write!(
                    w,
                    ",{},{},{},{},{}",
                    r.payload_type,
                    r.seq,
                    r.timestamp,
                    u8::from(r.marker),
                    r.ssrc
                )?,
                None => write!(w, ",,,,,")?,
            }
        }
        writeln!(w)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_row_mapping() {
        let csv = "ts,src_ip,dst_ip,src_port,dst_port,payload_len,rtp_pt,rtp_seq,rtp_ts,rtp_marker,rtp_ssrc\n\
                   0.0,10.0.0.1,10.0.0.2,5004,5004,1054,97,1,1000,0,42\n";
        let pkts = read_packet_csv(csv.as_bytes()).unwrap();
        assert_eq!(pkts.len(), 1);
        assert_eq!(
            pkts[0].rtp,
            Some(RtpFields {
                payload_type: 97,
                seq: 1,
                timestamp: 1000,
                marker: false,
                ssrc: 42
            })
        );
        assert_eq!(pkts[0].payload_len, 1054);
    }

    #[test]
    fn base_columns_only() {
        let csv = "ts,src_ip,dst_ip,src_port,dst_port,payload_len\n0,1.1.1.1,2.2.2.2,1,2,3\n0.5,1.1.1.1,2.2.2.2,1,2,4\n";
        let pkts = read_packet_csv(csv.as_bytes()).unwrap();
        assert!(pkts.iter().all(|p| p.rtp.is_none()));
        assert_eq!(pkts[1].ts, 0.5);
    }

    #[test]
    fn negative_length_reports_line() {
        let csv = "ts,src_ip,dst_ip,src_port,dst_port,payload_len\n0,1.1.1.1,2.2.2.2,1,2,3\n0.1,1.1.1.1,2.2.2.2,1,2,-5\n";
        match read_packet_csv(csv.as_bytes()) {
            Err(IngestError::Row { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected RowError, got {other:?}"),
        }
    }

    #[test]
    fn schema_errors() {
        for header in [
            "ts,src_ip,dst_ip,src_port,dst_port",
            "ts,src_ip,dst_ip,src_port,dst_port,payload_len,rtp_pt",
            "ts,src_ip,dst_ip,src_port,dst_port,payload_len,extra",
        ] {
            let csv = format!("{header}\n");
            assert!(matches!(read_packet_csv(csv.as_bytes()), Err(IngestError::Schema(_))), "{header}");
        }
    }

    #[test]
    fn rebases_to_first_row() {
        let csv = "ts,src_ip,dst_ip,src_port,dst_port,payload_len\n10.25,1.1.1.1,2.2.2.2,1,2,3\n10.75,1.1.1.1,2.2.2.2,1,2,3\n";
        let pkts = read_packet_csv(csv.as_bytes()).unwrap();
        assert_eq!(pkts[0].ts, 0.0);
        assert_eq!(pkts[1].ts, 0.5);
    }

    #[test]
    fn partial_rtp_cells_rejected() {
        let csv = "ts,src_ip,dst_ip,src_port,dst_port,payload_len,rtp_pt,rtp_seq,rtp_ts,rtp_marker,rtp_ssrc\n\
                   0.0,10.0.0.1,10.0.0.2,5004,5004,1054,97,,1000,0,42\n";
        assert!(matches!(read_packet_csv(csv.as_bytes()), Err(IngestError::Row { line: 2, .. })));
    }

    fn arb_packets() -> impl Strategy<Value = Vec<PacketRecord>> {
        let rtp = proptest::option::of((0u8..128, any::<u16>(), any::<u32>(), any::<bool>(), any::<u32>()).prop_map(
            |(payload_type, seq, timestamp, marker, ssrc)| RtpFields {
                payload_type,
                seq,
                timestamp,
                marker,
                ssrc,
            },
        ));
        let row = (0u64..2_000_000, any::<[u8; 4]>(), any::<[u8; 16]>(), any::<u16>(), any::<u16>(), 0u32..1500, rtp);
        proptest::collection::vec(row, 0..40).prop_map(|rows| {
            let mut t = 0u64;
            rows.into_iter()
                .enumerate()
                .map(|(i, (dt, v4, v6, sp, dp, len, rtp))| {
                    if i > 0 {
                        t += dt;
                    }
                    PacketRecord {
                        ts: t as f64 / 1e6,
                        src_ip: IpAddr::from(v4),
                        dst_ip: IpAddr::from(v6),
                        src_port: sp,
                        dst_port: dp,
                        payload_len: len,
                        rtp,
                    }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip(packets in arb_packets()) {
            let mut buf = Vec::new();
            write_packet_csv(&mut buf, &packets).unwrap();
            let back = read_packet_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back, packets);
        }
    }
}
