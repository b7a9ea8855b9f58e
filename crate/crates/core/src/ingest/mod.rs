//! Packet trace ingestion: libpcap files and the packet-log CSV interchange
//! format, both normalized into [`PacketRecord`] sequences.

mod packet_csv;
mod pcap;
mod rtp;

use std::net::IpAddr;

pub use self::packet_csv::{parse_packet_csv, read_packet_csv, write_packet_csv, PACKET_CSV_BASE, PACKET_CSV_RTP};
pub use self::pcap::{parse_pcap, parse_pcap_bytes, write_pcap, ParseSummary, ParsedTrace, TraceStub};
pub use self::rtp::{encode_rtp_header, parse_rtp_heuristic, RTP_HEADER_LEN};

/// One captured UDP datagram.
#[derive(Clone, Debug, PartialEq)]
pub struct PacketRecord {
    /// Seconds since the first packet of the session, microsecond resolution.
    pub ts: f64,
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    /// UDP payload bytes (UDP length minus the 8-byte header).
    pub payload_len: u32,
    pub rtp: Option<RtpFields>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RtpFields {
    pub payload_type: u8,
    pub seq: u16,
    pub timestamp: u32,
    pub marker: bool,
    pub ssrc: u32,
}

/// Selects the application stream. Addresses match as an unordered pair so
/// both directions of the call are kept; ports are optional.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StreamFilter {
    pub ips: Option<(IpAddr, IpAddr)>,
    pub ports: Option<(u16, u16)>,
}

impl StreamFilter {
    pub fn matches(&self, src_ip: IpAddr, dst_ip: IpAddr, src_port: u16, dst_port: u16) -> bool {
        let pair = |(a, b): (IpAddr, IpAddr)| (src_ip == a && dst_ip == b) || (src_ip == b && dst_ip == a);
        let ports = |(a, b): (u16, u16)| {
            (src_port == a && dst_port == b) || (src_port == b && dst_port == a)
        };
        self.ips.is_none_or(pair) && self.ports.is_none_or(ports)
    }
}

/// Rounds to the microsecond grid used for all packet timestamps.
pub fn quantize_us(ts: f64) -> f64 {
    (ts * 1e6).round() / 1e6
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("I/O error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed pcap: {0}")]
    MalformedPcap(String),
    #[error("packet CSV schema error: {0}")]
    Schema(String),
    #[error("packet CSV line {line}: {msg}")]
    Row { line: u64, msg: String },
}

impl IngestError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
