//! Classic libpcap reader (both byte orders, micro- and nanosecond variants)
//! and a small Ethernet/IPv4 writer used for fixtures and trace export.

use std::io::Write;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;

use super::rtp::{encode_rtp_header, parse_rtp_heuristic};
use super::{IngestError, PacketRecord, StreamFilter};

const MAGIC_US: u32 = 0xa1b2_c3d4;
const MAGIC_NS: u32 = 0xa1b2_3c4d;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

const LINKTYPE_NULL: u32 = 0;
const LINKTYPE_ETHERNET: u32 = 1;
const LINKTYPE_RAW: u32 = 101;
const LINKTYPE_LINUX_SLL: u32 = 113;
const LINKTYPE_IPV4: u32 = 228;
const LINKTYPE_IPV6: u32 = 229;
const LINKTYPE_LINUX_SLL2: u32 = 276;

const IPPROTO_UDP: u8 = 17;

/// What the parser saw besides the returned packets.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ParseSummary {
    pub records: u64,
    pub udp_packets: u64,
    /// Non-UDP packets (TCP, ICMP, ARP, non-first IP fragments, ...).
    pub skipped: u64,
    /// Frames too short to hold the headers they announce.
    pub skipped_malformed: u64,
    pub filtered_out: u64,
}

/// Session-level facts recovered from the trace itself. The network
/// condition is not observable from packets and is attached later.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TraceStub {
    pub session_id: String,
    /// Absolute capture time of the first returned packet, Unix seconds.
    pub start_epoch: f64,
    /// Timestamp of the last returned packet (relative seconds).
    pub duration: f64,
}

#[derive(Clone, Debug)]
pub struct ParsedTrace {
    pub packets: Vec<PacketRecord>,
    pub stub: TraceStub,
    pub summary: ParseSummary,
}

pub fn parse_pcap(path: &Path, filter: Option<&StreamFilter>) -> Result<ParsedTrace, IngestError> {
    let bytes = std::fs::read(path).map_err(|e| IngestError::io(path, e))?;
    let session_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_pcap_bytes(&bytes, &session_id, filter)
}

#[derive(Clone, Copy)]
struct Endian {
    big: bool,
}

impl Endian {
    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        if self.big {
            u32::from_be_bytes(a)
        } else {
            u32::from_le_bytes(a)
        }
    }
}

pub fn parse_pcap_bytes(
    bytes: &[u8],
    session_id: &str,
    filter: Option<&StreamFilter>,
) -> Result<ParsedTrace, IngestError> {
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(IngestError::MalformedPcap("file shorter than global header".into()));
    }
    let magic_le = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let magic_be = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let (endian, nanos) = match (magic_le, magic_be) {
        (MAGIC_US, _) => (Endian { big: false }, false),
        (MAGIC_NS, _) => (Endian { big: false }, true),
        (_, MAGIC_US) => (Endian { big: true }, false),
        (_, MAGIC_NS) => (Endian { big: true }, true),
        _ => {
            return Err(IngestError::MalformedPcap(format!(
                "bad magic 0x{magic_be:08x}"
            )))
        }
    };
    let linktype = endian.u32(&bytes[20..24]) & 0x0fff_ffff;

    let mut summary = ParseSummary::default();
    // (absolute ns, arrival order, record)
    let mut raw: Vec<(i128, usize, PacketRecord)> = Vec::new();
    let mut off = GLOBAL_HEADER_LEN;
    while off < bytes.len() {
        let hdr = bytes.get(off..off + RECORD_HEADER_LEN).ok_or_else(|| {
            IngestError::MalformedPcap(format!("truncated record header at offset {off}"))
        })?;
        let sec = i128::from(endian.u32(&hdr[0..4]));
        let frac = i128::from(endian.u32(&hdr[4..8]));
        let incl = endian.u32(&hdr[8..12]) as usize;
        off += RECORD_HEADER_LEN;
        let frame = bytes.get(off..off + incl).ok_or_else(|| {
            IngestError::MalformedPcap(format!(
                "record at offset {} claims {incl} bytes past end of file",
                off - RECORD_HEADER_LEN
            ))
        })?;
        off += incl;
        summary.records += 1;

        let abs_ns = sec * 1_000_000_000 + if nanos { frac } else { frac * 1000 };
        match dissect(linktype, frame) {
            Dissected::Udp(d) => {
                if filter.is_some_and(|f| !f.matches(d.src_ip, d.dst_ip, d.src_port, d.dst_port)) {
                    summary.filtered_out += 1;
                    continue;
                }
                let rec = PacketRecord {
                    ts: 0.0,
                    src_ip: d.src_ip,
                    dst_ip: d.dst_ip,
                    src_port: d.src_port,
                    dst_port: d.dst_port,
                    payload_len: d.payload_len,
                    rtp: parse_rtp_heuristic(d.payload),
                };
                let order = raw.len();
                raw.push((abs_ns, order, rec));
            }
            Dissected::Other => summary.skipped += 1,
            Dissected::Malformed => summary.skipped_malformed += 1,
        }
    }
    summary.udp_packets = raw.len() as u64;

    raw.sort_by_key(|(ns, order, _)| (*ns, *order));
    let first_ns = raw.first().map_or(0, |r| r.0);
    let packets: Vec<PacketRecord> = raw
        .into_iter()
        .map(|(ns, _, mut rec)| {
            let rel_us = (ns - first_ns + 500) / 1000;
            rec.ts = rel_us as f64 / 1e6;
            rec
        })
        .collect();
    let stub = TraceStub {
        session_id: session_id.to_string(),
        start_epoch: first_ns as f64 / 1e9,
        duration: packets.last().map_or(0.0, |p| p.ts),
    };
    Ok(ParsedTrace {
        packets,
        stub,
        summary,
    })
}

struct UdpView<'a> {
    src_ip: IpAddr,
    dst_ip: IpAddr,
    src_port: u16,
    dst_port: u16,
    payload_len: u32,
    payload: &'a [u8],
}

enum Dissected<'a> {
    Udp(UdpView<'a>),
    Other,
    Malformed,
}

fn be16(b: &[u8], at: usize) -> Option<u16> {
    Some(u16::from_be_bytes([*b.get(at)?, *b.get(at + 1)?]))
}

fn dissect(linktype: u32, frame: &[u8]) -> Dissected<'_> {
    // (ethertype-or-version hint, network-layer bytes)
    let net = match linktype {
        LINKTYPE_ETHERNET => {
            let mut at = 12;
            let mut ethertype = match be16(frame, at) {
                Some(t) => t,
                None => return Dissected::Malformed,
            };
            while ethertype == 0x8100 || ethertype == 0x88a8 {
                at += 4;
                ethertype = match be16(frame, at) {
                    Some(t) => t,
                    None => return Dissected::Malformed,
                };
            }
            if ethertype != 0x0800 && ethertype != 0x86dd {
                return Dissected::Other;
            }
            &frame[at + 2..]
        }
        LINKTYPE_LINUX_SLL => match (be16(frame, 14), frame.get(16..)) {
            (Some(0x0800 | 0x86dd), Some(rest)) => rest,
            (Some(_), Some(_)) => return Dissected::Other,
            _ => return Dissected::Malformed,
        },
        LINKTYPE_LINUX_SLL2 => match (be16(frame, 0), frame.get(20..)) {
            (Some(0x0800 | 0x86dd), Some(rest)) => rest,
            (Some(_), Some(_)) => return Dissected::Other,
            _ => return Dissected::Malformed,
        },
        LINKTYPE_NULL => match frame.get(4..) {
            Some(rest) => rest,
            None => return Dissected::Malformed,
        },
        LINKTYPE_RAW | LINKTYPE_IPV4 | LINKTYPE_IPV6 => frame,
        _ => return Dissected::Other,
    };
    dissect_ip(net)
}

fn dissect_ip(net: &[u8]) -> Dissected<'_> {
    let Some(&first) = net.first() else {
        return Dissected::Malformed;
    };
    let (src_ip, dst_ip, transport) = match first >> 4 {
        4 => {
            let ihl = usize::from(first & 0x0f) * 4;
            if ihl < 20 || net.len() < ihl {
                return Dissected::Malformed;
            }
            if net[9] != IPPROTO_UDP {
                return Dissected::Other;
            }
            let frag_offset = u16::from_be_bytes([net[6], net[7]]) & 0x1fff;
            if frag_offset != 0 {
                return Dissected::Other;
            }
            let src = Ipv4Addr::new(net[12], net[13], net[14], net[15]);
            let dst = Ipv4Addr::new(net[16], net[17], net[18], net[19]);
            (IpAddr::V4(src), IpAddr::V4(dst), &net[ihl..])
        }
        6 => {
            if net.len() < 40 {
                return Dissected::Malformed;
            }
            if net[6] != IPPROTO_UDP {
                return Dissected::Other;
            }
            let src: [u8; 16] = net[8..24].try_into().expect("16 bytes");
            let dst: [u8; 16] = net[24..40].try_into().expect("16 bytes");
            (
                IpAddr::V6(Ipv6Addr::from(src)),
                IpAddr::V6(Ipv6Addr::from(dst)),
                &net[40..],
            )
        }
        _ => return Dissected::Other,
    };
    let (Some(src_port), Some(dst_port), Some(udp_len)) =
        (be16(transport, 0), be16(transport, 2), be16(transport, 4))
    else {
        return Dissected::Malformed;
    };
    if udp_len < 8 || transport.len() < 8 {
        return Dissected::Malformed;
    }
    let end = usize::from(udp_len).min(transport.len());
    Dissected::Udp(UdpView {
        src_ip,
        dst_ip,
        src_port,
        dst_port,
        payload_len: u32::from(udp_len - 8),
        payload: &transport[8..end],
    })
}

/// Writes packets as a little-endian microsecond pcap with Ethernet framing.
///
/// Payload bytes are synthesized: an RTP header when `rtp` is set, zeros
/// otherwise, padded to `payload_len`. IPv4 and IPv6 endpoints are both
/// supported but a packet must not mix families.
pub fn write_pcap<W: Write>(out: &mut W, start_epoch_us: u64, packets: &[PacketRecord]) -> std::io::Result<()> {
    let mut hdr = Vec::with_capacity(GLOBAL_HEADER_LEN);
    hdr.extend(MAGIC_US.to_le_bytes());
    hdr.extend(2u16.to_le_bytes());
    hdr.extend(4u16.to_le_bytes());
    hdr.extend(0i32.to_le_bytes());
    hdr.extend(0u32.to_le_bytes());
    hdr.extend(65535u32.to_le_bytes());
    hdr.extend(LINKTYPE_ETHERNET.to_le_bytes());
    out.write_all(&hdr)?;

    for p in packets {
        let frame = ethernet_frame(p)?;
        let abs_us = start_epoch_us + (p.ts * 1e6).round() as u64;
        let mut rec = Vec::with_capacity(RECORD_HEADER_LEN + frame.len());
        rec.extend(((abs_us / 1_000_000) as u32).to_le_bytes());
        rec.extend(((abs_us % 1_000_000) as u32).to_le_bytes());
        rec.extend((frame.len() as u32).to_le_bytes());
        rec.extend((frame.len() as u32).to_le_bytes());
        rec.extend(frame);
        out.write_all(&rec)?;
    }
    Ok(())
}

fn ethernet_frame(p: &PacketRecord) -> std::io::Result<Vec<u8>> {
    let invalid = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidInput, msg.to_string());
    let udp_len = p.payload_len + 8;
    if udp_len > u32::from(u16::MAX) {
        return Err(invalid("payload too large for UDP"));
    }
    let mut payload = vec![0u8; p.payload_len as usize];
    if let Some(rtp) = &p.rtp {
        let h = encode_rtp_header(rtp);
        let n = h.len().min(payload.len());
        payload[..n].copy_from_slice(&h[..n]);
    }
    let mut udp = Vec::with_capacity(udp_len as usize);
    udp.extend(p.src_port.to_be_bytes());
    udp.extend(p.dst_port.to_be_bytes());
    udp.extend((udp_len as u16).to_be_bytes());
    udp.extend(0u16.to_be_bytes());
    udp.extend(payload);

    let mut frame = vec![0u8; 12];
    frame[0..6].copy_from_slice(&[0x02, 0, 0, 0, 0, 0x02]);
    frame[6..12].copy_from_slice(&[0x02, 0, 0, 0, 0, 0x01]);
    match (p.src_ip, p.dst_ip) {
        (IpAddr::V4(s), IpAddr::V4(d)) => {
            let total = 20 + udp.len();
            if total > usize::from(u16::MAX) {
                return Err(invalid("datagram too large for IPv4"));
            }
            frame.extend(0x0800u16.to_be_bytes());
            let mut ip = vec![0x45, 0];
            ip.extend((total as u16).to_be_bytes());
            ip.extend([0, 0, 0x40, 0, 64, IPPROTO_UDP, 0, 0]);
            ip.extend(s.octets());
            ip.extend(d.octets());
            let sum = ipv4_checksum(&ip);
            ip[10..12].copy_from_slice(&sum.to_be_bytes());
            frame.extend(ip);
        }
        (IpAddr::V6(s), IpAddr::V6(d)) => {
            frame.extend(0x86ddu16.to_be_bytes());
            frame.extend([0x60, 0, 0, 0]);
            frame.extend((udp.len() as u16).to_be_bytes());
            frame.extend([IPPROTO_UDP, 64]);
            frame.extend(s.octets());
            frame.extend(d.octets());
        }
        _ => return Err(invalid("mixed IPv4/IPv6 endpoints")),
    }
    frame.extend(udp);
    Ok(frame)
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|c| u32::from(u16::from_be_bytes([c[0], *c.get(1).unwrap_or(&0)])))
        .sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}
