//! Pcap fixtures crafted outside this crate (see `fixtures/make_fixtures.py`);
//! each expected CSV was produced by an independent dissector.

use std::net::IpAddr;
use std::path::PathBuf;

use qoe_lens::ingest::{parse_packet_csv, parse_pcap, write_packet_csv, StreamFilter};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn check(pcap: &str, csv: &str) {
    let parsed = parse_pcap(&fixture(pcap), None).unwrap();
    let expected = parse_packet_csv(&fixture(csv)).unwrap();
    assert_eq!(parsed.packets, expected, "{pcap}");

    let mut written = Vec::new();
    write_packet_csv(&mut written, &parsed.packets).unwrap();
    assert_eq!(String::from_utf8(written).unwrap(), std::fs::read_to_string(fixture(csv)).unwrap());
}

#[test]
fn single_rtp_packet() {
    check("rtp_single.pcap", "rtp_single.expected.csv");
    let p = &parse_pcap(&fixture("rtp_single.pcap"), None).unwrap().packets[0];
    let rtp = p.rtp.unwrap();
    assert_eq!((rtp.payload_type, rtp.seq, rtp.marker), (97, 100, true));
    assert_eq!(p.payload_len, 612);
}

#[test]
fn mixed_traffic_microsecond() {
    check("mixed.pcap", "mixed.expected.csv");
    let t = parse_pcap(&fixture("mixed.pcap"), None).unwrap();
    assert_eq!(t.summary.records, 11);
    assert_eq!(t.summary.udp_packets, 9);
    assert_eq!(t.summary.skipped, 2);
    assert_eq!(t.stub.session_id, "mixed");
    assert_eq!(t.stub.start_epoch, 1_700_000_000.0);
}

#[test]
fn mixed_traffic_nanosecond() {
    check("mixed_ns.pcap", "mixed_ns.expected.csv");
    let us = parse_pcap(&fixture("mixed.pcap"), None).unwrap().packets;
    let ns = parse_pcap(&fixture("mixed_ns.pcap"), None).unwrap().packets;
    assert_eq!(us, ns);
}

#[test]
fn stream_filter_keeps_both_directions_of_the_call() {
    let a: IpAddr = "10.0.0.1".parse().unwrap();
    let b: IpAddr = "10.0.0.2".parse().unwrap();
    let filter = StreamFilter {
        ips: Some((b, a)),
        ports: None,
    };
    let t = parse_pcap(&fixture("mixed.pcap"), Some(&filter)).unwrap();
    // the IPv6 packet and the unrelated DNS-like flow are dropped
    assert_eq!(t.packets.len(), 7);
    assert_eq!(t.summary.filtered_out, 2);
    assert!(t.packets.iter().any(|p| p.src_ip == b));

    let filter = StreamFilter {
        ips: None,
        ports: Some((5004, 3478)),
    };
    let t = parse_pcap(&fixture("mixed.pcap"), Some(&filter)).unwrap();
    assert_eq!(t.packets.len(), 8);
    assert!(t.packets.iter().all(|p| p.src_port != 53));
}
