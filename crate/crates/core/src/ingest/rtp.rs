use super::RtpFields;

/// Fixed RTP header size (no CSRCs, no extension).
pub const RTP_HEADER_LEN: usize = 12;

/// Reads the fixed RTP header fields from a UDP payload, if it looks like RTP.
///
/// Only bytes 0..12 are inspected; CSRC lists, extensions and the
/// (encrypted) media payload are never touched.
pub fn parse_rtp_heuristic(payload: &[u8]) -> Option<RtpFields> {
    let hdr: &[u8; RTP_HEADER_LEN] = payload.get(..RTP_HEADER_LEN)?.try_into().ok()?;
    if hdr[0] >> 6 != 2 {
        return None;
    }
    Some(RtpFields {
        marker: hdr[1] & 0x80 != 0,
        payload_type: hdr[1] & 0x7f,
        seq: u16::from_be_bytes([hdr[2], hdr[3]]),
        timestamp: u32::from_be_bytes([hdr[4], hdr[5], hdr[6], hdr[7]]),
        ssrc: u32::from_be_bytes([hdr[8], hdr[9], hdr[10], hdr[11]]),
    })
}

/// Encodes a minimal version-2 header (no padding, extension or CSRCs).
pub fn encode_rtp_header(rtp: &RtpFields) -> [u8; RTP_HEADER_LEN] {
    let mut out = [0u8; RTP_HEADER_LEN];
    out[0] = 0x80;
    out[1] = (u8::from(rtp.marker) << 7) | (rtp.payload_type & 0x7f);
    out[2..4].copy_from_slice(&rtp.seq.to_be_bytes());
    out[4..8].copy_from_slice(&rtp.timestamp.to_be_bytes());
    out[8..12].copy_from_slice(&rtp.ssrc.to_be_bytes());
    out
}
