use std::net::{IpAddr, Ipv4Addr};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::SynthCalibration;
use crate::classify::{PT_AUDIO, PT_VIDEO, PT_VIDEO_RETX};
use crate::ingest::{quantize_us, PacketRecord, RtpFields};

const VIDEO_CLOCK_HZ: f64 = 90_000.0;
const AUDIO_CLOCK_HZ: f64 = 48_000.0;
const AUDIO_SIZE_RANGE: (f64, f64) = (60.0, 400.0);

/// RTP counters and addressing carried across slots of one session.
#[derive(Clone, Debug)]
pub struct StreamState {
    pub sender: IpAddr,
    pub receiver: IpAddr,
    pub sender_port: u16,
    pub receiver_port: u16,
    video_ssrc: u32,
    retx_ssrc: u32,
    audio_ssrc: u32,
    video_seq: u16,
    retx_seq: u16,
    audio_seq: u16,
    video_ts_base: u32,
    audio_ts_base: u32,
    next_audio: u64,
}

impl StreamState {
    pub fn new<R: Rng>(rng: &mut R) -> Self {
        StreamState {
            sender: IpAddr::V4(Ipv4Addr::new(10, 0, 0, 1)),
            receiver: IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2)),
            sender_port: 3478,
            receiver_port: 5004,
            video_ssrc: rng.random(),
            retx_ssrc: rng.random(),
            audio_ssrc: rng.random(),
            video_seq: rng.random(),
            retx_seq: rng.random(),
            audio_seq: rng.random(),
            video_ts_base: rng.random(),
            audio_ts_base: rng.random(),
            next_audio: 0,
        }
    }

    fn packet(&self, ts: f64, payload_len: u32, rtp: RtpFields) -> PacketRecord {
        PacketRecord {
            ts: quantize_us(ts),
            src_ip: self.sender,
            dst_ip: self.receiver,
            src_port: self.sender_port,
            dst_port: self.receiver_port,
            payload_len,
            rtp: Some(rtp),
        }
    }
}

/// What to send in one slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotPlan {
    pub slot: u32,
    /// Utilized bandwidth, kBps.
    pub kbps: f64,
    pub loss_pct: f64,
    pub low_mode: bool,
    /// Frames the sender emits.
    pub frames: u32,
    /// Frames the receiver never shows (decoder drops).
    pub hidden_frames: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameEvent {
    /// Sender capture instant, seconds.
    pub nominal_ts: f64,
    /// When the receiver renders the frame; `None` if it is dropped.
    pub display_ts: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct SlotTraffic {
    /// Video, retransmission and audio packets, sorted by `ts`.
    pub packets: Vec<PacketRecord>,
    pub frames: Vec<FrameEvent>,
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd.max(0.0)).expect("finite normal parameters")
}

/// Generates the packets of one one-second slot. Packets of a
/// retransmission may land after the slot end.
pub fn generate_slot<R: Rng>(plan: &SlotPlan, state: &mut StreamState, calib: &SynthCalibration, rng: &mut R) -> SlotTraffic {
    let start = f64::from(plan.slot - 1);
    let mut out = SlotTraffic::default();

    let mean_size = calib.mean_packet_size(plan.kbps) - if plan.low_mode { calib.low_mode_size_shift } else { 0.0 };
    let n_packets = ((plan.kbps * 1000.0 / mean_size).round() as u32).max(1);
    let n_frames = plan.frames.min(n_packets);
    let size_dist = normal(mean_size, calib.size_sd);
    let jitter = normal(0.0, calib.frame_jitter_s);
    let p_loss = (plan.loss_pct / 100.0).clamp(0.0, 1.0);

    let mut incomplete = Vec::new();
    let mut last_frame_ts = start;
    for j in 0..n_frames {
        let per = n_packets / n_frames + u32::from(j < n_packets % n_frames);
        let raw = start + (f64::from(j) + calib.frame_offset) / f64::from(n_frames) + jitter.sample(rng);
        let nominal = raw.clamp(start + 1e-4, start + 0.97).max(last_frame_ts);
        last_frame_ts = nominal;
        let rtp_ts = state.video_ts_base.wrapping_add((nominal * VIDEO_CLOCK_HZ).round() as u32);

        let mut t = nominal;
        let mut complete_at = nominal;
        let mut lost_unrecovered = false;
        for k in 0..per {
            if k > 0 {
                t += rng.random_range(calib.intra_frame_gap_ms.0..calib.intra_frame_gap_ms.1) / 1000.0;
            }
            let size = size_dist
                .sample(rng)
                .round()
                .clamp(f64::from(calib.size_clip_min), f64::from(calib.size_clip_max)) as u32;
            let marker = k + 1 == per;
            let seq = state.video_seq;
            state.video_seq = seq.wrapping_add(1);
            let rtp = RtpFields {
                payload_type: PT_VIDEO,
                seq,
                timestamp: rtp_ts,
                marker,
                ssrc: state.video_ssrc,
            };
            if p_loss > 0.0 && rng.random::<f64>() < p_loss {
                if rng.random::<f64>() < calib.retx_fraction {
                    let at = t + rng.random_range(calib.retx_delay_ms.0..calib.retx_delay_ms.1) / 1000.0;
                    let rseq = state.retx_seq;
                    state.retx_seq = rseq.wrapping_add(1);
                    let rtx = RtpFields {
                        payload_type: PT_VIDEO_RETX,
                        seq: rseq,
                        ssrc: state.retx_ssrc,
                        ..rtp
                    };
                    out.packets.push(state.packet(at, size, rtx));
                    complete_at = complete_at.max(at);
                } else {
                    lost_unrecovered = true;
                }
            } else {
                out.packets.push(state.packet(t, size, rtp));
                complete_at = complete_at.max(t);
            }
        }
        if lost_unrecovered {
            incomplete.push(out.frames.len());
        }
        out.frames.push(FrameEvent {
            nominal_ts: nominal,
            display_ts: Some(complete_at + calib.display_delay_s),
        });
    }

    // Hidden frames come from those with unrecovered losses first.
    let hide = (plan.hidden_frames as usize).min(out.frames.len());
    incomplete.shuffle(rng);
    let mut rest: Vec<usize> = (0..out.frames.len()).filter(|i| !incomplete.contains(i)).collect();
    rest.shuffle(rng);
    for &i in incomplete.iter().chain(&rest).take(hide) {
        out.frames[i].display_ts = None;
    }

    let audio_size = normal(calib.audio_size_mean, calib.audio_size_sd);
    let period = 1.0 / calib.audio_pps;
    loop {
        let k = state.next_audio;
        let base = k as f64 * period;
        if base >= start + 1.0 {
            break;
        }
        state.next_audio += 1;
        // the first audio packet anchors the session clock at zero
        let at = if k == 0 { 0.0 } else { base + rng.random_range(0.0..0.0005) };
        let size = audio_size.sample(rng).round().clamp(AUDIO_SIZE_RANGE.0, AUDIO_SIZE_RANGE.1) as u32;
        let seq = state.audio_seq;
        state.audio_seq = seq.wrapping_add(1);
        let rtp = RtpFields {
            payload_type: PT_AUDIO,
            seq,
            timestamp: state.audio_ts_base.wrapping_add((base * AUDIO_CLOCK_HZ).round() as u32),
            marker: false,
            ssrc: state.audio_ssrc,
        };
        out.packets.push(state.packet(at, size, rtp));
    }

    out.packets.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    out
}

/// One slot in isolation at bandwidth `kbps` and loss `loss_pct`, with the
/// slot's true frame rate and quality scores.
#[derive(Clone, Debug)]
pub struct SlotSample {
    pub packets: Vec<PacketRecord>,
    pub fps: f64,
    pub piqe: f64,
    pub brisque: f64,
}

pub fn sample_slot_traffic<R: Rng>(kbps: f64, loss_pct: f64, calib: &SynthCalibration, rng: &mut R) -> SlotSample {
    let mut state = StreamState::new(rng);
    let plan = SlotPlan {
        slot: 1,
        kbps,
        loss_pct,
        low_mode: false,
        frames: sent_frames(calib.target_fps(kbps), calib, rng),
        hidden_frames: hidden_frames(loss_pct, calib, rng),
    };
    let traffic = generate_slot(&plan, &mut state, calib, rng);
    let fps = traffic.frames.iter().filter(|f| f.display_ts.is_some()).count() as f64;
    let (piqe, brisque) = quality_scores(calib.piqe_center(kbps, false), calib, rng);
    SlotSample {
        packets: traffic.packets,
        fps,
        piqe,
        brisque,
    }
}

pub(crate) fn sent_frames<R: Rng>(target: f64, calib: &SynthCalibration, rng: &mut R) -> u32 {
    (target + normal(0.0, calib.fps_noise_sd).sample(rng)).round().max(1.0) as u32
}

pub(crate) fn hidden_frames<R: Rng>(loss_pct: f64, calib: &SynthCalibration, rng: &mut R) -> u32 {
    let mean = calib.fps_loss_penalty_per_pct * loss_pct;
    if mean <= 0.0 {
        return 0;
    }
    Exp::new(1.0 / mean).expect("positive rate").sample(rng).round() as u32
}

pub(crate) fn quality_scores<R: Rng>(piqe_center: f64, calib: &SynthCalibration, rng: &mut R) -> (f64, f64) {
    let piqe = normal(piqe_center, calib.piqe_sd).sample(rng).clamp(0.0, 100.0);
    let brisque = normal(calib.brisque_center(piqe_center), calib.brisque_sd)
        .sample(rng)
        .clamp(0.0, 100.0);
    (piqe, brisque)
}
