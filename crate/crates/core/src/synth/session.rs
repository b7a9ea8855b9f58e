use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::profile::{stream_rng, STREAM_LABELS, STREAM_PLAN, STREAM_TRAFFIC};
use super::traffic::{generate_slot, hidden_frames, quality_scores, sent_frames, FrameEvent, SlotPlan, StreamState};
use super::{bandwidth_profile, nominal_bandwidth, ConditionProfile, ConditionSpec, SynthCalibration, SynthError};
use crate::ground_truth::{build_labels, CaptureEvent, FrameScore, SlotLabels};
use crate::ingest::{quantize_us, PacketRecord};
use crate::session::SessionMeta;

#[derive(Clone, Debug)]
pub struct SyntheticSession {
    pub meta: SessionMeta,
    /// Utilized bandwidth per slot, kBps.
    pub bandwidth: Vec<f64>,
    pub packets: Vec<PacketRecord>,
    pub captures: Vec<CaptureEvent>,
    pub scores: Vec<FrameScore>,
    pub labels: Vec<SlotLabels>,
}

/// Degraded-encoder indicator per slot.
fn encoder_modes<R: Rng>(profile: &ConditionProfile, nominal: &[f64], calib: &SynthCalibration, rng: &mut R) -> Vec<bool> {
    let n = nominal.len();
    match &profile.condition {
        ConditionSpec::BandwidthLimit { kbps } if calib.switching_limits_kbps.contains(kbps) => {
            let p_switch = 1.0 / calib.mode_dwell_s.max(1.0);
            let mut low = rng.random::<bool>();
            (0..n)
                .map(|_| {
                    let cur = low;
                    if rng.random::<f64>() < p_switch {
                        low = !low;
                    }
                    cur
                })
                .collect()
        }
        ConditionSpec::BandwidthDrop { initial_kbps, .. } => {
            let initial = f64::from(*initial_kbps);
            let mut modes = vec![false; n];
            for start in profile.drop_slots().iter().map(|&s| s as usize - 1) {
                let recovered = (start + 1..n).find(|&k| nominal[k] >= initial).unwrap_or(n);
                let hold = rng.random_range(calib.low_hold_after_recovery_s.0..calib.low_hold_after_recovery_s.1);
                let until = (recovered + hold.round() as usize).min(n);
                for m in &mut modes[start.min(n)..until] {
                    *m = true;
                }
            }
            modes
        }
        _ => vec![false; n],
    }
}

pub fn generate_session(profile: &ConditionProfile, calib: &SynthCalibration) -> Result<SyntheticSession, SynthError> {
    let nominal = nominal_bandwidth(profile, calib)?;
    let bandwidth = bandwidth_profile(profile, calib)?;
    let meta = profile.meta();
    let loss = profile.loss_pct();
    let n_slots = nominal.len();

    let mut plan_rng = stream_rng(profile.seed, STREAM_PLAN);
    let modes = encoder_modes(profile, &nominal, calib, &mut plan_rng);
    let drops = profile.drop_slots();
    let plans: Vec<SlotPlan> = (0..n_slots)
        .map(|i| {
            let slot = i as u32 + 1;
            let target = calib.target_fps(nominal[i]);
            let frozen = drops.iter().any(|&d| slot >= d && slot < d + calib.freeze_slots);
            let frames = if frozen {
                let f = plan_rng.random_range(calib.freeze_factor.0..calib.freeze_factor.1);
                (target * f).round().max(1.0) as u32
            } else {
                sent_frames(target, calib, &mut plan_rng)
            };
            SlotPlan {
                slot,
                kbps: bandwidth[i],
                loss_pct: loss,
                low_mode: modes[i],
                frames,
                hidden_frames: hidden_frames(loss, calib, &mut plan_rng),
            }
        })
        .collect();

    let mut rng = stream_rng(profile.seed, STREAM_TRAFFIC);
    let mut state = StreamState::new(&mut rng);
    let mut packets = Vec::new();
    let mut frames: Vec<FrameEvent> = Vec::new();
    for plan in &plans {
        let t = generate_slot(plan, &mut state, calib, &mut rng);
        packets.extend(t.packets);
        frames.extend(t.frames);
    }
    // late retransmissions past the session end are not captured
    packets.retain(|p| p.ts <= profile.duration);
    packets.sort_by(|a, b| a.ts.total_cmp(&b.ts));

    let mut lrng = stream_rng(profile.seed, STREAM_LABELS);
    let captures = capture_log(&frames, profile.duration, calib, &mut lrng);
    let mut scores = Vec::new();
    let per_slot = calib.scores_per_second.max(1.0).round() as u32;
    for (i, plan) in plans.iter().enumerate() {
        let center = calib.piqe_center(nominal[i], plan.low_mode);
        for k in 0..per_slot {
            let ts = i as f64 + (f64::from(k) + lrng.random_range(0.05..0.95)) / f64::from(per_slot);
            let (piqe, brisque) = quality_scores(center, calib, &mut lrng);
            scores.push(FrameScore {
                ts: quantize_us(ts),
                piqe,
                brisque,
            });
        }
    }
    let labels = build_labels(&meta.session_id, &captures, &scores, profile.duration, 1.0)
        .map_err(|e| SynthError::InvalidProfile(e.to_string()))?;
    Ok(SyntheticSession {
        meta,
        bandwidth,
        packets,
        captures,
        scores,
        labels,
    })
}

/// Receiver-side capture log: the rendered frame is sampled `sign_rate`
/// times per second and identified by the sender-side sign it shows.
fn capture_log<R: Rng>(frames: &[FrameEvent], duration: f64, calib: &SynthCalibration, rng: &mut R) -> Vec<CaptureEvent> {
    let mut shown: Vec<(f64, f64)> = Vec::with_capacity(frames.len());
    let mut last = f64::NEG_INFINITY;
    for f in frames {
        if let Some(d) = f.display_ts {
            // rendering is in frame order
            last = last.max(d);
            shown.push((last, f.nominal_ts));
        }
    }
    let phase = rng.random_range(0.0..1.0 / calib.sign_rate);
    sample_display(&shown, duration, phase, calib.sign_rate, calib.signs, 0.0, rng)
}

/// Samples a rendered-frame timeline `(display_ts, sender_ts)` every
/// `1/rate` seconds starting at `phase`.
fn sample_display<R: Rng>(
    shown: &[(f64, f64)],
    duration: f64,
    phase: f64,
    rate: f64,
    signs: u32,
    jitter_s: f64,
    rng: &mut R,
) -> Vec<CaptureEvent> {
    let jitter = Normal::new(0.0, jitter_s).expect("finite jitter");
    let mut out = Vec::new();
    let mut idx = 0usize;
    let mut j = 0u64;
    loop {
        let c = phase + j as f64 / rate;
        if c > duration {
            break;
        }
        j += 1;
        let c = if jitter_s > 0.0 { (c + jitter.sample(rng)).max(0.0) } else { c };
        while idx < shown.len() && shown[idx].0 <= c {
            idx += 1;
        }
        if idx == 0 {
            continue;
        }
        let sign = ((shown[idx - 1].1 * rate).floor() as u64) % u64::from(signs.max(1));
        out.push(CaptureEvent {
            ts: quantize_us(c),
            frame_id: format!("{sign:02x}"),
        });
    }
    out
}

/// A constant-rate stream for validating the capture method: the sender
/// emits `fps` frames per second with render jitter `jitter_s`; the receiver
/// samples at `sign_rate` with capture jitter `capture_jitter_s`. Returns
/// the capture log.
pub fn simulate_constant_fps<R: Rng>(
    fps: f64,
    duration: f64,
    sign_rate: f64,
    signs: u32,
    jitter_s: f64,
    capture_jitter_s: f64,
    rng: &mut R,
) -> Vec<CaptureEvent> {
    let render = Normal::new(0.0, jitter_s).expect("finite jitter");
    let start = rng.random_range(0.0..1.0 / fps);
    let n = (duration * fps).ceil() as usize + 1;
    let mut shown = Vec::with_capacity(n);
    let mut last = f64::NEG_INFINITY;
    for k in 0..n {
        let nominal = start + k as f64 / fps;
        let d = (nominal + render.sample(rng).abs()).max(last);
        last = d;
        shown.push((d, nominal));
    }
    let phase = rng.random_range(0.0..1.0 / sign_rate);
    sample_display(&shown, duration, phase, sign_rate, signs, capture_jitter_s, rng)
}
