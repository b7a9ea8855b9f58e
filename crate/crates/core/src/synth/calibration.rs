use serde::{Deserialize, Serialize};

/// Spatial-quality tier: applies when the nominal bandwidth is at least
/// `min_kbps` (tiers are checked from the top).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiqeTier {
    pub min_kbps: f64,
    /// PIQE center while the encoder runs in its normal mode.
    pub high: f64,
    /// PIQE center in the degraded mode.
    pub low: f64,
}

/// Every tunable constant of the generator. Serialized as one JSON document
/// so recalibration never touches code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthCalibration {
    pub size_intercept: f64,
    pub size_log_slope: f64,
    pub size_mean_min: f64,
    pub size_mean_max: f64,
    pub size_sd: f64,
    pub size_clip_min: u32,
    pub size_clip_max: u32,
    /// Mean size reduction in the degraded encoder mode.
    pub low_mode_size_shift: f64,

    pub bw_noise: f64,
    pub drop_slots: u32,
    pub first_recovery_kbps_per_s: f64,
    pub later_recovery_kbps_per_s: f64,
    pub drop_to_min_kbps: f64,
    pub drop_to_max_kbps: f64,

    pub fps_high: f64,
    pub fps_low: f64,
    pub fps_high_min_kbps: f64,
    pub fps_noise_sd: f64,
    /// Mean frames lost per slot per percent of packet loss.
    pub fps_loss_penalty_per_pct: f64,
    pub freeze_slots: u32,
    pub freeze_factor: (f64, f64),
    pub frame_offset: f64,
    pub frame_jitter_s: f64,
    pub intra_frame_gap_ms: (f64, f64),
    pub display_delay_s: f64,

    pub audio_pps: f64,
    pub audio_size_mean: f64,
    pub audio_size_sd: f64,

    pub retx_fraction: f64,
    pub retx_delay_ms: (f64, f64),

    pub piqe_tiers: Vec<PiqeTier>,
    pub piqe_sd: f64,
    pub brisque_intercept: f64,
    pub brisque_slope: f64,
    pub brisque_sd: f64,

    /// Mean dwell of the encoder-mode Markov chain under mid-range limits.
    pub mode_dwell_s: f64,
    /// Limits whose encoder mode switches over time.
    pub switching_limits_kbps: Vec<u32>,
    pub low_hold_after_recovery_s: (f64, f64),
    pub first_drop_s: (f64, f64),
    pub second_drop_gap_s: (f64, f64),

    pub sign_rate: f64,
    pub signs: u32,
    pub scores_per_second: f64,
}

impl Default for SynthCalibration {
    fn default() -> Self {
        SynthCalibration {
            size_intercept: 330.0,
            size_log_slope: 130.0,
            size_mean_min: 300.0,
            size_mean_max: 1150.0,
            size_sd: 60.0,
            size_clip_min: 250,
            size_clip_max: 1200,
            low_mode_size_shift: 40.0,

            bw_noise: 0.05,
            drop_slots: 10,
            first_recovery_kbps_per_s: 40.0,
            later_recovery_kbps_per_s: 10.0,
            drop_to_min_kbps: 10.0,
            drop_to_max_kbps: 150.0,

            fps_high: 20.0,
            fps_low: 15.0,
            fps_high_min_kbps: 125.0,
            fps_noise_sd: 0.8,
            fps_loss_penalty_per_pct: 0.4,
            freeze_slots: 2,
            freeze_factor: (0.2, 0.5),
            frame_offset: 0.2,
            frame_jitter_s: 0.002,
            intra_frame_gap_ms: (0.1, 0.9),
            display_delay_s: 0.002,

            audio_pps: 50.0,
            audio_size_mean: 187.0,
            audio_size_sd: 25.0,

            retx_fraction: 0.5,
            retx_delay_ms: (30.0, 80.0),

            piqe_tiers: vec![
                PiqeTier { min_kbps: 180.0, high: 27.0, low: 42.0 },
                PiqeTier { min_kbps: 95.0, high: 29.0, low: 42.0 },
                PiqeTier { min_kbps: 45.0, high: 39.0, low: 46.0 },
                PiqeTier { min_kbps: 22.0, high: 45.0, low: 56.0 },
                PiqeTier { min_kbps: 0.0, high: 62.0, low: 62.0 },
            ],
            piqe_sd: 3.0,
            brisque_intercept: 12.0,
            brisque_slope: 1.3,
            brisque_sd: 4.0,

            mode_dwell_s: 40.0,
            switching_limits_kbps: vec![125, 60, 30],
            low_hold_after_recovery_s: (40.0, 90.0),
            first_drop_s: (30.0, 60.0),
            second_drop_gap_s: (70.0, 110.0),

            sign_rate: 60.0,
            signs: 120,
            scores_per_second: 1.0,
        }
    }
}

impl SynthCalibration {
    /// Expected video payload size at `kbps`.
    pub fn mean_packet_size(&self, kbps: f64) -> f64 {
        (self.size_intercept + self.size_log_slope * kbps.ln()).clamp(self.size_mean_min, self.size_mean_max)
    }

    pub fn target_fps(&self, nominal_kbps: f64) -> f64 {
        if nominal_kbps >= self.fps_high_min_kbps {
            self.fps_high
        } else {
            self.fps_low
        }
    }

    pub fn piqe_center(&self, nominal_kbps: f64, low_mode: bool) -> f64 {
        let tier = self
            .piqe_tiers
            .iter()
            .find(|t| nominal_kbps >= t.min_kbps)
            .or(self.piqe_tiers.last())
            .copied()
            .unwrap_or(PiqeTier { min_kbps: 0.0, high: 50.0, low: 50.0 });
        if low_mode {
            tier.low
        } else {
            tier.high
        }
    }

    pub fn brisque_center(&self, piqe_center: f64) -> f64 {
        self.brisque_intercept + self.brisque_slope * piqe_center
    }
}
