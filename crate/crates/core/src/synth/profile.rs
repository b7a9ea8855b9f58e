use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SynthCalibration, SynthError};
use crate::features::slot_index;
use crate::session::{ConditionKind, Level, SessionMeta, BANDWIDTH_LEVELS_KBPS, LOSS_LEVELS_PCT};

pub const DEFAULT_DURATION_S: f64 = 240.0;

/// Independent random streams derived from one profile seed.
pub(crate) const STREAM_BANDWIDTH: u64 = 1;
pub(crate) const STREAM_TRAFFIC: u64 = 2;
pub(crate) const STREAM_LABELS: u64 = 3;
pub(crate) const STREAM_PLAN: u64 = 4;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionSpec {
    BandwidthLimit {
        kbps: u32,
    },
    BandwidthDrop {
        initial_kbps: u32,
        drop_to_kbps: f64,
        /// Seconds since session start, ascending.
        drop_times: Vec<f64>,
    },
    PacketLoss {
        pct: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionProfile {
    pub session_id: String,
    pub condition: ConditionSpec,
    #[serde(default = "default_duration")]
    pub duration: f64,
    pub seed: u64,
}

fn default_duration() -> f64 {
    DEFAULT_DURATION_S
}

impl ConditionProfile {
    pub fn validate(&self, calib: &SynthCalibration) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidProfile(format!("{}: {msg}", self.session_id)));
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad(format!("duration {} must be positive", self.duration));
        }
        match &self.condition {
            ConditionSpec::BandwidthLimit { kbps } if !BANDWIDTH_LEVELS_KBPS.contains(kbps) => {
                bad(format!("bandwidth limit {kbps} kBps is not one of {BANDWIDTH_LEVELS_KBPS:?}"))
            }
            ConditionSpec::PacketLoss { pct } if !LOSS_LEVELS_PCT.contains(pct) => {
                bad(format!("loss {pct}% is not one of {LOSS_LEVELS_PCT:?}"))
            }
            ConditionSpec::BandwidthDrop {
                initial_kbps,
                drop_to_kbps,
                drop_times,
            } => {
                if !BANDWIDTH_LEVELS_KBPS.contains(initial_kbps) {
                    return bad(format!("initial bandwidth {initial_kbps} kBps is not a vocabulary level"));
                }
                if !(calib.drop_to_min_kbps..=calib.drop_to_max_kbps).contains(drop_to_kbps)
                    || *drop_to_kbps >= f64::from(*initial_kbps)
                {
                    return bad(format!(
                        "drop target {drop_to_kbps} kBps must lie in [{}, {}] and below the initial level",
                        calib.drop_to_min_kbps, calib.drop_to_max_kbps
                    ));
                }
                if drop_times.is_empty() {
                    return bad("a drop profile needs at least one drop time".into());
                }
                if drop_times.windows(2).any(|w| w[1] <= w[0])
                    || drop_times.iter().any(|&t| !(0.0..self.duration).contains(&t))
                {
                    return bad(format!("drop times {drop_times:?} must be ascending and inside the session"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn meta(&self) -> SessionMeta {
        let (kind, level) = match &self.condition {
            ConditionSpec::BandwidthLimit { kbps } => (ConditionKind::BandwidthLimit, Level::Bandwidth(*kbps)),
            ConditionSpec::BandwidthDrop { drop_to_kbps, .. } => {
                (ConditionKind::BandwidthDrop, Level::nearest_bandwidth(*drop_to_kbps))
            }
            ConditionSpec::PacketLoss { pct } => (ConditionKind::PacketLoss, Level::Loss(*pct)),
        };
        SessionMeta {
            session_id: self.session_id.clone(),
            condition_kind: kind,
            condition_level: level,
            duration: self.duration,
        }
    }

    pub fn loss_pct(&self) -> f64 {
        match self.condition {
            ConditionSpec::PacketLoss { pct } => f64::from(pct),
            _ => 0.0,
        }
    }

    pub fn n_slots(&self) -> u32 {
        slot_index(self.duration, 1.0)
    }

    /// First slot of each drop.
    pub fn drop_slots(&self) -> Vec<u32> {
        match &self.condition {
            ConditionSpec::BandwidthDrop { drop_times, .. } => drop_times.iter().map(|&t| slot_index(t, 1.0)).collect(),
            _ => Vec::new(),
        }
    }
}

/// Per-slot bandwidth before measurement noise (one-second slots).
pub fn nominal_bandwidth(profile: &ConditionProfile, calib: &SynthCalibration) -> Result<Vec<f64>, SynthError> {
    profile.validate(calib)?;
    let n = profile.n_slots() as usize;
    Ok(match &profile.condition {
        ConditionSpec::BandwidthLimit { kbps } => vec![f64::from(*kbps); n],
        ConditionSpec::PacketLoss { .. } => vec![f64::from(BANDWIDTH_LEVELS_KBPS[0]); n],
        ConditionSpec::BandwidthDrop {
            initial_kbps,
            drop_to_kbps,
            ..
        } => {
            let initial = f64::from(*initial_kbps);
            let starts = profile.drop_slots();
            let mut out = Vec::with_capacity(n);
            let mut level = initial;
            for slot in 1..=n as u32 {
                let latest = starts.iter().rposition(|&s| s <= slot);
                level = match latest {
                    None => initial,
                    Some(i) if slot < starts[i] + calib.drop_slots => *drop_to_kbps,
                    Some(i) => {
                        let rate = if i == 0 {
                            calib.first_recovery_kbps_per_s
                        } else {
                            calib.later_recovery_kbps_per_s
                        };
                        (level + rate).min(initial)
                    }
                };
                out.push(level);
            }
            out
        }
    })
}

/// Utilized bandwidth per slot: the nominal profile with uniform
/// multiplicative noise on shaped links; packet-loss sessions stay flat.
pub fn bandwidth_profile(profile: &ConditionProfile, calib: &SynthCalibration) -> Result<Vec<f64>, SynthError> {
    let nominal = nominal_bandwidth(profile, calib)?;
    if matches!(profile.condition, ConditionSpec::PacketLoss { .. }) {
        return Ok(nominal);
    }
    let mut rng = stream_rng(profile.seed, STREAM_BANDWIDTH);
    Ok(nominal
        .into_iter()
        .map(|bw| bw * (1.0 + calib.bw_noise * (2.0 * rng.random::<f64>() - 1.0)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(condition: ConditionSpec) -> ConditionProfile {
        ConditionProfile {
            session_id: "t".into(),
            condition,
            duration: 240.0,
            seed: 11,
        }
    }

    #[test]
    fn limit_within_noise_band() {
        let c = SynthCalibration::default();
        let bw = bandwidth_profile(&profile(ConditionSpec::BandwidthLimit { kbps: 250 }), &c).unwrap();
        assert_eq!(bw.len(), 240);
        assert!(bw.iter().all(|&b| (237.5..=262.5).contains(&b)));
    }

    #[test]
    fn loss_is_flat() {
        let c = SynthCalibration::default();
        let bw = bandwidth_profile(&profile(ConditionSpec::PacketLoss { pct: 5 }), &c).unwrap();
        assert!(bw.iter().all(|&b| b == 250.0));
    }

    #[test]
    fn drop_then_recovery() {
        let c = SynthCalibration::default();
        let p = profile(ConditionSpec::BandwidthDrop {
            initial_kbps: 250,
            drop_to_kbps: 50.0,
            drop_times: vec![60.0],
        });
        let nominal = nominal_bandwidth(&p, &c).unwrap();
        // slot n is nominal[n - 1]
        assert!(nominal[..59].iter().all(|&b| b == 250.0));
        assert!(nominal[59..69].iter().all(|&b| b == 50.0));
        // +40 kBps per second until the initial level is regained
        assert_eq!(&nominal[69..75], &[90.0, 130.0, 170.0, 210.0, 250.0, 250.0]);
        let noisy = bandwidth_profile(&p, &c).unwrap();
        for (n, b) in nominal.iter().zip(&noisy) {
            assert!((b / n - 1.0).abs() <= 0.05 + 1e-12);
        }
    }

    #[test]
    fn later_drops_recover_slowly() {
        let c = SynthCalibration::default();
        let p = profile(ConditionSpec::BandwidthDrop {
            initial_kbps: 250,
            drop_to_kbps: 30.0,
            drop_times: vec![40.0, 120.0],
        });
        let nominal = nominal_bandwidth(&p, &c).unwrap();
        assert_eq!(nominal[129], 40.0);
        assert_eq!(nominal[130], 50.0);
        assert_eq!(nominal[49], 70.0);
    }

    #[test]
    fn out_of_vocabulary_rejected() {
        let c = SynthCalibration::default();
        for cond in [
            ConditionSpec::BandwidthLimit { kbps: 100 },
            ConditionSpec::PacketLoss { pct: 3 },
            ConditionSpec::BandwidthDrop {
                initial_kbps: 250,
                drop_to_kbps: 5.0,
                drop_times: vec![10.0],
            },
            ConditionSpec::BandwidthDrop {
                initial_kbps: 250,
                drop_to_kbps: 50.0,
                drop_times: vec![],
            },
        ] {
            assert!(matches!(bandwidth_profile(&profile(cond), &c), Err(SynthError::InvalidProfile(_))));
        }
    }

    #[test]
    fn drop_meta_uses_nearest_level() {
        let p = profile(ConditionSpec::BandwidthDrop {
            initial_kbps: 250,
            drop_to_kbps: 50.0,
            drop_times: vec![60.0],
        });
        assert_eq!(p.meta().condition_level, Level::Bandwidth(60));
        assert!(p.meta().validate().is_ok());
    }

    #[test]
    fn profile_json() {
        let p = profile(ConditionSpec::BandwidthDrop {
            initial_kbps: 250,
            drop_to_kbps: 42.5,
            drop_times: vec![33.0, 120.5],
        });
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains(r#""kind":"bandwidth_drop""#));
        assert_eq!(serde_json::from_str::<ConditionProfile>(&s).unwrap(), p);
        let d: ConditionProfile =
            serde_json::from_str(r#"{"session_id":"x","condition":{"kind":"packet_loss","pct":2},"seed":1}"#).unwrap();
        assert_eq!(d.duration, 240.0);
    }
}
