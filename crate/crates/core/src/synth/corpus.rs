use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::profile::{stream_rng, DEFAULT_DURATION_S};
use super::{generate_session, ConditionProfile, ConditionSpec, SynthCalibration, SynthError, SyntheticSession};
use crate::session::{BANDWIDTH_LEVELS_KBPS, LOSS_LEVELS_PCT};

const STREAM_CORPUS: u64 = 100;

/// A block of sessions sharing one condition. Drop sessions draw their drop
/// instants (and a +/-`drop_to_spread` variation of the drop target) per
/// session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusGroup {
    BandwidthLimit {
        kbps: u32,
        count: usize,
    },
    BandwidthDrop {
        #[serde(default = "default_initial")]
        initial_kbps: u32,
        drop_to_kbps: f64,
        count: usize,
        #[serde(default = "default_drops")]
        drops: usize,
        #[serde(default = "default_spread")]
        drop_to_spread: f64,
    },
    PacketLoss {
        pct: u32,
        count: usize,
    },
}

fn default_initial() -> u32 {
    BANDWIDTH_LEVELS_KBPS[0]
}

fn default_drops() -> usize {
    2
}

fn default_spread() -> f64 {
    0.2
}

impl CorpusGroup {
    fn count(&self) -> usize {
        match self {
            CorpusGroup::BandwidthLimit { count, .. }
            | CorpusGroup::BandwidthDrop { count, .. }
            | CorpusGroup::PacketLoss { count, .. } => *count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default)]
    pub groups: Vec<CorpusGroup>,
    /// Fully specified extra sessions, used verbatim.
    #[serde(default)]
    pub sessions: Vec<ConditionProfile>,
}

fn default_duration() -> f64 {
    DEFAULT_DURATION_S
}

impl CorpusSpec {
    /// 107 four-minute sessions: 36 bandwidth limits (8/7/7/7/7 across the
    /// five levels), 36 drops (9 per target 125/60/30/15) and 35 loss
    /// sessions (7 per level).
    pub fn reference_mix() -> Self {
        let mut groups = Vec::new();
        for (i, &kbps) in BANDWIDTH_LEVELS_KBPS.iter().enumerate() {
            groups.push(CorpusGroup::BandwidthLimit {
                kbps,
                count: if i == 0 { 8 } else { 7 },
            });
        }
        for &kbps in &BANDWIDTH_LEVELS_KBPS[1..] {
            groups.push(CorpusGroup::BandwidthDrop {
                initial_kbps: default_initial(),
                drop_to_kbps: f64::from(kbps),
                count: 9,
                drops: default_drops(),
                drop_to_spread: default_spread(),
            });
        }
        for &pct in &LOSS_LEVELS_PCT {
            groups.push(CorpusGroup::PacketLoss { pct, count: 7 });
        }
        CorpusSpec {
            duration: DEFAULT_DURATION_S,
            groups,
            sessions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(CorpusGroup::count).sum::<usize>() + self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concrete per-session profiles; every seed derives from `seed`.
    pub fn expand(&self, seed: u64, calib: &SynthCalibration) -> Result<Vec<ConditionProfile>, SynthError> {
        let mut rng = stream_rng(seed, STREAM_CORPUS);
        let mut out = Vec::with_capacity(self.len());
        for group in &self.groups {
            for k in 0..group.count() {
                let (id, condition) = match group {
                    CorpusGroup::BandwidthLimit { kbps, .. } => {
                        (format!("limit{kbps}-{k:02}"), ConditionSpec::BandwidthLimit { kbps: *kbps })
                    }
                    CorpusGroup::PacketLoss { pct, .. } => {
                        (format!("loss{pct}-{k:02}"), ConditionSpec::PacketLoss { pct: *pct })
                    }
                    CorpusGroup::BandwidthDrop {
                        initial_kbps,
                        drop_to_kbps,
                        drops,
                        drop_to_spread,
                        ..
                    } => {
                        let f = 1.0 + drop_to_spread * (2.0 * rng.random::<f64>() - 1.0);
                        let target = (drop_to_kbps * f).clamp(calib.drop_to_min_kbps, calib.drop_to_max_kbps);
                        let target = (target * 10.0).round() / 10.0;
                        // drop windows shrink with sessions shorter than the default
                        let scale = (self.duration / DEFAULT_DURATION_S).min(1.0);
                        let mut times = Vec::with_capacity(*drops);
                        let mut t = scale * rng.random_range(calib.first_drop_s.0..calib.first_drop_s.1);
                        for _ in 0..*drops {
                            if t.round() >= self.duration {
                                break;
                            }
                            times.push(t.round());
                            t += scale * rng.random_range(calib.second_drop_gap_s.0..calib.second_drop_gap_s.1);
                        }
                        (
                            format!("drop{drop_to_kbps}-{k:02}"),
                            ConditionSpec::BandwidthDrop {
                                initial_kbps: *initial_kbps,
                                drop_to_kbps: target,
                                drop_times: times,
                            },
                        )
                    }
                };
                let profile = ConditionProfile {
                    session_id: id,
                    condition,
                    duration: self.duration,
                    seed: rng.random(),
                };
                profile.validate(calib)?;
                out.push(profile);
            }
        }
        for p in &self.sessions {
            p.validate(calib)?;
            out.push(p.clone());
        }
        let mut ids: Vec<&str> = out.iter().map(|p| p.session_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(SynthError::InvalidProfile(format!("duplicate session id {}", w[0])));
        }
        Ok(out)
    }
}

/// Generates every profile in parallel; output order follows `profiles`.
/// Holds all traces in memory, so large corpora are better processed one
/// session at a time with [`generate_session`].
pub fn generate_corpus(profiles: &[ConditionProfile], calib: &SynthCalibration) -> Result<Vec<SyntheticSession>, SynthError> {
    profiles.par_iter().map(|p| generate_session(p, calib)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{ConditionKind, Level};
    use std::collections::BTreeMap;

    #[test]
    fn reference_mix_composition() {
        let c = SynthCalibration::default();
        let spec = CorpusSpec::reference_mix();
        assert_eq!(spec.len(), 107);
        let profiles = spec.expand(7, &c).unwrap();
        let mut hist: BTreeMap<(ConditionKind, Level), usize> = BTreeMap::new();
        for p in &profiles {
            *hist.entry(p.meta().stratum()).or_default() += 1;
        }
        let kinds = |k: ConditionKind| hist.iter().filter(|(s, _)| s.0 == k).map(|(_, n)| *n).collect::<Vec<_>>();
        assert_eq!(kinds(ConditionKind::BandwidthLimit), vec![7, 7, 7, 7, 8]);
        assert_eq!(kinds(ConditionKind::PacketLoss), vec![7; 5]);
        assert_eq!(kinds(ConditionKind::BandwidthDrop), vec![9; 4]);
    }

    #[test]
    fn expansion_is_seeded() {
        let c = SynthCalibration::default();
        let spec = CorpusSpec::reference_mix();
        assert_eq!(spec.expand(1, &c).unwrap(), spec.expand(1, &c).unwrap());
        assert_ne!(spec.expand(1, &c).unwrap(), spec.expand(2, &c).unwrap());
    }

    #[test]
    fn spec_json() {
        let s = r#"{"groups":[{"kind":"bandwidth_limit","kbps":60,"count":2},
                    {"kind":"bandwidth_drop","drop_to_kbps":30,"count":1}]}"#;
        let spec: CorpusSpec = serde_json::from_str(s).unwrap();
        assert_eq!(spec.len(), 3);
        assert_eq!(spec.duration, 240.0);
        let back: CorpusSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let bad: CorpusSpec = serde_json::from_str(r#"{"groups":[{"kind":"packet_loss","pct":4,"count":1}]}"#).unwrap();
        assert!(bad.expand(0, &SynthCalibration::default()).is_err());
    }
}
