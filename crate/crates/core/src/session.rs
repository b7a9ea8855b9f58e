//! Session-level metadata: which network condition a recorded or generated
//! call was subjected to.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Bandwidth caps used when recording sessions, in kilobytes per second.
pub const BANDWIDTH_LEVELS_KBPS: [u32; 5] = [250, 125, 60, 30, 15];
/// Packet loss rates used when recording sessions, in percent.
pub const LOSS_LEVELS_PCT: [u32; 5] = [0, 1, 2, 5, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConditionKind {
    BandwidthLimit,
    BandwidthDrop,
    PacketLoss,
}

impl ConditionKind {
    pub const ALL: [ConditionKind; 3] = [
        ConditionKind::BandwidthLimit,
        ConditionKind::BandwidthDrop,
        ConditionKind::PacketLoss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionKind::BandwidthLimit => "BandwidthLimit",
            ConditionKind::BandwidthDrop => "BandwidthDrop",
            ConditionKind::PacketLoss => "PacketLoss",
        }
    }
}

impl fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionKind {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "bandwidthlimit" | "limit" => Ok(ConditionKind::BandwidthLimit),
            "bandwidthdrop" | "drop" => Ok(ConditionKind::BandwidthDrop),
            "packetloss" | "loss" => Ok(ConditionKind::PacketLoss),
            _ => Err(SessionError::UnknownKind(s.to_string())),
        }
    }
}

/// Level within a condition. Rendered as `250kBps` or `loss5pct`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Bandwidth(u32),
    Loss(u32),
}

impl Level {
    pub fn validate(self) -> Result<Self, SessionError> {
        let ok = match self {
            Level::Bandwidth(k) => BANDWIDTH_LEVELS_KBPS.contains(&k),
            Level::Loss(p) => LOSS_LEVELS_PCT.contains(&p),
        };
        if ok {
            Ok(self)
        } else {
            Err(SessionError::OutOfVocabulary(self.to_string()))
        }
    }

    /// Nearest bandwidth level in log space.
    pub fn nearest_bandwidth(kbps: f64) -> Level {
        let best = BANDWIDTH_LEVELS_KBPS
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = (kbps.ln() - f64::from(a).ln()).abs();
                let db = (kbps.ln() - f64::from(b).ln()).abs();
                da.total_cmp(&db)
            })
            .expect("non-empty vocabulary");
        Level::Bandwidth(best)
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Bandwidth(k) => write!(f, "{k}kBps"),
            Level::Loss(p) => write!(f, "loss{p}pct"),
        }
    }
}

impl FromStr for Level {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SessionError::BadLevel(s.to_string());
        if let Some(k) = s.strip_suffix("kBps") {
            return Level::Bandwidth(k.parse().map_err(|_| bad())?).validate();
        }
        if let Some(p) = s.strip_prefix("loss").and_then(|r| r.strip_suffix("pct")) {
            return Level::Loss(p.parse().map_err(|_| bad())?).validate();
        }
        Err(bad())
    }
}

impl Serialize for Level {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub condition_kind: ConditionKind,
    pub condition_level: Level,
    /// Session length in seconds.
    pub duration: f64,
}

impl SessionMeta {
    pub fn new(
        session_id: impl Into<String>,
        condition_kind: ConditionKind,
        condition_level: Level,
        duration: f64,
    ) -> Result<Self, SessionError> {
        let meta = SessionMeta {
            session_id: session_id.into(),
            condition_kind,
            condition_level,
            duration,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        self.condition_level.validate()?;
        let matches = matches!(
            (self.condition_kind, self.condition_level),
            (ConditionKind::PacketLoss, Level::Loss(_))
                | (ConditionKind::BandwidthLimit, Level::Bandwidth(_))
                | (ConditionKind::BandwidthDrop, Level::Bandwidth(_))
        );
        if !matches {
            return Err(SessionError::KindLevelMismatch(
                self.condition_kind,
                self.condition_level.to_string(),
            ));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(SessionError::BadDuration(self.duration));
        }
        Ok(())
    }

    pub fn stratum(&self) -> (ConditionKind, Level) {
        (self.condition_kind, self.condition_level)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown condition kind `{0}`")]
    UnknownKind(String),
    #[error("malformed condition level `{0}` (expected e.g. `250kBps` or `loss5pct`)")]
    BadLevel(String),
    #[error("condition level `{0}` is outside the dataset vocabulary")]
    OutOfVocabulary(String),
    #[error("condition {0} cannot carry level `{1}`")]
    KindLevelMismatch(ConditionKind, String),
    #[error("invalid session duration {0}")]
    BadDuration(f64),
}
