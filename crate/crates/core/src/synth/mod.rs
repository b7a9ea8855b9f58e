//! Synthetic video-call sessions with known ground truth.
//!
//! A [`ConditionProfile`] fixes the network condition and seed; the
//! generator produces the packet trace a receiver would capture, the
//! receiver's focus-window capture log, per-second quality scores, and the
//! resulting per-slot labels. All constants live in [`SynthCalibration`].

mod calibration;
mod corpus;
mod profile;
mod session;
mod traffic;

pub use self::calibration::{PiqeTier, SynthCalibration};
pub use self::corpus::{generate_corpus, CorpusGroup, CorpusSpec};
pub use self::profile::{bandwidth_profile, nominal_bandwidth, ConditionProfile, ConditionSpec, DEFAULT_DURATION_S};
pub use self::session::{generate_session, simulate_constant_fps, SyntheticSession};
pub use self::traffic::{generate_slot, sample_slot_traffic, FrameEvent, SlotPlan, SlotSample, SlotTraffic, StreamState};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}
