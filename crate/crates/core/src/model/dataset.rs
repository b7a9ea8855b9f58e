use std::collections::BTreeMap;

use super::{ModelError, Target};
use crate::features::{FeatureMode, SlotFeatures, SlotKey};
use crate::ground_truth::SlotLabels;
use crate::num::Real;

/// Feature rows joined with one target's labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<F> {
    pub schema: Vec<String>,
    pub keys: Vec<SlotKey>,
    pub rows: Vec<Vec<F>>,
    pub y: Vec<F>,
}

impl<F: Real> Dataset<F> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset<F> {
        Dataset {
            schema: self.schema.clone(),
            keys: idx.iter().map(|&i| self.keys[i].clone()).collect(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

/// Inner join of features and labels on `(session_id, slot_end)`, in
/// feature order. Slots whose target label is missing are skipped. Asking
/// for RTP columns from UDP-only features is a schema error.
pub fn build_dataset<F: Real>(
    features: &[SlotFeatures],
    labels: &[SlotLabels],
    mode: FeatureMode,
    target: Target,
) -> Result<Dataset<F>, ModelError> {
    let schema = mode.schema();
    if mode == FeatureMode::Rtp && features.iter().any(|f| f.rtp.is_none()) {
        return Err(ModelError::SchemaMismatch {
            missing: FeatureMode::Rtp.schema()[FeatureMode::Udp.schema().len()..].to_vec(),
            unexpected: Vec::new(),
        });
    }
    let by_key: BTreeMap<&SlotKey, &SlotLabels> = labels.iter().map(|l| (&l.key, l)).collect();
    let mut out = Dataset {
        schema,
        keys: Vec::new(),
        rows: Vec::new(),
        y: Vec::new(),
    };
    let mut unmatched = 0usize;
    for f in features {
        let Some(l) = by_key.get(&f.key) else {
            unmatched += 1;
            continue;
        };
        let (Some(y), Some(v)) = (target.label(l), f.vector(mode)) else {
            continue;
        };
        out.keys.push(f.key.clone());
        out.rows.push(v.into_iter().map(F::from_f64_lossy).collect());
        out.y.push(F::from_f64_lossy(y));
    }
    if unmatched > 0 {
        log::warn!("{unmatched} feature slots have no label row");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground_truth::Rating;

    fn feat(id: &str, slot: u32, rtp: bool) -> SlotFeatures {
        SlotFeatures {
            key: SlotKey::new(id, slot),
            udp: [f64::from(slot); 18],
            rtp: rtp.then_some([1.0; 11]),
        }
    }

    fn label(id: &str, slot: u32, piqe: Option<f64>) -> SlotLabels {
        SlotLabels {
            key: SlotKey::new(id, slot),
            fps: 20.0,
            brisque: piqe,
            piqe,
            brisque_rating: piqe.map(|_| Rating::Fair),
            piqe_rating: piqe.map(|_| Rating::Good),
        }
    }

    #[test]
    fn joins_and_skips_missing_scores() {
        let f = vec![feat("a", 1, false), feat("a", 2, false), feat("b", 1, false)];
        let l = vec![label("a", 1, Some(30.0)), label("a", 2, None)];
        let d: Dataset<f64> = build_dataset(&f, &l, FeatureMode::Udp, Target::Piqe).unwrap();
        assert_eq!(d.keys, vec![SlotKey::new("a", 1)]);
        assert_eq!(d.y, vec![30.0]);
        let d: Dataset<f32> = build_dataset(&f, &l, FeatureMode::Udp, Target::Fps).unwrap();
        assert_eq!(d.len(), 2);
        let d: Dataset<f64> = build_dataset(&f, &l, FeatureMode::Udp, Target::PiqeRating).unwrap();
        assert_eq!(d.y, vec![1.0]);
    }

    #[test]
    fn rtp_from_udp_only_is_schema_error() {
        let f = vec![feat("a", 1, false)];
        let l = vec![label("a", 1, Some(30.0))];
        match build_dataset::<f64>(&f, &l, FeatureMode::Rtp, Target::Fps) {
            Err(ModelError::SchemaMismatch { missing, .. }) => {
                assert_eq!(missing.len(), 11);
                assert_eq!(missing[0], "unique_rtp_ts_count");
            }
            other => panic!("{other:?}"),
        }
        let f = vec![feat("a", 1, true)];
        let d = build_dataset::<f64>(&f, &l, FeatureMode::Rtp, Target::Fps).unwrap();
        assert_eq!(d.rows[0].len(), 29);
    }
}
