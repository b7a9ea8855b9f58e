use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{
    accuracy, confusion_matrix, empirical_cdf, integer_tolerances, kde_density, mae, tolerance_curve, ConfusionMatrix,
    EvalError,
};
use crate::features::{FeatureMode, SlotKey};
use crate::ground_truth::{Rating, SlotLabels};
use crate::model::{Target, Task};
use crate::session::{ConditionKind, Level, SessionMeta};

pub const REPORT_VERSION: u32 = 1;
pub const MAX_TOLERANCE_FPS: u32 = 10;

/// Out-of-fold (or held-out) predictions of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub target: Target,
    pub mode: FeatureMode,
    pub keys: Vec<SlotKey>,
    /// Rating predictions are class indices.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaeCell {
    pub condition: ConditionKind,
    pub target: Target,
    pub mode: FeatureMode,
    pub mae: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    /// `None` is the whole corpus.
    pub condition: Option<ConditionKind>,
    pub target: Target,
    pub mode: FeatureMode,
    pub accuracy: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceCurve {
    /// Condition kind (`BandwidthLimit`, ...) or loss level (`loss5pct`).
    pub group: String,
    pub target: Target,
    pub mode: FeatureMode,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionEntry {
    pub target: Target,
    pub mode: FeatureMode,
    pub matrix: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub metric: String,
    pub group: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub conditions: Vec<ConditionKind>,
    pub mae_by_condition: Vec<MaeCell>,
    pub rating_accuracy: Vec<AccuracyCell>,
    pub tolerance_curves: Vec<ToleranceCurve>,
    pub confusion: Vec<ConfusionEntry>,
    pub cdfs: Vec<Distribution>,
    pub densities: Vec<Distribution>,
    /// Violations of `accuracy(tol) >= 1 - mae/tol`; empty when consistent.
    pub sanity_violations: Vec<String>,
}

impl EvalReport {
    pub fn mae(&self, condition: ConditionKind, target: Target, mode: FeatureMode) -> Option<f64> {
        self.mae_by_condition
            .iter()
            .find(|c| c.condition == condition && c.target == target && c.mode == mode)
            .map(|c| c.mae)
    }

    pub fn accuracy(&self, condition: Option<ConditionKind>, target: Target, mode: FeatureMode) -> Option<f64> {
        self.rating_accuracy
            .iter()
            .find(|c| c.condition == condition && c.target == target && c.mode == mode)
            .map(|c| c.accuracy)
    }

    pub fn curve(&self, group: &str, target: Target, mode: FeatureMode) -> Option<&ToleranceCurve> {
        self.tolerance_curves
            .iter()
            .find(|c| c.group == group && c.target == target && c.mode == mode)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct Aligned<'a> {
    set: &'a PredictionSet,
    pred: Vec<f64>,
    truth: Vec<f64>,
    condition: Vec<ConditionKind>,
    level: Vec<Level>,
}

fn align<'a>(
    set: &'a PredictionSet,
    labels: &BTreeMap<&SlotKey, &SlotLabels>,
    sessions: &BTreeMap<&str, &SessionMeta>,
) -> Result<Aligned<'a>, EvalError> {
    if set.keys.len() != set.values.len() {
        return Err(EvalError::LengthMismatch {
            pred: set.values.len(),
            truth: set.keys.len(),
        });
    }
    let mut unmatched = Vec::new();
    let mut a = Aligned {
        set,
        pred: Vec::with_capacity(set.keys.len()),
        truth: Vec::with_capacity(set.keys.len()),
        condition: Vec::with_capacity(set.keys.len()),
        level: Vec::with_capacity(set.keys.len()),
    };
    let predicted: BTreeSet<&SlotKey> = set.keys.iter().collect();
    for (k, &v) in set.keys.iter().zip(&set.values) {
        let truth = labels.get(k).and_then(|l| set.target.label(l));
        let meta = sessions.get(k.session_id.as_str());
        match (truth, meta) {
            (Some(t), Some(m)) => {
                a.pred.push(v);
                a.truth.push(t);
                a.condition.push(m.condition_kind);
                a.level.push(m.condition_level);
            }
            _ => unmatched.push(format!("{} {} prediction {k}", set.target, set.mode)),
        }
    }
    for (k, l) in labels {
        if set.target.label(l).is_some() && !predicted.contains(k) {
            unmatched.push(format!("{} {} label {k}", set.target, set.mode));
        }
    }
    if !unmatched.is_empty() {
        return Err(EvalError::AlignmentError(unmatched));
    }
    if a.pred.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(a)
}

fn select(a: &Aligned<'_>, keep: impl Fn(usize) -> bool) -> (Vec<f64>, Vec<f64>) {
    (0..a.pred.len()).filter(|&i| keep(i)).map(|i| (a.pred[i], a.truth[i])).unzip()
}

fn rating(v: f64) -> Rating {
    Rating::from_index(v.round().max(0.0) as usize).unwrap_or(Rating::Bad)
}

/// Builds every table and export from aligned predictions.
pub fn per_condition_report(
    predictions: &[PredictionSet],
    labels: &[SlotLabels],
    sessions: &[SessionMeta],
) -> Result<EvalReport, EvalError> {
    let label_map: BTreeMap<&SlotKey, &SlotLabels> = labels.iter().map(|l| (&l.key, l)).collect();
    let meta_map: BTreeMap<&str, &SessionMeta> = sessions.iter().map(|s| (s.session_id.as_str(), s)).collect();
    let aligned = predictions
        .iter()
        .map(|p| align(p, &label_map, &meta_map))
        .collect::<Result<Vec<_>, _>>()?;

    let conditions: Vec<ConditionKind> = ConditionKind::ALL
        .into_iter()
        .filter(|k| sessions.iter().any(|s| s.condition_kind == *k))
        .collect();
    let mut report = EvalReport {
        version: REPORT_VERSION,
        conditions: conditions.clone(),
        mae_by_condition: Vec::new(),
        rating_accuracy: Vec::new(),
        tolerance_curves: Vec::new(),
        confusion: Vec::new(),
        cdfs: Vec::new(),
        densities: Vec::new(),
        sanity_violations: Vec::new(),
    };
    let tols: Vec<f64> = integer_tolerances(MAX_TOLERANCE_FPS);

    for a in &aligned {
        let (target, mode) = (a.set.target, a.set.mode);
        match target.task() {
            Task::Regression => {
                for &c in &conditions {
                    let (p, t) = select(a, |i| a.condition[i] == c);
                    if p.is_empty() {
                        continue;
                    }
                    report.mae_by_condition.push(MaeCell {
                        condition: c,
                        target,
                        mode,
                        mae: mae(&p, &t)?,
                        n: p.len(),
                    });
                }
                if target == Target::Fps {
                    let mut groups: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
                    groups.push(("all".into(), a.pred.clone(), a.truth.clone()));
                    for &c in &conditions {
                        let (p, t) = select(a, |i| a.condition[i] == c);
                        groups.push((c.to_string(), p, t));
                    }
                    let losses: BTreeSet<Level> = a.level.iter().copied().filter(|l| matches!(l, Level::Loss(_))).collect();
                    for l in losses {
                        let (p, t) = select(a, |i| a.level[i] == l);
                        groups.push((l.to_string(), p, t));
                    }
                    for (group, p, t) in groups {
                        if p.is_empty() {
                            continue;
                        }
                        let points = tolerance_curve(&p, &t, &tols)?;
                        let m = mae(&p, &t)?;
                        for &(tol, acc) in points.iter().filter(|pt| pt.0 > 0.0) {
                            if acc < 1.0 - m / tol - 1e-12 {
                                report
                                    .sanity_violations
                                    .push(format!("{group} {mode}: accuracy {acc} at tol {tol} below 1 - {m}/{tol}"));
                            }
                        }
                        report.tolerance_curves.push(ToleranceCurve {
                            group,
                            target,
                            mode,
                            points,
                        });
                    }
                }
            }
            Task::Classification => {
                let pr: Vec<Rating> = a.pred.iter().map(|&v| rating(v)).collect();
                let tr: Vec<Rating> = a.truth.iter().map(|&v| rating(v)).collect();
                report.rating_accuracy.push(AccuracyCell {
                    condition: None,
                    target,
                    mode,
                    accuracy: accuracy(&pr, &tr)?,
                    n: pr.len(),
                });
                for &c in &conditions {
                    let idx: Vec<usize> = (0..pr.len()).filter(|&i| a.condition[i] == c).collect();
                    if idx.is_empty() {
                        continue;
                    }
                    let p: Vec<Rating> = idx.iter().map(|&i| pr[i]).collect();
                    let t: Vec<Rating> = idx.iter().map(|&i| tr[i]).collect();
                    report.rating_accuracy.push(AccuracyCell {
                        condition: Some(c),
                        target,
                        mode,
                        accuracy: accuracy(&p, &t)?,
                        n: p.len(),
                    });
                }
                report.confusion.push(ConfusionEntry {
                    target,
                    mode,
                    matrix: confusion_matrix(&pr, &tr)?,
                });
            }
        }
    }

    // Label distributions: CDFs over the corpus, FPS densities per loss level.
    let metrics: [(&str, Target); 3] = [("fps", Target::Fps), ("piqe", Target::Piqe), ("brisque", Target::Brisque)];
    for (name, target) in metrics {
        let vals: Vec<f64> = labels.iter().filter_map(|l| target.label(l)).collect();
        if vals.is_empty() {
            continue;
        }
        report.cdfs.push(Distribution {
            metric: name.into(),
            group: "all".into(),
            points: empirical_cdf(&vals),
        });
        report.densities.push(Distribution {
            metric: name.into(),
            group: "all".into(),
            points: kde_density(&vals)?,
        });
    }
    let mut fps_by_loss: BTreeMap<Level, Vec<f64>> = BTreeMap::new();
    for l in labels {
        if let Some(m) = meta_map.get(l.key.session_id.as_str()) {
            if let Level::Loss(_) = m.condition_level {
                fps_by_loss.entry(m.condition_level).or_default().push(l.fps);
            }
        }
    }
    for (level, vals) in fps_by_loss {
        report.densities.push(Distribution {
            metric: "fps".into(),
            group: level.to_string(),
            points: kde_density(&vals)?,
        });
    }
    if !report.sanity_violations.is_empty() {
        log::error!("tolerance/MAE consistency check failed: {:?}", report.sanity_violations);
    }
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn mode_label(m: FeatureMode) -> &'static str {
    match m {
        FeatureMode::Udp => "UDP",
        FeatureMode::Rtp => "RTP",
    }
}

/// Writes `report.json` and the per-table CSVs into `dir`; returns the file
/// names written.
pub fn write_report(report: &EvalReport, dir: &Path) -> std::io::Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: &[u8]| -> std::io::Result<()> {
        fs::write(dir.join(&name), bytes)?;
        written.push(name);
        Ok(())
    };
    put("report.json".into(), report.to_json().as_bytes())?;
    let modes: Vec<FeatureMode> = [FeatureMode::Rtp, FeatureMode::Udp]
        .into_iter()
        .filter(|m| {
            report.mae_by_condition.iter().any(|c| c.mode == *m) || report.rating_accuracy.iter().any(|c| c.mode == *m)
        })
        .collect();

    let mut t3 = Vec::new();
    writeln!(t3, "condition,model,fps_mae,brisque_mae,piqe_mae")?;
    for &c in &report.conditions {
        for &m in &modes {
            writeln!(
                t3,
                "{c},{},{},{},{}",
                mode_label(m),
                fmt_opt(report.mae(c, Target::Fps, m)),
                fmt_opt(report.mae(c, Target::Brisque, m)),
                fmt_opt(report.mae(c, Target::Piqe, m))
            )?;
        }
    }
    put("table3_mae.csv".into(), &t3)?;

    let mut t4 = Vec::new();
    writeln!(t4, "condition,model,brisque_rating_acc,piqe_rating_acc")?;
    let rows = report.conditions.iter().map(|&c| Some(c)).chain([None]);
    for c in rows {
        let name = c.map_or("all".to_string(), |c| c.to_string());
        for &m in &modes {
            writeln!(
                t4,
                "{name},{},{},{}",
                mode_label(m),
                fmt_opt(report.accuracy(c, Target::BrisqueRating, m)),
                fmt_opt(report.accuracy(c, Target::PiqeRating, m))
            )?;
        }
    }
    put("table4_rating_acc.csv".into(), &t4)?;

    // one confusion table per rating target; the UDP model when present
    for target in [Target::BrisqueRating, Target::PiqeRating] {
        let entry = report
            .confusion
            .iter()
            .filter(|e| e.target == target)
            .min_by_key(|e| e.mode != FeatureMode::Udp);
        let Some(e) = entry else { continue };
        let mut t5 = Vec::new();
        write!(t5, "actual")?;
        for c in &e.matrix.classes {
            write!(t5, ",pred_{c}_pct")?;
        }
        writeln!(t5, ",count")?;
        for (actual, row) in &e.matrix.rows {
            write!(t5, "{actual}")?;
            for v in row {
                write!(t5, ",{:.2}", v * 100.0)?;
            }
            writeln!(t5, ",{}", e.matrix.row_total(*actual))?;
        }
        put(format!("table5_confusion_{}.csv", target.as_str().replace('-', "_")), &t5)?;
    }

    let mut f6 = Vec::new();
    writeln!(f6, "group,model,tolerance_fps,accuracy")?;
    for c in &report.tolerance_curves {
        for (tol, acc) in &c.points {
            writeln!(f6, "{},{},{tol},{acc:.6}", c.group, mode_label(c.mode))?;
        }
    }
    put("fig6_tolerance.csv".into(), &f6)?;

    for d in &report.cdfs {
        let mut out = Vec::new();
        writeln!(out, "x,cdf")?;
        for (x, y) in &d.points {
            writeln!(out, "{x},{y}")?;
        }
        put(format!("cdf_{}.csv", d.metric), &out)?;
    }
    for d in &report.densities {
        let mut out = Vec::new();
        writeln!(out, "x,density")?;
        for (x, y) in &d.points {
            writeln!(out, "{x},{y}")?;
        }
        put(format!("density_{}_{}.csv", d.metric, d.group), &out)?;
    }
    Ok(written)
}

#[derive(Serialize, Deserialize)]
struct PredictionRow {
    session_id: String,
    slot_end: u32,
    target: Target,
    mode: FeatureMode,
    value: f64,
    /// Class name for rating targets, empty otherwise.
    rating: String,
}

/// `session_id,slot_end,target,mode,value,rating`, one row per prediction.
pub fn write_predictions_csv<W: std::io::Write>(out: W, sets: &[PredictionSet]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for s in sets {
        for (k, &value) in s.keys.iter().zip(&s.values) {
            let rating = match s.target.task() {
                Task::Classification => rating(value).to_string(),
                Task::Regression => String::new(),
            };
            w.serialize(PredictionRow {
                session_id: k.session_id.clone(),
                slot_end: k.slot_end,
                target: s.target,
                mode: s.mode,
                value,
                rating,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Groups rows by (target, mode) in order of first appearance.
pub fn read_predictions_csv<R: std::io::Read>(reader: R) -> Result<Vec<PredictionSet>, csv::Error> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut sets: Vec<PredictionSet> = Vec::new();
    for row in rdr.deserialize::<PredictionRow>() {
        let row = row?;
        let pos = match sets.iter().position(|s| s.target == row.target && s.mode == row.mode) {
            Some(p) => p,
            None => {
                sets.push(PredictionSet {
                    target: row.target,
                    mode: row.mode,
                    keys: Vec::new(),
                    values: Vec::new(),
                });
                sets.len() - 1
            }
        };
        sets[pos].keys.push(SlotKey::new(row.session_id, row.slot_end));
        sets[pos].values.push(row.value);
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground_truth::Rating::*;

    fn meta(id: &str, kind: ConditionKind, level: Level) -> SessionMeta {
        SessionMeta::new(id, kind, level, 3.0).unwrap()
    }

    fn labels(id: &str, fps: [f64; 3], piqe: [Rating; 3]) -> Vec<SlotLabels> {
        (0..3)
            .map(|i| SlotLabels {
                key: SlotKey::new(id, i as u32 + 1),
                fps: fps[i],
                brisque: Some(50.0),
                piqe: Some(30.0 + i as f64),
                brisque_rating: Some(Fair),
                piqe_rating: Some(piqe[i]),
            })
            .collect()
    }

    fn set(target: Target, mode: FeatureMode, keys: &[SlotKey], values: Vec<f64>) -> PredictionSet {
        PredictionSet {
            target,
            mode,
            keys: keys.to_vec(),
            values,
        }
    }

    fn fixture() -> (Vec<SessionMeta>, Vec<SlotLabels>, Vec<SlotKey>) {
        let s = vec![meta("a", ConditionKind::PacketLoss, Level::Loss(0))];
        let l = labels("a", [20.0, 18.0, 15.0], [Good, Good, Fair]);
        let keys = l.iter().map(|l| l.key.clone()).collect();
        (s, l, keys)
    }

    #[test]
    fn single_condition_report() {
        let (s, l, keys) = fixture();
        let preds = vec![
            set(Target::Fps, FeatureMode::Udp, &keys, vec![19.0, 18.0, 17.0]),
            set(Target::PiqeRating, FeatureMode::Udp, &keys, vec![1.0, 2.0, 2.0]),
        ];
        let r = per_condition_report(&preds, &l, &s).unwrap();
        assert_eq!(r.conditions, vec![ConditionKind::PacketLoss]);
        assert_eq!(r.mae_by_condition.len(), 1);
        assert_eq!(r.mae(ConditionKind::PacketLoss, Target::Fps, FeatureMode::Udp), Some(1.0));
        assert!((r.accuracy(None, Target::PiqeRating, FeatureMode::Udp).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(r.sanity_violations.is_empty());
        let c = r.curve("loss0pct", Target::Fps, FeatureMode::Udp).unwrap();
        assert_eq!(c.points[1], (1.0, 2.0 / 3.0));
        assert_eq!(c.points[2], (2.0, 1.0));
        let m = &r.confusion[0].matrix;
        assert_eq!(m.rows, vec![(Good, vec![0.5, 0.5]), (Fair, vec![0.0, 1.0])]);
    }

    #[test]
    fn missing_prediction_is_named() {
        let (s, l, keys) = fixture();
        let preds = vec![set(Target::Fps, FeatureMode::Udp, &keys[..2], vec![19.0, 18.0])];
        match per_condition_report(&preds, &l, &s) {
            Err(EvalError::AlignmentError(k)) => {
                assert_eq!(k.len(), 1);
                assert!(k[0].contains("a@3"), "{k:?}");
            }
            other => panic!("{other:?}"),
        }
        let stray = vec![set(Target::Fps, FeatureMode::Udp, &[SlotKey::new("zz", 1)], vec![1.0])];
        assert!(matches!(per_condition_report(&stray, &l, &s), Err(EvalError::AlignmentError(_))));
    }

    #[test]
    fn csv_tables() {
        let (s, l, keys) = fixture();
        let preds = vec![
            set(Target::Fps, FeatureMode::Udp, &keys, vec![19.0, 18.0, 17.0]),
            set(Target::Fps, FeatureMode::Rtp, &keys, vec![20.0, 18.0, 15.0]),
            set(Target::PiqeRating, FeatureMode::Udp, &keys, vec![1.0, 1.0, 2.0]),
        ];
        let r = per_condition_report(&preds, &l, &s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report(&r, dir.path()).unwrap();
        let t3 = fs::read_to_string(dir.path().join("table3_mae.csv")).unwrap();
        assert_eq!(
            t3,
            "condition,model,fps_mae,brisque_mae,piqe_mae\nPacketLoss,RTP,0.0000,,\nPacketLoss,UDP,1.0000,,\n"
        );
        let t5 = fs::read_to_string(dir.path().join("table5_confusion_piqe_rating.csv")).unwrap();
        assert_eq!(t5, "actual,pred_Good_pct,pred_Fair_pct,count\nGood,100.00,0.00,2\nFair,0.00,100.00,1\n");
        for f in ["report.json", "table4_rating_acc.csv", "fig6_tolerance.csv", "cdf_fps.csv", "density_fps_loss0pct.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back: EvalReport = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn predictions_csv_round_trip() {
        let (_, _, keys) = fixture();
        let sets = vec![
            set(Target::Fps, FeatureMode::Udp, &keys, vec![19.25, 18.0, 1.0 / 3.0]),
            set(Target::PiqeRating, FeatureMode::Rtp, &keys, vec![1.0, 2.0, 4.0]),
        ];
        let mut buf = Vec::new();
        write_predictions_csv(&mut buf, &sets).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("session_id,slot_end,target,mode,value,rating\na,1,fps,udp,19.25,\n"));
        assert!(text.contains("a,3,piqe-rating,rtp,4.0,Bad\n"), "{text}");
        assert_eq!(read_predictions_csv(buf.as_slice()).unwrap(), sets);
    }
}
