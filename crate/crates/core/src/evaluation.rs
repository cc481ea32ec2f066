//! Group-wise evaluation: per-group accuracies, worst-group accuracy,
//! prevalence-weighted mean, confusion counts, and the spurious
//! misclassification rate.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::nn::Network;
use crate::testbed::Dataset;

/// Group weights (prevalence shares), normalized to sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupWeights {
    weights: BTreeMap<usize, f64>,
}

impl GroupWeights {
    /// Prevalence of each group in `data` (typically the unpruned train set).
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("cannot take group weights of empty dataset"));
        }
        let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
        for m in data.meta() {
            *counts.entry(m.group_id).or_insert(0) += 1;
        }
        let total = data.len() as f64;
        Ok(GroupWeights {
            weights: counts
                .into_iter()
                .map(|(g, c)| (g, c as f64 / total))
                .collect(),
        })
    }

    pub fn from_map(weights: BTreeMap<usize, f64>) -> Result<Self> {
        let sum: f64 = weights.values().sum();
        if weights.values().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "group weights must be nonnegative and sum to 1 (sum {sum})"
            )));
        }
        Ok(GroupWeights { weights })
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().map(|(&g, &w)| (g, w))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpuriousRateEntry {
    /// Class whose spurious feature the samples carry (c1).
    pub feature_class: usize,
    /// Class the samples actually belong to (c2).
    pub victim_class: usize,
    pub misclassified: u64,
    pub total: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub classes: usize,
    pub group_accuracy: BTreeMap<usize, f64>,
    pub group_correct: BTreeMap<usize, u64>,
    pub group_total: BTreeMap<usize, u64>,
    pub worst_group_accuracy: f64,
    pub weighted_mean_accuracy: f64,
    pub overall_accuracy: f64,
    /// Row-major `classes x classes`; rows are true labels.
    pub confusion: Vec<u64>,
    /// Filled by pipelines that know the (c1, c2) pairing.
    pub spurious_rates: Vec<SpuriousRateEntry>,
    pub warnings: Vec<String>,
}

/// Argmax predictions; ties break toward the lowest class index.
pub fn predict(net: &Network, data: &Dataset) -> Result<Vec<usize>> {
    if data.is_empty() {
        return Err(Error::invalid("cannot predict on an empty dataset"));
    }
    if data.feature_dim() != net.arch().input || data.classes() != net.arch().classes {
        return Err(Error::ShapeMismatch(
            "dataset shape does not match network".into(),
        ));
    }
    const CHUNK: usize = 512;
    let dim = data.feature_dim();
    let mut feats = vec![0.0f32; CHUNK.min(data.len()) * dim];
    let mut preds = Vec::with_capacity(data.len());
    let positions: Vec<usize> = (0..data.len()).collect();
    for chunk in positions.chunks(CHUNK) {
        let batch = &mut feats[..chunk.len() * dim];
        data.fill_normalized_rows(chunk, batch);
        let probs = net.forward_probs(batch)?;
        let rows: Vec<usize> = exec::map_indexed(chunk.len(), |k| argmax(probs.row(k)));
        preds.extend(rows);
    }
    Ok(preds)
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0usize;
    let mut best_v = row[0];
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > best_v {
            best_v = v;
            best = c;
        }
    }
    best
}

/// Builds the report from already-computed predictions. Split out from
/// [`evaluate_groups`] so metric logic is testable without a network.
pub fn report_from_predictions(
    predictions: &[usize],
    test: &Dataset,
    weights: &GroupWeights,
) -> Result<EvalReport> {
    if predictions.len() != test.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} samples",
            predictions.len(),
            test.len()
        )));
    }
    let classes = test.classes();
    let mut confusion = vec![0u64; classes * classes];
    let mut group_correct: BTreeMap<usize, u64> = BTreeMap::new();
    let mut group_total: BTreeMap<usize, u64> = BTreeMap::new();
    let mut correct = 0u64;
    for (pos, &pred) in predictions.iter().enumerate() {
        if pred >= classes {
            return Err(Error::invalid(format!("prediction {pred} out of range")));
        }
        let m = test.meta_at(pos);
        confusion[m.label * classes + pred] += 1;
        let hit = u64::from(pred == m.label);
        correct += hit;
        *group_total.entry(m.group_id).or_insert(0) += 1;
        *group_correct.entry(m.group_id).or_insert(0) += hit;
    }

    let group_accuracy: BTreeMap<usize, f64> = group_total
        .iter()
        .map(|(&g, &t)| (g, group_correct[&g] as f64 / t as f64))
        .collect();
    let worst_group_accuracy = group_accuracy
        .values()
        .fold(f64::INFINITY, |a, &b| a.min(b));

    let mut warnings = Vec::new();
    let mut weighted_sum = 0.0f64;
    let mut weight_mass = 0.0f64;
    for (g, w) in weights.iter() {
        match group_accuracy.get(&g) {
            Some(&acc) => {
                weighted_sum += w * acc;
                weight_mass += w;
            }
            None => warnings.push(format!(
                "group {g} has weight {w} but no test samples; excluded from weighted mean"
            )),
        }
    }
    if weight_mass <= 0.0 {
        return Err(Error::invalid(
            "no weighted group is present in the test set",
        ));
    }
    // Groups present in the test set but absent from the weights simply get
    // weight zero (e.g. the injected victim group under train prevalence).
    let weighted_mean_accuracy = weighted_sum / weight_mass;

    Ok(EvalReport {
        classes,
        group_accuracy,
        group_correct,
        group_total,
        worst_group_accuracy,
        weighted_mean_accuracy,
        overall_accuracy: correct as f64 / test.len() as f64,
        confusion,
        spurious_rates: Vec::new(),
        warnings,
    })
}

/// Per-group accuracies, WGA (their minimum), and the prevalence-weighted
/// mean accuracy.
pub fn evaluate_groups(net: &Network, test: &Dataset, weights: &GroupWeights) -> Result<EvalReport> {
    let preds = predict(net, test)?;
    report_from_predictions(&preds, test, weights)
}

/// Fraction of c2 test samples carrying c1's spurious feature that are
/// predicted as c1.
pub fn spurious_misclassification_rate(
    net: &Network,
    test: &Dataset,
    feature_class: usize,
    victim_class: usize,
) -> Result<SpuriousRateEntry> {
    let preds = predict(net, test)?;
    rate_from_predictions(&preds, test, feature_class, victim_class)
}

pub fn rate_from_predictions(
    predictions: &[usize],
    test: &Dataset,
    feature_class: usize,
    victim_class: usize,
) -> Result<SpuriousRateEntry> {
    if predictions.len() != test.len() {
        return Err(Error::ShapeMismatch("prediction count mismatch".into()));
    }
    let mut total = 0u64;
    let mut mis = 0u64;
    for (pos, &pred) in predictions.iter().enumerate() {
        let m = test.meta_at(pos);
        if m.label == victim_class && m.has_spurious {
            total += 1;
            mis += u64::from(pred == feature_class);
        }
    }
    if total == 0 {
        return Err(Error::invalid(format!(
            "no spurious-flagged samples of class {victim_class} in test set"
        )));
    }
    Ok(SpuriousRateEntry {
        feature_class,
        victim_class,
        misclassified: mis,
        total,
        rate: mis as f64 / total as f64,
    })
}

/// One record per epoch of the spurious misclassification rate and WGA on a
/// fixed evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackRecord {
    pub epoch: usize,
    pub spurious_rate: f64,
    pub worst_group_accuracy: f64,
}

/// Tracks spurious reliance over training. Fix the evaluation set before
/// training starts and call [`TrainingTracker::observe`] from the per-epoch
/// hook.
pub struct TrainingTracker<'a> {
    test: &'a Dataset,
    feature_class: usize,
    victim_class: usize,
    series: Vec<TrackRecord>,
}

impl<'a> TrainingTracker<'a> {
    pub fn new(test: &'a Dataset, feature_class: usize, victim_class: usize) -> Result<Self> {
        if !test
            .meta()
            .iter()
            .any(|m| m.label == victim_class && m.has_spurious)
        {
            return Err(Error::invalid(
                "tracking set has no spurious-flagged victim samples",
            ));
        }
        Ok(TrainingTracker {
            test,
            feature_class,
            victim_class,
            series: Vec::new(),
        })
    }

    pub fn observe(&mut self, epoch: usize, net: &Network) -> Result<()> {
        let preds = predict(net, self.test)?;
        let rate =
            rate_from_predictions(&preds, self.test, self.feature_class, self.victim_class)?;
        let mut group_correct: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
        for (pos, &pred) in preds.iter().enumerate() {
            let m = self.test.meta_at(pos);
            let e = group_correct.entry(m.group_id).or_insert((0, 0));
            e.0 += u64::from(pred == m.label);
            e.1 += 1;
        }
        let wga = group_correct
            .values()
            .map(|&(c, t)| c as f64 / t as f64)
            .fold(f64::INFINITY, f64::min);
        self.series.push(TrackRecord {
            epoch,
            spurious_rate: rate.rate,
            worst_group_accuracy: wga,
        });
        Ok(())
    }

    pub fn series(&self) -> &[TrackRecord] {
        &self.series
    }

    pub fn into_series(self) -> Vec<TrackRecord> {
        self.series
    }
}

impl EvalReport {
    /// CSV: one row per group, then summary rows.
    pub fn write_csv(&self, path: &Path, fingerprint: Option<&str>) -> Result<()> {
        use std::fmt::Write as _;
        let mut out = String::new();
        if let Some(fp) = fingerprint {
            let _ = writeln!(out, "# fingerprint={fp}");
        }
        out.push_str("kind,group,class,has_spurious,count,correct,value\n");
        for (&g, &acc) in &self.group_accuracy {
            let _ = writeln!(
                out,
                "group,{g},{},{},{},{},{acc}",
                g / 2,
                g % 2,
                self.group_total[&g],
                self.group_correct[&g],
            );
        }
        let _ = writeln!(
            out,
            "summary,worst_group_accuracy,,,,,{}",
            self.worst_group_accuracy
        );
        let _ = writeln!(
            out,
            "summary,weighted_mean_accuracy,,,,,{}",
            self.weighted_mean_accuracy
        );
        let _ = writeln!(out, "summary,overall_accuracy,,,,,{}", self.overall_accuracy);
        for r in &self.spurious_rates {
            let _ = writeln!(
                out,
                "spurious_rate,{}->{},{},{},{},{},{}",
                r.feature_class,
                r.victim_class,
                r.victim_class,
                1,
                r.total,
                r.misclassified,
                r.rate
            );
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(path, format!("serialize: {e}")))?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::{generate_base, BaseParams, GridShape, NoiseSpread, Split};

    fn flagged_dataset() -> Dataset {
        use crate::testbed::{inject_spurious, BarPosition, SelectionRule, SpuriousSpec};
        let base = generate_base(&BaseParams {
            classes: 4,
            n_per_class: 10,
            grid: GridShape {
                height: 4,
                width: 4,
                channels: 1,
            },
            noise: NoiseSpread::uniform(0.0, 0.0),
            seed: 1,
            split: Split::Test,
        })
        .unwrap();
        // Flag all of class 1 as carrying class 0's bar.
        let spec = SpuriousSpec {
            target_class: 1,
            channel: 0,
            position: BarPosition::Center,
            width: 1,
            value: 1.0,
            selection: SelectionRule::AllOfClass,
        };
        inject_spurious(&base, &spec, None).unwrap()
    }

    #[test]
    fn wga_is_min_of_group_accuracies() {
        let data = flagged_dataset();
        // Groups: (0,clean)=0, (1,spurious)=3, (2,clean)=4, (3,clean)=6.
        // Target accuracies 0.95-ish via hand-made predictions:
        // class 0: 10/10, class 1: 7/10 (the 0.7-ish minimum),
        // class 2: 8/10, class 3: 9/10.
        let mut preds = Vec::new();
        for pos in 0..data.len() {
            let m = data.meta_at(pos);
            let wrong = (m.label + 1) % 4;
            let miss = match m.label {
                0 => 0,
                1 => 3,
                2 => 2,
                _ => 1,
            };
            // Miss the first `miss` samples of the class.
            let rank = data.class_ids(m.label)
                .iter()
                .position(|&i| i == m.id)
                .unwrap();
            preds.push(if rank < miss { wrong } else { m.label });
        }
        let weights = GroupWeights::from_dataset(&data).unwrap();
        let report = report_from_predictions(&preds, &data, &weights).unwrap();
        assert!((report.worst_group_accuracy - 0.7).abs() < 1e-12);
        // Confusion rows sum to class counts.
        for class in 0..4 {
            let row: u64 = report.confusion[class * 4..(class + 1) * 4].iter().sum();
            assert_eq!(row, 10);
        }
        // Overall equals prevalence-weighted mean when weights are test shares.
        assert!((report.weighted_mean_accuracy - report.overall_accuracy).abs() < 1e-12);
        assert!(report.worst_group_accuracy <= report.weighted_mean_accuracy);
    }

    #[test]
    fn equal_group_accuracy_gives_that_accuracy_for_any_weights() {
        let data = flagged_dataset();
        // Every group at accuracy 0.8: miss 2 of 10 per class.
        let mut preds = Vec::new();
        for pos in 0..data.len() {
            let m = data.meta_at(pos);
            let rank = data.class_ids(m.label)
                .iter()
                .position(|&i| i == m.id)
                .unwrap();
            preds.push(if rank < 2 { (m.label + 1) % 4 } else { m.label });
        }
        let mut w = BTreeMap::new();
        w.insert(0usize, 0.7);
        w.insert(3usize, 0.1);
        w.insert(4usize, 0.15);
        w.insert(6usize, 0.05);
        let weights = GroupWeights::from_map(w).unwrap();
        let report = report_from_predictions(&preds, &data, &weights).unwrap();
        assert!((report.weighted_mean_accuracy - 0.8).abs() < 1e-12);
    }

    #[test]
    fn weighted_mean_is_the_weighted_sum() {
        let data = flagged_dataset();
        // Group (0, clean) = id 0: all correct; group (1, spurious) = 3: all wrong;
        // others get zero weight.
        let preds: Vec<usize> = (0..data.len())
            .map(|pos| {
                let m = data.meta_at(pos);
                match m.label {
                    0 => 0,
                    1 => 0, // always misclassified as 0
                    other => other,
                }
            })
            .collect();
        let mut w = BTreeMap::new();
        w.insert(0usize, 0.9);
        w.insert(3usize, 0.1);
        let weights = GroupWeights::from_map(w).unwrap();
        let report = report_from_predictions(&preds, &data, &weights).unwrap();
        assert!((report.weighted_mean_accuracy - 0.9).abs() < 1e-12);
        // Rate boundary cases: all predicted as the feature class -> 1.0.
        let rate = rate_from_predictions(&preds, &data, 0, 1).unwrap();
        assert_eq!(rate.rate, 1.0);
        let honest: Vec<usize> = data.meta().iter().map(|m| m.label).collect();
        let rate0 = rate_from_predictions(&honest, &data, 0, 1).unwrap();
        assert_eq!(rate0.rate, 0.0);
    }

    #[test]
    fn missing_weighted_group_warns_and_renormalizes() {
        let data = flagged_dataset();
        let preds: Vec<usize> = data.meta().iter().map(|m| m.label).collect();
        let mut w = BTreeMap::new();
        w.insert(0usize, 0.5);
        w.insert(5usize, 0.5); // group (2, spurious) does not exist
        let weights = GroupWeights::from_map(w).unwrap();
        let report = report_from_predictions(&preds, &data, &weights).unwrap();
        assert_eq!(report.warnings.len(), 1);
        assert!((report.weighted_mean_accuracy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_denominator_rate_is_rejected() {
        let data = flagged_dataset();
        let preds: Vec<usize> = data.meta().iter().map(|m| m.label).collect();
        assert!(rate_from_predictions(&preds, &data, 0, 2).is_err());
    }

    #[test]
    fn bad_weights_are_rejected() {
        let mut w = BTreeMap::new();
        w.insert(0usize, 0.5);
        assert!(GroupWeights::from_map(w.clone()).is_err());
        w.insert(1usize, 0.6);
        assert!(GroupWeights::from_map(w).is_err());
    }
}
