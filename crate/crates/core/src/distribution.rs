//! Identifiability diagnostics: where spurious-carrying samples sit in the
//! difficulty spectrum, and whether a high-regularization probe separates
//! them early in training.

use std::path::Path;

use serde::Serialize;

use crate::difficulty::DifficultyTable;
use crate::error::{Error, Result};
use crate::nn::{train_from_seed, Architecture, TrainConfig};
use crate::testbed::Dataset;

pub const DEFAULT_IDENTIFIABILITY_THRESHOLD: f64 = 0.7;
pub const DEFAULT_PROBE_WEIGHT_DECAY_MULTIPLIER: f32 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Identifiable,
    Unidentifiable,
}

/// Spurious-sample shares per difficulty quartile (equal sample counts,
/// remainder pushed to later quartiles).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuartileReport {
    pub shares: [f64; 4],
    pub counts: [u64; 4],
    pub quartile_sizes: [usize; 4],
    pub total_spurious: u64,
    pub threshold: f64,
    pub verdict: Verdict,
    /// `Q1+Q2 share - threshold`; nonnegative means identifiable.
    pub margin: f64,
}

/// Sorts all samples ascending by difficulty, splits them into four
/// equal-count quartiles, and reports the share of spurious samples landing
/// in each.
pub fn quartile_report(
    table: &DifficultyTable,
    data: &Dataset,
    threshold: f64,
) -> Result<QuartileReport> {
    if table.len() != data.len() {
        return Err(Error::invalid("table does not cover dataset"));
    }
    let mut order: Vec<(u32, f32, bool)> = Vec::with_capacity(data.len());
    for m in data.meta() {
        let score = table
            .score(m.id)
            .ok_or_else(|| Error::invalid(format!("table missing id {}", m.id)))?;
        order.push((m.id, score, m.has_spurious));
    }
    let total_spurious = order.iter().filter(|e| e.2).count() as u64;
    if total_spurious == 0 {
        return Err(Error::invalid("no spurious samples to distribute"));
    }
    order.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let n = order.len();
    let q = n / 4;
    let r = n % 4;
    let mut quartile_sizes = [0usize; 4];
    for (i, size) in quartile_sizes.iter_mut().enumerate() {
        *size = q + usize::from(i >= 4 - r);
    }
    let mut counts = [0u64; 4];
    let mut start = 0usize;
    for (i, &size) in quartile_sizes.iter().enumerate() {
        counts[i] = order[start..start + size].iter().filter(|e| e.2).count() as u64;
        start += size;
    }
    let shares = counts.map(|c| c as f64 / total_spurious as f64);
    let (verdict, margin) = classify_shares(&shares, threshold)?;
    Ok(QuartileReport {
        shares,
        counts,
        quartile_sizes,
        total_spurious,
        threshold,
        verdict,
        margin,
    })
}

fn classify_shares(shares: &[f64; 4], threshold: f64) -> Result<(Verdict, f64)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid("threshold must lie in [0, 1]"));
    }
    let q12 = shares[0] + shares[1];
    let margin = q12 - threshold;
    // The boundary counts as identifiable.
    let verdict = if q12 >= threshold {
        Verdict::Identifiable
    } else {
        Verdict::Unidentifiable
    };
    Ok((verdict, margin))
}

/// Re-derives the verdict from a report at a different threshold.
pub fn classify_setting(report: &QuartileReport, threshold: f64) -> Result<(Verdict, f64)> {
    classify_shares(&report.shares, threshold)
}

pub fn write_quartiles_csv(
    report: &QuartileReport,
    path: &Path,
    fingerprint: Option<&str>,
) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::new();
    if let Some(fp) = fingerprint {
        let _ = writeln!(out, "# fingerprint={fp}");
    }
    out.push_str("quartile,count,share\n");
    for i in 0..4 {
        let _ = writeln!(out, "{},{},{}", i + 1, report.counts[i], report.shares[i]);
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Early-training accuracy gap between spurious-flagged and clean samples of
/// the spuriously correlated class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub class: usize,
    pub epoch: usize,
    pub spurious_accuracy: f64,
    pub clean_accuracy: f64,
    /// `spurious_accuracy - clean_accuracy`.
    pub gap: f64,
    pub spurious_count: u64,
    pub clean_count: u64,
}

/// Derives the probe recipe from a base config: elevated weight decay and a
/// short run ending at the probe epoch.
pub fn probe_config(base: &TrainConfig, probe_epoch: usize, wd_multiplier: f32) -> TrainConfig {
    TrainConfig {
        epochs: probe_epoch,
        weight_decay: base.weight_decay * wd_multiplier,
        lr_milestones: base
            .lr_milestones
            .iter()
            .copied()
            .filter(|&m| m < probe_epoch)
            .collect(),
        difficulty_epoch: 0,
        ..base.clone()
    }
}

/// Trains briefly with the given (already elevated-decay) config and reports
/// the training accuracy at `probe_epoch` for spurious-flagged vs clean
/// samples of the flagged class. The flags are used for measurement only;
/// training itself never sees them.
pub fn identifiability_probe(
    arch: &Architecture,
    data: &Dataset,
    cfg: &TrainConfig,
    probe_epoch: usize,
) -> Result<ProbeReport> {
    let target_class = {
        let mut per_class = vec![0u64; data.classes()];
        for m in data.meta() {
            if m.has_spurious {
                per_class[m.label] += 1;
            }
        }
        let (class, &count) = per_class
            .iter()
            .enumerate()
            .max_by_key(|(_, &c)| c)
            .expect("at least one class");
        if count == 0 {
            return Err(Error::invalid("probe needs spurious flags for measurement"));
        }
        class
    };

    let mut run_cfg = cfg.clone();
    run_cfg.epochs = probe_epoch;
    run_cfg.difficulty_epoch = 0;
    run_cfg.lr_milestones.retain(|&m| m < probe_epoch);
    let outcome = train_from_seed(arch, data, &run_cfg, None)?;
    let preds = crate::evaluation::predict(&outcome.net, data)?;

    let mut sp = (0u64, 0u64);
    let mut cl = (0u64, 0u64);
    for (pos, &pred) in preds.iter().enumerate() {
        let m = data.meta_at(pos);
        if m.label != target_class {
            continue;
        }
        let bucket = if m.has_spurious { &mut sp } else { &mut cl };
        bucket.0 += u64::from(pred == m.label);
        bucket.1 += 1;
    }
    if cl.1 == 0 {
        return Err(Error::invalid(
            "probe class has no clean samples to compare against",
        ));
    }
    let spurious_accuracy = sp.0 as f64 / sp.1 as f64;
    let clean_accuracy = cl.0 as f64 / cl.1 as f64;
    Ok(ProbeReport {
        class: target_class,
        epoch: probe_epoch,
        spurious_accuracy,
        clean_accuracy,
        gap: spurious_accuracy - clean_accuracy,
        spurious_count: sp.1,
        clean_count: cl.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::difficulty::DifficultyTable;
    use crate::testbed::{
        generate_base, inject_spurious, BarPosition, BaseParams, GridShape, NoiseSpread,
        SelectionRule, Split, SpuriousSpec,
    };

    fn flagged(n_per_class: usize, k: usize, seed: u64) -> Dataset {
        let base = generate_base(&BaseParams {
            classes: 2,
            n_per_class,
            grid: GridShape {
                height: 4,
                width: 4,
                channels: 1,
            },
            noise: NoiseSpread::uniform(0.0, 0.2),
            seed,
            split: Split::Train,
        })
        .unwrap();
        inject_spurious(
            &base,
            &SpuriousSpec {
                target_class: 0,
                channel: 0,
                position: BarPosition::Center,
                width: 1,
                value: 1.0,
                selection: SelectionRule::Random { k, seed },
            },
            None,
        )
        .unwrap()
    }

    fn table_with_scores(data: &Dataset, f: impl Fn(u32) -> f32) -> DifficultyTable {
        let scores: Vec<(u32, f32)> = data.meta().iter().map(|m| (m.id, f(m.id))).collect();
        DifficultyTable::from_scores(1, data, &scores).unwrap()
    }

    #[test]
    fn all_spurious_easiest_gives_first_quartile() {
        let data = flagged(20, 0, 3);
        // Flag ids 0..5 manually via selection, then give them the lowest scores.
        let data = inject_spurious(
            &data,
            &SpuriousSpec {
                target_class: 0,
                channel: 0,
                position: BarPosition::Center,
                width: 1,
                value: 1.0,
                selection: SelectionRule::ExplicitIds {
                    ids: vec![0, 1, 2, 3, 4],
                },
            },
            None,
        )
        .unwrap();
        let table = table_with_scores(&data, |id| id as f32 / 40.0);
        let report = quartile_report(&table, &data, 0.7).unwrap();
        assert_eq!(report.shares, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(report.verdict, Verdict::Identifiable);
        let sum: f64 = report.shares.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn quartile_sizes_put_remainder_later() {
        let data = flagged(5, 2, 4); // n = 10
        let table = table_with_scores(&data, |id| id as f32);
        let report = quartile_report(&table, &data, 0.7).unwrap();
        assert_eq!(report.quartile_sizes, [2, 2, 3, 3]);
        assert_eq!(report.counts.iter().sum::<u64>(), report.total_spurious);
    }

    #[test]
    fn random_flags_spread_roughly_uniformly() {
        let data = flagged(200, 80, 5);
        let table = table_with_scores(&data, |id| (id as f32 * 0.37).fract());
        let report = quartile_report(&table, &data, 0.7).unwrap();
        for &s in &report.shares {
            assert!((0.1..0.4).contains(&s), "share {s} too extreme");
        }
        assert_eq!(report.verdict, Verdict::Unidentifiable);
    }

    #[test]
    fn classification_thresholds_and_boundary() {
        let mk = |shares: [f64; 4]| {
            let (v, m) = classify_shares(&shares, 0.7).unwrap();
            (v, m)
        };
        assert_eq!(mk([0.5, 0.3, 0.1, 0.1]).0, Verdict::Identifiable);
        assert_eq!(mk([0.25, 0.25, 0.25, 0.25]).0, Verdict::Unidentifiable);
        // Exactly at the boundary counts as identifiable.
        let (v, margin) = classify_shares(&[0.6, 0.4, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(v, Verdict::Identifiable);
        assert!(margin.abs() < 1e-12);
    }

    #[test]
    fn report_is_permutation_invariant() {
        let data = flagged(50, 20, 6);
        let table = table_with_scores(&data, |id| (id as f32 * 0.11).fract());
        let report = quartile_report(&table, &data, 0.7).unwrap();
        // Reverse the dataset order; the report only depends on ids/scores.
        let reversed: Vec<usize> = (0..data.len()).rev().collect();
        let data_rev = data.subset_positions(&reversed).unwrap();
        let report_rev = quartile_report(&table, &data_rev, 0.7).unwrap();
        assert_eq!(report, report_rev);
    }

    #[test]
    fn no_spurious_samples_is_an_input_error() {
        let data = flagged(10, 0, 7);
        let table = table_with_scores(&data, |id| id as f32);
        assert!(quartile_report(&table, &data, 0.7).is_err());
    }

    #[test]
    fn zero_epoch_probe_has_chance_accuracy_and_small_gap() {
        let data = flagged(300, 100, 8);
        let arch = Architecture::mlp_default(data.feature_dim(), data.classes());
        let cfg = TrainConfig {
            seed: 3,
            ..TrainConfig::default()
        };
        let report = identifiability_probe(&arch, &data, &cfg, 0).unwrap();
        assert_eq!(report.epoch, 0);
        assert!(report.gap.abs() < 0.2, "gap {}", report.gap);
        assert!(report.spurious_accuracy <= 1.0 && report.clean_accuracy <= 1.0);
    }

    #[test]
    fn probe_training_ignores_flags() {
        use crate::nn::train_from_seed;
        use crate::testbed::group_id_for;
        let data = flagged(40, 10, 9);
        // Same pixels and labels, spurious flags scrambled: the training
        // trajectory must be bit-identical.
        let mut meta = data.meta().to_vec();
        for m in meta.iter_mut() {
            m.has_spurious = m.id % 3 == 0;
            m.group_id = group_id_for(m.label, m.has_spurious);
        }
        let features: Vec<f32> = (0..data.len())
            .flat_map(|p| data.features_at(p).iter().copied())
            .collect();
        let scrambled = Dataset::from_parts(
            data.classes(),
            data.grid(),
            data.split(),
            data.seed(),
            meta,
            features,
            data.class_counts().to_vec(),
            data.norm_stats().cloned(),
        )
        .unwrap();
        let arch = Architecture::mlp_default(data.feature_dim(), data.classes());
        let cfg = TrainConfig {
            epochs: 2,
            difficulty_epoch: 1,
            lr_milestones: vec![],
            seed: 5,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let a = train_from_seed(&arch, &data, &cfg, None).unwrap();
        let b = train_from_seed(&arch, &scrambled, &cfg, None).unwrap();
        assert!(a.net.params_bitwise_eq(&b.net));
    }
}
