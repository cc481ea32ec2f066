//! Experiment suites: each one composes generate / inject / train / score /
//! prune / retrain / evaluate into a reproducible run per seed.
//!
//! Stage seeds derive from the run seed (see [`crate::rng`]); retraining
//! after pruning reuses the training stage's derived seed, so it is a fresh
//! seeded initialization (never a warm start) and an unchanged training set
//! reproduces the reference network exactly.

use std::path::Path;

use serde::Serialize;

use super::config::{ExperimentConfig, Suite};
use crate::difficulty::{score_dataset, DifficultyTable};
use crate::distribution::{identifiability_probe, probe_config, quartile_report, ProbeReport, QuartileReport};
use crate::error::{Error, Result};
use crate::evaluation::{
    self, EvalReport, GroupWeights, TrackRecord, TrainingTracker,
};
use crate::nn::{train, train_from_seed, Architecture, Network, TrainConfig, TrainOutcome};
use crate::pruning;
use crate::rng::{self, Domain};
use crate::testbed::{
    generate_base, inject_spurious, make_spurious_test_set, Dataset, SampleId, SelectionRule,
    Split, SpuriousSpec, SpuriousTestSplit,
};

/// Summary of one network evaluated against the spurious test protocol.
#[derive(Debug, Clone, Serialize)]
pub struct EvalBundle {
    pub spurious_rate: f64,
    pub worst_group_accuracy: f64,
    pub weighted_mean_accuracy: f64,
    pub overall_accuracy: f64,
    /// Accuracy on the untouched complement (non-victim classes).
    pub clean_accuracy: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmResult {
    pub arm: String,
    pub seed: u64,
    pub spurious_rate: f64,
    pub worst_group_accuracy: f64,
    pub clean_accuracy: f64,
    pub overall_accuracy: f64,
    pub removed: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub series: Vec<TrackRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig3Suite {
    pub k: usize,
    pub arms: Vec<ArmResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowRow {
    pub start: usize,
    pub seed: u64,
    pub spurious_rate: f64,
    pub worst_group_accuracy: f64,
    pub clean_accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanSuite {
    pub k: usize,
    pub stride: usize,
    pub starts: Vec<usize>,
    pub rows: Vec<WindowRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExclusionSuite {
    pub pool_size: usize,
    pub arms: Vec<ArmResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuartileSeed {
    pub seed: u64,
    pub report: QuartileReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuartileSuite {
    pub threshold: f64,
    pub per_seed: Vec<QuartileSeed>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PruneRow {
    pub fraction: f64,
    pub seed: u64,
    pub spurious_rate: f64,
    pub worst_group_accuracy: f64,
    pub clean_accuracy: f64,
    pub overall_accuracy: f64,
    pub removed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlindPruneSuite {
    pub fractions: Vec<f64>,
    pub rows: Vec<PruneRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupPruneSuite {
    pub fraction: f64,
    pub class_balance: bool,
    pub rows: Vec<PruneRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeSeed {
    pub seed: u64,
    pub report: ProbeReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeSuite {
    pub epoch: usize,
    pub weight_decay_multiplier: f32,
    pub per_seed: Vec<ProbeSeed>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSeed {
    pub seed: u64,
    pub pre: EvalBundle,
    pub post: EvalBundle,
    pub removed: Vec<SampleId>,
    pub tracking: Vec<TrackRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSuite {
    pub per_seed: Vec<PipelineSeed>,
}

pub fn architecture(cfg: &ExperimentConfig) -> Architecture {
    Architecture {
        input: cfg.dataset.grid().pixel_count(),
        hidden: cfg.model.hidden.clone(),
        classes: cfg.dataset.classes,
    }
}

/// Training config for a run seed; reference and retrain stages share it.
pub fn stage_train_config(cfg: &ExperimentConfig, run_seed: u64) -> TrainConfig {
    TrainConfig {
        seed: rng::derive(run_seed, Domain::TrainStage, 0),
        ..cfg.train.clone()
    }
}

/// Generates the train/test pair for a run seed; the test split carries the
/// train split's normalization statistics.
pub fn generate_splits(cfg: &ExperimentConfig, run_seed: u64) -> Result<(Dataset, Dataset)> {
    let train = generate_base(&cfg.dataset.base_params(run_seed, Split::Train))?;
    let test = generate_base(&cfg.dataset.base_params(run_seed, Split::Test))?
        .with_norm_stats(train.norm_stats().cloned())?;
    Ok((train, test))
}

/// Evaluates a network under the spurious test protocol: group metrics and
/// WGA on the full (victim-injected) test set, spurious misclassification
/// rate for the (target, victim) pair, and accuracy on the clean complement.
pub fn evaluate_net(
    net: &Network,
    split: &SpuriousTestSplit,
    weights: &GroupWeights,
    feature_class: usize,
    victim_class: usize,
) -> Result<EvalBundle> {
    let preds = evaluation::predict(net, &split.full)?;
    let mut report = evaluation::report_from_predictions(&preds, &split.full, weights)?;
    let rate = evaluation::rate_from_predictions(&preds, &split.full, feature_class, victim_class)?;
    let clean_preds = evaluation::predict(net, &split.clean)?;
    let clean_hits = clean_preds
        .iter()
        .enumerate()
        .filter(|(p, &pred)| pred == split.clean.label_at(*p))
        .count();
    let clean_accuracy = clean_hits as f64 / split.clean.len() as f64;
    let bundle = EvalBundle {
        spurious_rate: rate.rate,
        worst_group_accuracy: report.worst_group_accuracy,
        weighted_mean_accuracy: report.weighted_mean_accuracy,
        overall_accuracy: report.overall_accuracy,
        clean_accuracy,
        report: {
            report.spurious_rates.push(rate);
            report
        },
    };
    Ok(bundle)
}

fn spec_with_selection(base: &SpuriousSpec, selection: SelectionRule) -> SpuriousSpec {
    SpuriousSpec {
        selection,
        ..base.clone()
    }
}

/// Trains on `data`, optionally tracking the spurious rate per epoch on the
/// given evaluation split.
fn tracked_training(
    arch: &Architecture,
    data: &Dataset,
    tcfg: &TrainConfig,
    track_on: Option<(&SpuriousTestSplit, usize, usize)>,
) -> Result<(TrainOutcome, Vec<TrackRecord>)> {
    match track_on {
        None => Ok((train_from_seed(arch, data, tcfg, None)?, Vec::new())),
        Some((split, c1, c2)) => {
            let mut tracker = TrainingTracker::new(&split.full, c1, c2)?;
            let mut track_err: Option<Error> = None;
            let outcome = {
                let mut hook = |ctx: &crate::nn::EpochCtx| {
                    if track_err.is_none() {
                        if let Err(e) = tracker.observe(ctx.epoch, ctx.net) {
                            track_err = Some(e);
                        }
                    }
                };
                train_from_seed(arch, data, tcfg, Some(&mut hook))?
            };
            if let Some(e) = track_err {
                return Err(e);
            }
            Ok((outcome, tracker.into_series()))
        }
    }
}

/// The canonical chain: generate, inject, train the reference network, score
/// at the difficulty epoch, prune per the configured spec, retrain from a
/// fresh seeded init, and evaluate both networks. With no pruning configured
/// (or nothing removed) the post-prune report equals the pre-prune report.
pub fn run_pipeline(cfg: &ExperimentConfig, artifacts_dir: Option<&Path>) -> Result<PipelineSuite> {
    cfg.validate()?;
    let arch = architecture(cfg);
    let c1 = cfg.spurious.target_class;
    let c2 = cfg.evaluation.victim_class;
    let mut per_seed = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let stage = |name: &'static str| move |e: Error| e.in_stage(name);
        let (clean_train, test) = generate_splits(cfg, seed).map_err(stage("generate"))?;
        let injected =
            inject_spurious(&clean_train, &cfg.spurious, None).map_err(stage("inject"))?;
        let weights = GroupWeights::from_dataset(&injected).map_err(stage("inject"))?;
        let split = make_spurious_test_set(&test, &cfg.spurious, c2).map_err(stage("inject"))?;
        let tcfg = stage_train_config(cfg, seed);

        let (ref_outcome, tracking) =
            tracked_training(&arch, &injected, &tcfg, Some((&split, c1, c2)))
                .map_err(stage("train"))?;
        let table = score_dataset(&ref_outcome.snapshot, &injected, tcfg.difficulty_epoch)
            .map_err(stage("score"))?;
        let pre = evaluate_net(&ref_outcome.net, &split, &weights, c1, c2)
            .map_err(stage("evaluate"))?;

        let (post, removed, pruned) = match &cfg.prune {
            None => (pre.clone(), Vec::new(), None),
            Some(spec) => {
                let outcome =
                    pruning::apply(&injected, Some(&table), spec).map_err(stage("prune"))?;
                if outcome.removed.is_empty() {
                    (pre.clone(), outcome.removed, Some(outcome.dataset))
                } else {
                    let retrained = train(
                        Network::seeded(arch.clone(), tcfg.seed)?,
                        &outcome.dataset,
                        &tcfg,
                        None,
                    )
                    .map_err(stage("retrain"))?;
                    let post = evaluate_net(&retrained.net, &split, &weights, c1, c2)
                        .map_err(stage("evaluate"))?;
                    (post, outcome.removed, Some(outcome.dataset))
                }
            }
        };

        if let Some(dir) = artifacts_dir {
            persist_seed_artifacts(
                cfg,
                dir,
                seed,
                &clean_train,
                &test,
                &injected,
                pruned.as_ref(),
                &table,
                &ref_outcome,
                &tcfg,
                &removed,
                &pre,
                &post,
            )
            .map_err(stage("persist"))?;
        }

        per_seed.push(PipelineSeed {
            seed,
            pre,
            post,
            removed,
            tracking,
        });
    }
    Ok(PipelineSuite { per_seed })
}

#[allow(clippy::too_many_arguments)]
fn persist_seed_artifacts(
    cfg: &ExperimentConfig,
    dir: &Path,
    seed: u64,
    clean_train: &Dataset,
    test: &Dataset,
    injected: &Dataset,
    pruned: Option<&Dataset>,
    table: &DifficultyTable,
    ref_outcome: &TrainOutcome,
    tcfg: &TrainConfig,
    removed: &[SampleId],
    pre: &EvalBundle,
    post: &EvalBundle,
) -> Result<()> {
    let fp = cfg.fingerprint();
    let root = dir.join(format!("seed_{seed}"));
    crate::testbed::write_dataset(clean_train, &root.join("data/train"))?;
    crate::testbed::write_dataset(test, &root.join("data/test"))?;
    crate::testbed::write_dataset(injected, &root.join("data/train_injected"))?;
    if let Some(p) = pruned {
        crate::testbed::write_dataset(p, &root.join("data/pruned"))?;
    }
    table.write_csv(&root.join("difficulty.csv"), Some(&fp))?;
    crate::nn::save_checkpoint(
        &ref_outcome.net,
        tcfg.seed,
        tcfg.epochs,
        &root.join("checkpoints/final.ckpt"),
    )?;
    crate::nn::save_checkpoint(
        &ref_outcome.snapshot,
        tcfg.seed,
        tcfg.difficulty_epoch,
        &root.join("checkpoints/snapshot.ckpt"),
    )?;
    pruning::write_removed_ids(removed, table, &root.join("removed_ids.csv"), Some(&fp))?;
    pre.report.write_csv(&root.join("eval_pre.csv"), Some(&fp))?;
    pre.report.write_json(&root.join("eval_pre.json"))?;
    post.report.write_csv(&root.join("eval_post.csv"), Some(&fp))?;
    post.report.write_json(&root.join("eval_post.json"))?;
    Ok(())
}

/// Easiest-core vs hardest-core injection: scores core difficulty on the
/// clean train set, injects the same bar into the K easiest and (separately)
/// K hardest samples, retrains, and tracks spurious reliance per epoch.
pub fn run_easiest_vs_hardest(cfg: &ExperimentConfig) -> Result<Fig3Suite> {
    cfg.validate()?;
    let arch = architecture(cfg);
    let k = cfg.easiest_vs_hardest.k;
    let c1 = cfg.spurious.target_class;
    let c2 = cfg.evaluation.victim_class;
    let mut arms = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let (clean_train, test) = generate_splits(cfg, seed)?;
        let tcfg = stage_train_config(cfg, seed);
        let reference = train_from_seed(&arch, &clean_train, &tcfg, None)?;
        let table = score_dataset(&reference.snapshot, &clean_train, tcfg.difficulty_epoch)?;

        for (name, selection) in [
            ("easiest", SelectionRule::Easiest { k }),
            ("hardest", SelectionRule::Hardest { k }),
        ] {
            let spec = spec_with_selection(&cfg.spurious, selection);
            let injected = inject_spurious(&clean_train, &spec, Some(&table))?;
            let weights = GroupWeights::from_dataset(&injected)?;
            let split = make_spurious_test_set(&test, &spec, c2)?;
            let (outcome, series) =
                tracked_training(&arch, &injected, &tcfg, Some((&split, c1, c2)))?;
            let eval = evaluate_net(&outcome.net, &split, &weights, c1, c2)?;
            arms.push(ArmResult {
                arm: name.to_string(),
                seed,
                spurious_rate: eval.spurious_rate,
                worst_group_accuracy: eval.worst_group_accuracy,
                clean_accuracy: eval.clean_accuracy,
                overall_accuracy: eval.overall_accuracy,
                removed: 0,
                series,
            });
        }
    }
    Ok(Fig3Suite { k, arms })
}

/// Slides a K-sample injection window across the difficulty spectrum and
/// retrains per window.
pub fn run_window_scan(cfg: &ExperimentConfig) -> Result<ScanSuite> {
    cfg.validate()?;
    let arch = architecture(cfg);
    let k = cfg.scan.k;
    let stride = cfg.scan_stride()?;
    if stride == 0 {
        return Err(Error::invalid("scan stride must be >= 1"));
    }
    let n_class = cfg.dataset.train_per_class;
    if k > n_class {
        return Err(Error::invalid("scan.k exceeds class size"));
    }
    let starts: Vec<usize> = (0..)
        .map(|i| i * stride)
        .take_while(|s| s + k <= n_class)
        .collect();
    let c1 = cfg.spurious.target_class;
    let c2 = cfg.evaluation.victim_class;
    let mut rows = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let (clean_train, test) = generate_splits(cfg, seed)?;
        let tcfg = stage_train_config(cfg, seed);
        let reference = train_from_seed(&arch, &clean_train, &tcfg, None)?;
        let table = score_dataset(&reference.snapshot, &clean_train, tcfg.difficulty_epoch)?;
        for &start in &starts {
            let spec =
                spec_with_selection(&cfg.spurious, SelectionRule::Window { start, k });
            let injected = inject_spurious(&clean_train, &spec, Some(&table))?;
            let weights = GroupWeights::from_dataset(&injected)?;
            let split = make_spurious_test_set(&test, &spec, c2)?;
            let (outcome, _) = tracked_training(&arch, &injected, &tcfg, None)?;
            let eval = evaluate_net(&outcome.net, &split, &weights, c1, c2)?;
            rows.push(WindowRow {
                start,
                seed,
                spurious_rate: eval.spurious_rate,
                worst_group_accuracy: eval.worst_group_accuracy,
                clean_accuracy: eval.clean_accuracy,
            });
        }
    }
    Ok(ScanSuite {
        k,
        stride,
        starts,
        rows,
    })
}

/// Key-sample exclusion: with spurious samples injected across the difficulty
/// spectrum, compare no pruning vs excluding the hardest fraction vs the
/// easiest fraction of the spurious pool.
pub fn run_exclusion(cfg: &ExperimentConfig) -> Result<ExclusionSuite> {
    cfg.validate()?;
    let arch = architecture(cfg);
    let c1 = cfg.spurious.target_class;
    let c2 = cfg.evaluation.victim_class;
    let mut arms = Vec::new();
    let mut pool_size = 0usize;
    for &seed in &cfg.experiment.seeds {
        let (clean_train, test) = generate_splits(cfg, seed)?;
        let injected = inject_spurious(&clean_train, &cfg.spurious, None)?;
        let weights = GroupWeights::from_dataset(&injected)?;
        let split = make_spurious_test_set(&test, &cfg.spurious, c2)?;
        let tcfg = stage_train_config(cfg, seed);
        let reference = train_from_seed(&arch, &injected, &tcfg, None)?;
        let table = score_dataset(&reference.snapshot, &injected, tcfg.difficulty_epoch)?;

        let pool = injected.spurious_ids();
        pool_size = pool.len();
        if pool.is_empty() {
            return Err(Error::invalid("exclusion suite needs a spurious pool"));
        }
        let hardest_k = (cfg.exclusion.hardest_fraction * pool.len() as f64).floor() as usize;
        let easiest_k = (cfg.exclusion.easiest_fraction * pool.len() as f64).floor() as usize;

        let none_eval = evaluate_net(&reference.net, &split, &weights, c1, c2)?;
        arms.push(ArmResult {
            arm: "none".to_string(),
            seed,
            spurious_rate: none_eval.spurious_rate,
            worst_group_accuracy: none_eval.worst_group_accuracy,
            clean_accuracy: none_eval.clean_accuracy,
            overall_accuracy: none_eval.overall_accuracy,
            removed: 0,
            series: Vec::new(),
        });

        for (name, rule) in [
            ("hardest", SelectionRule::Hardest { k: hardest_k }),
            ("easiest", SelectionRule::Easiest { k: easiest_k }),
        ] {
            let outcome = pruning::prune_selection(&injected, &rule, Some(&table))?;
            let retrained = train(
                Network::seeded(arch.clone(), tcfg.seed)?,
                &outcome.dataset,
                &tcfg,
                None,
            )?;
            let eval = evaluate_net(&retrained.net, &split, &weights, c1, c2)?;
            arms.push(ArmResult {
                arm: name.to_string(),
                seed,
                spurious_rate: eval.spurious_rate,
                worst_group_accuracy: eval.worst_group_accuracy,
                clean_accuracy: eval.clean_accuracy,
                overall_accuracy: eval.overall_accuracy,
                removed: outcome.removed.len(),
                series: Vec::new(),
            });
        }
    }
    Ok(ExclusionSuite { pool_size, arms })
}

/// Difficulty-quartile distribution of the spurious samples, scored at the
/// difficulty epoch on the injected train set.
pub fn run_quartiles(cfg: &ExperimentConfig) -> Result<QuartileSuite> {
    cfg.validate()?;
    let arch = architecture(cfg);
    let mut per_seed = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let (clean_train, _) = generate_splits(cfg, seed)?;
        let injected = inject_spurious(&clean_train, &cfg.spurious, None)?;
        let tcfg = stage_train_config(cfg, seed);
        let table = early_snapshot_table(&arch, &injected, &tcfg)?;
        let report = quartile_report(&table, &injected, cfg.quartiles.threshold)?;
        per_seed.push(QuartileSeed { seed, report });
    }
    Ok(QuartileSuite {
        threshold: cfg.quartiles.threshold,
        per_seed,
    })
}

/// Trains just to the difficulty epoch and scores; the truncated run's
/// trajectory is identical to the prefix of the full run (same shuffle
/// substreams), so this is the full run's snapshot at a fraction of the
/// cost.
pub fn early_snapshot_table(
    arch: &Architecture,
    data: &Dataset,
    tcfg: &TrainConfig,
) -> Result<DifficultyTable> {
    let mut short = tcfg.clone();
    short.epochs = tcfg.difficulty_epoch;
    short.difficulty_epoch = 0;
    short.lr_milestones.retain(|&m| m < short.epochs);
    let outcome = train_from_seed(arch, data, &short, None)?;
    score_dataset(&outcome.net, data, tcfg.difficulty_epoch)
}

/// Blind hardest-per-class pruning sweep; the `fraction = 0` row is the
/// unpruned baseline.
pub fn run_blind_prune(cfg: &ExperimentConfig) -> Result<BlindPruneSuite> {
    cfg.validate()?;
    let arch = architecture(cfg);
    let c1 = cfg.spurious.target_class;
    let c2 = cfg.evaluation.victim_class;
    let mut rows = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let (clean_train, test) = generate_splits(cfg, seed)?;
        let injected = inject_spurious(&clean_train, &cfg.spurious, None)?;
        let weights = GroupWeights::from_dataset(&injected)?;
        let split = make_spurious_test_set(&test, &cfg.spurious, c2)?;
        let tcfg = stage_train_config(cfg, seed);
        let reference = train_from_seed(&arch, &injected, &tcfg, None)?;
        let table = score_dataset(&reference.snapshot, &injected, tcfg.difficulty_epoch)?;

        let baseline = evaluate_net(&reference.net, &split, &weights, c1, c2)?;
        rows.push(PruneRow {
            fraction: 0.0,
            seed,
            spurious_rate: baseline.spurious_rate,
            worst_group_accuracy: baseline.worst_group_accuracy,
            clean_accuracy: baseline.clean_accuracy,
            overall_accuracy: baseline.overall_accuracy,
            removed: 0,
        });

        for &fraction in &cfg.blind_prune.fractions {
            let outcome = pruning::prune_hardest_per_class(&injected, &table, fraction)?;
            let retrained = train(
                Network::seeded(arch.clone(), tcfg.seed)?,
                &outcome.dataset,
                &tcfg,
                None,
            )?;
            let eval = evaluate_net(&retrained.net, &split, &weights, c1, c2)?;
            rows.push(PruneRow {
                fraction,
                seed,
                spurious_rate: eval.spurious_rate,
                worst_group_accuracy: eval.worst_group_accuracy,
                clean_accuracy: eval.clean_accuracy,
                overall_accuracy: eval.overall_accuracy,
                removed: outcome.removed.len(),
            });
        }
    }
    Ok(BlindPruneSuite {
        fractions: cfg.blind_prune.fractions.clone(),
        rows,
    })
}

/// Group-aware pruning in the identifiable setting: removes the hardest
/// samples within the spurious-carrying group, optionally class balancing.
pub fn run_group_prune(cfg: &ExperimentConfig) -> Result<GroupPruneSuite> {
    cfg.validate()?;
    let arch = architecture(cfg);
    let c1 = cfg.spurious.target_class;
    let c2 = cfg.evaluation.victim_class;
    let fraction = cfg.group_prune.fraction;
    let mut rows = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let (clean_train, test) = generate_splits(cfg, seed)?;
        let injected = inject_spurious(&clean_train, &cfg.spurious, None)?;
        let weights = GroupWeights::from_dataset(&injected)?;
        let split = make_spurious_test_set(&test, &cfg.spurious, c2)?;
        let tcfg = stage_train_config(cfg, seed);
        let reference = train_from_seed(&arch, &injected, &tcfg, None)?;
        let table = score_dataset(&reference.snapshot, &injected, tcfg.difficulty_epoch)?;

        let pre = evaluate_net(&reference.net, &split, &weights, c1, c2)?;
        rows.push(PruneRow {
            fraction: 0.0,
            seed,
            spurious_rate: pre.spurious_rate,
            worst_group_accuracy: pre.worst_group_accuracy,
            clean_accuracy: pre.clean_accuracy,
            overall_accuracy: pre.overall_accuracy,
            removed: 0,
        });

        let mut outcome = pruning::prune_group_hardest(&injected, &table, fraction)?;
        if cfg.group_prune.class_balance {
            let balanced = pruning::apply_class_balance(&outcome.dataset, &table)?;
            outcome.removed.extend(balanced.removed);
            outcome.dataset = balanced.dataset;
        }
        let retrained = train(
            Network::seeded(arch.clone(), tcfg.seed)?,
            &outcome.dataset,
            &tcfg,
            None,
        )?;
        let post = evaluate_net(&retrained.net, &split, &weights, c1, c2)?;
        rows.push(PruneRow {
            fraction,
            seed,
            spurious_rate: post.spurious_rate,
            worst_group_accuracy: post.worst_group_accuracy,
            clean_accuracy: post.clean_accuracy,
            overall_accuracy: post.overall_accuracy,
            removed: outcome.removed.len(),
        });
    }
    Ok(GroupPruneSuite {
        fraction,
        class_balance: cfg.group_prune.class_balance,
        rows,
    })
}

/// High-regularization early-training probe: accuracy gap between
/// spurious-flagged and clean samples of the correlated class.
pub fn run_probe(cfg: &ExperimentConfig) -> Result<ProbeSuite> {
    cfg.validate()?;
    let arch = architecture(cfg);
    let epoch = cfg.probe_epoch();
    let mut per_seed = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let (clean_train, _) = generate_splits(cfg, seed)?;
        let injected = inject_spurious(&clean_train, &cfg.spurious, None)?;
        let base = TrainConfig {
            seed: rng::derive(seed, Domain::Probe, 0),
            ..cfg.train.clone()
        };
        let pcfg = probe_config(&base, epoch, cfg.probe.weight_decay_multiplier);
        let report = identifiability_probe(&arch, &injected, &pcfg, epoch)?;
        per_seed.push(ProbeSeed { seed, report });
    }
    Ok(ProbeSuite {
        epoch,
        weight_decay_multiplier: cfg.probe.weight_decay_multiplier,
        per_seed,
    })
}

/// Runs every configured suite and assembles the experiment report.
pub fn run_all(
    cfg: &ExperimentConfig,
    artifacts_dir: Option<&Path>,
) -> Result<super::report::ExperimentReport> {
    cfg.validate()?;
    let mut report = super::report::ExperimentReport::new(cfg);
    for &suite in &cfg.experiment.suites {
        match suite {
            Suite::EasiestVsHardest => {
                report.easiest_vs_hardest = Some(
                    run_easiest_vs_hardest(cfg).map_err(|e| e.in_stage("easiest_vs_hardest"))?,
                )
            }
            Suite::WindowScan => {
                report.window_scan =
                    Some(run_window_scan(cfg).map_err(|e| e.in_stage("window_scan"))?)
            }
            Suite::Exclusion => {
                report.exclusion = Some(run_exclusion(cfg).map_err(|e| e.in_stage("exclusion"))?)
            }
            Suite::BlindPrune => {
                report.blind_prune =
                    Some(run_blind_prune(cfg).map_err(|e| e.in_stage("blind_prune"))?)
            }
            Suite::GroupPrune => {
                report.group_prune =
                    Some(run_group_prune(cfg).map_err(|e| e.in_stage("group_prune"))?)
            }
            Suite::Quartiles => {
                report.quartiles = Some(run_quartiles(cfg).map_err(|e| e.in_stage("quartiles"))?)
            }
            Suite::Probe => {
                report.probe = Some(run_probe(cfg).map_err(|e| e.in_stage("probe"))?)
            }
            Suite::Pipeline => {
                report.pipeline = Some(
                    run_pipeline(cfg, artifacts_dir).map_err(|e| e.in_stage("pipeline"))?,
                )
            }
        }
    }
    Ok(report)
}

/// Convenience for evaluating an already-trained network through the
/// configured spurious test protocol (used by the `eval` CLI subcommand).
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    net: &Network,
    train_for_weights: &Dataset,
    test: &Dataset,
) -> Result<EvalBundle> {
    let weights = GroupWeights::from_dataset(train_for_weights)?;
    let split = make_spurious_test_set(test, &cfg.spurious, cfg.evaluation.victim_class)?;
    evaluate_net(
        net,
        &split,
        &weights,
        cfg.spurious.target_class,
        cfg.evaluation.victim_class,
    )
}
