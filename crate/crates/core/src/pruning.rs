//! Training-set pruning strategies.
//!
//! Fractions convert to counts with `floor`, so removal counts are exactly
//! reproducible. All strategies inherit the ranking tie rule (descending
//! score, ascending id) and are pure functions of their inputs.

use serde::{Deserialize, Serialize};

use crate::difficulty::DifficultyTable;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::testbed::{Dataset, SampleId, SelectionRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum PruneStrategy {
    /// Blind pruning: an equal fraction of the hardest samples per class,
    /// requiring no spurious labels.
    HardestPerClass { fraction: f64 },
    /// Group-aware pruning: the hardest samples within each class's
    /// spurious-carrying group.
    GroupHardest { fraction: f64 },
    /// Remove exactly the samples a selection rule picks from the
    /// spurious-flagged pool (explicit ids are resolved dataset-wide).
    Selection { rule: SelectionRule },
    /// Baseline: a random fraction per class.
    RandomPerClass { fraction: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSpec {
    #[serde(flatten)]
    pub strategy: PruneStrategy,
    #[serde(default)]
    pub class_balance: bool,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub dataset: Dataset,
    pub removed: Vec<SampleId>,
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "prune fraction must lie in [0, 1), got {fraction}"
        )));
    }
    Ok(())
}

/// Hardest ids of `class` restricted to those present in `data`.
fn hardest_in_data(
    data: &Dataset,
    table: &DifficultyTable,
    class: usize,
) -> Result<Vec<SampleId>> {
    let mut scored: Vec<(SampleId, f32)> = Vec::new();
    for id in data.class_ids(class) {
        let score = table
            .score(id)
            .ok_or_else(|| Error::invalid(format!("difficulty table missing id {id}")))?;
        scored.push((id, score));
    }
    scored.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().map(|(id, _)| id).collect())
}

/// Removes `floor(fraction * n_c)` of the hardest samples from every class.
pub fn prune_hardest_per_class(
    data: &Dataset,
    table: &DifficultyTable,
    fraction: f64,
) -> Result<PruneOutcome> {
    check_fraction(fraction)?;
    let mut removed = Vec::new();
    for class in 0..data.classes() {
        let ranked = hardest_in_data(data, table, class)?;
        let k = (fraction * ranked.len() as f64).floor() as usize;
        removed.extend_from_slice(&ranked[..k]);
    }
    Ok(PruneOutcome {
        dataset: data.remove_ids(&removed)?,
        removed,
    })
}

/// Removes `floor(fraction * n_group)` of the hardest samples within each
/// class's spurious-carrying group; clean groups are untouched. Requires at
/// least one spurious group (the identifiable setting).
pub fn prune_group_hardest(
    data: &Dataset,
    table: &DifficultyTable,
    fraction: f64,
) -> Result<PruneOutcome> {
    check_fraction(fraction)?;
    let mut removed = Vec::new();
    let mut any_group = false;
    for class in 0..data.classes() {
        let mut scored: Vec<(SampleId, f32)> = Vec::new();
        for id in data.class_ids(class) {
            let pos = data.position_of(id).expect("id from class_ids");
            if !data.meta_at(pos).has_spurious {
                continue;
            }
            let score = table
                .score(id)
                .ok_or_else(|| Error::invalid(format!("difficulty table missing id {id}")))?;
            scored.push((id, score));
        }
        if scored.is_empty() {
            continue;
        }
        any_group = true;
        scored.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let k = (fraction * scored.len() as f64).floor() as usize;
        removed.extend(scored.into_iter().take(k).map(|(id, _)| id));
    }
    if !any_group {
        return Err(Error::invalid(
            "group-aware pruning needs at least one spurious group",
        ));
    }
    Ok(PruneOutcome {
        dataset: data.remove_ids(&removed)?,
        removed,
    })
}

/// Removes exactly the samples the rule selects. Rank-based, random, and
/// all-of-pool rules resolve over the spurious-flagged pool; explicit ids
/// are taken dataset-wide.
pub fn prune_selection(
    data: &Dataset,
    rule: &SelectionRule,
    table: Option<&DifficultyTable>,
) -> Result<PruneOutcome> {
    let removed = match rule {
        SelectionRule::ExplicitIds { ids } => {
            for id in ids {
                if data.position_of(*id).is_none() {
                    return Err(Error::invalid(format!("id {id} not in dataset")));
                }
            }
            ids.clone()
        }
        _ => {
            let pool = data.spurious_ids();
            crate::testbed::resolve_rule_over_pool(&pool, rule, table)?
        }
    };
    Ok(PruneOutcome {
        dataset: data.remove_ids(&removed)?,
        removed,
    })
}

/// Random per-class baseline with its own seed.
pub fn prune_random_per_class(data: &Dataset, fraction: f64, seed: u64) -> Result<PruneOutcome> {
    use rand::seq::SliceRandom;
    check_fraction(fraction)?;
    let mut removed = Vec::new();
    for class in 0..data.classes() {
        let mut ids = data.class_ids(class);
        let k = (fraction * ids.len() as f64).floor() as usize;
        let mut rng = rng::stream(seed, Domain::Select, class as u64);
        ids.shuffle(&mut rng);
        ids.truncate(k);
        removed.extend(ids);
    }
    Ok(PruneOutcome {
        dataset: data.remove_ids(&removed)?,
        removed,
    })
}

/// Trims larger classes by removing their hardest samples until every class
/// count equals the smallest class count.
pub fn apply_class_balance(data: &Dataset, table: &DifficultyTable) -> Result<PruneOutcome> {
    if data.classes() < 2 {
        return Err(Error::invalid("class balancing needs at least 2 classes"));
    }
    let min_count = data
        .class_counts()
        .iter()
        .copied()
        .min()
        .unwrap_or(0);
    let mut removed = Vec::new();
    for class in 0..data.classes() {
        let excess = data.class_counts()[class].saturating_sub(min_count);
        if excess > 0 {
            let ranked = hardest_in_data(data, table, class)?;
            removed.extend_from_slice(&ranked[..excess]);
        }
    }
    Ok(PruneOutcome {
        dataset: data.remove_ids(&removed)?,
        removed,
    })
}

/// Applies a full prune spec: the strategy, then optional class balancing.
pub fn apply(
    data: &Dataset,
    table: Option<&DifficultyTable>,
    spec: &PruneSpec,
) -> Result<PruneOutcome> {
    let need_table = || table.ok_or_else(|| Error::invalid("prune strategy requires a table"));
    let mut outcome = match &spec.strategy {
        PruneStrategy::HardestPerClass { fraction } => {
            prune_hardest_per_class(data, need_table()?, *fraction)?
        }
        PruneStrategy::GroupHardest { fraction } => {
            prune_group_hardest(data, need_table()?, *fraction)?
        }
        PruneStrategy::Selection { rule } => prune_selection(data, rule, table)?,
        PruneStrategy::RandomPerClass { fraction, seed } => {
            prune_random_per_class(data, *fraction, *seed)?
        }
    };
    if spec.class_balance {
        let balanced = apply_class_balance(&outcome.dataset, need_table()?)?;
        outcome.removed.extend(balanced.removed);
        outcome.dataset = balanced.dataset;
    }
    Ok(outcome)
}

/// Writes the removed ids as `id,class,score` CSV.
pub fn write_removed_ids(
    removed: &[SampleId],
    table: &DifficultyTable,
    path: &std::path::Path,
    fingerprint: Option<&str>,
) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::new();
    if let Some(fp) = fingerprint {
        let _ = writeln!(out, "# fingerprint={fp}");
    }
    out.push_str("id,class,score\n");
    for &id in removed {
        match table.entry(id) {
            Some(e) => {
                let _ = writeln!(out, "{},{},{}", id, e.label, e.score);
            }
            None => {
                let _ = writeln!(out, "{id},,");
            }
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::{
        generate_base, inject_spurious, BarPosition, BaseParams, GridShape, NoiseSpread, Split,
        SpuriousSpec,
    };

    fn dataset(n_per_class: usize) -> Dataset {
        generate_base(&BaseParams {
            classes: 2,
            n_per_class,
            grid: GridShape {
                height: 4,
                width: 4,
                channels: 1,
            },
            noise: NoiseSpread::uniform(0.0, 0.3),
            seed: 21,
            split: Split::Train,
        })
        .unwrap()
    }

    /// Score = id as f32, so "hardest" means "highest id".
    fn id_table(data: &Dataset) -> DifficultyTable {
        let scores: Vec<(SampleId, f32)> = data
            .meta()
            .iter()
            .map(|m| (m.id, m.id as f32 / data.len() as f32))
            .collect();
        DifficultyTable::from_scores(1, data, &scores).unwrap()
    }

    #[test]
    fn zero_fraction_is_identity() {
        let data = dataset(10);
        let table = id_table(&data);
        let out = prune_hardest_per_class(&data, &table, 0.0).unwrap();
        assert!(out.removed.is_empty());
        assert_eq!(out.dataset, data);
    }

    #[test]
    fn fraction_arithmetic_is_floor_per_class() {
        let data = dataset(500);
        let table = id_table(&data);
        let out = prune_hardest_per_class(&data, &table, 0.1).unwrap();
        assert_eq!(out.removed.len(), 100);
        assert_eq!(out.dataset.len(), 900);
        assert_eq!(out.dataset.class_counts(), &[450, 450]);
    }

    #[test]
    fn removed_matches_brute_force_ranking() {
        let data = dataset(50);
        let table = id_table(&data);
        let out = prune_hardest_per_class(&data, &table, 0.2).unwrap();
        // Brute force: per class, top-10 scores descending, ties ascending id.
        let mut expected = Vec::new();
        for class in 0..2 {
            let mut ids = data.class_ids(class);
            ids.sort_unstable_by(|a, b| {
                table
                    .score(*b)
                    .unwrap()
                    .total_cmp(&table.score(*a).unwrap())
                    .then(a.cmp(b))
            });
            expected.extend_from_slice(&ids[..10]);
        }
        assert_eq!(out.removed, expected);
    }

    #[test]
    fn fraction_one_is_rejected() {
        let data = dataset(5);
        let table = id_table(&data);
        assert!(prune_hardest_per_class(&data, &table, 1.0).is_err());
        assert!(prune_hardest_per_class(&data, &table, -0.1).is_err());
    }

    fn injected_dataset() -> Dataset {
        let data = dataset(100);
        let spec = SpuriousSpec {
            target_class: 0,
            channel: 0,
            position: BarPosition::Center,
            width: 1,
            value: 1.0,
            selection: crate::testbed::SelectionRule::Random { k: 40, seed: 3 },
        };
        inject_spurious(&data, &spec, None).unwrap()
    }

    #[test]
    fn group_prune_touches_only_the_spurious_group() {
        let data = injected_dataset();
        let table = id_table(&data);
        let out = prune_group_hardest(&data, &table, 0.2).unwrap();
        // floor(0.2 * 40) = 8 removals, all flagged, all class 0.
        assert_eq!(out.removed.len(), 8);
        for id in &out.removed {
            let pos = data.position_of(*id).unwrap();
            assert!(data.meta_at(pos).has_spurious);
            assert_eq!(data.meta_at(pos).label, 0);
        }
        // Clean group of class 0 untouched.
        assert_eq!(out.dataset.class_counts(), &[92, 100]);
        let zero = prune_group_hardest(&data, &table, 0.0).unwrap();
        assert_eq!(zero.dataset, data);
    }

    #[test]
    fn group_prune_without_groups_is_rejected() {
        let data = dataset(10);
        let table = id_table(&data);
        assert!(prune_group_hardest(&data, &table, 0.1).is_err());
    }

    #[test]
    fn selection_prune_over_spurious_pool() {
        use crate::testbed::SelectionRule;
        let data = injected_dataset();
        let table = id_table(&data);
        let pool = data.spurious_ids();

        let empty = prune_selection(&data, &SelectionRule::ExplicitIds { ids: vec![] }, None)
            .unwrap();
        assert_eq!(empty.dataset, data);

        let hardest =
            prune_selection(&data, &SelectionRule::Hardest { k: 5 }, Some(&table)).unwrap();
        let mut expect = pool.clone();
        expect.sort_unstable_by(|a, b| {
            table
                .score(*b)
                .unwrap()
                .total_cmp(&table.score(*a).unwrap())
                .then(a.cmp(b))
        });
        assert_eq!(hardest.removed, expect[..5].to_vec());

        let whole = prune_selection(
            &data,
            &SelectionRule::Easiest { k: pool.len() },
            Some(&table),
        )
        .unwrap();
        assert_eq!(whole.removed.len(), pool.len());
        assert!(whole.dataset.spurious_ids().is_empty());
    }

    #[test]
    fn selection_prune_rejects_foreign_ids() {
        use crate::testbed::SelectionRule;
        let data = dataset(5);
        assert!(prune_selection(
            &data,
            &SelectionRule::ExplicitIds { ids: vec![999] },
            None
        )
        .is_err());
    }

    #[test]
    fn class_balance_trims_to_min_count() {
        let data = dataset(800);
        let table = id_table(&data);
        // Remove 300 of class 1 to unbalance: counts {800, 500}.
        let unbalance: Vec<SampleId> = data.class_ids(1)[..300].to_vec();
        let data = data.remove_ids(&unbalance).unwrap();
        assert_eq!(data.class_counts(), &[800, 500]);

        let out = apply_class_balance(&data, &table).unwrap();
        assert_eq!(out.dataset.class_counts(), &[500, 500]);
        assert_eq!(out.removed.len(), 300);
        // The hardest (highest-id) class-0 samples went.
        assert!(out.removed.iter().all(|&id| id >= 500));

        let already = apply_class_balance(&out.dataset, &table).unwrap();
        assert!(already.removed.is_empty());
        assert_eq!(already.dataset, out.dataset);
    }

    #[test]
    fn random_per_class_is_deterministic() {
        let data = dataset(50);
        let a = prune_random_per_class(&data, 0.1, 9).unwrap();
        let b = prune_random_per_class(&data, 0.1, 9).unwrap();
        assert_eq!(a.removed, b.removed);
        assert_eq!(a.removed.len(), 10);
    }
}
