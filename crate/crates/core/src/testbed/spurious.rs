//! Spurious-bar injection and sample selection rules.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, SampleId};
use crate::difficulty::DifficultyTable;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Area presets for the bar width on a 32-wide grid: S1 is the smallest and
/// hardest to learn, S3 the largest and easiest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strength {
    S1,
    S2,
    S3,
}

impl Strength {
    pub fn bar_width(self) -> usize {
        match self {
            Strength::S1 => 1,
            Strength::S2 => 3,
            Strength::S3 => 5,
        }
    }
}

/// Where the vertical bar sits horizontally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarPosition {
    Center,
    Column(usize),
}

impl Serialize for BarPosition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BarPosition::Center => s.serialize_str("center"),
            BarPosition::Column(c) => s.serialize_u64(*c as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BarPosition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(u64),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(c) => Ok(BarPosition::Column(c as usize)),
            Repr::Word(w) if w == "center" => Ok(BarPosition::Center),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "bar position must be a column index or \"center\", got {w:?}"
            ))),
        }
    }
}

/// Which samples of a class an operation applies to. Rank-based variants
/// need a difficulty table; ties always break toward the lower id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SelectionRule {
    Easiest { k: usize },
    Hardest { k: usize },
    /// `k` samples starting at `start` in ascending-difficulty rank order.
    Window { start: usize, k: usize },
    Random { k: usize, seed: u64 },
    AllOfClass,
    ExplicitIds { ids: Vec<SampleId> },
}

impl SelectionRule {
    pub fn needs_table(&self) -> bool {
        matches!(
            self,
            SelectionRule::Easiest { .. } | SelectionRule::Hardest { .. } | SelectionRule::Window { .. }
        )
    }
}

/// Declarative spurious-bar injection: a full-height vertical bar of
/// `width` columns on one channel, set to `value` before normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousSpec {
    pub target_class: usize,
    pub channel: usize,
    pub position: BarPosition,
    pub width: usize,
    pub value: f32,
    pub selection: SelectionRule,
}

impl SpuriousSpec {
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        let grid = data.grid();
        if self.target_class >= data.classes() {
            return Err(Error::invalid(format!(
                "target class {} out of range",
                self.target_class
            )));
        }
        if self.channel >= grid.channels {
            return Err(Error::invalid(format!(
                "channel {} out of range",
                self.channel
            )));
        }
        if self.width == 0 {
            return Err(Error::invalid("bar width must be >= 1"));
        }
        let start = self.bar_start(grid.width)?;
        if start + self.width > grid.width {
            return Err(Error::invalid("bar does not fit inside the grid"));
        }
        if !(0.0..=1.0).contains(&self.value) {
            return Err(Error::invalid(
                "injection value must lie in [0, 1] (pre-normalization scale)",
            ));
        }
        Ok(())
    }

    pub fn bar_start(&self, grid_width: usize) -> Result<usize> {
        match self.position {
            BarPosition::Center => {
                if self.width > grid_width {
                    return Err(Error::invalid("bar wider than grid"));
                }
                Ok((grid_width - self.width) / 2)
            }
            BarPosition::Column(c) => Ok(c),
        }
    }

    /// Feature-vector indices covered by the bar (full image height).
    pub(crate) fn bar_indices(&self, grid: super::GridShape) -> Result<Vec<usize>> {
        let start = self.bar_start(grid.width)?;
        let plane = grid.plane_len();
        let mut idx = Vec::with_capacity(grid.height * self.width);
        for r in 0..grid.height {
            for c in start..start + self.width {
                idx.push(self.channel * plane + r * grid.width + c);
            }
        }
        Ok(idx)
    }
}

/// Resolves a selection rule over an id pool (ascending ids). The pool is a
/// class's ids for injection, or the spurious-flagged ids for exclusion
/// pruning.
pub(crate) fn resolve_rule(
    pool: &[SampleId],
    rule: &SelectionRule,
    table: Option<&DifficultyTable>,
) -> Result<Vec<SampleId>> {
    let need = |k: usize| -> Result<()> {
        if k > pool.len() {
            Err(Error::invalid(format!(
                "selection of {k} exceeds pool of {}",
                pool.len()
            )))
        } else {
            Ok(())
        }
    };
    let scored = |table: Option<&DifficultyTable>| -> Result<Vec<(SampleId, f32)>> {
        let table = table.ok_or_else(|| {
            Error::invalid("rank-based selection rule requires a difficulty table")
        })?;
        pool.iter()
            .map(|&id| {
                table
                    .score(id)
                    .map(|s| (id, s))
                    .ok_or_else(|| Error::invalid(format!("difficulty table missing id {id}")))
            })
            .collect()
    };

    match rule {
        SelectionRule::Easiest { k } => {
            need(*k)?;
            let mut s = scored(table)?;
            s.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            Ok(s.into_iter().take(*k).map(|(id, _)| id).collect())
        }
        SelectionRule::Hardest { k } => {
            need(*k)?;
            let mut s = scored(table)?;
            s.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            Ok(s.into_iter().take(*k).map(|(id, _)| id).collect())
        }
        SelectionRule::Window { start, k } => {
            need(*k)?;
            if start + k > pool.len() {
                return Err(Error::invalid(format!(
                    "window [{start}, {}) out of range for pool of {}",
                    start + k,
                    pool.len()
                )));
            }
            let mut s = scored(table)?;
            s.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            Ok(s[*start..start + k].iter().map(|&(id, _)| id).collect())
        }
        SelectionRule::Random { k, seed } => {
            need(*k)?;
            let mut ids = pool.to_vec();
            let mut rng = rng::stream(*seed, Domain::Select, 0);
            ids.shuffle(&mut rng);
            ids.truncate(*k);
            Ok(ids)
        }
        SelectionRule::AllOfClass => Ok(pool.to_vec()),
        SelectionRule::ExplicitIds { ids } => {
            let mut seen = std::collections::BTreeSet::new();
            for id in ids {
                if !pool.contains(id) {
                    return Err(Error::invalid(format!("id {id} not in selection pool")));
                }
                if !seen.insert(*id) {
                    return Err(Error::invalid(format!("duplicate id {id} in selection")));
                }
            }
            Ok(ids.clone())
        }
    }
}

/// Resolves `rule` against class `class` of `data`. Results are ordered by
/// the rule (rank order for rank rules, draw order for random, ascending id
/// otherwise).
pub fn select_samples(
    data: &Dataset,
    class: usize,
    rule: &SelectionRule,
    table: Option<&DifficultyTable>,
) -> Result<Vec<SampleId>> {
    if class >= data.classes() {
        return Err(Error::invalid(format!("class {class} out of range")));
    }
    let pool = data.class_ids(class);
    resolve_rule(&pool, rule, table)
}

/// Applies the spec's bar to the selected samples of the target class.
/// Exactly the selected samples change; flags and group ids are updated; no
/// other pixel, sample, or label is touched. Runs on pre-normalization
/// values (normalization statistics pass through unchanged).
pub fn inject_spurious(
    data: &Dataset,
    spec: &SpuriousSpec,
    table: Option<&DifficultyTable>,
) -> Result<Dataset> {
    spec.validate(data)?;
    let selected = select_samples(data, spec.target_class, &spec.selection, table)?;
    let indices = spec.bar_indices(data.grid())?;
    let mut out = data.clone();
    for id in selected {
        let pos = out
            .position_of(id)
            .ok_or_else(|| Error::invalid(format!("selected id {id} vanished")))?;
        out.set_bar_pixels(pos, &indices, spec.value);
    }
    Ok(out)
}

/// Test-time injection: every sample of the victim class `c2` gets the bar.
#[derive(Debug, Clone)]
pub struct SpuriousTestSplit {
    /// The whole test set with the victim class injected, original order.
    pub full: Dataset,
    /// Only the injected victim-class samples.
    pub injected: Dataset,
    /// The untouched complement (all other classes), for overall-accuracy
    /// measurement.
    pub clean: Dataset,
}

pub fn make_spurious_test_set(
    test: &Dataset,
    spec: &SpuriousSpec,
    victim_class: usize,
) -> Result<SpuriousTestSplit> {
    spec.validate(test)?;
    if victim_class == spec.target_class {
        return Err(Error::invalid(
            "victim class must differ from the spurious feature's class",
        ));
    }
    if victim_class >= test.classes() || test.class_counts()[victim_class] == 0 {
        return Err(Error::invalid(format!(
            "victim class {victim_class} absent from test set"
        )));
    }
    let indices = spec.bar_indices(test.grid())?;
    let mut full = test.clone();
    let victim_positions = test.class_positions(victim_class);
    for &pos in &victim_positions {
        full.set_bar_pixels(pos, &indices, spec.value);
    }
    let other_positions: Vec<usize> = (0..test.len())
        .filter(|&p| test.label_at(p) != victim_class)
        .collect();
    let injected = full.subset_positions(&victim_positions)?;
    let clean = test.subset_positions(&other_positions)?;
    Ok(SpuriousTestSplit {
        full,
        injected,
        clean,
    })
}
