//! Per-sample difficulty: the L2 distance between the early-snapshot class
//! probabilities and the one-hot label, with canonical per-class rankings.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::testbed::{Dataset, SampleId};

/// Largest possible score: probability mass fully on a wrong class.
pub const MAX_SCORE: f32 = std::f32::consts::SQRT_2;

#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyEntry {
    pub id: SampleId,
    pub label: usize,
    pub score: f32,
    /// Carried for analysis only; never consulted by scoring itself.
    pub has_spurious: bool,
    pub core_noise: f32,
}

/// Scores for every training sample at a fixed early epoch, with per-class
/// rankings (descending difficulty, ties broken by ascending id).
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyTable {
    epoch: usize,
    /// Sorted by ascending id.
    entries: Vec<DifficultyEntry>,
    per_class: BTreeMap<usize, Vec<SampleId>>,
}

impl DifficultyTable {
    /// Builds a table from `(id, score)` pairs that must cover `data`
    /// exactly once each.
    pub fn from_scores(epoch: usize, data: &Dataset, scores: &[(SampleId, f32)]) -> Result<Self> {
        if scores.len() != data.len() {
            return Err(Error::invalid(format!(
                "{} scores for {} samples",
                scores.len(),
                data.len()
            )));
        }
        let mut entries = Vec::with_capacity(scores.len());
        for &(id, score) in scores {
            let pos = data
                .position_of(id)
                .ok_or_else(|| Error::invalid(format!("score for unknown id {id}")))?;
            let m = data.meta_at(pos);
            if !score.is_finite() || score < -1e-6 || score > MAX_SCORE + 1e-6 {
                return Err(Error::invalid(format!(
                    "score {score} for id {id} outside [0, sqrt(2)]"
                )));
            }
            entries.push(DifficultyEntry {
                id,
                label: m.label,
                score,
                has_spurious: m.has_spurious,
                core_noise: m.core_noise,
            });
        }
        Self::from_entries(epoch, entries)
    }

    fn from_entries(epoch: usize, mut entries: Vec<DifficultyEntry>) -> Result<Self> {
        entries.sort_unstable_by_key(|e| e.id);
        if entries.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::invalid("duplicate id in difficulty table"));
        }
        let per_class = rank_entries(&entries);
        Ok(DifficultyTable {
            epoch,
            entries,
            per_class,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[DifficultyEntry] {
        &self.entries
    }

    pub fn entry(&self, id: SampleId) -> Option<&DifficultyEntry> {
        self.entries
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn score(&self, id: SampleId) -> Option<f32> {
        self.entry(id).map(|e| e.score)
    }

    /// Ids of a class, hardest first (ties ascending id).
    pub fn hardest_first(&self, class: usize) -> &[SampleId] {
        self.per_class.get(&class).map(|v| &v[..]).unwrap_or(&[])
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_class.keys().copied()
    }

    /// Mean of several tables over the same sample set (multi-seed
    /// averaging; off by default in the pipelines, exposed as an option).
    pub fn mean_of(tables: &[DifficultyTable]) -> Result<DifficultyTable> {
        let first = tables
            .first()
            .ok_or_else(|| Error::invalid("mean_of needs at least one table"))?;
        for t in &tables[1..] {
            if t.len() != first.len()
                || t.entries
                    .iter()
                    .zip(&first.entries)
                    .any(|(a, b)| a.id != b.id || a.label != b.label)
            {
                return Err(Error::invalid("tables cover different samples"));
            }
        }
        let entries = first
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let sum: f64 = tables.iter().map(|t| t.entries[i].score as f64).sum();
                DifficultyEntry {
                    score: (sum / tables.len() as f64) as f32,
                    ..e.clone()
                }
            })
            .collect();
        DifficultyTable::from_entries(first.epoch, entries)
    }

    /// CSV persistence: `id,class,score,has_spurious,core_noise`, with the
    /// capture epoch in a leading comment line.
    pub fn write_csv(&self, path: &Path, fingerprint: Option<&str>) -> Result<()> {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "# spursever-difficulty v1 epoch={}", self.epoch);
        if let Some(fp) = fingerprint {
            let _ = writeln!(out, "# fingerprint={fp}");
        }
        out.push_str("id,class,score,has_spurious,core_noise\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.id,
                e.label,
                e.score,
                u8::from(e.has_spurious),
                e.core_noise
            );
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<DifficultyTable> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut epoch = None;
        let mut entries = Vec::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(e) = rest.trim().strip_prefix("spursever-difficulty v1 epoch=") {
                    epoch = Some(
                        e.parse::<usize>()
                            .map_err(|_| Error::format(path, "bad epoch"))?,
                    );
                }
                continue;
            }
            if line.starts_with("id,") || line.is_empty() {
                continue;
            }
            let mut f = line.split(',');
            let mut next = || {
                f.next()
                    .ok_or_else(|| Error::format(path, format!("short row: {line}")))
            };
            let id = next()?
                .parse::<SampleId>()
                .map_err(|_| Error::format(path, "bad id"))?;
            let label = next()?
                .parse::<usize>()
                .map_err(|_| Error::format(path, "bad class"))?;
            let score = next()?
                .parse::<f32>()
                .map_err(|_| Error::format(path, "bad score"))?;
            let has_spurious = match next()? {
                "0" => false,
                "1" => true,
                other => return Err(Error::format(path, format!("bad flag {other}"))),
            };
            let core_noise = next()?
                .parse::<f32>()
                .map_err(|_| Error::format(path, "bad core_noise"))?;
            entries.push(DifficultyEntry {
                id,
                label,
                score,
                has_spurious,
                core_noise,
            });
        }
        let epoch = epoch.ok_or_else(|| Error::format(path, "missing epoch header"))?;
        DifficultyTable::from_entries(epoch, entries)
    }
}

fn rank_entries(entries: &[DifficultyEntry]) -> BTreeMap<usize, Vec<SampleId>> {
    let mut per_class: BTreeMap<usize, Vec<(SampleId, f32)>> = BTreeMap::new();
    for e in entries {
        per_class.entry(e.label).or_default().push((e.id, e.score));
    }
    per_class
        .into_iter()
        .map(|(class, mut v)| {
            v.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            (class, v.into_iter().map(|(id, _)| id).collect())
        })
        .collect()
}

/// `||p - onehot(y)||_2` for a single probability vector.
pub fn el2n_score(probs: &[f32], label: usize) -> Result<f32> {
    if label >= probs.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let sum: f64 = probs.iter().map(|&p| p as f64).sum();
    if (sum - 1.0).abs() > 1e-4 || probs.iter().any(|&p| p < -1e-6) {
        return Err(Error::invalid(format!(
            "not a probability vector (sum {sum})"
        )));
    }
    let mut sq = 0.0f64;
    for (c, &p) in probs.iter().enumerate() {
        let d = p as f64 - f64::from(u8::from(c == label));
        sq += d * d;
    }
    Ok(sq.sqrt() as f32)
}

/// Scores every sample of `data` with the frozen snapshot network.
/// Evaluation only: the network is never modified, and the result is
/// independent of sample order.
pub fn score_dataset(snapshot: &Network, data: &Dataset, epoch: usize) -> Result<DifficultyTable> {
    if data.is_empty() {
        return Err(Error::invalid("cannot score an empty dataset"));
    }
    if data.feature_dim() != snapshot.arch().input || data.classes() != snapshot.arch().classes {
        return Err(Error::ShapeMismatch(format!(
            "dataset ({} features, {} classes) vs network ({}, {})",
            data.feature_dim(),
            data.classes(),
            snapshot.arch().input,
            snapshot.arch().classes
        )));
    }
    const CHUNK: usize = 512;
    let dim = data.feature_dim();
    let mut feats = vec![0.0f32; CHUNK.min(data.len()) * dim];
    let mut scores: Vec<(SampleId, f32)> = Vec::with_capacity(data.len());
    let positions: Vec<usize> = (0..data.len()).collect();
    for chunk in positions.chunks(CHUNK) {
        let batch = &mut feats[..chunk.len() * dim];
        data.fill_normalized_rows(chunk, batch);
        let probs = snapshot.forward_probs(batch)?;
        for (k, &pos) in chunk.iter().enumerate() {
            let m = data.meta_at(pos);
            scores.push((m.id, el2n_score(probs.row(k), m.label)?));
        }
    }
    DifficultyTable::from_scores(epoch, data, &scores)
}

/// Canonical per-class ranking, hardest first, ties by ascending id. The
/// table must cover `data` exactly.
pub fn rank_per_class(
    table: &DifficultyTable,
    data: &Dataset,
) -> Result<BTreeMap<usize, Vec<SampleId>>> {
    if table.len() != data.len() {
        return Err(Error::invalid(format!(
            "table of {} entries does not cover dataset of {}",
            table.len(),
            data.len()
        )));
    }
    for m in data.meta() {
        if table.entry(m.id).is_none() {
            return Err(Error::invalid(format!("table missing id {}", m.id)));
        }
    }
    Ok(rank_entries(&table.entries))
}
