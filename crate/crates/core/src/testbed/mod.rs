//! Synthetic classification testbed.
//!
//! Each class has a deterministic low-frequency grating pattern spanning the
//! whole grid; per-sample additive Gaussian pixel noise with sample-specific
//! sigma (`core_noise`) is the ground-truth difficulty knob. Spurious bars
//! are injected afterwards (see [`spurious`]) with controllable area and
//! proportion.

mod persist;
mod spurious;

pub use persist::{read_dataset, write_dataset};
pub(crate) use spurious::resolve_rule as resolve_rule_over_pool;
pub use spurious::{
    inject_spurious, make_spurious_test_set, select_samples, BarPosition, SelectionRule,
    SpuriousSpec, SpuriousTestSplit, Strength,
};

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::rng::{self, Domain};

pub type SampleId = u32;

/// Feature grids are stored channel-major: `channels` planes of
/// `height x width`, row-major within a plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl GridShape {
    pub fn pixel_count(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::invalid("degenerate grid shape"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Uniform spread for the per-sample noise sigma; `lo == hi` is a point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpread {
    pub lo: f32,
    pub hi: f32,
}

impl NoiseSpread {
    pub fn uniform(lo: f32, hi: f32) -> Self {
        NoiseSpread { lo, hi }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo >= 0.0 && self.hi >= self.lo) || !self.hi.is_finite() {
            return Err(Error::invalid("noise spread needs 0 <= lo <= hi, finite"));
        }
        Ok(())
    }

    fn sample_sigma(&self, rng: &mut impl Rng) -> f32 {
        let u: f32 = rng.random();
        self.lo + (self.hi - self.lo) * u
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: SampleId,
    pub label: usize,
    /// Ground-truth difficulty knob: sigma of the additive pixel noise.
    pub core_noise: f32,
    pub has_spurious: bool,
    pub group_id: usize,
}

/// Group ids follow the (class, spurious-presence) environment convention.
pub fn group_id_for(label: usize, has_spurious: bool) -> usize {
    label * 2 + usize::from(has_spurious)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    classes: usize,
    grid: GridShape,
    split: Split,
    seed: u64,
    meta: Vec<SampleMeta>,
    /// `meta.len() * grid.pixel_count()` values in sample order.
    features: Vec<f32>,
    class_counts: Vec<usize>,
    norm: Option<NormStats>,
    index: BTreeMap<SampleId, usize>,
}

impl Dataset {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        classes: usize,
        grid: GridShape,
        split: Split,
        seed: u64,
        meta: Vec<SampleMeta>,
        features: Vec<f32>,
        class_counts: Vec<usize>,
        norm: Option<NormStats>,
    ) -> Result<Self> {
        grid.validate()?;
        if classes < 2 {
            return Err(Error::invalid("dataset needs at least 2 classes"));
        }
        if features.len() != meta.len() * grid.pixel_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} samples of dim {}",
                features.len(),
                meta.len(),
                grid.pixel_count()
            )));
        }
        if class_counts.len() != classes {
            return Err(Error::invalid("class_counts length must equal classes"));
        }
        let mut index = BTreeMap::new();
        let mut actual_counts = vec![0usize; classes];
        for (pos, m) in meta.iter().enumerate() {
            if m.label >= classes {
                return Err(Error::invalid(format!(
                    "sample {} has label {} out of range",
                    m.id, m.label
                )));
            }
            if m.group_id != group_id_for(m.label, m.has_spurious) {
                return Err(Error::invalid(format!(
                    "sample {} group id {} inconsistent with (label, spurious)",
                    m.id, m.group_id
                )));
            }
            if index.insert(m.id, pos).is_some() {
                return Err(Error::invalid(format!("duplicate sample id {}", m.id)));
            }
            actual_counts[m.label] += 1;
        }
        if actual_counts != class_counts {
            return Err(Error::invalid(
                "recorded class counts do not match actual counts",
            ));
        }
        if let Some(n) = &norm {
            if n.mean.len() != grid.channels || n.std.len() != grid.channels {
                return Err(Error::ShapeMismatch(
                    "normalization stats must have one entry per channel".into(),
                ));
            }
        }
        Ok(Dataset {
            classes,
            grid,
            split,
            seed,
            meta,
            features,
            class_counts,
            norm,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature_dim(&self) -> usize {
        self.grid.pixel_count()
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.norm.as_ref()
    }

    /// Replaces the normalization statistics (e.g. applying the train split's
    /// stats to the test split).
    pub fn with_norm_stats(mut self, norm: Option<NormStats>) -> Result<Self> {
        if let Some(n) = &norm {
            if n.mean.len() != self.grid.channels || n.std.len() != self.grid.channels {
                return Err(Error::ShapeMismatch(
                    "normalization stats must have one entry per channel".into(),
                ));
            }
        }
        self.norm = norm;
        Ok(self)
    }

    pub fn meta(&self) -> &[SampleMeta] {
        &self.meta
    }

    pub fn meta_at(&self, position: usize) -> &SampleMeta {
        &self.meta[position]
    }

    pub fn label_at(&self, position: usize) -> usize {
        self.meta[position].label
    }

    pub fn features_at(&self, position: usize) -> &[f32] {
        let d = self.feature_dim();
        &self.features[position * d..(position + 1) * d]
    }

    pub fn position_of(&self, id: SampleId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// Positions of a class's samples, in dataset order.
    pub fn class_positions(&self, class: usize) -> Vec<usize> {
        self.meta
            .iter()
            .enumerate()
            .filter(|(_, m)| m.label == class)
            .map(|(p, _)| p)
            .collect()
    }

    /// Ids of a class's samples, ascending.
    pub fn class_ids(&self, class: usize) -> Vec<SampleId> {
        let mut ids: Vec<SampleId> = self
            .meta
            .iter()
            .filter(|m| m.label == class)
            .map(|m| m.id)
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Ids of spurious-flagged samples, ascending.
    pub fn spurious_ids(&self) -> Vec<SampleId> {
        let mut ids: Vec<SampleId> = self
            .meta
            .iter()
            .filter(|m| m.has_spurious)
            .map(|m| m.id)
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Writes normalized feature rows for the given positions into `out`
    /// (`positions.len() * feature_dim` values). Without stats the raw
    /// values are copied.
    pub fn fill_normalized_rows(&self, positions: &[usize], out: &mut [f32]) {
        let dim = self.feature_dim();
        debug_assert_eq!(out.len(), positions.len() * dim);
        let plane = self.grid.plane_len();
        let scale: Option<(Vec<f32>, Vec<f32>)> = self.norm.as_ref().map(|n| {
            let inv: Vec<f32> = n.std.iter().map(|&s| 1.0 / s.max(1e-6)).collect();
            (n.mean.clone(), inv)
        });
        exec::for_each_row(out, dim, |k, row| {
            let src = self.features_at(positions[k]);
            match &scale {
                None => row.copy_from_slice(src),
                Some((mean, inv)) => {
                    for ch in 0..self.grid.channels {
                        let (m, s) = (mean[ch], inv[ch]);
                        let base = ch * plane;
                        for j in 0..plane {
                            row[base + j] = (src[base + j] - m) * s;
                        }
                    }
                }
            }
        });
    }

    /// All labels in dataset order.
    pub fn labels(&self) -> Vec<usize> {
        self.meta.iter().map(|m| m.label).collect()
    }

    /// New dataset keeping only `positions`, in the order given.
    pub fn subset_positions(&self, positions: &[usize]) -> Result<Dataset> {
        let dim = self.feature_dim();
        let mut meta = Vec::with_capacity(positions.len());
        let mut features = Vec::with_capacity(positions.len() * dim);
        let mut counts = vec![0usize; self.classes];
        for &p in positions {
            if p >= self.len() {
                return Err(Error::invalid(format!("position {p} out of range")));
            }
            meta.push(self.meta[p].clone());
            features.extend_from_slice(self.features_at(p));
            counts[self.meta[p].label] += 1;
        }
        Dataset::from_parts(
            self.classes,
            self.grid,
            self.split,
            self.seed,
            meta,
            features,
            counts,
            self.norm.clone(),
        )
    }

    /// New dataset with the given ids removed, preserving sample order.
    pub fn remove_ids(&self, remove: &[SampleId]) -> Result<Dataset> {
        use std::collections::BTreeSet;
        let removal: BTreeSet<SampleId> = remove.iter().copied().collect();
        for id in &removal {
            if self.position_of(*id).is_none() {
                return Err(Error::invalid(format!("id {id} not in dataset")));
            }
        }
        let keep: Vec<usize> = (0..self.len())
            .filter(|&p| !removal.contains(&self.meta[p].id))
            .collect();
        self.subset_positions(&keep)
    }

    pub(crate) fn set_bar_pixels(&mut self, position: usize, indices: &[usize], value: f32) {
        let dim = self.feature_dim();
        let base = position * dim;
        for &i in indices {
            self.features[base + i] = value;
        }
        let m = &mut self.meta[position];
        m.has_spurious = true;
        m.group_id = group_id_for(m.label, true);
    }
}

/// Parameters for clean base-dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseParams {
    pub classes: usize,
    pub n_per_class: usize,
    pub grid: GridShape,
    pub noise: NoiseSpread,
    pub seed: u64,
    pub split: Split,
}

/// Generates the clean testbed: per class a deterministic grating pattern,
/// per sample additive Gaussian noise with sigma drawn from `noise`, clamped
/// to `[0, 1]`. Per-channel normalization statistics are computed on the
/// result. Per-sample counter-based seeding makes the output independent of
/// execution order.
pub fn generate_base(params: &BaseParams) -> Result<Dataset> {
    params.grid.validate()?;
    params.noise.validate()?;
    if params.classes < 2 {
        return Err(Error::invalid("need at least 2 classes"));
    }
    if params.n_per_class == 0 {
        return Err(Error::invalid("need at least 1 sample per class"));
    }
    let dim = params.grid.pixel_count();
    let n = params.classes * params.n_per_class;
    let split_tag = match params.split {
        Split::Train => 0u64,
        Split::Test => 1u64,
    };
    let dataset_seed = rng::derive(params.seed, Domain::Dataset, split_tag);

    let patterns: Vec<Vec<f32>> = (0..params.classes)
        .map(|c| class_pattern(c, params.classes, &params.grid))
        .collect();

    let meta: Vec<SampleMeta> = exec::map_indexed(n, |i| {
        let mut sample_rng = rng::stream(dataset_seed, Domain::Sample, i as u64);
        let sigma = params.noise.sample_sigma(&mut sample_rng);
        let label = i / params.n_per_class;
        SampleMeta {
            id: i as SampleId,
            label,
            core_noise: sigma,
            has_spurious: false,
            group_id: group_id_for(label, false),
        }
    });

    let mut features = vec![0.0f32; n * dim];
    exec::for_each_row(&mut features, dim, |i, row| {
        let mut sample_rng = rng::stream(dataset_seed, Domain::Sample, i as u64);
        let sigma = params.noise.sample_sigma(&mut sample_rng);
        let label = i / params.n_per_class;
        let pattern = &patterns[label];
        for (slot, &base) in row.iter_mut().zip(pattern) {
            let z: f32 = sample_rng.sample(StandardNormal);
            *slot = (base + sigma * z).clamp(0.0, 1.0);
        }
    });

    let norm = channel_stats(&features, n, &params.grid);
    Dataset::from_parts(
        params.classes,
        params.grid,
        params.split,
        params.seed,
        meta,
        features,
        vec![params.n_per_class; params.classes],
        Some(norm),
    )
}

/// Deterministic grating for a class: orientations are offset from the axes
/// so no class pattern coincides with a vertical or horizontal bar.
fn class_pattern(class: usize, classes: usize, grid: &GridShape) -> Vec<f32> {
    use std::f32::consts::PI;
    let theta = PI * (2 * class + 1) as f32 / (2 * classes) as f32;
    let (sin_t, cos_t) = theta.sin_cos();
    let freq = 3.0f32;
    let phase0 = 2.0 * PI * class as f32 / classes as f32;
    let mut out = vec![0.0f32; grid.pixel_count()];
    let plane = grid.plane_len();
    for ch in 0..grid.channels {
        let phase = phase0 + 0.7 * ch as f32;
        for r in 0..grid.height {
            for c in 0..grid.width {
                let t = (c as f32 * cos_t + r as f32 * sin_t) / grid.width as f32;
                out[ch * plane + r * grid.width + c] =
                    0.5 + 0.25 * (2.0 * PI * freq * t + phase).sin();
            }
        }
    }
    out
}

fn channel_stats(features: &[f32], n: usize, grid: &GridShape) -> NormStats {
    let plane = grid.plane_len();
    let dim = grid.pixel_count();
    let mut mean = Vec::with_capacity(grid.channels);
    let mut std = Vec::with_capacity(grid.channels);
    for ch in 0..grid.channels {
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        for s in 0..n {
            let base = s * dim + ch * plane;
            for &v in &features[base..base + plane] {
                let x = v as f64;
                sum += x;
                sq += x * x;
            }
        }
        let count = (n * plane) as f64;
        let m = sum / count;
        let var = (sq / count - m * m).max(0.0);
        mean.push(m as f32);
        std.push(var.sqrt() as f32);
    }
    NormStats { mean, std }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params() -> BaseParams {
        BaseParams {
            classes: 2,
            n_per_class: 500,
            grid: GridShape {
                height: 8,
                width: 8,
                channels: 1,
            },
            noise: NoiseSpread::uniform(0.0, 0.5),
            seed: 9,
            split: Split::Train,
        }
    }

    #[test]
    fn sizes_and_counts() {
        let ds = generate_base(&small_params()).unwrap();
        assert_eq!(ds.len(), 1000);
        assert_eq!(ds.class_counts(), &[500, 500]);
        assert_eq!(ds.class_ids(0).len(), 500);
    }

    #[test]
    fn point_mass_noise_gives_identical_samples_within_class() {
        let params = BaseParams {
            noise: NoiseSpread::uniform(0.0, 0.0),
            n_per_class: 4,
            ..small_params()
        };
        let ds = generate_base(&params).unwrap();
        let first = ds.features_at(0).to_vec();
        for p in 1..4 {
            assert_eq!(ds.features_at(p), &first[..]);
        }
        // Different class, different pattern.
        assert_ne!(ds.features_at(4), &first[..]);
    }

    #[test]
    fn generation_is_bit_deterministic() {
        let a = generate_base(&small_params()).unwrap();
        let b = generate_base(&small_params()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn values_stay_in_unit_interval() {
        let ds = generate_base(&BaseParams {
            noise: NoiseSpread::uniform(0.4, 0.9),
            ..small_params()
        })
        .unwrap();
        for p in 0..ds.len() {
            assert!(ds.features_at(p).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn normalized_rows_use_channel_stats() {
        let ds = generate_base(&small_params()).unwrap();
        let stats = ds.norm_stats().unwrap().clone();
        let mut out = vec![0.0f32; ds.feature_dim()];
        ds.fill_normalized_rows(&[3], &mut out);
        let raw = ds.features_at(3);
        let expect = (raw[0] - stats.mean[0]) / stats.std[0].max(1e-6);
        assert!((out[0] - expect).abs() < 1e-6);
    }

    #[test]
    fn remove_ids_preserves_order_and_rejects_unknown() {
        let ds = generate_base(&small_params()).unwrap();
        let pruned = ds.remove_ids(&[0, 999]).unwrap();
        assert_eq!(pruned.len(), 998);
        assert_eq!(pruned.meta_at(0).id, 1);
        assert!(ds.remove_ids(&[5000]).is_err());
    }

    #[test]
    fn degenerate_shapes_are_rejected() {
        let mut p = small_params();
        p.grid.width = 0;
        assert!(generate_base(&p).is_err());
        let mut p = small_params();
        p.classes = 1;
        assert!(generate_base(&p).is_err());
        let mut p = small_params();
        p.noise = NoiseSpread::uniform(0.5, 0.2);
        assert!(generate_base(&p).is_err());
    }
}
