//! Declarative experiment configuration (TOML) and its fingerprint.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::TrainConfig;
use crate::pruning::PruneSpec;
use crate::testbed::{BaseParams, GridShape, NoiseSpread, SelectionRule, Split, SpuriousSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub noise_lo: f32,
    pub noise_hi: f32,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            classes: 10,
            train_per_class: 500,
            test_per_class: 200,
            height: 32,
            width: 32,
            channels: 3,
            noise_lo: 0.0,
            noise_hi: 0.8,
        }
    }
}

impl DatasetSection {
    pub fn grid(&self) -> GridShape {
        GridShape {
            height: self.height,
            width: self.width,
            channels: self.channels,
        }
    }

    pub fn base_params(&self, seed: u64, split: Split) -> BaseParams {
        BaseParams {
            classes: self.classes,
            n_per_class: match split {
                Split::Train => self.train_per_class,
                Split::Test => self.test_per_class,
            },
            grid: self.grid(),
            noise: NoiseSpread::uniform(self.noise_lo, self.noise_hi),
            seed,
            split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: vec![128, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// The class whose test samples receive the spurious bar (c2).
    pub victim_class: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { victim_class: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    EasiestVsHardest,
    WindowScan,
    Exclusion,
    BlindPrune,
    GroupPrune,
    Quartiles,
    Probe,
    Pipeline,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::EasiestVsHardest => "easiest_vs_hardest",
            Suite::WindowScan => "window_scan",
            Suite::Exclusion => "exclusion",
            Suite::BlindPrune => "blind_prune",
            Suite::GroupPrune => "group_prune",
            Suite::Quartiles => "quartiles",
            Suite::Probe => "probe",
            Suite::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub suites: Vec<Suite>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seeds: vec![0, 1, 2],
            suites: vec![Suite::Pipeline],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig3Section {
    /// Number of samples injected into the easiest / hardest core samples.
    pub k: usize,
}

impl Default for Fig3Section {
    fn default() -> Self {
        Fig3Section { k: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    pub k: usize,
    /// Distance between window start ranks; 0 means "derive five evenly
    /// spaced windows from the class size".
    pub stride: usize,
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection { k: 100, stride: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExclusionSection {
    pub hardest_fraction: f64,
    pub easiest_fraction: f64,
}

impl Default for ExclusionSection {
    fn default() -> Self {
        ExclusionSection {
            hardest_fraction: 0.10,
            easiest_fraction: 0.97,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlindPruneSection {
    pub fractions: Vec<f64>,
}

impl Default for BlindPruneSection {
    fn default() -> Self {
        BlindPruneSection {
            fractions: vec![0.02, 0.05, 0.10, 0.20],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupPruneSection {
    pub fraction: f64,
    pub class_balance: bool,
}

impl Default for GroupPruneSection {
    fn default() -> Self {
        GroupPruneSection {
            fraction: 0.1,
            class_balance: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuartileSection {
    pub threshold: f64,
}

impl Default for QuartileSection {
    fn default() -> Self {
        QuartileSection {
            threshold: crate::distribution::DEFAULT_IDENTIFIABILITY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub weight_decay_multiplier: f32,
    /// Probe epoch; 0 means "use train.difficulty_epoch".
    pub epoch: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            weight_decay_multiplier: crate::distribution::DEFAULT_PROBE_WEIGHT_DECAY_MULTIPLIER,
            epoch: 0,
        }
    }
}

fn default_spurious() -> SpuriousSpec {
    SpuriousSpec {
        target_class: 0,
        channel: 0,
        position: crate::testbed::BarPosition::Center,
        width: 3,
        value: 1.0,
        selection: SelectionRule::Random { k: 100, seed: 0 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub spurious: SpuriousSpec,
    pub evaluation: EvalSection,
    pub prune: Option<PruneSpec>,
    pub experiment: RunSection,
    pub easiest_vs_hardest: Fig3Section,
    pub scan: ScanSection,
    pub exclusion: ExclusionSection,
    pub blind_prune: BlindPruneSection,
    pub group_prune: GroupPruneSection,
    pub quartiles: QuartileSection,
    pub probe: ProbeSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            spurious: default_spurious(),
            evaluation: EvalSection::default(),
            prune: None,
            experiment: RunSection::default(),
            easiest_vs_hardest: Fig3Section::default(),
            scan: ScanSection::default(),
            exclusion: ExclusionSection::default(),
            blind_prune: BlindPruneSection::default(),
            group_prune: GroupPruneSection::default(),
            quartiles: QuartileSection::default(),
            probe: ProbeSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.dataset.grid().validate()?;
        if self.dataset.classes < 2 {
            return Err(Error::invalid("dataset.classes must be >= 2"));
        }
        if self.spurious.target_class >= self.dataset.classes {
            return Err(Error::invalid("spurious.target_class out of range"));
        }
        if self.evaluation.victim_class >= self.dataset.classes {
            return Err(Error::invalid("evaluation.victim_class out of range"));
        }
        if self.evaluation.victim_class == self.spurious.target_class {
            return Err(Error::invalid(
                "victim class must differ from the spurious target class",
            ));
        }
        if self.experiment.seeds.is_empty() {
            return Err(Error::invalid("experiment.seeds must be nonempty"));
        }
        // Suites that inject before any difficulty table exists cannot use
        // rank-based selection.
        let pre_training_injection = [
            Suite::Pipeline,
            Suite::Quartiles,
            Suite::BlindPrune,
            Suite::GroupPrune,
            Suite::Probe,
            Suite::Exclusion,
        ];
        if self.spurious.selection.needs_table()
            && self
                .experiment
                .suites
                .iter()
                .any(|s| pre_training_injection.contains(s))
        {
            return Err(Error::invalid(
                "rank-based spurious selection is only available in the \
                 easiest_vs_hardest and window_scan suites (no difficulty \
                 table exists before the reference training)",
            ));
        }
        for f in &self.blind_prune.fractions {
            if !(0.0..1.0).contains(f) {
                return Err(Error::invalid("blind_prune fractions must lie in [0, 1)"));
            }
        }
        if !(0.0..1.0).contains(&self.group_prune.fraction) {
            return Err(Error::invalid("group_prune.fraction must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.exclusion.hardest_fraction)
            || !(0.0..=1.0).contains(&self.exclusion.easiest_fraction)
        {
            return Err(Error::invalid("exclusion fractions must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.quartiles.threshold) {
            return Err(Error::invalid("quartiles.threshold must lie in [0, 1]"));
        }
        Ok(())
    }

    /// The probe epoch, defaulting to the difficulty epoch.
    pub fn probe_epoch(&self) -> usize {
        if self.probe.epoch > 0 {
            self.probe.epoch
        } else {
            self.train.difficulty_epoch
        }
    }

    /// Window-scan stride, deriving five evenly spaced windows by default.
    pub fn scan_stride(&self) -> Result<usize> {
        if self.scan.stride > 0 {
            return Ok(self.scan.stride);
        }
        let n = self.dataset.train_per_class;
        if self.scan.k > n {
            return Err(Error::invalid("scan.k exceeds class size"));
        }
        Ok(((n - self.scan.k) / 4).max(1))
    }

    /// SHA-256 over the canonical JSON encoding; embedded in every output
    /// file so numbers are traceable to the exact configuration.
    pub fn fingerprint(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            use std::fmt::Write as _;
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.dataset.classes, 10);
        assert_eq!(cfg.train.epochs, 60);
        assert_eq!(cfg.scan_stride().unwrap(), 100);
        assert_eq!(cfg.probe_epoch(), 6);
    }

    #[test]
    fn full_toml_roundtrip() {
        let text = r#"
[dataset]
classes = 4
train_per_class = 50
test_per_class = 20
height = 8
width = 8
channels = 1
noise_lo = 0.0
noise_hi = 0.5

[model]
hidden = [32]

[train]
epochs = 10
batch_size = 16
lr_initial = 0.05
lr_milestones = [6]
lr_factor = 0.1
momentum = 0.9
weight_decay = 0.0001
difficulty_epoch = 2

[spurious]
target_class = 0
channel = 0
position = "center"
width = 1
value = 1.0
selection = { rule = "random", k = 10, seed = 7 }

[evaluation]
victim_class = 2

[prune]
strategy = "hardest_per_class"
fraction = 0.1

[experiment]
seeds = [0, 1]
suites = ["pipeline", "quartiles"]
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.dataset.classes, 4);
        assert_eq!(cfg.model.hidden, vec![32]);
        assert_eq!(cfg.evaluation.victim_class, 2);
        assert!(matches!(
            cfg.prune,
            Some(PruneSpec {
                strategy: crate::pruning::PruneStrategy::HardestPerClass { .. },
                class_balance: false,
            })
        ));
        assert_eq!(
            cfg.experiment.suites,
            vec![Suite::Pipeline, Suite::Quartiles]
        );
        // Fingerprint is stable for equal configs.
        let again = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.fingerprint(), again.fingerprint());
        assert_ne!(
            cfg.fingerprint(),
            ExperimentConfig::default().fingerprint()
        );
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(ExperimentConfig::from_toml("[dataset]\nclasses = 1\n").is_err());
        assert!(
            ExperimentConfig::from_toml("[evaluation]\nvictim_class = 0\n").is_err(),
            "victim == target must be rejected"
        );
        let rank_inject = r#"
[spurious]
selection = { rule = "hardest", k = 5 }
[experiment]
suites = ["pipeline"]
"#;
        assert!(ExperimentConfig::from_toml(rank_inject).is_err());
        let rank_ok = r#"
[spurious]
selection = { rule = "hardest", k = 5 }
[experiment]
suites = ["easiest_vs_hardest"]
"#;
        assert!(ExperimentConfig::from_toml(rank_ok).is_ok());
        assert!(ExperimentConfig::from_toml("[unknown_section]\nx = 1\n").is_err());
    }

    #[test]
    fn bar_position_accepts_column_and_center() {
        let cfg =
            ExperimentConfig::from_toml("[spurious]\nposition = 5\nwidth = 2\n").unwrap();
        assert_eq!(
            cfg.spurious.position,
            crate::testbed::BarPosition::Column(5)
        );
        assert!(ExperimentConfig::from_toml("[spurious]\nposition = \"left\"\n").is_err());
    }
}
