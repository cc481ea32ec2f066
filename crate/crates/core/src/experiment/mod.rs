//! Experiment orchestration: declarative configs, per-seed suites, and
//! deterministic report emission. The library API mirrors the CLI
//! subcommands one-to-one.

mod config;
mod pipeline;
mod report;

pub use config::{
    BlindPruneSection, DatasetSection, EvalSection, ExclusionSection, ExperimentConfig,
    Fig3Section, GroupPruneSection, ModelSection, ProbeSection, QuartileSection, RunSection,
    ScanSection, Suite,
};
pub use pipeline::{
    architecture, early_snapshot_table, evaluate_checkpoint, evaluate_net, generate_splits,
    run_all, run_blind_prune, run_easiest_vs_hardest, run_exclusion, run_group_prune,
    run_pipeline, run_probe, run_quartiles, run_window_scan, stage_train_config, ArmResult,
    BlindPruneSuite, EvalBundle, ExclusionSuite, Fig3Suite, GroupPruneSuite, PipelineSeed,
    PipelineSuite, ProbeSeed, ProbeSuite, PruneRow, QuartileSeed, QuartileSuite, ScanSuite,
    WindowRow,
};
pub use report::{emit_outputs, mean, sample_std, ExperimentReport};
