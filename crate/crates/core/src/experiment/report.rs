//! Experiment report assembly and deterministic CSV/JSON emission.
//!
//! Every file starts with a `# fingerprint=<sha256>` comment tying it to the
//! exact configuration. Seed-level rows come first, aggregate rows follow;
//! aggregates are means (and sample standard deviations) of the seed rows in
//! the same file, computed in f64 from the identical values, so re-parsing
//! the file reproduces them exactly.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::pipeline::{
    ArmResult, BlindPruneSuite, ExclusionSuite, Fig3Suite, GroupPruneSuite, PipelineSuite,
    ProbeSuite, PruneRow, QuartileSuite, ScanSuite,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub fingerprint: String,
    pub seeds: Vec<u64>,
    pub suites: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub easiest_vs_hardest: Option<Fig3Suite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_scan: Option<ScanSuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exclusion: Option<ExclusionSuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quartiles: Option<QuartileSuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blind_prune: Option<BlindPruneSuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_prune: Option<GroupPruneSuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineSuite>,
}

impl ExperimentReport {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        ExperimentReport {
            fingerprint: cfg.fingerprint(),
            seeds: cfg.experiment.seeds.clone(),
            suites: cfg
                .experiment
                .suites
                .iter()
                .map(|s| s.name().to_string())
                .collect(),
            easiest_vs_hardest: None,
            window_scan: None,
            exclusion: None,
            quartiles: None,
            blind_prune: None,
            group_prune: None,
            probe: None,
            pipeline: None,
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes one CSV/JSON file per figure analogue present in the report plus
/// `report.json`; returns the written paths. Output is a pure function of
/// the report, so reruns produce identical bytes.
pub fn emit_outputs(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let fp = &report.fingerprint;
    let mut written = Vec::new();
    let mut emit = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        write_file(&path, &contents)?;
        written.push(path);
        Ok(())
    };

    if let Some(s) = &report.easiest_vs_hardest {
        emit("fig3.csv", fig3_csv(s, fp))?;
    }
    if let Some(s) = &report.window_scan {
        emit("fig4.csv", fig4_csv(s, fp))?;
    }
    if let Some(s) = &report.exclusion {
        emit("fig5.csv", arms_csv(&s.arms, fp))?;
    }
    if let Some(s) = &report.quartiles {
        emit("fig6.csv", fig6_csv(s, fp))?;
    }
    if let Some(s) = &report.blind_prune {
        emit("fig7.csv", prune_rows_csv(&s.rows, fp))?;
    }
    if let Some(s) = &report.group_prune {
        emit("group_prune.csv", prune_rows_csv(&s.rows, fp))?;
    }
    if let Some(s) = &report.probe {
        emit("probe.csv", probe_csv(s, fp))?;
    }
    if let Some(s) = &report.pipeline {
        emit("pipeline.csv", pipeline_csv(s, fp))?;
    }
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::invalid(format!("report serialization: {e}")))?;
    emit("report.json", json + "\n")?;
    Ok(written)
}

fn arm_names(arms: &[ArmResult]) -> Vec<String> {
    let mut names = Vec::new();
    for a in arms {
        if !names.contains(&a.arm) {
            names.push(a.arm.clone());
        }
    }
    names
}

fn fig3_csv(suite: &Fig3Suite, fp: &str) -> String {
    use std::fmt::Write as _;
    let mut out = format!("# fingerprint={fp}\n");
    out.push_str("record,arm,seed,epoch,spurious_rate,worst_group_accuracy,clean_accuracy\n");
    for a in &suite.arms {
        for r in &a.series {
            let _ = writeln!(
                out,
                "series,{},{},{},{},{},",
                a.arm, a.seed, r.epoch, r.spurious_rate, r.worst_group_accuracy
            );
        }
    }
    for a in &suite.arms {
        let _ = writeln!(
            out,
            "final,{},{},,{},{},{}",
            a.arm, a.seed, a.spurious_rate, a.worst_group_accuracy, a.clean_accuracy
        );
    }
    for name in arm_names(&suite.arms) {
        let rows: Vec<&ArmResult> = suite.arms.iter().filter(|a| a.arm == name).collect();
        let rates: Vec<f64> = rows.iter().map(|a| a.spurious_rate).collect();
        let wgas: Vec<f64> = rows.iter().map(|a| a.worst_group_accuracy).collect();
        let cleans: Vec<f64> = rows.iter().map(|a| a.clean_accuracy).collect();
        let _ = writeln!(
            out,
            "aggregate,{name},mean,,{},{},{}",
            mean(&rates),
            mean(&wgas),
            mean(&cleans)
        );
        let _ = writeln!(
            out,
            "aggregate,{name},std,,{},{},{}",
            sample_std(&rates),
            sample_std(&wgas),
            sample_std(&cleans)
        );
    }
    out
}

fn fig4_csv(suite: &ScanSuite, fp: &str) -> String {
    use std::fmt::Write as _;
    let mut out = format!("# fingerprint={fp}\n");
    out.push_str(
        "window_start,seed,spurious_rate,worst_group_accuracy,clean_accuracy,\
         spurious_rate_std,worst_group_accuracy_std,clean_accuracy_std\n",
    );
    for &start in &suite.starts {
        let rows: Vec<_> = suite.rows.iter().filter(|r| r.start == start).collect();
        for r in &rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},,,",
                r.start, r.seed, r.spurious_rate, r.worst_group_accuracy, r.clean_accuracy
            );
        }
        let rates: Vec<f64> = rows.iter().map(|r| r.spurious_rate).collect();
        let wgas: Vec<f64> = rows.iter().map(|r| r.worst_group_accuracy).collect();
        let cleans: Vec<f64> = rows.iter().map(|r| r.clean_accuracy).collect();
        let _ = writeln!(
            out,
            "{start},mean,{},{},{},{},{},{}",
            mean(&rates),
            mean(&wgas),
            mean(&cleans),
            sample_std(&rates),
            sample_std(&wgas),
            sample_std(&cleans)
        );
    }
    out
}

fn arms_csv(arms: &[ArmResult], fp: &str) -> String {
    use std::fmt::Write as _;
    let mut out = format!("# fingerprint={fp}\n");
    out.push_str(
        "arm,seed,spurious_rate,worst_group_accuracy,clean_accuracy,overall_accuracy,removed\n",
    );
    for a in arms {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            a.arm,
            a.seed,
            a.spurious_rate,
            a.worst_group_accuracy,
            a.clean_accuracy,
            a.overall_accuracy,
            a.removed
        );
    }
    for name in arm_names(arms) {
        let rows: Vec<&ArmResult> = arms.iter().filter(|a| a.arm == name).collect();
        let cols: [Vec<f64>; 4] = [
            rows.iter().map(|a| a.spurious_rate).collect(),
            rows.iter().map(|a| a.worst_group_accuracy).collect(),
            rows.iter().map(|a| a.clean_accuracy).collect(),
            rows.iter().map(|a| a.overall_accuracy).collect(),
        ];
        let removed_mean = mean(&rows.iter().map(|a| a.removed as f64).collect::<Vec<_>>());
        let _ = writeln!(
            out,
            "{name},mean,{},{},{},{},{}",
            mean(&cols[0]),
            mean(&cols[1]),
            mean(&cols[2]),
            mean(&cols[3]),
            removed_mean
        );
        let _ = writeln!(
            out,
            "{name},std,{},{},{},{},",
            sample_std(&cols[0]),
            sample_std(&cols[1]),
            sample_std(&cols[2]),
            sample_std(&cols[3])
        );
    }
    out
}

fn fig6_csv(suite: &QuartileSuite, fp: &str) -> String {
    use std::fmt::Write as _;
    let mut out = format!("# fingerprint={fp}\n");
    out.push_str("seed,quartile,count,share\n");
    for s in &suite.per_seed {
        for q in 0..4 {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                s.seed,
                q + 1,
                s.report.counts[q],
                s.report.shares[q]
            );
        }
    }
    for q in 0..4 {
        let counts: Vec<f64> = suite
            .per_seed
            .iter()
            .map(|s| s.report.counts[q] as f64)
            .collect();
        let shares: Vec<f64> = suite.per_seed.iter().map(|s| s.report.shares[q]).collect();
        let _ = writeln!(out, "mean,{},{},{}", q + 1, mean(&counts), mean(&shares));
    }
    out
}

fn prune_rows_csv(rows: &[PruneRow], fp: &str) -> String {
    use std::fmt::Write as _;
    let mut out = format!("# fingerprint={fp}\n");
    out.push_str(
        "fraction,seed,spurious_rate,worst_group_accuracy,clean_accuracy,overall_accuracy,removed\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.fraction,
            r.seed,
            r.spurious_rate,
            r.worst_group_accuracy,
            r.clean_accuracy,
            r.overall_accuracy,
            r.removed
        );
    }
    let mut fractions = Vec::new();
    for r in rows {
        if !fractions.contains(&r.fraction) {
            fractions.push(r.fraction);
        }
    }
    for f in fractions {
        let sel: Vec<&PruneRow> = rows.iter().filter(|r| r.fraction == f).collect();
        let rates: Vec<f64> = sel.iter().map(|r| r.spurious_rate).collect();
        let wgas: Vec<f64> = sel.iter().map(|r| r.worst_group_accuracy).collect();
        let cleans: Vec<f64> = sel.iter().map(|r| r.clean_accuracy).collect();
        let overalls: Vec<f64> = sel.iter().map(|r| r.overall_accuracy).collect();
        let removed = mean(&sel.iter().map(|r| r.removed as f64).collect::<Vec<_>>());
        let _ = writeln!(
            out,
            "{f},mean,{},{},{},{},{}",
            mean(&rates),
            mean(&wgas),
            mean(&cleans),
            mean(&overalls),
            removed
        );
        let _ = writeln!(
            out,
            "{f},std,{},{},{},{},",
            sample_std(&rates),
            sample_std(&wgas),
            sample_std(&cleans),
            sample_std(&overalls)
        );
    }
    out
}

fn probe_csv(suite: &ProbeSuite, fp: &str) -> String {
    use std::fmt::Write as _;
    let mut out = format!("# fingerprint={fp}\n");
    out.push_str("seed,class,epoch,spurious_accuracy,clean_accuracy,gap\n");
    for s in &suite.per_seed {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.seed,
            s.report.class,
            s.report.epoch,
            s.report.spurious_accuracy,
            s.report.clean_accuracy,
            s.report.gap
        );
    }
    let sp: Vec<f64> = suite
        .per_seed
        .iter()
        .map(|s| s.report.spurious_accuracy)
        .collect();
    let cl: Vec<f64> = suite
        .per_seed
        .iter()
        .map(|s| s.report.clean_accuracy)
        .collect();
    let gaps: Vec<f64> = suite.per_seed.iter().map(|s| s.report.gap).collect();
    let _ = writeln!(
        out,
        "mean,,{},{},{},{}",
        suite.epoch,
        mean(&sp),
        mean(&cl),
        mean(&gaps)
    );
    let _ = writeln!(
        out,
        "std,,{},{},{},{}",
        suite.epoch,
        sample_std(&sp),
        sample_std(&cl),
        sample_std(&gaps)
    );
    out
}

fn pipeline_csv(suite: &PipelineSuite, fp: &str) -> String {
    use std::fmt::Write as _;
    let mut out = format!("# fingerprint={fp}\n");
    out.push_str(
        "stage,seed,spurious_rate,worst_group_accuracy,weighted_mean_accuracy,\
         overall_accuracy,clean_accuracy,removed\n",
    );
    for s in &suite.per_seed {
        for (stage, b) in [("pre", &s.pre), ("post", &s.post)] {
            let removed = if stage == "post" { s.removed.len() } else { 0 };
            let _ = writeln!(
                out,
                "{stage},{},{},{},{},{},{},{removed}",
                s.seed,
                b.spurious_rate,
                b.worst_group_accuracy,
                b.weighted_mean_accuracy,
                b.overall_accuracy,
                b.clean_accuracy
            );
        }
    }
    for stage in ["pre", "post"] {
        let sel: Vec<&super::pipeline::EvalBundle> = suite
            .per_seed
            .iter()
            .map(|s| if stage == "pre" { &s.pre } else { &s.post })
            .collect();
        let rates: Vec<f64> = sel.iter().map(|b| b.spurious_rate).collect();
        let wgas: Vec<f64> = sel.iter().map(|b| b.worst_group_accuracy).collect();
        let weighted: Vec<f64> = sel.iter().map(|b| b.weighted_mean_accuracy).collect();
        let overall: Vec<f64> = sel.iter().map(|b| b.overall_accuracy).collect();
        let cleans: Vec<f64> = sel.iter().map(|b| b.clean_accuracy).collect();
        let _ = writeln!(
            out,
            "{stage},mean,{},{},{},{},{},",
            mean(&rates),
            mean(&wgas),
            mean(&weighted),
            mean(&overall),
            mean(&cleans)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_std_basics() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(sample_std(&[5.0]), 0.0);
        let s = sample_std(&[1.0, 2.0, 3.0]);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
