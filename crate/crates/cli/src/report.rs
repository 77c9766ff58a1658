//! Run records on disk and rendered result tables.
//!
//! Every training or evaluation run writes a `metrics.json` into its run
//! directory. `gazeclip report --runs <dir>` walks the tree, groups
//! records by config hash, and renders one table per experiment with a
//! sample-weighted overall mean. Angular errors render to one decimal
//! place.

use crate::error::CliError;
use gazeclip_core::train::{pooled_mean_deg, MetricsReport};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use walkdir::WalkDir;

/// File name every run directory uses for its record.
pub const METRICS_FILE: &str = "metrics.json";

/// One run's persisted outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Fold index the run trained/evaluated.
    pub fold: usize,
    /// Protocol name (`loso`, `kfold3`).
    pub protocol: String,
    /// Backbone spelling from the config.
    pub backbone: String,
    /// Fusion mode spelling from the config.
    pub fusion_mode: String,
    /// Prompt mode spelling from the config.
    pub prompt_mode: String,
    /// Run seed.
    pub seed: u64,
    /// Fold evaluation metrics.
    pub metrics: MetricsReport,
    /// Mean training loss per completed epoch (empty for evaluation-only
    /// records).
    pub epoch_losses: Vec<f64>,
}

/// Find and parse every `metrics.json` under `dir`.
pub fn collect_runs(dir: &Path) -> Result<Vec<(PathBuf, RunRecord)>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Io {
            message: format!("runs directory `{}` does not exist", dir.display()),
            source: None,
        });
    }
    let mut found = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::io_msg(format!("cannot walk `{}`: {e}", dir.display())))?;
        if entry.file_type().is_file() && entry.file_name() == METRICS_FILE {
            let path = entry.path().to_path_buf();
            let text = crate::error::read_file(&path)?;
            let record: RunRecord = serde_json::from_str(&text).map_err(|e| {
                CliError::Contract(format!("`{}` is not a run record: {e}", path.display()))
            })?;
            found.push((path, record));
        }
    }
    Ok(found)
}

/// Render one fold's metrics as a per-subject table.
pub fn render_metrics(metrics: &MetricsReport) -> String {
    let mut out = String::new();
    let width = metrics
        .per_subject
        .iter()
        .map(|s| s.subject_id.chars().count())
        .max()
        .unwrap_or(0)
        .max("subject".len());
    out.push_str(&format!("{:<width$} | samples | mean error\n", "subject"));
    out.push_str(&format!("{:-<width$}-+---------+-----------\n", ""));
    for subject in &metrics.per_subject {
        out.push_str(&format!(
            "{:<width$} | {:>7} | {:>9.1}\u{b0}\n",
            subject.subject_id, subject.sample_count, subject.mean_error_deg
        ));
    }
    out.push_str(&format!(
        "fold mean: {:.1}\u{b0} over {} samples\n",
        metrics.fold_mean_deg, metrics.sample_count
    ));
    out
}

/// Render all records grouped by experiment (config hash), each group with
/// per-fold rows and a sample-weighted overall mean.
pub fn render_report(records: &[RunRecord]) -> String {
    if records.is_empty() {
        return String::from("no run records found\n");
    }
    let mut hashes: Vec<&str> = records.iter().map(|r| r.metrics.config_hash.as_str()).collect();
    hashes.sort_unstable();
    hashes.dedup();

    let mut out = String::new();
    for (i, hash) in hashes.iter().enumerate() {
        let mut group: Vec<&RunRecord> =
            records.iter().filter(|r| r.metrics.config_hash == *hash).collect();
        group.sort_by_key(|r| r.fold);
        let head = group[0];
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "experiment {} (backbone {}, fusion {}, prompt {}, protocol {}, seed {})\n",
            &hash[..hash.len().min(12)],
            head.backbone,
            head.fusion_mode,
            head.prompt_mode,
            head.protocol,
            head.seed
        ));
        out.push_str("fold | samples | mean error\n");
        out.push_str("-----+---------+-----------\n");
        for record in &group {
            out.push_str(&format!(
                "{:>4} | {:>7} | {:>9.1}\u{b0}\n",
                record.fold, record.metrics.sample_count, record.metrics.fold_mean_deg
            ));
        }
        let reports: Vec<MetricsReport> = group.iter().map(|r| r.metrics.clone()).collect();
        if let Some(overall) = pooled_mean_deg(&reports) {
            let total: usize = reports.iter().map(|r| r.sample_count).sum();
            out.push_str(&format!(
                "overall (sample-weighted): {overall:.1}\u{b0} over {total} samples, {} fold(s)\n",
                group.len()
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use gazeclip_core::train::SubjectError;

    fn record(hash: &str, fold: usize, mean: f64, samples: usize) -> RunRecord {
        RunRecord {
            fold,
            protocol: String::from("loso"),
            backbone: String::from("rn50"),
            fusion_mode: String::from("cross_attention"),
            prompt_mode: String::from("predefined"),
            seed: 0,
            metrics: MetricsReport {
                fold_mean_deg: mean,
                per_subject: vec![SubjectError {
                    subject_id: format!("s{fold:02}"),
                    mean_error_deg: mean,
                    sample_count: samples,
                }],
                sample_count: samples,
                config_hash: String::from(hash),
                wall_clock_secs: 1.0,
            },
            epoch_losses: vec![0.5, 0.4],
        }
    }

    #[test]
    fn report_groups_by_hash_and_pools_by_samples() {
        let records = vec![
            record("aaaa", 1, 10.0, 1),
            record("aaaa", 0, 4.0, 3),
            record("bbbb", 0, 2.0, 2),
        ];
        let out = render_report(&records);
        // Group aaaa: folds sorted, pooled = (4*3 + 10*1)/4 = 5.5.
        let a_pos = out.find("experiment aaaa").unwrap();
        let b_pos = out.find("experiment bbbb").unwrap();
        assert!(a_pos < b_pos, "groups sorted by hash:\n{out}");
        assert!(out.contains("   0 |       3 |       4.0\u{b0}"), "{out}");
        assert!(out.contains("overall (sample-weighted): 5.5\u{b0} over 4 samples, 2 fold(s)"), "{out}");
        assert!(out.contains("overall (sample-weighted): 2.0\u{b0} over 2 samples, 1 fold(s)"), "{out}");
    }

    #[test]
    fn metrics_table_reports_one_decimal() {
        let rec = record("cccc", 0, 3.649, 7);
        let table = render_metrics(&rec.metrics);
        assert!(table.contains("3.6\u{b0}"), "{table}");
        assert!(table.contains("s00"), "{table}");
        assert!(table.contains("over 7 samples"), "{table}");
    }

    #[test]
    fn collect_finds_nested_records_and_rejects_malformed_ones() {
        let dir = tempfile::tempdir().unwrap();
        let run_a = dir.path().join("runs/exp1-fold0");
        std::fs::create_dir_all(&run_a).unwrap();
        let rec = record("aaaa", 0, 1.0, 1);
        std::fs::write(run_a.join(METRICS_FILE), serde_json::to_string(&rec).unwrap()).unwrap();
        std::fs::write(run_a.join("losses.csv"), "step,loss\n").unwrap();

        let found = collect_runs(dir.path()).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].1, rec);

        std::fs::write(run_a.join(METRICS_FILE), "{ not json").unwrap();
        assert_eq!(collect_runs(dir.path()).unwrap_err().exit_code(), 1);

        let err = collect_runs(&dir.path().join("missing")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
