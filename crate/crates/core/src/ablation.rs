//! Grid comparison experiments over one configuration knob at a time.
//!
//! Each suite enumerates a fixed family of config variants, trains and
//! evaluates every cell on the same fold, and renders an aligned text
//! table. Every table carries a Δ column against its first row, computed
//! as `first_row_error - row_error`, so an entry that does worse than the
//! reference row shows a negative Δ. A cell whose run fails is marked in
//! the table (its error and Δ print as `-`, the failure reason lands in
//! the note column) and the remaining cells still run.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::{BackboneId, BackboneSpec, FreezePolicy, ImageTensor};
use crate::fusion::FusionMode;
use crate::manifest::FaceSample;
use crate::prompt::PromptMode;
use crate::split::FoldSpec;
use crate::train::{evaluate, prepare_dataset, train, ExperimentConfig, NoopObserver, TrainError};

/// The four comparison grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AblationSuite {
    /// Vary the text fed to the fusion stage (4 rows).
    PromptModes,
    /// Vary which towers are frozen (4 rows).
    FreezeGrid,
    /// Vary the fusion mechanism (3 rows).
    FusionModes,
    /// Vary the backbone (3 rows, with parameter counts).
    Backbones,
}

impl AblationSuite {
    /// Every suite, in documentation order.
    pub const ALL: [AblationSuite; 4] = [
        AblationSuite::PromptModes,
        AblationSuite::FreezeGrid,
        AblationSuite::FusionModes,
        AblationSuite::Backbones,
    ];

    /// Config-file / CLI spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            AblationSuite::PromptModes => "prompt_modes",
            AblationSuite::FreezeGrid => "freeze_grid",
            AblationSuite::FusionModes => "fusion_modes",
            AblationSuite::Backbones => "backbones",
        }
    }

    /// Header of the table's label column.
    fn label_header(self) -> &'static str {
        match self {
            AblationSuite::PromptModes => "text input",
            AblationSuite::FreezeGrid => "encoders",
            AblationSuite::FusionModes => "fusion",
            AblationSuite::Backbones => "backbone",
        }
    }
}

impl core::fmt::Display for AblationSuite {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for AblationSuite {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prompt_modes" => Ok(AblationSuite::PromptModes),
            "freeze_grid" => Ok(AblationSuite::FreezeGrid),
            "fusion_modes" => Ok(AblationSuite::FusionModes),
            "backbones" => Ok(AblationSuite::Backbones),
            other => Err(TrainError::UnknownSuite(other.to_string())),
        }
    }
}

/// One table row: a config variant and how it fared.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationRow {
    /// Human-readable name of the varied setting.
    pub label: String,
    /// Fold-mean angular error in degrees; `None` when the cell failed.
    pub error_deg: Option<f64>,
    /// `first_row_error - error_deg`; `None` on the first row and on
    /// failed cells.
    pub delta_deg: Option<f64>,
    /// Free-form annotation: parameter counts for backbone rows, the
    /// failure reason for failed cells.
    pub note: Option<String>,
}

/// A finished suite, ready to render.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationTable {
    /// Which grid this is.
    pub suite: AblationSuite,
    /// Rows in suite order.
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Render as an aligned text table (one decimal of degrees, `-` for
    /// missing entries, Δ always signed).
    pub fn render(&self) -> String {
        let header_label = self.suite.label_header();
        let with_notes = self.rows.iter().any(|r| r.note.is_some());
        let mut cells: Vec<Vec<String>> = Vec::with_capacity(self.rows.len() + 1);
        let mut head = vec![
            header_label.to_string(),
            String::from("angular error"),
            String::from("delta"),
        ];
        if with_notes {
            head.push(String::from("note"));
        }
        cells.push(head);
        for row in &self.rows {
            let mut line = vec![
                row.label.clone(),
                row.error_deg.map_or_else(|| String::from("-"), |e| format!("{e:.1}\u{b0}")),
                row.delta_deg.map_or_else(|| String::from("-"), |d| format!("{d:+.1}\u{b0}")),
            ];
            if with_notes {
                line.push(row.note.clone().unwrap_or_default());
            }
            cells.push(line);
        }
        let columns = cells[0].len();
        let widths: Vec<usize> = (0..columns)
            .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = format!("suite: {}\n", self.suite);
        for (i, row) in cells.iter().enumerate() {
            let mut line = String::new();
            for (c, cell) in row.iter().enumerate() {
                if c > 0 {
                    line.push_str(" | ");
                }
                line.push_str(cell);
                if c + 1 < columns {
                    for _ in cell.chars().count()..widths[c] {
                        line.push(' ');
                    }
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
            if i == 0 {
                let mut rule = String::new();
                for (c, w) in widths.iter().enumerate() {
                    if c > 0 {
                        rule.push_str("-+-");
                    }
                    for _ in 0..*w {
                        rule.push('-');
                    }
                }
                out.push_str(rule.trim_end());
                out.push('\n');
            }
        }
        out
    }
}

/// The config variants of one suite, with label and any static note.
fn suite_cells(suite: AblationSuite, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig, Option<String>)> {
    match suite {
        AblationSuite::PromptModes => {
            [PromptMode::Predefined, PromptMode::PlainFace, PromptMode::EmptyString, PromptMode::NoText]
                .iter()
                .map(|&mode| {
                    let mut cfg = base.clone();
                    cfg.prompt_mode = mode;
                    (mode.label().to_string(), cfg, None)
                })
                .collect()
        }
        AblationSuite::FreezeGrid => [(false, false), (false, true), (true, false), (true, true)]
            .iter()
            .map(|&(image_trainable, text_trainable)| {
                let policy = FreezePolicy { image_trainable, text_trainable };
                let mut cfg = base.clone();
                cfg.freeze = policy;
                (policy.label().to_string(), cfg, None)
            })
            .collect(),
        AblationSuite::FusionModes => FusionMode::ALL
            .iter()
            .map(|&mode| {
                let mut cfg = base.clone();
                cfg.fusion_mode = mode;
                (mode.label().to_string(), cfg, None)
            })
            .collect(),
        AblationSuite::Backbones => BackboneId::ALL
            .iter()
            .map(|&id| {
                let mut cfg = base.clone();
                cfg.backbone = id;
                let spec = BackboneSpec::for_id(id);
                let note = format!("{:.3}M params", spec.param_count_millions);
                (id.label().to_string(), cfg, Some(note))
            })
            .collect(),
    }
}

/// Train and evaluate one cell on `fold`, returning its fold-mean error.
fn run_cell(
    config: &ExperimentConfig,
    items: &[(FaceSample, ImageTensor)],
    fold: &FoldSpec,
) -> Result<f64, TrainError> {
    let model = config.build_model();
    let dataset = prepare_dataset(&model, items, config.prompt_mode)?;
    let outcome = train(config, &dataset, fold, &mut NoopObserver)?;
    let report = evaluate(&outcome.model, &dataset, fold, &config.hash())?;
    Ok(report.fold_mean_deg)
}

/// Run every cell of `suite` against `base`, training each variant from
/// scratch on `fold` of `items` and evaluating on that fold's test split.
///
/// A failing cell does not abort the suite: its row keeps the label, the
/// note records the failure, and the remaining cells still run. Δ values
/// are filled in afterwards against the first row that produced an error.
pub fn run_ablation(
    suite: AblationSuite,
    base: &ExperimentConfig,
    items: &[(FaceSample, ImageTensor)],
    fold: &FoldSpec,
) -> AblationTable {
    let mut rows = Vec::new();
    for (label, config, static_note) in suite_cells(suite, base) {
        let (error_deg, note) = match run_cell(&config, items, fold) {
            Ok(err) => (Some(err), static_note),
            Err(e) => (None, Some(e.to_string())),
        };
        rows.push(AblationRow { label, error_deg, delta_deg: None, note });
    }
    if let Some(reference) = rows.first().and_then(|r| r.error_deg) {
        for row in rows.iter_mut().skip(1) {
            row.delta_deg = row.error_deg.map(|e| reference - e);
        }
    }
    AblationTable { suite, rows }
}
