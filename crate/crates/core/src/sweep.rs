//! One-axis parameter sweeps: run the same experiment once per value of a
//! single knob and collect the per-cell summaries into one report.
//!
//! Each cell gets its own run directory under the sweep output directory, so
//! individual cells remain ordinary runs that `report` and `resume` can read.
//! A failed cell is recorded with its error message and does not abort the
//! remaining cells.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::apply_key;
use crate::data::{prepare_corpus, read_corpus, write_split_files};
use crate::rundir::write_json_atomic;
use crate::selftrain::{run_fresh, ExperimentConfig, RunSummary, StError, REPORT_SCHEMA_VERSION};

/// The knob a sweep varies. Exactly one axis per sweep keeps cells comparable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    MaskingRate,
    SelectionK,
    Criterion,
    Method,
    TrainingMode,
    LabeledFraction,
}

impl SweepAxis {
    /// The config key this axis assigns, reusing the config-file vocabulary.
    pub fn config_key(self) -> &'static str {
        match self {
            SweepAxis::MaskingRate => "ppaug.rate",
            SweepAxis::SelectionK => "select.k",
            SweepAxis::Criterion => "select.criterion",
            SweepAxis::Method => "select.method",
            SweepAxis::TrainingMode => "train.mode",
            SweepAxis::LabeledFraction => "data.labeled_fraction",
        }
    }

    pub const ALL: [SweepAxis; 6] = [
        SweepAxis::MaskingRate,
        SweepAxis::SelectionK,
        SweepAxis::Criterion,
        SweepAxis::Method,
        SweepAxis::TrainingMode,
        SweepAxis::LabeledFraction,
    ];
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "masking-rate" => Ok(SweepAxis::MaskingRate),
            "selection-k" => Ok(SweepAxis::SelectionK),
            "criterion" => Ok(SweepAxis::Criterion),
            "method" => Ok(SweepAxis::Method),
            "training-mode" => Ok(SweepAxis::TrainingMode),
            "labeled-fraction" => Ok(SweepAxis::LabeledFraction),
            other => Err(format!(
                "unknown sweep axis {other:?} (expected masking-rate, selection-k, \
                 criterion, method, training-mode, or labeled-fraction)"
            )),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::MaskingRate => "masking-rate",
            SweepAxis::SelectionK => "selection-k",
            SweepAxis::Criterion => "criterion",
            SweepAxis::Method => "method",
            SweepAxis::TrainingMode => "training-mode",
            SweepAxis::LabeledFraction => "labeled-fraction",
        })
    }
}

/// A sweep request: vary `axis` over `values`, holding `base` fixed.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<String>,
    pub base: ExperimentConfig,
}

/// Outcome of one cell. `summary` and `error` are mutually exclusive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: String,
    pub run_dir: PathBuf,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
}

/// Directory-name-safe form of a cell value: alphanumerics kept, everything
/// else folded to `-` so `0.5` and `top-k` both make valid path components.
fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect()
}

fn cell_error(e: impl fmt::Display) -> Option<String> {
    Some(e.to_string())
}

/// Builds the config for one cell, including any per-cell data preparation.
fn cell_config(
    spec: &SweepSpec,
    value: &str,
    cell_dir: &Path,
    data_dir: &Path,
) -> Result<ExperimentConfig, String> {
    let mut cfg = spec.base.clone();
    apply_key(&mut cfg, spec.axis.config_key(), value).map_err(|e| e.to_string())?;
    cfg.run_dir = cell_dir.to_path_buf();
    if spec.axis == SweepAxis::LabeledFraction {
        // A different labeled fraction means a different split, so this axis
        // re-prepares data per cell from the source corpus.
        let corpus_path = cfg.corpus.clone().ok_or_else(|| {
            "labeled-fraction sweeps need data.corpus in the base config".to_string()
        })?;
        let corpus = read_corpus(&corpus_path).map_err(|e| e.to_string())?;
        let split = prepare_corpus(&corpus, cfg.labeled_fraction, 0.1, 0.1, cfg.seed)
            .map_err(|e| e.to_string())?;
        write_split_files(data_dir, &split).map_err(|e| e.to_string())?;
        cfg.data_dir = data_dir.to_path_buf();
    }
    Ok(cfg)
}

/// Runs every cell of the sweep, persisting `sweep.json` and `sweep.txt`
/// under `out_dir` after each cell so partial progress survives a crash.
pub fn run_sweep(spec: &SweepSpec, out_dir: &Path) -> Result<SweepReport, StError> {
    if spec.values.is_empty() {
        return Err(StError::Config(
            "sweep needs at least one value".to_string(),
        ));
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| StError::Config(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut report = SweepReport {
        schema_version: REPORT_SCHEMA_VERSION,
        axis: spec.axis,
        cells: Vec::new(),
    };
    for value in &spec.values {
        let cell_name = format!("cell-{}-{}", spec.axis, sanitize(value));
        let cell_dir = out_dir.join(&cell_name);
        let data_dir = out_dir.join(format!("{cell_name}-data"));
        let cell = match cell_config(spec, value, &cell_dir, &data_dir) {
            Ok(cfg) => match run_fresh(&cfg) {
                Ok(outcome) => SweepCell {
                    value: value.clone(),
                    run_dir: cell_dir,
                    summary: Some(outcome.summary),
                    error: None,
                },
                Err(e) => SweepCell {
                    value: value.clone(),
                    run_dir: cell_dir,
                    summary: None,
                    error: cell_error(e),
                },
            },
            Err(msg) => SweepCell {
                value: value.clone(),
                run_dir: cell_dir,
                summary: None,
                error: Some(msg),
            },
        };
        report.cells.push(cell);
        write_json_atomic(&out_dir.join("sweep.json"), &report)?;
        crate::rundir::write_bytes_atomic(
            &out_dir.join("sweep.txt"),
            render_table(&report).as_bytes(),
        )?;
    }
    Ok(report)
}

/// Renders the sweep as an aligned plain-text table, one row per cell.
pub fn render_table(report: &SweepReport) -> String {
    let mut rows: Vec<[String; 6]> = vec![[
        "value".to_string(),
        "iters".to_string(),
        "val_jga".to_string(),
        "test_jga".to_string(),
        "stop".to_string(),
        "status".to_string(),
    ]];
    for cell in &report.cells {
        let row = match (&cell.summary, &cell.error) {
            (Some(s), _) => [
                cell.value.clone(),
                // Row 0 is the initial teacher; the rest are loop iterations.
                s.rows.len().saturating_sub(1).to_string(),
                format!("{:.4}", s.final_validation_jga),
                s.final_test
                    .as_ref()
                    .map_or_else(|| "-".to_string(), |t| format!("{:.4}", t.jga)),
                s.stop_reason.to_string(),
                "ok".to_string(),
            ],
            (None, Some(err)) => {
                let mut msg = err.clone();
                if msg.len() > 40 {
                    msg.truncate(37);
                    msg.push_str("...");
                }
                [
                    cell.value.clone(),
                    "-".to_string(),
                    "-".to_string(),
                    "-".to_string(),
                    msg,
                    "error".to_string(),
                ]
            }
            (None, None) => [
                cell.value.clone(),
                "-".to_string(),
                "-".to_string(),
                "-".to_string(),
                "-".to_string(),
                "pending".to_string(),
            ],
        };
        rows.push(row);
    }
    let mut widths = [0usize; 6];
    for row in &rows {
        for (w, field) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(field.len());
        }
    }
    let mut out = format!("axis: {}\n", report.axis);
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(widths.iter())
            .map(|(f, w)| format!("{f:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_corpus;
    use crate::synth::{synthetic_corpus, SynthConfig};

    fn base_config(tmp: &Path) -> ExperimentConfig {
        let corpus = synthetic_corpus(&SynthConfig::new(24, 5));
        let corpus_path = tmp.join("corpus.jsonl");
        write_corpus(&corpus_path, &corpus).unwrap();
        let split = prepare_corpus(&corpus, 0.2, 0.1, 0.1, 5).unwrap();
        let data_dir = tmp.join("data");
        write_split_files(&data_dir, &split).unwrap();
        ExperimentConfig {
            data_dir,
            corpus: Some(corpus_path),
            pretrain_epochs: 2,
            finetune_epochs: 2,
            max_iterations: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn axis_names_round_trip_and_map_to_config_keys() {
        for axis in SweepAxis::ALL {
            assert_eq!(axis.to_string().parse::<SweepAxis>().unwrap(), axis);
            let mut cfg = ExperimentConfig::default();
            let value = match axis {
                SweepAxis::Criterion => "max",
                SweepAxis::Method => "random-k",
                SweepAxis::TrainingMode => "merged",
                _ => "0.5",
            };
            apply_key(&mut cfg, axis.config_key(), value).unwrap();
        }
        assert!("epochs".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn sweep_runs_every_cell_and_persists_reports() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = SweepSpec {
            axis: SweepAxis::SelectionK,
            values: vec!["0.25".to_string(), "1.0".to_string()],
            base: base_config(tmp.path()),
        };
        let out_dir = tmp.path().join("sweep");
        let report = run_sweep(&spec, &out_dir).unwrap();
        assert_eq!(report.cells.len(), 2);
        for cell in &report.cells {
            assert!(cell.error.is_none(), "{:?}", cell.error);
            assert!(cell.summary.is_some());
            assert!(cell.run_dir.join("summary.json").is_file());
        }
        let persisted: SweepReport =
            serde_json::from_str(&std::fs::read_to_string(out_dir.join("sweep.json")).unwrap())
                .unwrap();
        assert_eq!(persisted.cells.len(), 2);
        let table = std::fs::read_to_string(out_dir.join("sweep.txt")).unwrap();
        assert!(table.contains("0.25") && table.contains("1.0"), "{table}");
    }

    #[test]
    fn single_cell_sweep_matches_a_standalone_run() {
        let tmp = tempfile::tempdir().unwrap();
        let base = base_config(tmp.path());
        let spec = SweepSpec {
            axis: SweepAxis::MaskingRate,
            values: vec!["0.4".to_string()],
            base: base.clone(),
        };
        let report = run_sweep(&spec, &tmp.path().join("sweep")).unwrap();

        let mut standalone = base;
        standalone.mask_rate = 0.4;
        standalone.run_dir = tmp.path().join("solo");
        let outcome = run_fresh(&standalone).unwrap();
        let cell_summary = report.cells[0].summary.as_ref().unwrap();
        assert_eq!(
            serde_json::to_string(cell_summary).unwrap(),
            serde_json::to_string(&outcome.summary).unwrap(),
        );
    }

    #[test]
    fn invalid_cell_value_is_recorded_without_stopping_the_sweep() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = SweepSpec {
            axis: SweepAxis::SelectionK,
            values: vec!["1.5".to_string(), "0.5".to_string()],
            base: base_config(tmp.path()),
        };
        let report = run_sweep(&spec, &tmp.path().join("sweep")).unwrap();
        let bad = &report.cells[0];
        assert!(bad.summary.is_none());
        assert!(
            bad.error.as_deref().unwrap().contains("select.k"),
            "{:?}",
            bad.error
        );
        assert!(
            !bad.run_dir.exists(),
            "failed cell must not leave a run dir"
        );
        let good = &report.cells[1];
        assert!(good.error.is_none());
        assert!(good.summary.is_some());
    }

    #[test]
    fn labeled_fraction_sweep_prepares_data_per_cell() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = SweepSpec {
            axis: SweepAxis::LabeledFraction,
            values: vec!["0.2".to_string(), "0.6".to_string()],
            base: base_config(tmp.path()),
        };
        let out_dir = tmp.path().join("sweep");
        let report = run_sweep(&spec, &out_dir).unwrap();
        let mut labeled_counts = Vec::new();
        for cell in &report.cells {
            assert!(cell.error.is_none(), "{:?}", cell.error);
            let summary = cell.summary.as_ref().unwrap();
            labeled_counts.push(summary.rows[0].n_labeled);
            let data_dir = out_dir.join(format!(
                "cell-labeled-fraction-{}-data",
                sanitize(&cell.value)
            ));
            assert!(data_dir.join("labeled.jsonl").is_file());
        }
        assert!(
            labeled_counts[1] > labeled_counts[0],
            "larger fraction must label more turns: {labeled_counts:?}"
        );
    }

    #[test]
    fn labeled_fraction_sweep_without_corpus_marks_cells_failed() {
        let tmp = tempfile::tempdir().unwrap();
        let mut base = base_config(tmp.path());
        base.corpus = None;
        let spec = SweepSpec {
            axis: SweepAxis::LabeledFraction,
            values: vec!["0.3".to_string()],
            base,
        };
        let report = run_sweep(&spec, &tmp.path().join("sweep")).unwrap();
        assert!(report.cells[0]
            .error
            .as_deref()
            .unwrap()
            .contains("data.corpus"));
    }
}
