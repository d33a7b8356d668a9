//! Command-line interface: corpus synthesis, split preparation, training
//! runs, augmentation, evaluation, sweeps, and run reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

/// Prints a line to stdout, ignoring write failures such as a closed pipe:
/// `beliefst report | head` must not turn into a panic.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// As [`out!`] but without the trailing newline, for pre-rendered blocks.
macro_rules! out_raw {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

use crate::belief::BeliefState;
use crate::config::parse_config_file;
use crate::data::{
    build_examples, dialogue_line_json, prepare_corpus, read_corpus, write_corpus,
    write_split_files, CorpusSplit, Dialogue, DEFAULT_PROMPT,
};
use crate::metrics::evaluate_partitioned;
use crate::ppaug::{augment_dataset, build_slot_value_dict, AugVariant, Augmenter};
use crate::rundir::{write_json_atomic, RunDir};
use crate::selftrain::{run_fresh, run_resume, IterationReport, RunOutcome, RunSummary};
use crate::sweep::{render_table, run_sweep, SweepAxis, SweepSpec};
use crate::synth::{synthetic_corpus, SynthConfig};
use crate::toy::{ToyInfiller, ToyUtteranceGenerator};

#[derive(Parser)]
#[command(
    name = "beliefst",
    version,
    about = "Semi-supervised belief state tracking: self-training with \
             purpose-preserving augmentation"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dialogue corpus.
    Synth {
        /// Number of dialogues.
        #[arg(long, default_value_t = 30)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output corpus path (JSON lines, one dialogue per line).
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a corpus into labeled/unlabeled/validation/test files.
    Prepare {
        /// Input corpus (JSON lines).
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory for the four split files plus manifest.json.
        #[arg(long)]
        out_dir: PathBuf,
        /// Fraction of training dialogues that keep their labels.
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        /// Fraction of dialogues held out for validation.
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        /// Fraction of dialogues held out for the test set.
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run the self-training loop described by a config file.
    RunSt {
        /// Config file; see configs/default.conf for every key.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Existing run directory to continue from its latest checkpoint.
        /// With --config, the stored snapshot must match the file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Augment a gold-labeled corpus and write the result as a corpus.
    Augment {
        /// Input corpus; every turn needs a belief annotation.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output corpus of augmented dialogues (ids prefixed `aug:`).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = AugVariant::MlmMaintain)]
        variant: AugVariant,
        /// Masking rate for the infilling variants.
        #[arg(long, default_value_t = 0.2)]
        rate: f64,
        /// Candidate count for the generation variants.
        #[arg(long, default_value_t = 3)]
        beam_width: usize,
        /// Corpus supplying alternative slot values for gen-change
        /// (defaults to the input corpus).
        #[arg(long)]
        dict_from: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = DEFAULT_PROMPT)]
        prompt: String,
    },
    /// Score predictions against gold annotations.
    Evaluate {
        /// Predicted corpus: beliefs on the turns to score.
        #[arg(long)]
        pred: PathBuf,
        /// Gold corpus; turns are aligned by dialogue id and position.
        #[arg(long)]
        gold: PathBuf,
        /// Labeled training corpus; when given, slot recall is also split
        /// into values seen and unseen during training.
        #[arg(long)]
        train_labels: Option<PathBuf>,
    },
    /// Run one experiment per value of a single config key.
    Sweep {
        /// Base config file shared by every cell.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values for the axis.
        #[arg(long)]
        values: String,
        /// Directory for per-cell run dirs, sweep.json, and sweep.txt.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print the per-iteration table of a finished or in-flight run.
    Report {
        /// Run directory.
        #[arg(long)]
        run: PathBuf,
        /// Dump summary.json verbatim instead of the table.
        #[arg(long)]
        json: bool,
    },
}

pub fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Synth { n, seed, out } => cmd_synth(n, seed, &out),
        Command::Prepare {
            input,
            out_dir,
            fraction,
            val_fraction,
            test_fraction,
            seed,
        } => cmd_prepare(
            &input,
            &out_dir,
            fraction,
            val_fraction,
            test_fraction,
            seed,
        ),
        Command::RunSt { config, resume } => cmd_run_st(config.as_deref(), resume.as_deref()),
        Command::Augment {
            input,
            out,
            variant,
            rate,
            beam_width,
            dict_from,
            seed,
            prompt,
        } => cmd_augment(
            &input,
            &out,
            variant,
            rate,
            beam_width,
            dict_from.as_deref(),
            seed,
            &prompt,
        ),
        Command::Evaluate {
            pred,
            gold,
            train_labels,
        } => cmd_evaluate(&pred, &gold, train_labels.as_deref()),
        Command::Sweep {
            config,
            axis,
            values,
            out_dir,
        } => cmd_sweep(&config, axis, &values, &out_dir),
        Command::Report { run, json } => cmd_report(&run, json),
    }
}

fn cmd_synth(n: usize, seed: u64, out: &Path) -> Result<()> {
    let corpus = synthetic_corpus(&SynthConfig::new(n, seed));
    write_corpus(out, &corpus).with_context(|| format!("writing {}", out.display()))?;
    out!("wrote {} dialogues to {}", corpus.len(), out.display());
    Ok(())
}

fn cmd_prepare(
    input: &Path,
    out_dir: &Path,
    fraction: f64,
    val_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<()> {
    let corpus = read_corpus(input).with_context(|| format!("reading {}", input.display()))?;
    let split = prepare_corpus(&corpus, fraction, val_fraction, test_fraction, seed)
        .context("splitting the corpus")?;
    write_split_files(out_dir, &split)
        .with_context(|| format!("writing split files to {}", out_dir.display()))?;
    let manifest = manifest_json(&split, fraction, val_fraction, test_fraction, seed);
    write_json_atomic(&out_dir.join("manifest.json"), &manifest).context("writing manifest")?;
    out!(
        "prepared {} dialogues into {}: {} labeled, {} unlabeled, {} validation, {} test",
        corpus.len(),
        out_dir.display(),
        split.labeled.len(),
        split.unlabeled.len(),
        split.validation.len(),
        split.test.len(),
    );
    Ok(())
}

fn n_turns(dialogues: &[Dialogue]) -> usize {
    dialogues.iter().map(|d| d.turns.len()).sum()
}

fn manifest_json(
    split: &CorpusSplit,
    fraction: f64,
    val_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> serde_json::Value {
    let pool = |dialogues: &[Dialogue]| serde_json::json!({ "dialogues": dialogues.len(), "turns": n_turns(dialogues) });
    serde_json::json!({
        "fraction": fraction,
        "val_fraction": val_fraction,
        "test_fraction": test_fraction,
        "seed": seed,
        "labeled": pool(&split.labeled),
        "unlabeled": pool(&split.unlabeled),
        "validation": pool(&split.validation),
        "test": pool(&split.test),
    })
}

fn cmd_run_st(config: Option<&Path>, resume: Option<&Path>) -> Result<()> {
    let outcome = match (config, resume) {
        (None, None) => bail!("one of --config or --resume is required"),
        (Some(cfg_path), None) => {
            let cfg = parse_config_file(cfg_path)
                .with_context(|| format!("loading {}", cfg_path.display()))?;
            run_fresh(&cfg).context("running the self-training loop")?
        }
        (cfg_path, Some(dir)) => {
            let expected = cfg_path
                .map(|p| parse_config_file(p).with_context(|| format!("loading {}", p.display())))
                .transpose()?;
            run_resume(dir, expected.as_ref()).context("resuming the run")?
        }
    };
    print_outcome(&outcome);
    Ok(())
}

fn print_outcome(outcome: &RunOutcome) {
    if outcome.already_complete {
        out!("run already complete: {}", outcome.run_dir.display());
    } else {
        out!("run finished: {}", outcome.run_dir.display());
    }
    out_raw!("{}", render_run_summary(&outcome.summary));
}

/// Left-aligned columns with two-space gutters; trailing blanks trimmed.
fn align_rows(rows: &[Vec<String>]) -> String {
    let n_cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; n_cols];
    for row in rows {
        for (i, field) in row.iter().enumerate() {
            widths[i] = widths[i].max(field.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, f)| format!("{f:<width$}", width = widths[i]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn opt_jga(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn iteration_rows(rows: &[IterationReport]) -> Vec<Vec<String>> {
    let mut table = vec![[
        "iter",
        "labeled",
        "unlabeled",
        "added",
        "mean_conf",
        "val_jga",
        "test_jga",
        "aug_skip",
    ]
    .map(String::from)
    .to_vec()];
    for r in rows {
        table.push(vec![
            r.iteration.to_string(),
            r.n_labeled.to_string(),
            r.n_unlabeled.to_string(),
            r.n_pseudo_added.to_string(),
            format!("{:.4}", r.mean_confidence),
            format!("{:.4}", r.validation_jga),
            opt_jga(r.test_jga),
            r.skipped_augmentations.to_string(),
        ]);
    }
    table
}

fn render_run_summary(summary: &RunSummary) -> String {
    let mut out = align_rows(&iteration_rows(&summary.rows));
    out.push_str(&format!("stopped: {}\n", summary.stop_reason));
    out.push_str(&format!(
        "pseudo-labels added: {}, augmentations skipped: {}\n",
        summary.n_pseudo_added_total, summary.skipped_augmentations_total
    ));
    out.push_str(&format!(
        "final validation jga: {:.4}\n",
        summary.final_validation_jga
    ));
    if let Some(test) = &summary.final_test {
        out.push_str(&format!(
            "final test: jga {:.4}, slot recall {:.4} (in-train {}, unseen {}) over {} turns\n",
            test.jga,
            test.slot_recall_overall,
            opt_jga(test.slot_recall_in_train),
            opt_jga(test.slot_recall_unseen),
            test.n_turns,
        ));
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn cmd_augment(
    input: &Path,
    out: &Path,
    variant: AugVariant,
    rate: f64,
    beam_width: usize,
    dict_from: Option<&Path>,
    seed: u64,
    prompt: &str,
) -> Result<()> {
    let corpus = read_corpus(input).with_context(|| format!("reading {}", input.display()))?;
    let examples = build_examples(&corpus, prompt);
    let unlabeled = examples.iter().filter(|e| !e.is_labeled()).count();
    if unlabeled > 0 {
        bail!(
            "{unlabeled} turns in {} have no belief annotation",
            input.display()
        );
    }
    let dict_examples = match dict_from {
        None => examples.clone(),
        Some(path) => {
            let dict_corpus =
                read_corpus(path).with_context(|| format!("reading {}", path.display()))?;
            build_examples(&dict_corpus, prompt)
        }
    };
    let dict = build_slot_value_dict(&dict_examples);
    let infiller = ToyInfiller::with_default_table(seed);
    let generator = ToyUtteranceGenerator::new();
    let augmenter = match variant {
        AugVariant::MlmMaintain => Augmenter::MlmMaintain {
            infiller: &infiller,
            rate,
        },
        AugVariant::MlmChange => Augmenter::MlmChange {
            infiller: &infiller,
            rate,
        },
        AugVariant::GenMaintain => Augmenter::GenMaintain {
            generator: &generator,
            beam_width,
        },
        AugVariant::GenChange => Augmenter::GenChange {
            generator: &generator,
            dict: &dict,
            beam_width,
        },
    };
    let outcome = augment_dataset(&examples, &augmenter, seed).context("augmenting")?;
    let lines: Vec<String> = outcome
        .augmented
        .iter()
        .map(|a| dialogue_line_json(&a.to_dialogue()))
        .collect();
    std::fs::write(out, lines.join("\n") + "\n")
        .with_context(|| format!("writing {}", out.display()))?;
    out!(
        "wrote {} augmented dialogues to {} ({} carried over verbatim)",
        outcome.augmented.len(),
        out.display(),
        outcome.skipped,
    );
    Ok(())
}

/// Gold-annotated turns keyed by dialogue id and turn position.
fn annotated_turns(dialogues: &[Dialogue]) -> BTreeMap<(String, usize), BeliefState> {
    let mut out = BTreeMap::new();
    for d in dialogues {
        for (i, turn) in d.turns.iter().enumerate() {
            if let Some(belief) = &turn.gold_belief {
                out.insert((d.dialogue_id.clone(), i), belief.clone());
            }
        }
    }
    out
}

fn cmd_evaluate(pred: &Path, gold: &Path, train_labels: Option<&Path>) -> Result<()> {
    let gold_corpus = read_corpus(gold).with_context(|| format!("reading {}", gold.display()))?;
    let pred_corpus = read_corpus(pred).with_context(|| format!("reading {}", pred.display()))?;
    let pred_map = annotated_turns(&pred_corpus);
    let mut golds = Vec::new();
    let mut preds = Vec::new();
    let mut missing = 0usize;
    for d in &gold_corpus {
        for (i, turn) in d.turns.iter().enumerate() {
            let Some(belief) = &turn.gold_belief else {
                continue;
            };
            golds.push(belief.clone());
            match pred_map.get(&(d.dialogue_id.clone(), i)) {
                Some(p) => preds.push(p.clone()),
                None => {
                    missing += 1;
                    preds.push(BeliefState::default());
                }
            }
        }
    }
    let partition = match train_labels {
        None => Default::default(),
        Some(path) => {
            let train_corpus =
                read_corpus(path).with_context(|| format!("reading {}", path.display()))?;
            let train_beliefs: Vec<BeliefState> = train_corpus
                .iter()
                .flat_map(|d| d.turns.iter().filter_map(|t| t.gold_belief.clone()))
                .collect();
            crate::data::partition_test_values(&train_beliefs, &golds)
        }
    };
    if missing > 0 {
        eprintln!("warning: {missing} gold turns had no prediction and score as empty");
    }
    let result = evaluate_partitioned(&preds, &golds, &partition).context("scoring")?;
    out!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn cmd_sweep(config: &Path, axis: SweepAxis, values: &str, out_dir: &Path) -> Result<()> {
    let base =
        parse_config_file(config).with_context(|| format!("loading {}", config.display()))?;
    let values: Vec<String> = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(String::from)
        .collect();
    let spec = SweepSpec { axis, values, base };
    let report = run_sweep(&spec, out_dir).context("running the sweep")?;
    out_raw!("{}", render_table(&report));
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        eprintln!("warning: {failed} of {} cells failed", report.cells.len());
    }
    out!("details: {}", out_dir.join("sweep.json").display());
    Ok(())
}

fn cmd_report(run: &Path, json: bool) -> Result<()> {
    let dir = RunDir::open(run).with_context(|| format!("opening {}", run.display()))?;
    if dir.summary_path().is_file() {
        if json {
            out_raw!("{}", std::fs::read_to_string(dir.summary_path())?);
        } else {
            let summary: RunSummary = dir.read_json(&dir.summary_path())?;
            out_raw!("{}", render_run_summary(&summary));
        }
        return Ok(());
    }
    // No summary yet: reconstruct what we can from per-iteration reports.
    let mut rows: Vec<IterationReport> = Vec::new();
    for iteration in 0.. {
        let path = dir.report_path(iteration);
        if !path.is_file() {
            break;
        }
        rows.push(dir.read_json(&path)?);
    }
    if rows.is_empty() {
        bail!(
            "{} has neither summary.json nor iteration reports",
            run.display()
        );
    }
    if json {
        out!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        out_raw!("{}", align_rows(&iteration_rows(&rows)));
        out!("run incomplete: no summary.json yet");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn alignment_pads_columns_and_trims_row_ends() {
        let rows = vec![
            vec!["a".to_string(), "long-field".to_string(), "x".to_string()],
            vec!["wider".to_string(), "b".to_string(), "".to_string()],
        ];
        let out = align_rows(&rows);
        assert_eq!(out, "a      long-field  x\nwider  b\n");
    }

    #[test]
    fn summary_rendering_includes_every_iteration() {
        let summary = RunSummary {
            schema_version: 1,
            stop_reason: crate::selftrain::StopReason::MaxIterations,
            rows: vec![IterationReport {
                schema_version: 1,
                iteration: 0,
                n_labeled: 4,
                n_unlabeled: 10,
                n_pseudo_added: 0,
                mean_confidence: 0.0,
                validation_jga: 0.5,
                test_jga: None,
                skipped_augmentations: 0,
                wall_time_secs: 1.25,
            }],
            final_validation_jga: 0.5,
            final_test: None,
            n_pseudo_added_total: 0,
            skipped_augmentations_total: 0,
        };
        let text = render_run_summary(&summary);
        assert!(text.contains("iter"), "{text}");
        assert!(text.contains("0.5000"), "{text}");
        assert!(text.contains("iteration budget reached"), "{text}");
    }
}
