//! The self-training loop: pseudo-label the unlabeled pool with the current
//! teacher, keep the most confident labels, augment the grown labeled pool,
//! train a fresh student, and repeat until the pool is exhausted, the
//! iteration budget runs out, or validation stops improving. Every random
//! draw is derived from the experiment seed, so runs are reproducible and
//! resumable by construction.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::BeliefState;
use crate::confidence::{self, select, Criterion, ScoredExample, SelectionConfig, SelectionMethod};
use crate::data::{
    build_examples, partition_test_values, predictions_to_dialogues, read_split_files, DataError,
    DatasetSplit, Example, Label, DEFAULT_PROMPT,
};
use crate::metrics::{evaluate_partitioned, joint_goal_accuracy, EvalResult, MetricsError};
use crate::model::{
    validation_jga, ConditionalGenerator, GenerativeModel, MaskedInfiller, ModelError,
    ModelFactory, TrainSchedule,
};
use crate::ppaug::{augment_dataset, build_slot_value_dict, AugVariant, Augmenter, PpaugError};
use crate::rundir::{RunDir, RunDirError};
use crate::toy::{
    ToyFactory, ToyGenerativeModel, ToyInfiller, ToyModelConfig, ToyUtteranceGenerator,
};
use crate::util::{fnv1a64, hash_str, mix};

/// Version stamp on persisted reports, checkpoints, and summaries.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] PpaugError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    RunDir(#[from] RunDirError),
    #[error("run directory {0} has no checkpoint to resume from")]
    MissingCheckpoint(PathBuf),
    #[error("provided configuration does not match the run's config snapshot")]
    ResumeConfigMismatch,
}

/// One row of the experiment log. `wall_time_secs` is informational; the
/// [`IterationReport::canonical`] form zeroes it so that persisted summaries
/// are byte-for-byte reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub schema_version: u32,
    pub iteration: u32,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_pseudo_added: usize,
    pub mean_confidence: f64,
    pub validation_jga: f64,
    pub test_jga: Option<f64>,
    pub skipped_augmentations: usize,
    pub wall_time_secs: f64,
}

impl IterationReport {
    pub fn canonical(&self) -> IterationReport {
        IterationReport {
            wall_time_secs: 0.0,
            ..self.clone()
        }
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&self.canonical()).expect("report serializes")
    }
}

/// Order-sensitive digest over the canonical forms of a report sequence.
pub fn canonical_reports_digest(reports: &[IterationReport]) -> u64 {
    let mut bytes = Vec::new();
    for r in reports {
        bytes.extend_from_slice(r.canonical_json().as_bytes());
        bytes.push(b'\n');
    }
    fnv1a64(&bytes)
}

/// How the student consumes augmented and labeled pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// Pre-train on the augmented pool, then fine-tune on the labeled pool.
    Separate,
    /// One training stage over the union of both pools.
    Merged,
}

impl std::str::FromStr for TrainingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "separate" => Ok(TrainingMode::Separate),
            "merged" => Ok(TrainingMode::Merged),
            other => Err(format!(
                "unknown training mode {other:?} (expected separate or merged)"
            )),
        }
    }
}

impl std::fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainingMode::Separate => "separate",
            TrainingMode::Merged => "merged",
        })
    }
}

/// Model backends an experiment can run on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    Toy(ToyModelConfig),
}

/// Complete description of one experiment. Serialized verbatim into the run
/// directory so a run can be resumed or audited later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Directory holding labeled/unlabeled/validation/test split files.
    pub data_dir: PathBuf,
    /// Directory this run writes its artifacts into.
    pub run_dir: PathBuf,
    /// Source corpus behind `data_dir`, when known. Lets sweeps re-prepare
    /// splits at other labeled fractions.
    pub corpus: Option<PathBuf>,
    pub prompt: String,
    pub seed: u64,
    pub backend: Backend,
    /// Decode length cap, in belief-text tokens.
    pub max_len: usize,
    /// Fraction of training dialogues that keep labels, recorded from the
    /// prepare step.
    pub labeled_fraction: f64,
    pub criterion: Criterion,
    pub method: SelectionMethod,
    /// Fraction of pseudo-labeled candidates kept per iteration.
    pub k: f64,
    pub variant: AugVariant,
    /// Masking rate for the infilling variants.
    pub mask_rate: f64,
    /// Candidate count for the generation variants.
    pub beam_width: usize,
    pub training_mode: TrainingMode,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Early-stop patience within one training stage, in epochs.
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Hard cap on self-training iterations after the initial teacher.
    pub max_iterations: u32,
    /// Stop when validation has not improved for this many iterations.
    pub st_patience: usize,
    /// Evaluate on the test split at every iteration, not just at the end.
    pub eval_test: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_dir: PathBuf::from("data/split"),
            run_dir: PathBuf::from("runs/default"),
            corpus: None,
            prompt: DEFAULT_PROMPT.to_string(),
            seed: 7,
            backend: Backend::Toy(ToyModelConfig::default()),
            max_len: 64,
            labeled_fraction: 0.1,
            criterion: Criterion::Average,
            method: SelectionMethod::TopK,
            k: 0.5,
            variant: AugVariant::MlmMaintain,
            mask_rate: 0.2,
            beam_width: 3,
            training_mode: TrainingMode::Separate,
            pretrain_epochs: 20,
            finetune_epochs: 10,
            patience: 3,
            batch_size: 128,
            learning_rate: 5e-5,
            max_iterations: 5,
            st_patience: 3,
            eval_test: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), StError> {
        let err = |msg: String| Err(StError::Config(msg));
        if !(self.k > 0.0 && self.k <= 1.0) {
            return err(format!("select.k must be in (0, 1], got {}", self.k));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return err(format!(
                "ppaug.rate must be in [0, 1], got {}",
                self.mask_rate
            ));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return err(format!(
                "data.labeled_fraction must be in (0, 1], got {}",
                self.labeled_fraction
            ));
        }
        if self.beam_width == 0 {
            return err("ppaug.beam_width must be at least 1".to_string());
        }
        if self.max_len == 0 {
            return err("model.max_len must be at least 1".to_string());
        }
        if self.pretrain_epochs == 0 || self.finetune_epochs == 0 {
            return err("training epochs must be at least 1".to_string());
        }
        if self.patience == 0 || self.st_patience == 0 {
            return err("patience values must be at least 1".to_string());
        }
        let Backend::Toy(toy) = &self.backend;
        if !(0.0..=1.0).contains(&toy.noise_rate) {
            return err(format!(
                "model.noise_rate must be in [0, 1], got {}",
                toy.noise_rate
            ));
        }
        Ok(())
    }
}

/// Why the loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    UnlabeledExhausted,
    MaxIterations,
    ValidationPatience,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::UnlabeledExhausted => "unlabeled pool exhausted",
            StopReason::MaxIterations => "iteration budget reached",
            StopReason::ValidationPatience => "validation stopped improving",
        })
    }
}

/// Everything the loop carries between iterations. Serializable in full, so
/// a checkpoint is sufficient to continue a killed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct STState<M> {
    pub iteration: u32,
    pub labeled: Vec<Example>,
    pub unlabeled: Vec<Example>,
    pub teacher: M,
    pub history: Vec<IterationReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointRepr<M> {
    schema_version: u32,
    state: STState<M>,
}

/// Aggregate of a finished run: one canonical row per iteration plus final
/// evaluation. Contains no wall times or paths, so identical experiments
/// produce byte-identical summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub stop_reason: StopReason,
    pub rows: Vec<IterationReport>,
    pub final_validation_jga: f64,
    pub final_test: Option<EvalResult>,
    pub n_pseudo_added_total: usize,
    pub skipped_augmentations_total: usize,
}

/// Result of driving a run to completion.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub run_dir: PathBuf,
    /// True when resume found the run already finished and changed nothing.
    pub already_complete: bool,
}

/// Decodes every example and parses the output into a belief state.
pub fn predict_beliefs(
    model: &impl GenerativeModel,
    examples: &[Example],
    max_len: usize,
) -> Result<Vec<BeliefState>, ModelError> {
    examples
        .iter()
        .map(|ex| {
            Ok(BeliefState::parse(&model.generate(&ex.model_input(), max_len)?.raw_text).belief)
        })
        .collect()
}

/// The loop engine, generic over the model backend. Holds the fixed
/// evaluation pools and the augmentation backends; the mutable pool state
/// travels through [`STState`].
pub struct StRunner<F: ModelFactory> {
    cfg: ExperimentConfig,
    factory: F,
    infiller: Box<dyn MaskedInfiller>,
    generator: Box<dyn ConditionalGenerator>,
    validation: Vec<Example>,
    test: Vec<Example>,
}

impl<F: ModelFactory> StRunner<F> {
    pub fn new(
        cfg: ExperimentConfig,
        factory: F,
        infiller: Box<dyn MaskedInfiller>,
        generator: Box<dyn ConditionalGenerator>,
        validation: Vec<Example>,
        test: Vec<Example>,
    ) -> Self {
        StRunner {
            cfg,
            factory,
            infiller,
            generator,
            validation,
            test,
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    fn pretrain_schedule(&self, iteration: u32) -> TrainSchedule {
        TrainSchedule {
            max_epochs: self.cfg.pretrain_epochs,
            early_stop_patience: self.cfg.patience,
            batch_size: self.cfg.batch_size,
            learning_rate: self.cfg.learning_rate,
            seed: mix(self.cfg.seed, &[hash_str("pretrain"), iteration as u64]),
        }
    }

    fn finetune_schedule(&self, iteration: u32) -> TrainSchedule {
        TrainSchedule {
            max_epochs: self.cfg.finetune_epochs,
            early_stop_patience: self.cfg.patience,
            batch_size: self.cfg.batch_size,
            learning_rate: self.cfg.learning_rate,
            seed: mix(self.cfg.seed, &[hash_str("finetune"), iteration as u64]),
        }
    }

    fn test_jga(&self, model: &F::Model) -> Result<Option<f64>, StError> {
        if !self.cfg.eval_test || self.test.is_empty() {
            return Ok(None);
        }
        let preds = predict_beliefs(model, &self.test, self.cfg.max_len)?;
        let golds: Vec<BeliefState> = self
            .test
            .iter()
            .map(|e| e.target().expect("test examples are gold").clone())
            .collect();
        Ok(Some(joint_goal_accuracy(&preds, &golds)?))
    }

    /// Trains the initial teacher on the gold pool and emits report 0.
    pub fn init_state(
        &self,
        labeled: Vec<Example>,
        unlabeled: Vec<Example>,
    ) -> Result<STState<F::Model>, StError> {
        let started = Instant::now();
        let mut teacher = self.factory.fresh();
        teacher.train(&labeled, &self.validation, &self.pretrain_schedule(0))?;
        let report = IterationReport {
            schema_version: REPORT_SCHEMA_VERSION,
            iteration: 0,
            n_labeled: labeled.len(),
            n_unlabeled: unlabeled.len(),
            n_pseudo_added: 0,
            mean_confidence: 0.0,
            validation_jga: validation_jga(&teacher, &self.validation, self.cfg.max_len)?,
            test_jga: self.test_jga(&teacher)?,
            skipped_augmentations: 0,
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        Ok(STState {
            iteration: 0,
            labeled,
            unlabeled,
            teacher,
            history: vec![report],
        })
    }

    /// Labels the whole unlabeled pool with the teacher and scores each
    /// candidate. Empty or unparseable generations keep an empty target and
    /// score zero, flagged so selection prefers anything parseable.
    pub fn pseudo_label(
        &self,
        teacher: &F::Model,
        unlabeled: &[Example],
        iteration: u32,
    ) -> Result<Vec<ScoredExample>, StError> {
        let mut out = Vec::with_capacity(unlabeled.len());
        for ex in unlabeled {
            let generation = teacher.generate(&ex.model_input(), self.cfg.max_len)?;
            let parse = BeliefState::parse(&generation.raw_text);
            let score_seed = mix(
                self.cfg.seed,
                &[
                    hash_str("score"),
                    iteration as u64,
                    hash_str(&ex.example_id),
                ],
            );
            let (target, score, flagged) = if generation.is_empty() || !parse.is_clean() {
                (BeliefState::new(), 0.0, true)
            } else {
                match confidence::score(&generation, self.cfg.criterion, score_seed) {
                    Ok(s) => (parse.belief, s, false),
                    Err(_) => (BeliefState::new(), 0.0, true),
                }
            };
            let mut example = ex.clone();
            example.label = Some(Label::Pseudo {
                target,
                confidence: score,
            });
            out.push(ScoredExample {
                example,
                generation,
                score,
                criterion: self.cfg.criterion,
                flagged,
            });
        }
        Ok(out)
    }

    /// One teacher-to-student step: pseudo-label, select, freeze, augment,
    /// train, evaluate.
    pub fn run_iteration(&self, state: STState<F::Model>) -> Result<STState<F::Model>, StError> {
        let started = Instant::now();
        let iteration = state.iteration + 1;
        let scored = self.pseudo_label(&state.teacher, &state.unlabeled, iteration)?;
        let sel_cfg = SelectionConfig {
            criterion: self.cfg.criterion,
            method: self.cfg.method,
            k: self.cfg.k,
            seed: mix(self.cfg.seed, &[hash_str("select"), iteration as u64]),
        };
        let (selected, _) = select(scored, &sel_cfg);
        let mean_confidence = if selected.is_empty() {
            0.0
        } else {
            selected.iter().map(|s| s.score).sum::<f64>() / selected.len() as f64
        };
        let selected_ids: std::collections::BTreeSet<String> = selected
            .iter()
            .map(|s| s.example.example_id.clone())
            .collect();
        // Frozen pseudo-labels join the labeled pool; the rest stay
        // unlabeled, untouched and in their original order.
        let mut labeled = state.labeled;
        let n_pseudo_added = selected.len();
        labeled.extend(selected.into_iter().map(|s| s.example));
        let unlabeled: Vec<Example> = state
            .unlabeled
            .into_iter()
            .filter(|e| !selected_ids.contains(&e.example_id))
            .collect();
        let dict = build_slot_value_dict(&labeled);
        let augmenter = match self.cfg.variant {
            AugVariant::MlmMaintain => Augmenter::MlmMaintain {
                infiller: self.infiller.as_ref(),
                rate: self.cfg.mask_rate,
            },
            AugVariant::MlmChange => Augmenter::MlmChange {
                infiller: self.infiller.as_ref(),
                rate: self.cfg.mask_rate,
            },
            AugVariant::GenMaintain => Augmenter::GenMaintain {
                generator: self.generator.as_ref(),
                beam_width: self.cfg.beam_width,
            },
            AugVariant::GenChange => Augmenter::GenChange {
                generator: self.generator.as_ref(),
                dict: &dict,
                beam_width: self.cfg.beam_width,
            },
        };
        let aug_seed = mix(self.cfg.seed, &[hash_str("augment"), iteration as u64]);
        let outcome = augment_dataset(&labeled, &augmenter, aug_seed)?;
        let aug_examples: Vec<Example> = outcome.augmented.iter().map(|a| a.to_example()).collect();
        let student = self.train_student(&aug_examples, &labeled, iteration)?;
        let report = IterationReport {
            schema_version: REPORT_SCHEMA_VERSION,
            iteration,
            n_labeled: labeled.len(),
            n_unlabeled: unlabeled.len(),
            n_pseudo_added,
            mean_confidence,
            validation_jga: validation_jga(&student, &self.validation, self.cfg.max_len)?,
            test_jga: self.test_jga(&student)?,
            skipped_augmentations: outcome.skipped,
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        let mut history = state.history;
        history.push(report);
        Ok(STState {
            iteration,
            labeled,
            unlabeled,
            teacher: student,
            history,
        })
    }

    fn train_student(
        &self,
        aug: &[Example],
        labeled: &[Example],
        iteration: u32,
    ) -> Result<F::Model, StError> {
        let mut student = self.factory.fresh();
        match self.cfg.training_mode {
            TrainingMode::Separate => {
                if !aug.is_empty() {
                    student.train(aug, &self.validation, &self.pretrain_schedule(iteration))?;
                }
                student.train(
                    labeled,
                    &self.validation,
                    &self.finetune_schedule(iteration),
                )?;
            }
            TrainingMode::Merged => {
                let mut combined = aug.to_vec();
                combined.extend_from_slice(labeled);
                student.train(
                    &combined,
                    &self.validation,
                    &self.finetune_schedule(iteration),
                )?;
            }
        }
        Ok(student)
    }

    /// Stop check, evaluated before each iteration.
    pub fn should_stop(&self, state: &STState<F::Model>) -> Option<StopReason> {
        if state.unlabeled.is_empty() {
            return Some(StopReason::UnlabeledExhausted);
        }
        if state.iteration >= self.cfg.max_iterations {
            return Some(StopReason::MaxIterations);
        }
        let vals: Vec<f64> = state.history.iter().map(|r| r.validation_jga).collect();
        let best_idx = vals
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.total_cmp(b).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if vals.len() - 1 - best_idx >= self.cfg.st_patience {
            return Some(StopReason::ValidationPatience);
        }
        None
    }

    /// Drives iterations until a stop condition holds, invoking
    /// `on_iteration` after each completed step (for checkpointing).
    pub fn run_loop(
        &self,
        mut state: STState<F::Model>,
        mut on_iteration: impl FnMut(&STState<F::Model>) -> Result<(), StError>,
    ) -> Result<(STState<F::Model>, StopReason), StError> {
        loop {
            if let Some(reason) = self.should_stop(&state) {
                return Ok((state, reason));
            }
            state = self.run_iteration(state)?;
            on_iteration(&state)?;
        }
    }

    /// Final aggregate: canonical rows, the stop reason, and test evaluation
    /// with slot recall split by whether the gold value appeared in the
    /// initial gold pool.
    pub fn build_summary(
        &self,
        state: &STState<F::Model>,
        stop_reason: StopReason,
    ) -> Result<RunSummary, StError> {
        let rows: Vec<IterationReport> = state
            .history
            .iter()
            .map(IterationReport::canonical)
            .collect();
        let final_validation_jga = rows.last().map(|r| r.validation_jga).unwrap_or(0.0);
        let final_test = if self.test.is_empty() {
            None
        } else {
            let preds = predict_beliefs(&state.teacher, &self.test, self.cfg.max_len)?;
            let golds: Vec<BeliefState> = self
                .test
                .iter()
                .map(|e| e.target().expect("test examples are gold").clone())
                .collect();
            let gold_pool: Vec<BeliefState> = state
                .labeled
                .iter()
                .filter(|e| e.label.as_ref().is_some_and(Label::is_gold))
                .filter_map(|e| e.target().cloned())
                .collect();
            let partition = partition_test_values(&gold_pool, &golds);
            Some(evaluate_partitioned(&preds, &golds, &partition)?)
        };
        Ok(RunSummary {
            schema_version: REPORT_SCHEMA_VERSION,
            stop_reason,
            final_validation_jga,
            final_test,
            n_pseudo_added_total: rows.iter().map(|r| r.n_pseudo_added).sum(),
            skipped_augmentations_total: rows.iter().map(|r| r.skipped_augmentations).sum(),
            rows,
        })
    }

    /// Final teacher's test predictions in corpus line format.
    pub fn predictions_corpus(
        &self,
        state: &STState<F::Model>,
    ) -> Result<Vec<crate::data::Dialogue>, StError> {
        let preds = predict_beliefs(&state.teacher, &self.test, self.cfg.max_len)?;
        Ok(predictions_to_dialogues(&self.test, &preds))
    }
}

/// Builds the four example pools from a split directory. Gold labels are
/// required everywhere except the unlabeled pool, whose beliefs are moved
/// out of model sight for later scoring.
pub fn load_split(cfg: &ExperimentConfig) -> Result<DatasetSplit, StError> {
    let split = read_split_files(&cfg.data_dir)?;
    let require_gold = |examples: Vec<Example>, pool: &str| -> Result<Vec<Example>, StError> {
        if let Some(bad) = examples.iter().find(|e| !e.is_labeled()) {
            return Err(StError::Data(DataError::UnlabeledInput(format!(
                "{} (in the {pool} pool)",
                bad.example_id
            ))));
        }
        Ok(examples)
    };
    let labeled = require_gold(build_examples(&split.labeled, &cfg.prompt), "labeled")?;
    let validation = require_gold(build_examples(&split.validation, &cfg.prompt), "validation")?;
    let test = require_gold(build_examples(&split.test, &cfg.prompt), "test")?;
    let mut unlabeled = build_examples(&split.unlabeled, &cfg.prompt);
    for ex in &mut unlabeled {
        ex.hidden_gold = ex.label.take().map(|l| l.target().clone());
    }
    Ok(DatasetSplit {
        labeled,
        unlabeled,
        validation,
        test,
    })
}

/// A toy-backed runner plus the labeled and unlabeled pools it starts from.
pub type ToyRunnerParts = (StRunner<ToyFactory>, Vec<Example>, Vec<Example>);

/// Assembles the toy-backed runner for `cfg`, returning the labeled and
/// unlabeled pools alongside it. The effective model seed mixes the
/// experiment seed with the backend's own, so either changes the model.
pub fn toy_runner(cfg: &ExperimentConfig) -> Result<ToyRunnerParts, StError> {
    let Backend::Toy(toy_cfg) = &cfg.backend;
    let effective = ToyModelConfig {
        seed: mix(cfg.seed, &[hash_str("model"), toy_cfg.seed]),
        ..toy_cfg.clone()
    };
    let split = load_split(cfg)?;
    let runner = StRunner::new(
        cfg.clone(),
        ToyFactory::new(effective),
        Box::new(ToyInfiller::with_default_table(mix(
            cfg.seed,
            &[hash_str("infill")],
        ))),
        Box::new(ToyUtteranceGenerator::new()),
        split.validation,
        split.test,
    );
    Ok((runner, split.labeled, split.unlabeled))
}

fn persist_state(dir: &RunDir, state: &STState<ToyGenerativeModel>) -> Result<(), StError> {
    let repr = CheckpointRepr {
        schema_version: REPORT_SCHEMA_VERSION,
        state: state.clone(),
    };
    dir.write_json(&dir.checkpoint_path(state.iteration), &repr)?;
    let report = state.history.last().expect("state always has a report");
    dir.write_json(&dir.report_path(state.iteration), report)?;
    Ok(())
}

fn finish_run(
    runner: &StRunner<ToyFactory>,
    dir: &RunDir,
    state: STState<ToyGenerativeModel>,
    stop: StopReason,
) -> Result<RunOutcome, StError> {
    let summary = runner.build_summary(&state, stop)?;
    let dialogues = runner.predictions_corpus(&state)?;
    let mut lines = String::new();
    for d in &dialogues {
        lines.push_str(&crate::data::dialogue_line_json(d));
        lines.push('\n');
    }
    dir.write_bytes(&dir.predictions_path(), lines.as_bytes())?;
    dir.write_json(&dir.summary_path(), &summary)?;
    Ok(RunOutcome {
        summary,
        run_dir: dir.root().to_path_buf(),
        already_complete: false,
    })
}

/// Starts a new run in `cfg.run_dir`, which must not already hold one.
/// Configuration and data problems surface before anything is written.
pub fn run_fresh(cfg: &ExperimentConfig) -> Result<RunOutcome, StError> {
    cfg.validate()?;
    let (runner, labeled, unlabeled) = toy_runner(cfg)?;
    let dir = RunDir::create(&cfg.run_dir)?;
    dir.write_json(&dir.config_path(), cfg)?;
    let state = runner.init_state(labeled, unlabeled)?;
    persist_state(&dir, &state)?;
    let (state, stop) = runner.run_loop(state, |s| persist_state(&dir, s))?;
    finish_run(&runner, &dir, state, stop)
}

/// Continues a killed run from its latest checkpoint. A finished run is
/// returned as-is. When `expected` is given, it must equal the config
/// snapshot stored in the run directory.
pub fn run_resume(
    run_dir: &Path,
    expected: Option<&ExperimentConfig>,
) -> Result<RunOutcome, StError> {
    let dir = RunDir::open(run_dir)?;
    let cfg: ExperimentConfig = dir.read_json(&dir.config_path())?;
    if let Some(expected) = expected {
        if *expected != cfg {
            return Err(StError::ResumeConfigMismatch);
        }
    }
    cfg.validate()?;
    if dir.summary_path().is_file() {
        let summary = dir.read_json(&dir.summary_path())?;
        return Ok(RunOutcome {
            summary,
            run_dir: dir.root().to_path_buf(),
            already_complete: true,
        });
    }
    let latest = dir
        .latest_checkpoint_iteration()?
        .ok_or_else(|| StError::MissingCheckpoint(dir.root().to_path_buf()))?;
    let repr: CheckpointRepr<ToyGenerativeModel> = dir.read_json(&dir.checkpoint_path(latest))?;
    let (runner, _, _) = toy_runner(&cfg)?;
    let (state, stop) = runner.run_loop(repr.state, |s| persist_state(&dir, s))?;
    finish_run(&runner, &dir, state, stop)
}
