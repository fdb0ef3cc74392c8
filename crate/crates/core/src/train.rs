//! Training drivers wiring the modules into reproducible runs: teacher
//! training, teacher-prediction caching, student training under the three
//! schedules, the alpha sweep, and the whole-model gradient check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{batch_iter, LabeledPair, TaskKind, TeacherCache, Vocab};
use crate::distill::{
    anneal_lambda, distill_loss_on_tape, hard_loss_on_tape, kl_vs_logits, mse_on_tape,
    regression_distill_target, weighted_loss_on_tape, TeacherPredictions,
};
use crate::encoder::{EncoderConfig, PoolingStrategy};
use crate::error::{Error, Result};
use crate::eval::{accuracy, eval_sts, mean_sd};
use crate::model::{Model, ModelKind, ModelVars};
use crate::optim::{AdamState, LrSchedule};
use crate::tensor::{central_diff_grads, max_relative_error, Tape, Tensor, TensorId};
use crate::views::{
    build_cross_input, cross_logits, cross_regression_score, score_to_cosine_range,
    siamese_cosine, siamese_logits,
};

/// How gold labels and teacher predictions mix during student training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Hard,
    Anneal,
    Weight,
}

/// Everything one training run needs, loadable from a JSON plan file.
///
/// `encoder.vocab_size` is treated as a placeholder: when training from data
/// it is replaced by the size of the vocabulary actually built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub task: TaskKind,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default = "default_pooling")]
    pub pooling: PoolingStrategy,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_warmup_ratio")]
    pub warmup_ratio: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: TrainMode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Average instead of summing the per-teacher soft terms. Off by
    /// default: the objective sums over teachers.
    #[serde(default)]
    pub teacher_mean: bool,
}

fn default_pooling() -> PoolingStrategy {
    PoolingStrategy::Mean
}
fn default_batch_size() -> usize {
    16
}
fn default_epochs() -> usize {
    3
}
fn default_base_lr() -> f64 {
    1e-3
}
fn default_warmup_ratio() -> f64 {
    0.1
}
fn default_seed() -> u64 {
    42
}
fn default_mode() -> TrainMode {
    TrainMode::Hard
}
fn default_alpha() -> f64 {
    0.5
}

impl TrainPlan {
    pub fn new(task: TaskKind) -> Self {
        TrainPlan {
            task,
            encoder: EncoderConfig::default(),
            pooling: default_pooling(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            base_lr: default_base_lr(),
            warmup_ratio: default_warmup_ratio(),
            seed: default_seed(),
            mode: default_mode(),
            alpha: default_alpha(),
            teacher_mean: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // vocab_size 0 is a placeholder resolved from the data at train time.
        let mut encoder = self.encoder.clone();
        if encoder.vocab_size == 0 {
            encoder.vocab_size = 1;
        }
        encoder.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::Config(format!("base_lr {} must be positive", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config(format!(
                "warmup_ratio {} outside [0, 1)",
                self.warmup_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: TrainPlan = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad plan file {}: {e}", path.display())))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("plan serialization: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// SHA-256 over the canonical plan JSON; identifies a run configuration.
pub fn config_fingerprint(plan: &TrainPlan) -> String {
    let json = serde_json::to_string(plan).expect("plans always serialize");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Per-step training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub optimizer: AdamState,
    pub steps: Vec<StepLog>,
    pub total_steps: usize,
}

struct PreparedExample {
    a_tokens: Vec<usize>,
    b_tokens: Vec<usize>,
    class: usize,
    score_normalized: f64,
}

fn prepare_examples(pairs: &[LabeledPair], vocab: &Vocab, task: TaskKind) -> Result<Vec<PreparedExample>> {
    pairs
        .iter()
        .map(|pair| {
            let (class, score_normalized) = match task {
                TaskKind::Classification => (pair.class()?, 0.0),
                TaskKind::Regression => (0, score_to_cosine_range(pair.score()?)),
            };
            Ok(PreparedExample {
                a_tokens: vocab.encode(&pair.sentence_a),
                b_tokens: vocab.encode(&pair.sentence_b),
                class,
                score_normalized,
            })
        })
        .collect()
}

fn teacher_dists<'a>(cache: &'a TeacherCache, example: usize) -> Result<Vec<&'a [f64]>> {
    match &cache.predictions {
        TeacherPredictions::Classification(p) => {
            Ok(p[example].iter().map(Vec::as_slice).collect())
        }
        TeacherPredictions::Regression(_) => Err(Error::DataValidation(
            "classification training needs a classification cache".into(),
        )),
    }
}

fn teacher_scalars(cache: &TeacherCache, example: usize) -> Result<Vec<f64>> {
    match &cache.predictions {
        TeacherPredictions::Regression(p) => Ok(p[example].clone()),
        TeacherPredictions::Classification(_) => Err(Error::DataValidation(
            "regression training needs a regression cache".into(),
        )),
    }
}

/// Per-example loss for one model kind under one schedule position.
#[allow(clippy::too_many_arguments)]
fn example_loss(
    tape: &mut Tape,
    model: &Model,
    vars: &ModelVars,
    example: &PreparedExample,
    mode: TrainMode,
    lambda: f64,
    alpha: f64,
    teacher_mean: bool,
    cache: Option<(&TeacherCache, usize)>,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId> {
    let config = &model.config;
    match model.kind {
        ModelKind::CrossClassifier => {
            let pair = build_cross_input(&example.a_tokens, &example.b_tokens, config.max_seq_len)?;
            let logits = cross_logits(
                tape,
                config,
                &vars.encoder,
                vars.head.expect("cross model has a head"),
                &pair,
                true,
                rng,
            )?;
            hard_loss_on_tape(tape, example.class, model.num_classes, logits)
        }
        ModelKind::CrossRegressor => {
            let pair = build_cross_input(&example.a_tokens, &example.b_tokens, config.max_seq_len)?;
            let pred = cross_regression_score(
                tape,
                config,
                &vars.encoder,
                vars.head.expect("cross model has a head"),
                &pair,
                true,
                rng,
            )?;
            mse_on_tape(tape, pred, example.score_normalized)
        }
        ModelKind::SiameseClassifier => {
            let logits = siamese_logits(
                tape,
                config,
                &vars.encoder,
                vars.head.expect("siamese classifier has a head"),
                model.pooling,
                &example.a_tokens,
                &example.b_tokens,
                true,
                rng,
            )?;
            match mode {
                TrainMode::Hard => {
                    hard_loss_on_tape(tape, example.class, model.num_classes, logits)
                }
                TrainMode::Anneal => {
                    let (cache, idx) = cache.expect("anneal mode requires a cache");
                    let dists = teacher_dists(cache, idx)?;
                    let loss =
                        distill_loss_on_tape(tape, example.class, &dists, logits, lambda)?;
                    if teacher_mean && dists.len() > 1 {
                        tape.scale(loss, 1.0 / dists.len() as f64)
                    } else {
                        Ok(loss)
                    }
                }
                TrainMode::Weight => {
                    let (cache, idx) = cache.expect("weight mode requires a cache");
                    let dists = teacher_dists(cache, idx)?;
                    if teacher_mean && dists.len() > 1 {
                        // α·mean_k KL + (1−α)·CE, assembled from primitives.
                        let mut soft = None;
                        for teacher in &dists {
                            let term = kl_vs_logits(tape, teacher, logits)?;
                            soft = Some(match soft {
                                None => term,
                                Some(acc) => tape.add(acc, term)?,
                            });
                        }
                        let soft = tape.scale(soft.expect("K >= 1"), alpha / dists.len() as f64)?;
                        let hard =
                            hard_loss_on_tape(tape, example.class, model.num_classes, logits)?;
                        let hard = tape.scale(hard, 1.0 - alpha)?;
                        tape.add(soft, hard)
                    } else {
                        weighted_loss_on_tape(tape, example.class, &dists, logits, alpha)
                    }
                }
            }
        }
        ModelKind::SiameseRegressor => {
            let pred = siamese_cosine(
                tape,
                config,
                &vars.encoder,
                model.pooling,
                &example.a_tokens,
                &example.b_tokens,
                true,
                rng,
            )?;
            match mode {
                TrainMode::Hard => mse_on_tape(tape, pred, example.score_normalized),
                TrainMode::Anneal => {
                    let (cache, idx) = cache.expect("anneal mode requires a cache");
                    let scalars = teacher_scalars(cache, idx)?;
                    let mut total = None;
                    for teacher in &scalars {
                        let target =
                            regression_distill_target(example.score_normalized, *teacher, lambda)?;
                        let term = mse_on_tape(tape, pred, target)?;
                        total = Some(match total {
                            None => term,
                            Some(acc) => tape.add(acc, term)?,
                        });
                    }
                    let total = total.expect("K >= 1");
                    if teacher_mean && scalars.len() > 1 {
                        tape.scale(total, 1.0 / scalars.len() as f64)
                    } else {
                        Ok(total)
                    }
                }
                TrainMode::Weight => {
                    let (cache, idx) = cache.expect("weight mode requires a cache");
                    let scalars = teacher_scalars(cache, idx)?;
                    let mut soft = None;
                    for teacher in &scalars {
                        let term = mse_on_tape(tape, pred, *teacher)?;
                        soft = Some(match soft {
                            None => term,
                            Some(acc) => tape.add(acc, term)?,
                        });
                    }
                    let scale = if teacher_mean && scalars.len() > 1 {
                        alpha / scalars.len() as f64
                    } else {
                        alpha
                    };
                    let soft = tape.scale(soft.expect("K >= 1"), scale)?;
                    let hard = mse_on_tape(tape, pred, example.score_normalized)?;
                    let hard = tape.scale(hard, 1.0 - alpha)?;
                    tape.add(soft, hard)
                }
            }
        }
    }
}

fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_add(1_000_003u64.wrapping_mul(epoch as u64 + 1))
}

/// Shared training loop. λ and the learning rate advance per optimizer step
/// over `epochs × ceil(n / batch_size)` planned steps, both computed up
/// front; λ spans 0 to 1 inclusive across the run.
fn run_training(
    plan: &TrainPlan,
    kind: ModelKind,
    pairs: &[LabeledPair],
    vocab: &Vocab,
    cache: Option<&TeacherCache>,
) -> Result<TrainOutcome> {
    plan.validate()?;
    if pairs.is_empty() {
        return Err(Error::DataValidation("empty training set".into()));
    }
    if kind.task() != plan.task {
        return Err(Error::Config(format!(
            "model kind {kind:?} does not fit task {:?}",
            plan.task
        )));
    }
    let needs_cache = !kind.is_cross() && plan.mode != TrainMode::Hard;
    if needs_cache {
        let cache = cache.ok_or_else(|| {
            Error::Config(format!("{:?} mode requires teacher caches", plan.mode))
        })?;
        if cache.num_examples() != pairs.len() {
            return Err(Error::DataValidation(format!(
                "teacher cache holds {} examples, dataset has {}",
                cache.num_examples(),
                pairs.len()
            )));
        }
        if cache.task != plan.task {
            return Err(Error::DataValidation(
                "teacher cache task kind does not match the plan".into(),
            ));
        }
    }

    let mut config = plan.encoder.clone();
    config.vocab_size = vocab.len();
    let num_classes = match plan.task {
        TaskKind::Classification => crate::data::NUM_CLASSES,
        TaskKind::Regression => 1,
    };

    let mut init_rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut model = Model::init(kind, config, plan.pooling, num_classes, vocab.clone(), &mut init_rng)?;
    let mut optimizer = AdamState::new(&model.param_sizes());
    let examples = prepare_examples(pairs, vocab, plan.task)?;

    let batches_per_epoch = pairs.len().div_ceil(plan.batch_size);
    let total_steps = plan.epochs * batches_per_epoch;
    let mut steps = Vec::with_capacity(total_steps);
    if total_steps == 0 {
        return Ok(TrainOutcome {
            model,
            optimizer,
            steps,
            total_steps,
        });
    }
    let schedule = LrSchedule::new(plan.base_lr, plan.warmup_ratio, total_steps)?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(plan.seed);
    dropout_rng.set_stream(1);

    let mut global_step = 0usize;
    for epoch in 0..plan.epochs {
        let batches = batch_iter(pairs.len(), plan.batch_size, true, shuffle_seed(plan.seed, epoch))?;
        for batch in batches {
            let lambda = if total_steps > 1 {
                anneal_lambda(global_step, total_steps - 1)?
            } else {
                0.0
            };
            let lr = schedule.lr_at(global_step)?;

            let mut tape = Tape::new();
            let vars = model.register(&mut tape, true);
            let mut batch_loss = None;
            for &idx in &batch {
                let loss = example_loss(
                    &mut tape,
                    &model,
                    &vars,
                    &examples[idx],
                    plan.mode,
                    lambda,
                    plan.alpha,
                    plan.teacher_mean,
                    cache.map(|c| (c, idx)),
                    &mut dropout_rng,
                )?;
                batch_loss = Some(match batch_loss {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            let sum = batch_loss.expect("nonempty batch");
            let loss = tape.scale(sum, 1.0 / batch.len() as f64)?;
            let loss_value = tape.item(loss)?;
            tape.backward(loss)?;

            let grads: Vec<Vec<f64>> = model
                .named()
                .iter()
                .zip(vars.encoder.ids.iter().copied().chain(vars.head))
                .map(|((_, tensor), id)| {
                    tape.grad(id)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; tensor.numel()])
                })
                .collect();
            let mut params = model.named_mut();
            optimizer.step(&mut params, &grads, lr)?;

            steps.push(StepLog {
                step: global_step,
                lr,
                lambda: (plan.mode == TrainMode::Anneal && !kind.is_cross()).then_some(lambda),
                loss: loss_value,
            });
            global_step += 1;
        }
    }
    if !model.all_finite() {
        return Err(Error::Numerical("non-finite parameter after training".into()));
    }
    Ok(TrainOutcome {
        model,
        optimizer,
        steps,
        total_steps,
    })
}

/// Trains a cross-encoder teacher on hard targets.
pub fn train_teacher(plan: &TrainPlan, pairs: &[LabeledPair], vocab: &Vocab) -> Result<TrainOutcome> {
    let kind = match plan.task {
        TaskKind::Classification => ModelKind::CrossClassifier,
        TaskKind::Regression => ModelKind::CrossRegressor,
    };
    // Teachers always train on hard targets, whatever the student plan says.
    let mut teacher_plan = plan.clone();
    teacher_plan.mode = TrainMode::Hard;
    run_training(&teacher_plan, kind, pairs, vocab, None)
}

/// Trains a siamese student under the plan's schedule. Teacher predictions
/// come exclusively from the cache; teacher models are never consulted.
pub fn train_student(
    plan: &TrainPlan,
    pairs: &[LabeledPair],
    vocab: &Vocab,
    cache: Option<&TeacherCache>,
) -> Result<TrainOutcome> {
    let kind = match plan.task {
        TaskKind::Classification => ModelKind::SiameseClassifier,
        TaskKind::Regression => ModelKind::SiameseRegressor,
    };
    run_training(plan, kind, pairs, vocab, cache)
}

/// Runs every teacher once over every example in eval mode and freezes the
/// predictions into a cache bound to the dataset fingerprint.
pub fn compute_teacher_cache(
    teachers: &[(String, &Model)],
    pairs: &[LabeledPair],
    fingerprint: [u8; 32],
) -> Result<TeacherCache> {
    if teachers.is_empty() {
        return Err(Error::InvalidArgument("no teachers given".into()));
    }
    let task = teachers[0].1.kind.task();
    for (name, teacher) in teachers {
        if !teacher.kind.is_cross() {
            return Err(Error::Config(format!(
                "teacher {name} is not a cross-encoder"
            )));
        }
        if teacher.kind.task() != task {
            return Err(Error::Config("teachers disagree on task kind".into()));
        }
    }
    let num_classes = teachers[0].1.num_classes;
    let predictions = match task {
        TaskKind::Classification => {
            let mut examples = Vec::with_capacity(pairs.len());
            for pair in pairs {
                let mut per_teacher = Vec::with_capacity(teachers.len());
                for (_, teacher) in teachers {
                    per_teacher.push(
                        teacher.predict_class_probs(&pair.sentence_a, &pair.sentence_b)?,
                    );
                }
                examples.push(per_teacher);
            }
            TeacherPredictions::Classification(examples)
        }
        TaskKind::Regression => {
            let mut examples = Vec::with_capacity(pairs.len());
            for pair in pairs {
                let mut per_teacher = Vec::with_capacity(teachers.len());
                for (_, teacher) in teachers {
                    per_teacher.push(teacher.predict_score(&pair.sentence_a, &pair.sentence_b)?);
                }
                examples.push(per_teacher);
            }
            TeacherPredictions::Regression(examples)
        }
    };
    Ok(TeacherCache {
        fingerprint,
        task,
        num_classes,
        teacher_ids: teachers.iter().map(|(n, _)| n.clone()).collect(),
        predictions,
    })
}

/// Exact-match accuracy of a classifier over labeled pairs.
pub fn classification_accuracy(model: &Model, pairs: &[LabeledPair]) -> Result<f64> {
    let mut predictions = Vec::with_capacity(pairs.len());
    let mut golds = Vec::with_capacity(pairs.len());
    for pair in pairs {
        predictions.push(model.predict_class(&pair.sentence_a, &pair.sentence_b)?);
        golds.push(pair.class()?);
    }
    accuracy(&predictions, &golds)
}

/// Spearman correlation of embedding cosures against gold scores.
pub fn sts_spearman(model: &Model, pairs: &[LabeledPair]) -> Result<(f64, usize)> {
    eval_sts(|sentence| model.embed_text(sentence), pairs)
}

/// One row of the alpha sweep table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub mean: f64,
    pub sd: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn render(&self) -> String {
        let mut out = String::from("configuration      mean      sd  per-seed\n");
        for row in &self.rows {
            let per_seed = row
                .values
                .iter()
                .map(|v| format!("{v:.4}"))
                .collect::<Vec<_>>()
                .join(" ");
            out.push_str(&format!(
                "{:<16} {:>7.4} {:>7.4}  [{per_seed}]\n",
                row.label, row.mean, row.sd
            ));
        }
        out
    }
}

/// Trains weighted students for every α plus one annealed student, each over
/// all seeds, and reports synthetic-STS Spearman per configuration.
pub fn alpha_sweep(
    plan: &TrainPlan,
    pairs: &[LabeledPair],
    vocab: &Vocab,
    cache: &TeacherCache,
    alphas: &[f64],
    seeds: &[u64],
    sts_pairs: &[LabeledPair],
) -> Result<SweepTable> {
    if alphas.len() < 2 {
        return Err(Error::InvalidArgument(
            "alpha sweep needs at least two alpha values".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("alpha sweep needs seeds".into()));
    }
    let mut rows = Vec::with_capacity(alphas.len() + 1);
    for &alpha in alphas {
        let mut values = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut run_plan = plan.clone();
            run_plan.mode = TrainMode::Weight;
            run_plan.alpha = alpha;
            run_plan.seed = seed;
            let outcome = train_student(&run_plan, pairs, vocab, Some(cache))?;
            let (rho, _) = sts_spearman(&outcome.model, sts_pairs)?;
            values.push(rho);
        }
        let (mean, sd) = mean_sd(&values);
        rows.push(SweepRow {
            label: format!("alpha={alpha}"),
            alpha: Some(alpha),
            mean,
            sd,
            values,
        });
    }
    let mut values = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut run_plan = plan.clone();
        run_plan.mode = TrainMode::Anneal;
        run_plan.seed = seed;
        let outcome = train_student(&run_plan, pairs, vocab, Some(cache))?;
        let (rho, _) = sts_spearman(&outcome.model, sts_pairs)?;
        values.push(rho);
    }
    let (mean, sd) = mean_sd(&values);
    rows.push(SweepRow {
        label: "annealing".into(),
        alpha: None,
        mean,
        sd,
        values,
    });
    Ok(SweepTable { rows })
}

// ── Whole-model gradient check ──────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathReport {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub threshold: f64,
    pub eps: f64,
    pub seed: u64,
    pub paths: Vec<PathReport>,
}

impl GradcheckReport {
    pub fn pass(&self) -> bool {
        self.paths.iter().all(|p| p.pass)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for path in &self.paths {
            out.push_str(&format!(
                "{} {:<14} max_rel_err {:.3e}\n",
                if path.pass { "PASS" } else { "FAIL" },
                path.name,
                path.max_rel_err
            ));
        }
        out.push_str(&format!(
            "gradcheck: {} ({} paths, threshold {:.1e}, eps {:.1e}, seed {})\n",
            if self.pass() { "PASS" } else { "FAIL" },
            self.paths.len(),
            self.threshold,
            self.eps,
            self.seed
        ));
        out
    }
}

/// Registers the model with every parameter frozen except `override_name`,
/// which is taken from an existing leaf (the one grad_check perturbs).
fn register_with_override(
    tape: &mut Tape,
    model: &Model,
    override_name: &str,
    leaf: TensorId,
) -> ModelVars {
    let mut ids = Vec::new();
    let mut head = None;
    for (name, tensor) in model.named() {
        let id = if name == override_name {
            leaf
        } else {
            tape.constant(tensor.clone())
        };
        if name == "head" {
            head = Some(id);
        } else {
            ids.push(id);
        }
    }
    ModelVars {
        encoder: crate::encoder::EncoderVars { ids },
        head,
    }
}

const GRADCHECK_THRESHOLD: f64 = 1e-4;

/// Checks every loss path (siamese CE, cross CE, distill at λ∈{0,½,1},
/// weighted at α∈{0,½,1}, cosine+MSE) against central differences, over
/// every parameter of a desk-size model. Failure is a reported result, not
/// an error.
pub fn run_gradcheck(config: &EncoderConfig, seed: u64, eps: f64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab_tokens: Vec<String> = crate::data::RESERVED_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain((0..config.vocab_size.saturating_sub(4)).map(|i| format!("g{i}")))
        .collect();
    let vocab = Vocab::from_tokens(vocab_tokens)?;

    // Checks run at generic parameter values, not the training init: near
    // the symmetric small-weight init, attention is almost uniform and the
    // projection gradients sit below the central-difference noise floor.
    let randomize = |model: &mut Model, rng: &mut ChaCha8Rng| -> Result<()> {
        for (name, tensor) in model.named_mut() {
            let (mean, std) = if name.contains("gamma") {
                (1.0, 0.2)
            } else {
                (0.0, 0.4)
            };
            let fresh = Tensor::randn(tensor.shape().to_vec(), mean, std, rng)?;
            tensor.values_mut().copy_from_slice(fresh.values());
        }
        Ok(())
    };

    let mut classifier_rng = rng.clone();
    let mut siamese = Model::init(
        ModelKind::SiameseClassifier,
        config.clone(),
        PoolingStrategy::Mean,
        3,
        vocab.clone(),
        &mut classifier_rng,
    )?;
    let mut cross = Model::init(
        ModelKind::CrossClassifier,
        config.clone(),
        PoolingStrategy::Mean,
        3,
        vocab.clone(),
        &mut classifier_rng,
    )?;
    let mut regressor = Model::init(
        ModelKind::SiameseRegressor,
        config.clone(),
        PoolingStrategy::Mean,
        1,
        vocab,
        &mut classifier_rng,
    )?;
    randomize(&mut siamese, &mut classifier_rng)?;
    randomize(&mut cross, &mut classifier_rng)?;
    randomize(&mut regressor, &mut classifier_rng)?;

    // A small fixed batch of token sequences.
    let sample = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        let len = rng.gen_range(2..=4);
        (0..len).map(|_| rng.gen_range(4..config.vocab_size)).collect()
    };
    let batch: Vec<(Vec<usize>, Vec<usize>, usize)> = (0..2)
        .map(|_| (sample(&mut rng), sample(&mut rng), rng.gen_range(0..3)))
        .collect();
    let teachers: Vec<Vec<f64>> = vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.25, 0.15]];

    // Loss builders over (tape, vars); dropout is off (training = false).
    type LossFn<'m> = Box<dyn Fn(&mut Tape, &ModelVars) -> Result<TensorId> + 'm>;
    let eval_rng = || ChaCha8Rng::seed_from_u64(0);

    let siamese_ce: LossFn = {
        let batch = batch.clone();
        let model = &siamese;
        Box::new(move |tape, vars| {
            let mut total = None;
            for (a, b, gold) in &batch {
                let logits = siamese_logits(
                    tape,
                    &model.config,
                    &vars.encoder,
                    vars.head.expect("head"),
                    model.pooling,
                    a,
                    b,
                    false,
                    &mut eval_rng(),
                )?;
                let loss = hard_loss_on_tape(tape, *gold, 3, logits)?;
                total = Some(match total {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            tape.scale(total.expect("batch"), 1.0 / batch.len() as f64)
        })
    };

    let cross_ce: LossFn = {
        let batch = batch.clone();
        let model = &cross;
        Box::new(move |tape, vars| {
            let mut total = None;
            for (a, b, gold) in &batch {
                let pair = build_cross_input(a, b, model.config.max_seq_len)?;
                let logits = cross_logits(
                    tape,
                    &model.config,
                    &vars.encoder,
                    vars.head.expect("head"),
                    &pair,
                    false,
                    &mut eval_rng(),
                )?;
                let loss = hard_loss_on_tape(tape, *gold, 3, logits)?;
                total = Some(match total {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            tape.scale(total.expect("batch"), 1.0 / batch.len() as f64)
        })
    };

    let make_distill = |lambda: f64| -> LossFn {
        let batch = batch.clone();
        let teachers = teachers.clone();
        let model = &siamese;
        Box::new(move |tape, vars| {
            let refs: Vec<&[f64]> = teachers.iter().map(Vec::as_slice).collect();
            let mut total = None;
            for (a, b, gold) in &batch {
                let logits = siamese_logits(
                    tape,
                    &model.config,
                    &vars.encoder,
                    vars.head.expect("head"),
                    model.pooling,
                    a,
                    b,
                    false,
                    &mut eval_rng(),
                )?;
                let loss = distill_loss_on_tape(tape, *gold, &refs, logits, lambda)?;
                total = Some(match total {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            tape.scale(total.expect("batch"), 1.0 / batch.len() as f64)
        })
    };

    let make_weighted = |alpha: f64| -> LossFn {
        let batch = batch.clone();
        let teachers = teachers.clone();
        let model = &siamese;
        Box::new(move |tape, vars| {
            let refs: Vec<&[f64]> = teachers.iter().map(Vec::as_slice).collect();
            let mut total = None;
            for (a, b, gold) in &batch {
                let logits = siamese_logits(
                    tape,
                    &model.config,
                    &vars.encoder,
                    vars.head.expect("head"),
                    model.pooling,
                    a,
                    b,
                    false,
                    &mut eval_rng(),
                )?;
                let loss = weighted_loss_on_tape(tape, *gold, &refs, logits, alpha)?;
                total = Some(match total {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            tape.scale(total.expect("batch"), 1.0 / batch.len() as f64)
        })
    };

    let cosine_mse: LossFn = {
        let batch = batch.clone();
        let model = &regressor;
        Box::new(move |tape, vars| {
            let targets = [0.4, -0.3];
            let mut total = None;
            for ((a, b, _), target) in batch.iter().zip(targets) {
                let pred = siamese_cosine(
                    tape,
                    &model.config,
                    &vars.encoder,
                    model.pooling,
                    a,
                    b,
                    false,
                    &mut eval_rng(),
                )?;
                let loss = mse_on_tape(tape, pred, target)?;
                total = Some(match total {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            tape.scale(total.expect("batch"), 1.0 / batch.len() as f64)
        })
    };

    let paths: Vec<(String, &Model, LossFn)> = vec![
        ("siamese_ce".into(), &siamese, siamese_ce),
        ("cross_ce".into(), &cross, cross_ce),
        ("distill@0".into(), &siamese, make_distill(0.0)),
        ("distill@0.5".into(), &siamese, make_distill(0.5)),
        ("distill@1".into(), &siamese, make_distill(1.0)),
        ("weighted@0".into(), &siamese, make_weighted(0.0)),
        ("weighted@0.5".into(), &siamese, make_weighted(0.5)),
        ("weighted@1".into(), &siamese, make_weighted(1.0)),
        ("cosine_mse".into(), &regressor, cosine_mse),
    ];

    let mut reports = Vec::with_capacity(paths.len());
    for (name, model, loss_fn) in &paths {
        let mut worst = 0.0f64;
        for (param_name, tensor) in model.named() {
            // Analytic gradient for this parameter.
            let mut tape = Tape::new();
            let leaf = tape.leaf(tensor.clone().requiring_grad());
            let vars = register_with_override(&mut tape, model, &param_name, leaf);
            let loss = loss_fn(&mut tape, &vars)?;
            tape.backward(loss)?;
            let analytic = tape
                .grad(leaf)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; tensor.numel()]);

            // Numeric gradient by central differences on the same path.
            let f = |tape: &mut Tape, x: TensorId| {
                let vars = register_with_override(tape, model, &param_name, x);
                loss_fn(tape, &vars)
            };
            let numeric = central_diff_grads(&f, tensor, eps)?;
            worst = worst.max(max_relative_error(&analytic, &numeric));
        }
        reports.push(PathReport {
            name: name.clone(),
            max_rel_err: worst,
            pass: worst < GRADCHECK_THRESHOLD,
        });
    }
    Ok(GradcheckReport {
        threshold: GRADCHECK_THRESHOLD,
        eps,
        seed,
        paths: reports,
    })
}
