//! Training objectives: hard-target cross-entropy, multi-teacher KL
//! soft-target losses, the teacher-annealed objective, the fixed-weight
//! alternative, and the regression (MSE) variants.
//!
//! Every objective exists in two forms: a pure function over probability
//! values (used for evaluation and as the oracle side of gradient tests) and
//! a tape builder over student logits (used for training). The tape builders
//! route through a fused softmax-cross-entropy so gradients take the
//! standard soft-target form `softmax(z) − target`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, TensorId};

/// How gold labels and teacher predictions combine over a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ScheduleMode {
    /// Pure hard targets; no teachers involved.
    HardOnly,
    /// Teacher annealing: the target is `λ·onehot(gold) + (1−λ)·teacher`
    /// with λ rising linearly from 0 to 1 over the run.
    Anneal,
    /// Fixed mixing: `α·Σ_k KL(teacher_k ‖ student) + (1−α)·CE(gold, student)`.
    Weight { alpha: f64 },
}

/// Step schedule for the annealed / weighted objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub total_steps: usize,
    pub mode: ScheduleMode,
}

impl AnnealSchedule {
    pub fn new(total_steps: usize, mode: ScheduleMode) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let ScheduleMode::Weight { alpha } = mode {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
            }
        }
        Ok(AnnealSchedule { total_steps, mode })
    }
}

/// Per-example fixed teacher outputs: one distribution (classification) or
/// one scalar (regression) per teacher. Immutable during student training.
#[derive(Debug, Clone, PartialEq)]
pub enum TeacherPredictions {
    /// `[example][teacher][class]`
    Classification(Vec<Vec<Vec<f64>>>),
    /// `[example][teacher]`
    Regression(Vec<Vec<f64>>),
}

impl TeacherPredictions {
    pub fn num_examples(&self) -> usize {
        match self {
            TeacherPredictions::Classification(p) => p.len(),
            TeacherPredictions::Regression(p) => p.len(),
        }
    }

    pub fn num_teachers(&self) -> usize {
        match self {
            TeacherPredictions::Classification(p) => p.first().map_or(0, Vec::len),
            TeacherPredictions::Regression(p) => p.first().map_or(0, Vec::len),
        }
    }
}

/// KL divergence `Σ target·(log target − log student)` with `0·log 0 = 0`.
pub fn kl_divergence(target: &[f64], student: &[f64]) -> Result<f64> {
    if target.len() != student.len() {
        return Err(Error::ShapeMismatch {
            op: "kl_divergence",
            lhs: vec![target.len()],
            rhs: vec![student.len()],
        });
    }
    Ok(target
        .iter()
        .zip(student)
        .map(|(&t, &s)| if t == 0.0 { 0.0 } else { t * (t.ln() - s.ln()) })
        .sum())
}

/// Hard-target cross-entropy `−log student[gold]`.
pub fn cross_entropy(gold: usize, student: &[f64]) -> Result<f64> {
    if gold >= student.len() {
        return Err(Error::IndexOutOfRange {
            what: "gold class",
            index: gold,
            size: student.len(),
        });
    }
    Ok(-student[gold].ln())
}

/// Linear annealing weight `λ = step / total_steps`.
pub fn anneal_lambda(step: usize, total_steps: usize) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("anneal_lambda: total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::IndexOutOfRange {
            what: "anneal step",
            index: step,
            size: total_steps,
        });
    }
    Ok(step as f64 / total_steps as f64)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// Annealed target `λ·onehot(gold) + (1−λ)·teacher`.
pub fn annealed_target(gold: usize, teacher: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    if gold >= teacher.len() {
        return Err(Error::IndexOutOfRange {
            what: "gold class",
            index: gold,
            size: teacher.len(),
        });
    }
    Ok(teacher
        .iter()
        .enumerate()
        .map(|(i, &q)| (1.0 - lambda) * q + if i == gold { lambda } else { 0.0 })
        .collect())
}

/// Teacher-annealed objective: `Σ_k KL(λ·y + (1−λ)·q_k ‖ student)`.
/// At λ=1 this collapses to `K · cross_entropy(gold, student)`.
pub fn distill_loss(
    gold: usize,
    teachers: &[Vec<f64>],
    student: &[f64],
    lambda: f64,
) -> Result<f64> {
    if teachers.is_empty() {
        return Err(Error::InvalidArgument("distill_loss needs at least one teacher".into()));
    }
    let mut total = 0.0;
    for teacher in teachers {
        let target = annealed_target(gold, teacher, lambda)?;
        total += kl_divergence(&target, student)?;
    }
    Ok(total)
}

/// Fixed-weight objective:
/// `α·Σ_k KL(q_k ‖ student) + (1−α)·cross_entropy(gold, student)`.
pub fn weighted_loss(
    gold: usize,
    teachers: &[Vec<f64>],
    student: &[f64],
    alpha: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    if teachers.is_empty() {
        return Err(Error::InvalidArgument("weighted_loss needs at least one teacher".into()));
    }
    let mut soft = 0.0;
    for teacher in teachers {
        soft += kl_divergence(teacher, student)?;
    }
    Ok(alpha * soft + (1.0 - alpha) * cross_entropy(gold, student)?)
}

/// Squared error of a single prediction.
pub fn mse_loss(pred: f64, gold: f64) -> f64 {
    (pred - gold) * (pred - gold)
}

/// Regression analogue of the annealed target: `λ·gold + (1−λ)·teacher`.
pub fn regression_distill_target(gold: f64, teacher: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * gold + (1.0 - lambda) * teacher)
}

fn entropy(dist: &[f64]) -> f64 {
    -dist
        .iter()
        .map(|&p| if p == 0.0 { 0.0 } else { p * p.ln() })
        .sum::<f64>()
}

// ── Tape builders over student logits ───────────────────────────────────

/// `KL(target ‖ softmax(logits))` as a tape node.
pub fn kl_vs_logits(tape: &mut Tape, target: &[f64], logits: TensorId) -> Result<TensorId> {
    let ce = tape.soft_cross_entropy(target, logits)?;
    tape.add_scalar(ce, -entropy(target))
}

/// `cross_entropy(gold, softmax(logits))` as a tape node.
pub fn hard_loss_on_tape(
    tape: &mut Tape,
    gold: usize,
    num_classes: usize,
    logits: TensorId,
) -> Result<TensorId> {
    if gold >= num_classes {
        return Err(Error::IndexOutOfRange {
            what: "gold class",
            index: gold,
            size: num_classes,
        });
    }
    let mut onehot = vec![0.0; num_classes];
    onehot[gold] = 1.0;
    tape.soft_cross_entropy(&onehot, logits)
}

/// Annealed objective on the tape; see [`distill_loss`].
pub fn distill_loss_on_tape(
    tape: &mut Tape,
    gold: usize,
    teachers: &[&[f64]],
    logits: TensorId,
    lambda: f64,
) -> Result<TensorId> {
    if teachers.is_empty() {
        return Err(Error::InvalidArgument("distill_loss needs at least one teacher".into()));
    }
    let mut total = None;
    for teacher in teachers {
        let target = annealed_target(gold, teacher, lambda)?;
        let term = kl_vs_logits(tape, &target, logits)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(total.expect("nonempty teachers"))
}

/// Fixed-weight objective on the tape; see [`weighted_loss`].
pub fn weighted_loss_on_tape(
    tape: &mut Tape,
    gold: usize,
    teachers: &[&[f64]],
    logits: TensorId,
    alpha: f64,
) -> Result<TensorId> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    if teachers.is_empty() {
        return Err(Error::InvalidArgument("weighted_loss needs at least one teacher".into()));
    }
    let n = tape.data(logits).len();
    let mut soft = None;
    for teacher in teachers {
        let term = kl_vs_logits(tape, teacher, logits)?;
        soft = Some(match soft {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let soft = tape.scale(soft.expect("nonempty teachers"), alpha)?;
    let hard = hard_loss_on_tape(tape, gold, n, logits)?;
    let hard = tape.scale(hard, 1.0 - alpha)?;
    tape.add(soft, hard)
}

/// `(pred − gold)²` as a tape node, for a scalar prediction.
pub fn mse_on_tape(tape: &mut Tape, pred: TensorId, target: f64) -> Result<TensorId> {
    let shifted = tape.add_scalar(pred, -target)?;
    tape.mul(shifted, shifted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dist(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let p = random_dist(4, &mut rng);
            assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn kl_closed_form_log2() {
        let kl = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((kl - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_direct_summation() {
        let target = [0.3, 0.7];
        let student = [0.6, 0.4];
        let expected = 0.3 * (0.3f64 / 0.6).ln() + 0.7 * (0.7f64 / 0.4).ln();
        assert!((kl_divergence(&target, &student).unwrap() - expected).abs() < 1e-15);
        assert!(kl_divergence(&target, &[0.5]).is_err());
    }

    #[test]
    fn cross_entropy_basics() {
        assert_eq!(cross_entropy(1, &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        let uniform = [1.0 / 3.0; 3];
        assert!((cross_entropy(0, &uniform).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(3, &uniform).is_err());
    }

    #[test]
    fn cross_entropy_equals_kl_from_onehot_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let student = random_dist(3, &mut rng);
            let gold = rng.gen_range(0..3);
            let mut onehot = vec![0.0; 3];
            onehot[gold] = 1.0;
            assert_eq!(
                cross_entropy(gold, &student).unwrap(),
                kl_divergence(&onehot, &student).unwrap()
            );
        }
    }

    #[test]
    fn anneal_lambda_endpoints_and_linearity() {
        assert_eq!(anneal_lambda(0, 100).unwrap(), 0.0);
        assert_eq!(anneal_lambda(100, 100).unwrap(), 1.0);
        assert_eq!(anneal_lambda(25, 100).unwrap(), 0.25);
        assert!(anneal_lambda(101, 100).is_err());
    }

    #[test]
    fn annealed_target_mixtures() {
        let teacher = [0.2, 0.8];
        assert_eq!(annealed_target(0, &teacher, 1.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(annealed_target(0, &teacher, 0.0).unwrap(), vec![0.2, 0.8]);
        let half = annealed_target(0, &teacher, 0.5).unwrap();
        assert!((half[0] - 0.6).abs() < 1e-15);
        assert!((half[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn distill_loss_collapses_to_scaled_cross_entropy_at_lambda_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let teachers = vec![random_dist(3, &mut rng), random_dist(3, &mut rng)];
            let student = random_dist(3, &mut rng);
            let gold = rng.gen_range(0..3);
            let lhs = distill_loss(gold, &teachers, &student, 1.0).unwrap();
            let rhs = 2.0 * cross_entropy(gold, &student).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn distill_loss_zero_when_student_matches_single_teacher() {
        let teacher = vec![vec![0.25, 0.35, 0.4]];
        let loss = distill_loss(0, &teacher, &[0.25, 0.35, 0.4], 0.0).unwrap();
        assert!(loss.abs() < 1e-15);
    }

    #[test]
    fn distill_loss_direct_two_teacher_case() {
        let teachers = vec![vec![0.2, 0.8], vec![0.6, 0.4]];
        let student = [0.5, 0.5];
        let lambda = 0.5;
        let expected: f64 = teachers
            .iter()
            .map(|q| {
                let target = [0.5 + 0.5 * q[0], 0.5 * q[1]];
                target
                    .iter()
                    .zip(&student)
                    .map(|(&t, &s): (&f64, &f64)| if t == 0.0 { 0.0 } else { t * (t / s).ln() })
                    .sum::<f64>()
            })
            .sum();
        let got = distill_loss(0, &teachers, &student, lambda).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!(got >= 0.0);
    }

    #[test]
    fn weighted_loss_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let teachers = vec![random_dist(3, &mut rng)];
        let student = random_dist(3, &mut rng);
        let hard_only = weighted_loss(1, &teachers, &student, 0.0).unwrap();
        assert!((hard_only - cross_entropy(1, &student).unwrap()).abs() < 1e-15);

        let matched = vec![student.clone()];
        assert!(weighted_loss(1, &matched, &student, 1.0).unwrap().abs() < 1e-12);

        let alpha = 0.5;
        let expected = 0.5 * kl_divergence(&teachers[0], &student).unwrap()
            + 0.5 * cross_entropy(1, &student).unwrap();
        assert!((weighted_loss(1, &teachers, &student, alpha).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn mse_and_regression_target() {
        assert_eq!(mse_loss(1.3, 1.3), 0.0);
        assert_eq!(mse_loss(0.0, 2.0), 4.0);
        assert_eq!(regression_distill_target(0.8, 0.6, 1.0).unwrap(), 0.8);
        assert_eq!(regression_distill_target(0.8, 0.6, 0.0).unwrap(), 0.6);
        let mixed = regression_distill_target(0.8, 0.6, 0.5).unwrap();
        assert!((mixed - 0.7).abs() < 1e-15);
    }

    #[test]
    fn tape_losses_match_pure_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..25 {
            let logits_vals: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let student: Vec<f64> = {
                let max = logits_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits_vals.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / z).collect()
            };
            let teachers = vec![random_dist(3, &mut rng), random_dist(3, &mut rng)];
            let teacher_refs: Vec<&[f64]> = teachers.iter().map(Vec::as_slice).collect();
            let gold = rng.gen_range(0..3);
            let lambda = rng.gen::<f64>();
            let alpha = rng.gen::<f64>();

            let mut tape = Tape::new();
            let logits = tape.constant(Tensor::vector(logits_vals.clone()));
            let d = distill_loss_on_tape(&mut tape, gold, &teacher_refs, logits, lambda).unwrap();
            let w = weighted_loss_on_tape(&mut tape, gold, &teacher_refs, logits, alpha).unwrap();
            let h = hard_loss_on_tape(&mut tape, gold, 3, logits).unwrap();

            let d_pure = distill_loss(gold, &teachers, &student, lambda).unwrap();
            let w_pure = weighted_loss(gold, &teachers, &student, alpha).unwrap();
            let h_pure = cross_entropy(gold, &student).unwrap();
            assert!((tape.item(d).unwrap() - d_pure).abs() < 1e-10);
            assert!((tape.item(w).unwrap() - w_pure).abs() < 1e-10);
            assert!((tape.item(h).unwrap() - h_pure).abs() < 1e-10);
        }
    }

    #[test]
    fn tape_loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let teachers = vec![random_dist(3, &mut rng), random_dist(3, &mut rng)];
        let x = Tensor::vector(vec![0.3, -0.6, 1.1]);
        for lambda in [0.0, 0.5, 1.0] {
            let t = teachers.clone();
            let err = crate::tensor::grad_check(
                move |tape, logits| {
                    let refs: Vec<&[f64]> = t.iter().map(Vec::as_slice).collect();
                    distill_loss_on_tape(tape, 1, &refs, logits, lambda)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "lambda {lambda}: err {err}");
        }
        for alpha in [0.0, 0.5, 1.0] {
            let t = teachers.clone();
            let err = crate::tensor::grad_check(
                move |tape, logits| {
                    let refs: Vec<&[f64]> = t.iter().map(Vec::as_slice).collect();
                    weighted_loss_on_tape(tape, 0, &refs, logits, alpha)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "alpha {alpha}: err {err}");
        }
        let err = crate::tensor::grad_check(
            |tape, pred| {
                let p = tape.mean(pred)?;
                mse_on_tape(tape, p, 0.4)
            },
            &Tensor::vector(vec![0.9]),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "mse err {err}");
    }

    #[test]
    fn free_student_converges_to_teacher_under_gradient_descent() {
        // Free logits trained against one fixed teacher at λ=0.
        let teacher = [0.55, 0.15, 0.3];
        let mut logits = vec![0.0; 3];
        let lr = 0.1;
        let mut final_kl = f64::INFINITY;
        for _ in 0..2000 {
            let mut tape = Tape::new();
            let z = tape.leaf(Tensor::vector(logits.clone()).requiring_grad());
            let loss = distill_loss_on_tape(&mut tape, 0, &[&teacher], z, 0.0).unwrap();
            final_kl = tape.item(loss).unwrap();
            if final_kl < 1e-4 {
                break;
            }
            tape.backward(loss).unwrap();
            let grad = tape.grad(z).unwrap();
            for (p, g) in logits.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        assert!(final_kl < 1e-3, "KL after 2000 steps: {final_kl}");
    }
}
