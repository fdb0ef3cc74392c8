use std::time::Instant;

use dualview::data::{gen_synthetic, save_pairs, SyntheticSpec, TaskKind, Vocab};
use dualview::encoder::EncoderConfig;
use dualview::train::{classification_accuracy, train_teacher, TrainPlan};

fn run_case(n: usize, epochs: usize, lr: f64, dropout: f64, batch: usize) {
    let spec = SyntheticSpec::new(n, 200, 1000, TaskKind::Classification);
    let train_pairs = gen_synthetic(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.tsv");
    save_pairs(&train_path, &train_pairs).unwrap();
    let vocab = Vocab::build(&[&train_path], 1).unwrap();

    let start = Instant::now();
    let mut plan = TrainPlan::new(TaskKind::Classification);
    plan.encoder = EncoderConfig {
        dropout_rate: dropout,
        ..EncoderConfig::default()
    };
    plan.epochs = epochs;
    plan.base_lr = lr;
    plan.batch_size = batch;
    plan.seed = 0;
    let outcome = train_teacher(&plan, &train_pairs, &vocab).unwrap();
    let train_acc = classification_accuracy(&outcome.model, &train_pairs[..1000.min(train_pairs.len())]).unwrap();
    let test_spec = SyntheticSpec::new(500, 200, 9999, TaskKind::Classification);
    let test_pairs = gen_synthetic(&test_spec).unwrap();
    let test_acc = classification_accuracy(&outcome.model, &test_pairs).unwrap();
    print!("test {test_acc:.4} ");
    let q = outcome.steps.len() / 4;
    println!(
        "n {n} epochs {epochs} lr {lr} dropout {dropout} batch {batch}: train {train_acc:.4} losses {:.3}/{:.3}/{:.3}/{:.3} ({:?})",
        outcome.steps[q].loss,
        outcome.steps[2 * q].loss,
        outcome.steps[3 * q].loss,
        outcome.steps.last().unwrap().loss,
        start.elapsed()
    );
}

#[test]
fn teacher_overfit_probe() {
    run_case(5000, 16, 5e-4, 0.1, 16);
    run_case(5000, 24, 3e-4, 0.1, 16);
}
