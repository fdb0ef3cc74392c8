use std::time::Instant;

use dualview::data::{gen_synthetic, save_pairs, SyntheticSpec, TaskKind, Vocab};
use dualview::encoder::EncoderConfig;
use dualview::train::{
    classification_accuracy, compute_teacher_cache, sts_spearman, train_student, train_teacher,
    TrainMode, TrainPlan,
};

fn desk_plan(epochs: usize, seed: u64) -> TrainPlan {
    let mut plan = TrainPlan::new(TaskKind::Classification);
    plan.encoder = EncoderConfig::default();
    plan.batch_size = 16;
    plan.epochs = epochs;
    plan.base_lr = 1e-3;
    plan.seed = seed;
    plan
}

#[test]
fn dual_view_dynamics() {
    let overall = Instant::now();
    let seed = 0u64;

    // Acceptance-scale data: 5000 train / 1000 test, vocab 200.
    let train_pairs =
        gen_synthetic(&SyntheticSpec::new(5000, 200, 1000 + seed, TaskKind::Classification)).unwrap();
    let test_pairs =
        gen_synthetic(&SyntheticSpec::new(1000, 200, 2000 + seed, TaskKind::Classification)).unwrap();
    let sts_pairs =
        gen_synthetic(&SyntheticSpec::new(1000, 200, 3000 + seed, TaskKind::Regression)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.tsv");
    save_pairs(&train_path, &train_pairs).unwrap();
    let vocab = Vocab::build(&[&train_path], 1).unwrap();
    println!("vocab size: {}", vocab.len());
    println!("datagen: {:?}", overall.elapsed());

    // Two teachers with different seeds.
    let mut teachers = Vec::new();
    for t in 0..2u64 {
        let t_start = Instant::now();
        let plan = desk_plan(2, seed * 10 + t);
        let outcome = train_teacher(&plan, &train_pairs, &vocab).unwrap();
        let train_acc = classification_accuracy(&outcome.model, &train_pairs[..1000]).unwrap();
        let test_acc = classification_accuracy(&outcome.model, &test_pairs).unwrap();
        println!(
            "teacher {t}: train_acc {train_acc:.4} test_acc {test_acc:.4} in {:?}",
            t_start.elapsed()
        );
        teachers.push(outcome.model);
    }

    let cache_start = Instant::now();
    let named: Vec<(String, &dualview::Model)> = teachers
        .iter()
        .enumerate()
        .map(|(i, m)| (format!("teacher{i}"), m))
        .collect();
    let cache = compute_teacher_cache(&named, &train_pairs, [0u8; 32]).unwrap();
    println!("cache: {:?}", cache_start.elapsed());

    // Hard-only student.
    let s_start = Instant::now();
    let mut hard_plan = desk_plan(2, seed);
    hard_plan.mode = TrainMode::Hard;
    let hard = train_student(&hard_plan, &train_pairs, &vocab, None).unwrap();
    let hard_acc = classification_accuracy(&hard.model, &test_pairs).unwrap();
    let (hard_rho, _) = sts_spearman(&hard.model, &sts_pairs).unwrap();
    println!(
        "hard student: test_acc {hard_acc:.4} sts_rho {hard_rho:.4} in {:?}",
        s_start.elapsed()
    );

    // Annealed student.
    let s_start = Instant::now();
    let mut anneal_plan = desk_plan(2, seed);
    anneal_plan.mode = TrainMode::Anneal;
    let annealed = train_student(&anneal_plan, &train_pairs, &vocab, Some(&cache)).unwrap();
    let anneal_acc = classification_accuracy(&annealed.model, &test_pairs).unwrap();
    let (anneal_rho, _) = sts_spearman(&annealed.model, &sts_pairs).unwrap();
    println!(
        "annealed student: test_acc {anneal_acc:.4} sts_rho {anneal_rho:.4} in {:?}",
        s_start.elapsed()
    );

    println!("total: {:?}", overall.elapsed());
}
