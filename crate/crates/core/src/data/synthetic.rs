//! Synthetic sentence-pair task driven by multiset token overlap.
//!
//! Pairs are labeled by a deterministic integer rule on multiset Jaccard
//! overlap: J ≥ 0.6 is entailment, J ≤ 0.1 contradiction, anything between
//! neutral; regression scores are 5·J. Because a cross-encoder can align
//! tokens across the packed pair while a mean-pooled embedding cannot, the
//! task gives teachers a genuine structural edge over the student.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{LabeledPair, Target, TaskKind};
use crate::error::{Error, Result};

/// Generation settings; lengths are in tokens.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub num_pairs: usize,
    pub vocab_size: usize,
    pub seed: u64,
    pub task: TaskKind,
    pub min_len: usize,
    pub max_len: usize,
}

impl SyntheticSpec {
    pub fn new(num_pairs: usize, vocab_size: usize, seed: u64, task: TaskKind) -> Self {
        SyntheticSpec {
            num_pairs,
            vocab_size,
            seed,
            task,
            min_len: 4,
            max_len: 8,
        }
    }
}

const CONSONANTS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Deterministic pronounceable word for an index: base-60 syllables.
fn word_for(index: usize) -> String {
    let syllable = |i: usize| format!("{}{}", CONSONANTS[i % 12], VOWELS[(i / 12) % 5]);
    let mut word = syllable(index % 60);
    let mut rest = index / 60;
    loop {
        word.push_str(&syllable(rest % 60));
        rest /= 60;
        if rest == 0 {
            break;
        }
    }
    word
}

/// Multiset intersection and union sizes over two token sequences.
pub fn jaccard_counts(a: &[String], b: &[String]) -> (usize, usize) {
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for t in a {
        counts.entry(t).or_default().0 += 1;
    }
    for t in b {
        counts.entry(t).or_default().1 += 1;
    }
    let mut inter = 0;
    let mut union = 0;
    for (ca, cb) in counts.values() {
        inter += ca.min(cb);
        union += ca.max(cb);
    }
    (inter, union)
}

/// Class from overlap counts, in integer arithmetic only:
/// J ≥ 0.6 → 0 (entailment), J ≤ 0.1 → 1 (contradiction), else 2 (neutral).
pub fn jaccard_label(inter: usize, union: usize) -> usize {
    if 5 * inter >= 3 * union {
        0
    } else if 10 * inter <= union {
        1
    } else {
        2
    }
}

/// Regression score 5·J in [0, 5].
pub fn jaccard_score(inter: usize, union: usize) -> f64 {
    5.0 * inter as f64 / union as f64
}

const MAX_ATTEMPTS: usize = 500;

struct Generator {
    words: Vec<String>,
    rng: ChaCha8Rng,
    min_len: usize,
    max_len: usize,
}

impl Generator {
    fn sentence(&mut self) -> Vec<String> {
        let len = self.rng.gen_range(self.min_len..=self.max_len);
        (0..len)
            .map(|_| self.words[self.rng.gen_range(0..self.words.len())].clone())
            .collect()
    }

    /// Copy of `a` with `k` positions substituted by fresh tokens, shuffled.
    fn perturbed(&mut self, a: &[String], k: usize) -> Vec<String> {
        let mut b = a.to_vec();
        let mut positions: Vec<usize> = (0..b.len()).collect();
        positions.shuffle(&mut self.rng);
        for &pos in positions.iter().take(k) {
            loop {
                let candidate = self.words[self.rng.gen_range(0..self.words.len())].clone();
                if candidate != b[pos] {
                    b[pos] = candidate;
                    break;
                }
            }
        }
        b.shuffle(&mut self.rng);
        b
    }

    /// Sentence sharing no tokens with `a`.
    fn disjoint(&mut self, a: &[String]) -> Vec<String> {
        let len = self.rng.gen_range(self.min_len..=self.max_len);
        (0..len)
            .map(|_| loop {
                let candidate = self.words[self.rng.gen_range(0..self.words.len())].clone();
                if !a.contains(&candidate) {
                    break candidate;
                }
            })
            .collect()
    }

    /// Rejection-samples a pair whose overlap lands in `class`.
    fn pair_for_class(&mut self, class: usize) -> Result<(Vec<String>, Vec<String>, usize, usize)> {
        for _ in 0..MAX_ATTEMPTS {
            let a = self.sentence();
            let n = a.len();
            let b = match class {
                0 => {
                    let max_subs = n / 4;
                    let k = self.rng.gen_range(0..=max_subs);
                    self.perturbed(&a, k)
                }
                1 => self.disjoint(&a),
                _ => {
                    let lo = n.div_ceil(3);
                    let hi = (2 * n) / 3;
                    let k = self.rng.gen_range(lo..=hi.max(lo));
                    self.perturbed(&a, k)
                }
            };
            let (inter, union) = jaccard_counts(&a, &b);
            if jaccard_label(inter, union) == class {
                return Ok((a, b, inter, union));
            }
        }
        Err(Error::DataValidation(format!(
            "could not construct a class-{class} pair within {MAX_ATTEMPTS} attempts"
        )))
    }
}

/// Generates `spec.num_pairs` labeled pairs. Classes cycle through a fixed
/// 40/30/30 pattern, so the balance stays within the tolerance for any count.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Vec<LabeledPair>> {
    if spec.vocab_size < 20 {
        return Err(Error::InvalidArgument(format!(
            "synthetic vocab_size {} below the minimum of 20",
            spec.vocab_size
        )));
    }
    if spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::InvalidArgument(format!(
            "bad length range {}..={}",
            spec.min_len, spec.max_len
        )));
    }
    // 40% entailment, 30% contradiction, 30% neutral.
    const PATTERN: [usize; 10] = [0, 1, 2, 0, 1, 2, 0, 1, 2, 0];
    let mut generator = Generator {
        words: (0..spec.vocab_size).map(word_for).collect(),
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        min_len: spec.min_len,
        max_len: spec.max_len,
    };
    let mut pairs = Vec::with_capacity(spec.num_pairs);
    for i in 0..spec.num_pairs {
        let class = PATTERN[i % PATTERN.len()];
        let (a, b, inter, union) = generator.pair_for_class(class)?;
        let target = match spec.task {
            TaskKind::Classification => Target::Class(jaccard_label(inter, union)),
            TaskKind::Regression => Target::Score(jaccard_score(inter, union)),
        };
        pairs.push(LabeledPair {
            sentence_a: a.join(" "),
            sentence_b: b.join(" "),
            target,
        });
    }
    Ok(pairs)
}
