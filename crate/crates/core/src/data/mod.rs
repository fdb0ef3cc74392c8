//! Vocabulary, word-level tokenization, pair datasets, and batching.

mod cache;
mod synthetic;

pub use cache::{dataset_fingerprint, fingerprint_hex, merge_caches, TeacherCache};
pub use synthetic::{gen_synthetic, jaccard_counts, jaccard_label, jaccard_score, SyntheticSpec};

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;

pub const RESERVED_TOKENS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Token table with fixed reserved ids 0..=3 for [PAD], [UNK], [CLS], [SEP].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from whitespace-split, lowercased corpus text.
    /// Tokens with frequency below `min_freq` are dropped; the rest are
    /// ordered by (frequency desc, token asc) so rebuilding from the same
    /// corpus assigns identical ids.
    pub fn build<P: AsRef<Path>>(corpus_paths: &[P], min_freq: usize) -> Result<Self> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut saw_any = false;
        for path in corpus_paths {
            let path = path.as_ref();
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for token in text.split_whitespace() {
                let token = token.to_lowercase();
                if token.is_empty() {
                    continue;
                }
                saw_any = true;
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        if !saw_any {
            return Err(Error::DataValidation("empty corpus".into()));
        }
        let mut survivors: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq)
            .collect();
        survivors.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(survivors.into_iter().map(|(t, _)| t));
        Vocab::from_tokens(tokens)
    }

    /// Rebuilds a vocabulary from an ordered token list (reserved ids first).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED_TOKENS.len()
            || tokens[..4].iter().zip(RESERVED_TOKENS).any(|(a, b)| a != b)
        {
            return Err(Error::DataValidation(
                "vocabulary must start with [PAD] [UNK] [CLS] [SEP]".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), id).is_some() {
                return Err(Error::DataValidation(format!("duplicate token {token:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    pub fn id_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Lowercased whitespace tokenization into ids, unknowns mapped to [UNK].
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace()
            .map(|t| self.id_of(&t.to_lowercase()))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for token in &self.tokens {
            out.push_str(token);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Classification vs regression dataset flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

impl TaskKind {
    pub fn code(self) -> u8 {
        match self {
            TaskKind::Classification => 0,
            TaskKind::Regression => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(TaskKind::Classification),
            1 => Ok(TaskKind::Regression),
            other => Err(Error::DataValidation(format!("unknown task code {other}"))),
        }
    }
}

pub const NUM_CLASSES: usize = 3;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["entailment", "contradiction", "neutral"];

/// Gold signal of one pair: a 3-way class or a similarity score in [0, 5].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Score(f64),
}

/// Two token strings plus their gold target.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub sentence_a: String,
    pub sentence_b: String,
    pub target: Target,
}

impl LabeledPair {
    pub fn class(&self) -> Result<usize> {
        match self.target {
            Target::Class(c) => Ok(c),
            Target::Score(_) => Err(Error::DataValidation(
                "expected a classification pair, found a score".into(),
            )),
        }
    }

    pub fn score(&self) -> Result<f64> {
        match self.target {
            Target::Score(s) => Ok(s),
            Target::Class(_) => Err(Error::DataValidation(
                "expected a regression pair, found a class label".into(),
            )),
        }
    }
}

fn class_index(label: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|&c| c == label)
}

/// Loads tab-separated pairs: `sentence_a <TAB> sentence_b <TAB> label-or-score`.
pub fn load_pairs(path: &Path, task: TaskKind) -> Result<Vec<LabeledPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let line_id = lineno + 1;
        let parse_err = |message: String| Error::Parse {
            path: path.display().to_string(),
            line: line_id,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        if fields[0].trim().is_empty() || fields[1].trim().is_empty() {
            return Err(parse_err("empty sentence".into()));
        }
        let target = match task {
            TaskKind::Classification => Target::Class(
                class_index(fields[2].trim())
                    .ok_or_else(|| parse_err(format!("unknown label {:?}", fields[2])))?,
            ),
            TaskKind::Regression => {
                let score: f64 = fields[2]
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(format!("bad score {:?}", fields[2])))?;
                if !(0.0..=5.0).contains(&score) {
                    return Err(parse_err(format!("score {score} outside [0, 5]")));
                }
                Target::Score(score)
            }
        };
        pairs.push(LabeledPair {
            sentence_a: fields[0].to_string(),
            sentence_b: fields[1].to_string(),
            target,
        });
    }
    if pairs.is_empty() {
        return Err(Error::DataValidation(format!(
            "no pairs in {}",
            path.display()
        )));
    }
    Ok(pairs)
}

/// Writes pairs in the same tab-separated format `load_pairs` reads.
pub fn save_pairs(path: &Path, pairs: &[LabeledPair]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for pair in pairs {
        let target = match pair.target {
            Target::Class(c) => CLASS_NAMES[c].to_string(),
            Target::Score(s) => format!("{s}"),
        };
        writeln!(file, "{}\t{}\t{}", pair.sentence_a, pair.sentence_b, target)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Splits `0..len` into batches of indices. When shuffled, the permutation is
/// a seeded Fisher-Yates; the final partial batch is kept.
pub fn batch_iter(len: usize, batch_size: usize, shuffle: bool, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn vocab_respects_min_freq() {
        let corpus = write_temp("a a b\n");
        let vocab = Vocab::build(&[corpus.path()], 2).unwrap();
        assert_eq!(vocab.id_of("a"), 4);
        assert_eq!(vocab.id_of("b"), UNK_ID);
    }

    #[test]
    fn vocab_build_is_deterministic_with_alphabetical_ties() {
        let corpus = write_temp("pear apple pear apple cherry\n");
        let v1 = Vocab::build(&[corpus.path()], 1).unwrap();
        let v2 = Vocab::build(&[corpus.path()], 1).unwrap();
        assert_eq!(v1, v2);
        // apple and pear tie at frequency 2: alphabetical order breaks it.
        assert_eq!(v1.id_of("apple"), 4);
        assert_eq!(v1.id_of("pear"), 5);
        assert_eq!(v1.id_of("cherry"), 6);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let corpus = write_temp("   \n");
        assert!(Vocab::build(&[corpus.path()], 1).is_err());
    }

    #[test]
    fn tokenize_detokenize_round_trip() {
        let corpus = write_temp("the cat sat on the mat\n");
        let vocab = Vocab::build(&[corpus.path()], 1).unwrap();
        let text = "The  cat\tsat on   the mat";
        let ids = vocab.encode(text);
        assert_eq!(vocab.decode(&ids), "the cat sat on the mat");
    }

    #[test]
    fn vocab_file_round_trip() {
        let corpus = write_temp("x y z x\n");
        let vocab = Vocab::build(&[corpus.path()], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        vocab.save(&path).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), vocab);
    }

    #[test]
    fn load_pairs_classification() {
        let data = write_temp("a cat\ta feline\tentailment\nx\ty\tneutral\n");
        let pairs = load_pairs(data.path(), TaskKind::Classification).unwrap();
        assert_eq!(pairs[0].target, Target::Class(0));
        assert_eq!(pairs[1].target, Target::Class(2));
    }

    #[test]
    fn load_pairs_regression_and_range() {
        let data = write_temp("x\ty\t4.2\n");
        let pairs = load_pairs(data.path(), TaskKind::Regression).unwrap();
        assert_eq!(pairs[0].target, Target::Score(4.2));
        let bad = write_temp("x\ty\t7.5\n");
        assert!(load_pairs(bad.path(), TaskKind::Regression).is_err());
    }

    #[test]
    fn malformed_line_error_names_the_line() {
        let data = write_temp("good\tpair\tentailment\nonly two\tfields\n");
        let err = load_pairs(data.path(), TaskKind::Classification).unwrap_err();
        assert!(err.to_string().contains(":2:"), "got: {err}");
    }

    #[test]
    fn unknown_label_is_rejected() {
        let data = write_temp("a\tb\tmaybe\n");
        assert!(load_pairs(data.path(), TaskKind::Classification).is_err());
    }

    #[test]
    fn pairs_file_round_trip() {
        let pairs = vec![
            LabeledPair {
                sentence_a: "a b".into(),
                sentence_b: "c".into(),
                target: Target::Class(1),
            },
            LabeledPair {
                sentence_a: "d".into(),
                sentence_b: "e f".into(),
                target: Target::Class(0),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.tsv");
        save_pairs(&path, &pairs).unwrap();
        assert_eq!(load_pairs(&path, TaskKind::Classification).unwrap(), pairs);
    }

    #[test]
    fn batch_iter_sizes_and_determinism() {
        let batches = batch_iter(10, 4, false, 0).unwrap();
        let sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(batches[0], vec![0, 1, 2, 3]);

        let a = batch_iter(10, 3, true, 42).unwrap();
        let b = batch_iter(10, 3, true, 42).unwrap();
        assert_eq!(a, b);
        let c = batch_iter(10, 3, true, 43).unwrap();
        assert_ne!(a, c);

        assert!(batch_iter(10, 0, false, 0).is_err());
    }
}
