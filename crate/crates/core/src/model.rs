//! One trainable model: an encoder, its head, and the vocabulary it was
//! trained with. The two views never share encoder parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{TaskKind, Vocab};
use crate::encoder::{register_encoder, EncoderConfig, EncoderParams, EncoderVars, PoolingStrategy};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, TensorId};
use crate::views::{
    build_cross_input, cross_forward, cross_regression_score, siamese_cosine, siamese_embed,
    siamese_forward, CrossHead, SiameseHead,
};

/// Which view and task the model implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    SiameseClassifier,
    CrossClassifier,
    SiameseRegressor,
    CrossRegressor,
}

impl ModelKind {
    pub fn code(self) -> u8 {
        match self {
            ModelKind::SiameseClassifier => 0,
            ModelKind::CrossClassifier => 1,
            ModelKind::SiameseRegressor => 2,
            ModelKind::CrossRegressor => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(ModelKind::SiameseClassifier),
            1 => Ok(ModelKind::CrossClassifier),
            2 => Ok(ModelKind::SiameseRegressor),
            3 => Ok(ModelKind::CrossRegressor),
            other => Err(Error::DataValidation(format!("unknown model kind {other}"))),
        }
    }

    pub fn task(self) -> TaskKind {
        match self {
            ModelKind::SiameseClassifier | ModelKind::CrossClassifier => TaskKind::Classification,
            ModelKind::SiameseRegressor | ModelKind::CrossRegressor => TaskKind::Regression,
        }
    }

    pub fn is_cross(self) -> bool {
        matches!(self, ModelKind::CrossClassifier | ModelKind::CrossRegressor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub config: EncoderConfig,
    pub pooling: PoolingStrategy,
    pub num_classes: usize,
    pub vocab: Vocab,
    pub encoder: EncoderParams,
    /// `W [3d×n]` (siamese classifier) or `O [d×n]` (cross); none for the
    /// cosine regressor, which has no learned head.
    pub head: Option<Tensor>,
}

/// Tape handles for a registered model.
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub head: Option<TensorId>,
}

impl Model {
    pub fn init(
        kind: ModelKind,
        config: EncoderConfig,
        pooling: PoolingStrategy,
        num_classes: usize,
        vocab: Vocab,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "vocab of {} tokens does not match encoder vocab_size {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let expected_classes = match kind {
            ModelKind::SiameseClassifier | ModelKind::CrossClassifier => num_classes,
            ModelKind::SiameseRegressor | ModelKind::CrossRegressor => 1,
        };
        if expected_classes != num_classes || num_classes == 0 {
            return Err(Error::Config(format!(
                "model kind {kind:?} cannot have {num_classes} outputs"
            )));
        }
        let encoder = EncoderParams::init(&config, rng)?;
        let head = match kind {
            ModelKind::SiameseClassifier => {
                Some(SiameseHead::init(config.hidden_dim, num_classes, rng)?.w)
            }
            ModelKind::CrossClassifier => {
                Some(CrossHead::init(config.hidden_dim, num_classes, rng)?.o)
            }
            ModelKind::CrossRegressor => Some(CrossHead::init(config.hidden_dim, 1, rng)?.o),
            ModelKind::SiameseRegressor => None,
        };
        Ok(Model {
            kind,
            config,
            pooling,
            num_classes,
            vocab,
            encoder,
            head,
        })
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.named();
        if let Some(head) = &self.head {
            out.push(("head".into(), head));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.encoder.named_mut();
        if let Some(head) = &mut self.head {
            out.push(("head".into(), head));
        }
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.named().iter().map(|(_, t)| t.numel()).collect()
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        let encoder = register_encoder(tape, &self.encoder, trainable);
        let head = self.head.as_ref().map(|h| {
            let mut tensor = h.clone();
            tensor.set_requires_grad(trainable);
            tape.leaf(tensor)
        });
        ModelVars { encoder, head }
    }

    fn head_id(&self, vars: &ModelVars) -> Result<TensorId> {
        vars.head
            .ok_or_else(|| Error::Config("model has no head projection".into()))
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        self.vocab.encode(text)
    }

    /// Production-time sentence embedding (eval mode, fresh tape).
    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = self.tokenize(text);
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id = siamese_embed(
            &mut tape,
            &self.config,
            &vars.encoder,
            self.pooling,
            &tokens,
            false,
            &mut rng,
        )?;
        Ok(tape.data(id).to_vec())
    }

    /// Class distribution for a sentence pair (eval mode, fresh tape).
    pub fn predict_class_probs(&self, a: &str, b: &str) -> Result<Vec<f64>> {
        if self.kind.task() != TaskKind::Classification {
            return Err(Error::Config("not a classification model".into()));
        }
        let a_tokens = self.tokenize(a);
        let b_tokens = self.tokenize(b);
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probs = match self.kind {
            ModelKind::SiameseClassifier => siamese_forward(
                &mut tape,
                &self.config,
                &vars.encoder,
                self.head_id(&vars)?,
                self.pooling,
                &a_tokens,
                &b_tokens,
                false,
                &mut rng,
            )?,
            ModelKind::CrossClassifier => {
                let pair = build_cross_input(&a_tokens, &b_tokens, self.config.max_seq_len)?;
                cross_forward(
                    &mut tape,
                    &self.config,
                    &vars.encoder,
                    self.head_id(&vars)?,
                    &pair,
                    false,
                    &mut rng,
                )?
            }
            _ => unreachable!("task checked above"),
        };
        Ok(tape.data(probs).to_vec())
    }

    pub fn predict_class(&self, a: &str, b: &str) -> Result<usize> {
        let probs = self.predict_class_probs(a, b)?;
        Ok(probs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.partial_cmp(y.1).expect("finite probabilities"))
            .expect("nonempty distribution")
            .0)
    }

    /// Scalar similarity in [−1, 1] for a sentence pair (eval mode).
    pub fn predict_score(&self, a: &str, b: &str) -> Result<f64> {
        let a_tokens = self.tokenize(a);
        let b_tokens = self.tokenize(b);
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id = match self.kind {
            ModelKind::CrossRegressor => {
                let pair = build_cross_input(&a_tokens, &b_tokens, self.config.max_seq_len)?;
                cross_regression_score(
                    &mut tape,
                    &self.config,
                    &vars.encoder,
                    self.head_id(&vars)?,
                    &pair,
                    false,
                    &mut rng,
                )?
            }
            _ => siamese_cosine(
                &mut tape,
                &self.config,
                &vars.encoder,
                self.pooling,
                &a_tokens,
                &b_tokens,
                false,
                &mut rng,
            )?,
        };
        tape.item(id)
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RESERVED_TOKENS;

    fn tiny_vocab(extra: usize) -> Vocab {
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        for i in 0..extra {
            tokens.push(format!("w{i}"));
        }
        Vocab::from_tokens(tokens).unwrap()
    }

    fn tiny_model(kind: ModelKind) -> Model {
        let config = EncoderConfig {
            vocab_size: 16,
            ..EncoderConfig::tiny()
        };
        let vocab = tiny_vocab(12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = match kind.task() {
            TaskKind::Classification => 3,
            TaskKind::Regression => 1,
        };
        Model::init(kind, config, PoolingStrategy::Mean, n, vocab, &mut rng).unwrap()
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = tiny_model(ModelKind::SiameseClassifier);
        let b = tiny_model(ModelKind::SiameseClassifier);
        assert_eq!(a, b);
    }

    #[test]
    fn vocab_size_mismatch_is_rejected() {
        let config = EncoderConfig {
            vocab_size: 99,
            ..EncoderConfig::tiny()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Model::init(
            ModelKind::SiameseClassifier,
            config,
            PoolingStrategy::Mean,
            3,
            tiny_vocab(12),
            &mut rng,
        )
        .is_err());
    }

    #[test]
    fn classifier_predictions_are_distributions() {
        for kind in [ModelKind::SiameseClassifier, ModelKind::CrossClassifier] {
            let model = tiny_model(kind);
            let probs = model.predict_class_probs("w0 w1", "w2 w3 w4").unwrap();
            assert_eq!(probs.len(), 3);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let class = model.predict_class("w0 w1", "w2 w3 w4").unwrap();
            assert!(class < 3);
        }
    }

    #[test]
    fn regression_models_score_in_range() {
        for kind in [ModelKind::SiameseRegressor, ModelKind::CrossRegressor] {
            let model = tiny_model(kind);
            let score = model.predict_score("w0 w1", "w0 w5").unwrap();
            assert!((-1.0..=1.0).contains(&score), "{score}");
        }
    }

    #[test]
    fn classification_api_rejects_regressors() {
        let model = tiny_model(ModelKind::SiameseRegressor);
        assert!(model.predict_class_probs("w0", "w1").is_err());
    }

    #[test]
    fn embedding_has_hidden_dim_and_unknowns_map_to_unk() {
        let model = tiny_model(ModelKind::SiameseClassifier);
        let e = model.embed_text("w0 never-seen w1").unwrap();
        assert_eq!(e.len(), model.config.hidden_dim);
        let unk_version = model.embed_text("w0 [UNK] w1");
        // "[UNK]" lowercases to "[unk]", which is itself OOV; both paths hit UNK.
        assert_eq!(e, unk_version.unwrap());
    }

    #[test]
    fn named_order_is_stable_and_head_last() {
        let model = tiny_model(ModelKind::CrossClassifier);
        let names: Vec<String> = model.named().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.first().unwrap(), "token_emb");
        assert_eq!(names.last().unwrap(), "head");
        let again: Vec<String> = model.named().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, again);
    }
}
