//! Checkpoint container: config, vocabulary, flat named parameter arrays,
//! and optionally the optimizer state for resume.
//!
//! The layout is fixed and little-endian, so identical parameters always
//! produce identical bytes:
//! `magic "DVCK0001" | kind u8 | pooling u8 | n u32 | config json (string)`
//! `| vocab (count u32, strings) | params (count u32, each: name, ndim u32,`
//! `dims u64…, values f64…) | optimizer flag u8 [step u64, β1 β2 ε f64,`
//! `m values…, v values…]`.

use std::fs;
use std::path::Path;

use crate::binio::{put_f64, put_string, put_u32, put_u64, Reader};
use crate::data::Vocab;
use crate::encoder::{EncoderConfig, EncoderParams, PoolingStrategy};
use crate::error::{Error, Result};
use crate::model::{Model, ModelKind};
use crate::optim::AdamState;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DVCK0001";

fn pooling_code(p: PoolingStrategy) -> u8 {
    match p {
        PoolingStrategy::Mean => 0,
        PoolingStrategy::Max => 1,
        PoolingStrategy::Cls => 2,
    }
}

fn pooling_from_code(code: u8) -> Result<PoolingStrategy> {
    match code {
        0 => Ok(PoolingStrategy::Mean),
        1 => Ok(PoolingStrategy::Max),
        2 => Ok(PoolingStrategy::Cls),
        other => Err(Error::DataValidation(format!("unknown pooling code {other}"))),
    }
}

/// Writes a model (and optionally its optimizer state) to disk.
pub fn save(model: &Model, optimizer: Option<&AdamState>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(model.kind.code());
    out.push(pooling_code(model.pooling));
    put_u32(&mut out, model.num_classes as u32);
    let config_json = serde_json::to_string(&model.config)
        .map_err(|e| Error::Config(format!("config serialization: {e}")))?;
    put_string(&mut out, &config_json);
    put_u32(&mut out, model.vocab.len() as u32);
    for token in model.vocab.tokens() {
        put_string(&mut out, token);
    }
    let params = model.named();
    put_u32(&mut out, params.len() as u32);
    for (name, tensor) in &params {
        put_string(&mut out, name);
        put_u32(&mut out, tensor.shape().len() as u32);
        for &dim in tensor.shape() {
            put_u64(&mut out, dim as u64);
        }
        for &v in tensor.values() {
            put_f64(&mut out, v);
        }
    }
    match optimizer {
        None => out.push(0),
        Some(state) => {
            if state.m.len() != params.len() {
                return Err(Error::Config(format!(
                    "optimizer tracks {} parameters, model has {}",
                    state.m.len(),
                    params.len()
                )));
            }
            out.push(1);
            put_u64(&mut out, state.step);
            put_f64(&mut out, state.beta1);
            put_f64(&mut out, state.beta2);
            put_f64(&mut out, state.epsilon);
            for buffer in state.m.iter().chain(state.v.iter()) {
                for &v in buffer {
                    put_f64(&mut out, v);
                }
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint back; shapes and parameter names must match what the
/// config implies.
pub fn load(path: &Path) -> Result<(Model, Option<AdamState>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = Reader::new(&bytes, path);
    if reader.take(8)? != MAGIC {
        return Err(reader.corrupt("bad magic"));
    }
    let kind = ModelKind::from_code(reader.u8()?)?;
    let pooling = pooling_from_code(reader.u8()?)?;
    let num_classes = reader.u32()? as usize;
    let config: EncoderConfig = serde_json::from_str(&reader.string()?)
        .map_err(|_| reader.corrupt("bad config json"))?;
    config.validate()?;
    let vocab_len = reader.u32()? as usize;
    let mut tokens = Vec::with_capacity(vocab_len);
    for _ in 0..vocab_len {
        tokens.push(reader.string()?);
    }
    let vocab = Vocab::from_tokens(tokens)?;

    let param_count = reader.u32()? as usize;
    let mut params = Vec::with_capacity(param_count);
    for _ in 0..param_count {
        let name = reader.string()?;
        let ndim = reader.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(reader.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values.push(reader.f64()?);
        }
        params.push((name, Tensor::new(shape, values)?));
    }

    let mut skeleton = EncoderParams::init_zeroed(&config)?;
    let expected: Vec<String> = skeleton.named().into_iter().map(|(n, _)| n).collect();
    let has_head = kind != ModelKind::SiameseRegressor;
    let expected_total = expected.len() + usize::from(has_head);
    if params.len() != expected_total {
        return Err(reader.corrupt(&format!(
            "{} parameters, expected {expected_total}",
            params.len()
        )));
    }
    let mut head = None;
    let mut param_iter = params.into_iter();
    for ((name, tensor), (slot_name, slot)) in
        param_iter.by_ref().take(expected.len()).zip(skeleton.named_mut())
    {
        if name != slot_name {
            return Err(Error::DataValidation(format!(
                "checkpoint parameter {name} where {slot_name} was expected"
            )));
        }
        if tensor.shape() != slot.shape() {
            return Err(Error::DataValidation(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                tensor.shape(),
                slot.shape()
            )));
        }
        *slot = tensor;
    }
    if has_head {
        let (name, tensor) = param_iter.next().expect("count checked");
        if name != "head" {
            return Err(Error::DataValidation(format!(
                "checkpoint parameter {name} where head was expected"
            )));
        }
        head = Some(tensor);
    }

    let model = Model {
        kind,
        config,
        pooling,
        num_classes,
        vocab,
        encoder: skeleton,
        head,
    };

    let optimizer = match reader.u8()? {
        0 => None,
        1 => {
            let step = reader.u64()?;
            let beta1 = reader.f64()?;
            let beta2 = reader.f64()?;
            let epsilon = reader.f64()?;
            let sizes = model.param_sizes();
            let read_buffers = |reader: &mut Reader| -> Result<Vec<Vec<f64>>> {
                sizes
                    .iter()
                    .map(|&n| (0..n).map(|_| reader.f64()).collect())
                    .collect()
            };
            let m = read_buffers(&mut reader)?;
            let v = read_buffers(&mut reader)?;
            Some(AdamState {
                beta1,
                beta2,
                epsilon,
                step,
                m,
                v,
            })
        }
        other => return Err(reader.corrupt(&format!("bad optimizer flag {other}"))),
    };
    if !reader.done() {
        return Err(reader.corrupt("trailing bytes"));
    }
    Ok((model, optimizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RESERVED_TOKENS;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_model(kind: ModelKind) -> Model {
        let config = EncoderConfig {
            vocab_size: 10,
            ..EncoderConfig::tiny()
        };
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend((0..6).map(|i| format!("w{i}")));
        let vocab = Vocab::from_tokens(tokens).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = if kind.task() == crate::data::TaskKind::Classification { 3 } else { 1 };
        Model::init(kind, config, PoolingStrategy::Mean, n, vocab, &mut rng).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything_bitwise() {
        for kind in [
            ModelKind::SiameseClassifier,
            ModelKind::CrossClassifier,
            ModelKind::SiameseRegressor,
            ModelKind::CrossRegressor,
        ] {
            let model = sample_model(kind);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.ckpt");
            save(&model, None, &path).unwrap();
            let (loaded, optimizer) = load(&path).unwrap();
            assert!(optimizer.is_none());
            assert_eq!(loaded, model);
            for ((_, a), (_, b)) in model.named().iter().zip(loaded.named().iter()) {
                for (x, y) in a.values().iter().zip(b.values()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn save_is_byte_stable() {
        let model = sample_model(ModelKind::SiameseClassifier);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        save(&model, None, &a).unwrap();
        save(&model, None, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn optimizer_state_round_trips() {
        let model = sample_model(ModelKind::CrossClassifier);
        let mut state = AdamState::new(&model.param_sizes());
        state.step = 17;
        state.m[0][0] = 0.123456789;
        state.v[2][1] = 9.87e-11;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&model, Some(&state), &path).unwrap();
        let (_, loaded) = load(&path).unwrap();
        assert_eq!(loaded.unwrap(), state);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let model = sample_model(ModelKind::SiameseClassifier);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&model, None, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[3] = b'!';
        fs::write(&path, &bytes).unwrap();
        let err = load(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
