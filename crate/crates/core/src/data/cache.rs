//! Persisted teacher predictions.
//!
//! Cache files pin the dataset they were computed from via a content hash,
//! so a stale cache can never be used silently. Floats are stored as raw
//! little-endian bits and survive a round trip unchanged.
//!
//! Layout (all integers little-endian):
//! `magic "DVTC0001" | task u8 | n u32 | K u32 | count u64 | fingerprint`
//! `[32 bytes] | K × (len u32, utf8 teacher id) | count × K × n f64`.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::binio::{put_f64, put_string, put_u32, put_u64, Reader};
use crate::data::TaskKind;
use crate::distill::TeacherPredictions;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DVTC0001";

/// Fixed teacher outputs over one dataset, bound to that dataset's bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherCache {
    pub fingerprint: [u8; 32],
    pub task: TaskKind,
    pub num_classes: usize,
    pub teacher_ids: Vec<String>,
    pub predictions: TeacherPredictions,
}

/// SHA-256 of the raw dataset file bytes.
pub fn dataset_fingerprint(path: &Path) -> Result<[u8; 32]> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().into())
}

pub fn fingerprint_hex(fingerprint: &[u8; 32]) -> String {
    fingerprint.iter().map(|b| format!("{b:02x}")).collect()
}

impl TeacherCache {
    pub fn num_examples(&self) -> usize {
        self.predictions.num_examples()
    }

    pub fn num_teachers(&self) -> usize {
        self.teacher_ids.len()
    }

    /// Rejects the cache unless it matches the dataset fingerprint, example
    /// count, and task it is about to be used with.
    pub fn validate_against(
        &self,
        fingerprint: &[u8; 32],
        num_examples: usize,
        task: TaskKind,
    ) -> Result<()> {
        if &self.fingerprint != fingerprint {
            return Err(Error::DataValidation(format!(
                "teacher cache fingerprint {} does not match dataset {}",
                fingerprint_hex(&self.fingerprint),
                fingerprint_hex(fingerprint)
            )));
        }
        if self.num_examples() != num_examples {
            return Err(Error::DataValidation(format!(
                "teacher cache holds {} examples, dataset has {num_examples}",
                self.num_examples()
            )));
        }
        if self.task != task {
            return Err(Error::DataValidation(
                "teacher cache task kind does not match the dataset".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(self.task.code());
        put_u32(&mut out, self.num_classes as u32);
        put_u32(&mut out, self.num_teachers() as u32);
        put_u64(&mut out, self.num_examples() as u64);
        out.extend_from_slice(&self.fingerprint);
        for id in &self.teacher_ids {
            put_string(&mut out, id);
        }
        match &self.predictions {
            TeacherPredictions::Classification(examples) => {
                for per_teacher in examples {
                    for dist in per_teacher {
                        for v in dist {
                            put_f64(&mut out, *v);
                        }
                    }
                }
            }
            TeacherPredictions::Regression(examples) => {
                for per_teacher in examples {
                    for v in per_teacher {
                        put_f64(&mut out, *v);
                    }
                }
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut reader = Reader::new(&bytes, path);
        let magic = reader.take(8)?;
        if magic != MAGIC {
            return Err(reader.corrupt("bad magic"));
        }
        let task = TaskKind::from_code(reader.take(1)?[0])?;
        let num_classes = reader.u32()? as usize;
        let num_teachers = reader.u32()? as usize;
        let count = reader.u64()? as usize;
        let mut fingerprint = [0u8; 32];
        fingerprint.copy_from_slice(reader.take(32)?);
        let mut teacher_ids = Vec::with_capacity(num_teachers);
        for _ in 0..num_teachers {
            teacher_ids.push(reader.string()?);
        }
        let predictions = match task {
            TaskKind::Classification => {
                let mut examples = Vec::with_capacity(count);
                for _ in 0..count {
                    let mut per_teacher = Vec::with_capacity(num_teachers);
                    for _ in 0..num_teachers {
                        let mut dist = Vec::with_capacity(num_classes);
                        for _ in 0..num_classes {
                            dist.push(reader.f64()?);
                        }
                        per_teacher.push(dist);
                    }
                    examples.push(per_teacher);
                }
                TeacherPredictions::Classification(examples)
            }
            TaskKind::Regression => {
                if num_classes != 1 {
                    return Err(reader.corrupt("regression cache must have n = 1"));
                }
                let mut examples = Vec::with_capacity(count);
                for _ in 0..count {
                    let mut per_teacher = Vec::with_capacity(num_teachers);
                    for _ in 0..num_teachers {
                        per_teacher.push(reader.f64()?);
                    }
                    examples.push(per_teacher);
                }
                TeacherPredictions::Regression(examples)
            }
        };
        if !reader.done() {
            return Err(reader.corrupt("trailing bytes"));
        }
        let cache = TeacherCache {
            fingerprint,
            task,
            num_classes,
            teacher_ids,
            predictions,
        };
        cache.check_distributions()?;
        Ok(cache)
    }

    fn check_distributions(&self) -> Result<()> {
        if let TeacherPredictions::Classification(examples) = &self.predictions {
            for per_teacher in examples {
                for dist in per_teacher {
                    let total: f64 = dist.iter().sum();
                    if (total - 1.0).abs() > 1e-6 {
                        return Err(Error::DataValidation(format!(
                            "cached teacher distribution sums to {total}, not 1"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Concatenates the teacher lists of caches computed over the same dataset.
pub fn merge_caches(caches: Vec<TeacherCache>) -> Result<TeacherCache> {
    let mut iter = caches.into_iter();
    let mut merged = iter
        .next()
        .ok_or_else(|| Error::InvalidArgument("no teacher caches given".into()))?;
    for cache in iter {
        cache.validate_against(&merged.fingerprint, merged.num_examples(), merged.task)?;
        if cache.num_classes != merged.num_classes {
            return Err(Error::DataValidation(format!(
                "cache class counts disagree: {} vs {}",
                merged.num_classes, cache.num_classes
            )));
        }
        merged.teacher_ids.extend(cache.teacher_ids);
        match (&mut merged.predictions, cache.predictions) {
            (
                TeacherPredictions::Classification(into),
                TeacherPredictions::Classification(from),
            ) => {
                for (acc, extra) in into.iter_mut().zip(from) {
                    acc.extend(extra);
                }
            }
            (TeacherPredictions::Regression(into), TeacherPredictions::Regression(from)) => {
                for (acc, extra) in into.iter_mut().zip(from) {
                    acc.extend(extra);
                }
            }
            _ => {
                return Err(Error::DataValidation(
                    "cannot merge classification and regression caches".into(),
                ))
            }
        }
    }
    Ok(merged)
}
