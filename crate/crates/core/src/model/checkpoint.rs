//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "PLOTTAG\0"
//! version u32
//! meta    u64 length, then UTF-8 JSON (config, vocabularies, class weights,
//!         parameter names and shapes)
//! arrays  per parameter in metadata order:
//!         u32 name length, name bytes, u32 ndim, u64 per dim,
//!         f32 values in row-major order
//! ```
//!
//! Nothing may follow the last array.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, Variant};
use crate::corpus::{TagVocabulary, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::ClassWeights;
use crate::tensor::{Array, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PLOTTAG\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    config: ModelConfig,
    vocabulary: Vec<String>,
    tags: Vec<String>,
    class_weights: Option<ClassWeights>,
    params: Vec<ParamSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
}

/// A model with everything needed to encode new synopses for it.
#[derive(Debug, Clone)]
pub struct Checkpoint<F: Scalar = f32> {
    pub model: Model<F>,
    pub vocabulary: Vocabulary,
    pub tags: TagVocabulary,
    pub class_weights: Option<ClassWeights>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn require_variant(&self, expected: Variant) -> Result<()> {
        let found = self.model.variant();
        if found != expected {
            return Err(Error::Checkpoint(format!("checkpoint holds variant {found}, expected {expected}")));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(&self.model, &self.vocabulary, &self.tags, self.class_weights.as_ref(), path)
    }
}

/// Writes `model` with its vocabularies. Values are stored as `f32`.
pub fn save_checkpoint<F: Scalar>(
    model: &Model<F>,
    vocabulary: &Vocabulary,
    tags: &TagVocabulary,
    class_weights: Option<&ClassWeights>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, model, vocabulary, tags, class_weights).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_checkpoint<F: Scalar>(
    w: &mut impl Write,
    model: &Model<F>,
    vocabulary: &Vocabulary,
    tags: &TagVocabulary,
    class_weights: Option<&ClassWeights>,
) -> std::io::Result<()> {
    let meta = Metadata {
        config: model.config().clone(),
        vocabulary: vocabulary.words().to_vec(),
        tags: tags.tags().to_vec(),
        class_weights: class_weights.cloned(),
        params: model
            .params()
            .arrays()
            .map(|(name, a)| ParamSpec { name: name.to_string(), shape: a.shape().to_vec() })
            .collect(),
    };
    let json = serde_json::to_vec(&meta).map_err(std::io::Error::other)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (name, a) in model.params().arrays() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(a.shape().len() as u32).to_le_bytes())?;
        for &d in a.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(a.len() * 4);
        for v in a.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let got = (&mut self.inner)
            .take(n as u64)
            .read_to_end(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("reading {what}: {e}")))?;
        if got != n {
            return Err(Error::Checkpoint(format!("truncated file while reading {what}")));
        }
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().unwrap()))
    }
}

/// Reads a checkpoint; the model is returned only if every check passes.
pub fn load_checkpoint<F: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<F>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}

pub(crate) fn read_checkpoint<F: Scalar>(inner: impl Read) -> Result<Checkpoint<F>> {
    let mut r = Reader { inner };
    if r.bytes(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes; not a checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let meta_len = r.u64("metadata length")?;
    let meta_len = usize::try_from(meta_len).map_err(|_| Error::Checkpoint("metadata too large".into()))?;
    let meta: Metadata = serde_json::from_slice(&r.bytes(meta_len, "metadata")?)
        .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;

    let mut model =
        Model::<F>::build(meta.config.clone()).map_err(|e| Error::Checkpoint(format!("stored config: {e}")))?;
    if meta.vocabulary.len() != meta.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} words, config says {}",
            meta.vocabulary.len(),
            meta.config.vocab_size
        )));
    }
    if meta.tags.len() != meta.config.n_tags {
        return Err(Error::Checkpoint(format!(
            "tag list has {} tags, config says {}",
            meta.tags.len(),
            meta.config.n_tags
        )));
    }
    let expected: Vec<(String, Vec<usize>)> =
        model.params().arrays().map(|(n, a)| (n.to_string(), a.shape().to_vec())).collect();
    let listed: Vec<(String, Vec<usize>)> = meta.params.iter().map(|p| (p.name.clone(), p.shape.clone())).collect();
    if expected != listed {
        return Err(Error::Checkpoint("parameter list does not match the stored config".into()));
    }
    let ids: Vec<_> = model.params().ids().collect();
    for (id, (name, shape)) in ids.into_iter().zip(expected) {
        let len = r.u32("name length")? as usize;
        let stored = r.bytes(len, "parameter name")?;
        if stored != name.as_bytes() {
            return Err(Error::Checkpoint(format!(
                "expected parameter {name}, found {}",
                String::from_utf8_lossy(&stored)
            )));
        }
        let ndim = r.u32("ndim")? as usize;
        if ndim != shape.len() {
            return Err(Error::Checkpoint(format!("rank mismatch for {name}")));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u64("dimension")? as usize);
        }
        if dims != shape {
            return Err(Error::Checkpoint(format!("shape mismatch for {name}: {dims:?} vs {shape:?}")));
        }
        let n: usize = shape.iter().product();
        let raw = r.bytes(n * 4, &name)?;
        let data =
            raw.chunks_exact(4).map(|c| F::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect();
        model.params_mut().set(id, Array::from_vec(shape, data));
    }
    let mut rest = [0u8; 1];
    match r.inner.read(&mut rest) {
        Ok(0) => {}
        Ok(_) => return Err(Error::Checkpoint("trailing bytes after the last array".into())),
        Err(e) => return Err(Error::Checkpoint(format!("reading trailer: {e}"))),
    }
    Ok(Checkpoint {
        model,
        vocabulary: Vocabulary::from_words(meta.vocabulary),
        tags: TagVocabulary::from_tags(meta.tags),
        class_weights: meta.class_weights,
    })
}
