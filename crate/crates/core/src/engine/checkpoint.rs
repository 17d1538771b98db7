//! Single-file checkpoints: magic, version, config JSON, then named
//! little-endian f64 tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::EngineConfig;
use super::model::AnimationModel;
use super::tensor::Tensor;
use super::EngineError;

const MAGIC: &[u8; 4] = b"PDCK";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &AnimationModel, path: &Path) -> Result<(), EngineError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg = model.config().to_json();
    w.write_all(&(cfg.len() as u64).to_le_bytes())?;
    w.write_all(cfg.as_bytes())?;
    w.write_all(&(model.params().len() as u64).to_le_bytes())?;
    for (name, t) in model.params().iter() {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.ndim() as u64).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> EngineError {
    EngineError::BadCheckpoint(msg.into())
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, EngineError> {
        let mut buf = Vec::new();
        (&mut self.0).take(n as u64).read_to_end(&mut buf)?;
        if buf.len() != n {
            return Err(bad("truncated file"));
        }
        Ok(buf)
    }

    fn u64(&mut self) -> Result<u64, EngineError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, limit: u64, what: &str) -> Result<usize, EngineError> {
        let n = self.u64()?;
        if n > limit {
            return Err(bad(format!("{what} of {n} exceeds limit")));
        }
        Ok(n as usize)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<AnimationModel, EngineError> {
    let mut r = Reader(BufReader::new(File::open(path)?));
    if r.bytes(4)? != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let version = u32::from_le_bytes(r.bytes(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = r.len(1 << 20, "config")?;
    let cfg = String::from_utf8(r.bytes(n)?).map_err(|_| bad("config is not UTF-8"))?;
    let config = EngineConfig::from_json(&cfg)?;
    let mut model = AnimationModel::new(config)?;
    let count = r.len(1 << 20, "tensor count")?;
    if count != model.params().len() {
        return Err(bad(format!("{count} tensors, model has {}", model.params().len())));
    }
    for _ in 0..count {
        let n = r.len(4096, "name")?;
        let name = String::from_utf8(r.bytes(n)?).map_err(|_| bad("name is not UTF-8"))?;
        let ndim = r.len(8, "rank")?;
        let shape = (0..ndim).map(|_| r.len(1 << 32, "dimension")).collect::<Result<Vec<_>, _>>()?;
        let id = model.params().id(&name).ok_or_else(|| bad(format!("unknown tensor {name}")))?;
        if model.params().get(id).shape() != shape.as_slice() {
            return Err(bad(format!(
                "tensor {name} has shape {shape:?}, expected {:?}",
                model.params().get(id).shape()
            )));
        }
        let numel: usize = shape.iter().product();
        let raw = r.bytes(numel * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        *model.params_mut().get_mut(id) = Tensor::new(&shape, data)?;
    }
    if r.bytes(1).is_ok() {
        return Err(bad("trailing data"));
    }
    Ok(model)
}
