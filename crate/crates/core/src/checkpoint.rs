//! Binary model container.
//!
//! ```text
//! magic            8 bytes  "FEDMRCK1"
//! id_len           u32 LE
//! architecture_id  id_len bytes, UTF-8
//! layer_count      u32 LE
//! per layer:
//!   param_count    u32 LE
//!   per param:
//!     ndim         u32 LE
//!     dims         ndim x u64 LE
//!     values       prod(dims) x f64 LE
//! ```
//!
//! The architecture id fully determines layer kinds and shapes; the per-param
//! shape headers are checked against it on load.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::LayeredModel;

pub const MAGIC: &[u8; 8] = b"FEDMRCK1";

pub fn write_model<W: Write>(model: &LayeredModel, mut w: W) -> Result<()> {
    let id = model.architecture_id().as_bytes();
    w.write_all(MAGIC)?;
    w.write_all(&(id.len() as u32).to_le_bytes())?;
    w.write_all(id)?;
    w.write_all(&(model.layers().len() as u32).to_le_bytes())?;
    for layer in model.layers() {
        let params = layer.params();
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        for (_, t) in params {
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn to_bytes(model: &LayeredModel) -> Vec<u8> {
    let mut out = Vec::new();
    write_model(model, &mut out).expect("writing to a Vec cannot fail");
    out
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Truncated(format!("checkpoint {what}")),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes(what)?) as usize)
    }
}

pub fn read_model<R: Read>(r: R) -> Result<LayeredModel> {
    let mut r = Reader { inner: r };
    if &r.bytes::<8>("magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let id_len = r.u32("id length")?;
    if id_len > 1 << 20 {
        return Err(Error::Checkpoint(format!("architecture id of {id_len} bytes")));
    }
    let mut id = vec![0u8; id_len];
    r.inner
        .read_exact(&mut id)
        .map_err(|_| Error::Truncated("checkpoint architecture id".into()))?;
    let id = String::from_utf8(id).map_err(|_| Error::Checkpoint("id is not UTF-8".into()))?;
    let mut model = LayeredModel::from_architecture_id(&id)?;

    let layer_count = r.u32("layer count")?;
    if layer_count != model.layers().len() {
        return Err(Error::Checkpoint(format!(
            "{layer_count} layers stored, architecture has {}",
            model.layers().len()
        )));
    }
    let expected: Vec<Vec<Vec<usize>>> = model
        .layers()
        .iter()
        .map(|l| l.params().iter().map(|(_, t)| t.shape().to_vec()).collect())
        .collect();
    let mut slots = model.param_data_mut().into_iter();
    for (i, shapes) in expected.iter().enumerate() {
        let count = r.u32("param count")?;
        if count != shapes.len() {
            return Err(Error::Checkpoint(format!(
                "layer {i}: {count} params stored, expected {}",
                shapes.len()
            )));
        }
        for shape in shapes {
            let ndim = r.u32("ndim")?;
            let dims = (0..ndim)
                .map(|_| Ok(u64::from_le_bytes(r.bytes("dims")?) as usize))
                .collect::<Result<Vec<_>>>()?;
            if &dims != shape {
                return Err(Error::Checkpoint(format!(
                    "layer {i}: stored shape {dims:?}, expected {shape:?}"
                )));
            }
            let slot = slots.next().expect("shape list mirrors parameters");
            for v in slot.iter_mut() {
                *v = f64::from_le_bytes(r.bytes("values")?);
                if !v.is_finite() {
                    return Err(Error::Checkpoint(format!("layer {i}: non-finite value")));
                }
            }
        }
    }
    drop(slots);
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last layer".into()));
    }
    Ok(model)
}

pub fn save(model: &LayeredModel, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<LayeredModel> {
    let file = std::fs::File::open(path)?;
    read_model(std::io::BufReader::new(file))
}
