//! Parameter files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        4 bytes  "TRCT"
//! version      u32      1
//! layers       u32      total layer count of the model (parametrised or not)
//! entries      u32      number of parametrised layers
//! entries × {  layer index u32, rows u32, cols u32, bias length u32 }
//! payload      for each entry: rows·cols weights (row-major) then the bias,
//!              all as f32
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::{Linear, ParamStore};

pub const MAGIC: &[u8; 4] = b"TRCT";
pub const VERSION: u32 = 1;

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let entries: Vec<(usize, &Linear)> = store
        .layers
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.as_ref().map(|l| (i, l)))
        .collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [VERSION, store.layers.len() as u32, entries.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (i, l) in &entries {
        for v in [*i, l.w.rows(), l.w.cols(), l.b.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    for (_, l) in &entries {
        for v in l.w.data().iter().chain(&l.b) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.at + n;
        let s = self.bytes.get(self.at..end).ok_or_else(|| Error::Format {
            offset: self.at,
            msg: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.at),
        })?;
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8], seed: u64) -> Result<ParamStore> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "missing TRCT magic".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let total = r.u32("layer count")? as usize;
    let entries = r.u32("entry count")? as usize;
    let mut table = Vec::with_capacity(entries);
    for _ in 0..entries {
        let idx = r.u32("layer index")? as usize;
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let bias = r.u32("bias length")? as usize;
        if idx >= total {
            return Err(Error::Format {
                offset: r.at - 16,
                msg: format!("layer index {idx} beyond {total} layers"),
            });
        }
        table.push((idx, rows, cols, bias));
    }
    let mut layers: Vec<Option<Linear>> = vec![None; total];
    for (idx, rows, cols, bias) in table {
        let w: Vec<f64> = (0..rows * cols)
            .map(|_| r.f32("weights").map(f64::from))
            .collect::<Result<_>>()?;
        let b: Vec<f64> = (0..bias).map(|_| r.f32("bias").map(f64::from)).collect::<Result<_>>()?;
        layers[idx] = Some(Linear {
            w: Mat::from_vec(rows, cols, w)?,
            b,
        });
    }
    if r.at != bytes.len() {
        return Err(Error::Format {
            offset: r.at,
            msg: format!("{} trailing bytes", bytes.len() - r.at),
        });
    }
    Ok(ParamStore { layers, seed })
}

pub fn write_params(path: &Path, store: &ParamStore) -> Result<()> {
    fs::write(path, encode(store))?;
    Ok(())
}

pub fn read_params(path: &Path) -> Result<ParamStore> {
    decode(&fs::read(path)?, 0)
}
