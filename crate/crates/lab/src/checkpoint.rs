//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "TSCK" | version u32 | adam step u64 | beta1 f64 | beta2 f64 | epsilon f64 | count u32
//! per parameter:
//!   name length u32 | name bytes (UTF-8) | rows u32 | cols u32
//!   value, grad, first moment, second moment: rows * cols f64 each, row-major
//! ```

use std::path::Path;

use tsc_core::matrix::Matrix;
use tsc_core::nn::{AdamConfig, Parameter, ParameterStore};

use crate::error::LabError;

pub const MAGIC: &[u8; 4] = b"TSCK";
pub const VERSION: u32 = 1;

pub fn encode(store: &ParameterStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&store.step_count().to_le_bytes());
    for x in [store.adam.beta1, store.adam.beta2, store.adam.epsilon] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.params() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
        for m in [&p.value, &p.grad, &p.first_moment, &p.second_moment] {
            for x in m.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix, String> {
        let n = rows.checked_mul(cols).ok_or("tensor size overflows")?;
        if n.saturating_mul(8) > self.bytes.len() - self.pos {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
        Ok(Matrix::from_vec(rows, cols, data))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParameterStore, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("missing TSCK magic".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let step = r.u64()?;
    let adam = AdamConfig { beta1: r.f64()?, beta2: r.f64()?, epsilon: r.f64()? };
    let count = r.u32()?;
    let mut store = ParameterStore::new();
    store.adam = adam;
    store.set_step_count(step);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| format!("parameter name: {e}"))?.to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let value = r.matrix(rows, cols)?;
        let grad = r.matrix(rows, cols)?;
        let first_moment = r.matrix(rows, cols)?;
        let second_moment = r.matrix(rows, cols)?;
        store
            .push_parameter(Parameter { name, value, grad, first_moment, second_moment })
            .map_err(|e| e.to_string())?;
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(store)
}

pub fn save(store: &ParameterStore, path: &Path) -> Result<(), LabError> {
    std::fs::write(path, encode(store)).map_err(|e| LabError::io(path, e))
}

pub fn load(path: &Path) -> Result<ParameterStore, LabError> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    decode(&bytes).map_err(|message| LabError::Checkpoint { path: path.into(), message })
}

/// Copies a loaded store into `target` after checking names and shapes agree.
pub fn restore_into(target: &mut ParameterStore, loaded: ParameterStore) -> Result<(), String> {
    if target.len() != loaded.len() {
        return Err(format!("expected {} parameters, checkpoint has {}", target.len(), loaded.len()));
    }
    for (a, b) in target.params().iter().zip(loaded.params()) {
        if a.name != b.name || a.value.shape() != b.value.shape() {
            return Err(format!(
                "parameter `{}` {:?} does not match checkpoint `{}` {:?}",
                a.name,
                a.value.shape(),
                b.name,
                b.value.shape()
            ));
        }
    }
    *target = loaded;
    Ok(())
}
