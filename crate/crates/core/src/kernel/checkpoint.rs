//! Versioned little-endian binary layout for a [`ParamStore`]:
//!
//! ```text
//! magic    8 bytes  "XGRCKPT\0"
//! version  u32      1
//! step     u64      Adam step counter
//! count    u32      number of parameters
//! per parameter:
//!   name_len u32, name UTF-8 bytes
//!   rows u64, cols u64
//!   value, m, v   rows*cols f64 each
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Matrix, Param, ParamStore};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"XGRCKPT\0";
pub const VERSION: u32 = 1;

pub fn write_params(store: &ParamStore, mut out: impl Write) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&store.step().to_le_bytes())?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.params() {
        out.write_all(&(p.name.len() as u32).to_le_bytes())?;
        out.write_all(p.name.as_bytes())?;
        out.write_all(&(p.value.rows() as u64).to_le_bytes())?;
        out.write_all(&(p.value.cols() as u64).to_le_bytes())?;
        for m in [&p.value, &p.m, &p.v] {
            for x in m.as_slice() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn to_bytes(store: &ParamStore) -> Vec<u8> {
    let mut buf = Vec::new();
    write_params(store, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn read_exact<const N: usize>(input: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input
        .read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn read_matrix(input: &mut impl Read, rows: usize, cols: usize) -> Result<Matrix> {
    let data = (0..rows * cols)
        .map(|_| read_exact::<8>(input).map(f64::from_le_bytes))
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_vec(rows, cols, data)
}

/// Gradients come back zeroed.
pub fn read_params(mut input: impl Read) -> Result<ParamStore> {
    if &read_exact::<8>(&mut input)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_exact(&mut input)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let step = u64::from_le_bytes(read_exact(&mut input)?);
    let count = u32::from_le_bytes(read_exact(&mut input)?) as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(read_exact(&mut input)?) as usize;
        let mut name = vec![0u8; name_len];
        input
            .read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rows = u64::from_le_bytes(read_exact(&mut input)?) as usize;
        let cols = u64::from_le_bytes(read_exact(&mut input)?) as usize;
        let value = read_matrix(&mut input, rows, cols)?;
        let m = read_matrix(&mut input, rows, cols)?;
        let v = read_matrix(&mut input, rows, cols)?;
        params.push(Param {
            name,
            value,
            grad: Matrix::zeros(rows, cols),
            m,
            v,
        });
    }
    let mut trailing = [0u8; 1];
    if input
        .read(&mut trailing)
        .map_err(|e| Error::Checkpoint(e.to_string()))?
        != 0
    {
        return Err(Error::Checkpoint(
            "trailing bytes after last parameter".into(),
        ));
    }
    Ok(ParamStore::from_parts(params, step))
}

pub fn save_params(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(store)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_params(bytes.as_slice())
}
