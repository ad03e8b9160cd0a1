//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      8 bytes  "ALCHEPN\0"
//! version    u32      1
//! dtype      u8       bytes per float (4 or 8)
//! dims       10 x u32 EpnDims fields in declaration order
//! n_params   u32
//! per parameter, in registration order:
//!   name_len u32, name (utf-8), rows u32, cols u32, rows * cols floats (row-major)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::model::{Epn, EpnDims};
use super::params::ParamStore;
use super::tensor::{Real, ShapeError, Tensor};

pub const MAGIC: &[u8; 8] = b"ALCHEPN\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("unsupported float width {0}")]
    Dtype(u8),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

fn dims_fields(d: &EpnDims) -> [usize; 10] {
    [d.obs_dim, d.n_actions, d.mem_width, d.enc_hidden, d.enc_out, d.embed, d.heads, d.head_dim, d.mlp, d.lstm]
}

pub fn write_checkpoint<W: Write>(net: &Epn, mut w: W) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[std::mem::size_of::<Real>() as u8])?;
    for f in dims_fields(&net.dims) {
        w.write_all(&(f as u32).to_le_bytes())?;
    }
    w.write_all(&(net.params.len() as u32).to_le_bytes())?;
    for (name, t) in net.params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rows() as u32).to_le_bytes())?;
        w.write_all(&(t.cols() as u32).to_le_bytes())?;
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_float<R: Read>(r: &mut R, width: u8) -> Result<Real, CheckpointError> {
    Ok(match width {
        4 => {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            f32::from_le_bytes(b) as Real
        }
        _ => {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            f64::from_le_bytes(b) as Real
        }
    })
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Epn, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut width = [0u8; 1];
    r.read_exact(&mut width)?;
    if width[0] != 4 && width[0] != 8 {
        return Err(CheckpointError::Dtype(width[0]));
    }
    let mut f = [0usize; 10];
    for v in f.iter_mut() {
        *v = read_u32(&mut r)? as usize;
    }
    let dims = EpnDims {
        obs_dim: f[0],
        n_actions: f[1],
        mem_width: f[2],
        enc_hidden: f[3],
        enc_out: f[4],
        embed: f[5],
        heads: f[6],
        head_dim: f[7],
        mlp: f[8],
        lstm: f[9],
    };
    dims.validate()?;
    let n = read_u32(&mut r)? as usize;
    if n > 1024 {
        return Err(CheckpointError::Malformed(format!("{n} parameters")));
    }
    let mut params = ParamStore::new();
    for _ in 0..n {
        let len = read_u32(&mut r)? as usize;
        if len > 4096 {
            return Err(CheckpointError::Malformed("parameter name too long".into()));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Malformed("name is not utf-8".into()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        if rows.saturating_mul(cols) > 1 << 26 {
            return Err(CheckpointError::Malformed(format!("{name} has {rows}x{cols} entries")));
        }
        let data = (0..rows * cols).map(|_| read_float(&mut r, width[0])).collect::<Result<Vec<_>, _>>()?;
        params.add(name, Tensor::from_vec(rows, cols, data)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", rest.len())));
    }
    Ok(Epn::from_params(dims, params)?)
}

pub fn save(net: &Epn, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Epn, CheckpointError> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let net = Epn::new(EpnDims::default().shrunk(8), 3).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, net);
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(buf, again);
        buf[0] = b'X';
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(CheckpointError::BadMagic)));
    }
}
