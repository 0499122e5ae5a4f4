//! Binary serialization of TT vectors and TT-matrices.
//!
//! The format is a plain little-endian dump used by the CLI to cache
//! assembled operators:
//!
//! ```text
//! TT vector: u64 d | u64 dims[d] | u64 ranks[d+1] | f64 core entries
//! TT matrix: u64 d | u64 row_dims[d] | u64 col_dims[d] | u64 ranks[d+1] | f64 core entries
//! ```
//!
//! Cores are written in chain order, each in its row-major layout.

use std::io::{Read, Write};

use crate::tt::TTVector;
use crate::tt_matrix::TTMatrix;
use crate::{Error, Result};

fn write_u64s<W: Write>(w: &mut W, values: impl IntoIterator<Item = u64>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_usize_list<R: Read>(r: &mut R, len: usize) -> Result<Vec<usize>> {
    (0..len).map(|_| read_u64(r).map(|v| v as usize)).collect()
}

fn read_f64s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

/// Writes a TT vector in the cache format.
pub fn write_ttvector<W: Write>(w: &mut W, x: &TTVector) -> Result<()> {
    let d = x.order();
    write_u64s(w, [d as u64])?;
    write_u64s(w, x.dims().iter().map(|&v| v as u64))?;
    write_u64s(w, x.ranks().iter().map(|&v| v as u64))?;
    for k in 0..d {
        write_f64s(w, x.core(k))?;
    }
    Ok(())
}

/// Reads a TT vector written by [`write_ttvector`], validating shapes.
pub fn read_ttvector<R: Read>(r: &mut R) -> Result<TTVector> {
    let d = read_u64(r)? as usize;
    if d == 0 || d > 64 {
        return Err(Error::Format(format!("implausible TT order {d}")));
    }
    let dims = read_usize_list(r, d)?;
    let ranks = read_usize_list(r, d + 1)?;
    let mut cores = Vec::with_capacity(d);
    for k in 0..d {
        let len = ranks[k]
            .checked_mul(dims[k])
            .and_then(|v| v.checked_mul(ranks[k + 1]))
            .ok_or_else(|| Error::Format("core size overflow".into()))?;
        cores.push(read_f64s(r, len)?);
    }
    TTVector::from_cores(cores, dims, ranks)
}

/// Writes a TT-matrix in the cache format.
pub fn write_ttmatrix<W: Write>(w: &mut W, a: &TTMatrix) -> Result<()> {
    let d = a.order();
    write_u64s(w, [d as u64])?;
    write_u64s(w, a.row_dims().iter().map(|&v| v as u64))?;
    write_u64s(w, a.col_dims().iter().map(|&v| v as u64))?;
    write_u64s(w, a.ranks().iter().map(|&v| v as u64))?;
    for k in 0..d {
        write_f64s(w, a.core(k))?;
    }
    Ok(())
}

/// Reads a TT-matrix written by [`write_ttmatrix`].
pub fn read_ttmatrix<R: Read>(r: &mut R) -> Result<TTMatrix> {
    let d = read_u64(r)? as usize;
    if d == 0 || d > 64 {
        return Err(Error::Format(format!("implausible TT order {d}")));
    }
    let row_dims = read_usize_list(r, d)?;
    let col_dims = read_usize_list(r, d)?;
    let ranks = read_usize_list(r, d + 1)?;
    let mut cores = Vec::with_capacity(d);
    for k in 0..d {
        let fused = row_dims[k]
            .checked_mul(col_dims[k])
            .ok_or_else(|| Error::Format("mode size overflow".into()))?;
        let len = ranks[k]
            .checked_mul(fused)
            .and_then(|v| v.checked_mul(ranks[k + 1]))
            .ok_or_else(|| Error::Format("core size overflow".into()))?;
        cores.push(read_f64s(r, len)?);
    }
    let fused_dims: Vec<usize> = row_dims.iter().zip(&col_dims).map(|(m, n)| m * n).collect();
    let inner = TTVector::from_cores(cores, fused_dims, ranks)?;
    TTMatrix::from_fused(inner, row_dims, col_dims)
}
