//! Tensor file formats.
//!
//! PTNS layout, all little-endian: magic `PTNS`, `u16` version (1), `u16`
//! rank, one `u32` per dimension, then the `f32` elements in row-major order.
//! Two-dimensional tensors may also be read and written as CSV, one row per
//! line.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PTNS_MAGIC: &[u8; 4] = b"PTNS";
pub const PTNS_VERSION: u16 = 1;

pub fn write_ptns<W: Write>(mut out: W, t: &Tensor) -> Result<()> {
    let rank = u16::try_from(t.ndim()).map_err(|_| Error::invalid("tensor rank exceeds u16"))?;
    let mut buf = Vec::with_capacity(8 + 4 * t.ndim() + 4 * t.len());
    buf.extend_from_slice(PTNS_MAGIC);
    buf.extend_from_slice(&PTNS_VERSION.to_le_bytes());
    buf.extend_from_slice(&rank.to_le_bytes());
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| Error::invalid(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_ptns<R: Read>(mut input: R) -> Result<Tensor> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode_ptns(&bytes)
}

pub fn decode_ptns(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(Error::Format("truncated PTNS data".into()));
        }
        let (head, rest) = cur.split_at(n);
        cur = rest;
        Ok(head)
    };
    if take(4)? != PTNS_MAGIC {
        return Err(Error::Format("missing PTNS magic".into()));
    }
    let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
    if version != PTNS_VERSION {
        return Err(Error::Format(format!("unsupported PTNS version {version}")));
    }
    let rank = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
    let dims = (0..rank)
        .map(|_| Ok(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize))
        .collect::<Result<Vec<_>>>()?;
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("PTNS dimensions overflow".into()))?;
    let body = take(
        len.checked_mul(4)
            .ok_or_else(|| Error::Format("PTNS size overflow".into()))?,
    )?;
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if !cur.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after PTNS data", cur.len())));
    }
    Tensor::from_vec(&dims, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn parse_csv_2d(text: &str) -> Result<Tensor> {
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f32>()
                    .map_err(|e| Error::Format(format!("line {}: '{}': {e}", n + 1, f.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!(
                    "line {}: expected {} columns, got {}",
                    n + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    let cols = rows
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Format("empty CSV".into()))?;
    let n = rows.len();
    Tensor::from_vec(&[n, cols], rows.into_iter().flatten().collect())
}

pub fn format_csv_2d(t: &Tensor) -> Result<String> {
    let [_, cols] = *t.dims() else {
        return Err(Error::invalid(format!(
            "CSV needs a 2-D tensor, got dims {:?}",
            t.dims()
        )));
    };
    let mut out = String::new();
    for row in t.data().chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Loads a tensor, choosing CSV for `.csv` files and PTNS otherwise.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    if is_csv(path) {
        parse_csv_2d(&fs::read_to_string(path)?)
    } else {
        decode_ptns(&fs::read(path)?)
    }
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        fs::write(path, format_csv_2d(t)?)?;
    } else {
        let mut buf = Vec::new();
        write_ptns(&mut buf, t)?;
        fs::write(path, buf)?;
    }
    Ok(())
}
