//! Named-array checkpoint container.
//!
//! A file is a sequence of records read until end of input. Each record is
//!
//! ```text
//! u32 LE   name length in bytes
//! [u8]     UTF-8 name
//! u32 LE   rank
//! u32 LE   extent, repeated `rank` times
//! f64 LE   values, row-major, product(extents) of them
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedArrays {
    entries: Vec<(String, Tensor)>,
}

impl NamedArrays {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = t,
            None => self.entries.push((name, t)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("missing array `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_arrays_to(&mut out, self).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        read_arrays_from(&mut &bytes[..])
    }
}

impl FromIterator<(String, Tensor)> for NamedArrays {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        let mut out = Self::new();
        for (n, t) in iter {
            out.insert(n, t);
        }
        out
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))
}

pub fn write_arrays_to<W: Write>(w: &mut W, arrays: &NamedArrays) -> Result<()> {
    for (name, t) in arrays.iter() {
        w.write_all(&u32_of(name.len(), "name length")?.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&u32_of(t.rank(), "rank")?.to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&u32_of(d, "extent")?.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_arrays_from<R: Read>(r: &mut R) -> Result<NamedArrays> {
    let mut out = NamedArrays::new();
    loop {
        let mut first = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            let n = r.read(&mut first[got..])?;
            if n == 0 {
                break;
            }
            got += n;
        }
        if got == 0 {
            return Ok(out);
        }
        if got < 4 {
            return Err(Error::Format("truncated record".into()));
        }
        let name_len = u32::from_le_bytes(first) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Format(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let rank = read_u32(r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)
            .map_err(|e| Error::Format(format!("truncated data for `{name}`: {e}")))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let t = Tensor::from_vec(shape, data).map_err(|e| Error::Format(format!("`{name}`: {e}")))?;
        out.insert(name, t);
    }
}

pub fn write_arrays(path: impl AsRef<Path>, arrays: &NamedArrays) -> Result<()> {
    fs::write(path, arrays.to_bytes())?;
    Ok(())
}

pub fn read_arrays(path: impl AsRef<Path>) -> Result<NamedArrays> {
    let bytes = fs::read(path)?;
    NamedArrays::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout() {
        let mut a = NamedArrays::new();
        a.insert("w", Tensor::from_vec(vec![1, 2], vec![1.0, -2.0]).unwrap());
        let b = a.to_bytes();
        let mut expect = Vec::new();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.push(b'w');
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1.0f64.to_le_bytes());
        expect.extend_from_slice(&(-2.0f64).to_le_bytes());
        assert_eq!(b, expect);
    }

    #[test]
    fn truncated_input_rejected() {
        let mut a = NamedArrays::new();
        a.insert("x", Tensor::zeros(&[3]));
        let b = a.to_bytes();
        assert!(NamedArrays::from_bytes(&b[..b.len() - 1]).is_err());
        assert!(NamedArrays::from_bytes(&b[..2]).is_err());
        assert!(NamedArrays::from_bytes(&[]).unwrap().is_empty());
    }
}
