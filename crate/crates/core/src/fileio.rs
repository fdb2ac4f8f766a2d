//! Little-endian binary readers and writers shared by the on-disk formats.
//!
//! Every artifact starts with an ASCII magic string so a mismatched file is
//! rejected up front instead of being misparsed.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const CORPUS_MAGIC: &str = "CTXSIM-CORPUS-v1";
pub const INDEX_MAGIC: &str = "CTXSIM-INDEX-v1";
pub const COHERENCE_MAGIC: &str = "CTXSIM-COH-v1";
pub const LM_MAGIC: &str = "CTXSIM-LM-v1";
pub const SURROGATE_MAGIC: &str = "CTXSIM-SUR-v1";
pub const EMBEDDING_MAGIC: &str = "CTXSIM-EMB-v1";

pub fn write_magic<W: Write>(w: &mut W, magic: &str) -> Result<()> {
    w.write_all(magic.as_bytes())?;
    Ok(())
}

pub fn check_magic<R: Read>(r: &mut R, magic: &'static str, path: &Path) -> Result<()> {
    let mut buf = vec![0u8; magic.len()];
    r.read_exact(&mut buf)
        .map_err(|_| Error::BadMagic { path: path.display().to_string(), expected: magic })?;
    if buf != magic.as_bytes() {
        return Err(Error::BadMagic { path: path.display().to_string(), expected: magic });
    }
    Ok(())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_u32::<LittleEndian>(v)?;
    Ok(())
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_u64::<LittleEndian>(v)?;
    Ok(())
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_f64::<LittleEndian>(v)?;
    Ok(())
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(r.read_u32::<LittleEndian>()?)
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(r.read_u64::<LittleEndian>()?)
}

pub fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(r.read_f64::<LittleEndian>()?)
}

pub fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(format!("invalid utf-8 in string field: {e}")))
}

pub fn write_u32_slice<W: Write>(w: &mut W, v: &[u32]) -> Result<()> {
    write_u32(w, v.len() as u32)?;
    for &x in v {
        write_u32(w, x)?;
    }
    Ok(())
}

pub fn read_u32_vec<R: Read>(r: &mut R) -> Result<Vec<u32>> {
    let len = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(read_u32(r)?);
    }
    Ok(out)
}

pub fn write_f64_slice<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    write_u32(w, v.len() as u32)?;
    for &x in v {
        write_f64(w, x)?;
    }
    Ok(())
}

pub fn read_f64_vec<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let len = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(read_f64(r)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn scalar_round_trip() {
        let mut buf = Vec::new();
        write_u32(&mut buf, 7).unwrap();
        write_u64(&mut buf, u64::MAX - 1).unwrap();
        write_f64(&mut buf, -0.125).unwrap();
        write_str(&mut buf, "alpha").unwrap();
        let mut r = Cursor::new(buf);
        assert_eq!(read_u32(&mut r).unwrap(), 7);
        assert_eq!(read_u64(&mut r).unwrap(), u64::MAX - 1);
        assert_eq!(read_f64(&mut r).unwrap(), -0.125);
        assert_eq!(read_str(&mut r).unwrap(), "alpha");
    }

    #[test]
    fn magic_mismatch_is_rejected() {
        let mut buf = Vec::new();
        write_magic(&mut buf, INDEX_MAGIC).unwrap();
        let mut r = Cursor::new(buf);
        let err = check_magic(&mut r, CORPUS_MAGIC, Path::new("x.bin")).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
    }
}
