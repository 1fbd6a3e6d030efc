//! Versioned binary snapshot encoding shared by all stage artifacts.
//!
//! Every snapshot starts with a four-byte magic tag, a format version, and a
//! free-form provenance string (the pipeline stores the experiment config
//! hash there so stale artifacts can be detected). All integers are
//! little-endian.

use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: [u8; 4] },
    #[error("unsupported snapshot version {found} (expected {expected})")]
    BadVersion { expected: u32, found: u32 },
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
}

pub fn write_header<W: Write>(
    w: &mut W,
    magic: &[u8; 4],
    version: u32,
    provenance: &str,
) -> Result<(), SnapshotError> {
    w.write_all(magic)?;
    write_u32(w, version)?;
    write_str(w, provenance)?;
    Ok(())
}

/// Checks magic and version, returns the provenance string.
pub fn read_header<R: Read>(
    r: &mut R,
    magic: &[u8; 4],
    version: u32,
) -> Result<String, SnapshotError> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found)?;
    if &found != magic {
        return Err(SnapshotError::BadMagic { expected: *magic });
    }
    let v = read_u32(r)?;
    if v != version {
        return Err(SnapshotError::BadVersion {
            expected: version,
            found: v,
        });
    }
    read_str(r)
}

pub fn write_u8<W: Write>(w: &mut W, x: u8) -> Result<(), SnapshotError> {
    Ok(w.write_all(&[x])?)
}

pub fn read_u8<R: Read>(r: &mut R) -> Result<u8, SnapshotError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub fn write_u32<W: Write>(w: &mut W, x: u32) -> Result<(), SnapshotError> {
    Ok(w.write_all(&x.to_le_bytes())?)
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32, SnapshotError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_u64<W: Write>(w: &mut W, x: u64) -> Result<(), SnapshotError> {
    Ok(w.write_all(&x.to_le_bytes())?)
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64, SnapshotError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_f64<W: Write>(w: &mut W, x: f64) -> Result<(), SnapshotError> {
    Ok(w.write_all(&x.to_le_bytes())?)
}

pub fn read_f64<R: Read>(r: &mut R) -> Result<f64, SnapshotError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_str<W: Write>(w: &mut W, s: &str) -> Result<(), SnapshotError> {
    write_u32(w, s.len() as u32)?;
    Ok(w.write_all(s.as_bytes())?)
}

pub fn read_str<R: Read>(r: &mut R) -> Result<String, SnapshotError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 28 {
        return Err(SnapshotError::Corrupt(format!("string length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| SnapshotError::Corrupt("non-utf8 string".into()))
}

pub fn write_f64_slice<W: Write>(w: &mut W, xs: &[f64]) -> Result<(), SnapshotError> {
    write_u64(w, xs.len() as u64)?;
    for &x in xs {
        write_f64(w, x)?;
    }
    Ok(())
}

pub fn read_f64_vec<R: Read>(r: &mut R) -> Result<Vec<f64>, SnapshotError> {
    let len = read_u64(r)? as usize;
    if len > 1 << 32 {
        return Err(SnapshotError::Corrupt(format!("vector length {len}")));
    }
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
    fn header_round_trip() {
        let mut buf = Vec::new();
        write_header(&mut buf, b"TEST", 3, "cfg:abc").unwrap();
        let got = read_header(&mut Cursor::new(&buf), b"TEST", 3).unwrap();
        assert_eq!(got, "cfg:abc");
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut buf = Vec::new();
        write_header(&mut buf, b"AAAA", 1, "").unwrap();
        assert!(matches!(
            read_header(&mut Cursor::new(&buf), b"BBBB", 1),
            Err(SnapshotError::BadMagic { .. })
        ));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut buf = Vec::new();
        write_header(&mut buf, b"AAAA", 2, "").unwrap();
        assert!(matches!(
            read_header(&mut Cursor::new(&buf), b"AAAA", 1),
            Err(SnapshotError::BadVersion { .. })
        ));
    }

    #[test]
    fn scalars_round_trip() {
        let mut buf = Vec::new();
        write_u32(&mut buf, 7).unwrap();
        write_u64(&mut buf, u64::MAX).unwrap();
        write_f64(&mut buf, -0.5).unwrap();
        write_str(&mut buf, "häßlich").unwrap();
        write_f64_slice(&mut buf, &[1.0, f64::NAN]).unwrap();
        let mut c = Cursor::new(&buf);
        assert_eq!(read_u32(&mut c).unwrap(), 7);
        assert_eq!(read_u64(&mut c).unwrap(), u64::MAX);
        assert_eq!(read_f64(&mut c).unwrap(), -0.5);
        assert_eq!(read_str(&mut c).unwrap(), "häßlich");
        let v = read_f64_vec(&mut c).unwrap();
        assert_eq!(v[0], 1.0);
        assert!(v[1].is_nan());
    }
}
