//! Code file format "FHC1": N packed hash codes of uniform bit length with
//! an optional label block and a CRC32 trailer.
//!
//! Layout: magic(4) version(2) code_bits(u32) n(u64) has_labels(u8), then
//! `n * ceil(code_bits/8)` code bytes in the standard packing, then the
//! optional `n * u32` labels, then CRC32. Header is 19 bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::hashcore::{BitVec, HashCode};
use crate::io::binfmt::{check_version, ByteReader, ByteWriter, FORMAT_VERSION};

const MAGIC: &[u8; 4] = b"FHC1";

pub fn codes_to_bytes(codes: &[HashCode], labels: Option<&[u32]>) -> Result<Vec<u8>> {
    let code_bits = codes.first().map_or(0, |c| c.len());
    if codes.iter().any(|c| c.len() != code_bits) {
        return Err(Error::validation(
            "all codes in a file must share one length".to_string(),
        ));
    }
    if let Some(l) = labels {
        if l.len() != codes.len() {
            return Err(Error::validation(format!(
                "{} labels for {} codes",
                l.len(),
                codes.len()
            )));
        }
    }
    let mut w = ByteWriter::new();
    w.raw(MAGIC);
    w.u16(FORMAT_VERSION);
    w.u32(code_bits as u32);
    w.u64(codes.len() as u64);
    w.u8(u8::from(labels.is_some()));
    for c in codes {
        w.raw(&c.bits().to_bytes());
    }
    if let Some(l) = labels {
        for &v in l {
            w.u32(v);
        }
    }
    Ok(w.finish())
}

pub fn codes_from_bytes(buf: &[u8]) -> Result<(Vec<HashCode>, Option<Vec<u32>>)> {
    let payload = crate::io::binfmt::strip_crc(buf)?;
    let mut r = ByteReader::new(payload);
    r.expect_magic(MAGIC)?;
    check_version(r.u16("version")?)?;
    let code_bits = r.u32("code length")? as usize;
    let n = r.u64("record count")? as usize;
    let has_labels = match r.u8("label flag")? {
        0 => false,
        1 => true,
        other => {
            return Err(Error::format(
                r.pos() - 1,
                format!("bad label flag {other}"),
            ))
        }
    };
    let bytes_per = code_bits.div_ceil(8);
    let mut codes = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.pos();
        let raw = r.bytes(bytes_per, "code record")?;
        let bits = BitVec::from_bytes(raw, code_bits)
            .map_err(|e| Error::format(at, format!("bad code record: {e}")))?;
        codes.push(HashCode::from_bits(bits));
    }
    let labels = if has_labels {
        let mut l = Vec::with_capacity(n);
        for _ in 0..n {
            l.push(r.u32("label")?);
        }
        Some(l)
    } else {
        None
    };
    r.expect_eof()?;
    Ok((codes, labels))
}

pub fn save_codes(codes: &[HashCode], labels: Option<&[u32]>, path: &Path) -> Result<()> {
    std::fs::write(path, codes_to_bytes(codes, labels)?)?;
    Ok(())
}

pub fn load_codes(path: &Path) -> Result<(Vec<HashCode>, Option<Vec<u32>>)> {
    let buf = std::fs::read(path)?;
    codes_from_bytes(&buf)
}
