//! Binary checkpoint format.
//!
//! ```text
//! "NFLD"                      4 bytes
//! version                     u32 LE (currently 1)
//! descriptor length           u32 LE
//! descriptor                  UTF-8 architecture text (ArchSpec Display form)
//! parameter count             u64 LE
//! values                      f64 LE × count
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ArchSpec, ModelError, ParamVector, Result};

const MAGIC: &[u8; 4] = b"NFLD";
const VERSION: u32 = 1;

pub fn encode_checkpoint(arch: &ArchSpec, params: &ParamVector) -> Vec<u8> {
    let desc = arch.to_string();
    let mut out = Vec::with_capacity(20 + desc.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(desc.as_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<(ArchSpec, ParamVector)> {
    let bad = |m: &str| ModelError::BadCheckpoint(m.to_string());
    let mut take = |n: usize| -> Result<&[u8]> {
        if bytes.len() < n {
            return Err(bad("truncated"));
        }
        let (head, tail) = bytes.split_at(n);
        bytes = tail;
        Ok(head)
    };
    if take(4)? != MAGIC {
        return Err(bad("missing NFLD magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(ModelError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let desc_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let desc = std::str::from_utf8(take(desc_len)?).map_err(|_| bad("descriptor not UTF-8"))?;
    let arch: ArchSpec = desc.parse()?;
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    if count != arch.param_count() {
        return Err(ModelError::ParamCount { expected: arch.param_count(), got: count });
    }
    let raw = take(count.checked_mul(8).ok_or_else(|| bad("count overflow"))?)?;
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((arch, ParamVector::from_values(&arch, values)?))
}

/// Write via a temporary file and rename.
pub fn write_checkpoint(path: impl AsRef<Path>, arch: &ArchSpec, params: &ParamVector) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("nfld.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&encode_checkpoint(arch, params))?;
        f.sync_all()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(ArchSpec, ParamVector)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, HashConfig};

    #[test]
    fn header_layout() {
        let arch = ArchSpec::siren(0, 1);
        let p = init_params(&arch, 0);
        let bytes = encode_checkpoint(&arch, &p);
        assert_eq!(&bytes[..4], b"NFLD");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(&bytes[12..12 + n], arch.to_string().as_bytes());
        assert_eq!(bytes.len(), 12 + n + 8 + 8 * p.len());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let arch = ArchSpec::HashMlp(HashConfig { table_log2: 6, levels: 2, ..HashConfig::default() });
        let p = init_params(&arch, 7);
        let (a2, p2) = decode_checkpoint(&encode_checkpoint(&arch, &p)).unwrap();
        assert_eq!(a2, arch);
        assert_eq!(p2, p);
    }

    #[test]
    fn rejects_corruption() {
        let arch = ArchSpec::siren(0, 2);
        let bytes = encode_checkpoint(&arch, &init_params(&arch, 0));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_checkpoint(&wrong).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(decode_checkpoint(&version).is_err());
    }
}
