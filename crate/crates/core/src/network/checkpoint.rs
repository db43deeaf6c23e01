//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "CLENETCK"
//! version  u32
//! arch     8 × u32 (patch, conv1 filters/kernel, conv2 filters/kernel,
//!          pool window, pool stride, conv stride), u8 mode
//! adam t   u64
//! count    u64      number of parameters
//! params   count × f64, canonical order
//! m, v     count × f64 each
//! crc32    u32      over every preceding byte
//! ```

use std::path::Path;

use super::{AdamState, Architecture, Mode, NetworkParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CLENETCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 * 4 + 1 + 8 + 8;

pub fn encode_checkpoint(p: &NetworkParams) -> Vec<u8> {
    let a = p.arch();
    let count = p.param_count();
    let mut buf = Vec::with_capacity(HEADER_LEN + 24 * count + 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        a.patch,
        a.conv1_filters,
        a.conv1_kernel,
        a.conv2_filters,
        a.conv2_kernel,
        a.pool_window,
        a.pool_stride,
        a.conv_stride,
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.push(match a.mode {
        Mode::Baseline => 0,
        Mode::Enhanced => 1,
    });
    buf.extend_from_slice(&p.adam.t.to_le_bytes());
    buf.extend_from_slice(&(count as u64).to_le_bytes());
    for s in p.slices() {
        for v in s {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in p.adam.m.iter().chain(&p.adam.v) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::CheckpointFormat("unexpected end of data".into()))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice of length N"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.take()?))).collect()
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NetworkParams> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::CheckpointMagic);
    }
    if bytes.len() < 12 {
        return Err(Error::CheckpointChecksum);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::CheckpointChecksum);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::CheckpointChecksum);
    }
    let mut r = Reader { buf: body, pos: 12 };
    let mut dims = [0usize; 8];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let mode = match r.take::<1>()?[0] {
        0 => Mode::Baseline,
        1 => Mode::Enhanced,
        m => return Err(Error::CheckpointFormat(format!("unknown mode tag {m}"))),
    };
    let arch = Architecture {
        patch: dims[0],
        conv1_filters: dims[1],
        conv1_kernel: dims[2],
        conv2_filters: dims[3],
        conv2_kernel: dims[4],
        pool_window: dims[5],
        pool_stride: dims[6],
        conv_stride: dims[7],
        mode,
    };
    arch.validate()
        .map_err(|e| Error::CheckpointFormat(format!("architecture descriptor rejected: {e}")))?;
    let t = r.u64()?;
    let count = r.u64()? as usize;
    let mut template = NetworkParams::new(arch, 0)?;
    if count != template.param_count() {
        return Err(Error::CheckpointFormat(format!(
            "{count} parameters stored, architecture needs {}",
            template.param_count()
        )));
    }
    if body.len() != r.pos + 24 * count {
        return Err(Error::CheckpointFormat("trailing or missing data".into()));
    }
    let values = r.f64s(count)?;
    template.set_flat(&values)?;
    let m = r.f64s(count)?;
    let v = r.f64s(count)?;
    template.adam = AdamState { t, m, v };
    Ok(template)
}

pub fn save_checkpoint(p: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(p)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NetworkParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
