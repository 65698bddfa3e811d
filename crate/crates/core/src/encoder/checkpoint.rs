//! Encoder checkpoint persistence.
//!
//! Format (all little-endian): the 6-byte magic `qrenc1`; the config as
//! seven u32 fields (vocab_size, d_emb, d_hid, n_heads, d_head, d_out,
//! max_len), one f64 (dropout_rate) and one u64 (seed); a u64 parameter
//! count; then every parameter as f64 in the flat [`Layout`](super::Layout)
//! order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{EncoderConfig, EncoderParams, Layout};
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"qrenc1";

pub fn save_checkpoint(params: &EncoderParams, path: &Path) -> Result<()> {
    let cfg = params.cfg();
    let mut buf = Vec::with_capacity(MAGIC.len() + 8 * (params.n_params() + 10));
    buf.extend_from_slice(MAGIC);
    for v in [
        cfg.vocab_size,
        cfg.d_emb,
        cfg.d_hid,
        cfg.n_heads,
        cfg.d_head,
        cfg.d_out,
        cfg.max_len,
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&cfg.dropout_rate.to_le_bytes());
    buf.extend_from_slice(&cfg.seed.to_le_bytes());
    buf.extend_from_slice(&(params.n_params() as u64).to_le_bytes());
    for &v in params.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    // atomic write: temp file in the same directory, then rename
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    at: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.data.len() {
            return Err(Error::Corrupt(format!(
                "{}: truncated at byte {}",
                self.path, self.at
            )));
        }
        let s = &self.data[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(EncoderParams, EncoderConfig)> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    let mut r = Reader {
        data: &data,
        at: 0,
        path: path.display().to_string(),
    };
    let magic = r.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(Error::VersionMismatch {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let cfg = EncoderConfig {
        vocab_size: r.u32()? as usize,
        d_emb: r.u32()? as usize,
        d_hid: r.u32()? as usize,
        n_heads: r.u32()? as usize,
        d_head: r.u32()? as usize,
        d_out: r.u32()? as usize,
        max_len: r.u32()? as usize,
        dropout_rate: r.f64()?,
        seed: r.u64()?,
    };
    cfg.validate()
        .map_err(|e| Error::Corrupt(format!("{}: bad config in checkpoint: {e}", path.display())))?;
    let n = r.u64()? as usize;
    let expected = Layout::new(&cfg).total;
    if n != expected {
        return Err(Error::Corrupt(format!(
            "{}: checkpoint declares {n} parameters, config needs {expected}",
            path.display()
        )));
    }
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(r.f64()?);
    }
    if r.at != data.len() {
        return Err(Error::Corrupt(format!(
            "{}: {} trailing bytes",
            path.display(),
            data.len() - r.at
        )));
    }
    let params = EncoderParams::from_flat(cfg, values)?;
    Ok((params, cfg))
}
