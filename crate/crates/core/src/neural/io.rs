//! Binary model files: magic `SCNM`, version, config, then named tensors of
//! little-endian f64.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{NeuralConfig, NeuralParams};
use crate::corpus::ExampleMode;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SCNM";
const VERSION: u32 = 1;

fn err(msg: impl Into<String>) -> Error {
    Error::ModelFile(msg.into())
}

impl NeuralParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.config();
        let mut out = Vec::with_capacity(64 + self.as_flat().len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let ints = [
            c.vocab_size,
            c.embed_dim,
            c.hidden_dim,
            c.time_dim,
            c.dow_dim,
            c.month_dim,
            c.locale_dim,
            match c.mode {
                ExampleMode::LmA => 0,
                ExampleMode::LmB => 1,
            },
        ];
        for x in ints {
            out.extend_from_slice(&(x as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.label_smoothing.to_le_bytes());
        out.extend_from_slice(&c.max_grad_sigma.to_le_bytes());
        out.extend_from_slice(&(self.layout().tensors().len() as u32).to_le_bytes());
        for t in self.layout().tensors() {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            let vals = &self.as_flat()[t.range()];
            out.extend_from_slice(&(vals.len() as u64).to_le_bytes());
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(err("bad magic (not a model file)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let mut ints = [0usize; 8];
        for x in &mut ints {
            *x = r.u32()? as usize;
        }
        let mode = match ints[7] {
            0 => ExampleMode::LmA,
            1 => ExampleMode::LmB,
            m => return Err(err(format!("unknown mode {m}"))),
        };
        let cfg = NeuralConfig {
            vocab_size: ints[0],
            embed_dim: ints[1],
            hidden_dim: ints[2],
            time_dim: ints[3],
            dow_dim: ints[4],
            month_dim: ints[5],
            locale_dim: ints[6],
            mode,
            label_smoothing: r.f64()?,
            max_grad_sigma: r.f64()?,
        };
        let template = NeuralParams::zeros(cfg.clone()).map_err(|e| err(e.to_string()))?;
        let layout = template.layout().clone();

        // validate the total length before reading any tensor
        let names: usize = layout.tensors().iter().map(|t| 4 + t.name.len() + 8).sum();
        let expected = r.pos + 4 + names + 8 * layout.total();
        if bytes.len() != expected {
            return Err(err(format!(
                "expected {expected} bytes for this configuration, found {}",
                bytes.len()
            )));
        }
        let count = r.u32()? as usize;
        if count != layout.tensors().len() {
            return Err(err(format!("expected {} tensors, found {count}", layout.tensors().len())));
        }
        let mut data = Vec::with_capacity(layout.total());
        for t in layout.tensors() {
            let n = r.u32()? as usize;
            let name = r.take(n)?;
            if name != t.name.as_bytes() {
                return Err(err(format!(
                    "expected tensor `{}`, found `{}`",
                    t.name,
                    String::from_utf8_lossy(name)
                )));
            }
            let len = r.u64()? as usize;
            if len != t.rows * t.cols {
                return Err(err(format!("tensor `{}`: expected {} values, found {len}", t.name, t.rows * t.cols)));
            }
            for _ in 0..len {
                data.push(r.f64()?);
            }
        }
        NeuralParams::from_flat(cfg, data).map_err(|e| err(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| err("file truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
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
