//! Checkpoint format:
//!
//! ```text
//! GCPOCKPT1\n
//! <d>\n<layers>\n<vocab size>\n<vocab hash>\n<parameter count>\n
//! <parameter count little-endian f32 values>
//! ```
//!
//! Parameters follow the flat layout: token embedding, position
//! embedding, blocks in index order, final gain, output projection and
//! bias, each row-major. The context length is implied by the count.

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelShape, PolicyParams, Vocab};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "GCPOCKPT1";

pub fn write_checkpoint(params: &PolicyParams, mut w: impl Write) -> Result<()> {
    let s = params.shape();
    write!(
        w,
        "{CHECKPOINT_MAGIC}\n{}\n{}\n{}\n{}\n{}\n",
        s.d,
        s.layers,
        s.vocab_size,
        params.vocab().content_hash(),
        params.len()
    )?;
    let mut buf = Vec::with_capacity(params.len() * 4);
    for &v in &params.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn save_checkpoint(params: &PolicyParams, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(params, &mut f)?;
    f.flush()?;
    Ok(())
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn read_checkpoint(mut r: impl Read, vocab: &Vocab) -> Result<PolicyParams> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut at = 0;
    let mut line = |name: &str| -> Result<String> {
        let end = bytes[at..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| format_err(format!("truncated header before {name}")))?;
        let s = std::str::from_utf8(&bytes[at..at + end])
            .map_err(|_| format_err(format!("non-text header field {name}")))?
            .to_string();
        at += end + 1;
        Ok(s)
    };
    if line("magic")? != CHECKPOINT_MAGIC {
        return Err(format_err("bad magic, not a policy checkpoint"));
    }
    let mut num = |name: &str| -> Result<u64> {
        line(name)?
            .trim()
            .parse()
            .map_err(|_| format_err(format!("header field {name} is not a number")))
    };
    let d = num("d")? as usize;
    let layers = num("layers")? as usize;
    let vocab_size = num("vocab size")? as usize;
    let hash = num("vocab hash")?;
    let count = num("parameter count")? as usize;
    if vocab_size != vocab.len() || hash != vocab.content_hash() {
        return Err(format_err(format!(
            "vocab mismatch: file has size {vocab_size} hash {hash}, expected size {} hash {}",
            vocab.len(),
            vocab.content_hash()
        )));
    }
    let shape = ModelShape::with_param_count(d, layers, vocab_size, count).ok_or_else(|| {
        format_err(format!(
            "parameter count {count} inconsistent with d={d}, layers={layers}"
        ))
    })?;
    let body = &bytes[at..];
    if body.len() != count * 4 {
        return Err(format_err(format!(
            "expected {} bytes of parameters, found {}",
            count * 4,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    PolicyParams::from_values(shape, vocab, values)
}

pub fn load_checkpoint(path: impl AsRef<Path>, vocab: &Vocab) -> Result<PolicyParams> {
    read_checkpoint(std::fs::File::open(path)?, vocab)
}
