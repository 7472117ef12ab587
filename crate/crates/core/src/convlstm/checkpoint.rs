//! `.clm` checkpoints: magic `CLM1`, then `u32` landmarks, hidden channels and
//! kernel size, then every parameter as little-endian `f64` in the order
//! documented on [`ConvLstmModel`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{param_count, ConvLstmModel, ModelConfig};
use crate::error::{Error, Result};

pub const CLM_MAGIC: &[u8; 4] = b"CLM1";

fn format_err(message: impl Into<String>) -> Error {
    Error::Format {
        format: "clm",
        message: message.into(),
    }
}

pub fn write_checkpoint<W: Write>(mut out: W, model: &ConvLstmModel) -> Result<()> {
    out.write_all(CLM_MAGIC)?;
    for dim in [model.input_channels(), model.hidden_channels(), model.kernel_size()] {
        out.write_all(&(dim as u32).to_le_bytes())?;
    }
    for p in model.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ConvLstmModel> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| format_err("truncated header"))?;
    if &magic != CLM_MAGIC {
        return Err(format_err("bad magic"));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let mut buf = [0u8; 4];
        input.read_exact(&mut buf).map_err(|_| format_err("truncated header"))?;
        *d = u32::from_le_bytes(buf) as usize;
    }
    let config = ModelConfig {
        hidden_channels: dims[1],
        kernel_size: dims[2],
    };
    config.validate()?;
    let expected = param_count(dims[0], config);
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != expected * 8 {
        return Err(format_err(format!(
            "expected {} parameter bytes, found {}",
            expected * 8,
            bytes.len()
        )));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ConvLstmModel::from_params(dims[0], config, params)
}

pub fn save(path: &Path, model: &ConvLstmModel) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), model)
}

pub fn load(path: &Path) -> Result<ConvLstmModel> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
