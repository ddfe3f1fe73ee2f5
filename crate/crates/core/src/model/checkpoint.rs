//! Checkpoint files.
//!
//! ```text
//! magic    8 bytes   "NXKTCKPT"
//! version  u32 LE
//! hlen     u32 LE    length of the JSON header
//! header   hlen bytes: {"config": .., "lineage": [..], "tensors": [{"name", "shape"}, ..]}
//! data     f32 LE, tensors concatenated in header order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, Layout, ModelParams, StageRecord};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NXKTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    lineage: Vec<StageRecord>,
    tensors: Vec<TensorEntry>,
}

fn io_err(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn write_checkpoint(params: &ModelParams, mut out: impl Write) -> Result<()> {
    let header = Header {
        config: params.config.clone(),
        lineage: params.lineage.clone(),
        tensors: params
            .layout
            .tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
    out.write_all(&(json.len() as u32).to_le_bytes()).map_err(io_err)?;
    out.write_all(&json).map_err(io_err)?;
    let mut data = Vec::with_capacity(params.values.len() * 4);
    for v in &params.values {
        data.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.write_all(&data).map_err(io_err)
}

pub fn read_checkpoint(mut input: impl Read) -> Result<ModelParams> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word).map_err(io_err)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    input.read_exact(&mut word).map_err(io_err)?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    input.read_exact(&mut json).map_err(io_err)?;
    let header: Header = serde_json::from_slice(&json)?;
    header.config.validate()?;
    let layout = Layout::new(&header.config);
    if header.tensors.len() != layout.tensors.len()
        || header
            .tensors
            .iter()
            .zip(&layout.tensors)
            .any(|(a, b)| a.name != b.name || a.shape != b.shape)
    {
        return Err(Error::Checkpoint(
            "tensor table does not match the encoder config".into(),
        ));
    }
    let mut data = Vec::new();
    input.read_to_end(&mut data).map_err(io_err)?;
    if data.len() != layout.total * 4 {
        return Err(Error::Checkpoint(format!(
            "expected {} bytes of tensor data, found {}",
            layout.total * 4,
            data.len()
        )));
    }
    let values = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(ModelParams {
        config: header.config,
        layout,
        values,
        lineage: header.lineage,
    })
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(params, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, CheckpointStage, Preset};

    #[test]
    fn round_trip_at_f32_precision() {
        let mut p = init_params(&Preset::Tiny.config(30, 8), 5).unwrap();
        p.push_stage(StageRecord {
            stage: CheckpointStage::ThetaK,
            config_hash: "abc".into(),
            seed: 5,
        })
        .unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.config, p.config);
        assert_eq!(back.lineage, p.lineage);
        for (a, b) in back.values.iter().zip(&p.values) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn rejects_corruption() {
        let p = init_params(&Preset::Tiny.config(30, 8), 5).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..]).is_err());
        buf.truncate(buf.len() - 4);
        assert!(read_checkpoint(&buf[..]).is_err());
    }
}
