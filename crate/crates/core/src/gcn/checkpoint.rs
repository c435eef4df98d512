//! Model checkpoints: one line of JSON header, then the raw little-endian
//! `f64` payload of W0 followed by W1, both row-major.

use std::io::{BufRead, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{GcnModel, TrainConfig, TrainError};

const FORMAT: &str = "good-gcn/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub seed: u64,
    pub config: TrainConfig,
}

pub fn write_checkpoint<W: Write>(
    mut out: W,
    model: &GcnModel,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    let header = CheckpointHeader {
        format: FORMAT.to_string(),
        feature_dim: model.feature_dim(),
        hidden_dim: model.hidden_dim(),
        out_dim: model.out_dim(),
        seed: config.seed,
        config: config.clone(),
    };
    let io = |e: std::io::Error| TrainError::Checkpoint(e.to_string());
    let line = serde_json::to_string(&header).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    out.write_all(line.as_bytes()).map_err(io)?;
    out.write_all(b"\n").map_err(io)?;
    for v in model.w0.iter().chain(model.w1.iter()) {
        out.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<(CheckpointHeader, GcnModel), TrainError> {
    let err = |m: String| TrainError::Checkpoint(m);
    let mut line = String::new();
    input.read_line(&mut line).map_err(|e| err(e.to_string()))?;
    let header: CheckpointHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| err(format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(err(format!("unsupported format `{}`", header.format)));
    }
    let mut read_matrix = |rows: usize, cols: usize| -> Result<Array2<f64>, TrainError> {
        let mut buf = vec![0u8; rows * cols * 8];
        input
            .read_exact(&mut buf)
            .map_err(|e| err(format!("truncated payload: {e}")))?;
        let vals = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Array2::from_shape_vec((rows, cols), vals).map_err(|e| err(e.to_string()))
    };
    let w0 = read_matrix(header.feature_dim, header.hidden_dim)?;
    let w1 = read_matrix(header.hidden_dim, header.out_dim)?;
    let mut rest = Vec::new();
    input.read_to_end(&mut rest).map_err(|e| err(e.to_string()))?;
    if !rest.is_empty() {
        return Err(err(format!("{} trailing bytes", rest.len())));
    }
    Ok((header, GcnModel { w0, w1 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = GcnModel::glorot(7, 4, 3, &mut rng);
        model.w0[[0, 0]] = -0.0;
        model.w1[[1, 2]] = f64::MIN_POSITIVE / 3.0;
        let cfg = TrainConfig {
            seed: 99,
            ..TrainConfig::default()
        };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model, &cfg).unwrap();
        let (header, back) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(header.seed, 99);
        assert_eq!(header.config, cfg);
        let bits = |m: &GcnModel| -> Vec<u64> { m.w0.iter().chain(m.w1.iter()).map(|v| v.to_bits()).collect() };
        assert_eq!(bits(&model), bits(&back));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let model = GcnModel::zeros(2, 2, 2);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model, &TrainConfig::default()).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(TrainError::Checkpoint(_))));
    }
}
