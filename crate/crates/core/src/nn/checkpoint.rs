//! Checkpoint file: `u64` little-endian header length, a JSON header, then
//! every parameter as raw little-endian `f32` in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Network, Node, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "gzipt-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub nodes: Vec<Node>,
    pub param_shapes: Vec<Vec<usize>>,
    pub seed: u64,
    pub step: u64,
    /// Free-form provenance: model config, config hash, loss weights.
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub network: Network<f32>,
}

impl Checkpoint {
    pub fn new(network: Network<f32>, seed: u64, step: u64, meta: serde_json::Value) -> Self {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.to_string(),
            nodes: network.nodes.clone(),
            param_shapes: network.params_iter().map(|p| p.shape.clone()).collect(),
            seed,
            step,
            meta,
        };
        Self { header, network }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + header.len() + 4 * self.network.n_params());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in self.network.params_iter() {
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 8 {
            return Err(bad("truncated length prefix".into()));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let body = bytes
            .get(8..8 + hlen)
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unknown format '{}'", header.format)));
        }
        let mut network = Network::<f32>::new(header.nodes.clone(), 0)?;
        let shapes: Vec<Vec<usize>> = network.params_iter().map(|p| p.shape.clone()).collect();
        if shapes != header.param_shapes {
            return Err(bad("parameter shapes disagree with layer specs".into()));
        }
        let mut payload = bytes[8 + hlen..].chunks_exact(4);
        let expected = network.n_params();
        if bytes.len() - 8 - hlen != 4 * expected {
            return Err(bad(format!(
                "payload holds {} bytes, expected {}",
                bytes.len() - 8 - hlen,
                4 * expected
            )));
        }
        for p in network.params_iter_mut() {
            for v in p.data.iter_mut() {
                *v = f32::from_le_bytes(payload.next().unwrap().try_into().unwrap());
            }
        }
        Ok(Self { header, network })
    }

    pub fn param(&self, node: usize, which: usize) -> Option<&Tensor<f32>> {
        self.network.params.get(node)?.get(which)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn net() -> Network<f32> {
        Network::sequential(
            vec![
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 2,
                    kernel: [3, 5],
                },
                LayerSpec::Relu,
                LayerSpec::Linear {
                    in_features: 8,
                    out_features: 1,
                },
            ],
            17,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = Checkpoint::new(net(), 17, 42, serde_json::json!({"beta": 1.94}));
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 8 + hlen + 4 * (2 * 15 + 2 + 8 + 1));
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = Checkpoint::new(net(), 1, 0, serde_json::Value::Null).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..5]).is_err());
        let mut bad = bytes.clone();
        bad[10] = b'#';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
