//! The DQM1 model container: magic, a length-prefixed JSON header, then the
//! parameters as little-endian f32 in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregator::LinearAggregator;
use crate::error::{Error, Result};
use crate::grade::NUM_GRADES;
use crate::imageio::LUMINANCE_TRANSFORM;
use crate::network::{DeepQualityNet, NetWidths, KERNEL_SIZES, PARAM_NAMES};
use crate::nn::Tensor;
use crate::scalar::Real;

pub const MAGIC: [u8; 4] = *b"DQM1";
pub const FORMAT_VERSION: u32 = 1;

const AGG_WEIGHTS: &str = "aggregator.weights";
const AGG_BIAS: &str = "aggregator.bias";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub widths: NetWidths,
    pub kernel_sizes: [usize; 3],
    /// fc1 input, fc1 output, fc2 output.
    pub fc_sizes: [usize; 3],
    pub luminance: String,
    pub seed: u64,
    pub training: serde_json::Value,
    pub payload_bytes: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub header: ModelHeader,
    pub net: DeepQualityNet<f32>,
    pub aggregator: Option<LinearAggregator>,
}

fn expected_manifest(widths: &NetWidths, aggregator_dim: Option<usize>) -> Vec<TensorEntry> {
    let mut m: Vec<TensorEntry> = PARAM_NAMES
        .iter()
        .zip(widths.param_shapes())
        .map(|(n, s)| TensorEntry {
            name: n.to_string(),
            shape: s,
        })
        .collect();
    if let Some(d) = aggregator_dim {
        m.push(TensorEntry {
            name: AGG_WEIGHTS.into(),
            shape: vec![NUM_GRADES, d],
        });
        m.push(TensorEntry {
            name: AGG_BIAS.into(),
            shape: vec![NUM_GRADES],
        });
    }
    m
}

/// Serializes a network (rounded to f32) and an optional aggregator.
pub fn model_to_bytes<T: Real>(
    net: &DeepQualityNet<T>,
    aggregator: Option<&LinearAggregator>,
    seed: u64,
    training: serde_json::Value,
) -> Vec<u8> {
    let widths = net.widths();
    let tensors = expected_manifest(&widths, aggregator.map(|a| a.feature_dim));
    let mut payload: Vec<u8> = Vec::new();
    for p in net.params() {
        for v in p.data() {
            payload.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    if let Some(a) = aggregator {
        for v in a.weights.iter().chain(&a.bias) {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let header = ModelHeader {
        format_version: FORMAT_VERSION,
        widths,
        kernel_sizes: KERNEL_SIZES,
        fc_sizes: [widths.flatten_dim(), widths.hidden, NUM_GRADES],
        luminance: LUMINANCE_TRANSFORM.into(),
        seed,
        training,
        payload_bytes: payload.len(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<LoadedModel> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < 8 {
        return Err(Error::Truncated {
            expected: 8,
            found: bytes.len(),
        });
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes")) as usize;
    let header_end = 8usize.saturating_add(header_len);
    if bytes.len() < header_end {
        return Err(Error::Truncated {
            expected: header_end,
            found: bytes.len(),
        });
    }
    let raw: serde_json::Value =
        serde_json::from_slice(&bytes[8..header_end]).map_err(|e| Error::Header(e.to_string()))?;
    let version = raw.get("format_version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::VersionMismatch {
                found: v as u32,
                expected: FORMAT_VERSION,
            })
        }
        None => return Err(Error::Header("missing format_version".into())),
    }
    let header: ModelHeader = serde_json::from_value(raw).map_err(|e| Error::Header(e.to_string()))?;
    header.widths.validate().map_err(|e| Error::Header(e.to_string()))?;
    if header.kernel_sizes != KERNEL_SIZES {
        return Err(Error::ManifestMismatch(format!(
            "kernel sizes {:?}, this build supports {KERNEL_SIZES:?}",
            header.kernel_sizes
        )));
    }
    if header.luminance != LUMINANCE_TRANSFORM {
        return Err(Error::Header(format!("unknown luminance transform {:?}", header.luminance)));
    }

    let has_aggregator = header.tensors.iter().any(|t| t.name == AGG_WEIGHTS);
    let aggregator_dim = has_aggregator.then(|| {
        header
            .tensors
            .iter()
            .find(|t| t.name == AGG_WEIGHTS)
            .and_then(|t| t.shape.get(1).copied())
            .unwrap_or(0)
    });
    let expected = expected_manifest(&header.widths, aggregator_dim);
    if header.tensors != expected {
        return Err(Error::ManifestMismatch(
            "tensor names or shapes disagree with the declared architecture".into(),
        ));
    }
    if let Some(d) = aggregator_dim {
        if d != NUM_GRADES && d != 2 * NUM_GRADES {
            return Err(Error::ManifestMismatch(format!("aggregator feature_dim {d}")));
        }
    }
    let floats: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let needed = floats * 4;
    if header.payload_bytes != needed {
        return Err(Error::ManifestMismatch(format!(
            "header declares {} payload bytes but its tensors need {needed}",
            header.payload_bytes
        )));
    }
    let payload = &bytes[header_end..];
    if payload.len() < needed {
        return Err(Error::Truncated {
            expected: needed,
            found: payload.len(),
        });
    }
    if payload.len() > needed {
        return Err(Error::ManifestMismatch(format!(
            "{} trailing bytes after the declared tensors",
            payload.len() - needed
        )));
    }

    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")));
    let mut take = |n: usize| -> Vec<f32> { values.by_ref().take(n).collect() };
    let mut params = Vec::with_capacity(PARAM_NAMES.len());
    for entry in &header.tensors[..PARAM_NAMES.len()] {
        let n = entry.shape.iter().product();
        params.push(Tensor::new(entry.shape.clone(), take(n))?);
    }
    let net = DeepQualityNet::from_params(header.widths, params)?;
    if !net.is_finite() {
        return Err(Error::NonFinite("model parameters".into()));
    }
    let aggregator = match aggregator_dim {
        Some(d) => {
            let weights = take(NUM_GRADES * d).into_iter().map(f64::from).collect();
            let bias: Vec<f64> = take(NUM_GRADES).into_iter().map(f64::from).collect();
            let a = LinearAggregator {
                feature_dim: d,
                weights,
                bias: bias.try_into().expect("five biases"),
            };
            if !a.is_finite() {
                return Err(Error::NonFinite("aggregator parameters".into()));
            }
            Some(a)
        }
        None => None,
    };
    Ok(LoadedModel {
        header,
        net,
        aggregator,
    })
}

pub fn save_model<T: Real>(
    path: &Path,
    net: &DeepQualityNet<T>,
    aggregator: Option<&LinearAggregator>,
    seed: u64,
    training: serde_json::Value,
) -> Result<()> {
    fs::write(path, model_to_bytes(net, aggregator, seed, training)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
