//! Model checkpoints: an 8-byte magic, a length-prefixed JSON header
//! describing the architecture, then raw little-endian f64 parameters in
//! layer order (weights before biases within each layer).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::tensor::Tensor;

use super::layer::{ActivationKind, Layer};
use super::model::{ActivationMode, Model};

const MAGIC: &[u8; 8] = b"NNFRAG01";

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerHeader {
    Dense {
        out: usize,
        inp: usize,
    },
    Conv2d {
        out_c: usize,
        in_c: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    },
    Flatten,
    Activation {
        which: String,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ModeHeader {
    ExactRelu,
    Softplus { beta: f64 },
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    num_classes: usize,
    input_shape: Vec<usize>,
    mode: ModeHeader,
    layers: Vec<LayerHeader>,
    seed: u64,
}

pub fn save_model(model: &Model, seed: u64, path: &Path) -> Result<(), NnError> {
    let layers = model
        .layers
        .iter()
        .map(|l| match l {
            Layer::Dense { weight, .. } => LayerHeader::Dense {
                out: weight.shape[0],
                inp: weight.shape[1],
            },
            Layer::Conv2D {
                weight,
                stride,
                padding,
                ..
            } => LayerHeader::Conv2d {
                out_c: weight.shape[0],
                in_c: weight.shape[1],
                kh: weight.shape[2],
                kw: weight.shape[3],
                stride: *stride,
                padding: *padding,
            },
            Layer::Flatten => LayerHeader::Flatten,
            Layer::Activation(ActivationKind::Relu) => LayerHeader::Activation {
                which: "relu".to_string(),
            },
        })
        .collect();
    let header = Header {
        version: 1,
        num_classes: model.num_classes,
        input_shape: model.input_shape.clone(),
        mode: match model.activation_mode {
            ActivationMode::ExactRelu => ModeHeader::ExactRelu,
            ActivationMode::Softplus { beta } => ModeHeader::Softplus { beta },
        },
        layers,
        seed,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| NnError::config(format!("serializing checkpoint header: {e}")))?;

    let ctx = || format!("writing checkpoint {}", path.display());
    let mut w = BufWriter::new(File::create(path).map_err(NnError::io(ctx()))?);
    w.write_all(MAGIC).map_err(NnError::io(ctx()))?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())
        .map_err(NnError::io(ctx()))?;
    w.write_all(&header_bytes).map_err(NnError::io(ctx()))?;
    for layer in &model.layers {
        if let Layer::Dense { weight, bias } | Layer::Conv2D { weight, bias, .. } = layer {
            for &v in weight.data.iter().chain(&bias.data) {
                w.write_all(&v.to_le_bytes()).map_err(NnError::io(ctx()))?;
            }
        }
    }
    w.flush().map_err(NnError::io(ctx()))
}

/// Loads a checkpoint; returns the model and the seed recorded at save time.
pub fn load_model(path: &Path) -> Result<(Model, u64), NnError> {
    let ctx = || format!("reading checkpoint {}", path.display());
    let truncated = || NnError::TruncatedFile {
        path: path.display().to_string(),
    };
    let mut r = BufReader::new(File::open(path).map_err(NnError::io(ctx()))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| truncated())?;
    if &magic != MAGIC {
        return Err(NnError::BadMagic {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            got: format!("{magic:02x?}"),
        });
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes).map_err(|_| truncated())?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(|_| truncated())?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| NnError::config(format!("parsing checkpoint header: {e}")))?;

    let mut read_tensor = |shape: Vec<usize>| -> Result<Tensor, NnError> {
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf).map_err(|_| truncated())?;
            data.push(f64::from_le_bytes(buf));
        }
        Tensor::new(shape, data)
    };
    let mut layers = Vec::with_capacity(header.layers.len());
    for lh in &header.layers {
        layers.push(match lh {
            LayerHeader::Dense { out, inp } => Layer::Dense {
                weight: read_tensor(vec![*out, *inp])?,
                bias: read_tensor(vec![*out])?,
            },
            LayerHeader::Conv2d {
                out_c,
                in_c,
                kh,
                kw,
                stride,
                padding,
            } => Layer::Conv2D {
                weight: read_tensor(vec![*out_c, *in_c, *kh, *kw])?,
                bias: read_tensor(vec![*out_c])?,
                stride: *stride,
                padding: *padding,
            },
            LayerHeader::Flatten => Layer::Flatten,
            LayerHeader::Activation { which } => {
                if which != "relu" {
                    return Err(NnError::UnsupportedLayer {
                        kind: format!("activation '{which}'"),
                    });
                }
                Layer::Activation(ActivationKind::Relu)
            }
        });
    }
    let mode = match header.mode {
        ModeHeader::ExactRelu => ActivationMode::ExactRelu,
        ModeHeader::Softplus { beta } => ActivationMode::Softplus { beta },
    };
    let model = Model::new(layers, mode, header.num_classes, header.input_shape)?;
    Ok((model, header.seed))
}
