//! Frozen-weight file format (`.fdm`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FDM1" | u32 version (1) | u32 layer count
//! per layer: u8 tag (1 conv, 2 avgpool, 3 flatten, 4 dense, 5 activation)
//!   tag 5:     u8 kind (0 relu, 1 sigmoid)
//!   tag 1, 4:  per parameter tensor (kernels/weights, then bias):
//!              u32 rank | rank x u32 extents | f32 payload
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! The input extents are not stored. Import assumes the full-size
//! 100x100 input when the layers accept it and otherwise picks the smallest
//! square input that propagates to a single unit.

use std::fs;
use std::path::Path;

use crate::data::Label;
use crate::error::{Error, FormatError, Result};
use crate::image::GrayImage;
use crate::layers::{ActivationKind, Conv2d, Dense, Layer};
use crate::network::{Network, INPUT_SHAPE};
use crate::tensor::Tensor;
use crate::train::{predict_label, PIXEL_SCALE};

pub const MAGIC: [u8; 4] = *b"FDM1";
pub const VERSION: u32 = 1;

const TAG_CONV: u8 = 1;
const TAG_POOL: u8 = 2;
const TAG_FLATTEN: u8 = 3;
const TAG_DENSE: u8 = 4;
const TAG_ACTIVATION: u8 = 5;

const KIND_RELU: u8 = 0;
const KIND_SIGMOID: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    put_u32(out, t.rank() as u32);
    for &e in t.shape() {
        put_u32(out, e as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 4 * net.param_count());
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, net.layers().len() as u32);
    for layer in net.layers() {
        match layer {
            Layer::Conv2d(c) => {
                out.push(TAG_CONV);
                put_tensor(&mut out, &c.kernels);
                put_tensor(&mut out, &c.bias);
            }
            Layer::AvgPool2d { .. } => out.push(TAG_POOL),
            Layer::Flatten { .. } => out.push(TAG_FLATTEN),
            Layer::Dense(d) => {
                out.push(TAG_DENSE);
                put_tensor(&mut out, &d.weights);
                put_tensor(&mut out, &d.bias);
            }
            Layer::Activation { kind, .. } => {
                out.push(TAG_ACTIVATION);
                out.push(match kind {
                    ActivationKind::Relu => KIND_RELU,
                    ActivationKind::Sigmoid => KIND_SIGMOID,
                });
            }
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

/// Writes the frozen model and returns the byte count.
pub fn export(net: &Network, path: &Path) -> Result<u64> {
    let bytes = to_bytes(net);
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len() as u64)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Shape(format!(
                "{what} needs {n} bytes at offset {}, only {} remain",
                self.pos,
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u8(&mut self, what: &str) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, FormatError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensor(&mut self, what: &str, rank: usize) -> std::result::Result<Tensor, FormatError> {
        let got = self.u32(what)? as usize;
        if got != rank {
            return Err(FormatError::Shape(format!(
                "{what} must have rank {rank}, header says {got}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32(what)? as usize);
        }
        if shape.contains(&0) {
            return Err(FormatError::Shape(format!(
                "{what} has a zero extent {shape:?}"
            )));
        }
        let bytes = shape
            .iter()
            .try_fold(4usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| FormatError::Shape(format!("{what} extents {shape:?} overflow")))?;
        let payload = self.take(bytes, what)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(shape, data).map_err(|e| FormatError::Shape(e.to_string()))
    }
}

fn shape_err(e: Error) -> FormatError {
    FormatError::Shape(e.to_string())
}

fn parse_layers(body: &[u8]) -> std::result::Result<Vec<Layer>, FormatError> {
    let mut r = Reader {
        bytes: body,
        pos: 12,
    };
    let count = u32::from_le_bytes([body[8], body[9], body[10], body[11]]) as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let tag = r.u8("layer tag")?;
        let layer = match tag {
            TAG_CONV => {
                let kernels = r.tensor("conv kernels", 4)?;
                let bias = r.tensor("conv bias", 1)?;
                Layer::Conv2d(Conv2d::new(kernels, bias).map_err(shape_err)?)
            }
            TAG_POOL => Layer::avg_pool(),
            TAG_FLATTEN => Layer::flatten(),
            TAG_DENSE => {
                let weights = r.tensor("dense weights", 2)?;
                let bias = r.tensor("dense bias", 1)?;
                Layer::Dense(Dense::new(weights, bias).map_err(shape_err)?)
            }
            TAG_ACTIVATION => match r.u8("activation kind")? {
                KIND_RELU => Layer::activation(ActivationKind::Relu),
                KIND_SIGMOID => Layer::activation(ActivationKind::Sigmoid),
                k => return Err(FormatError::UnknownActivation(k)),
            },
            t => return Err(FormatError::UnknownLayerTag(t)),
        };
        layers.push(layer);
    }
    if r.pos != body.len() {
        return Err(FormatError::Shape(format!(
            "{} unexpected bytes after the last layer",
            body.len() - r.pos
        )));
    }
    Ok(layers)
}

fn propagate(layers: &[Layer], input: &[usize]) -> bool {
    let mut shape = input.to_vec();
    for l in layers {
        match l.output_shape(&shape) {
            Ok(s) => shape = s,
            Err(_) => return false,
        }
    }
    shape == [1]
}

fn infer_input_shape(layers: &[Layer]) -> std::result::Result<Vec<usize>, FormatError> {
    let channels = match layers.first() {
        Some(Layer::Conv2d(c)) => c.kernels.shape()[2],
        _ => {
            return Err(FormatError::Shape(
                "first layer must be a convolution".into(),
            ))
        }
    };
    let full = [INPUT_SHAPE[0], INPUT_SHAPE[1], channels];
    if propagate(layers, &full) {
        return Ok(full.to_vec());
    }
    (1..=4096)
        .map(|s| vec![s, s, channels])
        .find(|shape| propagate(layers, shape))
        .ok_or_else(|| FormatError::Shape("layer extents do not chain to a single output".into()))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 16 {
        return Err(FormatError::Truncated(format!(
            "{} bytes is shorter than any model",
            bytes.len()
        ))
        .into());
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic).into());
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed }.into());
    }
    let layers = parse_layers(body)?;
    let input = infer_input_shape(&layers)?;
    Network::new(input, layers).map_err(|e| shape_err(e).into())
}

pub fn import(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Probability and thresholded label for one grayscale image in `[0, 255]`
/// whose extents match the network input.
pub fn predict(net: &Network, image: &GrayImage) -> Result<(f32, Label)> {
    let want = net.input_shape();
    if [image.height(), image.width()] != want[..2] {
        return Err(Error::Shape(format!(
            "image is {}x{}, model expects {}x{}",
            image.width(),
            image.height(),
            want[1],
            want[0]
        )));
    }
    let p = net.infer(&crate::image::rescale(image, PIXEL_SCALE)?.to_tensor())?;
    Ok((p, predict_label(p)))
}
