//! Checkpoint files.
//!
//! ```text
//! "FCNN" | version u32 | { name_len u32 | name utf8 | rank u32 | dims u32* | values f32* }*
//! ```
//! All integers and floats little-endian; values row-major. Parameters run
//! to end of file.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::model::{Model, ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FCNN";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_parameters<W: Write>(mut w: W, params: &[(String, &Tensor<f32>)]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let to_u32 = |n: usize| {
        u32::try_from(n)
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "value exceeds u32"))
    };
    for (name, t) in params {
        w.write_all(&to_u32(name.len())?.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&to_u32(t.rank())?.to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&to_u32(d)?.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn read_parameters<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint(
            "bad magic bytes (not an FCNN checkpoint)".into(),
        ));
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let mut params = Vec::new();
    while !c.done() {
        let name_len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u32("dimension")? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: dimensions overflow")))?;
        let raw = c.take(count * 4, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let t =
            Tensor::from_vec(&dims, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        params.push((name, t));
    }
    Ok(params)
}

pub fn save(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_parameters(&mut buf, &model.parameters()).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    model_from_parameters(read_parameters(io::BufReader::new(file))?)
}

/// Rebuilds a model from checkpoint parameters. The architecture is read
/// off the parameter shapes: square input, 2x2/2 pooling, and the default
/// dropout rates (which only matter for further training).
pub fn model_from_parameters(params: Vec<(String, Tensor<f32>)>) -> Result<Model<f32>> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let mut convs: Vec<&Tensor<f32>> = Vec::new();
    let mut denses: Vec<&Tensor<f32>> = Vec::new();
    for (name, t) in &params {
        if let Some(layer) = name.strip_suffix("/kernel") {
            if layer.starts_with("conv2d") {
                convs.push(t);
            } else if layer.starts_with("dense") {
                denses.push(t);
            } else {
                return Err(bad(format!("unknown parameter {name}")));
            }
        }
    }
    if convs.is_empty() || denses.len() != 2 {
        return Err(bad(format!(
            "expected conv kernels and two dense kernels, found {} and {}",
            convs.len(),
            denses.len()
        )));
    }
    let first = convs[0].shape();
    if first.len() != 4 || first[0] != first[1] {
        return Err(bad(format!("first conv kernel has shape {first:?}")));
    }
    let kernel = first[0];
    let input_channels = first[2];
    let conv_channels: Vec<usize> = convs.iter().map(|t| t.shape()[3]).collect();
    let dense_shape = denses[0].shape();
    if dense_shape.len() != 2 {
        return Err(bad(format!("dense kernel has shape {dense_shape:?}")));
    }
    let last_channels = *conv_channels.last().expect("non-empty");
    let cells = dense_shape[0] / last_channels;
    let side = (cells as f64).sqrt().round() as usize;
    if side * side * last_channels != dense_shape[0] {
        return Err(bad(format!(
            "dense input {} is not a square feature map of {last_channels} channels",
            dense_shape[0]
        )));
    }
    let mut config = ModelConfig::for_variant(Variant::ThreeBlock);
    // Undo the pooling chain: each 2x2/2 pool maps 2n (or 2n+1) to n.
    let mut size = side;
    for _ in &conv_channels {
        size = (size - 1) * config.pool_stride + config.pool_size;
    }
    config.input_height = size;
    config.input_width = size;
    config.input_channels = input_channels;
    config.kernel_size = kernel;
    config.conv_channels = conv_channels;
    config.dense_units = dense_shape[1];

    let mut model = Model::zeros(&config).map_err(|e| bad(e.to_string()))?;
    let expected: Vec<(String, Vec<usize>)> = model
        .parameters()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != params.len() {
        return Err(bad(format!(
            "inferred architecture has {} parameters, checkpoint has {}",
            expected.len(),
            params.len()
        )));
    }
    for ((want_name, want_shape), (name, t)) in expected.iter().zip(&params) {
        if want_name != name || want_shape != t.shape() {
            return Err(bad(format!(
                "parameter {name} {:?} does not fit inferred {want_name} {want_shape:?}",
                t.shape()
            )));
        }
    }
    for (slot, (_, t)) in model.parameters_mut().into_iter().zip(params) {
        *slot = t;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Model<f32> {
        let config = ModelConfig::for_variant(Variant::TwoBlock)
            .with_input_size(16)
            .with_base_channels(3)
            .with_dense_units(5);
        Model::build(&config, 8, 9).unwrap()
    }

    fn bytes(model: &Model<f32>) -> Vec<u8> {
        let mut buf = Vec::new();
        write_parameters(&mut buf, &model.parameters()).unwrap();
        buf
    }

    #[test]
    fn header_layout() {
        let buf = bytes(&small());
        assert_eq!(&buf[..4], b"FCNN");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        let name_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        assert_eq!(&buf[12..12 + name_len], b"conv2d/kernel");
    }

    #[test]
    fn round_trip_restores_architecture() {
        let model = small();
        let restored = model_from_parameters(read_parameters(&bytes(&model)[..]).unwrap()).unwrap();
        assert_eq!(restored.config().input_height, 16);
        assert_eq!(restored.config().conv_channels, vec![3, 6]);
        assert_eq!(bytes(&restored), bytes(&model));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut buf = bytes(&small());
        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(
            read_parameters(truncated),
            Err(Error::Checkpoint(_))
        ));
        buf[4] = 9;
        assert!(matches!(
            read_parameters(&buf[..]),
            Err(Error::Checkpoint(_))
        ));
        buf[0] = b'X';
        assert!(matches!(
            read_parameters(&buf[..]),
            Err(Error::Checkpoint(_))
        ));
    }
}
