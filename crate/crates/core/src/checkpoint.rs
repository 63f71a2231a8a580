//! Binary container for network parameters and optional Rprop state.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "RPNN"
//! 4       4     u32 format version (1)
//! 8       4     u32 layer count L
//! 12      9*L   per layer: u32 fan_in, u32 fan_out, u8 activation tag
//!                 (0 relu, 1 logistic, 2 tanh, 3 identity)
//! ..      ..    per layer: fan_in*fan_out f64 weights (row-major),
//!                 then fan_out f64 biases
//! ..      4     u32 section count S
//! ..      ..    S sections: 4-byte tag, u64 payload length, payload
//! ```
//!
//! Section `RPRP` carries Rprop state: for each layer, the step sizes
//! (weights then biases) followed by the stored previous gradients (weights
//! then biases), laid out like the parameters. Unknown sections are skipped.

use std::path::Path;

use crate::error::{Error, Result};
use crate::mlp::{Activation, Layer, LayerSpec, NetworkParams};
use crate::optim::RpropState;
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"RPNN";
pub const VERSION: u32 = 1;
const RPROP_TAG: &[u8; 4] = b"RPRP";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub rprop: Option<RpropState>,
}

fn put_layers(out: &mut Vec<u8>, layers: &[Layer]) {
    for layer in layers {
        for v in layer.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode(params: &NetworkParams, rprop: Option<&RpropState>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_params() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.specs().len() as u32).to_le_bytes());
    for s in params.specs() {
        out.extend_from_slice(&(s.fan_in as u32).to_le_bytes());
        out.extend_from_slice(&(s.fan_out as u32).to_le_bytes());
        out.push(s.activation.tag());
    }
    put_layers(&mut out, &params.layers);
    match rprop {
        None => out.extend_from_slice(&0u32.to_le_bytes()),
        Some(state) => {
            out.extend_from_slice(&1u32.to_le_bytes());
            let mut payload = Vec::new();
            for (d, p) in state.delta.iter().zip(&state.prev_grad) {
                put_layers(&mut payload, std::slice::from_ref(d));
                put_layers(&mut payload, std::slice::from_ref(p));
            }
            out.extend_from_slice(RPROP_TAG);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.bytes.len())))?;
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

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn layer(&mut self, spec: &LayerSpec) -> Result<Layer> {
        let weights = Matrix::new(
            spec.fan_in,
            spec.fan_out,
            self.f64s(spec.fan_in * spec.fan_out)?,
        )?;
        let biases = self.f64s(spec.fan_out)?;
        Ok(Layer { weights, biases })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n_layers = r.u32()? as usize;
    let mut specs = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let fan_in = r.u32()? as usize;
        let fan_out = r.u32()? as usize;
        let tag = r.take(1)?[0];
        let activation = Activation::from_tag(tag)
            .ok_or_else(|| Error::Checkpoint(format!("unknown activation tag {tag}")))?;
        specs.push(LayerSpec::new(fan_in, fan_out, activation));
    }
    let layers = specs
        .iter()
        .map(|s| r.layer(s))
        .collect::<Result<Vec<_>>>()?;
    let params = NetworkParams::from_layers(specs.clone(), layers)?;

    let mut rprop = None;
    let sections = r.u32()?;
    for _ in 0..sections {
        let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
        let len =
            usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("section too large".into()))?;
        let start = r.pos;
        if &tag == RPROP_TAG {
            let mut delta = Vec::with_capacity(specs.len());
            let mut prev_grad = Vec::with_capacity(specs.len());
            for s in &specs {
                delta.push(r.layer(s)?);
                prev_grad.push(r.layer(s)?);
            }
            if r.pos - start != len {
                return Err(Error::Checkpoint("Rprop section length mismatch".into()));
            }
            rprop = Some(RpropState { delta, prev_grad });
        } else {
            r.take(len)?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint { params, rprop })
}

pub fn save(
    path: impl AsRef<Path>,
    params: &NetworkParams,
    rprop: Option<&RpropState>,
) -> Result<()> {
    std::fs::write(path, encode(params, rprop))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}
