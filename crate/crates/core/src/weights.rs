//! Little-endian binary weight format (`PGN1`) and a line-oriented text dump.
//!
//! ```text
//! magic "PGN1" | u32 layer count
//! per layer: u8 kind (0 conv, 1 relu, 2 maxpool) | u16 name length | UTF-8 name
//!   conv:    u32 in_ch, out_ch, kernel_h, kernel_w, stride, pad
//!            f32[out_ch*in_ch*kernel_h*kernel_w] weights, f32[out_ch] bias
//!   maxpool: u32 kernel, stride
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{ConvLayer, LayerDesc, NetworkSpec};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"PGN1";

const TAG_CONV: u8 = 0;
const TAG_RELU: u8 = 1;
const TAG_MAXPOOL: u8 = 2;

pub fn load_network<T: Real>(path: impl AsRef<Path>) -> Result<NetworkSpec<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_network(&bytes)
}

pub fn save_network<T: Real>(net: &NetworkSpec<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_network(net)?).map_err(|e| Error::io(path, e))
}

pub fn encode_network<T: Real>(net: &NetworkSpec<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, net.len())?;
    for layer in net.layers() {
        let name = layer.name().as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidNetwork(format!("layer name `{}` too long", layer.name())))?;
        match layer {
            LayerDesc::Conv(c) => {
                out.push(TAG_CONV);
                out.extend_from_slice(&name_len.to_le_bytes());
                out.extend_from_slice(name);
                for v in [c.in_ch, c.out_ch, c.kernel_h, c.kernel_w, c.stride, c.pad] {
                    put_u32(&mut out, v)?;
                }
                for &v in c.weights.iter().chain(&c.bias) {
                    out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
                }
            }
            LayerDesc::Relu { .. } => {
                out.push(TAG_RELU);
                out.extend_from_slice(&name_len.to_le_bytes());
                out.extend_from_slice(name);
            }
            LayerDesc::MaxPool { kernel, stride, .. } => {
                out.push(TAG_MAXPOOL);
                out.extend_from_slice(&name_len.to_le_bytes());
                out.extend_from_slice(name);
                put_u32(&mut out, *kernel)?;
                put_u32(&mut out, *stride)?;
            }
        }
    }
    Ok(out)
}

pub fn decode_network<T: Real>(bytes: &[u8]) -> Result<NetworkSpec<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("magic number is not PGN1".into()));
    }
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let tag = r.u8()?;
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("layer name is not UTF-8".into()))?
            .to_string();
        layers.push(match tag {
            TAG_CONV => {
                let in_ch = r.u32()?;
                let out_ch = r.u32()?;
                let kernel_h = r.u32()?;
                let kernel_w = r.u32()?;
                let stride = r.u32()?;
                let pad = r.u32()?;
                let n_w = out_ch
                    .checked_mul(in_ch)
                    .and_then(|v| v.checked_mul(kernel_h))
                    .and_then(|v| v.checked_mul(kernel_w))
                    .ok_or_else(|| Error::Format(format!("layer `{name}` shape overflows")))?;
                let weights = r.f32s(n_w, &name)?;
                let bias = r.f32s(out_ch, &name)?;
                LayerDesc::Conv(ConvLayer {
                    name,
                    in_ch,
                    out_ch,
                    kernel_h,
                    kernel_w,
                    stride,
                    pad,
                    weights,
                    bias,
                })
            }
            TAG_RELU => LayerDesc::Relu { name },
            TAG_MAXPOOL => {
                let kernel = r.u32()?;
                let stride = r.u32()?;
                LayerDesc::MaxPool { name, kernel, stride }
            }
            other => return Err(Error::Format(format!("unknown layer kind tag {other}"))),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::InvalidNetwork(format!(
            "{} byte(s) beyond the declared layer shapes; weight blobs do not match their headers",
            bytes.len() - r.pos
        )));
    }
    NetworkSpec::new(layers)
}

/// Human-readable dump: one header line per layer followed by one value per line.
pub fn dump_text<T: Real>(net: &NetworkSpec<T>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "PGN1 {}", net.len());
    for layer in net.layers() {
        match layer {
            LayerDesc::Conv(c) => {
                let _ = writeln!(
                    s,
                    "conv {} in={} out={} kh={} kw={} stride={} pad={}",
                    c.name, c.in_ch, c.out_ch, c.kernel_h, c.kernel_w, c.stride, c.pad
                );
                let _ = writeln!(s, "# weights {}", c.weights.len());
                for v in &c.weights {
                    let _ = writeln!(s, "{:e}", v.as_f64() as f32);
                }
                let _ = writeln!(s, "# bias {}", c.bias.len());
                for v in &c.bias {
                    let _ = writeln!(s, "{:e}", v.as_f64() as f32);
                }
            }
            LayerDesc::Relu { name } => {
                let _ = writeln!(s, "relu {name}");
            }
            LayerDesc::MaxPool { name, kernel, stride } => {
                let _ = writeln!(s, "maxpool {name} kernel={kernel} stride={stride}");
            }
        }
    }
    s
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidNetwork(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
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
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32s<T: Real>(&mut self, n: usize, layer: &str) -> Result<Vec<T>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("blob overflows".into()))?)?;
        raw.chunks_exact(4)
            .map(|b| {
                let v = f32::from_le_bytes(b.try_into().unwrap());
                if v.is_finite() {
                    Ok(T::lit(v as f64))
                } else {
                    Err(Error::NonFinite(format!("weight in layer `{layer}`")))
                }
            })
            .collect()
    }
}
