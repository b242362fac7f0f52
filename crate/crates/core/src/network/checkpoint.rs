//! Binary checkpoints, little-endian:
//!
//! | field | encoding |
//! |-------|----------|
//! | magic | `HESS` |
//! | version | `u32` (1) |
//! | config | `u32` byte length, then UTF-8 JSON of [`NetworkConfig`] |
//! | tensors | `u32` count; per tensor `u32` rank, `u64` dims, `f64` data |
//! | optimizer | `u8` flag; if 1: `u64` step, then the first and second moments, one `f64` block per tensor in parameter order |
//!
//! Tensors appear in parameter declaration order.

use std::fs;
use std::path::Path;

use super::{AdamW, HybridNetwork, NetworkConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HESS";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: HybridNetwork,
    pub optimizer: Option<AdamW>,
}

pub fn write_checkpoint(net: &HybridNetwork, opt: Option<&AdamW>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(&net.config)?;
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    let leaves = net.params.leaves();
    buf.extend_from_slice(&(leaves.len() as u32).to_le_bytes());
    for t in leaves {
        buf.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_f64s(&mut buf, t.data());
    }
    match opt {
        Some(o) => {
            buf.push(1);
            buf.extend_from_slice(&o.step.to_le_bytes());
            for t in o.m.iter().chain(&o.v) {
                put_f64s(&mut buf, t.data());
            }
        }
        None => buf.push(0),
    }
    Ok(buf)
}

fn put_f64s(buf: &mut Vec<u8>, data: &[f64]) {
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("missing HESS magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32("config length")? as usize;
    let config: NetworkConfig = serde_json::from_slice(r.take(len, "config")?)?;
    let mut network = HybridNetwork::build(config)?;
    let count = r.u32("tensor count")? as usize;
    let expected: Vec<Vec<usize>> = network.params.leaves().iter().map(|t| t.shape().to_vec()).collect();
    if count != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, configuration expects {}",
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (i, want) in expected.iter().enumerate() {
        let rank = r.u32("tensor rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u64("tensor dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if &shape != want {
            return Err(Error::Format(format!(
                "tensor {i} has shape {shape:?}, configuration expects {want:?}"
            )));
        }
        let n = shape.iter().product();
        tensors.push(Tensor::new(shape, r.f64s(n, "tensor data")?)?);
    }
    let mut it = tensors.into_iter();
    network.params.for_each_mut(&mut |p| *p = it.next().expect("count checked"));

    let optimizer = match r.take(1, "optimizer flag")?[0] {
        0 => None,
        1 => {
            let mut opt = AdamW::new(&network.params);
            opt.step = r.u64("optimizer step")?;
            for t in opt.m.iter_mut().chain(opt.v.iter_mut()) {
                let n = t.numel();
                t.data_mut().copy_from_slice(&r.f64s(n, "optimizer state")?);
            }
            Some(opt)
        }
        f => return Err(Error::Format(format!("invalid optimizer flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint { network, optimizer })
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &HybridNetwork, opt: Option<&AdamW>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(net, opt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let mut net = HybridNetwork::build(NetworkConfig {
            scales: vec![(2, 4), (4, 8)],
            ..NetworkConfig::default()
        })
        .unwrap();
        net.params.for_each_mut(&mut |t| {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v += (i as f64 * 0.1).sin() * 1e-3;
            }
        });
        let mut opt = AdamW::new(&net.params);
        opt.step = 17;
        opt.m[0].data_mut()[0] = -0.0;
        opt.v[1].data_mut()[0] = 1e-300;
        let bytes = write_checkpoint(&net, Some(&opt)).unwrap();
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(write_checkpoint(&back.network, back.optimizer.as_ref()).unwrap(), bytes);
        for (a, b) in net.params.leaves().iter().zip(back.network.params.leaves()) {
            assert!(a.bitwise_eq(b));
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let net = HybridNetwork::build(NetworkConfig {
            scales: vec![(2, 4)],
            ..NetworkConfig::default()
        })
        .unwrap();
        let bytes = write_checkpoint(&net, None).unwrap();
        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(read_checkpoint(&extra).is_err());
    }
}
