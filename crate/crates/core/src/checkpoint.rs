//! Binary model checkpoints.
//!
//! Layout (all integers `u32` and floats `f64`, little endian):
//!
//! ```text
//! "DDPMCKPT"  version  D  T  box.lo[D]  box.hi[D]  embed_dim  activation  sigma_kind
//! T × (alpha, alpha_bar, sigma2)
//! n_layers, then per layer: rows cols weight[rows·cols] bias[rows]
//! SHA-256 of everything above (32 bytes)
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use crate::data::DomainBox;
use crate::denoiser::DiffusionModel;
use crate::error::{Error, Result};
use crate::net::{Activation, Dense, DenoiserNet, TimeEmbedding};
use crate::schedule::{NoiseSchedule, SigmaKind};

const MAGIC: &[u8; 8] = b"DDPMCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(model: &DiffusionModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let put_u32 = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    let put_f64 = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&v.to_le_bytes());
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, model.dim() as u32);
    put_u32(&mut out, model.num_steps() as u32);
    for &v in model.domain.lo.iter().chain(&model.domain.hi) {
        put_f64(&mut out, v);
    }
    put_u32(&mut out, model.net.embedding().dim as u32);
    put_u32(&mut out, model.net.activation().code());
    put_u32(&mut out, model.schedule.sigma_kind().code());
    let s = &model.schedule;
    for i in 0..s.num_steps() {
        put_f64(&mut out, s.alphas()[i]);
        put_f64(&mut out, s.alpha_bars()[i]);
        put_f64(&mut out, s.sigma2_table()[i]);
    }
    put_u32(&mut out, model.net.layers().len() as u32);
    for layer in model.net.layers() {
        put_u32(&mut out, layer.out_dim() as u32);
        put_u32(&mut out, layer.in_dim() as u32);
        for &w in layer.weight.iter() {
            put_f64(&mut out, w);
        }
        for &b in layer.bias.iter() {
            put_f64(&mut out, b);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn decode(bytes: &[u8]) -> Result<DiffusionModel> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dim = r.usize()?;
    let steps = r.usize()?;
    let lo = r.f64s(dim)?;
    let hi = r.f64s(dim)?;
    let domain = DomainBox::new(lo, hi)?;
    let embedding = TimeEmbedding::new(r.usize()?)?;
    let activation = Activation::from_code(r.u32()?)
        .ok_or_else(|| Error::Checkpoint("unknown activation code".into()))?;
    let sigma_kind = SigmaKind::from_code(r.u32()?)
        .ok_or_else(|| Error::Checkpoint("unknown sigma code".into()))?;
    let mut alphas = Vec::with_capacity(steps);
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut sigma2 = Vec::with_capacity(steps);
    for _ in 0..steps {
        alphas.push(r.f64()?);
        alpha_bars.push(r.f64()?);
        sigma2.push(r.f64()?);
    }
    let schedule = NoiseSchedule::from_table(alphas, alpha_bars, sigma2, sigma_kind)?;
    let n_layers = r.usize()?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = r.usize()?;
        let cols = r.usize()?;
        let weight = Array2::from_shape_vec((rows, cols), r.f64s(rows * cols)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let bias = Array1::from_vec(r.f64s(rows)?);
        layers.push(Dense { weight, bias });
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after layers".into()));
    }
    let net = DenoiserNet::from_layers(dim, embedding, activation, layers)?;
    DiffusionModel::new(schedule, net, domain)
}

pub fn save(model: &DiffusionModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<DiffusionModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Hex SHA-256 of arbitrary bytes, used for manifests.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::schedule::linear_schedule;

    fn model() -> DiffusionModel {
        let s = linear_schedule(5, 1e-4, 0.2, SigmaKind::Beta).unwrap();
        let net = DenoiserNet::new(
            2,
            &[8, 8],
            TimeEmbedding::new(4).unwrap(),
            Activation::Tanh,
            &mut stream(1),
        )
        .unwrap();
        DiffusionModel::new(s, net, DomainBox::centered_cube(2, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = encode(&m);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.net.params(), m.net.params());
        assert_eq!(back.schedule, m.schedule);
        assert_eq!(back.domain, m.domain);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode(&model());
        bytes[40] ^= 1;
        assert!(matches!(decode(&bytes), Err(Error::Checkpoint(_))));
        assert!(decode(b"garbage").is_err());
        let good = encode(&model());
        assert!(decode(&good[..good.len() - 1]).is_err());
    }
}
