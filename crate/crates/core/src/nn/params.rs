use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::spec::ModelSpec;
use crate::rng::{self, tag};
use crate::tensor::Tensor;

pub const PARAMS_MAGIC: &[u8; 4] = b"ABSG";
pub const PARAMS_VERSION: u32 = 1;

/// Named parameter tensors in the order given by [`ModelSpec::param_shapes`].
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    entries: Vec<(String, Tensor)>,
    seed: Option<u64>,
}

impl Params {
    /// Uniform Glorot weights, zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.shapes()?;
        let mut rng = rng::stream(seed, &[tag::INIT]);
        let mut entries = Vec::new();
        for (i, layer) in spec.layers.iter().enumerate() {
            let Some((fan_in, fan_out)) = layer.fans() else { continue };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for (suffix, shape) in layer.param_shapes() {
                let n: usize = shape.iter().product();
                let data = if suffix == "weight" {
                    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
                } else {
                    vec![0.0; n]
                };
                entries.push((format!("layer{i}.{suffix}"), Tensor::new(shape, data)?));
            }
        }
        Ok(Self {
            entries,
            seed: Some(seed),
        })
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, _) in &entries {
            if !seen.insert(name.as_str()) {
                return Err(Error::contract(format!("duplicate parameter name {name:?}")));
            }
        }
        Ok(Self { entries, seed: None })
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// Checks names and shapes against what `spec` expects.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let expected = spec.param_shapes();
        if expected.len() != self.entries.len() {
            return Err(Error::Consistency(format!(
                "model expects {} parameter tensors, found {}",
                expected.len(),
                self.entries.len()
            )));
        }
        for ((name, shape), (have_name, have)) in expected.iter().zip(&self.entries) {
            if name != have_name || shape.as_slice() != have.shape() {
                return Err(Error::Consistency(format!(
                    "parameter {have_name} {:?} does not match model slot {name} {shape:?}",
                    have.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(PARAMS_MAGIC)?;
        w.write_all(&PARAMS_VERSION.to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Parses the binary container; `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(origin, m);
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != PARAMS_MAGIC {
            return Err(bad("bad magic, not a parameter file"));
        }
        let version = read_u32(&mut r).map_err(|_| bad("truncated header"))?;
        if version != PARAMS_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut entries = Vec::new();
        while !r.is_empty() {
            let name_len = read_u32(&mut r).map_err(|_| bad("truncated record"))? as usize;
            if name_len > r.len() {
                return Err(bad("truncated name"));
            }
            let (name, rest) = r.split_at(name_len);
            let name = std::str::from_utf8(name)
                .map_err(|_| bad("parameter name is not utf-8"))?
                .to_string();
            r = rest;
            let rank = read_u32(&mut r).map_err(|_| bad("truncated record"))? as usize;
            if rank > 8 {
                return Err(bad(&format!("implausible rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = read_u64(&mut r).map_err(|_| bad("truncated dims"))?;
                shape.push(usize::try_from(d).map_err(|_| bad("dimension overflow"))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| bad("dimension overflow"))?;
            if n.checked_mul(8).is_none_or(|b| b > r.len()) {
                return Err(bad(&format!("truncated values for {name}")));
            }
            let (values, rest) = r.split_at(n * 8);
            r = rest;
            let data = values
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        Self::from_entries(entries).map_err(|e| bad(&e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> std::io::Result<()> {
    Read::read_exact(r, buf)
}

fn read_u32(r: &mut &[u8]) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
