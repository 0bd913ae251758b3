use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Conv backbone (3x3, stride 2, pad 1, ReLU per block) + global average
/// pool + two-layer projection head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderArch {
    pub input_size: usize,
    pub in_channels: usize,
    pub conv_channels: Vec<usize>,
    pub hidden_dim: usize,
    pub feat_dim: usize,
}

impl Default for EncoderArch {
    fn default() -> Self {
        Self {
            input_size: 64,
            in_channels: 3,
            conv_channels: vec![16, 32, 64, 128],
            hidden_dim: 128,
            feat_dim: 64,
        }
    }
}

/// Spatial size after one 3x3 / stride 2 / pad 1 convolution.
pub fn conv_out(size: usize) -> usize {
    (size + 1) / 2
}

impl EncoderArch {
    pub fn validate(&self) -> Result<()> {
        if self.feat_dim < 2 {
            return Err(Error::Config("encoder: feat_dim must be at least 2".into()));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::Config("encoder: conv channels must be non-empty and positive".into()));
        }
        if self.input_size == 0 || self.in_channels == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("encoder: sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn pooled_dim(&self) -> usize {
        *self.conv_channels.last().expect("validated")
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.input_size * self.input_size
    }

    /// Input `(channels, size)` of every conv block.
    pub fn conv_inputs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.conv_channels.len());
        let (mut c, mut s) = (self.in_channels, self.input_size);
        for &oc in &self.conv_channels {
            out.push((c, s));
            c = oc;
            s = conv_out(s);
        }
        out
    }

    /// Tensor names and shapes in serialization order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Vec::new();
        let mut c_in = self.in_channels;
        for (i, &c_out) in self.conv_channels.iter().enumerate() {
            shapes.push((format!("conv{i}.weight"), vec![c_out, c_in, 3, 3]));
            shapes.push((format!("conv{i}.bias"), vec![c_out]));
            c_in = c_out;
        }
        shapes.push(("head0.weight".into(), vec![self.hidden_dim, self.pooled_dim()]));
        shapes.push(("head0.bias".into(), vec![self.hidden_dim]));
        shapes.push(("head1.weight".into(), vec![self.feat_dim, self.hidden_dim]));
        shapes.push(("head1.bias".into(), vec![self.feat_dim]));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Ordered named tensors; the order is fixed by [`EncoderArch::param_shapes`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros(arch: &EncoderArch) -> Self {
        let tensors = arch
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                Tensor {
                    name,
                    shape,
                    data: vec![T::zero(); n],
                }
            })
            .collect();
        Self { tensors }
    }

    /// He-normal weights, zero biases; the last head layer uses unit gain.
    pub fn init(arch: &EncoderArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(arch);
        let last = params.tensors.len() - 2;
        for (i, t) in params.tensors.iter_mut().enumerate() {
            if !t.name.ends_with("weight") {
                continue;
            }
            let fan_in: usize = t.shape[1..].iter().product();
            let gain = if i == last { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("valid std");
            for v in &mut t.data {
                *v = T::lit(normal.sample(&mut rng));
            }
        }
        params
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: vec![T::zero(); t.data.len()],
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.data.len() == b.data.len())
    }

    pub fn check_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("parameter sets differ in layout".into()))
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// `self += other`
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a = *a + *b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::lit(v.to_f64().unwrap())).collect(),
                })
                .collect(),
        }
    }

    /// FNV-1a over the little-endian bytes; used to prove parameters are
    /// untouched.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.len() * T::BYTES);
        for v in self.values() {
            v.write_le(&mut bytes);
        }
        bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

const MAGIC: &[u8; 8] = b"NAVMOCK1";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    arch: EncoderArch,
    dtype: String,
    endianness: String,
    tensors: Vec<TensorHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

/// Checkpoint layout: 8-byte magic, u64 LE header length, JSON header
/// (architecture, dtype, endianness, tensor names and shapes), then each
/// tensor's little-endian payload in header order.
pub fn write_checkpoint<T: Scalar, W: Write>(
    mut w: W,
    arch: &EncoderArch,
    params: &ParamSet<T>,
) -> Result<()> {
    let header = CheckpointHeader {
        arch: arch.clone(),
        dtype: T::DTYPE.into(),
        endianness: "little".into(),
        tensors: params
            .tensors
            .iter()
            .map(|t| TensorHeader {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let mut payload = Vec::with_capacity(params.len() * T::BYTES);
    for v in params.values() {
        v.write_le(&mut payload);
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<(EncoderArch, ParamSet<T>)> {
    let bad = |detail: String| Error::Format {
        what: "checkpoint".into(),
        detail,
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let header: CheckpointHeader = serde_json::from_slice(&header)?;
    if header.dtype != T::DTYPE || header.endianness != "little" {
        return Err(bad(format!(
            "expected little-endian {}, found {} {}",
            T::DTYPE,
            header.endianness,
            header.dtype
        )));
    }
    let expected = header.arch.param_shapes();
    if expected.len() != header.tensors.len()
        || expected
            .iter()
            .zip(&header.tensors)
            .any(|((n, s), t)| *n != t.name || *s != t.shape)
    {
        return Err(bad("tensor table does not match the architecture".into()));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        let mut raw = vec![0u8; n * T::BYTES];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        tensors.push(Tensor {
            name: t.name,
            shape: t.shape,
            data,
        });
    }
    Ok((header.arch, ParamSet { tensors }))
}
