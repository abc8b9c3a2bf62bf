//! Binary checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//!  0      4     magic "SINR"
//!  4      2     format version (1)
//!  6      1     model kind: 0 image, 1 audio, 2 radiance
//!  7      1     activation code (relu, elu, selu, sigmoid, softplus, tanh, sine = 0..6)
//!  8      8     omega0 (f64)
//! 16      4     input dimension (u32)
//! 20      4     output dimension (u32)
//! 24      4     extent a: image rows | audio length | samples per ray
//! 28      4     extent b: image cols | audio sample rate | 0
//! 32      4     encoding levels, 0xFFFF_FFFF when there is no encoding
//! 36      1     encoding keeps raw input (0 or 1)
//! 37      3     zero padding
//! 40      4     layer count
//! 44      ...   per layer: fan_out (u32), fan_in (u32),
//!               fan_out * fan_in weights (row-major f64), fan_out biases (f64)
//! ```

use std::path::Path;

use sobolev_core::encoding::EncodingConfig;
use sobolev_core::network::{ActivationKind, Layer, MlpParams};
use sobolev_core::Grid2D;

use crate::error::{FormatError, Result};

pub const MAGIC: [u8; 4] = *b"SINR";
pub const VERSION: u16 = 1;
const NO_ENCODING: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Image { rows: u32, cols: u32 },
    Audio { len: u32, sample_rate: u32 },
    Radiance { samples_per_ray: u32 },
}

impl ModelKind {
    fn code(self) -> u8 {
        match self {
            ModelKind::Image { .. } => 0,
            ModelKind::Audio { .. } => 1,
            ModelKind::Radiance { .. } => 2,
        }
    }

    fn extents(self) -> (u32, u32) {
        match self {
            ModelKind::Image { rows, cols } => (rows, cols),
            ModelKind::Audio { len, sample_rate } => (len, sample_rate),
            ModelKind::Radiance { samples_per_ray } => (samples_per_ray, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub params: MlpParams,
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n)
        .map_err(|_| FormatError::Checkpoint(format!("{what} {n} does not fit in 32 bits")))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.params;
        let mut out = Vec::with_capacity(44 + 8 * p.num_params() + 8 * p.layers.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.push(p.activation.kind().code());
        out.extend_from_slice(&p.activation.omega0().to_le_bytes());
        out.extend_from_slice(&u32_of(p.input_dim, "input dimension")?.to_le_bytes());
        out.extend_from_slice(&u32_of(p.output_dim(), "output dimension")?.to_le_bytes());
        let (a, b) = self.kind.extents();
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
        let (levels, raw) = match &p.encoding {
            Some(e) => (
                u32_of(e.num_frequencies, "encoding levels")?,
                e.include_input as u8,
            ),
            None => (NO_ENCODING, 0),
        };
        out.extend_from_slice(&levels.to_le_bytes());
        out.extend_from_slice(&[raw, 0, 0, 0]);
        out.extend_from_slice(&u32_of(p.layers.len(), "layer count")?.to_le_bytes());
        for layer in &p.layers {
            out.extend_from_slice(&u32_of(layer.fan_out(), "fan-out")?.to_le_bytes());
            out.extend_from_slice(&u32_of(layer.fan_in(), "fan-in")?.to_le_bytes());
            for v in layer.weight.data().iter().chain(&layer.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(FormatError::Checkpoint("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(FormatError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let kind_code = r.u8()?;
        let activation = ActivationKind::from_code(r.u8()?)?;
        let omega0 = r.f64()?;
        let input_dim = r.u32()? as usize;
        let output_dim = r.u32()? as usize;
        let (a, b) = (r.u32()?, r.u32()?);
        let levels = r.u32()?;
        let raw = r.u8()?;
        r.take(3)?;
        let kind = match kind_code {
            0 => ModelKind::Image { rows: a, cols: b },
            1 => ModelKind::Audio {
                len: a,
                sample_rate: b,
            },
            2 => ModelKind::Radiance { samples_per_ray: a },
            k => return Err(FormatError::Checkpoint(format!("unknown model kind {k}"))),
        };
        let encoding = (levels != NO_ENCODING).then_some(EncodingConfig {
            num_frequencies: levels as usize,
            include_input: raw != 0,
        });
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let fan_out = r.u32()? as usize;
            let fan_in = r.u32()? as usize;
            let n = fan_out
                .checked_mul(fan_in)
                .ok_or_else(|| FormatError::Checkpoint("layer size overflows".into()))?;
            let weights = r.f64_vec(n)?;
            let bias = r.f64_vec(fan_out)?;
            layers.push(Layer {
                weight: Grid2D::from_vec(fan_out, fan_in, 1, weights)?,
                bias,
            });
        }
        if r.pos != bytes.len() {
            return Err(FormatError::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let params =
            MlpParams::from_layers(layers, activation.with_omega(omega0), encoding, input_dim)?;
        if params.output_dim() != output_dim {
            return Err(FormatError::Checkpoint(format!(
                "header says {output_dim} outputs, layers give {}",
                params.output_dim()
            )));
        }
        Ok(Checkpoint { kind, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| FormatError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| FormatError::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| FormatError::Checkpoint("layer size overflows".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}
