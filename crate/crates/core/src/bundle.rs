//! Binary container for a trained weight bank.
//!
//! Layout, all little-endian:
//!
//! | field        | type        |
//! |--------------|-------------|
//! | magic        | `b"INRB"`   |
//! | version      | u16 (= 1)   |
//! | N            | u8          |
//! | M            | u16         |
//! | l            | u8          |
//! | n            | u16         |
//! | omega0       | f32         |
//! | B_P          | u8 (= 16)   |
//! | H, W         | u16, u16    |
//! | C            | u8          |
//! | alpha        | M*N f32, row-major |
//! | gamma        | M f32       |
//! | weight sets  | N * P binary16 |
//!
//! Each weight set is written layer 0 first, weights row-major then biases.

use half::f16;
use ndarray::Array2;
use thiserror::Error;

use crate::imaging::ImageDims;
use crate::siren::{param_count, NetworkArch, WeightSet};
use crate::weight_space::{bpp, CombinerSpec, ThetaBank};

pub const MAGIC: [u8; 4] = *b"INRB";
pub const FORMAT_VERSION: u16 = 1;
pub const BITS_PER_PARAM: u8 = 16;
/// Bytes before the combiner matrix.
pub const FIXED_HEADER_LEN: usize = 22;
/// Gamma is stored as f32, so its sum is only exact to single precision.
const STORED_GAMMA_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BundleError {
    #[error("not a bundle: bad magic bytes")]
    BadMagic,
    #[error("unsupported bundle version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated bundle: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("bundle length {actual} disagrees with header ({expected} bytes)")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid bundle header: {0}")]
    InvalidHeader(String),
    #[error("cannot encode bundle: {0}")]
    Unencodable(String),
}

/// A decoded bundle. Weights hold the stored half-precision values widened to f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub arch: NetworkArch,
    pub bank: ThetaBank,
    pub spec: CombinerSpec,
    pub dims: ImageDims,
    pub bits_per_param: u8,
}

pub fn header_len(m: usize, n: usize) -> usize {
    FIXED_HEADER_LEN + 4 * m * n + 4 * m
}

/// Total encoded size of a bundle.
pub fn encoded_len(arch: &NetworkArch, n: usize, m: usize) -> usize {
    header_len(m, n) + n * param_count(arch) * (BITS_PER_PARAM as usize / 8)
}

fn limit(name: &str, value: usize, max: usize) -> Result<(), BundleError> {
    if value > max {
        return Err(BundleError::Unencodable(format!("{name}={value} exceeds {max}")));
    }
    Ok(())
}

/// Encode a bank; weights are rounded to nearest-even binary16.
pub fn serialize(
    bank: &ThetaBank,
    spec: &CombinerSpec,
    arch: &NetworkArch,
    dims: ImageDims,
) -> Result<Vec<u8>, BundleError> {
    if bank.arch() != arch {
        return Err(BundleError::Unencodable("bank architecture differs from header".into()));
    }
    if spec.n() != bank.len() {
        return Err(BundleError::Unencodable(format!(
            "combiner has {} columns, bank has {} sets",
            spec.n(),
            bank.len()
        )));
    }
    if dims.channels != 1 && dims.channels != 3 {
        return Err(BundleError::Unencodable(format!("channel count {}", dims.channels)));
    }
    limit("N", bank.len(), u8::MAX as usize)?;
    limit("M", spec.m(), u16::MAX as usize)?;
    limit("l", arch.hidden_layers, u8::MAX as usize)?;
    limit("n", arch.neurons, u16::MAX as usize)?;
    limit("H", dims.height, u16::MAX as usize)?;
    limit("W", dims.width, u16::MAX as usize)?;

    let mut out = Vec::with_capacity(encoded_len(arch, bank.len(), spec.m()));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(bank.len() as u8);
    out.extend_from_slice(&(spec.m() as u16).to_le_bytes());
    out.push(arch.hidden_layers as u8);
    out.extend_from_slice(&(arch.neurons as u16).to_le_bytes());
    out.extend_from_slice(&(arch.omega0 as f32).to_le_bytes());
    out.push(BITS_PER_PARAM);
    out.extend_from_slice(&(dims.height as u16).to_le_bytes());
    out.extend_from_slice(&(dims.width as u16).to_le_bytes());
    out.push(dims.channels as u8);
    for a in spec.alpha().iter() {
        out.extend_from_slice(&(*a as f32).to_le_bytes());
    }
    for g in spec.gamma() {
        out.extend_from_slice(&(*g as f32).to_le_bytes());
    }
    for theta in bank.sets() {
        for v in theta.values() {
            out.extend_from_slice(&f16::from_f64(*v).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const K: usize>(&mut self) -> [u8; K] {
        let mut buf = [0u8; K];
        buf.copy_from_slice(&self.bytes[self.pos..self.pos + K]);
        self.pos += K;
        buf
    }

    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }

    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
}

fn need(bytes: &[u8], expected: usize) -> Result<(), BundleError> {
    if bytes.len() < expected {
        return Err(BundleError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(())
}

/// Decode a bundle. Fails without a partial result on any inconsistency.
pub fn deserialize(bytes: &[u8]) -> Result<Bundle, BundleError> {
    need(bytes, MAGIC.len())?;
    if bytes[..4] != MAGIC {
        return Err(BundleError::BadMagic);
    }
    need(bytes, 6)?;
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u16();
    if version != FORMAT_VERSION {
        return Err(BundleError::UnsupportedVersion(version));
    }
    need(bytes, FIXED_HEADER_LEN)?;
    let n_sets = r.u8() as usize;
    let m = r.u16() as usize;
    let layers = r.u8() as usize;
    let neurons = r.u16() as usize;
    let omega0 = r.f32() as f64;
    let bits = r.u8();
    let height = r.u16() as usize;
    let width = r.u16() as usize;
    let channels = r.u8() as usize;

    let invalid = |msg: String| BundleError::InvalidHeader(msg);
    if bits != BITS_PER_PARAM {
        return Err(invalid(format!("bit width {bits}, version 1 stores 16")));
    }
    if n_sets == 0 || m < n_sets {
        return Err(invalid(format!("need M >= N >= 1, got M={m}, N={n_sets}")));
    }
    if height == 0 || width == 0 || (channels != 1 && channels != 3) {
        return Err(invalid(format!("image dims {height}x{width}x{channels}")));
    }
    let arch = NetworkArch::with_omega0(layers, neurons, omega0).map_err(|e| invalid(e.to_string()))?;

    let expected = encoded_len(&arch, n_sets, m);
    need(bytes, expected)?;
    if bytes.len() > expected {
        return Err(BundleError::LengthMismatch {
            expected,
            actual: bytes.len(),
        });
    }

    let alpha: Vec<f64> = (0..m * n_sets).map(|_| r.f32() as f64).collect();
    let gamma: Vec<f64> = (0..m).map(|_| r.f32() as f64).collect();
    let alpha = Array2::from_shape_vec((m, n_sets), alpha).expect("sized above");
    let spec =
        CombinerSpec::with_tolerance(alpha, gamma, STORED_GAMMA_TOLERANCE).map_err(|e| invalid(e.to_string()))?;

    let p = param_count(&arch);
    let mut sets = Vec::with_capacity(n_sets);
    for _ in 0..n_sets {
        let values = (0..p).map(|_| f16::from_le_bytes(r.take()).to_f64()).collect();
        sets.push(WeightSet::from_values(arch, values).expect("sized above"));
    }
    let bank = ThetaBank::new(sets).expect("congruent by construction");
    Ok(Bundle {
        arch,
        bank,
        spec,
        dims: ImageDims {
            height,
            width,
            channels,
        },
        bits_per_param: bits,
    })
}

impl Bundle {
    /// Round-trip a trained bank through the wire format.
    pub fn quantized(bank: &ThetaBank, spec: &CombinerSpec, dims: ImageDims) -> Result<Bundle, BundleError> {
        deserialize(&serialize(bank, spec, bank.arch(), dims)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, BundleError> {
        serialize(&self.bank, &self.spec, &self.arch, self.dims)
    }

    pub fn encoded_len(&self) -> usize {
        encoded_len(&self.arch, self.bank.len(), self.spec.m())
    }

    /// Bits per pixel from the header alone.
    pub fn bpp(&self) -> f64 {
        bpp(
            &self.arch,
            self.bank.len(),
            self.spec.m(),
            self.dims,
            self.bits_per_param as u32,
        )
    }
}
