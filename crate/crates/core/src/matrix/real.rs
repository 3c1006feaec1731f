use std::cmp::Ordering;
use std::fmt::{Debug, Display, LowerExp};
use std::str::FromStr;

use num_traits::Float;

use crate::abft::DmrValue;

/// Storage precision of a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    /// Element width in bytes; also the tag byte used by the binary format.
    pub fn bytes(self) -> usize {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }

    pub fn bits(self) -> u32 {
        self.bytes() as u32 * 8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            4 => Some(Precision::Single),
            8 => Some(Precision::Double),
            _ => None,
        }
    }

    /// Range of exponent-field bit indices.
    pub fn exponent_bits(self) -> std::ops::Range<u32> {
        match self {
            Precision::Single => 23..31,
            Precision::Double => 52..63,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" | "f32" | "fp32" | "float" => Ok(Precision::Single),
            "double" | "f64" | "fp64" => Ok(Precision::Double),
            other => Err(format!("unknown precision '{other}'")),
        }
    }
}

/// Floating-point element type usable by the engine (`f32` or `f64`).
pub trait Real:
    Float + DmrValue + Default + Debug + Display + LowerExp + FromStr + Send + Sync + 'static
{
    const PRECISION: Precision;
    const BITS: u32;

    fn to_bits_u64(self) -> u64;
    fn from_bits_u64(bits: u64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn total_order(&self, other: &Self) -> Ordering;

    /// Bitwise equality (distinguishes `-0.0`, compares NaN payloads).
    fn bit_eq(self, other: Self) -> bool {
        self.to_bits_u64() == other.to_bits_u64()
    }

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Single;
    const BITS: u32 = 32;

    fn to_bits_u64(self) -> u64 {
        self.to_bits() as u64
    }
    fn from_bits_u64(bits: u64) -> Self {
        f32::from_bits(bits as u32)
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn total_order(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Double;
    const BITS: u32 = 64;

    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }
    fn from_bits_u64(bits: u64) -> Self {
        f64::from_bits(bits)
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn total_order(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}
