//! Bit-level arithmetic shared by both compute cores: the 2-bit ternary
//! codec, the select-negate unit, and radix-4 Booth recoding with the
//! bit-serial shift-add multiply.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A ternary weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ternary {
    Neg,
    Zero,
    Pos,
}

impl Ternary {
    pub const ALL: [Ternary; 3] = [Ternary::Neg, Ternary::Zero, Ternary::Pos];

    /// 2-bit code: 00 -> 0, 01 -> +1, 11 -> -1. Code 10 is reserved.
    pub fn code(self) -> u8 {
        match self {
            Ternary::Zero => 0b00,
            Ternary::Pos => 0b01,
            Ternary::Neg => 0b11,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0b00 => Ok(Ternary::Zero),
            0b01 => Ok(Ternary::Pos),
            0b11 => Ok(Ternary::Neg),
            other => Err(Error::IllegalCode(other)),
        }
    }

    pub fn value(self) -> i8 {
        match self {
            Ternary::Neg => -1,
            Ternary::Zero => 0,
            Ternary::Pos => 1,
        }
    }
}

impl TryFrom<i32> for Ternary {
    type Error = Error;

    fn try_from(v: i32) -> Result<Self> {
        match v {
            -1 => Ok(Ternary::Neg),
            0 => Ok(Ternary::Zero),
            1 => Ok(Ternary::Pos),
            _ => Err(Error::invalid(format!("{v} is not a ternary value"))),
        }
    }
}

/// The TINT selector: 0, +a or -a. No multiplier involved.
#[inline]
pub fn sel(w: Ternary, a: i8) -> i16 {
    match w {
        Ternary::Zero => 0,
        Ternary::Pos => a as i16,
        Ternary::Neg => -(a as i16),
    }
}

/// [`sel`] on a raw 2-bit code.
pub fn sel_code(code: u8, a: i8) -> Result<i16> {
    Ternary::from_code(code).map(|w| sel(w, a))
}

/// Radix-4 Booth digits, least significant first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoothRecoding {
    pub digits: Vec<i8>,
    pub iterations: u32,
}

impl BoothRecoding {
    /// `sum_i digits[i] * 4^i`.
    pub fn value(&self) -> i64 {
        self.digits.iter().rev().fold(0i64, |acc, &d| (acc << 2) + d as i64)
    }
}

/// Iterations of the serial Booth loop for a `bits`-wide multiplier.
pub const fn booth_iterations(bits: u32) -> u32 {
    (bits + 2) / 2
}

const MAX_DIGITS: usize = 17;

#[inline]
fn window_digit(hi: i32, mid: i32, lo: i32) -> i8 {
    (-2 * hi + mid + lo) as i8
}

fn check_range(y: i32, bits: u32) -> Result<()> {
    if !(2..=32).contains(&bits) {
        return Err(Error::invalid(format!("unsupported multiplier width {bits}")));
    }
    let min = -(1i64 << (bits - 1));
    let max = (1i64 << (bits - 1)) - 1;
    if (y as i64) < min || (y as i64) > max {
        return Err(Error::invalid(format!("{y} does not fit in {bits} signed bits")));
    }
    Ok(())
}

/// Fills `out` with the Booth digits of `y` and returns how many were written.
/// Bits above the sign bit are sign extended; y_{-1} = 0.
#[inline]
fn recode_into(y: i32, n: usize, out: &mut [i8; MAX_DIGITS]) -> usize {
    let bit = |k: i32| -> i32 {
        if k < 0 {
            0
        } else {
            (y >> k.min(31)) & 1
        }
    };
    for (i, slot) in out.iter_mut().enumerate().take(n) {
        let i = i as i32;
        *slot = window_digit(bit(2 * i + 1), bit(2 * i), bit(2 * i - 1));
    }
    n
}

/// Recode a `bits`-wide two's complement multiplier into radix-4 digits.
pub fn booth_recode(y: i32, bits: u32) -> Result<BoothRecoding> {
    check_range(y, bits)?;
    let n = booth_iterations(bits);
    let mut buf = [0i8; MAX_DIGITS];
    let len = recode_into(y, n as usize, &mut buf);
    Ok(BoothRecoding { digits: buf[..len].to_vec(), iterations: n })
}

/// Ternary operands occupy one zero-padded 3-bit window: -1 -> 110,
/// 0 -> 000, +1 -> 010. One digit, one iteration.
pub fn booth_recode_ternary(w: Ternary) -> BoothRecoding {
    let code = w.code() as i32;
    let window = code << 1;
    let digit = window_digit((window >> 2) & 1, (window >> 1) & 1, window & 1);
    BoothRecoding { digits: vec![digit], iterations: 1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoothMode {
    Int8,
    Ternary,
}

impl BoothMode {
    /// Serial iterations per scalar product in this mode.
    pub const fn iterations(self) -> u32 {
        match self {
            BoothMode::Int8 => booth_iterations(8),
            BoothMode::Ternary => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BoothMode::Int8 => "int8",
            BoothMode::Ternary => "ternary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoothProduct {
    pub product: i32,
    pub cycles: u32,
}

/// Partial-sum register width asserted by the serial loop.
pub const PARTIAL_SUM_BITS: u32 = 20;

/// Partial product selected by one Booth digit: shifts and negation only.
#[inline]
fn partial_product(digit: i8, a: i32) -> i32 {
    match digit {
        0 => 0,
        1 => a,
        -1 => -a,
        2 => a << 1,
        -2 => -(a << 1),
        _ => unreachable!("radix-4 digit out of range: {digit}"),
    }
}

#[inline]
fn serial_accumulate(a: i8, digits: &[i8]) -> i32 {
    let a = a as i32;
    let bound = 1i32 << (PARTIAL_SUM_BITS - 1);
    digits.iter().rev().fold(0i32, |ps, &d| {
        let next = (ps << 2) + partial_product(d, a);
        debug_assert!((-bound..bound).contains(&next), "partial sum {next} overflows 20 bits");
        next
    })
}

/// Bit-serial radix-4 Booth multiply: `PS <- (PS << 2) + PP_i`, most
/// significant digit first, one iteration per cycle.
pub fn booth_multiply(a: i8, y: i32, mode: BoothMode) -> Result<BoothProduct> {
    match mode {
        BoothMode::Int8 => {
            check_range(y, 8)?;
            let mut buf = [0i8; MAX_DIGITS];
            let n = recode_into(y, BoothMode::Int8.iterations() as usize, &mut buf);
            Ok(BoothProduct { product: serial_accumulate(a, &buf[..n]), cycles: n as u32 })
        }
        BoothMode::Ternary => {
            let w = Ternary::try_from(y)?;
            Ok(booth_multiply_ternary(a, w))
        }
    }
}

/// Ternary-mode multiply; cannot fail.
#[inline]
pub fn booth_multiply_ternary(a: i8, w: Ternary) -> BoothProduct {
    let window = (w.code() as i32) << 1;
    let digit = window_digit((window >> 2) & 1, (window >> 1) & 1, window & 1);
    BoothProduct { product: serial_accumulate(a, &[digit]), cycles: 1 }
}

/// Int8-mode multiply on operands that are already known to be in range.
#[inline]
pub fn booth_multiply_i8(a: i8, y: i8) -> BoothProduct {
    let mut buf = [0i8; MAX_DIGITS];
    let n = recode_into(y as i32, BoothMode::Int8.iterations() as usize, &mut buf);
    BoothProduct { product: serial_accumulate(a, &buf[..n]), cycles: n as u32 }
}

/// Packed ternary weight matrix, row-major, four 2-bit codes per byte with
/// the first code in the least significant bits. Each row starts on a byte
/// boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TernaryTensor {
    codes: Vec<u8>,
    rows: usize,
    cols: usize,
    scale: f64,
}

const MAGIC: &[u8; 4] = b"TT01";
/// magic + rows + cols + f64 scale
pub const TERNARY_HEADER_BYTES: usize = 20;

impl TernaryTensor {
    pub fn bytes_per_row(cols: usize) -> usize {
        cols.div_ceil(4)
    }

    /// Pack a row-major matrix of values in {-1, 0, +1}.
    pub fn pack(rows: usize, cols: usize, values: &[i8], scale: f64) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::invalid(format!("{} values for a {rows}x{cols} matrix", values.len())));
        }
        check_scale(scale)?;
        let stride = Self::bytes_per_row(cols);
        let mut codes = vec![0u8; rows * stride];
        for r in 0..rows {
            for c in 0..cols {
                let w = Ternary::try_from(values[r * cols + c] as i32)?;
                codes[r * stride + c / 4] |= w.code() << (2 * (c % 4));
            }
        }
        Ok(Self { codes, rows, cols, scale })
    }

    /// Adopt pre-packed codes, rejecting the reserved code anywhere in the
    /// matrix (padding included).
    pub fn from_packed(rows: usize, cols: usize, codes: Vec<u8>, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        let stride = Self::bytes_per_row(cols);
        if codes.len() != rows * stride {
            return Err(Error::invalid(format!(
                "expected {} packed bytes for {rows}x{cols}, got {}",
                rows * stride,
                codes.len()
            )));
        }
        for (i, &byte) in codes.iter().enumerate() {
            for k in 0..4 {
                let code = (byte >> (2 * k)) & 0b11;
                Ternary::from_code(code)?;
                let col = (i % stride) * 4 + k;
                if col >= cols && code != 0 {
                    return Err(Error::invalid("nonzero code in row padding"));
                }
            }
        }
        Ok(Self { codes, rows, cols, scale })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Ternary {
        let stride = Self::bytes_per_row(self.cols);
        let code = (self.codes[r * stride + c / 4] >> (2 * (c % 4))) & 0b11;
        // validated on construction
        Ternary::from_code(code).expect("validated ternary code")
    }

    pub fn unpack(&self) -> Vec<i8> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(self.get(r, c).value());
            }
        }
        out
    }

    /// Bytes occupied by the packed codes of a `rows x cols` window.
    pub fn packed_bytes(rows: usize, cols: usize) -> u64 {
        (rows * cols * 2).div_ceil(8) as u64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(TERNARY_HEADER_BYTES + self.codes.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&self.scale.to_le_bytes());
        out.extend_from_slice(&self.codes);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < TERNARY_HEADER_BYTES || &bytes[..4] != MAGIC {
            return Err(Error::invalid("not a TT01 ternary tensor"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let rows = u32_at(4);
        let cols = u32_at(8);
        let scale = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
        Self::from_packed(rows, cols, bytes[TERNARY_HEADER_BYTES..].to_vec(), scale)
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if scale.is_finite() && scale > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("tensor scale must be positive, got {scale}")))
    }
}
