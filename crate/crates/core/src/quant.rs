//! Absmax quantization and the streaming reductions that feed it.
//!
//! Every cross-core hand-off carries a [`QuantVector`]: INT8 codes plus one
//! scale for the whole vector. Reductions (absmax, running max / sum of
//! exponentials, sum of squares) are folded element by element as tiles
//! arrive, and quantization happens once, after the last element.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest code magnitude. The range is symmetric so negation is closed.
pub const QMAX: i32 = 127;

/// Default epsilon for RMSNorm.
pub const RMS_EPS: f64 = 1e-6;

/// An integer vector with a single dequantization scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantVector {
    pub data: Vec<i8>,
    pub scale: f64,
}

impl QuantVector {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.data.iter().map(|&q| q as f64 * self.scale).collect()
    }

    /// Size on the wire: one byte per code plus a 32-bit scale.
    pub fn wire_bytes(&self) -> u64 {
        self.data.len() as u64 + crate::memsys::SCALE_BYTES
    }
}

/// Symmetric per-vector absmax quantization.
///
/// `scale = max|x| / 127` and codes are rounded half away from zero. An
/// all-zero vector maps to zero codes with scale 1.
pub fn absmax_quantize(x: &[f64]) -> Result<QuantVector> {
    let mut barrier = QuantBarrier::new(x.len())?;
    barrier.push_tile(x)?;
    barrier.fire()
}

/// Requantize the integer output of a GEMM stream whose real value is
/// `acc[i] * in_scale`.
pub fn requantize_accumulators(acc: &[i32], in_scale: f64) -> Result<QuantVector> {
    if !(in_scale.is_finite() && in_scale > 0.0) {
        return Err(Error::invalid(format!("producer scale must be positive, got {in_scale}")));
    }
    let mut barrier = QuantBarrier::new(acc.len())?;
    for &a in acc {
        barrier.push(a as f64 * in_scale)?;
    }
    barrier.fire()
}

fn quantize_with_absmax(x: &[f64], absmax: f64) -> QuantVector {
    if absmax == 0.0 {
        return QuantVector { data: vec![0; x.len()], scale: 1.0 };
    }
    // x * 127 / absmax keeps exact half-way points exact (0.5 -> 63.5).
    let data = x
        .iter()
        .map(|&v| {
            let q = (v * QMAX as f64 / absmax).round();
            q.clamp(-(QMAX as f64), QMAX as f64) as i8
        })
        .collect();
    QuantVector { data, scale: absmax / QMAX as f64 }
}

/// Collects a vector tile by tile and quantizes it once the whole vector has
/// arrived. The absmax reduction is the synchronization point: `fire` refuses
/// to emit anything until `expected` elements were consumed.
#[derive(Debug, Clone)]
pub struct QuantBarrier {
    expected: usize,
    values: Vec<f64>,
    absmax: f64,
}

impl QuantBarrier {
    pub fn new(expected: usize) -> Result<Self> {
        if expected == 0 {
            return Err(Error::invalid("cannot quantize an empty vector"));
        }
        Ok(Self { expected, values: Vec::with_capacity(expected), absmax: 0.0 })
    }

    pub fn push(&mut self, v: f64) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::invalid(format!("non-finite element {v}")));
        }
        if self.values.len() == self.expected {
            return Err(Error::invalid("barrier received more elements than expected"));
        }
        self.absmax = self.absmax.max(v.abs());
        self.values.push(v);
        Ok(())
    }

    pub fn push_tile(&mut self, tile: &[f64]) -> Result<()> {
        tile.iter().try_for_each(|&v| self.push(v))
    }

    pub fn consumed(&self) -> usize {
        self.values.len()
    }

    pub fn is_complete(&self) -> bool {
        self.values.len() == self.expected
    }

    pub fn fire(self) -> Result<QuantVector> {
        if !self.is_complete() {
            return Err(Error::invalid(format!(
                "barrier fired after {} of {} elements",
                self.values.len(),
                self.expected
            )));
        }
        Ok(quantize_with_absmax(&self.values, self.absmax))
    }
}

/// Running reductions folded over a stream of reals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionState {
    pub running_max: f64,
    pub running_sum_exp: f64,
    /// `sum (x_i / abs_max)^2`; scaled so huge inputs do not overflow.
    pub scaled_sum_squares: f64,
    pub abs_max: f64,
    pub count: usize,
}

impl Default for ReductionState {
    fn default() -> Self {
        Self { running_max: f64::NEG_INFINITY, running_sum_exp: 0.0, scaled_sum_squares: 0.0, abs_max: 0.0, count: 0 }
    }
}

impl ReductionState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fold one element. Keeps `running_sum_exp == sum exp(x_i - running_max)`.
    pub fn push(&mut self, x: f64) {
        if x > self.running_max {
            // rescale the old sum to the new reference point
            self.running_sum_exp = self.running_sum_exp * (self.running_max - x).exp() + 1.0;
            self.running_max = x;
        } else {
            self.running_sum_exp += (x - self.running_max).exp();
        }
        let a = x.abs();
        if a > self.abs_max {
            let r = self.abs_max / a;
            self.scaled_sum_squares = 1.0 + self.scaled_sum_squares * r * r;
            self.abs_max = a;
        } else if a > 0.0 {
            let r = a / self.abs_max;
            self.scaled_sum_squares += r * r;
        }
        self.count += 1;
    }

    /// Root mean square; finite for any finite input.
    pub fn rms(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.abs_max * (self.scaled_sum_squares / self.count as f64).sqrt()
        }
    }

    pub fn mean_square(&self) -> f64 {
        let r = self.rms();
        r * r
    }
}

impl Extend<f64> for ReductionState {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        iter.into_iter().for_each(|x| self.push(x));
    }
}

/// Softmax with one streaming reduction pass and one normalization pass.
pub fn streaming_softmax<I>(scores: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = f64>,
{
    let mut state = ReductionState::new();
    let mut buf = Vec::new();
    for x in scores {
        if !x.is_finite() {
            return Err(Error::invalid(format!("non-finite score {x}")));
        }
        state.push(x);
        buf.push(x);
    }
    if buf.is_empty() {
        return Err(Error::invalid("softmax over an empty stream"));
    }
    let m = state.running_max;
    let inv = 1.0 / state.running_sum_exp;
    for x in &mut buf {
        *x = (*x - m).exp() * inv;
    }
    Ok(buf)
}

/// RMSNorm whose sum of squares accumulates while the stream arrives.
pub fn streaming_rms_norm<I>(x: I, gain: &[f64], eps: f64) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = f64>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let mut state = ReductionState::new();
    let mut buf = Vec::with_capacity(gain.len());
    for v in x {
        state.push(v);
        buf.push(v);
    }
    if buf.len() != gain.len() {
        return Err(Error::invalid(format!("rmsnorm length mismatch: {} elements, {} gains", buf.len(), gain.len())));
    }
    let rms = state.rms();
    let inv_rms =
        if rms > 1.0 { 1.0 / (rms * (1.0 + eps / (rms * rms)).sqrt()) } else { 1.0 / (rms * rms + eps).sqrt() };
    for (v, g) in buf.iter_mut().zip(gain) {
        *v = g * *v * inv_rms;
    }
    Ok(buf)
}
