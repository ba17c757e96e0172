//! Leading-one prediction: a shift-and-add surrogate for `q . k` used to
//! pick the K cached tokens worth fetching, and the comparison-free
//! histogram selector that picks them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::QuantVector;

/// Bits per stored feature: sign, 3-bit exponent, zero flag.
pub const FEATURE_BITS: u64 = 5;

/// Default histogram resolution.
pub const DEFAULT_BUCKETS: usize = 64;

/// Largest leading-one position of a symmetric INT8 code.
pub const MAX_LO: u32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LopFeature {
    pub sign: i8,
    pub lo: u8,
    pub is_zero: bool,
}

impl LopFeature {
    pub const ZERO: LopFeature = LopFeature { sign: 1, lo: 0, is_zero: true };

    pub fn of(x: i8) -> Self {
        if x == 0 {
            return Self::ZERO;
        }
        let mag = x.unsigned_abs();
        LopFeature { sign: x.signum(), lo: (7 - mag.leading_zeros()) as u8, is_zero: false }
    }
}

/// Packed bytes of one stored feature row of length `d`.
pub fn feature_row_bytes(d: usize) -> u64 {
    (d as u64 * FEATURE_BITS).div_ceil(8)
}

pub fn extract_features(v: &QuantVector) -> Vec<LopFeature> {
    v.data.iter().map(|&x| LopFeature::of(x)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurrogateScore {
    pub value: i64,
    pub token: usize,
}

/// `sum_i sgn(q_i) sgn(k_i) 2^(LO(q_i) + LO(k_i))` over pairs where neither
/// side is zero. Each term is a barrel-shifted one added or subtracted.
pub fn surrogate_score(q: &[LopFeature], k: &[LopFeature]) -> Result<i64> {
    if q.len() != k.len() {
        return Err(Error::invalid(format!("feature dimension mismatch: {} vs {}", q.len(), k.len())));
    }
    Ok(q.iter().zip(k).fold(0i64, |acc, (a, b)| {
        if a.is_zero || b.is_zero {
            return acc;
        }
        let term = 1i64 << (a.lo + b.lo);
        if a.sign == b.sign {
            acc + term
        } else {
            acc - term
        }
    }))
}

/// Inclusive integer score range mapped onto the histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub lo: i64,
    pub hi: i64,
}

impl ScoreRange {
    /// `[-d * 2^12, d * 2^12]`, the full reach of the surrogate for
    /// `d`-dimensional symmetric INT8 vectors.
    pub fn for_dim(d: usize) -> Self {
        let r = (d as i64) << (2 * MAX_LO);
        Self { lo: -r, hi: r }
    }

    fn span(&self) -> i128 {
        self.hi as i128 - self.lo as i128 + 1
    }
}

/// Uniform bucketization. Values outside the range saturate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bucketizer {
    pub range: ScoreRange,
    pub buckets: usize,
}

impl Bucketizer {
    pub fn new(range: ScoreRange, buckets: usize) -> Result<Self> {
        if buckets < 2 {
            return Err(Error::invalid(format!("need at least 2 buckets, got {buckets}")));
        }
        if range.hi < range.lo {
            return Err(Error::invalid("empty score range"));
        }
        Ok(Self { range, buckets })
    }

    pub fn bucket(&self, score: i64) -> usize {
        let s = score.clamp(self.range.lo, self.range.hi);
        (((s as i128 - self.range.lo as i128) * self.buckets as i128) / self.range.span()) as usize
    }

    /// Smallest score that lands in bucket `b`.
    pub fn lower_bound(&self, b: usize) -> i64 {
        // ceil(b * span / buckets) + lo
        let num = b as i128 * self.range.span();
        (num.div_euclid(self.buckets as i128)
            + (num.rem_euclid(self.buckets as i128) != 0) as i128
            + self.range.lo as i128) as i64
    }

    /// One past the largest score that lands in bucket `b`.
    pub fn upper_bound(&self, b: usize) -> i64 {
        self.lower_bound(b + 1)
    }

    /// Widest bucket, in score units.
    pub fn bucket_width(&self) -> i64 {
        (self.range.span() as u128).div_ceil(self.buckets as u128) as i64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopKSelection {
    /// Kept token indices in emission order: buckets above the cut first,
    /// then the cut bucket, each in ascending token order.
    pub kept: Vec<usize>,
    pub cut_bin: Option<usize>,
    pub histogram: Vec<u32>,
    /// Number of scored candidates.
    pub candidates: usize,
}

impl TopKSelection {
    pub fn empty(buckets: usize) -> Self {
        Self { kept: Vec::new(), cut_bin: None, histogram: vec![0; buckets], candidates: 0 }
    }

    pub fn sorted_kept(&self) -> Vec<usize> {
        let mut v = self.kept.clone();
        v.sort_unstable();
        v
    }

    /// Everything scored was kept.
    pub fn all(m: usize) -> Self {
        Self { kept: (0..m).collect(), cut_bin: None, histogram: Vec::new(), candidates: m }
    }
}

/// Comparison-free top-K.
///
/// 1. histogram the scores into uniform buckets;
/// 2. scan the histogram from the top, stopping at the first bucket where
///    the running count reaches `k` (the cut bin);
/// 3. emit every token above the cut bin, then cut-bin tokens in ascending
///    token order until `k` are out.
///
/// With `k >= M` everything is kept and the cut bin is the lowest occupied
/// bucket.
pub fn select_top_k(scores: &[SurrogateScore], k: usize, bucketizer: &Bucketizer) -> Result<TopKSelection> {
    if k < 1 {
        return Err(Error::invalid("top-K needs K >= 1"));
    }
    let b = bucketizer.buckets;
    let bins: Vec<usize> = scores.iter().map(|s| bucketizer.bucket(s.value)).collect();
    let mut histogram = vec![0u32; b];
    for &bin in &bins {
        histogram[bin] += 1;
    }

    let mut cumulative = 0usize;
    let mut cut_bin = None;
    for bin in (0..b).rev() {
        cumulative += histogram[bin] as usize;
        if histogram[bin] > 0 {
            cut_bin = Some(bin);
        }
        if cumulative >= k {
            break;
        }
    }

    let mut kept = Vec::with_capacity(k.min(scores.len()));
    if let Some(cut) = cut_bin {
        // priority-encoder passes over the token stream
        kept.extend(scores.iter().zip(&bins).filter(|(_, &bin)| bin > cut).map(|(s, _)| s.token));
        let room = k - kept.len();
        kept.extend(scores.iter().zip(&bins).filter(|(_, &bin)| bin == cut).map(|(s, _)| s.token).take(room));
    }
    Ok(TopKSelection { kept, cut_bin, histogram, candidates: scores.len() })
}

/// Keep every token whose bucket is at or above the bucket of `threshold`.
pub fn select_threshold(scores: &[SurrogateScore], threshold: i64, bucketizer: &Bucketizer) -> TopKSelection {
    let mut histogram = vec![0u32; bucketizer.buckets];
    let cut = bucketizer.bucket(threshold);
    let mut kept = Vec::new();
    for s in scores {
        let bin = bucketizer.bucket(s.value);
        histogram[bin] += 1;
        if bin >= cut {
            kept.push(s.token);
        }
    }
    TopKSelection { kept, cut_bin: Some(cut), histogram, candidates: scores.len() }
}

/// How the gate picks candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum SelectorMode {
    TopK(usize),
    Threshold(i64),
}

/// Score every cached token against `q` and select candidates for exact
/// attention.
pub fn lop_gate(
    q: &QuantVector,
    cached: &[Vec<LopFeature>],
    mode: SelectorMode,
    buckets: usize,
) -> Result<TopKSelection> {
    let bucketizer = Bucketizer::new(ScoreRange::for_dim(q.len()), buckets)?;
    if cached.is_empty() {
        if let SelectorMode::TopK(0) = mode {
            return Err(Error::invalid("top-K needs K >= 1"));
        }
        return Ok(TopKSelection::empty(buckets));
    }
    let qf = extract_features(q);
    let scores = cached
        .iter()
        .enumerate()
        .map(|(token, kf)| Ok(SurrogateScore { value: surrogate_score(&qf, kf)?, token }))
        .collect::<Result<Vec<_>>>()?;
    match mode {
        SelectorMode::TopK(k) => select_top_k(&scores, k, &bucketizer),
        SelectorMode::Threshold(t) => Ok(select_threshold(&scores, t, &bucketizer)),
    }
}
