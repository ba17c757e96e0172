//! TINT core: a multiplier-free output-stationary array for ternary x INT8
//! GEMM. Each PE folds `sel(w, a)` into a local accumulator; one inner-dim
//! step per cycle across the whole array.

use crate::arith::{sel, TernaryTensor};
use crate::error::{Error, Result};
use crate::matrix::{output_tiles, AccMatrix, I8Matrix, TileOutput, TileRect};

pub const DEFAULT_ARRAY: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TintCore {
    pub array_rows: usize,
    pub array_cols: usize,
    /// Fixed per-tile fill/drain cost. Zero by default.
    pub tile_setup_cycles: u64,
    pub busy_cycles: u64,
    pub idle_cycles: u64,
    pub tiles_emitted: u64,
    pub macs: u64,
}

impl Default for TintCore {
    fn default() -> Self {
        Self::new(DEFAULT_ARRAY, DEFAULT_ARRAY, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GemmOutput {
    pub acc: AccMatrix,
    pub cycles: u64,
}

pub(crate) fn check_ternary_shapes(lhs: &I8Matrix, w: &TernaryTensor) -> Result<()> {
    if lhs.cols() != w.rows() {
        return Err(Error::invalid(format!(
            "inner dimensions disagree: activations {}x{}, weights {}x{}",
            lhs.rows(),
            lhs.cols(),
            w.rows(),
            w.cols()
        )));
    }
    Ok(())
}

pub(crate) fn check_rect(rect: TileRect, n: usize, m: usize, ar: usize, ac: usize) -> Result<()> {
    if rect.rows == 0
        || rect.cols == 0
        || rect.rows > ar
        || rect.cols > ac
        || rect.row0 + rect.rows > n
        || rect.col0 + rect.cols > m
    {
        return Err(Error::invalid(format!("tile {rect:?} does not fit {n}x{m} on {ar}x{ac}")));
    }
    Ok(())
}

impl TintCore {
    pub fn new(array_rows: usize, array_cols: usize, tile_setup_cycles: u64) -> Self {
        assert!(array_rows > 0 && array_cols > 0, "empty PE array");
        Self { array_rows, array_cols, tile_setup_cycles, busy_cycles: 0, idle_cycles: 0, tiles_emitted: 0, macs: 0 }
    }

    /// Peak select-accumulates per cycle.
    pub fn peak_macs_per_cycle(&self) -> u64 {
        (self.array_rows * self.array_cols) as u64
    }

    pub fn tile_cycles(&self, inner: usize) -> u64 {
        inner as u64 + self.tile_setup_cycles
    }

    /// Closed-form cycle count of an `n x d` by `d x m` GEMM. Ragged edge
    /// tiles pay for a full tile with masked lanes.
    pub fn gemm_cycles(&self, n: usize, d: usize, m: usize) -> u64 {
        (n.div_ceil(self.array_rows) * m.div_ceil(self.array_cols)) as u64 * self.tile_cycles(d)
    }

    /// Execute one output tile. Partial sums stay in the tile until it is
    /// emitted whole.
    pub fn run_tile(&mut self, lhs: &I8Matrix, weights: &TernaryTensor, rect: TileRect) -> Result<TileOutput> {
        check_ternary_shapes(lhs, weights)?;
        check_rect(rect, lhs.rows(), weights.cols(), self.array_rows, self.array_cols)?;
        let d = lhs.cols();
        let mut acc = vec![0i32; rect.rows * rect.cols];
        for k in 0..d {
            // one cycle: broadcast activation column k, consume a row of weights
            for c in 0..rect.cols {
                let w = weights.get(k, rect.col0 + c);
                for r in 0..rect.rows {
                    acc[r * rect.cols + c] += sel(w, lhs.get(rect.row0 + r, k)) as i32;
                }
            }
        }
        let cycles = self.tile_cycles(d);
        self.busy_cycles += cycles;
        self.tiles_emitted += 1;
        self.macs += (rect.rows * rect.cols * d) as u64;
        Ok(TileOutput { rect, acc, cycles })
    }

    pub fn gemm(&mut self, lhs: &I8Matrix, weights: &TernaryTensor) -> Result<GemmOutput> {
        check_ternary_shapes(lhs, weights)?;
        let (n, m) = (lhs.rows(), weights.cols());
        let mut acc = AccMatrix::zeros(n, m);
        let mut cycles = 0;
        for rect in output_tiles(n, m, self.array_rows, self.array_cols) {
            let tile = self.run_tile(lhs, weights, rect)?;
            cycles += tile.cycles;
            tile.scatter_into(&mut acc);
        }
        Ok(GemmOutput { acc, cycles })
    }

    /// Close the books at `elapsed` scheduler cycles.
    pub fn account_elapsed(&mut self, elapsed: u64) -> Result<()> {
        if self.busy_cycles > elapsed {
            return Err(Error::invariant(format!("TINT busy {} exceeds elapsed {elapsed}", self.busy_cycles)));
        }
        self.idle_cycles = elapsed - self.busy_cycles;
        Ok(())
    }

    pub fn utilization(&self) -> f64 {
        let total = self.busy_cycles + self.idle_cycles;
        if total == 0 {
            0.0
        } else {
            self.busy_cycles as f64 / total as f64
        }
    }

    /// Fraction of peak MACs actually used while busy.
    pub fn mac_efficiency(&self) -> f64 {
        if self.busy_cycles == 0 {
            0.0
        } else {
            self.macs as f64 / (self.peak_macs_per_cycle() * self.busy_cycles) as f64
        }
    }
}
