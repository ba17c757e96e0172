//! BoothFlex core: one radix-4 Booth PE array shared by INT8 x INT8
//! attention (five serial iterations per inner step) and ternary x INT8
//! projections (one iteration per inner step).

use crate::arith::{booth_multiply_i8, booth_multiply_ternary, BoothMode, TernaryTensor};
use crate::error::{Error, Result};
use crate::matrix::{output_tiles, AccMatrix, I8Matrix, TileOutput, TileRect};
use crate::tint::{check_rect, check_ternary_shapes, GemmOutput, DEFAULT_ARRAY};

/// Right-hand operand of a BoothFlex GEMM. The variant must agree with the
/// core's current mode.
#[derive(Debug, Clone, Copy)]
pub enum BoothRhs<'a> {
    Int8(&'a I8Matrix),
    Ternary(&'a TernaryTensor),
}

impl BoothRhs<'_> {
    fn mode(&self) -> BoothMode {
        match self {
            BoothRhs::Int8(_) => BoothMode::Int8,
            BoothRhs::Ternary(_) => BoothMode::Ternary,
        }
    }

    fn shape(&self) -> (usize, usize) {
        match self {
            BoothRhs::Int8(m) => (m.rows(), m.cols()),
            BoothRhs::Ternary(t) => (t.rows(), t.cols()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoothFlexCore {
    pub array_rows: usize,
    pub array_cols: usize,
    pub tile_setup_cycles: u64,
    mode: BoothMode,
    in_flight: bool,
    pub busy_cycles: u64,
    pub idle_cycles: u64,
    pub mode_switches: u64,
    pub tiles_emitted: u64,
}

impl Default for BoothFlexCore {
    fn default() -> Self {
        Self::new(DEFAULT_ARRAY, DEFAULT_ARRAY, 0)
    }
}

impl BoothFlexCore {
    pub fn new(array_rows: usize, array_cols: usize, tile_setup_cycles: u64) -> Self {
        assert!(array_rows > 0 && array_cols > 0, "empty PE array");
        Self {
            array_rows,
            array_cols,
            tile_setup_cycles,
            mode: BoothMode::Int8,
            in_flight: false,
            busy_cycles: 0,
            idle_cycles: 0,
            mode_switches: 0,
            tiles_emitted: 0,
        }
    }

    pub fn mode(&self) -> BoothMode {
        self.mode
    }

    /// Switch datapath mode. Only legal between tiles.
    pub fn set_mode(&mut self, mode: BoothMode) -> Result<()> {
        if self.in_flight {
            return Err(Error::Scheduling(format!("mode switch to {} while a tile is in flight", mode.as_str())));
        }
        if self.mode != mode {
            self.mode = mode;
            self.mode_switches += 1;
        }
        Ok(())
    }

    /// Mark a tile as issued; pairs with [`BoothFlexCore::end_tile`].
    pub fn begin_tile(&mut self) -> Result<()> {
        if self.in_flight {
            return Err(Error::Scheduling("tile issued while another is in flight".into()));
        }
        self.in_flight = true;
        Ok(())
    }

    pub fn end_tile(&mut self) -> Result<()> {
        if !self.in_flight {
            return Err(Error::invariant("tile completion without issue"));
        }
        self.in_flight = false;
        Ok(())
    }

    pub fn tile_cycles(&self, inner: usize, mode: BoothMode) -> u64 {
        inner as u64 * mode.iterations() as u64 + self.tile_setup_cycles
    }

    pub fn gemm_cycles(&self, n: usize, d: usize, m: usize, mode: BoothMode) -> u64 {
        (n.div_ceil(self.array_rows) * m.div_ceil(self.array_cols)) as u64 * self.tile_cycles(d, mode)
    }

    fn check(&self, lhs: &I8Matrix, rhs: &BoothRhs<'_>) -> Result<()> {
        if rhs.mode() != self.mode {
            return Err(Error::invalid(format!(
                "{} operand on a core in {} mode",
                rhs.mode().as_str(),
                self.mode.as_str()
            )));
        }
        match rhs {
            BoothRhs::Ternary(t) => check_ternary_shapes(lhs, t),
            BoothRhs::Int8(m) if m.rows() != lhs.cols() => Err(Error::invalid(format!(
                "inner dimensions disagree: {}x{} by {}x{}",
                lhs.rows(),
                lhs.cols(),
                m.rows(),
                m.cols()
            ))),
            BoothRhs::Int8(_) => Ok(()),
        }
    }

    /// Run one output tile. Every scalar product goes through the serial
    /// Booth datapath.
    pub fn run_tile(&mut self, lhs: &I8Matrix, rhs: BoothRhs<'_>, rect: TileRect) -> Result<TileOutput> {
        self.check(lhs, &rhs)?;
        check_rect(rect, lhs.rows(), rhs.shape().1, self.array_rows, self.array_cols)?;
        self.begin_tile()?;
        let d = lhs.cols();
        let mut acc = vec![0i32; rect.rows * rect.cols];
        for k in 0..d {
            for c in 0..rect.cols {
                let col = rect.col0 + c;
                for r in 0..rect.rows {
                    let a = lhs.get(rect.row0 + r, k);
                    let p = match rhs {
                        BoothRhs::Int8(m) => booth_multiply_i8(a, m.get(k, col)),
                        BoothRhs::Ternary(t) => booth_multiply_ternary(a, t.get(k, col)),
                    };
                    acc[r * rect.cols + c] += p.product;
                }
            }
        }
        let cycles = self.tile_cycles(d, self.mode);
        self.busy_cycles += cycles;
        self.tiles_emitted += 1;
        self.end_tile()?;
        Ok(TileOutput { rect, acc, cycles })
    }

    pub fn gemm(&mut self, lhs: &I8Matrix, rhs: BoothRhs<'_>) -> Result<GemmOutput> {
        self.check(lhs, &rhs)?;
        let (n, m) = (lhs.rows(), rhs.shape().1);
        let mut acc = AccMatrix::zeros(n, m);
        let mut cycles = 0;
        for rect in output_tiles(n, m, self.array_rows, self.array_cols) {
            let tile = self.run_tile(lhs, rhs, rect)?;
            cycles += tile.cycles;
            tile.scatter_into(&mut acc);
        }
        Ok(GemmOutput { acc, cycles })
    }

    pub fn account_elapsed(&mut self, elapsed: u64) -> Result<()> {
        if self.busy_cycles > elapsed {
            return Err(Error::invariant(format!("BoothFlex busy {} exceeds elapsed {elapsed}", self.busy_cycles)));
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
}
