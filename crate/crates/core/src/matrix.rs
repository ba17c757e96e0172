use crate::error::{Error, Result};
use crate::quant::QuantVector;

/// Row-major INT8 operand matrix. Scales travel separately.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct I8Matrix {
    rows: usize,
    cols: usize,
    data: Vec<i8>,
}

impl I8Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!("{} elements for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0; rows * cols] }
    }

    /// Stack the payloads of equally long quantized vectors.
    pub fn from_rows(rows: &[QuantVector]) -> Result<Self> {
        let cols = rows.first().map_or(0, QuantVector::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.data.iter().copied()).collect();
        Ok(Self { rows: rows.len(), cols, data })
    }

    /// Payloads of `rows` laid out as columns, i.e. the transpose of
    /// [`I8Matrix::from_rows`].
    pub fn from_columns(cols: &[QuantVector]) -> Result<Self> {
        let m = Self::from_rows(cols)?;
        Ok(m.transpose())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> i8 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[i8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Self { rows: self.cols, cols: self.rows, data }
    }
}

/// Row-major INT32 accumulator matrix produced by a GEMM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i32>,
}

impl AccMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[i32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// An output tile of an output-stationary array: a `rows x cols` window of
/// the result starting at (`row0`, `col0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileRect {
    pub row0: usize,
    pub rows: usize,
    pub col0: usize,
    pub cols: usize,
}

/// Output tiles covering an `n x m` result on an `array_rows x array_cols`
/// array, column-tile major so that consecutive tiles share weights.
pub fn output_tiles(n: usize, m: usize, array_rows: usize, array_cols: usize) -> Vec<TileRect> {
    let mut tiles = Vec::with_capacity(n.div_ceil(array_rows) * m.div_ceil(array_cols));
    for col0 in (0..m).step_by(array_cols) {
        for row0 in (0..n).step_by(array_rows) {
            tiles.push(TileRect { row0, rows: array_rows.min(n - row0), col0, cols: array_cols.min(m - col0) });
        }
    }
    tiles
}

/// Accumulators for one output tile, row-major within the tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileOutput {
    pub rect: TileRect,
    pub acc: Vec<i32>,
    pub cycles: u64,
}

impl TileOutput {
    pub fn scatter_into(&self, out: &mut AccMatrix) {
        for r in 0..self.rect.rows {
            let dst = (self.rect.row0 + r) * out.cols + self.rect.col0;
            out.data[dst..dst + self.rect.cols]
                .copy_from_slice(&self.acc[r * self.rect.cols..(r + 1) * self.rect.cols]);
        }
    }
}
