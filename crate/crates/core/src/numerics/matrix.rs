use crate::error::{Error, Result};

/// Row-major `f64` matrix; rows are frames, columns are feature channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("Matrix::from_vec", "rows >= 1 and cols >= 1", format!("{rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape("Matrix::from_rows", cols, bad.len()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// One row per frame, each equal to `row`.
    pub fn repeat_row(row: &[f64], rows: usize) -> Self {
        let mut data = Vec::with_capacity(rows * row.len());
        for _ in 0..rows {
            data.extend_from_slice(row);
        }
        Self {
            rows,
            cols: row.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other`, accumulating over the inner index in ascending order.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("inner dim {}", self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        matmul_into(&self.data, &other.data, self.cols, other.cols, &mut out.data);
        Ok(out)
    }

    /// Appends `extra` to every row, giving a `rows × (cols + extra.len())` matrix.
    pub fn append_columns(&self, extra: &[f64]) -> Matrix {
        let cols = self.cols + extra.len();
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(extra);
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Copy of columns `start..end`.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Per-column sum over rows, rows visited in ascending order.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(r)) {
                *s += v;
            }
        }
        sums
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "add_assign",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}


fn matmul_into(a_all: &[f64], b_all: &[f64], n: usize, m: usize, out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // Same scalar operations in the same order, just wider registers;
        // FMA stays off so results match the portable path bit for bit.
        unsafe { return matmul_avx2(a_all, b_all, n, m, out) }
    }
    matmul_kernel(a_all, b_all, n, m, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matmul_avx2(a_all: &[f64], b_all: &[f64], n: usize, m: usize, out: &mut [f64]) {
    matmul_kernel(a_all, b_all, n, m, out)
}

#[inline(always)]
fn matmul_kernel(a_all: &[f64], b_all: &[f64], n: usize, m: usize, out: &mut [f64]) {
    const R: usize = 4;
    const C: usize = 8;
    if m == 0 {
        return;
    }
    // Register tiles of R rows by C columns; every entry accumulates over k
    // in ascending order starting from zero, as a naive triple loop would.
    let rows = out.len() / m;
    let full_cols = m - m % C;
    let mut i = 0;
    while i + R <= rows {
        let a = &a_all[i * n..(i + R) * n];
        for j in (0..full_cols).step_by(C) {
            let mut acc = [[0.0f64; C]; R];
            for k in 0..n {
                let b: &[f64; C] = b_all[k * m + j..k * m + j + C].try_into().unwrap();
                for (r, row) in acc.iter_mut().enumerate() {
                    let x = a[r * n + k];
                    for c in 0..C {
                        row[c] += x * b[c];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                out[(i + r) * m + j..(i + r) * m + j + C].copy_from_slice(row);
            }
        }
        for j in full_cols..m {
            for r in 0..R {
                let mut s = 0.0;
                for k in 0..n {
                    s += a[r * n + k] * b_all[k * m + j];
                }
                out[(i + r) * m + j] = s;
            }
        }
        i += R;
    }
    for acc in out[i * m..].chunks_exact_mut(m) {
        let a = &a_all[i * n..(i + 1) * n];
        for (k, &x) in a.iter().enumerate() {
            for (o, &w) in acc.iter_mut().zip(&b_all[k * m..(k + 1) * m]) {
                *o += x * w;
            }
        }
        i += 1;
    }
}
