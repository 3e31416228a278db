//! Dense least squares via Householder QR with column pivoting.
//!
//! Sized for the small, tall systems produced by the regression models
//! (at most six columns), so column norms are recomputed at every step
//! instead of downdated.

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
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

    /// Builds a matrix from row slices. All rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), cols, "ragged row {i}");
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    fn swap_columns(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for i in 0..self.rows {
            self.data.swap(a * self.rows + i, b * self.rows + i);
        }
    }

    /// `self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.column(j)) {
                *o += a * xj;
            }
        }
        out
    }

    /// `selfᵀ * v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        (0..self.cols).map(|j| dot(self.column(j), v)).collect()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        norm2(&self.data)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[j * self.rows + i]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[j * self.rows + i]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm, scaled to avoid overflow.
pub fn norm2(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * v.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt()
}

/// `A P = Q R` with `P` a column permutation chosen so that `|R[k,k]|` is non-increasing.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// Householder vectors below the diagonal, `R` on and above it.
    factors: Matrix,
    /// Diagonal of `R`.
    r_diag: Vec<f64>,
    /// `perm[k]` is the original index of the column moved to position `k`.
    perm: Vec<usize>,
}

impl PivotedQr {
    #[allow(clippy::needless_range_loop)]
    pub fn new(a: &Matrix) -> Self {
        let (m, n) = (a.rows, a.cols);
        let mut qr = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let steps = m.min(n);
        let mut r_diag = vec![0.0; n];

        for k in 0..steps {
            let (pivot, _) =
                (k..n)
                    .map(|j| (j, norm2(&qr.column(j)[k..])))
                    .fold(
                        (k, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            qr.swap_columns(k, pivot);
            perm.swap(k, pivot);

            let col = &mut qr.column_mut(k)[k..];
            let mut alpha = norm2(col);
            if alpha == 0.0 {
                r_diag[k] = 0.0;
                continue;
            }
            if col[0] < 0.0 {
                alpha = -alpha;
            }
            for v in col.iter_mut() {
                *v /= alpha;
            }
            col[0] += 1.0;
            r_diag[k] = -alpha;

            let w: Vec<f64> = col.to_vec();
            for j in k + 1..n {
                let target = &mut qr.column_mut(j)[k..];
                let s = dot(target, &w) / w[0];
                for (t, wi) in target.iter_mut().zip(&w) {
                    *t -= s * wi;
                }
            }
        }

        Self {
            factors: qr,
            r_diag,
            perm,
        }
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Diagonal of `R` in pivot order.
    pub fn r_diagonal(&self) -> &[f64] {
        &self.r_diag[..self.factors.rows.min(self.factors.cols)]
    }

    /// Numerical rank: count of leading pivots with `|R[k,k]| >= rel_tol * |R[0,0]|`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let diag = self.r_diagonal();
        let Some(first) = diag.first().map(|d| d.abs()) else {
            return 0;
        };
        if first == 0.0 {
            return 0;
        }
        diag.iter()
            .take_while(|d| d.abs() >= rel_tol * first)
            .count()
    }

    /// Entry `R[i,j]` for `i <= j` (in pivot order).
    fn r(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.r_diag[i]
        } else {
            self.factors[(i, j)]
        }
    }

    /// Applies `Qᵀ` to `b` in place.
    fn apply_qt(&self, b: &mut [f64]) {
        let m = self.factors.rows;
        for k in 0..m.min(self.factors.cols) {
            if self.r_diag[k] == 0.0 {
                continue;
            }
            let w = &self.factors.column(k)[k..];
            let s = dot(&b[k..], w) / w[0];
            for (bi, wi) in b[k..].iter_mut().zip(w) {
                *bi -= s * wi;
            }
        }
    }

    /// Minimizes `‖A x − b‖₂` assuming full column rank. Returns `x` in original column order.
    pub fn solve_least_squares(&self, b: &[f64]) -> Vec<f64> {
        let n = self.factors.cols;
        assert_eq!(b.len(), self.factors.rows);
        let mut qtb = b.to_vec();
        self.apply_qt(&mut qtb);
        let z = self.back_substitute(&qtb[..n]);
        let mut x = vec![0.0; n];
        for (k, &orig) in self.perm.iter().enumerate() {
            x[orig] = z[k];
        }
        x
    }

    fn back_substitute(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut z = vec![0.0; n];
        for i in (0..n).rev() {
            let tail: f64 = (i + 1..n).map(|j| self.r(i, j) * z[j]).sum();
            z[i] = (rhs[i] - tail) / self.r(i, i);
        }
        z
    }

    /// 1-norm condition number of `R`. `R` has the same 2-norm condition as `A`,
    /// so this is within a factor `n` of it. Infinite when `R` is singular.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.factors.cols;
        if n == 0 || self.factors.rows < n || self.r_diag.contains(&0.0) {
            return f64::INFINITY;
        }
        let col_sum = |j: usize, entry: &dyn Fn(usize, usize) -> f64| -> f64 {
            (0..=j).map(|i| entry(i, j).abs()).sum()
        };
        let r_norm = (0..n)
            .map(|j| col_sum(j, &|i, j| self.r(i, j)))
            .fold(0.0, f64::max);

        // Columns of R⁻¹ via back substitution on unit vectors.
        let mut inv_norm = 0.0f64;
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = self.back_substitute(&e);
            inv_norm = inv_norm.max(col.iter().map(|v| v.abs()).sum());
        }
        r_norm * inv_norm
    }
}
