//! Lower-triangular Cholesky factor of the active-set Gram matrix, grown one
//! row at a time and shrunk by deleting an arbitrary row.

#[derive(Debug, Clone, Default)]
pub(crate) struct GramFactor {
    /// Row `i` holds `L[i][0..=i]`.
    rows: Vec<Vec<f64>>,
}

impl GramFactor {
    #[cfg(test)]
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Forward substitution `L y = z`.
    pub fn solve_lower(&self, z: &[f64]) -> Vec<f64> {
        let mut y = z.to_vec();
        for (i, row) in self.rows.iter().enumerate() {
            let mut s = y[i];
            for k in 0..i {
                s -= row[k] * y[k];
            }
            y[i] = s / row[i];
        }
        y
    }

    /// Solves `L Lᵀ x = z`.
    pub fn solve(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.solve_lower(z);
        for i in (0..x.len()).rev() {
            let mut s = x[i];
            for (k, row) in self.rows.iter().enumerate().skip(i + 1) {
                s -= row[i] * x[k];
            }
            x[i] = s / self.rows[i][i];
        }
        x
    }

    /// Squared pivot the factor would get if a column with Gram entries
    /// `cross` (against the current set) and self-product `diag` were appended,
    /// along with the new off-diagonal row.
    pub fn extension(&self, cross: &[f64], diag: f64) -> (Vec<f64>, f64) {
        let row = self.solve_lower(cross);
        let pivot_sq = diag - row.iter().map(|v| v * v).sum::<f64>();
        (row, pivot_sq)
    }

    /// Appends a row computed by [`extension`](Self::extension).
    pub fn push(&mut self, mut row: Vec<f64>, pivot_sq: f64) {
        debug_assert!(pivot_sq > 0.0);
        row.push(pivot_sq.sqrt());
        self.rows.push(row);
    }

    /// Deletes row and column `p`. The trailing block absorbs the removed
    /// column through a rank-one update, which keeps it triangular.
    pub fn remove(&mut self, p: usize) {
        let mut v: Vec<f64> = self.rows[p + 1..].iter().map(|r| r[p]).collect();
        self.rows.remove(p);
        for row in self.rows[p..].iter_mut() {
            row.remove(p);
        }
        let tail = &mut self.rows[p..];
        for t in 0..tail.len() {
            let col = p + t;
            let ltt = tail[t][col];
            let r = ltt.hypot(v[t]);
            let c = r / ltt;
            let s = v[t] / ltt;
            tail[t][col] = r;
            for i in t + 1..tail.len() {
                let lit = (tail[i][col] + s * v[i]) / c;
                v[i] = c * v[i] - s * lit;
                tail[i][col] = lit;
            }
        }
    }

    pub fn min_diag(&self) -> f64 {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| r[i])
            .fold(f64::INFINITY, f64::min)
    }

    /// Rebuilds the factor from scratch; `None` if the matrix is not
    /// numerically positive definite at `pivot_tol`.
    pub fn factorize(n: usize, gram: impl Fn(usize, usize) -> f64, pivot_tol: f64) -> Option<Self> {
        let mut f = GramFactor::default();
        for j in 0..n {
            let cross: Vec<f64> = (0..j).map(|i| gram(i, j)).collect();
            let (row, pivot_sq) = f.extension(&cross, gram(j, j));
            if pivot_sq <= pivot_tol {
                return None;
            }
            f.push(row, pivot_sq);
        }
        Some(f)
    }
}
