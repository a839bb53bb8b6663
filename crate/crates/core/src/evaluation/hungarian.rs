//! Minimum-cost one-to-one assignment (Hungarian method, shortest augmenting
//! paths with row/column potentials, O(n³)).
//!
//! Rectangular matrices are padded to square with zero-cost dummy rows or
//! columns, so exactly `min(rows, cols)` real pairs come back.

/// Dense row-major cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    /// # Panics
    /// If `data.len() != rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "cost matrix size mismatch");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs in ascending row order.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the assigned entries, added in ascending row order.
    pub total: f64,
}

/// Solves the assignment problem for finite costs.
///
/// # Panics
/// On non-finite entries.
pub fn hungarian_match(cost: &CostMatrix) -> Assignment {
    assert!(
        cost.data.iter().all(|c| c.is_finite()),
        "cost matrix must be finite"
    );
    let (rows, cols) = (cost.rows, cost.cols);
    if rows == 0 || cols == 0 {
        return Assignment {
            pairs: Vec::new(),
            total: 0.0,
        };
    }
    let n = rows.max(cols);
    let at = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            cost.get(i, j)
        } else {
            0.0
        }
    };

    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = at(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter_map(|j| {
            let i = row_of_col[j];
            (i >= 1 && i - 1 < rows && j - 1 < cols).then(|| (i - 1, j - 1))
        })
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| cost.get(i, j)).sum();
    Assignment { pairs, total }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anti_diagonal() {
        let a = hungarian_match(&CostMatrix::new(2, 2, vec![0.0, -1.0, -1.0, 0.0]));
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(a.total, -2.0);
    }

    #[test]
    fn single_row_takes_minimum() {
        let a = hungarian_match(&CostMatrix::new(1, 3, vec![0.4, -0.2, 0.1]));
        assert_eq!(a.pairs, vec![(0, 1)]);
        // Positive costs still force a real match.
        let a = hungarian_match(&CostMatrix::new(1, 3, vec![5.0, 3.0, 4.0]));
        assert_eq!(a.pairs, vec![(0, 1)]);
        let a = hungarian_match(&CostMatrix::new(3, 1, vec![5.0, 3.0, 4.0]));
        assert_eq!(a.pairs, vec![(1, 0)]);
    }

    #[test]
    fn empty_shapes() {
        assert!(hungarian_match(&CostMatrix::new(0, 3, vec![])).pairs.is_empty());
        assert!(hungarian_match(&CostMatrix::new(2, 0, vec![])).pairs.is_empty());
    }

    #[test]
    fn classic_example() {
        let c = CostMatrix::new(3, 3, vec![4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]);
        let a = hungarian_match(&c);
        assert_eq!(a.total, 5.0);
        assert_eq!(a.pairs, vec![(0, 1), (1, 0), (2, 2)]);
    }
}
