use serde::{Deserialize, Serialize};

/// Dense square matrix of transition probabilities or counts, stored row-major.
///
/// Row `y'` holds the distribution over the next state given the previous state `y'`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct TransitionMatrix {
    n: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn zeros(n: usize) -> Self {
        TransitionMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Every row equal to `row`.
    pub fn from_repeated_row(row: &[f64]) -> Self {
        let n = row.len();
        let mut data = Vec::with_capacity(n * n);
        for _ in 0..n {
            data.extend_from_slice(row);
        }
        TransitionMatrix { n, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, String> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != n {
                return Err(format!("row {i} has length {} but matrix has {n} rows", r.len()));
            }
            data.extend(r);
        }
        Ok(TransitionMatrix { n, data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(|r| r.to_vec()).collect()
    }

    /// Largest absolute deviation of a row sum from one.
    pub fn max_row_sum_error(&self) -> f64 {
        self.rows()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.data.iter().all(|&p| p >= 0.0 && p.is_finite()) && self.max_row_sum_error() <= tol
    }

    pub fn max_abs_diff(&self, other: &TransitionMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for TransitionMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for TransitionMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

impl From<TransitionMatrix> for Vec<Vec<f64>> {
    fn from(m: TransitionMatrix) -> Self {
        m.to_rows()
    }
}

impl TryFrom<Vec<Vec<f64>>> for TransitionMatrix {
    type Error = String;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, String> {
        TransitionMatrix::from_rows(rows)
    }
}

/// Floors every entry of a probability row at `floor` and renormalizes.
pub(crate) fn floor_and_normalize(row: &mut [f64], floor: f64) {
    let mut changed = false;
    for p in row.iter_mut() {
        if !(*p >= floor) {
            *p = floor;
            changed = true;
        }
    }
    let total: f64 = row.iter().sum();
    if changed || (total - 1.0).abs() > 0.0 {
        for p in row.iter_mut() {
            *p /= total;
        }
    }
}
