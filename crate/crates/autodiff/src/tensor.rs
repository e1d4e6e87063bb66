use crate::error::{shape_err, Result};
use crate::scalar::Real;

/// Dense row-major matrix. Vectors are `1 x n` or `n x 1`; scalars are `1 x 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 2],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return shape_err(
                "tensor",
                format!(
                    "{rows}x{cols} needs {} values, got {}",
                    rows * cols,
                    data.len()
                ),
            );
        }
        Ok(Self {
            shape: [rows, cols],
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            shape: [rows, cols],
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: T) -> Self {
        Self {
            shape: [rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(1, 1, value)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    /// Builds a tensor from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("tensor", "ragged rows");
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_f64(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::new(rows, cols, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    #[inline]
    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }
    #[inline]
    pub fn rows(&self) -> usize {
        self.shape[0]
    }
    #[inline]
    pub fn cols(&self) -> usize {
        self.shape[1]
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    /// The single value of a `1 x 1` tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let x = v.to_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Row-major product of two plain tensors, outside of any tape.
pub(crate) fn matmul_raw<T: Real>(
    a: &[T],
    a_shape: [usize; 2],
    a_t: bool,
    b: &[T],
    b_shape: [usize; 2],
    b_t: bool,
) -> Vec<T> {
    let (m, k) = if a_t {
        (a_shape[1], a_shape[0])
    } else {
        (a_shape[0], a_shape[1])
    };
    let n = if b_t { b_shape[0] } else { b_shape[1] };
    let (rsa, csa) = if a_t {
        (1, a_shape[1] as isize)
    } else {
        (a_shape[1] as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, b_shape[1] as isize)
    } else {
        (b_shape[1] as isize, 1)
    };
    let mut out = vec![T::zero(); m * n];
    if k == 0 {
        return out;
    }
    T::gemm(
        m,
        k,
        n,
        a,
        rsa,
        csa,
        b,
        rsb,
        csb,
        T::zero(),
        &mut out,
        n as isize,
        1,
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f64>::new(2, 3, vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::new(2, 3, vec![0.0; 6]).unwrap();
        assert_eq!(t.rows() * t.cols(), t.len());
    }

    #[test]
    fn raw_matmul_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(
            matmul_raw::<f64>(&a, [2, 2], false, &b, [2, 2], false),
            vec![19.0, 22.0, 43.0, 50.0]
        );
        // a^T b = [[1,3],[2,4]] [[5,6],[7,8]]
        assert_eq!(
            matmul_raw::<f64>(&a, [2, 2], true, &b, [2, 2], false),
            vec![26.0, 30.0, 38.0, 44.0]
        );
        // a b^T
        assert_eq!(
            matmul_raw::<f64>(&a, [2, 2], false, &b, [2, 2], true),
            vec![17.0, 23.0, 39.0, 53.0]
        );
    }
}
