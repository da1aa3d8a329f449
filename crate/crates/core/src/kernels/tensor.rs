use serde::{Deserialize, Serialize};

use super::KernelError;

/// Row-major `f64` array. Most kernels treat it as a matrix `[rows × cols]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, KernelError> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n != data.len() {
            return Err(KernelError::Shape(format!("shape {shape:?} does not hold {} values", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::NonFinite("tensor value".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, KernelError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading extent; 1 for vectors.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[0]
        }
    }

    /// Product of the trailing extents.
    pub fn cols(&self) -> usize {
        if self.shape.len() == 1 {
            self.shape[0]
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, KernelError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(KernelError::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn expect_cols(&self, cols: usize, what: &str) -> Result<(), KernelError> {
        if self.cols() != cols {
            return Err(KernelError::Shape(format!("{what}: expected width {cols}, got {:?}", self.shape)));
        }
        Ok(())
    }

    /// `self · wᵀ` with `self: [n × k]`, `w: [m × k]`.
    pub fn matmul_t(&self, w: &Tensor) -> Result<Tensor, KernelError> {
        let (n, k, m) = (self.rows(), self.cols(), w.rows());
        w.expect_cols(k, "matmul_t")?;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a = self.row(i);
            for j in 0..m {
                let b = w.row(j);
                out[i * m + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        Ok(Tensor { shape: vec![n, m], data: out })
    }

    /// `self · b` with `self: [n × k]`, `b: [k × m]`.
    pub fn matmul(&self, b: &Tensor) -> Result<Tensor, KernelError> {
        let (n, k, m) = (self.rows(), self.cols(), b.cols());
        if b.rows() != k {
            return Err(KernelError::Shape(format!("matmul {:?} x {:?}", self.shape, b.shape)));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = b.row(p);
                for (o, bv) in out[i * m..(i + 1) * m].iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        Ok(Tensor { shape: vec![n, m], data: out })
    }

    /// `selfᵀ · b` with `self: [n × k]`, `b: [n × m]`, giving `[k × m]`.
    pub fn t_matmul(&self, b: &Tensor) -> Result<Tensor, KernelError> {
        let (n, k, m) = (self.rows(), self.cols(), b.cols());
        if b.rows() != n {
            return Err(KernelError::Shape(format!("t_matmul {:?} x {:?}", self.shape, b.shape)));
        }
        let mut out = vec![0.0; k * m];
        for i in 0..n {
            let brow = b.row(i);
            for p in 0..k {
                let a = self.data[i * k + p];
                for (o, bv) in out[p * m..(p + 1) * m].iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        Ok(Tensor { shape: vec![k, m], data: out })
    }

    pub fn transpose(&self) -> Tensor {
        let (n, m) = (self.rows(), self.cols());
        Tensor::from_fn(&[m, n], |i| self.data[(i % n) * m + i / n])
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, KernelError> {
        if self.shape != other.shape {
            return Err(KernelError::Shape(format!("add {:?} + {:?}", self.shape, other.shape)));
        }
        Ok(Tensor { shape: self.shape.clone(), data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect() })
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| v * s).collect() }
    }

    /// Column sums of a matrix.
    pub fn sum_rows(&self) -> Vec<f64> {
        let c = self.cols();
        let mut out = vec![0.0; c];
        for i in 0..self.rows() {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    /// Stacks matrices of equal width vertically.
    pub fn vstack(parts: &[&Tensor]) -> Result<Tensor, KernelError> {
        let cols = parts.first().map(|t| t.cols()).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            p.expect_cols(cols, "vstack")?;
            rows += if p.is_empty() { 0 } else { p.rows() };
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape: vec![rows, cols], data })
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn hstack(parts: &[&Tensor]) -> Result<Tensor, KernelError> {
        let rows = parts.first().map(|t| t.rows()).unwrap_or(0);
        if let Some(p) = parts.iter().find(|p| p.rows() != rows) {
            return Err(KernelError::Shape(format!("hstack: {} rows vs {rows}", p.rows())));
        }
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Tensor { shape: vec![rows, cols], data })
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let c = self.cols();
        Tensor { shape: vec![end - start, c], data: self.data[start * c..end * c].to_vec() }
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor {
        let rows = self.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for i in 0..rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Tensor { shape: vec![rows, end - start], data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_agree() {
        let a = Tensor::from_fn(&[2, 3], |i| i as f64 + 1.0);
        let b = Tensor::from_fn(&[4, 3], |i| (i as f64) * 0.5 - 1.0);
        let via_t = a.matmul_t(&b).unwrap();
        let via_mm = a.matmul(&b.transpose()).unwrap();
        assert_eq!(via_t, via_mm);
        let c = Tensor::from_fn(&[2, 4], |i| i as f64);
        assert_eq!(a.t_matmul(&c).unwrap(), a.transpose().matmul(&c).unwrap());
    }

    #[test]
    fn validation() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        let t = Tensor::from_fn(&[2, 3], |i| i as f64);
        assert_eq!(Tensor::hstack(&[&t.slice_cols(0, 1), &t.slice_cols(1, 3)]).unwrap(), t);
        assert_eq!(Tensor::vstack(&[&t.slice_rows(0, 1), &t.slice_rows(1, 2)]).unwrap(), t);
    }
}
