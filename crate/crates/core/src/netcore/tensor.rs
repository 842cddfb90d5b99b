use std::fmt;

use crate::{Error, Result};

/// Dense row-major tensor of `f64`. Almost everything in this crate is a
/// `[rows, cols]` matrix holding one batch element per row.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// One row per slice; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    /// `[n, 1]` column.
    pub fn column(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len(), 1],
            data: values.to_vec(),
        }
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

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    /// `self [n, k] x other [k, m]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (n, k) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::Shape(format!("matmul [{n}, {k}] x [{k2}, {m}]")));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a = &self.data[i * k..(i + 1) * k];
            let o = &mut out[i * m..(i + 1) * m];
            for (p, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let b = &other.data[p * m..(p + 1) * m];
                for (ov, &bv) in o.iter_mut().zip(b) {
                    *ov += av * bv;
                }
            }
        }
        Tensor::matrix(n, m, out)
    }

    /// `self^T [k, n] x other [n, m]` without materializing the transpose.
    pub fn t_matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (n, k) = (self.rows(), self.cols());
        let (n2, m) = (other.rows(), other.cols());
        if n != n2 {
            return Err(Error::Shape(format!("t_matmul [{n}, {k}]^T x [{n2}, {m}]")));
        }
        let mut out = vec![0.0; k * m];
        for i in 0..n {
            let a = &self.data[i * k..(i + 1) * k];
            let b = &other.data[i * m..(i + 1) * m];
            for (p, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let o = &mut out[p * m..(p + 1) * m];
                for (ov, &bv) in o.iter_mut().zip(b) {
                    *ov += av * bv;
                }
            }
        }
        Tensor::matrix(k, m, out)
    }

    /// `self [n, m] x other^T` where `other` is `[k, m]`.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        let (n, m) = (self.rows(), self.cols());
        let (k, m2) = (other.rows(), other.cols());
        if m != m2 {
            return Err(Error::Shape(format!("matmul_t [{n}, {m}] x [{k}, {m2}]^T")));
        }
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let a = &self.data[i * m..(i + 1) * m];
            for j in 0..k {
                let b = &other.data[j * m..(j + 1) * m];
                out[i * k + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        Tensor::matrix(n, k, out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "accumulate {:?} into {:?}",
                other.shape, self.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Column sums as a `[1, cols]` row.
    pub fn sum_rows(&self) -> Tensor {
        let c = self.cols();
        let mut out = vec![0.0; c];
        for r in 0..self.rows() {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        Tensor {
            shape: vec![1, c],
            data: out,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_agree() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.data(), &[4.0, 5.0, 10.0, 11.0]);
        let at = Tensor::matrix(3, 2, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]).unwrap();
        assert_eq!(at.t_matmul(&b).unwrap(), ab);
        let bt = Tensor::matrix(2, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(a.matmul_t(&bt).unwrap(), ab);
        assert!(a.matmul(&a).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0]).is_err());
    }
}
