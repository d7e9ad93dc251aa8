//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain value: a 1-D or 2-D array of `f64` in row-major
//! order. [`Tape`] records operations on tensors and replays them in
//! reverse to produce gradients. Every op validates shapes up front and
//! checks its output for NaN/Inf; a non-finite result is an error, never a
//! silent value.

mod tape;

pub use tape::{Gradients, Tape, ValueId};

use crate::error::{Error, Result};

/// Shape of a tensor: 1-D vector or 2-D row-major matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Shape::Vector(n) => write!(f, "[{n}]"),
            Shape::Matrix(r, c) => write!(f, "[{r}x{c}]"),
        }
    }
}

/// Dense array of `f64`, 1-D or 2-D, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "{} values do not fill shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Shape::Vector(1),
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(Shape::Matrix(rows, cols), data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Shape("ragged row lengths".into()));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(Shape::Matrix(r, c), data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self.shape, Shape::Vector(1))
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::Shape(format!("item() on non-scalar {}", self.shape)))
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rows(&self) -> usize {
        match self.shape {
            Shape::Vector(_) => 1,
            Shape::Matrix(r, _) => r,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape {
            Shape::Vector(n) => n,
            Shape::Matrix(_, c) => c,
        }
    }

    /// Row `i` of a matrix as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn check_finite(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite { op })
    }
}

// Value-level kernels shared by the tape forward pass. Shape checks live
// here; the tape adds finiteness checks and gradient records.

pub(crate) fn matmul_values(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = match a.shape() {
        Shape::Matrix(m, k) => (m, k),
        s => return Err(Error::Shape(format!("matmul lhs must be a matrix, got {s}"))),
    };
    let (k2, n) = match b.shape() {
        Shape::Matrix(k2, n) => (k2, n),
        s => return Err(Error::Shape(format!("matmul rhs must be a matrix, got {s}"))),
    };
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dims differ: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    // ikj order: the inner loop walks contiguous rows of b and out.
    for i in 0..m {
        let a_row = a.row(i);
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = b.row(p);
            for j in 0..n {
                out_row[j] += a_ip * b_row[j];
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// `a^T * b` without materializing the transpose (gradient helper).
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = match a.shape() {
        Shape::Matrix(k, m) => (k, m),
        s => return Err(Error::Shape(format!("matmul_tn lhs must be a matrix, got {s}"))),
    };
    let (k2, n) = match b.shape() {
        Shape::Matrix(k2, n) => (k2, n),
        s => return Err(Error::Shape(format!("matmul_tn rhs must be a matrix, got {s}"))),
    };
    if k != k2 {
        return Err(Error::Shape("matmul_tn inner dims differ".into()));
    }
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let a_row = a.row(p);
        let b_row = b.row(p);
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                out_row[j] += a_pi * b_row[j];
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// `a * b^T` without materializing the transpose (gradient helper).
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = match a.shape() {
        Shape::Matrix(m, k) => (m, k),
        s => return Err(Error::Shape(format!("matmul_nt lhs must be a matrix, got {s}"))),
    };
    let (n, k2) = match b.shape() {
        Shape::Matrix(n, k2) => (n, k2),
        s => return Err(Error::Shape(format!("matmul_nt rhs must be a matrix, got {s}"))),
    };
    if k != k2 {
        return Err(Error::Shape("matmul_nt inner dims differ".into()));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = a.row(i);
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, out_ij) in out_row.iter_mut().enumerate() {
            let b_row = b.row(j);
            let mut acc = 0.0;
            for p in 0..k {
                acc += a_row[p] * b_row[p];
            }
            *out_ij = acc;
        }
    }
    Tensor::matrix(m, n, out)
}

pub(crate) fn zip_values(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op} operands differ: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape(), data)
}

pub(crate) fn map_values(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: t.shape(),
        data: t.as_slice().iter().map(|&x| f(x)).collect(),
    }
}

pub(crate) use check_finite as finite_or_err;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = matmul_values(&a, &b).unwrap();
        assert_eq!(c.as_slice(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        let b = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(matmul_values(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn transpose_helpers_agree_with_plain_matmul() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::matrix(2, 4, (0..8).map(f64::from).collect()).unwrap();
        // a^T (3x2) * b (2x4)
        let at = Tensor::matrix(3, 2, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]).unwrap();
        assert_eq!(
            matmul_tn(&a, &b).unwrap(),
            matmul_values(&at, &b).unwrap()
        );
        // a (2x3) * c^T where c is (4x3)
        let c = Tensor::matrix(4, 3, (0..12).map(f64::from).collect()).unwrap();
        let ct = Tensor::matrix(3, 4, vec![0.0, 3.0, 6.0, 9.0, 1.0, 4.0, 7.0, 10.0, 2.0, 5.0, 8.0, 11.0]).unwrap();
        assert_eq!(
            matmul_nt(&a, &c).unwrap(),
            matmul_values(&a, &ct).unwrap()
        );
    }

    #[test]
    fn tensor_construction_validates_len() {
        assert!(Tensor::new(Shape::Matrix(2, 2), vec![1.0; 3]).is_err());
        assert!(Tensor::new(Shape::Vector(3), vec![1.0; 3]).is_ok());
    }
}
