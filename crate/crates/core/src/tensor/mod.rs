//! Dense tensors and the small linear-algebra kernel used by the importance
//! criteria.

mod linalg;

pub use linalg::{
    entrywise_norm, nuclear_norm, numerical_rank, operator_norm, singular_values, svd_rank1,
    trace_product, EntrywiseNorm, Rank1Factors,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 32-bit tensor of rank 1 to 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::InvalidTensor(format!(
                "rank must be 1..=4, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidTensor(format!(
                "zero extent in dims {dims:?}"
            )));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::InvalidTensor(format!(
                "dims {dims:?} need {len} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims, vec![0.0; len])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Keep only `indices` along `axis`, in the given order.
    pub fn select(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        if axis >= self.dims.len() {
            return Err(Error::InvalidTensor(format!(
                "axis {axis} out of range for rank {}",
                self.dims.len()
            )));
        }
        let extent = self.dims[axis];
        if let Some(&bad) = indices.iter().find(|&&i| i >= extent) {
            return Err(Error::InvalidTensor(format!(
                "index {bad} out of range for axis {axis} of extent {extent}"
            )));
        }
        if indices.is_empty() {
            return Err(Error::InvalidTensor(format!(
                "selection along axis {axis} would leave no entries"
            )));
        }
        let outer: usize = self.dims[..axis].iter().product();
        let inner: usize = self.dims[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            let base = o * extent * inner;
            for &i in indices {
                let start = base + i * inner;
                data.extend_from_slice(&self.data[start..start + inner]);
            }
        }
        let mut dims = self.dims.clone();
        dims[axis] = indices.len();
        Ok(Tensor { dims, data })
    }
}

/// Convolution weights laid out as `(n_out, n_in, k_h, k_w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTensor {
    n_out: usize,
    n_in: usize,
    k_h: usize,
    k_w: usize,
    data: Vec<f32>,
}

impl KernelTensor {
    pub fn new(n_out: usize, n_in: usize, k_h: usize, k_w: usize, data: Vec<f32>) -> Result<Self> {
        let t = Tensor::new(vec![n_out, n_in, k_h, k_w], data)?;
        Ok(Self {
            n_out,
            n_in,
            k_h,
            k_w,
            data: t.into_data(),
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.dims() {
            [n_out, n_in, k_h, k_w] => Self::new(n_out, n_in, k_h, k_w, t.data().to_vec()),
            _ => Err(Error::InvalidTensor(format!(
                "kernel tensor must be rank 4, got dims {:?}",
                t.dims()
            ))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.n_out, self.n_in, self.k_h, self.k_w],
            data: self.data.clone(),
        }
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn k_h(&self) -> usize {
        self.k_h
    }

    pub fn k_w(&self) -> usize {
        self.k_w
    }

    /// Length of one vectorized 2-D kernel (`k_h * k_w`).
    pub fn k_v(&self) -> usize {
        self.k_h * self.k_w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Vectorized kernel of filter `j`, channel `c`.
    pub fn kernel(&self, j: usize, c: usize) -> &[f32] {
        let kv = self.k_v();
        let start = (j * self.n_in + c) * kv;
        &self.data[start..start + kv]
    }

    /// All weights of filter `j`, `n_in * k_v` values.
    pub fn filter_slice(&self, j: usize) -> &[f32] {
        let len = self.n_in * self.k_v();
        &self.data[j * len..(j + 1) * len]
    }

    /// Filter `j` as an `n_in x k_v` matrix.
    pub fn filter(&self, j: usize) -> Matrix<f32> {
        Matrix {
            rows: self.n_in,
            cols: self.k_v(),
            data: self.filter_slice(j).to_vec(),
        }
    }

    /// The `c`-th channel of every filter stacked as an `n_out x k_v` matrix.
    pub fn channel_matrix(&self, c: usize) -> ChannelMatrix {
        let kv = self.k_v();
        let mut data = Vec::with_capacity(self.n_out * kv);
        for j in 0..self.n_out {
            data.extend_from_slice(self.kernel(j, c));
        }
        Matrix {
            rows: self.n_out,
            cols: kv,
            data,
        }
    }

    /// Multiply every weight by `factor`.
    pub fn scaled(&self, factor: f32) -> KernelTensor {
        KernelTensor {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Reorder filters so that output filter `i` is input filter `perm[i]`.
    pub fn permute_filters(&self, perm: &[usize]) -> Result<KernelTensor> {
        let t = self.to_tensor().select(0, perm)?;
        KernelTensor::from_tensor(&t)
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// The `c`-th channel of all filters of a layer (`n_l x k_v`).
pub type ChannelMatrix = Matrix<f32>;

impl<T: Copy> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidTensor(format!(
                "matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if rows * cols != data.len() {
            return Err(Error::InvalidTensor(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

impl Matrix<f32> {
    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidTensor("ragged matrix rows".into()));
        }
        let data: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let m = Self::new(rows.len(), cols, data)?;
        if m.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor("non-finite matrix entry".into()));
        }
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_rejects_bad_construction() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1, 1], vec![1.0]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f32::NAN]).is_err());
        assert!(Tensor::new(vec![1], vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn select_along_middle_axis() {
        let t = Tensor::new(vec![2, 3, 2], (0..12).map(|v| v as f32).collect()).unwrap();
        let s = t.select(1, &[0, 2]).unwrap();
        assert_eq!(s.dims(), &[2, 2, 2]);
        assert_eq!(s.data(), &[0.0, 1.0, 4.0, 5.0, 6.0, 7.0, 10.0, 11.0]);
        assert!(t.select(1, &[3]).is_err());
        assert!(t.select(1, &[]).is_err());
    }

    #[test]
    fn kernel_views_follow_layout() {
        // 2 filters, 2 channels, 1x2 kernels
        let k = KernelTensor::new(2, 2, 1, 2, vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        assert_eq!(k.k_v(), 2);
        assert_eq!(k.kernel(1, 0), &[5., 6.]);
        assert_eq!(k.filter(0).row(1), &[3., 4.]);
        let v1 = k.channel_matrix(1);
        assert_eq!(v1.shape(), (2, 2));
        assert_eq!(v1.data(), &[3., 4., 7., 8.]);
        let p = k.permute_filters(&[1, 0]).unwrap();
        assert_eq!(p.filter_slice(0), k.filter_slice(1));
    }
}
