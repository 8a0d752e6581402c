//! Dense column-major tensors and the index arithmetic around them.
//!
//! Element `(i_1, …, i_d)` of a tensor with extents `(I_1, …, I_d)` lives at
//! flat offset `Σ (i_n − 1)·∏_{m<n} I_m`, i.e. the first mode varies fastest.
//! The public `sub2ind`/`ind2sub` pair follows the MATLAB functions of the same
//! name and is 1-based; everything else in the crate addresses elements and
//! modes 0-based.

mod geometry;
pub mod io;
mod matrix;

pub use geometry::{SliceCursor, SliceIndexing, Tile, TileGeometry, OFFSET_TABLE_LIMIT};
pub use matrix::{khatri_rao, khatri_rao_chain, Matrix};

use rand::Rng;

use crate::error::{Error, Result};

/// Extents of a d-way tensor, with precomputed column-major strides.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
    strides: Vec<usize>,
    volume: usize,
}

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::Shape("a tensor needs at least one mode".into()));
        }
        if let Some(pos) = dims.iter().position(|&n| n == 0) {
            return Err(Error::Shape(format!("extent of mode {pos} is zero")));
        }
        let mut strides = Vec::with_capacity(dims.len());
        let mut volume: usize = 1;
        for &n in &dims {
            strides.push(volume);
            volume = volume
                .checked_mul(n)
                .ok_or_else(|| Error::Shape(format!("volume of {dims:?} overflows 64 bits")))?;
        }
        Ok(Shape { dims, strides, volume })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndims(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self, mode: usize) -> usize {
        self.dims[mode]
    }

    /// Total number of elements N.
    pub fn volume(&self) -> usize {
        self.volume
    }

    /// Column-major strides; `strides()[0] == 1`.
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn check_mode(&self, mode: usize) -> Result<()> {
        if mode < self.ndims() {
            Ok(())
        } else {
            Err(Error::Mode { mode, ndims: self.ndims() })
        }
    }

    /// Number of elements in one mode-k slice, `N / I_k`.
    pub fn slice_volume(&self, mode: usize) -> usize {
        self.volume / self.dims[mode]
    }

    /// `I_L = ∏_{m<k} I_m`.
    pub fn left_volume(&self, mode: usize) -> usize {
        self.dims[..mode].iter().product()
    }

    /// `I_R = ∏_{m>k} I_m`.
    pub fn right_volume(&self, mode: usize) -> usize {
        self.dims[mode + 1..].iter().product()
    }

    pub fn dims_sum(&self) -> usize {
        self.dims.iter().sum()
    }

    /// 0-based flat offset of 0-based coordinates. No bounds checks.
    #[inline]
    pub fn offset_of(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    /// Writes the 0-based coordinates of a 0-based flat offset into `out`.
    #[inline]
    pub fn coords_of(&self, mut offset: usize, out: &mut [usize]) {
        for (c, &n) in out.iter_mut().zip(&self.dims) {
            *c = offset % n;
            offset /= n;
        }
    }
}

/// A 1-based multi-index `(i_1, …, i_d)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(coords: impl Into<Vec<usize>>) -> Self {
        MultiIndex(coords.into())
    }

    pub fn coords(&self) -> &[usize] {
        &self.0
    }

    fn validate(&self, shape: &Shape) -> Result<()> {
        if self.0.len() != shape.ndims() {
            return Err(Error::Index(format!(
                "multi-index has {} entries, tensor has {} modes",
                self.0.len(),
                shape.ndims()
            )));
        }
        for (n, (&i, &extent)) in self.0.iter().zip(shape.dims()).enumerate() {
            if i == 0 || i > extent {
                return Err(Error::Index(format!(
                    "index {i} of mode {n} is outside [1, {extent}]"
                )));
            }
        }
        Ok(())
    }
}

impl From<Vec<usize>> for MultiIndex {
    fn from(coords: Vec<usize>) -> Self {
        MultiIndex(coords)
    }
}

/// 1-based linear index of a 1-based multi-index (first mode fastest).
pub fn sub2ind(shape: &Shape, idx: &MultiIndex) -> Result<usize> {
    idx.validate(shape)?;
    let mut linear = 1;
    for (&i, &stride) in idx.coords().iter().zip(shape.strides()) {
        linear += (i - 1) * stride;
    }
    Ok(linear)
}

/// Inverse of [`sub2ind`].
pub fn ind2sub(shape: &Shape, linear: usize) -> Result<MultiIndex> {
    if linear == 0 || linear > shape.volume() {
        return Err(Error::Index(format!(
            "linear index {linear} is outside [1, {}]",
            shape.volume()
        )));
    }
    let mut coords = vec![0; shape.ndims()];
    shape.coords_of(linear - 1, &mut coords);
    coords.iter_mut().for_each(|c| *c += 1);
    Ok(MultiIndex(coords))
}

/// A d-way array of `f64` stored first-mode-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.volume() {
            return Err(Error::Shape(format!(
                "{} values supplied for a tensor of volume {}",
                data.len(),
                shape.volume()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let data = vec![0.0; shape.volume()];
        DenseTensor { shape, data }
    }

    /// Builds a tensor by evaluating `f` at the 0-based coordinates of every
    /// element, in storage order.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut coords = vec![0; shape.ndims()];
        let mut data = Vec::with_capacity(shape.volume());
        for _ in 0..shape.volume() {
            data.push(f(&coords));
            for (c, &n) in coords.iter_mut().zip(shape.dims()) {
                *c += 1;
                if *c < n {
                    break;
                }
                *c = 0;
            }
        }
        DenseTensor { shape, data }
    }

    /// Entries drawn i.i.d. from `[0, 1)`, in storage order.
    pub fn random_uniform<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Self {
        let data = (0..shape.volume()).map(|_| rng.random::<f64>()).collect();
        DenseTensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn ndims(&self) -> usize {
        self.shape.ndims()
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

    /// Element at a 1-based multi-index.
    pub fn get(&self, idx: &MultiIndex) -> Result<f64> {
        Ok(self.data[sub2ind(&self.shape, idx)? - 1])
    }

    /// Element at 0-based coordinates. Panics when out of range.
    pub fn at(&self, coords: &[usize]) -> f64 {
        self.data[self.shape.offset_of(coords)]
    }

    pub fn norm_squared(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Same elements in the same flat order under new extents.
    pub fn reshape(&self, new_dims: &[usize]) -> Result<DenseTensor> {
        self.clone().into_reshaped(new_dims)
    }

    pub fn into_reshaped(self, new_dims: &[usize]) -> Result<DenseTensor> {
        let shape = Shape::new(new_dims.to_vec())?;
        if shape.volume() != self.shape.volume() {
            return Err(Error::Shape(format!(
                "cannot reshape volume {} into {:?}",
                self.shape.volume(),
                new_dims
            )));
        }
        Ok(DenseTensor { shape, data: self.data })
    }

    /// Mode-k unfolding `Y_(k)` as an `I_k × N/I_k` matrix.
    ///
    /// Column index of element `(i_1, …, i_d)` is the column-major linear
    /// index of the remaining coordinates with mode k removed. This copies
    /// and permutes every element, so it only backs oracles and baselines.
    pub fn matricize(&self, mode: usize) -> Result<Matrix> {
        self.shape.check_mode(mode)?;
        let rows = self.shape.dim(mode);
        let cols = self.shape.slice_volume(mode);
        let mut unfolded = Matrix::zeros(rows, cols);
        let mut col_strides = vec![0; self.ndims()];
        let mut acc = 1;
        for (m, &n) in self.shape.dims().iter().enumerate() {
            if m != mode {
                col_strides[m] = acc;
                acc *= n;
            }
        }
        let mut coords = vec![0; self.ndims()];
        for &x in &self.data {
            let col: usize = coords.iter().zip(&col_strides).map(|(c, s)| c * s).sum();
            unfolded.set(coords[mode], col, x);
            for (c, &n) in coords.iter_mut().zip(self.shape.dims()) {
                *c += 1;
                if *c < n {
                    break;
                }
                *c = 0;
            }
        }
        Ok(unfolded)
    }

    /// Inverse of [`DenseTensor::matricize`].
    pub fn fold(unfolded: &Matrix, mode: usize, shape: Shape) -> Result<DenseTensor> {
        shape.check_mode(mode)?;
        if unfolded.rows() != shape.dim(mode) || unfolded.cols() != shape.slice_volume(mode) {
            return Err(Error::Shape(format!(
                "{}x{} matrix is not a mode-{mode} unfolding of {:?}",
                unfolded.rows(),
                unfolded.cols(),
                shape.dims()
            )));
        }
        let mut col_strides = vec![0; shape.ndims()];
        let mut acc = 1;
        for (m, &n) in shape.dims().iter().enumerate() {
            if m != mode {
                col_strides[m] = acc;
                acc *= n;
            }
        }
        Ok(DenseTensor::from_fn(shape, |coords| {
            let col: usize = coords.iter().zip(&col_strides).map(|(c, s)| c * s).sum();
            unfolded.get(coords[mode], col)
        }))
    }
}
