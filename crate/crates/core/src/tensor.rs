//! Dense row-major n-dimensional arrays.
//!
//! A [`Tensor`] owns its data and never changes shape after construction;
//! every operation returns a fresh value. Broadcasting is limited to a scalar
//! operand, layers use explicit expand operations for anything else.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};

/// The seeded generator used for every random draw in the crate.
///
/// ChaCha8 produces the same stream on every platform for a given seed.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fill recipe for [`Tensor::make`].
#[derive(Debug, Clone)]
pub enum Fill {
    Scalar(f64),
    Values(Vec<f64>),
    Gaussian { mean: f64, stdev: f64, seed: u64 },
}

/// Elementwise binary operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ewise {
    Add,
    Sub,
    Mul,
    Max,
}

/// Right-hand side of an elementwise operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Index(usize),
    All,
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}

fn check_extents(shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return Err(shape_err!("extents must be positive, got {shape:?}"));
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_extents(shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn make(shape: &[usize], fill: Fill) -> Result<Self> {
        check_extents(shape)?;
        let n: usize = shape.iter().product();
        match fill {
            Fill::Scalar(v) => Ok(Self::full(shape, v)),
            Fill::Values(values) => Self::new(shape, values),
            Fill::Gaussian { mean, stdev, seed } => {
                let normal = Normal::new(mean, stdev)
                    .map_err(|e| Error::Param(format!("gaussian fill: {e}")))?;
                let mut rng = seeded_rng(seed);
                let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
                Self::new(shape, data)
            }
        }
    }

    /// Panics on a zero extent; use [`Tensor::make`] for fallible construction.
    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "extents must be positive, got {shape:?}"
        );
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Uniform draws in `[-limit, limit)`, rounded to the nearest `f32` so
    /// parameters survive the 32-bit weights file unchanged.
    pub fn uniform_f32(shape: &[usize], limit: f64, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                if limit > 0.0 {
                    rng.gen_range(-limit..limit) as f32 as f64
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the elements; the shape stays fixed.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(shape_err!(
                "index {index:?} has rank {}, tensor has rank {}",
                index.len(),
                self.shape.len()
            ));
        }
        let mut off = 0;
        for ((&i, &d), s) in index.iter().zip(&self.shape).zip(self.strides()) {
            if i >= d {
                return Err(shape_err!("index {index:?} out of bounds for {:?}", self.shape));
            }
            off += i * s;
        }
        Ok(off)
    }

    pub fn element(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        check_extents(shape)?;
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err!(
                "cannot reshape {:?} ({} elements) into {shape:?}",
                self.shape,
                self.data.len()
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn into_reshaped(self, shape: &[usize]) -> Result<Tensor> {
        check_extents(shape)?;
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err!(
                "cannot reshape {:?} ({} elements) into {shape:?}",
                self.shape,
                self.data.len()
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(shape_err!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape,
                other.shape
            ));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(shape_err!(
                "matmul inner extents differ: {:?} x {:?}",
                self.shape,
                other.shape
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(&self.data, &other.data, &mut out, m, k, n);
        Tensor::new(&[m, n], out)
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(shape_err!("transpose needs rank 2, got {:?}", self.shape));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(&[c, r], out)
    }

    pub fn ewise(&self, op: Ewise, rhs: Operand<'_>) -> Result<Tensor> {
        let f = |a: f64, b: f64| match op {
            Ewise::Add => a + b,
            Ewise::Sub => a - b,
            Ewise::Mul => a * b,
            Ewise::Max => a.max(b),
        };
        let data = match rhs {
            Operand::Scalar(b) => self.data.iter().map(|&a| f(a, b)).collect(),
            Operand::Tensor(t) => {
                if t.shape != self.shape {
                    return Err(shape_err!(
                        "elementwise operands differ in shape: {:?} vs {:?}",
                        self.shape,
                        t.shape
                    ));
                }
                self.data.iter().zip(&t.data).map(|(&a, &b)| f(a, b)).collect()
            }
        };
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.ewise(Ewise::Add, Operand::Tensor(other))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.ewise(Ewise::Sub, Operand::Tensor(other))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.ewise(Ewise::Mul, Operand::Tensor(other))
    }

    pub fn maximum(&self, other: &Tensor) -> Result<Tensor> {
        self.ewise(Ewise::Max, Operand::Tensor(other))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if other.shape != self.shape {
            return Err(shape_err!(
                "cannot accumulate {:?} into {:?}",
                other.shape,
                self.shape
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn reduce(&self, op: Reduce, axis: Axis) -> Result<Tensor> {
        match axis {
            Axis::All => {
                let v = match op {
                    Reduce::Sum => self.data.iter().sum(),
                    Reduce::Mean => self.data.iter().sum::<f64>() / self.data.len() as f64,
                    Reduce::Max => self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                };
                Ok(Tensor::scalar(v))
            }
            Axis::Index(ax) => {
                if ax >= self.rank() {
                    return Err(shape_err!(
                        "axis {ax} invalid for rank-{} tensor",
                        self.rank()
                    ));
                }
                let (outer, extent, inner) = split_at_axis(&self.shape, ax);
                let init = if op == Reduce::Max { f64::NEG_INFINITY } else { 0.0 };
                let mut out = vec![init; outer * inner];
                for o in 0..outer {
                    for e in 0..extent {
                        let src = &self.data[(o * extent + e) * inner..][..inner];
                        let dst = &mut out[o * inner..][..inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = if op == Reduce::Max { d.max(s) } else { *d + s };
                        }
                    }
                }
                if op == Reduce::Mean {
                    for v in &mut out {
                        *v /= extent as f64;
                    }
                }
                let mut shape: Vec<usize> = self.shape.clone();
                shape.remove(ax);
                if shape.is_empty() {
                    shape.push(1);
                }
                Tensor::new(&shape, out)
            }
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| shape_err!("concat of an empty list"))?;
        if axis >= first.rank() {
            return Err(shape_err!("concat axis {axis} invalid for {:?}", first.shape));
        }
        for t in tensors {
            let same_rank = t.rank() == first.rank();
            let compatible = same_rank
                && t.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err!(
                    "concat along axis {axis}: {:?} incompatible with {:?}",
                    t.shape,
                    first.shape
                ));
            }
        }
        let (outer, _, inner) = split_at_axis(&first.shape, axis);
        let total: usize = tensors.iter().map(|t| t.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for t in tensors {
                let chunk = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * chunk..][..chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Tensor::new(&shape, data)
    }

    pub fn pad(&self, axis: usize, before: usize, after: usize, value: f64) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(shape_err!("pad axis {axis} invalid for {:?}", self.shape));
        }
        let (outer, extent, inner) = split_at_axis(&self.shape, axis);
        let new_extent = extent + before + after;
        let mut data = Vec::with_capacity(outer * new_extent * inner);
        for o in 0..outer {
            data.extend(std::iter::repeat_n(value, before * inner));
            data.extend_from_slice(&self.data[o * extent * inner..][..extent * inner]);
            data.extend(std::iter::repeat_n(value, after * inner));
        }
        let mut shape = self.shape.clone();
        shape[axis] = new_extent;
        Tensor::new(&shape, data)
    }

    pub fn crop(&self, axis: usize, start: usize, length: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(shape_err!("crop axis {axis} invalid for {:?}", self.shape));
        }
        let (outer, extent, inner) = split_at_axis(&self.shape, axis);
        if length == 0 || start + length > extent {
            return Err(shape_err!(
                "crop window [{start}, {}) outside extent {extent}",
                start + length
            ));
        }
        let mut data = Vec::with_capacity(outer * length * inner);
        for o in 0..outer {
            data.extend_from_slice(&self.data[(o * extent + start) * inner..][..length * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = length;
        Tensor::new(&shape, data)
    }

    /// Gathers slices along the leading axis.
    pub fn take_rows(&self, rows: &[usize]) -> Result<Tensor> {
        let n = self.shape[0];
        let inner = self.data.len() / n;
        let mut data = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            if r >= n {
                return Err(shape_err!("row {r} out of bounds for leading extent {n}"));
            }
            data.extend_from_slice(&self.data[r * inner..][..inner]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Tensor::new(&shape, data)
    }

    /// Reverses the order of elements along `axis`.
    pub fn reverse_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(shape_err!("reverse axis {axis} invalid for {:?}", self.shape));
        }
        let (outer, extent, inner) = split_at_axis(&self.shape, axis);
        let mut data = Vec::with_capacity(self.data.len());
        for o in 0..outer {
            for e in (0..extent).rev() {
                data.extend_from_slice(&self.data[(o * extent + e) * inner..][..inner]);
            }
        }
        Tensor::new(&self.shape, data)
    }
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// `(product before axis, extent, product after axis)`.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `c += a · b` for row-major `a: [m,k]`, `b: [k,n]`, `c: [m,n]`.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..][..n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let brow = &b[t * n..][..n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += aᵀ · b` for `a: [k,m]`, `b: [k,n]`, `c: [m,n]`.
pub(crate) fn gemm_at_b_acc(a: &[f64], b: &[f64], c: &mut [f64], k: usize, m: usize, n: usize) {
    for t in 0..k {
        let arow = &a[t * m..][..m];
        let brow = &b[t * n..][..n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..][..n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += a · bᵀ` for `a: [m,k]`, `b: [n,k]`, `c: [m,n]`.
pub(crate) fn gemm_a_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..][..k];
        for j in 0..n {
            let brow = &b[j * k..][..k];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            c[i * n + j] += dot;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn make_fills() {
        let z = Tensor::make(&[2, 3], Fill::Scalar(0.0)).unwrap();
        assert_eq!(z.data(), &[0.0; 6]);
        let x = Tensor::make(&[2, 2], Fill::Values(vec![1., 2., 3., 4.])).unwrap();
        assert_eq!(x.element(&[1, 0]).unwrap(), 3.0);
        let g = |s| Tensor::make(&[4], Fill::Gaussian { mean: 0.0, stdev: 1.0, seed: s }).unwrap();
        assert_eq!(g(7), g(7));
        assert_ne!(g(7), g(8));
        assert!(matches!(
            Tensor::make(&[2, 2], Fill::Values(vec![1.0])),
            Err(Error::Shape(_))
        ));
        assert!(Tensor::make(&[0, 2], Fill::Scalar(1.0)).is_err());
    }

    #[test]
    fn matmul_examples() {
        let id = t(&[2, 2], &[1., 0., 0., 1.]);
        let m = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(id.matmul(&m).unwrap(), m);
        let row = t(&[1, 2], &[1., 2.]);
        let col = t(&[2, 1], &[3., 4.]);
        assert_eq!(row.matmul(&col).unwrap().data(), &[11.0]);
        assert!(row.matmul(&row).is_err());

        let a = Tensor::make(&[5, 4], Fill::Gaussian { mean: 0.0, stdev: 1.0, seed: 1 }).unwrap();
        let b = Tensor::make(&[4, 3], Fill::Gaussian { mean: 0.0, stdev: 1.0, seed: 2 }).unwrap();
        let c = a.matmul(&b).unwrap();
        for (x, y) in c.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn ewise_examples() {
        let x = t(&[2], &[1.0, -2.0]);
        assert_eq!(x.add(&Tensor::zeros(&[2])).unwrap(), x);
        assert_eq!(x.ewise(Ewise::Mul, Operand::Scalar(1.0)).unwrap(), x);
        assert_eq!(x.maximum(&Tensor::zeros(&[2])).unwrap().data(), &[1.0, 0.0]);
        assert!(x.add(&Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn reduce_examples() {
        let m = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(m.reduce(Reduce::Sum, Axis::Index(0)).unwrap().data(), &[4.0, 6.0]);
        let r = t(&[1, 2], &[2., 4.]);
        assert_eq!(r.reduce(Reduce::Mean, Axis::All).unwrap().data(), &[3.0]);
        assert!(m.reduce(Reduce::Sum, Axis::Index(2)).is_err());

        let x = Tensor::make(&[3, 7], Fill::Gaussian { mean: 0.0, stdev: 1.0, seed: 3 }).unwrap();
        let got = x.reduce(Reduce::Max, Axis::Index(1)).unwrap();
        for i in 0..3 {
            let mut best = f64::NEG_INFINITY;
            for j in 0..7 {
                let v = x.data()[i * 7 + j];
                if v > best {
                    best = v;
                }
            }
            assert_eq!(got.data()[i], best);
        }
    }

    #[test]
    fn concat_pad_crop_examples() {
        let a = t(&[2, 1], &[1., 2.]);
        let b = t(&[2, 1], &[3., 4.]);
        assert_eq!(Tensor::concat(&[&a, &b], 1).unwrap().data(), &[1., 3., 2., 4.]);
        assert!(Tensor::concat(&[&a, &t(&[3, 1], &[0.; 3])], 1).is_err());
        let p = t(&[2], &[1., 2.]).pad(0, 1, 1, 0.0).unwrap();
        assert_eq!(p.data(), &[0., 1., 2., 0.]);
    }

    #[test]
    fn row_major_addressing_exhaustive() {
        let shape = [2, 3, 4];
        let x = Tensor::new(&shape, (0..24).map(|v| v as f64).collect()).unwrap();
        let mut expected = 0.0;
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(x.element(&[i, j, k]).unwrap(), expected);
                    assert_eq!(x.offset(&[i, j, k]).unwrap(), i * 12 + j * 4 + k);
                    expected += 1.0;
                }
            }
        }
    }

    proptest! {
        #[test]
        fn matmul_is_associative(seed in 0u64..1000, m in 1usize..5, k in 1usize..5, n in 1usize..5, p in 1usize..5) {
            let g = |s, r, c| Tensor::make(&[r, c], Fill::Gaussian { mean: 0.0, stdev: 1.0, seed: s }).unwrap();
            let (a, b, c) = (g(seed, m, k), g(seed + 1, k, n), g(seed + 2, n, p));
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn reshape_round_trip(seed in 0u64..1000, a in 1usize..6, b in 1usize..6) {
            let x = Tensor::make(&[a, b], Fill::Gaussian { mean: 0.0, stdev: 1.0, seed }).unwrap();
            let y = x.reshape(&[a * b]).unwrap().reshape(&[a, b]).unwrap();
            prop_assert_eq!(x, y);
        }

        #[test]
        fn crop_inverts_pad(seed in 0u64..1000, n in 1usize..10, before in 0usize..4, after in 0usize..4) {
            let x = Tensor::make(&[n], Fill::Gaussian { mean: 0.0, stdev: 1.0, seed }).unwrap();
            let y = x.pad(0, before, after, 0.0).unwrap().crop(0, before, n).unwrap();
            prop_assert_eq!(x, y);
        }
    }
}
