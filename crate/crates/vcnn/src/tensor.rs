//! Dense row-major N-dimensional arrays.
//!
//! `Tensor<T>` is the value type every other module computes on: input
//! volumes, feature maps, weights, gradients. Data is stored flat in
//! row-major order (last axis fastest). There is no broadcasting beyond
//! scalar-tensor and no views; element-wise binary ops require identical
//! shapes so mismatches fail loudly.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Element dtype of a tensor. `f32` is the training default, `f64` the
/// dtype used by test oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "f32" => Some(Dtype::F32),
            "f64" => Some(Dtype::F64),
            _ => None,
        }
    }
}

/// Floating-point element type usable in tensors.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + Copy
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    const DTYPE: Dtype;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Appends the little-endian encoding of `self` to `out`.
    fn write_le(self, out: &mut Vec<u8>);

    /// Decodes one value from the start of `bytes` (must hold at least
    /// `Self::DTYPE.size_bytes()` bytes).
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}

/// Validates a shape (non-empty, all dims >= 1) and returns its element count.
pub fn element_count(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("shape must have at least one dimension".into()));
    }
    let mut n: usize = 1;
    for (axis, &d) in shape.iter().enumerate() {
        if d == 0 {
            return Err(Error::Shape(format!("dimension {axis} is zero")));
        }
        n = n
            .checked_mul(d)
            .ok_or_else(|| Error::Shape(format!("shape {shape:?} overflows usize")))?;
    }
    Ok(n)
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n = element_count(&shape)?;
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {n} elements, data has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = element_count(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = element_count(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    /// Rank-1 tensor from a plain vector.
    pub fn vector(data: Vec<T>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    /// Deterministic uniform tensor on `[lo, hi)`. The draw sequence depends
    /// only on the seed, not on `T`, so f32 and f64 tensors built from the
    /// same seed hold the same values up to rounding.
    pub fn random_uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Argument(format!(
                "random_uniform requires lo < hi, got lo={lo}, hi={hi}"
            )));
        }
        let n = element_count(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                T::from_f64(lo + u * (hi - lo))
            })
            .collect();
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn dtype(&self) -> Dtype {
        T::DTYPE
    }

    /// Row-major flat offset of a coordinate tuple.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < dim, "index {ix} out of bounds for axis {i} (dim {dim})");
            off = off * dim + ix;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    /// In-place element-wise accumulation.
    pub fn add_in_place(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "add_in_place: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Index of the first maximum element.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// Sum of all elements.
    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &x in &self.data {
            acc += x;
        }
        acc
    }

    /// Standard matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::Shape(format!(
                "matmul requires rank-2 operands, got {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions disagree: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Same flat data under a new shape; element counts must agree.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        let n = element_count(new_shape)?;
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {new_shape:?}: element count {} != {n}",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Self {
            shape: new_shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// `n x n` identity matrix.
    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        Ok(t)
    }

    /// Converts element-wise to another scalar type (used to run f64 oracles
    /// against f32 data and vice versa).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_basic() {
        let t = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        assert_eq!(t.len(), 6);
        assert!(t.data().iter().all(|&x| x == 0.0));

        let big = Tensor::<f32>::zeros(&[80, 80, 80]).unwrap();
        assert_eq!(big.len(), 512_000);

        let one = Tensor::<f64>::zeros(&[1]).unwrap();
        assert_eq!(one.data(), &[0.0]);
    }

    #[test]
    fn zeros_rejects_bad_shapes() {
        assert!(matches!(Tensor::<f64>::zeros(&[]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::<f64>::zeros(&[2, 0]), Err(Error::Shape(_))));
    }

    #[test]
    fn random_uniform_is_deterministic() {
        let a = Tensor::<f64>::random_uniform(&[4], 0.0, 1.0, 7).unwrap();
        let b = Tensor::<f64>::random_uniform(&[4], 0.0, 1.0, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_uniform_respects_range() {
        let t = Tensor::<f64>::random_uniform(&[1000], -1.0, 1.0, 3).unwrap();
        let min = t.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min >= -1.0);
        assert!(max < 1.0);
    }

    #[test]
    fn random_uniform_mean_matches_expectation() {
        // Var of U(0,1) is 1/12; 3 sigma over 10k samples is ~0.0087 < 0.02.
        let t = Tensor::<f64>::random_uniform(&[10_000], 0.0, 1.0, 5).unwrap();
        let mean = t.sum() / 10_000.0;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn random_uniform_rejects_bad_range() {
        assert!(matches!(
            Tensor::<f64>::random_uniform(&[4], 1.0, 1.0, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn elementwise_ops() {
        let a = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let b = Tensor::vector(vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(a.scale(0.0).data(), &[0.0, 0.0]);

        let ones = Tensor::full(a.shape(), 1.0).unwrap();
        assert_eq!(a.hadamard(&ones).unwrap(), a);

        let c = Tensor::<f64>::zeros(&[3]).unwrap();
        assert!(matches!(a.add(&c), Err(Error::Shape(_))));
    }

    #[test]
    fn elementwise_ops_leave_inputs_unchanged() {
        let a = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let b = Tensor::vector(vec![3.0, 4.0]).unwrap();
        let (a0, b0) = (a.clone(), b.clone());
        let _ = a.add(&b).unwrap();
        let _ = a.hadamard(&b).unwrap();
        let _ = a.map(|x| x * 2.0);
        assert_eq!(a, a0);
        assert_eq!(b, b0);
    }

    #[test]
    fn matmul_identity_and_hand_example() {
        let a = Tensor::<f64>::random_uniform(&[3, 3], -1.0, 1.0, 11).unwrap();
        let id = Tensor::<f64>::identity(3).unwrap();
        assert_eq!(id.matmul(&a).unwrap(), a);

        let m = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = Tensor::new(vec![2, 1], vec![5.0, 6.0]).unwrap();
        assert_eq!(m.matmul(&v).unwrap().data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let a = Tensor::<f64>::random_uniform(&[7, 5], -1.0, 1.0, 21).unwrap();
        let b = Tensor::<f64>::random_uniform(&[5, 9], -1.0, 1.0, 22).unwrap();
        let got = a.matmul(&b).unwrap();

        // Independent naive oracle.
        let mut want = vec![0.0f64; 7 * 9];
        for i in 0..7 {
            for j in 0..9 {
                let mut s = 0.0;
                for p in 0..5 {
                    s += a.data()[i * 5 + p] * b.data()[p * 9 + j];
                }
                want[i * 9 + j] = s;
            }
        }
        let max_diff = got
            .data()
            .iter()
            .zip(&want)
            .map(|(g, w)| (g - w).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-12, "max diff {max_diff}");
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f64>::zeros(&[4, 2]).unwrap();
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
        let v = Tensor::<f64>::zeros(&[3]).unwrap();
        assert!(matches!(a.matmul(&v), Err(Error::Shape(_))));
    }

    #[test]
    fn reshape_flatten_rows() {
        let t = Tensor::<f32>::zeros(&[64, 1, 1, 256]).unwrap();
        assert_eq!(t.reshape(&[16384]).unwrap().shape(), &[16384]);

        let t2 = Tensor::<f32>::zeros(&[10, 10, 256]).unwrap();
        assert_eq!(t2.reshape(&[25600]).unwrap().shape(), &[25600]);
    }

    #[test]
    fn reshape_round_trip() {
        let t = Tensor::<f64>::random_uniform(&[3, 4, 5], 0.0, 1.0, 9).unwrap();
        let back = t.reshape(&[60]).unwrap().reshape(&[3, 4, 5]).unwrap();
        assert_eq!(back, t);
        assert!(matches!(t.reshape(&[7]), Err(Error::Shape(_))));
    }

    fn small_shape() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..5, 1..4)
    }

    proptest! {
        // Coordinate -> flat offset -> coordinate is the identity.
        #[test]
        fn row_major_round_trip(shape in small_shape(), seed in 0u64..1000) {
            let t = Tensor::<f64>::random_uniform(&shape, 0.0, 1.0, seed).unwrap();
            let mut idx = vec![0usize; shape.len()];
            let mut flat = 0usize;
            loop {
                prop_assert_eq!(t.offset(&idx), flat);
                prop_assert_eq!(t.get(&idx), t.data()[flat]);
                flat += 1;
                // Odometer increment in row-major order.
                let mut axis = shape.len();
                loop {
                    if axis == 0 {
                        return Ok(());
                    }
                    axis -= 1;
                    idx[axis] += 1;
                    if idx[axis] < shape[axis] {
                        break;
                    }
                    idx[axis] = 0;
                }
            }
        }

        #[test]
        fn matmul_is_associative(seed in 0u64..500) {
            let a = Tensor::<f64>::random_uniform(&[3, 4], -1.0, 1.0, seed).unwrap();
            let b = Tensor::<f64>::random_uniform(&[4, 2], -1.0, 1.0, seed + 1).unwrap();
            let c = Tensor::<f64>::random_uniform(&[2, 5], -1.0, 1.0, seed + 2).unwrap();
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (l, r) in left.data().iter().zip(right.data()) {
                prop_assert!((l - r).abs() < 1e-9);
            }
        }
    }
}
