//! Dense row-major `f64` tensors of rank 0 to 3.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// A dense row-major array. Rank 0 tensors (`shape == []`) hold one scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self { shape, data }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_cols), "ragged rows");
        Self {
            shape: vec![rows.len(), n_cols],
            data: rows.iter().flatten().copied().collect(),
        }
    }

    /// Uniform samples in `[-limit, limit)`.
    pub fn uniform(shape: &[usize], limit: f64, rng: &mut impl Rng) -> Self {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-limit..limit)).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Standard normal samples.
    pub fn randn(shape: &[usize], rng: &mut impl Rng) -> Self {
        let len = shape.iter().product();
        let data = (0..len)
            .map(|_| rng.sample(rand_distr::StandardNormal))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a rank-0 or one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        assert_eq!(self.rank(), 2, "rows() on tensor of shape {:?}", self.shape);
        self.data.chunks(self.shape[1])
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `c += a (m,k) · b (k,n)`, all row-major.
pub(crate) fn mm_nn(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aik * bv;
            }
        }
    }
}

/// `c += a (m,k) · bᵀ` where `b` is `(n,k)` row-major.
pub(crate) fn mm_nt(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (j, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *cv += acc;
        }
    }
}

/// `c += aᵀ · b` where `a` is `(m,k)` and `b` is `(m,n)`, producing `(k,n)`.
pub(crate) fn mm_tn(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let c_row = &mut c[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_kernels_agree_on_identity() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let eye = [1.0, 0.0, 0.0, 1.0];
        let mut c = [0.0; 4];
        mm_nn(&mut c, &eye, &a, 2, 2, 2);
        assert_eq!(c, a);
        let mut c = [0.0; 4];
        mm_nt(&mut c, &a, &eye, 2, 2, 2);
        assert_eq!(c, a);
        let mut c = [0.0; 4];
        mm_tn(&mut c, &eye, &a, 2, 2, 2);
        assert_eq!(c, a);
    }

    #[test]
    fn transposed_kernels_match_explicit_transpose() {
        // a: 2x3, b: 4x3 -> a · bᵀ: 2x4
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.5, -1.0, 2.0, 1.0, 0.0, -0.5, 1.5, 2.5, 3.0, -2.0, 1.0];
        let mut c = [0.0; 8];
        mm_nt(&mut c, &a, &b, 2, 3, 4);
        let mut bt = [0.0; 12];
        for i in 0..4 {
            for j in 0..3 {
                bt[j * 4 + i] = b[i * 3 + j];
            }
        }
        let mut want = [0.0; 8];
        mm_nn(&mut want, &a, &bt, 2, 3, 4);
        assert_eq!(c, want);
    }

    #[test]
    #[should_panic(expected = "does not match shape")]
    fn new_rejects_wrong_length() {
        Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0]);
    }
}
