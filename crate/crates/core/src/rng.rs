//! Seeded random source shared by every generator.
//!
//! Streams come from ChaCha20 (a counter-based generator) keyed by the
//! caller's `u64` seed, and Gaussians are drawn with the Box–Muller
//! transform so that instance files can be regenerated bit-for-bit from
//! `(params, seed)` on any platform with IEEE-754 doubles.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::linalg::SymMatrix;

pub struct SeededRng {
    inner: ChaCha20Rng,
    spare: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha20Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Derived stream for trial `index` of a sweep started at `seed`.
    pub fn derived(seed: u64, index: u64) -> Self {
        Self::new(seed.wrapping_add(index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn sign(&mut self) -> f64 {
        if self.next_u64() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn normal_vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.normal())
    }

    /// Column-major fill, so the stream order is fixed by the shape.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m[(i, j)] = self.normal();
            }
        }
        m
    }

    /// Symmetric matrix with iid standard normal entries on and above the diagonal.
    pub fn gaussian_symmetric(&mut self, n: usize) -> SymMatrix {
        let mut s = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                s.set(i, j, self.normal());
            }
        }
        s
    }

    /// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
    pub fn orthogonal(&mut self, n: usize) -> DMatrix<f64> {
        let g = self.normal_matrix(n, n);
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..n {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        q
    }
}
