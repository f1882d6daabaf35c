//! Dense symmetric linear algebra used by every other module.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdpError};

/// Default threshold for "numerically nonzero" eigenvalues.
pub const DEFAULT_RANK_EPS: f64 = 1e-6;

/// Real symmetric matrix. Every mutation writes both triangles, so
/// `get(i, j) == get(j, i)` holds bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "SymRepr", try_from = "SymRepr")]
pub struct SymMatrix(DMatrix<f64>);

#[derive(Serialize, Deserialize)]
struct SymRepr {
    n: usize,
    /// Upper triangle, row-major, diagonal included.
    upper: Vec<f64>,
}

impl From<SymMatrix> for SymRepr {
    fn from(m: SymMatrix) -> Self {
        SymRepr {
            n: m.n(),
            upper: m.to_upper(),
        }
    }
}

impl TryFrom<SymRepr> for SymMatrix {
    type Error = SdpError;
    fn try_from(r: SymRepr) -> Result<Self> {
        SymMatrix::from_upper(r.n, &r.upper)
    }
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &DVector<f64>) -> Self {
        SymMatrix(DMatrix::from_diagonal(d))
    }

    /// Builds from `f(i, j)` evaluated on the upper triangle only.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    /// Symmetric part `(M + Mᵀ)/2` of a square matrix.
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(SdpError::InvalidInput(format!(
                "matrix is {}x{}, not square",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self::from_fn(m.nrows(), |i, j| {
            if i == j {
                m[(i, i)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)])
            }
        }))
    }

    /// Row-major upper triangle of length n(n+1)/2.
    pub fn from_upper(n: usize, upper: &[f64]) -> Result<Self> {
        if upper.len() != n * (n + 1) / 2 {
            return Err(SdpError::DimensionMismatch {
                expected: n * (n + 1) / 2,
                got: upper.len(),
            });
        }
        let mut it = upper.iter();
        Ok(Self::from_fn(n, |_, _| *it.next().unwrap()))
    }

    /// `v vᵀ`
    pub fn outer(v: &DVector<f64>) -> Self {
        Self::from_fn(v.len(), |i, j| v[i] * v[j])
    }

    /// `F Fᵀ` for a rectangular factor.
    pub fn gram_rows(f: &DMatrix<f64>) -> Self {
        SymMatrix::symmetrized(f * f.transpose())
    }

    /// `B M Bᵀ`, symmetrized against rounding.
    pub fn congruence(b: &DMatrix<f64>, m: &SymMatrix) -> Self {
        SymMatrix::symmetrized(b * &m.0 * b.transpose())
    }

    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let mut m = m;
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn to_upper(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.0[(i, j)] = v;
        self.0[(j, i)] = v;
    }

    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.0[(i, j)] += v;
        if i != j {
            self.0[(j, i)] += v;
        }
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    /// Trace inner product ⟨A, B⟩ = tr(AB).
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, alpha: f64) -> SymMatrix {
        SymMatrix(&self.0 * alpha)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &SymMatrix) {
        self.0 += &other.0 * alpha;
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.0 * v
    }

    pub fn eig(&self) -> Result<EigDecomp> {
        eig_sym(self)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eig()?.min())
    }
}

/// Eigenpairs with values in descending order.
#[derive(Clone, Debug)]
pub struct EigDecomp {
    pub values: DVector<f64>,
    /// Column k pairs with `values[k]`.
    pub vectors: DMatrix<f64>,
}

impl EigDecomp {
    pub fn max(&self) -> f64 {
        self.values[0]
    }

    pub fn min(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn recompose(&self) -> SymMatrix {
        let scaled = &self.vectors * DMatrix::from_diagonal(&self.values);
        SymMatrix::symmetrized(scaled * self.vectors.transpose())
    }

    /// Rebuilds the matrix with `f` applied to every eigenvalue.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.values.len();
        let keep: Vec<usize> = (0..n).filter(|&k| f(self.values[k]) != 0.0).collect();
        if keep.is_empty() {
            return SymMatrix::zeros(self.vectors.nrows());
        }
        let v = self.vectors.select_columns(&keep);
        let mut scaled = v.clone();
        for (c, &k) in keep.iter().enumerate() {
            let w = f(self.values[k]);
            scaled.column_mut(c).scale_mut(w);
        }
        SymMatrix::symmetrized(scaled * v.transpose())
    }
}

/// Symmetric eigendecomposition, values sorted descending.
pub fn eig_sym(a: &SymMatrix) -> Result<EigDecomp> {
    if !a.is_finite() {
        return Err(SdpError::InvalidInput(
            "non-finite entry in symmetric matrix".into(),
        ));
    }
    let n = a.n();
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| a.0[(i, j)]);
    let evd = m.self_adjoint_eigen(faer::Side::Lower).map_err(|_| {
        SdpError::NumericalBreakdown("symmetric eigensolver did not converge".into())
    })?;
    let (s, u) = (evd.S().column_vector(), evd.U());
    // faer returns ascending order
    let values = DVector::from_iterator(n, (0..n).map(|k| s[n - 1 - k]));
    let vectors = DMatrix::from_fn(n, n, |i, k| u[(i, n - 1 - k)]);
    Ok(EigDecomp { values, vectors })
}

/// Thresholded rank of a descending spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankInfo {
    pub rank: usize,
    /// Smallest eigenvalue strictly above the threshold.
    pub lambda_min_pos: Option<f64>,
}

pub fn rank_eps(values: &[f64], eps: f64) -> Result<RankInfo> {
    if !(eps > 0.0) {
        return Err(SdpError::InvalidInput(format!("rank threshold {eps} must be > 0")));
    }
    if values.windows(2).any(|w| w[0] < w[1]) {
        return Err(SdpError::InvalidInput(
            "eigenvalues must be sorted in descending order".into(),
        ));
    }
    let rank = values.iter().take_while(|&&v| v > eps).count();
    Ok(RankInfo {
        rank,
        lambda_min_pos: rank.checked_sub(1).map(|k| values[k]),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subspace {
    /// Eigenvectors with eigenvalue > eps.
    Range,
    /// Eigenvectors with eigenvalue <= eps.
    Null,
}

/// Orthonormal basis of the range or null space, columns sign-normalized.
pub fn orthonormal_basis(a: &SymMatrix, eps: f64, which: Subspace) -> Result<DMatrix<f64>> {
    let e = eig_sym(a)?;
    basis_from_eig(&e, eps, which)
}

pub fn basis_from_eig(e: &EigDecomp, eps: f64, which: Subspace) -> Result<DMatrix<f64>> {
    let r = rank_eps(e.values.as_slice(), eps)?.rank;
    let n = e.values.len();
    let cols: Vec<usize> = match which {
        Subspace::Range => (0..r).collect(),
        Subspace::Null => (r..n).collect(),
    };
    let mut b = e.vectors.select_columns(&cols);
    normalize_column_signs(&mut b);
    Ok(b)
}

/// Flips columns so the first component that is not negligible is positive.
pub fn normalize_column_signs(b: &mut DMatrix<f64>) {
    for mut col in b.column_iter_mut() {
        let scale = col.amax();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Largest singular value.
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    singular_values(a).max()
}

pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    if a.is_empty() {
        return DVector::zeros(0);
    }
    // the thin SVD is cheaper on the wide orientation
    if a.nrows() < a.ncols() {
        a.transpose().singular_values()
    } else {
        a.singular_values()
    }
}

/// Operator 2-norm of a symmetric matrix, max |λ|.
pub fn sym_op_norm(a: &SymMatrix) -> Result<f64> {
    let e = eig_sym(a)?;
    Ok(e.max().abs().max(e.min().abs()))
}

/// Length of svec for dimension n.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of entry (i, j), i <= j, in the upper-row-major svec ordering.
pub fn svec_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * i.saturating_sub(1) / 2 + (j - i)
}

/// Isometric packing: off-diagonals carry a √2 factor so ⟨svec A, svec B⟩ = ⟨A, B⟩.
pub fn svec(a: &SymMatrix) -> DVector<f64> {
    let n = a.n();
    let mut out = DVector::zeros(svec_len(n));
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            out[k] = if i == j {
                a.get(i, i)
            } else {
                std::f64::consts::SQRT_2 * a.get(i, j)
            };
            k += 1;
        }
    }
    out
}

pub fn smat(n: usize, v: &DVector<f64>) -> Result<SymMatrix> {
    if v.len() != svec_len(n) {
        return Err(SdpError::DimensionMismatch {
            expected: svec_len(n),
            got: v.len(),
        });
    }
    let mut k = 0;
    Ok(SymMatrix::from_fn(n, |i, j| {
        let x = v[k];
        k += 1;
        if i == j {
            x
        } else {
            x / std::f64::consts::SQRT_2
        }
    }))
}

/// Orthonormal basis of the null space of a wide matrix (rows are constraints).
pub fn null_space(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 {
        return DMatrix::identity(n, n);
    }
    // eigenvectors of AᵀA with (numerically) zero eigenvalue
    let gram = SymMatrix::symmetrized(a.transpose() * a);
    let e = eig_sym(&gram).expect("finite gram");
    let top = e.max().max(0.0);
    let cols: Vec<usize> = (0..n)
        .filter(|&k| e.values[k] <= rel_tol * rel_tol * top.max(f64::MIN_POSITIVE))
        .collect();
    e.vectors.select_columns(&cols)
}

/// Symmetric part of a square dense matrix, as a dense matrix.
pub fn sym_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn random_sym(seed: u64, n: usize) -> SymMatrix {
        SeededRng::new(seed).gaussian_symmetric(n)
    }

    #[test]
    fn identity_spectrum() {
        let e = eig_sym(&SymMatrix::identity(3)).unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn swap_matrix_spectrum() {
        let a = SymMatrix::from_upper(2, &[0.0, 1.0, 0.0]).unwrap();
        let e = eig_sym(&a).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        for seed in 0..20 {
            let a = random_sym(seed, 5);
            let e = eig_sym(&a).unwrap();
            let rec = e.recompose().sub(&a).frobenius();
            assert!(rec <= 1e-10 * a.frobenius().max(1.0), "rec {rec}");
            let orth = (e.vectors.transpose() * &e.vectors - DMatrix::identity(5, 5)).norm();
            assert!(orth <= 1e-10);
            assert!(e.values.as_slice().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut a = SymMatrix::identity(2);
        a.set(0, 1, f64::NAN);
        assert!(matches!(eig_sym(&a), Err(SdpError::InvalidInput(_))));
    }

    #[test]
    fn rank_threshold_arithmetic() {
        let info = rank_eps(&[2.0, 1e-3, 1e-9], 1e-6).unwrap();
        assert_eq!(info.rank, 2);
        assert_eq!(info.lambda_min_pos, Some(1e-3));
        let info = rank_eps(&[0.0, 0.0, 0.0], 1e-6).unwrap();
        assert_eq!(info.rank, 0);
        assert_eq!(info.lambda_min_pos, None);
        assert!(rank_eps(&[1.0, 2.0], 1e-6).is_err());
        assert!(rank_eps(&[1.0], 0.0).is_err());
    }

    #[test]
    fn null_basis_of_diag() {
        let a = SymMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let b = orthonormal_basis(&a, 1e-6, Subspace::Null).unwrap();
        assert_eq!(b.ncols(), 1);
        assert!((b[(0, 0)]).abs() < 1e-14);
        assert!((b[(1, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn range_basis_of_diag() {
        let a = SymMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 0.0, 0.0]));
        let b = orthonormal_basis(&a, 1e-6, Subspace::Range).unwrap();
        assert_eq!(b.ncols(), 2);
        // projector onto span{e1, e2}
        let p = &b * b.transpose();
        let mut expect = DMatrix::zeros(4, 4);
        expect[(0, 0)] = 1.0;
        expect[(1, 1)] = 1.0;
        assert!((p - expect).norm() < 1e-12);
    }

    #[test]
    fn rank_one_sign_vector_range() {
        let mut rng = SeededRng::new(5);
        let n = 9;
        let z = DVector::from_fn(n, |_, _| rng.sign());
        let b = orthonormal_basis(&SymMatrix::outer(&z), 1e-6, Subspace::Range).unwrap();
        assert_eq!(b.ncols(), 1);
        // oracle: z/√n with the first entry made positive
        let expect = &z * (z[0].signum() / (n as f64).sqrt());
        assert!((b.column(0) - expect).norm() < 1e-12);
    }

    #[test]
    fn op_norm_small_cases() {
        assert!((op_norm(&DMatrix::identity(3, 3)) - 1.0).abs() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -5.0]));
        assert!((op_norm(&d) - 5.0).abs() < 1e-14);
    }

    #[test]
    fn op_norm_matches_gram_oracle() {
        // σ₁(A)² is the top eigenvalue of AᵀA: an independent route to the SVD
        let mut rng = SeededRng::new(11);
        let a = rng.normal_matrix(6, 4);
        let gram = SymMatrix::symmetrized(a.transpose() * &a);
        let oracle = eig_sym(&gram).unwrap().max().sqrt();
        assert!((op_norm(&a) - oracle).abs() <= 1e-8 * oracle);
    }

    #[test]
    fn svec_index_matches_packing() {
        let n = 6;
        let a = SymMatrix::from_fn(n, |i, j| (10 * i + j) as f64);
        let v = svec(&a);
        for i in 0..n {
            for j in i..n {
                let expect = if i == j {
                    a.get(i, j)
                } else {
                    std::f64::consts::SQRT_2 * a.get(i, j)
                };
                assert_eq!(v[svec_index(n, i, j)], expect);
                assert_eq!(svec_index(n, i, j), svec_index(n, j, i));
            }
        }
    }

    #[test]
    fn serde_upper_layout() {
        let a = SymMatrix::from_upper(2, &[1.0, 2.0, 3.0]).unwrap();
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, r#"{"n":2,"upper":[1.0,2.0,3.0]}"#);
        let back: SymMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }

    proptest! {
        #[test]
        fn svec_is_isometric_roundtrip(seed in 0u64..10_000, n in 1usize..8) {
            let mut rng = SeededRng::new(seed);
            let a = rng.gaussian_symmetric(n);
            let b = rng.gaussian_symmetric(n);
            let back = smat(n, &svec(&a)).unwrap();
            prop_assert!(back.sub(&a).frobenius() <= 1e-15 * (1.0 + a.frobenius()));
            let lhs = svec(&a).dot(&svec(&b));
            prop_assert!((lhs - a.inner(&b)).abs() <= 1e-12 * (1.0 + a.frobenius() * b.frobenius()));
        }

        #[test]
        fn eig_recovers_planted_spectrum(seed in 0u64..10_000, n in 1usize..9) {
            let mut rng = SeededRng::new(seed);
            let q = rng.orthogonal(n);
            let mut d: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let a = SymMatrix::congruence(&q, &SymMatrix::from_diagonal(&DVector::from_vec(d.clone())));
            let e = eig_sym(&a).unwrap();
            d.sort_by(|x, y| y.total_cmp(x));
            for (got, want) in e.values.iter().zip(&d) {
                prop_assert!((got - want).abs() <= 1e-8);
            }
        }

        #[test]
        fn rank_is_monotone_in_eps(seed in 0u64..10_000, e1 in 1e-9f64..1.0, e2 in 1e-9f64..1.0) {
            let mut rng = SeededRng::new(seed);
            let mut vals: Vec<f64> = (0..10).map(|_| rng.uniform().powi(6)).collect();
            vals.sort_by(|x, y| y.total_cmp(x));
            let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(rank_eps(&vals, lo).unwrap().rank >= rank_eps(&vals, hi).unwrap().rank);
        }
    }
}
