//! The standard-form primal/dual pair
//!
//! ```text
//! (P)  minimize ⟨C, X⟩  s.t.  ⟨A_i, X⟩ = b_i,  X ⪰ 0
//! (D)  maximize bᵀy     s.t.  Z(y) = C − Σ y_i A_i ⪰ 0
//! ```
//!
//! Constraint matrices are kept sparse as upper-triangle triplets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, SdpError};
use crate::linalg::{eig_sym, singular_values, svec_index, svec_len, SymMatrix};

/// Sparse symmetric matrix stored as upper-triangle triplets `(i, j, v)`, `i <= j`.
/// Entry (i, j) stands for both (i, j) and (j, i).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<(usize, usize, f64)>", try_from = "Vec<(usize, usize, f64)>")]
pub struct SparseSym {
    entries: Vec<(usize, usize, f64)>,
}

impl TryFrom<Vec<(usize, usize, f64)>> for SparseSym {
    type Error = SdpError;
    fn try_from(v: Vec<(usize, usize, f64)>) -> Result<Self> {
        if v.iter().any(|e| !e.2.is_finite()) {
            return Err(SdpError::InvalidInput("non-finite constraint entry".into()));
        }
        Ok(SparseSym::from_triplets(v))
    }
}

impl From<SparseSym> for Vec<(usize, usize, f64)> {
    fn from(s: SparseSym) -> Self {
        s.entries
    }
}

impl SparseSym {
    /// Canonicalizes: swaps to upper triangle, merges duplicates, drops zeros, sorts.
    pub fn from_triplets(triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = triplets
            .into_iter()
            .map(|(i, j, v)| if i <= j { (i, j, v) } else { (j, i, v) })
            .collect();
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (i, j, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        merged.retain(|e| e.2 != 0.0);
        SparseSym { entries: merged }
    }

    /// `e_i e_iᵀ`
    pub fn unit_diag(i: usize) -> Self {
        SparseSym {
            entries: vec![(i, i, 1.0)],
        }
    }

    /// `(e_i e_jᵀ + e_j e_iᵀ)/2`, or `e_i e_iᵀ` when i == j.
    pub fn sym_unit(i: usize, j: usize) -> Self {
        if i == j {
            Self::unit_diag(i)
        } else {
            Self::from_triplets([(i, j, 0.5)])
        }
    }

    /// Upper-triangle part of a dense symmetric matrix, dropping |v| <= drop_tol.
    pub fn from_dense(a: &SymMatrix, drop_tol: f64) -> Self {
        let n = a.n();
        let mut entries = Vec::new();
        for i in 0..n {
            for j in i..n {
                let v = a.get(i, j);
                if v.abs() > drop_tol {
                    entries.push((i, j, v));
                }
            }
        }
        SparseSym { entries }
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.iter().map(|e| e.1).max()
    }

    /// `⟨A, X⟩`
    pub fn inner(&self, x: &SymMatrix) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| if i == j { v * x.get(i, i) } else { 2.0 * v * x.get(i, j) })
            .sum()
    }

    pub fn inner_sparse(&self, other: &SparseSym) -> f64 {
        let (mut a, mut b) = (0, 0);
        let mut acc = 0.0;
        while a < self.entries.len() && b < other.entries.len() {
            let (ia, ja, va) = self.entries[a];
            let (ib, jb, vb) = other.entries[b];
            match (ia, ja).cmp(&(ib, jb)) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += if ia == ja { va * vb } else { 2.0 * va * vb };
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    /// `target += alpha * A`
    pub fn add_to(&self, target: &mut SymMatrix, alpha: f64) {
        for &(i, j, v) in &self.entries {
            target.add_at(i, j, alpha * v);
        }
    }

    pub fn to_dense(&self, n: usize) -> SymMatrix {
        let mut m = SymMatrix::zeros(n);
        self.add_to(&mut m, 1.0);
        m
    }

    pub fn frobenius(&self) -> f64 {
        self.inner_sparse(self).sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> SparseSym {
        SparseSym {
            entries: self.entries.iter().map(|&(i, j, v)| (i, j, alpha * v)).collect(),
        }
    }

    /// `A F` for a dense n×r factor.
    pub fn mul_dense(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(f.nrows(), f.ncols());
        for &(i, j, v) in &self.entries {
            for c in 0..f.ncols() {
                out[(i, c)] += v * f[(j, c)];
                if i != j {
                    out[(j, c)] += v * f[(i, c)];
                }
            }
        }
        out
    }

    /// `Bᵀ A B` for a dense n×k basis.
    pub fn congruence_t(&self, basis: &DMatrix<f64>) -> SymMatrix {
        let ab = self.mul_dense(basis);
        SymMatrix::symmetrized(basis.transpose() * ab)
    }

    /// `(svec index, value)` pairs of svec(A).
    pub fn svec_entries(&self, n: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(move |&(i, j, v)| {
            let w = if i == j { v } else { std::f64::consts::SQRT_2 * v };
            (svec_index(n, i, j), w)
        })
    }

    /// `(i, j)` when A is a single symmetric coordinate position.
    pub fn single_position(&self) -> Option<(usize, usize)> {
        match self.entries.as_slice() {
            [(i, j, _)] => Some((*i, *j)),
            _ => None,
        }
    }
}

/// A standard-form SDP instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SdpRepr", into = "SdpRepr")]
pub struct StandardFormSdp {
    n: usize,
    c: SymMatrix,
    constraints: Vec<SparseSym>,
    b: DVector<f64>,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct SdpRepr {
    n: usize,
    m: usize,
    label: String,
    c: SymMatrix,
    constraints: Vec<SparseSym>,
    b: Vec<f64>,
}

impl From<StandardFormSdp> for SdpRepr {
    fn from(s: StandardFormSdp) -> Self {
        SdpRepr {
            n: s.n,
            m: s.constraints.len(),
            label: s.label,
            c: s.c,
            constraints: s.constraints,
            b: s.b.as_slice().to_vec(),
        }
    }
}

impl TryFrom<SdpRepr> for StandardFormSdp {
    type Error = SdpError;
    fn try_from(r: SdpRepr) -> Result<Self> {
        check_dim(r.m, r.constraints.len())?;
        check_dim(r.n, r.c.n())?;
        StandardFormSdp::new(r.c, r.constraints, DVector::from_vec(r.b), r.label)
    }
}

impl StandardFormSdp {
    pub fn new(
        c: SymMatrix,
        constraints: Vec<SparseSym>,
        b: DVector<f64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let n = c.n();
        if n == 0 {
            return Err(SdpError::InvalidInput("matrix dimension must be >= 1".into()));
        }
        if constraints.is_empty() {
            return Err(SdpError::InvalidInput("at least one constraint required".into()));
        }
        check_dim(constraints.len(), b.len())?;
        if let Some(k) = constraints.iter().filter_map(|a| a.max_index()).max() {
            if k >= n {
                return Err(SdpError::InvalidInput(format!(
                    "constraint index {k} out of range for n = {n}"
                )));
            }
        }
        if !c.is_finite() || b.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::InvalidInput("non-finite cost or right-hand side".into()));
        }
        Ok(StandardFormSdp {
            n,
            c,
            constraints,
            b,
            label: label.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    pub fn c(&self) -> &SymMatrix {
        &self.c
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn constraints(&self) -> &[SparseSym] {
        &self.constraints
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_cost(&self, c: SymMatrix) -> Result<Self> {
        check_dim(self.n, c.n())?;
        Ok(StandardFormSdp { c, ..self.clone() })
    }

    pub fn with_rhs(&self, b: DVector<f64>) -> Result<Self> {
        check_dim(self.m(), b.len())?;
        Ok(StandardFormSdp { b, ..self.clone() })
    }

    /// `(c·A_i, c·b_i)` for every row.
    pub fn rescale_rows(&self, factors: &[f64]) -> Result<Self> {
        check_dim(self.m(), factors.len())?;
        let constraints = self
            .constraints
            .iter()
            .zip(factors)
            .map(|(a, &f)| a.scaled(f))
            .collect();
        let b = DVector::from_iterator(self.m(), self.b.iter().zip(factors).map(|(b, f)| b * f));
        Ok(StandardFormSdp {
            constraints,
            b,
            ..self.clone()
        })
    }

    /// `[𝒜H]_i = ⟨A_i, H⟩`
    pub fn apply_a(&self, h: &SymMatrix) -> Result<DVector<f64>> {
        check_dim(self.n, h.n())?;
        Ok(DVector::from_iterator(
            self.m(),
            self.constraints.iter().map(|a| a.inner(h)),
        ))
    }

    /// `𝒜*y = Σ y_i A_i`
    pub fn apply_a_adj(&self, y: &DVector<f64>) -> Result<SymMatrix> {
        check_dim(self.m(), y.len())?;
        let mut out = SymMatrix::zeros(self.n);
        for (a, &yi) in self.constraints.iter().zip(y.iter()) {
            if yi != 0.0 {
                a.add_to(&mut out, yi);
            }
        }
        Ok(out)
    }

    /// Slack `Z(y) = C − 𝒜*y`.
    pub fn slack(&self, y: &DVector<f64>) -> Result<SymMatrix> {
        Ok(self.c.sub(&self.apply_a_adj(y)?))
    }

    pub fn primal_objective(&self, x: &SymMatrix) -> f64 {
        self.c.inner(x)
    }

    pub fn dual_objective(&self, y: &DVector<f64>) -> f64 {
        self.b.dot(y)
    }

    pub fn residuals(&self, x: &SymMatrix, y: &DVector<f64>) -> Result<Residuals> {
        let z = self.slack(y)?;
        self.residuals_with_slack(x, y, &z)
    }

    pub(crate) fn residuals_with_slack(
        &self,
        x: &SymMatrix,
        y: &DVector<f64>,
        z: &SymMatrix,
    ) -> Result<Residuals> {
        let primal_infeas = (self.apply_a(x)? - &self.b).norm();
        let dual_infeas = (-eig_sym(z)?.min()).max(0.0);
        let cone_infeas = (-eig_sym(x)?.min()).max(0.0);
        let gap = (self.primal_objective(x) - self.dual_objective(y)).abs();
        Ok(Residuals {
            primal_infeas,
            dual_infeas,
            cone_infeas,
            gap,
        })
    }

    /// Dense m×m Gram matrix `⟨A_i, A_j⟩`.
    pub fn gram(&self) -> DMatrix<f64> {
        let m = self.m();
        let big_n = svec_len(self.n);
        let nnz: usize = self.constraints.iter().map(|a| a.nnz()).sum();
        if nnz.saturating_mul(4) > m.saturating_mul(big_n) {
            let a = self.svec_matrix();
            return &a * a.transpose();
        }
        // sparse route: accumulate over shared svec coordinates
        let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); big_n];
        for (row, a) in self.constraints.iter().enumerate() {
            for (col, v) in a.svec_entries(self.n) {
                by_col[col].push((row, v));
            }
        }
        let mut g = DMatrix::zeros(m, m);
        for col in &by_col {
            for &(r1, v1) in col {
                for &(r2, v2) in col {
                    g[(r1, r2)] += v1 * v2;
                }
            }
        }
        g
    }

    /// Dense m × n(n+1)/2 matrix whose rows are svec(A_i).
    pub fn svec_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.m(), svec_len(self.n));
        for (row, c) in self.constraints.iter().enumerate() {
            for (col, v) in c.svec_entries(self.n) {
                a[(row, col)] += v;
            }
        }
        a
    }

    /// Linear independence of the A_i: σ_min > tol·σ_max.
    pub fn check_surjective(&self) -> Surjectivity {
        const TOL: f64 = 1e-10;
        let m = self.m();
        let big_n = svec_len(self.n);
        if m > big_n {
            return Surjectivity {
                surjective: false,
                sigma_min: 0.0,
                sigma_max: self.gram_sigma_max(),
            };
        }
        let sv = if m.saturating_mul(big_n) <= 4_000_000 {
            singular_values(&self.svec_matrix())
        } else {
            // large sparse maps: singular values through the Gram spectrum
            let g = SymMatrix::symmetrized(self.gram());
            let e = eig_sym(&g).expect("finite gram");
            e.values.map(|v| v.max(0.0).sqrt())
        };
        let sigma_max = sv.max();
        let sigma_min = sv.min();
        Surjectivity {
            surjective: sigma_min > TOL * sigma_max,
            sigma_min,
            sigma_max,
        }
    }

    fn gram_sigma_max(&self) -> f64 {
        let g = SymMatrix::symmetrized(self.gram());
        eig_sym(&g).map(|e| e.max().max(0.0).sqrt()).unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surjectivity {
    pub surjective: bool,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// Absolute KKT residuals of a candidate pair (X, y).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `‖𝒜X − b‖₂`
    pub primal_infeas: f64,
    /// `(−λ_min(Z))₊`
    pub dual_infeas: f64,
    /// `(−λ_min(X))₊`
    pub cone_infeas: f64,
    /// `|⟨C,X⟩ − bᵀy|`
    pub gap: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal_infeas
            .max(self.dual_infeas)
            .max(self.cone_infeas)
            .max(self.gap)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
}

/// A primal–dual pair with its slack and quality measures. `z` is always
/// recomputed as `C − 𝒜*y`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverSolution {
    pub x: SymMatrix,
    #[serde(with = "crate::serde_util::dvec")]
    pub y: DVector<f64>,
    pub z: SymMatrix,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub residuals: Residuals,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl SolverSolution {
    pub fn from_pair(
        sdp: &StandardFormSdp,
        x: SymMatrix,
        y: DVector<f64>,
        status: SolveStatus,
        iterations: usize,
    ) -> Result<Self> {
        let z = sdp.slack(&y)?;
        let residuals = sdp.residuals_with_slack(&x, &y, &z)?;
        Ok(SolverSolution {
            primal_obj: sdp.primal_objective(&x),
            dual_obj: sdp.dual_objective(&y),
            x,
            y,
            z,
            residuals,
            status,
            iterations,
        })
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    /// Re-derives `z` and the residuals against `sdp` (e.g. after loading from disk).
    pub fn refreshed(self, sdp: &StandardFormSdp) -> Result<Self> {
        SolverSolution::from_pair(sdp, self.x, self.y, self.status, self.iterations)
    }
}
