//! Burer–Monteiro factorized solver over `{F ∈ ℝ^{n×r} : 𝒜(FFᵀ) = b}`.
//!
//! The constraint set splits into row groups that no constraint couples.
//! Each group is either a scaled sphere (one diagonal constraint
//! `c Σ_{i∈g} ‖F_i‖² = b`) or a Stiefel block (`F_g F_gᵀ = I_d`).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdpError};
use crate::linalg::{eig_sym, null_space, SymMatrix};
use crate::model::StandardFormSdp;
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManifoldKind {
    UnitRows,
    GroupSpheres,
    BlockStiefel,
}

#[derive(Clone, Debug, PartialEq)]
enum GroupShape {
    /// `Σ_{i∈g} ‖F_i‖² = radius²`
    Sphere { radius: f64 },
    Stiefel,
}

#[derive(Clone, Debug, PartialEq)]
struct Group {
    rows: Vec<usize>,
    constraints: Vec<usize>,
    shape: GroupShape,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifold {
    kind: ManifoldKind,
    n: usize,
    r: usize,
    groups: Vec<Group>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

impl Manifold {
    /// Recognizes the constraint structure of `sdp` and fixes the rank.
    pub fn for_sdp(sdp: &StandardFormSdp, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(SdpError::InvalidInput("r must be at least 1".into()));
        }
        let n = sdp.n();
        let mut parent: Vec<usize> = (0..n).collect();
        for a in sdp.constraints() {
            let Some(&(first, _, _)) = a.entries().first() else {
                continue;
            };
            for &(i, j, _) in a.entries() {
                for k in [i, j] {
                    let (pk, pf) = (find(&mut parent, k), find(&mut parent, first));
                    parent[pk] = pf;
                }
            }
        }
        let mut root_group = vec![usize::MAX; n];
        let mut groups: Vec<Group> = Vec::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            if root_group[root] == usize::MAX {
                root_group[root] = groups.len();
                groups.push(Group {
                    rows: Vec::new(),
                    constraints: Vec::new(),
                    shape: GroupShape::Stiefel,
                });
            }
            groups[root_group[root]].rows.push(i);
        }
        for (k, a) in sdp.constraints().iter().enumerate() {
            if let Some(&(i, _, _)) = a.entries().first() {
                let g = root_group[find(&mut parent, i)];
                groups[g].constraints.push(k);
            } else {
                return Err(SdpError::InvalidInput(format!("constraint {k} is zero")));
            }
        }
        for g in &mut groups {
            g.shape = classify(sdp, g)?;
            if g.shape == GroupShape::Stiefel && g.rows.len() > r {
                return Err(SdpError::InvalidInput(format!(
                    "block of size {} needs r >= {}",
                    g.rows.len(),
                    g.rows.len()
                )));
            }
        }
        let spheres = groups.iter().filter(|g| matches!(g.shape, GroupShape::Sphere { .. })).count();
        let kind = if spheres == groups.len() {
            if groups.iter().all(|g| g.rows.len() == 1) {
                ManifoldKind::UnitRows
            } else {
                ManifoldKind::GroupSpheres
            }
        } else if spheres == 0 {
            ManifoldKind::BlockStiefel
        } else {
            return Err(SdpError::InvalidInput("mixed sphere and Stiefel groups".into()));
        };
        Ok(Manifold { kind, n, r, groups })
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n, self.r)
    }

    /// `nr − m`
    pub fn dim(&self) -> usize {
        self.n * self.r - self.groups.iter().map(|g| g.constraints.len()).sum::<usize>()
    }

    fn rows_of(&self, g: &Group, x: &DMatrix<f64>) -> DMatrix<f64> {
        x.select_rows(&g.rows)
    }

    fn put_rows(&self, g: &Group, x: &mut DMatrix<f64>, block: &DMatrix<f64>) {
        for (a, &i) in g.rows.iter().enumerate() {
            x.row_mut(i).copy_from(&block.row(a));
        }
    }

    /// Constraint gradients `2 A_c F` restricted to the group rows, one per column.
    fn normals(&self, sdp: &StandardFormSdp, g: &Group, f: &DMatrix<f64>) -> DMatrix<f64> {
        let k = g.rows.len();
        let mut local = vec![usize::MAX; self.n];
        for (a, &i) in g.rows.iter().enumerate() {
            local[i] = a;
        }
        let mut nmat = DMatrix::zeros(k * self.r, g.constraints.len());
        for (col, &c) in g.constraints.iter().enumerate() {
            for &(i, j, v) in sdp.constraints()[c].entries() {
                for t in 0..self.r {
                    nmat[(local[i] + k * t, col)] += 2.0 * v * f[(j, t)];
                    if i != j {
                        nmat[(local[j] + k * t, col)] += 2.0 * v * f[(i, t)];
                    }
                }
            }
        }
        nmat
    }

    /// Tangent projection of `xi` and the least-squares multipliers, in constraint order.
    fn project_with_multipliers(
        &self,
        sdp: &StandardFormSdp,
        f: &DMatrix<f64>,
        xi: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let mut out = xi.clone();
        let mut mu = DVector::zeros(sdp.m());
        for g in &self.groups {
            let nmat = self.normals(sdp, g, f);
            let block = self.rows_of(g, xi);
            let v = DVector::from_column_slice(block.as_slice());
            let gram = nmat.transpose() * &nmat;
            let rhs = nmat.transpose() * &v;
            let coef = gram
                .cholesky()
                .ok_or_else(|| SdpError::NumericalBreakdown("singular constraint normals".into()))?
                .solve(&rhs);
            let proj = v - &nmat * &coef;
            let pb = DMatrix::from_column_slice(g.rows.len(), self.r, proj.as_slice());
            self.put_rows(g, &mut out, &pb);
            for (a, &c) in g.constraints.iter().enumerate() {
                // ξ − Σ coef_c 2A_cF, so for ξ = 2CF this is 2(C − 𝒜*coef)F
                mu[c] = coef[a];
            }
        }
        Ok((out, mu))
    }

    pub fn project(&self, sdp: &StandardFormSdp, f: &DMatrix<f64>, xi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.project_with_multipliers(sdp, f, xi)?.0)
    }

    /// Row-group normalization for spheres, polar factor for Stiefel blocks.
    pub fn retract(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = y.clone();
        for g in &self.groups {
            let block = self.rows_of(g, y);
            let fixed = match g.shape {
                GroupShape::Sphere { radius } => {
                    let nrm = block.norm();
                    if !(nrm > 0.0) || !nrm.is_finite() {
                        return Err(SdpError::NumericalBreakdown("zero row group in retraction".into()));
                    }
                    block * (radius / nrm)
                }
                GroupShape::Stiefel => {
                    let gram = SymMatrix::symmetrized(&block * block.transpose());
                    let e = eig_sym(&gram)?;
                    if !(e.min() > 0.0) {
                        return Err(SdpError::NumericalBreakdown("rank-deficient block in retraction".into()));
                    }
                    e.map_values(|v| 1.0 / v.sqrt()).as_dmatrix() * block
                }
            };
            self.put_rows(g, &mut out, &fixed);
        }
        Ok(out)
    }

    /// `‖𝒜(FFᵀ) − b‖`
    pub fn violation(&self, sdp: &StandardFormSdp, f: &DMatrix<f64>) -> f64 {
        constraint_residual(sdp, f).norm()
    }

    pub fn random_point(&self, seed: u64) -> Result<DMatrix<f64>> {
        let mut rng = SeededRng::new(seed);
        self.retract(&rng.normal_matrix(self.n, self.r))
    }

    /// Orthonormal tangent basis, one column per direction in vec (column-major) order.
    pub fn tangent_basis(&self, sdp: &StandardFormSdp, f: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, r) = (self.n, self.r);
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(self.dim());
        for g in &self.groups {
            let k = g.rows.len();
            let nmat = self.normals(sdp, g, f);
            let basis = null_space(&nmat.transpose(), 1e-6);
            for b in basis.column_iter() {
                let mut full = DVector::zeros(n * r);
                for t in 0..r {
                    for (a, &i) in g.rows.iter().enumerate() {
                        full[i + n * t] = b[a + k * t];
                    }
                }
                cols.push(full);
            }
        }
        if cols.is_empty() {
            return DMatrix::zeros(n * r, 0);
        }
        DMatrix::from_columns(&cols)
    }
}

fn classify(sdp: &StandardFormSdp, g: &Group) -> Result<GroupShape> {
    let cons = sdp.constraints();
    if g.constraints.len() == 1 {
        let c = g.constraints[0];
        let entries = cons[c].entries();
        let coef = entries[0].2;
        let diag_uniform = entries.iter().all(|&(i, j, v)| i == j && v == coef);
        let b = sdp.b()[c];
        if diag_uniform && entries.len() == g.rows.len() && coef > 0.0 && b > 0.0 {
            return Ok(GroupShape::Sphere { radius: (b / coef).sqrt() });
        }
    }
    let d = g.rows.len();
    if g.constraints.len() == d * (d + 1) / 2 {
        let mut seen = vec![false; d * d];
        let ok = g.constraints.iter().all(|&c| {
            let Some((i, j)) = cons[c].single_position() else {
                return false;
            };
            let v = cons[c].entries()[0].2;
            let (a, e) = (g.rows.binary_search(&i), g.rows.binary_search(&j));
            let (Ok(a), Ok(e)) = (a, e) else {
                return false;
            };
            let expect_b = if i == j { 1.0 } else { 0.0 };
            // sym_unit scaling: diagonal 1, off-diagonal 1/2
            let unit = if i == j { v == 1.0 } else { v == 0.5 };
            let fresh = !seen[a * d + e];
            seen[a * d + e] = true;
            unit && fresh && sdp.b()[c] == expect_b
        });
        if ok {
            return Ok(GroupShape::Stiefel);
        }
    }
    Err(SdpError::InvalidInput(format!(
        "row group starting at {} is neither a sphere nor an orthogonality block",
        g.rows[0]
    )))
}

/// `tr(C F Fᵀ)`
pub fn objective(c: &SymMatrix, f: &DMatrix<f64>) -> f64 {
    (c.as_dmatrix() * f).dot(f)
}

/// `⟨A_i, FFᵀ⟩ − b_i`
fn constraint_residual(sdp: &StandardFormSdp, f: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        sdp.m(),
        sdp.constraints().iter().zip(sdp.b().iter()).map(|(a, b)| {
            a.entries()
                .iter()
                .map(|&(i, j, v)| {
                    let d = f.row(i).dot(&f.row(j));
                    if i == j {
                        v * d
                    } else {
                        2.0 * v * d
                    }
                })
                .sum::<f64>()
                - b
        }),
    )
}

/// `f(F + D) − f(F)` without cancellation: `⟨CD, D⟩ + 2⟨CF, D⟩`.
fn objective_change(c: &SymMatrix, cf: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    (c.as_dmatrix() * d).dot(d) + 2.0 * cf.dot(d)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BmConfig {
    /// defaults to 10⁻⁸(1+‖C‖_F)
    pub tol_g: Option<f64>,
    /// defaults to 10⁻⁶(1+‖C‖_F)
    pub tol_h: Option<f64>,
    pub max_iter: usize,
    pub max_escapes: usize,
}

impl Default for BmConfig {
    fn default() -> Self {
        BmConfig {
            tol_g: None,
            tol_h: None,
            max_iter: 20_000,
            max_escapes: 50,
        }
    }
}

impl BmConfig {
    pub fn tolerances(&self, c: &SymMatrix) -> (f64, f64) {
        let s = 1.0 + c.frobenius();
        (self.tol_g.unwrap_or(1e-8 * s), self.tol_h.unwrap_or(1e-6 * s))
    }
}

#[derive(Clone, Debug)]
pub enum BmInit {
    Seed(u64),
    Point(DMatrix<f64>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BmResult {
    #[serde(with = "crate::serde_util::dmat")]
    pub f: DMatrix<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub hess_min_eig: f64,
    pub sosp: bool,
    pub gap_to_dual: Option<f64>,
    pub iterations: usize,
    pub escapes: usize,
    pub seed: Option<u64>,
    /// objective after each accepted step
    #[serde(skip)]
    pub trace: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SospCheck {
    pub grad_norm: f64,
    pub hess_min_eig: f64,
    pub sosp: bool,
}

/// Riemannian gradient `P_T(2CF)` and multipliers `y` with `grad = 2(C − 𝒜*y)F`.
pub fn riemannian_gradient(
    sdp: &StandardFormSdp,
    m: &Manifold,
    f: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let egrad = sdp.c().as_dmatrix() * f * 2.0;
    m.project_with_multipliers(sdp, f, &egrad)
}

/// `⟨ξ, Hess f(F)[ξ]⟩ = 2⟨ξ, (C − 𝒜*y)ξ⟩` for tangent ξ.
pub fn hessian_quadratic(sdp: &StandardFormSdp, m: &Manifold, f: &DMatrix<f64>, xi: &DMatrix<f64>) -> Result<f64> {
    let (_, y) = riemannian_gradient(sdp, m, f)?;
    let s = sdp.slack(&y)?;
    Ok(2.0 * (s.as_dmatrix() * xi).dot(xi))
}

/// Smallest eigenvalue of the Hessian on the tangent space and its unit eigenvector.
fn hessian_min(sdp: &StandardFormSdp, m: &Manifold, f: &DMatrix<f64>, y: &DVector<f64>) -> Result<(f64, DMatrix<f64>)> {
    let (n, r) = m.shape();
    let basis = m.tangent_basis(sdp, f);
    let k = basis.ncols();
    if k == 0 {
        return Ok((f64::INFINITY, DMatrix::zeros(n, r)));
    }
    let s = sdp.slack(y)?;
    let mut sb = DMatrix::zeros(n * r, k);
    for col in 0..k {
        let t = DMatrix::from_column_slice(n, r, basis.column(col).as_slice());
        let st = s.as_dmatrix() * t * 2.0;
        sb.column_mut(col).copy_from_slice(st.as_slice());
    }
    let h = SymMatrix::symmetrized(basis.transpose() * sb);
    let e = eig_sym(&h)?;
    let v = &basis * e.vectors.column(k - 1);
    Ok((e.values[k - 1], DMatrix::from_column_slice(n, r, v.as_slice())))
}

fn check_membership(sdp: &StandardFormSdp, m: &Manifold, f: &DMatrix<f64>, tol: f64) -> Result<()> {
    if f.shape() != m.shape() {
        return Err(SdpError::DimensionMismatch {
            expected: m.shape().0 * m.shape().1,
            got: f.nrows() * f.ncols(),
        });
    }
    let v = m.violation(sdp, f);
    if !(v <= tol) {
        return Err(SdpError::InvalidInput(format!("F is off the manifold by {v:.2e}")));
    }
    Ok(())
}

pub fn check_sosp(sdp: &StandardFormSdp, m: &Manifold, f: &DMatrix<f64>, tol_g: f64, tol_h: f64) -> Result<SospCheck> {
    check_membership(sdp, m, f, 1e-9)?;
    let (g, y) = riemannian_gradient(sdp, m, f)?;
    let (lam, _) = hessian_min(sdp, m, f, &y)?;
    let grad_norm = g.norm();
    Ok(SospCheck {
        grad_norm,
        hess_min_eig: lam,
        sosp: grad_norm <= tol_g && lam >= -tol_h,
    })
}

/// `f(F) − bᵀy` for dual-feasible y.
pub fn gap_to_dual(sdp: &StandardFormSdp, f: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let z = sdp.slack(y)?;
    let lam = z.min_eigenvalue()?;
    if lam < -1e-8 {
        return Err(SdpError::InvalidInput(format!("y is not dual feasible: λ_min(Z) = {lam:.3e}")));
    }
    Ok(objective(sdp.c(), f) - sdp.dual_objective(y))
}

pub fn bm_solve(sdp: &StandardFormSdp, r: usize, init: BmInit, cfg: &BmConfig) -> Result<BmResult> {
    let m = Manifold::for_sdp(sdp, r)?;
    let (tol_g, tol_h) = cfg.tolerances(sdp.c());
    let (mut f, seed) = match init {
        BmInit::Seed(s) => (m.random_point(s)?, Some(s)),
        BmInit::Point(p) => {
            check_membership(sdp, &m, &p, 1e-9)?;
            (p, None)
        }
    };
    let c = sdp.c();
    let mut cf = c.as_dmatrix() * &f;
    let (mut g, mut y) = riemannian_gradient(sdp, &m, &f)?;
    let mut prev: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    let mut trace = Vec::new();
    let mut s_mat = sdp.slack(&y)?;
    let mut escapes = 0;
    let mut iter = 0;
    let mut hess_min_eig;
    let c_scale = 1.0 + c.frobenius();

    loop {
        let gn = g.norm();
        let mut stalled = false;
        if gn > tol_g && iter < cfg.max_iter {
            let alpha0 = match &prev {
                Some((df, dg)) => {
                    let sy = df.dot(dg).abs();
                    if sy > 0.0 {
                        (df.norm_squared() / sy).clamp(1e-10, 1e10)
                    } else {
                        1.0 / c_scale
                    }
                }
                None => 1.0 / c_scale,
            };
            let mut alpha = alpha0;
            let mut accepted = None;
            for _ in 0..60 {
                let cand = m.retract(&(&f - &g * alpha))?;
                let d = &cand - &f;
                // Lagrangian change ⟨SD, D⟩ + ⟨grad, D⟩ with S = C − 𝒜*y; equals
                // the objective change on the manifold, minus rounding in 𝒜(FFᵀ)
                let change = (s_mat.as_dmatrix() * &d).dot(&d) + g.dot(&d);
                if change <= -1e-4 * alpha * gn * gn {
                    accepted = Some((cand, d));
                    break;
                }
                alpha *= 0.5;
            }
            iter += 1;
            match accepted {
                Some((cand, d)) => {
                    f = cand;
                    trace.push(objective(c, &f));
                    cf = c.as_dmatrix() * &f;
                    let (g_new, y_new) = riemannian_gradient(sdp, &m, &f)?;
                    prev = Some((d, &g_new - &g));
                    g = g_new;
                    y = y_new;
                    s_mat = sdp.slack(&y)?;
                    if m.violation(sdp, &f) > 1e-9 {
                        return Err(SdpError::NumericalBreakdown("iterate left the manifold".into()));
                    }
                    continue;
                }
                None => stalled = true,
            }
        }
        // first-order point, stall, or iteration cap
        let (lam, v) = hessian_min(sdp, &m, &f, &y)?;
        hess_min_eig = lam;
        let first_order = g.norm() <= tol_g || stalled;
        if !(first_order && lam < -tol_h && escapes < cfg.max_escapes && iter < cfg.max_iter) {
            break;
        }
        escapes += 1;
        let v = if v.dot(&g) > 0.0 { -v } else { v };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let cand = m.retract(&(&f + &v * t))?;
            let d = &cand - &f;
            let change = objective_change(c, &cf, &d);
            if change <= 0.25 * t * t * lam {
                f = cand;
                trace.push(objective(c, &f));
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
        cf = c.as_dmatrix() * &f;
        let (g_new, y_new) = riemannian_gradient(sdp, &m, &f)?;
        g = g_new;
        y = y_new;
        s_mat = sdp.slack(&y)?;
        prev = None;
    }
    let grad_norm = g.norm();
    Ok(BmResult {
        objective: objective(c, &f),
        f,
        grad_norm,
        hess_min_eig,
        sosp: grad_norm <= tol_g && hess_min_eig >= -tol_h,
        gap_to_dual: None,
        iterations: iter,
        escapes,
        seed,
        trace,
    })
}

/// Independent starts with seeds `seed, seed+1, …`, returned in seed order.
pub fn bm_multistart(sdp: &StandardFormSdp, r: usize, starts: usize, seed: u64, cfg: &BmConfig) -> Result<Vec<BmResult>> {
    (0..starts as u64)
        .into_par_iter()
        .map(|i| bm_solve(sdp, r, BmInit::Seed(seed.wrapping_add(i)), cfg))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultistartRow {
    pub seed: Option<u64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub hess_min_eig: f64,
    pub sosp: bool,
    pub gap: Option<f64>,
}

impl From<&BmResult> for MultistartRow {
    fn from(r: &BmResult) -> Self {
        MultistartRow {
            seed: r.seed,
            objective: r.objective,
            grad_norm: r.grad_norm,
            hess_min_eig: r.hess_min_eig,
            sosp: r.sosp,
            gap: r.gap_to_dual,
        }
    }
}
