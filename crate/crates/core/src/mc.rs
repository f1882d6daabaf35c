//! Matrix completion: sampling, the lifted nuclear-norm SDP, the golfing
//! dual certificate and the dual-multiplicity experiment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certifier::dual_uniqueness_necessary;
use crate::error::{Result, SdpError};
use crate::instances::{Instance, Truth};
use crate::linalg::{eig_sym, op_norm, rank_eps, SymMatrix};
use crate::model::{SparseSym, StandardFormSdp};
use crate::rng::SeededRng;
use crate::solver::{solve, solve_restricted, SolverConfig};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McProblem {
    pub n1: usize,
    pub n2: usize,
    pub r: usize,
    #[serde(with = "crate::serde_util::dmat")]
    pub x_natural: DMatrix<f64>,
    #[serde(with = "crate::serde_util::dmat")]
    pub u: DMatrix<f64>,
    #[serde(with = "crate::serde_util::dvec")]
    pub sigma: DVector<f64>,
    #[serde(with = "crate::serde_util::dmat")]
    pub v: DMatrix<f64>,
    /// observed positions, sorted row-major
    pub omega: Vec<(usize, usize)>,
    /// the independent batches whose union is `omega`, when sampled that way
    pub batches: Option<Vec<Vec<(usize, usize)>>>,
    pub p: f64,
    pub mu: f64,
    pub seed: Option<u64>,
}

/// Smallest μ with `‖e_iᵀU‖² ≤ μr/n₁` and `‖e_jᵀV‖² ≤ μr/n₂`.
pub fn incoherence(u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let r = u.ncols() as f64;
    let row_max = |m: &DMatrix<f64>| m.row_iter().map(|row| row.norm_squared()).fold(0.0, f64::max);
    (u.nrows() as f64 * row_max(u) / r).max(v.nrows() as f64 * row_max(v) / r)
}

fn check_args(n1: usize, n2: usize, r: usize, p: f64) -> Result<()> {
    if n1 == 0 || n2 == 0 || r == 0 || r > n1.min(n2) {
        return Err(SdpError::InvalidInput(format!("need 1 <= r <= min(n1, n2), got r = {r}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(SdpError::InvalidInput(format!("p must lie in (0, 1], got {p}")));
    }
    Ok(())
}

fn sample(n1: usize, n2: usize, p: f64, rng: &mut SeededRng) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..n1 {
        for j in 0..n2 {
            if rng.bernoulli(p) {
                out.push((i, j));
            }
        }
    }
    out
}

fn union(batches: &[Vec<(usize, usize)>]) -> Vec<(usize, usize)> {
    let mut all: Vec<(usize, usize)> = batches.iter().flatten().cloned().collect();
    all.sort_unstable();
    all.dedup();
    all
}

impl McProblem {
    /// Ground truth `U diag(σ) Vᵀ` with the given observations.
    pub fn from_factors(
        u: DMatrix<f64>,
        sigma: DVector<f64>,
        v: DMatrix<f64>,
        mut omega: Vec<(usize, usize)>,
        p: f64,
    ) -> Result<Self> {
        let (n1, r) = u.shape();
        let n2 = v.nrows();
        check_args(n1, n2, r, p)?;
        if v.ncols() != r || sigma.len() != r {
            return Err(SdpError::DimensionMismatch {
                expected: r,
                got: v.ncols().min(sigma.len()),
            });
        }
        if sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(SdpError::InvalidInput("singular values must be positive".into()));
        }
        let eye = DMatrix::<f64>::identity(r, r);
        if (u.transpose() * &u - &eye).norm() > 1e-10 || (v.transpose() * &v - &eye).norm() > 1e-10 {
            return Err(SdpError::InvalidInput("U and V need orthonormal columns".into()));
        }
        if omega.iter().any(|&(i, j)| i >= n1 || j >= n2) {
            return Err(SdpError::InvalidInput("observed position out of range".into()));
        }
        omega.sort_unstable();
        omega.dedup();
        let x_natural = &u * DMatrix::from_diagonal(&sigma) * v.transpose();
        Ok(McProblem {
            n1,
            n2,
            r,
            mu: incoherence(&u, &v),
            x_natural,
            u,
            sigma,
            v,
            omega,
            batches: None,
            p,
            seed: None,
        })
    }

    pub fn tangent(&self) -> TangentSpace {
        TangentSpace {
            u: self.u.clone(),
            v: self.v.clone(),
        }
    }

    pub fn mask(&self) -> Mask {
        Mask::new(self.n1, self.n2, &self.omega)
    }

    /// `[UΣUᵀ, X; Xᵀ, VΣVᵀ]`
    pub fn lifted_solution(&self) -> SymMatrix {
        let s = DMatrix::from_diagonal(&self.sigma);
        let mut m = DMatrix::zeros(self.n1 + self.n2, self.n1 + self.n2);
        m.view_mut((0, 0), (self.n1, self.n1)).copy_from(&(&self.u * &s * self.u.transpose()));
        m.view_mut((self.n1, self.n1), (self.n2, self.n2)).copy_from(&(&self.v * &s * self.v.transpose()));
        m.view_mut((0, self.n1), (self.n1, self.n2)).copy_from(&self.x_natural);
        m.view_mut((self.n1, 0), (self.n2, self.n1)).copy_from(&self.x_natural.transpose());
        SymMatrix::from_dmatrix(&m).expect("block matrix is symmetric")
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.sigma.sum()
    }
}

fn gaussian_factors(n1: usize, n2: usize, r: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let mut rng = SeededRng::derived(seed, 0);
    let g1 = rng.normal_matrix(n1, r);
    let g2 = rng.normal_matrix(n2, r);
    // thin SVD of G₁G₂ᵀ from the QR factors
    let q1 = g1.qr();
    let q2 = g2.qr();
    let core = q1.r() * q2.r().transpose();
    let svd = core.svd(true, true);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let cu = svd.u.expect("requested");
    let cv = svd.v_t.expect("requested").transpose();
    let mut u = q1.q() * cu.select_columns(&order);
    let mut v = q2.q() * cv.select_columns(&order);
    let sigma = DVector::from_iterator(r, order.iter().map(|&k| svd.singular_values[k]));
    for k in 0..r {
        // sign convention: largest-magnitude entry of each U column positive
        let idx = u.column(k).iamax();
        if u[(idx, k)] < 0.0 {
            u.column_mut(k).neg_mut();
            v.column_mut(k).neg_mut();
        }
    }
    (u, sigma, v)
}

/// Gaussian rank-r ground truth with iid Bernoulli(p) observations.
pub fn mc_generate(n1: usize, n2: usize, r: usize, p: f64, seed: u64) -> Result<McProblem> {
    check_args(n1, n2, r, p)?;
    let (u, sigma, v) = gaussian_factors(n1, n2, r, seed);
    let omega = sample(n1, n2, p, &mut SeededRng::derived(seed, 1));
    let mut prob = McProblem::from_factors(u, sigma, v, omega, p)?;
    prob.seed = Some(seed);
    Ok(prob)
}

/// `(k₀, t₀, q)` with `k₀ = ⌈C₀ log(μr)⌉` (at least 1), `t₀ = ⌈2 log n⌉ + 2`,
/// `q = 1 − (1−p)^{1/k₀}`.
pub fn golfing_schedule(mu: f64, r: usize, n: usize, p: f64, c0: f64) -> (usize, usize, f64) {
    let k0 = ((c0 * (mu * r as f64).ln()).ceil() as i64).max(1) as usize;
    let t0 = (2.0 * (n as f64).ln()).ceil() as usize + 2;
    let q = 1.0 - (1.0 - p).powf(1.0 / k0 as f64);
    (k0, t0, q)
}

fn batches_for(prob: &McProblem, k0: usize, q: f64, seed: u64) -> Vec<Vec<(usize, usize)>> {
    (0..k0)
        .map(|t| sample(prob.n1, prob.n2, q, &mut SeededRng::derived(seed, 2 + t as u64)))
        .collect()
}

/// Same ground truth as [`mc_generate`], with Ω the union of k₀ independent
/// Bernoulli(q) batches.
pub fn mc_generate_batched(n1: usize, n2: usize, r: usize, p: f64, c0: f64, seed: u64) -> Result<McProblem> {
    let mut prob = mc_generate(n1, n2, r, p, seed)?;
    let (k0, _, q) = golfing_schedule(prob.mu, r, n1.max(n2), p, c0);
    let batches = batches_for(&prob, k0, q, seed);
    prob.omega = union(&batches);
    prob.batches = Some(batches);
    Ok(prob)
}

/// Lifted problem `min tr(X̃)` s.t. `X̃_{i, n₁+j} = (X_♮)_{ij}` for `(i,j) ∈ Ω`.
pub fn mc_lift(prob: &McProblem) -> Result<Instance> {
    if prob.omega.is_empty() {
        return Err(SdpError::InvalidInput("no observed entries".into()));
    }
    let dim = prob.n1 + prob.n2;
    let constraints: Vec<SparseSym> = prob
        .omega
        .iter()
        .map(|&(i, j)| SparseSym::sym_unit(i, prob.n1 + j))
        .collect();
    let b = DVector::from_iterator(prob.omega.len(), prob.omega.iter().map(|&(i, j)| prob.x_natural[(i, j)]));
    let sdp = StandardFormSdp::new(
        SymMatrix::identity(dim),
        constraints,
        b,
        format!("mc-{}x{}-r{}", prob.n1, prob.n2, prob.r),
    )?;
    let mut inst = Instance::plain(sdp)
        .param("n1", prob.n1 as f64)
        .param("n2", prob.n2 as f64)
        .param("r", prob.r as f64)
        .param("p", prob.p)
        .param("mu", prob.mu);
    inst.truth = Some(Truth {
        x_star: prob.lifted_solution(),
        y_star: None,
        rank_star: prob.r,
    });
    inst.seed = prob.seed;
    Ok(inst)
}

/// Observation pattern as a dense boolean mask.
#[derive(Clone, Debug)]
pub struct Mask {
    n1: usize,
    n2: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(n1: usize, n2: usize, omega: &[(usize, usize)]) -> Self {
        let mut bits = vec![false; n1 * n2];
        for &(i, j) in omega {
            bits[i * n2 + j] = true;
        }
        Mask { n1, n2, bits }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n2 + j]
    }

    /// `P_Ω`
    pub fn apply(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.n1, self.n2, |i, j| if self.contains(i, j) { z[(i, j)] } else { 0.0 })
    }
}

/// Tangent space `T = {UAᵀ + BVᵀ}` at the ground truth.
#[derive(Clone, Debug)]
pub struct TangentSpace {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl TangentSpace {
    /// `Π_T(Z) = UUᵀZ + ZVVᵀ − UUᵀZVVᵀ`
    pub fn project(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let uz = &self.u * (self.u.transpose() * z);
        let zv = (z * &self.v) * self.v.transpose();
        let uzv = &self.u * ((self.u.transpose() * z * &self.v) * self.v.transpose());
        uz + zv - uzv
    }

    /// `Π_{T⊥}(Z) = (I − UUᵀ) Z (I − VVᵀ)`
    pub fn project_perp(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let left = z - &self.u * (self.u.transpose() * z);
        &left - (&left * &self.v) * self.v.transpose()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GolfingState {
    pub k0: usize,
    pub t0: usize,
    pub q_batch: f64,
    pub batch_sizes: Vec<usize>,
    /// ‖W^t‖_F for t = 0..k₀−1
    pub w_norms: Vec<f64>,
    /// ‖Z^t‖_F for t = 0, 1, …
    pub z_norms: Vec<f64>,
    #[serde(with = "crate::serde_util::dmat")]
    pub y1: DMatrix<f64>,
    #[serde(with = "crate::serde_util::dmat")]
    pub y2: DMatrix<f64>,
    #[serde(with = "crate::serde_util::dmat")]
    pub y3: DMatrix<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GolfingChecks {
    /// ‖P_Ω(Y) − Y‖_F
    pub p_omega_residual: f64,
    /// ‖Π_T(Y) − UVᵀ‖_F
    pub tangent_residual: f64,
    /// ‖Π_{T⊥}(Y)‖_op
    pub perp_norm: f64,
    pub perp_bound_holds: bool,
    /// share of phase-2 steps with ‖Z^t‖ ≤ ‖Z^{t−1}‖/4
    pub contraction_fraction: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GolfingOutput {
    /// the problem with Ω replaced by the union of the batches
    pub problem: McProblem,
    #[serde(with = "crate::serde_util::dmat")]
    pub y: DMatrix<f64>,
    pub state: GolfingState,
    pub checks: GolfingChecks,
}

const GOLF_MAX_STEPS: usize = 10_000;

/// Golfing-scheme certificate `Y = Y₁ + Y₂ + Y₃`. Batches are taken from
/// `prob.batches` when present and resampled from `seed` otherwise.
pub fn golfing_certificate(prob: &McProblem, c0: f64, seed: u64) -> Result<GolfingOutput> {
    if !(c0 > 0.0) {
        return Err(SdpError::InvalidInput("C0 must be positive".into()));
    }
    let (k0, t0, q) = golfing_schedule(prob.mu, prob.r, prob.n1.max(prob.n2), prob.p, c0);
    let batches = match &prob.batches {
        Some(b) if b.len() == k0 => b.clone(),
        _ => batches_for(prob, k0, q, seed),
    };
    let mut problem = prob.clone();
    problem.omega = union(&batches);
    problem.batches = Some(batches.clone());
    let masks: Vec<Mask> = batches.iter().map(|b| Mask::new(prob.n1, prob.n2, b)).collect();
    let tangent = prob.tangent();
    let w0 = &prob.u * prob.v.transpose();
    let w0_norm = w0.norm();

    let zeros = || DMatrix::zeros(prob.n1, prob.n2);
    let (mut y1, mut y2, mut y3) = (zeros(), zeros(), zeros());
    let mut w = w0.clone();
    let mut w_norms = vec![w.norm()];
    for mask in masks.iter().take(k0 - 1) {
        let term = mask.apply(&w) / q;
        y1 += &term;
        w = tangent.project(&(&w - &term));
        w_norms.push(w.norm());
    }

    let last = &masks[k0 - 1];
    let mut z = w;
    let mut z_norms = vec![z.norm()];
    let mut growth = 0;
    let mut contracted = 0;
    let mut t = 0;
    loop {
        t += 1;
        let term = last.apply(&z) / q;
        if t <= t0 {
            y2 += &term;
        } else {
            y3 += &term;
        }
        let next = tangent.project(&(&z - &term));
        let (prev_norm, norm) = (z.norm(), next.norm());
        z_norms.push(norm);
        if norm <= 0.25 * prev_norm {
            contracted += 1;
        }
        growth = if norm > prev_norm { growth + 1 } else { 0 };
        z = next;
        if growth >= 5 {
            return Err(SdpError::CertificateFailure(format!(
                "golfing iterates grew for 5 consecutive steps (‖Z‖_F = {norm:.3e} at step {t}, q = {q:.4}, k0 = {k0}); the sampling rate is too low"
            )));
        }
        if t >= t0 && norm <= 1e-12 * w0_norm {
            break;
        }
        if t >= GOLF_MAX_STEPS {
            return Err(SdpError::CertificateFailure(format!(
                "golfing did not converge in {GOLF_MAX_STEPS} steps (‖Z‖_F = {norm:.3e})"
            )));
        }
    }

    let y = &y1 + &y2 + &y3;
    let full_mask = problem.mask();
    let perp_norm = op_norm(&tangent.project_perp(&y));
    let checks = GolfingChecks {
        p_omega_residual: (full_mask.apply(&y) - &y).norm(),
        tangent_residual: (tangent.project(&y) - &w0).norm(),
        perp_norm,
        perp_bound_holds: perp_norm <= 5.0 / 8.0,
        contraction_fraction: contracted as f64 / t as f64,
    };
    Ok(GolfingOutput {
        problem,
        y,
        state: GolfingState {
            k0,
            t0,
            q_batch: q,
            batch_sizes: batches.iter().map(|b| b.len()).collect(),
            w_norms,
            z_norms,
            y1,
            y2,
            y3,
        },
        checks,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StrictComplementarityReport {
    pub lambda_min: f64,
    /// λ_{N−r}(I − Ỹ), the (r+1)-th smallest eigenvalue
    pub lambda_gap: f64,
    /// ‖(I − Ỹ)[U; V]‖_F
    pub null_residual: f64,
    /// ⟨X̃⋆, I − Ỹ⟩
    pub complementarity: f64,
    /// 2 tr(X_♮ᵀ Y) − tr(X̃⋆)
    pub duality_gap: f64,
    pub psd: bool,
    pub strictly_complementary: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LiftedDual {
    /// multipliers in Ω order, `y_{ij} = 2 Y_{ij}`
    #[serde(with = "crate::serde_util::dvec")]
    pub y: DVector<f64>,
    pub y_tilde: SymMatrix,
    pub report: StrictComplementarityReport,
}

/// Embeds Y as `Ỹ = [0, Y; Yᵀ, 0]` and checks `I − Ỹ` against the lifted solution.
pub fn lifted_dual_from_y(prob: &McProblem, y: &DMatrix<f64>) -> Result<LiftedDual> {
    if y.shape() != (prob.n1, prob.n2) {
        return Err(SdpError::DimensionMismatch {
            expected: prob.n1 * prob.n2,
            got: y.nrows() * y.ncols(),
        });
    }
    let mask = prob.mask();
    for i in 0..prob.n1 {
        for j in 0..prob.n2 {
            if !mask.contains(i, j) && y[(i, j)] != 0.0 {
                return Err(SdpError::InvalidInput(format!("Y has support outside Ω at ({i}, {j})")));
            }
        }
    }
    let dim = prob.n1 + prob.n2;
    let mut yt = DMatrix::zeros(dim, dim);
    yt.view_mut((0, prob.n1), (prob.n1, prob.n2)).copy_from(y);
    yt.view_mut((prob.n1, 0), (prob.n2, prob.n1)).copy_from(&y.transpose());
    let y_tilde = SymMatrix::from_dmatrix(&yt)?;
    let slack = SymMatrix::identity(dim).sub(&y_tilde);
    let e = eig_sym(&slack)?;
    let asc: Vec<f64> = e.values.iter().rev().cloned().collect();
    let mut stacked = DMatrix::zeros(dim, prob.r);
    stacked.view_mut((0, 0), (prob.n1, prob.r)).copy_from(&prob.u);
    stacked.view_mut((prob.n1, 0), (prob.n2, prob.r)).copy_from(&prob.v);
    let x_star = prob.lifted_solution();
    let lambda_min = asc[0];
    let lambda_gap = asc.get(prob.r).cloned().unwrap_or(f64::INFINITY);
    let report = StrictComplementarityReport {
        lambda_min,
        lambda_gap,
        null_residual: (slack.as_dmatrix() * &stacked).norm(),
        complementarity: x_star.inner(&slack),
        duality_gap: 2.0 * prob.x_natural.dot(y) - x_star.trace(),
        psd: lambda_min >= -1e-10,
        strictly_complementary: lambda_min >= -1e-10 && lambda_gap > 1e-6,
    };
    let yv = DVector::from_iterator(prob.omega.len(), prob.omega.iter().map(|&(i, j)| 2.0 * y[(i, j)]));
    Ok(LiftedDual {
        y: yv,
        y_tilde,
        report,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiplicityReport {
    pub rank_star: usize,
    /// eigenvalues of `Z_{C₁}` (C_s = I), ascending
    pub spectrum_identity: Vec<f64>,
    /// eigenvalues of `Z_{C₂}` (C_s Gaussian), ascending
    pub spectrum_random: Vec<f64>,
    /// ‖Z_{C₁} − Z_{C₂}‖_F
    pub distance: f64,
    pub multiple: bool,
    pub necessary_condition: bool,
    pub primal_error: Option<f64>,
}

/// Solves `sdp`, then maximizes two different objectives over the dual face
/// `{Z = C − 𝒜*y ⪰ 0 : Z X⋆ = 0}` and compares the maximizers.
pub fn dual_multiplicity(sdp: &StandardFormSdp, cfg: &SolverConfig, seed: u64) -> Result<MultiplicityReport> {
    let sol = solve(sdp, cfg)?;
    multiplicity_at(sdp, &sol.x, cfg, seed)
}

fn multiplicity_at(sdp: &StandardFormSdp, x: &SymMatrix, cfg: &SolverConfig, seed: u64) -> Result<MultiplicityReport> {
    let e = eig_sym(x)?;
    let rank_star = rank_eps(e.values.as_slice(), cfg.rank_eps)?.rank;
    let n = sdp.n();
    let u_null = e.vectors.columns(rank_star, n - rank_star).into_owned();
    let k = u_null.ncols();
    let c_rand = SeededRng::new(seed).gaussian_symmetric(k);
    // the face problems are degenerate by construction; first-order accuracy suffices
    let face_cfg = SolverConfig {
        polish: false,
        ..cfg.clone()
    };
    let z1 = SymMatrix::congruence(&u_null, &solve_restricted(sdp, &u_null, &SymMatrix::identity(k), &face_cfg)?);
    let z2 = SymMatrix::congruence(&u_null, &solve_restricted(sdp, &u_null, &c_rand, &face_cfg)?);
    let spectrum = |z: &SymMatrix| -> Result<Vec<f64>> { Ok(eig_sym(z)?.values.iter().rev().cloned().collect()) };
    let distance = z1.sub(&z2).frobenius();
    let multiple = distance > 1e-3 * z1.frobenius().max(z2.frobenius()).max(1.0);
    Ok(MultiplicityReport {
        rank_star,
        spectrum_identity: spectrum(&z1)?,
        spectrum_random: spectrum(&z2)?,
        distance,
        multiple,
        necessary_condition: dual_uniqueness_necessary(n, sdp.m(), rank_star)?,
        primal_error: None,
    })
}

/// [`dual_multiplicity`] on the lifted problem, also recording `‖X⋆ − X̃⋆‖_F`.
pub fn dual_multiplicity_demo(prob: &McProblem, cfg: &SolverConfig, seed: u64) -> Result<MultiplicityReport> {
    let inst = mc_lift(prob)?;
    let sol = solve(&inst.sdp, cfg)?;
    let mut rep = multiplicity_at(&inst.sdp, &sol.x, cfg, seed)?;
    rep.primal_error = Some(sol.x.sub(&prob.lifted_solution()).frobenius());
    Ok(rep)
}

/// CSV with header `index,eigenvalue`, one row per value.
pub fn spectrum_csv(values: &[f64]) -> String {
    let mut out = String::from("index,eigenvalue\n");
    for (k, v) in values.iter().enumerate() {
        out.push_str(&format!("{k},{v:e}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones_problem(n: usize) -> McProblem {
        let u = DMatrix::from_element(n, 1, 1.0 / (n as f64).sqrt());
        let all: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        McProblem::from_factors(u.clone(), DVector::from_element(1, n as f64), u, all, 1.0).unwrap()
    }

    #[test]
    fn full_observation() {
        let prob = mc_generate(5, 4, 2, 1.0, 1).unwrap();
        assert_eq!(prob.omega.len(), 20);
    }

    #[test]
    fn incoherence_extremes() {
        assert!((ones_problem(6).mu - 1.0).abs() < 1e-12);
        let n = 7;
        let mut e1 = DMatrix::zeros(n, 1);
        e1[(0, 0)] = 1.0;
        let spiky = McProblem::from_factors(e1.clone(), DVector::from_element(1, n as f64), e1, vec![(0, 0)], 0.5).unwrap();
        assert!((spiky.mu - n as f64).abs() < 1e-12);
    }

    #[test]
    fn generator_invariants() {
        let prob = mc_generate(12, 9, 3, 0.4, 5).unwrap();
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!((prob.u.transpose() * &prob.u - &eye).norm() <= 1e-10);
        assert!((prob.v.transpose() * &prob.v - &eye).norm() <= 1e-10);
        assert!(prob.mu >= 1.0);
        assert!(prob.sigma.iter().all(|&s| s > 0.0));
        assert!(mc_generate(3, 3, 4, 0.5, 0).is_err());
        assert!(mc_generate(3, 3, 1, 0.0, 0).is_err());
    }

    #[test]
    fn projector_identities() {
        let prob = mc_generate(8, 6, 2, 0.5, 2).unwrap();
        let t = prob.tangent();
        let mask = prob.mask();
        let mut rng = SeededRng::new(3);
        let z = rng.normal_matrix(8, 6);
        let w = rng.normal_matrix(8, 6);
        let pt = t.project(&z);
        let pp = t.project_perp(&z);
        let po = mask.apply(&z);
        assert!((t.project(&pt) - &pt).norm() <= 1e-12);
        assert!((t.project_perp(&pp) - &pp).norm() <= 1e-12);
        assert!((mask.apply(&po) - &po).norm() == 0.0);
        assert!((&pt + &pp - &z).norm() <= 1e-12);
        assert!((pt.dot(&w) - z.dot(&t.project(&w))).abs() <= 1e-12);
        assert!((pp.dot(&w) - z.dot(&t.project_perp(&w))).abs() <= 1e-12);
        // explicit form agrees with (I − UUᵀ) applied on the left of Π_{T⊥}
        assert!((prob.u.transpose() * &pp).norm() <= 1e-12);
    }

    #[test]
    fn lifted_truth_is_feasible() {
        let prob = mc_generate(7, 5, 2, 0.6, 4).unwrap();
        let inst = mc_lift(&prob).unwrap();
        let truth = inst.truth.unwrap();
        let ax = inst.sdp.apply_a(&truth.x_star).unwrap();
        assert!((ax - inst.sdp.b()).amax() <= 1e-12);
        assert!((truth.x_star.trace() - 2.0 * prob.nuclear_norm()).abs() <= 1e-10);
        let e = eig_sym(&truth.x_star).unwrap();
        assert_eq!(rank_eps(e.values.as_slice(), 1e-8).unwrap().rank, 2);
        assert!(inst.sdp.check_surjective().surjective);
    }

    #[test]
    fn golfing_full_observation_is_exact() {
        let prob = mc_generate(6, 6, 2, 1.0, 3).unwrap();
        let g = golfing_certificate(&prob, 4.0, 3).unwrap();
        let uv = &prob.u * prob.v.transpose();
        assert!((&g.y - &uv).norm() <= 1e-12);
        assert!(g.checks.perp_norm <= 1e-12);
        assert_eq!(g.checks.p_omega_residual, 0.0);
    }

    #[test]
    fn lifted_dual_full_observation_spectrum() {
        let prob = mc_generate(6, 5, 2, 1.0, 8).unwrap();
        let y = &prob.u * prob.v.transpose();
        let ld = lifted_dual_from_y(&prob, &y).unwrap();
        // I − Ỹ has eigenvalues 0 (×r), 2 (×r) and 1 elsewhere
        let mut want = vec![0.0; 2];
        want.extend(vec![1.0; 11 - 4]);
        want.extend(vec![2.0; 2]);
        let e = eig_sym(&SymMatrix::identity(11).sub(&ld.y_tilde)).unwrap();
        let got: Vec<f64> = e.values.iter().rev().cloned().collect();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(ld.report.duality_gap.abs() < 1e-10);
        assert!(ld.report.complementarity.abs() < 1e-10);
        assert!(ld.report.strictly_complementary);
        assert!((ld.report.lambda_gap - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lifted_dual_rejects_support_outside_omega() {
        let prob = mc_generate(4, 4, 1, 0.3, 9).unwrap();
        let y = DMatrix::from_element(4, 4, 1.0);
        assert!(matches!(lifted_dual_from_y(&prob, &y), Err(SdpError::InvalidInput(_))));
    }

    #[test]
    fn schedule_values() {
        let (k0, t0, q) = golfing_schedule(1.0, 1, 100, 0.5, 4.0);
        assert_eq!(k0, 1);
        assert_eq!(t0, (2.0 * 100f64.ln()).ceil() as usize + 2);
        assert!((q - 0.5).abs() < 1e-15);
        let (k0, _, q) = golfing_schedule(3.0, 2, 50, 0.5, 4.0);
        assert_eq!(k0, (4.0 * 6f64.ln()).ceil() as usize);
        assert!((1.0 - (1.0 - q).powi(k0 as i32) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn batched_omega_is_union() {
        let prob = mc_generate_batched(10, 10, 2, 0.5, 4.0, 1).unwrap();
        let b = prob.batches.as_ref().unwrap();
        assert_eq!(prob.omega, union(b));
    }

    #[test]
    fn csv_header() {
        let csv = spectrum_csv(&[0.5, 1.0]);
        assert!(csv.starts_with("index,eigenvalue\n0,"));
        assert_eq!(csv.lines().count(), 3);
    }
}
