//! First-order splitting solver for standard-form SDPs.
//!
//! The method is an alternating-direction augmented Lagrangian on the dual
//! `max bᵀy s.t. 𝒜*y + S = C, S ⪰ 0` with the primal X as multiplier:
//!
//! ```text
//! y⁺ = (𝒜𝒜*)⁻¹ ( μ(b − 𝒜X) − 𝒜(S − C) )
//! V  = C − 𝒜*y⁺ − μX
//! S⁺ = V₊ ,  X⁺ = (1−α)X + α(S⁺ − V)/μ
//! ```
//!
//! One symmetric eigendecomposition per iteration, a Cholesky factor of
//! the constraint Gram matrix cached up front, and a face-restricted
//! polishing pass at the end that sharpens the rank structure.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdpError};
use crate::linalg::{eig_sym, null_space, SymMatrix};
use crate::model::{SolveStatus, SolverSolution, SparseSym, StandardFormSdp};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Relative primal/dual feasibility target.
    pub tol_feas: f64,
    /// Relative duality-gap target.
    pub tol_gap: f64,
    pub max_iter: usize,
    /// Over-relaxation α ∈ (0, 2) on the primal update.
    pub relaxation: f64,
    /// Initial penalty μ (after data scaling).
    pub penalty: f64,
    pub adapt_penalty: bool,
    /// Primal objective below this value is reported as unbounded.
    pub obj_floor: f64,
    pub polish: bool,
    /// Rank threshold handed to the polishing pass.
    pub rank_eps: f64,
    /// Keep per-iteration residual history in the result.
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_feas: 1e-7,
            tol_gap: 1e-7,
            max_iter: 50_000,
            relaxation: 1.6,
            penalty: 0.1,
            adapt_penalty: true,
            obj_floor: -1e12,
            polish: true,
            rank_eps: crate::linalg::DEFAULT_RANK_EPS,
            record_trace: false,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol_feas = tol;
        self.tol_gap = tol;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol_feas > 0.0 && self.tol_gap > 0.0) {
            return Err(SdpError::InvalidInput("tolerances must be positive".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(SdpError::InvalidInput("relaxation must lie in (0, 2)".into()));
        }
        if !(self.penalty > 0.0) {
            return Err(SdpError::InvalidInput("penalty must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the iteration history, in the solver's scaled units.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    /// `‖𝒜X − b‖ / (1 + ‖b‖)`
    pub pinf: f64,
    /// `‖C − 𝒜*y − S‖ / (1 + ‖C‖)`
    pub dinf: f64,
    pub pobj: f64,
    pub dobj: f64,
    pub penalty: f64,
}

/// Relative quality measures of an (unscaled) pair; all must fall below
/// the configured tolerances for the solve to count as converged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeKkt {
    pub primal: f64,
    pub dual: f64,
    pub cone: f64,
    pub gap: f64,
}

impl RelativeKkt {
    pub fn of(sdp: &StandardFormSdp, sol: &SolverSolution) -> Self {
        let r = &sol.residuals;
        let cnorm = 1.0 + sdp.c().frobenius();
        let xnorm = 1.0 + sol.x.frobenius();
        RelativeKkt {
            primal: r.primal_infeas / (1.0 + sdp.b().norm()),
            dual: r.dual_infeas / cnorm,
            cone: r.cone_infeas / xnorm,
            gap: r.gap / (1.0 + sol.primal_obj.abs() + sol.dual_obj.abs()),
        }
    }

    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.cone).max(self.gap)
    }

    fn meets(&self, cfg: &SolverConfig) -> bool {
        self.primal.max(self.dual).max(self.cone) <= cfg.tol_feas && self.gap <= cfg.tol_gap
    }
}

/// Solution plus solver diagnostics.
#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub solution: SolverSolution,
    pub polished: bool,
    pub trace: Vec<IterRecord>,
    /// Constraint rows dropped as linearly dependent (their y entries are 0).
    pub dropped_rows: Vec<usize>,
}

pub fn solve(sdp: &StandardFormSdp, cfg: &SolverConfig) -> Result<SolverSolution> {
    Ok(solve_detailed(sdp, cfg)?.solution)
}

pub fn solve_detailed(sdp: &StandardFormSdp, cfg: &SolverConfig) -> Result<SolveOutput> {
    cfg.validate()?;
    let scaled = ScaledProblem::new(sdp)?;
    let mut admm = Admm::new(&scaled, cfg);
    // loose ADMM targets first; the Newton polish usually finishes from there
    let last = 0.3 * cfg.tol_feas.min(cfg.tol_gap);
    let mut stages: Vec<f64> = if cfg.polish {
        [1e-2, 1e-3, 1e-4, 1e-6].into_iter().filter(|&t| t > last).collect()
    } else {
        Vec::new()
    };
    stages.push(last);

    let mut best: Option<SolverSolution> = None;
    let mut polished = false;
    for target in stages {
        let reached = admm.run(target)?;
        let (x, y) = scaled.unscale(&admm.x, &admm.y);
        let raw = SolverSolution::from_pair(sdp, x, y, SolveStatus::MaxIterations, admm.iter)?;
        let mut cand = (raw, false);
        if cfg.polish {
            if let Some(p) = polish(sdp, &cand.0, cfg)? {
                if RelativeKkt::of(sdp, &p).max() < RelativeKkt::of(sdp, &cand.0).max() {
                    cand = (p, true);
                }
            }
        }
        if best
            .as_ref()
            .map_or(true, |b| RelativeKkt::of(sdp, &cand.0).max() < RelativeKkt::of(sdp, b).max())
        {
            best = Some(cand.0);
            polished = cand.1;
        }
        let done = best.as_ref().is_some_and(|b| RelativeKkt::of(sdp, b).meets(cfg));
        if done || !reached {
            break;
        }
    }
    let mut best = best.expect("at least one stage runs");
    if RelativeKkt::of(sdp, &best).meets(cfg) {
        best.status = SolveStatus::Converged;
    }
    log::debug!(
        "solve {}: {} iterations, status {:?}, polished {}",
        sdp.label(),
        admm.iter,
        best.status,
        polished
    );
    Ok(SolveOutput {
        solution: best,
        polished,
        trace: admm.trace,
        dropped_rows: scaled.dropped.clone(),
    })
}

/// Problem data after dropping dependent rows and equilibrating:
/// rows normalized to unit Frobenius norm, then b and C scaled by
/// `b_scale`, `c_scale`.
struct ScaledProblem {
    n: usize,
    m_full: usize,
    kept: Vec<usize>,
    dropped: Vec<usize>,
    row_norms: Vec<f64>,
    constraints: Vec<SparseSym>,
    b: DVector<f64>,
    c: SymMatrix,
    b_scale: f64,
    c_scale: f64,
    gram: Cholesky<f64, Dyn>,
}

impl ScaledProblem {
    fn new(sdp: &StandardFormSdp) -> Result<Self> {
        let row_norms_all: Vec<f64> = sdp.constraints().iter().map(|a| a.frobenius()).collect();
        if let Some(i) = row_norms_all.iter().position(|&v| v == 0.0) {
            if sdp.b()[i] != 0.0 {
                return Err(SdpError::Infeasible(format!(
                    "constraint {i} is the zero matrix with nonzero right-hand side"
                )));
            }
        }
        let mut gram = sdp.gram();
        let m = sdp.m();
        for i in 0..m {
            for j in 0..m {
                let d = row_norms_all[i] * row_norms_all[j];
                gram[(i, j)] = if d > 0.0 { gram[(i, j)] / d } else { 0.0 };
            }
        }
        let bn = DVector::from_iterator(
            m,
            (0..m).map(|i| {
                if row_norms_all[i] > 0.0 {
                    sdp.b()[i] / row_norms_all[i]
                } else {
                    0.0
                }
            }),
        );
        let sel = independent_rows(&gram, 1e-14);
        for (i, coeffs) in &sel.dependent {
            let implied: f64 = sel.kept.iter().zip(coeffs.iter()).map(|(&k, c)| c * bn[k]).sum();
            if (bn[*i] - implied).abs() > 1e-8 * (1.0 + bn.norm()) {
                return Err(SdpError::Infeasible(format!(
                    "constraint {i} is a combination of others with an inconsistent right-hand side"
                )));
            }
        }
        let kept = sel.kept;
        let dropped: Vec<usize> = sel.dependent.iter().map(|d| d.0).collect();
        let reduced = DMatrix::from_fn(kept.len(), kept.len(), |a, b| gram[(kept[a], kept[b])]);
        let chol = Cholesky::new(reduced).ok_or_else(|| {
            SdpError::NumericalBreakdown("constraint Gram matrix is not positive definite".into())
        })?;

        let row_norms: Vec<f64> = kept.iter().map(|&i| row_norms_all[i]).collect();
        let constraints: Vec<SparseSym> = kept
            .iter()
            .zip(&row_norms)
            .map(|(&i, &d)| sdp.constraints()[i].scaled(1.0 / d))
            .collect();
        let b_unit = DVector::from_iterator(kept.len(), kept.iter().map(|&i| bn[i]));
        let b_scale = b_unit.norm().max(1.0);
        let c_scale = sdp.c().frobenius().max(1.0);
        Ok(ScaledProblem {
            n: sdp.n(),
            m_full: m,
            kept,
            dropped,
            row_norms,
            constraints,
            b: b_unit / b_scale,
            c: sdp.c().scale(1.0 / c_scale),
            b_scale,
            c_scale,
            gram: chol,
        })
    }

    fn apply_a(&self, x: &SymMatrix) -> DVector<f64> {
        DVector::from_iterator(self.constraints.len(), self.constraints.iter().map(|a| a.inner(x)))
    }

    fn apply_a_adj(&self, y: &DVector<f64>) -> SymMatrix {
        let mut out = SymMatrix::zeros(self.n);
        for (a, &yi) in self.constraints.iter().zip(y.iter()) {
            if yi != 0.0 {
                a.add_to(&mut out, yi);
            }
        }
        out
    }

    fn unscale(&self, x: &SymMatrix, y: &DVector<f64>) -> (SymMatrix, DVector<f64>) {
        // the relaxed primal iterate can carry tiny negative eigenvalues
        let x = eig_sym(x)
            .map(|e| e.map_values(|v| v.max(0.0)))
            .unwrap_or_else(|_| x.clone())
            .scale(self.b_scale);
        let mut y_full = DVector::zeros(self.m_full);
        for (k, &i) in self.kept.iter().enumerate() {
            y_full[i] = self.c_scale * y[k] / self.row_norms[k];
        }
        (x, y_full)
    }
}

struct RowSelection {
    kept: Vec<usize>,
    /// `(row, c)` with `G[row, kept] = G[kept, kept] c`.
    dependent: Vec<(usize, DVector<f64>)>,
}

/// Greedy Cholesky over the Gram matrix in row order; a row whose residual
/// pivot is at most `tol · G_ii` is declared dependent on the kept rows.
fn independent_rows(gram: &DMatrix<f64>, tol: f64) -> RowSelection {
    let m = gram.nrows();
    let mut kept: Vec<usize> = Vec::with_capacity(m);
    let mut l = DMatrix::<f64>::zeros(m, m);
    let mut dependent = Vec::new();
    for i in 0..m {
        let k = kept.len();
        let mut w = DVector::zeros(k);
        for a in 0..k {
            let mut s = gram[(kept[a], i)];
            for c in 0..a {
                s -= l[(a, c)] * w[c];
            }
            w[a] = s / l[(a, a)];
        }
        let d = gram[(i, i)] - w.norm_squared();
        if d > tol * gram[(i, i)].max(f64::MIN_POSITIVE) {
            for c in 0..k {
                l[(k, c)] = w[c];
            }
            l[(k, k)] = d.sqrt();
            kept.push(i);
        } else {
            // back substitution Lᵀ c = w
            let mut coeffs = DVector::zeros(k);
            for a in (0..k).rev() {
                let mut s = w[a];
                for c in (a + 1)..k {
                    s -= l[(c, a)] * coeffs[c];
                }
                coeffs[a] = s / l[(a, a)];
            }
            dependent.push((i, coeffs));
        }
    }
    RowSelection { kept, dependent }
}

struct Admm<'a> {
    p: &'a ScaledProblem,
    cfg: &'a SolverConfig,
    x: SymMatrix,
    s: SymMatrix,
    y: DVector<f64>,
    mu: f64,
    trace: Vec<IterRecord>,
    iter: usize,
    ratio_log: Vec<f64>,
    history: Vec<(DVector<f64>, SymMatrix, f64)>,
    best_pinf: f64,
    best_pinf_iter: usize,
}

impl<'a> Admm<'a> {
    fn new(p: &'a ScaledProblem, cfg: &'a SolverConfig) -> Self {
        Admm {
            p,
            cfg,
            x: SymMatrix::zeros(p.n),
            s: SymMatrix::zeros(p.n),
            y: DVector::zeros(p.constraints.len()),
            mu: cfg.penalty,
            trace: Vec::new(),
            iter: 0,
            ratio_log: Vec::new(),
            history: Vec::new(),
            best_pinf: f64::INFINITY,
            best_pinf_iter: 0,
        }
    }

    /// Iterates until all scaled residuals are at most `target`; returns
    /// false when the iteration budget runs out first.
    fn run(&mut self, target: f64) -> Result<bool> {
        let p = self.p;
        let cfg = self.cfg;
        let alpha = cfg.relaxation;
        let bnorm = 1.0 + p.b.norm();
        let cnorm = 1.0 + p.c.frobenius();

        while self.iter < cfg.max_iter {
            self.iter += 1;
            let iter = self.iter;
            // y-update
            let ax = p.apply_a(&self.x);
            let rhs = (&p.b - &ax) * self.mu - p.apply_a(&self.s.sub(&p.c));
            self.y = p.gram.solve(&rhs);
            // S and X updates through one eigendecomposition of V
            let aty = p.apply_a_adj(&self.y);
            let mut v = p.c.sub(&aty);
            v.axpy(-self.mu, &self.x);
            let e = eig_sym(&v)?;
            let npos = e.values.iter().filter(|&&l| l > 0.0).count();
            let s_new = if 2 * npos <= e.values.len() {
                e.map_values(|l| l.max(0.0))
            } else {
                v.sub(&e.map_values(|l| l.min(0.0)))
            };
            let x_step = s_new.sub(&v).scale(1.0 / self.mu);
            let mut x_new = self.x.scale(1.0 - alpha);
            x_new.axpy(alpha, &x_step);
            self.x = x_new;
            self.s = s_new;

            let pinf = (p.apply_a(&self.x) - &p.b).norm() / bnorm;
            let rd = p.c.sub(&aty).sub(&self.s);
            let dinf = rd.frobenius() / cnorm;
            let pobj = p.c.inner(&self.x);
            let dobj = p.b.dot(&self.y);
            let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
            if cfg.record_trace {
                self.trace.push(IterRecord {
                    iter,
                    pinf,
                    dinf,
                    pobj,
                    dobj,
                    penalty: self.mu,
                });
            }
            if !(pinf.is_finite() && dinf.is_finite()) {
                return Err(SdpError::NumericalBreakdown(format!(
                    "non-finite residual at iteration {iter}"
                )));
            }
            if pinf <= target && dinf <= target && gap <= target {
                return Ok(true);
            }
            if pobj * p.c_scale * p.b_scale < cfg.obj_floor {
                return Err(SdpError::Unbounded(format!(
                    "primal objective fell below {:e}",
                    cfg.obj_floor
                )));
            }

            if pinf < 0.9 * self.best_pinf {
                self.best_pinf = pinf;
                self.best_pinf_iter = iter;
            }
            if iter % 200 == 0 {
                self.history.push((self.y.clone(), self.x.clone(), pinf));
                if self.history.len() > 3 {
                    self.history.remove(0);
                }
                if iter >= 2000 && iter - self.best_pinf_iter >= 1000 {
                    self.detect_certificates(pinf, dinf)?;
                }
            }

            if cfg.adapt_penalty {
                self.ratio_log.push((pinf.max(1e-300) / dinf.max(1e-300)).ln());
                if iter % 50 == 0 {
                    let mut r = std::mem::take(&mut self.ratio_log);
                    r.sort_by(|a, b| a.total_cmp(b));
                    let median = r[r.len() / 2];
                    // 1/μ weighs dual feasibility: a lagging primal residual wants larger μ
                    if median > 0.7 {
                        self.mu = (self.mu * 1.6).min(1e6);
                    } else if median < -0.7 {
                        self.mu = (self.mu / 1.6).max(1e-6);
                    }
                }
            }
        }
        Ok(false)
    }

    /// Looks for approximate Farkas directions in the iterate drift once the
    /// primal residual has stalled.
    fn detect_certificates(&self, pinf: f64, dinf: f64) -> Result<()> {
        let p = self.p;
        if self.history.len() < 2 {
            return Ok(());
        }
        let (y_old, x_old, _) = &self.history[0];
        let dy = &self.y - y_old;
        let dx = self.x.sub(x_old);
        // primal infeasibility: 𝒜*dy ⪯ 0 with bᵀdy > 0
        let bdy = p.b.dot(&dy);
        if pinf > 10.0 * self.cfg.tol_feas && bdy > 0.0 {
            let w = p.apply_a_adj(&dy);
            let lmax = eig_sym(&w)?.max();
            if lmax <= 1e-6 * w.frobenius() && bdy >= 1e-6 * p.b.norm() * dy.norm() {
                return Err(SdpError::Infeasible(format!(
                    "dual ray found: bᵀΔy = {bdy:.3e}, λ_max(𝒜*Δy) = {lmax:.3e}, primal residual {pinf:.3e}"
                )));
            }
        }
        // dual infeasibility (unbounded primal): dX ⪰ 0, 𝒜 dX = 0, ⟨C, dX⟩ < 0
        let cdx = p.c.inner(&dx);
        if dinf > 10.0 * self.cfg.tol_feas && cdx < 0.0 {
            let ndx = dx.frobenius();
            let adx = p.apply_a(&dx).norm();
            let lmin = eig_sym(&dx)?.min();
            if adx <= 1e-4 * ndx && lmin >= -1e-4 * ndx && -cdx >= 1e-3 * ndx {
                return Err(SdpError::Unbounded(format!(
                    "primal ray found: ⟨C,ΔX⟩ = {cdx:.3e}, ‖𝒜ΔX‖ = {adx:.3e}"
                )));
            }
        }
        Ok(())
    }
}

/// Sharpens the pair on the face picked out by the approximate solution.
/// With `X = RRᵀ` (R of width r) the optimality conditions on the face read
/// `𝒜(RRᵀ) = b`, `(C − 𝒜*y) R = 0`; Gauss–Newton with minimum-norm LSQR
/// steps solves them. Several candidate ranks are tried and the best pair
/// by relative KKT error is returned.
fn polish(
    sdp: &StandardFormSdp,
    sol: &SolverSolution,
    cfg: &SolverConfig,
) -> Result<Option<SolverSolution>> {
    let n = sdp.n();
    let ex = eig_sym(&sol.x)?;
    let ez = eig_sym(&sol.z)?;
    let xs = ex.max().abs().max(1.0);
    let zs = ez.max().abs().max(1.0);
    let mut ranks: Vec<usize> = Vec::new();
    for t in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
        let t = t * cfg.rank_eps / crate::linalg::DEFAULT_RANK_EPS;
        ranks.push(ex.values.iter().filter(|&&v| v > t * xs).count());
        ranks.push(n - ez.values.iter().filter(|&&v| v > t * zs).count());
    }
    // extreme points obey r(r+1)/2 <= m
    let m = sdp.m();
    ranks.retain(|&r| r >= 1 && r <= n && r * (r + 1) / 2 <= m);
    ranks.sort_unstable();
    ranks.dedup();
    // most pronounced spectral gaps first
    let gap = |r: usize| {
        let hi = ex.values[r - 1].max(0.0);
        let lo = if r < n { ex.values[r].max(0.0) } else { 0.0 };
        (hi + 1e-300) / (lo + 1e-16 * xs)
    };
    ranks.sort_by(|&a, &b| gap(b).total_cmp(&gap(a)));
    ranks.truncate(3);

    let good_enough = 1e-3 * cfg.tol_feas.min(cfg.tol_gap);
    let mut best: Option<(f64, SolverSolution)> = None;
    for r in ranks {
        let mut f = ex.vectors.columns(0, r).into_owned();
        for j in 0..r {
            let s = ex.values[j].max(0.0).sqrt();
            f.column_mut(j).scale_mut(s);
        }
        let (f, y) = match newton_face(sdp, f, sol.y.clone()) {
            Some(v) => v,
            None => continue,
        };
        let x = SymMatrix::gram_rows(&f);
        let cand = SolverSolution::from_pair(sdp, x, y, SolveStatus::MaxIterations, sol.iterations)?;
        let score = RelativeKkt::of(sdp, &cand).max();
        log::trace!("polish rank {r}: kkt {score:.3e}");
        if best.as_ref().map_or(true, |(s, _)| score < *s) {
            best = Some((score, cand));
        }
        if score <= good_enough {
            break;
        }
    }
    Ok(best.map(|b| b.1))
}

/// `⟨A, P Qᵀ⟩` for symmetric sparse A.
fn inner_outer(a: &SparseSym, p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for &(k, l, v) in a.entries() {
        let t = p.row(k).dot(&q.row(l));
        s += if k == l { v * t } else { v * (t + p.row(l).dot(&q.row(k))) };
    }
    s
}

fn newton_face(
    sdp: &StandardFormSdp,
    mut f: DMatrix<f64>,
    mut y: DVector<f64>,
) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let n = sdp.n();
    let r = f.ncols();
    let m = sdp.m();
    let a = sdp.constraints();
    let residual = |f: &DMatrix<f64>, y: &DVector<f64>| -> Option<(DVector<f64>, DMatrix<f64>)> {
        let z = sdp.slack(y).ok()?.into_dmatrix();
        let mut out = DVector::zeros(m + n * r);
        for i in 0..m {
            out[i] = inner_outer(&a[i], f, f) - sdp.b()[i];
        }
        let zf = &z * f;
        out.rows_mut(m, n * r).copy_from_slice(zf.as_slice());
        Some((out, z))
    };
    let (mut res, mut z) = residual(&f, &y)?;
    let mut norm = res.norm();
    let scale = 1.0 + sdp.b().norm() + sdp.c().frobenius();
    let norm0 = norm;
    for step_no in 0..30 {
        if norm <= 1e-14 * scale {
            break;
        }
        // Newton should be well on its way after a few steps
        if step_no >= 10 && norm > 1e-6 * norm0 {
            break;
        }
        let fc = f.clone();
        let zc = z.clone();
        let jv = |d: &DVector<f64>| -> DVector<f64> {
            let df = DMatrix::from_column_slice(n, r, &d.as_slice()[..n * r]);
            let dy = d.rows(n * r, m).into_owned();
            let mut out = DVector::zeros(m + n * r);
            for i in 0..m {
                out[i] = 2.0 * inner_outer(&a[i], &df, &fc);
            }
            let mut ady = SymMatrix::zeros(n);
            for (ai, &v) in a.iter().zip(dy.iter()) {
                if v != 0.0 {
                    ai.add_to(&mut ady, v);
                }
            }
            let blk = &zc * &df - ady.as_dmatrix() * &fc;
            out.rows_mut(m, n * r).copy_from_slice(blk.as_slice());
            out
        };
        let jtv = |u: &DVector<f64>| -> DVector<f64> {
            let w = DMatrix::from_column_slice(n, r, &u.as_slice()[m..]);
            let mut au = SymMatrix::zeros(n);
            for (ai, &v) in a.iter().zip(u.iter()) {
                if v != 0.0 {
                    ai.add_to(&mut au, v);
                }
            }
            let df = au.as_dmatrix() * &fc * 2.0 + &zc * &w;
            let mut out = DVector::zeros(n * r + m);
            out.rows_mut(0, n * r).copy_from_slice(df.as_slice());
            for i in 0..m {
                out[n * r + i] = -inner_outer(&a[i], &w, &fc);
            }
            out
        };
        let eta = (norm / scale).sqrt().clamp(1e-14, 0.1);
        let step = lsqr(jv, jtv, &(-&res), n * r + m, eta, 4 * (n * r + m).min(2000));
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let fn_ = &f + DMatrix::from_column_slice(n, r, &step.as_slice()[..n * r]) * t;
            let yn = &y + step.rows(n * r, m) * t;
            if let Some((rn, zn)) = residual(&fn_, &yn) {
                let nn = rn.norm();
                if nn < norm {
                    f = fn_;
                    y = yn;
                    res = rn;
                    z = zn;
                    accepted = nn < 0.999 * norm;
                    norm = nn;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm.is_finite() {
        Some((f, y))
    } else {
        None
    }
}

/// Paige–Saunders LSQR for `min ‖J x − b‖` from x = 0 (minimum-norm solution).
fn lsqr(
    jv: impl Fn(&DVector<f64>) -> DVector<f64>,
    jtv: impl Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    ncols: usize,
    tol: f64,
    max_iter: usize,
) -> DVector<f64> {
    let mut x = DVector::zeros(ncols);
    let mut u = b.clone();
    let mut beta = u.norm();
    if beta == 0.0 {
        return x;
    }
    u /= beta;
    let mut v = jtv(&u);
    let mut alpha = v.norm();
    if alpha == 0.0 {
        return x;
    }
    v /= alpha;
    let mut w = v.clone();
    let mut phi_bar = beta;
    let mut rho_bar = alpha;
    let bnorm = beta;
    for _ in 0..max_iter {
        u = jv(&v) - &u * alpha;
        beta = u.norm();
        if beta > 0.0 {
            u /= beta;
        }
        v = jtv(&u) - &v * beta;
        alpha = v.norm();
        if alpha > 0.0 {
            v /= alpha;
        }
        let rho = rho_bar.hypot(beta);
        let c = rho_bar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rho_bar = -c * alpha;
        let phi = c * phi_bar;
        phi_bar *= s;
        x += &w * (phi / rho);
        w = &v - &w * (theta / rho);
        // ‖Jᵀr‖ = φ̄ α |c|
        if phi_bar <= tol * bnorm || phi_bar * alpha * c.abs() <= tol * bnorm || alpha == 0.0 {
            break;
        }
    }
    x
}

/// Maximizes `⟨C_s, Z_s⟩` over `Z_s ⪰ 0` subject to `U Z_s Uᵀ = C − 𝒜*y`
/// for some y. With V spanning the complement of U this means
/// `(C − 𝒜*y)V = 0`; writing `y = y₀ + N w` over that affine set gives a
/// dual-form problem in w with slack `Z_s = Uᵀ(C − 𝒜*y)U`.
pub fn solve_restricted(
    sdp: &StandardFormSdp,
    u: &DMatrix<f64>,
    c_s: &SymMatrix,
    cfg: &SolverConfig,
) -> Result<SymMatrix> {
    let n = sdp.n();
    let m = sdp.m();
    let k = u.ncols();
    if u.nrows() != n {
        return Err(SdpError::DimensionMismatch {
            expected: n,
            got: u.nrows(),
        });
    }
    if c_s.n() != k {
        return Err(SdpError::DimensionMismatch {
            expected: k,
            got: c_s.n(),
        });
    }
    let orth = (u.transpose() * u - DMatrix::<f64>::identity(k, k)).norm();
    if orth > 1e-8 {
        return Err(SdpError::InvalidInput(format!(
            "subspace basis is not orthonormal (‖UᵀU − I‖ = {orth:.2e})"
        )));
    }

    let comp = SymMatrix::identity(n).sub(&SymMatrix::gram_rows(u));
    let ec = eig_sym(&comp)?;
    let v = ec.vectors.columns(0, ec.values.iter().filter(|&&x| x > 0.5).count()).into_owned();
    let rows = n * v.ncols();
    let mut l = DMatrix::zeros(rows, m);
    for (i, a) in sdp.constraints().iter().enumerate() {
        l.column_mut(i).copy_from_slice(a.mul_dense(&v).as_slice());
    }
    let cv = sdp.c().as_dmatrix() * &v;
    let target = DVector::from_column_slice(cv.as_slice());
    let (y0, free) = if rows == 0 {
        (DVector::zeros(m), DMatrix::identity(m, m))
    } else {
        let y0 = l
            .clone()
            .svd(true, true)
            .solve(&target, 1e-12)
            .map_err(|e| SdpError::NumericalBreakdown(e.to_string()))?;
        let miss = (&l * &y0 - &target).norm();
        if miss > 1e-8 * (1.0 + sdp.c().frobenius()) {
            return Err(SdpError::Infeasible(format!(
                "no dual slack vanishes on the complement of U (residual {miss:.2e})"
            )));
        }
        (y0, null_space(&l, 1e-10))
    };
    let slack0 = sdp.slack(&y0)?;
    let g0 = SymMatrix::congruence(&u.transpose(), &slack0);
    if free.ncols() == 0 {
        if g0.min_eigenvalue()? < -1e-8 * (1.0 + g0.frobenius()) {
            return Err(SdpError::Infeasible("the only admissible slack is not PSD".into()));
        }
        return Ok(g0);
    }
    let mut constraints = Vec::with_capacity(free.ncols());
    let mut rhs = Vec::with_capacity(free.ncols());
    for col in free.column_iter() {
        let adj = sdp.apply_a_adj(&col.into_owned())?;
        let g = SymMatrix::congruence(&u.transpose(), &adj);
        rhs.push(-c_s.inner(&g));
        constraints.push(SparseSym::from_dense(&g, 0.0));
    }
    let restricted = StandardFormSdp::new(
        g0,
        constraints,
        DVector::from_vec(rhs),
        format!("{}-restricted", sdp.label()),
    )?;
    // primal infeasible means the restricted maximization is unbounded
    match solve(&restricted, cfg) {
        Ok(out) => Ok(out.z),
        Err(SdpError::Infeasible(msg)) => Err(SdpError::Unbounded(msg)),
        Err(SdpError::Unbounded(msg)) => Err(SdpError::Infeasible(msg)),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymMatrix;

    fn maxcut(c: SymMatrix) -> StandardFormSdp {
        let n = c.n();
        StandardFormSdp::new(
            c,
            (0..n).map(SparseSym::unit_diag).collect(),
            DVector::from_element(n, 1.0),
            "maxcut",
        )
        .unwrap()
    }

    #[test]
    fn two_by_two_maxcut_oracle() {
        // min 2X₁₂ with |X₁₂| <= 1 from the PSD constraint: X₁₂ = −1, p⋆ = −2
        let sdp = maxcut(SymMatrix::from_upper(2, &[0.0, 1.0, 0.0]).unwrap());
        let sol = solve(&sdp, &SolverConfig::default()).unwrap();
        assert!(sol.converged());
        assert!((sol.primal_obj + 2.0).abs() < 1e-6);
        let want = SymMatrix::from_upper(2, &[1.0, -1.0, 1.0]).unwrap();
        assert!(sol.x.sub(&want).frobenius() < 1e-6);
    }

    #[test]
    fn conflicting_constraints_are_infeasible() {
        let sdp = StandardFormSdp::new(
            SymMatrix::zeros(2),
            vec![SparseSym::unit_diag(0), SparseSym::unit_diag(1), SparseSym::unit_diag(0)],
            DVector::from_vec(vec![1.0, 1.0, 2.0]),
            "conflict",
        )
        .unwrap();
        assert!(matches!(solve(&sdp, &SolverConfig::default()), Err(SdpError::Infeasible(_))));
    }

    #[test]
    fn redundant_consistent_rows_are_dropped() {
        let sdp = StandardFormSdp::new(
            SymMatrix::from_upper(2, &[0.0, 1.0, 0.0]).unwrap(),
            vec![SparseSym::unit_diag(0), SparseSym::unit_diag(1), SparseSym::unit_diag(0).scaled(2.0)],
            DVector::from_vec(vec![1.0, 1.0, 2.0]),
            "redundant",
        )
        .unwrap();
        let out = solve_detailed(&sdp, &SolverConfig::default()).unwrap();
        assert_eq!(out.dropped_rows, vec![2]);
        assert!((out.solution.primal_obj + 2.0).abs() < 1e-6);
    }

    #[test]
    fn negative_diagonal_is_infeasible() {
        let sdp = maxcut(SymMatrix::identity(3)).with_rhs(DVector::from_vec(vec![1.0, -1.0, 1.0])).unwrap();
        let res = solve(&sdp, &SolverConfig::default());
        assert!(matches!(res, Err(SdpError::Infeasible(_))), "{res:?}");
    }

    #[test]
    fn unbounded_detected() {
        // minimize −X₁₁ subject to X₂₂ = 1
        let c = SymMatrix::from_upper(2, &[-1.0, 0.0, 0.0]).unwrap();
        let sdp = StandardFormSdp::new(c, vec![SparseSym::unit_diag(1)], DVector::from_vec(vec![1.0]), "unb").unwrap();
        let res = solve(&sdp, &SolverConfig::default());
        assert!(matches!(res, Err(SdpError::Unbounded(_))), "{res:?}");
    }

    #[test]
    fn bad_config_rejected() {
        let sdp = maxcut(SymMatrix::identity(2));
        let cfg = SolverConfig {
            relaxation: 2.5,
            ..SolverConfig::default()
        };
        assert!(solve(&sdp, &cfg).is_err());
    }

    #[test]
    fn restricted_pins_all_but_free_coordinate() {
        // only position (0,1) is free; C_s = I makes the objective constant
        let n = 3;
        let sdp = StandardFormSdp::new(
            SymMatrix::identity(n),
            vec![SparseSym::sym_unit(0, 1)],
            DVector::from_vec(vec![0.0]),
            "t",
        )
        .unwrap();
        let u = DMatrix::<f64>::identity(n, n);
        let z = solve_restricted(&sdp, &u, &SymMatrix::identity(n), &SolverConfig::default()).unwrap();
        for i in 0..n {
            assert!((z.get(i, i) - 1.0).abs() < 1e-6);
        }
        assert!(z.get(0, 2).abs() < 1e-6 && z.get(1, 2).abs() < 1e-6);
        assert!(z.min_eigenvalue().unwrap() > -1e-6);
    }

    #[test]
    fn restricted_free_diagonal_is_unbounded() {
        let sdp = StandardFormSdp::new(
            SymMatrix::identity(2),
            vec![SparseSym::unit_diag(0)],
            DVector::from_vec(vec![1.0]),
            "t",
        )
        .unwrap();
        let u = DMatrix::<f64>::identity(2, 2);
        let res = solve_restricted(&sdp, &u, &SymMatrix::identity(2), &SolverConfig::default());
        assert!(matches!(res, Err(SdpError::Unbounded(_))));
    }

    #[test]
    fn recovers_simple_from_psd_solution() {
        let x = SymMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 0.0]));
        let inst = crate::instances::simple_from_psd(&x, 1e-10).unwrap();
        let sol = solve(&inst.sdp, &SolverConfig::default()).unwrap();
        assert!(sol.converged());
        assert!(sol.x.sub(&x).frobenius() < 1e-6);
        let t = inst.truth.unwrap();
        assert!((&sol.y - t.y_star.as_ref().unwrap()).norm() < 1e-4);
    }

    #[test]
    fn maxcut_single_edge_oracle() {
        let g = crate::instances::Graph::new(2, vec![(1, 2, 1.0)]).unwrap();
        let inst = crate::instances::maxcut(&g).unwrap();
        let sol = solve(&inst.sdp, &SolverConfig::default()).unwrap();
        assert!((sol.primal_obj + 4.0).abs() < 1e-6);
        let want = SymMatrix::from_upper(2, &[1.0, -1.0, 1.0]).unwrap();
        assert!(sol.x.sub(&want).frobenius() < 1e-6);
    }

    #[test]
    fn deterministic_iterates() {
        let g = crate::instances::Graph::random(20, 0.3, true, 4).unwrap();
        let inst = crate::instances::maxcut(&g).unwrap();
        let cfg = SolverConfig {
            record_trace: true,
            ..SolverConfig::default()
        };
        let a = solve_detailed(&inst.sdp, &cfg).unwrap();
        let b = solve_detailed(&inst.sdp, &cfg).unwrap();
        assert_eq!(a.solution.x, b.solution.x);
        assert_eq!(a.solution.y, b.solution.y);
        assert_eq!(a.trace.len(), b.trace.len());
        for (p, q) in a.trace.iter().zip(&b.trace) {
            assert_eq!((p.pinf, p.dinf, p.pobj, p.dobj), (q.pinf, q.dinf, q.pobj, q.dobj));
        }
    }

    #[test]
    fn weak_duality_on_feasible_iterates() {
        let cfg = SolverConfig {
            record_trace: true,
            polish: false,
            ..SolverConfig::default()
        };
        for seed in 0..3 {
            let g = crate::instances::Graph::random(25, 0.3, seed == 1, seed).unwrap();
            let inst = crate::instances::maxcut(&g).unwrap();
            let out = solve_detailed(&inst.sdp, &cfg).unwrap();
            let mut checked = 0;
            for r in &out.trace {
                if r.pinf <= cfg.tol_feas && r.dinf <= cfg.tol_feas {
                    let rel = (r.pobj - r.dobj) / (1.0 + r.pobj.abs() + r.dobj.abs());
                    assert!(rel >= -10.0 * cfg.tol_feas, "iter {}: {rel:e}", r.iter);
                    checked += 1;
                }
            }
            assert!(checked > 0);
        }
    }
}
