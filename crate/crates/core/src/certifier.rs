//! Simplicity certification of a computed primal–dual pair.
//!
//! Ranks come from an absolute eigenvalue threshold. Primal uniqueness is
//! injectivity of `S ↦ 𝒜(U S Uᵀ)` with U spanning null(Z); dual uniqueness
//! is injectivity of `y ↦ [V₁ᵀ 𝒜*y V₁ ; V₂ᵀ 𝒜*y V₁]` with V₁ spanning
//! range(X). Both operators are assembled densely.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SdpError};
use crate::linalg::{eig_sym, rank_eps, singular_values, svec, svec_len, SymMatrix};
use crate::model::{SolverSolution, StandardFormSdp};
use crate::rng::SeededRng;
use crate::solver::{solve, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimplicityFlags {
    pub surjective: bool,
    pub strong_duality: bool,
    pub strict_complementarity: bool,
    pub primal_unique: bool,
    pub dual_unique: bool,
    pub simple: bool,
    pub primal_simple: bool,
}

/// Singular-value summary of a uniqueness operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorConditioning {
    pub rows: usize,
    pub cols: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub kappa: f64,
}

impl OperatorConditioning {
    fn from_sigmas(rows: usize, cols: usize, sigmas: &[f64]) -> Self {
        // injectivity needs `cols` nonzero singular values
        let sigma_max = sigmas.iter().cloned().fold(0.0, f64::max);
        let sigma_min = if sigmas.len() < cols {
            0.0
        } else {
            sigmas.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        OperatorConditioning {
            rows,
            cols,
            sigma_min,
            sigma_max,
            kappa: if sigma_min > 0.0 { sigma_max / sigma_min } else { f64::INFINITY },
        }
    }

    /// Trivial operator on a zero-dimensional domain.
    fn empty(rows: usize) -> Self {
        OperatorConditioning {
            rows,
            cols: 0,
            sigma_min: f64::INFINITY,
            sigma_max: 0.0,
            kappa: 1.0,
        }
    }

    /// σ_min > 10⁻⁶ σ_max.
    pub fn injective(&self) -> bool {
        self.cols == 0 || self.sigma_min > 1e-6 * self.sigma_max
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputHashes {
    pub sdp: String,
    pub solution: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplicityReport {
    pub label: String,
    pub n: usize,
    pub m: usize,
    pub eps: f64,
    pub rank_p: usize,
    pub rank_d: usize,
    pub lambda_minpos_x: Option<f64>,
    pub lambda_minpos_z: Option<f64>,
    pub kappa_x: Option<f64>,
    pub kappa_z: Option<f64>,
    pub sigma_min_surjective: f64,
    pub a_z: OperatorConditioning,
    pub a_x: OperatorConditioning,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub gap: f64,
    pub max_residual: f64,
    pub flags: SimplicityFlags,
    pub warnings: Vec<String>,
    pub hashes: InputHashes,
}

fn sha_hex<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).unwrap_or_default();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs the full verification protocol on `sol` with rank threshold `eps`.
pub fn certify(sdp: &StandardFormSdp, sol: &SolverSolution, eps: f64) -> Result<SimplicityReport> {
    if !(eps > 0.0) {
        return Err(SdpError::InvalidInput("eps must be positive".into()));
    }
    crate::error::check_dim(sdp.n(), sol.x.n())?;
    crate::error::check_dim(sdp.m(), sol.y.len())?;
    let n = sdp.n();
    let m = sdp.m();
    // Z is recomputed from y rather than trusted
    let z = sdp.slack(&sol.y)?;
    let res = sdp.residuals(&sol.x, &sol.y)?;
    let p = sdp.primal_objective(&sol.x);
    let d = sdp.dual_objective(&sol.y);
    let mut warnings = Vec::new();

    let ex = eig_sym(&sol.x)?;
    let ez = eig_sym(&z)?;
    let rx = rank_eps(ex.values.as_slice(), eps)?;
    let rz = rank_eps(ez.values.as_slice(), eps)?;
    let rank_p = rx.rank;
    let rank_d = rz.rank;

    let max_residual = res.primal_infeas.max(res.dual_infeas).max(res.cone_infeas);
    if max_residual > 10.0 * eps {
        warnings.push(format!(
            "residuals ({max_residual:.2e}) exceed 10·eps; rank estimates may be unreliable"
        ));
    }
    for (name, e, r) in [("X", &ex, rank_p), ("Z", &ez, rank_d)] {
        if r < n {
            let below = e.values[r];
            if below.abs() > 0.1 * eps {
                warnings.push(format!(
                    "DegenerateInput: largest eigenvalue of {name} below the threshold is {below:.2e}, close to eps"
                ));
            }
        }
        if r > 0 && e.values[r - 1] < 10.0 * eps {
            warnings.push(format!(
                "DegenerateInput: smallest counted eigenvalue of {name} is {:.2e}, within 10·eps",
                e.values[r - 1]
            ));
        }
    }
    if rank_p + rank_d > n {
        warnings.push(format!(
            "DegenerateInput: rank_p + rank_d = {} exceeds n; complementarity is violated at this accuracy",
            rank_p + rank_d
        ));
    }

    let surj = sdp.check_surjective();

    // primal uniqueness: S ∈ 𝕊^{n−rank_d} ↦ 𝒜(U S Uᵀ)
    let k = n - rank_d;
    let a_z = if k == 0 {
        OperatorConditioning::empty(m)
    } else {
        let u = ez.vectors.columns(rank_d, k).into_owned();
        let mut mat = DMatrix::zeros(m, svec_len(k));
        for (i, a) in sdp.constraints().iter().enumerate() {
            mat.row_mut(i).copy_from(&svec(&a.congruence_t(&u)).transpose());
        }
        let sv = singular_values(&mat);
        OperatorConditioning::from_sigmas(m, svec_len(k), sv.as_slice())
    };

    // dual uniqueness: y ↦ vec([V₁ᵀ 𝒜*y V₁ ; V₂ᵀ 𝒜*y V₁])
    let a_x = if rank_p == 0 {
        OperatorConditioning::from_sigmas(0, m, &[])
    } else {
        let v1 = ex.vectors.columns(0, rank_p).into_owned();
        let cols: Vec<DMatrix<f64>> = sdp
            .constraints()
            .iter()
            .map(|a| ex.vectors.transpose() * a.mul_dense(&v1))
            .collect();
        let rows = n * rank_p;
        let sigmas = column_singular_values(&cols, rows);
        OperatorConditioning::from_sigmas(rows, m, &sigmas)
    };

    let strict = rank_p + rank_d == n;
    let strong = (p - d).abs() <= 1e-5 * (1.0 + p.abs());
    let primal_unique = a_z.injective();
    let dual_unique = a_x.injective();
    let flags = SimplicityFlags {
        surjective: surj.surjective,
        strong_duality: strong,
        strict_complementarity: strict,
        primal_unique,
        dual_unique,
        simple: surj.surjective && strong && strict && primal_unique && dual_unique,
        primal_simple: surj.surjective && strong && strict && primal_unique,
    };
    let ratio = |e: &crate::linalg::EigDecomp, lam: Option<f64>| lam.map(|l| e.max() / l);
    Ok(SimplicityReport {
        label: sdp.label().to_string(),
        n,
        m,
        eps,
        rank_p,
        rank_d,
        lambda_minpos_x: rx.lambda_min_pos,
        lambda_minpos_z: rz.lambda_min_pos,
        kappa_x: ratio(&ex, rx.lambda_min_pos),
        kappa_z: ratio(&ez, rz.lambda_min_pos),
        sigma_min_surjective: surj.sigma_min,
        a_z,
        a_x,
        primal_obj: p,
        dual_obj: d,
        gap: (p - d).abs(),
        max_residual,
        flags,
        warnings,
        hashes: InputHashes {
            sdp: sha_hex(sdp),
            solution: sha_hex(sol),
        },
    })
}

/// Singular values of the matrix whose columns are `vec(cols[k])`, from the
/// Gram matrix when the columns are long.
fn column_singular_values(cols: &[DMatrix<f64>], rows: usize) -> Vec<f64> {
    let m = cols.len();
    if rows <= 2 * m {
        let mut mat = DMatrix::zeros(rows, m);
        for (k, c) in cols.iter().enumerate() {
            mat.column_mut(k).copy_from_slice(c.as_slice());
        }
        return singular_values(&mat).iter().cloned().collect();
    }
    let gram = DMatrix::from_fn(m, m, |i, j| cols[i].dot(&cols[j]));
    match eig_sym(&SymMatrix::from_dmatrix(&gram).unwrap_or_else(|_| SymMatrix::zeros(m))) {
        Ok(e) => e.values.iter().map(|&v| v.max(0.0).sqrt()).collect(),
        Err(_) => vec![0.0; m],
    }
}

/// Necessary condition for dual uniqueness: `(n−r)(n−r+1)/2 ≤ n(n+1)/2 − m`.
pub fn dual_uniqueness_necessary(n: usize, m: usize, rank_p: usize) -> Result<bool> {
    if rank_p > n {
        return Err(SdpError::InvalidInput(format!("rank {rank_p} exceeds n = {n}")));
    }
    let k = (n - rank_p) as i128;
    let lhs = k * (k + 1) / 2;
    let rhs = (n as i128) * (n as i128 + 1) / 2 - m as i128;
    Ok(lhs <= rhs)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub delta: f64,
    pub distance: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub rows: Vec<SensitivityRow>,
    /// Least-squares slope of log(distance) against log(δ) over rows with δ > 0.
    pub fitted_exponent: Option<f64>,
}

fn unit_direction(rng: &mut SeededRng, n: usize) -> SymMatrix {
    let g = rng.gaussian_symmetric(n);
    let f = g.frobenius();
    g.scale(1.0 / f)
}

/// Perturbs C and b by random directions of norm δ, re-solves and records
/// `‖X′ − X‖_F`.
pub fn sensitivity_probe(
    sdp: &StandardFormSdp,
    sol: &SolverSolution,
    magnitudes: &[f64],
    seed: u64,
    cfg: &SolverConfig,
) -> Result<SensitivityReport> {
    let mut rows = Vec::with_capacity(magnitudes.len());
    for (idx, &delta) in magnitudes.iter().enumerate() {
        if !(delta >= 0.0) {
            return Err(SdpError::InvalidInput("magnitudes must be non-negative".into()));
        }
        let mut rng = SeededRng::derived(seed, idx as u64);
        let dc = unit_direction(&mut rng, sdp.n());
        let db = rng.normal_vector(sdp.m());
        let db = &db / db.norm().max(f64::MIN_POSITIVE);
        let perturbed = sdp
            .with_cost(sdp.c().add(&dc.scale(delta)))
            .and_then(|s| s.with_rhs(sdp.b() + &db * delta));
        let row = match perturbed.and_then(|s| solve(&s, cfg)) {
            Ok(p) => SensitivityRow {
                delta,
                distance: Some(p.x.sub(&sol.x).frobenius()),
                error: None,
            },
            Err(e) => SensitivityRow {
                delta,
                distance: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| match r.distance {
            Some(d) if r.delta > 0.0 && d > 0.0 => Some((r.delta.ln(), d.ln())),
            _ => None,
        })
        .collect();
    Ok(SensitivityReport {
        fitted_exponent: fit_slope(&pts),
        rows,
    })
}

fn fit_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// Where the error-bound probe draws its directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeDirection {
    /// Uniform on the unit sphere of 𝕊ⁿ.
    Ambient,
    /// `V₁ S V₁ᵀ` with V₁ spanning range(X⋆).
    Face,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorBoundRow {
    pub delta: f64,
    pub distance: f64,
    pub feasibility: f64,
    pub cone: f64,
    pub suboptimality: f64,
    /// feasibility + cone + suboptimality
    pub rhs: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorBoundReport {
    pub rows: Vec<ErrorBoundRow>,
    /// max over rows with positive rhs of distance^ρ / rhs, for ρ = 1 and ρ = 2
    pub gamma_rho1: Option<f64>,
    pub gamma_rho2: Option<f64>,
    pub nonpositive_rhs: usize,
}

/// Samples `X = X⋆ + δ D` and compares `‖X − X⋆‖` with
/// `‖𝒜X − b‖ + (−λ_min(X))₊ + (tr(CX) − p⋆)`.
pub fn error_bound_probe(
    sdp: &StandardFormSdp,
    sol: &SolverSolution,
    magnitudes: &[f64],
    seed: u64,
    direction: ProbeDirection,
    eps: f64,
) -> Result<ErrorBoundReport> {
    let n = sdp.n();
    let p_star = sdp.primal_objective(&sol.x);
    let v1 = match direction {
        ProbeDirection::Face => {
            let e = eig_sym(&sol.x)?;
            let r = rank_eps(e.values.as_slice(), eps)?.rank;
            if r == 0 {
                return Err(SdpError::InvalidInput("X has empty range".into()));
            }
            Some(e.vectors.columns(0, r).into_owned())
        }
        ProbeDirection::Ambient => None,
    };
    let mut rows = Vec::new();
    for (idx, &delta) in magnitudes.iter().enumerate() {
        let mut rng = SeededRng::derived(seed, idx as u64);
        let dir = match &v1 {
            None => unit_direction(&mut rng, n),
            Some(v) => {
                let s = unit_direction(&mut rng, v.ncols());
                SymMatrix::congruence(v, &s)
            }
        };
        let x = sol.x.add(&dir.scale(delta));
        let feasibility = (sdp.apply_a(&x)? - sdp.b()).norm();
        let cone = (-eig_sym(&x)?.min()).max(0.0);
        let suboptimality = sdp.primal_objective(&x) - p_star;
        rows.push(ErrorBoundRow {
            delta,
            distance: x.sub(&sol.x).frobenius(),
            feasibility,
            cone,
            suboptimality,
            rhs: feasibility + cone + suboptimality,
        });
    }
    let gamma = |rho: i32| {
        rows.iter()
            .filter(|r| r.rhs > 0.0 && r.distance > 0.0)
            .map(|r| r.distance.powi(rho) / r.rhs)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    };
    Ok(ErrorBoundReport {
        gamma_rho1: gamma(1),
        gamma_rho2: gamma(2),
        nonpositive_rhs: rows.iter().filter(|r| r.distance > 0.0 && r.rhs <= 0.0).count(),
        rows,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => fmt_num(x),
        None => "-".into(),
    }
}

fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        "inf".into()
    } else if x != 0.0 && (x.abs() >= 1e5 || x.abs() < 1e-2) {
        format!("{x:.3e}")
    } else {
        format!("{x:.4}")
    }
}

pub fn table_header() -> String {
    format!(
        "{:<12} {:>6} {:>7} {:>7} {:>10} {:>10} {:>10} {:>10}  {}",
        "instance", "n", "rank_p", "rank_d", "kappa_X", "kappa_Z", "kappa_AZ", "kappa_AX", "simple"
    )
}

pub fn table_row(label: &str, r: &SimplicityReport) -> String {
    format!(
        "{:<12} {:>6} {:>7} {:>7} {:>10} {:>10} {:>10} {:>10}  {}",
        label,
        r.n,
        r.rank_p,
        r.rank_d,
        fmt_opt(r.kappa_x),
        fmt_opt(r.kappa_z),
        fmt_num(r.a_z.kappa),
        fmt_num(r.a_x.kappa),
        r.flags.simple
    )
}

/// Row rescaling `(A_i, b_i) → (c_i A_i, c_i b_i)` with the dual rescaled to match.
pub fn rescale_pair(
    sdp: &StandardFormSdp,
    sol: &SolverSolution,
    factors: &[f64],
) -> Result<(StandardFormSdp, SolverSolution)> {
    let scaled = sdp.rescale_rows(factors)?;
    let y = DVector::from_iterator(sol.y.len(), sol.y.iter().zip(factors).map(|(y, c)| y / c));
    let s = SolverSolution::from_pair(&scaled, sol.x.clone(), y, sol.status, sol.iterations)?;
    Ok((scaled, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{maxcut, simple_from_psd, Graph};
    use crate::model::SolveStatus;

    fn exact_pair(x: &SymMatrix) -> (StandardFormSdp, SolverSolution) {
        let inst = simple_from_psd(x, 1e-10).unwrap();
        let t = inst.truth.unwrap();
        let sol = SolverSolution::from_pair(&inst.sdp, t.x_star, t.y_star.unwrap(), SolveStatus::Converged, 0).unwrap();
        (inst.sdp, sol)
    }

    #[test]
    fn necessary_condition_examples() {
        assert!(dual_uniqueness_necessary(4, 4, 1).unwrap());
        assert!(dual_uniqueness_necessary(2, 3, 2).unwrap());
        assert!(!dual_uniqueness_necessary(100, 600, 2).unwrap());
        assert!(dual_uniqueness_necessary(3, 1, 4).is_err());
    }

    #[test]
    fn exact_simple_pair_is_simple() {
        let mut d = vec![0.0; 6];
        d[0] = 2.0;
        d[1] = 1.0;
        let (sdp, sol) = exact_pair(&SymMatrix::from_diagonal(&DVector::from_vec(d)));
        let r = certify(&sdp, &sol, 1e-6).unwrap();
        assert_eq!((r.rank_p, r.rank_d), (2, 4));
        assert!(r.flags.simple, "{r:?}");
        assert!(r.flags.strict_complementarity);
        assert_eq!(r.kappa_x, Some(2.0));
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
    }

    #[test]
    fn solved_maxcut_oracle_is_simple() {
        let inst = maxcut(&Graph::new(2, vec![(1, 2, 1.0)]).unwrap()).unwrap();
        let sol = solve(&inst.sdp, &SolverConfig::default()).unwrap();
        let r = certify(&inst.sdp, &sol, 1e-6).unwrap();
        assert_eq!((r.rank_p, r.rank_d), (1, 1));
        assert!(r.flags.simple);
    }

    #[test]
    fn empty_graph_has_non_unique_primal() {
        // C = 0: every correlation matrix is optimal, y = 0 is the unique dual
        let inst = maxcut(&Graph::new(3, vec![]).unwrap()).unwrap();
        let x = SymMatrix::identity(3);
        let sol = SolverSolution::from_pair(&inst.sdp, x, DVector::zeros(3), SolveStatus::Converged, 0).unwrap();
        let r = certify(&inst.sdp, &sol, 1e-6).unwrap();
        assert_eq!((r.rank_p, r.rank_d), (3, 0));
        assert!(r.flags.strict_complementarity);
        assert!(!r.flags.primal_unique);
        assert!(r.flags.dual_unique);
        assert!(!r.flags.simple);
        assert!(!r.flags.primal_simple);
    }

    #[test]
    fn flags_invariant_under_row_rescaling() {
        let mut rng = SeededRng::new(11);
        let x = SymMatrix::gram_rows(&rng.normal_matrix(7, 3));
        let (sdp, sol) = exact_pair(&x);
        let base = certify(&sdp, &sol, 1e-6).unwrap();
        for c in [0.5, 2.0] {
            let (s2, sol2) = rescale_pair(&sdp, &sol, &vec![c; sdp.m()]).unwrap();
            let r = certify(&s2, &sol2, 1e-6).unwrap();
            assert_eq!(r.flags, base.flags);
        }
    }

    #[test]
    fn hashes_are_stable() {
        let (sdp, sol) = exact_pair(&SymMatrix::identity(2));
        let a = certify(&sdp, &sol, 1e-6).unwrap();
        let b = certify(&sdp, &sol, 1e-6).unwrap();
        assert_eq!(a.hashes, b.hashes);
        assert_eq!(a.hashes.sdp.len(), 64);
    }

    #[test]
    fn table_rendering_columns() {
        let (sdp, sol) = exact_pair(&SymMatrix::identity(2));
        let r = certify(&sdp, &sol, 1e-6).unwrap();
        let row = table_row("I2", &r);
        assert_eq!(row.split_whitespace().count(), table_header().split_whitespace().count());
    }

    #[test]
    fn error_bound_zero_delta() {
        let (sdp, sol) = exact_pair(&SymMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 0.0])));
        let rep = error_bound_probe(&sdp, &sol, &[0.0], 1, ProbeDirection::Ambient, 1e-6).unwrap();
        assert_eq!(rep.rows[0].distance, 0.0);
        assert!(rep.rows[0].rhs.abs() < 1e-12);
    }

    #[test]
    fn face_directions_stay_in_cone() {
        let (sdp, sol) = exact_pair(&SymMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 0.0, 0.0])));
        let rep = error_bound_probe(&sdp, &sol, &[1e-4, 1e-3], 2, ProbeDirection::Face, 1e-6).unwrap();
        for r in &rep.rows {
            assert!(r.cone < 1e-12);
        }
    }

    #[test]
    fn slope_fit() {
        let pts: Vec<(f64, f64)> = [1e-3f64, 1e-2, 1e-1].iter().map(|&d| (d.ln(), (3.0 * d.sqrt()).ln())).collect();
        assert!((fit_slope(&pts).unwrap() - 0.5).abs() < 1e-12);
    }
}
