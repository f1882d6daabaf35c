//! Instance generators with planted solutions and closed-form dual certificates.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdpError};
use crate::linalg::{eig_sym, SymMatrix};
use crate::model::{SparseSym, StandardFormSdp};
use crate::rng::SeededRng;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Truth {
    pub x_star: SymMatrix,
    /// absent when the dual is not unique
    #[serde(with = "crate::serde_util::opt_dvec")]
    pub y_star: Option<DVector<f64>>,
    pub rank_star: usize,
}

/// Planted sign vector for the synchronization and SBM families.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Signal {
    #[serde(with = "crate::serde_util::dvec")]
    pub z: DVector<f64>,
}

/// Closed-form dual candidate `y⋆`, its slack `Z⋆` and whether it certifies optimality.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualCertificate {
    #[serde(with = "crate::serde_util::dvec")]
    pub y_star: DVector<f64>,
    pub z_star: SymMatrix,
    pub valid: bool,
    pub lambda_min: f64,
    /// λ_{n−1}(Z⋆), the second smallest eigenvalue.
    pub lambda_second: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Instance {
    pub sdp: StandardFormSdp,
    pub truth: Option<Truth>,
    pub signal: Option<Signal>,
    pub certificate: Option<DualCertificate>,
    pub params: BTreeMap<String, f64>,
    pub seed: Option<u64>,
}

impl Instance {
    pub(crate) fn plain(sdp: StandardFormSdp) -> Self {
        Instance {
            sdp,
            truth: None,
            signal: None,
            certificate: None,
            params: BTreeMap::new(),
            seed: None,
        }
    }

    pub(crate) fn param(mut self, key: &str, v: f64) -> Self {
        self.params.insert(key.to_string(), v);
        self
    }
}

/// Weighted undirected graph with 1-based vertex ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub n_vertices: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl Graph {
    pub fn new(n_vertices: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(i, j, w) in &edges {
            if i == 0 || j == 0 || i > n_vertices || j > n_vertices {
                return Err(SdpError::InvalidInput(format!(
                    "edge ({i}, {j}) out of range 1..={n_vertices}"
                )));
            }
            if !w.is_finite() {
                return Err(SdpError::InvalidInput(format!("edge ({i}, {j}) has non-finite weight")));
            }
        }
        Ok(Graph { n_vertices, edges })
    }

    /// `L = D − W`.
    pub fn laplacian(&self) -> SymMatrix {
        let mut l = SymMatrix::zeros(self.n_vertices);
        for &(i, j, w) in &self.edges {
            let (i, j) = (i - 1, j - 1);
            l.add_at(i, i, w);
            l.add_at(j, j, w);
            l.add_at(i, j, -w);
        }
        l
    }

    /// Erdős–Rényi graph with unit weights, or ±1 weights when `signed`.
    pub fn random(n: usize, density: f64, signed: bool, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&density) || n == 0 {
            return Err(SdpError::InvalidInput("need n >= 1 and density in [0, 1]".into()));
        }
        let mut rng = SeededRng::new(seed);
        let mut edges = Vec::new();
        for i in 1..=n {
            for j in (i + 1)..=n {
                if rng.bernoulli(density) {
                    let w = if signed { rng.sign() } else { 1.0 };
                    edges.push((i, j, w));
                }
            }
        }
        Graph::new(n, edges)
    }
}

/// Reads a Gset edge list: header `n m`, then m lines `i j w`.
pub fn parse_gset(path: impl AsRef<Path>) -> Result<Graph> {
    parse_gset_str(&std::fs::read_to_string(path)?)
}

pub fn parse_gset_str(text: &str) -> Result<Graph> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or(SdpError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let head: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str, line: usize| {
        s.parse::<usize>().map_err(|_| SdpError::Parse {
            line,
            msg: format!("expected a non-negative integer, found {s:?}"),
        })
    };
    if head.len() != 2 {
        return Err(SdpError::Parse {
            line: hline + 1,
            msg: "header must be \"n m\"".into(),
        });
    }
    let n = parse_usize(head[0], hline + 1)?;
    let m = parse_usize(head[1], hline + 1)?;
    let mut edges = Vec::with_capacity(m);
    let mut last = hline + 1;
    for (idx, line) in lines {
        let ln = idx + 1;
        last = ln;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(SdpError::Parse {
                line: ln,
                msg: format!("expected \"i j w\", found {} fields", f.len()),
            });
        }
        let i = parse_usize(f[0], ln)?;
        let j = parse_usize(f[1], ln)?;
        let w: f64 = f[2].parse().map_err(|_| SdpError::Parse {
            line: ln,
            msg: format!("bad weight {:?}", f[2]),
        })?;
        if i == 0 || j == 0 || i > n || j > n {
            return Err(SdpError::Parse {
                line: ln,
                msg: format!("vertex id out of range 1..={n}"),
            });
        }
        if edges.len() == m {
            return Err(SdpError::Parse {
                line: ln,
                msg: format!("more than the {m} declared edges"),
            });
        }
        edges.push((i, j, w));
    }
    if edges.len() != m {
        return Err(SdpError::Parse {
            line: last + 1,
            msg: format!("expected {m} edges, found {}", edges.len()),
        });
    }
    Graph::new(n, edges)
}

fn diag_constraints(n: usize) -> (Vec<SparseSym>, DVector<f64>) {
    ((0..n).map(SparseSym::unit_diag).collect(), DVector::from_element(n, 1.0))
}

/// Builds the SDP whose unique solution is the given PSD matrix:
/// `min tr(X)` s.t. `⟨v_i v_jᵀ sym, X⟩ = λ_i δ_ij` over the eigenvectors of
/// the range.
pub fn simple_from_psd(x_psd: &SymMatrix, eps: f64) -> Result<Instance> {
    if !(eps >= 0.0) {
        return Err(SdpError::InvalidInput("eps must be non-negative".into()));
    }
    let n = x_psd.n();
    let e = eig_sym(x_psd)?;
    if e.min() < -eps {
        return Err(SdpError::InvalidInput(format!(
            "matrix is indefinite (λ_min = {:.3e})",
            e.min()
        )));
    }
    let r = e.values.iter().filter(|&&v| v > eps).count();
    if r == 0 {
        return Err(SdpError::InvalidInput("matrix has no positive eigenvalues".into()));
    }
    let v: Vec<DVector<f64>> = (0..r).map(|i| e.vectors.column(i).into_owned()).collect();
    let mut constraints = Vec::new();
    let mut b = Vec::new();
    let mut y = Vec::new();
    for i in 0..r {
        for j in i..r {
            let m = SymMatrix::from_fn(n, |a, c| 0.5 * (v[i][a] * v[j][c] + v[j][a] * v[i][c]));
            constraints.push(SparseSym::from_dense(&m, 0.0));
            if i == j {
                b.push(e.values[i]);
                y.push(1.0);
            } else {
                b.push(0.0);
                y.push(0.0);
            }
        }
    }
    let x_star = e.map_values(|l| if l > eps { l } else { 0.0 });
    let sdp = StandardFormSdp::new(
        SymMatrix::identity(n),
        constraints,
        DVector::from_vec(b),
        format!("simple-psd-n{n}-r{r}"),
    )?;
    let mut inst = Instance::plain(sdp).param("n", n as f64).param("rank", r as f64);
    inst.truth = Some(Truth {
        x_star,
        y_star: Some(DVector::from_vec(y)),
        rank_star: r,
    });
    Ok(inst)
}

/// `min ⟨−L, X⟩` s.t. `diag(X) = 1`.
pub fn maxcut(graph: &Graph) -> Result<Instance> {
    if let Some(&(i, _, _)) = graph.edges.iter().find(|e| e.0 == e.1) {
        return Err(SdpError::InvalidInput(format!("self-loop at vertex {i}")));
    }
    let n = graph.n_vertices;
    let (constraints, b) = diag_constraints(n);
    let sdp = StandardFormSdp::new(graph.laplacian().scale(-1.0), constraints, b, format!("maxcut-n{n}"))?;
    Ok(Instance::plain(sdp)
        .param("n", n as f64)
        .param("edges", graph.edges.len() as f64))
}

/// `Block_s(X) = I_d` for `s = 1..S`.
pub fn orthogonal_cut(blocks: usize, d: usize, c: &SymMatrix) -> Result<Instance> {
    if !(1..=3).contains(&d) || blocks == 0 {
        return Err(SdpError::InvalidInput("need S >= 1 and d in {1, 2, 3}".into()));
    }
    crate::error::check_dim(blocks * d, c.n())?;
    let mut constraints = Vec::new();
    let mut b = Vec::new();
    for s in 0..blocks {
        for a in 0..d {
            for e in a..d {
                constraints.push(SparseSym::sym_unit(s * d + a, s * d + e));
                b.push(if a == e { 1.0 } else { 0.0 });
            }
        }
    }
    let sdp = StandardFormSdp::new(
        c.clone(),
        constraints,
        DVector::from_vec(b),
        format!("orthocut-S{blocks}-d{d}"),
    )?;
    Ok(Instance::plain(sdp).param("S", blocks as f64).param("d", d as f64))
}

/// `Σ_{k∈S_i} X_kk = 1` for each group of the partition (0-based indices).
pub fn product_sdp(partition: &[Vec<usize>], c: &SymMatrix) -> Result<Instance> {
    let dim = c.n();
    let mut seen = vec![false; dim];
    for g in partition {
        if g.is_empty() {
            return Err(SdpError::InvalidInput("empty group in partition".into()));
        }
        for &k in g {
            if k >= dim {
                return Err(SdpError::InvalidInput(format!("index {k} out of range for D = {dim}")));
            }
            if seen[k] {
                return Err(SdpError::InvalidInput(format!("index {k} appears in two groups")));
            }
            seen[k] = true;
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(SdpError::InvalidInput(format!("index {k} is not covered by the partition")));
    }
    let constraints: Vec<SparseSym> = partition
        .iter()
        .map(|g| SparseSym::from_triplets(g.iter().map(|&k| (k, k, 1.0))))
        .collect();
    let b = DVector::from_element(partition.len(), 1.0);
    let sdp = StandardFormSdp::new(c.clone(), constraints, b, format!("product-D{dim}-k{}", partition.len()))?;
    Ok(Instance::plain(sdp).param("groups", partition.len() as f64))
}

/// Certificate `y⋆ = −ddiag(K zzᵀ)`, `Z⋆ = ddiag(K zzᵀ) − K` for cost `−K`
/// under the diagonal constraints.
fn sign_certificate(k: &SymMatrix, z: &DVector<f64>) -> Result<DualCertificate> {
    let n = z.len();
    let kz = k.mul_vec(z);
    let d = kz.component_mul(z);
    let y_star = -&d;
    let z_star = SymMatrix::from_diagonal(&d).sub(k);
    let e = eig_sym(&z_star)?;
    let opn = e.max().abs().max(e.min().abs());
    let lambda_min = e.min();
    Ok(DualCertificate {
        y_star,
        lambda_second: if n >= 2 { e.values[n - 2] } else { f64::NAN },
        valid: lambda_min >= -1e-8 * opn,
        lambda_min,
        z_star,
    })
}

fn sign_instance(sdp: StandardFormSdp, k: &SymMatrix, z: DVector<f64>) -> Result<Instance> {
    let cert = sign_certificate(k, &z)?;
    let mut inst = Instance::plain(sdp);
    if cert.valid {
        inst.truth = Some(Truth {
            x_star: SymMatrix::outer(&z),
            y_star: Some(cert.y_star.clone()),
            rank_star: 1,
        });
    }
    inst.signal = Some(Signal { z });
    inst.certificate = Some(cert);
    Ok(inst)
}

/// `min ⟨−Y, X⟩` s.t. `diag(X) = 1` with `Y = zzᵀ + γW`.
pub fn z2_sync(n: usize, gamma: f64, seed: u64) -> Result<Instance> {
    if n < 2 {
        return Err(SdpError::InvalidInput("z2 synchronization needs n >= 2".into()));
    }
    if !gamma.is_finite() {
        return Err(SdpError::InvalidInput("gamma must be finite".into()));
    }
    let mut rng = SeededRng::new(seed);
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sign()));
    let mut y = SymMatrix::outer(&z);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = rng.normal();
            y.add_at(i, j, gamma * w);
        }
    }
    let (constraints, b) = diag_constraints(n);
    let sdp = StandardFormSdp::new(y.scale(-1.0), constraints, b, format!("z2-n{n}-seed{seed}"))?;
    let mut inst = sign_instance(sdp, &y, z)?;
    inst.seed = Some(seed);
    Ok(inst.param("n", n as f64).param("gamma", gamma))
}

/// `λ(p, q) = (p − q)/√(2(p + q)) · √n`.
pub fn sbm_signal_strength(n: usize, p: f64, q: f64) -> f64 {
    (p - q) / (2.0 * (p + q)).sqrt() * (n as f64).sqrt()
}

/// Both standard-form SBM programs drawn from one graph.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SbmPair {
    /// Cost `−(A − (p+q)/2·J)`.
    pub sbm: Instance,
    /// Cost `−Ã` with `Ã = 2/(p−q)·(A − (p+q)/2·J)`.
    pub rescaled: Instance,
    pub signal_strength: f64,
}

pub fn sbm(n: usize, p: f64, q: f64, seed: u64) -> Result<SbmPair> {
    if n < 2 || n % 2 != 0 {
        return Err(SdpError::InvalidInput("SBM needs an even n >= 2".into()));
    }
    if !(0.0 <= q && q < p && p <= 1.0) {
        return Err(SdpError::InvalidInput("need 0 <= q < p <= 1".into()));
    }
    let mut rng = SeededRng::new(seed);
    let mut signs: Vec<f64> = (0..n).map(|i| if i < n / 2 { 1.0 } else { -1.0 }).collect();
    rng.shuffle(&mut signs);
    let z = DVector::from_vec(signs);
    let mut cost = SymMatrix::zeros(n);
    let half = 0.5 * (p + q);
    for i in 0..n {
        cost.set(i, i, 0.5 * (p - q));
        for j in (i + 1)..n {
            let prob = if z[i] == z[j] { p } else { q };
            let a = if rng.bernoulli(prob) { 1.0 } else { 0.0 };
            cost.set(i, j, a - half);
        }
    }
    let a_tilde = cost.scale(2.0 / (p - q));
    let lambda = sbm_signal_strength(n, p, q);
    let (constraints, b) = diag_constraints(n);
    let plain = StandardFormSdp::new(cost.scale(-1.0), constraints.clone(), b.clone(), format!("sbm-n{n}-seed{seed}"))?;
    let rescaled = StandardFormSdp::new(a_tilde.scale(-1.0), constraints, b, format!("sbm-rescaled-n{n}-seed{seed}"))?;
    let tag = |inst: Instance| {
        let mut inst = inst
            .param("n", n as f64)
            .param("p", p)
            .param("q", q)
            .param("signal_strength", lambda);
        inst.seed = Some(seed);
        inst
    };
    Ok(SbmPair {
        sbm: tag(sign_instance(plain, &cost, z.clone())?),
        rescaled: tag(sign_instance(rescaled, &a_tilde, z)?),
        signal_strength: lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rank_eps;

    fn random_psd(n: usize, r: usize, seed: u64) -> SymMatrix {
        let mut rng = SeededRng::new(seed);
        SymMatrix::gram_rows(&rng.normal_matrix(n, r))
    }

    #[test]
    fn psd_diag_example() {
        let x = SymMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 0.0]));
        let inst = simple_from_psd(&x, 1e-10).unwrap();
        assert_eq!(inst.sdp.m(), 3);
        let t = inst.truth.unwrap();
        assert!(t.x_star.sub(&x).frobenius() < 1e-12);
        let r = inst.sdp.residuals(&t.x_star, t.y_star.as_ref().unwrap()).unwrap();
        assert!(r.max() < 1e-10);
    }

    #[test]
    fn psd_identity_has_full_constraint_set() {
        let inst = simple_from_psd(&SymMatrix::identity(4), 1e-10).unwrap();
        assert_eq!(inst.sdp.m(), 10);
    }

    #[test]
    fn psd_rank_one_slack() {
        let z = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let inst = simple_from_psd(&SymMatrix::outer(&z), 1e-10).unwrap();
        let t = inst.truth.unwrap();
        let slack = inst.sdp.slack(t.y_star.as_ref().unwrap()).unwrap();
        let want = SymMatrix::identity(4).sub(&SymMatrix::outer(&z).scale(1.0 / z.norm_squared()));
        assert!(slack.sub(&want).frobenius() < 1e-12);
        assert_eq!(rank_eps(&slack.eig().unwrap().values.as_slice(), 1e-6).unwrap().rank, 3);
    }

    #[test]
    fn psd_truth_invariants_random() {
        for seed in 0..20 {
            let x = random_psd(8, 1 + (seed as usize) % 5, seed);
            let inst = simple_from_psd(&x, 1e-9).unwrap();
            let t = inst.truth.as_ref().unwrap();
            let r = inst.sdp.residuals(&t.x_star, t.y_star.as_ref().unwrap()).unwrap();
            assert!(r.primal_infeas < 1e-10 && r.dual_infeas < 1e-10 && r.cone_infeas < 1e-10);
            let p = inst.sdp.primal_objective(&t.x_star);
            assert!((p - inst.sdp.dual_objective(t.y_star.as_ref().unwrap())).abs() <= 1e-10 * (1.0 + p.abs()));
            assert!(inst.sdp.check_surjective().surjective);
        }
    }

    #[test]
    fn indefinite_rejected() {
        let x = SymMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(simple_from_psd(&x, 1e-8).is_err());
    }

    #[test]
    fn maxcut_single_edge() {
        let g = Graph::new(2, vec![(1, 2, 1.0)]).unwrap();
        let inst = maxcut(&g).unwrap();
        let want = SymMatrix::from_upper(2, &[-1.0, 1.0, -1.0]).unwrap();
        assert_eq!(inst.sdp.c(), &want);
        let x = SymMatrix::from_upper(2, &[1.0, -1.0, 1.0]).unwrap();
        assert_eq!(inst.sdp.primal_objective(&x), -4.0);
    }

    #[test]
    fn maxcut_empty_graph_and_self_loop() {
        let inst = maxcut(&Graph::new(3, vec![]).unwrap()).unwrap();
        assert_eq!(inst.sdp.c().frobenius(), 0.0);
        assert!(maxcut(&Graph::new(3, vec![(2, 2, 1.0)]).unwrap()).is_err());
    }

    #[test]
    fn orthogonal_cut_shapes() {
        let c = SymMatrix::zeros(4);
        let inst = orthogonal_cut(2, 2, &c).unwrap();
        assert_eq!(inst.sdp.m(), 6);
        let ai = inst.sdp.apply_a(&SymMatrix::identity(4)).unwrap();
        assert_eq!(&ai, inst.sdp.b());
        let d1 = orthogonal_cut(3, 1, &SymMatrix::identity(3)).unwrap();
        let mc = maxcut(&Graph::new(3, vec![]).unwrap()).unwrap();
        assert_eq!(d1.sdp.constraints(), mc.sdp.constraints());
        assert!(orthogonal_cut(2, 4, &SymMatrix::zeros(8)).is_err());
        assert!(orthogonal_cut(2, 2, &SymMatrix::zeros(5)).is_err());
    }

    #[test]
    fn product_sdp_cases() {
        let c = SymMatrix::identity(3);
        let singles = product_sdp(&[vec![0], vec![1], vec![2]], &c).unwrap();
        let mc = maxcut(&Graph::new(3, vec![]).unwrap()).unwrap();
        assert_eq!(singles.sdp.constraints(), mc.sdp.constraints());
        let one = product_sdp(&[vec![0, 1, 2]], &c).unwrap();
        assert_eq!(one.sdp.m(), 1);
        assert!(product_sdp(&[vec![0, 1], vec![1, 2]], &c).is_err());
        assert!(product_sdp(&[vec![0, 1]], &c).is_err());
    }

    #[test]
    fn z2_noiseless_and_null_vector() {
        let inst = z2_sync(10, 0.0, 3).unwrap();
        let cert = inst.certificate.as_ref().unwrap();
        assert!(cert.valid);
        assert!((cert.lambda_second - 10.0).abs() < 1e-9);
        for seed in 0..5 {
            let inst = z2_sync(30, 1.3, seed).unwrap();
            let cert = inst.certificate.unwrap();
            let z = inst.signal.unwrap().z;
            assert!(cert.z_star.mul_vec(&z).amax() < 1e-12 * (1.0 + inst.sdp.c().frobenius()));
        }
    }

    #[test]
    fn z2_deterministic_by_seed() {
        let a = z2_sync(12, 0.7, 9).unwrap();
        let b = z2_sync(12, 0.7, 9).unwrap();
        assert_eq!(a.sdp, b.sdp);
        assert_ne!(a.sdp, z2_sync(12, 0.7, 10).unwrap().sdp);
    }

    #[test]
    fn sbm_extreme_case_is_exact() {
        let pair = sbm(12, 1.0, 0.0, 5).unwrap();
        let z = pair.rescaled.signal.as_ref().unwrap().z.clone();
        let a_tilde = pair.rescaled.sdp.c().scale(-1.0);
        assert!(a_tilde.sub(&SymMatrix::outer(&z)).frobenius() < 1e-12);
        let cert = pair.rescaled.certificate.as_ref().unwrap();
        assert!(cert.valid && cert.lambda_second > 1.0);
        assert_eq!(z.sum(), 0.0);
    }

    #[test]
    fn sbm_null_vector_and_ranges() {
        for seed in 0..5 {
            let pair = sbm(20, 0.7, 0.2, seed).unwrap();
            for inst in [&pair.sbm, &pair.rescaled] {
                let z = &inst.signal.as_ref().unwrap().z;
                let cert = inst.certificate.as_ref().unwrap();
                assert!(cert.z_star.mul_vec(z).amax() < 1e-12);
            }
        }
        assert!(sbm(11, 0.5, 0.1, 0).is_err());
        assert!(sbm(10, 0.1, 0.5, 0).is_err());
        assert!((sbm_signal_strength(100, 0.5, 0.1) - 0.4 / 1.2f64.sqrt() * 10.0).abs() < 1e-12);
    }

    #[test]
    fn gset_parsing() {
        let g = parse_gset_str("2 1\n1 2 1\n").unwrap();
        assert_eq!(g.n_vertices, 2);
        assert_eq!(g.edges, vec![(1, 2, 1.0)]);
        let s = parse_gset_str("3 2\n1 2 -1\n2 3 1\n").unwrap();
        assert_eq!(s.edges[0].2, -1.0);
        match parse_gset_str("3 2\n1 2 1\n2 x 1\n") {
            Err(SdpError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_gset_str("3 2\n1 2 1\n"), Err(SdpError::Parse { .. })));
        assert!(matches!(parse_gset_str("3 1\n1 4 1\n"), Err(SdpError::Parse { line: 2, .. })));
    }
}
