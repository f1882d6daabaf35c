use nalgebra::{DMatrix, DVector};
use simplesdp::bm::{
    bm_multistart, bm_solve, check_sosp, gap_to_dual, hessian_quadratic, objective, riemannian_gradient, BmConfig,
    BmInit, Manifold, ManifoldKind,
};
use simplesdp::instances::{orthogonal_cut, product_sdp, z2_sync};
use simplesdp::rng::SeededRng;
use simplesdp::solver::{solve, SolverConfig};
use simplesdp::{StandardFormSdp, SymMatrix};

fn families() -> Vec<(StandardFormSdp, usize)> {
    let mut rng = SeededRng::new(42);
    let c10 = rng.gaussian_symmetric(10);
    let c9 = rng.gaussian_symmetric(9);
    let c6 = rng.gaussian_symmetric(6);
    vec![
        (orthogonal_cut(10, 1, &c10).unwrap().sdp, 3),
        (product_sdp(&[vec![0, 4, 8], vec![1, 2], vec![3, 5, 6, 7]], &c9).unwrap().sdp, 3),
        (orthogonal_cut(3, 2, &c6).unwrap().sdp, 3),
        (orthogonal_cut(2, 3, &c6).unwrap().sdp, 4),
    ]
}

fn tangent_direction(sdp: &StandardFormSdp, m: &Manifold, f: &DMatrix<f64>, rng: &mut SeededRng) -> DMatrix<f64> {
    let (n, r) = m.shape();
    let xi = m.project(sdp, f, &rng.normal_matrix(n, r)).unwrap();
    let nrm = xi.norm();
    xi / nrm
}

#[test]
fn manifold_kinds_cover_families() {
    let kinds: Vec<ManifoldKind> = families()
        .iter()
        .map(|(s, r)| Manifold::for_sdp(s, *r).unwrap().kind())
        .collect();
    assert_eq!(
        kinds,
        vec![
            ManifoldKind::UnitRows,
            ManifoldKind::GroupSpheres,
            ManifoldKind::BlockStiefel,
            ManifoldKind::BlockStiefel
        ]
    );
}

#[test]
fn gradient_matches_central_differences() {
    let h = 1e-5;
    for (sdp, r) in families() {
        let m = Manifold::for_sdp(&sdp, r).unwrap();
        let mut rng = SeededRng::new(7);
        for p in 0..100 {
            let f = m.random_point(1000 + p).unwrap();
            let (g, _) = riemannian_gradient(&sdp, &m, &f).unwrap();
            let xi = tangent_direction(&sdp, &m, &f, &mut rng);
            let fp = objective(sdp.c(), &m.retract(&(&f + &xi * h)).unwrap());
            let fm = objective(sdp.c(), &m.retract(&(&f - &xi * h)).unwrap());
            let fd = (fp - fm) / (2.0 * h);
            let exact = g.dot(&xi);
            assert!(
                (fd - exact).abs() <= 1e-5 * exact.abs().max(g.norm()),
                "{:?}: fd {fd} vs {exact}",
                m.kind()
            );
        }
    }
}

#[test]
fn hessian_matches_second_differences() {
    let h = 1e-3;
    for (sdp, r) in families() {
        let m = Manifold::for_sdp(&sdp, r).unwrap();
        let mut rng = SeededRng::new(8);
        for p in 0..20 {
            let f = m.random_point(2000 + p).unwrap();
            let xi = tangent_direction(&sdp, &m, &f, &mut rng);
            let f0 = objective(sdp.c(), &f);
            let fp = objective(sdp.c(), &m.retract(&(&f + &xi * h)).unwrap());
            let fm = objective(sdp.c(), &m.retract(&(&f - &xi * h)).unwrap());
            let fd = (fp - 2.0 * f0 + fm) / (h * h);
            let exact = hessian_quadratic(&sdp, &m, &f, &xi).unwrap();
            assert!(
                (fd - exact).abs() <= 1e-3 * exact.abs().max(1.0),
                "{:?}: fd {fd} vs {exact}",
                m.kind()
            );
        }
    }
}

#[test]
fn retraction_does_not_drift() {
    for (sdp, r) in families() {
        let m = Manifold::for_sdp(&sdp, r).unwrap();
        let mut rng = SeededRng::new(9);
        let mut f = m.random_point(3).unwrap();
        let (n, r) = m.shape();
        let mut worst: f64 = 0.0;
        for _ in 0..25_000 {
            let step = m.project(&sdp, &f, &rng.normal_matrix(n, r)).unwrap() * 0.1;
            f = m.retract(&(&f + step)).unwrap();
            worst = worst.max(m.violation(&sdp, &f));
        }
        assert!(worst <= 1e-12, "{:?}: {worst:e}", m.kind());
    }
}

#[test]
fn unit_rows_do_not_drift_over_long_runs() {
    let sdp = families().remove(0).0;
    let m = Manifold::for_sdp(&sdp, 3).unwrap();
    let mut rng = SeededRng::new(10);
    let mut f = m.random_point(4).unwrap();
    for _ in 0..100_000 {
        let step = rng.normal_matrix(10, 3) * 0.05;
        f = m.retract(&(&f + step)).unwrap();
    }
    assert!(m.violation(&sdp, &f) <= 1e-12);
}

#[test]
fn objective_two_ways() {
    let mut rng = SeededRng::new(11);
    let c = rng.gaussian_symmetric(200);
    let sdp = orthogonal_cut(200, 1, &c).unwrap().sdp;
    let m = Manifold::for_sdp(&sdp, 4).unwrap();
    let f = m.random_point(5).unwrap();
    let formed = c.inner(&SymMatrix::gram_rows(&f));
    let factored = objective(&c, &f);
    assert!((formed - factored).abs() <= 1e-10 * (1.0 + formed.abs()));
}

#[test]
fn accepted_steps_decrease() {
    for (sdp, r) in families() {
        let res = bm_solve(&sdp, r, BmInit::Seed(12), &BmConfig::default()).unwrap();
        let start = objective(sdp.c(), &Manifold::for_sdp(&sdp, r).unwrap().random_point(12).unwrap());
        let mut prev = start;
        for &v in &res.trace {
            // rounding of the retraction only
            assert!(v <= prev + 1e-13 * (1.0 + prev.abs()), "{v} after {prev}");
            prev = v;
        }
        assert!(res.objective <= start);
        assert!(res.sosp, "{res:?}");
    }
}

#[test]
fn random_maxcut_matches_sdp_value() {
    for seed in 0..3 {
        let c = SeededRng::new(100 + seed).gaussian_symmetric(30);
        let sdp = orthogonal_cut(30, 1, &c).unwrap().sdp;
        let p = solve(&sdp, &SolverConfig::default()).unwrap();
        let res = bm_solve(&sdp, 9, BmInit::Seed(seed), &BmConfig::default()).unwrap();
        assert!(res.sosp, "{} {} {} {} {}", res.grad_norm, res.hess_min_eig, res.iterations, res.escapes, res.objective - p.primal_obj);
        assert!((res.objective - p.primal_obj).abs() <= 1e-4 * (1.0 + p.primal_obj.abs()));
        let gap = gap_to_dual(&sdp, &res.f, &p.y).unwrap();
        assert!(gap.abs() <= 1e-6 * (1.0 + p.primal_obj.abs()));
    }
}

#[test]
fn z2_rank_two_recovers_signal() {
    let mut good = 0;
    for seed in 0..5 {
        let inst = z2_sync(100, 0.5, seed).unwrap();
        let z = inst.signal.unwrap().z;
        let res = bm_solve(&inst.sdp, 2, BmInit::Seed(seed), &BmConfig::default()).unwrap();
        let svd = res.f.clone().svd(true, false);
        let (idx, _) = svd.singular_values.argmax();
        let u = svd.u.unwrap().column(idx).into_owned();
        let corr: f64 = u.iter().zip(z.iter()).map(|(a, b)| a.signum() * b).sum::<f64>().abs() / 100.0;
        if corr >= 0.99 {
            good += 1;
        }
    }
    assert!(good >= 3, "{good}/5");
}

#[test]
fn gap_reflects_flipped_block() {
    let inst = z2_sync(40, 0.3, 3).unwrap();
    let cert = inst.certificate.clone().unwrap();
    assert!(cert.valid);
    let z = inst.signal.unwrap().z;
    let mut flipped = z.clone();
    for i in 0..10 {
        flipped[i] = -flipped[i];
    }
    let fz = DMatrix::from_column_slice(40, 1, z.as_slice());
    let ff = DMatrix::from_column_slice(40, 1, flipped.as_slice());
    let gap = gap_to_dual(&inst.sdp, &ff, &cert.y_star).unwrap();
    let diff = objective(inst.sdp.c(), &ff) - objective(inst.sdp.c(), &fz);
    assert!((gap - diff).abs() <= 1e-9 * (1.0 + diff.abs()));
    assert!(gap > 1.0);
    let shifted: DVector<f64> = cert.y_star.map(|v| v - 0.5);
    let weaker = gap_to_dual(&inst.sdp, &fz, &shifted).unwrap();
    assert!((weaker - 0.5 * 40.0).abs() <= 1e-9 * 40.0);
}

#[test]
fn multistart_is_ordered_and_deterministic() {
    let (sdp, r) = families().remove(1);
    let a = bm_multistart(&sdp, r, 4, 20, &BmConfig::default()).unwrap();
    let b = bm_multistart(&sdp, r, 4, 20, &BmConfig::default()).unwrap();
    let seeds: Vec<Option<u64>> = a.iter().map(|x| x.seed).collect();
    assert_eq!(seeds, vec![Some(20), Some(21), Some(22), Some(23)]);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.f, y.f);
    }
    let m = Manifold::for_sdp(&sdp, r).unwrap();
    let chk = check_sosp(&sdp, &m, &a[0].f, 1e-6, 1e-5).unwrap();
    assert!(chk.sosp);
}
