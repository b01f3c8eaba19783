use nsk_core::certify::*;
use nsk_core::dynamics::*;
use nsk_core::hum::*;
use nsk_core::params::DerivedConstants;
use nsk_core::torus::TorusGrid;
use nsk_core::weights::*;
use nsk_core::C64;
use std::f64::consts::PI;

fn region() -> ControlRegion {
    ControlRegion::concentric(1, 2.0 * PI, PI, 1.5, 1.25, 0.95).unwrap()
}

fn bundled_dc() -> DerivedConstants {
    DerivedConstants { kappa_star: 45.0, mu_star: 6.0, nu_star: 0.0, p_star: 1.0 }
}

fn nsk_hum(n: usize, half_width: f64, horizon: f64) -> HumProblem {
    let g = TorusGrid::new(1, n, 2.0 * PI).unwrap();
    let sys = ModeBlockSystem::assemble(SystemKind::LinearizedNsk, &bundled_dc(), None, &g).unwrap();
    let r = ControlRegion::concentric(1, 2.0 * PI, PI, half_width, 0.9 * half_width, 0.3 * half_width).unwrap();
    let cut = GalerkinCutoff::new(&r, Cutoff::Outer, &g).unwrap();
    HumProblem::new(&sys, cut, TimeGrid::new(horizon, 256).unwrap(), HumConfig::default()).unwrap()
}

#[test]
fn complex_and_real_constants_stay_within_a_decade() {
    let g = TorusGrid::new(1, 64, 2.0 * PI).unwrap();
    let tg = TimeGrid::new(1.0, 128).unwrap();
    for lam in [1.0, 2.0] {
        let ws = WeightSet::new(&g, &region(), 1.0, 0.3, 0.1, 16.0, lam).unwrap();
        for case in Manufactured::SUITE {
            let real = carleman_row(C64::new(1.0, 0.0), &ws, &tg, case).unwrap().c_est().unwrap();
            let cplx = carleman_row(C64::new(1.0, 5.0), &ws, &tg, case).unwrap().c_est().unwrap();
            assert!(real.is_finite() && cplx.is_finite());
            assert!(cplx <= 10.0 * real && real <= 10.0 * cplx, "{case:?} lambda {lam}: {real} vs {cplx}");
        }
    }
}

#[test]
fn observed_bump_constant_is_at_most_one() {
    let g = TorusGrid::new(1, 64, 2.0 * PI).unwrap();
    let tg = TimeGrid::new(1.0, 128).unwrap();
    for s in [4.0, 32.0] {
        let ws = WeightSet::new(&g, &region(), 1.0, 0.3, 0.1, s, 1.5).unwrap();
        let row = carleman_row(C64::new(1.0, 0.0), &ws, &tg, Manufactured::InObservation).unwrap();
        let gradient_share = (row.appendix.log_lhs[1] - row.appendix.log_rhs[1]).exp();
        assert!(row.c_est().unwrap() <= 1.0 + gradient_share + 1e-9);
        assert!(row.c_est().unwrap() <= 1.0);
    }
}

#[test]
fn constants_do_not_grow_with_s() {
    let g = TorusGrid::new(1, 64, 2.0 * PI).unwrap();
    let tg = TimeGrid::new(1.0, 128).unwrap();
    let cfg = CarlemanConfig { s_values: vec![4.0, 8.0, 16.0, 32.0], lambda_values: vec![1.0], ..CarlemanConfig::default() };
    let rep = carleman_check(C64::new(1.0, 5.0), &g, &region(), &tg, &cfg).unwrap();
    assert!(rep.is_bounded(0.05), "{:?}", rep.flags);
    assert!(rep.rows.iter().all(|r| r.log_tail_bound < r.log_smallest_integral - 100.0));
}

#[test]
fn gramian_extremes_are_grid_invariant_on_band_limited_probes() {
    let cfg = ObservabilityConfig::default();
    let a = estimate_observability(&nsk_hum(64, PI / 4.0, 1.0), &cfg, 11).unwrap();
    let b = estimate_observability(&nsk_hum(128, PI / 4.0, 1.0), &cfg, 11).unwrap();
    assert!(a.smallest > 0.0);
    assert!((a.smallest - b.smallest).abs() <= 1e-8 * a.smallest, "{} vs {}", a.smallest, b.smallest);
    assert!((a.largest - b.largest).abs() <= 1e-8 * a.largest);
    assert!(a.smallest_residual < cfg.tol && a.largest_residual < cfg.tol);
}

#[test]
fn narrower_region_lowers_the_smallest_eigenvalue() {
    let cfg = ObservabilityConfig::default();
    let wide = estimate_observability(&nsk_hum(64, PI / 4.0, 1.0), &cfg, 3).unwrap();
    let narrow = estimate_observability(&nsk_hum(64, PI / 8.0, 1.0), &cfg, 3).unwrap();
    assert!(narrow.smallest < wide.smallest, "{} vs {}", narrow.smallest, wide.smallest);
}

#[test]
fn shorter_horizon_raises_the_observability_constant() {
    let cfg = ObservabilityConfig::default();
    let long = estimate_observability(&nsk_hum(64, PI / 4.0, 1.0), &cfg, 5).unwrap();
    let short = estimate_observability(&nsk_hum(64, PI / 4.0, 0.2), &cfg, 5).unwrap();
    assert!(short.kappa_obs > long.kappa_obs);
}

#[test]
fn full_domain_nsk_eigenvalues_match_per_mode_integrals() {
    let g = TorusGrid::new(1, 32, 2.0 * PI).unwrap();
    let sys = ModeBlockSystem::assemble(SystemKind::LinearizedNsk, &bundled_dc(), None, &g).unwrap();
    let tg = TimeGrid::new(0.5, 128).unwrap();
    let hum = HumProblem::new(&sys, GalerkinCutoff::full(&g), tg, HumConfig::default()).unwrap();
    let band = 3;
    let rep = estimate_observability(&hum, &ObservabilityConfig { band, ..ObservabilityConfig::default() }, 2).unwrap();
    // Oracle: per mode, Σ_j w_j E^{M−j} D (E^{M−j})^H with E = exp(hK_k), assembled with nalgebra.
    let h = tg.step();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for k in 0..=band as i64 {
        let idx = g.index_of(&[k]);
        let b = sys.block(idx);
        let km = nalgebra::Matrix2::from_fn(|i, j| {
            let z = b.get(i, j);
            nalgebra::Complex::new(z.re * h, z.im * h)
        });
        let e = km.exp();
        let mut acc = nalgebra::Matrix2::<nalgebra::Complex<f64>>::zeros();
        let mut p = nalgebra::Matrix2::<nalgebra::Complex<f64>>::identity();
        for j in (0..=tg.steps).rev() {
            acc += (p * p.adjoint()).scale(tg.quadrature_weight(j));
            p = e * p;
        }
        let eig = nalgebra::Matrix2::from_fn(|i, j| acc[(i, j)]).symmetric_eigenvalues();
        for v in eig.iter() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    assert!((rep.smallest - lo).abs() <= 1e-6 * lo, "{} vs {lo}", rep.smallest);
    assert!((rep.largest - hi).abs() <= 1e-6 * hi, "{} vs {hi}", rep.largest);
}
