use nsk_core::dynamics::{Direction, GalerkinCutoff, ModeState, Stepper, TimeGrid};
use nsk_core::hum::{HumConfig, HumProblem};
use nsk_core::nonlinear::*;
use nsk_core::params::{CoefficientFunction, ModelParams, Poly};
use nsk_core::torus::{SpectralField, TorusGrid};
use nsk_core::weights::{ControlRegion, Cutoff};
use std::f64::consts::PI;

fn params() -> ModelParams {
    ModelParams::new(
        1.0,
        CoefficientFunction::shifted(vec![1.0, 1.0, 0.5, 0.2], 3),
        CoefficientFunction::shifted(vec![2.0, 0.8, -0.6, 0.3], 3),
        CoefficientFunction::shifted(vec![1.0, 0.4, 0.3], 2),
        CoefficientFunction::shifted(vec![0.5, -0.3, 0.2], 2),
        0.5,
    )
    .unwrap()
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(ly.iter()).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

// Pointwise oracle on a grid fine enough that every product is exact.
struct Oracle {
    g: TorusGrid,
}

impl Oracle {
    fn vals(&self, f: &SpectralField) -> Vec<Vec<f64>> {
        f.values()
    }

    fn back(&self, v: Vec<Vec<f64>>) -> SpectralField {
        SpectralField::from_values(&self.g, &v).unwrap()
    }

    fn deriv(&self, f: &SpectralField, axis: usize) -> SpectralField {
        f.grad().unwrap().component(axis)
    }

    fn poly(p: &Poly, x: f64) -> f64 {
        p.eval(x)
    }

    fn parts(&self, uf: &UnderlineFunctions, a: &SpectralField, u: &SpectralField, w: &SpectralField) -> Vec<SpectralField> {
        let d = self.g.dim();
        let n = self.g.len();
        let av = &self.vals(a)[0];
        let ga: Vec<Vec<f64>> = (0..d).map(|j| self.vals(&self.deriv(a, j)).remove(0)).collect();
        let lap = self.vals(&a.laplacian().unwrap()).remove(0);
        let uv = self.vals(u);
        let wv = self.vals(w);
        let gu: Vec<Vec<Vec<f64>>> =
            (0..d).map(|i| (0..d).map(|j| self.vals(&self.deriv(&u.component(i), j)).remove(0)).collect()).collect();
        let f1 = (0..d)
            .map(|i| (0..n).map(|x| -(1.0 + av[x]) * (0..d).map(|j| uv[j][x] * gu[i][j][x]).sum::<f64>()).collect())
            .collect();
        let nu_div = self.back(vec![(0..n)
            .map(|x| Self::poly(&uf.nu_u, av[x]) * (0..d).map(|i| gu[i][i][x]).sum::<f64>())
            .collect()]);
        let mut f2: Vec<Vec<f64>> = (0..d).map(|i| self.vals(&self.deriv(&nu_div, i)).remove(0)).collect();
        for i in 0..d {
            for j in 0..d {
                let m = self.back(vec![(0..n).map(|x| Self::poly(&uf.mu_u, av[x]) * (gu[i][j][x] + gu[j][i][x])).collect()]);
                let dm = self.vals(&self.deriv(&m, j)).remove(0);
                for x in 0..n {
                    f2[i][x] += dm[x];
                }
            }
        }
        let f3 = (0..d).map(|i| (0..n).map(|x| wv[i][x] * av[x]).collect()).collect();
        let f4 = (0..d).map(|i| (0..n).map(|x| Self::poly(&uf.pprime_u, av[x]) * ga[i][x]).collect()).collect();
        // κ̲(a)Δa + ∇κ̲(a)·∇a with ∇κ̲(a) differentiated spectrally
        let ka = self.back(vec![(0..n).map(|x| Self::poly(&uf.kappa_u, av[x])).collect()]);
        let gk: Vec<Vec<f64>> = (0..d).map(|j| self.vals(&self.deriv(&ka, j)).remove(0)).collect();
        let inner = self.back(vec![(0..n)
            .map(|x| Self::poly(&uf.kappa_u, av[x]) * lap[x] + (0..d).map(|j| gk[j][x] * ga[j][x]).sum::<f64>())
            .collect()]);
        let f5 = (0..d)
            .map(|i| {
                let gi = self.vals(&self.deriv(&inner, i)).remove(0);
                (0..n).map(|x| (1.0 + av[x]) * gi[x]).collect()
            })
            .collect();
        [f1, f2, f3, f4, f5].into_iter().map(|v| self.back(v)).collect()
    }
}

// Coefficients of `fine` on the modes of `coarse`.
fn restrict(fine: &SpectralField, coarse: &TorusGrid) -> Vec<Vec<nsk_core::C64>> {
    let fg = fine.grid();
    (0..fine.rank())
        .map(|c| {
            (0..coarse.len())
                .map(|idx| {
                    let m = coarse.modes(idx);
                    fine.comp(c)[fg.index_of(&m[..coarse.dim()])]
                })
                .collect()
        })
        .collect()
}

#[test]
fn momentum_terms_match_a_fine_grid_oracle() {
    let uf = UnderlineFunctions::new(&params());
    for d in [1usize, 2] {
        let n = if d == 1 { 64 } else { 32 };
        let coarse = TorusGrid::new(d, n, 2.0 * PI).unwrap();
        let fine = coarse.with_n(2 * n).unwrap();
        let fa = |x: &[f64; 3]| 0.1 * (x[0].cos() + 0.3 * (2.0 * x[0] - x[1]).sin());
        let fu0 = |x: &[f64; 3]| 0.05 * (x[0] + x[1]).sin() - 0.02 * x[0].cos();
        let fu1 = |x: &[f64; 3]| 0.04 * (2.0 * x[1]).cos() + 0.01 * x[0].sin();
        let fw0 = |x: &[f64; 3]| (x[0] - x[1]).cos();
        let fw1 = |x: &[f64; 3]| 0.5 * x[1].sin();
        let build = |g: &TorusGrid| {
            let a = SpectralField::from_fn(g, fa);
            let mut u = vec![SpectralField::from_fn(g, fu0)];
            let mut w = vec![SpectralField::from_fn(g, fw0)];
            if d == 2 {
                u.push(SpectralField::from_fn(g, fu1));
                w.push(SpectralField::from_fn(g, fw1));
            }
            let u = SpectralField::stack(&u.iter().collect::<Vec<_>>()).unwrap();
            let w = SpectralField::stack(&w.iter().collect::<Vec<_>>()).unwrap();
            (a, u, w)
        };
        let (a, u, w) = build(&coarse);
        let got = eval_nonlinear(&uf, &a, &u, &w).unwrap();
        let (af, uf_, wf) = build(&fine);
        let want = Oracle { g: fine.clone() }.parts(&uf, &af, &uf_, &wf);
        for (i, (g, o)) in got.f_u_parts.iter().zip(want.iter()).enumerate() {
            let o = SpectralField::from_coeffs(&coarse, restrict(o, &coarse), true).unwrap();
            let err = g.sub(&o).unwrap().l2_norm();
            assert!(err <= 1e-9 * o.l2_norm().max(1e-300), "d={d} part {}: {err} vs {}", i + 1, o.l2_norm());
        }
    }
}

fn sample_state(g: &TorusGrid, r: f64, phase: f64) -> ModeState {
    let a = SpectralField::from_fn(g, |x| r * ((x[0] + phase).cos() + 0.4 * (2.0 * x[0]).sin()));
    let u = SpectralField::from_fn(g, |x| r * (0.7 * (x[0] - phase).sin() + 0.2 * (3.0 * x[0]).cos()));
    ModeState::from_fields(&[&a, &u]).unwrap()
}

fn sample_dtu(g: &TorusGrid, r: f64) -> SpectralField {
    SpectralField::from_fn(g, |x| r * (x[0].cos() - 0.5 * (2.0 * x[0]).sin()))
}

fn sources_at(model: &NonlinearModel, r: f64, phase: f64) -> ModeState {
    let g = model.grid();
    model.source_with(&sample_state(g, r, phase), &sample_dtu(g, r)).unwrap()
}

// ‖f_a‖_{H¹} + ‖f_u‖_{L²}
fn h1l2(g: &TorusGrid, s: &ModeState) -> f64 {
    s.to_field(g, 0..1, true).sobolev_norm(1.0) + s.to_field(g, 1..2, true).l2_norm()
}

#[test]
fn sources_scale_quadratically_with_the_ball_radius() {
    let g = TorusGrid::new(1, 64, 2.0 * PI).unwrap();
    let model = NonlinearModel::new(&params(), &g).unwrap();
    let rs = [1e-1, 1e-2, 1e-3];
    let norms: Vec<f64> = rs.iter().map(|&r| h1l2(&g, &sources_at(&model, r, 0.3))).collect();
    let k = slope(&rs, &norms);
    assert!((k - 2.0).abs() <= 0.1, "slope {k}");
}

#[test]
fn source_differences_are_lipschitz_with_constant_of_order_radius() {
    let g = TorusGrid::new(1, 64, 2.0 * PI).unwrap();
    let model = NonlinearModel::new(&params(), &g).unwrap();
    let rs = [1e-1, 1e-2, 1e-3];
    let ratios: Vec<f64> = rs
        .iter()
        .map(|&r| {
            let mut df = sources_at(&model, r, 0.3);
            df.axpy(nsk_core::C64::new(-1.0, 0.0), &sources_at(&model, r, 0.9));
            let mut dx = sample_state(&g, r, 0.3);
            dx.axpy(nsk_core::C64::new(-1.0, 0.0), &sample_state(&g, r, 0.9));
            let dist = dx.to_field(&g, 0..1, true).sobolev_norm(3.0) + dx.to_field(&g, 1..2, true).sobolev_norm(2.0);
            h1l2(&g, &df) / dist
        })
        .collect();
    let k = slope(&rs, &ratios);
    assert!((k - 1.0).abs() <= 0.1, "slope {k}");
}

#[test]
fn polynomial_composition_is_bounded_in_h2_uniformly_in_resolution() {
    let p = Poly::new(vec![0.0, 1.0, 0.5, -0.3]);
    for r in [1e-1, 1e-2] {
        let c: Vec<f64> = [32usize, 64, 128]
            .iter()
            .map(|&n| {
                let g = TorusGrid::new(1, n, 2.0 * PI).unwrap();
                let u = SpectralField::from_fn(&g, |x| r * (x[0].sin() + 0.3 * (2.0 * x[0]).cos()));
                apply_poly(&p, &u).unwrap().sobolev_norm(2.0) / u.sobolev_norm(2.0)
            })
            .collect();
        assert!(c.iter().all(|&x| x < 2.0), "{c:?}");
        assert!((c[1] - c[0]).abs() <= 1e-10 * c[0] && (c[2] - c[1]).abs() <= 1e-10 * c[1], "{c:?}");
    }
}

#[test]
fn tiny_data_follow_the_linearized_flow() {
    let g = TorusGrid::new(1, 32, 2.0 * PI).unwrap();
    let model = NonlinearModel::new(&params(), &g).unwrap();
    let tg = TimeGrid::new(0.5, 64).unwrap();
    let stepper = Stepper::new(&model.sys, tg);
    let gaps: Vec<f64> = [1e-6, 1e-5]
        .iter()
        .map(|&size| {
            let mut x0 = sample_state(&g, 1.0, 0.2);
            let n = model.data_norm(&x0);
            x0.scale(size / n);
            let nl = simulate_nonlinear(&model, &x0, None, tg).unwrap();
            let lin = stepper.propagate(&x0, None, Direction::Forward).unwrap();
            nl.trajectory
                .states
                .iter()
                .zip(lin.states.iter())
                .map(|(a, b)| {
                    let mut d = a.clone();
                    d.axpy(nsk_core::C64::new(-1.0, 0.0), b);
                    d.max_abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(gaps[0] <= 1e-10, "{gaps:?}");
    let k = (gaps[1] / gaps[0]).log10();
    assert!((k - 2.0).abs() <= 0.1, "{gaps:?}");
}

#[test]
fn manufactured_solution_converges_at_second_order() {
    let g = TorusGrid::new(1, 32, 2.0 * PI).unwrap();
    let model = NonlinearModel::new(&params(), &g).unwrap();
    let horizon = 0.2;
    let exact = |t: f64| {
        let e = (-t).exp();
        let c = (2.0 * t).cos();
        let a = SpectralField::from_fn(&g, |x| 0.05 * e * x[0].cos() + 0.02 * c * (2.0 * x[0]).sin());
        let u = SpectralField::from_fn(&g, |x| 0.04 * c * x[0].sin() - 0.03 * e * (3.0 * x[0]).cos());
        ModeState::from_fields(&[&a, &u]).unwrap()
    };
    let rate = |t: f64| {
        let e = (-t).exp();
        let s = (2.0 * t).sin();
        let a = SpectralField::from_fn(&g, |x| -0.05 * e * x[0].cos() - 0.04 * s * (2.0 * x[0]).sin());
        let u = SpectralField::from_fn(&g, |x| -0.08 * s * x[0].sin() + 0.03 * e * (3.0 * x[0]).cos());
        ModeState::from_fields(&[&a, &u]).unwrap()
    };
    let errors: Vec<f64> = [16usize, 32, 64]
        .iter()
        .map(|&m| {
            let tg = TimeGrid::new(horizon, m).unwrap();
            let forcing: Vec<ModeState> = (0..=m)
                .map(|j| {
                    let t = tg.node(j);
                    let x = exact(t);
                    let dx = rate(t);
                    let mut s = dx.clone();
                    s.axpy(nsk_core::C64::new(-1.0, 0.0), &model.linear_rhs(&x));
                    let n = model.source_with(&x, &dx.to_field(&g, 1..2, true)).unwrap();
                    s.axpy(nsk_core::C64::new(-1.0, 0.0), &n);
                    s
                })
                .collect();
            let tr = simulate_nonlinear(&model, &exact(0.0), Some(&forcing), tg).unwrap();
            let mut e = tr.trajectory.terminal().clone();
            e.axpy(nsk_core::C64::new(-1.0, 0.0), &exact(horizon));
            e.norm(None)
        })
        .collect();
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order > 1.8, "{errors:?}");
    }
}

fn picard_setup(n: usize, steps: usize) -> (NonlinearModel, HumProblem, ModeState) {
    let g = TorusGrid::new(1, n, 2.0 * PI).unwrap();
    let p = ModelParams::new(
        1.0,
        CoefficientFunction::shifted(vec![1.0, 1.0, 0.5, 0.2], 3),
        CoefficientFunction::shifted(vec![45.0, 5.0, -3.0, 1.0], 3),
        CoefficientFunction::shifted(vec![6.0, 1.0, 0.5], 2),
        CoefficientFunction::shifted(vec![0.0, 0.3, 0.1], 2),
        0.5,
    )
    .unwrap();
    let model = NonlinearModel::new(&p, &g).unwrap();
    let w = PI / 4.0;
    let region = ControlRegion::concentric(1, 2.0 * PI, PI, w, 0.9 * w, 0.3 * w).unwrap();
    let cut = GalerkinCutoff::new(&region, Cutoff::Outer, &g).unwrap();
    let tg = TimeGrid::new(1.0, steps).unwrap();
    let hum = HumProblem::new(&model.sys, cut, tg, HumConfig { cg_max_iters: 20000, ..HumConfig::default() }).unwrap();
    let a = SpectralField::from_fn(&g, |x| x[0].sin() + 0.5 * (2.0 * x[0]).cos());
    let u = SpectralField::from_fn(&g, |x| 0.3 * x[0].cos() - 0.2 * (3.0 * x[0]).sin());
    let x0 = ModeState::from_fields(&[&a, &u]).unwrap();
    (model, hum, x0)
}

fn sized(model: &NonlinearModel, x0: &ModeState, size: f64) -> ModeState {
    let mut x = x0.clone();
    x.scale(size / model.data_norm(x0));
    x
}

#[test]
fn picard_loop_at_rest_stops_at_once() {
    let (model, hum, x0) = picard_setup(32, 64);
    let mut z = x0.clone();
    z.scale(0.0);
    let out = picard_control_loop(&model, &hum, &z, &PicardConfig::default()).unwrap();
    assert_eq!(out.state.distances.len(), 1);
    assert_eq!(out.control.control_norm, 0.0);
    assert_eq!(out.nonlinear_terminal_norm, 0.0);
}

#[test]
fn smaller_data_never_need_more_picard_iterations() {
    let (model, hum, x0) = picard_setup(32, 128);
    let mut last = usize::MAX;
    for size in [1e-2, 5e-3, 2.5e-3] {
        let cfg = PicardConfig { tol: 1e-6, ..PicardConfig::default() };
        let out = picard_control_loop(&model, &hum, &sized(&model, &x0, size), &cfg).unwrap();
        assert_eq!(out.shrinks, 0);
        assert!(out.state.contraction_factor() < 1.0);
        assert!(out.replay.inf_rho > 0.0);
        let it = out.state.distances.len();
        assert!(it <= last, "size {size}: {it} iterations after {last}");
        last = it;
    }
}

#[test]
fn open_loop_defect_shrinks_with_the_picard_tolerance() {
    let (model, hum, x0) = picard_setup(32, 128);
    let x = sized(&model, &x0, 1e-2);
    let run = |tol: f64| {
        let cfg = PicardConfig { tol, ..PicardConfig::default() };
        picard_control_loop(&model, &hum, &x, &cfg).unwrap().nonlinear_terminal_norm
    };
    let (loose, tight) = (run(1e-1), run(1e-2));
    assert!(loose >= 3.0 * tight, "{loose} vs {tight}");
}

#[test]
fn oversized_ball_request_shrinks_the_data() {
    let (model, hum, x0) = picard_setup(32, 64);
    let cfg = PicardConfig { radius: 5e-3, ..PicardConfig::default() };
    let out = picard_control_loop(&model, &hum, &sized(&model, &x0, 1e-2), &cfg).unwrap();
    assert!(out.shrinks > 0 && out.scale < 1.0);
    assert!(out.state.norms.iter().all(|&n| n <= 5e-3));
}
