//! Nonlinear terms of the perturbed system, a full nonlinear integrator and
//! the Picard loop that synthesizes nonlinear null controls from the linear
//! penalized HUM.
//!
//! States are [`ModeState`]s with components `(a, u_1, .., u_d)`, where
//! `ρ = ρ⋆(1 + a)`.

use crate::dynamics::{ModeBlockSystem, ModeState, Stepper, SystemKind, TimeGrid, Trajectory};
use crate::hum::{ControlledTrajectory, HumProblem, WeightMode};
use crate::params::{derive_constants, DerivedConstants, ModelParams, Poly};
use crate::torus::{SpectralField, TorusGrid};
use crate::weights::{Theta, ThetaParams};
use crate::{Error, Result, C64};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Shifted coefficient functions as polynomials in `a`. Each vanishes at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct UnderlineFunctions {
    pub rho_star: f64,
    /// Half-width of the admissible density neighborhood.
    pub eta: f64,
    pub kappa_u: Poly,
    pub mu_u: Poly,
    pub nu_u: Poly,
    pub pprime_u: Poly,
}

/// `pre · (p(scale·a) − p(0))` for `p` in `ρ − ρ⋆`.
fn compose(p: &Poly, scale: f64, pre: f64) -> Poly {
    let mut c: Vec<f64> = p.coeffs.iter().enumerate().map(|(j, &v)| pre * v * scale.powi(j as i32)).collect();
    c[0] = 0.0;
    Poly::new(c)
}

impl UnderlineFunctions {
    pub fn new(params: &ModelParams) -> Self {
        let r = params.rho_star;
        UnderlineFunctions {
            rho_star: r,
            eta: params.eta,
            kappa_u: compose(params.kappa.poly(), r, r),
            mu_u: compose(params.mu.poly(), r, 1.0 / r),
            nu_u: compose(params.nu.poly(), r, 1.0 / r),
            pprime_u: compose(&params.pressure.poly().derivative(), r, 1.0),
        }
    }

    /// Largest admissible `|a|`.
    pub fn a_bound(&self) -> f64 {
        self.eta / self.rho_star
    }
}

fn horner(p: &Poly, z: C64) -> C64 {
    p.coeffs.iter().rev().fold(ZERO, |acc, &c| acc * z + c)
}

/// The nonlinear terms with the five momentum parts kept apart.
#[derive(Debug, Clone)]
pub struct NonlinearTerms {
    pub f_a: SpectralField,
    pub f_u: SpectralField,
    pub f_u_parts: [SpectralField; 5],
}

struct Padded<'a> {
    grid: &'a TorusGrid,
}

impl Padded<'_> {
    fn up(&self, c: &[C64]) -> Vec<C64> {
        self.grid.to_padded(c)
    }

    fn down(&self, v: Vec<C64>) -> Vec<C64> {
        self.grid.from_padded(v)
    }

    fn deriv(&self, c: &[C64], axis: usize) -> Vec<C64> {
        let i = C64::new(0.0, 1.0);
        c.iter()
            .enumerate()
            .map(|(idx, &v)| if self.grid.is_nyquist(idx) { ZERO } else { i * self.grid.wavevector(idx)[axis] * v })
            .collect()
    }
}

fn field(grid: &TorusGrid, comps: Vec<Vec<C64>>, real: bool) -> Result<SpectralField> {
    let mut f = SpectralField::from_coeffs(grid, comps, real)?;
    if real {
        f.symmetrize();
    }
    Ok(f)
}

/// `p(a)` evaluated pointwise on the 3/2-padded grid.
pub fn apply_poly(p: &Poly, a: &SpectralField) -> Result<SpectralField> {
    if a.rank() != 1 {
        return Err(Error::RankMismatch("polynomial of a scalar field"));
    }
    let g = a.grid();
    let v: Vec<C64> = g.to_padded(a.comp(0)).into_iter().map(|z| horner(p, z)).collect();
    field(g, vec![g.from_padded(v)], a.is_real())
}

/// Largest `|ρ⋆ a|` over the grid.
pub fn max_rho_a(uf: &UnderlineFunctions, a: &SpectralField) -> f64 {
    uf.rho_star * a.sup_norm()
}

/// `f_a = −u·∇a` and `f_u = Σ f_uⁱ`, every product on the 3/2-padded grid.
pub fn eval_nonlinear(
    uf: &UnderlineFunctions,
    a: &SpectralField,
    u: &SpectralField,
    du_dt: &SpectralField,
) -> Result<NonlinearTerms> {
    let g = a.grid();
    let d = g.dim();
    if a.rank() != 1 || u.rank() != d || du_dt.rank() != d {
        return Err(Error::RankMismatch("nonlinear terms need a scalar a and d-vectors u, du/dt"));
    }
    if u.grid() != g || du_dt.grid() != g {
        return Err(Error::GridMismatch);
    }
    let m = max_rho_a(uf, a);
    if !(m < uf.eta) {
        return Err(Error::NeighborhoodExceeded { max_rho_a: m });
    }
    let real = a.is_real() && u.is_real() && du_dt.is_real();
    let p = Padded { grid: g };
    let av = p.up(a.comp(0));
    let ga: Vec<Vec<C64>> = (0..d).map(|j| p.up(&p.deriv(a.comp(0), j))).collect();
    let lap = p.up(a.laplacian()?.comp(0));
    let uv: Vec<Vec<C64>> = (0..d).map(|i| p.up(u.comp(i))).collect();
    // gu[i][j] = ∂_j u_i
    let gu: Vec<Vec<Vec<C64>>> = (0..d).map(|i| (0..d).map(|j| p.up(&p.deriv(u.comp(i), j))).collect()).collect();
    let divu: Vec<C64> = (0..av.len()).map(|x| (0..d).map(|i| gu[i][i][x]).sum()).collect();
    let n = av.len();
    let one = C64::new(1.0, 0.0);

    let f_a = p.down((0..n).map(|x| -(0..d).map(|i| uv[i][x] * ga[i][x]).sum::<C64>()).collect());

    let f1: Vec<Vec<C64>> = (0..d)
        .map(|i| p.down((0..n).map(|x| -(one + av[x]) * (0..d).map(|j| uv[j][x] * gu[i][j][x]).sum::<C64>()).collect()))
        .collect();

    let mu: Vec<C64> = av.iter().map(|&z| horner(&uf.mu_u, z)).collect();
    let nu_div = p.down((0..n).map(|x| horner(&uf.nu_u, av[x]) * divu[x]).collect());
    let f2: Vec<Vec<C64>> = (0..d)
        .map(|i| {
            let mut acc = p.deriv(&nu_div, i);
            for j in 0..d {
                let mij = p.down((0..n).map(|x| mu[x] * (gu[i][j][x] + gu[j][i][x])).collect());
                for (o, v) in acc.iter_mut().zip(p.deriv(&mij, j)) {
                    *o += v;
                }
            }
            acc
        })
        .collect();

    let f3: Vec<Vec<C64>> = (0..d)
        .map(|i| {
            let w = p.up(du_dt.comp(i));
            p.down((0..n).map(|x| w[x] * av[x]).collect())
        })
        .collect();

    let f4: Vec<Vec<C64>> =
        (0..d).map(|i| p.down((0..n).map(|x| horner(&uf.pprime_u, av[x]) * ga[i][x]).collect())).collect();

    let dk = uf.kappa_u.derivative();
    let inner = p.down(
        (0..n)
            .map(|x| {
                let g2: C64 = (0..d).map(|j| ga[j][x] * ga[j][x]).sum();
                horner(&uf.kappa_u, av[x]) * lap[x] + horner(&dk, av[x]) * g2
            })
            .collect(),
    );
    let f5: Vec<Vec<C64>> = (0..d)
        .map(|i| {
            let gi = p.up(&p.deriv(&inner, i));
            p.down((0..n).map(|x| (one + av[x]) * gi[x]).collect())
        })
        .collect();

    let total: Vec<Vec<C64>> =
        (0..d).map(|i| (0..g.len()).map(|k| f1[i][k] + f2[i][k] + f3[i][k] + f4[i][k] + f5[i][k]).collect()).collect();
    Ok(NonlinearTerms {
        f_a: field(g, vec![f_a], real)?,
        f_u: field(g, total, real)?,
        f_u_parts: [field(g, f1, real)?, field(g, f2, real)?, field(g, f3, real)?, field(g, f4, real)?, field(g, f5, real)?],
    })
}

/// Model data shared by the integrator and the Picard loop.
#[derive(Debug, Clone)]
pub struct NonlinearModel {
    pub params: ModelParams,
    pub dc: DerivedConstants,
    pub uf: UnderlineFunctions,
    pub sys: ModeBlockSystem,
}

impl NonlinearModel {
    pub fn new(params: &ModelParams, grid: &TorusGrid) -> Result<Self> {
        let dc = derive_constants(params)?;
        let sys = ModeBlockSystem::assemble(SystemKind::LinearizedNsk, &dc, None, grid)?;
        Ok(NonlinearModel { params: params.clone(), dc, uf: UnderlineFunctions::new(params), sys })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.sys.grid
    }

    fn split(&self, x: &ModeState) -> (SpectralField, SpectralField) {
        let d = self.grid().dim();
        (x.to_field(self.grid(), 0..1, true), x.to_field(self.grid(), 1..1 + d, true))
    }

    fn pack(&self, f_a: &SpectralField, f_u: &SpectralField) -> Result<ModeState> {
        let mut s = ModeState::from_fields(&[f_a, f_u])?;
        self.sys.project(&mut s);
        Ok(s)
    }

    /// `K x`, the linear right-hand side.
    pub fn linear_rhs(&self, x: &ModeState) -> ModeState {
        let mut out = ModeState::zeros(x.modes(), x.comps);
        for idx in 0..x.modes() {
            if self.sys.is_active(idx) {
                out.set(idx, &self.sys.block(idx).apply(&x.get(idx)));
            }
        }
        out
    }

    /// Nonlinear source at `x` with `∂_t u` given.
    pub fn source_with(&self, x: &ModeState, du_dt: &SpectralField) -> Result<ModeState> {
        let (a, u) = self.split(x);
        let t = eval_nonlinear(&self.uf, &a, &u, du_dt)?;
        self.pack(&t.f_a, &t.f_u)
    }

    /// Nonlinear source at `x` under external forcing `g`, with `∂_t u`
    /// reconstructed from the momentum equation by a fixed point on
    /// `w = (Kx)_u + f_u|_{f_u³=0} + g_u + a w`.
    pub fn source(&self, x: &ModeState, g: Option<&ModeState>) -> Result<(ModeState, SpectralField)> {
        let grid = self.grid();
        let d = grid.dim();
        let (a, u) = self.split(x);
        let zero = SpectralField::zeros(grid, d, true);
        let base = eval_nonlinear(&self.uf, &a, &u, &zero)?;
        let mut w0 = self.linear_rhs(x);
        if let Some(g) = g {
            w0.axpy(C64::new(1.0, 0.0), g);
        }
        let w0 = w0.to_field(grid, 1..1 + d, true).add(&base.f_u)?;
        let mut w = w0.clone();
        for _ in 0..60 {
            let next = w0.add(&a.dealiased_product(&w)?)?;
            let change = next.sub(&w)?.l2_norm();
            w = next;
            if change <= 1e-15 * w.l2_norm().max(f64::MIN_POSITIVE) {
                break;
            }
        }
        let f3 = a.dealiased_product(&w)?;
        let s = self.pack(&base.f_a, &base.f_u.add(&f3)?)?;
        Ok((s, w))
    }

    /// Largest `|ρ⋆ a|` of a state.
    pub fn max_rho_a(&self, x: &ModeState) -> f64 {
        max_rho_a(&self.uf, &x.to_field(self.grid(), 0..1, true))
    }

    /// `min ρ = ρ⋆(1 + min a)` over the grid.
    pub fn min_rho(&self, x: &ModeState) -> f64 {
        let a = x.to_field(self.grid(), 0..1, true).values().remove(0);
        self.uf.rho_star * (1.0 + a.iter().cloned().fold(f64::INFINITY, f64::min))
    }

    /// `(‖a‖²_{H²} + ‖u‖²_{H¹})^{1/2}`.
    pub fn data_norm(&self, x: &ModeState) -> f64 {
        let (a, u) = self.split(x);
        a.sobolev_norm(2.0).hypot(u.sobolev_norm(1.0))
    }
}

#[derive(Debug, Clone)]
pub struct NonlinearTrajectory {
    pub trajectory: Trajectory,
    pub inf_rho: f64,
    pub max_rho_a: f64,
}

impl NonlinearTrajectory {
    pub fn terminal_norm(&self) -> f64 {
        self.trajectory.terminal().norm(None)
    }
}

/// Exponential Heun scheme: the linear part is exact per mode and the
/// nonlinear source is predicted then corrected once.
pub fn simulate_nonlinear(
    model: &NonlinearModel,
    x0: &ModeState,
    forcing: Option<&[ModeState]>,
    tg: TimeGrid,
) -> Result<NonlinearTrajectory> {
    let sys = &model.sys;
    if x0.comps != sys.comps || x0.modes() != sys.grid.len() {
        return Err(Error::ShapeMismatch(format!("state needs {} components on {} modes", sys.comps, sys.grid.len())));
    }
    if let Some(f) = forcing {
        if f.len() != tg.steps + 1 || f.iter().any(|s| s.comps != sys.comps || s.modes() != sys.grid.len()) {
            return Err(Error::ShapeMismatch(format!("forcing needs {} node states", tg.steps + 1)));
        }
    }
    let stepper = Stepper::new(sys, tg);
    let mut x = x0.clone();
    sys.project(&mut x);
    let total = |x: &ModeState, j: usize| -> Result<ModeState> {
        let g = forcing.map(|f| &f[j]);
        let (mut s, _) = model.source(x, g)?;
        if let Some(g) = g {
            s.axpy(C64::new(1.0, 0.0), g);
        }
        Ok(s)
    };
    let mut inf_rho = model.min_rho(&x);
    let mut worst = model.max_rho_a(&x);
    let mut states = Vec::with_capacity(tg.steps + 1);
    states.push(x.clone());
    for j in 0..tg.steps {
        let fj = total(&x, j)?;
        let mut pred = x.clone();
        stepper.step(&mut pred, Some(&fj), Some(&fj));
        if !pred.is_finite() {
            return Err(Error::StepRejected { step: j });
        }
        let fp = total(&pred, j + 1)?;
        stepper.step(&mut x, Some(&fj), Some(&fp));
        if !x.is_finite() {
            return Err(Error::StepRejected { step: j });
        }
        let m = model.max_rho_a(&x);
        if !(m < model.uf.eta) {
            return Err(Error::NeighborhoodExceeded { max_rho_a: m });
        }
        worst = worst.max(m);
        inf_rho = inf_rho.min(model.min_rho(&x));
        states.push(x.clone());
    }
    Ok(NonlinearTrajectory { trajectory: Trajectory { tg, states }, inf_rho, max_rho_a: worst })
}

/// Configuration of the Picard loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardConfig {
    /// Ball radius in the trajectory metric.
    pub radius: f64,
    /// Bound on `‖(a₀, u₀)‖_{H²×H¹}`; larger data are scaled down to it.
    pub delta: f64,
    pub max_iters: usize,
    /// Stop when `d_k ≤ tol · ‖X_k‖`.
    pub tol: f64,
    /// Halvings of `delta` after a ball exit or divergence.
    pub max_shrinks: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig { radius: 1.0, delta: 1e-2, max_iters: 30, tol: 1e-6, max_shrinks: 6 }
    }
}

/// One row of the per-iteration log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardRow {
    pub k: usize,
    pub distance: f64,
    pub source_norm: f64,
    pub control_norm: f64,
    pub terminal_norm: f64,
    pub inf_rho: f64,
}

#[derive(Debug, Clone)]
pub struct PicardState {
    pub iterate: Trajectory,
    pub previous: Trajectory,
    /// Control potentials of the last linear solve.
    pub potentials: Vec<ModeState>,
    /// Node forcing (controls plus sources) of the last linear solve.
    pub forcing: Vec<ModeState>,
    pub distances: Vec<f64>,
    pub factors: Vec<f64>,
    /// Iterate norms in the trajectory metric.
    pub norms: Vec<f64>,
    pub rows: Vec<PicardRow>,
    pub radius: f64,
    pub delta: f64,
    /// `log` of the per-node metric multipliers (zero in plain mode).
    pub log_weights: Vec<f64>,
}

impl PicardState {
    pub fn contraction_factor(&self) -> f64 {
        self.factors.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub state: PicardState,
    pub control: ControlledTrajectory,
    pub replay: NonlinearTrajectory,
    /// Initial data actually controlled (after any scaling).
    pub initial: ModeState,
    /// Factor applied to the requested initial data.
    pub scale: f64,
    pub shrinks: usize,
    pub initial_norm: f64,
    pub nonlinear_terminal_norm: f64,
}

/// `log e^{2sΦ/3}` shifted by `s λe^{12λ}·2/3`, node by node; node `M` is
/// excluded in Carleman mode.
fn metric_log_weights(mode: &WeightMode, tg: &TimeGrid) -> Result<Vec<f64>> {
    match *mode {
        WeightMode::Plain => Ok(vec![0.0; tg.steps + 1]),
        WeightMode::Carleman { s, lambda, t0, t1 } => {
            let m = s * lambda * lambda * (2.0 * lambda).exp();
            let theta = Theta::new(ThetaParams { horizon: tg.horizon, t0, t1, m })?;
            let scale = lambda * (12.0 * lambda).exp();
            let mut w = Vec::with_capacity(tg.steps + 1);
            for j in 0..tg.steps {
                w.push(2.0 / 3.0 * s * (theta.eval(tg.node(j))? - 1.0) * scale);
            }
            w.push(f64::NEG_INFINITY);
            Ok(w)
        }
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Component norms of the trajectory metric, in log form:
/// `L²H³ ∩ L∞H² ∩ H¹H¹` for `a`, `L²H² ∩ L∞H¹ ∩ H¹L²` for `u`, and the
/// time derivatives in `L²H¹ × L²L²`. Returns the largest one.
fn log_metric(grid: &TorusGrid, tg: &TimeGrid, lw: &[f64], x: &[ModeState], dx: &[ModeState]) -> f64 {
    let comps = x[0].comps;
    let sob = |s: &ModeState, c0: usize, c1: usize, sigma: f64| -> f64 {
        let mut acc = 0.0;
        for idx in 0..grid.len() {
            let w = (1.0 + grid.k2(idx)).powf(sigma);
            for c in c0..c1 {
                acc += w * s.data[idx * comps + c].norm_sqr();
            }
        }
        acc
    };
    let l2 = |f: &dyn Fn(usize) -> f64| -> f64 {
        let terms: Vec<f64> = (0..=tg.steps)
            .filter(|&j| lw[j] > f64::NEG_INFINITY)
            .map(|j| {
                let v = f(j);
                if v > 0.0 {
                    2.0 * lw[j] + tg.quadrature_weight(j).ln() + v.ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        0.5 * log_sum_exp(&terms)
    };
    let linf = |f: &dyn Fn(usize) -> f64| -> f64 {
        (0..=tg.steps)
            .filter(|&j| lw[j] > f64::NEG_INFINITY)
            .map(|j| {
                let v = f(j);
                if v > 0.0 {
                    lw[j] + 0.5 * v.ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let lsum = |a: f64, b: f64| log_sum_exp(&[2.0 * a, 2.0 * b]) * 0.5;
    let a_h1h1 = lsum(l2(&|j| sob(&x[j], 0, 1, 1.0)), l2(&|j| sob(&dx[j], 0, 1, 1.0)));
    let u_h1l2 = lsum(l2(&|j| sob(&x[j], 1, comps, 0.0)), l2(&|j| sob(&dx[j], 1, comps, 0.0)));
    [
        l2(&|j| sob(&x[j], 0, 1, 3.0)),
        linf(&|j| sob(&x[j], 0, 1, 2.0)),
        a_h1h1,
        l2(&|j| sob(&x[j], 1, comps, 2.0)),
        linf(&|j| sob(&x[j], 1, comps, 1.0)),
        u_h1l2,
        l2(&|j| sob(&dx[j], 0, 1, 1.0)),
        l2(&|j| sob(&dx[j], 1, comps, 0.0)),
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max)
}

fn diff(a: &[ModeState], b: &[ModeState]) -> Vec<ModeState> {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let mut z = x.clone();
            z.axpy(C64::new(-1.0, 0.0), y);
            z
        })
        .collect()
}

fn run_picard(
    model: &NonlinearModel,
    hum: &HumProblem,
    x0: &ModeState,
    cfg: &PicardConfig,
    delta: f64,
    lw: &[f64],
) -> Result<(PicardState, ControlledTrajectory)> {
    let tg = hum.tg;
    let grid = model.grid();
    let d = grid.dim();
    let zero = model.sys.zero_state();
    let mut prev = vec![zero.clone(); tg.steps + 1];
    let mut prev_dot = vec![zero.clone(); tg.steps + 1];
    // ∂_t u of the previous iterate, from its own equation
    let mut prev_dtu: Vec<SpectralField> = vec![SpectralField::zeros(grid, d, true); tg.steps + 1];
    let mut dual: Option<ModeState> = None;
    let mut distances = Vec::new();
    let mut factors = Vec::new();
    let mut norms = Vec::new();
    let mut rows = Vec::new();
    let mut growth = 0;
    let log_r = cfg.radius.ln();
    for k in 1..=cfg.max_iters {
        let sources: Vec<ModeState> = if k == 1 {
            vec![zero.clone(); tg.steps + 1]
        } else {
            prev.iter().zip(prev_dtu.iter()).map(|(x, w)| model.source_with(x, w)).collect::<Result<_>>()?
        };
        let source_norm = (0..=tg.steps)
            .map(|j| tg.quadrature_weight(j) * sources[j].norm(None).powi(2))
            .sum::<f64>()
            .sqrt();
        let ct = hum.solve_null_control_from(x0, Some(&sources), dual.as_ref())?;
        dual = Some(ct.dual.clone());
        let forcing = hum.forcing_from(&ct.potentials, Some(&sources));
        let states = ct.trajectory.states.clone();
        let dot: Vec<ModeState> = states
            .iter()
            .zip(forcing.iter())
            .map(|(x, f)| {
                let mut r = model.linear_rhs(x);
                r.axpy(C64::new(1.0, 0.0), f);
                r
            })
            .collect();
        let log_norm = log_metric(grid, &tg, lw, &states, &dot);
        norms.push(log_norm.exp());
        if log_norm > log_r {
            return Err(Error::BallExit { radius: cfg.radius, norm: log_norm.exp() });
        }
        for x in states.iter() {
            let m = model.max_rho_a(x);
            if !(m < model.uf.eta) {
                return Err(Error::NeighborhoodExceeded { max_rho_a: m });
            }
        }
        let log_d = log_metric(grid, &tg, lw, &diff(&states, &prev), &diff(&dot, &prev_dot));
        let dist = log_d.exp();
        if let Some(&p) = distances.last() {
            let f = if p > 0.0 { dist / p } else { 0.0 };
            factors.push(f);
            growth = if f >= 1.0 { growth + 1 } else { 0 };
        }
        distances.push(dist);
        rows.push(PicardRow {
            k,
            distance: dist,
            source_norm,
            control_norm: ct.control_norm,
            terminal_norm: ct.terminal_norm,
            inf_rho: states.iter().map(|x| model.min_rho(x)).fold(f64::INFINITY, f64::min),
        });
        prev_dtu = dot.iter().map(|s| s.to_field(grid, 1..1 + d, true)).collect();
        let converged = log_d == f64::NEG_INFINITY || log_d <= cfg.tol.ln() + log_norm;
        let previous = core::mem::replace(&mut prev, states);
        prev_dot = dot;
        if converged {
            let state = PicardState {
                iterate: Trajectory { tg, states: prev },
                previous: Trajectory { tg, states: previous },
                potentials: ct.potentials.clone(),
                forcing,
                distances,
                factors,
                norms,
                rows,
                radius: cfg.radius,
                delta,
                log_weights: lw.to_vec(),
            };
            return Ok((state, ct));
        }
        if growth >= 3 {
            return Err(Error::PicardDivergence { factors });
        }
    }
    Err(Error::PicardDivergence { factors })
}

/// Picard loop `X ↦ 𝒢(x₀, f(X))` over the linear penalized HUM, followed
/// by an open-loop replay of the synthesized controls on the nonlinear
/// system. On a ball exit or divergence `delta` is halved and the initial
/// data are scaled down to it, at most `max_shrinks` times.
pub fn picard_control_loop(
    model: &NonlinearModel,
    hum: &HumProblem,
    x0: &ModeState,
    cfg: &PicardConfig,
) -> Result<PicardOutcome> {
    if hum.sys.kind != SystemKind::LinearizedNsk || hum.sys.grid != *model.grid() {
        return Err(Error::Invalid("the HUM problem must be the linearized system of the model".into()));
    }
    if !(cfg.radius > 0.0 && cfg.delta > 0.0 && cfg.tol > 0.0) {
        return Err(Error::Invalid(format!(
            "radius {}, delta {} and tol {} must be positive",
            cfg.radius, cfg.delta, cfg.tol
        )));
    }
    let mut x = x0.clone();
    model.sys.project(&mut x);
    let lw = metric_log_weights(&hum.config.weight_mode, &hum.tg)?;
    let n0 = model.data_norm(&x);
    let mut delta = if n0 > 0.0 { cfg.delta.min(n0) } else { cfg.delta };
    let mut shrinks = 0;
    loop {
        let scale = if n0 > delta { delta / n0 } else { 1.0 };
        let mut xs = x.clone();
        xs.scale(scale);
        match run_picard(model, hum, &xs, cfg, delta, &lw) {
            Ok((state, control)) => {
                let replay = simulate_nonlinear(model, &xs, Some(&state.forcing_controls(hum)), hum.tg)?;
                let nonlinear_terminal_norm = replay.terminal_norm();
                return Ok(PicardOutcome {
                    initial_norm: xs.norm(None),
                    initial: xs,
                    scale,
                    shrinks,
                    nonlinear_terminal_norm,
                    state,
                    control,
                    replay,
                });
            }
            Err(e @ (Error::BallExit { .. } | Error::PicardDivergence { .. })) => {
                if shrinks >= cfg.max_shrinks {
                    return Err(e);
                }
                shrinks += 1;
                delta *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
}

impl PicardState {
    /// Controls alone, as node forcing.
    pub fn forcing_controls(&self, hum: &HumProblem) -> Vec<ModeState> {
        hum.forcing_from(&self.potentials, None)
    }
}
