//! Numerical certificates: the weighted Carleman inequality for
//! `−∂_t − ζΔ` on manufactured functions, and extreme eigenvalues of the
//! HUM Gramian on band-limited probes.

use crate::dynamics::{ModeState, SystemKind, TimeGrid};
use crate::hum::HumProblem;
use crate::nonlinear::log_sum_exp;
use crate::torus::TorusGrid;
use crate::weights::{ControlRegion, Cutoff, WeightSet};
use crate::{Error, Result, C64};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Printed with every Carleman report.
pub const LAMBDA_CAP_NOTE: &str = "lambda is capped at 2 in the default suite: e^{12 lambda} only enters through \
     log-domain ratios, and C_est becomes ill-conditioned in floating point beyond that";

/// Printed with every Carleman report.
pub const TAIL_NOTE: &str = "time integrals stop at T - h/2; on [T - h/2, T) theta >= 2/h and every integrand is \
     bounded by theta^3 e^{3 lambda psi_max} sup|w|^2 e^{-2s(theta (lambda e^{12 lambda} - e^{lambda psi_max}) - \
     lambda e^{12 lambda})}, decreasing in theta, so the tail is at most h/2 L times its value at theta = 2/h";

/// Manufactured test functions on `[0, T] × 𝕋_L` (one space dimension).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Manufactured {
    Zero,
    /// Smooth bump supported away from `ω₁ ⊇ supp χ₀`.
    OffControl,
    /// Smooth bump supported inside `ω₀`, where `χ₀ = 1`.
    InObservation,
    /// Trigonometric polynomial with modes 1, 3 and 7.
    Oscillatory,
    /// Exact solution of `−∂_t w − ζΔw = 0`.
    HeatSolution,
}

impl Manufactured {
    pub const SUITE: [Manufactured; 4] =
        [Manufactured::OffControl, Manufactured::InObservation, Manufactured::Oscillatory, Manufactured::HeatSolution];

    pub fn name(&self) -> &'static str {
        match self {
            Manufactured::Zero => "zero",
            Manufactured::OffControl => "off_control",
            Manufactured::InObservation => "in_observation",
            Manufactured::Oscillatory => "oscillatory",
            Manufactured::HeatSolution => "heat_solution",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        [Manufactured::Zero]
            .into_iter()
            .chain(Self::SUITE)
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::Invalid(format!("unknown manufactured case `{name}`")))
    }
}

/// `w, ∂_x w, ∂_x² w, ∂_t w`, all scaled by `e^{−log_scale}`.
#[derive(Debug, Clone, Copy)]
struct Jet {
    log_scale: f64,
    w: C64,
    wx: C64,
    wxx: C64,
    wt: C64,
    /// Solves `−∂_t w − ζΔw = 0` exactly.
    solves: bool,
}

impl Jet {
    const NONE: Jet = Jet {
        log_scale: f64::NEG_INFINITY,
        w: C64::new(0.0, 0.0),
        wx: C64::new(0.0, 0.0),
        wxx: C64::new(0.0, 0.0),
        wt: C64::new(0.0, 0.0),
        solves: false,
    };

    fn log_abs(&self, z: C64) -> f64 {
        let a = z.norm();
        if a == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.log_scale + a.ln()
        }
    }
}

/// `exp(1 − 1/q)` on `(a, b)`, `q = (y − a)(b − y)/r²`, as `(log h, h'/h, h''/h)`.
fn bump(y: f64, a: f64, b: f64) -> Option<(f64, f64, f64)> {
    if y <= a || y >= b {
        return None;
    }
    let r2 = 0.25 * (b - a) * (b - a);
    let q = (y - a) * (b - y) / r2;
    let dq = (a + b - 2.0 * y) / r2;
    let ddq = -2.0 / r2;
    let d1 = dq / (q * q);
    Some((1.0 - 1.0 / q, d1, d1 * d1 + ddq / (q * q) - 2.0 * dq * dq / (q * q * q)))
}

/// `−∂_t w − ζ'∂_x² w`; exact for solutions, where `∂_t w = −ζ∂_x² w`.
fn residual(jet: &Jet, zeta: C64, zeta_op: C64) -> C64 {
    if jet.solves {
        (zeta - zeta_op) * jet.wxx
    } else {
        -jet.wt - zeta_op * jet.wxx
    }
}

fn wrap(y: f64, l: f64) -> f64 {
    y - l * (y / l).floor()
}

struct CaseGeometry {
    period: f64,
    center: f64,
    w1: f64,
    w0: f64,
    zeta: C64,
}

impl CaseGeometry {
    fn jet(&self, case: Manufactured, t: f64, x: f64) -> Jet {
        let one = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        match case {
            Manufactured::Zero => Jet::NONE,
            Manufactured::OffControl => {
                let y = wrap(x - self.center, self.period);
                let m = 0.1 * (0.5 * self.period - self.w1);
                match bump(y, self.w1 + m, self.period - self.w1 - m) {
                    None => Jet::NONE,
                    Some((lh, d1, d2)) => {
                        let g = 1.0 + t;
                        Jet { log_scale: lh, w: one * g, wx: one * (g * d1), wxx: one * (g * d2), wt: one, solves: false }
                    }
                }
            }
            Manufactured::InObservation => {
                let y = wrap(x - self.center + 0.5 * self.period, self.period) - 0.5 * self.period;
                match bump(y, -0.8 * self.w0, 0.8 * self.w0) {
                    None => Jet::NONE,
                    Some((lh, d1, d2)) => {
                        let g = 2.0 - t;
                        Jet { log_scale: lh, w: one * g, wx: one * (g * d1), wxx: one * (g * d2), wt: -one, solves: false }
                    }
                }
            }
            Manufactured::Oscillatory => {
                let e = (-t).exp();
                let (a1, a3, a7) = (x, 3.0 * x + 0.3, 7.0 * x + 1.1);
                let h = a1.cos() + 0.5 * a3.sin() + 0.25 * a7.cos();
                let hx = -a1.sin() + 1.5 * a3.cos() - 1.75 * a7.sin();
                let hxx = -a1.cos() - 4.5 * a3.sin() - 12.25 * a7.cos();
                Jet { log_scale: 0.0, w: one * (e * h), wx: one * (e * hx), wxx: one * (e * hxx), wt: one * (-e * h), solves: false }
            }
            Manufactured::HeatSolution => {
                let z = self.zeta;
                let p = (z * t + i * x).exp();
                let q = (z * (4.0 * t) + i * (2.0 * x)).exp() * 0.5;
                Jet {
                    log_scale: 0.0,
                    w: p + q,
                    wx: i * p + i * q * 2.0,
                    wxx: -p - q * 4.0,
                    wt: z * p + z * q * 4.0,
                    solves: true,
                }
            }
        }
    }
}

/// Log-domain terms of one side-by-side evaluation of the inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanTerms {
    /// Logs of the interior, gradient and initial-trace terms.
    pub log_lhs: [f64; 3],
    /// Logs of the source and observation terms.
    pub log_rhs: [f64; 2],
}

impl CarlemanTerms {
    /// `LHS / RHS`, undefined when both sides vanish.
    pub fn c_est(&self) -> Option<f64> {
        let l = log_sum_exp(&self.log_lhs);
        let r = log_sum_exp(&self.log_rhs);
        if r == f64::NEG_INFINITY {
            if l == f64::NEG_INFINITY {
                None
            } else {
                Some(f64::INFINITY)
            }
        } else {
            Some((l - r).exp())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanRow {
    pub case: Manufactured,
    pub s: f64,
    pub lambda: f64,
    /// With `ξ = θe^{λψ}` and explicit powers of `λ`.
    pub appendix: CarlemanTerms,
    /// With `θ` in place of `ξ`, no `λ` factors and `ζ̄` in the operator.
    pub reduced: CarlemanTerms,
    /// Log of the bound on the omitted `[T − h/2, T)` contribution.
    pub log_tail_bound: f64,
    /// Smallest computed nonzero log integral, for comparison with the tail.
    pub log_smallest_integral: f64,
    pub mesh_points: usize,
}

impl CarlemanRow {
    pub fn c_est(&self) -> Option<f64> {
        self.appendix.c_est()
    }
}

/// A case whose constant grew by more than 5% between consecutive `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanFlag {
    pub case: Manufactured,
    pub lambda: f64,
    pub s_from: f64,
    pub s_to: f64,
    pub ratio: f64,
    pub first_doubling: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanReport {
    pub zeta: C64,
    pub s_values: Vec<f64>,
    pub lambda_values: Vec<f64>,
    pub rows: Vec<CarlemanRow>,
    pub flags: Vec<CarlemanFlag>,
    pub lambda_note: &'static str,
    pub tail_note: &'static str,
}

impl CarlemanReport {
    /// Report over rows computed elsewhere, in any order. Flags compare
    /// consecutive `s` values per case and `λ`.
    pub fn assemble(zeta: C64, cfg: &CarlemanConfig, rows: Vec<CarlemanRow>) -> Self {
        let mut flags = Vec::new();
        for &lam in &cfg.lambda_values {
            for &case in &cfg.suite {
                let series: Vec<(f64, Option<f64>)> = cfg
                    .s_values
                    .iter()
                    .map(|&s| (s, rows.iter().find(|r| r.case == case && r.s == s && r.lambda == lam).and_then(|r| r.c_est())))
                    .collect();
                for (i, w) in series.windows(2).enumerate() {
                    if let ((s0, Some(a)), (s1, Some(b))) = (w[0], w[1]) {
                        let ratio = b / a;
                        if ratio > 1.05 {
                            flags.push(CarlemanFlag { case, lambda: lam, s_from: s0, s_to: s1, ratio, first_doubling: i == 0 });
                        }
                    }
                }
            }
        }
        CarlemanReport {
            zeta,
            s_values: cfg.s_values.clone(),
            lambda_values: cfg.lambda_values.clone(),
            rows,
            flags,
            lambda_note: LAMBDA_CAP_NOTE,
            tail_note: TAIL_NOTE,
        }
    }

    pub fn row(&self, case: Manufactured, s: f64, lambda: f64) -> Option<&CarlemanRow> {
        self.rows.iter().find(|r| r.case == case && r.s == s && r.lambda == lambda)
    }

    /// Largest defined `C_est` over cases at `(s, λ)`.
    pub fn max_c_est(&self, s: f64, lambda: f64) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.s == s && r.lambda == lambda)
            .filter_map(|r| r.c_est())
            .fold(None, |m, c| Some(m.map_or(c, |m: f64| m.max(c))))
    }

    /// No growth beyond `1 + tol` between consecutive `s` after the first
    /// doubling, per case and for the maximum over cases.
    pub fn is_bounded(&self, tol: f64) -> bool {
        let per_case = self.flags.iter().all(|f| f.first_doubling || f.ratio <= 1.0 + tol);
        let max = self.lambda_values.iter().all(|&lam| {
            let c: Vec<Option<f64>> = self.s_values.iter().map(|&s| self.max_c_est(s, lam)).collect();
            c.windows(2).skip(1).all(|w| match (w[0], w[1]) {
                (Some(a), Some(b)) => b <= (1.0 + tol) * a,
                _ => true,
            })
        });
        per_case && max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanConfig {
    pub s_values: Vec<f64>,
    pub lambda_values: Vec<f64>,
    pub t0: f64,
    pub t1: f64,
    pub suite: Vec<Manufactured>,
}

impl Default for CarlemanConfig {
    fn default() -> Self {
        CarlemanConfig {
            s_values: vec![4.0, 8.0, 16.0, 32.0, 64.0],
            lambda_values: vec![1.0, 1.5, 2.0],
            t0: 0.3,
            t1: 0.1,
            suite: Manufactured::SUITE.to_vec(),
        }
    }
}

/// Streaming `log Σ e^{v}`.
#[derive(Debug, Clone, Copy)]
struct LogAcc {
    max: f64,
    sum: f64,
}

impl LogAcc {
    const EMPTY: LogAcc = LogAcc { max: f64::NEG_INFINITY, sum: 0.0 };

    fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.sum += (v - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

const N_INTEGRALS: usize = 8;
const BASE_MESH: usize = 1024;
const REFINE_STEP: f64 = 0.05;
const REFINE_WINDOW: f64 = 45.0;
const PRUNE_WINDOW: f64 = 60.0;
const NODE_CUTOFF: f64 = -1000.0;
const MAX_PASSES: usize = 60;
const MAX_MESH: usize = 200_000;

/// Per-point data that does not depend on time.
struct MeshPoint {
    x: f64,
    psi: f64,
    log_chi0: f64,
    log_quad: f64,
}

struct Evaluator<'a> {
    ws: &'a WeightSet,
    geo: CaseGeometry,
    case: Manufactured,
}

impl Evaluator<'_> {
    fn log_weight(&self, theta: f64, psi: f64) -> f64 {
        let lam = self.ws.lambda;
        -self.ws.s * ((theta - 1.0) * self.ws.phi_scale() - theta * (lam * psi).exp())
    }

    /// Logs of the eight integrands: appendix `ξ³|w|², ξ|∇w|², |Pw|², ξ³χ₀²|w|²`
    /// then reduced `θ³|w|², θ|∇w|², |P̄w|², θ³χ₀²|w|²`, all times `e^{−2sφ}`.
    fn integrands(&self, t: f64, theta: f64, x: f64, psi: f64, log_chi0: f64) -> [f64; N_INTEGRALS] {
        let jet = self.geo.jet(self.case, t, x);
        let lw = 2.0 * self.log_weight(theta, psi);
        let ln_theta = theta.ln();
        let ln_xi = ln_theta + self.ws.lambda * psi;
        let a = 2.0 * jet.log_abs(jet.w);
        let g = 2.0 * jet.log_abs(jet.wx);
        let p = 2.0 * jet.log_abs(residual(&jet, self.geo.zeta, self.geo.zeta));
        let pb = 2.0 * jet.log_abs(residual(&jet, self.geo.zeta, self.geo.zeta.conj()));
        [
            3.0 * ln_xi + a + lw,
            ln_xi + g + lw,
            p + lw,
            3.0 * ln_xi + 2.0 * log_chi0 + a + lw,
            3.0 * ln_theta + a + lw,
            ln_theta + g + lw,
            pb + lw,
            3.0 * ln_theta + 2.0 * log_chi0 + a + lw,
        ]
    }

    fn initial_integrand(&self, theta0: f64, x: f64, psi: f64) -> f64 {
        let jet = self.geo.jet(self.case, 0.0, x);
        2.0 * jet.log_abs(jet.w) + 2.0 * self.log_weight(theta0, psi)
    }

    fn probes(&self, t_ref: f64, theta0: f64, x: f64, psi: f64, log_chi0: f64) -> [f64; 6] {
        let v = self.integrands(t_ref, 1.0, x, psi, log_chi0);
        [v[0], v[1], v[2], v[3], v[6], self.initial_integrand(theta0, x, psi)]
    }

    fn point(&self, x: f64) -> (f64, f64) {
        let psi = self.ws.psi.eval(&[x]);
        let chi0 = self.ws.region.cutoff(Cutoff::Inner, &[x]);
        (psi, if chi0 > 0.0 { chi0.ln() } else { f64::NEG_INFINITY })
    }

    /// Periodic mesh refined until every probe changes by at most
    /// `REFINE_STEP` between neighbours within `REFINE_WINDOW` of its peak.
    /// Points more than `PRUNE_WINDOW` below every peak are dropped after
    /// their quadrature weights are fixed.
    fn mesh(&self, t_ref: f64, theta0: f64) -> Vec<MeshPoint> {
        let l = self.geo.period;
        let mut pts: Vec<(f64, f64, f64, [f64; 6])> = (0..BASE_MESH)
            .map(|i| {
                let x = l * i as f64 / BASE_MESH as f64;
                let (psi, lc) = self.point(x);
                (x, psi, lc, self.probes(t_ref, theta0, x, psi, lc))
            })
            .collect();
        let min_width = 1e-13 * l;
        for _ in 0..MAX_PASSES {
            let mut peak = [f64::NEG_INFINITY; 6];
            for p in &pts {
                for (m, v) in peak.iter_mut().zip(p.3.iter()) {
                    *m = m.max(*v);
                }
            }
            let n = pts.len();
            let mut out = Vec::with_capacity(2 * n);
            let mut split = false;
            for i in 0..n {
                let a = &pts[i];
                let (bx, bv) = if i + 1 < n { (pts[i + 1].0, pts[i + 1].3) } else { (pts[0].0 + l, pts[0].3) };
                out.push((a.0, a.1, a.2, a.3));
                let needs = (0..6).any(|c| {
                    let hi = a.3[c].max(bv[c]);
                    hi > peak[c] - REFINE_WINDOW && !((a.3[c] - bv[c]).abs() <= REFINE_STEP)
                });
                if needs && bx - a.0 > min_width && n + out.len() < MAX_MESH {
                    let x = 0.5 * (a.0 + bx);
                    let x = if x >= l { x - l } else { x };
                    let (psi, lc) = self.point(x);
                    out.push((x, psi, lc, self.probes(t_ref, theta0, x, psi, lc)));
                    split = true;
                }
            }
            out.sort_by(|p, q| p.0.total_cmp(&q.0));
            pts = out;
            if !split {
                break;
            }
        }
        let mut peak = [f64::NEG_INFINITY; 6];
        for p in &pts {
            for (m, v) in peak.iter_mut().zip(p.3.iter()) {
                *m = m.max(*v);
            }
        }
        let n = pts.len();
        (0..n)
            .filter(|&i| pts[i].3.iter().zip(peak.iter()).any(|(v, m)| *v > m - PRUNE_WINDOW))
            .map(|i| {
                let prev = if i == 0 { pts[n - 1].0 - l } else { pts[i - 1].0 };
                let next = if i + 1 == n { pts[0].0 + l } else { pts[i + 1].0 };
                MeshPoint { x: pts[i].0, psi: pts[i].1, log_chi0: pts[i].2, log_quad: (0.5 * (next - prev)).ln() }
            })
            .collect()
    }
}

fn region_geometry(region: &ControlRegion, zeta: C64) -> CaseGeometry {
    CaseGeometry {
        period: region.period,
        center: region.omega0.axes[0].center,
        w1: region.omega1.axes[0].half_width,
        w0: region.omega0.axes[0].half_width,
        zeta,
    }
}

fn check_zeta(zeta: C64) -> Result<()> {
    if !(zeta.re > 0.0) || !zeta.im.is_finite() {
        return Err(Error::InvalidZeta(zeta.re));
    }
    Ok(())
}

/// Both sides of the inequality for one manufactured function at the
/// `(s, λ)` of `ws`.
pub fn carleman_row(zeta: C64, ws: &WeightSet, tg: &TimeGrid, case: Manufactured) -> Result<CarlemanRow> {
    check_zeta(zeta)?;
    if ws.grid().dim() != 1 {
        return Err(Error::Invalid(format!("the Carleman check runs in one space dimension (got {})", ws.grid().dim())));
    }
    let horizon = ws.theta.params.horizon;
    if (tg.horizon - horizon).abs() > 1e-12 * horizon {
        return Err(Error::Invalid(format!("time grid horizon {} differs from the weight horizon {horizon}", tg.horizon)));
    }
    let h = tg.step();
    if 0.5 * h >= ws.theta.params.t1 {
        return Err(Error::Invalid(format!("half step {} must be below T1 = {}", 0.5 * h, ws.theta.params.t1)));
    }
    let ev = Evaluator { ws, geo: region_geometry(&ws.region, zeta), case };
    let t0 = ws.theta.params.t0;
    let t_ref = 0.5 * (t0 + ws.theta.bridge_knots().0);
    let theta0 = ws.theta.eval(0.0)?;
    let mesh = ev.mesh(t_ref, theta0);

    // Nodes whose weight sits e^{1000} below the plateau value are skipped.
    let gap = ws.phi_scale() - (ws.lambda * ws.psi.max).exp();
    let mut total = [LogAcc::EMPTY; N_INTEGRALS];
    for j in 0..tg.steps {
        let t = tg.node(j);
        let theta = ws.theta.eval(t)?;
        if -2.0 * ws.s * (theta - 1.0) * gap < NODE_CUTOFF {
            continue;
        }
        let tau = if j == 0 { 0.5 * h } else { h };
        let mut node = [LogAcc::EMPTY; N_INTEGRALS];
        for p in &mesh {
            let v = ev.integrands(t, theta, p.x, p.psi, p.log_chi0);
            for (acc, v) in node.iter_mut().zip(v.iter()) {
                acc.add(v + p.log_quad);
            }
        }
        for (acc, n) in total.iter_mut().zip(node.iter()) {
            acc.add(n.value() + tau.ln());
        }
    }
    let mut initial = LogAcc::EMPTY;
    for p in &mesh {
        initial.add(ev.initial_integrand(theta0, p.x, p.psi) + p.log_quad);
    }
    let li: Vec<f64> = total.iter().map(|a| 0.5 * a.value()).collect();
    let l3 = 0.5 * initial.value();

    let (s, lam) = (ws.s, ws.lambda);
    let (ls, ll) = (s.ln(), lam.ln());
    let appendix = CarlemanTerms {
        log_lhs: [1.5 * ls + 2.0 * ll + li[0], 0.5 * ls + ll + li[1], ls + 1.5 * ll + 7.0 * lam + l3],
        log_rhs: [li[2], 1.5 * ls + 2.0 * ll + li[3]],
    };
    let reduced = CarlemanTerms { log_lhs: [1.5 * ls + li[4], 0.5 * ls + li[5], ls + l3], log_rhs: [li[6], 1.5 * ls + li[7]] };

    let theta_h = 2.0 / h;
    let c = gap;
    let mut sup = f64::NEG_INFINITY;
    for p in &mesh {
        for t in [horizon - 0.5 * h, horizon] {
            let jet = ev.geo.jet(case, t, p.x);
            let pw = residual(&jet, zeta, zeta);
            let pwb = residual(&jet, zeta, zeta.conj());
            for z in [jet.w, jet.wx, pw, pwb] {
                sup = sup.max(jet.log_abs(z));
            }
        }
    }
    let log_tail_bound = (0.5 * h * ev.geo.period).ln() + 3.0 * theta_h.ln() + 3.0 * lam * ws.psi.max + 2.0 * sup
        - 2.0 * s * (theta_h * c - ws.phi_scale());
    let log_smallest_integral = total
        .iter()
        .map(|a| a.value())
        .chain(core::iter::once(initial.value()))
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);

    Ok(CarlemanRow {
        case,
        s,
        lambda: lam,
        appendix,
        reduced,
        log_tail_bound,
        log_smallest_integral,
        mesh_points: mesh.len(),
    })
}

/// Runs the suite over every `(s, λ)` and flags growth of `C_est` in `s`.
pub fn carleman_check(
    zeta: C64,
    grid: &TorusGrid,
    region: &ControlRegion,
    tg: &TimeGrid,
    cfg: &CarlemanConfig,
) -> Result<CarlemanReport> {
    check_zeta(zeta)?;
    let mut rows = Vec::new();
    for &lam in &cfg.lambda_values {
        for &s in &cfg.s_values {
            let ws = WeightSet::new(grid, region, tg.horizon, cfg.t0, cfg.t1, s, lam)?;
            for &case in &cfg.suite {
                rows.push(carleman_row(zeta, &ws, tg, case)?);
            }
        }
    }
    Ok(CarlemanReport::assemble(zeta, cfg, rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityConfig {
    /// Probes use the modes with `max_a |m_a| ≤ band`.
    pub band: usize,
    /// Relative eigen-residual target.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ObservabilityConfig {
    fn default() -> Self {
        ObservabilityConfig { band: 6, tol: 1e-9, max_iters: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    pub kind: SystemKind,
    pub horizon: f64,
    pub steps: usize,
    pub full_domain: bool,
    /// Mean of `χ²` over the torus.
    pub cutoff_mean_square: f64,
    pub band: usize,
    /// Real dimension of the probe space.
    pub dimension: usize,
    pub seed: u64,
    pub largest: f64,
    pub largest_residual: f64,
    pub largest_iterations: usize,
    /// Zero when the compressed Gramian is numerically singular.
    pub smallest: f64,
    pub smallest_residual: f64,
    pub smallest_iterations: usize,
    /// `1 / smallest`.
    pub kappa_obs: f64,
    /// `max |G − Gᵀ| / max |G|` before symmetrization.
    pub asymmetry: f64,
}

/// W-orthonormal real basis of the band-limited probe space.
fn probe_basis(hum: &HumProblem, band: usize) -> Result<Vec<ModeState>> {
    let sys = &hum.sys;
    let g = &sys.grid;
    if 2 * band >= g.n() {
        return Err(Error::Invalid(format!("probe band {band} needs a grid with more than {} points per axis", 2 * band)));
    }
    let comps = sys.comps;
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    let mut basis = Vec::new();
    for idx in 0..g.len() {
        if !sys.is_active(idx) || g.modes(idx)[..g.dim()].iter().any(|m| m.unsigned_abs() as usize > band) {
            continue;
        }
        let neg = g.negated(idx);
        for c in 0..comps {
            let mut vs = Vec::new();
            if sys.real {
                if idx > neg {
                    continue;
                }
                let mut re = ModeState::zeros(g.len(), comps);
                re.data[idx * comps + c] += one;
                re.data[neg * comps + c] += one;
                vs.push(re);
                if idx != neg {
                    let mut im = ModeState::zeros(g.len(), comps);
                    im.data[idx * comps + c] = i;
                    im.data[neg * comps + c] = -i;
                    vs.push(im);
                }
            } else {
                for z in [one, i] {
                    let mut e = ModeState::zeros(g.len(), comps);
                    e.data[idx * comps + c] = z;
                    vs.push(e);
                }
            }
            for mut v in vs {
                let n = hum.norm(&v);
                v.scale(1.0 / n);
                basis.push(v);
            }
        }
    }
    Ok(basis)
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| 2.0 * ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64) - 1.0);
    let norm = v.norm();
    v / norm
}

fn rayleigh(g: &DMatrix<f64>, v: &DVector<f64>) -> (f64, f64) {
    let gv = g * v;
    let mu = v.dot(&gv);
    let r = (gv - v * mu).norm();
    (mu, if mu == 0.0 { f64::INFINITY } else { r / mu.abs() })
}

fn power_iteration(g: &DMatrix<f64>, v0: DVector<f64>, cfg: &ObservabilityConfig) -> Result<(f64, f64, usize)> {
    let mut v = v0;
    let mut last = f64::INFINITY;
    for it in 1..=cfg.max_iters {
        let w = g * &v;
        let n = w.norm();
        if n == 0.0 {
            return Ok((0.0, 0.0, it));
        }
        v = w / n;
        let (mu, r) = rayleigh(g, &v);
        last = r;
        if r < cfg.tol {
            return Ok((mu, r, it));
        }
    }
    Err(Error::IterationStall { residual: last })
}

fn inverse_iteration(g: &DMatrix<f64>, v0: DVector<f64>, cfg: &ObservabilityConfig) -> Result<Option<(f64, f64, usize)>> {
    let Some(chol) = g.clone().cholesky() else {
        return Ok(None);
    };
    let mut v = v0;
    let mut last = f64::INFINITY;
    for it in 1..=cfg.max_iters {
        let w = chol.solve(&v);
        let n = w.norm();
        if !n.is_finite() {
            return Ok(None);
        }
        v = w / n;
        let (mu, r) = rayleigh(g, &v);
        last = r;
        if r < cfg.tol {
            return Ok(Some((mu, r, it)));
        }
    }
    Err(Error::IterationStall { residual: last })
}

/// Extreme eigenvalues of the HUM Gramian compressed to band-limited probes,
/// in the problem's terminal inner product.
pub fn estimate_observability(hum: &HumProblem, cfg: &ObservabilityConfig, seed: u64) -> Result<ObservabilityReport> {
    let basis = probe_basis(hum, cfg.band)?;
    let n = basis.len();
    let images: Vec<ModeState> = basis.iter().map(|e| hum.gramian_apply(e)).collect();
    let mut g = DMatrix::from_fn(n, n, |i, j| hum.inner(&basis[i], &images[j]));
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let asym = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).fold(0.0f64, |m, (i, j)| m.max((g[(i, j)] - g[(j, i)]).abs()));
    g = (&g + g.transpose()) * 0.5;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (largest, largest_residual, largest_iterations) = power_iteration(&g, random_unit(n, &mut rng), cfg)?;
    let (smallest, smallest_residual, smallest_iterations) = match inverse_iteration(&g, random_unit(n, &mut rng), cfg)? {
        Some(r) => r,
        None => (0.0, 0.0, 0),
    };
    let smallest = smallest.max(0.0);
    Ok(ObservabilityReport {
        kind: hum.sys.kind,
        horizon: hum.tg.horizon,
        steps: hum.tg.steps,
        full_domain: hum.injection.cutoff.is_full(),
        cutoff_mean_square: hum.injection.cutoff.mean_square(),
        band: cfg.band,
        dimension: n,
        seed,
        largest,
        largest_residual,
        largest_iterations,
        smallest,
        smallest_residual,
        smallest_iterations,
        kappa_obs: if smallest > 0.0 { 1.0 / smallest } else { f64::INFINITY },
        asymmetry: if scale > 0.0 { asym / scale } else { 0.0 },
    })
}

/// Discrete full-domain Gramian of one scalar mode with decay rate `a`
/// and `ρ ≡ 1`: the trapezoid sum of `e^{−2a(T−t)}` in closed form.
pub fn full_domain_mode_gramian(a: f64, tg: &TimeGrid) -> f64 {
    let h = tg.step();
    let m = tg.steps as i32;
    let r = (-2.0 * a * h).exp();
    if a == 0.0 {
        return tg.horizon;
    }
    h * ((1.0 - r.powi(m + 1)) / (1.0 - r) - 0.5 * (1.0 + r.powi(m)))
}
