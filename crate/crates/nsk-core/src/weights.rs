//! Control regions, smooth cutoffs, the spatial weight ψ, the temporal
//! weight θ and the Carleman weights φ, Φ, ξ.
//!
//! Exponential weights are only ever handled through their logarithms.

use crate::torus::{SpectralField, TorusGrid};
use crate::{Error, Result, C64};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

/// Periodic interval `{x : dist(x, center) < half_width}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub center: f64,
    pub half_width: f64,
}

/// Axis-aligned box on the torus, one interval per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    pub axes: Vec<Interval>,
}

impl BoxRegion {
    pub fn new(axes: Vec<Interval>) -> Self {
        BoxRegion { axes }
    }

    /// Same interval on every axis.
    pub fn cube(d: usize, center: f64, half_width: f64) -> Self {
        BoxRegion { axes: vec![Interval { center, half_width }; d] }
    }

    pub fn contains(&self, x: &[f64], l: f64) -> bool {
        self.axes.iter().zip(x.iter()).all(|(iv, &xi)| periodic_dist(xi, iv.center, l) < iv.half_width)
    }

    /// Shifts every center by `dx` along all axes.
    pub fn shifted(&self, dx: f64) -> Self {
        BoxRegion {
            axes: self.axes.iter().map(|iv| Interval { center: iv.center + dx, half_width: iv.half_width }).collect(),
        }
    }
}

/// Distance on the circle of length `l`.
pub fn periodic_dist(x: f64, c: f64, l: f64) -> f64 {
    let r = (x - c).rem_euclid(l);
    r.min(l - r)
}

/// Control region with nested boxes `ω₀ ⊂ supp χ₀ ⊂ ω₁ ⋐ ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlRegion {
    pub period: f64,
    pub omega: BoxRegion,
    pub omega1: BoxRegion,
    pub omega0: BoxRegion,
}

/// Which of the two smooth cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cutoff {
    /// χ₀: equal to 1 on ω₀, supported inside ω₁.
    Inner,
    /// χ: equal to 1 on ω₁, supported inside ω.
    Outer,
}

fn smooth_step(t: f64) -> f64 {
    let f = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        f(t) / (f(t) + f(1.0 - t))
    }
}

impl ControlRegion {
    /// Validates nesting with positive margins on every axis.
    pub fn new(period: f64, omega: BoxRegion, omega1: BoxRegion, omega0: BoxRegion) -> Result<Self> {
        let d = omega.axes.len();
        if d == 0 || omega1.axes.len() != d || omega0.axes.len() != d {
            return Err(Error::Invalid(format!("region boxes must all have {d} axes")));
        }
        for a in 0..d {
            let (o, o1, o0) = (omega.axes[a], omega1.axes[a], omega0.axes[a]);
            if !(o0.half_width > 0.0) {
                return Err(Error::Invalid(format!("omega0 is empty on axis {a}")));
            }
            if !(o.half_width < period / 2.0) {
                return Err(Error::Invalid(format!("omega covers the whole circle on axis {a}")));
            }
            let gap1 = o.half_width - periodic_dist(o1.center, o.center, period) - o1.half_width;
            let gap0 = o1.half_width - periodic_dist(o0.center, o1.center, period) - o0.half_width;
            if !(gap1 > 0.0) {
                return Err(Error::Invalid(format!("omega1 is not compactly inside omega on axis {a}")));
            }
            if !(gap0 > 0.0) {
                return Err(Error::Invalid(format!("omega0 is not strictly inside omega1 on axis {a}")));
            }
        }
        Ok(ControlRegion { period, omega, omega1, omega0 })
    }

    /// Concentric intervals (the same on every axis).
    pub fn concentric(d: usize, period: f64, center: f64, w: f64, w1: f64, w0: f64) -> Result<Self> {
        ControlRegion::new(
            period,
            BoxRegion::cube(d, center, w),
            BoxRegion::cube(d, center, w1),
            BoxRegion::cube(d, center, w0),
        )
    }

    pub fn dim(&self) -> usize {
        self.omega.axes.len()
    }

    /// Half-widths (inner, outer) of the transition of a cutoff on one axis,
    /// measured from that cutoff's inner-box center.
    fn transition(&self, kind: Cutoff, axis: usize) -> (Interval, f64) {
        let l = self.period;
        let (o, o1, o0) = (self.omega.axes[axis], self.omega1.axes[axis], self.omega0.axes[axis]);
        match kind {
            Cutoff::Inner => {
                let gap = o1.half_width - periodic_dist(o0.center, o1.center, l) - o0.half_width;
                (o0, o0.half_width + 0.5 * gap)
            }
            Cutoff::Outer => {
                let gap = o.half_width - periodic_dist(o1.center, o.center, l) - o1.half_width;
                (o1, o1.half_width + gap)
            }
        }
    }

    /// Value of a cutoff at a point.
    pub fn cutoff(&self, kind: Cutoff, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for a in 0..self.dim() {
            let (inner, outer) = self.transition(kind, a);
            let r = periodic_dist(x[a], inner.center, self.period);
            v *= smooth_step((outer - r) / (outer - inner.half_width));
            if v == 0.0 {
                break;
            }
        }
        v
    }

    /// Grid samples of a cutoff.
    pub fn sample(&self, kind: Cutoff, grid: &TorusGrid) -> Vec<f64> {
        (0..grid.len()).map(|i| self.cutoff(kind, &grid.point(i))).collect()
    }

    /// Region with every box translated by `dx` along each axis.
    pub fn shifted(&self, dx: f64) -> Self {
        ControlRegion {
            period: self.period,
            omega: self.omega.shifted(dx),
            omega1: self.omega1.shifted(dx),
            omega0: self.omega0.shifted(dx),
        }
    }
}

/// Spatial weight ψ with range in `[6, 7]` and no critical point off ω₀.
#[derive(Debug, Clone)]
pub struct Psi {
    field: SpectralField,
    values: Vec<f64>,
    grad_norm: Vec<f64>,
    /// Minimum of `|∇ψ|` over grid points outside ω₀.
    pub grad_margin: f64,
    pub min: f64,
    pub max: f64,
}

const PSI_LO: f64 = 6.05;
const PSI_HI: f64 = 6.95;
/// Largest admissible ratio of the bump to its mean off ω₀.
const BUMP_RATIO: f64 = 0.5;
/// Relative size of the last resolved Fourier coefficient of the bump.
const TAIL_TOL: f64 = 1e-6;

/// `e^{-κ} I₀(κ)` by the periodic trapezoid rule.
fn scaled_bessel_i0(kappa: f64) -> f64 {
    let n = 512;
    (0..n).map(|j| (kappa * ((2.0 * PI * j as f64 / n as f64).cos() - 1.0)).exp()).sum::<f64>() / n as f64
}

/// Bump-to-mean ratio at angular distance `theta` from the bump center.
fn bump_ratio(kappa: f64, theta: f64) -> f64 {
    (kappa * (theta.cos() - 1.0)).exp() / scaled_bessel_i0(kappa)
}

/// Smallest concentration keeping the bump below `BUMP_RATIO` of its mean
/// at angular half-width `theta`.
fn required_concentration(theta: f64) -> Option<f64> {
    let mut k = 0.5;
    while k < 1e7 {
        if bump_ratio(k, theta) <= BUMP_RATIO {
            return Some(k);
        }
        k *= 1.05;
    }
    None
}

/// Largest concentration whose spectrum is resolved by `n` modes.
fn resolvable_concentration(n: usize) -> f64 {
    let m = (n / 2 - 1) as f64;
    // I_m(κ)/I_0(κ) ≈ exp(-m²/(2κ))
    m * m / (2.0 * (1.0 / TAIL_TOL).ln())
}

/// One-dimensional profile (coefficients on an axis grid) with derivative
/// `β − b(x)`, `b` a periodic bump concentrated in the interval.
fn axis_profile(n: usize, l: f64, iv: Interval) -> Result<Vec<C64>> {
    let theta = 2.0 * PI * iv.half_width / l;
    let kmax = resolvable_concentration(n);
    let kappa = match required_concentration(theta) {
        Some(k) if k <= kmax => k,
        _ => {
            // smallest half-width whose required concentration is resolvable
            let mut lo = theta;
            let mut hi = PI;
            if bump_ratio(kmax, hi) > BUMP_RATIO {
                return Err(Error::ConstructionFailure {
                    reason: format!("N = {n} cannot resolve any admissible bump"),
                    min_feasible: f64::INFINITY,
                });
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if bump_ratio(kmax, mid) <= BUMP_RATIO {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Err(Error::ConstructionFailure {
                reason: format!("omega0 half-width {} too small for N = {n}", iv.half_width),
                min_feasible: 2.0 * hi * l / (2.0 * PI),
            });
        }
    };
    let g = TorusGrid::new(1, n, l)?;
    let mut b: Vec<C64> = (0..n)
        .map(|i| {
            let x = g.point(i)[0];
            C64::new((kappa * ((2.0 * PI * (x - iv.center) / l).cos() - 1.0)).exp(), 0.0)
        })
        .collect();
    g.analyze(&mut b);
    let i = C64::new(0.0, 1.0);
    let mut psi = vec![C64::new(0.0, 0.0); n];
    for idx in 0..n {
        if idx == 0 || g.is_nyquist(idx) {
            continue;
        }
        let k = g.wavevector(idx)[0];
        psi[idx] = -b[idx] / (i * k);
    }
    Ok(psi)
}

impl Psi {
    pub fn field(&self) -> &SpectralField {
        &self.field
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grad_norm(&self) -> &[f64] {
        &self.grad_norm
    }

    /// Trigonometric-polynomial evaluation at an arbitrary point.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let g = self.field.grid();
        let c = self.field.comp(0);
        let mut s = 0.0;
        for (idx, coef) in c.iter().enumerate() {
            if *coef == C64::new(0.0, 0.0) {
                continue;
            }
            let k = g.wavevector(idx);
            let ph: f64 = (0..g.dim()).map(|a| k[a] * x[a]).sum();
            s += (coef * C64::new(ph.cos(), ph.sin())).re;
        }
        s
    }
}

/// Builds ψ as a sum of axis profiles, rescaled into `[6.05, 6.95]`.
pub fn build_psi(grid: &TorusGrid, region: &ControlRegion) -> Result<Psi> {
    let d = grid.dim();
    if region.dim() != d || region.period != grid.period() {
        return Err(Error::Invalid("region does not match the grid".into()));
    }
    let n = grid.n();
    let mut coeffs = vec![C64::new(0.0, 0.0); grid.len()];
    for axis in 0..d {
        let prof = axis_profile(n, grid.period(), region.omega0.axes[axis])?;
        for (j, c) in prof.iter().enumerate() {
            let mut modes = [0i64; 3];
            modes[axis] = if j < n / 2 { j as i64 } else { j as i64 - n as i64 };
            coeffs[grid.index_of(&modes[..d])] += *c;
        }
    }
    let raw = SpectralField::from_coeffs(grid, vec![coeffs], true)?;
    // range from a 4x finer synthesis of the trigonometric polynomial
    let fine = grid.with_n(4 * n)?;
    let fine_vals = resample(&raw, &fine)[0].clone();
    let (lo, hi) = fine_vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi - lo > 1e-12) {
        return Err(Error::ConstructionFailure { reason: "psi is constant".into(), min_feasible: f64::NAN });
    }
    let scale = (PSI_HI - PSI_LO) / (hi - lo);
    let mut c0 = raw.scale(scale).into_comps();
    c0[0][0] += C64::new(PSI_LO - lo * scale, 0.0);
    let field = SpectralField::from_coeffs(grid, c0, true)?;
    let values = field.values()[0].clone();
    let grad = field.grad()?.values();
    let grad_norm: Vec<f64> = (0..grid.len()).map(|i| grad.iter().map(|g| g[i] * g[i]).sum::<f64>().sqrt()).collect();
    let grad_margin = (0..grid.len())
        .filter(|&i| !region.omega0.contains(&grid.point(i)[..d], grid.period()))
        .map(|i| grad_norm[i])
        .fold(f64::INFINITY, f64::min);
    let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(grad_margin > 0.0) {
        return Err(Error::ConstructionFailure {
            reason: format!("gradient of psi vanishes off omega0 (margin {grad_margin})"),
            min_feasible: f64::NAN,
        });
    }
    Ok(Psi { field, values, grad_norm, grad_margin, min, max })
}

/// Checks the two defining properties of ψ on its grid and returns the
/// gradient margin off ω₀.
pub fn check_psi(values: &[f64], grad_norm: &[f64], grid: &TorusGrid, region: &ControlRegion) -> Result<f64> {
    if values.iter().any(|&v| !(6.0..=7.0).contains(&v)) {
        return Err(Error::ConstructionFailure { reason: "psi leaves [6, 7]".into(), min_feasible: f64::NAN });
    }
    let d = grid.dim();
    let margin = (0..grid.len())
        .filter(|&i| !region.omega0.contains(&grid.point(i)[..d], grid.period()))
        .map(|i| grad_norm[i])
        .fold(f64::INFINITY, f64::min);
    if !(margin > 0.0) {
        return Err(Error::ConstructionFailure { reason: "critical point outside omega0".into(), min_feasible: f64::NAN });
    }
    Ok(margin)
}

/// Grid values of a field re-synthesized on another resolution.
pub fn resample(f: &SpectralField, target: &TorusGrid) -> Vec<Vec<f64>> {
    let g = f.grid();
    let d = g.dim();
    f.comps()
        .iter()
        .map(|c| {
            let mut out = vec![C64::new(0.0, 0.0); target.len()];
            for (idx, v) in c.iter().enumerate() {
                let m = g.modes(idx);
                if g.is_nyquist(idx) && target.n() != g.n() {
                    continue;
                }
                out[target.index_of(&m[..d])] += *v;
            }
            target.synthesize(&mut out);
            out.into_iter().map(|z| z.re).collect()
        })
        .collect()
}

/// Parameters of the temporal weight θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaParams {
    pub horizon: f64,
    pub t0: f64,
    pub t1: f64,
    pub m: f64,
}

/// θ with its bridge coefficients precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta {
    pub params: ThetaParams,
    bridge: [f64; 3],
    bridge_start: f64,
    bridge_end: f64,
}

const FLUSH_LOG: f64 = -700.0;

impl Theta {
    pub fn new(params: ThetaParams) -> Result<Self> {
        let ThetaParams { horizon, t0, t1, m } = params;
        if !(t0 > 0.0 && t1 > 0.0 && t0 + 2.0 * t1 < horizon) {
            return Err(Error::Invalid(format!("need T0 + 2 T1 < T with positive T0, T1 (got {t0}, {t1}, {horizon})")));
        }
        if t1 > 0.25 {
            return Err(Error::Invalid(format!("T1 = {t1} must not exceed 1/4")));
        }
        if !(m >= 2.0) {
            return Err(Error::Invalid(format!("exponent m = {m} must be at least 2")));
        }
        // q(u) = a u³ + b u⁴ + c u⁵ with q, q', q'' = (r−1, r, 2r) at u = 1
        let r = 1.0 / t1;
        let (q0, q1, q2) = (r - 1.0, r, 2.0 * r);
        let bridge = [10.0 * q0 - 4.0 * q1 + 0.5 * q2, -15.0 * q0 + 7.0 * q1 - q2, 6.0 * q0 - 3.0 * q1 + 0.5 * q2];
        let th = Theta { params, bridge, bridge_start: horizon - 2.0 * t1, bridge_end: horizon - t1 };
        let samples = 2000;
        for j in 0..=samples {
            let u = j as f64 / samples as f64;
            if th.bridge_slope(u) < 0.0 {
                return Err(Error::ConstructionFailure {
                    reason: format!("theta bridge is not monotone at u = {u}"),
                    min_feasible: f64::NAN,
                });
            }
        }
        Ok(th)
    }

    fn bridge_slope(&self, u: f64) -> f64 {
        let [a, b, c] = self.bridge;
        u * u * (3.0 * a + u * (4.0 * b + 5.0 * c * u))
    }

    /// Start and end of the bridge interval.
    pub fn bridge_knots(&self) -> (f64, f64) {
        (self.bridge_start, self.bridge_end)
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let ThetaParams { horizon, t0, t1, m } = self.params;
        if !(t >= 0.0 && t < horizon) {
            return Err(Error::OutOfDomain { t, horizon });
        }
        Ok(if t <= t0 {
            let lg = m * (1.0 - t / t0).ln();
            1.0 + if lg < FLUSH_LOG { 0.0 } else { lg.exp() }
        } else if t <= self.bridge_start {
            1.0
        } else if t < self.bridge_end {
            let u = (t - self.bridge_start) / t1;
            let [a, b, c] = self.bridge;
            1.0 + u * u * u * (a + u * (b + c * u))
        } else if t == self.bridge_end {
            1.0 / t1
        } else {
            1.0 / (horizon - t)
        })
    }

    /// Time derivative of θ.
    pub fn derivative(&self, t: f64) -> Result<f64> {
        let ThetaParams { horizon, t0, t1, m } = self.params;
        if !(t >= 0.0 && t < horizon) {
            return Err(Error::OutOfDomain { t, horizon });
        }
        Ok(if t <= t0 {
            let base = 1.0 - t / t0;
            if base <= 0.0 {
                0.0
            } else {
                let lg = (m - 1.0) * base.ln();
                if lg < FLUSH_LOG {
                    0.0
                } else {
                    -(m / t0) * lg.exp()
                }
            }
        } else if t <= self.bridge_start {
            0.0
        } else if t < self.bridge_end {
            self.bridge_slope((t - self.bridge_start) / t1) / t1
        } else {
            let r = horizon - t;
            1.0 / (r * r)
        })
    }
}

/// Point values of the Carleman weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightValues {
    pub theta: f64,
    pub phi: f64,
    pub big_phi: f64,
    pub xi: f64,
    /// `−s φ`, the logarithm of the exponential weight.
    pub log_weight: f64,
}

/// Full weight machinery for fixed `(s, λ)`.
#[derive(Debug, Clone)]
pub struct WeightSet {
    pub psi: Psi,
    pub region: ControlRegion,
    pub theta: Theta,
    pub s: f64,
    pub lambda: f64,
    chi0: Vec<f64>,
    chi: Vec<f64>,
}

impl WeightSet {
    /// `m = s λ² e^{2λ}` is derived from `(s, λ)`.
    pub fn new(
        grid: &TorusGrid,
        region: &ControlRegion,
        horizon: f64,
        t0: f64,
        t1: f64,
        s: f64,
        lambda: f64,
    ) -> Result<Self> {
        if !(s >= 1.0 && lambda >= 1.0) {
            return Err(Error::Invalid(format!("Carleman parameters must satisfy s, lambda >= 1 (got {s}, {lambda})")));
        }
        let psi = build_psi(grid, region)?;
        let m = s * lambda * lambda * (2.0 * lambda).exp();
        let theta = Theta::new(ThetaParams { horizon, t0, t1, m })?;
        Ok(WeightSet {
            chi0: region.sample(Cutoff::Inner, grid),
            chi: region.sample(Cutoff::Outer, grid),
            psi,
            region: region.clone(),
            theta,
            s,
            lambda,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        self.psi.field.grid()
    }

    pub fn chi0(&self) -> &[f64] {
        &self.chi0
    }

    pub fn chi(&self) -> &[f64] {
        &self.chi
    }

    /// `λ e^{12λ}`.
    pub fn phi_scale(&self) -> f64 {
        self.lambda * (12.0 * self.lambda).exp()
    }

    fn values_from_psi(&self, t: f64, psi: f64) -> Result<WeightValues> {
        let th = self.theta.eval(t)?;
        let e = (self.lambda * psi).exp();
        let big = th * self.phi_scale();
        let phi = th * (self.phi_scale() - e);
        Ok(WeightValues { theta: th, phi, big_phi: big, xi: th * e, log_weight: -self.s * phi })
    }

    /// Weights at grid point `idx`.
    pub fn at_index(&self, t: f64, idx: usize) -> Result<WeightValues> {
        self.values_from_psi(t, self.psi.values[idx])
    }

    /// Weights at an arbitrary point.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> Result<WeightValues> {
        self.values_from_psi(t, self.psi.eval(x))
    }

    /// `−s(φ − λe^{12λ})`: the log weight shifted by its supremum over time,
    /// computed without cancellation.
    pub fn shifted_log_weight(&self, t: f64, idx: usize) -> Result<f64> {
        let th = self.theta.eval(t)?;
        let e = (self.lambda * self.psi.values[idx]).exp();
        Ok(-self.s * ((th - 1.0) * self.phi_scale() - th * e))
    }

    /// `−s(Φ(t) − λe^{12λ})`, the time-only counterpart.
    pub fn shifted_log_big_phi(&self, t: f64) -> Result<f64> {
        let th = self.theta.eval(t)?;
        Ok(-self.s * (th - 1.0) * self.phi_scale())
    }
}
