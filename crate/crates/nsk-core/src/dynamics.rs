//! Per-mode exact integrators for the constant-coefficient linear systems:
//! the linearized (a, u) system, its adjoint, the (σ, q) subsystem, the
//! transformed pairs and scalar heat equations.
//!
//! Every system is a family of blocks `K_k`. Forward propagation solves
//! `∂_t x = K x + F` from `x(0)`; backward propagation solves
//! `−∂_t y = K y + F` from `y(T)`. Pairing forward runs of a system with
//! backward runs of [`ModeBlockSystem::adjoint`] is exact up to rounding.

use crate::linalg::{Block, Vec4};
use crate::params::{lower_order_matrix, principal_matrix, DerivedConstants, Regime, StructureClassification};
use crate::torus::{SpectralField, TorusGrid};
use crate::weights::{ControlRegion, Cutoff};
use crate::{Error, Result, C64};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Uniform time grid `t_j = jT/M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Invalid(format!("horizon T = {horizon} must be positive")));
        }
        if steps < 8 {
            return Err(Error::Invalid(format!("M = {steps} must be at least 8")));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j == self.steps {
            self.horizon
        } else {
            j as f64 * self.step()
        }
    }

    /// Trapezoid weights on the nodes.
    pub fn quadrature_weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.steps {
            0.5 * self.step()
        } else {
            self.step()
        }
    }

    /// Nodes at which weights singular at `T` may be evaluated (`t_j ≤ T − h/2`).
    pub fn weighted_nodes(&self) -> core::ops::Range<usize> {
        0..self.steps
    }

    pub fn doubled(&self) -> Self {
        TimeGrid { horizon: self.horizon, steps: 2 * self.steps }
    }
}

/// Which linear system a block family realizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SystemKind {
    LinearizedNsk,
    AdjointNsk,
    SigmaQ,
    PairDiag,
    PairJordan,
    Heat(C64),
    /// Conjugate transpose of another kind's blocks.
    Adjoint(BaseKind),
}

/// Non-adjoint kinds, used to tag adjoint families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseKind {
    LinearizedNsk,
    AdjointNsk,
    SigmaQ,
    PairDiag,
    PairJordan,
    Heat(C64),
}

impl SystemKind {
    pub fn parse(name: &str, zeta: Option<C64>) -> Result<Self> {
        Ok(match name {
            "linearized_nsk" => SystemKind::LinearizedNsk,
            "adjoint_nsk" => SystemKind::AdjointNsk,
            "sigma_q" => SystemKind::SigmaQ,
            "pair_diag" => SystemKind::PairDiag,
            "pair_jordan" => SystemKind::PairJordan,
            "heat" => SystemKind::Heat(zeta.unwrap_or(C64::new(1.0, 0.0))),
            other => return Err(Error::UnknownSystem(String::from(other))),
        })
    }

    /// Name accepted by [`SystemKind::parse`]; adjoint families report `adjoint`.
    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::LinearizedNsk => "linearized_nsk",
            SystemKind::AdjointNsk => "adjoint_nsk",
            SystemKind::SigmaQ => "sigma_q",
            SystemKind::PairDiag => "pair_diag",
            SystemKind::PairJordan => "pair_jordan",
            SystemKind::Heat(_) => "heat",
            SystemKind::Adjoint(_) => "adjoint",
        }
    }

    fn base(self) -> Option<BaseKind> {
        Some(match self {
            SystemKind::LinearizedNsk => BaseKind::LinearizedNsk,
            SystemKind::AdjointNsk => BaseKind::AdjointNsk,
            SystemKind::SigmaQ => BaseKind::SigmaQ,
            SystemKind::PairDiag => BaseKind::PairDiag,
            SystemKind::PairJordan => BaseKind::PairJordan,
            SystemKind::Heat(z) => BaseKind::Heat(z),
            SystemKind::Adjoint(_) => return None,
        })
    }

    fn from_base(b: BaseKind) -> Self {
        match b {
            BaseKind::LinearizedNsk => SystemKind::LinearizedNsk,
            BaseKind::AdjointNsk => SystemKind::AdjointNsk,
            BaseKind::SigmaQ => SystemKind::SigmaQ,
            BaseKind::PairDiag => SystemKind::PairDiag,
            BaseKind::PairJordan => SystemKind::PairJordan,
            BaseKind::Heat(z) => SystemKind::Heat(z),
        }
    }
}

/// Coefficients of all components, stored mode-major (`data[idx * comps + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModeState {
    pub comps: usize,
    pub data: Vec<C64>,
}

impl ModeState {
    pub fn zeros(modes: usize, comps: usize) -> Self {
        ModeState { comps, data: vec![ZERO; modes * comps] }
    }

    pub fn modes(&self) -> usize {
        self.data.len() / self.comps
    }

    /// Stacks the components of several fields.
    pub fn from_fields(fields: &[&SpectralField]) -> Result<Self> {
        let grid = fields.first().ok_or(Error::RankMismatch("no fields"))?.grid().clone();
        let comps: usize = fields.iter().map(|f| f.rank()).sum();
        let mut s = ModeState::zeros(grid.len(), comps);
        let mut c = 0;
        for f in fields {
            if *f.grid() != grid {
                return Err(Error::GridMismatch);
            }
            for r in 0..f.rank() {
                for (idx, v) in f.comp(r).iter().enumerate() {
                    s.data[idx * comps + c] = *v;
                }
                c += 1;
            }
        }
        Ok(s)
    }

    /// Components `range` as one field.
    pub fn to_field(&self, grid: &TorusGrid, range: core::ops::Range<usize>, real: bool) -> SpectralField {
        let comps = range
            .map(|c| (0..grid.len()).map(|idx| self.data[idx * self.comps + c]).collect())
            .collect();
        SpectralField::from_coeffs(grid, comps, real).expect("state matches grid")
    }

    #[inline]
    pub fn get(&self, idx: usize) -> Vec4 {
        let mut v = [ZERO; 4];
        v[..self.comps].copy_from_slice(&self.data[idx * self.comps..(idx + 1) * self.comps]);
        v
    }

    #[inline]
    pub fn set(&mut self, idx: usize, v: &Vec4) {
        let c = self.comps;
        self.data[idx * c..(idx + 1) * c].copy_from_slice(&v[..c]);
    }

    pub fn axpy(&mut self, a: C64, o: &ModeState) {
        for (x, y) in self.data.iter_mut().zip(o.data.iter()) {
            *x += a * *y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for x in self.data.iter_mut() {
            *x *= a;
        }
    }

    /// `Re Σ w_{k,c} conj(x) y` with optional per-(mode, component) weights.
    pub fn inner(&self, o: &ModeState, w: Option<&[f64]>) -> f64 {
        match w {
            None => self.data.iter().zip(o.data.iter()).map(|(x, y)| (x.conj() * y).re).sum(),
            Some(w) => self.data.iter().zip(o.data.iter()).zip(w.iter()).map(|((x, y), w)| w * (x.conj() * y).re).sum(),
        }
    }

    pub fn norm(&self, w: Option<&[f64]>) -> f64 {
        self.inner(self, w).max(0.0).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Family of per-mode blocks with its grid.
#[derive(Debug, Clone)]
pub struct ModeBlockSystem {
    pub kind: SystemKind,
    pub grid: TorusGrid,
    pub comps: usize,
    /// Whether states represent real-valued fields.
    pub real: bool,
    blocks: Vec<Block>,
}

fn cx(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Linearized (a, u) block at wavevector `k`.
fn nsk_block(dc: &DerivedConstants, k: &[f64; 3], d: usize) -> Block {
    let i = C64::new(0.0, 1.0);
    let k2: f64 = k.iter().take(d).map(|v| v * v).sum();
    let mut b = Block::zeros(1 + d);
    for a in 0..d {
        // ∂_t â = −i k·û
        b.set(0, 1 + a, -i * k[a]);
        // ∂_t û = −ik(p⋆ + κ⋆|k|²) â − μ⋆|k|² û − (μ⋆+ν⋆) k (k·û)
        b.set(1 + a, 0, -i * k[a] * (dc.p_star + dc.kappa_star * k2));
        for c in 0..d {
            let mut v = -(dc.mu_star + dc.nu_star) * k[a] * k[c];
            if a == c {
                v -= dc.mu_star * k2;
            }
            b.set(1 + a, 1 + c, cx(v));
        }
    }
    b
}

impl ModeBlockSystem {
    /// Assembles the blocks of a base system kind.
    pub fn assemble(
        kind: SystemKind,
        dc: &DerivedConstants,
        cls: Option<&StructureClassification>,
        grid: &TorusGrid,
    ) -> Result<Self> {
        let d = grid.dim();
        let n = grid.len();
        let mut blocks = Vec::with_capacity(n);
        let (comps, real) = match kind {
            SystemKind::LinearizedNsk | SystemKind::AdjointNsk => {
                for idx in 0..n {
                    let b = nsk_block(dc, &grid.wavevector(idx), d);
                    blocks.push(if kind == SystemKind::AdjointNsk { b.adjoint() } else { b });
                }
                (1 + d, true)
            }
            SystemKind::SigmaQ => {
                let bm = principal_matrix(dc);
                let p = lower_order_matrix(dc);
                for idx in 0..n {
                    blocks.push(bm.scale(cx(-grid.k2(idx))).add(&p));
                }
                (2, true)
            }
            SystemKind::PairDiag | SystemKind::PairJordan => {
                let cls = cls.ok_or_else(|| Error::Invalid("pair systems need a classification".into()))?;
                let jordan = cls.regime == Regime::Jordan;
                if jordan != (kind == SystemKind::PairJordan) {
                    return Err(Error::Invalid(format!(
                        "{} regime does not match the requested pair system",
                        cls.regime.name()
                    )));
                }
                let z = cls.transformed_principal(dc);
                let e = &cls.effective_couplings;
                let cpl = Block::from_rows(&[&[e[0], e[1]], &[e[2], e[3]]]);
                for idx in 0..n {
                    blocks.push(z.scale(cx(-grid.k2(idx))).add(&cpl));
                }
                (2, cls.regime != Regime::ComplexPair)
            }
            SystemKind::Heat(zeta) => {
                for idx in 0..n {
                    blocks.push(Block::diag(&[zeta * (-grid.k2(idx))]));
                }
                (1, zeta.im == 0.0)
            }
            SystemKind::Adjoint(_) => return Err(Error::UnknownSystem("adjoint families come from adjoint()".into())),
        };
        Ok(ModeBlockSystem { kind, grid: grid.clone(), comps, real, blocks })
    }

    /// Conjugate-transposed blocks.
    pub fn adjoint(&self) -> Self {
        let kind = match self.kind.base() {
            Some(b) => SystemKind::Adjoint(b),
            None => match self.kind {
                SystemKind::Adjoint(b) => SystemKind::from_base(b),
                _ => unreachable!(),
            },
        };
        ModeBlockSystem {
            kind,
            grid: self.grid.clone(),
            comps: self.comps,
            real: self.real,
            blocks: self.blocks.iter().map(|b| b.adjoint()).collect(),
        }
    }

    /// Block family from explicit per-mode blocks.
    pub fn from_blocks(kind: SystemKind, grid: &TorusGrid, blocks: Vec<Block>, real: bool) -> Result<Self> {
        if blocks.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!("need {} blocks", grid.len())));
        }
        let comps = blocks[0].n;
        Ok(ModeBlockSystem { kind, grid: grid.clone(), comps, real, blocks })
    }

    pub fn block(&self, idx: usize) -> &Block {
        &self.blocks[idx]
    }

    /// Modes that evolve; the unpaired `−N/2` modes are held at zero.
    #[inline]
    pub fn is_active(&self, idx: usize) -> bool {
        !self.grid.is_nyquist(idx)
    }

    /// Per-mode step propagators `exp(h K_k)`.
    pub fn propagators(&self, h: f64) -> Vec<Block> {
        self.blocks.iter().map(|b| b.scale(cx(h)).expm()).collect()
    }

    pub fn zero_state(&self) -> ModeState {
        ModeState::zeros(self.grid.len(), self.comps)
    }

    /// Zeroes inactive modes.
    pub fn project(&self, s: &mut ModeState) {
        for idx in 0..self.grid.len() {
            if !self.is_active(idx) {
                s.set(idx, &[ZERO; 4]);
            }
        }
    }
}

/// Direction of integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// States at every node of a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tg: TimeGrid,
    pub states: Vec<ModeState>,
}

impl Trajectory {
    pub fn terminal(&self) -> &ModeState {
        self.states.last().expect("nonempty trajectory")
    }

    pub fn initial(&self) -> &ModeState {
        &self.states[0]
    }
}

/// Integrator with cached per-mode propagators.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub sys: ModeBlockSystem,
    pub tg: TimeGrid,
    prop: Vec<Block>,
}

impl Stepper {
    pub fn new(sys: &ModeBlockSystem, tg: TimeGrid) -> Self {
        Stepper { prop: sys.propagators(tg.step()), sys: sys.clone(), tg }
    }

    pub fn propagator(&self, idx: usize) -> &Block {
        &self.prop[idx]
    }

    /// One step `x ← E(x + h/2 F_a) + h/2 F_b`, in place.
    pub fn step(&self, x: &mut ModeState, fa: Option<&ModeState>, fb: Option<&ModeState>) {
        let h2 = 0.5 * self.tg.step();
        for idx in 0..self.sys.grid.len() {
            if !self.sys.is_active(idx) {
                x.set(idx, &[ZERO; 4]);
                continue;
            }
            let mut v = x.get(idx);
            if let Some(f) = fa {
                let g = f.get(idx);
                for c in 0..x.comps {
                    v[c] += g[c] * h2;
                }
            }
            let mut y = self.prop[idx].apply(&v);
            if let Some(f) = fb {
                let g = f.get(idx);
                for c in 0..x.comps {
                    y[c] += g[c] * h2;
                }
            }
            x.set(idx, &y);
        }
    }

    /// Integrates from `state0` (initial data forward, terminal data
    /// backward) with node-sampled forcing.
    pub fn propagate(&self, state0: &ModeState, forcing: Option<&[ModeState]>, dir: Direction) -> Result<Trajectory> {
        let m = self.tg.steps;
        if state0.comps != self.sys.comps || state0.modes() != self.sys.grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "state has {} components on {} modes, system expects {} on {}",
                state0.comps,
                state0.modes(),
                self.sys.comps,
                self.sys.grid.len()
            )));
        }
        if let Some(f) = forcing {
            if f.len() != m + 1 || f.iter().any(|s| s.comps != state0.comps || s.data.len() != state0.data.len()) {
                return Err(Error::ShapeMismatch(format!("forcing must have {} node states", m + 1)));
            }
        }
        let mut states = vec![ModeState::zeros(0, state0.comps); m + 1];
        let mut x = state0.clone();
        self.sys.project(&mut x);
        match dir {
            Direction::Forward => {
                states[0] = x.clone();
                for j in 0..m {
                    self.step(&mut x, forcing.map(|f| &f[j]), forcing.map(|f| &f[j + 1]));
                    states[j + 1] = x.clone();
                }
            }
            Direction::Backward => {
                states[m] = x.clone();
                for j in (0..m).rev() {
                    self.step(&mut x, forcing.map(|f| &f[j + 1]), forcing.map(|f| &f[j]));
                    states[j] = x.clone();
                }
            }
        }
        Ok(Trajectory { tg: self.tg, states })
    }
}

/// Convenience wrapper building a fresh [`Stepper`].
pub fn propagate(
    sys: &ModeBlockSystem,
    state0: &ModeState,
    forcing: Option<&[ModeState]>,
    tg: TimeGrid,
    dir: Direction,
) -> Result<Trajectory> {
    Stepper::new(sys, tg).propagate(state0, forcing, dir)
}

/// Cutoff multiplication realized as an exact Galerkin operator. The
/// cutoff's Fourier coefficients are taken once from a fixed fine reference
/// grid, so the compressed operator on any band of modes does not depend on
/// the simulation resolution. Products are circular convolutions on a
/// doubled grid, which never wrap for differences of active modes.
#[derive(Debug, Clone)]
pub struct GalerkinCutoff {
    pub kind: Cutoff,
    grid: TorusGrid,
    conv: TorusGrid,
    /// Transformed kernels for `χ` and `χ²`.
    kernels: [Vec<C64>; 2],
    map: Vec<usize>,
    neg: Vec<usize>,
    chi_grid: Vec<f64>,
    mean_sq: f64,
    full: bool,
}

/// Default reference resolution per dimension.
pub fn reference_resolution(d: usize, n: usize) -> usize {
    let base = match d {
        1 => 1024,
        2 => 128,
        _ => 32,
    };
    base.max(4 * n)
}

fn conv_map(grid: &TorusGrid, conv: &TorusGrid) -> Vec<usize> {
    let d = grid.dim();
    (0..grid.len())
        .map(|idx| if grid.is_nyquist(idx) { usize::MAX } else { conv.index_of(&grid.modes(idx)[..d]) })
        .collect()
}

impl GalerkinCutoff {
    pub fn new(region: &ControlRegion, kind: Cutoff, grid: &TorusGrid) -> Result<Self> {
        let d = grid.dim();
        let n = grid.n();
        let reference = grid.with_n(reference_resolution(d, n))?;
        let conv = grid.with_n(2 * n)?;
        let chi_ref = region.sample(kind, &reference);
        let mean_sq = chi_ref.iter().map(|c| c * c).sum::<f64>() / chi_ref.len() as f64;
        let reach = n as i64 - 2;
        let scale = conv.len() as f64;
        let kernels = [1, 2].map(|power| {
            let mut c: Vec<C64> = chi_ref.iter().map(|x| C64::new(x.powi(power), 0.0)).collect();
            reference.analyze(&mut c);
            let mut k = vec![ZERO; conv.len()];
            for (ri, v) in c.iter().enumerate() {
                let m = reference.modes(ri);
                if m[..d].iter().all(|x| x.abs() <= reach) {
                    k[conv.index_of(&m[..d])] = *v;
                }
            }
            conv.analyze(&mut k);
            for v in k.iter_mut() {
                *v *= scale;
            }
            k
        });
        Ok(GalerkinCutoff {
            kind,
            map: conv_map(grid, &conv),
            neg: (0..grid.len()).map(|i| grid.negated(i)).collect(),
            chi_grid: region.sample(kind, grid),
            grid: grid.clone(),
            conv,
            kernels,
            mean_sq,
            full: false,
        })
    }

    /// Cutoff equal to one everywhere.
    pub fn full(grid: &TorusGrid) -> Self {
        GalerkinCutoff {
            kind: Cutoff::Outer,
            grid: grid.clone(),
            conv: grid.clone(),
            kernels: [Vec::new(), Vec::new()],
            map: Vec::new(),
            neg: (0..grid.len()).map(|i| grid.negated(i)).collect(),
            chi_grid: vec![1.0; grid.len()],
            mean_sq: 1.0,
            full: true,
        }
    }

    pub fn is_full(&self) -> bool {
        self.full
    }

    /// Mean of the squared cutoff.
    pub fn mean_square(&self) -> f64 {
        self.mean_sq
    }

    /// Cutoff samples on the simulation grid.
    pub fn grid_values(&self) -> &[f64] {
        &self.chi_grid
    }

    /// Active-mode coefficients of `χ^power · f` for one component
    /// (`power` is 1 or 2).
    pub fn multiply(&self, coeffs: &[C64], power: i32) -> Vec<C64> {
        assert!(power == 1 || power == 2, "cutoff powers are 1 or 2");
        if self.full {
            let mut out = coeffs.to_vec();
            for (idx, v) in out.iter_mut().enumerate() {
                if self.grid.is_nyquist(idx) {
                    *v = ZERO;
                }
            }
            return out;
        }
        let mut buf = vec![ZERO; self.conv.len()];
        for (v, &m) in coeffs.iter().zip(self.map.iter()) {
            if m != usize::MAX {
                buf[m] = *v;
            }
        }
        self.conv.analyze(&mut buf);
        for (v, k) in buf.iter_mut().zip(self.kernels[power as usize - 1].iter()) {
            *v *= k;
        }
        self.conv.synthesize(&mut buf);
        self.map.iter().map(|&m| if m == usize::MAX { ZERO } else { buf[m] }).collect()
    }

    /// Products of two Hermitian coefficient arrays with one convolution.
    pub fn multiply_pair(&self, a: &[C64], b: &[C64], power: i32) -> (Vec<C64>, Vec<C64>) {
        let packed: Vec<C64> = a.iter().zip(b.iter()).map(|(x, y)| x + C64::new(0.0, 1.0) * y).collect();
        let r = self.multiply(&packed, power);
        let mut x = vec![ZERO; r.len()];
        let mut y = vec![ZERO; r.len()];
        for i in 0..r.len() {
            let c = r[self.neg[i]].conj();
            x[i] = (r[i] + c) * 0.5;
            y[i] = (r[i] - c) * C64::new(0.0, -0.5);
        }
        (x, y)
    }
}

/// Controls entering selected components through `χ · v` with `v = χ p`.
#[derive(Debug, Clone)]
pub struct ControlInjection {
    pub cutoff: GalerkinCutoff,
    pub controlled: Vec<bool>,
    /// Potentials are Hermitian, so components can share convolutions.
    pub real: bool,
}

impl ControlInjection {
    pub fn new(cutoff: GalerkinCutoff, controlled: Vec<bool>) -> Self {
        ControlInjection { cutoff, controlled, real: false }
    }

    pub fn with_real(mut self, real: bool) -> Self {
        self.real = real;
        self
    }

    fn column(p: &ModeState, c: usize) -> Vec<C64> {
        (0..p.modes()).map(|i| p.data[i * p.comps + c]).collect()
    }

    /// Forcing `P(χ² p)` on the controlled components.
    pub fn forcing(&self, potential: &ModeState) -> ModeState {
        let comps = potential.comps;
        let modes = potential.modes();
        let mut out = ModeState::zeros(modes, comps);
        let active: Vec<usize> = (0..comps).filter(|&c| self.controlled[c]).collect();
        let mut put = |c: usize, f: Vec<C64>| {
            for (i, v) in f.into_iter().enumerate() {
                out.data[i * comps + c] = v;
            }
        };
        let mut rest = &active[..];
        while !rest.is_empty() {
            if self.real && rest.len() >= 2 {
                let (x, y) = self.cutoff.multiply_pair(&Self::column(potential, rest[0]), &Self::column(potential, rest[1]), 2);
                put(rest[0], x);
                put(rest[1], y);
                rest = &rest[2..];
            } else {
                put(rest[0], self.cutoff.multiply(&Self::column(potential, rest[0]), 2));
                rest = &rest[1..];
            }
        }
        out
    }

    /// Grid values of the control field `v = χ p` per component.
    pub fn control_values(&self, grid: &TorusGrid, potential: &ModeState) -> Vec<Vec<C64>> {
        let comps = potential.comps;
        let chi = self.cutoff.grid_values();
        (0..comps)
            .map(|c| {
                let mut col: Vec<C64> = (0..grid.len()).map(|i| potential.data[i * comps + c]).collect();
                if !self.controlled[c] {
                    return vec![ZERO; grid.len()];
                }
                grid.synthesize(&mut col);
                col.iter().zip(chi.iter()).map(|(v, x)| *v * *x).collect()
            })
            .collect()
    }

    /// Exact L² norm of `χ p` (the control) per component, squared and summed.
    pub fn control_norm_sq(&self, potential: &ModeState) -> f64 {
        let comps = potential.comps;
        let modes = potential.modes();
        let mut s = 0.0;
        for c in 0..comps {
            if !self.controlled[c] {
                continue;
            }
            let col: Vec<C64> = (0..modes).map(|i| potential.data[i * comps + c]).collect();
            let f = self.cutoff.multiply(&col, 2);
            s += col.iter().zip(f.iter()).map(|(p, q)| (p.conj() * q).re).sum::<f64>();
        }
        s.max(0.0)
    }
}

/// Spectral data of one mode block.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDecay {
    pub index: usize,
    pub modes: [i64; 3],
    pub k_norm: f64,
    pub eigenvalues: Vec<C64>,
    pub abscissa: f64,
    pub frequency: f64,
    pub eigenvector_condition: f64,
}

/// Per-mode spectral abscissa table.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub rows: Vec<ModeDecay>,
    pub dispersive: bool,
    pub defective_modes: usize,
}

/// Condition numbers above this are treated as defective.
pub const DEFECTIVE_CONDITION: f64 = 1e8;

pub fn decay_report(sys: &ModeBlockSystem) -> DecayReport {
    let g = &sys.grid;
    let mut rows = Vec::new();
    let mut dispersive = false;
    let mut defective = 0;
    for idx in 0..g.len() {
        if !sys.is_active(idx) {
            continue;
        }
        let b = sys.block(idx);
        let (l, n) = b.eigenvalues();
        let eig: Vec<C64> = l[..n].to_vec();
        let scale = b.max_abs().max(1e-300);
        let abscissa = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let frequency = eig.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        if frequency > 1e-9 * scale {
            dispersive = true;
        }
        let cond = if scale == 1e-300 { 1.0 } else { b.eigenvector_condition() };
        if cond > DEFECTIVE_CONDITION {
            defective += 1;
        }
        rows.push(ModeDecay {
            index: idx,
            modes: g.modes(idx),
            k_norm: g.k2(idx).sqrt(),
            eigenvalues: eig,
            abscissa: if abscissa.abs() <= 1e-14 * scale { 0.0 } else { abscissa },
            frequency,
            eigenvector_condition: cond,
        });
    }
    DecayReport { rows, dispersive, defective_modes: defective }
}

/// Natural energy `Σ (p⋆+κ⋆|k|²)|â|² + |û|²` of the (a, u) system over
/// modes with `k ≠ 0`; it is nonincreasing along uncontrolled flows when
/// `p⋆ ≥ 0`.
pub fn nsk_energy(dc: &DerivedConstants, grid: &TorusGrid, s: &ModeState) -> f64 {
    let mut e = 0.0;
    for idx in 1..grid.len() {
        let v = s.get(idx);
        e += (dc.p_star + dc.kappa_star * grid.k2(idx)) * v[0].norm_sqr();
        for c in 1..s.comps {
            e += v[c].norm_sqr();
        }
    }
    e
}
