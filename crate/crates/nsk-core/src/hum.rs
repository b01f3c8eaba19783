//! Penalized HUM null controls for any [`ModeBlockSystem`].
//!
//! The Gramian `Λ` maps terminal adjoint data `z` to the terminal state
//! reached from rest under the control `v = ρ χ p`, where `p` solves the
//! adjoint system backward from `W z`. Controls are found by conjugate
//! gradients on `(Λ + ε) z = −x_free(T)` in the terminal inner product
//! `⟨x, y⟩_W = Re Σ w x̄ y`, after which the terminal state equals `−ε z`
//! up to the solver residual.

use crate::dynamics::{ControlInjection, Direction, GalerkinCutoff, ModeBlockSystem, ModeState, Stepper, TimeGrid, Trajectory};
use crate::linalg::Block;
use crate::torus::TorusGrid;
use crate::weights::{Theta, ThetaParams};
use crate::{Error, Result, C64};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

/// Time weighting of the control cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightMode {
    Plain,
    /// Cost density `e^{3sΦ/2}`, normalized by its minimum over time.
    Carleman { s: f64, lambda: f64, t0: f64, t1: f64 },
}

/// Sobolev index per component of the terminal inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalNorm {
    pub sigma: Vec<f64>,
}

impl TerminalNorm {
    pub fn l2(comps: usize) -> Self {
        TerminalNorm { sigma: vec![0.0; comps] }
    }

    /// `H^{−2}` on the first component and `H^{−1}` on the others.
    pub fn dual(comps: usize) -> Self {
        let mut sigma = vec![-1.0; comps];
        sigma[0] = -2.0;
        TerminalNorm { sigma }
    }

    pub fn is_l2(&self) -> bool {
        self.sigma.iter().all(|&s| s == 0.0)
    }

    /// Per-(mode, component) weights.
    pub fn weights(&self, grid: &TorusGrid) -> Vec<f64> {
        let comps = self.sigma.len();
        let mut w = vec![1.0; grid.len() * comps];
        for idx in 0..grid.len() {
            let base = 1.0 + grid.k2(idx);
            for (c, s) in self.sigma.iter().enumerate() {
                if *s != 0.0 {
                    w[idx * comps + c] = base.powf(*s);
                }
            }
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumConfig {
    pub epsilon: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    /// Defaults to `L²` when `None`.
    pub terminal: Option<TerminalNorm>,
    pub weight_mode: WeightMode,
}

impl Default for HumConfig {
    fn default() -> Self {
        HumConfig { epsilon: 1e-8, cg_tol: 1e-8, cg_max_iters: 2000, terminal: None, weight_mode: WeightMode::Plain }
    }
}

/// A controlled run.
#[derive(Debug, Clone)]
pub struct ControlledTrajectory {
    pub trajectory: Trajectory,
    /// Control potentials `q_j`; the control is `v_j = χ q_j` on the
    /// controlled components.
    pub potentials: Vec<ModeState>,
    /// Terminal adjoint datum found by CG.
    pub dual: ModeState,
    pub initial_norm: f64,
    pub free_terminal_norm: f64,
    /// `L²` norm of the terminal state.
    pub terminal_norm: f64,
    /// Terminal norm in the configured inner product.
    pub terminal_norm_w: f64,
    /// `‖v‖_{L²(0,T;L²)}`.
    pub control_norm: f64,
    /// `∫ ρ⁻¹ |v|²` over the times where `ρ > 0`.
    pub control_cost: f64,
    pub cg_iterations: usize,
    pub residual_history: Vec<f64>,
}

/// A configured HUM problem.
#[derive(Debug, Clone)]
pub struct HumProblem {
    pub sys: ModeBlockSystem,
    pub tg: TimeGrid,
    pub config: HumConfig,
    pub injection: ControlInjection,
    fwd: Stepper,
    bwd: Stepper,
    rho: Vec<f64>,
    weight: Vec<f64>,
    precond: Vec<Block>,
}

/// `ρ_j = exp(−(3/2) s (Φ(t_j) − λe^{12λ}))` with `ρ_M = 0`.
pub fn carleman_rho(tg: &TimeGrid, s: f64, lambda: f64, t0: f64, t1: f64) -> Result<Vec<f64>> {
    if !(s >= 1.0 && lambda >= 1.0) {
        return Err(Error::Invalid(format!("Carleman parameters must satisfy s, lambda >= 1 (got {s}, {lambda})")));
    }
    let m = s * lambda * lambda * (2.0 * lambda).exp();
    let theta = Theta::new(ThetaParams { horizon: tg.horizon, t0, t1, m })?;
    let scale = lambda * (12.0 * lambda).exp();
    let mut rho = vec![0.0; tg.steps + 1];
    for (j, r) in rho.iter_mut().enumerate().take(tg.steps) {
        let th = theta.eval(tg.node(j))?;
        *r = (-1.5 * s * (th - 1.0) * scale).exp();
    }
    Ok(rho)
}

impl HumProblem {
    /// Problem with every component controlled.
    pub fn new(sys: &ModeBlockSystem, cutoff: GalerkinCutoff, tg: TimeGrid, config: HumConfig) -> Result<Self> {
        let mask = vec![true; sys.comps];
        Self::with_controlled(sys, cutoff, mask, tg, config)
    }

    pub fn with_controlled(
        sys: &ModeBlockSystem,
        cutoff: GalerkinCutoff,
        controlled: Vec<bool>,
        tg: TimeGrid,
        config: HumConfig,
    ) -> Result<Self> {
        if !(config.epsilon > 0.0) {
            return Err(Error::Invalid(format!("penalty epsilon = {} must be positive", config.epsilon)));
        }
        if !(config.cg_tol > 0.0) {
            return Err(Error::Invalid(format!("cg_tol = {} must be positive", config.cg_tol)));
        }
        if controlled.len() != sys.comps {
            return Err(Error::ShapeMismatch(format!("control mask needs {} entries", sys.comps)));
        }
        let terminal = config.terminal.clone().unwrap_or_else(|| TerminalNorm::l2(sys.comps));
        if terminal.sigma.len() != sys.comps {
            return Err(Error::ShapeMismatch(format!("terminal norm needs {} indices", sys.comps)));
        }
        let rho = match config.weight_mode {
            WeightMode::Plain => vec![1.0; tg.steps + 1],
            WeightMode::Carleman { s, lambda, t0, t1 } => carleman_rho(&tg, s, lambda, t0, t1)?,
        };
        let weight = terminal.weights(&sys.grid);
        let fwd = Stepper::new(sys, tg);
        let bwd = Stepper::new(&sys.adjoint(), tg);
        let mut p = HumProblem {
            sys: sys.clone(),
            tg,
            config,
            injection: ControlInjection::new(cutoff, controlled).with_real(sys.real),
            fwd,
            bwd,
            rho,
            weight,
            precond: Vec::new(),
        };
        p.precond = p.build_preconditioner();
        Ok(p)
    }

    /// Cost weights at the time nodes.
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Per-(mode, component) terminal weights.
    pub fn terminal_weights(&self) -> &[f64] {
        &self.weight
    }

    fn node_weight(&self, j: usize) -> f64 {
        self.tg.quadrature_weight(j) * self.rho[j]
    }

    fn build_preconditioner(&self) -> Vec<Block> {
        let comps = self.sys.comps;
        let cbar = self.injection.cutoff.mean_square();
        let mut dmask = Block::zeros(comps);
        for c in 0..comps {
            if self.injection.controlled[c] {
                dmask.set(c, c, C64::new(1.0, 0.0));
            }
        }
        let m = self.tg.steps;
        (0..self.sys.grid.len())
            .map(|idx| {
                if !self.sys.is_active(idx) {
                    return Block::identity(comps);
                }
                let e = self.fwd.propagator(idx);
                let eh = e.adjoint();
                let mut k = dmask.scale(C64::new(self.node_weight(0), 0.0));
                for j in 1..=m {
                    k = e.mul(&k).mul(&eh).add(&dmask.scale(C64::new(self.node_weight(j), 0.0)));
                }
                let mut w = Block::zeros(comps);
                for c in 0..comps {
                    w.set(c, c, C64::new(self.weight[idx * comps + c], 0.0));
                }
                let mk = k.mul(&w).scale(C64::new(cbar, 0.0)).add(&Block::identity(comps).scale(C64::new(self.config.epsilon, 0.0)));
                mk.inverse().unwrap_or_else(|| Block::identity(comps))
            })
            .collect()
    }

    fn precondition(&self, r: &ModeState) -> ModeState {
        let mut out = r.clone();
        for idx in 0..self.sys.grid.len() {
            out.set(idx, &self.precond[idx].apply(&r.get(idx)));
        }
        out
    }

    /// `⟨x, y⟩_W`.
    pub fn inner(&self, x: &ModeState, y: &ModeState) -> f64 {
        x.inner(y, Some(&self.weight))
    }

    pub fn norm(&self, x: &ModeState) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }

    fn weighted(&self, z: &ModeState) -> ModeState {
        let mut out = z.clone();
        for (v, w) in out.data.iter_mut().zip(self.weight.iter()) {
            *v *= *w;
        }
        out
    }

    /// Control potentials `ρ_j p_j` for terminal adjoint data `z`.
    pub fn potentials(&self, z: &ModeState) -> Vec<ModeState> {
        let m = self.tg.steps;
        let mut out = vec![ModeState::zeros(0, z.comps); m + 1];
        let mut p = self.weighted(z);
        self.sys.project(&mut p);
        for j in (0..=m).rev() {
            let mut q = p.clone();
            q.scale(self.rho[j]);
            out[j] = q;
            if j > 0 {
                self.bwd.step(&mut p, None, None);
            }
        }
        out
    }

    /// Node forcing: injected controls plus sources.
    pub fn forcing_from(&self, potentials: &[ModeState], sources: Option<&[ModeState]>) -> Vec<ModeState> {
        potentials
            .iter()
            .enumerate()
            .map(|(j, q)| {
                let mut f = if self.rho[j] == 0.0 { self.sys.zero_state() } else { self.injection.forcing(q) };
                if let Some(s) = sources {
                    f.axpy(C64::new(1.0, 0.0), &s[j]);
                }
                f
            })
            .collect()
    }

    /// Terminal state from rest under the control built from `z`.
    pub fn gramian_apply(&self, z: &ModeState) -> ModeState {
        let pots = self.potentials(z);
        let f = self.forcing_from(&pots, None);
        let mut x = self.sys.zero_state();
        for j in 0..self.tg.steps {
            self.fwd.step(&mut x, Some(&f[j]), Some(&f[j + 1]));
        }
        x
    }

    fn check_state(&self, x: &ModeState) -> Result<()> {
        if x.comps != self.sys.comps || x.modes() != self.sys.grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "state has {} components on {} modes, problem expects {} on {}",
                x.comps,
                x.modes(),
                self.sys.comps,
                self.sys.grid.len()
            )));
        }
        Ok(())
    }

    /// Uncontrolled terminal state.
    pub fn free_terminal(&self, x0: &ModeState, sources: Option<&[ModeState]>) -> Result<ModeState> {
        self.check_state(x0)?;
        Ok(self.fwd.propagate(x0, sources, Direction::Forward)?.terminal().clone())
    }

    fn apply_penalized(&self, z: &ModeState) -> ModeState {
        let mut a = self.gramian_apply(z);
        a.axpy(C64::new(self.config.epsilon, 0.0), z);
        a
    }

    /// `J(z) = ½⟨(Λ+ε)z, z⟩_W − ⟨b, z⟩_W`, minimized by the CG solve.
    pub fn objective(&self, z: &ModeState, b: &ModeState) -> f64 {
        0.5 * self.inner(&self.apply_penalized(z), z) - self.inner(b, z)
    }

    /// Gradient of [`HumProblem::objective`] in the `W` inner product.
    pub fn gradient(&self, z: &ModeState, b: &ModeState) -> ModeState {
        let mut g = self.apply_penalized(z);
        g.axpy(C64::new(-1.0, 0.0), b);
        g
    }

    /// Preconditioned CG for `(Λ + ε) z = b`.
    pub fn solve_dual(&self, b: &ModeState) -> Result<(ModeState, usize, Vec<f64>)> {
        self.solve_dual_from(b, None)
    }

    /// [`Self::solve_dual`] started from `z0`.
    pub fn solve_dual_from(&self, b: &ModeState, z0: Option<&ModeState>) -> Result<(ModeState, usize, Vec<f64>)> {
        let bn = self.norm(b);
        let mut hist = Vec::new();
        if bn == 0.0 {
            return Ok((self.sys.zero_state(), 0, hist));
        }
        let (mut z, mut r) = match z0 {
            Some(z0) => {
                self.check_state(z0)?;
                let mut r = self.gradient(z0, b);
                r.scale(-1.0);
                (z0.clone(), r)
            }
            None => (self.sys.zero_state(), b.clone()),
        };
        if self.norm(&r) / bn <= self.config.cg_tol {
            return Ok((z, 0, hist));
        }
        let mut y = self.precondition(&r);
        let mut d = y.clone();
        let mut rz = self.inner(&r, &y);
        for it in 1..=self.config.cg_max_iters {
            let ad = self.apply_penalized(&d);
            let curv = self.inner(&d, &ad);
            if !(curv > 0.0) || !curv.is_finite() {
                return Err(Error::NoConvergence { iterations: it, residuals: hist });
            }
            let alpha = rz / curv;
            z.axpy(C64::new(alpha, 0.0), &d);
            r.axpy(C64::new(-alpha, 0.0), &ad);
            let res = self.norm(&r) / bn;
            hist.push(res);
            if res <= self.config.cg_tol {
                return Ok((z, it, hist));
            }
            y = self.precondition(&r);
            let rz_new = self.inner(&r, &y);
            let beta = rz_new / rz;
            rz = rz_new;
            for (dv, yv) in d.data.iter_mut().zip(y.data.iter()) {
                *dv = *yv + *dv * beta;
            }
        }
        Err(Error::NoConvergence { iterations: self.config.cg_max_iters, residuals: hist })
    }

    /// Penalized HUM control from `x0` with optional node-sampled sources.
    pub fn solve_null_control(&self, x0: &ModeState, sources: Option<&[ModeState]>) -> Result<ControlledTrajectory> {
        self.solve_null_control_from(x0, sources, None)
    }

    /// [`Self::solve_null_control`] with the dual CG started from `z0`.
    pub fn solve_null_control_from(
        &self,
        x0: &ModeState,
        sources: Option<&[ModeState]>,
        z0: Option<&ModeState>,
    ) -> Result<ControlledTrajectory> {
        self.check_state(x0)?;
        if let Some(s) = sources {
            if s.len() != self.tg.steps + 1 {
                return Err(Error::ShapeMismatch(format!("sources need {} node states", self.tg.steps + 1)));
            }
        }
        let free = self.free_terminal(x0, sources)?;
        let mut b = free.clone();
        b.scale(-1.0);
        let (z, iters, hist) = self.solve_dual_from(&b, z0)?;
        let potentials = self.potentials(&z);
        let ct = self.run_with_potentials(x0, sources, potentials)?;
        Ok(ControlledTrajectory {
            dual: z,
            free_terminal_norm: free.norm(None),
            cg_iterations: iters,
            residual_history: hist,
            ..ct
        })
    }

    /// Open-loop run with given control potentials.
    pub fn run_with_potentials(
        &self,
        x0: &ModeState,
        sources: Option<&[ModeState]>,
        potentials: Vec<ModeState>,
    ) -> Result<ControlledTrajectory> {
        self.check_state(x0)?;
        if potentials.len() != self.tg.steps + 1 {
            return Err(Error::ShapeMismatch(format!("controls need {} node states", self.tg.steps + 1)));
        }
        let f = self.forcing_from(&potentials, sources);
        let trajectory = self.fwd.propagate(x0, Some(&f), Direction::Forward)?;
        let mut norm_sq = 0.0;
        let mut cost = 0.0;
        for (j, q) in potentials.iter().enumerate() {
            let v2 = self.injection.control_norm_sq(q);
            norm_sq += self.tg.quadrature_weight(j) * v2;
            if self.rho[j] > 0.0 {
                cost += self.tg.quadrature_weight(j) * v2 / self.rho[j];
            }
        }
        let terminal = trajectory.terminal();
        Ok(ControlledTrajectory {
            initial_norm: x0.norm(None),
            free_terminal_norm: f64::NAN,
            terminal_norm: terminal.norm(None),
            terminal_norm_w: self.norm(terminal),
            control_norm: norm_sq.sqrt(),
            control_cost: cost,
            cg_iterations: 0,
            residual_history: Vec::new(),
            dual: self.sys.zero_state(),
            potentials,
            trajectory,
        })
    }

    /// Grid values of the control at node `j`, one vector per component.
    pub fn control_values(&self, ct: &ControlledTrajectory, j: usize) -> Vec<Vec<C64>> {
        self.injection.control_values(&self.sys.grid, &ct.potentials[j])
    }

    /// `max_x |v(t_j, x)|` over components.
    pub fn control_sup(&self, ct: &ControlledTrajectory, j: usize) -> f64 {
        self.control_values(ct, j).iter().flat_map(|c| c.iter().map(|z| z.norm())).fold(0.0, f64::max)
    }
}

/// Diagonal of `Λ` for one mode of a scalar system under a full cutoff,
/// exposed for tests and reports.
pub fn scalar_gramian(e: C64, tg: &TimeGrid, rho: &[f64]) -> f64 {
    let mut s = 0.0;
    let a2 = e.norm_sqr();
    let mut pow = 1.0;
    for j in (0..=tg.steps).rev() {
        s += tg.quadrature_weight(j) * rho[j] * pow;
        pow *= a2;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SystemKind;
    use crate::params::DerivedConstants;
    use crate::torus::SpectralField;
    use crate::weights::{ControlRegion, Cutoff};
    use core::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dc(mu: f64, nu: f64, p: f64, kappa: f64) -> DerivedConstants {
        DerivedConstants { kappa_star: kappa, mu_star: mu, nu_star: nu, p_star: p }
    }

    fn heat(n: usize) -> ModeBlockSystem {
        let g = TorusGrid::new(1, n, 2.0 * PI).unwrap();
        ModeBlockSystem::assemble(SystemKind::Heat(C64::new(1.0, 0.0)), &dc(1.0, 0.0, 1.0, 1.0), None, &g).unwrap()
    }

    fn nsk(n: usize) -> ModeBlockSystem {
        let g = TorusGrid::new(1, n, 2.0 * PI).unwrap();
        ModeBlockSystem::assemble(SystemKind::LinearizedNsk, &dc(1.0, 0.0, 1.0, 1.0), None, &g).unwrap()
    }

    fn random_state(sys: &ModeBlockSystem, rng: &mut ChaCha8Rng) -> ModeState {
        let g = &sys.grid;
        let vals: Vec<Vec<f64>> =
            (0..sys.comps).map(|_| (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut s = ModeState::from_fields(&[&SpectralField::from_values(g, &vals).unwrap()]).unwrap();
        sys.project(&mut s);
        s
    }

    fn localized(sys: &ModeBlockSystem) -> GalerkinCutoff {
        let region = ControlRegion::concentric(1, 2.0 * PI, PI, PI / 4.0, PI / 8.0, PI / 16.0).unwrap();
        GalerkinCutoff::new(&region, Cutoff::Outer, &sys.grid).unwrap()
    }

    #[test]
    fn zero_terminal_data_gives_zero() {
        let sys = nsk(16);
        let p = HumProblem::new(&sys, localized(&sys), TimeGrid::new(1.0, 16).unwrap(), HumConfig::default()).unwrap();
        assert_eq!(p.gramian_apply(&sys.zero_state()).max_abs(), 0.0);
        let ct = p.solve_null_control(&sys.zero_state(), None).unwrap();
        assert_eq!(ct.terminal_norm, 0.0);
        assert_eq!(ct.control_norm, 0.0);
        assert_eq!(ct.cg_iterations, 0);
    }

    #[test]
    fn full_domain_heat_gramian_matches_closed_form() {
        let sys = heat(8);
        let mut errs = Vec::new();
        for m in [32usize, 64, 128] {
            let tg = TimeGrid::new(1.0, m).unwrap();
            let p = HumProblem::new(&sys, GalerkinCutoff::full(&sys.grid), tg, HumConfig::default()).unwrap();
            let mut z = sys.zero_state();
            z.data[1] = C64::new(1.0, 0.0);
            let lz = p.gramian_apply(&z);
            let exact = (1.0 - (-2.0f64).exp()) / 2.0;
            errs.push((lz.data[1].re - exact).abs());
            assert!(lz.data[1].im.abs() < 1e-15);
        }
        assert!(errs[0] / errs[1] > 3.9 && errs[1] / errs[2] > 3.9, "{errs:?}");
        assert!(errs[2] < 1e-5);
    }

    #[test]
    fn gramian_is_symmetric_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sys = nsk(16);
        let tg = TimeGrid::new(0.5, 16).unwrap();
        for terminal in [None, Some(TerminalNorm::dual(2))] {
            let cfg = HumConfig { terminal, ..HumConfig::default() };
            let p = HumProblem::new(&sys, localized(&sys), tg, cfg).unwrap();
            for _ in 0..10 {
                let a = random_state(&sys, &mut rng);
                let b = random_state(&sys, &mut rng);
                let la = p.gramian_apply(&a);
                let lb = p.gramian_apply(&b);
                let x = p.inner(&la, &b);
                let y = p.inner(&a, &lb);
                assert!((x - y).abs() <= 1e-10 * (p.norm(&la) * p.norm(&b)).max(1e-300));
                assert!(p.inner(&la, &a) >= 0.0);
            }
        }
    }

    #[test]
    fn minimal_control_matches_closed_form() {
        // one mode of the heat equation with control on the whole torus
        let sys = heat(8);
        let tg = TimeGrid::new(1.0, 2048).unwrap();
        let cfg = HumConfig { epsilon: 1e-13, cg_tol: 1e-14, ..HumConfig::default() };
        let p = HumProblem::new(&sys, GalerkinCutoff::full(&sys.grid), tg, cfg).unwrap();
        let mut x0 = sys.zero_state();
        x0.data[1] = C64::new(1.0, 0.0);
        let ct = p.solve_null_control(&x0, None).unwrap();
        let gram = (1.0 - (-2.0f64).exp()) / 2.0;
        for j in (0..=2048).step_by(128) {
            let t = tg.node(j);
            let v = -(-1.0f64).exp() * (-(1.0 - t)).exp() / gram;
            assert!((ct.potentials[j].data[1].re - v).abs() < 1e-6, "t = {t}");
        }
        assert!(ct.terminal_norm < 1e-10);
    }

    #[test]
    fn objective_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sys = nsk(16);
        let p = HumProblem::new(&sys, localized(&sys), TimeGrid::new(0.5, 16).unwrap(), HumConfig { epsilon: 1e-3, ..HumConfig::default() }).unwrap();
        let b = random_state(&sys, &mut rng);
        let z = random_state(&sys, &mut rng);
        let g = p.gradient(&z, &b);
        for _ in 0..5 {
            let dir = random_state(&sys, &mut rng);
            let h = 1e-3;
            let mut zp = z.clone();
            zp.axpy(C64::new(h, 0.0), &dir);
            let mut zm = z.clone();
            zm.axpy(C64::new(-h, 0.0), &dir);
            let fd = (p.objective(&zp, &b) - p.objective(&zm, &b)) / (2.0 * h);
            let an = p.inner(&g, &dir);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-12), "{fd} vs {an}");
        }
    }

    #[test]
    fn controls_vanish_outside_cutoff_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sys = nsk(32);
        let cut = localized(&sys);
        let chi = cut.grid_values().to_vec();
        let p = HumProblem::new(&sys, cut, TimeGrid::new(0.5, 16).unwrap(), HumConfig { epsilon: 1e-4, ..HumConfig::default() }).unwrap();
        let x0 = random_state(&sys, &mut rng);
        let ct = p.solve_null_control(&x0, None).unwrap();
        for j in 0..=16 {
            for comp in p.control_values(&ct, j) {
                for (v, c) in comp.iter().zip(chi.iter()) {
                    if *c == 0.0 {
                        assert_eq!(v.norm(), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn terminal_state_equals_penalty_times_dual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sys = nsk(16);
        let cfg = HumConfig { epsilon: 1e-3, cg_tol: 1e-12, ..HumConfig::default() };
        let p = HumProblem::new(&sys, localized(&sys), TimeGrid::new(1.0, 32).unwrap(), cfg).unwrap();
        let x0 = random_state(&sys, &mut rng);
        let ct = p.solve_null_control(&x0, None).unwrap();
        let mut r = ct.trajectory.terminal().clone();
        r.axpy(C64::new(1e-3, 0.0), &ct.dual);
        assert!(r.norm(None) < 1e-9 * x0.norm(None));
        assert!(ct.terminal_norm < ct.free_terminal_norm);
    }

    #[test]
    fn carleman_controls_vanish_toward_the_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sys = heat(16);
        let tg = TimeGrid::new(1.0, 64).unwrap();
        let cfg = HumConfig {
            epsilon: 1e-6,
            weight_mode: WeightMode::Carleman { s: 1.0, lambda: 1.0, t0: 0.1, t1: 0.25 },
            ..HumConfig::default()
        };
        let p = HumProblem::new(&sys, localized(&sys), tg, cfg).unwrap();
        let x0 = random_state(&sys, &mut rng);
        let ct = p.solve_null_control(&x0, None).unwrap();
        let sup: Vec<f64> = (59..=64).map(|j| p.control_sup(&ct, j)).collect();
        for w in sup.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert_eq!(sup[5], 0.0);
        assert!(p.rho().iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn sources_are_cancelled_too() {
        let sys = heat(16);
        let tg = TimeGrid::new(1.0, 32).unwrap();
        let cfg = HumConfig { epsilon: 1e-8, cg_tol: 1e-12, ..HumConfig::default() };
        let p = HumProblem::new(&sys, GalerkinCutoff::full(&sys.grid), tg, cfg).unwrap();
        let src: Vec<ModeState> = (0..=32)
            .map(|j| {
                let mut s = sys.zero_state();
                s.data[2] = C64::new(tg.node(j), 0.0);
                s.data[14] = C64::new(tg.node(j), 0.0);
                s
            })
            .collect();
        let ct = p.solve_null_control(&sys.zero_state(), Some(&src)).unwrap();
        assert!(ct.free_terminal_norm > 0.1);
        assert!(ct.terminal_norm < 1e-6 * ct.free_terminal_norm);
    }

    #[test]
    fn scalar_gramian_matches_problem_diagonal() {
        let sys = heat(8);
        let tg = TimeGrid::new(1.0, 40).unwrap();
        let p = HumProblem::new(&sys, GalerkinCutoff::full(&sys.grid), tg, HumConfig::default()).unwrap();
        let mut z = sys.zero_state();
        z.data[2] = C64::new(1.0, 0.0);
        let e = p.fwd.propagator(2).get(0, 0);
        assert!((p.gramian_apply(&z).data[2].re - scalar_gramian(e, &tg, p.rho())).abs() < 1e-15);
    }
}
