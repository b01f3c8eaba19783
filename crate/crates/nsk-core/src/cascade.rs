//! Cascaded controllers for the transformed pairs: two scalar heat null
//! controls coupled through a Picard loop on the frozen coupling terms.
//!
//! The plant is the adjoint of the transformed backward pair, so its
//! per-mode block is `K_k^H`. The heat parts `−ζ̄±|k|²` are controlled
//! separately; everything else in `K_k^H` (the couplings and, in the Jordan
//! regime, the `κ⋆|k|² r⁺` term) is evaluated on the previous iterate.

use crate::dynamics::{
    ControlInjection, Direction, GalerkinCutoff, ModeBlockSystem, ModeState, Stepper, SystemKind, TimeGrid, Trajectory,
};
use crate::hum::{HumConfig, HumProblem, WeightMode};
use crate::linalg::Block;
use crate::params::{DerivedConstants, Regime, StructureClassification};
use crate::torus::TorusGrid;
use crate::weights::{ControlRegion, Cutoff, WeightSet};
use crate::{Error, Result, C64};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    pub hum: HumConfig,
    /// Relative tolerance on successive-iterate distances.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig { hum: HumConfig::default(), tol: 1e-6, max_iters: 30 }
    }
}

#[derive(Debug, Clone)]
pub struct CascadeReport {
    pub regime: Regime,
    pub iterations: usize,
    /// `‖r^n − r^{n−1}‖_{L²(0,T;L²)}` per iteration.
    pub distances: Vec<f64>,
    /// Ratios of successive distances.
    pub factors: Vec<f64>,
    /// `log ‖(r^n − r^{n−1}) e^{s(φ−λe^{12λ})}‖` over `t ≤ T − h/2` in
    /// Carleman mode.
    pub weighted_log_distances: Vec<f64>,
    /// Coupled re-simulation under the synthesized controls.
    pub trajectory: Trajectory,
    /// Control potentials on the two components; `v = χ₀ q`.
    pub potentials: Vec<ModeState>,
    pub initial_norm: f64,
    pub terminal_norm: f64,
    pub control_norm: f64,
}

impl CascadeReport {
    /// Largest measured ratio of successive distances.
    pub fn contraction_factor(&self) -> f64 {
        self.factors.iter().cloned().fold(0.0, f64::max)
    }

    /// Two-step rate `(d_n/d_{n−2})^{1/2}` from the last three distances.
    pub fn asymptotic_factor(&self) -> f64 {
        let d = &self.distances;
        match d.len() {
            0 | 1 => 0.0,
            2 => self.factors[0],
            n if d[n - 3] > 0.0 => (d[n - 1] / d[n - 3]).sqrt(),
            _ => 0.0,
        }
    }

    /// Same ratio in the weighted norm.
    pub fn weighted_contraction_factor(&self) -> f64 {
        self.weighted_log_distances.windows(2).map(|w| (w[1] - w[0]).exp()).fold(0.0, f64::max)
    }
}

/// Pair plant with its scalar heat parts.
#[derive(Debug, Clone)]
pub struct PairPlant {
    pub plant: ModeBlockSystem,
    pub heat: [ModeBlockSystem; 2],
    /// `K_k^H` minus its heat diagonal.
    pub coupling: Vec<Block>,
}

impl PairPlant {
    pub fn new(cls: &StructureClassification, dc: &DerivedConstants, grid: &TorusGrid) -> Result<Self> {
        let kind = if cls.regime == Regime::Jordan { SystemKind::PairJordan } else { SystemKind::PairDiag };
        let plant = ModeBlockSystem::assemble(kind, dc, Some(cls), grid)?.adjoint();
        let zetas = [cls.zeta_plus.conj(), cls.zeta_minus.conj()];
        let heat = [
            ModeBlockSystem::assemble(SystemKind::Heat(zetas[0]), dc, None, grid)?,
            ModeBlockSystem::assemble(SystemKind::Heat(zetas[1]), dc, None, grid)?,
        ];
        let coupling = (0..grid.len())
            .map(|idx| {
                let k2 = grid.k2(idx);
                plant.block(idx).sub(&Block::diag(&[zetas[0] * (-k2), zetas[1] * (-k2)]))
            })
            .collect();
        Ok(PairPlant { plant, heat, coupling })
    }

    fn coupled_sources(&self, r: &[ModeState], f: Option<&[ModeState]>) -> [Vec<ModeState>; 2] {
        let n = self.plant.grid.len();
        let mut out = [Vec::with_capacity(r.len()), Vec::with_capacity(r.len())];
        for (j, rj) in r.iter().enumerate() {
            let mut s = [ModeState::zeros(n, 1), ModeState::zeros(n, 1)];
            for idx in 0..n {
                let mut v = self.coupling[idx].apply(&rj.get(idx));
                if let Some(f) = f {
                    let g = f[j].get(idx);
                    v[0] += g[0];
                    v[1] += g[1];
                }
                s[0].data[idx] = v[0];
                s[1].data[idx] = v[1];
            }
            let [a, b] = s;
            out[0].push(a);
            out[1].push(b);
        }
        out
    }
}

fn split(x: &ModeState) -> [ModeState; 2] {
    let n = x.modes();
    let mut a = ModeState::zeros(n, 1);
    let mut b = ModeState::zeros(n, 1);
    for i in 0..n {
        a.data[i] = x.data[2 * i];
        b.data[i] = x.data[2 * i + 1];
    }
    [a, b]
}

fn join(a: &ModeState, b: &ModeState) -> ModeState {
    let n = a.modes();
    let mut x = ModeState::zeros(n, 2);
    for i in 0..n {
        x.data[2 * i] = a.data[i];
        x.data[2 * i + 1] = b.data[i];
    }
    x
}

fn l2l2_distance(tg: &TimeGrid, a: &[ModeState], b: &[ModeState]) -> f64 {
    let mut s = 0.0;
    for j in 0..=tg.steps {
        let d: f64 = a[j].data.iter().zip(b[j].data.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
        s += tg.quadrature_weight(j) * d;
    }
    s.sqrt()
}

fn l2l2_norm(tg: &TimeGrid, a: &[ModeState]) -> f64 {
    (0..=tg.steps).map(|j| tg.quadrature_weight(j) * a[j].norm(None).powi(2)).sum::<f64>().sqrt()
}

/// `log ‖w e^{s(φ−λe^{12λ})}‖_{L²(0,T−h/2; L²)}` by log-sum-exp.
fn weighted_log_norm(ws: &WeightSet, tg: &TimeGrid, grid: &TorusGrid, w: &[ModeState]) -> Result<f64> {
    let mut terms = Vec::new();
    let cell = libm::log(grid.spacing().powi(grid.dim() as i32));
    for j in tg.weighted_nodes() {
        let t = tg.node(j);
        let lq = libm::log(tg.quadrature_weight(j));
        for c in 0..w[j].comps {
            let mut col: Vec<C64> = (0..grid.len()).map(|i| w[j].data[i * w[j].comps + c]).collect();
            grid.synthesize(&mut col);
            for (idx, v) in col.iter().enumerate() {
                let a = v.norm_sqr();
                if a > 0.0 {
                    // e^{sφ} is the reciprocal of the Carleman weight e^{−sφ}
                    terms.push(libm::log(a) - 2.0 * ws.shifted_log_weight(t, idx)? + lq + cell);
                }
            }
        }
    }
    if terms.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terms.iter().map(|x| (x - m).exp()).sum();
    Ok(0.5 * (m + libm::log(s)))
}

/// Jacobi-Picard cascade over two scalar heat null-control problems.
#[allow(clippy::too_many_arguments)]
pub fn cascaded_pair_control(
    cls: &StructureClassification,
    dc: &DerivedConstants,
    region: &ControlRegion,
    grid: &TorusGrid,
    tg: TimeGrid,
    r0: &ModeState,
    sources: Option<&[ModeState]>,
    cfg: &CascadeConfig,
) -> Result<CascadeReport> {
    if r0.comps != 2 || r0.modes() != grid.len() {
        return Err(Error::ShapeMismatch(format!("pair data needs 2 components on {} modes", grid.len())));
    }
    if let Some(s) = sources {
        if s.len() != tg.steps + 1 || s.iter().any(|x| x.comps != 2 || x.modes() != grid.len()) {
            return Err(Error::ShapeMismatch(format!("pair sources need {} node states", tg.steps + 1)));
        }
    }
    let pp = PairPlant::new(cls, dc, grid)?;
    let cut = GalerkinCutoff::new(region, Cutoff::Inner, grid)?;
    let hp = [
        HumProblem::new(&pp.heat[0], cut.clone(), tg, cfg.hum.clone())?,
        HumProblem::new(&pp.heat[1], cut.clone(), tg, cfg.hum.clone())?,
    ];
    let weights = match cfg.hum.weight_mode {
        WeightMode::Carleman { s, lambda, t0, t1 } => Some(WeightSet::new(grid, region, tg.horizon, t0, t1, s, lambda)?),
        WeightMode::Plain => None,
    };
    let mut x0 = r0.clone();
    pp.plant.project(&mut x0);
    let init = split(&x0);
    let zero = ModeState::zeros(grid.len(), 2);
    let mut iterate = vec![zero; tg.steps + 1];
    let mut potentials = Vec::new();
    let mut distances = Vec::new();
    let mut factors = Vec::new();
    let mut weighted = Vec::new();
    let mut converged = false;
    let mut growth = 0;
    for _ in 0..cfg.max_iters {
        let src = pp.coupled_sources(&iterate, sources);
        let a = hp[0].solve_null_control(&init[0], Some(&src[0]))?;
        let b = hp[1].solve_null_control(&init[1], Some(&src[1]))?;
        let next: Vec<ModeState> = a
            .trajectory
            .states
            .iter()
            .zip(b.trajectory.states.iter())
            .map(|(x, y)| join(x, y))
            .collect();
        let d = l2l2_distance(&tg, &next, &iterate);
        if let Some(ws) = &weights {
            let diff: Vec<ModeState> = next
                .iter()
                .zip(iterate.iter())
                .map(|(x, y)| {
                    let mut z = x.clone();
                    z.axpy(C64::new(-1.0, 0.0), y);
                    z
                })
                .collect();
            weighted.push(weighted_log_norm(ws, &tg, grid, &diff)?);
        }
        if let Some(&prev) = distances.last() {
            let f = if prev > 0.0 { d / prev } else { 0.0 };
            factors.push(f);
            growth = if f >= 1.0 { growth + 1 } else { 0 };
        }
        distances.push(d);
        potentials = a.potentials.iter().zip(b.potentials.iter()).map(|(x, y)| join(x, y)).collect();
        let scale = l2l2_norm(&tg, &next);
        iterate = next;
        if d <= cfg.tol * scale || d == 0.0 {
            converged = true;
            break;
        }
        if growth >= 3 {
            return Err(Error::PicardDivergence { factors });
        }
    }
    if !converged {
        return Err(Error::PicardDivergence { factors });
    }
    let inj = ControlInjection::new(cut, vec![true, true]).with_real(pp.plant.real);
    let forcing: Vec<ModeState> = potentials
        .iter()
        .enumerate()
        .map(|(j, q)| {
            let mut f = inj.forcing(q);
            if let Some(s) = sources {
                f.axpy(C64::new(1.0, 0.0), &s[j]);
            }
            f
        })
        .collect();
    let trajectory = Stepper::new(&pp.plant, tg).propagate(&x0, Some(&forcing), Direction::Forward)?;
    let control_norm = (0..=tg.steps)
        .map(|j| tg.quadrature_weight(j) * inj.control_norm_sq(&potentials[j]))
        .sum::<f64>()
        .sqrt();
    Ok(CascadeReport {
        regime: cls.regime,
        iterations: distances.len(),
        distances,
        factors,
        weighted_log_distances: weighted,
        initial_norm: x0.norm(None),
        terminal_norm: trajectory.terminal().norm(None),
        trajectory,
        potentials,
        control_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{classify, JORDAN_TOL};
    use crate::torus::SpectralField;
    use core::f64::consts::PI;

    fn setup(s: f64, kappa: f64, p: f64) -> (DerivedConstants, StructureClassification, TorusGrid, ControlRegion) {
        let dc = DerivedConstants { kappa_star: kappa, mu_star: s / 2.0, nu_star: 0.0, p_star: p };
        let cls = classify(&dc, JORDAN_TOL);
        let g = TorusGrid::new(1, 32, 2.0 * PI).unwrap();
        let region = ControlRegion::concentric(1, 2.0 * PI, PI, PI / 2.0, 0.8 * PI / 2.0, 0.3 * PI / 2.0).unwrap();
        (dc, cls, g, region)
    }

    fn data(g: &TorusGrid) -> ModeState {
        let a = SpectralField::from_fn(g, |x| x[0].sin() + 0.3 * (2.0 * x[0]).cos());
        let b = SpectralField::from_fn(g, |x| 0.5 * x[0].cos());
        ModeState::from_fields(&[&a, &b]).unwrap()
    }

    #[test]
    fn plant_blocks_are_adjoint_pairs() {
        let (dc, cls, g, _) = setup(2.0, 1.0, 3.0);
        let pp = PairPlant::new(&cls, &dc, &g).unwrap();
        let idx = g.index_of(&[2]);
        let b = pp.plant.block(idx);
        // r⁻ picks up κ⋆|k|² r⁺ in the Jordan regime
        assert!((b.get(1, 0) - (C64::new(4.0, 0.0) + cls.effective_couplings[1].conj())).norm() < 1e-12);
        assert!((b.get(0, 1) - cls.effective_couplings[2].conj()).norm() < 1e-12);
    }

    #[test]
    fn zero_data_converges_at_once() {
        let (dc, cls, g, region) = setup(2.0, 0.75, 1.0);
        let tg = TimeGrid::new(1.0, 16).unwrap();
        let rep =
            cascaded_pair_control(&cls, &dc, &region, &g, tg, &ModeState::zeros(g.len(), 2), None, &CascadeConfig::default())
                .unwrap();
        assert_eq!(rep.iterations, 1);
        assert_eq!(rep.terminal_norm, 0.0);
    }

    #[test]
    fn small_coupling_converges_quickly() {
        let (dc, cls, g, region) = setup(2.0, 0.75, 1e-3);
        assert_eq!(cls.regime, Regime::RealDistinct);
        let tg = TimeGrid::new(1.0, 32).unwrap();
        let cfg = CascadeConfig { hum: HumConfig { epsilon: 1e-10, cg_max_iters: 5000, ..HumConfig::default() }, ..CascadeConfig::default() };
        let rep = cascaded_pair_control(&cls, &dc, &region, &g, tg, &data(&g), None, &cfg).unwrap();
        assert!(rep.iterations <= 3, "{:?}", rep.distances);
        assert!(rep.contraction_factor() < 0.1);
        assert!(rep.terminal_norm < 1e-2 * rep.initial_norm);
    }

    #[test]
    fn jordan_regime_cascade_converges() {
        let (dc, cls, g, region) = setup(2.0, 1.0, 1e-2);
        assert_eq!(cls.regime, Regime::Jordan);
        let tg = TimeGrid::new(1.0, 32).unwrap();
        let cfg = CascadeConfig { hum: HumConfig { epsilon: 1e-10, cg_max_iters: 5000, ..HumConfig::default() }, ..CascadeConfig::default() };
        let rep = cascaded_pair_control(&cls, &dc, &region, &g, tg, &data(&g), None, &cfg).unwrap();
        assert!(rep.asymptotic_factor() < 0.5);
        assert!(rep.terminal_norm < 1e-2 * rep.initial_norm);
    }

    #[test]
    fn complex_regime_plant_is_complex() {
        let (dc, cls, g, _) = setup(2.0, 2.0, 1.0);
        let pp = PairPlant::new(&cls, &dc, &g).unwrap();
        assert!(!pp.plant.real);
        assert!((pp.heat[0].block(1).get(0, 0) - C64::new(-1.0, -1.0)).norm() < 1e-12);
    }
}
