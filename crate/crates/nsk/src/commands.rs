//! Command runners. Each writes its artifacts into an [`OutDir`] and
//! returns the lines of its console summary.

use std::fs::File;
use std::io::{self, BufReader};
use std::path::Path;

use nsk_core::certify::{
    carleman_row, estimate_observability, CarlemanConfig, CarlemanReport, Manufactured, ObservabilityConfig,
    LAMBDA_CAP_NOTE, TAIL_NOTE,
};
use nsk_core::dynamics::{propagate, Direction, GalerkinCutoff, ModeBlockSystem, ModeState, SystemKind, TimeGrid, Trajectory};
use nsk_core::hum::{HumConfig, HumProblem, TerminalNorm, WeightMode};
use nsk_core::nonlinear::{picard_control_loop, simulate_nonlinear, NonlinearModel, PicardConfig};
use nsk_core::params::{classify, derive_constants, DerivedConstants, StructureClassification, JORDAN_TOL};
use nsk_core::torus::{SpectralField, TorusGrid};
use nsk_core::weights::{Cutoff, WeightSet};
use nsk_core::C64;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::artifacts::{fmt, Cell, OutDir};
use crate::nskf::{self, Snapshot};
use crate::scenario::{CutoffName, Scenario, ScenarioError, TerminalName, WeightModeName};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Classify,
    Simulate,
    ControlLinear,
    ControlNonlinear,
    CarlemanCheck,
    Observability,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Simulate => "simulate",
            Command::ControlLinear => "control-linear",
            Command::ControlNonlinear => "control-nonlinear",
            Command::CarlemanCheck => "carleman-check",
            Command::Observability => "observability",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Core(#[from] nsk_core::Error),
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Usage(String),
}

impl RunError {
    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Scenario(ScenarioError::Parse { .. }) => "parse",
            RunError::Scenario(ScenarioError::Validation { .. }) => "validation",
            RunError::Core(e) if e.is_numerical() => "numerical",
            RunError::Core(_) => "validation",
            RunError::Io(_) => "io",
            RunError::Usage(_) => "usage",
        }
    }

    /// Machine-readable error record.
    pub fn record(&self) -> Value {
        let mut v = json!({
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        match self {
            RunError::Scenario(e) => {
                v["pointer"] = json!(e.pointer());
                if let ScenarioError::Validation { constraint, .. } = e {
                    v["constraint"] = json!(constraint);
                }
            }
            RunError::Core(e) => {
                let dbg = format!("{e:?}");
                let name: String = dbg.chars().take_while(|c| c.is_alphanumeric()).collect();
                v["error"] = json!(name);
                match e {
                    nsk_core::Error::PicardDivergence { factors } => v["factors"] = json!(factors),
                    nsk_core::Error::NoConvergence { iterations, residuals } => {
                        v["iterations"] = json!(iterations);
                        v["last_residual"] = json!(residuals.last());
                    }
                    _ => {}
                }
            }
            _ => {}
        }
        v
    }
}

type Result<T> = std::result::Result<T, RunError>;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: u64,
}

pub fn run(sc: &Scenario, cmd: Command, opts: &RunOptions, out: &mut OutDir) -> Result<Vec<String>> {
    match cmd {
        Command::Classify => run_classify(sc, out),
        Command::Simulate => run_simulate(sc, out),
        Command::ControlLinear => run_control_linear(sc, opts, out),
        Command::ControlNonlinear => run_control_nonlinear(sc, opts, out),
        Command::CarlemanCheck => run_carleman(sc, out),
        Command::Observability => run_observability(sc, opts, out),
    }
}

fn c64(z: C64) -> Value {
    json!([z.re, z.im])
}

/// `1`, `-0.5`, `1+5i`.
pub fn format_complex(z: C64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else {
        format!("{}{:+}i", z.re, z.im)
    }
}

fn grid(sc: &Scenario) -> Result<TorusGrid> {
    Ok(TorusGrid::new(sc.grid.dim, sc.grid.n, sc.grid.length)?)
}

fn time_grid(sc: &Scenario) -> Result<TimeGrid> {
    Ok(TimeGrid::new(sc.time.horizon, sc.time.steps)?)
}

fn constants(sc: &Scenario) -> Result<(DerivedConstants, StructureClassification)> {
    let dc = derive_constants(&sc.model.params()?)?;
    let cls = classify(&dc, JORDAN_TOL);
    Ok((dc, cls))
}

fn hum_config(sc: &Scenario, comps: usize) -> HumConfig {
    let c = &sc.control;
    HumConfig {
        epsilon: c.epsilon,
        cg_tol: c.cg_tol,
        cg_max_iters: c.cg_max_iters,
        terminal: Some(match c.terminal {
            TerminalName::L2 => TerminalNorm::l2(comps),
            TerminalName::Dual => TerminalNorm::dual(comps),
        }),
        weight_mode: match sc.weights.mode {
            WeightModeName::Plain => WeightMode::Plain,
            WeightModeName::Carleman => {
                WeightMode::Carleman { s: sc.weights.s, lambda: sc.weights.lambda, t0: sc.t0(), t1: sc.t1() }
            }
        },
    }
}

fn cutoff(sc: &Scenario, g: &TorusGrid) -> Result<GalerkinCutoff> {
    let kind = match sc.control.cutoff {
        CutoffName::Outer => Cutoff::Outer,
        CutoffName::Inner => Cutoff::Inner,
    };
    Ok(GalerkinCutoff::new(&sc.region(), kind, g)?)
}

fn picard_config(sc: &Scenario) -> PicardConfig {
    let n = &sc.nonlinear;
    PicardConfig { radius: n.radius, delta: n.delta, max_iters: n.max_iters, tol: n.tol, max_shrinks: n.max_shrinks }
}

/// Initial data from the `initial` block, unscaled.
fn initial_state(sc: &Scenario, g: &TorusGrid, comps: usize) -> Result<ModeState> {
    let l = sc.grid.length;
    let d = sc.grid.dim;
    let wave = |k: &[i64], x: &[f64; 3]| -> f64 {
        2.0 * std::f64::consts::PI / l * k.iter().zip(x.iter()).map(|(&k, &x)| k as f64 * x).sum::<f64>()
    };
    let fields: Vec<SpectralField> = match &sc.initial.components {
        Some(list) => {
            if list.len() != comps {
                return Err(ScenarioError::Validation {
                    pointer: "/initial/components".into(),
                    constraint: "one mode list per state component".into(),
                    message: format!("the system has {comps} components, got {}", list.len()),
                }
                .into());
            }
            list.iter()
                .map(|modes| {
                    SpectralField::from_fn(g, |x| {
                        modes.iter().map(|m| m.cos * wave(&m.k, x).cos() + m.sin * wave(&m.k, x).sin()).sum()
                    })
                })
                .collect()
        }
        None => {
            let mut e1 = vec![0i64; d];
            e1[0] = 1;
            let k = |m: i64| -> Vec<i64> { e1.iter().map(|v| v * m).collect() };
            let (k1, k2, k3) = (k(1), k(2), k(3));
            (0..comps)
                .map(|c| {
                    if c == 0 {
                        SpectralField::from_fn(g, |x| wave(&k1, x).sin() + 0.5 * wave(&k2, x).cos())
                    } else {
                        SpectralField::from_fn(g, |x| 0.3 * wave(&k1, x).cos() - 0.2 * wave(&k3, x).sin())
                    }
                })
                .collect()
        }
    };
    let refs: Vec<&SpectralField> = fields.iter().collect();
    Ok(ModeState::from_fields(&refs)?)
}

fn rescale(x: &mut ModeState, size: f64, target: Option<f64>) {
    if let Some(t) = target {
        if size > 0.0 {
            x.scale(t / size);
        }
    }
}

fn component_names(kind: SystemKind, comps: usize) -> Vec<String> {
    match kind {
        SystemKind::LinearizedNsk | SystemKind::AdjointNsk => {
            std::iter::once("a".to_string()).chain((1..comps).map(|i| format!("u{i}"))).collect()
        }
        _ => (0..comps).map(|c| format!("c{c}")).collect(),
    }
}

fn component_norm(x: &ModeState, c: usize) -> f64 {
    x.data.iter().skip(c).step_by(x.comps).map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn write_trajectory(out: &mut OutDir, tr: &Trajectory, names: &[String]) -> io::Result<()> {
    let mut header = vec!["t", "norm"];
    header.extend(names.iter().map(String::as_str));
    let rows = tr.states.iter().enumerate().map(|(j, x)| {
        let mut r: Vec<Cell> = vec![tr.tg.node(j).into(), x.norm(None).into()];
        r.extend((0..x.comps).map(|c| Cell::F(component_norm(x, c))));
        r
    });
    out.csv("trajectory.csv", &header, rows)
}

fn node_of(tg: &TimeGrid, t: f64) -> usize {
    ((t / tg.step()).round() as usize).min(tg.steps)
}

fn write_snapshots(out: &mut OutDir, sc: &Scenario, g: &TorusGrid, tr: &Trajectory, real: bool, prefix: &str) -> io::Result<()> {
    let mut nodes: Vec<usize> = sc.snapshot_times().iter().map(|&t| node_of(&tr.tg, t)).collect();
    nodes.sort_unstable();
    nodes.dedup();
    for j in nodes {
        out.snapshot(&format!("{prefix}_{j:05}.nskf"), &Snapshot::from_state(g, &tr.states[j], real))?;
    }
    Ok(())
}

/// `(t, ‖v_a‖, ‖v_u‖, ‖x(t)‖)` per node.
fn write_controls(out: &mut OutDir, forcing: &[ModeState], tr: &Trajectory) -> io::Result<()> {
    let rows = forcing.iter().zip(tr.states.iter()).enumerate().map(|(j, (f, x))| {
        let va = component_norm(f, 0);
        let vu = (1..f.comps).map(|c| component_norm(f, c).powi(2)).sum::<f64>().sqrt();
        vec![tr.tg.node(j).into(), va.into(), vu.into(), x.norm(None).into()]
    });
    out.csv("controls.csv", &["t", "v_a", "v_u", "terminal_so_far"], rows)
}

fn write_control_series(out: &mut OutDir, g: &TorusGrid, tg: &TimeGrid, forcing: &[ModeState], real: bool) -> io::Result<()> {
    let entries: Vec<(f64, Snapshot)> =
        forcing.iter().enumerate().map(|(j, f)| (tg.node(j), Snapshot::from_state(g, f, real))).collect();
    out.series("controls.nsks", &entries)
}

fn read_controls(path: &Path, g: &TorusGrid, tg: &TimeGrid, comps: usize, real: bool) -> Result<Vec<ModeState>> {
    let mut r = BufReader::new(File::open(path).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?);
    let entries = nskf::read_series(&mut r)?;
    if entries.len() != tg.steps + 1 {
        return Err(RunError::Usage(format!(
            "{} holds {} control nodes, the time grid has {}",
            path.display(),
            entries.len(),
            tg.steps + 1
        )));
    }
    entries
        .iter()
        .map(|(_, s)| {
            let x = s.to_state(g, real)?;
            if x.comps != comps {
                return Err(RunError::Usage(format!("controls have {} components, the system has {comps}", x.comps)));
            }
            Ok(x)
        })
        .collect()
}

fn read_snapshot(path: &Path, g: &TorusGrid, comps: usize, real: bool) -> Result<ModeState> {
    let mut r = BufReader::new(File::open(path).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?);
    let x = Snapshot::read(&mut r)?.to_state(g, real)?;
    if x.comps != comps {
        return Err(RunError::Usage(format!("initial snapshot has {} components, the system has {comps}", x.comps)));
    }
    Ok(x)
}

fn run_classify(sc: &Scenario, out: &mut OutDir) -> Result<Vec<String>> {
    let (dc, cls) = constants(sc)?;
    let summary = json!({
        "command": "classify",
        "regime": cls.regime.name(),
        "zeta_plus": c64(cls.zeta_plus),
        "zeta_minus": c64(cls.zeta_minus),
        "discriminant": cls.discriminant,
        "d": c64(cls.d),
        "kappa_star": dc.kappa_star,
        "mu_star": dc.mu_star,
        "nu_star": dc.nu_star,
        "p_star": dc.p_star,
        "viscosity_sum": dc.viscosity_sum(),
        "couplings": cls.couplings.iter().map(|z| c64(*z)).collect::<Vec<_>>(),
        "effective_couplings": cls.effective_couplings.iter().map(|z| c64(*z)).collect::<Vec<_>>(),
        "ill_conditioned": cls.ill_conditioned,
    });
    out.json("summary.json", &summary)?;
    let first = if cls.regime == nsk_core::params::Regime::Jordan {
        format!("regime={} zeta={}", cls.regime.name(), format_complex(cls.zeta_plus))
    } else {
        format!(
            "regime={} zeta_plus={} zeta_minus={}",
            cls.regime.name(),
            format_complex(cls.zeta_plus),
            format_complex(cls.zeta_minus)
        )
    };
    Ok(vec![
        first,
        format!("kappa_star={} mu_star={} nu_star={} p_star={}", dc.kappa_star, dc.mu_star, dc.nu_star, dc.p_star),
    ])
}

fn run_simulate(sc: &Scenario, out: &mut OutDir) -> Result<Vec<String>> {
    let g = grid(sc)?;
    let tg = time_grid(sc)?;
    let (dc, cls) = constants(sc)?;
    let sim = &sc.simulate;
    let nonlinear = sim.system == "nonlinear";
    let model = if nonlinear { Some(NonlinearModel::new(&sc.model.params()?, &g)?) } else { None };
    let sys = match &model {
        Some(m) => m.sys.clone(),
        None => {
            let zeta = sim.zeta.map(|[re, im]| C64::new(re, im));
            ModeBlockSystem::assemble(SystemKind::parse(&sim.system, zeta)?, &dc, Some(&cls), &g)?
        }
    };
    let forcing = match &sim.controls {
        Some(p) => Some(read_controls(&sc.resolve_path(p), &g, &tg, sys.comps, sys.real)?),
        None => None,
    };
    let x0 = match &sim.initial {
        Some(p) => read_snapshot(&sc.resolve_path(p), &g, sys.comps, sys.real)?,
        None => {
            let mut x = initial_state(sc, &g, sys.comps)?;
            let size = match &model {
                Some(m) => m.data_norm(&x),
                None => x.norm(None),
            };
            rescale(&mut x, size, sc.initial.scale_to);
            x
        }
    };
    let names = component_names(sys.kind, sys.comps);
    let mut summary = json!({
        "command": "simulate",
        "system": sim.system,
        "replayed_controls": forcing.is_some(),
    });
    let tr = match &model {
        Some(m) => {
            let nt = simulate_nonlinear(m, &x0, forcing.as_deref(), tg)?;
            summary["inf_rho"] = json!(nt.inf_rho);
            summary["max_rho_a"] = json!(nt.max_rho_a);
            nt.trajectory
        }
        None => propagate(&sys, &x0, forcing.as_deref(), tg, Direction::Forward)?,
    };
    write_trajectory(out, &tr, &names)?;
    write_snapshots(out, sc, &g, &tr, sys.real, "state")?;
    let initial_norm = tr.initial().norm(None);
    let terminal_norm = tr.terminal().norm(None);
    summary["initial_norm"] = json!(initial_norm);
    summary["terminal_norm"] = json!(terminal_norm);
    summary["reduction"] = json!(terminal_norm / initial_norm);
    out.json("summary.json", &summary)?;
    Ok(vec![
        format!("system={} replayed_controls={}", sim.system, forcing.is_some()),
        format!("initial_norm={} terminal_norm={}", fmt(initial_norm), fmt(terminal_norm)),
    ])
}

fn run_control_linear(sc: &Scenario, opts: &RunOptions, out: &mut OutDir) -> Result<Vec<String>> {
    let g = grid(sc)?;
    let tg = time_grid(sc)?;
    let (dc, cls) = constants(sc)?;
    let sys = ModeBlockSystem::assemble(SystemKind::LinearizedNsk, &dc, None, &g)?;
    let hum = HumProblem::new(&sys, cutoff(sc, &g)?, tg, hum_config(sc, sys.comps))?;
    let model = NonlinearModel::new(&sc.model.params()?, &g)?;
    let mut x0 = initial_state(sc, &g, sys.comps)?;
    let size = model.data_norm(&x0);
    rescale(&mut x0, size, sc.initial.scale_to);
    let ct = hum.solve_null_control(&x0, None)?;
    let forcing = hum.forcing_from(&ct.potentials, None);
    let names = component_names(sys.kind, sys.comps);
    write_trajectory(out, &ct.trajectory, &names)?;
    write_controls(out, &forcing, &ct.trajectory)?;
    out.csv(
        "cg_residuals.csv",
        &["iteration", "residual"],
        ct.residual_history.iter().enumerate().map(|(i, r)| vec![i.into(), (*r).into()]),
    )?;
    write_control_series(out, &g, &tg, &forcing, sys.real)?;
    out.snapshot("initial.nskf", &Snapshot::from_state(&g, &x0, sys.real))?;
    write_snapshots(out, sc, &g, &ct.trajectory, sys.real, "state")?;
    let reduction = ct.terminal_norm / ct.initial_norm;
    let summary = json!({
        "command": "control-linear",
        "regime": cls.regime.name(),
        "seed": opts.seed,
        "epsilon": sc.control.epsilon,
        "initial_norm": ct.initial_norm,
        "free_terminal_norm": ct.free_terminal_norm,
        "terminal_norm": ct.terminal_norm,
        "terminal_norm_weighted": ct.terminal_norm_w,
        "reduction": reduction,
        "control_norm": ct.control_norm,
        "control_cost": ct.control_cost,
        "cg_iterations": ct.cg_iterations,
    });
    out.json("summary.json", &summary)?;
    Ok(vec![
        format!("regime={} epsilon={:e}", cls.regime.name(), sc.control.epsilon),
        format!(
            "initial_norm={} free_terminal_norm={} terminal_norm={}",
            fmt(ct.initial_norm),
            fmt(ct.free_terminal_norm),
            fmt(ct.terminal_norm)
        ),
        format!("reduction={} control_norm={} cg_iterations={}", fmt(reduction), fmt(ct.control_norm), ct.cg_iterations),
    ])
}

fn run_control_nonlinear(sc: &Scenario, opts: &RunOptions, out: &mut OutDir) -> Result<Vec<String>> {
    let g = grid(sc)?;
    let tg = time_grid(sc)?;
    let (_, cls) = constants(sc)?;
    let model = NonlinearModel::new(&sc.model.params()?, &g)?;
    let hum = HumProblem::new(&model.sys, cutoff(sc, &g)?, tg, hum_config(sc, model.sys.comps))?;
    let mut x0 = initial_state(sc, &g, model.sys.comps)?;
    let size = model.data_norm(&x0);
    rescale(&mut x0, size, sc.initial.scale_to);
    let res = picard_control_loop(&model, &hum, &x0, &picard_config(sc))?;
    let forcing = res.state.forcing_controls(&hum);
    let rows = res.state.rows.iter().map(|r| {
        vec![
            r.k.into(),
            r.distance.into(),
            r.source_norm.into(),
            r.control_norm.into(),
            r.terminal_norm.into(),
            r.inf_rho.into(),
        ]
    });
    out.csv("picard.csv", &["k", "d_k", "source_norm", "control_norm", "terminal_norm", "inf_rho"], rows)?;
    let names = component_names(model.sys.kind, model.sys.comps);
    let tr = &res.replay.trajectory;
    write_trajectory(out, tr, &names)?;
    write_controls(out, &forcing, tr)?;
    write_control_series(out, &g, &tg, &forcing, model.sys.real)?;
    out.snapshot("initial.nskf", &Snapshot::from_state(&g, &res.initial, model.sys.real))?;
    write_snapshots(out, sc, &g, tr, model.sys.real, "state")?;
    let factor = res.state.contraction_factor();
    let reduction = res.nonlinear_terminal_norm / res.initial_norm;
    let summary = json!({
        "command": "control-nonlinear",
        "regime": cls.regime.name(),
        "seed": opts.seed,
        "iterations": res.state.rows.len(),
        "contraction_factor": factor,
        "factors": res.state.factors,
        "distances": res.state.distances,
        "scale": res.scale,
        "shrinks": res.shrinks,
        "delta": res.state.delta,
        "radius": res.state.radius,
        "initial_norm": res.initial_norm,
        "initial_data_norm": model.data_norm(&res.initial),
        "linear_terminal_norm": res.control.terminal_norm,
        "terminal_norm": res.nonlinear_terminal_norm,
        "reduction": reduction,
        "inf_rho": res.replay.inf_rho,
        "max_rho_a": res.replay.max_rho_a,
        "control_norm": res.control.control_norm,
    });
    out.json("summary.json", &summary)?;
    Ok(vec![
        format!("regime={} iterations={} contraction_factor={}", cls.regime.name(), res.state.rows.len(), fmt(factor)),
        format!("initial_norm={} terminal_norm={}", fmt(res.initial_norm), fmt(res.nonlinear_terminal_norm)),
        format!("reduction={} inf_rho={} scale={}", fmt(reduction), fmt(res.replay.inf_rho), fmt(res.scale)),
    ])
}

fn carleman_config(sc: &Scenario) -> CarlemanConfig {
    CarlemanConfig {
        s_values: sc.certify.s_values.clone(),
        lambda_values: sc.certify.lambda_values.clone(),
        t0: sc.t0(),
        t1: sc.t1(),
        suite: Manufactured::SUITE.to_vec(),
    }
}

/// Rows in the order `λ`, `s`, case, computed in parallel.
fn carleman_report(zeta: C64, g: &TorusGrid, sc: &Scenario, tg: &TimeGrid, cfg: &CarlemanConfig) -> Result<CarlemanReport> {
    let region = sc.carleman_region();
    let pairs: Vec<(f64, f64)> =
        cfg.lambda_values.iter().flat_map(|&lam| cfg.s_values.iter().map(move |&s| (lam, s))).collect();
    let sets = pairs
        .par_iter()
        .map(|&(lam, s)| WeightSet::new(g, &region, tg.horizon, cfg.t0, cfg.t1, s, lam))
        .collect::<nsk_core::Result<Vec<_>>>()?;
    let jobs: Vec<(&WeightSet, Manufactured)> =
        sets.iter().flat_map(|ws| cfg.suite.iter().map(move |&c| (ws, c))).collect();
    let rows = jobs.par_iter().map(|&(ws, case)| carleman_row(zeta, ws, tg, case)).collect::<nsk_core::Result<Vec<_>>>()?;
    Ok(CarlemanReport::assemble(zeta, cfg, rows))
}

fn write_weights(out: &mut OutDir, sc: &Scenario, g: &TorusGrid, tg: &TimeGrid) -> Result<WeightSet> {
    let ws = WeightSet::new(g, &sc.carleman_region(), tg.horizon, sc.t0(), sc.t1(), sc.weights.s, sc.weights.lambda)?;
    let mut rows = Vec::new();
    for j in 0..tg.steps {
        let t = tg.node(j);
        let v = ws.at_index(t, 0)?;
        rows.push(vec![t.into(), v.theta.into(), v.big_phi.into()]);
    }
    out.csv("weights_time.csv", &["t", "theta", "big_phi"], rows)?;
    let d = g.dim();
    let axes: Vec<String> = (1..=d).map(|a| format!("x{a}")).collect();
    let mut header: Vec<&str> = axes.iter().map(String::as_str).collect();
    header.extend(["psi", "grad_psi", "chi0", "chi"]);
    let rows = (0..g.len()).map(|i| {
        let p = g.point(i);
        let mut r: Vec<Cell> = p.iter().take(d).map(|&x| Cell::F(x)).collect();
        r.extend([
            Cell::F(ws.psi.values()[i]),
            Cell::F(ws.psi.grad_norm()[i]),
            Cell::F(ws.chi0()[i]),
            Cell::F(ws.chi()[i]),
        ]);
        r
    });
    out.csv("weights_space.csv", &header, rows)?;
    Ok(ws)
}

fn run_carleman(sc: &Scenario, out: &mut OutDir) -> Result<Vec<String>> {
    let g = grid(sc)?;
    let tg = time_grid(sc)?;
    let ws = write_weights(out, sc, &g, &tg)?;
    let cfg = carleman_config(sc);
    let mut reports = Vec::new();
    for &[re, im] in &sc.certify.zetas {
        reports.push(carleman_report(C64::new(re, im), &g, sc, &tg, &cfg)?);
    }
    let opt = |c: Option<f64>| c.unwrap_or(f64::NAN);
    let rows = reports.iter().flat_map(|rep| {
        rep.rows.iter().map(move |r| {
            let mut row: Vec<Cell> = vec![
                rep.zeta.re.into(),
                rep.zeta.im.into(),
                r.case.name().into(),
                r.s.into(),
                r.lambda.into(),
                opt(r.c_est()).into(),
                opt(r.reduced.c_est()).into(),
            ];
            row.extend(r.appendix.log_lhs.iter().chain(r.appendix.log_rhs.iter()).map(|&v| Cell::F(v)));
            row.extend([r.log_tail_bound.into(), r.log_smallest_integral.into(), r.mesh_points.into()]);
            row
        })
    });
    out.csv(
        "carleman.csv",
        &[
            "zeta_re",
            "zeta_im",
            "case",
            "s",
            "lambda",
            "c_est",
            "c_est_reduced",
            "log_lhs_0",
            "log_lhs_1",
            "log_lhs_2",
            "log_rhs_0",
            "log_rhs_1",
            "log_tail_bound",
            "log_smallest_integral",
            "mesh_points",
        ],
        rows,
    )?;
    let flags = reports.iter().flat_map(|rep| {
        rep.flags.iter().map(move |f| {
            vec![
                rep.zeta.re.into(),
                rep.zeta.im.into(),
                f.case.name().into(),
                f.lambda.into(),
                f.s_from.into(),
                f.s_to.into(),
                f.ratio.into(),
                Cell::from(if f.first_doubling { "true" } else { "false" }),
            ]
        })
    });
    out.csv("carleman_flags.csv", &["zeta_re", "zeta_im", "case", "lambda", "s_from", "s_to", "ratio", "first_doubling"], flags)?;

    let mut lines = Vec::new();
    let mut per_zeta = Vec::new();
    for rep in &reports {
        let c: Vec<f64> = rep.rows.iter().filter_map(|r| r.c_est()).collect();
        let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let bounded = rep.is_bounded(0.05);
        lines.push(format!(
            "zeta={} c_est_min={} c_est_max={} flags={} bounded={}",
            format_complex(rep.zeta),
            fmt(lo),
            fmt(hi),
            rep.flags.len(),
            bounded
        ));
        per_zeta.push(json!({
            "zeta": c64(rep.zeta),
            "c_est_min": lo,
            "c_est_max": hi,
            "flags": rep.flags.len(),
            "bounded": bounded,
        }));
    }
    let summary = json!({
        "command": "carleman-check",
        "s_values": cfg.s_values,
        "lambda_values": cfg.lambda_values,
        "zetas": per_zeta,
        "psi_min": ws.psi.min,
        "psi_max": ws.psi.max,
        "grad_margin": ws.psi.grad_margin,
        "lambda_note": LAMBDA_CAP_NOTE,
        "tail_note": TAIL_NOTE,
    });
    out.json("summary.json", &summary)?;
    lines.push(format!("psi_range=[{}, {}] grad_margin={}", fmt(ws.psi.min), fmt(ws.psi.max), fmt(ws.psi.grad_margin)));
    Ok(lines)
}

fn run_observability(sc: &Scenario, opts: &RunOptions, out: &mut OutDir) -> Result<Vec<String>> {
    let g = grid(sc)?;
    let tg = time_grid(sc)?;
    let (dc, _) = constants(sc)?;
    let sys = ModeBlockSystem::assemble(SystemKind::LinearizedNsk, &dc, None, &g)?;
    let hum = HumProblem::new(&sys, cutoff(sc, &g)?, tg, hum_config(sc, sys.comps))?;
    let cfg = ObservabilityConfig { band: sc.certify.band, tol: sc.certify.tol, max_iters: sc.certify.max_iters };
    let r = estimate_observability(&hum, &cfg, opts.seed)?;
    out.csv(
        "observability.csv",
        &[
            "band",
            "dimension",
            "seed",
            "largest",
            "largest_residual",
            "largest_iterations",
            "smallest",
            "smallest_residual",
            "smallest_iterations",
            "kappa_obs",
            "asymmetry",
            "cutoff_mean_square",
        ],
        [vec![
            r.band.into(),
            r.dimension.into(),
            Cell::I(r.seed),
            r.largest.into(),
            r.largest_residual.into(),
            r.largest_iterations.into(),
            r.smallest.into(),
            r.smallest_residual.into(),
            r.smallest_iterations.into(),
            r.kappa_obs.into(),
            r.asymmetry.into(),
            r.cutoff_mean_square.into(),
        ]],
    )?;
    let summary = json!({
        "command": "observability",
        "system": r.kind.name(),
        "horizon": r.horizon,
        "steps": r.steps,
        "full_domain": r.full_domain,
        "band": r.band,
        "dimension": r.dimension,
        "seed": r.seed,
        "largest": r.largest,
        "largest_residual": r.largest_residual,
        "smallest": r.smallest,
        "smallest_residual": r.smallest_residual,
        "kappa_obs": r.kappa_obs,
        "asymmetry": r.asymmetry,
        "cutoff_mean_square": r.cutoff_mean_square,
    });
    out.json("summary.json", &summary)?;
    Ok(vec![
        format!("dimension={} largest={} smallest={}", r.dimension, fmt(r.largest), fmt(r.smallest)),
        format!("kappa_obs={} asymmetry={}", fmt(r.kappa_obs), fmt(r.asymmetry)),
    ])
}
