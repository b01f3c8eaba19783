//! Strict JSON scenarios.
//!
//! Unknown and duplicate keys are rejected. Every block except `model`,
//! `grid` and `time` may be omitted; omitted fields take the defaults
//! listed on each field.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nsk_core::params::{classify, derive_constants, CoefficientFunction, ModelParams, JORDAN_TOL};
use nsk_core::weights::ControlRegion;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("parse error at {pointer:?}: {message}")]
    Parse { pointer: String, message: String },
    #[error("validation error at {pointer:?}: {constraint} ({message})")]
    Validation { pointer: String, constraint: String, message: String },
}

impl ScenarioError {
    pub fn pointer(&self) -> &str {
        match self {
            ScenarioError::Parse { pointer, .. } | ScenarioError::Validation { pointer, .. } => pointer,
        }
    }
}

fn invalid(pointer: &str, constraint: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { pointer: pointer.into(), constraint: constraint.into(), message: message.into() }
}

/// Coefficient lists are in powers of `ρ − ρ⋆`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    /// Default 1.
    #[serde(default = "one")]
    pub rho_star: f64,
    pub pressure: Vec<f64>,
    pub kappa: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    /// Default `rho_star / 2`.
    #[serde(default)]
    pub eta: Option<f64>,
}

impl ModelBlock {
    pub fn params(&self) -> nsk_core::Result<ModelParams> {
        ModelParams::new(
            self.rho_star,
            CoefficientFunction::shifted(self.pressure.clone(), 3),
            CoefficientFunction::shifted(self.kappa.clone(), 3),
            CoefficientFunction::shifted(self.mu.clone(), 2),
            CoefficientFunction::shifted(self.nu.clone(), 2),
            self.eta.unwrap_or(0.5 * self.rho_star),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    /// Period of every axis. Default `2π`.
    #[serde(default = "two_pi")]
    pub length: f64,
    /// Default 1.
    #[serde(default = "one_usize")]
    pub dim: usize,
    /// Points per axis, even.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBlock {
    pub horizon: f64,
    /// Default 256.
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Default `0.3 · horizon`.
    #[serde(default)]
    pub t0: Option<f64>,
    /// Default `min(0.1 · horizon, 1/4)`.
    #[serde(default)]
    pub t1: Option<f64>,
}

/// Concentric cubes `ω₀ ⋐ ω₁ ⋐ ω` given by their center and half-widths.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionBlock {
    /// Default `length / 2`.
    pub center: Option<f64>,
    /// Half-width of `ω`. Default `length / 8`.
    pub omega: Option<f64>,
    /// Default `0.9 · omega`.
    pub omega1: Option<f64>,
    /// Default `0.3 · omega`.
    pub omega0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightModeName {
    Plain,
    Carleman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsBlock {
    /// Default 16.
    #[serde(default = "default_s")]
    pub s: f64,
    /// Default 1.
    #[serde(default = "one")]
    pub lambda: f64,
    /// Default `plain`.
    #[serde(default = "default_mode")]
    pub mode: WeightModeName,
}

impl Default for WeightsBlock {
    fn default() -> Self {
        WeightsBlock { s: default_s(), lambda: 1.0, mode: default_mode() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalName {
    L2,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffName {
    Outer,
    Inner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBlock {
    /// Default 1e-8.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Default 1e-8.
    #[serde(default = "default_epsilon")]
    pub cg_tol: f64,
    /// Default 20000.
    #[serde(default = "default_cg_iters")]
    pub cg_max_iters: usize,
    /// Default `l2`.
    #[serde(default = "default_terminal")]
    pub terminal: TerminalName,
    /// Default `outer`.
    #[serde(default = "default_cutoff")]
    pub cutoff: CutoffName,
}

impl Default for ControlBlock {
    fn default() -> Self {
        ControlBlock {
            epsilon: default_epsilon(),
            cg_tol: default_epsilon(),
            cg_max_iters: default_cg_iters(),
            terminal: default_terminal(),
            cutoff: default_cutoff(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearBlock {
    /// Bound on the `H² × H¹` size of the data. Default 1e-2.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Ball radius. Default 1.
    #[serde(default = "one")]
    pub radius: f64,
    /// Default 30.
    #[serde(default = "default_picard_iters")]
    pub max_iters: usize,
    /// Default 1e-6.
    #[serde(default = "default_picard_tol")]
    pub tol: f64,
    /// Default 6.
    #[serde(default = "default_shrinks")]
    pub max_shrinks: usize,
}

impl Default for NonlinearBlock {
    fn default() -> Self {
        NonlinearBlock {
            delta: default_delta(),
            radius: 1.0,
            max_iters: default_picard_iters(),
            tol: default_picard_tol(),
            max_shrinks: default_shrinks(),
        }
    }
}

/// `cos · cos(2π k·x / L) + sin · sin(2π k·x / L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub k: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    /// One list of modes per state component. By default the first
    /// component is `sin x₁ + 0.5 cos 2x₁` and the others are
    /// `0.3 cos x₁ − 0.2 sin 3x₁` (in units of `2π / L`).
    #[serde(default)]
    pub components: Option<Vec<Vec<Mode>>>,
    /// Rescales the data to this size (`H² × H¹` for the NSK state, `L²`
    /// otherwise). Default: no rescaling.
    #[serde(default)]
    pub scale_to: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    /// `linearized_nsk`, `adjoint_nsk`, `sigma_q`, `pair_diag`,
    /// `pair_jordan`, `heat` or `nonlinear`. Default `linearized_nsk`.
    #[serde(default = "default_system")]
    pub system: String,
    /// Diffusivity of `heat` as `[re, im]`. Default `[1, 0]`.
    #[serde(default)]
    pub zeta: Option<[f64; 2]>,
    /// Control series written by a control run, relative to the scenario file.
    #[serde(default)]
    pub controls: Option<String>,
    /// Initial snapshot written by a control run, relative to the scenario file.
    #[serde(default)]
    pub initial: Option<String>,
}

impl Default for SimulateBlock {
    fn default() -> Self {
        SimulateBlock { system: default_system(), zeta: None, controls: None, initial: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyBlock {
    /// Default `[[1, 0], [1, 5]]`.
    #[serde(default = "default_zetas")]
    pub zetas: Vec<[f64; 2]>,
    /// Increasing. Default `[4, 8, 16, 32, 64]`.
    #[serde(default = "default_s_values")]
    pub s_values: Vec<f64>,
    /// Default `[1, 1.5, 2]`.
    #[serde(default = "default_lambda_values")]
    pub lambda_values: Vec<f64>,
    /// Probe band of the Gramian. Default 6.
    #[serde(default = "default_band")]
    pub band: usize,
    /// Default 1e-9.
    #[serde(default = "default_eig_tol")]
    pub tol: f64,
    /// Default 20000.
    #[serde(default = "default_cg_iters")]
    pub max_iters: usize,
    /// Region of the Carleman weights, with the defaults of `region`.
    /// Default: the control region.
    #[serde(default)]
    pub region: Option<RegionBlock>,
}

impl Default for CertifyBlock {
    fn default() -> Self {
        CertifyBlock {
            zetas: default_zetas(),
            s_values: default_s_values(),
            lambda_values: default_lambda_values(),
            band: default_band(),
            tol: default_eig_tol(),
            max_iters: default_cg_iters(),
            region: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsBlock {
    /// Times of the NSKF snapshots, rounded to the nearest node.
    /// Default `[0, horizon]`.
    #[serde(default)]
    pub snapshot_times: Option<Vec<f64>>,
}

/// A parsed scenario. After [`parse_scenario`] every optional field
/// holds its resolved value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model: ModelBlock,
    pub grid: GridBlock,
    pub time: TimeBlock,
    #[serde(default)]
    pub region: RegionBlock,
    #[serde(default)]
    pub weights: WeightsBlock,
    #[serde(default)]
    pub control: ControlBlock,
    #[serde(default)]
    pub nonlinear: NonlinearBlock,
    #[serde(default)]
    pub initial: InitialBlock,
    #[serde(default)]
    pub simulate: SimulateBlock,
    #[serde(default)]
    pub certify: CertifyBlock,
    #[serde(default)]
    pub outputs: OutputsBlock,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn two_pi() -> f64 {
    2.0 * PI
}
fn default_steps() -> usize {
    256
}
fn default_s() -> f64 {
    16.0
}
fn default_mode() -> WeightModeName {
    WeightModeName::Plain
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_cg_iters() -> usize {
    20_000
}
fn default_terminal() -> TerminalName {
    TerminalName::L2
}
fn default_cutoff() -> CutoffName {
    CutoffName::Outer
}
fn default_delta() -> f64 {
    1e-2
}
fn default_picard_iters() -> usize {
    30
}
fn default_picard_tol() -> f64 {
    1e-6
}
fn default_shrinks() -> usize {
    6
}
fn default_system() -> String {
    "linearized_nsk".into()
}
fn default_zetas() -> Vec<[f64; 2]> {
    vec![[1.0, 0.0], [1.0, 5.0]]
}
fn default_s_values() -> Vec<f64> {
    vec![4.0, 8.0, 16.0, 32.0, 64.0]
}
fn default_lambda_values() -> Vec<f64> {
    vec![1.0, 1.5, 2.0]
}
fn default_band() -> usize {
    6
}
fn default_eig_tol() -> f64 {
    1e-9
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } | Segment::Enum { variant: key } => {
                out.push_str(&key.replace('~', "~0").replace('/', "~1"))
            }
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let raw: Scenario = serde_path_to_error::deserialize(&mut de).map_err(|e| ScenarioError::Parse {
        pointer: pointer_of(e.path()),
        message: e.inner().to_string(),
    })?;
    de.end().map_err(|e| ScenarioError::Parse { pointer: String::new(), message: e.to_string() })?;
    raw.resolve()
}

/// Reads a scenario file; relative paths inside it resolve against its directory.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Parse { pointer: String::new(), message: format!("{}: {e}", path.display()) })?;
    let mut s = parse_scenario(&text)?;
    s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(s)
}

fn resolve_region(r: &mut RegionBlock, dim: usize, l: f64, pointer: &str) -> Result<(), ScenarioError> {
    let center = *r.center.get_or_insert(0.5 * l);
    let w = *r.omega.get_or_insert(0.125 * l);
    let w1 = *r.omega1.get_or_insert(0.9 * w);
    let w0 = *r.omega0.get_or_insert(0.3 * w);
    if !(0.0 < w0 && w0 < w1 && w1 < w && 2.0 * w < l && center.is_finite()) {
        return Err(invalid(
            pointer,
            "0 < omega0 < omega1 < omega < length / 2",
            format!("omega0 = {w0}, omega1 = {w1}, omega = {w}, length = {l}"),
        ));
    }
    ControlRegion::concentric(dim, l, center, w, w1, w0).map_err(|e| invalid(pointer, "region nesting", e.to_string()))?;
    Ok(())
}

fn build_region(r: &RegionBlock, dim: usize, l: f64) -> ControlRegion {
    ControlRegion::concentric(
        dim,
        l,
        r.center.expect("resolved"),
        r.omega.expect("resolved"),
        r.omega1.expect("resolved"),
        r.omega0.expect("resolved"),
    )
    .expect("validated")
}

fn finite_positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl Scenario {
    fn resolve(mut self) -> Result<Self, ScenarioError> {
        let m = &mut self.model;
        if m.pressure.is_empty() || m.kappa.is_empty() || m.mu.is_empty() || m.nu.is_empty() {
            return Err(invalid("/model", "coefficient lists are nonempty", "every coefficient function needs at least one term"));
        }
        m.eta = Some(m.eta.unwrap_or(0.5 * m.rho_star));
        let params = m.params().map_err(|e| invalid("/model", "rho_star > 0 and 0 < eta < rho_star", e.to_string()))?;
        derive_constants(&params).map_err(|e| invalid("/model", "H1 at rho_star", e.to_string()))?;

        let g = &self.grid;
        if !(1..=3).contains(&g.dim) {
            return Err(invalid("/grid/dim", "dim in {1, 2, 3}", format!("dim = {}", g.dim)));
        }
        if g.n < 8 || g.n % 2 != 0 {
            return Err(invalid("/grid/n", "n even and at least 8", format!("n = {}", g.n)));
        }
        if !finite_positive(g.length) {
            return Err(invalid("/grid/length", "length > 0", format!("length = {}", g.length)));
        }
        let l = g.length;

        let t = &mut self.time;
        if !finite_positive(t.horizon) {
            return Err(invalid("/time/horizon", "horizon > 0", format!("horizon = {}", t.horizon)));
        }
        if t.steps == 0 {
            return Err(invalid("/time/steps", "steps >= 1", "steps = 0"));
        }
        let t0 = *t.t0.get_or_insert(0.3 * t.horizon);
        let t1 = *t.t1.get_or_insert((0.1 * t.horizon).min(0.25));
        if !(finite_positive(t0) && finite_positive(t1) && t0 + 2.0 * t1 < t.horizon) {
            return Err(invalid(
                "/time",
                "t0 + 2 t1 < horizon",
                format!("t0 = {t0}, t1 = {t1}, horizon = {}", t.horizon),
            ));
        }
        if t1 > 0.25 {
            return Err(invalid("/time/t1", "t1 <= 1/4", format!("t1 = {t1}")));
        }

        resolve_region(&mut self.region, self.grid.dim, l, "/region")?;

        let wb = &self.weights;
        if !(wb.s >= 1.0 && wb.lambda >= 1.0 && wb.s.is_finite() && wb.lambda.is_finite()) {
            return Err(invalid("/weights", "s >= 1 and lambda >= 1", format!("s = {}, lambda = {}", wb.s, wb.lambda)));
        }

        let c = &self.control;
        if !finite_positive(c.epsilon) {
            return Err(invalid("/control/epsilon", "epsilon > 0", format!("epsilon = {}", c.epsilon)));
        }
        if !finite_positive(c.cg_tol) {
            return Err(invalid("/control/cg_tol", "cg_tol > 0", format!("cg_tol = {}", c.cg_tol)));
        }
        if c.cg_max_iters == 0 {
            return Err(invalid("/control/cg_max_iters", "cg_max_iters >= 1", "cg_max_iters = 0"));
        }

        let nl = &self.nonlinear;
        for (name, v) in [("delta", nl.delta), ("radius", nl.radius), ("tol", nl.tol)] {
            if !finite_positive(v) {
                return Err(invalid(&format!("/nonlinear/{name}"), &format!("{name} > 0"), format!("{name} = {v}")));
            }
        }
        if nl.max_iters == 0 {
            return Err(invalid("/nonlinear/max_iters", "max_iters >= 1", "max_iters = 0"));
        }

        if let Some(comps) = &self.initial.components {
            for (i, modes) in comps.iter().enumerate() {
                for (j, md) in modes.iter().enumerate() {
                    if md.k.len() != self.grid.dim {
                        return Err(invalid(
                            &format!("/initial/components/{i}/{j}/k"),
                            "one wavenumber per axis",
                            format!("got {} for dim {}", md.k.len(), self.grid.dim),
                        ));
                    }
                    if md.k.iter().any(|k| k.unsigned_abs() as usize >= self.grid.n / 2) {
                        return Err(invalid(
                            &format!("/initial/components/{i}/{j}/k"),
                            "|k| < n / 2",
                            format!("k = {:?}", md.k),
                        ));
                    }
                }
            }
        }
        if let Some(s) = self.initial.scale_to {
            if !(s.is_finite() && s >= 0.0) {
                return Err(invalid("/initial/scale_to", "scale_to >= 0", format!("scale_to = {s}")));
            }
        }

        const SYSTEMS: [&str; 7] = ["linearized_nsk", "adjoint_nsk", "sigma_q", "pair_diag", "pair_jordan", "heat", "nonlinear"];
        if !SYSTEMS.contains(&self.simulate.system.as_str()) {
            return Err(invalid("/simulate/system", "known system", format!("unknown system {:?}", self.simulate.system)));
        }
        if let Some([re, _]) = self.simulate.zeta {
            if !(re > 0.0) {
                return Err(invalid("/simulate/zeta", "Re zeta > 0", format!("Re zeta = {re}")));
            }
        }
        if self.simulate.controls.is_none() && self.simulate.initial.is_some() {
            return Err(invalid("/simulate/initial", "initial snapshot comes with controls", "controls path missing"));
        }
        let pair = self.simulate.system.starts_with("pair_");
        if pair {
            let regime = classify(&derive_constants(&params).expect("checked above"), JORDAN_TOL).regime;
            let jordan = regime == nsk_core::params::Regime::Jordan;
            if jordan != (self.simulate.system == "pair_jordan") {
                return Err(invalid(
                    "/simulate/system",
                    "pair system matches the regime",
                    format!("{} regime with {}", regime.name(), self.simulate.system),
                ));
            }
        }

        if let Some(r) = self.certify.region.as_mut() {
            resolve_region(r, self.grid.dim, l, "/certify/region")?;
        }
        let cb = &self.certify;
        if cb.zetas.is_empty() || cb.zetas.iter().any(|z| !(z[0] > 0.0 && z[1].is_finite())) {
            return Err(invalid("/certify/zetas", "Re zeta > 0", format!("zetas = {:?}", cb.zetas)));
        }
        if cb.s_values.is_empty() || cb.s_values.iter().any(|&s| !(s >= 1.0)) || cb.s_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("/certify/s_values", "increasing and >= 1", format!("s_values = {:?}", cb.s_values)));
        }
        if cb.lambda_values.is_empty() || cb.lambda_values.iter().any(|&l| !(l >= 1.0)) {
            return Err(invalid("/certify/lambda_values", "lambda >= 1", format!("lambda_values = {:?}", cb.lambda_values)));
        }
        if cb.band == 0 || cb.band >= self.grid.n / 2 {
            return Err(invalid("/certify/band", "1 <= band < n / 2", format!("band = {}", cb.band)));
        }
        if !finite_positive(cb.tol) || cb.max_iters == 0 {
            return Err(invalid("/certify", "tol > 0 and max_iters >= 1", format!("tol = {}", cb.tol)));
        }

        let horizon = self.time.horizon;
        let times = self.outputs.snapshot_times.get_or_insert_with(|| vec![0.0, horizon]);
        if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && **t <= horizon)) {
            return Err(invalid("/outputs/snapshot_times", "0 <= t <= horizon", format!("t = {t}")));
        }
        Ok(self)
    }

    pub fn t0(&self) -> f64 {
        self.time.t0.expect("resolved")
    }

    pub fn t1(&self) -> f64 {
        self.time.t1.expect("resolved")
    }

    pub fn region(&self) -> ControlRegion {
        build_region(&self.region, self.grid.dim, self.grid.length)
    }

    /// Region of the Carleman weights: `certify.region` if given, else `region`.
    pub fn carleman_region(&self) -> ControlRegion {
        match &self.certify.region {
            Some(r) => build_region(r, self.grid.dim, self.grid.length),
            None => self.region(),
        }
    }

    pub fn snapshot_times(&self) -> &[f64] {
        self.outputs.snapshot_times.as_deref().unwrap_or(&[])
    }

    pub fn resolve_path(&self, p: &str) -> PathBuf {
        self.base_dir.join(p)
    }
}
