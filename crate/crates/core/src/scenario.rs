//! JSON scenarios: parsing, validation and dispatch to the numerics.
//!
//! A scenario produces a set of named CSV files plus a metadata document. Sweep points run on a
//! rayon pool of the requested size; results are collected in sweep order, so the output does
//! not depend on the worker count.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bath::{BathKernels, BathParams, Spectrum, TimeGrid};
use crate::error::{Error, Result};
use crate::oracle::{log_discretization, propagate, TruncatedModel};
use crate::output::{self, Table};
use crate::sectors::q_coeffs;
use crate::spinbath::{self, PhaseConvention, SpinBathSettings};
use crate::tls::{
    integrate, steady_state, DynamicsSettings, InitialTls, SteadySettings, SystemParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dynamics,
    Steady,
    Mqs,
    Oracle,
    Kernels,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Dynamics => "dynamics",
            Mode::Steady => "steady",
            Mode::Mqs => "mqs",
            Mode::Oracle => "oracle",
            Mode::Kernels => "kernels",
        }
    }
}

/// Parameters that can be swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "epsilon")]
    Epsilon,
    #[serde(rename = "J")]
    J,
    #[serde(rename = "alpha")]
    Alpha,
    #[serde(rename = "gamma")]
    Gamma,
    #[serde(rename = "kappa1")]
    Kappa1,
    #[serde(rename = "kappa2")]
    Kappa2,
    #[serde(rename = "kappa3")]
    Kappa3,
    #[serde(rename = "omega_c")]
    OmegaC,
    #[serde(rename = "beta")]
    Beta,
}

impl SweepParameter {
    /// Column header, identical to the config key.
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Epsilon => "epsilon",
            SweepParameter::J => "J",
            SweepParameter::Alpha => "alpha",
            SweepParameter::Gamma => "gamma",
            SweepParameter::Kappa1 => "kappa1",
            SweepParameter::Kappa2 => "kappa2",
            SweepParameter::Kappa3 => "kappa3",
            SweepParameter::OmegaC => "omega_c",
            SweepParameter::Beta => "beta",
        }
    }

    pub fn apply(self, system: &mut SystemParams, bath: &mut BathParams, value: f64) {
        match self {
            SweepParameter::Epsilon => system.epsilon = value,
            SweepParameter::J => system.j = value,
            SweepParameter::Alpha => system.alpha = value,
            SweepParameter::Gamma => system.gamma = value,
            SweepParameter::Kappa1 => bath.kappa1 = value,
            SweepParameter::Kappa2 => bath.kappa2 = value,
            SweepParameter::Kappa3 => bath.kappa3 = value,
            SweepParameter::OmegaC => bath.omega_c = value,
            SweepParameter::Beta => bath.beta = value,
        }
    }
}

/// Evenly spaced grid including both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<Range>,
}

impl Sweep {
    /// Grid points; `range` is expanded as start + (stop − start)·i/(count − 1).
    pub fn grid(&self) -> Result<Vec<f64>> {
        let grid = match (&self.values, &self.range) {
            (Some(v), None) => v.clone(),
            (None, Some(r)) => {
                if r.count < 2 {
                    return Err(Error::validation("run.sweep.range.count", "must be ≥ 2"));
                }
                let span = r.stop - r.start;
                let last = (r.count - 1) as f64;
                (0..r.count)
                    .map(|i| r.start + span * i as f64 / last)
                    .collect()
            }
            _ => {
                return Err(Error::validation(
                    "run.sweep",
                    "give exactly one of `values` or `range`",
                ))
            }
        };
        if grid.is_empty() {
            return Err(Error::validation("run.sweep.values", "must not be empty"));
        }
        if let Some(x) = grid.iter().find(|x| !x.is_finite()) {
            return Err(Error::validation(
                "run.sweep.values",
                format!("must be finite, got {x}"),
            ));
        }
        let increasing = grid.windows(2).all(|w| w[1] > w[0]);
        let decreasing = grid.windows(2).all(|w| w[1] < w[0]);
        if !(increasing || decreasing) {
            return Err(Error::validation(
                "run.sweep.values",
                "must be strictly monotone",
            ));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyOptions {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_t_cap")]
    pub t_cap: f64,
}

fn default_tolerance() -> f64 {
    SteadySettings::default().tolerance
}

fn default_t_cap() -> f64 {
    SteadySettings::default().t_cap
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            tolerance: default_tolerance(),
            t_cap: default_t_cap(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleOptions {
    /// Number of discretized boson modes.
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Fock cutoff per mode.
    #[serde(default = "default_n_max")]
    pub n_max: usize,
}

fn default_modes() -> usize {
    2
}

fn default_n_max() -> usize {
    6
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            modes: default_modes(),
            n_max: default_n_max(),
        }
    }
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Optional when the CLI subcommand names the mode.
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub initial_tls: InitialTls,
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Also write per-sector α_m(t) (single dynamics runs).
    #[serde(default)]
    pub sector_detail: bool,
    #[serde(default)]
    pub phase: PhaseConvention,
    /// Also write the final [Θ_S]_{mn} (mqs runs).
    #[serde(default)]
    pub dump_matrix: bool,
    #[serde(default)]
    pub steady: SteadyOptions,
    #[serde(default)]
    pub oracle: OracleOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    pub stem: String,
}

fn default_directory() -> PathBuf {
    PathBuf::from(".")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub system: SystemParams,
    pub bath: BathParams,
    pub run: RunSpec,
    pub output: OutputSpec,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn mode(&self) -> Result<Mode> {
        self.run.mode.ok_or_else(|| {
            Error::validation("run.mode", "required unless the subcommand names the mode")
        })
    }

    fn t_max(&self) -> Result<f64> {
        match self.run.t_max {
            Some(t) if t.is_finite() && t > 0.0 => Ok(t),
            Some(t) => Err(Error::validation(
                "run.t_max",
                format!("must be finite and > 0, got {t}"),
            )),
            None => Err(Error::validation(
                "run.t_max",
                format!(
                    "required for {} runs",
                    self.run.mode.map_or("these", Mode::name)
                ),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mode = self.mode()?;
        self.system.validate()?;
        self.bath.validate()?;
        if let Some(dt) = self.run.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::validation(
                    "run.dt",
                    format!("must be finite and > 0, got {dt}"),
                ));
            }
        }
        if self.run.stride == 0 {
            return Err(Error::validation("run.stride", "must be ≥ 1"));
        }
        if self.output.stem.is_empty() || self.output.stem.contains(['/', '\\']) {
            return Err(Error::validation(
                "output.stem",
                "must be a non-empty file name without separators",
            ));
        }
        if mode != Mode::Steady {
            self.t_max()?;
        }
        if let Some(sweep) = &self.run.sweep {
            if !matches!(mode, Mode::Dynamics | Mode::Steady) {
                return Err(Error::validation(
                    "run.sweep",
                    format!("not supported in {} mode", mode.name()),
                ));
            }
            for v in sweep.grid()? {
                let (mut s, mut b) = (self.system, self.bath);
                sweep.parameter.apply(&mut s, &mut b, v);
                s.validate()?;
                b.validate()?;
            }
        }
        let st = &self.run.steady;
        if !(st.tolerance > 0.0 && st.tolerance.is_finite()) {
            return Err(Error::validation(
                "run.steady.tolerance",
                "must be finite and > 0",
            ));
        }
        if !(st.t_cap > 0.0 && st.t_cap.is_finite()) {
            return Err(Error::validation(
                "run.steady.t_cap",
                "must be finite and > 0",
            ));
        }
        if mode == Mode::Oracle {
            self.oracle_model()?.validate()?;
        }
        Ok(())
    }

    /// Sweep points with the (system, bath) they resolve to; a single point without a sweep.
    fn points(&self) -> Result<Vec<(Option<f64>, SystemParams, BathParams)>> {
        match &self.run.sweep {
            None => Ok(vec![(None, self.system, self.bath)]),
            Some(sweep) => Ok(sweep
                .grid()?
                .into_iter()
                .map(|v| {
                    let (mut s, mut b) = (self.system, self.bath);
                    sweep.parameter.apply(&mut s, &mut b, v);
                    (Some(v), s, b)
                })
                .collect()),
        }
    }

    /// Discretized model used by oracle runs; κ₂ is realized as sign(κ₂)·√(κ₁κ₃).
    pub fn oracle_model(&self) -> Result<TruncatedModel> {
        let sign = if self.bath.kappa2 < 0.0 { -1.0 } else { 1.0 };
        let modes = log_discretization(&self.bath, self.run.oracle.modes, sign)?;
        Ok(TruncatedModel {
            n_spins: self.system.n,
            modes,
            n_max: self.run.oracle.n_max,
            epsilon: self.system.epsilon,
            j: self.system.j,
            gamma: self.system.gamma,
            alpha: self.system.alpha,
            beta: self.bath.beta,
        })
    }
}

/// One CSV produced by a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

/// Files and metadata of a finished scenario.
#[derive(Debug, Clone)]
pub struct Report {
    pub mode: Mode,
    pub files: Vec<OutputFile>,
    /// Mode-specific diagnostics recorded in the sidecar.
    pub diagnostics: Value,
    pub grid: Value,
}

impl Report {
    pub fn file(&self, suffix: &str) -> Option<&OutputFile> {
        self.files.iter().find(|f| f.name.ends_with(suffix))
    }

    /// Sidecar document with the resolved scenario, grid, thread count and library version.
    pub fn metadata(&self, scenario: &Scenario, threads: usize) -> Value {
        let mut resolved = scenario.clone();
        resolved.run.mode = Some(self.mode);
        json!({
            "library": { "name": "dualbath", "version": env!("CARGO_PKG_VERSION") },
            "mode": self.mode.name(),
            "threads": threads,
            "scenario": resolved,
            "grid": self.grid,
            "files": self.files.iter().map(|f| f.name.clone()).collect::<Vec<_>>(),
            "diagnostics": self.diagnostics,
        })
    }
}

/// Validate and run `scenario` on a pool of `threads` workers.
pub fn execute(scenario: &Scenario, threads: usize) -> Result<Report> {
    scenario.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::validation("threads", e.to_string()))?;
    pool.install(|| match scenario.mode()? {
        Mode::Dynamics => run_dynamics(scenario),
        Mode::Steady => run_steady(scenario),
        Mode::Mqs => run_mqs(scenario),
        Mode::Oracle => run_oracle(scenario),
        Mode::Kernels => run_kernels(scenario),
    })
}

fn file(scenario: &Scenario, suffix: &str, table: &Table) -> OutputFile {
    OutputFile {
        name: format!("{}_{suffix}.csv", scenario.output.stem),
        contents: table.to_csv(),
    }
}

fn dynamics_settings(scenario: &Scenario) -> Result<DynamicsSettings> {
    Ok(DynamicsSettings {
        t_max: scenario.t_max()?,
        dt: scenario.run.dt,
        initial: scenario.run.initial_tls,
        stride: scenario.run.stride,
    })
}

fn run_dynamics(scenario: &Scenario) -> Result<Report> {
    let settings = dynamics_settings(scenario)?;
    let points = scenario.points()?;
    let runs: Vec<_> = points
        .par_iter()
        .map(|(_, s, b)| integrate(s, &Spectrum::Cubic(*b), &settings))
        .collect::<Result<Vec<_>>>()?;
    let dts: Vec<f64> = runs.iter().map(|r| r.dt).collect();
    let grid = json!({ "t_max": settings.t_max, "dt": dts, "stride": settings.stride });
    let mut files = Vec::new();
    match &scenario.run.sweep {
        None => {
            let tr = &runs[0];
            files.push(file(scenario, "trajectory", &output::trajectory_table(tr)));
            if scenario.run.sector_detail {
                files.push(file(scenario, "alpha", &output::alpha_table(tr)));
            }
        }
        Some(sweep) => {
            let mut table =
                Table::new(&["t", sweep.parameter.name(), output::SURFACE_VALUE_COLUMN]);
            for ((v, _, _), tr) in points.iter().zip(&runs) {
                for (t, z) in tr.t.iter().zip(&tr.sigma_z) {
                    table.push_numbers(&[*t, v.unwrap_or_default(), *z]);
                }
            }
            files.push(file(scenario, "surface", &table));
        }
    }
    let diagnostics = json!({
        "max_sigma_z": runs.iter().map(|r| r.sigma_z.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect::<Vec<_>>(),
    });
    Ok(Report {
        mode: Mode::Dynamics,
        files,
        diagnostics,
        grid,
    })
}

fn run_steady(scenario: &Scenario) -> Result<Report> {
    let settings = SteadySettings {
        dt: scenario.run.dt,
        tolerance: scenario.run.steady.tolerance,
        t_cap: scenario.run.steady.t_cap,
    };
    let points = scenario.points()?;
    let states: Vec<_> = points
        .par_iter()
        .map(|(_, s, b)| steady_state(s, &Spectrum::Cubic(*b), &settings))
        .collect::<Result<Vec<_>>>()?;
    let name = scenario
        .run
        .sweep
        .as_ref()
        .map_or("gamma", |s| s.parameter.name());
    let mut table = Table::new(&[name, output::STEADY_VALUE_COLUMN]);
    for ((v, s, _), st) in points.iter().zip(&states) {
        // without a sweep the row is labelled by γ
        table.push_numbers(&[v.unwrap_or(s.gamma), st.p1]);
    }
    let diagnostics = json!({
        "converged": states.iter().map(|s| s.converged).collect::<Vec<_>>(),
        "t_final": states.iter().map(|s| s.t_final).collect::<Vec<_>>(),
    });
    let grid =
        json!({ "dt": settings.dt, "tolerance": settings.tolerance, "t_cap": settings.t_cap });
    Ok(Report {
        mode: Mode::Steady,
        files: vec![file(scenario, "steady", &table)],
        diagnostics,
        grid,
    })
}

fn run_mqs(scenario: &Scenario) -> Result<Report> {
    let spectrum = Spectrum::Cubic(scenario.bath);
    let settings = SpinBathSettings {
        t_max: scenario.t_max()?,
        dt: scenario.run.dt,
        phase: scenario.run.phase,
        initial: scenario.run.initial_tls,
        stride: scenario.run.stride,
    };
    let run = spinbath::evolve(&scenario.system, &spectrum, &settings)?;
    let q = q_coeffs(scenario.system.n)?;
    let reference: Vec<_> = run
        .t
        .iter()
        .map(|&t| {
            spinbath::mqs_reference(t, scenario.system.n, &spectrum)
                .map(|m| spinbath::theta_pm(&m, &q))
        })
        .collect::<Result<_>>()?;
    let mut files = vec![
        file(scenario, "theta", &output::theta_table(&run)),
        file(
            scenario,
            "reference",
            &output::theta_series(&run.t, &reference),
        ),
    ];
    if scenario.run.dump_matrix {
        files.push(file(
            scenario,
            "theta_matrix",
            &output::matrix_table(&run.final_matrix, scenario.system.n),
        ));
    }
    let tau = spinbath::tau_mqs(&spectrum, 10.0 / scenario.bath.omega_c).ok();
    let diagnostics = json!({
        "tau_mqs": tau,
        "trace_drift": run.trace_drift(),
        "hermiticity": run.hermiticity,
    });
    let grid = json!({ "t_max": settings.t_max, "dt": run.dt, "stride": settings.stride });
    Ok(Report {
        mode: Mode::Mqs,
        files,
        diagnostics,
        grid,
    })
}

fn run_oracle(scenario: &Scenario) -> Result<Report> {
    let model = scenario.oracle_model()?;
    let spectrum = Spectrum::Discrete {
        modes: model.modes.clone(),
        beta: model.beta,
    };
    let tcl = integrate(&scenario.system, &spectrum, &dynamics_settings(scenario)?)?;
    let exact = propagate(&model, scenario.run.initial_tls, &tcl.t)?;
    let sup = tcl
        .sigma_z
        .iter()
        .zip(&exact.sigma_z)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let sign = if scenario.bath.kappa2 < 0.0 {
        -1.0
    } else {
        1.0
    };
    let diagnostics = json!({
        "sup_sigma_z_difference": sup,
        "norm_drift": exact.norm_drift,
        "energy_drift": exact.energy_drift,
        "cutoff_tail": exact.cutoff_tail,
        "cutoff_adequate": exact.cutoff_adequate(),
        "realized_kappa2": sign * (scenario.bath.kappa1 * scenario.bath.kappa3).sqrt(),
        "modes": model.modes,
    });
    let grid = json!({ "t_max": scenario.run.t_max, "dt": tcl.dt, "stride": scenario.run.stride, "n_max": model.n_max });
    Ok(Report {
        mode: Mode::Oracle,
        files: vec![
            file(scenario, "oracle", &output::oracle_table(&exact)),
            file(scenario, "trajectory", &output::trajectory_table(&tcl)),
        ],
        diagnostics,
        grid,
    })
}

fn run_kernels(scenario: &Scenario) -> Result<Report> {
    let h = scenario.run.dt.unwrap_or(0.01);
    let grid = TimeGrid::covering(scenario.t_max()?, h);
    let k = BathKernels::build(
        &Spectrum::Cubic(scenario.bath),
        scenario.system.j,
        scenario.system.gamma,
        grid,
    );
    let mut table = Table::new(&output::KERNEL_COLUMNS);
    for i in (0..k.len()).step_by(scenario.run.stride) {
        table.push_numbers(&[grid.t(i), k.phi1(i), k.phi2(i), k.psi1(i)]);
    }
    let c = k.constants;
    let diagnostics = json!({
        "theta": c.theta,
        "j_tilde": c.j_tilde,
        "gamma_tilde": c.gamma_tilde,
        "eta": c.eta,
    });
    Ok(Report {
        mode: Mode::Kernels,
        files: vec![file(scenario, "kernels", &table)],
        diagnostics,
        grid: json!({ "h": h, "points": k.len() }),
    })
}
