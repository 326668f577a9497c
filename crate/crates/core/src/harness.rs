//! Scenario files, parameter sweeps, Monte-Carlo ensembles and tabular
//! output.
//!
//! Lengths are micrometers at this interface and meters everywhere else.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constants::MICRON;
use crate::correlations::{maximize_over_partitions, PartitionConstraints, Quantifier};
use crate::dynamics::steady_state;
use crate::environment::{
    compute_rates, scale_temperatures, Backend, CoefficientTable, EnvConfig, PhenomenologicalParams,
};
use crate::error::{Error, Result};
use crate::geometry::{circle_layout, gaussian_perturb, Layout, RNG_ID};
use crate::model::{
    check_complete_positivity, resonant_pairs, DissipatorLabel, Liouvillian, SystemSpec,
};
use crate::thermodynamics::{
    collective_temperature, flux_report, qubit_state, stationary_entropy_production,
    CollectiveSearch, EntropyKernels, KernelMode,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n_q: usize,
    /// rad/s.
    pub omega_q: f64,
    pub omega_1: f64,
    /// Defaults to `omega_q`.
    pub omega_2: Option<f64>,
    /// Defaults to `omega_1 + omega_2`.
    pub omega_3: Option<f64>,
    /// C·m.
    #[serde(default = "default_dipole")]
    pub qubit_dipole: f64,
    #[serde(default = "default_machine_dipoles")]
    pub machine_dipoles: [f64; 3],
}

fn default_dipole() -> f64 {
    1e-30
}

fn default_machine_dipoles() -> [f64; 3] {
    [1e-30; 3]
}

impl SystemSection {
    pub fn spec(&self) -> SystemSpec {
        let omega_2 = self.omega_2.unwrap_or(self.omega_q);
        SystemSpec {
            n_q: self.n_q,
            omega_q: self.omega_q,
            omega_1: self.omega_1,
            omega_2,
            omega_3: self.omega_3.unwrap_or(self.omega_1 + omega_2),
            qubit_dipole: self.qubit_dipole,
            machine_dipoles: self.machine_dipoles,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSection {
    /// Must agree with `system.n_q` when given.
    pub n_q: Option<usize>,
    /// μm.
    pub r: f64,
    /// μm.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSection {
    Equilibrium,
    Phenomenological {
        /// μm.
        #[serde(default = "default_z0")]
        z0: f64,
        #[serde(default = "default_p")]
        p: f64,
        #[serde(default = "default_resonant_amplitude")]
        resonant_amplitude: f64,
        #[serde(default = "default_off_resonant_amplitude")]
        off_resonant_amplitude: f64,
        #[serde(default = "default_width")]
        width: f64,
        #[serde(default)]
        amplitudes: BTreeMap<String, f64>,
    },
    Tabulated {
        /// Relative paths resolve against the scenario file's directory.
        path: PathBuf,
    },
}

fn default_z0() -> f64 {
    3.0
}
fn default_p() -> f64 {
    2.0
}
fn default_resonant_amplitude() -> f64 {
    10.0
}
fn default_off_resonant_amplitude() -> f64 {
    1.0
}
fn default_width() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    /// K.
    pub t_s: f64,
    /// K.
    pub t_w: f64,
    /// μm.
    pub delta: f64,
    /// rad/s.
    pub omega_s: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub backend: BackendSection,
}

fn default_epsilon() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationScope {
    /// Partitions of the qubits only.
    #[default]
    Qubits,
    /// Partitions of the machine and the qubits.
    All,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Observables {
    #[serde(default = "yes")]
    pub temperatures: bool,
    #[serde(default = "yes")]
    pub fluxes: bool,
    #[serde(default = "yes")]
    pub entropy: bool,
    #[serde(default)]
    pub entropy_kernels: KernelMode,
    #[serde(default = "yes")]
    pub collective_temperature: bool,
    #[serde(default)]
    pub correlations: Vec<Quantifier>,
    #[serde(default)]
    pub correlation_scope: CorrelationScope,
}

fn yes() -> bool {
    true
}

impl Default for Observables {
    fn default() -> Self {
        Self {
            temperatures: true,
            fluxes: true,
            entropy: true,
            entropy_kernels: KernelMode::Full,
            collective_temperature: true,
            correlations: Vec::new(),
            correlation_scope: CorrelationScope::Qubits,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Z,
    Epsilon,
    R,
    NQ,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Z => "z",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::R => "r",
            SweepAxis::NQ => "n_q",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub min: f64,
    pub max: f64,
    pub points: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

impl Sweep {
    pub fn values(&self) -> Vec<f64> {
        let n = self.points;
        let raw: Vec<f64> = (0..n)
            .map(|k| {
                if n == 1 || k == 0 {
                    return self.min;
                }
                let t = k as f64 / (n - 1) as f64;
                if k == n - 1 {
                    return self.max;
                }
                match self.spacing {
                    Spacing::Linear => self.min + t * (self.max - self.min),
                    Spacing::Log => (self.min.ln() + t * (self.max.ln() - self.min.ln())).exp(),
                }
            })
            .collect();
        if self.axis == SweepAxis::NQ {
            let mut ints: Vec<f64> = raw.iter().map(|v| v.round()).collect();
            ints.dedup();
            ints
        } else {
            raw
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarlo {
    pub samples: usize,
    /// μm.
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub system: SystemSection,
    pub layout: LayoutSection,
    pub environment: EnvironmentSection,
    #[serde(default)]
    pub observables: Observables,
    pub sweep: Option<Sweep>,
    pub montecarlo: Option<MonteCarlo>,
}

/// A parsed scenario together with its source text and location.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub source: String,
    pub base_dir: PathBuf,
}

impl LoadedScenario {
    pub fn parse(source: &str, base_dir: &Path) -> Result<Self> {
        let scenario: Scenario =
            toml::from_str(source).map_err(|e| Error::Config(e.to_string()))?;
        let loaded = Self {
            scenario,
            source: source.to_string(),
            base_dir: base_dir.to_path_buf(),
        };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&source, &base)
    }

    /// Hex SHA-256 of the scenario text.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.source.as_bytes()))
    }

    fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        let bad = |msg: String| Err(Error::Config(msg));
        if let Some(n) = s.layout.n_q {
            if n != s.system.n_q {
                return bad(format!(
                    "layout.n_q = {n} disagrees with system.n_q = {}",
                    s.system.n_q
                ));
            }
        }
        if !(s.layout.r > 0.0 && s.layout.z > 0.0) {
            return bad("layout r and z must be positive".into());
        }
        let e = &s.environment;
        if !(0.0..=1.0).contains(&e.epsilon) {
            return bad(format!(
                "environment.epsilon must lie in [0, 1], got {}",
                e.epsilon
            ));
        }
        if !(e.delta >= 0.0) {
            return bad("environment.delta must be non-negative".into());
        }
        if let Some(sw) = &s.sweep {
            if sw.points < 1 {
                return bad("sweep.points must be at least 1".into());
            }
            if !(sw.min <= sw.max) {
                return bad("sweep.min must not exceed sweep.max".into());
            }
            let positive = matches!(sw.axis, SweepAxis::Z | SweepAxis::R | SweepAxis::NQ);
            if (positive || sw.spacing == Spacing::Log) && !(sw.min > 0.0) {
                return bad(format!(
                    "sweep over {} needs positive bounds",
                    sw.axis.name()
                ));
            }
            if sw.axis == SweepAxis::Epsilon && !(sw.min >= 0.0 && sw.max <= 1.0) {
                return bad("epsilon sweep must stay within [0, 1]".into());
            }
        }
        if let Some(mc) = &s.montecarlo {
            if mc.samples < 1 {
                return bad("montecarlo.samples must be at least 1".into());
            }
            if !(mc.sigma >= 0.0) {
                return bad("montecarlo.sigma must be non-negative".into());
            }
        }
        self.scenario
            .system
            .spec()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.environment(1.0)?
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Environment with temperatures scaled by `epsilon` times the configured
    /// scale.
    pub fn environment(&self, epsilon: f64) -> Result<EnvConfig> {
        let e = &self.scenario.environment;
        let backend = match &e.backend {
            BackendSection::Equilibrium => Backend::Equilibrium,
            BackendSection::Phenomenological {
                z0,
                p,
                resonant_amplitude,
                off_resonant_amplitude,
                width,
                amplitudes,
            } => Backend::Phenomenological(PhenomenologicalParams {
                z0: z0 * MICRON,
                p: *p,
                resonant_amplitude: *resonant_amplitude,
                off_resonant_amplitude: *off_resonant_amplitude,
                width: *width,
                amplitudes: amplitudes.clone(),
            }),
            BackendSection::Tabulated { path } => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    self.base_dir.join(path)
                };
                Backend::Tabulated(Arc::new(CoefficientTable::load(&full)?))
            }
        };
        let env = EnvConfig {
            t_s: e.t_s,
            t_w: e.t_w,
            delta: e.delta * MICRON,
            omega_s: e.omega_s,
            backend,
        };
        scale_temperatures(&env, e.epsilon * epsilon)
    }

    /// Sweep values, or the single configured point when no sweep is given.
    pub fn sweep_values(&self) -> Vec<f64> {
        match &self.scenario.sweep {
            Some(sw) => sw.values(),
            None => vec![f64::NAN],
        }
    }

    /// Model inputs at one sweep value.
    pub fn point(&self, value: f64) -> Result<PointInputs> {
        let s = &self.scenario;
        let mut spec = s.system.spec();
        let (mut r, mut z, mut epsilon) = (s.layout.r, s.layout.z, 1.0);
        match s.sweep.as_ref().map(|sw| sw.axis) {
            Some(SweepAxis::Z) => z = value,
            Some(SweepAxis::R) => r = value,
            Some(SweepAxis::Epsilon) => epsilon = value,
            Some(SweepAxis::NQ) => spec.n_q = value as usize,
            None => {}
        }
        let layout = circle_layout(spec.n_q, r * MICRON, z * MICRON, spec.qubit_dipole)?;
        Ok(PointInputs {
            spec,
            layout,
            env: self.environment(epsilon)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PointInputs {
    pub spec: SystemSpec,
    pub layout: Layout,
    pub env: EnvConfig,
}

impl PointInputs {
    pub fn liouvillian(&self, layout: &Layout) -> Result<Liouvillian> {
        let rates = compute_rates(&self.spec.transitions(layout)?, &self.env, layout)?;
        Liouvillian::build(&self.spec, &rates)
    }
}

/// Parse plus complete-positivity check at every sweep point.
pub fn validate_scenario(loaded: &LoadedScenario) -> Result<()> {
    for value in loaded.sweep_values() {
        let p = loaded.point(value)?;
        let rates = compute_rates(&p.spec.transitions(&p.layout)?, &p.env, &p.layout)?;
        check_complete_positivity(&p.spec, &rates)?;
    }
    Ok(())
}

/// Stable column names for a system of `n_q` qubits.
pub fn column_names(n_q: usize, obs: &Observables) -> Vec<String> {
    let spec = SystemSpec {
        n_q,
        omega_q: 1.0,
        omega_1: 1.0,
        omega_2: 1.0,
        omega_3: 2.0,
        qubit_dipole: 0.0,
        machine_dipoles: [0.0; 3],
    };
    let labels = spec.labels();
    let mut out = vec!["residual".to_string()];
    if obs.temperatures {
        for l in &labels {
            out.push(format!("neg_beta_{l}"));
            out.push(format!("env_neg_beta_{l}"));
        }
    }
    if obs.fluxes {
        for l in &labels {
            out.push(format!("flux_{}", DissipatorLabel::Local(*l)));
        }
        for (a, b) in resonant_pairs(&spec) {
            out.push(format!("flux_{}", DissipatorLabel::Pair(a, b)));
        }
        for l in &labels {
            out.push(format!("local_flux_{l}"));
            out.push(format!("x_{l}"));
        }
        for (a, b) in resonant_pairs(&spec) {
            out.push(format!("qr_{a}_to_{b}"));
            out.push(format!("qr_{b}_to_{a}"));
            out.push(format!("qd_{a}_{b}"));
        }
        out.push("du_dt".into());
    }
    if obs.entropy {
        out.push("ds_tot_dt".into());
    }
    if obs.collective_temperature {
        out.push("t_c".into());
        out.push("neg_beta_c".into());
        out.push("d_t".into());
    }
    for q in &obs.correlations {
        out.push(q.name().to_string());
    }
    out
}

/// Text columns naming the maximizing partition of each requested quantifier.
pub fn partition_columns(obs: &Observables) -> Vec<String> {
    obs.correlations
        .iter()
        .map(|q| format!("{}_partition", q.name()))
        .collect()
}

/// Observables of one stationary state.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub values: BTreeMap<String, f64>,
    pub partitions: BTreeMap<String, String>,
    pub residual: f64,
}

pub fn evaluate(l: &Liouvillian, obs: &Observables) -> Result<PointResult> {
    let ss = steady_state(l)?;
    let rho = &ss.rho.matrix;
    let mut values = BTreeMap::new();
    let mut partitions = BTreeMap::new();
    values.insert("residual".to_string(), ss.residual);
    if obs.temperatures || obs.fluxes {
        let report = flux_report(l, rho)?;
        for t in &report.transitions {
            if obs.temperatures {
                values.insert(format!("neg_beta_{}", t.label), t.population.neg_beta);
                values.insert(format!("env_neg_beta_{}", t.label), t.env_neg_beta);
            }
            if obs.fluxes {
                values.insert(format!("local_flux_{}", t.label), t.local_flux);
                values.insert(format!("x_{}", t.label), t.prefactor.unwrap_or(f64::NAN));
            }
        }
        if obs.fluxes {
            for (a, b) in resonant_pairs(&l.spec) {
                values.insert(format!("flux_{}", DissipatorLabel::Pair(a, b)), 0.0);
                values.insert(format!("qd_{a}_{b}"), 0.0);
                values.insert(format!("qr_{a}_to_{b}"), report.resonant[&(a, b)]);
                values.insert(format!("qr_{b}_to_{a}"), report.resonant[&(b, a)]);
            }
            for (label, q) in &report.dissipators {
                values.insert(format!("flux_{label}"), *q);
            }
            for f in &report.nonlocal {
                values.insert(format!("qd_{}_{}", f.pair.0, f.pair.1), f.value);
            }
            values.insert("du_dt".into(), report.du_dt);
        }
    }
    if obs.entropy {
        let kernels = EntropyKernels::new(l, obs.entropy_kernels)?;
        values.insert(
            "ds_tot_dt".into(),
            stationary_entropy_production(l, &kernels, rho)?.total,
        );
    }
    if obs.collective_temperature {
        let c = collective_temperature(
            &qubit_state(l, rho)?,
            l.spec.omega_q,
            CollectiveSearch::default(),
        )?;
        values.insert("t_c".into(), c.t_c);
        values.insert("neg_beta_c".into(), c.neg_beta);
        values.insert("d_t".into(), c.distance);
    }
    if !obs.correlations.is_empty() {
        let dims = l.dims();
        let constraints = match obs.correlation_scope {
            CorrelationScope::Qubits => PartitionConstraints {
                subsystems: (1..dims.len()).collect(),
                cover_all: true,
            },
            CorrelationScope::All => PartitionConstraints::all(&dims),
        };
        for q in &obs.correlations {
            let (v, p) = maximize_over_partitions(rho, &dims, *q, &constraints)?;
            values.insert(q.name().to_string(), v);
            partitions.insert(format!("{}_partition", q.name()), p.to_string());
        }
    }
    Ok(PointResult {
        values,
        partitions,
        residual: ss.residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    pub module: String,
    pub message: String,
}

impl RowError {
    fn from_error(e: &Error) -> Self {
        Self {
            module: e.module().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputRow {
    pub index: usize,
    pub value: f64,
    /// Aligned with [`RunOutput::columns`].
    pub values: Vec<f64>,
    /// Aligned with [`RunOutput::text_columns`].
    pub text: Vec<String>,
    pub error: Option<RowError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub rng: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub sweep_axis: Option<String>,
    pub wall_clock_s: f64,
    /// Solver residual per sweep point (largest over the ensemble).
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub meta: Meta,
    pub columns: Vec<String>,
    pub text_columns: Vec<String>,
    pub rows: Vec<OutputRow>,
}

impl RunOutput {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.values[k]).collect())
    }

    pub fn errors(&self) -> impl Iterator<Item = &OutputRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Overrides `montecarlo.seed`.
    pub seed: Option<u64>,
    /// Stop at the first failing point.
    pub strict: bool,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

fn max_n_q(loaded: &LoadedScenario) -> usize {
    let s = &loaded.scenario;
    match &s.sweep {
        Some(sw) if sw.axis == SweepAxis::NQ => loaded
            .sweep_values()
            .iter()
            .map(|v| *v as usize)
            .max()
            .unwrap_or(s.system.n_q),
        _ => s.system.n_q,
    }
}

fn assemble(
    columns: &[String],
    text_columns: &[String],
    index: usize,
    value: f64,
    result: std::result::Result<PointResult, RowError>,
) -> OutputRow {
    match result {
        Ok(p) => OutputRow {
            index,
            value,
            values: columns
                .iter()
                .map(|c| p.values.get(c).copied().unwrap_or(f64::NAN))
                .collect(),
            text: text_columns
                .iter()
                .map(|c| p.partitions.get(c).cloned().unwrap_or_default())
                .collect(),
            error: None,
        },
        Err(e) => OutputRow {
            index,
            value,
            values: vec![f64::NAN; columns.len()],
            text: vec![String::new(); text_columns.len()],
            error: Some(e),
        },
    }
}

fn base_meta(loaded: &LoadedScenario, seed: Option<u64>) -> Meta {
    Meta {
        tool: "otemachine".into(),
        version: TOOL_VERSION.into(),
        rng: RNG_ID.into(),
        config_hash: loaded.config_hash(),
        seed,
        sweep_axis: loaded
            .scenario
            .sweep
            .as_ref()
            .map(|s| s.axis.name().to_string()),
        wall_clock_s: 0.0,
        residuals: Vec::new(),
    }
}

fn solve_point(
    loaded: &LoadedScenario,
    value: f64,
    layout: Option<&Layout>,
) -> Result<PointResult> {
    let inputs = loaded.point(value)?;
    let l = inputs.liouvillian(layout.unwrap_or(&inputs.layout))?;
    evaluate(&l, &loaded.scenario.observables)
}

/// Deterministic sweep: one stationary state per sweep value.
pub fn run_scenario(loaded: &LoadedScenario, options: RunOptions) -> Result<RunOutput> {
    let start = Instant::now();
    let obs = &loaded.scenario.observables;
    let columns = column_names(max_n_q(loaded), obs);
    let text_columns = partition_columns(obs);
    let values = loaded.sweep_values();
    let results: Vec<Result<PointResult>> = pool(options.jobs)?.install(|| {
        use rayon::prelude::*;
        values
            .par_iter()
            .map(|&v| solve_point(loaded, v, None))
            .collect()
    });
    let mut rows = Vec::with_capacity(values.len());
    let mut residuals = Vec::with_capacity(values.len());
    for (index, (value, result)) in values.iter().zip(results).enumerate() {
        if options.strict {
            if let Err(e) = &result {
                return Err(reraise(e, index, *value));
            }
        }
        residuals.push(result.as_ref().map(|p| p.residual).unwrap_or(f64::NAN));
        rows.push(assemble(
            &columns,
            &text_columns,
            index,
            *value,
            result.map_err(|e| RowError::from_error(&e)),
        ));
    }
    let mut meta = base_meta(loaded, None);
    meta.residuals = residuals;
    meta.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(RunOutput {
        meta,
        columns,
        text_columns,
        rows,
    })
}

/// Keeps the variant of a solver error so callers can tell it from a
/// configuration error, prefixing the failing sweep point.
fn reraise(e: &Error, index: usize, value: f64) -> Error {
    let prefix = format!("sweep point {index} (value {value})");
    match e {
        Error::Structural(m) => Error::Structural(format!("{prefix}: {m}")),
        Error::Positivity { eigenvalue, clip } => Error::Positivity {
            eigenvalue: *eigenvalue,
            clip: *clip,
        },
        Error::Parameter(m) => Error::Parameter(format!("{prefix}: {m}")),
        Error::Geometry(m) => Error::Geometry(format!("{prefix}: {m}")),
        Error::Data(m) => Error::Data(format!("{prefix}: {m}")),
        Error::Contract(m) => Error::Contract(format!("{prefix}: {m}")),
        Error::Degeneracy { context, dimension } => Error::Degeneracy {
            context: format!("{context} at {prefix}"),
            dimension: *dimension,
        },
        Error::Config(m) => Error::Config(format!("{prefix}: {m}")),
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{prefix}: {io}"))),
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of sample `sample` at sweep point `point`.
pub fn sub_seed(master: u64, point: usize, sample: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ point as u64) ^ sample as u64)
}

/// Monte-Carlo ensemble over Gaussian position noise. Each column `c` of the
/// deterministic run becomes `c_mean` and `c_sem`; `samples_ok` and
/// `failures` count the samples used and dropped.
pub fn run_montecarlo(loaded: &LoadedScenario, options: RunOptions) -> Result<RunOutput> {
    let start = Instant::now();
    let mc = loaded
        .scenario
        .montecarlo
        .clone()
        .ok_or_else(|| Error::Config("scenario has no [montecarlo] section".into()))?;
    let seed = options.seed.unwrap_or(mc.seed);
    let obs = &loaded.scenario.observables;
    let base_columns = column_names(max_n_q(loaded), obs);
    let values = loaded.sweep_values();
    let jobs: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|p| (0..mc.samples).map(move |s| (p, s)))
        .collect();
    let sample = |(p, s): (usize, usize)| -> Result<PointResult> {
        let inputs = loaded.point(values[p])?;
        let layout = gaussian_perturb(&inputs.layout, mc.sigma * MICRON, sub_seed(seed, p, s))?;
        let l = inputs.liouvillian(&layout)?;
        evaluate(&l, obs)
    };
    let results: Vec<Result<PointResult>> = pool(options.jobs)?.install(|| {
        use rayon::prelude::*;
        jobs.par_iter().map(|&j| sample(j)).collect()
    });

    let mut columns = Vec::with_capacity(2 * base_columns.len() + 2);
    for c in &base_columns {
        columns.push(format!("{c}_mean"));
        columns.push(format!("{c}_sem"));
    }
    columns.push("samples_ok".into());
    columns.push("failures".into());

    let mut rows = Vec::with_capacity(values.len());
    let mut residuals = Vec::with_capacity(values.len());
    let mut results = results.into_iter();
    for (index, value) in values.iter().enumerate() {
        let mut ok: Vec<PointResult> = Vec::with_capacity(mc.samples);
        let mut first_error = None;
        for _ in 0..mc.samples {
            match results.next().expect("one result per job") {
                Ok(r) => ok.push(r),
                Err(e) => {
                    if options.strict {
                        return Err(reraise(&e, index, *value));
                    }
                    first_error.get_or_insert(RowError::from_error(&e));
                }
            }
        }
        let failures = mc.samples - ok.len();
        residuals.push(ok.iter().map(|r| r.residual).fold(f64::NAN, f64::max));
        let mut out = Vec::with_capacity(columns.len());
        for c in &base_columns {
            let xs: Vec<f64> = ok
                .iter()
                .map(|r| r.values.get(c).copied().unwrap_or(f64::NAN))
                .collect();
            let (mean, sem) = mean_and_sem(&xs);
            out.push(mean);
            out.push(sem);
        }
        out.push(ok.len() as f64);
        out.push(failures as f64);
        rows.push(OutputRow {
            index,
            value: *value,
            values: out,
            text: Vec::new(),
            error: if ok.is_empty() { first_error } else { None },
        });
    }
    let mut meta = base_meta(loaded, Some(seed));
    meta.residuals = residuals;
    meta.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(RunOutput {
        meta,
        columns,
        text_columns: Vec::new(),
        rows,
    })
}

/// Mean as `x_0 + Σ (x_i - x_0)/N`, exact for constant samples, and standard
/// error of the mean (NaN below two samples).
pub fn mean_and_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let x0 = xs[0];
    let mean = x0 + xs.iter().map(|x| x - x0).sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs the ensemble when the scenario has one, the plain sweep otherwise.
pub fn run(loaded: &LoadedScenario, options: RunOptions) -> Result<RunOutput> {
    if loaded.scenario.montecarlo.is_some() {
        run_montecarlo(loaded, options)
    } else {
        run_scenario(loaded, options)
    }
}

fn format_number(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

fn sweep_column(output: &RunOutput) -> String {
    output
        .meta
        .sweep_axis
        .clone()
        .unwrap_or_else(|| "point".into())
}

/// `#meta <json>` line, header, one record per sweep point.
pub fn write_csv<W: Write>(output: &RunOutput, w: W) -> Result<()> {
    let mut w = w;
    let meta = serde_json::to_string(&output.meta).map_err(|e| Error::Config(e.to_string()))?;
    writeln!(w, "#meta {meta}")?;
    let mut csv = csv::WriterBuilder::new().from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    let mut header = vec!["index".to_string(), sweep_column(output)];
    header.extend(output.columns.iter().cloned());
    header.extend(output.text_columns.iter().cloned());
    header.push("error".into());
    csv.write_record(&header).map_err(csv_err)?;
    for row in &output.rows {
        let mut record = vec![row.index.to_string(), format_number(row.value)];
        record.extend(row.values.iter().map(|x| format_number(*x)));
        record.extend(row.text.iter().cloned());
        record.push(
            row.error
                .as_ref()
                .map(|e| format!("{}: {}", e.module, e.message))
                .unwrap_or_default(),
        );
        csv.write_record(&record).map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

/// Reads a file written by [`write_csv`].
pub fn read_csv(text: &str) -> Result<RunOutput> {
    let (first, rest) = text
        .split_once('\n')
        .ok_or_else(|| Error::Data("empty output file".into()))?;
    let meta_json = first
        .strip_prefix("#meta ")
        .ok_or_else(|| Error::Data("missing #meta line".into()))?;
    let mut meta: Meta = serde_json::from_str(meta_json).map_err(|e| Error::Data(e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new().from_reader(rest.as_bytes());
    let data_err = |e: csv::Error| Error::Data(e.to_string());
    let header: Vec<String> = reader
        .headers()
        .map_err(data_err)?
        .iter()
        .map(String::from)
        .collect();
    if header.len() < 3 {
        return Err(Error::Data("output header too short".into()));
    }
    let text_columns: Vec<String> = header[2..header.len() - 1]
        .iter()
        .filter(|h| h.ends_with("_partition"))
        .cloned()
        .collect();
    let columns: Vec<String> = header[2..header.len() - 1]
        .iter()
        .filter(|h| !h.ends_with("_partition"))
        .cloned()
        .collect();
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Data(format!("bad number '{s}'")))
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(data_err)?;
        let fields: Vec<&str> = record.iter().collect();
        let index = fields[0]
            .parse::<usize>()
            .map_err(|_| Error::Data(format!("bad index '{}'", fields[0])))?;
        let value = parse(fields[1])?;
        let values = fields[2..2 + columns.len()]
            .iter()
            .map(|s| parse(s))
            .collect::<Result<Vec<_>>>()?;
        let text = fields[2 + columns.len()..fields.len() - 1]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let error = fields.last().filter(|s| !s.is_empty()).map(|s| {
            let (module, message) = s.split_once(": ").unwrap_or(("", s));
            RowError {
                module: module.into(),
                message: message.into(),
            }
        });
        rows.push(OutputRow {
            index,
            value,
            values,
            text,
            error,
        });
    }
    meta.residuals.shrink_to_fit();
    Ok(RunOutput {
        meta,
        columns,
        text_columns,
        rows,
    })
}

/// `{"meta": …, "columns": […], "rows": [{…}]}` with non-finite numbers as
/// strings.
pub fn write_json<W: Write>(output: &RunOutput, w: W) -> Result<()> {
    let number = |x: f64| {
        if x.is_finite() {
            serde_json::json!(x)
        } else {
            serde_json::json!(format_number(x))
        }
    };
    let rows: Vec<serde_json::Value> = output
        .rows
        .iter()
        .map(|r| {
            let mut obj = serde_json::Map::new();
            obj.insert("index".into(), serde_json::json!(r.index));
            obj.insert(sweep_column(output), number(r.value));
            for (c, v) in output.columns.iter().zip(&r.values) {
                obj.insert(c.clone(), number(*v));
            }
            for (c, v) in output.text_columns.iter().zip(&r.text) {
                obj.insert(c.clone(), serde_json::json!(v));
            }
            obj.insert(
                "error".into(),
                serde_json::to_value(&r.error).unwrap_or_default(),
            );
            serde_json::Value::Object(obj)
        })
        .collect();
    let doc = serde_json::json!({ "meta": output.meta, "columns": output.columns, "rows": rows });
    serde_json::to_writer_pretty(w, &doc)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(())
}
