//! Environment-induced rates: local emission/absorption rates, collective
//! pair rates and dipole-dipole couplings, through interchangeable backends.
//!
//! Temperatures travel as `-1/T` (1/K) wherever they can be negative or
//! infinite.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::constants::{C, EPSILON_0, HBAR, K_B};
use crate::error::{Error, Result};
use crate::geometry::{Layout, PairFrame, Vec3};
use crate::linalg::{c64, C64};

/// Relative tolerance for two transitions to count as resonant.
pub const RESONANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum TransitionLabel {
    /// Machine transition 1 (`|0>-|1>`), 2 (`|1>-|2>`) or 3 (`|0>-|2>`).
    Machine(u8),
    /// 1-based qubit index.
    Qubit(usize),
}

impl fmt::Display for TransitionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransitionLabel::Machine(t) => write!(f, "M{t}"),
            TransitionLabel::Qubit(n) => write!(f, "q{n}"),
        }
    }
}

impl std::str::FromStr for TransitionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Data(format!("unknown transition id '{s}'"));
        if let Some(rest) = s.strip_prefix('M') {
            match rest.parse::<u8>() {
                Ok(t @ 1..=3) => Ok(TransitionLabel::Machine(t)),
                _ => Err(bad()),
            }
        } else if let Some(rest) = s.strip_prefix('q') {
            match rest.parse::<usize>() {
                Ok(n) if n >= 1 => Ok(TransitionLabel::Qubit(n)),
                _ => Err(bad()),
            }
        } else {
            Err(bad())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSpec {
    pub label: TransitionLabel,
    /// Index of the owning site in the layout.
    pub site: usize,
    /// rad/s.
    pub omega: f64,
    /// C·m.
    pub dipole: Vec3,
}

impl TransitionSpec {
    pub fn resonant_with(&self, other: &TransitionSpec) -> bool {
        (self.omega - other.omega).abs() <= RESONANCE_TOL * self.omega.abs().max(other.omega.abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhenomenologicalParams {
    /// Crossover distance, meters.
    pub z0: f64,
    pub p: f64,
    /// Amplitude for transitions within `width` (relative) of the slab resonance.
    pub resonant_amplitude: f64,
    pub off_resonant_amplitude: f64,
    pub width: f64,
    /// Per-transition amplitude overrides keyed by transition id (`"M3"`, `"q2"`).
    pub amplitudes: BTreeMap<String, f64>,
}

impl Default for PhenomenologicalParams {
    fn default() -> Self {
        Self {
            z0: 3e-6,
            p: 2.0,
            resonant_amplitude: 10.0,
            off_resonant_amplitude: 1.0,
            width: 0.05,
            amplitudes: BTreeMap::new(),
        }
    }
}

impl PhenomenologicalParams {
    fn slab_weight(&self, z: f64) -> f64 {
        1.0 / (1.0 + (z / self.z0).powf(self.p))
    }

    fn amplitude(&self, t: &TransitionSpec, omega_s: f64) -> f64 {
        if let Some(a) = self.amplitudes.get(&t.label.to_string()) {
            return *a;
        }
        if (t.omega - omega_s).abs() / omega_s < self.width {
            self.resonant_amplitude
        } else {
            self.off_resonant_amplitude
        }
    }
}

/// One row of a tabulated coefficient file.
#[derive(Debug, Clone, PartialEq)]
struct TableRow {
    omega: f64,
    z: f64,
    alpha_w: f64,
    alpha_s: f64,
    k: f64,
}

/// Externally computed `alpha_W`, `alpha_S` and reflected coupling `K`,
/// keyed by transition id (`"q1"`) or pair id (`"M2-q1"`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoefficientTable {
    rows: HashMap<String, Vec<TableRow>>,
}

impl CoefficientTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Data(format!(
                "cannot read coefficient table {}: {e}",
                path.display()
            ))
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rows: HashMap<String, Vec<TableRow>> = HashMap::new();
        let mut header_seen = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(Error::Data(format!(
                    "coefficient table line {}: expected 6 columns, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            if !header_seen {
                header_seen = true;
                continue;
            }
            let num = |i: usize| -> Result<f64> {
                fields[i].parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "coefficient table line {}: bad number '{}'",
                        lineno + 1,
                        fields[i]
                    ))
                })
            };
            let row = TableRow {
                omega: num(1)?,
                z: num(2)?,
                alpha_w: num(3)?,
                alpha_s: num(4)?,
                k: num(5)?,
            };
            rows.entry(canonical_id(fields[0])?).or_default().push(row);
        }
        if !header_seen {
            return Err(Error::Data("coefficient table has no header row".into()));
        }
        Ok(Self { rows })
    }

    fn lookup(&self, id: &str, omega: f64, z: f64) -> Result<&TableRow> {
        let close = |a: f64, b: f64| (a - b).abs() <= RESONANCE_TOL * a.abs().max(b.abs());
        self.rows
            .get(id)
            .and_then(|rows| rows.iter().find(|r| close(r.omega, omega) && close(r.z, z)))
            .ok_or_else(|| {
                Error::Data(format!(
                    "no tabulated entry for {id} at omega = {omega:e} rad/s, z = {z:e} m"
                ))
            })
    }
}

fn pair_id(a: TransitionLabel, b: TransitionLabel) -> String {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    format!("{lo}-{hi}")
}

fn canonical_id(id: &str) -> Result<String> {
    match id.split_once('-') {
        None => Ok(id.parse::<TransitionLabel>()?.to_string()),
        Some((a, b)) => Ok(pair_id(a.parse()?, b.parse()?)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    /// Free-space field at the wall temperature.
    Equilibrium,
    Phenomenological(PhenomenologicalParams),
    Tabulated(Arc<CoefficientTable>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    /// Slab temperature, K.
    pub t_s: f64,
    /// Wall temperature, K.
    pub t_w: f64,
    /// Slab thickness, meters (informational).
    pub delta: f64,
    /// Slab resonance, rad/s.
    pub omega_s: f64,
    pub backend: Backend,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_s >= 0.0 && self.t_w >= 0.0) {
            return Err(Error::Parameter(format!(
                "temperatures must be non-negative (T_S = {}, T_W = {})",
                self.t_s, self.t_w
            )));
        }
        if !(self.omega_s > 0.0) {
            return Err(Error::Parameter(format!(
                "slab resonance must be positive, got {}",
                self.omega_s
            )));
        }
        if let Backend::Phenomenological(p) = &self.backend {
            if !(p.z0 > 0.0 && p.p > 0.0 && p.width >= 0.0) {
                return Err(Error::Parameter(
                    "phenomenological z0, p must be positive and width non-negative".into(),
                ));
            }
            let amps = p
                .amplitudes
                .values()
                .chain([&p.resonant_amplitude, &p.off_resonant_amplitude]);
            if amps.into_iter().any(|a| !(*a >= 0.0)) {
                return Err(Error::Parameter(
                    "phenomenological amplitudes must be non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    /// `(alpha_W, alpha_S)` for a single transition at height `z`.
    fn local_alpha(&self, t: &TransitionSpec, z: f64) -> Result<(f64, f64)> {
        match &self.backend {
            Backend::Equilibrium => Ok((1.0, 0.0)),
            Backend::Phenomenological(p) => {
                let s = p.slab_weight(z);
                Ok((1.0 - s, p.amplitude(t, self.omega_s) * s))
            }
            Backend::Tabulated(table) => {
                let row = table.lookup(&t.label.to_string(), t.omega, z)?;
                Ok((row.alpha_w, row.alpha_s))
            }
        }
    }

    /// Normalized pair coefficients `(alpha_W^ij, alpha_S^ij, K_ij)`.
    fn pair_alpha(
        &self,
        a: &TransitionSpec,
        b: &TransitionSpec,
        z: f64,
        free: &FreeSpacePair,
    ) -> Result<(C64, C64, f64)> {
        match &self.backend {
            Backend::Equilibrium => Ok((c64(free.correlation, 0.0), c64(0.0, 0.0), 0.0)),
            Backend::Phenomenological(p) => {
                let s = p.slab_weight(z);
                let amp = (p.amplitude(a, self.omega_s) * p.amplitude(b, self.omega_s)).sqrt();
                Ok((
                    c64((1.0 - s) * free.correlation, 0.0),
                    c64(amp * s * free.correlation, 0.0),
                    0.0,
                ))
            }
            Backend::Tabulated(table) => {
                let row = table.lookup(&pair_id(a.label, b.label), a.omega, z)?;
                Ok((c64(row.alpha_w, 0.0), c64(row.alpha_s, 0.0), row.k))
            }
        }
    }
}

pub fn scale_temperatures(env: &EnvConfig, epsilon: f64) -> Result<EnvConfig> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Parameter(format!(
            "temperature scale must lie in [0, 1], got {epsilon}"
        )));
    }
    let mut out = env.clone();
    out.t_s *= epsilon;
    out.t_w *= epsilon;
    Ok(out)
}

/// Vacuum spontaneous emission rate `|d|² ω³ / (3 ħ π ε0 c³)`, s⁻¹.
pub fn gamma0(omega: f64, dipole_magnitude: f64) -> f64 {
    dipole_magnitude.powi(2) * omega.powi(3)
        / (3.0 * HBAR * std::f64::consts::PI * EPSILON_0 * C.powi(3))
}

/// Bose-Einstein occupation; zero at zero temperature.
pub fn bose_occupation(omega: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    1.0 / (HBAR * omega / (K_B * t)).exp_m1()
}

/// `-1/T` (1/K) from the ratio of emission to absorption rates.
pub fn env_neg_beta(gamma_plus: f64, gamma_minus: f64, omega: f64) -> Result<f64> {
    if !(gamma_plus > 0.0) {
        return Err(Error::Contract(format!(
            "emission rate must be positive, got {gamma_plus}"
        )));
    }
    if !(gamma_minus >= 0.0) {
        return Err(Error::Contract(format!(
            "absorption rate must be non-negative, got {gamma_minus}"
        )));
    }
    if gamma_minus == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(-K_B * (gamma_plus / gamma_minus).ln() / (HBAR * omega))
}

/// Converts `-1/T` back to a temperature; `0` maps to infinity and `-inf` to 0.
pub fn temperature_from_neg_beta(neg_beta: f64) -> f64 {
    if neg_beta == f64::NEG_INFINITY {
        0.0
    } else {
        -1.0 / neg_beta
    }
}

/// Free-space dyadic Green function between two dipoles, projected on their
/// orientations and normalized by `sqrt(gamma0_a gamma0_b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeSpacePair {
    /// Dissipative correlation; equals the dipole overlap as the separation
    /// goes to zero.
    pub correlation: f64,
    /// Coherent coupling, `Lambda0 / sqrt(gamma0_a gamma0_b)`.
    pub coupling: f64,
}

impl FreeSpacePair {
    /// `da`, `db` are unit dipole directions in the pair frame; `kr` is the
    /// separation times the wavenumber.
    pub fn new(da: &Vec3, db: &Vec3, kr: f64) -> Self {
        let (g_long, g_trans) = if kr < 0.1 {
            let x2 = kr * kr;
            (
                2.0 / 3.0 - x2 / 15.0 + x2 * x2 / 420.0 - x2 * x2 * x2 / 22680.0,
                2.0 / 3.0 - 2.0 * x2 / 15.0 + x2 * x2 / 140.0 - x2 * x2 * x2 / 5670.0,
            )
        } else {
            let (s, c) = kr.sin_cos();
            (
                2.0 * (s / kr.powi(3) - c / kr.powi(2)),
                s / kr + c / kr.powi(2) - s / kr.powi(3),
            )
        };
        let (s, c) = kr.sin_cos();
        let f_long = -2.0 * (s / kr.powi(2) + c / kr.powi(3));
        let f_trans = -c / kr + s / kr.powi(2) + c / kr.powi(3);

        let xx = da.x * db.x;
        let yy_zz = da.y * db.y + da.z * db.z;
        Self {
            correlation: 1.5 * (xx * g_long + yy_zz * g_trans),
            coupling: 0.75 * (xx * f_long + yy_zz * f_trans),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalRates {
    /// Emission rate, s⁻¹.
    pub plus: f64,
    /// Absorption rate, s⁻¹.
    pub minus: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRates {
    pub plus: C64,
    pub minus: C64,
    /// Dipole-dipole coupling, rad/s.
    pub lambda: f64,
}

impl PairRates {
    pub fn conj(&self) -> Self {
        Self {
            plus: self.plus.conj(),
            minus: self.minus.conj(),
            lambda: self.lambda,
        }
    }
}

pub fn local_rates(t: &TransitionSpec, env: &EnvConfig, layout: &Layout) -> Result<LocalRates> {
    if !(t.omega > 0.0) {
        return Err(Error::Parameter(format!(
            "transition {} has non-positive frequency",
            t.label
        )));
    }
    let site = layout
        .sites
        .get(t.site)
        .ok_or_else(|| Error::Geometry(format!("transition {} has no site", t.label)))?;
    let (alpha_w, alpha_s) = env.local_alpha(t, site.position.z)?;
    if !(alpha_w >= 0.0 && alpha_s >= 0.0) {
        return Err(Error::Data(format!(
            "negative weight for {}: alpha_W = {alpha_w}, alpha_S = {alpha_s}",
            t.label
        )));
    }
    let g0 = gamma0(t.omega, t.dipole.norm());
    let (n_w, n_s) = occupations(t.omega, env);
    Ok(LocalRates {
        plus: g0 * ((1.0 + n_w) * alpha_w + (1.0 + n_s) * alpha_s),
        minus: g0 * (n_w * alpha_w + n_s * alpha_s),
    })
}

fn occupations(omega: f64, env: &EnvConfig) -> (f64, f64) {
    match env.backend {
        Backend::Equilibrium => (bose_occupation(omega, env.t_w), 0.0),
        _ => (
            bose_occupation(omega, env.t_w),
            bose_occupation(omega, env.t_s),
        ),
    }
}

pub fn pair_rates(
    a: &TransitionSpec,
    b: &TransitionSpec,
    env: &EnvConfig,
    layout: &Layout,
) -> Result<PairRates> {
    if !a.resonant_with(b) {
        return Err(Error::Contract(format!(
            "pair {}-{} is not resonant ({:e} vs {:e} rad/s)",
            a.label, b.label, a.omega, b.omega
        )));
    }
    if a.site == b.site {
        return Err(Error::Contract(format!(
            "pair {}-{} shares one atom",
            a.label, b.label
        )));
    }
    let (sa, sb) = match (layout.sites.get(a.site), layout.sites.get(b.site)) {
        (Some(x), Some(y)) => (x, y),
        _ => {
            return Err(Error::Geometry(format!(
                "pair {}-{} references a missing site",
                a.label, b.label
            )))
        }
    };
    let (ma, mb) = (a.dipole.norm(), b.dipole.norm());
    if ma == 0.0 || mb == 0.0 {
        return Ok(PairRates {
            plus: c64(0.0, 0.0),
            minus: c64(0.0, 0.0),
            lambda: 0.0,
        });
    }
    let frame = PairFrame::new(
        &sa.position,
        &sb.position,
        &(a.dipole / ma),
        &(b.dipole / mb),
    )?;
    let omega = 0.5 * (a.omega + b.omega);
    let free = FreeSpacePair::new(
        &frame.dipole_a,
        &frame.dipole_b,
        omega / C * frame.separation,
    );
    let z = 0.5 * (sa.position.z + sb.position.z);
    let (alpha_w, alpha_s, k) = env.pair_alpha(a, b, z, &free)?;

    let scale = (gamma0(a.omega, ma) * gamma0(b.omega, mb)).sqrt();
    let (n_w, n_s) = occupations(omega, env);
    Ok(PairRates {
        plus: (alpha_w * (1.0 + n_w) + alpha_s * (1.0 + n_s)) * scale,
        minus: (alpha_w.conj() * n_w + alpha_s.conj() * n_s) * scale,
        lambda: scale * (free.coupling + k),
    })
}

/// All rates for one configuration. Pair entries are keyed by label order
/// (machine transitions before qubits, qubits by index); the swapped pair
/// carries the complex conjugate rates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateSet {
    pub local: BTreeMap<TransitionLabel, LocalRates>,
    pub pairs: BTreeMap<(TransitionLabel, TransitionLabel), PairRates>,
}

impl RateSet {
    pub fn local(&self, t: TransitionLabel) -> Result<LocalRates> {
        self.local
            .get(&t)
            .copied()
            .ok_or_else(|| Error::Data(format!("no local rates for {t}")))
    }

    pub fn pair(&self, a: TransitionLabel, b: TransitionLabel) -> Result<PairRates> {
        if a <= b {
            self.pairs.get(&(a, b)).copied()
        } else {
            self.pairs.get(&(b, a)).map(PairRates::conj)
        }
        .ok_or_else(|| Error::Data(format!("no pair rates for {a}-{b}")))
    }

    pub fn max_rate(&self) -> f64 {
        let local = self.local.values().map(|r| r.plus.max(r.minus));
        let pairs = self
            .pairs
            .values()
            .map(|p| p.plus.norm().max(p.minus.norm()).max(p.lambda.abs()));
        local.chain(pairs).fold(0.0, f64::max)
    }
}

/// Evaluates local rates for every transition and pair rates for every
/// resonant pair on distinct atoms.
pub fn compute_rates(
    transitions: &[TransitionSpec],
    env: &EnvConfig,
    layout: &Layout,
) -> Result<RateSet> {
    env.validate()?;
    let mut set = RateSet::default();
    for t in transitions {
        set.local.insert(t.label, local_rates(t, env, layout)?);
    }
    for (i, a) in transitions.iter().enumerate() {
        for b in &transitions[i + 1..] {
            if a.site == b.site || !a.resonant_with(b) {
                continue;
            }
            let (lo, hi) = if a.label <= b.label { (a, b) } else { (b, a) };
            set.pairs
                .insert((lo.label, hi.label), pair_rates(lo, hi, env, layout)?);
        }
    }
    Ok(set)
}
