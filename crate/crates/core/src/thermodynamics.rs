//! Temperatures, heat fluxes and entropy production of a state of the
//! machine-plus-qubits system.
//!
//! Every flux here is frame independent: the free Hamiltonian commutes with
//! the coupling and every dissipator is covariant under it, so states from
//! the rotating-frame solver can be used as they are.

use std::collections::BTreeMap;

use crate::constants::{HBAR, K_B};
use crate::correlations::trace_distance;
use crate::dynamics::{normalize_state, null_vector_svd};
use crate::environment::{env_neg_beta, temperature_from_neg_beta, TransitionLabel};
use crate::error::{Error, Result};
use crate::linalg::{
    c64, psd_matrix_function, trace, CMatrix, PsdFunction, SparseMatrix, DEFAULT_CLIP,
};
use crate::model::{
    local_dissipator, pair_dissipator, resonant_pairs, Dissipator, DissipatorLabel, Frame,
    Liouvillian, SystemSpec,
};

/// Relative gap between population and environmental Boltzmann exponents
/// below which the flux prefactor is undefined.
pub const PREFACTOR_TOL: f64 = 1e-8;
/// Relative agreement required between the two per-atom shares of a
/// nonlocal flux and the closed form.
pub const SHARE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationTemperature {
    /// K; infinite when populations are equal, negative under inversion.
    pub theta: f64,
    /// `-1/θ` (1/K); `-inf` without excited population, `+inf` without
    /// ground population.
    pub neg_beta: f64,
}

/// Ground and excited populations of a transition.
pub fn transition_populations(
    rho: &CMatrix,
    l: &Liouvillian,
    label: TransitionLabel,
) -> (f64, f64) {
    let ops = &l.ops;
    let (mut pg, mut pe) = (0.0, 0.0);
    for i in 0..rho.nrows() {
        let p = rho[(i, i)].re;
        match label {
            TransitionLabel::Qubit(n) => {
                if ops.qubit_bit(i, n) == 1 {
                    pe += p
                } else {
                    pg += p
                }
            }
            TransitionLabel::Machine(t) => {
                let (lower, upper) = SystemSpec::machine_levels(t);
                let level = ops.machine_level(i);
                if level == lower {
                    pg += p;
                } else if level == upper {
                    pe += p;
                }
            }
        }
    }
    (pg, pe)
}

pub fn population_temperature(
    rho: &CMatrix,
    l: &Liouvillian,
    label: TransitionLabel,
) -> Result<PopulationTemperature> {
    let (pg, pe) = transition_populations(rho, l, label);
    if !(pg + pe > 0.0) {
        return Err(Error::Contract(format!(
            "transition {label} carries no population"
        )));
    }
    let neg_beta = if pe <= 0.0 {
        f64::NEG_INFINITY
    } else if pg <= 0.0 {
        f64::INFINITY
    } else {
        -K_B * (pg / pe).ln() / (HBAR * l.spec.omega(label))
    };
    Ok(PopulationTemperature {
        theta: temperature_from_neg_beta(neg_beta),
        neg_beta,
    })
}

/// Environmental `-1/T` (1/K) felt by a transition.
pub fn environment_neg_beta(l: &Liouvillian, label: TransitionLabel) -> Result<f64> {
    let r = l.rates.local(label)?;
    env_neg_beta(r.plus, r.minus, l.spec.omega(label))
}

/// `tr(H D(ρ))` (W).
pub fn heat_flux(h: &CMatrix, d: &Dissipator, rho: &CMatrix) -> f64 {
    trace(&(h * d.apply(rho))).re
}

/// `tr(H D(ρ))` for a diagonal `H` (W).
pub fn diagonal_heat_flux(h: &[f64], d: &Dissipator, rho: &CMatrix) -> f64 {
    let out = d.apply(rho);
    h.iter().enumerate().map(|(i, e)| e * out[(i, i)].re).sum()
}

fn check_resonant(l: &Liouvillian, a: TransitionLabel, b: TransitionLabel) -> Result<()> {
    if resonant_pairs(&l.spec)
        .iter()
        .any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a))
    {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "{a} and {b} are not a resonant pair on distinct atoms"
        )))
    }
}

/// `<A_n† A_m>`, the `|g_n e_m> -> |e_n g_m>` coherence of the reduced pair
/// state.
pub fn pair_coherence(
    rho: &CMatrix,
    l: &Liouvillian,
    n: TransitionLabel,
    m: TransitionLabel,
) -> crate::C64 {
    let hop = l.ops.lowering(n).adjoint().mul(l.ops.lowering(m));
    hop.expectation(rho)
}

/// Heat carried by the dipole-dipole coupling from `m` into `n` (W).
pub fn resonant_flux(
    rho: &CMatrix,
    l: &Liouvillian,
    m: TransitionLabel,
    n: TransitionLabel,
) -> Result<f64> {
    check_resonant(l, m, n)?;
    let lambda = l.rates.pair(n, m)?.lambda;
    Ok(2.0 * HBAR * l.spec.omega_q * lambda * pair_coherence(rho, l, n, m).im)
}

/// Heat exchanged by each atom of the pair through their collective channel
/// (W); the same for both atoms.
pub fn nonlocal_flux(
    rho: &CMatrix,
    l: &Liouvillian,
    n: TransitionLabel,
    m: TransitionLabel,
) -> Result<f64> {
    check_resonant(l, n, m)?;
    let p = l.rates.pair(n, m)?;
    let c = pair_coherence(rho, l, n, m);
    Ok(-HBAR * l.spec.omega_q * (c * (p.plus - p.minus.conj())).re)
}

/// `Q / (e^{ħω/kθ} - e^{ħω/kT})` (W), or `None` when the population and
/// environmental temperatures coincide.
pub fn flux_prefactor(
    local_flux: f64,
    omega: f64,
    neg_beta: f64,
    env_neg_beta: f64,
) -> Option<f64> {
    let x_theta = -neg_beta * HBAR * omega / K_B;
    let x_env = -env_neg_beta * HBAR * omega / K_B;
    if !x_theta.is_finite()
        || !x_env.is_finite()
        || (x_theta - x_env).abs() <= PREFACTOR_TOL * (1.0 + x_env.abs())
    {
        return None;
    }
    Some(local_flux / (x_theta.exp() - x_env.exp()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionThermo {
    pub label: TransitionLabel,
    pub population: PopulationTemperature,
    /// Environmental `-1/T` (1/K).
    pub env_neg_beta: f64,
    /// Heat entering the owning atom through the local channel (W).
    pub local_flux: f64,
    /// Flux prefactor (W) where defined.
    pub prefactor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlocalFlux {
    pub pair: (TransitionLabel, TransitionLabel),
    /// Closed form (W).
    pub value: f64,
    /// `tr(H_atom D(ρ))` of the first and second atom (W).
    pub shares: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluxReport {
    pub transitions: Vec<TransitionThermo>,
    /// `tr(H_sys D(ρ))` per dissipator (W).
    pub dissipators: Vec<(DissipatorLabel, f64)>,
    /// `Q_r(m -> n)` keyed by `(m, n)`, both orders (W).
    pub resonant: BTreeMap<(TransitionLabel, TransitionLabel), f64>,
    pub nonlocal: Vec<NonlocalFlux>,
    /// Sum of the dissipator fluxes (W).
    pub du_dt: f64,
}

impl FluxReport {
    pub fn transition(&self, label: TransitionLabel) -> Option<&TransitionThermo> {
        self.transitions.iter().find(|t| t.label == label)
    }

    /// Net heat entering an atom (W): local channels, coupling and collective
    /// channels. Zero at stationarity. `atom` is any transition of the atom.
    pub fn atom_balance(&self, atom: TransitionLabel) -> f64 {
        let same_atom = |t: TransitionLabel| match (t, atom) {
            (TransitionLabel::Machine(_), TransitionLabel::Machine(_)) => true,
            _ => t == atom,
        };
        let local: f64 = self
            .transitions
            .iter()
            .filter(|t| same_atom(t.label))
            .map(|t| t.local_flux)
            .sum();
        let resonant: f64 = self
            .resonant
            .iter()
            .filter(|((_, n), _)| same_atom(*n))
            .map(|(_, q)| q)
            .sum();
        let nonlocal: f64 = self
            .nonlocal
            .iter()
            .map(|f| {
                if same_atom(f.pair.0) {
                    f.shares.0
                } else if same_atom(f.pair.1) {
                    f.shares.1
                } else {
                    0.0
                }
            })
            .sum();
        local + resonant + nonlocal
    }

    /// Largest flux magnitude in the report (W).
    pub fn scale(&self) -> f64 {
        let d = self.dissipators.iter().map(|(_, q)| q.abs());
        let t = self.transitions.iter().map(|t| t.local_flux.abs());
        let r = self.resonant.values().map(|q| q.abs());
        d.chain(t).chain(r).fold(0.0, f64::max)
    }
}

/// All heat fluxes and temperatures of `rho`.
pub fn flux_report(l: &Liouvillian, rho: &CMatrix) -> Result<FluxReport> {
    let h_sys = l.hamiltonian(Frame::Lab);
    let dissipators: Vec<(DissipatorLabel, f64)> = l
        .dissipators
        .iter()
        .map(|d| (d.label, heat_flux(&h_sys, d, rho)))
        .collect();
    let du_dt = dissipators.iter().map(|(_, q)| q).sum();

    let mut transitions = Vec::new();
    for label in l.spec.labels() {
        let d = l
            .dissipator(DissipatorLabel::Local(label))
            .ok_or_else(|| Error::Structural(format!("no local dissipator for {label}")))?;
        let local_flux = diagonal_heat_flux(l.ops.atom_hamiltonian(label), d, rho);
        let population = population_temperature(rho, l, label)?;
        let env = environment_neg_beta(l, label)?;
        let prefactor = flux_prefactor(local_flux, l.spec.omega(label), population.neg_beta, env);
        transitions.push(TransitionThermo {
            label,
            population,
            env_neg_beta: env,
            local_flux,
            prefactor,
        });
    }

    let mut resonant = BTreeMap::new();
    let mut nonlocal = Vec::new();
    let scale = dissipators.iter().map(|(_, q)| q.abs()).fold(0.0, f64::max);
    for (a, b) in resonant_pairs(&l.spec) {
        resonant.insert((a, b), resonant_flux(rho, l, a, b)?);
        resonant.insert((b, a), resonant_flux(rho, l, b, a)?);
        let Some(d) = l.dissipator(DissipatorLabel::Pair(a, b)) else {
            continue;
        };
        let value = nonlocal_flux(rho, l, a, b)?;
        let shares = (
            diagonal_heat_flux(l.ops.atom_hamiltonian(a), d, rho),
            diagonal_heat_flux(l.ops.atom_hamiltonian(b), d, rho),
        );
        for share in [shares.0, shares.1] {
            let tol = SHARE_TOL * (value.abs() + share.abs()) + 1e-12 * scale;
            if (share - value).abs() > tol {
                return Err(Error::Contract(format!(
                    "collective flux of {} differs between atoms: {share:e} vs {value:e}",
                    DissipatorLabel::Pair(a, b)
                )));
            }
        }
        nonlocal.push(NonlocalFlux {
            pair: (a, b),
            value,
            shares,
        });
    }
    Ok(FluxReport {
        transitions,
        dissipators,
        resonant,
        nonlocal,
        du_dt,
    })
}

/// Which dissipators enter the entropy production with their own kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    /// Local Gibbs kernels plus numerically computed collective kernels.
    #[default]
    Full,
    /// Local Gibbs kernels only.
    LocalOnly,
}

/// `log ρ_i^ss` for every dissipator taking part, embedded in the full
/// space. Parts of the logarithm that cannot contribute to `tr(D_i(ρ) ·)`
/// (identity on untouched factors, normalization) are dropped.
#[derive(Debug, Clone)]
pub struct EntropyKernels {
    pub logs: Vec<(DissipatorLabel, SparseMatrix)>,
}

impl EntropyKernels {
    pub fn new(l: &Liouvillian, mode: KernelMode) -> Result<Self> {
        let mut logs = Vec::new();
        for d in &l.dissipators {
            let log = match d.label {
                DissipatorLabel::Local(label) => local_kernel_log(l, label)?,
                DissipatorLabel::Pair(a, b) => match mode {
                    KernelMode::LocalOnly => continue,
                    KernelMode::Full => pair_kernel_log(l, a, b)?,
                },
            };
            logs.push((d.label, log));
        }
        Ok(Self { logs })
    }

    /// `Σ_i tr(D_i(ρ) log ρ_i^ss)` per dissipator (dimensionless rate, 1/s).
    pub fn terms(&self, l: &Liouvillian, rho: &CMatrix) -> Result<Vec<(DissipatorLabel, f64)>> {
        self.logs
            .iter()
            .map(|(label, log)| {
                let d = l
                    .dissipator(*label)
                    .ok_or_else(|| Error::Structural(format!("no dissipator {label}")))?;
                Ok((*label, log.expectation(&d.apply(rho)).re))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyProduction {
    /// `dS_tot/dt` (W/K).
    pub total: f64,
    /// `k_B tr(D_i(ρ) log ρ_i^ss)` per dissipator (W/K).
    pub terms: Vec<(DissipatorLabel, f64)>,
    /// `dS/dt = -k_B tr(L(ρ) log ρ)` (W/K); zero when evaluated as stationary.
    pub state_rate: f64,
}

impl EntropyProduction {
    /// Largest single contribution (W/K).
    pub fn scale(&self) -> f64 {
        self.terms
            .iter()
            .map(|(_, s)| s.abs())
            .fold(self.state_rate.abs(), f64::max)
    }
}

/// Entropy production of an arbitrary state along the dynamics.
pub fn entropy_production(
    l: &Liouvillian,
    kernels: &EntropyKernels,
    rho: &CMatrix,
) -> Result<EntropyProduction> {
    let log_rho = psd_matrix_function(rho, PsdFunction::Log, DEFAULT_CLIP)?;
    let state_rate = -K_B * trace(&(l.apply(rho, Frame::Rotating) * log_rho)).re;
    let mut out = stationary_entropy_production(l, kernels, rho)?;
    out.total += state_rate;
    out.state_rate = state_rate;
    Ok(out)
}

/// Entropy production at a stationary state, where `dS/dt` vanishes.
pub fn stationary_entropy_production(
    l: &Liouvillian,
    kernels: &EntropyKernels,
    rho: &CMatrix,
) -> Result<EntropyProduction> {
    let terms: Vec<_> = kernels
        .terms(l, rho)?
        .into_iter()
        .map(|(label, s)| (label, K_B * s))
        .collect();
    let total = terms.iter().map(|(_, s)| s).sum();
    Ok(EntropyProduction {
        total,
        terms,
        state_rate: 0.0,
    })
}

/// Gibbs logarithm of a local channel at its environmental temperature,
/// restricted to the levels it connects.
fn local_kernel_log(l: &Liouvillian, label: TransitionLabel) -> Result<SparseMatrix> {
    let neg_beta = environment_neg_beta(l, label)?;
    if !neg_beta.is_finite() {
        return Err(Error::Degeneracy {
            context: format!("kernel of {}", DissipatorLabel::Local(label)),
            dimension: 0,
        });
    }
    let weight = neg_beta / K_B * HBAR * l.spec.omega(label);
    let diag: Vec<f64> = (0..l.dim())
        .map(|i| {
            let excited = match label {
                TransitionLabel::Qubit(n) => l.ops.qubit_bit(i, n) == 1,
                TransitionLabel::Machine(t) => {
                    l.ops.machine_level(i) == SystemSpec::machine_levels(t).1
                }
            };
            if excited {
                weight
            } else {
                0.0
            }
        })
        .collect();
    Ok(SparseMatrix::from_diagonal(&diag))
}

/// Two-level index (0 = ground, 1 = excited) of transition `label` in basis
/// state `i`, or `None` when the state lies outside the transition.
fn two_level_index(l: &Liouvillian, label: TransitionLabel, i: usize) -> Option<usize> {
    match label {
        TransitionLabel::Qubit(n) => Some(l.ops.qubit_bit(i, n)),
        TransitionLabel::Machine(t) => {
            let (lower, upper) = SystemSpec::machine_levels(t);
            let level = l.ops.machine_level(i);
            (level == lower)
                .then_some(0)
                .or((level == upper).then_some(1))
        }
    }
}

/// Basis state with the two transitions of a pair set to given two-level
/// indices and everything else copied from `i`.
fn with_pair_levels(
    l: &Liouvillian,
    i: usize,
    labels: [TransitionLabel; 2],
    levels: [usize; 2],
) -> usize {
    let n_q = l.spec.n_q;
    let mut j = i;
    for (label, level) in labels.into_iter().zip(levels) {
        match label {
            TransitionLabel::Qubit(n) => {
                let bit = 1 << (n_q - n);
                j = if level == 1 { j | bit } else { j & !bit };
            }
            TransitionLabel::Machine(t) => {
                let (lower, upper) = SystemSpec::machine_levels(t);
                let m = if level == 1 { upper } else { lower };
                j = (m << n_q) | (j & ((1 << n_q) - 1));
            }
        }
    }
    j
}

/// Logarithm of the stationary state of the pair's two local channels and
/// their collective channel, on the four-dimensional space spanned by the
/// two transitions, embedded with the identity on every other factor.
fn pair_kernel_log(
    l: &Liouvillian,
    a: TransitionLabel,
    b: TransitionLabel,
) -> Result<SparseMatrix> {
    let label = DissipatorLabel::Pair(a, b);
    let lower = |bit: usize| {
        SparseMatrix::from_triplets(
            4,
            (0..4)
                .filter(|s| s & bit != 0)
                .map(|s| (s ^ bit, s, c64(1.0, 0.0))),
        )
    };
    // pair basis index 2·level_a + level_b
    let (la, lb) = (lower(2), lower(1));
    let (ra, rb) = (l.rates.local(a)?, l.rates.local(b)?);
    let p = l.rates.pair(a, b)?;
    let generators = [
        local_dissipator(a, &la, ra.plus, ra.minus),
        local_dissipator(b, &lb, rb.plus, rb.minus),
        pair_dissipator(label, &la, &lb, p.plus, p.minus),
    ];
    let mut s = CMatrix::zeros(16, 16);
    for col in 0..16 {
        let mut unit = CMatrix::zeros(4, 4);
        unit[(col % 4, col / 4)] = c64(1.0, 0.0);
        let image = generators
            .iter()
            .fold(CMatrix::zeros(4, 4), |acc, g| acc + g.apply(&unit));
        for row in 0..16 {
            s[(row, col)] = image[(row % 4, row / 4)];
        }
    }
    let x = null_vector_svd(&s).map_err(|e| match e {
        Error::Degeneracy { dimension, .. } => Error::Degeneracy {
            context: format!("kernel of {label}"),
            dimension,
        },
        other => other,
    })?;
    let kernel = CMatrix::from_column_slice(4, 4, x.as_slice());
    let tr = trace(&kernel);
    if tr.norm() == 0.0 {
        return Err(Error::Degeneracy {
            context: format!("kernel of {label}"),
            dimension: 0,
        });
    }
    let (kernel, _) = normalize_state(&(kernel / tr))?;
    let log = psd_matrix_function(&kernel, PsdFunction::Log, DEFAULT_CLIP)?;

    let mut triplets = Vec::new();
    for i in 0..l.dim() {
        let (Some(ia), Some(ib)) = (two_level_index(l, a, i), two_level_index(l, b, i)) else {
            continue;
        };
        let col = 2 * ia + ib;
        for row in 0..4 {
            let v = log[(row, col)];
            if v != c64(0.0, 0.0) {
                triplets.push((with_pair_levels(l, i, [a, b], [row / 2, row % 2]), i, v));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(l.dim(), triplets))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectiveTemperature {
    /// K; negative for inverted states, infinite at `neg_beta = 0`.
    pub t_c: f64,
    /// 1/K.
    pub neg_beta: f64,
    /// Trace distance between the qubit state and the Gibbs state at `t_c`.
    pub distance: f64,
}

/// Options for the collective temperature search over `-β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectiveSearch {
    /// Half-width of the search interval in units of `k_B/(ħ ω_q)`.
    pub beta_max: f64,
    pub grid: usize,
    /// Relative tolerance of the refinement in `-β`.
    pub tolerance: f64,
}

impl Default for CollectiveSearch {
    fn default() -> Self {
        Self {
            beta_max: 10.0,
            grid: 2001,
            tolerance: 1e-10,
        }
    }
}

/// Gibbs state of independent qubits with `-β` (1/K), diagonal in the
/// computational basis.
pub fn qubit_gibbs(n_q: usize, omega_q: f64, neg_beta: f64) -> CMatrix {
    let x = neg_beta * HBAR * omega_q / K_B;
    // occupation probabilities, stable for either sign of x
    let (pg, pe) = if x <= 0.0 {
        let w = x.exp();
        (1.0 / (1.0 + w), w / (1.0 + w))
    } else {
        let w = (-x).exp();
        (w / (1.0 + w), 1.0 / (1.0 + w))
    };
    let d = 1 << n_q;
    CMatrix::from_fn(d, d, |i, j| {
        if i != j {
            return c64(0.0, 0.0);
        }
        let k = i.count_ones() as i32;
        c64(pe.powi(k) * pg.powi(n_q as i32 - k), 0.0)
    })
}

/// Temperature of the qubit Gibbs state closest in trace distance to
/// `rho_q` (the reduced state of all qubits, qubit 1 most significant).
pub fn collective_temperature(
    rho_q: &CMatrix,
    omega_q: f64,
    search: CollectiveSearch,
) -> Result<CollectiveTemperature> {
    let d = rho_q.nrows();
    if !d.is_power_of_two() || d < 2 {
        return Err(Error::Structural(format!("qubit state of dimension {d}")));
    }
    let n_q = d.trailing_zeros() as usize;
    let unit = K_B / (HBAR * omega_q);
    let distance = |neg_beta: f64| trace_distance(rho_q, &qubit_gibbs(n_q, omega_q, neg_beta));
    let bound = search.beta_max * unit;
    let points = search.grid.max(3);
    let step = 2.0 * bound / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|k| -bound + k as f64 * step).collect();
    let mut values = Vec::with_capacity(points);
    for &x in &grid {
        values.push(distance(x)?);
    }
    let best = (0..points).fold(0, |b, k| if values[k] < values[b] { k } else { b });

    // golden-section search on the bracketing grid cells
    let (mut lo, mut hi) = (
        grid[best.saturating_sub(1)],
        grid[(best + 1).min(points - 1)],
    );
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (distance(x1)?, distance(x2)?);
    while hi - lo > search.tolerance * (lo.abs().max(hi.abs())).max(1e-6 * unit) {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = distance(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = distance(x2)?;
        }
    }
    let (mut neg_beta, mut dist) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    if values[best] < dist {
        neg_beta = grid[best];
        dist = values[best];
    }
    Ok(CollectiveTemperature {
        t_c: temperature_from_neg_beta(neg_beta),
        neg_beta,
        distance: dist,
    })
}

/// Reduced state of all qubits of a full-space state.
pub fn qubit_state(l: &Liouvillian, rho: &CMatrix) -> Result<CMatrix> {
    let order: Vec<usize> = (1..=l.spec.n_q).collect();
    crate::linalg::reduce_ordered(rho, &l.dims(), &order)
}
