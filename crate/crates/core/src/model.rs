//! Composite Hilbert space (machine ⊗ qubit 1 ⊗ … ⊗ qubit n), transition
//! operators, the coupled Hamiltonian and the labeled dissipators of the
//! master equation.
//!
//! Basis index of machine level `m` and qubit excitations `b_1 … b_n` is
//! `m·2^n + Σ b_k 2^(n-k)`; qubit 1 is the most significant bit.

use std::collections::HashMap;
use std::fmt;

use crate::constants::HBAR;
use crate::environment::{RateSet, TransitionLabel, TransitionSpec};
use crate::error::{Error, Result};
use crate::geometry::Layout;
use crate::linalg::{c64, hermitian_eigen, CMatrix, SparseMatrix, C64};

/// Relative tolerance on `omega_2 = omega_q` and `omega_3 = omega_1 + omega_2`.
pub const FREQUENCY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub n_q: usize,
    /// rad/s.
    pub omega_q: f64,
    pub omega_1: f64,
    pub omega_2: f64,
    pub omega_3: f64,
    /// C·m.
    pub qubit_dipole: f64,
    /// Dipole magnitudes of machine transitions 1, 2, 3 (C·m); all share the
    /// machine dipole direction.
    pub machine_dipoles: [f64; 3],
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_q == 0 {
            return Err(Error::Parameter("at least one qubit is required".into()));
        }
        let freqs = [self.omega_q, self.omega_1, self.omega_2, self.omega_3];
        if freqs.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Parameter(format!(
                "transition frequencies must be positive, got {freqs:?}"
            )));
        }
        if (self.omega_2 - self.omega_q).abs() > FREQUENCY_TOL * self.omega_q {
            return Err(Error::Parameter(format!(
                "machine transition 2 ({:e}) must be resonant with the qubits ({:e})",
                self.omega_2, self.omega_q
            )));
        }
        if (self.omega_3 - self.omega_1 - self.omega_2).abs() > FREQUENCY_TOL * self.omega_3 {
            return Err(Error::Parameter(format!(
                "omega_3 ({:e}) must equal omega_1 + omega_2 ({:e})",
                self.omega_3,
                self.omega_1 + self.omega_2
            )));
        }
        if self.qubit_dipole < 0.0 || self.machine_dipoles.iter().any(|d| *d < 0.0) {
            return Err(Error::Parameter(
                "dipole magnitudes must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        3 << self.n_q
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(3)
            .chain(std::iter::repeat(2).take(self.n_q))
            .collect()
    }

    pub fn machine_omega(&self, t: u8) -> f64 {
        match t {
            1 => self.omega_1,
            2 => self.omega_2,
            _ => self.omega_3,
        }
    }

    pub fn omega(&self, label: TransitionLabel) -> f64 {
        match label {
            TransitionLabel::Machine(t) => self.machine_omega(t),
            TransitionLabel::Qubit(_) => self.omega_q,
        }
    }

    /// Machine levels `(lower, upper)` of machine transition `t`.
    pub fn machine_levels(t: u8) -> (usize, usize) {
        match t {
            1 => (0, 1),
            2 => (1, 2),
            _ => (0, 2),
        }
    }

    pub fn labels(&self) -> Vec<TransitionLabel> {
        (1..=3)
            .map(TransitionLabel::Machine)
            .chain((1..=self.n_q).map(TransitionLabel::Qubit))
            .collect()
    }

    /// Transition specs for every machine transition and every qubit, with
    /// dipoles oriented as in `layout`.
    pub fn transitions(&self, layout: &Layout) -> Result<Vec<TransitionSpec>> {
        if layout.n_q() != self.n_q {
            return Err(Error::Structural(format!(
                "layout has {} qubits, system has {}",
                layout.n_q(),
                self.n_q
            )));
        }
        let machine_dir = layout.machine().dipole_direction;
        let mut out: Vec<TransitionSpec> = (1..=3u8)
            .map(|t| TransitionSpec {
                label: TransitionLabel::Machine(t),
                site: 0,
                omega: self.machine_omega(t),
                dipole: machine_dir * self.machine_dipoles[usize::from(t) - 1],
            })
            .collect();
        for k in 1..=self.n_q {
            out.push(TransitionSpec {
                label: TransitionLabel::Qubit(k),
                site: k,
                omega: self.omega_q,
                dipole: layout.qubit(k).dipole_direction * self.qubit_dipole,
            });
        }
        Ok(out)
    }
}

/// Ladder operators embedded in the full space and the free Hamiltonian.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub n_q: usize,
    /// `sigma[n - 1]` lowers qubit `n`.
    pub sigma: Vec<SparseMatrix>,
    /// `kappa[t - 1]` lowers machine transition `t`.
    pub kappa: [SparseMatrix; 3],
    /// Diagonal of the free Hamiltonian (J).
    pub h_free: Vec<f64>,
    /// Diagonal of the machine's free Hamiltonian (J).
    pub h_machine: Vec<f64>,
    /// Diagonal of each qubit's free Hamiltonian (J).
    pub h_qubit: Vec<Vec<f64>>,
}

impl OperatorSet {
    pub fn dim(&self) -> usize {
        3 << self.n_q
    }

    pub fn machine_level(&self, index: usize) -> usize {
        index >> self.n_q
    }

    pub fn qubit_bit(&self, index: usize, n: usize) -> usize {
        (index >> (self.n_q - n)) & 1
    }

    pub fn lowering(&self, label: TransitionLabel) -> &SparseMatrix {
        match label {
            TransitionLabel::Machine(t) => &self.kappa[usize::from(t) - 1],
            TransitionLabel::Qubit(n) => &self.sigma[n - 1],
        }
    }

    /// Free Hamiltonian of the atom owning `label`.
    pub fn atom_hamiltonian(&self, label: TransitionLabel) -> &[f64] {
        match label {
            TransitionLabel::Machine(_) => &self.h_machine,
            TransitionLabel::Qubit(n) => &self.h_qubit[n - 1],
        }
    }
}

pub fn build_operators(spec: &SystemSpec) -> Result<OperatorSet> {
    spec.validate()?;
    let n_q = spec.n_q;
    let d = spec.dim();
    let one = c64(1.0, 0.0);
    let machine_level = |i: usize| i >> n_q;
    let sigma = (1..=n_q)
        .map(|n| {
            let bit = 1usize << (n_q - n);
            SparseMatrix::from_triplets(
                d,
                (0..d).filter(|i| i & bit != 0).map(|i| (i ^ bit, i, one)),
            )
        })
        .collect();
    let kappa = [1u8, 2, 3].map(|t| {
        let (lower, upper) = SystemSpec::machine_levels(t);
        let shift = (upper - lower) << n_q;
        SparseMatrix::from_triplets(
            d,
            (0..d)
                .filter(|&i| machine_level(i) == upper)
                .map(|i| (i - shift, i, one)),
        )
    });
    let level_energy = [0.0, HBAR * spec.omega_1, HBAR * spec.omega_3];
    let h_machine: Vec<f64> = (0..d).map(|i| level_energy[machine_level(i)]).collect();
    let h_qubit: Vec<Vec<f64>> = (1..=n_q)
        .map(|n| {
            (0..d)
                .map(|i| HBAR * spec.omega_q * ((i >> (n_q - n)) & 1) as f64)
                .collect()
        })
        .collect();
    let h_free = (0..d)
        .map(|i| h_machine[i] + h_qubit.iter().map(|h| h[i]).sum::<f64>())
        .collect();
    Ok(OperatorSet {
        n_q,
        sigma,
        kappa,
        h_free,
        h_machine,
        h_qubit,
    })
}

/// Dipole-dipole coupling `H_Λ` (J).
pub fn build_coupling(
    spec: &SystemSpec,
    ops: &OperatorSet,
    rates: &RateSet,
) -> Result<SparseMatrix> {
    let d = spec.dim();
    let mut h = SparseMatrix::zeros(d);
    for (a, b) in resonant_pairs(spec) {
        let lambda = rates.pair(a, b)?.lambda;
        if lambda == 0.0 {
            continue;
        }
        let hop = ops.lowering(a).adjoint().mul(ops.lowering(b));
        h = h.add(&hop.add(&hop.adjoint()).scale(c64(HBAR * lambda, 0.0)));
    }
    Ok(h)
}

/// `H_sys = H_emitters + H_Λ` as a dense matrix (J).
pub fn build_hamiltonian(spec: &SystemSpec, ops: &OperatorSet, rates: &RateSet) -> Result<CMatrix> {
    let coupling = build_coupling(spec, ops, rates)?;
    let mut h = coupling.to_dense();
    for (i, e) in ops.h_free.iter().enumerate() {
        h[(i, i)] += c64(*e, 0.0);
    }
    Ok(h)
}

/// Every resonant pair of transitions on distinct atoms, in label order:
/// machine transition 2 with each qubit, then qubit pairs `n < m`.
pub fn resonant_pairs(spec: &SystemSpec) -> Vec<(TransitionLabel, TransitionLabel)> {
    let q = TransitionLabel::Qubit;
    let mut out: Vec<_> = (1..=spec.n_q)
        .map(|n| (TransitionLabel::Machine(2), q(n)))
        .collect();
    for n in 1..=spec.n_q {
        for m in n + 1..=spec.n_q {
            out.push((q(n), q(m)));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DissipatorLabel {
    /// Local channel of one transition.
    Local(TransitionLabel),
    /// Collective channel of a resonant pair, labels in order.
    Pair(TransitionLabel, TransitionLabel),
}

impl fmt::Display for DissipatorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DissipatorLabel::Local(TransitionLabel::Qubit(n)) => write!(f, "B_q{n}"),
            DissipatorLabel::Local(TransitionLabel::Machine(t)) => write!(f, "M_{t}"),
            DissipatorLabel::Pair(TransitionLabel::Machine(_), b) => write!(f, "nl_{b}_M"),
            DissipatorLabel::Pair(a, b) => write!(f, "nl_{a}_{b}"),
        }
    }
}

/// One Lindblad term `rate · (L ρ R† - ½ {R† L, ρ})`.
#[derive(Debug, Clone)]
pub struct JumpTerm {
    pub rate: C64,
    pub left: SparseMatrix,
    pub right: SparseMatrix,
    /// `R† L`.
    pub product: SparseMatrix,
}

impl JumpTerm {
    pub fn new(rate: C64, left: SparseMatrix, right: SparseMatrix) -> Self {
        let product = right.adjoint().mul(&left);
        Self {
            rate,
            left,
            right,
            product,
        }
    }

    pub fn apply_into(&self, rho: &CMatrix, out: &mut CMatrix) {
        if self.rate == c64(0.0, 0.0) {
            return;
        }
        let jump = self.right.dense_mul_adjoint(&self.left.mul_dense(rho));
        let anti = self.product.mul_dense(rho) + self.product.dense_mul(rho);
        *out += (jump - anti * c64(0.5, 0.0)) * self.rate;
    }
}

#[derive(Debug, Clone)]
pub struct Dissipator {
    pub label: DissipatorLabel,
    pub terms: Vec<JumpTerm>,
}

impl Dissipator {
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(rho.nrows(), rho.ncols());
        for t in &self.terms {
            t.apply_into(rho, &mut out);
        }
        out
    }

    /// Largest absolute rate among the terms.
    pub fn max_rate(&self) -> f64 {
        self.terms.iter().map(|t| t.rate.norm()).fold(0.0, f64::max)
    }
}

/// Local emission/absorption channel of a transition with lowering `a`.
pub fn local_dissipator(
    label: TransitionLabel,
    a: &SparseMatrix,
    plus: f64,
    minus: f64,
) -> Dissipator {
    let ad = a.adjoint();
    Dissipator {
        label: DissipatorLabel::Local(label),
        terms: vec![
            JumpTerm::new(c64(plus, 0.0), a.clone(), a.clone()),
            JumpTerm::new(c64(minus, 0.0), ad.clone(), ad),
        ],
    }
}

/// Collective channel of an ordered resonant pair `(a, b)` with rates
/// `Γ±_ab`; the swapped order carries the conjugate rates.
pub fn pair_dissipator(
    label: DissipatorLabel,
    a: &SparseMatrix,
    b: &SparseMatrix,
    plus: C64,
    minus: C64,
) -> Dissipator {
    let (ad, bd) = (a.adjoint(), b.adjoint());
    Dissipator {
        label,
        terms: vec![
            JumpTerm::new(plus, b.clone(), a.clone()),
            JumpTerm::new(plus.conj(), a.clone(), b.clone()),
            JumpTerm::new(minus, bd.clone(), ad.clone()),
            JumpTerm::new(minus.conj(), ad, bd),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// Full generator including the free Hamiltonian.
    Lab,
    /// Interaction picture with respect to the free Hamiltonian, which
    /// commutes with the coupling and leaves every dissipator covariant.
    Rotating,
}

/// Generator of the master equation.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    pub spec: SystemSpec,
    pub ops: OperatorSet,
    pub rates: RateSet,
    /// `H_Λ` (J).
    pub coupling: SparseMatrix,
    pub dissipators: Vec<Dissipator>,
}

pub fn build_dissipators(
    spec: &SystemSpec,
    ops: &OperatorSet,
    rates: &RateSet,
) -> Result<Vec<Dissipator>> {
    let mut out = Vec::new();
    for n in 1..=spec.n_q {
        let label = TransitionLabel::Qubit(n);
        let r = rates.local(label)?;
        out.push(local_dissipator(
            label,
            ops.lowering(label),
            r.plus,
            r.minus,
        ));
    }
    for t in 1..=3 {
        let label = TransitionLabel::Machine(t);
        let r = rates.local(label)?;
        out.push(local_dissipator(
            label,
            ops.lowering(label),
            r.plus,
            r.minus,
        ));
    }
    for (a, b) in resonant_pairs(spec) {
        let p = rates.pair(a, b)?;
        if p.plus == c64(0.0, 0.0) && p.minus == c64(0.0, 0.0) {
            continue;
        }
        out.push(pair_dissipator(
            DissipatorLabel::Pair(a, b),
            ops.lowering(a),
            ops.lowering(b),
            p.plus,
            p.minus,
        ));
    }
    Ok(out)
}

/// Verifies that every frequency block of emission and absorption rates is
/// positive semidefinite.
pub fn check_complete_positivity(spec: &SystemSpec, rates: &RateSet) -> Result<()> {
    let mut blocks: Vec<(f64, Vec<TransitionLabel>)> = Vec::new();
    for label in spec.labels() {
        let omega = spec.omega(label);
        match blocks
            .iter_mut()
            .find(|(w, _)| (w - omega).abs() <= 1e-9 * omega)
        {
            Some((_, members)) => members.push(label),
            None => blocks.push((omega, vec![label])),
        }
    }
    let pair_lookup: HashMap<_, _> = rates.pairs.iter().map(|(k, v)| (*k, *v)).collect();
    for (omega, members) in &blocks {
        let k = members.len();
        for emission in [true, false] {
            let mut m = CMatrix::zeros(k, k);
            for (i, a) in members.iter().enumerate() {
                let local = rates.local(*a)?;
                m[(i, i)] = c64(if emission { local.plus } else { local.minus }, 0.0);
                for (j, b) in members.iter().enumerate().skip(i + 1) {
                    let entry =
                        pair_lookup
                            .get(&(*a, *b))
                            .map(|p| if emission { p.plus } else { p.minus });
                    let v = entry.unwrap_or(c64(0.0, 0.0));
                    m[(i, j)] = v;
                    m[(j, i)] = v.conj();
                }
            }
            let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if scale == 0.0 {
                continue;
            }
            let min = hermitian_eigen(&m)?.min();
            if min < -1e-12 * scale {
                return Err(Error::Parameter(format!(
                    "{} rate matrix at omega = {omega:e} rad/s is not positive semidefinite (eigenvalue {min:e}, scale {scale:e})",
                    if emission { "emission" } else { "absorption" }
                )));
            }
        }
    }
    Ok(())
}

impl Liouvillian {
    pub fn build(spec: &SystemSpec, rates: &RateSet) -> Result<Self> {
        let ops = build_operators(spec)?;
        check_complete_positivity(spec, rates)?;
        let coupling = build_coupling(spec, &ops, rates)?;
        let dissipators = build_dissipators(spec, &ops, rates)?;
        Ok(Self {
            spec: spec.clone(),
            ops,
            rates: rates.clone(),
            coupling,
            dissipators,
        })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.spec.dims()
    }

    pub fn hamiltonian(&self, frame: Frame) -> CMatrix {
        let mut h = self.coupling.to_dense();
        if frame == Frame::Lab {
            for (i, e) in self.ops.h_free.iter().enumerate() {
                h[(i, i)] += c64(*e, 0.0);
            }
        }
        h
    }

    /// `-(i/ħ)[H, ρ]`.
    pub fn coherent(&self, rho: &CMatrix, frame: Frame) -> CMatrix {
        let mut comm = self.coupling.mul_dense(rho) - self.coupling.dense_mul(rho);
        if frame == Frame::Lab {
            let h = &self.ops.h_free;
            for j in 0..rho.ncols() {
                for i in 0..rho.nrows() {
                    comm[(i, j)] += rho[(i, j)] * (h[i] - h[j]);
                }
            }
        }
        comm * c64(0.0, -1.0 / HBAR)
    }

    pub fn apply(&self, rho: &CMatrix, frame: Frame) -> CMatrix {
        let mut out = self.coherent(rho, frame);
        for d in &self.dissipators {
            for t in &d.terms {
                t.apply_into(rho, &mut out);
            }
        }
        out
    }

    pub fn dissipator(&self, label: DissipatorLabel) -> Option<&Dissipator> {
        self.dissipators.iter().find(|d| d.label == label)
    }

    /// Largest rate or coupling magnitude in s⁻¹ (free Hamiltonian excluded).
    pub fn max_rate(&self) -> f64 {
        let diss = self
            .dissipators
            .iter()
            .map(Dissipator::max_rate)
            .fold(0.0, f64::max);
        let coupling = self
            .coupling
            .triplets()
            .map(|(_, _, v)| v.norm() / HBAR)
            .fold(0.0, f64::max);
        diss.max(coupling)
    }

    /// Charge pair conserved by every term: (machine excited, qubit plus
    /// machine-transition-2 excitations).
    pub fn charge(&self, index: usize) -> (usize, usize) {
        let n_q = self.spec.n_q;
        let k = (index & ((1 << n_q) - 1)).count_ones() as usize;
        match index >> n_q {
            0 => (0, k),
            1 => (1, k),
            _ => (1, k + 1),
        }
    }

    /// Matrix units `(row, col)` with equal charge on both sides, the
    /// invariant subspace holding every stationary state.
    pub fn neutral_sector(&self) -> Vec<(usize, usize)> {
        let d = self.dim();
        let mut out = Vec::new();
        for b in 0..d {
            for a in 0..d {
                if self.charge(a) == self.charge(b) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Matrix of the generator restricted to the span of the matrix units in
    /// `basis`: column `k` holds the coordinates of `L(|a_k><b_k|)`. The span
    /// must be invariant.
    pub fn superoperator_on(&self, basis: &[(usize, usize)], frame: Frame) -> Result<CMatrix> {
        let d = self.dim();
        let mut index = vec![usize::MAX; d * d];
        for (k, &(a, b)) in basis.iter().enumerate() {
            index[a + b * d] = k;
        }
        let n = basis.len();
        let mut out = CMatrix::zeros(n, n);
        let ih = c64(0.0, 1.0 / HBAR);
        let put = |out: &mut CMatrix, r: usize, c: usize, col: usize, v: C64| -> Result<()> {
            let k = index[r + c * d];
            if k == usize::MAX {
                return Err(Error::Structural(format!(
                    "matrix unit ({r}, {c}) leaves the invariant subspace"
                )));
            }
            out[(k, col)] += v;
            Ok(())
        };
        for (col, &(a, b)) in basis.iter().enumerate() {
            for &(r, h) in self.coupling.column(a) {
                put(&mut out, r, b, col, -ih * h)?;
            }
            for &(c, h) in self.coupling.row(b) {
                put(&mut out, a, c, col, ih * h)?;
            }
            if frame == Frame::Lab {
                let e = self.ops.h_free[a] - self.ops.h_free[b];
                if e != 0.0 {
                    put(&mut out, a, b, col, -ih * e)?;
                }
            }
            for diss in &self.dissipators {
                for t in &diss.terms {
                    if t.rate == c64(0.0, 0.0) {
                        continue;
                    }
                    for &(r, la) in t.left.column(a) {
                        for &(c, rb) in t.right.column(b) {
                            put(&mut out, r, c, col, t.rate * la * rb.conj())?;
                        }
                    }
                    let half = t.rate * c64(-0.5, 0.0);
                    for &(r, m) in t.product.column(a) {
                        put(&mut out, r, b, col, half * m)?;
                    }
                    for &(c, m) in t.product.row(b) {
                        put(&mut out, a, c, col, half * m)?;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Full superoperator in column-stacking convention:
    /// `vec(ρ)[i + j·d] = ρ[i, j]`.
    pub fn matrix(&self, frame: Frame) -> Result<CMatrix> {
        let d = self.dim();
        let basis: Vec<(usize, usize)> = (0..d * d).map(|k| (k % d, k / d)).collect();
        self.superoperator_on(&basis, frame)
    }
}

pub fn vectorize(rho: &CMatrix) -> nalgebra::DVector<C64> {
    nalgebra::DVector::from_column_slice(rho.as_slice())
}

pub fn unvectorize(v: &nalgebra::DVector<C64>, d: usize) -> CMatrix {
    CMatrix::from_column_slice(d, d, v.as_slice())
}
