//! Informational quantifiers of multipartite states: von Neumann entropy,
//! mutual information, genuine tripartite correlations, Bures geometric
//! discord with a qubit measured side, and trace distance.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    c64, eigenvalues, entropy_of_spectrum, hermitian_eigen, hermitize, psd_matrix_function,
    reduce_ordered, trace, CMatrix, PsdFunction, DEFAULT_CLIP,
};

/// von Neumann entropy in nats.
pub fn entropy(rho: &CMatrix) -> Result<f64> {
    let values = eigenvalues(&hermitize(rho))?;
    if let Some(&min) = values.first() {
        if min < -DEFAULT_CLIP.max(1e-9) {
            return Err(Error::Positivity {
                eigenvalue: min,
                clip: 1e-9,
            });
        }
    }
    Ok(entropy_of_spectrum(&values))
}

/// `½ tr|ρ - σ|`.
pub fn trace_distance(rho: &CMatrix, sigma: &CMatrix) -> Result<f64> {
    if rho.shape() != sigma.shape() {
        return Err(Error::Structural(format!(
            "trace distance between shapes {:?} and {:?}",
            rho.shape(),
            sigma.shape()
        )));
    }
    let diff = hermitize(&(rho - sigma));
    Ok(0.5 * eigenvalues(&diff)?.iter().map(|x| x.abs()).sum::<f64>())
}

/// Groups of subsystems; subsystems in no group are traced out.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Partition {
    pub groups: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(groups: Vec<Vec<usize>>) -> Self {
        Self { groups }
    }

    pub fn validate(&self, dims: &[usize]) -> Result<()> {
        let mut seen = vec![false; dims.len()];
        for g in &self.groups {
            if g.is_empty() {
                return Err(Error::Structural("empty partition group".into()));
            }
            for &k in g {
                if k >= dims.len() || seen[k] {
                    return Err(Error::Structural(format!(
                        "invalid or repeated subsystem {k} in partition"
                    )));
                }
                seen[k] = true;
            }
        }
        Ok(())
    }

    pub fn group_dim(&self, dims: &[usize], g: usize) -> usize {
        self.groups[g].iter().map(|&k| dims[k]).product()
    }
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let groups: Vec<String> = self
            .groups
            .iter()
            .map(|g| g.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
            .collect();
        write!(f, "{{{}}}", groups.join("|"))
    }
}

fn group_entropy(rho: &CMatrix, dims: &[usize], subsystems: &[usize]) -> Result<f64> {
    entropy(&reduce_ordered(rho, dims, subsystems)?)
}

fn check_groups(p: &Partition, dims: &[usize], count: usize) -> Result<()> {
    p.validate(dims)?;
    if p.groups.len() != count {
        return Err(Error::Contract(format!(
            "expected {count} groups, got {}",
            p.groups.len()
        )));
    }
    Ok(())
}

/// `S_A + S_B - S_AB` in nats.
pub fn mutual_information(rho: &CMatrix, dims: &[usize], p: &Partition) -> Result<f64> {
    check_groups(p, dims, 2)?;
    let (a, b) = (&p.groups[0], &p.groups[1]);
    let ab: Vec<usize> = a.iter().chain(b).copied().collect();
    Ok(
        group_entropy(rho, dims, a)? + group_entropy(rho, dims, b)?
            - group_entropy(rho, dims, &ab)?,
    )
}

/// Mutual information over its maximum `2 ln min(d_A, d_B)`.
pub fn rescaled_mutual_information(rho: &CMatrix, dims: &[usize], p: &Partition) -> Result<f64> {
    let mi = mutual_information(rho, dims, p)?;
    let d = p.group_dim(dims, 0).min(p.group_dim(dims, 1));
    Ok(mi / (2.0 * (d as f64).ln()))
}

/// `MI₃(A:B:C) - max{MI(A:B), MI(A:C), MI(B:C)}` in nats.
pub fn tripartite_correlations(rho: &CMatrix, dims: &[usize], p: &Partition) -> Result<f64> {
    check_groups(p, dims, 3)?;
    let g = &p.groups;
    let all: Vec<usize> = g.iter().flatten().copied().collect();
    let s: Vec<f64> = g
        .iter()
        .map(|x| group_entropy(rho, dims, x))
        .collect::<Result<_>>()?;
    let mi3 = s.iter().sum::<f64>() - group_entropy(rho, dims, &all)?;
    let mut mu = f64::NEG_INFINITY;
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let pair = Partition::new(vec![g[i].clone(), g[j].clone()]);
        mu = mu.max(mutual_information(rho, dims, &pair)?);
    }
    Ok(mi3 - mu)
}

fn pauli() -> [CMatrix; 3] {
    let (o, i) = (c64(0.0, 0.0), c64(0.0, 1.0));
    let one = c64(1.0, 0.0);
    [
        CMatrix::from_row_slice(2, 2, &[o, one, one, o]),
        CMatrix::from_row_slice(2, 2, &[o, -i, i, o]),
        CMatrix::from_row_slice(2, 2, &[one, o, o, -one]),
    ]
}

/// Largest fidelity between a qubit-by-anything state (qubit first) and the
/// states that are classical on the qubit:
/// `½ (1 + max_u tr|√ρ (u·σ ⊗ 1) √ρ|)`, the optimal success probability of
/// telling apart the two post-measurement branches.
pub fn max_classical_fidelity(rho_ab: &CMatrix) -> Result<f64> {
    let d = rho_ab.nrows();
    if d % 2 != 0 {
        return Err(Error::Contract(format!(
            "measured side must be a qubit, state has dimension {d}"
        )));
    }
    let root = psd_matrix_function(&hermitize(rho_ab), PsdFunction::Sqrt, 1e-9)?;
    let eye = CMatrix::identity(d / 2, d / 2);
    let lambda: Vec<CMatrix> = pauli()
        .iter()
        .map(|s| hermitize(&(&root * s.kronecker(&eye) * &root)))
        .collect();
    let combine = |u: &[f64; 3]| {
        &lambda[0] * c64(u[0], 0.0) + &lambda[1] * c64(u[1], 0.0) + &lambda[2] * c64(u[2], 0.0)
    };
    let trace_norm = |u: &[f64; 3]| -> Result<f64> {
        Ok(eigenvalues(&combine(u))?.iter().map(|x| x.abs()).sum())
    };

    // tr|u·Λ| is convex in u; alternate between the sign operator of u·Λ and
    // the direction it selects, from several starts.
    let gram = CMatrix::from_fn(3, 3, |i, j| trace(&(&lambda[i] * &lambda[j])));
    let mut starts: Vec<[f64; 3]> = vec![
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 1.0],
        [1.0, -1.0, 0.0],
        [0.0, 1.0, -1.0],
        [-1.0, 0.0, 1.0],
    ];
    let gram_eig = hermitian_eigen(&hermitize(&gram))?;
    for k in 0..3 {
        let v = gram_eig.vectors.column(k);
        starts.push([v[0].re, v[1].re, v[2].re]);
    }
    let mut best = 0.0f64;
    for start in starts {
        let norm = (start[0].powi(2) + start[1].powi(2) + start[2].powi(2)).sqrt();
        if norm == 0.0 {
            continue;
        }
        let mut u = start.map(|x| x / norm);
        let mut value = trace_norm(&u)?;
        for _ in 0..500 {
            let eig = hermitian_eigen(&combine(&u))?;
            let sign = eig.map(f64::signum);
            let v: Vec<f64> = lambda.iter().map(|l| trace(&(&sign * l)).re).collect();
            let vn = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if vn == 0.0 {
                break;
            }
            let next = [v[0] / vn, v[1] / vn, v[2] / vn];
            let next_value = trace_norm(&next)?;
            if next_value <= value * (1.0 + 1e-15) {
                break;
            }
            u = next;
            value = next_value;
        }
        best = best.max(value);
    }
    Ok((0.5 * (1.0 + best)).min(1.0))
}

/// Bures geometric discord normalized to `[0, 1]`:
/// `(1 - √F_max) / (1 - 1/√2)`. The first group is the measured side and
/// must be a qubit.
pub fn bures_geometric_discord(rho: &CMatrix, dims: &[usize], p: &Partition) -> Result<f64> {
    check_groups(p, dims, 2)?;
    if p.group_dim(dims, 0) != 2 {
        return Err(Error::Contract(format!(
            "measured side must be two-dimensional, got {}",
            p.group_dim(dims, 0)
        )));
    }
    let order: Vec<usize> = p.groups[0].iter().chain(&p.groups[1]).copied().collect();
    let rho_ab = reduce_ordered(rho, dims, &order)?;
    let f = max_classical_fidelity(&rho_ab)?;
    Ok(((1.0 - f.sqrt()) / (1.0 - std::f64::consts::FRAC_1_SQRT_2)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantifier {
    Mi,
    MiRescaled,
    Tau,
    Discord,
}

impl Quantifier {
    pub fn name(&self) -> &'static str {
        match self {
            Quantifier::Mi => "mi",
            Quantifier::MiRescaled => "mi_rescaled",
            Quantifier::Tau => "tau",
            Quantifier::Discord => "discord",
        }
    }

    pub fn evaluate(&self, rho: &CMatrix, dims: &[usize], p: &Partition) -> Result<f64> {
        match self {
            Quantifier::Mi => mutual_information(rho, dims, p),
            Quantifier::MiRescaled => rescaled_mutual_information(rho, dims, p),
            Quantifier::Tau => tripartite_correlations(rho, dims, p),
            Quantifier::Discord => bures_geometric_discord(rho, dims, p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionConstraints {
    /// Subsystems eligible for the groups.
    pub subsystems: Vec<usize>,
    /// Require the groups to cover every eligible subsystem.
    pub cover_all: bool,
}

impl PartitionConstraints {
    pub fn all(dims: &[usize]) -> Self {
        Self {
            subsystems: (0..dims.len()).collect(),
            cover_all: true,
        }
    }
}

/// Admissible partitions for a quantifier in lexicographic order. Groups of
/// unordered partitions are sorted by their smallest member; discord
/// partitions put a single two-dimensional subsystem first.
pub fn admissible_partitions(
    q: Quantifier,
    dims: &[usize],
    c: &PartitionConstraints,
) -> Vec<Partition> {
    let mut subs = c.subsystems.clone();
    subs.sort_unstable();
    subs.dedup();
    let n = subs.len();
    let groups = if q == Quantifier::Tau { 3 } else { 2 };
    let mut out = Vec::new();
    // each eligible subsystem gets a label in 0..=groups, `groups` meaning unused
    let labels: usize = groups + 1;
    let total = labels.pow(n as u32);
    for code in 0..total {
        let mut assignment = Vec::with_capacity(n);
        let mut x = code;
        for _ in 0..n {
            assignment.push(x % labels);
            x /= labels;
        }
        if c.cover_all && assignment.contains(&groups) {
            continue;
        }
        let mut gs: Vec<Vec<usize>> = vec![Vec::new(); groups];
        for (k, &g) in assignment.iter().enumerate() {
            if g < groups {
                gs[g].push(subs[k]);
            }
        }
        if gs.iter().any(Vec::is_empty) {
            continue;
        }
        if q == Quantifier::Discord {
            if gs[0].len() != 1 || dims[gs[0][0]] != 2 {
                continue;
            }
        } else {
            // canonical labelling: groups ordered by smallest member
            if gs.windows(2).any(|w| w[0][0] > w[1][0]) {
                continue;
            }
        }
        out.push(Partition::new(gs));
    }
    out.sort();
    out
}

/// Exhaustive maximization; ties go to the lexicographically first partition.
pub fn maximize_over_partitions(
    rho: &CMatrix,
    dims: &[usize],
    q: Quantifier,
    c: &PartitionConstraints,
) -> Result<(f64, Partition)> {
    let candidates = admissible_partitions(q, dims, c);
    let values: Vec<Result<f64>> = {
        use rayon::prelude::*;
        candidates
            .par_iter()
            .map(|p| q.evaluate(rho, dims, p))
            .collect()
    };
    let mut best: Option<(f64, usize)> = None;
    for (k, v) in values.into_iter().enumerate() {
        let v = v?;
        match best {
            Some((b, _)) if v <= b + 1e-12 * b.abs().max(1.0) => {}
            _ => best = Some((v, k)),
        }
    }
    let (value, k) =
        best.ok_or_else(|| Error::Contract(format!("no admissible partition for {}", q.name())))?;
    Ok((value, candidates[k].clone()))
}
